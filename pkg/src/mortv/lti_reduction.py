"""Projection-based reduction of constant-matrix systems.

Rational Krylov (input, output, two-sided), IRKA, modal truncation and
square-root balanced truncation. All engines return a :class:`ReducedModel`
built by :func:`project`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
import scipy.linalg as spla
import scipy.sparse as sp

from mortv.errors import (
    AllColumnsDegenerate,
    BasisDegenerate,
    SingularReducedE,
    UnstablePencil,
)
from mortv.numerics import (
    DENSE_EIG_LIMIT,
    EigenPair,
    ShiftedSolver,
    as_2d,
    as_dense,
    generalized_eigs,
    equilibrated_condition,
    orthonormalize,
    realify,
    solve_lyapunov,
)
from mortv.systems import StateSpaceSystem

log = logging.getLogger(__name__)

MatrixOrMap = Union[np.ndarray, Callable[[float], np.ndarray]]


@dataclass(frozen=True)
class KrylovConfig:
    r: int = 10
    s0: float = 0.0
    side: str = "input"

    def __post_init__(self):
        if self.r < 1:
            raise ValueError("Krylov order r must be >= 1")
        if self.side not in ("input", "output", "two-sided"):
            raise ValueError(f"unknown Krylov side {self.side!r}")


@dataclass
class ReducedModel:
    """Reduced matrices; ``Br``/``Cr`` may be maps of the load position.

    ``correction`` is the ``W^T E V'`` term; when present the effective
    system matrix is ``Ar - correction``. It may be an array or a map of time.
    """

    Er: np.ndarray
    Ar: np.ndarray
    Br: MatrixOrMap
    Cr: MatrixOrMap
    correction: Optional[MatrixOrMap] = None
    V: Optional[np.ndarray] = None
    W: Optional[np.ndarray] = None
    info: dict = field(default_factory=dict)

    @property
    def r(self):
        return self.Er.shape[0]

    @property
    def time_varying(self):
        return callable(self.Br) or callable(self.Cr) or callable(self.correction)

    def B_at(self, p):
        return as_2d(self.Br(p) if callable(self.Br) else self.Br)

    def C_at(self, p):
        return np.atleast_2d(self.Cr(p) if callable(self.Cr) else self.Cr)

    def correction_at(self, t):
        if self.correction is None:
            return None
        return self.correction(t) if callable(self.correction) else self.correction

    def as_system(self, p=None):
        """Constant reduced model as a :class:`StateSpaceSystem` (frozen at ``p`` if needed)."""
        A = self.Ar if self.correction is None else self.Ar - self.correction_at(0.0)
        return StateSpaceSystem(self.Er, A, self.B_at(p), self.C_at(p))


def _unit_columns(X):
    # solves at different shifts differ in scale by orders of magnitude; the
    # rank-drop test of orthonormalize is relative to the largest column
    nrm = np.linalg.norm(X, axis=0)
    nrm[nrm == 0] = 1.0
    return X / nrm


def _check_reduced_E(Er, where=""):
    cond = equilibrated_condition(Er)
    if cond > 1e13:
        raise SingularReducedE(f"reduced E is singular{where} (condition {cond:.3e})")


def project(sys, V, W):
    """Petrov-Galerkin projection ``(W^T E V, W^T A V, W^T B, C V)``."""
    V, W = as_2d(V), as_2d(W)
    if V.shape != W.shape:
        raise ValueError(f"V {V.shape} and W {W.shape} must have equal shape")
    Er = W.T @ (sys.E @ V)
    _check_reduced_E(Er)
    return ReducedModel(
        Er=np.asarray(Er),
        Ar=np.asarray(W.T @ (sys.A @ V)),
        Br=W.T @ sys.B,
        Cr=sys.C @ V,
        V=V,
        W=W,
    )


def krylov_basis(E, A, X0, r, s0=0.0, transposed=False, solver=None):
    """Orthonormal basis of the block rational Krylov space of ``X0`` at ``s0``.

    Spans ``A_s0^{-1} X0, (A_s0^{-1} E) A_s0^{-1} X0, ...`` (or the
    transposed recurrence). Block Arnoldi: each new block is the shifted
    solve of the previous orthonormal block, orthogonalized against the
    basis so far. Deflated columns are dropped and the budget continues with
    the next block; the last block is truncated to land exactly on ``r``.
    """
    solver = solver or ShiftedSolver(A, E, s0)
    n = A.shape[0]
    r = min(r, n)
    trans = "T" if transposed else "N"
    Et = E.T if transposed else E
    try:
        V = orthonormalize(_unit_columns(as_2d(solver.solve(as_2d(X0), trans=trans))))
    except AllColumnsDegenerate as exc:
        raise BasisDegenerate("starting block is numerically zero") from exc
    V = V[:, :r]
    last = V
    while V.shape[1] < r:
        Y = as_2d(solver.solve(as_2d(Et @ last), trans=trans))
        try:
            new = orthonormalize(Y, against=V)
        except AllColumnsDegenerate as exc:
            raise BasisDegenerate(f"Krylov space became invariant at {V.shape[1]} < r={r} columns") from exc
        new = new[:, : r - V.shape[1]]
        V = np.hstack([V, new])
        last = new
    return V


def input_krylov_basis(sys, cfg, solver=None):
    return krylov_basis(sys.E, sys.A, sys.B, cfg.r, cfg.s0, transposed=False, solver=solver)


def output_krylov_basis(sys, cfg, solver=None):
    return krylov_basis(sys.E, sys.A, sys.C.T, cfg.r, cfg.s0, transposed=True, solver=solver)


def one_sided_krylov(sys, cfg):
    """Galerkin (``W = V``) projection onto the input or output Krylov space."""
    if cfg.side == "output":
        V = output_krylov_basis(sys, cfg)
    else:
        V = input_krylov_basis(sys, cfg)
    rom = project(sys, V, V)
    rom.info.update(method="one-sided-krylov", side=cfg.side, s0=cfg.s0)
    return rom


def two_sided_krylov(sys, cfg):
    solver = ShiftedSolver(sys.A, sys.E, cfg.s0)
    V = input_krylov_basis(sys, cfg, solver=solver)
    W = output_krylov_basis(sys, cfg, solver=solver)
    rom = project(sys, V, W)
    rom.info.update(method="two-sided-krylov", s0=cfg.s0)
    return rom


def _real_columns(values, vectors, tol=1e-10):
    """Realify columns paired with a conjugation-closed set of values."""
    cols = []
    for lam, v in zip(values, vectors.T):
        if abs(lam.imag) <= tol * max(abs(lam), 1e-300):
            cols.append(v.real)
        elif lam.imag > 0:
            cols.extend([v.real, v.imag])
    return np.column_stack(cols)


def _take_modal(pairs, r):
    """Pick eigenpairs filling exactly ``r`` real columns, keeping conjugate pairs whole."""
    values = np.array([p.value for p in pairs])
    taken = np.zeros(len(pairs), dtype=bool)
    chosen, used = [], 0
    skipped_half = None
    for i, pair in enumerate(pairs):
        if used >= r:
            break
        if taken[i]:
            continue
        lam = pair.value
        taken[i] = True
        if abs(lam.imag) <= 1e-12 * max(abs(lam), 1e-300):
            chosen.append(EigenPair(complex(lam.real, 0.0), pair.vector))
            used += 1
            continue
        # partner need not be adjacent in the sorted list
        cand = np.flatnonzero(~taken)
        j = cand[np.argmin(np.abs(values[cand] - np.conj(lam)))] if cand.size else None
        if j is None or abs(values[j] - np.conj(lam)) > 1e-8 * abs(lam):
            continue
        taken[j] = True
        top = pair if lam.imag > 0 else pairs[j]
        if used + 2 <= r:
            chosen.extend([top, EigenPair(np.conj(top.value), np.conj(top.vector))])
            used += 2
        elif skipped_half is None:
            skipped_half = top
    if used < r and skipped_half is not None:
        log.warning("modal truncation: order %d splits a conjugate pair, keeping only its real part", r)
        chosen.append(EigenPair(complex(skipped_half.value.real, 0.0), skipped_half.vector))
        used += 1
    return chosen, used


def modal_truncation(sys, r, criterion="smallest-magnitude", two_sided=False):
    """Projection onto the realified eigenvectors of ``r`` dominant eigenvalues.

    Galerkin (``W = V``) by default; ``two_sided=True`` takes ``W`` from the
    left eigenvectors so the reduced spectrum equals the selected eigenvalues.
    """
    n = sys.n
    k = min(n, r + 2)
    pairs = generalized_eigs(sys.A, sys.E, k, criterion)
    chosen, used = _take_modal(pairs, r)
    if used < r:
        pairs = generalized_eigs(sys.A, sys.E, min(n, 2 * r + 4), criterion)
        chosen, used = _take_modal(pairs, r)
    V = orthonormalize(realify(chosen))
    if two_sided:
        left = generalized_eigs(sys.A.T, sys.E.T, min(n, len(pairs) + 2), criterion)
        lvals = np.array([p.value for p in left])
        matched = []
        for pair in chosen:
            j = int(np.argmin(np.abs(lvals - pair.value)))
            matched.append(EigenPair(pair.value, left[j].vector))
        W = orthonormalize(realify(matched))
    else:
        W = V
    rom = project(sys, V, W)
    rom.info.update(method="modal", criterion=criterion, eigenvalues=np.array([p.value for p in chosen]))
    return rom


def _check_stable(sys, rom0):
    if sys.n <= DENSE_EIG_LIMIT:
        lam = spla.eigvals(as_dense(sys.A), as_dense(sys.E))
    else:
        lam = spla.eigvals(rom0.Ar, rom0.Er)
    lam = lam[np.isfinite(lam)]
    if np.any(lam.real >= 0):
        worst = lam[np.argmax(lam.real)]
        raise UnstablePencil(f"IRKA needs a stable system; found eigenvalue {worst:.6g}")


def irka(sys, r, max_iters=50, tol=1e-6, criterion="smallest-magnitude"):
    """Tangential IRKA for MIMO systems.

    Initial shifts are the mirrored poles of the modal-truncation model of
    order ``r``. Each sweep interpolates the current reduced model's mirrored
    poles along its residue directions; iteration stops once the largest
    relative shift change falls below ``tol``. Hitting ``max_iters`` is
    recorded in ``info['converged']`` rather than raised.
    """
    rom = modal_truncation(sys, r, criterion)
    _check_stable(sys, rom)
    shifts_old = None
    history = []
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        lam, X = spla.eig(rom.Ar, rom.Er)
        sigma = -lam
        sigma = np.abs(sigma.real) + 1j * sigma.imag
        Bt = np.linalg.solve(rom.Er @ X, rom.Br)  # rows: input residue directions
        Ct = rom.Cr @ X  # columns: output residue directions
        Vc = np.zeros((sys.n, r), dtype=complex)
        Wc = np.zeros((sys.n, r), dtype=complex)
        done = np.zeros(r, dtype=bool)
        for i in range(r):
            if done[i]:
                continue
            s = sigma[i] if abs(sigma[i].imag) > 1e-12 * abs(sigma[i]) else sigma[i].real
            solver = ShiftedSolver(sys.A, sys.E, s)
            Vc[:, i] = solver.solve(sys.B @ Bt[i, :].astype(complex))
            Wc[:, i] = solver.solve(sys.C.T @ Ct[:, i].astype(complex), trans="T")
            done[i] = True
            if np.iscomplexobj(s):
                # conjugate partner of a complex shift reuses the same factorization
                j = np.flatnonzero(~done & np.isclose(sigma, np.conj(sigma[i]), rtol=1e-10, atol=0))
                if j.size:
                    j = j[0]
                    Vc[:, j] = np.conj(Vc[:, i])
                    Wc[:, j] = np.conj(Wc[:, i])
                    done[j] = True
        V = orthonormalize(_unit_columns(_real_columns(sigma, Vc)))
        W = orthonormalize(_unit_columns(_real_columns(sigma, Wc)))
        if V.shape[1] != r or W.shape[1] != r:
            raise BasisDegenerate(f"IRKA bases deflated to {V.shape[1]}/{W.shape[1]} < r={r} columns")
        rom = project(sys, V, W)
        shifts = np.sort_complex(sigma)
        if shifts_old is not None:
            change = np.max(np.abs(shifts - shifts_old) / np.abs(shifts_old))
            history.append(change)
            if change < tol:
                converged = True
                break
        shifts_old = shifts
    if not converged:
        log.info("IRKA stopped after %d iterations without reaching tol=%g", it, tol)
    lam = spla.eigvals(rom.Ar, rom.Er)
    rom.info.update(
        method="irka",
        converged=converged,
        iterations=it,
        shifts=np.sort_complex(-lam),
        shift_changes=history,
    )
    return rom


def _psd_factor(P):
    d, U = np.linalg.eigh(0.5 * (P + P.T))
    keep = d > 1e-14 * max(d.max(), 0.0)
    return U[:, keep] * np.sqrt(d[keep])


def hankel_singular_values(sys, P=None, Q=None):
    P = solve_lyapunov(sys.A, sys.E, sys.B) if P is None else P
    Q = solve_lyapunov(sys.A.T, sys.E.T, sys.C.T) if Q is None else Q
    S, L = _psd_factor(P), _psd_factor(Q)
    return np.linalg.svd(L.T @ (as_dense(sys.E) @ S), compute_uv=False)


def balanced_truncation(sys, r):
    """Square-root balanced truncation from the two Gramians.

    ``info['hsv']`` holds all Hankel singular values and
    ``info['error_bound']`` twice the sum of the discarded ones.
    """
    P = solve_lyapunov(sys.A, sys.E, sys.B)
    Q = solve_lyapunov(sys.A.T, sys.E.T, sys.C.T)
    S, L = _psd_factor(P), _psd_factor(Q)
    Ed = as_dense(sys.E)
    Z, hsv, Yt = np.linalg.svd(L.T @ (Ed @ S), full_matrices=False)
    if r > hsv.size or hsv[r - 1] <= 0:
        raise BasisDegenerate(f"only {np.count_nonzero(hsv > 0)} nonzero Hankel singular values, r={r}")
    scale = 1.0 / np.sqrt(hsv[:r])
    V = (S @ Yt[:r].T) * scale
    W = (L @ Z[:, :r]) * scale
    rom = project(sys, V, W)
    rom.info.update(method="balanced-truncation", hsv=hsv, error_bound=2.0 * hsv[r:].sum())
    return rom


def error_system(sys, rom):
    """Dense realization of ``G - G_r``."""
    n, r = sys.n, rom.r
    E = spla.block_diag(as_dense(sys.E), rom.Er)
    A = spla.block_diag(as_dense(sys.A), rom.Ar)
    B = np.vstack([sys.B, rom.B_at(None)])
    C = np.hstack([sys.C, -rom.C_at(None)])
    assert E.shape == (n + r, n + r)
    return StateSpaceSystem(E, A, B, C)


def h2_norm(sys):
    P = solve_lyapunov(sys.A, sys.E, sys.B)
    return float(np.sqrt(max(np.trace(sys.C @ P @ sys.C.T), 0.0)))


def h2_error(sys, rom):
    return h2_norm(error_system(sys, rom))
