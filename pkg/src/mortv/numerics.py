"""Dense/sparse numerical kernels shared by every reduction routine.

Matrices are plain ``numpy.ndarray`` or ``scipy.sparse`` objects; every
function here accepts either and behaves identically on both.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as spla
import scipy.sparse as sp
import scipy.sparse.linalg as spsla

from mortv.errors import (
    AllColumnsDegenerate,
    ConvergenceFailure,
    EmptyMatrix,
    NonFiniteMatrix,
    RankTooLow,
    SingularShift,
    SizeGuard,
    UnstablePencil,
)

RANK_TOL = 1e-10
DENSE_EIG_LIMIT = 800
DENSE_LYAPUNOV_LIMIT = 2500

CRITERIA = ("smallest-magnitude", "smallest-real-part")


def check_finite(M, name="matrix"):
    data = M.data if sp.issparse(M) else np.asarray(M)
    if not np.all(np.isfinite(data)):
        raise NonFiniteMatrix(f"{name} contains NaN or Inf entries")
    return M


def as_dense(M):
    if sp.issparse(M):
        return M.toarray()
    return np.asarray(M)


def as_2d(M):
    """Dense 2-D view of ``M``; 1-D input becomes a single column."""
    M = as_dense(M)
    if M.ndim == 1:
        M = M[:, None]
    return M


def orthonormalize(M, against=None, tol=RANK_TOL):
    """Orthonormal basis of span(M) by twice-iterated classical Gram-Schmidt.

    Columns whose norm after orthogonalization drops below ``tol`` times the
    largest input column norm are discarded, so the result has as many
    columns as the numerical rank of ``M``.

    Parameters
    ----------
    M : (n, c) array_like
        Columns to orthonormalize.
    against : (n, k) ndarray, optional
        An existing orthonormal basis. The returned columns are orthogonal to
        it and only the *new* directions are returned.
    tol : float
        Relative rank-drop tolerance.
    """
    M = as_2d(M).astype(float, copy=True)
    n, c = M.shape
    if c == 0:
        raise EmptyMatrix("cannot orthonormalize a matrix with zero columns")
    scale = np.max(np.linalg.norm(M, axis=0))
    if scale == 0.0:
        raise AllColumnsDegenerate("all columns are zero")
    k0 = 0 if against is None else against.shape[1]
    Q = np.empty((n, k0 + min(n, c)))
    if k0:
        Q[:, :k0] = against
    k = k0
    for j in range(c):
        v = M[:, j]
        for _ in range(2):
            if k:
                v -= Q[:, :k] @ (Q[:, :k].T @ v)
        nv = np.linalg.norm(v)
        if nv <= tol * scale or k == n:
            continue
        Q[:, k] = v / nv
        k += 1
    if k == k0:
        raise AllColumnsDegenerate("numerical rank is zero")
    return Q[:, k0:k].copy()


def equilibrated_condition(M):
    """2-norm condition number after row then column max-scaling.

    Invariant under diagonal scalings, so badly scaled but regular matrices
    (stiffness rows next to mass rows) are not mistaken for singular ones.
    """
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return np.inf
    rows = np.abs(M).max(axis=1)
    if np.any(rows == 0) or not np.all(np.isfinite(rows)):
        return np.inf
    M = M / rows[:, None]
    cols = np.abs(M).max(axis=0)
    if np.any(cols == 0):
        return np.inf
    s = np.linalg.svd(M / cols[None, :], compute_uv=False)
    return np.inf if s[-1] == 0 else float(s[0] / s[-1])


def _fix_signs(U):
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[idx, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs


def principal_directions(M, r):
    """First ``r`` left singular vectors of ``M`` (deterministic signs)."""
    M = as_2d(M)
    if r < 1 or r > min(M.shape):
        raise ValueError(f"r={r} must lie in [1, {min(M.shape)}]")
    U, s, _ = spla.svd(M, full_matrices=False, lapack_driver="gesdd")
    if s[0] == 0.0 or s[r - 1] < 1e-12 * s[0]:
        raise RankTooLow(
            f"singular value {r} is {s[r - 1]:.3e}, below 1e-12 * sigma_1 = {1e-12 * s[0]:.3e}"
        )
    return _fix_signs(U[:, :r])


class ShiftedSolver:
    """Factorization of ``A - s0 E`` reused across many right-hand sides.

    Sparse operators go through SuperLU, dense ones through LAPACK ``getrf``,
    both after row equilibration so that the pivot-based singularity test
    does not trip on badly scaled blocks (stiffness next to mass rows).
    A complex ``s0`` gives a complex factorization.
    """

    def __init__(self, A, E, s0=0.0):
        self.s0 = s0
        self.sparse = sp.issparse(A) or sp.issparse(E)
        complex_shift = np.iscomplexobj(s0) and np.imag(s0) != 0
        if not complex_shift:
            s0 = float(np.real(s0))
        if self.sparse:
            K = sp.csc_matrix(sp.csc_matrix(A) - s0 * sp.csc_matrix(E))
            if complex_shift:
                K = K.astype(complex)
            self.n = K.shape[0]
            self._scale = _row_scaling(abs(K).max(axis=1).toarray().ravel())
            K = sp.csc_matrix(sp.diags(self._scale) @ K)
            try:
                self._lu = spsla.splu(K)
            except RuntimeError as exc:
                raise SingularShift(f"A - s0 E singular at s0={s0}: {exc}") from exc
            diag = np.abs(self._lu.U.diagonal())
        else:
            K = as_dense(A) - s0 * as_dense(E)
            self.n = K.shape[0]
            self._scale = _row_scaling(np.abs(K).max(axis=1) if K.size else np.ones(0))
            K = self._scale[:, None] * K
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", spla.LinAlgWarning)
                self._lu = spla.lu_factor(K, check_finite=False)
            diag = np.abs(np.diag(self._lu[0]))
        dmax = diag.max() if diag.size else 0.0
        if dmax == 0.0 or diag.min() <= 10 * self.n * np.finfo(float).eps * dmax:
            raise SingularShift(f"A - s0 E is numerically singular at s0={s0}")

    def solve(self, rhs, trans="N"):
        """Solve with ``A - s0 E`` (``trans='N'``), its transpose ``'T'`` or adjoint ``'H'``."""
        b = as_dense(rhs)
        vec = b.ndim == 1
        # the factorization is of D (A - s0 E) with the row scaling D
        d = self._scale if vec else self._scale[:, None]
        if trans == "N":
            b = d * b
        if self.sparse:
            if np.iscomplexobj(b) and self._lu.U.dtype.kind != "c":
                x = self._lu.solve(np.ascontiguousarray(b.real), trans=trans) + 1j * self._lu.solve(
                    np.ascontiguousarray(b.imag), trans=trans
                )
            else:
                if self._lu.U.dtype.kind == "c":
                    b = b.astype(complex)
                x = self._lu.solve(np.asarray(b, order="F") if b.ndim == 2 else b, trans=trans)
        else:
            code = {"N": 0, "T": 1, "H": 2}[trans]
            x = spla.lu_solve(self._lu, b, trans=code, check_finite=False)
        if trans != "N":
            x = (d * x.reshape(b.shape)) if vec else d * x
        return x if not vec else np.ravel(x)


def _row_scaling(rowmax):
    rowmax = np.asarray(rowmax, dtype=float)
    if np.any(rowmax == 0):
        raise SingularShift("A - s0 E has a zero row")
    return 1.0 / rowmax


def solve_shifted(A, E, s0, RHS, transposed=False):
    """Solve ``(A - s0 E) X = RHS`` (or the transposed system)."""
    return ShiftedSolver(A, E, s0).solve(RHS, trans="T" if transposed else "N")


@dataclass(frozen=True)
class EigenPair:
    value: complex
    vector: np.ndarray


def _criterion_key(lam, criterion):
    if criterion == "smallest-magnitude":
        return np.abs(lam)
    if criterion == "smallest-real-part":
        # closest to the imaginary axis, i.e. least damped
        return np.abs(lam.real)
    raise ValueError(f"unknown criterion {criterion!r}; expected one of {CRITERIA}")


def _is_symmetric(M, tol=1e-13):
    if sp.issparse(M):
        d = abs(M - M.T)
        return (d.max() if d.nnz else 0.0) <= tol * max(abs(M).max(), 1e-300)
    M = np.asarray(M)
    return np.allclose(M, M.T, rtol=0.0, atol=tol * max(np.abs(M).max(), 1e-300))


def _normalize_vectors(X):
    X = X / np.linalg.norm(X, axis=0)
    idx = np.argmax(np.abs(X), axis=0)
    phase = X[idx, np.arange(X.shape[1])]
    phase = phase / np.abs(phase)
    return X / phase


def generalized_eigs(A, E, k, criterion="smallest-magnitude", sigma=0.0):
    """``k`` dominant eigenpairs of the pencil ``(A, E)``: ``A v = lam E v``.

    Small problems use a dense QZ/eigh solve and exact sorting. Large ones use
    ARPACK in shift-invert mode around ``sigma``; for ``smallest-real-part``
    a larger window of eigenvalues nearest ``sigma`` is computed and then
    sorted. If the cut at ``k`` splits a conjugate pair, the partner is
    appended so both halves are returned together.
    """
    n = A.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} must lie in [1, {n}]")
    _criterion_key(np.array([0j]), criterion)
    symmetric = _is_symmetric(A) and _is_symmetric(E)
    try:
        if n <= DENSE_EIG_LIMIT or k >= n - 2:
            Ad, Ed = as_dense(A), as_dense(E)
            if symmetric:
                try:
                    lam, X = spla.eigh(Ad, Ed)
                    lam = lam.astype(complex)
                except np.linalg.LinAlgError:
                    lam, X = spla.eig(Ad, Ed)
            else:
                lam, X = spla.eig(Ad, Ed)
        else:
            window = k if criterion == "smallest-magnitude" else min(n - 2, max(3 * k, k + 20))
            window = min(window + 2, n - 2)
            if symmetric:
                lam, X = spsla.eigsh(sp.csc_matrix(A), k=window, M=sp.csc_matrix(E), sigma=sigma, which="LM")
                lam = lam.astype(complex)
            else:
                solver = ShiftedSolver(A, E, sigma)
                Es = sp.csr_matrix(E) if sp.issparse(E) else np.asarray(E)
                op = spsla.LinearOperator((n, n), matvec=lambda x: solver.solve(Es @ x), dtype=float)
                mu, X = spsla.eigs(op, k=window, which="LM", v0=np.ones(n))
                lam = sigma + 1.0 / mu
    except spsla.ArpackNoConvergence as exc:
        raise ConvergenceFailure(
            f"ARPACK did not converge: {len(exc.eigenvalues)} of the requested eigenvalues found"
        ) from exc
    except (spsla.ArpackError, np.linalg.LinAlgError) as exc:
        raise ConvergenceFailure(f"eigensolver failed: {exc}") from exc

    finite = np.isfinite(lam)
    lam, X = lam[finite], X[:, finite]
    # exact conjugate ties are broken so the +imag member comes first
    order = np.lexsort((-lam.imag, _criterion_key(lam, criterion)))
    lam, X = lam[order], _normalize_vectors(X[:, order])
    take = min(k, lam.size)
    if take < lam.size and abs(lam[take - 1].imag) > 0 and lam[take - 1].imag > 0:
        take += 1
    return [EigenPair(complex(lam[i]), X[:, i]) for i in range(take)]


def realify(pairs, tol=1e-12):
    """Real basis columns ``[Re v, Im v]`` per conjugate pair, ``Re v`` per real eigenvalue."""
    cols = []
    for pair in pairs:
        lam, v = pair.value, pair.vector
        if abs(lam.imag) <= tol * max(abs(lam), 1e-300):
            cols.append(v.real)
        elif lam.imag > 0:
            cols.append(v.real)
            cols.append(v.imag)
    return np.column_stack(cols)


def _quasi_triangular_eigvals(T):
    n = T.shape[0]
    lam = np.empty(n, dtype=complex)
    i = 0
    while i < n:
        if i + 1 < n and T[i + 1, i] != 0.0:
            lam[i : i + 2] = np.linalg.eigvals(T[i : i + 2, i : i + 2])
            i += 2
        else:
            lam[i] = T[i, i]
            i += 1
    return lam


def solve_lyapunov(A, E, B, max_dense=DENSE_LYAPUNOV_LIMIT):
    """Solve ``A P E^T + E P A^T + B B^T = 0`` for a stable pencil.

    Bartels-Stewart on ``E^{-1} A``: one real Schur decomposition, a
    quasi-triangular Sylvester solve (LAPACK ``trsyl``) and back
    transformation. The Schur form also supplies the spectrum used for the
    stability check.
    """
    n = A.shape[0]
    if n > max_dense:
        raise SizeGuard(f"dense Lyapunov solve limited to n <= {max_dense}, got n={n}")
    Ad, Ed, Bd = as_dense(A).astype(float), as_dense(E).astype(float), as_2d(B).astype(float)
    if np.array_equal(Ed, np.eye(n)):
        At, Bt = Ad, Bd
    else:
        lu = spla.lu_factor(Ed)
        At, Bt = spla.lu_solve(lu, Ad), spla.lu_solve(lu, Bd)
    T, U = spla.schur(At, output="real")
    lam = _quasi_triangular_eigvals(T)
    if np.any(lam.real >= -1e-14 * max(np.abs(lam).max(), 1.0)):
        worst = lam[np.argmax(lam.real)]
        raise UnstablePencil(f"pencil has eigenvalue {worst:.6g} with nonnegative real part")
    F = U.T @ Bt
    C = -(F @ F.T)
    trsyl = spla.get_lapack_funcs("trsyl", (T,))
    Y, scale, info = trsyl(T, T, C, trana="N", tranb="T")
    if info < 0:
        raise ConvergenceFailure(f"trsyl failed with info={info}")
    P = U @ (Y / scale) @ U.T
    return 0.5 * (P + P.T)
