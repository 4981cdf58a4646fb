"""Reduction of systems with moving loads and sensors.

Two families of strategies live here:

* time-independent projections: two-step low-rank lifting of ``b(p)``
  and/or ``c(p)`` followed by an LTI engine, one-sided Krylov on the
  constant side, and modal truncation;
* matrix interpolation: local reductions at position samples, transformed
  to common coordinates through a reference subspace and interpolated
  piecewise linearly online, optionally with the correction terms caused by
  the motion of the local bases (``V'`` and ``T'``).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from mortv.errors import PositionOutOfRange, SingularReducedE, SingularTransformation, WrongCoupling
from mortv.lti_reduction import (
    KrylovConfig,
    ReducedModel,
    balanced_truncation,
    input_krylov_basis,
    irka,
    krylov_basis,
    modal_truncation,
    output_krylov_basis,
    two_sided_krylov,
)
from mortv.numerics import ShiftedSolver, equilibrated_condition, principal_directions
from mortv.systems import StateSpaceSystem

log = logging.getLogger(__name__)

MODES = ("standard", "extended", "fixed-output-basis", "fixed-input-basis", "modal")
ENGINES = ("irka", "two-sided-krylov", "balanced-truncation")


@dataclass(frozen=True)
class InterpolationWeights:
    interval: int
    omega_lo: float
    omega_hi: float


def interpolation_weights(nodes, p, tol=1e-12):
    """Piecewise-linear weights of ``p`` on the sorted grid ``nodes``.

    At a node ``p_i`` the interval starting there is chosen (the last node
    uses the last interval) so that the weight of ``p_i`` is exactly one.
    """
    nodes = np.asarray(nodes)
    lo, hi = nodes[0], nodes[-1]
    slack = tol * max(hi - lo, 1.0)
    if p < lo - slack or p > hi + slack:
        raise PositionOutOfRange(f"position {p} outside sampled range [{lo}, {hi}]")
    p = min(max(p, lo), hi)
    j = int(np.searchsorted(nodes, p, side="right")) - 1
    j = min(max(j, 0), nodes.size - 2)
    if p == nodes[j + 1]:
        xi = 1.0
    else:
        xi = (p - nodes[j]) / (nodes[j + 1] - nodes[j])
    return InterpolationWeights(j, 1.0 - xi, xi)


def _span(sys, span):
    if span is not None:
        return tuple(span)
    if sys.trajectory is not None:
        return sys.trajectory.span
    lo, hi = sys.position_range
    if not (np.isfinite(lo) and np.isfinite(hi)):
        raise ValueError("no span given and the system has neither a trajectory nor a finite position range")
    return lo, hi


def _weight_block(nodes, p, width):
    if nodes.size == 1:
        if abs(p - nodes[0]) > 1e-12 * max(abs(nodes[0]), 1.0):
            raise PositionOutOfRange(f"position {p} differs from the single node {nodes[0]}")
        return np.eye(width)
    w = interpolation_weights(nodes, p)
    out = np.zeros((nodes.size * width, width))
    eye = np.eye(width)
    out[w.interval * width : (w.interval + 1) * width] = w.omega_lo * eye
    out[(w.interval + 1) * width : (w.interval + 2) * width] += w.omega_hi * eye
    return out


@dataclass
class LowRankInputApprox:
    """``b(p) ~ Bconst Btilde(p)`` with columns of ``Bconst`` taken at coarse nodes."""

    Bconst: np.ndarray
    node_positions: np.ndarray
    m: int = 1

    def Btilde_of(self, p):
        return _weight_block(self.node_positions, p, self.m)


@dataclass
class LowRankOutputApprox:
    """``c(p) ~ Ctilde(p) Cconst`` with rows of ``Cconst`` taken at coarse nodes."""

    Cconst: np.ndarray
    node_positions: np.ndarray
    q: int = 1

    def Ctilde_of(self, p):
        return _weight_block(self.node_positions, p, self.q).T


def _coarse_nodes(sys, count, span):
    lo, hi = _span(sys, span)
    # a pinned load needs no lifting: one node, identity weights
    return np.array([lo]) if lo == hi else np.linspace(lo, hi, count)


def lowrank_input(sys, m_tilde, span=None):
    if m_tilde < 2:
        raise ValueError("m_tilde must be >= 2")
    nodes = _coarse_nodes(sys, m_tilde, span)
    cols = [sys.b_at(p) for p in nodes]
    return LowRankInputApprox(np.hstack(cols), nodes, cols[0].shape[1])


def lowrank_output(sys, q_tilde, span=None):
    if q_tilde < 2:
        raise ValueError("q_tilde must be >= 2")
    nodes = _coarse_nodes(sys, q_tilde, span)
    rows = [sys.c_at(p) for p in nodes]
    return LowRankOutputApprox(np.vstack(rows), nodes, rows[0].shape[0])


def _probe(sys):
    return sys._probe()


def _run_engine(lifted, engine, r, **kw):
    if engine == "irka":
        return irka(lifted, r, **{k: v for k, v in kw.items() if k in ("max_iters", "tol", "criterion")})
    if engine == "two-sided-krylov":
        return two_sided_krylov(lifted, KrylovConfig(r=r, s0=kw.get("s0", 0.0)))
    if engine == "balanced-truncation":
        return balanced_truncation(lifted, r)
    raise ValueError(f"unknown engine {engine!r}; expected one of {ENGINES}")


def two_step_reduce(sys, m_tilde=None, q_tilde=None, engine="irka", r=10, span=None, **engine_kw):
    """Lift the moving maps onto coarse-node columns/rows, then reduce the MIMO LTI system.

    Load-only systems approximate ``b(p)``, sensor-only systems ``c(p)``,
    and combined couplings both. The returned model carries
    ``Br(p) = (W^T Bconst) Btilde(p)`` and/or ``Cr(p) = Ctilde(p) (Cconst V)``.
    """
    p0 = _probe(sys)
    lift_b = sys.coupling != "sensor-only"
    lift_c = sys.coupling != "load-only"
    bapx = lowrank_input(sys, m_tilde, span) if lift_b else None
    capx = lowrank_output(sys, q_tilde if q_tilde is not None else m_tilde, span) if lift_c else None
    B = bapx.Bconst if lift_b else sys.b_at(p0)
    C = capx.Cconst if lift_c else sys.c_at(p0)
    lifted = StateSpaceSystem(sys.E, sys.A, B, C)
    rom = _run_engine(lifted, engine, r, **engine_kw)
    Br_const, Cr_const = rom.Br, rom.Cr
    if lift_b:
        rom.Br = lambda p: Br_const @ bapx.Btilde_of(p)
    if lift_c:
        rom.Cr = lambda p: capx.Ctilde_of(p) @ Cr_const
    rom.info.update(two_step=True, engine=engine, input_approx=bapx, output_approx=capx)
    return rom


def one_sided_fixed_basis_reduce(sys, cfg=KrylovConfig(), r=None):
    """Galerkin projection onto the Krylov space of the constant side.

    Load-only: ``V = W`` from the output Krylov space of the constant ``C``
    and ``Br(p) = W^T b(p)``. Sensor-only: ``V = W`` from the input Krylov
    space of the constant ``B`` and ``Cr(p) = c(p) V``.
    """
    r = cfg.r if r is None else r
    cfg = KrylovConfig(r=r, s0=cfg.s0, side=cfg.side)
    frozen = sys.frozen(_probe(sys))
    if sys.coupling == "load-only":
        V = output_krylov_basis(frozen, cfg)
        C = frozen.C @ V
        Br = lambda p: V.T @ sys.b_at(p)  # noqa: E731
        Cr = C
    elif sys.coupling == "sensor-only":
        V = input_krylov_basis(frozen, cfg)
        Br = V.T @ frozen.B
        Cr = lambda p: sys.c_at(p) @ V  # noqa: E731
    else:
        raise WrongCoupling(
            f"one-sided fixed-basis reduction needs a constant input or output map, got coupling {sys.coupling!r}"
        )
    Er = np.asarray(V.T @ (sys.E @ V))
    Ar = np.asarray(V.T @ (sys.A @ V))
    return ReducedModel(Er, Ar, Br, Cr, V=V, W=V, info={"method": "one-sided-fixed", "coupling": sys.coupling})


def modal_reduce_combined(sys, r, criterion="smallest-magnitude", two_sided=False):
    """One constant modal pair ``(V, W)``; both ``Br(p)`` and ``Cr(p)`` follow the position."""
    base = modal_truncation(sys.frozen(_probe(sys)), r, criterion, two_sided=two_sided)
    V, W = base.V, base.W
    base.Br = lambda p: W.T @ sys.b_at(p)
    base.Cr = lambda p: sys.c_at(p) @ V
    return base


@dataclass
class MatrIntOffline:
    """Offline data of matrix interpolation.

    ``Ehat`` ... ``Chat`` are the transformed local matrices. In extended
    mode the per-interval products needed online are precomputed:
    ``H[j] = R^T S_j`` and ``G_lo[j]``/``G_hi[j] = M_i^T W_i^T E S_j T_i`` for
    the two endpoints ``i`` of interval ``j``, where ``S_j`` is the slope
    ``(V_{j+1} - V_j) / (p_{j+1} - p_j)``.
    """

    samples: np.ndarray
    mode: str
    r: int
    V: list
    W: list
    R: np.ndarray
    T: list
    M: list
    Ehat: list
    Ahat: list
    Bhat: list
    Chat: list
    H: Optional[list] = None
    G_lo: Optional[list] = None
    G_hi: Optional[list] = None
    info: dict = field(default_factory=dict)

    @property
    def k(self):
        return self.samples.size

    @property
    def extended(self):
        return self.mode == "extended"

    def slope(self, j):
        return (self.V[j + 1] - self.V[j]) / (self.samples[j + 1] - self.samples[j])

    @property
    def dV_intervals(self):
        return [self.slope(j) for j in range(self.k - 1)]

    def weights(self, p):
        return interpolation_weights(self.samples, p)

    def online(self, p, pdot=0.0):
        return matrint_online(self, p, pdot)


def _inverse_checked(K, what, i):
    s = np.linalg.svd(K, compute_uv=False)
    if s[-1] <= 1e-12 * s[0]:
        ratio = s[-1] / s[0] if s[0] > 0 else 0.0
        raise SingularTransformation(f"{what} at sample {i} is singular (sigma_min/sigma_max = {ratio:.3e})")
    return np.linalg.inv(K)


def matrint_from_bases(sys, samples, V_list, W_list, mode="standard"):
    """Assemble a :class:`MatrIntOffline` from given local bases."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    samples = np.asarray(samples, dtype=float)
    if samples.size < 2 or np.any(np.diff(samples) <= 0):
        raise ValueError("need k >= 2 strictly increasing samples")
    r = V_list[0].shape[1]
    R = principal_directions(np.hstack(V_list), r)
    T, M, Eh, Ah, Bh, Ch = [], [], [], [], [], []
    for i, p in enumerate(samples):
        Vi, Wi = V_list[i], W_list[i]
        if i and Vi is V_list[i - 1] and Wi is W_list[i - 1]:
            # shared basis: reuse the very same objects so the online phase
            # can skip interpolating constant matrices
            T.append(T[-1])
            M.append(M[-1])
            Eh.append(Eh[-1])
            Ah.append(Ah[-1])
        else:
            Ti = _inverse_checked(R.T @ Vi, "R^T V_i", i)
            Mi = Ti if Wi is Vi else _inverse_checked(R.T @ Wi, "R^T W_i", i)
            T.append(Ti)
            M.append(Mi)
            Eh.append(Mi.T @ (Wi.T @ (sys.E @ Vi)) @ Ti)
            Ah.append(Mi.T @ (Wi.T @ (sys.A @ Vi)) @ Ti)
        Mi, Ti = M[-1], T[-1]
        Bh.append(Mi.T @ (Wi.T @ sys.b_at(p)))
        Ch.append(sys.c_at(p) @ Vi @ Ti)
    off = MatrIntOffline(samples, mode, r, list(V_list), list(W_list), R, T, M, Eh, Ah, Bh, Ch)
    if mode == "extended":
        off.H, off.G_lo, off.G_hi = [], [], []
        for j in range(samples.size - 1):
            S = off.slope(j)
            ES = sys.E @ S
            off.H.append(R.T @ S)
            off.G_lo.append(M[j].T @ (W_list[j].T @ ES) @ T[j])
            off.G_hi.append(M[j + 1].T @ (W_list[j + 1].T @ ES) @ T[j + 1])
    return off


def matrint_offline(sys, samples, r, mode="standard", engine_cfg=None, criterion="smallest-magnitude"):
    """Local reductions at ``samples`` plus the transformation to common coordinates.

    * ``standard``/``extended``: one-sided Krylov at each frozen ``b(p_i)``
      (or ``c(p_i)`` if ``engine_cfg.side == 'output'``), ``W_i = V_i``;
    * ``fixed-output-basis``: one output Krylov basis of the constant ``C``;
    * ``fixed-input-basis``: one input Krylov basis of the constant ``B``;
    * ``modal``: one modal pair from ``(A, E)``.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    cfg = engine_cfg or KrylovConfig(r=r)
    cfg = KrylovConfig(r=r, s0=cfg.s0, side=cfg.side)
    samples = np.asarray(samples, dtype=float)
    k = samples.size
    if mode in ("standard", "extended"):
        solver = ShiftedSolver(sys.A, sys.E, cfg.s0)
        if cfg.side == "output":
            V_list = [krylov_basis(sys.E, sys.A, sys.c_at(p).T, r, cfg.s0, True, solver) for p in samples]
        else:
            V_list = [krylov_basis(sys.E, sys.A, sys.b_at(p), r, cfg.s0, False, solver) for p in samples]
        W_list = V_list
    elif mode == "fixed-output-basis":
        if sys.coupling != "load-only":
            raise WrongCoupling("fixed-output-basis needs a constant output map (load-only coupling)")
        V = output_krylov_basis(sys.frozen(samples[0]), cfg)
        V_list = W_list = [V] * k
    elif mode == "fixed-input-basis":
        if sys.coupling != "sensor-only":
            raise WrongCoupling("fixed-input-basis needs a constant input map (sensor-only coupling)")
        V = input_krylov_basis(sys.frozen(samples[0]), cfg)
        V_list = W_list = [V] * k
    else:
        base = modal_truncation(sys.frozen(samples[0]), r, criterion)
        V_list, W_list = [base.V] * k, [base.W] * k
    off = matrint_from_bases(sys, samples, V_list, W_list, mode)
    off.info.update(s0=cfg.s0, side=cfg.side, criterion=criterion)
    return off


def compute_Vdot(off, p, pdot):
    """``V' = dV/dp * p'`` with the slope of the sample interval holding ``p``."""
    j = off.weights(p).interval
    return off.slope(j) * pdot


def compute_Tdot(off, i, Vdot):
    """``T_i' = -T_i R^T V' T_i`` (derivative of a matrix inverse)."""
    return -off.T[i] @ (off.R.T @ Vdot) @ off.T[i]


def backward_velocity(p_now, p_prev, dt):
    """Backward-difference load velocity for trajectories without an analytic derivative."""
    return (p_now - p_prev) / dt


def matrint_online(off, p, pdot=0.0):
    """Interpolated reduced model at position ``p`` moving with velocity ``pdot``.

    In extended mode the returned ``correction`` is
    ``sum_i w_i (M_i^T W_i^T E V' T_i + M_i^T E_ri T_i')``, so that
    ``Ar - correction`` is the interpolated corrected system matrix.
    """
    w = off.weights(p)
    j = w.interval
    a, b = w.omega_lo, w.omega_hi

    def mix(X):
        return X[j] if X[j] is X[j + 1] else a * X[j] + b * X[j + 1]

    Er = mix(off.Ehat)
    cond = equilibrated_condition(Er)
    if cond > 1e13:
        raise SingularReducedE(f"interpolated E_r singular in interval {j} (condition {cond:.3e})")
    Ar, Br, Cr = mix(off.Ahat), mix(off.Bhat), mix(off.Chat)
    correction = None
    if off.extended and pdot != 0.0:
        H = off.H[j]
        corr_lo = off.G_lo[j] - off.Ehat[j] @ H @ off.T[j]
        corr_hi = off.G_hi[j] - off.Ehat[j + 1] @ H @ off.T[j + 1]
        correction = pdot * (a * corr_lo + b * corr_hi)
    return ReducedModel(Er, Ar, Br, Cr, correction=correction, info={"interval": j, "position": p, "velocity": pdot})


def save_offline(off, directory):
    """Write the offline data as ``.npy`` matrix files plus a JSON manifest."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    unique_V = off.V[0] is off.V[-1] and all(v is off.V[0] for v in off.V)
    unique_W = off.W[0] is off.W[-1] and all(w is off.W[0] for w in off.W)
    w_is_v = all(w is v for w, v in zip(off.W, off.V))
    manifest = {
        "mode": off.mode,
        "r": off.r,
        "k": off.k,
        "samples": [float(p) for p in off.samples],
        "shared_V": unique_V,
        "shared_W": unique_W,
        "W_is_V": w_is_v,
        "info": {k: v for k, v in off.info.items() if isinstance(v, (int, float, str))},
    }
    np.save(d / "R.npy", off.R)
    for i in range(off.k):
        for name in ("T", "M", "Ehat", "Ahat", "Bhat", "Chat"):
            np.save(d / f"{name}_{i:04d}.npy", getattr(off, name)[i])
        if not unique_V or i == 0:
            np.save(d / f"V_{i:04d}.npy", off.V[i])
        if not w_is_v and (not unique_W or i == 0):
            np.save(d / f"W_{i:04d}.npy", off.W[i])
    if off.extended:
        for j in range(off.k - 1):
            for name in ("H", "G_lo", "G_hi"):
                np.save(d / f"{name}_{j:04d}.npy", getattr(off, name)[j])
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_offline(directory):
    d = Path(directory)
    man = json.loads((d / "manifest.json").read_text())
    k = man["k"]

    def load(name, i):
        return np.load(d / f"{name}_{i:04d}.npy")

    V = [load("V", 0)] * k if man["shared_V"] else [load("V", i) for i in range(k)]
    if man["W_is_V"]:
        W = V
    else:
        W = [load("W", 0)] * k if man["shared_W"] else [load("W", i) for i in range(k)]
    shared = man["shared_V"] and (man["W_is_V"] or man["shared_W"])
    fields = {
        name: [load(name, 0)] * k if shared and name in ("T", "M", "Ehat", "Ahat") else [load(name, i) for i in range(k)]
        for name in ("T", "M", "Ehat", "Ahat", "Bhat", "Chat")
    }
    off = MatrIntOffline(
        np.array(man["samples"]), man["mode"], man["r"], V, W, np.load(d / "R.npy"), info=dict(man["info"]), **fields
    )
    if off.extended:
        off.H = [load("H", j) for j in range(k - 1)]
        off.G_lo = [load("G_lo", j) for j in range(k - 1)]
        off.G_hi = [load("G_hi", j) for j in range(k - 1)]
    return off
