"""System types: constant descriptor systems, second-order FE models and
systems whose input/output maps follow a moving position.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spsla

from mortv.errors import SingularStiffness, SingularShift
from mortv.numerics import ShiftedSolver, as_2d, as_dense, check_finite

COUPLINGS = ("load-only", "sensor-only", "collocated", "independent")


def _shape(M):
    return M.shape if hasattr(M, "shape") else np.shape(M)


@dataclass(frozen=True)
class StateSpaceSystem:
    """``E x' = A x + B u``, ``y = C x`` with constant matrices."""

    E: object
    A: object
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        B, C = as_2d(self.B), as_2d(self.C)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        n = _shape(self.A)[0]
        if _shape(self.A) != (n, n) or _shape(self.E) != (n, n):
            raise ValueError(f"E and A must be square of equal size, got {_shape(self.E)}, {_shape(self.A)}")
        if B.shape[0] != n or C.shape[1] != n:
            raise ValueError(f"B is {B.shape} and C is {C.shape}, inconsistent with n={n}")
        for name in "EABC":
            check_finite(getattr(self, name), name)
        try:
            ShiftedSolver(self.E, self.E, 0.0)
        except SingularShift as exc:
            raise ValueError("E must be nonsingular") from exc

    @property
    def n(self):
        return _shape(self.A)[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def q(self):
        return self.C.shape[0]

    def dual(self):
        """The system ``(E^T, A^T, C^T, B^T)``."""
        return StateSpaceSystem(self.E.T, self.A.T, self.C.T, self.B.T)


@dataclass(frozen=True)
class Trajectory:
    """Piecewise-linear position history ``p(t)`` on ``[0, T]``.

    Positions are clamped to the end values outside the domain. At a
    breakpoint the velocity of the segment starting there is returned; at
    ``T`` itself the last segment's. ``provides_velocity=False`` models a
    trajectory known only through sampled positions, in which case callers
    fall back to backward differences.
    """

    times: np.ndarray
    positions: np.ndarray
    kind: str = "piecewise-linear"
    provides_velocity: bool = True

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        p = np.asarray(self.positions, dtype=float)
        if t.ndim != 1 or t.shape != p.shape or t.size < 2:
            raise ValueError("times and positions must be 1-D of equal length >= 2")
        if t[0] != 0.0 or np.any(np.diff(t) <= 0):
            raise ValueError("times must start at 0 and increase strictly")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "positions", p)

    @classmethod
    def constant_velocity(cls, start, end, velocity):
        if velocity <= 0:
            raise ValueError("velocity must be positive (direction is fixed by start/end)")
        T = abs(end - start) / velocity
        return cls(np.array([0.0, T]), np.array([start, end], dtype=float), kind="constant-velocity")

    @classmethod
    def constant(cls, position, t_end):
        return cls(np.array([0.0, t_end]), np.array([position, position], dtype=float), kind="constant-velocity")

    @property
    def t_end(self):
        return self.times[-1]

    @property
    def span(self):
        return float(self.positions.min()), float(self.positions.max())

    def position_of(self, t):
        return float(np.interp(t, self.times, self.positions))

    def velocity_of(self, t):
        T = self.times[-1]
        if t < 0 or t > T * (1 + 1e-12) + 1e-300:
            return 0.0
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        i = min(max(i, 0), self.times.size - 2)
        return float((self.positions[i + 1] - self.positions[i]) / (self.times[i + 1] - self.times[i]))


@dataclass(frozen=True)
class MovingBoundarySystem:
    """Constant ``E, A`` with position-dependent maps ``b(p)`` (n x m) and ``c(p)`` (q x n)."""

    E: object
    A: object
    b: Callable[[float], np.ndarray]
    c: Callable[[float], np.ndarray]
    coupling: str = "independent"
    trajectory: Optional[Trajectory] = None
    position_range: tuple = (-np.inf, np.inf)
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.coupling not in COUPLINGS:
            raise ValueError(f"coupling must be one of {COUPLINGS}, got {self.coupling!r}")

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return as_2d(self.b(self._probe())).shape[1]

    @property
    def q(self):
        return np.atleast_2d(self.c(self._probe())).shape[0]

    def _probe(self):
        if self.trajectory is not None:
            return self.trajectory.position_of(0.0)
        lo, hi = self.position_range
        return 0.5 * (lo + hi) if np.isfinite(lo) and np.isfinite(hi) else 0.0

    def b_at(self, p):
        return as_2d(self.b(p))

    def c_at(self, p):
        c = np.atleast_2d(as_dense(self.c(p)))
        if self.coupling == "collocated":
            bt = self.b_at(p).T
            if not np.array_equal(c, bt):
                raise AssertionError(f"collocated coupling violated at p={p}")
        return c

    def frozen(self, p):
        """The LTI system obtained by pinning the load/sensor at ``p``."""
        return StateSpaceSystem(self.E, self.A, self.b_at(p), self.c_at(p))

    def with_trajectory(self, trajectory):
        return dataclasses.replace(self, trajectory=trajectory)


@dataclass(frozen=True)
class SecondOrderSystem:
    """``M z'' + D z' + K z = b_hat(p) u``, ``y = c_hat(p)^T z``."""

    M: object
    D: object
    K: object
    load_map: Callable[[float], np.ndarray]
    output_map: Callable[[float], np.ndarray]
    position_range: tuple = (-np.inf, np.inf)
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for name in ("M", "K"):
            _check_spd(getattr(self, name), name)

    @property
    def ndof(self):
        return self.M.shape[0]

    def transfer(self, s, p_load, p_sensor=None):
        """``c_hat^T (s^2 M + s D + K)^{-1} b_hat`` at complex ``s``."""
        p_sensor = p_load if p_sensor is None else p_sensor
        S = s * s * self.M + s * self.D + self.K
        bhat = as_2d(self.load_map(p_load)).astype(complex)
        chat = np.atleast_2d(as_dense(self.output_map(p_sensor)))
        if sp.issparse(S):
            x = as_2d(spsla.spsolve(sp.csc_matrix(S, dtype=complex), bhat))
        else:
            x = np.linalg.solve(S, bhat)
        return chat @ x


def _check_spd(M, name):
    if sp.issparse(M):
        asym = abs(M - M.T).max() if (M - M.T).nnz else 0.0
        scale = abs(M).max()
        if asym > 1e-10 * scale:
            raise SingularStiffness(f"{name} is not symmetric")
        try:
            lu = spsla.splu(sp.csc_matrix(M), permc_spec="NATURAL", diag_pivot_thresh=0.0)
            d = lu.U.diagonal()
            if np.any(d <= 1e-14 * np.abs(d).max()):
                raise SingularStiffness(f"{name} is not positive definite")
        except RuntimeError as exc:
            raise SingularStiffness(f"{name} is singular") from exc
        return
    Md = np.asarray(M, dtype=float)
    if not np.allclose(Md, Md.T, rtol=0, atol=1e-10 * np.abs(Md).max()):
        raise SingularStiffness(f"{name} is not symmetric")
    lam = np.linalg.eigvalsh(Md)
    if lam[0] <= 1e-10 * max(abs(lam[-1]), 1e-300):
        raise SingularStiffness(f"{name} is not positive definite (min eigenvalue {lam[0]:.3e})")


def to_first_order(sys, F_choice="stiffness", coupling="independent", load_position=None, sensor_position=None):
    """First-order form ``E = [[F, 0], [0, M]]``, ``A = [[0, F], [-K, -D]]``.

    ``F = K`` (``F_choice='stiffness'``) makes ``A + A^T`` negative
    semidefinite with ``E`` SPD, so Galerkin projections keep stability.
    A fixed ``sensor_position`` gives a constant output (load-only
    coupling); a fixed ``load_position`` gives a constant input
    (sensor-only).

    ``coupling='collocated'`` refers to the second-order maps
    (``c_hat(p) = b_hat(p)^T``, checked on every query). The lifted maps
    land in different blocks, so the returned system is tagged
    ``independent`` with ``meta['collocated_dofs'] = True``.
    """
    N = sys.ndof
    if F_choice == "stiffness":
        _check_spd(sys.K, "K")
        F = sys.K
    elif F_choice == "identity":
        F = sp.identity(N, format="csr") if sp.issparse(sys.K) else np.eye(N)
    else:
        raise ValueError(f"F_choice must be 'stiffness' or 'identity', got {F_choice!r}")
    if sp.issparse(sys.M) or sp.issparse(sys.K):
        Z = sp.csr_matrix((N, N))
        E = sp.bmat([[F, Z], [Z, sys.M]], format="csc")
        A = sp.bmat([[Z, F], [-sys.K, -sys.D]], format="csc")
    else:
        Z = np.zeros((N, N))
        E = np.block([[as_dense(F), Z], [Z, as_dense(sys.M)]])
        A = np.block([[Z, as_dense(F)], [-as_dense(sys.K), -as_dense(sys.D)]])

    def lift_b(bhat):
        bhat = as_2d(bhat)
        return np.vstack([np.zeros_like(bhat), bhat])

    def lift_c(chat):
        chat = np.atleast_2d(as_dense(chat))
        return np.hstack([chat, np.zeros_like(chat)])

    if load_position is not None:
        b_const = lift_b(sys.load_map(load_position))
        b = lambda p: b_const  # noqa: E731
    else:
        b = lambda p: lift_b(sys.load_map(p))  # noqa: E731
    if sensor_position is not None:
        c_const = lift_c(sys.output_map(sensor_position))
        c = lambda p: c_const  # noqa: E731
    elif coupling == "collocated":

        def c(p):
            chat = np.atleast_2d(as_dense(sys.output_map(p)))
            if not np.array_equal(chat, as_2d(sys.load_map(p)).T):
                raise AssertionError(f"collocated coupling violated at p={p}")
            return lift_c(chat)

    else:
        c = lambda p: lift_c(sys.output_map(p))  # noqa: E731
    meta = dict(sys.meta)
    if coupling == "collocated":
        coupling, meta["collocated_dofs"] = "independent", True
    return MovingBoundarySystem(E, A, b, c, coupling=coupling, position_range=sys.position_range, meta=meta)


def transfer_eval(sys, s):
    """``C (s E - A)^{-1} B`` as a complex ``q x m`` array."""
    X = ShiftedSolver(sys.A, sys.E, s).solve(sys.B.astype(complex) if np.iscomplexobj(s) else sys.B)
    return -(sys.C @ X)


def moments(sys, s0, count):
    """Moments ``m_j = C (A_s0^{-1} E)^j A_s0^{-1} B`` with ``A_s0 = A - s0 E``.

    Sign convention: ``C (sE - A)^{-1} B = -sum_j m_j (s - s0)^j``. Every
    comparison in this package uses this helper on both sides.
    """
    solver = ShiftedSolver(sys.A, sys.E, s0)
    X = solver.solve(sys.B)
    X = as_2d(X)
    out = []
    for _ in range(count):
        out.append(sys.C @ X)
        X = as_2d(solver.solve(sys.E @ X))
    return out
