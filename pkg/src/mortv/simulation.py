"""Implicit Euler integration of full and reduced models and L2 output errors."""

from __future__ import annotations

import csv
import logging
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np
import scipy.linalg as sla

from mortv.errors import GridMismatch, SingularShift, SingularStep
from mortv.numerics import ShiftedSolver
from mortv.systems import MovingBoundarySystem, StateSpaceSystem, Trajectory

log = logging.getLogger(__name__)

BLOWUP_FACTOR = 1e8


@dataclass(frozen=True)
class SimConfig:
    t_end: float
    dt: float
    input_signal: Union[float, Callable[[float], np.ndarray]] = 1.0
    initial_state: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.t_end < self.dt:
            raise ValueError("t_end must be at least dt")

    @property
    def steps(self):
        return int(round(self.t_end / self.dt))

    @property
    def times(self):
        # integer multiples keep the grid identical across runs and methods
        return np.arange(self.steps + 1) * self.dt

    def u(self, t, m=1):
        if callable(self.input_signal):
            return np.asarray(self.input_signal(t), dtype=float).reshape(-1)
        return np.full(m, float(self.input_signal))


@dataclass
class SimResult:
    times: np.ndarray
    outputs: np.ndarray
    wall_time: float = 0.0
    aborted_at: Optional[int] = None
    unstable_steps: int = 0
    first_unstable_step: Optional[int] = None
    info: dict = field(default_factory=dict)

    @property
    def stable(self):
        return self.aborted_at is None and self.unstable_steps == 0

    @property
    def dt(self):
        return float(self.times[1] - self.times[0])

    def to_csv(self, path):
        write_csv(path, self.times, self.outputs)


def _trajectory(sys, traj, cfg):
    if traj is not None:
        return traj
    if getattr(sys, "trajectory", None) is not None:
        return sys.trajectory
    return Trajectory.constant(0.0, cfg.t_end)


def _velocity(traj, times, positions, k):
    if traj.provides_velocity:
        return traj.velocity_of(times[k])
    return 0.0 if k == 0 else (positions[k] - positions[k - 1]) / (times[k] - times[k - 1])


def simulate_full(sys, cfg, trajectory=None):
    """Full-order implicit Euler with ``E - dt A`` factorized once.

    ``sys`` may be a :class:`MovingBoundarySystem` (maps evaluated at
    ``p(t_{k+1})``) or a constant :class:`StateSpaceSystem`.
    """
    start = time.perf_counter()
    dt, times = cfg.dt, cfg.times
    moving = isinstance(sys, MovingBoundarySystem)
    traj = _trajectory(sys, trajectory, cfg) if moving else None
    if moving:
        b_of, c_of = sys.b_at, sys.c_at
    else:
        b_of, c_of = (lambda p: sys.B), (lambda p: sys.C)  # noqa: E731
    try:
        solver = ShiftedSolver(sys.E, sys.A, dt)  # E - dt A
    except SingularShift as exc:
        raise SingularStep(f"E - dt A singular for dt={dt}") from exc
    positions = np.array([traj.position_of(t) for t in times]) if moving else np.zeros(times.size)
    n = sys.A.shape[0]
    x = np.zeros(n) if cfg.initial_state is None else np.asarray(cfg.initial_state, dtype=float).copy()
    C0 = c_of(positions[0])
    Y = np.empty((C0.shape[0], times.size))
    Y[:, 0] = C0 @ x
    m = b_of(positions[0]).shape[1]
    for k in range(cfg.steps):
        p = positions[k + 1]
        rhs = sys.E @ x + dt * (b_of(p) @ cfg.u(times[k + 1], m))
        x = np.asarray(solver.solve(rhs)).reshape(-1)
        Y[:, k + 1] = c_of(p) @ x
        if not np.all(np.isfinite(Y[:, k + 1])):
            raise FloatingPointError(f"non-finite output at step {k + 1} of the full-order run")
    return SimResult(times, Y, time.perf_counter() - start, info={"positions": positions})


def _pencil_unstable(E, A):
    lam = sla.eigvals(A, E)
    lam = lam[np.isfinite(lam)]
    if lam.size == 0:
        return False
    return bool(np.max(lam.real) > 1e-10 * max(np.max(np.abs(lam)), 1.0))


def simulate_reduced(rom, trajectory, cfg, online=None, check_stability=None, blowup_factor=BLOWUP_FACTOR):
    """Reduced implicit Euler.

    ``rom`` is a :class:`ReducedModel` (possibly with position maps or a
    time-dependent correction); alternatively ``online(p, pdot)`` returns a
    fresh reduced model every step, as matrix interpolation does. Unstable
    interpolated pencils are counted (``check_stability`` defaults to on
    for online models) and a blow-up of the state norm beyond
    ``blowup_factor`` times its first nonzero value aborts the run with the
    step recorded instead of raising.
    """
    start = time.perf_counter()
    dt, times = cfg.dt, cfg.times
    traj = trajectory if trajectory is not None else Trajectory.constant(0.0, cfg.t_end)
    positions = np.array([traj.position_of(t) for t in times])
    if check_stability is None:
        check_stability = online is not None
    model0 = online(positions[0], _velocity(traj, times, positions, 0)) if online is not None else rom
    r = model0.Er.shape[0]
    x = np.zeros(r) if cfg.initial_state is None else np.asarray(cfg.initial_state, dtype=float).copy()
    C0 = model0.C_at(positions[0])
    Y = np.full((C0.shape[0], times.size), np.nan)
    Y[:, 0] = C0 @ x
    m = model0.B_at(positions[0]).shape[1]

    constant = online is None and rom.correction is None
    if constant:
        with warnings.catch_warnings():
            # singularity is checked on the pivots below
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            lu = sla.lu_factor(rom.Er - dt * rom.Ar)
        piv = np.abs(np.diag(lu[0]))
        if piv.min() <= 1e-14 * piv.max():
            raise SingularStep(f"reduced E - dt A singular for dt={dt}")

    result = SimResult(times, Y, info={"positions": positions})
    ref_norm = None
    for k in range(cfg.steps):
        t, p = times[k + 1], positions[k + 1]
        if online is not None:
            model = online(p, _velocity(traj, times, positions, k + 1))
        else:
            model = rom
        A_eff = model.Ar
        corr = model.correction_at(t)
        if corr is not None:
            A_eff = A_eff - corr
        if check_stability and _pencil_unstable(model.Er, A_eff):
            result.unstable_steps += 1
            if result.first_unstable_step is None:
                result.first_unstable_step = k + 1
        rhs = model.Er @ x + dt * (model.B_at(p) @ cfg.u(t, m))
        if constant:
            x = sla.lu_solve(lu, rhs)
        else:
            S = model.Er - dt * A_eff
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", sla.LinAlgWarning)
                    lu_k = sla.lu_factor(S, check_finite=False)
            except (ValueError, np.linalg.LinAlgError) as exc:
                raise SingularStep(f"step {k + 1}: reduced step matrix not factorizable") from exc
            piv = np.abs(np.diag(lu_k[0]))
            if piv.min() <= 1e-14 * piv.max():
                raise SingularStep(
                    f"step {k + 1} (interval {model.info.get('interval')}): reduced E - dt A singular for dt={dt}"
                )
            x = sla.lu_solve(lu_k, rhs, check_finite=False)
        nx = float(np.linalg.norm(x))
        if ref_norm is None and nx > 0:
            ref_norm = nx
        if not np.isfinite(nx) or (ref_norm is not None and nx > blowup_factor * ref_norm):
            result.aborted_at = k + 1
            log.warning("reduced run aborted at step %d: state norm %.3e", k + 1, nx)
            break
        Y[:, k + 1] = model.C_at(p) @ x
    result.wall_time = time.perf_counter() - start
    return result


def l2_error(ref, test, trapezoid=False):
    """Discrete L2 output error ``(absolute, relative)``.

    Rectangle rule with weight ``dt`` on every sample ``k = 0..steps``
    (both endpoints included); ``trapezoid=True`` halves the endpoint
    weights. Aborted runs give ``inf``.
    """
    if ref.times.shape != test.times.shape or not np.array_equal(ref.times, test.times):
        raise GridMismatch("time grids differ")
    if ref.outputs.shape != test.outputs.shape:
        raise GridMismatch(f"output shapes differ: {ref.outputs.shape} vs {test.outputs.shape}")
    w = np.full(ref.times.size, ref.dt)
    if trapezoid:
        w[0] *= 0.5
        w[-1] *= 0.5
    diff = ref.outputs - test.outputs
    if not np.all(np.isfinite(diff)):
        return np.inf, np.inf
    absolute = float(np.sqrt(np.sum(w * np.sum(diff**2, axis=0))))
    norm = float(np.sqrt(np.sum(w * np.sum(ref.outputs**2, axis=0))))
    relative = absolute / norm if norm > 0 else (0.0 if absolute == 0 else np.inf)
    return absolute, relative


def write_csv(path, times, outputs):
    """``t,y1..yq`` with 17 significant digits (round-trips doubles)."""
    outputs = np.atleast_2d(outputs)
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"y{i + 1}" for i in range(outputs.shape[0])])
        for k, t in enumerate(times):
            w.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in outputs[:, k]])


def read_csv(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return SimResult(data[:, 0], data[:, 1:].T.copy())


def reduced_lti(system):
    """Adapter: simulate a constant :class:`StateSpaceSystem` through the reduced path."""
    from mortv.lti_reduction import ReducedModel

    if not isinstance(system, StateSpaceSystem):
        raise TypeError("expected a StateSpaceSystem")
    return ReducedModel(np.asarray(system.E), np.asarray(system.A), system.B, system.C)

