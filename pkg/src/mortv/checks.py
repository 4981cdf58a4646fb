"""Fast invariant suite run by ``mortv run --seed-check`` before a scenario."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from mortv.lti_reduction import KrylovConfig, one_sided_krylov, two_sided_krylov
from mortv.models import HeatRodParams, build_heat_rod
from mortv.numerics import generalized_eigs, orthonormalize, principal_directions, solve_lyapunov
from mortv.systems import StateSpaceSystem, moments
from mortv.tv_reduction import interpolation_weights, lowrank_input, matrint_offline


def _random_stable(rng, n=30, m=1):
    A = rng.standard_normal((n, n))
    A -= (np.max(np.linalg.eigvals(A).real) + 1.0) * np.eye(n)
    return StateSpaceSystem(np.eye(n), A, rng.standard_normal((n, m)), rng.standard_normal((m, n)))


def _orthonormality(rng):
    Q = orthonormalize(rng.standard_normal((40, 6)))
    return np.linalg.norm(Q.T @ Q - np.eye(6)) < 1e-12


def _weights(rng):
    nodes = np.sort(rng.uniform(0, 1, 9))
    nodes = np.unique(nodes)
    for p in rng.uniform(nodes[0], nodes[-1], 50):
        w = interpolation_weights(nodes, p)
        if w.omega_lo + w.omega_hi != 1.0 or min(w.omega_lo, w.omega_hi) < 0:
            return False
    return all(interpolation_weights(nodes, p).omega_lo == 1.0 for p in nodes[:-1])


def _node_exactness(rng):
    sys = build_heat_rod(HeatRodParams(num_nodes=60))
    apx = lowrank_input(sys, 7, span=(1.0, 9.0))
    return all(np.array_equal(apx.Bconst @ apx.Btilde_of(p), sys.b_at(p)) for p in apx.node_positions)


def _lyapunov(rng):
    s = _random_stable(rng, 25, 2)
    P = solve_lyapunov(s.A, s.E, s.B)
    res = s.A @ P + P @ s.A.T + s.B @ s.B.T
    return np.linalg.norm(res) < 1e-9 * np.linalg.norm(s.B @ s.B.T) and np.linalg.norm(P - P.T) < 1e-12


def _moments(rng):
    s = _random_stable(rng, 40)
    one = one_sided_krylov(s, KrylovConfig(r=6)).as_system()
    two = two_sided_krylov(s, KrylovConfig(r=5)).as_system()
    ok = all(
        np.allclose(a, b, rtol=1e-7, atol=0) for a, b in zip(moments(s, 0.0, 6), moments(one, 0.0, 6))
    )
    return ok and all(np.allclose(a, b, rtol=1e-6, atol=0) for a, b in zip(moments(s, 0.0, 10), moments(two, 0.0, 10)))


def _spectrum(rng):
    sys = build_heat_rod(HeatRodParams(num_nodes=80))
    pairs = generalized_eigs(sp.csc_matrix(sys.A), sp.csc_matrix(sys.E), 5)
    lam = np.array([p.value for p in pairs])
    return bool(np.all(np.abs(lam.imag) < 1e-10) and np.all(lam.real < 0))


def _transformation(rng):
    sys = build_heat_rod(HeatRodParams(num_nodes=80))
    off = matrint_offline(sys, np.linspace(2.0, 7.5, 5), 6, "standard")
    return all(
        np.linalg.norm(off.T[i] @ (off.R.T @ off.V[i]) - np.eye(off.r)) < 1e-10 for i in range(off.k)
    )


CHECKS = (
    ("orthonormality", _orthonormality),
    ("weight partition of unity", _weights),
    ("node exactness", _node_exactness),
    ("Lyapunov residual", _lyapunov),
    ("moment matching", _moments),
    ("spectrum containment", _spectrum),
    ("transformation inverses", _transformation),
)


def run_checks(seed=0):
    """Return ``[(name, passed, detail)]`` for every invariant."""
    out = []
    for name, fn in CHECKS:
        rng = np.random.default_rng(seed)
        try:
            ok, detail = bool(fn(rng)), ""
        except Exception as exc:  # report, don't crash the CLI
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append((name, ok, detail))
    return out
