import numpy as np
import pytest
import scipy.linalg as spla
import scipy.sparse.linalg as spsla
from hypothesis import given
from hypothesis import strategies as st

from mortv.errors import PositionOutOfRange, SingularTransformation, WrongCoupling
from mortv.lti_reduction import KrylovConfig, balanced_truncation, modal_truncation, two_sided_krylov
from mortv.models import BeamParams, HeatRodParams, beam_system, build_beam, build_heat_rod
from mortv.simulation import SimConfig, l2_error, simulate_full, simulate_reduced
from mortv.systems import MovingBoundarySystem, StateSpaceSystem, Trajectory, moments, transfer_eval
from mortv.tv_reduction import (
    compute_Tdot,
    compute_Vdot,
    interpolation_weights,
    load_offline,
    lowrank_input,
    lowrank_output,
    matrint_from_bases,
    matrint_offline,
    matrint_online,
    modal_reduce_combined,
    one_sided_fixed_basis_reduce,
    save_offline,
    two_step_reduce,
)

nodes_st = st.lists(st.floats(-5, 5, allow_nan=False), min_size=2, max_size=12, unique=True).map(sorted)


@pytest.fixture(scope="module")
def heat():
    return build_heat_rod(HeatRodParams(num_nodes=120))


@pytest.fixture(scope="module")
def beam():
    return beam_system(BeamParams(num_elements=100))


def _rotation_family(n, r, seed=0):
    """Orthonormal V(p) = expm(p S)[:, :r] with a fixed skew S."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, n))
    S = (X - X.T) / n
    return lambda p: spla.expm(p * S)[:, :r]


def _toy_system(n):
    rng = np.random.default_rng(7)
    A = -np.eye(n) - 0.1 * rng.standard_normal((n, n))
    b = rng.standard_normal((n, 1))
    c = rng.standard_normal((1, n))
    return MovingBoundarySystem(np.eye(n), A, lambda p: b, lambda p: c, coupling="independent")


# weights ---------------------------------------------------------------


@given(nodes_st, st.floats(0, 1))
def test_weights_partition(nodes, frac):
    nodes = np.array(nodes)
    # rounding can push the affine combination just outside the span
    p = min(max(nodes[0] + frac * (nodes[-1] - nodes[0]), nodes[0]), nodes[-1])
    w = interpolation_weights(nodes, p)
    assert w.omega_lo + w.omega_hi == 1.0
    assert 0.0 <= w.omega_lo <= 1.0 and 0.0 <= w.omega_hi <= 1.0
    assert nodes[w.interval] <= p <= nodes[w.interval + 1]


@given(nodes_st)
def test_weights_at_nodes(nodes):
    nodes = np.array(nodes)
    for i, p in enumerate(nodes[:-1]):
        w = interpolation_weights(nodes, p)
        assert w.interval == i and w.omega_lo == 1.0
    w = interpolation_weights(nodes, nodes[-1])
    assert w.omega_hi == 1.0


def test_weights_midpoint_and_range():
    nodes = np.arange(6.0)
    w = interpolation_weights(nodes, 3.5)
    assert (w.interval, w.omega_lo, w.omega_hi) == (3, 0.5, 0.5)
    with pytest.raises(PositionOutOfRange):
        interpolation_weights(nodes, 5.5)


# low-rank lifting ------------------------------------------------------


def test_lowrank_node_exactness(heat):
    apx = lowrank_input(heat, 9, span=(1.0, 9.0))
    out = lowrank_output(heat, 9, span=(1.0, 9.0))
    for j, p in enumerate(apx.node_positions):
        Bt = apx.Btilde_of(p)
        assert Bt[j, 0] == 1.0 and np.count_nonzero(Bt) == 1
        assert np.array_equal(apx.Bconst @ Bt, heat.b_at(p))
        assert np.array_equal(out.Ctilde_of(p) @ out.Cconst, heat.c_at(p))


def test_lowrank_midpoint_weights(heat):
    apx = lowrank_input(heat, 9, span=(1.0, 9.0))
    p = 0.5 * (apx.node_positions[3] + apx.node_positions[4])
    np.testing.assert_allclose(apx.Btilde_of(p)[3:5, 0], [0.5, 0.5])
    np.testing.assert_allclose(lowrank_output(heat, 9, span=(1.0, 9.0)).Ctilde_of(p)[0, 3:5], [0.5, 0.5])


@given(st.floats(1.0, 9.0))
def test_lowrank_rows_are_weights(p):
    sys = build_heat_rod(HeatRodParams(num_nodes=60))
    Bt = lowrank_input(sys, 11, span=(1.0, 9.0)).Btilde_of(p)
    assert np.all(Bt >= 0) and Bt.sum() == pytest.approx(1.0, abs=1e-15) and np.count_nonzero(Bt) <= 2


def test_lowrank_out_of_range(heat):
    with pytest.raises(PositionOutOfRange):
        lowrank_input(heat, 5, span=(2.0, 8.0)).Btilde_of(9.0)


def _beam_lift_gap(sys, apx, positions):
    return max(np.linalg.norm(sys.b_at(p) - apx.Bconst @ apx.Btilde_of(p)) for p in positions)


@pytest.mark.xfail(strict=True, reason="point loads between coarse nodes are orthogonal to every node column")
def test_lowrank_beam_two_norm_gate():
    sys = beam_system(BeamParams())
    h = 1.0 / 451
    apx = lowrank_input(sys, 76, span=(h, 1 - h))
    ps = np.linspace(h, 1 - h, 2001)
    assert _beam_lift_gap(sys, apx, ps) / max(np.linalg.norm(sys.b_at(p)) for p in ps) < 0.05


def test_lowrank_beam_static_response():
    # what the lift has to get right is the response, not the load vector
    so = build_beam(BeamParams())
    sys = beam_system(BeamParams())
    h = 1.0 / 451
    apx = lowrank_input(sys, 76, span=(h, 1 - h))
    N = so.ndof
    lu = spsla.splu(so.K.tocsc())
    Z = lu.solve(apx.Bconst[N:])
    worst, peak = 0.0, 0.0
    for p in np.linspace(h, 1 - h, 400):
        w = lu.solve(so.load_map(p))
        worst = max(worst, np.abs(w - Z @ apx.Btilde_of(p)).max())
        peak = max(peak, np.abs(w).max())
    assert worst / peak < 0.05


def test_lowrank_exact_when_nodes_match_mesh():
    sys = beam_system(BeamParams(num_elements=20), coupling="load-only")
    apx = lowrank_input(sys, 21, span=(0.0, 1.0))
    for p in np.random.default_rng(3).uniform(0, 1, 50):
        np.testing.assert_allclose(apx.Bconst @ apx.Btilde_of(p), sys.b_at(p), atol=1e-14)
    rom = two_step_reduce(sys, 21, engine="balanced-truncation", r=6, span=(0.0, 1.0))
    W = rom.W
    for p in (0.13, 0.5, 0.71):
        np.testing.assert_allclose(rom.B_at(p), W.T @ sys.b_at(p), atol=1e-12 * np.abs(W.T @ sys.b_at(p)).max())


# two-step ---------------------------------------------------------------


@pytest.mark.parametrize("engine", ["two-sided-krylov", "balanced-truncation"])
def test_two_step_constant_trajectory(heat, engine):
    p = 4.0
    pinned = heat.with_trajectory(Trajectory.constant(p, 10.0))
    rom = two_step_reduce(pinned, 20, 20, engine=engine, r=6)
    frozen = heat.frozen(p)
    direct = two_sided_krylov(frozen, KrylovConfig(r=6)) if engine != "balanced-truncation" else balanced_truncation(frozen, 6)
    for z in (0.0, 1e-3j, 0.01 + 0.02j):
        a = transfer_eval(rom.as_system(p), z)
        b = transfer_eval(direct.as_system(), z)
        np.testing.assert_allclose(a, b, rtol=1e-10)


def test_two_step_lifts_follow_coupling(beam, heat):
    load = beam_system(BeamParams(num_elements=30), coupling="load-only")
    rom = two_step_reduce(load, 8, engine="two-sided-krylov", r=4, span=(0.1, 0.9))
    assert callable(rom.Br) and not callable(rom.Cr)
    rom = two_step_reduce(heat, 8, 8, engine="two-sided-krylov", r=4, span=(1.0, 9.0))
    assert callable(rom.Br) and callable(rom.Cr) and rom.correction is None


# one-sided fixed basis --------------------------------------------------


def test_fixed_basis_rejects_combined(heat):
    with pytest.raises(WrongCoupling):
        one_sided_fixed_basis_reduce(heat, KrylovConfig(r=4))
    with pytest.raises(WrongCoupling):
        matrint_offline(heat, np.linspace(1, 9, 4), 4, "fixed-output-basis")


def test_fixed_basis_sensor_only_moments():
    sys = beam_system(BeamParams(num_elements=40), coupling="sensor-only", load_position=0.5)
    rom = one_sided_fixed_basis_reduce(sys, KrylovConfig(r=6))
    for p in (0.2, 0.5, 0.83):
        full, red = sys.frozen(p), rom.as_system(p)
        for a, b in zip(moments(full, 0.0, 6), moments(red, 0.0, 6)):
            assert np.allclose(a, b, rtol=1e-7, atol=1e-7 * np.abs(a).max())


def test_fixed_basis_load_only_continuity(heat):
    c0 = heat.c_at(5.0)
    load = MovingBoundarySystem(heat.E, heat.A, heat.b, lambda p: c0, coupling="load-only", position_range=(0, 10))
    rom = one_sided_fixed_basis_reduce(load, KrylovConfig(r=6))
    for p in (2.0, 5.5, 7.3):
        assert np.abs(rom.B_at(p + 1e-6) - rom.B_at(p)).sum() < 1e-4 * np.abs(rom.B_at(p)).sum()


# modal combined -------------------------------------------------------------


def test_modal_combined_frozen(heat):
    rom = modal_reduce_combined(heat, 10)
    for p in (3.0, 6.5):
        direct = modal_truncation(heat.frozen(p), 10)
        for z in (0.0, 1e-3j):
            np.testing.assert_allclose(transfer_eval(rom.as_system(p), z), transfer_eval(direct.as_system(), z), rtol=1e-10)
    lam = np.sort(spla.eigvals(heat.A.toarray(), heat.E.toarray()).real)[::-1][:10]
    np.testing.assert_allclose(np.sort(spla.eigvals(rom.Ar, rom.Er).real)[::-1], lam, rtol=1e-8)


def test_modal_combined_simulation():
    sys = build_heat_rod(HeatRodParams(num_nodes=400))
    traj = Trajectory.constant_velocity(4.0, 6.0, 0.002)
    sys = sys.with_trajectory(traj)
    cfg = SimConfig(traj.t_end, 1.0, 50.0)
    ref = simulate_full(sys, cfg)
    red = simulate_reduced(modal_reduce_combined(sys, 20), traj, cfg)
    assert l2_error(ref, red)[1] < 1e-2


# matrix interpolation ---------------------------------------------------


def test_constant_b_identical_locals():
    sys = _toy_system(12)
    off = matrint_offline(sys, np.linspace(0, 1, 5), 4, "standard")
    for i in range(1, 5):
        np.testing.assert_allclose(off.T[i], off.T[0], rtol=0, atol=1e-14)
        np.testing.assert_allclose(off.Ahat[i], off.Ahat[0], rtol=0, atol=1e-14)
    a, b = matrint_online(off, 0.37), matrint_online(off, 0.81)
    np.testing.assert_allclose(a.Ar, b.Ar, rtol=0, atol=1e-14)
    np.testing.assert_allclose(a.Br, b.Br, rtol=0, atol=1e-14)


def test_sign_flip_absorbed(heat):
    samples = np.linspace(2.0, 7.6, 5)  # the exact midpoint is a symmetric, degenerate sample
    off = matrint_offline(heat, samples, 6, "standard")
    V = list(off.V)
    V[2] = -V[2]
    V[3] = V[3] * np.array([1, -1, 1, -1, 1, -1])
    flipped = matrint_from_bases(heat, samples, V, V, "standard")
    for i in (2, 3):
        np.testing.assert_allclose(flipped.Ehat[i], off.Ehat[i], atol=1e-12 * np.abs(off.Ehat[i]).max())
        np.testing.assert_allclose(flipped.Ahat[i], off.Ahat[i], atol=1e-12 * np.abs(off.Ahat[i]).max())
        np.testing.assert_allclose(flipped.Chat[i], off.Chat[i], atol=1e-12 * np.abs(off.Chat[i]).max())
    for p in (3.1, 4.6, 6.2):
        a, b = matrint_online(off, p).as_system(), matrint_online(flipped, p).as_system()
        for z in (0.0, 1e-3j, 0.002):
            np.testing.assert_allclose(transfer_eval(a, z), transfer_eval(b, z), rtol=1e-10)


def test_transformation_inverses_and_equivalence(beam):
    samples = np.linspace(0.05, 0.95, 10)
    off = matrint_offline(beam, samples, 8, "standard")
    zs = [1j, 10 + 50j, 100j, 3.0, 1000j]
    for i, p in enumerate(samples):
        assert np.linalg.norm(off.T[i] @ (off.R.T @ off.V[i]) - np.eye(8)) < 1e-10
        V = off.V[i]
        loc = StateSpaceSystem(V.T @ (beam.E @ V), V.T @ (beam.A @ V), V.T @ beam.b_at(p), beam.c_at(p) @ V)
        tr = StateSpaceSystem(off.Ehat[i], off.Ahat[i], off.Bhat[i], off.Chat[i])
        for z in zs:
            np.testing.assert_allclose(transfer_eval(tr, z), transfer_eval(loc, z), rtol=1e-9)
        on = matrint_online(off, p)
        assert np.array_equal(on.Er, off.Ehat[i]) and np.array_equal(on.Ar, off.Ahat[i])
        assert np.array_equal(on.Br, off.Bhat[i]) and np.array_equal(on.Cr, off.Chat[i])


@pytest.mark.parametrize("mode", ["standard", "extended", "modal"])
def test_online_continuity(heat, mode):
    off = matrint_offline(heat, np.linspace(2.0, 8.0, 6), 6, mode)
    for p in off.samples[1:-1]:
        left, right = matrint_online(off, np.nextafter(p, -np.inf)), matrint_online(off, p)
        for name in ("Er", "Ar", "Br", "Cr"):
            a, b = getattr(left, name), getattr(right, name)
            assert np.abs(a - b).max() <= 1e-12 * max(np.abs(b).max(), 1e-300)


def test_fixed_basis_modes_share_one_basis():
    sys = beam_system(BeamParams(num_elements=30), coupling="load-only")
    off = matrint_offline(sys, np.linspace(0.1, 0.9, 6), 6, "fixed-output-basis")
    assert all(v is off.V[0] for v in off.V)
    assert all(np.count_nonzero(d) == 0 for d in off.dV_intervals)
    np.testing.assert_array_equal(matrint_online(off, 0.3).Ar, matrint_online(off, 0.7).Ar)


def test_singular_transformation():
    sys = _toy_system(6)
    I = np.eye(6)
    V1, V2 = I[:, :2], I[:, 2:4]
    with pytest.raises(SingularTransformation):
        matrint_from_bases(sys, [0.0, 1.0], [V1, V2], [V1, V2])


def test_extended_zero_velocity_equals_standard(heat):
    samples = np.linspace(2.0, 8.0, 6)
    std = matrint_offline(heat, samples, 6, "standard")
    ext = matrint_offline(heat, samples, 6, "extended")
    for p in (2.0, 3.3, 7.9):
        a, b = matrint_online(std, p), matrint_online(ext, p, 0.0)
        assert b.correction is None
        np.testing.assert_array_equal(a.Ar, b.Ar)


def test_extended_constant_basis_has_no_correction():
    sys = _toy_system(10)
    ext = matrint_offline(sys, np.linspace(0, 1, 4), 4, "extended")
    on = matrint_online(ext, 0.4, 3.0)
    assert np.abs(on.correction).max() == 0.0


def test_extended_full_order_correction_vanishes():
    n = 8
    fam = _rotation_family(n, n)
    sys = _toy_system(n)
    samples = np.linspace(0.0, 1.0, 5)
    V = [fam(p) for p in samples]
    off = matrint_from_bases(sys, samples, V, V, "extended")
    for p in (0.1, 0.55, 0.9):
        assert np.abs(matrint_online(off, p, 2.0).correction).max() < 1e-12


def test_extended_correction_matches_definition():
    n, r = 10, 3
    fam = _rotation_family(n, r)
    sys = _toy_system(n)
    samples = np.linspace(0.0, 1.0, 6)
    V = [fam(p) for p in samples]
    off = matrint_from_bases(sys, samples, V, V, "extended")
    p, pdot = 0.47, 1.7
    w = off.weights(p)
    j = w.interval
    Vdot = compute_Vdot(off, p, pdot)
    want = np.zeros((r, r))
    for i, om in ((j, w.omega_lo), (j + 1, w.omega_hi)):
        Er_i = V[i].T @ sys.E @ V[i]
        Tdot = compute_Tdot(off, i, Vdot)
        want += om * (off.M[i].T @ V[i].T @ sys.E @ Vdot @ off.T[i] + off.M[i].T @ Er_i @ Tdot)
    np.testing.assert_allclose(matrint_online(off, p, pdot).correction, want, atol=1e-13)


def _cos_sin_offline(dp):
    samples = np.arange(0.0, 1.0 + dp / 2, dp)
    V = [np.array([[np.cos(p)], [np.sin(p)]]) for p in samples]
    return matrint_from_bases(_toy_system(2), samples, V, V, "extended")


@pytest.mark.parametrize("dp", [1e-1, 1e-2, 1e-3])
def test_vdot_first_order(dp):
    off = _cos_sin_offline(dp)
    pdot = 1.3
    for p in np.linspace(0.05, 0.95, 17):
        exact = np.array([[-np.sin(p)], [np.cos(p)]]) * pdot
        assert np.abs(compute_Vdot(off, p, pdot) - exact).max() < 2 * dp * abs(pdot)


def test_vdot_trivial():
    off = _cos_sin_offline(0.1)
    assert np.count_nonzero(compute_Vdot(off, 0.3, 0.0)) == 0
    const = matrint_from_bases(_toy_system(2), [0.0, 1.0], [np.eye(2)[:, :1]] * 2, [np.eye(2)[:, :1]] * 2, "extended")
    assert np.count_nonzero(compute_Vdot(const, 0.5, 4.0)) == 0


@given(st.integers(0, 2**31 - 1))
def test_tdot_inverse_identity(seed):
    rng = np.random.default_rng(seed)
    n, r = 12, 4
    fam = _rotation_family(n, r, seed=seed % 1000)
    samples = np.sort(rng.uniform(0.0, 1.0, 5))
    if np.min(np.diff(samples)) < 1e-3:
        return
    V = [fam(p) for p in samples]
    off = matrint_from_bases(_toy_system(n), samples, V, V, "extended")
    i = int(rng.integers(0, off.k - 1))
    Vdot = rng.standard_normal((n, r))
    Tdot = compute_Tdot(off, i, Vdot)
    assert np.linalg.norm(Tdot @ (off.R.T @ V[i]) + off.T[i] @ (off.R.T @ Vdot)) < 1e-10


def test_tdot_scalar():
    # R = 1, V = p, T = 1/p: dT/dt = -pdot / p^2
    sys = _toy_system(1)
    off = matrint_from_bases(sys, [1.0, 2.0], [np.array([[1.0]]), np.array([[2.0]])], [np.array([[1.0]])] * 2)
    off.R = np.array([[1.0]])
    off.T = [np.array([[1.0]]), np.array([[0.5]])]
    pdot = 0.7
    assert compute_Tdot(off, 1, np.array([[pdot]]))[0, 0] == pytest.approx(-pdot / 4.0, rel=1e-15)
    assert np.count_nonzero(compute_Tdot(off, 0, np.zeros((1, 1)))) == 0


def test_tdot_central_difference():
    dp, pdot, h = 1e-3, 1.0, 1e-4
    off = _cos_sin_offline(dp)
    R = off.R
    T = lambda p: np.linalg.inv(R.T @ np.array([[np.cos(p)], [np.sin(p)]]))  # noqa: E731
    i = 400
    p = off.samples[i]
    fd = (T(p + h) - T(p - h)) / (2 * h) * pdot
    got = compute_Tdot(off, i, compute_Vdot(off, p, pdot))
    assert np.abs(got - fd).max() < 10 * (h**2 + dp)


def test_save_load_roundtrip(tmp_path, heat):
    for mode in ("extended", "modal"):
        off = matrint_offline(heat, np.linspace(2.0, 7.6, 5), 5, mode)
        save_offline(off, tmp_path / mode)
        back = load_offline(tmp_path / mode)
        assert back.mode == mode and back.k == 5 and back.r == 5
        for p, pdot in ((2.5, 0.01), (6.1, -0.02)):
            a, b = matrint_online(off, p, pdot), matrint_online(back, p, pdot)
            np.testing.assert_array_equal(a.Ar, b.Ar)
            np.testing.assert_array_equal(a.Er, b.Er)
            if a.correction is not None:
                np.testing.assert_array_equal(a.correction, b.correction)
