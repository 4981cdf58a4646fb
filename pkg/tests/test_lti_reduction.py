import numpy as np
import pytest
import scipy.linalg as spla
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_stable
from mortv.errors import SingularReducedE, UnstablePencil
from mortv.lti_reduction import (
    KrylovConfig,
    balanced_truncation,
    h2_error,
    input_krylov_basis,
    irka,
    modal_truncation,
    one_sided_krylov,
    output_krylov_basis,
    project,
    two_sided_krylov,
)
from mortv.models import HeatRodParams, build_heat_rod
from mortv.systems import StateSpaceSystem, moments, transfer_eval


def _close_moments(a, b, count, rtol):
    for x, y in zip(moments(a, 0.0, count), moments(b, 0.0, count)):
        assert np.allclose(x, y, rtol=rtol, atol=rtol * 1e-3 * np.abs(x).max())


def _points(rng, k=5):
    return rng.standard_normal(k) * 0.5 + 1j * rng.standard_normal(k)


def test_project_identity(siso):
    I = np.eye(siso.n)
    rom = project(siso, I, I)
    np.testing.assert_array_equal(rom.Er, siso.E)
    np.testing.assert_array_equal(rom.Ar, siso.A)
    np.testing.assert_array_equal(rom.Br, siso.B)
    np.testing.assert_array_equal(rom.Cr, siso.C)


def test_project_coordinate():
    s = StateSpaceSystem(np.diag([2.0, 3.0]), np.diag([-1.0, -4.0]), np.array([[5.0], [6.0]]), np.array([[7.0, 8.0]]))
    e1 = np.array([[1.0], [0.0]])
    rom = project(s, e1, e1)
    assert (rom.Er.item(), rom.Ar.item(), rom.Br.item(), rom.Cr.item()) == (2.0, -1.0, 5.0, 7.0)


def test_full_order_krylov_is_exact(rng):
    s = random_stable(rng, 20)
    rom = one_sided_krylov(s, KrylovConfig(r=20)).as_system()
    for z in _points(rng):
        np.testing.assert_allclose(transfer_eval(rom, z), transfer_eval(s, z), rtol=1e-8)


def test_krylov_scalar():
    s = StateSpaceSystem(np.eye(1), -2 * np.eye(1), np.ones((1, 1)), 3 * np.ones((1, 1)))
    assert np.abs(input_krylov_basis(s, KrylovConfig(r=3))).tolist() == [[1.0]]
    assert np.abs(output_krylov_basis(s, KrylovConfig(r=3))).tolist() == [[1.0]]


def test_krylov_hand_computed():
    s = StateSpaceSystem(np.eye(2), np.diag([-1.0, -2.0]), np.array([[1.0], [1.0]]), np.array([[1.0, 1.0]]))
    V = input_krylov_basis(s, KrylovConfig(r=2))
    ref = np.array([[-1.0, 1.0], [-0.5, 0.25]])
    # same span: projector difference vanishes
    Q = np.linalg.qr(ref)[0]
    np.testing.assert_allclose(V @ V.T, Q @ Q.T, atol=1e-14)
    rom = one_sided_krylov(s, KrylovConfig(r=2)).as_system()
    for z in (0.3, 2j, -0.5 + 1j):
        np.testing.assert_allclose(transfer_eval(rom, z), transfer_eval(s, z), rtol=1e-12)


def test_one_sided_moments(rng):
    s = random_stable(rng, 60)
    _close_moments(s, one_sided_krylov(s, KrylovConfig(r=6)).as_system(), 6, 1e-7)
    out = one_sided_krylov(s, KrylovConfig(r=6, side="output")).as_system()
    _close_moments(s, out, 6, 1e-7)


def test_output_basis_is_dual_input_basis(rng):
    s = random_stable(rng, 30)
    W = output_krylov_basis(s, KrylovConfig(r=5))
    V = input_krylov_basis(s.dual(), KrylovConfig(r=5))
    np.testing.assert_allclose(np.abs(W), np.abs(V), atol=1e-12)


def test_mimo_block_budget(rng):
    s = random_stable(rng, 40, m=3, q=2)
    V = input_krylov_basis(s, KrylovConfig(r=7))
    assert V.shape == (40, 7)
    one = one_sided_krylov(s, KrylovConfig(r=6)).as_system()
    _close_moments(s, one, 2, 1e-7)


def test_two_sided_moments(rng):
    s = random_stable(rng, 60)
    rom = two_sided_krylov(s, KrylovConfig(r=5)).as_system()
    _close_moments(s, rom, 10, 1e-6)


def test_two_sided_full_order_exact(rng):
    s = random_stable(rng, 8)
    rom = two_sided_krylov(s, KrylovConfig(r=8)).as_system()
    for z in _points(rng):
        np.testing.assert_allclose(transfer_eval(rom, z), transfer_eval(s, z), rtol=1e-8)


def test_orthogonal_pairing_is_singular():
    A = np.diag([-1.0, -2.0, -3.0, -4.0])
    s = StateSpaceSystem(np.eye(4), A, np.ones((4, 1)), np.ones((1, 4)))
    V = np.eye(4)[:, :2]
    W = np.eye(4)[:, 2:]
    with pytest.raises(SingularReducedE):
        project(s, V, W)


def test_irka_full_order():
    s = StateSpaceSystem(np.eye(2), np.diag([-1.0, -3.0]), np.array([[1.0], [2.0]]), np.array([[1.0, 1.0]]))
    rom = irka(s, 2)
    assert rom.info["converged"] and rom.info["iterations"] <= 2
    for z in (0.1, 1j):
        np.testing.assert_allclose(transfer_eval(rom.as_system(), z), transfer_eval(s, z), rtol=1e-10)


def test_irka_dominant_pole():
    eps = 1e-6
    s = StateSpaceSystem(np.eye(2), np.diag([-1.0, -100.0]), np.array([[1.0], [eps]]), np.array([[1.0, eps]]))
    rom = irka(s, 1)
    shift = rom.info["shifts"][0].real
    # exhaustive scan of first-order models a/(s+l) via the rank-one family
    grid = np.linspace(0.5, 1.5, 201)
    errs = []
    for l in grid:
        r1 = StateSpaceSystem(np.eye(1), -l * np.eye(1), np.ones((1, 1)), np.ones((1, 1)))
        errs.append(h2_error(s, project_like(r1)))
    assert shift == pytest.approx(grid[int(np.argmin(errs))], abs=0.01)
    assert shift == pytest.approx(1.0, abs=1e-3)


def project_like(sys1):
    from mortv.lti_reduction import ReducedModel

    return ReducedModel(sys1.E, sys1.A, sys1.B, sys1.C)


def test_irka_beats_one_sided_in_h2(rng):
    # dissipative A (A + A^T < 0) so the Galerkin Krylov model is stable too
    X = rng.standard_normal((60, 60)) / np.sqrt(60)
    A = X - X.T - np.diag(rng.uniform(0.1, 5.0, 60))
    s = StateSpaceSystem(np.eye(60), A, rng.standard_normal((60, 1)), rng.standard_normal((1, 60)))
    e_irka = h2_error(s, irka(s, 6, max_iters=100))
    e_kry = h2_error(s, one_sided_krylov(s, KrylovConfig(r=6)))
    assert e_irka <= e_kry


def test_irka_rejects_unstable():
    s = StateSpaceSystem(np.eye(2), np.diag([1.0, -2.0]), np.ones((2, 1)), np.ones((1, 2)))
    with pytest.raises(UnstablePencil):
        irka(s, 1)


def test_modal_diagonal():
    s = StateSpaceSystem(np.eye(3), np.diag([-1.0, -2.0, -3.0]), np.ones((3, 1)), np.ones((1, 3)))
    rom = modal_truncation(s, 2)
    np.testing.assert_allclose(np.sort(spla.eigvals(rom.Ar, rom.Er).real), [-2.0, -1.0], atol=1e-12)


def test_modal_heat_rod():
    sys = build_heat_rod(HeatRodParams(num_nodes=100)).frozen(5.0)
    rom = modal_truncation(sys, 10)
    lam = np.sort(spla.eigvals(sys.A.toarray(), sys.E.toarray()).real)[::-1][:10]
    got = np.sort(spla.eigvals(rom.Ar, rom.Er).real)[::-1]
    np.testing.assert_allclose(got, lam, rtol=1e-8)


def test_modal_symmetric_one_vs_two_sided():
    sys = build_heat_rod(HeatRodParams(num_nodes=100)).frozen(4.0)
    a = modal_truncation(sys, 8).as_system()
    b = modal_truncation(sys, 8, two_sided=True).as_system()
    for z in (0.0, 1e-3j, 0.01):
        np.testing.assert_allclose(transfer_eval(a, z), transfer_eval(b, z), rtol=1e-10)


def test_modal_two_sided_spectrum(rng):
    s = random_stable(rng, 30)
    rom = modal_truncation(s, 6, two_sided=True)
    assert rom.r == 6
    got = spla.eigvals(rom.Ar, rom.Er)
    for lam in rom.info["eigenvalues"]:
        assert np.min(np.abs(got - lam)) <= 1e-8 * abs(lam)


def test_balanced_diagonal():
    # balanced diagonal realisation with HSVs 2 and 0.01: a_i = -1/(2 s_i) with B = C = I
    s = StateSpaceSystem(np.eye(2), np.diag([-0.25, -50.0]), np.eye(2), np.eye(2))
    rom = balanced_truncation(s, 1)
    np.testing.assert_allclose(rom.info["hsv"], [2.0, 0.01], rtol=1e-10)
    assert spla.eigvals(rom.Ar, rom.Er)[0].real == pytest.approx(-0.25)


def test_balanced_error_bound(rng):
    s = random_stable(rng, 40)
    rom = balanced_truncation(s, 12)
    bound = rom.info["error_bound"]
    for w in np.logspace(-2, 2, 100):
        err = abs(transfer_eval(s, 1j * w) - transfer_eval(rom.as_system(), 1j * w)).max()
        assert err <= bound * (1 + 1e-9)


def test_balanced_full_order(rng):
    s = random_stable(rng, 10)
    rom = balanced_truncation(s, 10).as_system()
    for z in _points(rng):
        np.testing.assert_allclose(transfer_eval(rom, z), transfer_eval(s, z), rtol=1e-8)


def test_galerkin_preserves_symmetry(rng):
    sys = build_heat_rod(HeatRodParams(num_nodes=60)).frozen(5.0)
    V = np.linalg.qr(rng.standard_normal((60, 7)))[0]
    rom = project(sys, V, V)
    assert np.abs(rom.Er - rom.Er.T).max() <= 1e-12 * np.abs(rom.Er).max()
    assert np.abs(rom.Ar - rom.Ar.T).max() <= 1e-12 * np.abs(rom.Ar).max()


@given(st.integers(0, 2**31 - 1))
def test_rebasing_invariance(seed):
    rng = np.random.default_rng(seed)
    s = random_stable(rng, 25)
    rom = two_sided_krylov(s, KrylovConfig(r=4))
    Q1 = np.linalg.qr(rng.standard_normal((4, 4)))[0]
    Q2 = np.linalg.qr(rng.standard_normal((4, 4)))[0]
    alt = project(s, rom.V @ Q1, rom.W @ Q2).as_system()
    base = rom.as_system()
    for z in _points(rng):
        a, b = transfer_eval(base, z), transfer_eval(alt, z)
        assert np.allclose(a, b, rtol=1e-8, atol=1e-12)
