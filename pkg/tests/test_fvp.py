import logging
import math

import numpy as np
import pytest

from fvpkit import (DIVERGING, IN_DOMAIN, CoerciveOperator, FvpData, IncompatibleDataError,
                    SemigroupEvaluator, SourceTerm, ValidationError, apply_parabolic, build_model,
                    check_compatibility, homeomorphism_roundtrip, recover_initial_state,
                    solve_forward_duhamel, solve_fvp, stability_constant, y_norm)
from fvpkit.duhamel import compute_yf
from fvpkit.fvp import data_difference, default_levels, flow_map, random_compatible_problem
from fvpkit.neumann import Interval

# frozen oracle values (tests/oracles.py)
U_T_SCALAR = 1.3678794411714423     # 1 + e^{-1}
E_INV = 0.36787944117144233

NON_NORMAL = np.array([[1.0, 1.0], [0.0, 2.0]])


@pytest.fixture(scope="module")
def neumann32():
    return build_model(Interval(), 32).evaluator


@pytest.fixture(scope="module")
def neumann16():
    return build_model(Interval(), 16).evaluator


def scalar_ev(lam=1.0):
    return SemigroupEvaluator(CoerciveOperator.spectral(np.array([lam])))


def test_fvp_data_validation():
    f = SourceTerm.zero(2, 1.0)
    with pytest.raises(ValidationError):
        FvpData(f, [1.0, 2.0], 0.0)
    with pytest.raises(ValidationError):
        FvpData(f, [1.0, math.nan], 1.0)
    with pytest.raises(ValidationError):
        FvpData(f, [1.0], 1.0)
    with pytest.raises(ValidationError):
        FvpData(f, [1.0, 2.0], 2.0)
    d = FvpData(f, [1.0, 2.0], 1.0)
    back = FvpData.from_dict(d.to_dict())
    np.testing.assert_array_equal(back.u_T, d.u_T)
    assert back.T == 1.0


def test_default_levels():
    assert default_levels(32) == [4, 8, 16, 32]
    assert default_levels(20) == [4, 8, 16, 20]
    assert default_levels(3) == [3]


def test_recovery_scalar_closed_form():
    data = FvpData(SourceTerm.constant([1.0], 1.0), [U_T_SCALAR], 1.0)
    u0 = recover_initial_state(scalar_ev(), data)
    assert u0[0] == pytest.approx(2.0, rel=1e-14)


def test_zero_mode_final_data_is_compatible(neumann32):
    e0 = np.zeros(32)
    e0[0] = 1.0
    data = FvpData(SourceTerm.zero(32, 0.5), e0, 0.5)
    rep = check_compatibility(neumann32, data, levels=[8, 16, 32])
    assert rep.verdict == IN_DOMAIN
    np.testing.assert_array_equal(rep.recovered, e0)
    assert rep.y_norm == pytest.approx(math.sqrt(2.0))


def test_white_noise_is_diverging(neumann32):
    rng = np.random.default_rng(11)
    for _ in range(5):
        data = FvpData(SourceTerm.zero(32, 0.5), rng.standard_normal(32), 0.5)
        rep = check_compatibility(neumann32, data, levels=[8, 16, 32])
        assert rep.verdict == DIVERGING
        with pytest.raises(IncompatibleDataError) as exc:
            recover_initial_state(neumann32, data, report=rep)
        assert exc.value.report is rep


def test_constructed_compatible_data_is_in_domain(neumann32):
    rng = np.random.default_rng(12)
    for _ in range(5):
        u0, f = random_compatible_problem(neumann32, 0.5, rng)
        u_T = flow_map(neumann32, u0, f, 0.5)
        rep = check_compatibility(neumann32, FvpData(f, u_T, 0.5), levels=[8, 16, 32])
        assert rep.verdict == IN_DOMAIN


def test_overflow_reports_mode(neumann32):
    data = FvpData(SourceTerm.zero(32, 2.0), np.ones(32), 2.0)
    rep = check_compatibility(neumann32, data)
    assert rep.verdict == DIVERGING
    assert rep.overflow_mode == 19   # first j with 2j² > 700
    assert y_norm(neumann32, data) == math.inf


def test_matrix_backend_uses_conditioning():
    ev = SemigroupEvaluator(CoerciveOperator.from_matrix(NON_NORMAL))
    u0 = np.array([1.0, -1.0])
    data = FvpData(SourceTerm.zero(2, 1.0), ev.evolve(1.0, u0), 1.0)
    rep = check_compatibility(ev, data)
    assert rep.verdict == IN_DOMAIN and rep.levels == [2]
    np.testing.assert_allclose(recover_initial_state(ev, data, report=rep), u0, rtol=1e-12)
    stiff = SemigroupEvaluator(CoerciveOperator.from_matrix(np.diag([0.0, 40.0])))
    rep = check_compatibility(stiff, FvpData(SourceTerm.zero(2, 1.0), [1.0, 1.0], 1.0))
    assert rep.verdict != IN_DOMAIN and rep.kappa > 1e12


def test_cutoff_is_explicit_and_logged(neumann32, caplog):
    rng = np.random.default_rng(13)
    data = FvpData(SourceTerm.zero(32, 0.5), rng.standard_normal(32), 0.5)
    rep = check_compatibility(neumann32, data, levels=[8, 16, 32])
    assert rep.verdict == DIVERGING
    with caplog.at_level(logging.INFO, logger="fvpkit.fvp"):
        u0 = recover_initial_state(neumann32, data, report=rep, cutoff=10.0)
    assert "cutoff" in caplog.text
    dropped = rep.notes["cutoff"]["dropped_modes"]
    assert dropped == list(range(4, 32))
    assert np.all(u0[4:] == 0)
    traj = solve_fvp(neumann32, data, np.linspace(0, 0.5, 11), cutoff=10.0, report=rep)
    assert traj.meta["regularized"] is True
    assert traj.meta["cutoff"]["threshold"] == 10.0


def test_solve_fvp_reproduces_forward_solution(neumann16):
    rng = np.random.default_rng(14)
    u0, f = random_compatible_problem(neumann16, 0.5, rng)
    grid = np.linspace(0.0, 0.5, 33)
    u = solve_forward_duhamel(neumann16, u0, f, grid, quad_tol=None)
    traj = solve_fvp(neumann16, FvpData(f, u.final, 0.5), grid)
    assert traj.meta["compatibility"].verdict == IN_DOMAIN
    assert (traj - u).x_norm / u.x_norm < 1e-8
    assert traj.meta["terminal_mismatch"] < 1e-9 * np.linalg.norm(u.final)
    assert traj.meta["neumann_regular"] is True
    with pytest.raises(ValidationError):
        solve_fvp(neumann16, FvpData(f, u.final, 0.5), np.linspace(0.0, 0.4, 9))


def test_backward_uniqueness(neumann16):
    # two trajectories with equal final data and source coincide
    rng = np.random.default_rng(15)
    u0, f = random_compatible_problem(neumann16, 0.5, rng)
    u_T = flow_map(neumann16, u0, f, 0.5)
    a = recover_initial_state(neumann16, FvpData(f, u_T, 0.5))
    b = recover_initial_state(neumann16, FvpData(f, u_T.copy(), 0.5))
    np.testing.assert_array_equal(a, b)
    np.testing.assert_allclose(a, u0, atol=1e-9)


def test_zero_data_gives_zero_solution(neumann16):
    data = FvpData(SourceTerm.zero(16, 0.5), np.zeros(16), 0.5)
    traj = solve_fvp(neumann16, data, np.linspace(0.0, 0.5, 9))
    assert traj.x_norm == 0.0
    rep = homeomorphism_roundtrip(neumann16, np.linspace(0.0, 0.5, 9), 1, zero=True)
    assert rep.worst_data_error == 0.0 and rep.worst_trajectory_error == 0.0


def test_parabolic_operator_scalar():
    ev = scalar_ev(2.0)
    f = SourceTerm.from_function(lambda t: np.cos(3 * t)[..., None], 1.0, vectorized=True)
    u = solve_forward_duhamel(ev, [1.0], f, np.linspace(0.0, 1.0, 17))
    Pu = apply_parabolic(ev, u)
    t = np.linspace(0.0, 1.0, 101)
    np.testing.assert_allclose(Pu.f(t)[:, 0], np.cos(3 * t), atol=1e-9)
    assert Pu.u_T[0] == pytest.approx(u.final[0])


def test_y_norm_identity():
    # ‖(f, u_T)‖_Y² = |u_T|² + ∫‖f‖_*² + |u(0)|²
    ev = scalar_ev(1.0)
    data = FvpData(SourceTerm.constant([1.0], 1.0), [U_T_SCALAR], 1.0)
    # spectral default weights 1 + λ = 2, so ∫‖f‖_*² = 1/2
    assert y_norm(ev, data) == pytest.approx(math.sqrt(U_T_SCALAR ** 2 + 0.5 + 4.0), rel=1e-13)
    rep = check_compatibility(ev, data)
    assert rep.y_norm == pytest.approx(y_norm(ev, data), rel=1e-14)
    zero = data_difference(data, data)
    assert y_norm(ev, zero) == 0.0


def test_roundtrip_small(neumann16):
    rep = homeomorphism_roundtrip(neumann16, np.linspace(0.0, 0.5, 65), 5,
                                  np.random.default_rng(16))
    assert rep.worst_data_error < 1e-6
    assert rep.worst_trajectory_error < 1e-6
    with pytest.raises(ValidationError):
        homeomorphism_roundtrip(neumann16, np.linspace(0.0, 0.5, 65), 0)


def test_stability_constant_bounds_solution(neumann16):
    op = neumann16.op
    c = stability_constant(op, 0.5)
    # (1 + 1) · (2 + 4e) · 1 for C2 = 1, C3 = C4 = k = 1, T = 1/2
    assert c == pytest.approx(math.sqrt(2 * (2 + 4 * math.e)))
    rng = np.random.default_rng(17)
    grid = np.linspace(0.0, 0.5, 65)
    for _ in range(5):
        u0, f = random_compatible_problem(neumann16, 0.5, rng)
        u = solve_forward_duhamel(neumann16, u0, f, grid, quad_tol=None, residual=False)
        assert u.x_norm <= c * y_norm(neumann16, FvpData(f, u.final, 0.5))


def test_yf_consistency_with_flow_map(neumann16):
    rng = np.random.default_rng(18)
    u0, f = random_compatible_problem(neumann16, 0.5, rng)
    yf = compute_yf(neumann16, f, 0.5)
    np.testing.assert_allclose(flow_map(neumann16, np.zeros(16), f, 0.5), yf)
