import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fvpkit import (DIVERGING, IN_DOMAIN, INCONCLUSIVE, CoerciveOperator, SemigroupEvaluator,
                    ValidationError, build_model, domain_chain_probe, height_profile,
                    logconv_criterion)
from fvpkit.errors import SemigroupOverflowError
from fvpkit.neumann import Interval
from fvpkit.semigroup import (classify_levels, graph_norm_levels, log_height_curvature_fd,
                              safe_norm, scaled_exp)

# frozen oracle values (tests/oracles.py)
EXP_MINUS_A = np.array([[0.36787944117144233, -0.23254415793482963],
                        [0.0, 0.1353352832366127]])
EXP_MINUS_HALF_A = np.array([[0.6065306597126334, -0.2386512185411911],
                             [0.0, 0.36787944117144233]])
E9 = 8103.083927575384
E_INV = 0.36787944117144233

NON_NORMAL = np.array([[1.0, 1.0], [0.0, 2.0]])


def spectral(lam):
    return SemigroupEvaluator(CoerciveOperator.spectral(np.asarray(lam, float)))


def test_evolve_spectral_scalar_modes():
    ev = spectral([0.0, 1.0, 4.0])
    np.testing.assert_allclose(ev.evolve(1.0, [1.0, 1.0, 1.0]),
                               [1.0, E_INV, math.exp(-4.0)], rtol=1e-15)
    np.testing.assert_array_equal(ev.evolve(0.0, [3.0, 2.0, 1.0]), [3.0, 2.0, 1.0])


@pytest.mark.parametrize("method", ["eigendecomposition", "scaling-and-squaring"])
def test_non_normal_propagator_matches_oracle(method):
    ev = SemigroupEvaluator(CoerciveOperator.from_matrix(NON_NORMAL), expm_method=method)
    np.testing.assert_allclose(ev.propagator(1.0), EXP_MINUS_A, rtol=1e-13, atol=1e-15)
    np.testing.assert_allclose(ev.propagator(0.5), EXP_MINUS_HALF_A, rtol=1e-13, atol=1e-15)
    x = np.array([1.0, -2.0])
    np.testing.assert_allclose(ev.evolve(1.0, x), EXP_MINUS_A @ x, rtol=1e-13)


def test_auto_method_for_well_conditioned_matrix():
    ev = SemigroupEvaluator(CoerciveOperator.from_matrix(NON_NORMAL))
    assert ev.expm_method == "eigendecomposition"
    # a Jordan block has a singular eigenvector matrix
    ev = SemigroupEvaluator(CoerciveOperator.from_matrix(np.array([[1.0, 1.0], [0.0, 1.0]])))
    assert ev.expm_method == "scaling-and-squaring"
    np.testing.assert_allclose(ev.propagator(1.0), [[E_INV, -E_INV], [0.0, E_INV]], rtol=1e-13)


def test_negative_time_rejected():
    ev = spectral([0.0, 1.0])
    for t in (-1e-3, math.nan, math.inf):
        with pytest.raises(ValidationError):
            ev.evolve(t, [1.0, 1.0])


def test_inverse_recovers_exactly():
    ev = spectral([0.0, 1.0, 4.0])
    res = ev.evolve_inverse(1.0, [1.0, E_INV, math.exp(-4.0)])
    np.testing.assert_allclose(res.value, [1.0, 1.0, 1.0], rtol=1e-14)
    assert res.kappa == pytest.approx(math.exp(4.0))
    assert res.dropped == ()


def test_inverse_with_cutoff_reports_dropped_modes():
    ev = spectral([0.0, 1.0, 4.0])
    res = ev.evolve_inverse(1.0, [1.0, 1.0, 1.0], cutoff=2.0)
    np.testing.assert_allclose(res.value, [1.0, math.e, 0.0], rtol=1e-15)
    assert res.dropped == (2,)
    assert res.kappa == pytest.approx(math.e)


def test_inverse_matrix_backend_uses_positive_exponential():
    ev = SemigroupEvaluator(CoerciveOperator.from_matrix(NON_NORMAL))
    x = np.array([0.3, -1.2])
    res = ev.evolve_inverse(1.0, ev.evolve(1.0, x))
    np.testing.assert_allclose(res.value, x, rtol=1e-12)
    assert res.kappa > 1.0
    with pytest.raises(ValidationError):
        ev.evolve_inverse(1.0, x, cutoff=1.0)


def test_inverse_overflow_raises_with_mode():
    ev = spectral([0.0, 1.0, 800.0])
    with pytest.raises(SemigroupOverflowError) as exc:
        ev.evolve_inverse(1.0, [1.0, 1.0, 1.0])
    assert exc.value.mode == 2
    # a zero coefficient on the dangerous mode is harmless
    res = ev.evolve_inverse(1.0, [1.0, 1.0, 0.0])
    np.testing.assert_allclose(res.value, [1.0, math.e, 0.0])
    # a tiny coefficient compensates a large factor
    res = ev.evolve_inverse(1.0, [0.0, 0.0, math.exp(-695.0)])
    assert res.value[2] == pytest.approx(math.exp(105.0), rel=1e-12)


def test_unit_mode_growth_matches_e9():
    ev = spectral([0.0, 1.0, 4.0, 9.0])
    res = ev.evolve_inverse(1.0, [0.0, 0.0, 0.0, 1.0])
    assert res.value[3] == pytest.approx(E9, rel=1e-14)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), s=st.floats(0.0, 2.0), t=st.floats(0.0, 2.0))
def test_semigroup_law(seed, s, t):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((4, 4)) + 3 * np.eye(4)
    ev = SemigroupEvaluator(CoerciveOperator.from_matrix(A))
    x = rng.standard_normal(4)
    lhs = ev.evolve(s + t, x)
    rhs = ev.evolve(s, ev.evolve(t, x))
    np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-12 * np.linalg.norm(x))


def test_evolve_batched_over_rows():
    ev = SemigroupEvaluator(CoerciveOperator.from_matrix(NON_NORMAL))
    X = np.array([[1.0, 0.0], [0.0, 1.0], [2.0, 3.0]])
    np.testing.assert_allclose(ev.evolve(1.0, X), X @ EXP_MINUS_A.T, rtol=1e-13)


def test_scaled_exp_and_safe_norm():
    out = scaled_exp(np.array([710.0, 800.0, 1.0]), np.array([math.exp(-700.0), 0.0, -2.0]))
    np.testing.assert_allclose(out, [math.exp(10.0), 0.0, -2 * math.e], rtol=1e-12)
    assert safe_norm([3e300, 4e300]) == pytest.approx(5e300)
    assert safe_norm([0.0, 0.0]) == 0.0


def test_classify_levels_rules():
    assert classify_levels([1.0, 1.0001, 1.0002]) == IN_DOMAIN
    assert classify_levels([1.0, 20.0, 500.0]) == DIVERGING
    assert classify_levels([1.0, math.inf]) == DIVERGING
    # contracting increments of the squares with a small geometric tail
    g = np.sqrt(np.cumsum([1.0, 0.1, 0.01, 0.001]))
    assert classify_levels(g) == IN_DOMAIN
    # steady linear growth is neither
    assert classify_levels([1.0, 2.0, 3.0, 4.0]) == INCONCLUSIVE


def test_graph_norms_for_the_neumann_probe():
    ev = build_model(Interval(), 32).evaluator
    lam = ev.spectrum_real()
    x = np.exp(-lam) / (1.0 + np.arange(32))
    norms, overflow = graph_norm_levels(ev, 1.0, x, [8, 16, 32])
    assert overflow is None
    assert norms[0] < norms[1] < norms[2] < 1.7
    norms, overflow = graph_norm_levels(ev, 2.0, x, [8, 16, 32])
    assert norms[-1] == math.inf and overflow is not None


def test_domain_chain_neumann():
    ev = build_model(Interval(), 32).evaluator
    d1, d2 = domain_chain_probe(ev, 1.0, 2.0, (8, 16, 32))
    assert d1.verdict == IN_DOMAIN
    assert d2.verdict == DIVERGING
    assert d2.overflow_mode is not None


def test_domain_chain_matrix_backend_is_finite_dimensional():
    ev = SemigroupEvaluator(CoerciveOperator.from_matrix(NON_NORMAL))
    d1, d2 = domain_chain_probe(ev, 1.0, 2.0)
    assert d1.verdict == IN_DOMAIN and d2.verdict == IN_DOMAIN


def test_domain_chain_requires_ordered_times():
    ev = spectral(np.arange(8.0) ** 2)
    with pytest.raises(ValidationError):
        domain_chain_probe(ev, 1.0, 1.0, (4, 8))
    with pytest.raises(ValidationError):
        domain_chain_probe(ev, 1.0, 2.0, (4, 16))


def test_height_profile_closed_form():
    ev = spectral([1.0, 2.0])
    grid = np.linspace(0.0, 2.0, 9)
    hp = height_profile(ev, [1.0, 1.0], grid)
    h = np.sqrt(np.exp(-2 * grid) + np.exp(-4 * grid))
    h1 = -(np.exp(-2 * grid) + 2 * np.exp(-4 * grid)) / h
    np.testing.assert_allclose(hp.h, h, rtol=1e-14)
    np.testing.assert_allclose(hp.h1, h1, rtol=1e-13)
    assert hp.logconv_margin >= 0
    with pytest.raises(ValidationError):
        height_profile(ev, [0.0, 0.0], grid)


def test_logconv_criterion_value():
    op = CoerciveOperator.spectral([1.0, 4.0])
    assert logconv_criterion(op, np.array([1.0, 1.0])) == pytest.approx(18.0)
    # batched rows
    vals = logconv_criterion(op, np.array([[1.0, 1.0], [1.0, 0.0]]))
    np.testing.assert_allclose(vals, [18.0, 0.0], atol=1e-12)


def test_log_height_curvature_agrees_with_formula():
    ev = spectral([1.0, 2.0])
    u0 = np.array([1.0, 1.0])
    times = np.array([0.25, 0.5, 1.0])
    fd = log_height_curvature_fd(ev, u0, times, 1e-4)
    hp = height_profile(ev, u0, times)
    exact = (hp.h2 * hp.h - hp.h1 ** 2) / hp.h ** 2
    np.testing.assert_allclose(fd, exact, rtol=1e-5, atol=1e-6)
