import math

import numpy as np
import pytest

from app.services.exponents import e_r_map, excess_rate_exponent
from app.services.schemas import RateFunctionSpec, RateKind
from app.services.tradeoff import (
    e_star_of_delta,
    er_plateau,
    g_rate,
    g_saturation_divergence,
    j_rate,
    min_divergence_given_marginal,
    omega_rate,
    tradeoff_e_given_er,
    tradeoff_er_given_e,
)
from tests.conftest import FIG1_H_U, FIG1_H_U_GIVEN_V, FIG1_I

P_U = np.array([0.85, 0.15])
FAR = np.array([0.1, 0.9])


def test_j_rate_at_zero_budget_is_source_conditional_entropy(fig1_source, fast_settings):
    assert j_rate(P_U, 0.0, 0.1, fig1_source, fast_settings) == pytest.approx(FIG1_H_U_GIVEN_V + 0.1, abs=1e-6)


def test_j_rate_with_unbounded_budget_is_delta(fig1_source, fast_settings):
    assert j_rate(P_U, 1e6, 0.1, fig1_source, fast_settings) == pytest.approx(0.1, abs=1e-9)


def test_j_rate_outside_the_ball_is_infinite(fig1_source, fast_settings):
    assert min_divergence_given_marginal(FAR, fig1_source) > 1.0
    assert j_rate(FAR, 0.01, 0.1, fig1_source, fast_settings) == math.inf


def test_j_rate_non_increasing_in_budget(fig1_source, fast_settings):
    q_u = np.array([0.7, 0.3])
    values = [j_rate(q_u, e, 0.1, fig1_source, fast_settings) for e in (0.05, 0.1, 0.3)]
    assert values[0] >= values[1] - 1e-6 >= values[2] - 2e-6


def test_min_divergence_given_marginal(fig1_source):
    expected = 0.5 * math.log(0.5 / 0.85) + 0.5 * math.log(0.5 / 0.15)
    assert min_divergence_given_marginal([0.5, 0.5], fig1_source) == pytest.approx(expected, abs=1e-12)


def test_g_rate_at_source_marginal(fig1_source, fast_settings):
    assert g_rate(P_U, 0.0, fig1_source, fast_settings) == pytest.approx(FIG1_H_U_GIVEN_V, abs=1e-6)


def test_g_rate_ignores_unreachable_marginals(fig1_source, fast_settings):
    assert g_rate(FAR, 0.01, fig1_source, fast_settings) == -math.inf
    assert omega_rate(FAR, 0.01, fig1_source, fast_settings) == -math.inf


def test_omega_rate_plateaus_at_marginal_entropy(fig1_source, fast_settings):
    assert omega_rate(P_U, 5.0, fig1_source, fast_settings) == pytest.approx(FIG1_H_U, abs=1e-6)


def test_omega_rate_nondecreasing(fig1_source, fast_settings):
    values = [omega_rate(P_U, e, fig1_source, fast_settings) for e in (0.0, 0.05, 0.2)]
    assert values[0] <= values[1] + 1e-6 <= values[2] + 2e-6


def test_g_saturation_divergence_is_finite(fig1_source, fast_settings):
    d = g_saturation_divergence(P_U, fig1_source, fast_settings)
    assert 0.0 <= d < math.inf


def test_error_exponent_infinite_when_delta_exceeds_mutual_information(fig1_source, fast_settings):
    pt = tradeoff_e_given_er(fig1_source, 0.0, FIG1_I + 0.05, cross_check=False, settings=fast_settings)
    assert pt.y == math.inf
    assert pt.y_trc is None


@pytest.mark.slow
def test_error_exponent_non_increasing_in_excess_rate_target(fig1_source, fast_settings):
    ys = [tradeoff_e_given_er(fig1_source, e_r, 0.1, cross_check=False, settings=fast_settings).y
          for e_r in (0.05, 0.15, 0.4)]
    assert ys[0] >= ys[1] - 5e-3
    assert ys[1] >= ys[2] - 5e-3


@pytest.mark.slow
def test_j_rate_achieves_requested_excess_rate_exponent(fig1_source, fast_settings):
    """Substituting J back gives an excess-rate exponent of at least E_r."""
    for e_r, delta in ((0.05, 0.1), (0.09, 0.05)):
        spec = RateFunctionSpec(kind=RateKind.J_RATE, e_r=e_r, delta=delta)
        achieved = excess_rate_exponent(fig1_source, spec, delta, fast_settings).value
        assert achieved >= e_r - 5e-3


def test_excess_rate_exponent_vanishes_without_threshold(fig1_source, fast_settings):
    for e_e in (0.0, 0.2):
        pt = tradeoff_er_given_e(fig1_source, e_e, 0.0, settings=fast_settings)
        assert pt.y == pytest.approx(0.0, abs=1e-9)
        assert pt.plateau is None


def test_plateau_zero_below_mutual_information(fig1_source, fast_settings):
    assert er_plateau(fig1_source, 0.0, fast_settings) == pytest.approx(0.0, abs=1e-12)
    assert er_plateau(fig1_source, FIG1_I - 0.01, fast_settings) == pytest.approx(0.0, abs=1e-12)
    above = er_plateau(fig1_source, 0.4, fast_settings)
    assert 0.0 < above < math.inf


def test_plateau_nondecreasing_in_delta(fig1_source, fast_settings):
    values = [er_plateau(fig1_source, d, fast_settings) for d in (0.3, 0.4, 0.5)]
    assert values[0] <= values[1] + 1e-6 <= values[2] + 2e-6


@pytest.mark.slow
def test_e_star_nondecreasing_in_delta(fig1_source, fast_settings):
    small = e_star_of_delta(fig1_source, 0.05, fast_settings)
    large = e_star_of_delta(fig1_source, 0.3, fast_settings)
    assert 0.0 <= small <= large + 1e-3


@pytest.mark.slow
def test_omega_rate_achieves_requested_error_exponent(fig1_source, fast_settings):
    """Substituting Omega back gives an error exponent of at least E_e."""
    for e_e in (0.05, 0.1, 0.2, 0.3, 0.5, 0.8):
        spec = RateFunctionSpec(kind=RateKind.OMEGA_RATE, e_e=e_e)
        achieved = e_r_map(fig1_source, spec, fast_settings).value
        assert achieved >= e_e - 5e-3


@pytest.mark.slow
def test_random_binning_and_typical_code_forms_agree(fig1_source, fine_settings):
    for e_r, delta in ((0.05, 0.1), (0.09, 0.05), (0.02, 0.2)):
        pt = tradeoff_e_given_er(fig1_source, e_r, delta, cross_check=True, settings=fine_settings)
        assert pt.y_trc is not None
        if math.isinf(pt.y):
            assert pt.y_trc == pt.y
        else:
            assert pt.y_trc == pytest.approx(pt.y, abs=5e-3)
