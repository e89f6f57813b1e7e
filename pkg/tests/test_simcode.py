import math

import numpy as np
import pytest

from app.core.errors import CapExceededError, UsageError
from app.core.probdist import JointDist, TypeDescriptor
from app.services.exponents import e_r_map, excess_rate_exponent
from app.services.schemas import DecoderSpec, MetricSpec, RateFunctionSpec, RateKind
from app.services.simcode import (
    BinMode,
    PairTable,
    assign_bins,
    conditional_enumerator,
    ensemble_stats,
    enumerator_stats,
    exact_excess_rate_prob,
    exact_pe,
    plan_code,
    sample_code,
    sequence_layout,
    z_concentration_check,
    z_concentration_sweep,
)

MAP = DecoderSpec.parse("map")
ENTROPY_RATE = RateFunctionSpec(kind=RateKind.ENTROPY)
DIAGONAL = JointDist(np.array([[0.5, 0.0], [0.0, 0.5]]))


def const(r):
    return RateFunctionSpec.constant(r)


def test_sequence_layout_groups_type_classes():
    layout = sequence_layout(3, 2)
    assert layout.size == 8
    assert [t.counts for t in layout.types] == [(0, 3), (1, 2), (2, 1), (3, 0)]
    assert layout.type_sizes == (1, 3, 3, 1)
    for t, size in enumerate(layout.type_sizes):
        ranks = layout.rank[layout.type_index == t]
        assert sorted(ranks.tolist()) == list(range(size))
    assert layout.index_of([1, 0, 1]) == 5


def test_sequence_layout_caps():
    with pytest.raises(UsageError):
        sequence_layout(0, 2)
    with pytest.raises(CapExceededError):
        sequence_layout(30, 2)


def test_bin_budget_and_modes(fig1_source):
    plan = plan_code(8, fig1_source, const(0.3))
    t = plan.layout.types.index(TypeDescriptor(8, (4, 4)))
    # ceil(e^{2.4}) = 12 bins for a class of 70
    assert plan.bin_counts[t] == 12
    assert plan.modes[t] == BinMode.RANDOM_BINNING
    # H(1/8) = 0.377 > 0.3: binned although 12 bins would cover its 8 sequences
    small = plan.layout.types.index(TypeDescriptor(8, (7, 1)))
    assert plan.modes[small] == BinMode.RANDOM_BINNING
    assert plan.bin_counts[small] == 12
    constant = plan.layout.types.index(TypeDescriptor(8, (8, 0)))
    assert plan.modes[constant] == BinMode.ONE_TO_ONE


def test_mode_follows_entropy_not_bin_budget(fig1_source):
    plan = plan_code(4, fig1_source, const(0.3))
    t = plan.layout.types.index(TypeDescriptor(4, (3, 1)))
    # H(1/4) = 0.562 > 0.3 and ceil(e^{1.2}) = 4 = |T|
    assert plan.layout.type_sizes[t] == 4
    assert plan.bin_counts[t] == 4
    assert plan.modes[t] == BinMode.RANDOM_BINNING
    assert plan.modes[plan.layout.types.index(TypeDescriptor(4, (4, 0)))] == BinMode.ONE_TO_ONE


def test_entropy_rate_plan_is_one_to_one(fig1_source):
    plan = plan_code(8, fig1_source, ENTROPY_RATE)
    t = plan.layout.types.index(TypeDescriptor(8, (4, 4)))
    assert plan.rates[t] == pytest.approx(math.log(2))
    assert all(m == BinMode.ONE_TO_ONE for m in plan.modes)


def test_bins_partition_each_type_class(fig1_source):
    code = sample_code(8, fig1_source, const(0.3), seed=1)
    layout = code.layout
    for t, (mode, count) in enumerate(zip(code.plan.modes, code.plan.bin_counts)):
        bins = code.assignment[layout.type_index == t]
        if mode == BinMode.ONE_TO_ONE:
            assert len(set(bins.tolist())) == bins.size
        else:
            assert bins.min() >= 0 and bins.max() < count


def test_codes_are_reproducible(fig1_source):
    plan = plan_code(8, fig1_source, const(0.3))
    first, again = assign_bins(plan, seed=7, code_index=2), assign_bins(plan, seed=7, code_index=2)
    np.testing.assert_array_equal(first.assignment, again.assignment)
    other = assign_bins(plan, seed=7, code_index=3)
    assert not np.array_equal(first.assignment, other.assignment)


def test_entropy_rate_codes_never_err(fig1_source):
    est = ensemble_stats(6, fig1_source, ENTROPY_RATE, MAP, codes=3, seed=0)
    assert est.mean_pe == 0.0
    assert est.all_zero
    assert est.zero_pe_codes == 3
    assert est.exponent_rc == math.inf
    assert est.exponent_trc == math.inf


def _brute_force_map_pe(code, P):
    """Loop-by-loop MAP error probability of a code."""
    p = np.asarray(P.mass)
    layout = code.layout
    v_seqs = layout.sequences
    total = 0.0
    for ui in range(layout.size):
        if code.plan.modes[layout.type_index[ui]] == BinMode.ONE_TO_ONE:
            continue
        t, b = code.bin_of(ui)
        mates = [j for j in range(layout.size) if layout.type_index[j] == t and code.assignment[j] == b]
        for v in v_seqs:
            prob = {j: math.prod(p[x, y] for x, y in zip(layout.sequences[j], v)) for j in mates}
            if prob[ui] == 0.0:
                continue
            top = max(math.log(q) if q > 0 else -math.inf for q in prob.values())
            winners = [j for j, q in prob.items() if q > 0 and math.log(q) >= top - 1e-9]
            err = (len(winners) - 1) / len(winners) if ui in winners else 1.0
            total += prob[ui] * err
    return total


def test_exact_pe_matches_brute_force(full_support_source):
    code = sample_code(3, full_support_source, const(0.2), seed=3)
    pe = exact_pe(code, full_support_source, MAP)
    assert 0.0 < pe <= 1.0
    assert pe == pytest.approx(_brute_force_map_pe(code, full_support_source), abs=1e-12)


def test_pair_table_is_reused(fig1_source):
    table = PairTable(6, fig1_source, MAP)
    code = sample_code(6, fig1_source, const(0.2), seed=0)
    assert exact_pe(code, fig1_source, MAP, table) == exact_pe(code, fig1_source, MAP)
    with pytest.raises(UsageError):
        exact_pe(sample_code(5, fig1_source, const(0.2), seed=0), fig1_source, MAP, table)


@pytest.mark.parametrize("decoder", ["map", "mce", "gld", "sce"])
def test_every_decoder_gives_a_probability(fig1_source, decoder):
    dec = DecoderSpec.parse(decoder, MetricSpec(beta=2.0))
    code = sample_code(6, fig1_source, const(0.2), seed=5)
    assert 0.0 <= exact_pe(code, fig1_source, dec) <= 1.0


def test_log_average_exponent_dominates_average_exponent(full_support_source):
    """Jensen: -E[log P_e] >= -log E[P_e]."""
    est = ensemble_stats(6, full_support_source, const(0.3), MAP, codes=8, seed=11, workers=2)
    assert len(est.per_code_pe) == 8
    assert est.exponent_trc >= est.exponent_rc - 1e-12
    assert est.se_pe >= 0.0


def test_ensemble_is_independent_of_worker_count(full_support_source):
    one = ensemble_stats(5, full_support_source, const(0.3), MAP, codes=6, seed=2, workers=1)
    many = ensemble_stats(5, full_support_source, const(0.3), MAP, codes=6, seed=2, workers=4)
    assert one.per_code_pe == many.per_code_pe


def test_exact_excess_rate_probability():
    # Here H(U|V) = 0 for every type, so the event is R(P_hat_u) >= delta
    assert exact_excess_rate_prob(4, DIAGONAL, const(0.3), 0.2) == pytest.approx(1.0, abs=1e-12)
    assert exact_excess_rate_prob(4, DIAGONAL, const(0.3), 0.4) == 0.0
    # H(1/2) = 0.693 and H(1/4) = 0.562
    assert exact_excess_rate_prob(4, DIAGONAL, ENTROPY_RATE, 0.6) == pytest.approx(6 / 16, abs=1e-12)
    assert exact_excess_rate_prob(4, DIAGONAL, ENTROPY_RATE, 0.5) == pytest.approx(14 / 16, abs=1e-12)
    with pytest.raises(UsageError):
        exact_excess_rate_prob(4, DIAGONAL, ENTROPY_RATE, 0.0)


def test_enumerator_counts_in_bin_pairs(fig1_source):
    code = sample_code(8, fig1_source, const(0.3), seed=4)
    layout = code.layout
    t = layout.types.index(TypeDescriptor(8, (4, 4)))
    bins = code.assignment[layout.type_index == t]
    # u = u' pairs
    assert enumerator_stats(code, [[4, 0], [0, 4]]) == 70
    counted = sum(enumerator_stats(code, [[k, 4 - k], [4 - k, k]]) for k in range(5))
    assert counted == int(np.sum(np.bincount(bins) ** 2))
    # |T(Q_UU')| = 8! / (2!)^4 = 2520 ordered pairs, spread over 12 bins
    half = enumerator_stats(code, [[2, 2], [2, 2]])
    assert 0 <= half <= 2520
    assert enumerator_stats(code, [[0.25, 0.25], [0.25, 0.25]]) == half


def test_enumerator_across_type_classes_is_zero(fig1_source):
    code = sample_code(8, fig1_source, const(0.3), seed=4)
    assert enumerator_stats(code, [[3, 1], [2, 2]]) == 0
    with pytest.raises(UsageError):
        enumerator_stats(code, [[1, 1], [1, 1]])


def test_conditional_enumerator_covers_bin_mates(fig1_source):
    code = sample_code(8, fig1_source, const(0.3), seed=4)
    u = code.layout.index_of([0, 0, 0, 0, 1, 1, 1, 1])
    t, b = code.bin_of(u)
    mates = int(np.count_nonzero((code.layout.type_index == t) & (code.assignment == b))) - 1
    v = [0, 1, 0, 1, 0, 1, 0, 1]
    result = conditional_enumerator(code, u, v, 2)
    assert sum(result.values()) == mates
    assert all(sum(key) == 8 for key in result)
    assert conditional_enumerator(code, code.layout.index_of([0] * 8), v, 2) == {}
    with pytest.raises(UsageError):
        conditional_enumerator(code, u, [0, 1], 2)


def test_z_concentration_report(full_support_source, fast_settings):
    code = sample_code(6, full_support_source, const(0.3), seed=0)
    report = z_concentration_check(code, full_support_source, MetricSpec(), 0.1, draws=10, settings=fast_settings)
    assert report.trials == 10
    assert report.violations <= report.trials - report.skipped
    assert 0.0 <= report.violation_fraction <= 1.0
    assert report.tail_bound == pytest.approx(math.exp(-math.exp(0.6) + 1.6), rel=1e-12)
    with pytest.raises(UsageError):
        z_concentration_check(code, full_support_source, MetricSpec(), 0.0)


def test_z_concentration_sweep_pools_codes(full_support_source, fast_settings):
    report = z_concentration_sweep(6, full_support_source, const(0.3), MetricSpec(), 0.1, codes=2, draws=5,
                                   seed=0, settings=fast_settings)
    assert report.trials == 10
    assert 0.0 <= report.violation_fraction <= 1.0


def test_z_check_skips_one_to_one_types():
    # U is always 0: every draw lands in the one-to-one class (8, 0) while heavier classes are binned
    source = JointDist(np.array([[0.6, 0.4], [0.0, 0.0]]))
    code = sample_code(8, source, const(0.3), seed=0)
    assert BinMode.RANDOM_BINNING in code.plan.modes
    assert code.plan.modes[code.layout.types.index(TypeDescriptor(8, (8, 0)))] == BinMode.ONE_TO_ONE
    report = z_concentration_check(code, source, MetricSpec(), 0.1, draws=20)
    assert report.trials == 20
    assert report.skipped == 20
    assert report.violations == 0
    assert report.violation_fraction == 0.0


def test_map_ensemble_is_no_worse_than_mce(full_support_source):
    mce = DecoderSpec.parse("mce")
    map_est = ensemble_stats(6, full_support_source, const(0.3), MAP, codes=10, seed=3)
    mce_est = ensemble_stats(6, full_support_source, const(0.3), mce, codes=10, seed=3)
    assert map_est.mean_pe <= mce_est.mean_pe + 1e-12


def test_enumerator_mean_matches_binomial_mean(fig1_source):
    plan = plan_code(8, fig1_source, const(0.3))
    counts = np.array([enumerator_stats(assign_bins(plan, seed=9, code_index=i), [[2, 2], [2, 2]])
                       for i in range(200)], dtype=float)
    # 2520 ordered pairs, each sharing one of 12 bins with probability 1/12
    expected = 2520 / 12
    sigma = counts.std(ddof=1) / math.sqrt(counts.size)
    assert abs(counts.mean() - expected) <= 4 * sigma


def test_excess_rate_probability_tracks_its_exponent(fast_settings):
    """U = V with P(0) = 0.9 and the entropy rate: the excess event is H(P_hat_u) >= H(0.3)."""
    source = JointDist(np.array([[0.9, 0.0], [0.0, 0.1]]))
    delta = float(-0.3 * math.log(0.3) - 0.7 * math.log(0.7))
    formula = excess_rate_exponent(source, ENTROPY_RATE, delta, fast_settings).value
    # D(0.3 || 0.1)
    assert formula == pytest.approx(0.3 * math.log(3) + 0.7 * math.log(0.7 / 0.9), abs=2e-3)
    empirical = {n: -math.log(exact_excess_rate_prob(n, source, ENTROPY_RATE, delta)) / n for n in (8, 10, 12)}
    assert all(0.0 < e < math.inf for e in empirical.values())
    assert abs(empirical[12] - formula) <= 0.2


@pytest.mark.slow
def test_simulation_matches_formula_exponent(fig1_source):
    rate = const(0.4)
    map_est = ensemble_stats(10, fig1_source, rate, MAP, codes=500, seed=1)
    mce_est = ensemble_stats(10, fig1_source, rate, DecoderSpec.parse("mce"), codes=500, seed=1)
    assert abs(map_est.exponent_rc - e_r_map(fig1_source, rate).value) <= 0.15
    assert abs(map_est.exponent_rc - mce_est.exponent_rc) <= 0.1
    assert map_est.exponent_trc >= map_est.exponent_rc - 1e-12
