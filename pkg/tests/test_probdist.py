import math

import numpy as np
import pytest

from app.core.errors import CapExceededError, ConfigError, UsageError
from app.core.probdist import (
    CondDist,
    JointDist,
    TypeDescriptor,
    all_sequences,
    compose,
    cond_entropy,
    conditional,
    empirical_joint,
    entropy,
    enumerate_types,
    format_distribution,
    kl_divergence,
    mutual_info,
    parse_distributions,
    product,
    type_class_size,
)
from tests.conftest import FIG1_H_U, FIG1_H_U_GIVEN_V, FIG1_I


def test_information_measures_of_fig1_source(fig1_source):
    assert entropy(fig1_source, (0,)) == pytest.approx(FIG1_H_U, abs=1e-6)
    assert cond_entropy(fig1_source, (0,), (1,)) == pytest.approx(FIG1_H_U_GIVEN_V, abs=1e-6)
    assert mutual_info(fig1_source) == pytest.approx(FIG1_I, abs=1e-6)


def test_entropy_uses_zero_log_zero():
    d = JointDist(np.array([1.0, 0.0, 0.0]))
    assert entropy(d) == 0.0


def test_joint_dist_rejects_bad_mass():
    with pytest.raises(UsageError):
        JointDist(np.array([0.5, 0.6]))
    with pytest.raises(UsageError):
        JointDist(np.array([1.5, -0.5]))
    with pytest.raises(CapExceededError):
        JointDist(np.full(17, 1 / 17))


def test_joint_dist_is_immutable(fig1_source):
    with pytest.raises(ValueError):
        fig1_source.mass[0, 0] = 0.5


def test_from_array_normalizes():
    d = JointDist.from_array([[3, 1], [0, 4]], normalize=True)
    assert d.mass.sum() == pytest.approx(1.0)
    assert d.mass[1, 1] == pytest.approx(0.5)


def test_kl_divergence_properties(fig1_source):
    assert kl_divergence(fig1_source, fig1_source) == 0.0
    q = JointDist(np.full((2, 2), 0.25))
    # q charges the zero cell of P
    assert math.isinf(kl_divergence(q, fig1_source))
    assert kl_divergence(fig1_source, q) > 0


def test_conditional_and_compose_round_trip(fig1_source):
    cond = conditional(fig1_source)
    assert isinstance(cond, CondDist)
    np.testing.assert_allclose(cond.rows, [[0.75 / 0.85, 0.1 / 0.85], [0.0, 1.0]])
    rebuilt = compose(fig1_source.mass.sum(axis=1), cond)
    np.testing.assert_allclose(rebuilt.mass, fig1_source.mass, atol=1e-15)


def test_conditional_zero_rows_become_uniform():
    d = JointDist(np.array([[0.5, 0.5], [0.0, 0.0]]))
    np.testing.assert_allclose(conditional(d).rows[1], [0.5, 0.5])


def test_product_has_zero_mutual_information():
    d = product(np.array([0.3, 0.7]), np.array([0.2, 0.5, 0.3]))
    assert mutual_info(d) == pytest.approx(0.0, abs=1e-12)


def test_type_enumeration_covers_all_sequences():
    """Type-class sizes over all types of length 5 add up to |U|^n."""
    types = enumerate_types(5, 3)
    assert len(types) == math.comb(5 + 2, 2)
    assert sum(type_class_size(t) for t in types) == 3 ** 5


def test_type_class_size_is_exact():
    assert type_class_size(TypeDescriptor(8, (4, 4))) == 70
    assert type_class_size(TypeDescriptor(10, (10, 0))) == 1


def test_type_descriptor_validates_counts():
    with pytest.raises(UsageError):
        TypeDescriptor(4, (1, 1))
    np.testing.assert_allclose(TypeDescriptor(4, (1, 3)).as_array(), [0.25, 0.75])


def test_empirical_joint():
    d = empirical_joint([0, 0, 1, 1], [0, 1, 1, 1], 2, 2)
    np.testing.assert_allclose(d.mass, [[0.25, 0.25], [0.0, 0.5]])
    with pytest.raises(UsageError):
        empirical_joint([0, 1], [0], 2, 2)


def test_all_sequences_lexicographic():
    seqs = all_sequences(3, 2)
    assert seqs.shape == (8, 3)
    assert seqs[0].tolist() == [0, 0, 0]
    assert seqs[1].tolist() == [0, 0, 1]
    assert seqs[-1].tolist() == [1, 1, 1]


def test_parse_and_format_distributions(fig1_source):
    text = "# comment\n" + format_distribution("source", fig1_source) + "dist w\n0.5 0.5\nend\n"
    dists = parse_distributions(text)
    assert set(dists) == {"source", "w"}
    assert dists["source"] == fig1_source
    assert dists["w"].dims == (1, 2)


def test_parse_reports_line_and_column():
    text = "dist p\n0.5 0.5\n0.25 x\nend\n"
    with pytest.raises(ConfigError) as exc:
        parse_distributions(text)
    assert exc.value.line == 3
    assert exc.value.column == 6
    assert "line 3, column 6" in str(exc.value)


def test_parse_rejects_unnormalized_block():
    with pytest.raises(ConfigError) as exc:
        parse_distributions("dist p\n0.5 0.6\nend\n")
    assert exc.value.line == 1


def test_parse_rejects_missing_end():
    with pytest.raises(ConfigError):
        parse_distributions("dist p\n0.5 0.5\n")
