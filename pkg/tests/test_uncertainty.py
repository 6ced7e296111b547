import math
from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from errors import EmptyInputError, UncertaintyDomainError
from uncertainty import (
    UNCERTAINTY_FLOOR,
    ConfidenceWeight,
    Estimator,
    UncertaintyScore,
    confidence_from_uncertainty,
    fixed_confidence,
    mean_token_entropy,
    oracle_confidence,
    token_sar,
    uncertainty_from_confidence,
)


def decimal_entropy(p):
    getcontext().prec = 50
    total = Decimal(0)
    for x in p:
        if x > 0:
            d = Decimal(float(x))
            total -= d * d.ln()
    return float(total)


def test_third_party_weight_constant():
    c = confidence_from_uncertainty(UncertaintyScore(0.15331237018108368, Estimator.MEAN_ENTROPY))
    assert abs(c.value - 6.522630879810011) < 1e-12


@pytest.mark.parametrize("v", range(2, 65))
def test_uniform_entropy_is_log_v(v):
    u = mean_token_entropy([[1.0 / v] * v])
    assert abs(u.value - math.log(v)) < 1e-12


def test_entropy_matches_decimal_oracle():
    rng = np.random.default_rng(3)
    steps = [rng.dirichlet(np.ones(10)) for _ in range(5)]
    expected = sum(decimal_entropy(p) for p in steps) / len(steps)
    assert abs(mean_token_entropy(steps).value - expected) < 1e-12


def distributions(v):
    return st.lists(st.floats(0.0, 1.0), min_size=v, max_size=v).filter(lambda xs: sum(xs) > 1e-3).map(
        lambda xs: [x / math.fsum(xs) for x in xs]
    )


@settings(max_examples=200)
@given(st.integers(2, 16).flatmap(lambda v: st.tuples(st.just(v), st.lists(distributions(v), min_size=1, max_size=8))))
def test_entropy_is_order_free_and_bounded_by_log_v(case):
    v, steps = case
    forward = mean_token_entropy(steps).value
    assert forward == pytest.approx(mean_token_entropy(list(reversed(steps))).value, rel=1e-12)
    assert forward <= math.log(v) + 1e-9


def test_entropy_sum_aggregate():
    steps = [[0.5, 0.5], [0.25] * 4]
    assert mean_token_entropy(steps, "sum").value == pytest.approx(math.log(2) + math.log(4), abs=1e-12)


def test_one_hot_is_floored():
    u = mean_token_entropy([[1.0, 0.0, 0.0]])
    assert u.value == UNCERTAINTY_FLOOR
    assert confidence_from_uncertainty(u).value == pytest.approx(1e6)


def test_entropy_rejects_non_distributions():
    with pytest.raises(UncertaintyDomainError):
        mean_token_entropy([[0.5, 0.6]])
    with pytest.raises(UncertaintyDomainError):
        mean_token_entropy([[1.5, -0.5]])
    with pytest.raises(EmptyInputError):
        mean_token_entropy([])


@settings(max_examples=200)
@given(st.lists(st.floats(-20.0, -1e-3), min_size=1, max_size=50))
def test_token_sar_uniform_is_mean_nll(lps):
    expected = math.fsum(-x for x in lps) / len(lps)
    assert abs(token_sar(lps).value - expected) < 1e-12
    assert abs(token_sar(lps, [1.0] * len(lps)).value - expected) < 1e-12


def test_token_sar_relevance_weighting():
    assert token_sar([-1.0, -3.0], [1.0, 0.0]).value == pytest.approx(1.0)
    assert token_sar([-1.0, -3.0], [1.0, 3.0]).value == pytest.approx(2.5)


def test_token_sar_errors():
    with pytest.raises(EmptyInputError):
        token_sar([])
    with pytest.raises(UncertaintyDomainError):
        token_sar([0.5])
    with pytest.raises(ValueError):
        token_sar([-1.0, -2.0], [1.0])
    with pytest.raises(UncertaintyDomainError):
        token_sar([-1.0], [0.0])


def test_oracle_confidence():
    assert oracle_confidence("91", "91").value == 10.0
    assert oracle_confidence("90", "91").value == 1.0
    assert oracle_confidence("90", "91", 4.0, 2.0).value == 2.0
    with pytest.raises(UncertaintyDomainError):
        oracle_confidence("1", "1", 1.0, 2.0)


def test_confidence_round_trip():
    c = ConfidenceWeight(4.0)
    u = uncertainty_from_confidence(c)
    assert u.value == 0.25
    assert u.estimator is Estimator.FIXED
    assert confidence_from_uncertainty(u) == c


@pytest.mark.parametrize("bad", [0.0, -1.0, float("inf"), float("nan")])
def test_fixed_confidence_must_be_positive(bad):
    with pytest.raises(UncertaintyDomainError):
        fixed_confidence(bad)


def test_scores_reject_nonpositive():
    with pytest.raises(UncertaintyDomainError):
        UncertaintyScore(0.0, Estimator.ORACLE)
    with pytest.raises(UncertaintyDomainError):
        ConfidenceWeight(-2.0)
