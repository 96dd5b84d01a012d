import math

import mpmath
import pytest
from conftest import quantile_oracle

from shipgate.errors import DomainError, ValidationError
from shipgate.planning import (
    PlanInputs,
    alpha_ratio,
    fwer_inflation,
    honest_statement,
    plan_experiment,
    sample_size_guardrail,
    sample_size_success,
)


def n_oracle(z_a, z_b, sigma, delta):
    """Exact (pre-ceiling) per-variant n with 50-digit arithmetic."""
    return mpmath.mpf(2) * sigma**2 * (mpmath.mpf(z_a) + mpmath.mpf(z_b)) ** 2 / mpmath.mpf(delta) ** 2


def test_fwer_inflation_examples():
    assert fwer_inflation(1, 0.05) == pytest.approx(0.05)
    assert fwer_inflation(8, 0.05) == pytest.approx(0.3366, abs=5e-5)
    values = [fwer_inflation(m, 0.05) for m in range(1, 400)]
    assert all(b > a for a, b in zip(values, values[1:]))
    assert values[-1] > 0.999


def test_fwer_inflation_at_least_alpha():
    for m in range(2, 30):
        assert fwer_inflation(m, 0.01) > 0.01


def test_success_n_s1():
    exact = n_oracle(quantile_oracle(0.975), quantile_oracle(0.8), 1, 0.1)
    assert sample_size_success(0.05, 0.2, 0.1, 1.0, 1) == math.ceil(exact) == 1570


def test_success_n_s2_follows_oracle():
    z = quantile_oracle(1 - 0.0125)
    assert z == pytest.approx(2.241403, abs=1e-6)
    exact = n_oracle(z, quantile_oracle(0.8), 1, 0.1)
    # 1901.008...: the ceiling is 1902
    assert 1901 < exact < 1901.1
    assert sample_size_success(0.05, 0.2, 0.1, 1.0, 2) == math.ceil(exact)


def test_success_n_monotone():
    base = sample_size_success(0.05, 0.2, 0.1, 1.0, 3)
    assert sample_size_success(0.05, 0.2, 0.1, 1.0, 6) > base
    assert sample_size_success(0.05, 0.1, 0.1, 1.0, 3) > base
    assert sample_size_success(0.05, 0.2, 0.2, 1.0, 3) <= base
    quad = sample_size_success(0.05, 0.2, 0.1, 2.0, 3)
    assert abs(quad - 4 * base) <= 4


def test_success_n_validation():
    with pytest.raises(DomainError):
        sample_size_success(0.05, 0.2, 0.0, 1.0)
    with pytest.raises(ValidationError):
        sample_size_success(1.2, 0.2, 0.1, 1.0)
    with pytest.raises(ValidationError):
        sample_size_success(0.05, 0.2, 0.1, 1.0, 0)


def test_guardrail_n_follows_oracle():
    exact = n_oracle(quantile_oracle(0.95), quantile_oracle(0.8), 1, 0.1)
    # 1236.5...: the ceiling is 1237
    assert 1236 < exact < 1237
    assert sample_size_guardrail(0.1, 1.0, 0.05, 0.2, 1) == math.ceil(exact)


def test_guardrail_beta_split():
    one = sample_size_guardrail(0.1, 1.0, 0.05, 0.2, 1)
    two = sample_size_guardrail(0.1, 1.0, 0.05, 0.2, 2)
    exact = n_oracle(quantile_oracle(0.95), quantile_oracle(0.9), 1, 0.1)
    assert two == math.ceil(exact) and two > one


def test_guardrail_margin_scaling():
    small = sample_size_guardrail(0.1, 1.0, 0.05, 0.2)
    big = sample_size_guardrail(0.2, 1.0, 0.05, 0.2)
    assert abs(big - small / 4) <= 1


def test_guardrail_expected_effect():
    assert sample_size_guardrail(0.1, 1.0, 0.05, 0.2, expected_effect=0.05) < sample_size_guardrail(0.1, 1.0, 0.05, 0.2)
    with pytest.raises(DomainError):
        sample_size_guardrail(0.1, 1.0, 0.05, 0.2, expected_effect=-0.1)
    with pytest.raises(DomainError):
        sample_size_guardrail(0.0, 1.0, 0.05, 0.2)


def test_plan_s1_g0():
    plan = plan_experiment(PlanInputs(0.05, 0.2, 0.1, 1.0, 1))
    assert plan.n_per_variant == 1570
    assert plan.statement == (
        "This experiment is powered at 80% to detect a change of 0.1 in any of 1 success metrics, "
        "controlling FWER at 5%."
    )


def test_plan_guardrails_never_decrease_n():
    base = plan_experiment(PlanInputs(0.05, 0.2, 0.1, 1.0, 2)).n_per_variant
    more = plan_experiment(PlanInputs(0.05, 0.2, 0.1, 1.0, 2, 1, (0.05,))).n_per_variant
    assert more >= base
    assert more == sample_size_guardrail(0.05, 1.0, 0.05, 0.2, 1)


def test_plan_weights():
    p = PlanInputs(0.05, 0.2, 0.1, 1.0, 1, 2, (0.1, 0.1), beta_weights=(0.25, 0.75))
    rows = plan_experiment(p).rows
    assert rows[1].beta_used == pytest.approx(0.05)
    assert rows[2].beta_used == pytest.approx(0.15)
    assert rows[1].n_per_variant > rows[2].n_per_variant


def test_plan_alphas():
    plan = plan_experiment(PlanInputs(0.05, 0.2, 0.1, 1.0, 2, 10, tuple([0.1] * 10)))
    assert plan.decision_alpha == 0.025
    assert plan.naive_alpha == pytest.approx(0.05 / 12)


def test_alpha_ratio():
    assert alpha_ratio(2, 12) == pytest.approx((0.025, 0.004167, 6.0), abs=1e-6)
    with pytest.raises(ValidationError):
        alpha_ratio(3, 2)


def test_statement_relative():
    s = honest_statement(0.8, 3, 0.05, 0.1, relative_mde=1.0)
    assert "1% relative change" in s and "any of 3 success metrics" in s


def test_plan_inputs_validation():
    with pytest.raises(ValidationError):
        PlanInputs(0.05, 0.2, 0.1, 1.0, 1, 2, (0.1,))
    with pytest.raises(ValidationError):
        PlanInputs(0.05, 0.2, 0.1, -1.0, 1)
    with pytest.raises(DomainError):
        PlanInputs(0.05, 0.2, 0.0, 1.0, 1)
