"""Pre-experiment planning: FWER inflation and sample sizes under alpha/S."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from shipgate.errors import DomainError, ValidationError
from shipgate.kernel import std_normal_quantile

STATEMENT = (
    "This experiment is powered at {power} to detect a {mde} in any of {S} success metrics, "
    "controlling FWER at {alpha}."
)


def fwer_inflation(m: int, alpha: float) -> float:
    """P(at least one false positive) among m independent tests at level alpha."""
    if m < 1:
        raise ValidationError(f"m must be >= 1, got {m}")
    if not 0.0 < alpha < 1.0:
        raise ValidationError(f"alpha must be in (0, 1), got {alpha}")
    return -math.expm1(m * math.log1p(-alpha))


def _check_prob(name: str, v: float) -> None:
    if not 0.0 < v < 1.0:
        raise ValidationError(f"{name} must be in (0, 1), got {v}")


def _ceil(x: float) -> int:
    return int(math.ceil(x))


@dataclass(frozen=True)
class PlanInputs:
    """Planning inputs.

    ``delta`` is the minimum detectable effect and ``sigma`` the per-observation
    SD, both in metric units. ``margins`` holds one non-inferiority margin per
    guardrail (so ``len(margins) == G``). ``relative_mde`` is only used to word
    the power statement (e.g. 1.0 -> "1% relative change").
    """

    alpha: float
    beta: float
    delta: float
    sigma: float
    S: int
    G: int = 0
    margins: tuple[float, ...] = ()
    beta_weights: tuple[float, ...] | None = None
    guardrail_effect: float = 0.0
    relative_mde: float | None = None

    def __post_init__(self):
        _check_prob("alpha", self.alpha)
        _check_prob("beta", self.beta)
        if not self.sigma > 0:
            raise ValidationError("sigma must be positive")
        if not self.delta > 0:
            raise DomainError("delta must be positive")
        if self.S < 1:
            raise ValidationError("S must be >= 1")
        if self.G < 0:
            raise ValidationError("G must be >= 0")
        object.__setattr__(self, "margins", tuple(float(x) for x in self.margins))
        if len(self.margins) != self.G:
            raise ValidationError(f"got {len(self.margins)} margins for G={self.G} guardrails")
        if self.beta_weights is not None:
            w = tuple(float(x) for x in self.beta_weights)
            if len(w) != self.G or any(x <= 0 for x in w):
                raise ValidationError("beta_weights needs one positive weight per guardrail")
            object.__setattr__(self, "beta_weights", w)


def sample_size_success(alpha: float, beta: float, delta: float, sigma: float, S: int = 1) -> int:
    """Per-variant n for a two-sided two-sample z-test at alpha* = alpha / S.

    n = ceil(2 sigma^2 (z_{alpha*/2} + z_beta)^2 / delta^2)
    """
    _check_prob("alpha", alpha)
    _check_prob("beta", beta)
    if delta == 0:
        raise DomainError("delta must be non-zero")
    if S < 1:
        raise ValidationError("S must be >= 1")
    a_star = alpha / S
    z = std_normal_quantile(1 - a_star / 2) + std_normal_quantile(1 - beta)
    return _ceil(2 * sigma**2 * z**2 / delta**2)


def sample_size_guardrail(
    margin: float,
    sigma: float,
    alpha: float,
    beta_total: float,
    G: int = 1,
    weight: float | None = None,
    expected_effect: float = 0.0,
) -> int:
    """Per-variant n for a one-sided non-inferiority test with a Bonferroni split of beta.

    Each of the G guardrails gets beta_g = beta_total / G (or ``weight *
    beta_total`` when weights are given). ``expected_effect`` is the assumed true
    effect in the good direction (0 = treatment is harmless).
    """
    if not margin > 0:
        raise DomainError("margin must be positive; a pure non-deterioration test cannot be sized")
    _check_prob("alpha", alpha)
    _check_prob("beta_total", beta_total)
    if G < 1:
        raise ValidationError("G must be >= 1")
    beta_g = beta_total * weight if weight is not None else beta_total / G
    _check_prob("beta_g", beta_g)
    distance = margin + expected_effect
    if distance <= 0:
        raise DomainError("expected effect is at or beyond the margin; non-inferiority cannot be shown")
    z = std_normal_quantile(1 - alpha) + std_normal_quantile(1 - beta_g)
    return _ceil(2 * sigma**2 * z**2 / distance**2)


@dataclass(frozen=True)
class PlanRow:
    metric: str
    role: str
    alpha_used: float
    beta_used: float
    effect: float
    n_per_variant: int


@dataclass(frozen=True)
class Plan:
    rows: tuple[PlanRow, ...]
    n_per_variant: int
    statement: str
    naive_alpha: float = field(default=float("nan"))
    decision_alpha: float = field(default=float("nan"))


def _pct(x: float) -> str:
    s = f"{100 * x:.2f}".rstrip("0").rstrip(".")
    return f"{s}%"


def honest_statement(power: float, S: int, alpha: float, delta: float, relative_mde: float | None = None) -> str:
    mde = f"{relative_mde:g}% relative change" if relative_mde is not None else f"change of {delta:g}"
    return STATEMENT.format(power=_pct(power), mde=mde, S=S, alpha=_pct(alpha))


def plan_experiment(p: PlanInputs) -> Plan:
    """Size every success metric and guardrail; the experiment needs the max."""
    rows = []
    n_s = sample_size_success(p.alpha, p.beta, p.delta, p.sigma, p.S)
    for k in range(p.S):
        rows.append(PlanRow(f"success_{k + 1}", "success", p.alpha / p.S, p.beta, p.delta, n_s))
    for g, margin in enumerate(p.margins):
        w = p.beta_weights[g] if p.beta_weights is not None else None
        beta_g = p.beta * w if w is not None else p.beta / p.G
        n_g = sample_size_guardrail(margin, p.sigma, p.alpha, p.beta, p.G, w, p.guardrail_effect)
        rows.append(PlanRow(f"guardrail_{g + 1}", "guardrail", p.alpha, beta_g, margin, n_g))
    overall = max(r.n_per_variant for r in rows)
    return Plan(
        rows=tuple(rows),
        n_per_variant=overall,
        statement=honest_statement(1 - p.beta, p.S, p.alpha, p.delta, p.relative_mde),
        naive_alpha=p.alpha / (p.S + p.G),
        decision_alpha=p.alpha / p.S,
    )


def alpha_ratio(S: int, total: int, alpha: float = 0.05) -> tuple[float, float, float]:
    """(alpha/S, alpha/total, ratio): per-metric levels under the decision-aware and naive families."""
    if S < 1 or total < S:
        raise ValidationError("need 1 <= S <= total")
    a, b = alpha / S, alpha / total
    return a, b, a / b


def plan_table(plan: Plan) -> list[dict]:
    return [
        {
            "metric": r.metric,
            "role": r.role,
            "alpha": r.alpha_used,
            "beta": r.beta_used,
            "effect": r.effect,
            "n_per_variant": r.n_per_variant,
        }
        for r in plan.rows
    ]

