"""Metric roles, role-specific tests, correction families and the ship decision.

A comparison ships when

* there are no success metrics, or at least one is significant after
  adjustment (adjusted p < alpha) with its estimate in the preferred direction;
* there are no guardrails, or every non-inferiority test passes at raw alpha;
* no quality metric (or the optional sample-ratio check) shows significant
  deterioration.

Only success metrics can create a false ship, so in ``success_only`` mode the
correction family is the S success metrics. ``naive`` mode puts every metric's
two-sided movement p-value in one family, the way a platform that "corrects
for all metrics" would; the guardrail and quality gates are unchanged.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from shipgate.adjust import AdjustMethod, adjust
from shipgate.errors import ValidationError
from shipgate.intervals import Interval, bonferroni_cis, fcr_cis
from shipgate.kernel import chisq_sf, std_normal_cdf, std_normal_sf


class MetricRole(str, enum.Enum):
    SUCCESS = "success"
    GUARDRAIL = "guardrail"
    QUALITY = "quality"


class Direction(str, enum.Enum):
    HIGHER = "higher-is-better"
    LOWER = "lower-is-better"

    @classmethod
    def parse(cls, value) -> "Direction":
        if isinstance(value, cls):
            return value
        aliases = {"higher": cls.HIGHER, "increase": cls.HIGHER, "lower": cls.LOWER, "decrease": cls.LOWER}
        if value in aliases:
            return aliases[value]
        return cls(value)


class FamilyMode(str, enum.Enum):
    SUCCESS_ONLY = "success_only"
    NAIVE = "naive"


@dataclass(frozen=True)
class MetricResult:
    """Measured treatment-minus-control effect for one metric.

    ``nim_margin`` is in the metric's own units and is required for guardrails
    (0 means a pure non-deterioration test).
    """

    name: str
    role: MetricRole
    direction: Direction
    estimate: float
    se: float
    nim_margin: float | None = None
    n_treat: int | None = None
    n_ctrl: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "role", MetricRole(self.role))
        object.__setattr__(self, "direction", Direction.parse(self.direction))
        if not (self.se > 0 and math.isfinite(self.se)):
            raise ValidationError(f"metric {self.name!r}: se must be positive, got {self.se}")
        if not math.isfinite(self.estimate):
            raise ValidationError(f"metric {self.name!r}: estimate must be finite")
        if self.nim_margin is not None and not self.nim_margin >= 0:
            raise ValidationError(f"metric {self.name!r}: nim_margin must be non-negative")

    @property
    def z(self) -> float:
        return self.estimate / self.se

    def improves(self) -> bool:
        """Estimate points in the preferred direction."""
        return self.estimate > 0 if self.direction is Direction.HIGHER else self.estimate < 0


def success_pvalue(m: MetricResult) -> float:
    """Two-sided z-test p-value; direction is checked separately at decision time."""
    return float(2.0 * std_normal_sf(abs(m.z)))


def nim_pvalue(m: MetricResult) -> float:
    """One-sided non-inferiority p-value against H0: effect is at least ``margin`` worse than zero."""
    if m.nim_margin is None:
        raise ValidationError(f"guardrail {m.name!r} has no nim_margin")
    if m.direction is Direction.HIGHER:
        stat = (m.estimate + m.nim_margin) / m.se
    else:
        stat = (m.nim_margin - m.estimate) / m.se
    return float(std_normal_sf(stat))


def deterioration_pvalue(m: MetricResult) -> float:
    """One-sided p-value for movement in the harmful direction (small = deteriorated)."""
    harm = m.z if m.direction is Direction.HIGHER else -m.z
    return float(std_normal_cdf(harm))


def srm_pvalue(observed_counts: Sequence[int], expected_ratios: Sequence[float]) -> float:
    """Chi-square goodness-of-fit p-value for a sample-ratio mismatch."""
    obs = np.asarray(observed_counts, dtype=float)
    ratios = np.asarray(expected_ratios, dtype=float)
    if obs.shape != ratios.shape or obs.size < 2:
        raise ValidationError("need matching counts and ratios for at least two arms")
    if np.any(obs < 0) or np.any(ratios <= 0):
        raise ValidationError("counts must be non-negative and ratios positive")
    total = obs.sum()
    if total == 0:
        raise ValidationError("total count is zero")
    expected = total * ratios / ratios.sum()
    stat = float(np.sum((obs - expected) ** 2 / expected))
    return chisq_sf(stat, obs.size - 1)


@dataclass(frozen=True)
class SrmCheck:
    counts: tuple[int, ...]
    ratios: tuple[float, ...]


@dataclass(frozen=True)
class DecisionConfig:
    """``alpha`` doubles as the FDR level q when ``method`` is bh or by."""

    alpha: float = 0.05
    method: AdjustMethod = AdjustMethod.BONFERRONI
    family_mode: FamilyMode = FamilyMode.SUCCESS_ONLY
    srm_alpha: float = 0.001

    def __post_init__(self):
        object.__setattr__(self, "method", AdjustMethod.parse(self.method))
        object.__setattr__(self, "family_mode", FamilyMode(self.family_mode))
        if not 0.0 < self.alpha < 0.5:
            raise ValidationError(f"alpha must be in (0, 0.5), got {self.alpha}")
        if not 0.0 < self.srm_alpha < 1.0:
            raise ValidationError(f"srm_alpha must be in (0, 1), got {self.srm_alpha}")


@dataclass(frozen=True)
class FamilyMember:
    index: int
    pvalue: float
    source: str  # "two-sided"


def build_family(metrics: Sequence[MetricResult], mode: FamilyMode | str) -> list[FamilyMember]:
    """Indices (into ``metrics``) and p-values that are adjusted together."""
    mode = FamilyMode(mode)
    members = []
    for i, m in enumerate(metrics):
        if mode is FamilyMode.SUCCESS_ONLY and m.role is not MetricRole.SUCCESS:
            continue
        members.append(FamilyMember(i, success_pvalue(m), "two-sided"))
    return members


@dataclass(frozen=True)
class MetricOutcome:
    name: str
    role: MetricRole
    test: str
    pvalue: float
    adjusted_pvalue: float | None
    in_family: bool
    outcome: str
    interval: Interval
    fcr_interval: Interval | None = None


@dataclass(frozen=True)
class Decision:
    ship: bool
    driving_success: frozenset[str]
    failed_guardrails: frozenset[str]
    blocking_quality: frozenset[str]
    metrics: tuple[MetricOutcome, ...] = field(default=())
    family_size: int = 0
    srm_pvalue: float | None = None

    @property
    def reasons(self) -> list[str]:
        out = []
        if self.driving_success:
            out.append("significant success metric(s): " + ", ".join(sorted(self.driving_success)))
        if self.failed_guardrails:
            out.append("failed guardrail(s): " + ", ".join(sorted(self.failed_guardrails)))
        if self.blocking_quality:
            out.append("deteriorated quality metric(s): " + ", ".join(sorted(self.blocking_quality)))
        if not out:
            out.append("no success metric reached significance" if not self.ship else "all gates passed")
        return out


def _validate(metrics: Sequence[MetricResult]) -> None:
    if not metrics:
        raise ValidationError("no metrics to decide on")
    names = [m.name for m in metrics]
    if len(set(names)) != len(names):
        raise ValidationError("metric names must be unique")
    for m in metrics:
        if m.role is MetricRole.GUARDRAIL and m.nim_margin is None:
            raise ValidationError(f"guardrail {m.name!r} has no nim_margin")


def ship_decision(
    metrics: Sequence[MetricResult],
    cfg: DecisionConfig = DecisionConfig(),
    srm: SrmCheck | None = None,
    with_intervals: bool = True,
) -> Decision:
    """Apply the success / guardrail / quality decision rule to one comparison."""
    _validate(metrics)
    alpha = cfg.alpha
    family = build_family(metrics, cfg.family_mode)
    adjusted: dict[int, float] = {}
    if family:
        adj = adjust([f.pvalue for f in family], cfg.method).adjusted
        adjusted = {f.index: float(a) for f, a in zip(family, adj)}
    fam_m = len(family)

    success_idx = [i for i, m in enumerate(metrics) if m.role is MetricRole.SUCCESS]
    driving, failed, blocking = set(), set(), set()
    outcomes = []
    ci_m = 1 if cfg.method is AdjustMethod.NONE else max(fam_m, 1)
    fcr = {}
    if with_intervals and cfg.method in (AdjustMethod.BH, AdjustMethod.BY) and family:
        selected = [k for k, f in enumerate(family) if adjusted[f.index] < alpha]
        est = [metrics[f.index].estimate for f in family]
        ses = [metrics[f.index].se for f in family]
        fcr = {family[k].index: ci for k, ci in fcr_cis(est, ses, selected, alpha, fam_m).items()}

    for i, m in enumerate(metrics):
        in_family = i in adjusted
        if m.role is MetricRole.SUCCESS:
            p = success_pvalue(m)
            adj_p = adjusted.get(i, p)
            if adj_p < alpha and m.improves():
                driving.add(m.name)
                label = "significant"
            elif adj_p < alpha:
                label = "significant-wrong-direction"
            else:
                label = "not-significant"
            test, ci_alpha, ci_fam = "two-sided", alpha, ci_m
        elif m.role is MetricRole.GUARDRAIL:
            p = nim_pvalue(m)
            adj_p = adjusted.get(i)
            label = "pass" if p < alpha else "fail"
            if label == "fail":
                failed.add(m.name)
            test, ci_alpha, ci_fam = "non-inferiority", 2 * alpha, 1
        else:
            p = deterioration_pvalue(m)
            adj_p = adjusted.get(i)
            label = "block" if p < alpha else "ok"
            if label == "block":
                blocking.add(m.name)
            test, ci_alpha, ci_fam = "deterioration", 2 * alpha, 1
        if with_intervals:
            ci = bonferroni_cis([m.estimate], [m.se], ci_alpha, ci_fam)[0]
        else:
            ci = Interval(math.nan, math.nan, math.nan)
        outcomes.append(MetricOutcome(m.name, m.role, test, p, adj_p if in_family else None, in_family, label, ci, fcr.get(i)))

    srm_p = None
    if srm is not None:
        srm_p = srm_pvalue(srm.counts, srm.ratios)
        if srm_p < cfg.srm_alpha:
            blocking.add("sample-ratio-mismatch")

    success_ok = not success_idx or bool(driving)
    ship = success_ok and not failed and not blocking
    return Decision(
        ship=ship,
        driving_success=frozenset(driving),
        failed_guardrails=frozenset(failed),
        blocking_quality=frozenset(blocking),
        metrics=tuple(outcomes),
        family_size=fam_m,
        srm_pvalue=srm_p,
    )
