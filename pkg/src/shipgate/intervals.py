"""Two-sided normal-theory confidence intervals: Bonferroni-simultaneous and FCR."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from shipgate.errors import NumericWarning, ValidationError
from shipgate.kernel import std_normal_quantile, std_normal_sf


@dataclass(frozen=True)
class Interval:
    lower: float
    upper: float
    level: float

    def covers(self, value: float) -> bool:
        return self.lower <= value <= self.upper

    def excludes_zero(self) -> bool:
        return self.lower > 0.0 or self.upper < 0.0


def critical_z(alpha: float, m: int = 1) -> float:
    """Two-sided critical value z_{alpha / (2m)}."""
    if not 0.0 < alpha < 1.0:
        raise ValidationError(f"alpha must be in (0, 1), got {alpha}")
    if m < 1:
        raise ValidationError(f"family size must be positive, got {m}")
    return std_normal_quantile(1.0 - alpha / (2.0 * m))


def _check_lengths(estimates, ses):
    est = np.atleast_1d(np.asarray(estimates, dtype=float))
    se = np.atleast_1d(np.asarray(ses, dtype=float))
    if est.shape != se.shape:
        raise ValidationError(f"{est.size} estimates but {se.size} standard errors")
    if np.any(se < 0) or np.any(~np.isfinite(se)):
        raise ValidationError("standard errors must be finite and non-negative")
    return est, se


def bonferroni_cis(estimates, ses, alpha: float, m: int) -> list[Interval]:
    """Intervals at level 1 - alpha/m each; jointly they cover with probability >= 1 - alpha.

    ``m`` is the family size and must be at least the number of estimates.
    """
    est, se = _check_lengths(estimates, ses)
    if m < est.size:
        raise ValidationError(f"family size m={m} is smaller than the {est.size} reported metrics")
    z = critical_z(alpha, m)
    level = 1.0 - alpha / m
    return [Interval(float(e - z * s), float(e + z * s), level) for e, s in zip(est, se)]


def fcr_cis(estimates, ses, selected, alpha: float, m: int) -> dict[int, Interval]:
    """False-coverage-rate intervals for the selected parameters only.

    Each selected interval has level 1 - R * alpha / m where R is the number
    selected. Unselected indices get nothing: the guarantee is conditional on
    selection. An empty selection returns an empty dict.
    """
    est, se = _check_lengths(estimates, ses)
    sel = sorted(int(i) for i in selected)
    if not sel:
        return {}
    if m < est.size:
        raise ValidationError(f"family size m={m} is smaller than the {est.size} estimates")
    if sel[0] < 0 or sel[-1] >= m or sel[-1] >= est.size:
        raise ValidationError("selected indices out of range")
    r = len(sel)
    level_alpha = r * alpha / m
    z = std_normal_quantile(1.0 - level_alpha / 2.0)
    return {i: Interval(float(est[i] - z * se[i]), float(est[i] + z * se[i]), 1.0 - level_alpha) for i in sel}


@dataclass(frozen=True)
class CiRow:
    index: int
    estimate: float
    se: float
    pvalue: float
    reject: bool
    interval: Interval
    consistent: bool


def two_sided_p(estimate, se):
    """Two-sided z-test p-value, vectorised."""
    z = np.abs(np.asarray(estimate, dtype=float) / np.asarray(se, dtype=float))
    return 2.0 * std_normal_sf(z)


def ci_report(estimates, ses, pvalues: Sequence[float] | None, alpha: float, m: int) -> list[CiRow]:
    """Pair each Bonferroni test decision (p < alpha/m) with its 1 - alpha/m interval.

    When ``pvalues`` are supplied they must match the two-sided z p-value of
    estimate/se to 1e-6, otherwise a :class:`NumericWarning` is raised and the
    supplied values are used for the test.
    """
    est, se = _check_lengths(estimates, ses)
    implied = np.atleast_1d(two_sided_p(est, se))
    if pvalues is None:
        p = implied
    else:
        p = np.atleast_1d(np.asarray(pvalues, dtype=float))
        if p.shape != est.shape:
            raise ValidationError("p-values and estimates differ in length")
        bad = np.flatnonzero(np.abs(p - implied) > 1e-6)
        if bad.size:
            warnings.warn(
                f"p-values at indices {bad.tolist()} do not match estimate/se", NumericWarning, stacklevel=2
            )
    cis = bonferroni_cis(est, se, alpha, m)
    rows = []
    for i, (ci, pv) in enumerate(zip(cis, p)):
        reject = bool(pv < alpha / m)
        rows.append(CiRow(i, float(est[i]), float(se[i]), float(pv), reject, ci, reject == ci.excludes_zero()))
    return rows
