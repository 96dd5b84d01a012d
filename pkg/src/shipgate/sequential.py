"""Group sequential boundaries with Lan-DeMets style spending, one metric at a time.

The test statistic at look k is Z_k = S(t_k) / sqrt(t_k) for a standard
Brownian motion S observed at information fractions t_1 < ... < t_K.
Boundaries are solved look by look: the sub-density of S over the
continuation region is carried forward by numerical convolution on a grid,
and each boundary is bisected until the H0 probability of first crossing at
that look equals the incremental spend.

Each metric runs on its own fractions with budget alpha / S; nothing here
assumes metrics share a clock.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Mapping, NamedTuple, Sequence

import numpy as np
from scipy import special

from shipgate.errors import DomainError, NumericWarning, ValidationError
from shipgate.kernel import std_normal_quantile

Z_RANGE = 8.0
EPS_FRACTION = 1e-6
BISECT_HI = 40.0


class SpendingFunction(str, enum.Enum):
    OBF_TYPE = "obf_type"
    POCOCK_TYPE = "pocock_type"
    LINEAR = "linear"


def alpha_spend(fn: SpendingFunction | str, budget: float, t: float) -> float:
    """Cumulative alpha spent by information fraction ``t``."""
    fn = SpendingFunction(fn)
    if not 0.0 < budget < 1.0:
        raise ValidationError(f"budget must be in (0, 1), got {budget}")
    if not t > 0.0:
        raise DomainError(f"information fraction must be positive, got {t}")
    if t > 1.0:
        raise DomainError(f"information fraction must be <= 1, got {t}")
    if fn is SpendingFunction.OBF_TYPE:
        z = std_normal_quantile(1.0 - budget / 2.0)
        return float(2.0 * special.ndtr(-z / math.sqrt(t)))
    if fn is SpendingFunction.POCOCK_TYPE:
        return budget * math.log1p((math.e - 1.0) * t)
    return budget * t


class InfoFraction(NamedTuple):
    value: float
    flag: str | None  # None, "immature" or "overrun"


def info_fraction(n_observed: float, n_planned: float) -> InfoFraction:
    """Observed share of planned information, clamped to [1e-6, 1]."""
    if not n_planned > 0:
        raise ValidationError(f"n_planned must be positive, got {n_planned}")
    if n_observed < 0:
        raise ValidationError(f"n_observed must be non-negative, got {n_observed}")
    t = n_observed / n_planned
    if t <= EPS_FRACTION:
        return InfoFraction(EPS_FRACTION, "immature")
    if t > 1.0:
        return InfoFraction(1.0, "overrun")
    return InfoFraction(t, None)


@dataclass(frozen=True)
class LookSchedule:
    metric_name: str
    fractions: tuple[float, ...]
    budget: float = 0.05
    sides: int = 2

    def __post_init__(self):
        fr = tuple(float(x) for x in self.fractions)
        object.__setattr__(self, "fractions", fr)
        if not fr:
            raise ValidationError("schedule needs at least one look")
        if fr[0] <= 0 or fr[-1] > 1:
            raise ValidationError(f"fractions must lie in (0, 1], got {fr}")
        if any(b <= a for a, b in zip(fr, fr[1:])):
            raise ValidationError(f"fractions must be strictly increasing, got {fr}")
        if not 0.0 < self.budget < 1.0:
            raise ValidationError(f"budget must be in (0, 1), got {self.budget}")
        if self.sides not in (1, 2):
            raise ValidationError("sides must be 1 or 2")

    @property
    def looks(self) -> int:
        return len(self.fractions)


@dataclass(frozen=True)
class GstBoundaries:
    schedule: LookSchedule
    spending: SpendingFunction
    z_bounds: np.ndarray
    cumulative_spend: np.ndarray
    method: str = "recursion"
    step: float = float("nan")

    @property
    def incremental_spend(self) -> np.ndarray:
        return np.diff(self.cumulative_spend, prepend=0.0)

    def rows(self) -> list[dict]:
        inc = self.incremental_spend
        return [
            {
                "metric": self.schedule.metric_name,
                "look": k + 1,
                "fraction": t,
                "z_bound": float(b),
                "nominal_p": float(_nominal_p(b, self.schedule.sides)),
                "incremental_spend": float(a),
                "cumulative_spend": float(c),
            }
            for k, (t, b, a, c) in enumerate(zip(self.schedule.fractions, self.z_bounds, inc, self.cumulative_spend))
        ]


def _nominal_p(bound: float, sides: int) -> float:
    if math.isinf(bound):
        return 0.0
    return sides * special.ndtr(-bound)


def _simpson_weights(n: int, h: float) -> np.ndarray:
    w = np.ones(n)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * h / 3.0


def _grid(lo: float, hi: float, h: float) -> tuple[np.ndarray, np.ndarray]:
    n = max(3, int(math.ceil((hi - lo) / h)) + 1)
    if n % 2 == 0:
        n += 1
    x = np.linspace(lo, hi, n)
    return x, _simpson_weights(n, x[1] - x[0])


class _Recursion:
    """Carries the continuation sub-density of S(t) from look to look."""

    def __init__(self, sides: int, step: float):
        self.sides = sides
        self.step = step
        self.t_prev = 0.0
        self.x: np.ndarray | None = None  # grid on the S scale
        self.wf: np.ndarray | None = None  # Simpson weight * density

    def cross_prob(self, c: float, t: float) -> float:
        """P(first crossing at this look) for a candidate Z-bound ``c``."""
        if math.isinf(c):
            return 0.0
        b = c * math.sqrt(t)
        if self.x is None:
            return float(self.sides * special.ndtr(-c))
        sd = math.sqrt(t - self.t_prev)
        upper = special.ndtr((self.x - b) / sd)
        if self.sides == 2:
            upper = upper + special.ndtr((-b - self.x) / sd)
        return float(self.wf @ upper)

    def advance(self, c: float, t: float) -> None:
        rt = math.sqrt(t)
        hi = min(c, Z_RANGE) * rt
        lo = -hi if self.sides == 2 else -Z_RANGE * rt
        x, w = _grid(lo, hi, self.step * rt)
        if self.x is None:
            dens = np.exp(-0.5 * x**2 / t) / math.sqrt(2 * math.pi * t)
        else:
            sd = math.sqrt(t - self.t_prev)
            kern = np.exp(-0.5 * ((x[:, None] - self.x[None, :]) / sd) ** 2) / (sd * math.sqrt(2 * math.pi))
            dens = kern @ self.wf
        self.x, self.wf, self.t_prev = x, w * dens, t


def _bisect(fun, target: float, lo: float = 0.0, hi: float = BISECT_HI, tol: float = 1e-12) -> float:
    # fun is decreasing in its argument
    if fun(hi) > target:
        return hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if fun(mid) > target:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


def _solve(fractions: Sequence[float], incremental: Sequence[float], sides: int, step: float) -> np.ndarray:
    rec = _Recursion(sides, step)
    bounds = []
    for k, (t, a) in enumerate(zip(fractions, incremental)):
        if a <= 0.0:
            c = math.inf
        elif k == 0:
            c = -std_normal_quantile(a / sides)
        else:
            c = _bisect(lambda cc: rec.cross_prob(cc, t), a)
        bounds.append(c)
        rec.advance(c, t)
    return np.array(bounds)


def crossing_probabilities(z_bounds: Sequence[float], fractions: Sequence[float], sides: int = 2, step: float = 0.01) -> np.ndarray:
    """H0 probability of first crossing at each look for given Z-bounds."""
    rec = _Recursion(sides, step)
    out = []
    for c, t in zip(z_bounds, fractions):
        out.append(rec.cross_prob(float(c), float(t)))
        rec.advance(float(c), float(t))
    return np.array(out)


def _spend_vector(schedule: LookSchedule, fn: SpendingFunction) -> np.ndarray:
    cum = np.array([alpha_spend(fn, schedule.budget, t) for t in schedule.fractions])
    return np.maximum.accumulate(cum)


def gst_boundaries(
    schedule: LookSchedule,
    fn: SpendingFunction | str = SpendingFunction.OBF_TYPE,
    step: float | None = None,
    tol: float = 1e-5,
) -> GstBoundaries:
    """Boundaries whose H0 first-crossing probabilities equal the incremental spend.

    Without ``step`` the grid step (in Z units) starts at 0.04 and is halved
    until no finite boundary moves by more than ``tol``.
    """
    fn = SpendingFunction(fn)
    cum = _spend_vector(schedule, fn)
    inc = np.diff(cum, prepend=0.0)
    if step is not None:
        bounds = _solve(schedule.fractions, inc, schedule.sides, step)
    else:
        h = 0.04
        bounds = _solve(schedule.fractions, inc, schedule.sides, h)
        for _ in range(6):
            h /= 2
            finer = _solve(schedule.fractions, inc, schedule.sides, h)
            finite = np.isfinite(bounds)
            moved = np.max(np.abs(finer[finite] - bounds[finite]), initial=0.0)
            bounds = finer
            if moved < tol:
                break
        else:
            warnings.warn(f"GST grid did not converge to {tol:g}", NumericWarning, stacklevel=2)
        step = h
    return GstBoundaries(schedule, fn, bounds, cum, "recursion", step)


def bonferroni_over_time(schedule: LookSchedule, fn: SpendingFunction | str = SpendingFunction.OBF_TYPE) -> GstBoundaries:
    """Each look tested at its incremental spend alone, ignoring cross-look correlation."""
    fn = SpendingFunction(fn)
    cum = _spend_vector(schedule, fn)
    inc = np.diff(cum, prepend=0.0)
    bounds = np.array(
        [math.inf if a <= 0 else -float(std_normal_quantile(a / schedule.sides)) for a in inc]
    )
    return GstBoundaries(schedule, fn, bounds, cum, "bonferroni-over-time")


def multi_metric_sequential(
    schedules: Sequence[LookSchedule],
    alpha: float,
    S: int,
    fn: SpendingFunction | str | Mapping[str, SpendingFunction | str] = SpendingFunction.OBF_TYPE,
    method: str = "recursion",
) -> dict[str, GstBoundaries]:
    """Per-metric boundaries at budget alpha / S, each on the metric's own fractions."""
    if S < 1 or len(schedules) > S:
        raise ValidationError(f"{len(schedules)} schedules but S={S}")
    names = [s.metric_name for s in schedules]
    if len(set(names)) != len(names):
        raise ValidationError("metric names in schedules must be unique")
    out = {}
    for sched in schedules:
        f = fn[sched.metric_name] if isinstance(fn, Mapping) else fn
        s = replace(sched, budget=alpha / S)
        out[sched.metric_name] = gst_boundaries(s, f) if method == "recursion" else bonferroni_over_time(s, f)
    return out


class LookOutcome(str, enum.Enum):
    REJECT = "reject"
    CONTINUE = "continue"
    STOPPED = "already-stopped"


@dataclass
class SequentialMonitor:
    """Append-only look-by-look evaluation against per-metric boundaries.

    A metric rejects when |z| >= bound (two-sided) or z >= bound (one-sided);
    once rejected it stays stopped.
    """

    boundaries: Mapping[str, GstBoundaries]
    next_look: int = 0
    stopped_at: dict[str, int] = field(default_factory=dict)
    history: list[dict[str, LookOutcome]] = field(default_factory=list)

    def evaluate_look(self, look: int, zstats: Mapping[str, float]) -> dict[str, LookOutcome]:
        if look != self.next_look:
            raise ValidationError(f"expected look {self.next_look}, got {look}")
        unknown = set(zstats) - set(self.boundaries)
        if unknown:
            raise ValidationError(f"no boundaries for metrics {sorted(unknown)}")
        result = {}
        for name, gb in self.boundaries.items():
            if name in self.stopped_at:
                result[name] = LookOutcome.STOPPED
                continue
            if look >= gb.schedule.looks:
                raise ValidationError(f"look {look} is beyond the {gb.schedule.looks}-look schedule of {name!r}")
            if name not in zstats:
                result[name] = LookOutcome.CONTINUE
                continue
            z = float(zstats[name])
            stat = abs(z) if gb.schedule.sides == 2 else z
            if stat >= gb.z_bounds[look]:
                result[name] = LookOutcome.REJECT
                self.stopped_at[name] = look
            else:
                result[name] = LookOutcome.CONTINUE
        self.history.append(result)
        self.next_look += 1
        return result


def simulate_h0_crossings(gb: GstBoundaries, paths: int, seed: int) -> np.ndarray:
    """Monte Carlo cumulative first-crossing probabilities under H0."""
    t = np.asarray(gb.schedule.fractions)
    gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    inc = gen.standard_normal((paths, t.size)) * np.sqrt(np.diff(t, prepend=0.0))
    z = np.cumsum(inc, axis=1) / np.sqrt(t)
    stat = np.abs(z) if gb.schedule.sides == 2 else z
    crossed = np.logical_or.accumulate(stat >= gb.z_bounds, axis=1)
    return crossed.mean(axis=0)
