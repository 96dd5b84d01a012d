"""Monte Carlo power and FWER studies for multiple-testing corrections.

Each replication draws a control and a treatment arm from an m-variate
normal with unit variances, shifts the first ``k_nonnull`` treatment means by
delta, forms z-statistics with known variance, and applies every method to
the same p-values. Replication ``r`` always uses ``RngStream(seed, r)``, and
the same noise is reused for every delta, so cells are paired across methods
and effect sizes and do not depend on the worker count.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from shipgate.adjust import AdjustMethod, adjust_many
from shipgate.errors import ValidationError
from shipgate.kernel import CorrelationSpec, RngStream, std_normal_cdf, std_normal_quantile, std_normal_sf
from shipgate.sequential import GstBoundaries

DEFAULT_METHODS = (
    AdjustMethod.NONE,
    AdjustMethod.BH,
    AdjustMethod.HOMMEL,
    AdjustMethod.BONFERRONI,
    AdjustMethod.HOLM,
    AdjustMethod.BY,
)


@dataclass(frozen=True)
class SimConfig:
    m: int = 8
    n_total: int = 1000
    reps: int = 10_000
    deltas: tuple[float, ...] = (0.0, 0.05, 0.10, 0.15, 0.20)
    corr: CorrelationSpec = field(default_factory=CorrelationSpec.independent)
    k_nonnull: int = 8
    methods: tuple[AdjustMethod, ...] = DEFAULT_METHODS
    alpha: float = 0.05
    sidedness: str = "one"
    seed: int = 0
    draw: str = "summary"

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(AdjustMethod.parse(x) for x in self.methods))
        object.__setattr__(self, "deltas", tuple(float(d) for d in self.deltas))
        if self.m < 1 or self.reps < 1 or self.n_total < 2:
            raise ValidationError("need m >= 1, reps >= 1 and n_total >= 2")
        if not 0 <= self.k_nonnull <= self.m:
            raise ValidationError(f"k_nonnull must be in [0, m], got {self.k_nonnull}")
        if any(d < 0 for d in self.deltas):
            raise ValidationError("effect sizes must be non-negative")
        if self.sidedness not in ("one", "two"):
            raise ValidationError("sidedness must be 'one' or 'two'")
        if self.draw not in ("summary", "observations"):
            raise ValidationError("draw must be 'summary' or 'observations'")
        if not 0 < self.alpha < 1:
            raise ValidationError("alpha must be in (0, 1)")

    @property
    def arms(self) -> tuple[int, int]:
        n_c = self.n_total // 2
        return n_c, self.n_total - n_c

    @property
    def se_diff(self) -> float:
        n_c, n_t = self.arms
        return math.sqrt(1.0 / n_c + 1.0 / n_t)

    @classmethod
    def from_dict(cls, d: Mapping) -> "SimConfig":
        d = dict(d)
        if "corr" in d and not isinstance(d["corr"], CorrelationSpec):
            d["corr"] = CorrelationSpec.from_dict(d["corr"])
        for key in ("deltas", "methods"):
            if key in d:
                d[key] = tuple(d[key])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown simulation config fields: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "n_total": self.n_total,
            "reps": self.reps,
            "deltas": list(self.deltas),
            "corr": self.corr.to_dict(),
            "k_nonnull": self.k_nonnull,
            "methods": [x.value for x in self.methods],
            "alpha": self.alpha,
            "sidedness": self.sidedness,
            "seed": self.seed,
            "draw": self.draw,
        }


def mc_se(p: float, reps: int) -> float:
    return math.sqrt(max(p * (1 - p), 0.0) / reps)


@dataclass(frozen=True)
class PowerCell:
    method: AdjustMethod
    delta: float
    power: float
    fwer: float
    any_reject: float
    reps: int

    @property
    def power_se(self) -> float:
        return mc_se(self.power, self.reps)

    @property
    def fwer_se(self) -> float:
        return mc_se(self.fwer, self.reps) if not math.isnan(self.fwer) else math.nan

    @property
    def headline(self) -> float:
        """What a results table shows: FWER at delta = 0, disjunctive power otherwise."""
        return self.fwer if self.delta == 0 else self.power


@dataclass
class PowerTable:
    config: SimConfig
    cells: list[PowerCell]
    replicates: dict[tuple[AdjustMethod, float], np.ndarray] | None = None

    def cell(self, method: AdjustMethod | str, delta: float) -> PowerCell:
        method = AdjustMethod.parse(method)
        for c in self.cells:
            if c.method is method and math.isclose(c.delta, delta, abs_tol=1e-12):
                return c
        raise KeyError((method, delta))

    def rows(self) -> list[dict]:
        return [
            {
                "method": c.method.value,
                "delta": c.delta,
                "power": c.power,
                "power_se": c.power_se,
                "fwer": c.fwer,
                "fwer_se": c.fwer_se,
                "any_reject": c.any_reject,
                "headline": c.headline,
            }
            for c in self.cells
        ]

    def pivot(self) -> list[dict]:
        """One row per method, one column per delta (wide layout)."""
        out = []
        for method in self.config.methods:
            row = {"method": method.value}
            for d in self.config.deltas:
                row[f"delta={d:g}"] = self.cell(method, d).headline
            out.append(row)
        return out


def _noise_chunk(cfg: SimConfig, chol: np.ndarray, start: int, stop: int) -> np.ndarray:
    n_c, n_t = cfg.arms
    se = cfg.se_diff
    m = cfg.m
    out = np.empty((stop - start, m))
    for i, r in enumerate(range(start, stop)):
        gen = RngStream(cfg.seed, r).generator()
        if cfg.draw == "summary":
            e = gen.standard_normal((2, m)) @ chol.T
            diff = e[1] / math.sqrt(n_t) - e[0] / math.sqrt(n_c)
        else:
            xc = gen.standard_normal((n_c, m)) @ chol.T
            xt = gen.standard_normal((n_t, m)) @ chol.T
            diff = xt.mean(axis=0) - xc.mean(axis=0)
        out[i] = diff / se
    return out


def draw_noise(cfg: SimConfig, workers: int = 1) -> np.ndarray:
    """Standardized z-statistic noise, shape (reps, m); replication r from stream r."""
    if cfg.n_total % 2:
        warnings.warn(f"odd n_total={cfg.n_total}; arms split as {cfg.arms}", UserWarning, stacklevel=2)
    chol = cfg.corr.factor(cfg.m)
    workers = max(1, int(workers))
    bounds = np.linspace(0, cfg.reps, min(workers * 4, cfg.reps) + 1).astype(int)
    spans = [(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    if workers == 1:
        parts = [_noise_chunk(cfg, chol, a, b) for a, b in spans]
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(lambda s: _noise_chunk(cfg, chol, *s), spans))
    return np.vstack(parts)


def pvalues_from_z(z: np.ndarray, sidedness: str) -> np.ndarray:
    if sidedness == "one":
        return std_normal_sf(z)
    return 2.0 * std_normal_sf(np.abs(z))


def run_power_study(cfg: SimConfig, workers: int = 1, keep_replicates: bool = False) -> PowerTable:
    """Disjunctive power and FWER for every (method, delta) cell."""
    noise = draw_noise(cfg, workers)
    k = cfg.k_nonnull
    shift_mask = np.zeros(cfg.m)
    shift_mask[:k] = 1.0
    cells = []
    reps_store = {} if keep_replicates else None
    for delta in cfg.deltas:
        ncp = delta / cfg.se_diff
        p = pvalues_from_z(noise + ncp * shift_mask, cfg.sidedness)
        null_cols = slice(0, cfg.m) if delta == 0 else slice(k, cfg.m)
        for method in cfg.methods:
            rej = adjust_many(p, method) < cfg.alpha
            hit = rej[:, :k].any(axis=1) if k else np.zeros(cfg.reps, dtype=bool)
            nulls = rej[:, null_cols]
            fwer = float(nulls.any(axis=1).mean()) if nulls.shape[1] else math.nan
            any_rej = rej.any(axis=1)
            cells.append(PowerCell(method, delta, float(hit.mean()), fwer, float(any_rej.mean()), cfg.reps))
            if reps_store is not None:
                reps_store[(method, delta)] = any_rej
    return PowerTable(cfg, cells, reps_store)


def analytic_power_oracle(cfg: SimConfig) -> PowerTable:
    """Closed-form power/FWER for independent metrics under ``none`` or ``bonferroni``."""
    if cfg.corr.kind != "independent":
        raise ValidationError("analytic oracle needs independent metrics")
    cells = []
    k, m = cfg.k_nonnull, cfg.m
    for method in cfg.methods:
        if method not in (AdjustMethod.NONE, AdjustMethod.BONFERRONI):
            raise ValidationError(f"analytic oracle does not cover {method.value}")
        level = cfg.alpha if method is AdjustMethod.NONE else cfg.alpha / m
        sides = 1 if cfg.sidedness == "one" else 2
        z = std_normal_quantile(1 - level / sides)
        for delta in cfg.deltas:
            ncp = delta / cfg.se_diff
            single = std_normal_cdf(ncp - z) + (std_normal_cdf(-ncp - z) if sides == 2 else 0.0)
            power = 1 - (1 - single) ** k
            n_null = m if delta == 0 else m - k
            fwer = 1 - (1 - level) ** n_null if n_null else math.nan
            any_rej = 1 - (1 - single) ** k * (1 - level) ** (m - k)
            cells.append(PowerCell(method, delta, float(power), float(fwer), float(any_rej), cfg.reps))
    return PowerTable(cfg, cells)


@dataclass(frozen=True)
class AdvantageRow:
    k_nonnull: int
    corr: str
    method: AdjustMethod
    baseline_power: float
    power: float
    advantage: float
    se: float


def advantage_table(
    k_values: Sequence[int] = (1, 4, 8),
    corrs: Mapping[str, CorrelationSpec] | None = None,
    delta: float = 0.10,
    methods: Sequence[AdjustMethod | str] = (AdjustMethod.HOMMEL, AdjustMethod.BH),
    base: SimConfig | None = None,
    workers: int = 1,
) -> list[AdvantageRow]:
    """Paired disjunctive-power advantage of each method over Bonferroni.

    The default grid is k in {1, 4, 8} crossed with rho = 0 and rho = 0.95.
    """
    if corrs is None:
        corrs = {"rho=0": CorrelationSpec.independent(), "rho=0.95": CorrelationSpec.equicorrelated(0.95)}
    base = base or SimConfig()
    methods = tuple(AdjustMethod.parse(x) for x in methods)
    rows = []
    for label, corr in corrs.items():
        cfg0 = replace(base, corr=corr, deltas=(delta,), methods=(AdjustMethod.BONFERRONI, *methods))
        noise = draw_noise(cfg0, workers)
        for k in k_values:
            cfg = replace(cfg0, k_nonnull=k)
            shift = np.zeros(cfg.m)
            shift[:k] = delta / cfg.se_diff
            p = pvalues_from_z(noise + shift, cfg.sidedness)
            hits = {x: (adjust_many(p, x) < cfg.alpha)[:, :k].any(axis=1) for x in cfg.methods}
            b = hits[AdjustMethod.BONFERRONI]
            for x in methods:
                diff = hits[x].astype(float) - b.astype(float)
                rows.append(
                    AdvantageRow(
                        k, label, x, float(b.mean()), float(hits[x].mean()), float(diff.mean()),
                        float(diff.std(ddof=1) / math.sqrt(cfg.reps)) if cfg.reps > 1 else math.nan,
                    )
                )
    return rows


@dataclass(frozen=True)
class SparseResult:
    m: int
    method: AdjustMethod
    fwer: float
    fwer_se: float
    power: float
    ncp: float


def sparse_regime_fwer(
    m: int,
    q: float = 0.05,
    target_power: float = 0.95,
    reps: int = 20_000,
    seed: int = 0,
    method: AdjustMethod | str = AdjustMethod.BH,
    sidedness: str = "one",
    workers: int = 1,
    power_level: str = "uncorrected",
) -> SparseResult:
    """FWER among the m - 1 nulls when a single non-null has ``target_power``.

    ``power_level`` sets the test the effect is sized against: ``"uncorrected"``
    gives the non-null ``target_power`` at level q, ``"bonferroni"`` at level q/m.
    """
    if m < 2:
        raise ValidationError("need m >= 2")
    if power_level not in ("uncorrected", "bonferroni"):
        raise ValidationError(f"power_level must be 'uncorrected' or 'bonferroni', got {power_level!r}")
    method = AdjustMethod.parse(method)
    sides = 1 if sidedness == "one" else 2
    level = q if power_level == "uncorrected" else q / m
    ncp = std_normal_quantile(1 - level / sides) + std_normal_quantile(target_power)
    cfg = SimConfig(m=m, reps=reps, deltas=(0.0,), k_nonnull=1, methods=(method,), alpha=q, sidedness=sidedness, seed=seed)
    noise = draw_noise(cfg, workers)
    noise[:, 0] += ncp
    rej = adjust_many(pvalues_from_z(noise, sidedness), method) < q
    fwer = float(rej[:, 1:].any(axis=1).mean())
    return SparseResult(m, method, fwer, mc_se(fwer, reps), float(rej[:, 0].mean()), float(ncp))


def simulate_sequential_fwer(boundaries: Mapping[str, GstBoundaries], paths: int, seed: int) -> float:
    """P(any metric crosses its boundary at any look) under H0, metrics independent."""
    gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    any_cross = np.zeros(paths, dtype=bool)
    for gb in boundaries.values():
        t = np.asarray(gb.schedule.fractions)
        inc = gen.standard_normal((paths, t.size)) * np.sqrt(np.diff(t, prepend=0.0))
        z = np.cumsum(inc, axis=1) / np.sqrt(t)
        stat = np.abs(z) if gb.schedule.sides == 2 else z
        any_cross |= (stat >= gb.z_bounds).any(axis=1)
    return float(any_cross.mean())
