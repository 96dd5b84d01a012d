"""Synthetic experiment corpora and ship-rate replay across correction methods.

The generator only targets published marginals: success-metric counts with
median 2 and mean 3.7 on A/B tests, guardrail counts with median 4 and mean
5.7, 70% true nulls, a mix of A/B tests and guardrail-only rollouts, and
within-comparison z-statistic correlation with median 0 and mean 0.09.
Absolute ship rates from any real platform are not reproduced; only the
direction of method and family-definition effects is meaningful.

Every metric carries two paired readouts. The variance-reduced (``vr``) one has
residual noise correlated at the comparison's rho_eps; the unadjusted
(``no_vr``) one adds the pre-period noise term, so its standard error is
inflated by 1 / sqrt(1 - R^2) and its correlation is the pre/residual mixture.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from typing import IO, Iterable, Iterator, Mapping, Sequence

import numpy as np

from shipgate.adjust import AdjustMethod, adjust_many
from shipgate.decision import (
    DecisionConfig,
    Direction,
    FamilyMode,
    MetricResult,
    MetricRole,
    deterioration_pvalue,
    nim_pvalue,
    success_pvalue,
)
from shipgate.errors import ValidationError
from shipgate.kernel import RngStream
from shipgate.vr_model import VrDgpParams, unadjusted_corr

REPLAY_METHODS = (
    AdjustMethod.NONE,
    AdjustMethod.BH,
    AdjustMethod.BY,
    AdjustMethod.HOMMEL,
    AdjustMethod.HOLM,
    AdjustMethod.BONFERRONI,
)


@dataclass(frozen=True)
class NegBinCount:
    """``shift`` + NegativeBinomial(r) with the given mean of the unshifted part."""

    shift: int = 0
    r: float = 1.0
    mean: float = 0.0

    def sample(self, gen: np.random.Generator) -> int:
        if self.mean <= 0:
            return self.shift
        return self.shift + int(gen.negative_binomial(self.r, self.r / (self.r + self.mean)))


@dataclass(frozen=True)
class GammaEffect:
    """Non-null effect sizes in standard-error units of the variance-reduced readout."""

    shape: float = 4.0
    scale: float = 0.6

    def sample(self, gen: np.random.Generator) -> float:
        return float(gen.gamma(self.shape, self.scale))


@dataclass(frozen=True)
class CorrMixture:
    """Equicorrelation per comparison: 0 with probability ``zero_prob``, else Uniform(0, upper)."""

    zero_prob: float = 0.55
    upper: float = 0.4

    def sample(self, gen: np.random.Generator) -> float:
        u = gen.random()
        v = gen.random()
        return 0.0 if u < self.zero_prob else self.upper * v

    @property
    def mean(self) -> float:
        return (1 - self.zero_prob) * self.upper / 2


@dataclass(frozen=True)
class CorpusConfig:
    n_experiments: int = 1296
    comparisons_pmf: tuple[float, ...] = (0.7, 0.2, 0.1)
    rollout_fraction: float = 0.3
    success_count: NegBinCount = NegBinCount(shift=1, r=0.6, mean=2.7)
    guardrail_count: NegBinCount = NegBinCount(shift=1, r=1.0, mean=4.7)
    quality_count: NegBinCount = NegBinCount(shift=0, r=1.0, mean=0.0)
    null_fraction: float = 0.7
    active_fraction: float = 0.3
    effect: GammaEffect = GammaEffect()
    harmful_fraction: float = 0.5
    guardrail_effect_scale: float = 0.25
    margin_se: tuple[float, float] = (2.0, 5.0)
    within_corr: CorrMixture = CorrMixture()
    vr: VrDgpParams = VrDgpParams(gamma=1.0, sigma0_sq=1.0, sigma_eps_sq=1.0, rho0=0.3, rho_eps=0.0)
    alpha: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.n_experiments < 1:
            raise ValidationError("n_experiments must be positive")
        for name in ("rollout_fraction", "null_fraction", "harmful_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"{name} must be in [0, 1], got {v}")
        if not self.comparisons_pmf or abs(sum(self.comparisons_pmf) - 1) > 1e-9:
            raise ValidationError("comparisons_pmf must sum to 1")
        if not 0.0 < self.active_fraction <= 1.0:
            raise ValidationError("active_fraction must be in (0, 1]")
        if self.guardrail_effect_scale < 0:
            raise ValidationError("guardrail_effect_scale must be non-negative")
        lo, hi = self.margin_se
        if not 0 <= lo <= hi:
            raise ValidationError("margin_se must be an ordered non-negative pair")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "CorpusConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown corpus config fields: {sorted(unknown)}")
        nested = {
            "success_count": NegBinCount,
            "guardrail_count": NegBinCount,
            "quality_count": NegBinCount,
            "effect": GammaEffect,
            "within_corr": CorrMixture,
            "vr": VrDgpParams,
        }
        for key, typ in nested.items():
            if key in d and isinstance(d[key], Mapping):
                d[key] = typ(**d[key])
        for key in ("comparisons_pmf", "margin_se"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass(frozen=True)
class Readout:
    estimate: float
    se: float


@dataclass(frozen=True)
class CorpusMetric:
    name: str
    role: MetricRole
    direction: Direction
    vr: Readout
    no_vr: Readout
    nim_margin: float | None = None
    truth: str | None = None  # "null", "nonnull" or None for unlabeled exports
    true_effect: float | None = None

    def result(self, vr_on: bool = True) -> MetricResult:
        r = self.vr if vr_on else self.no_vr
        return MetricResult(self.name, self.role, self.direction, r.estimate, r.se, self.nim_margin)


@dataclass(frozen=True)
class ComparisonRecord:
    experiment_id: str
    comparison_id: str
    rollout: bool
    metrics: tuple[CorpusMetric, ...]

    def metric_results(self, vr_on: bool = True) -> list[MetricResult]:
        return [m.result(vr_on) for m in self.metrics]

    @property
    def success_count(self) -> int:
        return sum(m.role is MetricRole.SUCCESS for m in self.metrics)

    @property
    def guardrail_count(self) -> int:
        return sum(m.role is MetricRole.GUARDRAIL for m in self.metrics)

    @property
    def labeled(self) -> bool:
        return all(m.truth is not None for m in self.metrics)

    def to_json(self) -> str:
        return json.dumps(record_to_dict(self), sort_keys=True, separators=(",", ":"))


def record_to_dict(rec: ComparisonRecord) -> dict:
    def metric(m: CorpusMetric) -> dict:
        return {
            "name": m.name,
            "role": m.role.value,
            "direction": m.direction.value,
            "nim_margin": m.nim_margin,
            "truth": m.truth,
            "true_effect": m.true_effect,
            "vr": {"estimate": m.vr.estimate, "se": m.vr.se},
            "no_vr": {"estimate": m.no_vr.estimate, "se": m.no_vr.se},
        }

    return {
        "experiment_id": rec.experiment_id,
        "comparison_id": rec.comparison_id,
        "rollout": rec.rollout,
        "metrics": [metric(m) for m in rec.metrics],
    }


def _equicorr_noise(gen: np.random.Generator, n: int, rho: float) -> np.ndarray:
    # one shared factor keeps this valid for any n and rho in [0, 1)
    common = gen.standard_normal()
    own = gen.standard_normal(n)
    return math.sqrt(rho) * common + math.sqrt(1.0 - rho) * own


def _experiment(cfg: CorpusConfig, e: int) -> list[ComparisonRecord]:
    gen = RngStream(cfg.seed, e).generator()
    exp_id = f"exp-{e:05d}"
    n_cmp = 1 + int(gen.choice(len(cfg.comparisons_pmf), p=cfg.comparisons_pmf))
    rollout = bool(gen.random() < cfg.rollout_fraction)
    n_s = 0 if rollout else max(1, cfg.success_count.sample(gen))
    n_g = max(1, cfg.guardrail_count.sample(gen)) if rollout else cfg.guardrail_count.sample(gen)
    n_q = cfg.quality_count.sample(gen)
    roles = [MetricRole.SUCCESS] * n_s + [MetricRole.GUARDRAIL] * n_g + [MetricRole.QUALITY] * n_q
    names = [f"success_{i + 1}" for i in range(n_s)] + [f"guardrail_{i + 1}" for i in range(n_g)]
    names += [f"quality_{i + 1}" for i in range(n_q)]
    directions = [Direction.HIGHER if gen.random() < 0.7 else Direction.LOWER for _ in roles]
    se_scale = np.exp(0.5 * gen.standard_normal(len(roles)))
    margins_se = gen.uniform(*cfg.margin_se, size=len(roles))

    vr = cfg.vr
    pre_sd = math.sqrt(vr.gamma**2 * vr.sigma0_sq / vr.sigma_eps_sq)
    shift = vr.rho0 - vr.rho_eps
    inflate = math.sqrt(1.0 + pre_sd**2)
    # non-null effects cluster in "active" comparisons; the marginal null rate stays at null_fraction
    share = max(cfg.active_fraction, 1.0 - cfg.null_fraction)

    records = []
    for c in range(n_cmp):
        rho_eps = cfg.within_corr.sample(gen)
        rho0 = min(max(rho_eps + shift, 0.0), 0.99)
        eps = _equicorr_noise(gen, len(roles), rho_eps)
        pre = _equicorr_noise(gen, len(roles), rho0) * pre_sd
        active = gen.random() < share
        p_nonnull = (1.0 - cfg.null_fraction) / share if active else 0.0
        metrics = []
        for i, role in enumerate(roles):
            null = bool(gen.random() >= p_nonnull)
            ncp = 0.0
            if not null:
                size = cfg.effect.sample(gen)
                if role is MetricRole.SUCCESS:
                    good = gen.random() >= cfg.harmful_fraction
                else:
                    good = False
                    size *= cfg.guardrail_effect_scale
                ncp = size if good else -size
            sign = 1.0 if directions[i] is Direction.HIGHER else -1.0
            se = float(se_scale[i])
            true_effect = sign * ncp * se
            est_vr = true_effect + eps[i] * se
            est_novr = est_vr + pre[i] * se
            metrics.append(
                CorpusMetric(
                    name=names[i],
                    role=role,
                    direction=directions[i],
                    vr=Readout(float(est_vr), se),
                    no_vr=Readout(float(est_novr), se * inflate),
                    nim_margin=float(margins_se[i] * se) if role is MetricRole.GUARDRAIL else None,
                    truth="null" if null else "nonnull",
                    true_effect=float(true_effect),
                )
            )
        records.append(ComparisonRecord(exp_id, f"{exp_id}-t{c + 1}", rollout, tuple(metrics)))
    return records


def generate_corpus(cfg: CorpusConfig) -> list[ComparisonRecord]:
    """Comparisons for ``cfg.n_experiments`` experiments; experiment e uses stream e."""
    out: list[ComparisonRecord] = []
    for e in range(cfg.n_experiments):
        out.extend(_experiment(cfg, e))
    return out


def no_vr_correlation(vr: VrDgpParams, rho_eps: float) -> float:
    """Correlation of the unadjusted readouts for a comparison whose residual correlation is ``rho_eps``."""
    rho0 = min(max(rho_eps + vr.rho0 - vr.rho_eps, 0.0), 0.99)
    return unadjusted_corr(replace(vr, rho0=rho0, rho_eps=rho_eps))


# -- corpus files: one JSON record per line -------------------------------------------


def write_corpus(records: Iterable[ComparisonRecord], fh: IO[str]) -> int:
    n = 0
    for rec in records:
        fh.write(rec.to_json())
        fh.write("\n")
        n += 1
    return n


def parse_record(d: Mapping, line: int | None = None) -> ComparisonRecord:
    where = f"line {line}: " if line is not None else ""
    try:
        metrics = []
        for m in d["metrics"]:
            extra = set(m) - {"name", "role", "direction", "nim_margin", "truth", "true_effect", "vr", "no_vr"}
            if extra:
                raise ValidationError(f"unknown metric fields {sorted(extra)}")
            vr = Readout(float(m["vr"]["estimate"]), float(m["vr"]["se"]))
            nv = m.get("no_vr") or m["vr"]
            metrics.append(
                CorpusMetric(
                    name=str(m["name"]),
                    role=MetricRole(m["role"]),
                    direction=Direction.parse(m["direction"]),
                    vr=vr,
                    no_vr=Readout(float(nv["estimate"]), float(nv["se"])),
                    nim_margin=None if m.get("nim_margin") is None else float(m["nim_margin"]),
                    truth=m.get("truth"),
                    true_effect=None if m.get("true_effect") is None else float(m["true_effect"]),
                )
            )
        extra = set(d) - {"experiment_id", "comparison_id", "rollout", "metrics"}
        if extra:
            raise ValidationError(f"unknown record fields {sorted(extra)}")
        return ComparisonRecord(str(d["experiment_id"]), str(d["comparison_id"]), bool(d.get("rollout", False)), tuple(metrics))
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"{where}bad corpus record: {exc}") from None


def read_corpus(fh: IO[str]) -> Iterator[ComparisonRecord]:
    for i, line in enumerate(fh, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            d = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"line {i}: invalid JSON ({exc.msg})") from None
        yield parse_record(d, i)


# -- replay ------------------------------------------------------------------------------


@dataclass(frozen=True)
class ReplayOutcome:
    ship: np.ndarray  # bool, one entry per comparison
    true_driver: np.ndarray  # bool, shipped with at least one non-null driving success metric


@dataclass
class ReplayResult:
    methods: tuple[AdjustMethod, ...]
    family_mode: FamilyMode
    vr_on: bool
    alpha: float
    outcomes: dict[AdjustMethod, ReplayOutcome]
    rollout: np.ndarray
    n: int = 0

    def ship_rate(self, method: AdjustMethod | str) -> float:
        return float(self.outcomes[AdjustMethod.parse(method)].ship.mean())

    def rows(self) -> list[dict]:
        """Ship% per method with absolute (pp) and relative (%) change versus Bonferroni."""
        base = self.ship_rate(AdjustMethod.BONFERRONI)
        out = []
        for m in self.methods:
            rate = self.ship_rate(m)
            is_base = m is AdjustMethod.BONFERRONI
            out.append(
                {
                    "method": m.value,
                    "family": self.family_mode.value,
                    "vr": self.vr_on,
                    "ship_pct": 100 * rate,
                    "vs_bonferroni_pp": None if is_base else 100 * (rate - base),
                    "vs_bonferroni_rel_pct": None if is_base or base == 0 else 100 * (rate - base) / base,
                }
            )
        return out


@dataclass(frozen=True)
class _Prepared:
    """Per-comparison inputs to the decision rule, grouped by family size."""

    gates_ok: np.ndarray
    has_success: np.ndarray
    groups: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]]
    # m -> (row indices, p-values [n, m], improving success mask [n, m], non-null success mask [n, m])


def _prepare(corpus: Sequence[ComparisonRecord], family_mode: FamilyMode, alpha: float, vr_on: bool) -> _Prepared:
    n = len(corpus)
    gates_ok = np.ones(n, dtype=bool)
    has_success = np.zeros(n, dtype=bool)
    rows: dict[int, list] = {}
    for k, rec in enumerate(corpus):
        fam_p, fam_good, fam_true = [], [], []
        for cm in rec.metrics:
            m = cm.result(vr_on)
            if m.role is MetricRole.SUCCESS:
                has_success[k] = True
            elif m.role is MetricRole.GUARDRAIL and not nim_pvalue(m) < alpha:
                gates_ok[k] = False
            elif m.role is MetricRole.QUALITY and deterioration_pvalue(m) < alpha:
                gates_ok[k] = False
            if family_mode is FamilyMode.NAIVE or m.role is MetricRole.SUCCESS:
                fam_p.append(success_pvalue(m))
                is_s = m.role is MetricRole.SUCCESS
                fam_good.append(is_s and m.improves())
                fam_true.append(is_s and cm.truth == "nonnull")
        if fam_p:
            rows.setdefault(len(fam_p), []).append((k, fam_p, fam_good, fam_true))
    groups = {}
    for m, items in rows.items():
        groups[m] = (
            np.array([it[0] for it in items], dtype=np.int64),
            np.array([it[1] for it in items], dtype=float),
            np.array([it[2] for it in items], dtype=bool),
            np.array([it[3] for it in items], dtype=bool),
        )
    return _Prepared(gates_ok, has_success, groups)


def _ship(prep: _Prepared, method: AdjustMethod, alpha: float) -> ReplayOutcome:
    n = prep.gates_ok.size
    driven = np.zeros(n, dtype=bool)
    true_driven = np.zeros(n, dtype=bool)
    for idx, p, good, true in prep.groups.values():
        drive = (adjust_many(p, method) < alpha) & good
        driven[idx] = drive.any(axis=1)
        true_driven[idx] = (drive & true).any(axis=1)
    ship = prep.gates_ok & (driven | ~prep.has_success)
    return ReplayOutcome(ship, ship & true_driven)


def replay(
    corpus: Sequence[ComparisonRecord],
    methods: Sequence[AdjustMethod | str] = REPLAY_METHODS,
    family_mode: FamilyMode | str = FamilyMode.SUCCESS_ONLY,
    alpha: float = 0.05,
    vr_on: bool = True,
    workers: int = 1,
) -> ReplayResult:
    """Ship decision for every comparison under every method.

    Applies the same rule as :func:`shipgate.decision.ship_decision`, batched:
    comparisons with equal family size are adjusted together as rows of one
    array. Results do not depend on ``workers``.
    """
    if not corpus:
        raise ValidationError("empty corpus")
    DecisionConfig(alpha=alpha)  # validates alpha
    methods = tuple(AdjustMethod.parse(m) for m in methods)
    if AdjustMethod.BONFERRONI not in methods:
        methods = methods + (AdjustMethod.BONFERRONI,)
    family_mode = FamilyMode(family_mode)
    corpus = list(corpus)
    prep = _prepare(corpus, family_mode, alpha, vr_on)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(lambda m: _ship(prep, m, alpha), methods))
    else:
        results = [_ship(prep, m, alpha) for m in methods]
    outcomes = dict(zip(methods, results))
    return ReplayResult(methods, family_mode, vr_on, alpha, outcomes, ~prep.has_success, len(corpus))


def ship_set(result: ReplayResult, method: AdjustMethod | str) -> set[int]:
    return {int(i) for i in np.flatnonzero(result.outcomes[AdjustMethod.parse(method)].ship)}


def vr_crossed_replay(
    corpus: Sequence[ComparisonRecord],
    methods: Sequence[AdjustMethod | str] = REPLAY_METHODS,
    alpha: float = 0.05,
    family_mode: FamilyMode | str = FamilyMode.SUCCESS_ONLY,
    workers: int = 1,
) -> list[dict]:
    """Ship% with and without variance reduction; gap delta = (gap vs Bonferroni with VR) - (gap without)."""
    with_vr = replay(corpus, methods, family_mode, alpha, True, workers)
    without = replay(corpus, methods, family_mode, alpha, False, workers)
    b_on = with_vr.ship_rate(AdjustMethod.BONFERRONI)
    b_off = without.ship_rate(AdjustMethod.BONFERRONI)
    rows = []
    for m in with_vr.methods:
        on, off = with_vr.ship_rate(m), without.ship_rate(m)
        base = m is AdjustMethod.BONFERRONI
        rows.append(
            {
                "method": m.value,
                "ship_pct_vr": 100 * on,
                "gap_vr_pp": None if base else 100 * (on - b_on),
                "ship_pct_no_vr": 100 * off,
                "gap_no_vr_pp": None if base else 100 * (off - b_off),
                "gap_delta_pp": None if base else 100 * ((on - b_on) - (off - b_off)),
            }
        )
    return rows


def family_crossed_replay(
    corpus: Sequence[ComparisonRecord],
    methods: Sequence[AdjustMethod | str] = REPLAY_METHODS,
    alpha: float = 0.05,
    vr_on: bool = True,
    workers: int = 1,
) -> list[dict]:
    """Ship% and advantage over Bonferroni under the naive and success-only families."""
    naive = replay(corpus, methods, FamilyMode.NAIVE, alpha, vr_on, workers)
    correct = replay(corpus, methods, FamilyMode.SUCCESS_ONLY, alpha, vr_on, workers)
    bn, bc = naive.ship_rate(AdjustMethod.BONFERRONI), correct.ship_rate(AdjustMethod.BONFERRONI)
    rows = []
    for m in naive.methods:
        sn, sc = naive.ship_rate(m), correct.ship_rate(m)
        base = m is AdjustMethod.BONFERRONI
        rows.append(
            {
                "method": m.value,
                "naive_ship_pct": 100 * sn,
                "naive_pp": None if base else 100 * (sn - bn),
                "success_only_ship_pct": 100 * sc,
                "success_only_pp": None if base else 100 * (sc - bc),
                "gain_pp": None if base else 100 * ((sc - bc) - (sn - bn)),
            }
        )
    return rows


@dataclass(frozen=True)
class ShipScore:
    method: AdjustMethod
    ship_rate: float
    ab_ship_rate: float
    true_ship_rate: float
    false_ship_rate: float
    rollout_ship_rate: float
    ppv: float

    def row(self) -> dict:
        d = asdict(self)
        d["method"] = self.method.value
        return d


def score_corpus(result: ReplayResult, corpus: Sequence[ComparisonRecord]) -> list[ShipScore]:
    """Split A/B ships into those driven by a truly improving success metric and the rest.

    Rates for true and false ships are over A/B comparisons (those with at
    least one success metric); rollouts are reported separately.
    """
    if len(corpus) != result.n:
        raise ValidationError("corpus does not match the replay result")
    if not all(r.labeled for r in corpus):
        raise ValidationError("scoring needs truth labels on every metric")
    ab = ~result.rollout
    n_ab = int(ab.sum())
    n_roll = int(result.rollout.sum())
    scores = []
    for m in result.methods:
        o = result.outcomes[m]
        true_ships = int((o.true_driver & ab).sum())
        ab_ships = int((o.ship & ab).sum())
        false_ships = ab_ships - true_ships
        scores.append(
            ShipScore(
                method=m,
                ship_rate=float(o.ship.mean()),
                ab_ship_rate=ab_ships / n_ab if n_ab else math.nan,
                true_ship_rate=true_ships / n_ab if n_ab else math.nan,
                false_ship_rate=false_ships / n_ab if n_ab else math.nan,
                rollout_ship_rate=float((o.ship & result.rollout).sum() / n_roll) if n_roll else math.nan,
                ppv=true_ships / ab_ships if ab_ships else math.nan,
            )
        )
    return scores
