"""Command-line entry point: ``shipgate <command> [options]``.

Exit codes: 0 ok / ship, 1 no-ship (``decide`` only), 2 invalid input,
3 numeric failure. Every stochastic command needs a seed, either ``--seed`` or
a ``seed`` field in its config; there is no environment default.

Inputs given as ``@name`` are read from the bundled data directory, so
``--config @table2`` loads ``shipgate/data/table2.json``.
"""

from __future__ import annotations

import argparse
import io
import json
import re
import sys
from dataclasses import asdict
from importlib import resources
from typing import Sequence

import numpy as np

from shipgate import corpus as corpus_mod
from shipgate.adjust import AdjustMethod, adjust, effective_count
from shipgate.decision import FamilyMode, ship_decision
from shipgate.errors import DomainError, ValidationError
from shipgate.kernel import RngStream
from shipgate.planning import plan_experiment, plan_table
from shipgate.report import FORMATS, Provenance, render
from shipgate.schema import ExperimentSpecDocument, PlanDocument, ScheduleDocument, parse_document
from shipgate.sequential import SpendingFunction, multi_metric_sequential, simulate_h0_crossings
from shipgate.sim_engine import SimConfig, advantage_table, run_power_study, sparse_regime_fwer
from shipgate.vr_model import VrDgpParams, decorrelation_gap, simulate_dgp, unadjusted_corr

EXIT_OK, EXIT_NO_SHIP, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2, 3
METHOD_CHOICES = [m.value for m in AdjustMethod]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


# -- input helpers ------------------------------------------------------------------------


def _open_text(name: str) -> str:
    if name == "-":
        return sys.stdin.read()
    if name.startswith("@"):
        base = name[1:]
        pkg = resources.files("shipgate") / "data"
        for candidate in (base, base + ".json", base + ".jsonl", base + ".txt"):
            p = pkg / candidate
            if p.is_file():
                return p.read_text()
        raise ValidationError(f"no bundled data file named {base!r}")
    try:
        with open(name) as fh:
            return fh.read()
    except OSError as exc:
        raise ValidationError(f"cannot read {name}: {exc.strerror}") from None


def _load_json(name: str) -> dict:
    text = _open_text(name)
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{name}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ValidationError(f"{name}: expected a JSON object")
    return data


_TOKEN = re.compile(r"[,\s]+")


def parse_pvalues(text: str) -> list[float]:
    """Whitespace- or comma-separated numbers; ``#`` starts a comment."""
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0]
        for tok in _TOKEN.split(line.strip()):
            if not tok:
                continue
            try:
                v = float(tok)
            except ValueError:
                raise ValidationError(f"line {lineno}: cannot parse {tok!r} as a number") from None
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"line {lineno}: p-value {tok} is outside [0, 1]")
            out.append(v)
    if not out:
        raise ValidationError("no p-values")
    return out


def _emit(args, text: str) -> None:
    if args.out in (None, "-"):
        sys.stdout.write(text)
        sys.stdout.flush()
    else:
        with open(args.out, "w", newline="") as fh:
            fh.write(text)


def _need_seed(args, config_seed: int | None = None) -> int:
    if args.seed is not None:
        return args.seed
    if config_seed is not None:
        return int(config_seed)
    raise ValidationError("this command is stochastic: pass --seed (or set seed in the config)")


# -- commands ------------------------------------------------------------------------------


def cmd_adjust(args) -> int:
    p = parse_pvalues(_open_text(args.input))
    res = adjust(p, args.method)
    rows = [
        {"raw": r, "adjusted": a, "rejected": bool(a < args.alpha)}
        for r, a in zip(res.raw.tolist(), res.adjusted.tolist())
    ]
    extra = {}
    config = {"method": args.method, "alpha": args.alpha, "pvalues": p}
    if args.nyholt:
        corr = _load_json(args.nyholt)
        matrix = np.asarray(corr.get("matrix"), dtype=float)
        if matrix.shape != (len(p), len(p)):
            raise ValidationError(f"correlation matrix must be {len(p)}x{len(p)}")
        extra["m_eff"] = effective_count(matrix)
        extra["note"] = "m_eff is informational; the adjustment above uses the full family size"
        config["corr"] = matrix.tolist()
    _emit(args, render(rows, args.format, Provenance("adjust", None, config), "Adjusted p-values", extra))
    return EXIT_OK


def _decision_rows(dec) -> list[dict]:
    rows = []
    for o in dec.metrics:
        row = {
            "metric": o.name,
            "role": o.role,
            "test": o.test,
            "p": o.pvalue,
            "adjusted_p": o.adjusted_pvalue,
            "in_family": o.in_family,
            "outcome": o.outcome,
            "ci_lower": o.interval.lower,
            "ci_upper": o.interval.upper,
            "ci_level": o.interval.level,
        }
        if o.fcr_interval is not None:
            row.update(fcr_lower=o.fcr_interval.lower, fcr_upper=o.fcr_interval.upper, fcr_level=o.fcr_interval.level)
        rows.append(row)
    return rows


def cmd_decide(args) -> int:
    doc = parse_document(ExperimentSpecDocument, _open_text(args.spec))
    if args.method:
        doc = doc.model_copy(update={"method": AdjustMethod.parse(args.method)})
    if args.family:
        doc = doc.model_copy(update={"family_mode": FamilyMode(args.family)})
    dec = ship_decision(doc.metric_results(), doc.decision_config(), doc.srm_check())
    extra = {
        "ship": dec.ship,
        "reasons": dec.reasons,
        "method": doc.method,
        "family_mode": doc.family_mode,
        "family_size": dec.family_size,
        "alpha": doc.alpha,
        "driving_success": dec.driving_success,
        "failed_guardrails": dec.failed_guardrails,
        "blocking_quality": dec.blocking_quality,
    }
    if dec.srm_pvalue is not None:
        extra["srm_p"] = dec.srm_pvalue
    prov = Provenance("decide", None, doc.model_dump(mode="json"))
    _emit(args, render(_decision_rows(dec), args.format, prov, "Ship decision", extra))
    return EXIT_OK if dec.ship else EXIT_NO_SHIP


def cmd_plan(args) -> int:
    if args.config:
        doc = parse_document(PlanDocument, _load_json(args.config))
    else:
        missing = [f for f in ("delta", "S") if getattr(args, f) is None]
        if missing:
            raise ValidationError("without --config, pass " + " and ".join("--" + m for m in missing))
        doc = parse_document(
            PlanDocument,
            {
                "schema_version": "1",
                "alpha": args.alpha,
                "beta": args.beta,
                "delta": args.delta,
                "sigma": args.sigma,
                "S": args.S,
                "margins": args.margins or [],
                "relative_mde": args.relative_mde,
            },
        )
    plan = plan_experiment(doc.inputs())
    extra = {
        "n_per_variant": plan.n_per_variant,
        "statement": plan.statement,
        "decision_alpha": plan.decision_alpha,
        "naive_alpha": plan.naive_alpha,
    }
    prov = Provenance("plan", None, doc.model_dump(mode="json"))
    _emit(args, render(plan_table(plan), args.format, prov, "Sample size plan", extra))
    return EXIT_OK


def cmd_gst(args) -> int:
    if args.schedules:
        doc = parse_document(ScheduleDocument, _load_json(args.schedules))
    else:
        if not args.fractions:
            raise ValidationError("pass --schedules FILE or --fractions")
        try:
            fr = [float(x) for x in args.fractions.split(",")]
        except ValueError:
            raise ValidationError(f"cannot parse --fractions {args.fractions!r}") from None
        doc = parse_document(
            ScheduleDocument,
            {
                "schema_version": "1",
                "alpha": args.alpha,
                "spending": args.spending,
                "schedules": [{"metric": "metric", "fractions": fr, "sides": args.sides}],
            },
        )
    method = "bonferroni-over-time" if args.bonferroni_over_time else "recursion"
    bounds = multi_metric_sequential(
        doc.look_schedules(), doc.alpha, doc.family_size, doc.spending_map(), method
    )
    rows = []
    seed = _need_seed(args) if args.check_paths else None
    for k, (name, gb) in enumerate(bounds.items()):
        gb_rows = gb.rows()
        if args.check_paths:
            sub_seed = int(np.random.SeedSequence(seed, spawn_key=(k,)).generate_state(1)[0])
            sim = simulate_h0_crossings(gb, args.check_paths, sub_seed)
            for r, s in zip(gb_rows, sim):
                r["simulated_cumulative"] = float(s)
        rows.extend(gb_rows)
    extra = {"method": method, "budget_per_metric": doc.alpha / doc.family_size}
    config = {"doc": doc.model_dump(mode="json"), "method": method, "check_paths": args.check_paths}
    _emit(args, render(rows, args.format, Provenance("gst", seed, config), "Group sequential boundaries", extra))
    return EXIT_OK


def cmd_simulate(args) -> int:
    raw = _load_json(args.config) if args.config else {}
    raw.pop("schema_version", None)
    study = raw.pop("study", None) or args.study
    sparse_keys = {"q", "target_power", "power_level", "method"}
    sparse_opts = {k: raw.pop(k) for k in list(raw) if k in sparse_keys}
    seed = _need_seed(args, raw.get("seed"))
    raw["seed"] = seed
    if args.reps is not None:
        raw["reps"] = args.reps
    cfg = SimConfig.from_dict(raw)
    config = {"study": study, **cfg.to_dict(), **sparse_opts}
    if study == "power":
        table = run_power_study(cfg, workers=args.workers)
        rows = table.pivot() if args.layout == "pivot" else table.rows()
        title = "Power and FWER"
    elif study == "advantage":
        rows = [
            {
                "k_nonnull": r.k_nonnull,
                "corr": r.corr,
                "method": r.method,
                "bonferroni_power": r.baseline_power,
                "power": r.power,
                "advantage_pp": 100 * r.advantage,
                "se_pp": 100 * r.se,
            }
            for r in advantage_table(base=cfg, workers=args.workers)
        ]
        title = "Advantage over Bonferroni"
    elif study == "sparse":
        res = sparse_regime_fwer(
            cfg.m,
            q=sparse_opts.get("q", cfg.alpha),
            target_power=sparse_opts.get("target_power", 0.95),
            reps=cfg.reps,
            seed=seed,
            method=sparse_opts.get("method", "bh"),
            sidedness=cfg.sidedness,
            workers=args.workers,
            power_level=sparse_opts.get("power_level", "uncorrected"),
        )
        rows = [{"m": res.m, "method": res.method, "fwer": res.fwer, "fwer_se": res.fwer_se, "power": res.power, "ncp": res.ncp}]
        title = "Sparse-regime FWER"
    else:
        raise ValidationError(f"unknown study {study!r}")
    _emit(args, render(rows, args.format, Provenance("simulate", seed, config), title))
    return EXIT_OK


def cmd_vr(args) -> int:
    p = VrDgpParams(
        gamma=args.gamma,
        sigma0_sq=args.sigma0_sq,
        sigma_eps_sq=args.sigma_eps_sq,
        rho0=args.rho0,
        rho_eps=args.rho_eps,
    )
    closed = unadjusted_corr(p)
    rows = []
    seed = None
    if args.draws:
        seed = _need_seed(args)
        for d in range(args.draws):
            est = simulate_dgp(p, args.n, RngStream(seed, d))
            rows.append(
                {
                    "draw": d + 1,
                    "raw_corr": est.raw_corr,
                    "residual_corr": est.residual_corr,
                    "gamma_a_hat": est.gamma_a_hat,
                    "gamma_b_hat": est.gamma_b_hat,
                }
            )
    extra = {
        "unadjusted_corr": closed,
        "adjusted_corr": p.rho_eps,
        "decorrelation_gap": decorrelation_gap(p),
        "r_squared": p.pre_weight,
    }
    config = {**asdict(p), "n": args.n, "draws": args.draws}
    _emit(args, render(rows, args.format, Provenance("vr", seed, config), "Correlation with and without adjustment", extra))
    return EXIT_OK


def _corpus_config(args) -> corpus_mod.CorpusConfig:
    raw = _load_json(args.config) if args.config else {}
    raw.pop("schema_version", None)
    raw["seed"] = _need_seed(args, raw.get("seed"))
    if getattr(args, "n_experiments", None) is not None:
        raw["n_experiments"] = args.n_experiments
    return corpus_mod.CorpusConfig.from_dict(raw)


def cmd_corpus_generate(args) -> int:
    cfg = _corpus_config(args)
    records = corpus_mod.generate_corpus(cfg)
    if args.format == "json":
        text = "".join(r.to_json() + "\n" for r in records)
    else:
        rows = [
            {
                "experiment_id": r.experiment_id,
                "comparison_id": r.comparison_id,
                "rollout": r.rollout,
                "metric": m.name,
                "role": m.role,
                "direction": m.direction,
                "truth": m.truth,
                "vr_estimate": m.vr.estimate,
                "vr_se": m.vr.se,
                "no_vr_estimate": m.no_vr.estimate,
                "no_vr_se": m.no_vr.se,
                "nim_margin": m.nim_margin,
            }
            for r in records
            for m in r.metrics
        ]
        text = render(rows, args.format, Provenance("corpus generate", cfg.seed, cfg.to_dict()), "Synthetic corpus")
    _emit(args, text)
    return EXIT_OK


def _load_corpus(args) -> tuple[list, object]:
    if args.corpus and args.config:
        raise ValidationError("pass either a corpus file or --config, not both")
    if args.corpus:
        text = _open_text(args.corpus)
        records = list(corpus_mod.read_corpus(io.StringIO(text)))
        if not records:
            raise ValidationError("empty corpus")
        return records, {"corpus_sha": Provenance("", None, text).as_dict()["config_hash"]}
    if args.config:
        cfg = _corpus_config(args)
        return corpus_mod.generate_corpus(cfg), cfg.to_dict()
    raise ValidationError("pass a corpus file (JSONL, '-' for stdin) or --config")


def cmd_replay(args) -> int:
    records, source = _load_corpus(args)
    methods = [AdjustMethod.parse(m) for m in args.methods.split(",")] if args.methods else list(corpus_mod.REPLAY_METHODS)
    config = {"source": source, "methods": methods, "alpha": args.alpha, "family": args.family, "vr": args.vr}
    extra = {"comparisons": len(records)}
    if args.vr == "crossed":
        rows = corpus_mod.vr_crossed_replay(records, methods, args.alpha, args.family, args.workers)
        title = "Ship rates with and without variance reduction"
    elif args.family == "crossed":
        rows = corpus_mod.family_crossed_replay(records, methods, args.alpha, args.vr == "on", args.workers)
        title = "Advantage over Bonferroni by family definition"
    else:
        res = corpus_mod.replay(records, methods, args.family, args.alpha, args.vr == "on", args.workers)
        rows = res.rows()
        title = "Ship rates by correction method"
        if args.score:
            rows = [s.row() for s in corpus_mod.score_corpus(res, records)]
            title = "True and false ship rates"
    seed = source.get("seed")
    _emit(args, render(rows, args.format, Provenance("replay", seed, config), title, extra))
    return EXIT_OK


# -- parser --------------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser, default_format: str = "csv") -> None:
    p.add_argument("--seed", type=int, default=None, help="RNG seed (required by stochastic commands)")
    p.add_argument("--out", default=None, help="output file (default: stdout)")
    p.add_argument("--format", choices=FORMATS, default=default_format, help=f"output format (default: {default_format})")
    p.add_argument("--workers", type=int, default=1, help="worker threads; results do not depend on this")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="shipgate", description="Multiple-testing corrections and ship decisions for online experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("adjust", help="adjust a list of p-values")
    p.add_argument("input", nargs="?", default="-", help="file with p-values, '-' for stdin (default)")
    p.add_argument("--method", choices=METHOD_CHOICES, default="bonferroni")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--nyholt", metavar="CORR_JSON", help='report Nyholt m_eff for {"matrix": [[...]]}; informational only')
    _common(p)
    p.set_defaults(func=cmd_adjust)

    p = sub.add_parser("decide", help="ship decision and interval report for one comparison")
    p.add_argument("spec", help="experiment spec JSON ('-' for stdin, @name for bundled)")
    p.add_argument("--method", choices=METHOD_CHOICES, help="override the document's method")
    p.add_argument("--family", choices=[f.value for f in FamilyMode], help="override the document's family_mode")
    _common(p, "json")
    p.set_defaults(func=cmd_decide)

    p = sub.add_parser("plan", help="per-variant sample size at alpha/S")
    p.add_argument("--config", help="plan JSON document")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--beta", type=float, default=0.2)
    p.add_argument("--delta", type=float, help="minimum detectable effect")
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--S", type=int, help="number of success metrics")
    p.add_argument("--margins", type=float, nargs="*", help="one NIM per guardrail")
    p.add_argument("--relative-mde", type=float, help="MDE in percent, for the statement")
    _common(p)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("gst", help="group sequential boundaries per metric at alpha/S")
    p.add_argument("--schedules", help="schedule JSON document")
    p.add_argument("--fractions", help="comma-separated information fractions for a single metric")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--sides", type=int, choices=(1, 2), default=2)
    p.add_argument("--spending", choices=[s.value for s in SpendingFunction], default="obf_type")
    p.add_argument("--bonferroni-over-time", action="store_true", help="conservative bounds ignoring look correlation")
    p.add_argument("--check-paths", type=int, default=0, help="also simulate H0 crossing with this many paths")
    _common(p)
    p.set_defaults(func=cmd_gst)

    p = sub.add_parser("simulate", help="Monte Carlo power and FWER study")
    p.add_argument("--config", help="simulation config JSON")
    p.add_argument("--study", choices=("power", "advantage", "sparse"), default="power")
    p.add_argument("--reps", type=int, help="override replications")
    p.add_argument("--layout", choices=("long", "pivot"), default="pivot")
    _common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("vr", help="cross-metric correlation before and after variance reduction")
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--sigma0-sq", type=float, default=1.0)
    p.add_argument("--sigma-eps-sq", type=float, default=1.0)
    p.add_argument("--rho0", type=float, default=0.5)
    p.add_argument("--rho-eps", type=float, default=0.0)
    p.add_argument("--n", type=int, default=100_000, help="units per simulated draw")
    p.add_argument("--draws", type=int, default=0, help="simulated draws to report next to the closed form")
    _common(p)
    p.set_defaults(func=cmd_vr)

    p = sub.add_parser("corpus", help="synthetic experiment corpora")
    csub = p.add_subparsers(dest="corpus_command", required=True, parser_class=_Parser)
    g = csub.add_parser("generate", help="write a synthetic corpus (json = JSON Lines)")
    g.add_argument("--config", help="corpus config JSON")
    g.add_argument("--n-experiments", type=int)
    _common(g, "json")
    g.set_defaults(func=cmd_corpus_generate)

    p = sub.add_parser("replay", help="ship rates across correction methods on a corpus")
    p.add_argument("corpus", nargs="?", help="corpus JSONL ('-' for stdin)")
    p.add_argument("--config", help="generate the corpus from this config instead of reading one")
    p.add_argument("--n-experiments", type=int)
    p.add_argument("--methods", help="comma-separated methods (default: all)")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--family", choices=("success_only", "naive", "crossed"), default="success_only")
    p.add_argument("--vr", choices=("on", "off", "crossed"), default="on")
    p.add_argument("--score", action="store_true", help="split ships into true and false using truth labels")
    _common(p)
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, DomainError) as exc:
        print(f"shipgate: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ArithmeticError as exc:
        print(f"shipgate: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
