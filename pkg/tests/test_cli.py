import csv
import io
import json
import subprocess
import sys

import pytest
from conftest import closed_testing, simes_local

from shipgate.cli import main, parse_pvalues
from shipgate.corpus import CorpusConfig, generate_corpus, replay
from shipgate.errors import ValidationError
from shipgate.report import Provenance, render


def run(capsys, *argv, stdin=None, monkeypatch=None):
    if stdin is not None:
        monkeypatch.setattr(sys, "stdin", io.StringIO(stdin))
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def table(text):
    body = [ln for ln in text.splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(body))


def test_adjust_example(capsys, monkeypatch):
    code, out, _ = run(capsys, "adjust", "--method", "bonferroni", "--alpha", "0.05", stdin="0.01 0.2 0.6", monkeypatch=monkeypatch)
    assert code == 0
    lines = [ln for ln in out.splitlines() if not ln.startswith("#")]
    assert lines == ["raw,adjusted,rejected", "0.01,0.03,true", "0.2,0.6,false", "0.6,1,false"]


def test_adjust_hommel_fixture(capsys):
    fixture = json.loads(open(_data("hommel_fixture.json")).read())
    oracle = closed_testing(fixture["pvalues"], simes_local, fixture["alpha"])
    code, out, _ = run(capsys, "adjust", "@hommel_fixture.txt", "--method", "hommel")
    assert code == 0
    rejected = {i for i, r in enumerate(table(out)) if r["rejected"] == "true"}
    assert rejected == set(oracle) == set(fixture["hommel_rejected"])


def test_adjust_empty_input(capsys, monkeypatch):
    code, _, err = run(capsys, "adjust", stdin="  \n# nothing\n", monkeypatch=monkeypatch)
    assert code == 2 and "no p-values" in err


def test_adjust_parse_error_has_line(capsys, monkeypatch):
    code, _, err = run(capsys, "adjust", stdin="0.1\n0.2 abc\n", monkeypatch=monkeypatch)
    assert code == 2 and "line 2" in err
    code, _, err = run(capsys, "adjust", stdin="1.5", monkeypatch=monkeypatch)
    assert code == 2 and "outside" in err


def test_parse_pvalues_commas_and_comments():
    assert parse_pvalues("0.1, 0.2\n0.3 # tail\n") == [0.1, 0.2, 0.3]
    with pytest.raises(ValidationError):
        parse_pvalues("")


def test_adjust_nyholt(capsys, tmp_path, monkeypatch):
    path = tmp_path / "corr.json"
    path.write_text(json.dumps({"matrix": [[1, 0], [0, 1]]}))
    code, out, _ = run(capsys, "adjust", "--nyholt", str(path), "--format", "json", stdin="0.01 0.02", monkeypatch=monkeypatch)
    assert code == 0 and json.loads(out)["m_eff"] == pytest.approx(2.0)
    path.write_text(json.dumps({"matrix": [[1]]}))
    assert run(capsys, "adjust", "--nyholt", str(path), stdin="0.01 0.02", monkeypatch=monkeypatch)[0] == 2


@pytest.mark.parametrize(
    "fixture, code",
    [("@ship_example", 0), ("@rollout", 0), ("@failing_guardrail", 1), ("@wrong_direction", 1)],
)
def test_decide_exit_codes(capsys, fixture, code):
    rc, out, _ = run(capsys, "decide", fixture)
    assert rc == code
    doc = json.loads(out)
    assert doc["ship"] is (code == 0)
    assert set(doc["provenance"]) == {"command", "seed", "config_hash", "versions"}
    if fixture == "@failing_guardrail":
        assert doc["failed_guardrails"] == ["crash_rate"]


def test_decide_intervals_match_test_level(capsys):
    _, out, _ = run(capsys, "decide", "@ship_example", "--method", "bonferroni")
    doc = json.loads(out)
    fam = [r for r in doc["rows"] if r["in_family"]]
    assert fam and all(r["ci_level"] == pytest.approx(1 - doc["alpha"] / doc["family_size"]) for r in fam)


def test_decide_markdown(capsys):
    rc, out, _ = run(capsys, "decide", "@failing_guardrail", "--format", "md")
    assert rc == 1 and out.startswith("# Ship decision") and "## Provenance" in out


def test_decide_invalid(capsys, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"schema_version": "1", "metrics": [], "extra": 1}))
    rc, _, err = run(capsys, "decide", str(bad))
    assert rc == 2 and "metrics" in err and "extra" in err
    assert run(capsys, "decide", str(tmp_path / "missing.json"))[0] == 2
    assert run(capsys, "decide", "@no_such_fixture")[0] == 2


def test_plan_bundled_single_metric(capsys):
    rc, out, _ = run(capsys, "plan", "--config", "@plan_single", "--format", "json")
    doc = json.loads(out)
    assert rc == 0 and doc["n_per_variant"] == 1570
    assert doc["statement"].startswith("This experiment is powered at 80% to detect")
    assert doc["statement"].endswith("in any of 1 success metrics, controlling FWER at 5%.")


def test_plan_flags(capsys):
    rc, out, _ = run(capsys, "plan", "--delta", "0.1", "--S", "1", "--format", "json")
    assert rc == 0 and json.loads(out)["n_per_variant"] == 1570
    assert run(capsys, "plan", "--delta", "0.1")[0] == 2


def test_simulate_byte_identical(capsys):
    a = run(capsys, "simulate", "--config", "@table2", "--seed", "7", "--reps", "2000")
    b = run(capsys, "simulate", "--config", "@table2", "--seed", "7", "--reps", "2000")
    assert a[0] == 0 and a[1] == b[1]
    assert "# seed: 7" in a[1]
    c = run(capsys, "simulate", "--config", "@table2", "--seed", "8", "--reps", "2000")
    assert c[1] != a[1]


def test_simulate_needs_seed(capsys, tmp_path):
    cfg = json.loads(open(_data("table2.json")).read())
    del cfg["seed"]
    path = tmp_path / "t.json"
    path.write_text(json.dumps(cfg))
    rc, _, err = run(capsys, "simulate", "--config", str(path), "--reps", "10")
    assert rc == 2 and "seed" in err


def test_simulate_env_seed_ignored(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv("SHIPGATE_SEED", "1")
    monkeypatch.setenv("PYTHONHASHSEED", "1")
    assert run(capsys, "vr", "--draws", "1", "--n", "100")[0] == 2


def test_gst_bundled(capsys):
    rc, out, _ = run(capsys, "gst", "--schedules", "@schedules")
    rows = table(out)
    assert rc == 0 and {r["metric"] for r in rows} == {"minutes_played", "saves_per_user", "sessions"}
    assert "# budget_per_metric: 0.0166666666666667" in out


def test_gst_bonferroni_over_time_flag(capsys):
    _, rec, _ = run(capsys, "gst", "--fractions", "0.5,1")
    _, bot, _ = run(capsys, "gst", "--fractions", "0.5,1", "--bonferroni-over-time")
    zr = [float(r["z_bound"]) for r in table(rec)]
    zb = [float(r["z_bound"]) for r in table(bot)]
    assert all(b >= r for b, r in zip(zb, zr))
    assert run(capsys, "gst", "--fractions", "0.5,x")[0] == 2


def test_vr_command(capsys):
    rc, out, _ = run(capsys, "vr", "--rho0", "0.8", "--rho-eps", "0.2", "--format", "json")
    doc = json.loads(out)
    assert rc == 0 and doc["unadjusted_corr"] == pytest.approx(0.5) and doc["decorrelation_gap"] > 0


def test_vr_invalid(capsys):
    assert run(capsys, "vr", "--rho0", "1.5")[0] == 2


def test_corpus_generate_replay_roundtrip(capsys, tmp_path):
    path = tmp_path / "c.jsonl"
    rc, _, _ = run(capsys, "corpus", "generate", "--n-experiments", "150", "--seed", "5", "--out", str(path))
    assert rc == 0
    _, via_file, _ = run(capsys, "replay", str(path), "--format", "json")
    records = generate_corpus(CorpusConfig(n_experiments=150, seed=5))
    lib = json.loads(render(replay(records).rows(), "json"))["rows"]
    assert json.loads(via_file)["rows"] == lib


def test_replay_from_config_matches_file(capsys, tmp_path):
    path = tmp_path / "c.jsonl"
    run(capsys, "corpus", "generate", "--n-experiments", "120", "--seed", "3", "--out", str(path))
    a = table(run(capsys, "replay", str(path))[1])
    b = table(run(capsys, "replay", "--config", "@corpus_default", "--n-experiments", "120", "--seed", "3")[1])
    assert a == b


def test_replay_holm_gap_by_family(capsys):
    _, out, _ = run(capsys, "replay", "--config", "@corpus_default", "--family", "crossed", "--methods", "holm")
    (holm,) = [r for r in table(out) if r["method"] == "holm"]
    assert float(holm["success_only_pp"]) > float(holm["naive_pp"])


def test_replay_score_and_vr(capsys):
    rc, out, _ = run(capsys, "replay", "@corpus_sample", "--score")
    assert rc == 0 and "false_ship_rate" in out.splitlines()[5]
    rc, out, _ = run(capsys, "replay", "@corpus_sample", "--vr", "crossed")
    assert rc == 0 and "gap_delta_pp" in out


def test_replay_errors(capsys, tmp_path, monkeypatch):
    assert run(capsys, "replay")[0] == 2
    assert run(capsys, "replay", "-", stdin="", monkeypatch=monkeypatch)[0] == 2
    bad = tmp_path / "b.jsonl"
    bad.write_text("{}\n")
    rc, _, err = run(capsys, "replay", str(bad))
    assert rc == 2 and "line 1" in err


def test_argparse_errors_exit_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["adjust", "--method", "magic"])
    assert exc.value.code == 2


@pytest.mark.parametrize(
    "argv",
    [
        ["simulate", "--config", "@table2", "--seed", "3", "--reps", "3000"],
        ["simulate", "--config", "@table2", "--study", "sparse", "--seed", "3", "--reps", "3000"],
        ["gst", "--schedules", "@two_metric_schedules", "--check-paths", "3000", "--seed", "3"],
        ["vr", "--draws", "3", "--n", "2000", "--seed", "3"],
        ["corpus", "generate", "--n-experiments", "80", "--seed", "3"],
        ["replay", "--config", "@corpus_default", "--n-experiments", "200", "--seed", "3", "--vr", "crossed"],
    ],
)
def test_workers_do_not_change_output(capsys, argv):
    outs = {run(capsys, *argv, "--workers", str(w))[1] for w in (1, 3)}
    assert len(outs) == 1


def test_entry_point_subprocess():
    proc = subprocess.run(
        [sys.executable, "-m", "shipgate.cli", "decide", "@failing_guardrail"], capture_output=True, text=True
    )
    assert proc.returncode == 1 and json.loads(proc.stdout)["ship"] is False


def test_help_lists_commands():
    proc = subprocess.run([sys.executable, "-m", "shipgate.cli", "--help"], capture_output=True, text=True)
    for cmd in ("adjust", "decide", "plan", "gst", "simulate", "vr", "corpus", "replay"):
        assert cmd in proc.stdout


def test_provenance_config_hash_changes_with_input(capsys, monkeypatch):
    a = run(capsys, "adjust", stdin="0.01 0.2", monkeypatch=monkeypatch)[1]
    b = run(capsys, "adjust", stdin="0.01 0.3", monkeypatch=monkeypatch)[1]
    ha = [ln for ln in a.splitlines() if ln.startswith("# config_hash")]
    hb = [ln for ln in b.splitlines() if ln.startswith("# config_hash")]
    assert ha != hb and Provenance("x", None).as_dict()["seed"] is None


def _data(name):
    from importlib import resources

    return str(resources.files("shipgate") / "data" / name)
