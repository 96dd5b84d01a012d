import math
from dataclasses import replace

import numpy as np
import pytest

from shipgate.adjust import AdjustMethod, adjust_many
from shipgate.errors import ValidationError
from shipgate.kernel import CorrelationSpec
from shipgate.planning import fwer_inflation
from shipgate.sim_engine import (
    SimConfig,
    advantage_table,
    analytic_power_oracle,
    draw_noise,
    mc_se,
    pvalues_from_z,
    run_power_study,
    sparse_regime_fwer,
)

TABLE2 = SimConfig(seed=2024)


@pytest.fixture(scope="module")
def table2():
    return run_power_study(TABLE2, keep_replicates=True)


def test_mc_se():
    assert mc_se(0.5, 100) == 0.05
    assert mc_se(0.0, 100) == 0.0


def test_config_validation():
    with pytest.raises(ValidationError):
        SimConfig(k_nonnull=9)
    with pytest.raises(ValidationError):
        SimConfig(sidedness="left")
    with pytest.raises(ValidationError):
        SimConfig(deltas=(-0.1,))
    with pytest.raises(ValidationError):
        SimConfig.from_dict({"mystery": 1})


def test_config_roundtrip():
    cfg = SimConfig(corr=CorrelationSpec.block([4, 4], [0.95, 0.0]), methods=("bh", "holm"), seed=3)
    assert SimConfig.from_dict(cfg.to_dict()) == cfg


def test_odd_total_warns():
    with pytest.warns(UserWarning, match="odd"):
        draw_noise(SimConfig(n_total=1001, reps=5))


def test_table2_cells(table2):
    assert table2.cell("bonferroni", 0.10).power == pytest.approx(0.783, abs=0.02)
    assert table2.cell("bh", 0.10).power == pytest.approx(0.830, abs=0.02)
    assert table2.cell("hommel", 0.10).power == pytest.approx(0.802, abs=0.02)
    assert table2.cell("none", 0.0).fwer == pytest.approx(0.340, abs=0.015)
    assert table2.cell("bonferroni", 0.0).fwer == pytest.approx(0.051, abs=0.01)


def test_holm_equals_bonferroni_per_replication(table2):
    for d in TABLE2.deltas:
        np.testing.assert_array_equal(
            table2.replicates[(AdjustMethod.HOLM, d)], table2.replicates[(AdjustMethod.BONFERRONI, d)]
        )


def test_fwer_controlled_at_zero(table2):
    for m in (AdjustMethod.BONFERRONI, AdjustMethod.HOLM, AdjustMethod.HOMMEL, AdjustMethod.BY):
        c = table2.cell(m, 0.0)
        assert c.fwer <= 0.05 + 3 * c.fwer_se
    none = table2.cell("none", 0.0)
    assert abs(none.fwer - fwer_inflation(8, 0.05)) <= 3 * none.fwer_se


def test_power_monotone_in_delta(table2):
    for m in TABLE2.methods:
        p = [table2.cell(m, d).any_reject for d in TABLE2.deltas]
        assert all(b >= a for a, b in zip(p, p[1:]))


def test_method_ordering(table2):
    order = ["none", "bh", "hommel", "bonferroni", "by"]
    for d in TABLE2.deltas[1:]:
        cells = [table2.cell(m, d) for m in order]
        for hi, lo in zip(cells, cells[1:]):
            slack = 3 * math.hypot(hi.power_se, lo.power_se)
            assert hi.power >= lo.power - slack
        assert table2.cell("holm", d).power == table2.cell("bonferroni", d).power


def test_analytic_oracle_examples():
    cfg = replace(TABLE2, methods=("none", "bonferroni"))
    oracle = analytic_power_oracle(cfg)
    assert oracle.cell("bonferroni", 0.05).power == pytest.approx(0.301, abs=1e-3)
    assert oracle.cell("none", 0.0).fwer == pytest.approx(fwer_inflation(8, 0.05), abs=1e-14)


def test_mc_agrees_with_oracle(table2):
    oracle = analytic_power_oracle(replace(TABLE2, methods=("none", "bonferroni")))
    for m in ("none", "bonferroni"):
        for d in TABLE2.deltas:
            mc, ex = table2.cell(m, d), oracle.cell(m, d)
            value = "fwer" if d == 0 else "power"
            se = max(mc_se(getattr(ex, value), TABLE2.reps), 1e-4)
            assert abs(getattr(mc, value) - getattr(ex, value)) <= 3 * se


def test_oracle_limits():
    with pytest.raises(ValidationError):
        analytic_power_oracle(replace(TABLE2, corr=CorrelationSpec.equicorrelated(0.5)))
    with pytest.raises(ValidationError):
        analytic_power_oracle(replace(TABLE2, methods=("bh",)))


def test_common_random_numbers():
    cfg = replace(TABLE2, reps=500)
    a, b = run_power_study(cfg), run_power_study(cfg)
    assert a.rows() == b.rows()


def test_worker_count_does_not_change_results():
    cfg = replace(TABLE2, reps=700)
    np.testing.assert_array_equal(draw_noise(cfg, 1), draw_noise(cfg, 3))


def test_observation_draws_match_summary_distribution():
    cfg = SimConfig(m=3, n_total=200, reps=2_000, k_nonnull=0, draw="observations", seed=5)
    z = draw_noise(cfg)
    assert abs(z.mean()) < 0.05 and abs(z.std() - 1) < 0.05


def test_pvalues_from_z():
    assert pvalues_from_z(np.array([0.0]), "one")[0] == 0.5
    assert pvalues_from_z(np.array([-1.959964]), "two")[0] == pytest.approx(0.05, abs=1e-6)


def test_pivot_layout(table2):
    rows = table2.pivot()
    assert rows[0]["method"] == "none"
    assert set(rows[0]) == {"method", "delta=0", "delta=0.05", "delta=0.1", "delta=0.15", "delta=0.2"}


def test_table3_cells():
    tab = run_power_study(replace(TABLE2, corr=CorrelationSpec.equicorrelated(0.95), deltas=(0.0, 0.10)))
    assert tab.cell("bonferroni", 0.10).power == pytest.approx(0.266, abs=0.02)
    assert tab.cell("bh", 0.10).power == pytest.approx(0.396, abs=0.02)
    assert tab.cell("bonferroni", 0.0).fwer <= 0.05
    assert 0.02 <= tab.cell("bh", 0.0).fwer <= 0.05


def test_advantage_table():
    rows = {(r.k_nonnull, r.corr, r.method.value): r for r in advantage_table(base=TABLE2)}
    for corr in ("rho=0", "rho=0.95"):
        for m in ("hommel", "bh"):
            assert rows[(1, corr, m)].advantage <= 0.01
    assert 100 * rows[(4, "rho=0", "bh")].advantage == pytest.approx(3.4, abs=1.5)
    assert 100 * rows[(8, "rho=0.95", "bh")].advantage == pytest.approx(13.1, abs=2.0)


def test_advantage_is_paired():
    (row,) = [r for r in advantage_table((8,), methods=("bh",), base=replace(TABLE2, reps=400))
              if r.corr == "rho=0"]
    assert row.advantage == pytest.approx(row.power - row.baseline_power)
    assert row.advantage >= 0


@pytest.mark.slow
@pytest.mark.parametrize("m", [10, 100])
def test_sparse_regime(m):
    bh = sparse_regime_fwer(m, reps=20_000, seed=11, power_level="bonferroni")
    assert 0.07 <= bh.fwer <= 0.11
    bonf = sparse_regime_fwer(m, reps=20_000, seed=11, method="bonferroni", power_level="bonferroni")
    assert bonf.fwer <= 0.05 + 3 * bonf.fwer_se


def test_sparse_power_level_sets_ncp():
    r = sparse_regime_fwer(10, reps=2_000, seed=0, power_level="uncorrected")
    assert r.ncp == pytest.approx(1.644854 + 1.644854, abs=1e-5)
    strict = sparse_regime_fwer(10, reps=2_000, seed=0, power_level="bonferroni")
    assert strict.ncp > r.ncp and strict.power > r.power
    with pytest.raises(ValidationError):
        sparse_regime_fwer(10, reps=10, power_level="other")


def test_block_structure():
    cfg = replace(TABLE2, corr=CorrelationSpec.block([4, 4], [0.95, 0.0]), deltas=(0.10,), methods=("bonferroni",))
    assert run_power_study(cfg).cell("bonferroni", 0.10).power == pytest.approx(0.653, abs=0.02)


def test_adjust_many_consistency_with_engine():
    cfg = replace(TABLE2, reps=300, deltas=(0.1,), methods=("bh",))
    noise = draw_noise(cfg)
    p = pvalues_from_z(noise + 0.1 / cfg.se_diff, "one")
    expected = (adjust_many(p, "bh") < 0.05).any(axis=1).mean()
    assert run_power_study(cfg).cell("bh", 0.1).power == expected
