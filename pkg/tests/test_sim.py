import csv

import numpy as np
import pytest

from clic.clcore import ConvergenceError
from clic.sim import (
    CandidateConfig,
    ScenarioConfig,
    TruthConfig,
    agreement_stats,
    penalty_quartiles,
    preset,
    run_scenario,
    write_replicates_csv,
)
from clic.sim import runner


def _small(**kw):
    args = dict(replicates=6, n=60)
    return preset("example2", **(args | kw))


def test_presets_build_and_validate():
    for name, kw in [
        ("example1", dict(beta="beta2", setting="iii")),
        ("example2", dict(sigma="Sigma1a")),
        ("example3", dict(label="Sigma3")),
        ("example4", dict(kind="mean-shift", label="Sigma1")),
    ]:
        cfg = preset(name, **kw)
        law = cfg.law()
        assert law.d == cfg.d
        assert len(cfg.models()) == len(cfg.candidates)


@pytest.mark.parametrize(
    "change",
    [
        dict(replicates=0),
        dict(criteria=["AIC", "HQIC"]),
        dict(criteria=["CLAIC"], schemes=["FULL"]),
        dict(criteria=["AIC"], schemes=["BCL"]),
        dict(penalty="bootstrap"),
        dict(candidates=[CandidateConfig("one", "exchangeable", [0, 1])]),
    ],
)
def test_config_validation(change):
    raw = _small().to_dict() | change
    raw["candidates"] = [c if isinstance(c, dict) else c.__dict__ for c in raw["candidates"]]
    with pytest.raises(ValueError):
        ScenarioConfig.from_dict(raw)


def test_unknown_preset():
    with pytest.raises(ValueError):
        preset("example9")


def test_toml_round_trip(tmp_path):
    cfg = preset("example4", kind="laplace", label="Sigma3")
    path = tmp_path / "cfg.toml"
    path.write_text(cfg.to_toml())
    back = ScenarioConfig.from_toml(path)
    assert back.to_dict() == cfg.to_dict()


def test_results_do_not_depend_on_worker_count():
    cfg = _small()
    one = run_scenario(cfg, workers=1)
    two = run_scenario(cfg, workers=2)
    for crit in cfg.criteria:
        assert np.array_equal(one.decisions(crit), two.decisions(crit))
    assert np.array_equal(one.penalties("BCL", 1), two.penalties("BCL", 1))


def test_replicates_are_seeded_individually():
    cfg = _small()
    full = run_scenario(cfg)
    part = run_scenario(cfg, replicates=3)
    assert np.array_equal(full.penalties("BCL", 0)[:3], part.penalties("BCL", 0))


def test_agreement_stats():
    t = np.array([[160, 19], [2, 19]])
    s = agreement_stats(t)
    assert s["agreement"] == pytest.approx(179 / 200)
    assert s["asymmetry"] == pytest.approx((2 - 19) / 200)
    ident = agreement_stats(np.diag([5, 7, 8]))
    assert ident == {"agreement": 1.0, "asymmetry": 0.0}
    with pytest.raises(ValueError):
        agreement_stats(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        agreement_stats(np.ones((2, 3)))


def test_penalty_quartiles():
    assert penalty_quartiles([4.0] * 10) == (4.0, 4.0)
    assert penalty_quartiles([1.0, 2.0, 3.0, 4.0, 5.0]) == (2.0, 4.0)
    with pytest.raises(ValueError):
        penalty_quartiles([1.0, 2.0, np.nan])


def test_output_files(tmp_path):
    table = run_scenario(_small(replicates=4))
    rep = tmp_path / "rep.csv"
    write_replicates_csv(table, rep)
    rows = list(csv.DictReader(rep.open()))
    assert list(rows[0]) == [
        "scenario",
        "replicate",
        "criterion",
        "scheme",
        "decision",
        "penalty_exchangeable",
        "penalty_unstructured",
        "logCL_exchangeable",
        "logCL_unstructured",
    ]
    assert len(rows) == 4 * len(table.criteria)
    assert {r["scheme"] for r in rows if r["criterion"] == "AIC"} == {"FULL"}
    assert float(rows[0]["penalty_exchangeable"]) == 4.0
    summ = tmp_path / "summ.csv"
    table.write_summary_csv(summ)
    srows = list(csv.DictReader(summ.open()))
    assert sum(int(r["count"]) for r in srows if r["criterion"] == "CLAIC") == 4
    d = table.to_dict()
    assert set(d["penalty_quartiles"]) == {"BCL"}


def test_failed_replicates_are_counted(monkeypatch, tmp_path):
    real = runner.fit
    calls = {"k": 0}

    def flaky(*args, **kw):
        calls["k"] += 1
        if calls["k"] == 3:
            raise ConvergenceError("stalled")
        return real(*args, **kw)

    monkeypatch.setattr(runner, "fit", flaky)
    table = run_scenario(_small(replicates=3))
    assert table.failures == 1
    assert len(table.ok) == 2
    assert table.counts("AIC").sum() == 2
    path = tmp_path / "rep.csv"
    write_replicates_csv(table, path)
    assert "FAILED" in path.read_text()


def test_truth_config_laws():
    law = TruthConfig(delta_label="Sigma4").law(500, 4)
    assert law.base.Sigma[0, 1] == pytest.approx(0.7)
    lmm = TruthConfig(family="lmm-exchangeable", effects="t").law(100, 4)
    assert lmm.effects == "t" and lmm.base.phi == pytest.approx(0.5)
