import csv
import io
import json

import pytest

from radar_pho import cli
from radar_pho import config as C
from radar_pho.pipeline import MissingArtifact, ProvenanceError, run_stage


def _tiny(n=150, **extra):
    d = {"seed": 1, "features_from": "oracle",
         "scenarios": {f"SBS{i}": {"n_samples": n} for i in range(1, 7)},
         "fl": {"max_rounds": 2, "stopping": False},
         "training": {"local_epochs": 2, "personal_epochs": 2},
         "demo": {"n_tracks": 3}}
    d.update(extra)
    return d


def _write(tmp_path, d, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(d))
    return p


def test_unknown_keys_reported_per_field(tmp_path, capsys):
    p = _write(tmp_path, {"seed": 0, "colour": 1, "fl": {"rounds": 3}, "scenarios": {"SBS1": {"hieght": 2}}})
    assert cli.main(["generate", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    for field in ("colour: unknown key", "fl.rounds: unknown key", "scenarios.SBS1.hieght: unknown key"):
        assert field in err


def test_bad_values_reported(tmp_path):
    with pytest.raises(C.ConfigError) as ei:
        C.from_dict({"seed": "x", "training": {"lr": "fast"}, "pho": {"p_shift": {"SBS1": 1.5}},
                     "scenarios": {"SBS1": {"block_ratio": 2.0}}})
    msg = str(ei.value)
    assert "seed" in msg and "training.lr" in msg and "pho.p_shift.SBS1" in msg and "scenarios.SBS1" in msg


def test_missing_upstream_names_stage(tmp_path, capsys):
    p = _write(tmp_path, _tiny())
    assert cli.main(["train-fl", "--config", str(p), "--out", str(tmp_path / "o")]) == 3
    assert "'dataset' stage" in capsys.readouterr().err


def test_dataset_sbs1_rows_and_ratio(tmp_path):
    cfg = C.from_dict({"features_from": "oracle", "scenarios": {"SBS1": {}},
                       "fl": {"clients": ["SBS1"], "new_clients": []}})
    store = run_stage("generate", cfg, tmp_path)
    run_stage("dataset", cfg, tmp_path)
    rows = list(csv.reader(io.StringIO(store.read_text("datasets/SBS1.csv"))))
    assert len(rows) - 1 == 10_000
    assert sum(int(r[10]) for r in rows[1:]) == 1000


def test_all_is_deterministic_and_sweep_shape(tmp_path):
    p = _write(tmp_path, _tiny())
    for out in ("a", "b"):
        assert cli.main(["all", "--config", str(p), "--out", str(tmp_path / out)]) == 0
    a = (tmp_path / "a/metrics/summary.json").read_bytes()
    assert a == (tmp_path / "b/metrics/summary.json").read_bytes()
    rows = list(csv.reader(open(tmp_path / "a/sweep_pshift.csv")))
    assert rows[0] == ["client", "0%", "2%", "4%", "6%", "8%", "10%"]
    assert [r[0] for r in rows[1:]] == [f"SBS{i}" for i in range(1, 7)]
    m = json.loads((tmp_path / "a/metrics/SBS1.json").read_text())
    for key in ("client", "p_shift", "s_pho", "false_ho_rate", "zeta_ms", "t_do_histogram",
                "mean_throughput_pho", "mean_throughput_reactive", "provenance"):
        assert key in m
    assert (tmp_path / "a/metrics/tdo_cdf_SBS1.csv").read_text().startswith("offset_pct,cdf")
    assert (tmp_path / "a/traces/two_sbs_pho.csv").exists()
    assert not list((tmp_path / "a").rglob(".*.json.*"))       # no leftover temp files


def test_mixed_provenance_refused(tmp_path):
    cfg = C.from_dict(_tiny())
    run_stage("generate", cfg, tmp_path)
    run_stage("dataset", cfg, tmp_path)
    other = C.with_overrides(cfg, seed=99)
    with pytest.raises(ProvenanceError, match="rerun 'dataset'"):
        run_stage("train-fl", other, tmp_path)


def test_tampered_artifact_refused(tmp_path):
    cfg = C.from_dict(_tiny())
    store = run_stage("generate", cfg, tmp_path)
    (tmp_path / "scenes/SBS1.json").write_text("{}")
    with pytest.raises(ProvenanceError, match="changed"):
        store.read("scenes/SBS1.json")


def test_overrides(tmp_path):
    cfg = C.from_dict(_tiny())
    o = C.with_overrides(cfg, seed=5, features_from="radar", p_shift=0.04)
    assert o.seed == 5 and o.features_from == "radar" and o.p_shift_for("SBS4") == 0.04
    assert o.config_hash() != cfg.config_hash()


def test_named_streams_independent():
    a = C.stream(0, "scene/SBS1").random(3)
    b = C.stream(0, "scene/SBS2").random(3)
    assert not (a == b).all()
    assert (a == C.stream(0, "scene/SBS1").random(3)).all()


def test_radar_path_stage(tmp_path):
    d = _tiny(n=40, features_from="radar")
    cfg = C.from_dict(d)
    run_stage("generate", cfg, tmp_path)
    with pytest.raises(MissingArtifact, match="'sense'"):
        run_stage("dataset", cfg, tmp_path)
    run_stage("sense", cfg, tmp_path)
    store = run_stage("dataset", cfg, tmp_path)
    assert store.read_text("datasets/SBS6.csv").count("\n") == 41
