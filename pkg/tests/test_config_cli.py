"""Config schema and CLI end-to-end tests on desk-scale instances."""

import json
import os

import numpy as np
import pytest

from airfc import ConfigError, make_synthetic_task, train_digital_fc
from airfc.cli import main
from airfc.config import ExperimentConfig
from airfc.serialization import save_weights, sha256_file


def test_default_config():
    cfg = ExperimentConfig.from_dict({})
    assert cfg.seed == 1234
    assert cfg.n_streams == 8
    assert cfg.n_tx == 8 and cfg.n_rx == 8
    assert cfg.p_max_tx == 8.0
    assert cfg.workers == 1
    assert cfg.make_plots is True
    assert cfg.data["sweep"]["trials"] == 20
    assert cfg.noise_variance() == pytest.approx(1.1943215116604957e-12,
                                                 rel=1e-12)


def test_preset_and_overrides():
    cfg = ExperimentConfig.from_dict({"defaults": "table1"})
    assert cfg.n_streams == 49
    assert cfg.p_max_tx == 49.0
    assert cfg.data["topology"] == {"n_groups": 5, "relays_per_group": 12}

    small = ExperimentConfig.from_dict(
        {"defaults": "table1", "system": {"n_streams": 16}})
    assert small.n_streams == 16
    assert small.p_max_tx == 49.0

    with pytest.raises(ConfigError, match="defaults"):
        ExperimentConfig.from_dict({"defaults": "table9"})


def test_unknown_keys_name_their_path():
    with pytest.raises(ConfigError, match="foo"):
        ExperimentConfig.from_dict({"foo": 1})
    with pytest.raises(ConfigError, match="ao.bogus"):
        ExperimentConfig.from_dict({"ao": {"bogus": 2}})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict([1, 2])  # type: ignore[arg-type]


def test_range_errors_name_their_field():
    cases = [
        ({"power": {"p_max_tx_w": 0}}, "power.p_max_tx_w"),
        ({"channel": {"rician_kappa": -1.0}}, "channel.rician_kappa"),
        ({"channel": {"relay_relay_los": "maybe"}},
         "channel.relay_relay_los"),
        ({"task": {"n_classes": 10}}, "task.n_classes"),
        ({"sweep": {"n_groups": []}}, "sweep.n_groups"),
        ({"sweep": {"direct_link": [1]}}, "sweep.direct_link"),
        ({"ao": {"max_iters": 0}}, "ao.max_iters"),
        ({"channel": {"heights_m": [1.0, 2.0]}}, "channel.heights_m"),
    ]
    for raw, field_path in cases:
        with pytest.raises(ConfigError, match=field_path.replace(".", r"\.")):
            ExperimentConfig.from_dict(raw)


def test_pathloss_overrides():
    cfg = ExperimentConfig.from_dict(
        {"channel": {"pathloss_overrides": {"umi_nlos": [20.0, 30.0, 20.0],
                                            "effective_env_height": 0.5}}})
    table = cfg.pathloss_table()
    assert table.umi_nlos == (20.0, 30.0, 20.0)
    assert table.effective_env_height == 0.5
    assert table.umi_los_near == (32.4, 21.0, 20.0)

    with pytest.raises(ConfigError, match="not_a_field"):
        ExperimentConfig.from_dict(
            {"channel": {"pathloss_overrides": {"not_a_field": 1.0}}})
    with pytest.raises(ConfigError, match="umi_nlos"):
        ExperimentConfig.from_dict(
            {"channel": {"pathloss_overrides": {"umi_nlos": [1.0, 2.0]}}})


def test_semantic_hash_scope():
    base = ExperimentConfig.from_dict({}).semantic_hash()
    assert ExperimentConfig.from_dict({}).semantic_hash() == base
    assert ExperimentConfig.from_dict({"seed": 5}).semantic_hash() != base
    cosmetic = ExperimentConfig.from_dict(
        {"output_dir": "elsewhere", "workers": 4, "make_plots": False})
    assert cosmetic.semantic_hash() == base


def test_sweep_points_order():
    cfg = ExperimentConfig.from_dict({"sweep": {
        "n_groups": [1, 2], "relays_per_group": [4, 8],
        "direct_link": [False, True]}})
    points = cfg.sweep_points()
    assert len(points) == 8
    assert [(p.n_groups, p.relays_per_group, p.direct_link)
            for p in points[:4]] == [(1, 4, False), (1, 4, True),
                                     (1, 8, False), (1, 8, True)]
    assert points[-1].n_groups == 2 and points[-1].direct_link is True


def _write_config(tmp_path, name="config.json", **extra):
    doc = {
        "system": {"n_streams": 4},
        "topology": {"n_groups": 1, "relays_per_group": 4},
        "channel": {"d_max_m": 120.0},
        "task": {"n_classes": 2, "samples": 120},
        "ao": {"max_iters": 6},
        "sweep": {"n_groups": [1], "relays_per_group": [3], "trials": 1},
        "output_dir": str(tmp_path / "out"),
    }
    for key, value in extra.items():
        if isinstance(value, dict):
            doc.setdefault(key, {}).update(value)
        else:
            doc[key] = value
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def test_cli_validate(tmp_path, capsys):
    good = _write_config(tmp_path)
    assert main(["validate", "--config", good]) == 0
    assert "ok" in capsys.readouterr().out

    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"power": {"p_max_tx_w": -3}}))
    assert main(["validate", "--config", str(bad)]) == 2
    assert "power.p_max_tx_w" in capsys.readouterr().err

    assert main(["validate", "--config", str(tmp_path / "missing.json")]) == 2
    capsys.readouterr()


def test_cli_optimize_artifacts(tmp_path):
    cfg = _write_config(tmp_path)
    assert main(["optimize", "--config", cfg]) == 0
    out = tmp_path / "out"
    expected = {"channels.chset.json", "target.wmat.json", "trace.csv",
                "solution.json", "objective.json", "convergence.svg",
                "manifest.json"}
    assert {p.name for p in out.iterdir()} == expected

    with open(out / "objective.json") as fh:
        obj = json.load(fh)
    assert obj["feasible"] is True
    assert obj["max_power_ratio"] <= 1.0 + 1e-9
    assert obj["nmse"] >= 0.0
    assert 0.0 <= obj["ota_accuracy"] <= 1.0
    assert obj["iterations"] >= 1

    trace_lines = (out / "trace.csv").read_text().splitlines()
    assert trace_lines[0].startswith("iteration,")
    assert len(trace_lines) >= 3  # header, init point, first sweep

    with open(out / "manifest.json") as fh:
        manifest = json.load(fh)
    listed = {entry["path"] for entry in manifest["outputs"]}
    assert listed == expected - {"manifest.json"}
    for entry in manifest["outputs"]:
        assert sha256_file(str(out / entry["path"])) == entry["sha256"]
    assert manifest["base_seed"] == 1234


def test_cli_optimize_no_plots(tmp_path):
    cfg = _write_config(tmp_path)
    out = str(tmp_path / "alt")
    assert main(["optimize", "--config", cfg, "--out", out,
                 "--no-plots"]) == 0
    names = set(os.listdir(out))
    assert "convergence.svg" not in names
    assert "objective.json" in names


def test_cli_sweep_and_rerun_determinism(tmp_path, capsys):
    cfg = _write_config(tmp_path)
    out1 = str(tmp_path / "s1")
    out2 = str(tmp_path / "s2")
    assert main(["sweep", "--config", cfg, "--out", out1, "--no-plots"]) == 0
    assert main(["sweep", "--config", cfg, "--out", out2, "--no-plots",
                 "--workers", "2"]) == 0
    capsys.readouterr()

    with open(os.path.join(out1, "results.csv"), "rb") as fh:
        first = fh.read()
    with open(os.path.join(out2, "results.csv"), "rb") as fh:
        second = fh.read()
    assert first == second
    assert len(first.decode().splitlines()) == 2  # header + 1 trial

    with open(os.path.join(out1, "summary.json")) as fh:
        summary = json.load(fh)
    assert summary["points"][0]["n_trials"] == 1
    assert summary["points"][0]["n_failed"] == 0
    assert summary["points"][0]["std_accuracy"] == 0.0

    out3 = str(tmp_path / "s3")
    assert main(["sweep", "--config", cfg, "--out", out3, "--no-plots",
                 "--seed", "777"]) == 0
    capsys.readouterr()
    with open(os.path.join(out3, "summary.json")) as fh:
        reseeded = json.load(fh)
    assert reseeded["base_seed"] == 777
    assert reseeded["config_hash"] != summary["config_hash"]


def test_cli_external_weights(tmp_path, capsys):
    task = make_synthetic_task(4, 2, 120, 0.3, 5)
    baseline = train_digital_fc(task)
    wmat = str(tmp_path / "ext.wmat.json")
    save_weights(baseline.w, baseline.b, wmat, baseline.reported_accuracy)
    cfg = _write_config(tmp_path, task={"weights_file": wmat})
    assert main(["optimize", "--config", cfg]) == 0
    with open(tmp_path / "out" / "objective.json") as fh:
        obj = json.load(fh)
    assert obj["digital_accuracy"] == baseline.reported_accuracy
    capsys.readouterr()

    wrong = str(tmp_path / "wrong.wmat.json")
    small = np.eye(3, dtype=complex)
    save_weights(small, np.zeros(3, dtype=complex), wrong)
    cfg_bad = _write_config(tmp_path, name="bad_weights.json",
                            task={"weights_file": wrong})
    assert main(["optimize", "--config", cfg_bad]) == 2
    assert "weights_file" in capsys.readouterr().err
