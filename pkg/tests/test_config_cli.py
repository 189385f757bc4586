import json
from pathlib import Path

import numpy as np
import pytest
from shapely.geometry import LineString, shape

from crosspriv.cli import main
from crosspriv.config import (RunConfig, build_env, dump_config, load_config, parse_config, tiny_config_path,
                              with_overrides)
from crosspriv.env import ConfigError, replay
from crosspriv.tensor import load_checkpoint

SMALL = """
[scenario]
vehicles = 2
rsus = 4
slots = 24
scenario_seed = 3

[train]
hidden = 16, 16
lr = 0.0003
iterations = 2
epochs = 1
minibatch = 16
denoise_steps = 2
eval_episodes = 2

[run]
seed = 5
"""


@pytest.fixture
def small_ini(tmp_path):
    path = tmp_path / "small.ini"
    path.write_text(SMALL)
    return path


def run(capsys, *argv):
    rc = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return rc, out, err


def test_round_trip(tmp_path):
    cfg = load_config(tiny_config_path())
    again = parse_config(dump_config(cfg), base_dir=cfg.base_dir)
    assert again == cfg
    assert parse_config(dump_config(RunConfig())) == RunConfig()


def test_overrides_and_defaults(small_ini):
    cfg = load_config(small_ini)
    assert cfg.seed == 5
    assert cfg.train.hidden == (16, 16)
    assert cfg.scenario.rsus == 4
    assert cfg.reward.function == "llm_refined"
    cfg2 = with_overrides(cfg, train={"lr": 1e-3}, seed=9)
    assert cfg2.train.lr == 1e-3 and cfg2.seed == 9 and cfg2.train.epochs == 1


@pytest.mark.parametrize("text", [
    "[scenario]\nvehicle = 2\n",
    "[nonsense]\na = 1\n",
    "[train]\nlr = fast\n",
    "[train]\nlr = -1\n",
    "[scenario]\nsource = carrier-pigeon\n",
    "[reward]\nq_max = 0\n",
    "[scenario]\nsource = real\ntraces = missing.csv\nservers = missing.csv\n",
    "[run]\nseed = 1\ncolour = red\n",
])
def test_bad_config_rejected(text):
    with pytest.raises(ConfigError):
        cfg = parse_config(text)
        cfg.reward.weights()


def test_print_defaults(capsys):
    rc, out, _ = run(capsys, "print-defaults")
    assert rc == 0
    assert parse_config(out) == RunConfig()
    for section in ("[scenario]", "[radio]", "[adversary]", "[reward]", "[train]", "[run]"):
        assert section in out


def test_missing_config_names_path(capsys, tmp_path):
    missing = tmp_path / "nowhere.ini"
    rc, _, err = run(capsys, "eval", "--config", missing, "--policy", "geo_i")
    assert rc != 0
    assert str(missing) in err


def test_malformed_config_is_an_error(capsys, tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text("[train]\nepochs = many\n")
    rc, _, err = run(capsys, "train", "--config", path, "--out", tmp_path / "o")
    assert rc == 2 and "epochs" in err


def test_learned_eval_needs_checkpoint(capsys, small_ini, tmp_path):
    rc, _, err = run(capsys, "eval", "--config", small_ini, "--out", tmp_path, "--policy", "lhdppo")
    assert rc == 2 and "checkpoint" in err


def test_geo_i_ignores_checkpoint_with_warning(capsys, small_ini, tmp_path):
    rc, out, err = run(capsys, "eval", "--config", small_ini, "--out", tmp_path, "--policy", "geo_i",
                       "--checkpoint", tmp_path / "whatever.npz")
    assert rc == 0
    assert "warning" in err and "ignored" in err
    assert json.loads(out)["policy"] == "geo_i"


def test_eval_replays_to_identical_records(capsys, small_ini, tmp_path):
    rc, out, _ = run(capsys, "eval", "--config", small_ini, "--out", tmp_path, "--policy", "random")
    assert rc == 0
    summary = json.loads((tmp_path / "summary_random.json").read_text())
    assert summary == json.loads(out)
    episodes = [json.loads(x) for x in (tmp_path / "eval_random.jsonl").read_text().splitlines()]
    assert summary["episodes"] == len(episodes) == 2
    assert summary["mean_utility"] == pytest.approx(np.mean([e["objective"] for e in episodes]))
    records = [json.loads(x) for x in (tmp_path / "steps_random.jsonl").read_text().splitlines()]
    assert len(records) == 2 * 24
    env = build_env(load_config(small_ini))
    for rec, again in replay(env, records):
        assert rec == again


def test_train_writes_files_deterministically(capsys, small_ini, tmp_path):
    outs = []
    for name in ("a", "b"):
        rc, _, _ = run(capsys, "train", "--config", small_ini, "--out", tmp_path / name)
        assert rc == 0
        outs.append(tmp_path / name)
    a, b = outs
    for f in ("config.ini", "metrics.jsonl"):
        assert (a / f).read_bytes() == (b / f).read_bytes()
    arr_a, meta_a = load_checkpoint(a / "checkpoint.npz")
    arr_b, meta_b = load_checkpoint(b / "checkpoint.npz")
    assert meta_a == meta_b
    for k in arr_a:
        np.testing.assert_array_equal(arr_a[k], arr_b[k])
    assert len((a / "metrics.jsonl").read_text().splitlines()) == 2
    assert load_config(a / "config.ini").train == load_config(small_ini).train

    rc, out, _ = run(capsys, "eval", "--config", small_ini, "--out", tmp_path / "ev", "--checkpoint",
                     a / "checkpoint.npz")
    assert rc == 0 and json.loads(out)["violations"] == 0
    rc, _, err = run(capsys, "eval", "--config", small_ini, "--out", tmp_path / "ev", "--policy", "ppo_relaxed",
                     "--checkpoint", a / "checkpoint.npz")
    assert rc == 2 and "lhdppo" in err


def test_seed_flag_changes_run(capsys, small_ini, tmp_path):
    run(capsys, "train", "--config", small_ini, "--out", tmp_path / "a")
    run(capsys, "train", "--config", small_ini, "--out", tmp_path / "b", "--seed", "6")
    assert (tmp_path / "a" / "metrics.jsonl").read_text() != (tmp_path / "b" / "metrics.jsonl").read_text()


def test_single_value_sweep_equals_train(capsys, small_ini, tmp_path):
    run(capsys, "train", "--config", small_ini, "--out", tmp_path / "train")
    rc, _, _ = run(capsys, "sweep", "--config", small_ini, "--out", tmp_path / "sweep", "--axis", "lr",
                   "--values", "0.0003")
    assert rc == 0
    sub = tmp_path / "sweep" / "lr=0.0003"
    assert (sub / "metrics.jsonl").read_bytes() == (tmp_path / "train" / "metrics.jsonl").read_bytes()


def test_sweep_writes_one_run_per_value(capsys, small_ini, tmp_path):
    rc, _, _ = run(capsys, "sweep", "--config", small_ini, "--out", tmp_path, "--axis", "denoise_steps",
                   "--values", "1,3")
    assert rc == 0
    dirs = sorted(p.name for p in tmp_path.iterdir() if p.is_dir())
    assert dirs == ["denoise_steps=1", "denoise_steps=3"]
    _, meta = load_checkpoint(tmp_path / "denoise_steps=3" / "checkpoint.npz")
    assert meta["policy"]["steps"] == 3


def test_intensity_sweep(capsys, small_ini, tmp_path):
    rc, out, _ = run(capsys, "sweep", "--config", small_ini, "--out", tmp_path, "--axis", "action_intensity",
                     "--values", "0,0.5,1")
    assert rc == 0
    assert sorted(p.name for p in tmp_path.iterdir() if p.is_dir()) == [
        "action_intensity=0", "action_intensity=0.5", "action_intensity=1"]
    report = json.loads((tmp_path / "credibility.json").read_text())
    assert len(report["levels"]) == 3
    assert set(json.loads(out)) == {"spearman_cross", "spearman_physical", "spearman_virtual"}


@pytest.mark.parametrize("values", ["1.5", "a,b", ""])
def test_intensity_sweep_rejects_bad_values(capsys, small_ini, tmp_path, values):
    rc, _, _ = run(capsys, "sweep", "--config", small_ini, "--out", tmp_path, "--axis", "action_intensity",
                   "--values", values)
    assert rc == 2


def _features(path):
    return [json.loads(x) for x in Path(path).read_text().splitlines()]


def test_trace_export_is_valid_geojson(capsys, small_ini, tmp_path):
    out = tmp_path / "trace.geojsonl"
    rc, _, _ = run(capsys, "trace-export", "--config", small_ini, "--out", out, "--policy", "random")
    assert rc == 0
    feats = _features(out)
    assert len(feats) == 24 * 2
    for f in feats:
        assert f["type"] == "Feature"
        geom = shape(f["geometry"])
        assert geom.is_valid
        assert len(geom.geoms) == len(f["properties"]["roles"])
    for vid in {f["properties"]["vehicle"] for f in feats}:
        ts = [f["properties"]["t"] for f in feats if f["properties"]["vehicle"] == vid]
        assert ts == list(range(24))


def test_zero_radius_trace_has_identical_polylines(capsys, small_ini, tmp_path):
    out = tmp_path / "trace.geojsonl"
    rc, _, _ = run(capsys, "trace-export", "--config", small_ini, "--out", out)
    assert rc == 0
    feats = _features(out)
    for vid in {f["properties"]["vehicle"] for f in feats}:
        mine = [shape(f["geometry"]).geoms for f in feats if f["properties"]["vehicle"] == vid]
        true_line = LineString([g[0] for g in mine])
        reported = LineString([g[1] for g in mine])
        assert true_line.is_valid and reported.is_valid
        assert true_line.equals_exact(reported, 0.0)
