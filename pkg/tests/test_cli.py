import json

import numpy as np
import pytest

from regen_nca import cli
from regen_nca.conv import ConvParameters, ConvRuleConfig, save_checkpoint
from regen_nca.grid import layer_dump
from regen_nca.presets import PRESETS, get_preset


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_presets_resolve_to_documented_sizes():
    assert set(PRESETS) == {"desk", "paper-2d", "paper-3d", "paper-regen", "paper-diff"}
    p2 = get_preset("paper-2d").evolve("2d").ga
    assert (p2.population_size, p2.generations) == (300, 500)
    p3 = get_preset("paper-3d").evolve("3d").ga
    assert (p3.population_size, p3.generations, p3.truncation_fraction) == (100, 300, 0.2)
    pr = get_preset("paper-regen").regen.evo
    assert (pr.population_size, pr.generations) == (1000, 1000)
    assert get_preset("paper-diff").regen.train.max_steps == 20000
    assert get_preset("paper-diff").regen.regrow_steps == 200
    assert get_preset("desk").regen.grow_steps == 60


def test_evolve_smoke(tmp_path):
    out = tmp_path / "evo"
    assert run("evolve", "--population", 6, "--generations", 2, "--out", out, "--single-thread") == 0
    for name in ("config.json", "summary.json", "evolution_log.csv", "best_genome.bin", "best_morphology.txt"):
        assert (out / name).exists(), name
    assert (out / "checkpoints" / "gen0001.txt").exists()
    cfg = json.loads((out / "config.json").read_text())
    assert cfg["preset"] == "desk" and cfg["resolved"]["ga"]["population_size"] == 6
    assert "numpy" in cfg["versions"]


def test_evolve_metrics_are_reproducible(tmp_path):
    for name in ("a", "b"):
        assert run("evolve", "--population", 5, "--generations", 2, "--out", tmp_path / name, "--single-thread") == 0

    def metrics(d):
        rows = (tmp_path / d / "evolution_log.csv").read_text().splitlines()
        return [r.rsplit(",", 1)[0] for r in rows]  # drop the wall-clock column

    assert metrics("a") == metrics("b")
    assert (tmp_path / "a" / "best_genome.bin").read_bytes() == (tmp_path / "b" / "best_genome.bin").read_bytes()


def test_simulate_from_layer_dump(tmp_path):
    t = np.zeros((4, 3, 1), np.int8)
    t[:] = 1
    t[0] = 3
    t[3] = 4
    src = tmp_path / "robot.txt"
    src.write_text(layer_dump(t))
    out = tmp_path / "sim"
    assert run("simulate", "--grid", src, "--duration", 0.02, "--out", out) == 0
    assert (out / "trajectory.csv").read_text().startswith("t,com_x")
    assert json.loads((out / "summary.json").read_text())["voxels"] == 12


def test_grow_from_checkpoint(tmp_path):
    params = ConvParameters.init(ConvRuleConfig(), np.random.default_rng(0))
    save_checkpoint(tmp_path / "ck.npz", params)
    out = tmp_path / "grow"
    assert run("grow", "--checkpoint", tmp_path / "ck.npz", "--steps", 3, "--all-steps", "--out", out) == 0
    assert (out / "steps.txt").read_text().count("# step") == 4


def test_train_regen_and_damage_eval_smoke(tmp_path):
    out = tmp_path / "train"
    assert run("train-regen", "--max-steps", 2, "--checkpoint-every", 1, "--out", out) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["steps"] == 2 and (out / "train_log.csv").exists()
    ev = tmp_path / "eval"
    assert run("damage-eval", "--checkpoint", out / "checkpoint.npz", "--steps", 2, "--out", ev) == 0
    reports = json.loads((ev / "report.json").read_text())
    assert len(reports) == 6 and all("similarity_regrown" in r for r in reports)


def test_config_file_fills_unset_options(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"population": 4, "generations": 1, "seed": 3}))
    out = tmp_path / "evo"
    assert run("evolve", "--config", cfg, "--out", out, "--single-thread") == 0
    resolved = json.loads((out / "config.json").read_text())
    assert resolved["seed"] == 3 and resolved["resolved"]["ga"]["population_size"] == 4


@pytest.mark.parametrize(
    "argv",
    [
        ["evolve", "--preset", "nope"],
        ["simulate", "--grid", "/does/not/exist"],
        ["grow"],
        ["bogus-command"],
    ],
)
def test_config_errors_exit_2(argv, tmp_path):
    assert run(*argv, *([] if argv == ["bogus-command"] else ["--out", tmp_path / "x"])) == 2


def test_unknown_config_key_exit_2(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"populaton": 4}))
    assert run("evolve", "--config", cfg, "--out", tmp_path / "x") == 2


def test_divergence_exit_3(tmp_path, monkeypatch):
    from regen_nca import conv, training

    def boom(*a, **k):
        raise conv.DivergenceError("non-finite loss at step 0")

    monkeypatch.setattr(training, "pool_train", boom)
    out = tmp_path / "t"
    assert run("train-regen", "--max-steps", 1, "--out", out) == 3
    assert (out / "checkpoint_diverged.npz").exists()
