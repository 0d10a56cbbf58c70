import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from regen_nca.analysis import HalfCut
from regen_nca.dense import DenseRuleConfig, init_genome, param_count, unpack
from regen_nca.evolution import (
    FitnessRecord,
    GaConfig,
    LocomotionTask,
    RegenTask,
    default_workers,
    ga_run,
)
from regen_nca.grid import VoxelType
from regen_nca.physics import SimConfig
from regen_nca.targets import embed, quadruped


def sphere(theta):
    return FitnessRecord(-float(theta @ theta))


def sphere_init(dim=10):
    return lambda r: r.normal(0.0, 1.0, dim)


def run_sphere(seed=0, **kw):
    cfg = GaConfig(population_size=50, generations=100, mutation_std=0.03, elite_count=1, seed=seed, **kw)
    return ga_run(cfg, sphere, sphere_init())


def test_sphere_function_improves_100x():
    res = run_sphere()
    curve = res.best_curve
    assert np.all(np.diff(curve) >= 0)
    assert abs(curve[-1]) * 100 <= abs(curve[0])


@given(st.integers(0, 50), st.integers(1, 3))
def test_best_so_far_is_monotone(seed, elites):
    cfg = GaConfig(population_size=12, generations=8, truncation_fraction=0.5, elite_count=elites, seed=seed)
    noisy = lambda th: FitnessRecord(float(np.sin(7 * th).sum()))
    res = ga_run(cfg, noisy, sphere_init(4))
    curve = res.best_curve
    assert np.all(np.diff(curve) >= 0)
    assert [h.best_so_far for h in res.history] == list(np.maximum.accumulate(curve))


def test_constant_fitness_keeps_elite():
    cfg = GaConfig(population_size=10, generations=5, seed=1)
    seen = []

    def cb(stats, genome):
        seen.append(genome.copy())

    res = ga_run(cfg, lambda th: FitnessRecord(1.0), sphere_init(3), on_generation=cb)
    assert all(h.best == 1.0 for h in res.history)
    assert all(np.array_equal(seen[0], g) for g in seen)


def test_ga_is_reproducible_and_genomes_finite():
    a, b = run_sphere(seed=3), run_sphere(seed=3)
    assert np.array_equal(a.best_curve, b.best_curve)
    assert np.array_equal(a.best_genome, b.best_genome)
    assert a.best_genome.shape == (10,) and np.all(np.isfinite(a.best_genome))


def test_ga_log_csv(tmp_path):
    cfg = GaConfig(population_size=6, generations=3)
    ga_run(cfg, sphere, sphere_init(2), log_path=tmp_path / "ga.csv")
    lines = (tmp_path / "ga.csv").read_text().splitlines()
    assert lines[0] == "gen,best,mean,p95,best_so_far,seconds" and len(lines) == 4


def _square(theta):
    return FitnessRecord(-float(theta @ theta))


def test_parallel_matches_serial():
    cfg = GaConfig(population_size=8, generations=3, seed=2)
    a = ga_run(cfg, _square, sphere_init(3))
    b = ga_run(cfg, _square, sphere_init(3), workers=2)
    assert np.array_equal(a.best_curve, b.best_curve)


def test_config_validation():
    with pytest.raises(ValueError):
        GaConfig(population_size=10, elite_count=3, truncation_fraction=0.2)
    with pytest.raises(ValueError):
        GaConfig(mutation_std=0.0)
    assert GaConfig(population_size=50).n_parents == 10


def test_workers_env(monkeypatch):
    monkeypatch.setenv("REGEN_NCA_WORKERS", "3")
    assert default_workers() == 3
    monkeypatch.setenv("REGEN_NCA_WORKERS", "x")
    with pytest.raises(ValueError):
        default_workers()


def test_fitness_must_be_finite():
    with pytest.raises(ValueError):
        FitnessRecord(float("nan"))


def _constant_rule(config, type_code, alpha_logit):
    """Genome whose output ignores its input: fixed type and alpha everywhere."""
    g = np.zeros(param_count(config))
    w = unpack(config, g)
    w["b_out"][:5] = -5.0
    w["b_out"][type_code] = 5.0
    w["b_out"][5] = alpha_logit
    return g


def test_empty_robot_scores_zero():
    task = LocomotionTask.planar(7)
    rec = task(_constant_rule(task.rule, VoxelType.EMPTY, 5.0))
    assert rec.fitness == 0.0 and rec.voxels == 0


def test_single_passive_voxel_costs_lambda_in_3d():
    task = LocomotionTask.solid(5, growth_steps=0, sim=SimConfig(duration=0.05))
    rec = task(init_genome(task.rule, np.random.default_rng(0)))
    assert rec.voxels == 1 and rec.distance == 0.0
    assert rec.fitness == pytest.approx(-task.voxel_cost)


def test_planar_protocol_runs_ten_cycles():
    task = LocomotionTask.planar(7)
    assert task.sim.cycles == pytest.approx(10) and task.dims == (7, 7, 1) and task.seed == (3, 3, 0)


def test_locomotion_evaluation_is_deterministic():
    task = LocomotionTask.planar(7)
    g = init_genome(task.rule, np.random.default_rng(4))
    assert task(g).fitness == task(g).fitness


def test_regen_identity_target_scores_full_marks():
    t = quadruped()
    task = RegenTask.from_damage(t, HalfCut("left"))
    task = RegenTask(t, task.damaged.with_cells(task.damaged.cells), growth_steps=0)
    # zero growth steps: fitness is the damaged body's own similarity
    assert task(np.zeros(param_count(task.rule))).fitness == 333
    intact = RegenTask(t, RegenTask.from_damage(t).damaged.with_cells(
        np.stack([t, (t != 0)], -1).astype(float)), growth_steps=0)
    assert intact(np.zeros(param_count(intact.rule))).fitness == t.size


def test_regen_all_empty_counting_oracle():
    t = quadruped()
    task = RegenTask.from_damage(t, HalfCut("left"))
    rec = task(_constant_rule(task.rule, VoxelType.EMPTY, -5.0))
    assert rec.fitness == t.size - np.count_nonzero(t)
    assert 0 <= rec.fitness <= task.total


def test_regen_on_embedded_target_uses_729_cells():
    t = embed(quadruped(), (9, 9, 9))
    assert t.shape == (9, 9, 9) and np.count_nonzero(t) == np.count_nonzero(quadruped())
    assert np.array_equal(t[1:8, 1:8, 1:8], quadruped())
    task = RegenTask.from_damage(t, HalfCut("left"))
    assert task.total == 729
    assert task(_constant_rule(task.rule, VoxelType.EMPTY, -5.0)).fitness == 729 - np.count_nonzero(t)


def test_embed_rejects_smaller_grid():
    with pytest.raises(ValueError):
        embed(quadruped(), (5, 9, 9))
