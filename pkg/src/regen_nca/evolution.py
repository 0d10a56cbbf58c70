"""Truncation-selection genetic algorithm and the evolutionary NCA protocols.

Genomes are flat float64 vectors. Each generation is sorted by fitness; the
best ``elite_count`` pass on unchanged (keeping their recorded fitness), and
the rest of the next population are Gaussian mutants of parents drawn
uniformly, with replacement, from the top ``truncation_fraction``.

Evaluation is deterministic: every genome develops with the same run-level
growth seed, so an elite would score the same again and is not re-evaluated.
That makes best-so-far fitness monotone by construction.
"""

from __future__ import annotations

import csv
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .analysis import DamageSpec, HalfCut, apply_damage, similarity
from .dense import DenseRule, DenseRuleConfig, dense_seed, grow, init_genome
from .grid import CellGrid, VoxelType, decode_types, types_to_dense
from .physics import PLANAR_2D, SOLID_3D, SimConfig, distance_fitness, materialize, simulate

log = logging.getLogger(__name__)

WORKERS_ENV = "REGEN_NCA_WORKERS"


@dataclass(frozen=True)
class GaConfig:
    population_size: int = 50
    generations: int = 100
    truncation_fraction: float = 0.2
    elite_count: int = 1
    mutation_std: float = 0.03
    seed: int = 0

    def __post_init__(self):
        if self.population_size < 1 or self.generations < 1:
            raise ValueError("population_size and generations must be positive")
        if not 0.0 < self.truncation_fraction <= 1.0:
            raise ValueError("truncation_fraction must be in (0, 1]")
        if not 0 < self.elite_count <= self.n_parents:
            raise ValueError("need 0 < elite_count <= truncation count")
        if self.mutation_std <= 0:
            raise ValueError("mutation_std must be positive")

    @property
    def n_parents(self) -> int:
        return min(self.population_size, max(1, int(round(self.truncation_fraction * self.population_size))))


@dataclass
class FitnessRecord:
    fitness: float
    genome_id: int = -1
    distance: float | None = None
    voxel_cost: float | None = None
    similarity: float | None = None
    voxels: int | None = None
    diverged: bool = False

    def __post_init__(self):
        if not np.isfinite(self.fitness):
            raise ValueError("fitness must be finite")


@dataclass
class GenerationStats:
    generation: int
    best: float
    mean: float
    p95: float
    best_so_far: float
    seconds: float


@dataclass
class GaResult:
    history: list[GenerationStats]
    best_genome: np.ndarray
    best_record: FitnessRecord
    fitness_history: list[np.ndarray] = field(default_factory=list)

    @property
    def best_curve(self) -> np.ndarray:
        return np.array([h.best for h in self.history])


def default_workers() -> int:
    """Worker count from ``REGEN_NCA_WORKERS`` (default 1)."""
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ValueError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from exc
    return max(1, n)


def _evaluate_all(evaluate, genomes: Sequence[np.ndarray], pool) -> list[FitnessRecord]:
    if pool is None:
        return [evaluate(g) for g in genomes]
    return list(pool.map(evaluate, genomes, chunksize=max(1, len(genomes) // 32)))


def ga_run(
    config: GaConfig,
    evaluate: Callable[[np.ndarray], FitnessRecord],
    init: Callable[[np.random.Generator], np.ndarray],
    log_path=None,
    workers: int = 1,
    on_generation: Callable[[GenerationStats, np.ndarray], None] | None = None,
) -> GaResult:
    """Run the GA; ``evaluate`` must be deterministic (and picklable when ``workers > 1``)."""
    rng = np.random.default_rng(config.seed)
    P, M, T = config.population_size, config.elite_count, config.n_parents
    pop = [np.asarray(init(rng), dtype=np.float64) for _ in range(P)]
    next_id = 0
    pool = ProcessPoolExecutor(workers) if workers > 1 else None
    fh = writer = None
    if log_path is not None:
        fh = open(log_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["gen", "best", "mean", "p95", "best_so_far", "seconds"])
    history: list[GenerationStats] = []
    fit_hist: list[np.ndarray] = []
    t0 = time.perf_counter()
    try:
        records = _evaluate_all(evaluate, pop, pool)
        for r in records:
            r.genome_id, next_id = next_id, next_id + 1
        for gen in range(config.generations):
            fit = np.array([r.fitness for r in records])
            order = np.argsort(-fit, kind="stable")
            pop = [pop[i] for i in order]
            records = [records[i] for i in order]
            fit = fit[order]
            best_so_far = max(fit[0], history[-1].best_so_far) if history else fit[0]
            stats = GenerationStats(
                gen, float(fit[0]), float(fit.mean()), float(np.percentile(fit, 95)),
                float(best_so_far), round(time.perf_counter() - t0, 3),
            )
            history.append(stats)
            fit_hist.append(fit)
            if writer is not None:
                writer.writerow([gen, stats.best, stats.mean, stats.p95, stats.best_so_far, stats.seconds])
                fh.flush()
            if on_generation is not None:
                on_generation(stats, pop[0])
            log.info("gen %d best %.4f mean %.4f", gen, stats.best, stats.mean)
            if gen == config.generations - 1:
                break
            parents = rng.integers(0, T, size=P - M)
            children = [pop[i] + config.mutation_std * rng.standard_normal(pop[i].shape) for i in parents]
            child_records = _evaluate_all(evaluate, children, pool)
            for r in child_records:
                r.genome_id, next_id = next_id, next_id + 1
            pop = pop[:M] + children
            records = records[:M] + child_records
    finally:
        if pool is not None:
            pool.shutdown()
        if fh is not None:
            fh.close()
    return GaResult(history, pop[0], records[0], fit_hist)


# -- locomotion --------------------------------------------------------------


@dataclass(frozen=True)
class LocomotionTask:
    """Grow a dense NCA from a seed, build the robot and measure how far it walks.

    2D fitness is distance; 3D fitness is distance minus ``voxel_cost`` per
    non-empty voxel. A rule that grows nothing scores 0.
    """

    protocol: str = "2d"
    dims: tuple[int, int, int] = (7, 7, 1)
    seed_pos: tuple[int, int, int] | None = None
    growth_steps: int = 10
    growth_seed: int = 0
    voxel_cost: float = 0.05
    rule: DenseRuleConfig = DenseRuleConfig()
    sim: SimConfig = PLANAR_2D

    def __post_init__(self):
        if self.protocol not in ("2d", "3d"):
            raise ValueError("protocol must be '2d' or '3d'")

    @classmethod
    def planar(cls, size: int = 7, **kw) -> "LocomotionTask":
        kw.setdefault("rule", DenseRuleConfig(9))
        kw.setdefault("sim", PLANAR_2D)
        return cls("2d", (size, size, 1), **kw)

    @classmethod
    def solid(cls, size: int = 9, **kw) -> "LocomotionTask":
        kw.setdefault("rule", DenseRuleConfig(27))
        kw.setdefault("sim", SOLID_3D)
        return cls("3d", (size, size, size), **kw)

    @property
    def seed(self) -> tuple[int, int, int]:
        if self.seed_pos is not None:
            return tuple(self.seed_pos)
        return (self.dims[0] // 2, self.dims[1] // 2, self.dims[2] // 2)

    def develop(self, genome: np.ndarray) -> np.ndarray:
        rule = DenseRule(self.rule, genome)
        seq = grow(rule, dense_seed(self.dims, self.seed), self.growth_steps, np.random.default_rng(self.growth_seed))
        return decode_types(seq[-1])

    def __call__(self, genome: np.ndarray) -> FitnessRecord:
        return evaluate_locomotion(genome, self)


def evaluate_locomotion(genome: np.ndarray, task: LocomotionTask) -> FitnessRecord:
    types = task.develop(genome)
    model = materialize(types, task.seed, task.sim)
    n_voxels = int(np.count_nonzero(types != VoxelType.EMPTY))
    if model.empty:
        return FitnessRecord(0.0, distance=0.0, voxel_cost=0.0, voxels=0)
    result = simulate(model, task.sim)
    dist = distance_fitness(result)
    cost = task.voxel_cost * n_voxels if task.protocol == "3d" else 0.0
    return FitnessRecord(dist - cost, distance=dist, voxel_cost=cost, voxels=n_voxels, diverged=result.diverged)


# -- regeneration by evolution ------------------------------------------------


@dataclass(frozen=True)
class RegenTask:
    """Grow a second dense NCA from a damaged body; fitness is the number of
    cells whose type matches the intact target."""

    target: np.ndarray
    damaged: CellGrid
    growth_steps: int = 10
    growth_seed: int = 0
    rule: DenseRuleConfig = DenseRuleConfig(27)

    @classmethod
    def from_damage(cls, target: np.ndarray, damage: DamageSpec = HalfCut("left"), **kw) -> "RegenTask":
        target = np.asarray(target)
        grid = types_to_dense(target, dtype=np.float64)
        damaged = apply_damage(grid, damage, target)
        ndim = 2 if target.ndim == 2 or target.shape[2] == 1 else 3
        kw.setdefault("rule", DenseRuleConfig(9 if ndim == 2 else 27))
        return cls(target, damaged, **kw)

    @property
    def total(self) -> int:
        return int(self.target.size)

    def regrow(self, genome: np.ndarray) -> np.ndarray:
        rule = DenseRule(self.rule, genome)
        seq = grow(rule, self.damaged, self.growth_steps, np.random.default_rng(self.growth_seed))
        return decode_types(seq[-1])

    def __call__(self, genome: np.ndarray) -> FitnessRecord:
        matched, total, pct = similarity(self.regrow(genome), self.target)
        return FitnessRecord(float(matched), similarity=pct)


def evolve_regeneration(
    target: np.ndarray,
    damage: DamageSpec = HalfCut("left"),
    config: GaConfig = GaConfig(population_size=1000, generations=1000, truncation_fraction=0.2),
    rule: DenseRuleConfig | None = None,
    growth_steps: int = 10,
    log_path=None,
    workers: int = 1,
) -> tuple[GaResult, RegenTask]:
    kw = {"growth_steps": growth_steps, "growth_seed": config.seed}
    if rule is not None:
        kw["rule"] = rule
    task = RegenTask.from_damage(target, damage, **kw)
    result = ga_run(config, task, lambda r: init_genome(task.rule, r), log_path, workers)
    return result, task
