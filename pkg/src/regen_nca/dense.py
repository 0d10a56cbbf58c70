"""Evolvable dense NCA rules: tanh MLP or LSTM cell over a Moore neighbourhood.

Each cell observes ``(type_code / 4, alpha)`` for every cell in its 3x3 (2D)
or 3x3x3 (3D) neighbourhood and emits five type logits plus one alpha. The
next type is the argmax, the next alpha is a sigmoid. The whole rule is one
flat float64 genome with this layout (row-major blocks, in order):

    feed-forward:  W_in (I, H), b_in (H), W_h (H, H), b_h (H), W_out (H, 6), b_out (6)
    recurrent:     W_in (I, H), b_in (H), W_x (H, 4H), W_r (H, 4H), b_g (4H), W_out (H, 6), b_out (6)

with ``I = 2 * neighbourhood_size`` and ``H = hidden_dim``. LSTM gate blocks
are ordered input, forget, output, candidate.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .grid import ALIVE_THRESHOLD, NUM_TYPES, CellGrid, GridShapeError, alive_mask_array, seed_grid

GENOME_FORMAT = "regen-nca-genome"
GENOME_FORMAT_VERSION = 1


@dataclass(frozen=True)
class DenseRuleConfig:
    neighborhood_size: int = 9
    hidden_dim: int = 64
    recurrent: bool = False
    update_p: float = 0.5
    init_std: float = 0.03  # same scale as one GA mutation step
    forget_bias: float = 1.0

    channels_per_neighbor = 2
    output_dim = NUM_TYPES + 1

    def __post_init__(self):
        if self.neighborhood_size not in (9, 27):
            raise ValueError("neighborhood_size must be 9 (2D) or 27 (3D)")
        if self.hidden_dim <= 0:
            raise ValueError("hidden_dim must be positive")
        if not 0.0 < self.update_p <= 1.0:
            raise ValueError("update_p must be in (0, 1]")

    @property
    def input_dim(self) -> int:
        return self.neighborhood_size * self.channels_per_neighbor

    @property
    def ndim(self) -> int:
        return 2 if self.neighborhood_size == 9 else 3

    def layer_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        i, h, o = self.input_dim, self.hidden_dim, self.output_dim
        shapes = [("W_in", (i, h)), ("b_in", (h,))]
        if self.recurrent:
            shapes += [("W_x", (h, 4 * h)), ("W_r", (h, 4 * h)), ("b_g", (4 * h,))]
        else:
            shapes += [("W_h", (h, h)), ("b_h", (h,))]
        shapes += [("W_out", (h, o)), ("b_out", (o,))]
        return shapes

    def hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def param_count(config: DenseRuleConfig) -> int:
    return int(sum(np.prod(s) for _, s in config.layer_shapes()))


def unpack(config: DenseRuleConfig, genome: np.ndarray) -> dict[str, np.ndarray]:
    genome = np.asarray(genome, dtype=np.float64)
    if genome.shape != (param_count(config),):
        raise GridShapeError(f"genome length {genome.shape} != {param_count(config)}")
    out, at = {}, 0
    for name, shape in config.layer_shapes():
        n = int(np.prod(shape))
        out[name] = genome[at : at + n].reshape(shape)
        at += n
    return out


def init_genome(config: DenseRuleConfig, rng: np.random.Generator) -> np.ndarray:
    genome = rng.normal(0.0, config.init_std, param_count(config))
    if config.recurrent:
        h = config.hidden_dim
        unpack(config, genome)["b_g"][h : 2 * h] = config.forget_bias
    return genome


def _offsets(ndim: int) -> np.ndarray:
    if ndim == 2:
        return np.array([(dx, dy, 0) for dx, dy in itertools.product((-1, 0, 1), repeat=2)])
    return np.array(list(itertools.product((-1, 0, 1), repeat=3)))


def observe(cells: np.ndarray, ndim: int, idx: np.ndarray) -> np.ndarray:
    """Neighbourhood observations ``(n, 2 * N)`` for cells at flat indices ``idx``."""
    dims = cells.shape[:3]
    feat = np.stack([cells[..., 0] / (NUM_TYPES - 1), cells[..., 1]], axis=-1)
    pz = 1 if ndim == 3 else 0
    padded = np.pad(feat, ((1, 1), (1, 1), (pz, pz), (0, 0)))
    x, y, z = np.unravel_index(idx, dims)
    cols = [padded[x + 1 + dx, y + 1 + dy, z + pz + dz] for dx, dy, dz in _offsets(ndim)]
    return np.concatenate(cols, axis=1)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def network(config: DenseRuleConfig, weights: dict, obs: np.ndarray, memory: np.ndarray | None):
    """Raw outputs ``(n, 6)`` and the next memory ``(n, 2H)`` (or None)."""
    h1 = np.tanh(obs @ weights["W_in"] + weights["b_in"])
    if config.recurrent:
        H = config.hidden_dim
        h_prev, c_prev = memory[:, :H], memory[:, H:]
        gates = h1 @ weights["W_x"] + h_prev @ weights["W_r"] + weights["b_g"]
        i, f, o = (_sigmoid(gates[:, k * H : (k + 1) * H]) for k in range(3))
        g = np.tanh(gates[:, 3 * H :])
        c = f * c_prev + i * g
        h2 = o * np.tanh(c)
        new_mem = np.concatenate([h2, c], axis=1)
    else:
        h2 = np.tanh(h1 @ weights["W_h"] + weights["b_h"])
        new_mem = None
    return h2 @ weights["W_out"] + weights["b_out"], new_mem


class DenseRule:
    """A genome bound to its configuration."""

    def __init__(self, config: DenseRuleConfig, genome: np.ndarray):
        self.config = config
        self.genome = np.asarray(genome, dtype=np.float64)
        self.weights = unpack(config, self.genome)

    def empty_memory(self, dims) -> np.ndarray | None:
        if not self.config.recurrent:
            return None
        return np.zeros(tuple(dims)[:3] + (2 * self.config.hidden_dim,))


def dense_forward(rule: DenseRule, grid: CellGrid, memories: np.ndarray | None, rng: np.random.Generator, p: float | None = None):
    """One development step; returns ``(next grid, next memories)``.

    Cells outside the pre-update alive region are zeroed (memories too).
    Inside it, a cell picked by the update mask takes the network's
    ``(argmax type, sigmoid alpha)``; the others keep their state.
    """
    if grid.variant != "dense":
        raise GridShapeError("dense_forward needs a dense-variant grid")
    cfg = rule.config
    if (grid.dims[2] == 1) != (cfg.ndim == 2):
        raise GridShapeError("neighbourhood size does not match the grid dimensionality")
    if cfg.recurrent and (memories is None or memories.shape[:3] != grid.dims):
        raise GridShapeError("recurrent rule needs memories shaped like the grid")
    p = cfg.update_p if p is None else p
    cells = grid.cells
    alive = alive_mask_array(cells, 1)
    update = rng.random(grid.dims) < p if p < 1 else np.ones(grid.dims, dtype=bool)
    active = alive & update
    idx = np.flatnonzero(active)
    out = np.zeros_like(cells)
    out[alive] = cells[alive]
    new_mem = None
    if cfg.recurrent:
        new_mem = np.zeros_like(memories)
        new_mem[alive] = memories[alive]
    if idx.size:
        obs = observe(cells, cfg.ndim, idx)
        mem_in = memories.reshape(-1, memories.shape[-1])[idx] if cfg.recurrent else None
        raw, mem_out = network(cfg, rule.weights, obs, mem_in)
        flat = out.reshape(-1, 2)
        flat[idx, 0] = np.argmax(raw[:, :NUM_TYPES], axis=1)
        flat[idx, 1] = _sigmoid(raw[:, NUM_TYPES])
        if cfg.recurrent:
            new_mem.reshape(-1, new_mem.shape[-1])[idx] = mem_out
    return grid.with_cells(out), new_mem


def grow(rule: DenseRule, seed: CellGrid, steps: int = 10, rng: np.random.Generator | None = None,
         memories: np.ndarray | None = None, p: float | None = None) -> list[CellGrid]:
    """All ``steps + 1`` grids of a development run, seed first."""
    if steps < 0:
        raise ValueError("steps must be non-negative")
    rng = np.random.default_rng(0) if rng is None else rng
    if memories is None:
        memories = rule.empty_memory(seed.dims)
    seq = [seed]
    grid = seed
    for _ in range(steps):
        grid, memories = dense_forward(rule, grid, memories, rng, p)
        seq.append(grid)
    return seq


def dense_seed(dims, seed_pos=None) -> CellGrid:
    dims = tuple(dims)
    if seed_pos is None:
        seed_pos = tuple(d // 2 for d in dims)
    return seed_grid(dims, seed_pos, "dense", dtype=np.float64)


# -- genome files ------------------------------------------------------------


def genome_to_bytes(config: DenseRuleConfig, genome: np.ndarray) -> bytes:
    genome = np.asarray(genome, dtype=np.float64)
    if genome.shape != (param_count(config),):
        raise GridShapeError("genome length does not match config")
    header = {
        "format": GENOME_FORMAT,
        "version": GENOME_FORMAT_VERSION,
        "config": asdict(config),
        "config_hash": config.hash(),
        "length": int(genome.size),
        "dtype": "<f8",
    }
    return json.dumps(header, sort_keys=True).encode() + b"\n" + genome.astype("<f8").tobytes()


def genome_from_bytes(data: bytes) -> tuple[DenseRuleConfig, np.ndarray]:
    head, _, body = data.partition(b"\n")
    header = json.loads(head)
    if header.get("format") != GENOME_FORMAT:
        raise ValueError("not a genome file")
    config = DenseRuleConfig(**header["config"])
    if config.hash() != header["config_hash"]:
        raise ValueError("genome config hash mismatch")
    genome = np.frombuffer(body, dtype="<f8").astype(np.float64)
    if genome.size != header["length"] or genome.size != param_count(config):
        raise ValueError("genome length mismatch")
    return config, genome


def save_genome(path, config: DenseRuleConfig, genome: np.ndarray) -> None:
    Path(path).write_bytes(genome_to_bytes(config, genome))


def load_genome(path) -> tuple[DenseRuleConfig, np.ndarray]:
    return genome_from_bytes(Path(path).read_bytes())


__all__ = [
    "ALIVE_THRESHOLD",
    "DenseRule",
    "DenseRuleConfig",
    "dense_forward",
    "dense_seed",
    "genome_from_bytes",
    "genome_to_bytes",
    "grow",
    "init_genome",
    "load_genome",
    "observe",
    "param_count",
    "save_genome",
    "unpack",
]
