"""Loss, damage and pool-based training for the convolutional NCA."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .conv import (
    AdamConfig,
    AdamState,
    ConvParameters,
    DivergenceError,
    adam_step,
    conv_backward,
    conv_rollout,
    conv_forward_step,
)
from .grid import GridShapeError, VoxelType, alive_mask_array, decode_types_array, seed_grid

log = logging.getLogger(__name__)


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class LossTerms:
    total: float
    ce: float
    iou: float


class TargetSpec:
    """A frozen voxel-type field used as the training target."""

    def __init__(self, types: np.ndarray):
        types = np.asarray(types, dtype=np.int8)
        if types.ndim == 2:
            types = types[:, :, None]
        if types.ndim != 3:
            raise GridShapeError(f"target must be (X, Y, Z), got {types.shape}")
        if not np.any(types != VoxelType.EMPTY):
            raise ValueError("target has no non-empty voxels")
        if types.min() < 0 or types.max() >= len(VoxelType):
            raise ValueError("target contains unknown voxel codes")
        self.types = types
        self.body = types != VoxelType.EMPTY
        self.n_body = int(self.body.sum())
        self.n_empty = int(self.body.size - self.n_body)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.types.shape


def nca_loss(
    state: np.ndarray, target: TargetSpec, k: int = 5, iou_source: str = "alive"
) -> tuple[LossTerms, np.ndarray]:
    """Split cross-entropy plus soft IoU for one state, with its gradient.

    ``loss = 0.5 * CE + IOU``. CE averages the empty-target and the
    non-empty-target cells separately and weights the two means equally.
    ``IOU = 1 - sum(min(q, m)) / sum(max(q, m))`` where ``m`` is the target
    occupancy and ``q`` the predicted occupancy: the aliveness channel clamped
    to [0, 1] (``iou_source="alive"``) or the non-empty softmax mass
    ``1 - y[EMPTY]`` (``iou_source="softmax"``).

    Cells outside the alive mask are scored as they decode, i.e. as Empty:
    they have ``q = 0`` and, where the target is Empty, zero cross-entropy.
    A dead cell over a body voxel keeps the uniform-softmax penalty.
    """
    if state.shape[:3] != target.dims:
        raise GridShapeError(f"state dims {state.shape[:3]} != target dims {target.dims}")
    if iou_source not in ("alive", "softmax"):
        raise ValueError(f"unknown iou_source {iou_source!r}")
    logits = state[..., :k].astype(np.float64)
    y = _softmax(logits)
    tidx = target.types[..., None].astype(np.int64)
    onehot = np.zeros_like(y)
    np.put_along_axis(onehot, tidx, 1.0, axis=-1)
    logp = np.log(np.clip(np.take_along_axis(y, tidx, -1)[..., 0], 1e-300, None))
    body = target.body
    alive = alive_mask_array(state, k)
    scored = alive | body
    logp = np.where(scored, logp, 0.0)

    w = np.zeros(target.dims)
    ce = 0.0
    if target.n_empty:
        w[~body & alive] = 0.5 / target.n_empty
        ce += 0.5 * -logp[~body].mean()
    if target.n_body:
        w[body] = 0.5 / target.n_body
        ce += 0.5 * -logp[body].mean()

    if iou_source == "alive":
        raw = state[..., k].astype(np.float64)
        q = np.where(alive, np.clip(raw, 0.0, 1.0), 0.0)
    else:
        q = np.where(alive, 1.0 - y[..., VoxelType.EMPTY], 0.0)
    inter = q[body].sum()
    union = target.n_body + q[~body].sum()
    iou = 1.0 - inter / union
    total = 0.5 * ce + iou

    full = np.zeros(state.shape, dtype=np.float64)
    full[..., :k] = 0.5 * w[..., None] * (y - onehot)
    dq = np.where(body, -1.0 / union, inter / union**2) * alive
    if iou_source == "alive":
        full[..., k] = dq * ((raw > 0.0) & (raw < 1.0))
    else:
        # dq/dlogits = -y0 * (e0 - y)
        e0 = np.zeros(k)
        e0[VoxelType.EMPTY] = 1.0
        full[..., :k] += (dq * -y[..., VoxelType.EMPTY])[..., None] * (e0 - y)
    return LossTerms(float(total), float(ce), float(iou)), full.astype(state.dtype)


def loss_value(state: np.ndarray, target: TargetSpec, k: int = 5, iou_source: str = "alive") -> float:
    return nca_loss(state, target, k, iou_source)[0].total


def perfect_match(state: np.ndarray, target: TargetSpec, k: int = 5) -> bool:
    """The decoded morphology (alive-gated argmax) equals the target everywhere."""
    return bool(np.array_equal(decode_types_array(state, "conv", k), target.types))


def overflow_penalty(state: np.ndarray, bound: float) -> tuple[float, np.ndarray]:
    """Mean over cells of ``sum(relu(|x| - bound))`` across channels, with gradient.

    Keeps unsupervised hidden channels from drifting to huge values during
    long rollouts.
    """
    n_cells = int(np.prod(state.shape[:3]))
    excess = np.abs(state) - bound
    over = excess > 0
    value = float(excess[over].sum()) / n_cells
    grad = np.where(over, np.sign(state), 0.0) / n_cells
    return value, grad.astype(state.dtype)


def sphere_offsets(radius: float) -> np.ndarray:
    r = int(np.floor(radius))
    rng_ = np.arange(-r, r + 1)
    d = np.stack(np.meshgrid(rng_, rng_, rng_, indexing="ij"), -1).reshape(-1, 3)
    return d[(d**2).sum(1) <= radius**2 + 1e-9]


def sphere_mask(dims, center, radius: float) -> np.ndarray:
    dims = tuple(dims)
    if any(not 0 <= c < d for c, d in zip(center, dims)):
        raise IndexError(f"damage centre {tuple(center)} outside grid {dims}")
    grids = np.meshgrid(*(np.arange(d) for d in dims), indexing="ij")
    dist2 = sum((g - c) ** 2 for g, c in zip(grids, center))
    return dist2 <= radius**2 + 1e-9


def damage_sphere(state: np.ndarray, center, radius: float = 3, empty_channel: int = VoxelType.EMPTY) -> np.ndarray:
    """Zero every channel inside the ball and set the empty-type channel to one."""
    out = state.copy()
    mask = sphere_mask(state.shape[:3], center, radius)
    out[mask] = 0
    out[mask, empty_channel] = 1
    return out


@dataclass(frozen=True)
class TrainConfig:
    max_steps: int = 20000
    pool_size: int = 32
    batch_size: int = 5
    t_min: int = 48
    t_max: int = 64
    damage_radius: float = 3.0
    n_damaged: int = 2
    update_p: float = 0.5
    stop_at_zero: bool = True
    stop_loss: float = 1e-4
    stop_patience: int = 50
    normalize_grads: bool = True
    iou_source: str = "alive"
    adam: AdamConfig = field(default_factory=AdamConfig)
    seed_pos: tuple[int, int, int] = (3, 3, 3)
    log_every: int = 100
    overflow_weight: float = 1.0
    overflow_bound: float = 5.0
    lr_schedule: tuple[tuple[int, float], ...] = ()

    def lr_at(self, step: int) -> float:
        """Learning rate at ``step``: the base rate times the last scheduled factor reached."""
        factor = 1.0
        for start, f in sorted(self.lr_schedule):
            if step >= start:
                factor = f
        return self.adam.lr * factor

    def __post_init__(self):
        if self.t_min > self.t_max or self.t_min < 1:
            raise ValueError("need 1 <= t_min <= t_max")
        if self.damage_radius < 1:
            raise ValueError("damage radius must be >= 1")
        if self.batch_size > self.pool_size:
            raise ValueError("batch larger than pool")
        if self.n_damaged + 1 > self.batch_size:
            raise ValueError("batch too small for one reseed plus the damaged seeds")


class SeedPool:
    """Fixed-size pool of grown states with per-entry ages."""

    def __init__(self, states: np.ndarray):
        self.states = states
        self.ages = np.zeros(len(states), dtype=np.int64)

    @classmethod
    def from_seed(cls, make_seed: Callable[[], np.ndarray], size: int = 32) -> "SeedPool":
        return cls(np.stack([make_seed() for _ in range(size)]))

    def __len__(self) -> int:
        return len(self.states)

    def sample(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        idx = rng.choice(len(self), n, replace=False)
        return idx, self.states[idx].copy()

    def commit(self, idx: np.ndarray, states: np.ndarray, fresh: np.ndarray) -> None:
        self.states[idx] = states
        self.ages[idx] += 1
        self.ages[idx[fresh]] = 0


@dataclass
class TrainResult:
    params: ConvParameters
    adam: AdamState
    losses: list[float]
    steps: int
    converged: bool
    pool: SeedPool
    log_rows: list[dict]


def body_center(state: np.ndarray, rng: np.random.Generator, k: int = 5) -> tuple[int, int, int]:
    """Uniform point in the bounding box of the decoded non-empty voxels."""
    types = decode_types_array(state, "conv", k)
    occ = np.argwhere(types != VoxelType.EMPTY)
    dims = state.shape[:3]
    if len(occ) == 0:
        return tuple(int(rng.integers(0, d)) for d in dims)
    lo, hi = occ.min(0), occ.max(0)
    return tuple(int(rng.integers(a, b + 1)) for a, b in zip(lo, hi))


def _normalize(grads: list[np.ndarray]) -> list[np.ndarray]:
    return [g / (np.linalg.norm(g) + 1e-8) for g in grads]


def pool_train(
    params: ConvParameters,
    target: TargetSpec,
    config: TrainConfig,
    rng: np.random.Generator,
    adam: AdamState | None = None,
    log_path=None,
    on_step: Callable[[int, float], None] | None = None,
    start_step: int = 0,
) -> TrainResult:
    """Sample / reseed / damage / roll out / optimise, until converged or out of steps."""
    k = params.config.k
    hidden = params.config.hidden
    dims = target.dims
    dtype = params.dtype

    def make_seed():
        return seed_grid(dims, config.seed_pos, "conv", rng, k=k, hidden=hidden, dtype=dtype).cells

    pool = SeedPool.from_seed(make_seed, config.pool_size)
    adam = adam or AdamState.like(params.arrays())
    losses: list[float] = []
    rows: list[dict] = []
    below = 0
    converged = False
    writer = None
    fh = None
    if log_path is not None:
        fh = open(log_path, "w", newline="")
        writer = csv.DictWriter(fh, ["step", "loss", "ce", "iou", "overflow", "T", "damaged_cells", "seconds"])
        writer.writeheader()
    t0 = time.perf_counter()
    step = start_step
    try:
        while step < config.max_steps:
            idx, batch = pool.sample(config.batch_size, rng)
            pre = np.array([loss_value(s, target, k, config.iou_source) for s in batch])
            order = np.argsort(-pre, kind="stable")
            idx, batch = idx[order], batch[order]
            batch[0] = make_seed()
            damaged = 0
            for j in range(config.batch_size - config.n_damaged, config.batch_size):
                c = body_center(batch[j], rng, k)
                before = batch[j]
                batch[j] = damage_sphere(before, c, config.damage_radius)
                damaged += int(np.any(before != batch[j], axis=-1).sum())
            T = int(rng.integers(config.t_min, config.t_max + 1))
            final, tape = conv_rollout(params, batch, T, rng, config.update_p)
            grad_final = np.zeros_like(final)
            terms = []
            overflow = 0.0
            for b in range(len(final)):
                t, g = nca_loss(final[b], target, k, config.iou_source)
                terms.append(t)
                grad_final[b] = g
                if config.overflow_weight > 0:
                    ov, og = overflow_penalty(final[b], config.overflow_bound)
                    overflow += ov
                    grad_final[b] += config.overflow_weight * og
            total = sum(t.total for t in terms)
            if not np.isfinite(total + overflow):
                raise DivergenceError(f"non-finite loss at step {step}")
            grads = conv_backward(params, tape, grad_final)
            if config.normalize_grads:
                grads = _normalize(grads)
            hyper = replace(config.adam, lr=config.lr_at(step))
            adam_step(params.arrays(), grads, adam, hyper)
            fresh = np.zeros(len(idx), dtype=bool)
            fresh[0] = True
            pool.commit(idx, final, fresh)

            mean_loss = total / len(final)
            losses.append(mean_loss)
            row = {
                "step": step,
                "loss": mean_loss,
                "ce": float(np.mean([t.ce for t in terms])),
                "iou": float(np.mean([t.iou for t in terms])),
                "overflow": overflow / len(final),
                "T": T,
                "damaged_cells": damaged,
                "seconds": round(time.perf_counter() - t0, 3),
            }
            rows.append(row)
            if writer is not None:
                writer.writerow(row)
            if on_step is not None:
                on_step(step, mean_loss)
            if config.log_every and step % config.log_every == 0:
                log.info(
                    "step %d loss %.5f (ce %.4f iou %.4f overflow %.4f) T=%d",
                    step, mean_loss, row["ce"], row["iou"], row["overflow"], T,
                )
            step += 1
            below = below + 1 if mean_loss < config.stop_loss else 0
            if config.stop_at_zero and below >= config.stop_patience:
                converged = True
                break
    finally:
        if fh is not None:
            fh.close()
    return TrainResult(params, adam, losses, step, converged, pool, rows)


def regrow(
    params: ConvParameters, state: np.ndarray, steps: int, rng: np.random.Generator, p: float | None = None
) -> list[np.ndarray]:
    """Pure rollout from a (damaged) state; returns ``steps + 1`` states."""
    seq = [state]
    x = state
    for _ in range(steps):
        x, _ = conv_forward_step(params, x, rng, p)
        seq.append(x)
    return seq
