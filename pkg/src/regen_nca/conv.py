"""Differentiable convolutional NCA with hand-written reverse mode.

The update rule is a 3x3x3 perception convolution followed by 1x1x1 layers,
all with ReLU except the final linear layer. Only the cells that are both
alive and selected by the update mask contribute a delta, so the forward and
backward passes gather exactly those rows into dense matrices and run the
layers as matmuls. Masks are recorded on the tape and treated as constants
during the backward pass.

States are arrays shaped ``(..., X, Y, Z, D)``; leading axes form a batch.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .grid import ALIVE_THRESHOLD, CellGrid, GridShapeError, alive_mask_array

CHECKPOINT_VERSION = 1


class DivergenceError(FloatingPointError):
    """Non-finite values appeared in a loss, gradient or state."""


@dataclass(frozen=True)
class ConvRuleConfig:
    k: int = 5
    hidden: int = 10
    widths: tuple[int, ...] = (64, 64)
    perception_factor: int = 3
    init_std: float = 0.1
    zero_final: bool = True
    update_p: float = 0.5

    @property
    def state_dim(self) -> int:
        return self.k + 1 + self.hidden

    @property
    def perception_dim(self) -> int:
        return self.perception_factor * self.state_dim

    def layer_shapes(self) -> list[tuple[int, int]]:
        dims = [27 * self.state_dim, self.perception_dim, *self.widths, self.state_dim]
        return list(zip(dims[:-1], dims[1:]))


@dataclass
class ConvParameters:
    """Weights ``(fan_in, fan_out)`` and biases for each layer.

    Layer 0 is the perception kernel; its rows are ordered ``offset * D +
    channel`` with offsets in ``itertools.product((-1, 0, 1), repeat=3)``
    order.
    """

    config: ConvRuleConfig
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def init(cls, config: ConvRuleConfig, rng: np.random.Generator, dtype=np.float32):
        ws, bs = [], []
        shapes = config.layer_shapes()
        for i, (fan_in, fan_out) in enumerate(shapes):
            std = 0.0 if config.zero_final and i == len(shapes) - 1 else config.init_std
            ws.append(rng.normal(0.0, std, (fan_in, fan_out)).astype(dtype))
            bs.append(rng.normal(0.0, std, fan_out).astype(dtype))
        return cls(config, ws, bs)

    @classmethod
    def zeros(cls, config: ConvRuleConfig, dtype=np.float32):
        shapes = config.layer_shapes()
        return cls(
            config,
            [np.zeros(s, dtype=dtype) for s in shapes],
            [np.zeros(s[1], dtype=dtype) for s in shapes],
        )

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @property
    def dtype(self):
        return self.weights[0].dtype

    def astype(self, dtype) -> "ConvParameters":
        return ConvParameters(
            self.config, [w.astype(dtype) for w in self.weights], [b.astype(dtype) for b in self.biases]
        )

    def copy(self) -> "ConvParameters":
        return self.astype(self.dtype)

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, vec: np.ndarray) -> "ConvParameters":
        arrays, i = [], 0
        for a in self.arrays():
            arrays.append(vec[i : i + a.size].reshape(a.shape).astype(a.dtype))
            i += a.size
        if i != vec.size:
            raise GridShapeError(f"flat vector has {vec.size} entries, expected {i}")
        return ConvParameters(self.config, arrays[0::2], arrays[1::2])

    @property
    def size(self) -> int:
        return sum(a.size for a in self.arrays())


_OFFSETS = np.array(list(itertools.product((-1, 0, 1), repeat=3)), dtype=np.int64)


class _Stencil:
    """Index arithmetic for gathering 3x3x3 neighbourhoods out of a padded batch."""

    def __init__(self, shape: tuple[int, ...]):
        *lead, X, Y, Z, D = shape
        self.lead = tuple(lead)
        self.spatial = (X, Y, Z)
        self.D = D
        self.padded_shape = (*lead, X + 2, Y + 2, Z + 2, D)
        Xp, Yp, Zp = X + 2, Y + 2, Z + 2
        self._strides = (Xp * Yp * Zp, Yp * Zp, Zp)
        self.offsets = _OFFSETS[:, 0] * Yp * Zp + _OFFSETS[:, 1] * Zp + _OFFSETS[:, 2]

    def pad(self, state: np.ndarray) -> np.ndarray:
        padded = np.zeros(self.padded_shape, dtype=state.dtype)
        padded[..., 1:-1, 1:-1, 1:-1, :] = state
        return padded.reshape(-1, self.D)

    def interior(self, padded_flat: np.ndarray) -> np.ndarray:
        return padded_flat.reshape(self.padded_shape)[..., 1:-1, 1:-1, 1:-1, :]

    def base(self, idx: np.ndarray) -> np.ndarray:
        X, Y, Z = self.spatial
        b, r = np.divmod(idx, X * Y * Z)
        x, r = np.divmod(r, Y * Z)
        y, z = np.divmod(r, Z)
        sb, sx, sy = self._strides
        return b * sb + (x + 1) * sx + (y + 1) * sy + (z + 1)

    def gather(self, padded_flat: np.ndarray, base: np.ndarray) -> np.ndarray:
        return padded_flat[base[:, None] + self.offsets[None, :]].reshape(len(base), -1)


@dataclass
class StepRecord:
    """What one step needs for the backward pass."""

    state: np.ndarray  # h_{t-1}
    alive: np.ndarray
    update: np.ndarray
    idx: np.ndarray  # flat indices of alive & updated cells
    acts: list[np.ndarray]  # post-ReLU activations of the hidden layers


@dataclass
class Tape:
    steps: list[StepRecord] = field(default_factory=list)
    final: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.steps)


def _check_state(params: ConvParameters, state: np.ndarray) -> None:
    if state.ndim < 4 or state.shape[-1] != params.config.state_dim:
        raise GridShapeError(
            f"state shape {state.shape} incompatible with D={params.config.state_dim}"
        )


def _delta(params: ConvParameters, cols: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    acts = []
    z = cols
    n_layers = len(params.weights)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = z @ w
        z += b
        if i < n_layers - 1:
            np.maximum(z, 0, out=z)
            acts.append(z)
    return z, acts


def apply_step(
    params: ConvParameters, state: np.ndarray, alive: np.ndarray, update: np.ndarray
) -> tuple[np.ndarray, StepRecord]:
    """One masked additive step with given masks."""
    _check_state(params, state)
    D = state.shape[-1]
    stencil = _Stencil(state.shape)
    idx = np.flatnonzero(alive & update)
    out = state * alive[..., None].astype(state.dtype)
    acts: list[np.ndarray] = []
    if idx.size:
        cols = stencil.gather(stencil.pad(state), stencil.base(idx))
        delta, acts = _delta(params, cols)
        out.reshape(-1, D)[idx] += delta
    return out, StepRecord(state, alive, update, idx, acts)


def conv_forward_step(
    params: ConvParameters, state: np.ndarray, rng: np.random.Generator, p: float | None = None
) -> tuple[np.ndarray, StepRecord]:
    """Sample the update mask, compute the alive mask from ``state`` and step once."""
    _check_state(params, state)
    p = params.config.update_p if p is None else p
    alive = alive_mask_array(state, params.config.k, ALIVE_THRESHOLD)
    if p >= 1.0:
        update = np.ones(alive.shape, dtype=bool)
    else:
        update = rng.random(alive.shape) < p
    return apply_step(params, state, alive, update)


def conv_rollout(
    params: ConvParameters,
    state: np.ndarray,
    steps: int,
    rng: np.random.Generator,
    p: float | None = None,
    record: bool = True,
) -> tuple[np.ndarray, Tape]:
    if steps < 0:
        raise ValueError("steps must be non-negative")
    tape = Tape()
    x = state
    for _ in range(steps):
        x, rec = conv_forward_step(params, x, rng, p)
        if record:
            tape.steps.append(rec)
    tape.final = x
    return x, tape


def grow(params: ConvParameters, state, steps: int, rng: np.random.Generator, p: float | None = None):
    """Rollout returning every intermediate state (``steps + 1`` arrays)."""
    if isinstance(state, CellGrid):
        state = state.cells
    seq = [state]
    x = state
    for _ in range(steps):
        x, _ = conv_forward_step(params, x, rng, p)
        seq.append(x)
    return seq


def replay(params: ConvParameters, tape: Tape) -> np.ndarray:
    """Re-run a recorded rollout with its recorded masks."""
    if not tape.steps:
        return tape.final
    x = tape.steps[0].state
    for rec in tape.steps:
        x, _ = apply_step(params, x, rec.alive, rec.update)
    return x


def conv_backward(params: ConvParameters, tape: Tape, grad_final: np.ndarray) -> list[np.ndarray]:
    """Reverse-mode gradient of a scalar function of the rollout's final state.

    Returns gradients in :meth:`ConvParameters.arrays` order.
    """
    if tape.final is None or grad_final.shape != tape.final.shape:
        raise GridShapeError("upstream gradient does not match the tape's final state")
    gw = [np.zeros_like(w) for w in params.weights]
    gb = [np.zeros_like(b) for b in params.biases]
    g = grad_final.astype(params.dtype, copy=True)
    n_layers = len(params.weights)
    for rec in reversed(tape.steps):
        D = rec.state.shape[-1]
        g_prev = g * rec.alive[..., None].astype(g.dtype)
        if rec.idx.size:
            stencil = _Stencil(rec.state.shape)
            padded = stencil.pad(rec.state)
            base = stencil.base(rec.idx)
            cols = stencil.gather(padded, base)
            inputs = [cols, *rec.acts]
            gz = g.reshape(-1, D)[rec.idx]
            for i in range(n_layers - 1, -1, -1):
                gw[i] += inputs[i].T @ gz
                gb[i] += gz.sum(axis=0)
                gz = gz @ params.weights[i].T
                if i > 0:
                    gz *= inputs[i] > 0
            gcols = gz.reshape(len(base), 27, D)
            gpad = np.zeros_like(padded)
            for o, off in enumerate(stencil.offsets):
                # indices are unique within one offset, so fancy += is exact
                gpad[base + off] += gcols[:, o]
            g_prev += stencil.interior(gpad)
        g = g_prev
    out = []
    for w, b in zip(gw, gb):
        out += [w, b]
    return out


# -- optimiser ---------------------------------------------------------------


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def like(cls, arrays: list[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], 0)


def adam_step(
    params: list[np.ndarray], grads: list[np.ndarray], state: AdamState, hyper: AdamConfig = AdamConfig()
) -> list[np.ndarray]:
    """Bias-corrected Adam, updating ``params`` and ``state`` in place."""
    if len(params) != len(grads) or any(p.shape != g.shape for p, g in zip(params, grads)):
        raise GridShapeError("parameter and gradient shapes differ")
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient in parameter block {i} at Adam step {state.t + 1}")
    state.t += 1
    bc1 = 1.0 - hyper.beta1**state.t
    bc2 = 1.0 - hyper.beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= hyper.beta1
        m += (1.0 - hyper.beta1) * g
        v *= hyper.beta2
        v += (1.0 - hyper.beta2) * (g * g)
        p -= (hyper.lr * (m / bc1) / (np.sqrt(v / bc2) + hyper.eps)).astype(p.dtype)
    return params


# -- checkpoints -------------------------------------------------------------


def save_checkpoint(
    path,
    params: ConvParameters,
    adam: AdamState | None = None,
    step: int = 0,
    rng: np.random.Generator | None = None,
    extra: dict | None = None,
) -> None:
    meta = {
        "format": "regen-nca-conv-checkpoint",
        "version": CHECKPOINT_VERSION,
        "config": asdict(params.config),
        "step": step,
        "adam_t": adam.t if adam else 0,
        "rng_state": rng.bit_generator.state if rng is not None else None,
        "extra": extra or {},
    }
    arrays = {f"p{i}": a for i, a in enumerate(params.arrays())}
    if adam is not None:
        arrays.update({f"m{i}": a for i, a in enumerate(adam.m)})
        arrays.update({f"v{i}": a for i, a in enumerate(adam.v)})
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta)), **arrays)


def load_checkpoint(path) -> dict:
    """Returns ``params``, ``adam``, ``step``, ``rng`` and ``extra``."""
    with np.load(Path(path)) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("format") != "regen-nca-conv-checkpoint":
            raise GridShapeError(f"{path} is not a conv checkpoint")
        if meta["version"] > CHECKPOINT_VERSION:
            raise GridShapeError(f"unsupported checkpoint version {meta['version']}")
        cfg = meta["config"]
        cfg["widths"] = tuple(cfg["widths"])
        config = ConvRuleConfig(**cfg)
        n = 2 * len(config.layer_shapes())
        arrays = [data[f"p{i}"] for i in range(n)]
        params = ConvParameters(config, arrays[0::2], arrays[1::2])
        adam = None
        if "m0" in data:
            adam = AdamState([data[f"m{i}"] for i in range(n)], [data[f"v{i}"] for i in range(n)], meta["adam_t"])
    rng = None
    if meta["rng_state"] is not None:
        rng = np.random.default_rng()
        rng.bit_generator.state = meta["rng_state"]
    return {"params": params, "adam": adam, "step": meta["step"], "rng": rng, "extra": meta["extra"]}
