"""Cell lattices, neighbourhood masks and the masked additive NCA step.

A grid is stored as a dense ``(X, Y, Z, D)`` array. 2D grids use ``Z == 1``.
Two layouts share the same container:

* ``conv``: ``D = k + 1 + hidden`` float channels. Channels ``[0, k)`` are
  type logits, channel ``k`` is aliveness, the rest are hidden.
* ``dense``: ``D = 2`` channels holding ``(type code, alpha)``.

Every function here treats out-of-bounds sites as dead (all-zero) cells.
"""

from __future__ import annotations

import enum
import io
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ALIVE_THRESHOLD = 0.1
NUM_TYPES = 5
GRID_FORMAT = "regen-nca-grid"
GRID_FORMAT_VERSION = 1


class GridShapeError(ValueError):
    """Raised when arrays, masks or grids disagree in shape or layout."""


class VoxelType(enum.IntEnum):
    EMPTY = 0
    SOFT = 1  # light blue, passive
    HARD = 2  # dark blue, passive "bone"
    MUSCLE_A = 3  # red, in phase with the drive signal
    MUSCLE_B = 4  # green, counter phase


VOXEL_CHARS = {
    VoxelType.EMPTY: ".",
    VoxelType.SOFT: "s",
    VoxelType.HARD: "h",
    VoxelType.MUSCLE_A: "a",
    VoxelType.MUSCLE_B: "b",
}
_CHAR_TO_TYPE = {c: int(t) for t, c in VOXEL_CHARS.items()}


@dataclass
class CellGrid:
    cells: np.ndarray
    variant: str = "conv"
    k: int = NUM_TYPES
    hidden: int = 10
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.cells.ndim != 4:
            raise GridShapeError(f"cells must be (X, Y, Z, D), got {self.cells.shape}")
        if self.variant not in ("conv", "dense"):
            raise GridShapeError(f"unknown variant {self.variant!r}")
        if self.variant == "dense":
            self.hidden = 0
        if self.cells.shape[-1] != self.state_dim:
            raise GridShapeError(
                f"{self.variant} grid expects D={self.state_dim}, got {self.cells.shape[-1]}"
            )

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.cells.shape[:3])

    @property
    def state_dim(self) -> int:
        return 2 if self.variant == "dense" else self.k + 1 + self.hidden

    @property
    def alive_channel(self) -> int:
        return 1 if self.variant == "dense" else self.k

    @property
    def is_2d(self) -> bool:
        return self.dims[2] == 1

    def copy(self) -> "CellGrid":
        return CellGrid(self.cells.copy(), self.variant, self.k, self.hidden, dict(self.meta))

    def with_cells(self, cells: np.ndarray) -> "CellGrid":
        return CellGrid(cells, self.variant, self.k, self.hidden, dict(self.meta))


def neighborhood_offsets(ndim: int = 3) -> np.ndarray:
    """Moore neighbourhood including the centre, as ``(n, 3)`` integer offsets."""
    if ndim == 2:
        offs = [(dx, dy, 0) for dx, dy in itertools.product((-1, 0, 1), repeat=2)]
    elif ndim == 3:
        offs = list(itertools.product((-1, 0, 1), repeat=3))
    else:
        raise ValueError("ndim must be 2 or 3")
    return np.array(offs, dtype=np.int64)


def max_pool3(field_: np.ndarray) -> np.ndarray:
    """3x3x3 max pool over the last three axes with zero padding (separable)."""
    out = field_
    for axis in range(field_.ndim - 3, field_.ndim):
        n = out.shape[axis]
        pad = [(0, 0)] * out.ndim
        pad[axis] = (1, 1)
        p = np.pad(out, pad)
        out = np.maximum(
            np.maximum(p.take(range(0, n), axis=axis), p.take(range(1, n + 1), axis=axis)),
            p.take(range(2, n + 2), axis=axis),
        )
    return out


def alive_mask_array(cells: np.ndarray, channel: int, threshold: float = ALIVE_THRESHOLD) -> np.ndarray:
    """Alive mask for arrays shaped ``(..., X, Y, Z, D)``."""
    return max_pool3(cells[..., channel]) >= threshold


def alive_mask(grid: CellGrid, threshold: float = ALIVE_THRESHOLD) -> np.ndarray:
    """1 where some cell in the Moore neighbourhood has aliveness >= threshold."""
    return alive_mask_array(grid.cells, grid.alive_channel, threshold)


def sample_update_mask(dims, p: float, rng: np.random.Generator) -> np.ndarray:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"update probability must lie in [0, 1], got {p}")
    return rng.random(dims) < p


def masked_additive_step(
    cells: np.ndarray, delta: np.ndarray, alive: np.ndarray, update: np.ndarray
) -> np.ndarray:
    """``h_t = a * (h_{t-1} + u * delta)`` for arrays shaped ``(..., X, Y, Z, D)``.

    ``alive`` must be computed from ``cells`` (the pre-update state).
    """
    if delta.shape != cells.shape:
        raise GridShapeError(f"delta shape {delta.shape} != grid shape {cells.shape}")
    if alive.shape != cells.shape[:-1] or update.shape != cells.shape[:-1]:
        raise GridShapeError("masks must match the grid's spatial shape")
    u = update[..., None].astype(cells.dtype)
    a = alive[..., None].astype(cells.dtype)
    return a * (cells + u * delta)


def step_grid(grid: CellGrid, delta: np.ndarray, update: np.ndarray) -> CellGrid:
    """Apply one masked step to a :class:`CellGrid`, computing the alive mask first."""
    a = alive_mask(grid)
    return grid.with_cells(masked_additive_step(grid.cells, delta, a, update))


def _check_pos(dims, pos) -> tuple[int, int, int]:
    pos = tuple(int(v) for v in pos)
    if len(pos) == 2:
        pos = pos + (0,)
    if len(pos) != 3 or any(not 0 <= p < d for p, d in zip(pos, dims)):
        raise IndexError(f"seed position {pos} outside grid {tuple(dims)}")
    return pos


def seed_grid(
    dims,
    seed_pos,
    variant: str = "conv",
    rng: np.random.Generator | None = None,
    k: int = NUM_TYPES,
    hidden: int = 10,
    dtype=np.float32,
) -> CellGrid:
    """A grid with a single soft, passive seed cell and everything else zero.

    The conv seed carries aliveness 1 and hidden channels drawn from U[0, 1].
    """
    dims = tuple(int(d) for d in dims)
    if len(dims) == 2:
        dims = dims + (1,)
    pos = _check_pos(dims, seed_pos)
    if variant == "dense":
        cells = np.zeros(dims + (2,), dtype=dtype)
        cells[pos] = (VoxelType.SOFT, 1.0)
        return CellGrid(cells, "dense", k=k, hidden=0, meta={"seed_pos": pos})
    if variant != "conv":
        raise GridShapeError(f"unknown variant {variant!r}")
    rng = np.random.default_rng() if rng is None else rng
    cells = np.zeros(dims + (k + 1 + hidden,), dtype=dtype)
    cells[pos + (VoxelType.SOFT,)] = 1.0
    cells[pos + (k,)] = 1.0
    cells[pos][k + 1 :] = rng.random(hidden)
    return CellGrid(cells, "conv", k=k, hidden=hidden, meta={"seed_pos": pos})


def decode_types_array(cells: np.ndarray, variant: str, k: int = NUM_TYPES) -> np.ndarray:
    """Voxel-type codes for ``(..., X, Y, Z, D)`` arrays."""
    if variant == "dense":
        types = np.rint(cells[..., 0]).astype(np.int8)
        return np.where(cells[..., 1] >= ALIVE_THRESHOLD, types, 0).astype(np.int8)
    types = np.argmax(cells[..., :k], axis=-1).astype(np.int8)
    return np.where(alive_mask_array(cells, k), types, 0).astype(np.int8)


def decode_types(grid: CellGrid) -> np.ndarray:
    """Per-cell :class:`VoxelType` codes; dead cells decode to ``EMPTY``.

    Conv grids use the argmax of the type channels (ties go to the lowest
    code) inside the alive mask. Dense grids use the stored code of cells
    whose own alpha passes the aliveness threshold.
    """
    return decode_types_array(grid.cells, grid.variant, grid.k)


def types_to_dense(types: np.ndarray, dtype=np.float32) -> CellGrid:
    """Dense-variant grid with alpha 1 on every non-empty voxel of ``types``."""
    types = np.asarray(types)
    if types.ndim == 2:
        types = types[:, :, None]
    cells = np.zeros(types.shape + (2,), dtype=dtype)
    cells[..., 0] = types
    cells[..., 1] = (types != VoxelType.EMPTY).astype(dtype)
    return CellGrid(cells, "dense", hidden=0)


# -- serialisation -----------------------------------------------------------


def grid_to_bytes(grid: CellGrid) -> bytes:
    header = {
        "format": GRID_FORMAT,
        "version": GRID_FORMAT_VERSION,
        "dims": list(grid.dims),
        "k": grid.k,
        "hidden": grid.hidden,
        "variant": grid.variant,
        "dtype": "<f4" if grid.cells.dtype == np.float32 else "<f8",
        "order": "x-fastest",
    }
    # (X, Y, Z, D) -> (Z, Y, X, D) so that x varies fastest in C order
    flat = np.ascontiguousarray(grid.cells.transpose(2, 1, 0, 3), dtype=header["dtype"])
    return json.dumps(header).encode() + b"\n" + flat.tobytes()


def grid_from_bytes(data: bytes) -> CellGrid:
    head, _, body = data.partition(b"\n")
    header = json.loads(head)
    if header.get("format") != GRID_FORMAT:
        raise GridShapeError("not a grid file")
    if header["version"] > GRID_FORMAT_VERSION:
        raise GridShapeError(f"unsupported grid version {header['version']}")
    X, Y, Z = header["dims"]
    D = 2 if header["variant"] == "dense" else header["k"] + 1 + header["hidden"]
    arr = np.frombuffer(body, dtype=header["dtype"]).reshape(Z, Y, X, D)
    cells = arr.transpose(2, 1, 0, 3).astype(np.dtype(header["dtype"]).newbyteorder("="))
    return CellGrid(cells, header["variant"], header["k"], header["hidden"])


def save_grid(grid: CellGrid, path) -> None:
    Path(path).write_bytes(grid_to_bytes(grid))


def load_grid(path) -> CellGrid:
    return grid_from_bytes(Path(path).read_bytes())


def layer_dump(types: np.ndarray) -> str:
    """One character per voxel, one block per z-slice, rows are y, columns x."""
    types = np.asarray(types)
    if types.ndim == 2:
        types = types[:, :, None]
    X, Y, Z = types.shape
    buf = io.StringIO()
    for z in range(Z):
        buf.write(f"z={z}\n")
        for y in range(Y):
            buf.write("".join(VOXEL_CHARS[VoxelType(int(types[x, y, z]))] for x in range(X)))
            buf.write("\n")
    return buf.getvalue()


def parse_layer_dump(text: str) -> np.ndarray:
    """Inverse of :func:`layer_dump`."""
    slices: list[list[str]] = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("z="):
            slices.append([])
        elif slices:
            slices[-1].append(line)
        else:
            raise ValueError("layer dump must start with a 'z=' header")
    if not slices:
        raise ValueError("empty layer dump")
    Y, X = len(slices[0]), len(slices[0][0])
    out = np.zeros((X, Y, len(slices)), dtype=np.int8)
    for z, rows in enumerate(slices):
        if len(rows) != Y or any(len(r) != X for r in rows):
            raise GridShapeError("ragged layer dump")
        for y, row in enumerate(rows):
            for x, ch in enumerate(row):
                out[x, y, z] = _CHAR_TO_TYPE[ch]
    return out
