"""Hand-built voxel morphologies used as desk-scale training targets."""

from __future__ import annotations

import numpy as np

from .grid import VoxelType


def quadruped(dims=(7, 7, 7), origin=(0, 0, 0)) -> np.ndarray:
    """41-voxel, four-material walker spanning all seven columns of each axis.

    z is up. A hard plus-shaped spine at z=3 with a hard 3x3 belly under its
    centre, a small soft plus on top and a two-voxel soft head. Four
    three-voxel legs hang from the spine tips: an in-phase muscle leg at
    x=0, a counter-phase one at x=6 and two soft legs on the y-axis, so it
    shuffles along x. The box centre (3, 3, 3) is a body voxel, so it
    doubles as the growth seed.
    """
    t = np.zeros(dims, dtype=np.int8)
    ox, oy, oz = origin
    c = 3
    t[ox : ox + 7, oy + c, oz + 3] = VoxelType.HARD
    t[ox + c, oy : oy + 7, oz + 3] = VoxelType.HARD
    t[ox + 2 : ox + 5, oy + 2 : oy + 5, oz + 2] = VoxelType.HARD
    t[ox + 2 : ox + 5, oy + c, oz + 4] = VoxelType.SOFT
    t[ox + c, oy + 2 : oy + 5, oz + 4] = VoxelType.SOFT
    t[ox + c, oy + c, oz + 5 : oz + 7] = VoxelType.SOFT
    for x, y, leg in (
        (0, c, VoxelType.MUSCLE_A),
        (6, c, VoxelType.MUSCLE_B),
        (c, 0, VoxelType.SOFT),
        (c, 6, VoxelType.SOFT),
    ):
        t[ox + x, oy + y, oz : oz + 3] = leg
    return t


def single_voxel(dims=(7, 7, 7), pos=(3, 3, 3), kind=VoxelType.SOFT) -> np.ndarray:
    t = np.zeros(dims, dtype=np.int8)
    t[tuple(pos)] = kind
    return t


def embed(types: np.ndarray, dims) -> np.ndarray:
    """Centre ``types`` in a larger all-empty grid of shape ``dims``."""
    types = np.asarray(types)
    dims = tuple(int(d) for d in dims)
    if len(dims) != types.ndim or any(d < s for d, s in zip(dims, types.shape)):
        raise ValueError(f"cannot embed {types.shape} in {dims}")
    pad = [((d - s) // 2, d - s - (d - s) // 2) for d, s in zip(dims, types.shape)]
    return np.pad(types, pad)


TARGETS = {"quadruped": quadruped, "single": single_voxel}
