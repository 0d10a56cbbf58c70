"""Damage operators, voxel similarity and locomotion recovery reports."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .grid import CellGrid, VoxelType, decode_types
from .physics import SimConfig, distance_fitness, materialize, simulate
from .training import sphere_mask

# side -> (axis, which end of the bounding box)
HALF_CUT_SIDES = {
    "left": (0, "low"),
    "right": (0, "high"),
    "front": (1, "low"),
    "back": (1, "high"),
    "bottom": (2, "low"),
    "top": (2, "high"),
}


@dataclass(frozen=True)
class HalfCut:
    """Remove ``width`` slabs at one end of the reference body's bounding box.

    ``left``/``right`` cut along x, ``front``/``back`` along y and
    ``bottom``/``top`` along z. On 2D grids ``bottom``/``top`` cut along y.
    """

    side: str = "left"
    width: int = 3

    def __post_init__(self):
        if self.side not in HALF_CUT_SIDES:
            raise ValueError(f"unknown side {self.side!r}")
        if self.width < 1:
            raise ValueError("width must be at least 1")

    @property
    def name(self) -> str:
        return self.side


@dataclass(frozen=True)
class Sphere:
    """Remove every cell within ``radius`` of ``center`` (body centroid if None)."""

    radius: float = 3.0
    center: tuple[int, int, int] | None = None

    @property
    def name(self) -> str:
        return f"sphere_r{self.radius:g}"


DamageSpec = HalfCut | Sphere


def six_half_cuts(width: int = 3) -> list[HalfCut]:
    return [HalfCut(side, width) for side in HALF_CUT_SIDES]


def body_bbox(types: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    occ = np.argwhere(np.asarray(types) != VoxelType.EMPTY)
    if len(occ) == 0:
        raise ValueError("reference morphology is empty")
    return occ.min(axis=0), occ.max(axis=0)


def body_centroid(types: np.ndarray) -> tuple[int, ...]:
    occ = np.argwhere(np.asarray(types) != VoxelType.EMPTY)
    if len(occ) == 0:
        raise ValueError("reference morphology is empty")
    return tuple(int(v) for v in np.rint(occ.mean(axis=0)))


def damage_region(dims, spec: DamageSpec, reference: np.ndarray) -> np.ndarray:
    """Boolean field of the cells a damage spec removes."""
    dims = tuple(dims)
    region = np.zeros(dims, dtype=bool)
    if isinstance(spec, HalfCut):
        axis, end = HALF_CUT_SIDES[spec.side]
        if axis == 2 and dims[2] == 1:
            axis = 1
        if spec.width > dims[axis]:
            raise ValueError(f"cut width {spec.width} exceeds grid extent {dims[axis]}")
        lo, hi = body_bbox(reference)
        if end == "low":
            start, stop = lo[axis], min(lo[axis] + spec.width, dims[axis])
        else:
            start, stop = max(hi[axis] + 1 - spec.width, 0), hi[axis] + 1
        sl = [slice(None)] * 3
        sl[axis] = slice(start, stop)
        region[tuple(sl)] = True
        return region
    if isinstance(spec, Sphere):
        center = spec.center if spec.center is not None else body_centroid(reference)
        return sphere_mask(dims, center, spec.radius)
    raise TypeError(f"not a damage spec: {spec!r}")


def apply_damage(grid: CellGrid, spec: DamageSpec, reference: np.ndarray | None = None) -> CellGrid:
    """Return a damaged copy of ``grid``.

    ``reference`` is the morphology whose bounding box or centroid places
    the damage; it defaults to the grid's own decoded body. Removed conv
    cells become all-zero except for a saturated EMPTY logit, and removed
    dense cells become ``(EMPTY, alpha 0)``.
    """
    reference = decode_types(grid) if reference is None else np.asarray(reference)
    region = damage_region(grid.dims, spec, reference)
    cells = grid.cells.copy()
    cells[region] = 0
    if grid.variant == "conv":
        cells[region, VoxelType.EMPTY] = 1.0
    out = grid.with_cells(cells)
    out.meta = dict(grid.meta, damage=spec.name, damaged_cells=int(region.sum()))
    return out


def apply_damage_dense(
    grid: CellGrid, memories: np.ndarray | None, spec: DamageSpec, reference: np.ndarray | None = None
) -> tuple[CellGrid, np.ndarray | None]:
    """Dense-variant damage that also clears the recurrent memories of removed cells."""
    reference = decode_types(grid) if reference is None else np.asarray(reference)
    out = apply_damage(grid, spec, reference)
    if memories is not None:
        memories = memories.copy()
        memories[damage_region(grid.dims, spec, reference)] = 0.0
    return out, memories


def damage_types(types: np.ndarray, spec: DamageSpec, reference: np.ndarray | None = None) -> np.ndarray:
    types = np.asarray(types)
    reference = types if reference is None else reference
    out = types.copy()
    out[damage_region(types.shape, spec, reference)] = VoxelType.EMPTY
    return out


def _types(x) -> np.ndarray:
    return decode_types(x) if isinstance(x, CellGrid) else np.asarray(x)


def similarity(grid, target) -> tuple[int, int, float]:
    """``(matched cells, total cells, percent)``; empty cells count too."""
    a, b = _types(grid), _types(target)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    matched = int(np.count_nonzero(a == b))
    return matched, a.size, 100.0 * matched / a.size


@dataclass
class RecoveryReport:
    damage: str
    similarity_damaged: float
    similarity_regrown: float
    distance_original: float | None = None
    distance_damaged: float | None = None
    distance_regrown: float | None = None
    extra: dict = field(default_factory=dict)

    @property
    def retention_damaged(self) -> float | None:
        return _ratio(self.distance_damaged, self.distance_original)

    @property
    def retention_regrown(self) -> float | None:
        return _ratio(self.distance_regrown, self.distance_original)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["retention_damaged"] = self.retention_damaged
        d["retention_regrown"] = self.retention_regrown
        return d


def _ratio(a, b):
    if a is None or b is None or b == 0:
        return None
    return 100.0 * a / b


def _distance(types: np.ndarray, sim: SimConfig) -> float:
    model = materialize(types, config=sim)
    if model.empty:
        return 0.0
    return distance_fitness(simulate(model, sim))


def recovery_report(original, damaged, regrown, sim: SimConfig | None = None, damage: str = "") -> RecoveryReport:
    """Similarity of the damaged and regrown bodies to the original, plus
    (when ``sim`` is given) locomotion distance of all three."""
    o, d, r = _types(original), _types(damaged), _types(regrown)
    rep = RecoveryReport(damage, similarity(d, o)[2], similarity(r, o)[2])
    if sim is not None:
        rep.distance_original = _distance(o, sim)
        rep.distance_damaged = _distance(d, sim)
        rep.distance_regrown = _distance(r, sim)
    return rep


def reports_to_json(reports: list[RecoveryReport]) -> str:
    return json.dumps([r.to_dict() for r in reports], indent=2)


def reports_table(reports: list[RecoveryReport]) -> str:
    def f(v, pct=False):
        if v is None:
            return "-"
        return f"{v:.1f}%" if pct else f"{v:.2f}"

    head = f"{'damage':<12} {'sim dmg':>8} {'sim regrow':>10} {'dist':>7} {'dist dmg':>14} {'dist regrow':>14}"
    rows = [head, "-" * len(head)]
    for r in reports:
        rows.append(
            f"{r.damage:<12} {f(r.similarity_damaged, True):>8} {f(r.similarity_regrown, True):>10} "
            f"{f(r.distance_original):>7} "
            f"{f(r.distance_damaged) + ' (' + f(r.retention_damaged, True) + ')':>14} "
            f"{f(r.distance_regrown) + ' (' + f(r.retention_regrown, True) + ')':>14}"
        )
    return "\n".join(rows)


def conv_recovery_suite(
    params,
    target: np.ndarray,
    damages: list[DamageSpec] | None = None,
    grow_steps: int = 60,
    regrow_steps: int = 200,
    seed_pos=(3, 3, 3),
    rng: np.random.Generator | None = None,
    sim: SimConfig | None = None,
) -> tuple[list[RecoveryReport], dict[str, np.ndarray]]:
    """Grow the body from a seed, then damage and regrow it once per spec.

    Damage is placed against ``target``. Returns the reports and the
    regrown morphologies keyed by damage name (plus ``"grown"``).
    """
    from .conv import grow as conv_grow
    from .grid import seed_grid

    rng = np.random.default_rng(0) if rng is None else rng
    damages = six_half_cuts() + [Sphere(3.0)] if damages is None else damages
    cfg = params.config
    seed = seed_grid(target.shape, seed_pos, "conv", rng, k=cfg.k, hidden=cfg.hidden, dtype=params.dtype)
    grown = CellGrid(conv_grow(params, seed, grow_steps, rng)[-1], "conv", cfg.k, cfg.hidden)
    out = {"grown": decode_types(grown)}
    reports = []
    for spec in damages:
        damaged = apply_damage(grown, spec, target)
        regrown = CellGrid(conv_grow(params, damaged, regrow_steps, rng)[-1], "conv", cfg.k, cfg.hidden)
        rep = recovery_report(target, damaged, regrown, sim, spec.name)
        rep.extra["damaged_cells"] = damaged.meta["damaged_cells"]
        reports.append(rep)
        out[spec.name] = decode_types(regrown)
    return reports, out
