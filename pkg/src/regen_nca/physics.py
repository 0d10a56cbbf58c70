"""Mass-spring voxel robots: a small, deterministic stand-in for Voxelyze.

One point mass sits at every voxel centre. Springs join every pair of
occupied voxels that touch by face (axial), edge or corner (shear). Muscle
voxels change size sinusoidally, red in phase and green in counter phase with
the global drive; a spring's rest length follows the mean size of its two
end voxels. Integration is semi-implicit Euler with gravity, spring damping,
and a rigid ground plane with impulse-based Coulomb friction.

Units: lengths in voxel edges, time in seconds, mass in voxel masses. With the
default gravity of 981 voxels/s^2 a voxel is 1 cm on a side.

Coordinates: 3D grids keep ``(x, y, z)`` with z up. 2D grids ``(X, Y, 1)``
are stood up in the x-z plane (grid y becomes height), one voxel deep.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import ndimage

from .grid import VoxelType


@dataclass(frozen=True)
class SimConfig:
    duration: float = 0.25
    frequency: float = 40.0
    amplitude: float = 0.14
    dt: float = 1.0 / 8000.0
    gravity: float = 981.0
    friction: float = 0.5
    damping: float = 0.2  # fraction of critical damping on each spring
    mass: float = 1.0
    stiffness_soft: float = 5.0e4
    stiffness_hard: float = 2.0e5
    stiffness_muscle: float = 1.0e5
    record_every: int = 8
    max_speed: float = 1.0e3

    def __post_init__(self):
        for name in ("duration", "frequency", "dt", "gravity", "mass", "stiffness_soft", "stiffness_hard", "stiffness_muscle"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.dt * self.frequency > 0.01:
            raise ValueError("need at least 100 integration steps per actuation cycle")

    @property
    def steps(self) -> int:
        return int(round(self.duration / self.dt))

    @property
    def cycles(self) -> float:
        return self.duration * self.frequency

    def stiffness(self, kind: int) -> float:
        if kind == VoxelType.SOFT:
            return self.stiffness_soft
        if kind == VoxelType.HARD:
            return self.stiffness_hard
        return self.stiffness_muscle


PLANAR_2D = SimConfig(duration=0.25)
SOLID_3D = SimConfig(duration=0.5)

_HALF_OFFSETS = np.array(
    [d for d in itertools.product((-1, 0, 1), repeat=3) if d > (0, 0, 0)], dtype=np.int64
)


@dataclass
class RobotModel:
    sites: np.ndarray  # (n, 3) grid coordinates of occupied voxels
    types: np.ndarray  # (n,) voxel type codes
    positions: np.ndarray  # (n, 3) world coordinates, z up
    springs: np.ndarray  # (m, 2) mass indices
    rest: np.ndarray  # (m,)
    stiffness: np.ndarray  # (m,)
    axial: np.ndarray  # (m,) bool, face neighbours
    phase: np.ndarray  # (n,) 0, pi, or nan for passive voxels
    meta: dict = field(default_factory=dict)

    @property
    def n_masses(self) -> int:
        return len(self.types)

    @property
    def n_springs(self) -> int:
        return len(self.springs)

    @property
    def empty(self) -> bool:
        return self.n_masses == 0

    def voxel_count(self) -> int:
        return self.n_masses

    def translated(self, offset) -> "RobotModel":
        off = np.asarray(offset, dtype=np.float64)
        return RobotModel(
            self.sites, self.types, self.positions + off, self.springs, self.rest,
            self.stiffness, self.axial, self.phase, dict(self.meta),
        )


def _component(occ: np.ndarray, seed_pos) -> np.ndarray:
    labels, n = ndimage.label(occ)  # default structure is face connectivity
    if n == 0:
        return occ
    if seed_pos is not None and occ[tuple(seed_pos)]:
        keep = labels[tuple(seed_pos)]
    else:
        sizes = np.bincount(labels.ravel())[1:]
        keep = int(np.argmax(sizes)) + 1
    return labels == keep


def materialize(types: np.ndarray, seed_pos=None, config: SimConfig = SimConfig()) -> RobotModel:
    """Turn a voxel-type field into a mass-spring robot.

    Only the face-connected component holding ``seed_pos`` is kept. When
    the seed site is empty (or no seed is given) the largest component is
    kept instead.
    """
    types = np.asarray(types)
    if types.ndim == 2:
        types = types[:, :, None]
    if seed_pos is not None and len(seed_pos) == 2:
        seed_pos = (*seed_pos, 0)
    occ = _component(types != VoxelType.EMPTY, seed_pos)
    sites = np.argwhere(occ).astype(np.int64)
    kinds = types[occ].astype(np.int8) if len(sites) else np.zeros(0, np.int8)
    planar = types.shape[2] == 1
    if planar:
        world = np.stack([sites[:, 0], np.zeros(len(sites), np.int64), sites[:, 1]], axis=1)
    else:
        world = sites.copy()
    if len(world):
        world[:, 2] -= world[:, 2].min()
    positions = world.astype(np.float64)

    index = {tuple(s): i for i, s in enumerate(world)}
    pairs, rest, stiff, axial = [], [], [], []
    ks = np.array([config.stiffness(int(t)) for t in kinds])
    for i, s in enumerate(world):
        for d in _HALF_OFFSETS:
            j = index.get((s[0] + d[0], s[1] + d[1], s[2] + d[2]))
            if j is None:
                continue
            pairs.append((i, j))
            rest.append(float(np.sqrt((d**2).sum())))
            stiff.append(2 * ks[i] * ks[j] / (ks[i] + ks[j]))
            axial.append(int(np.abs(d).sum()) == 1)
    phase = np.full(len(kinds), np.nan)
    phase[kinds == VoxelType.MUSCLE_A] = 0.0
    phase[kinds == VoxelType.MUSCLE_B] = np.pi
    return RobotModel(
        sites=sites,
        types=kinds,
        positions=positions,
        springs=np.array(pairs, dtype=np.int64).reshape(-1, 2),
        rest=np.array(rest, dtype=np.float64),
        stiffness=np.array(stiff, dtype=np.float64),
        axial=np.array(axial, dtype=bool),
        phase=phase,
        meta={"planar": planar},
    )


@dataclass
class SimResult:
    times: np.ndarray
    com: np.ndarray  # (n_records, 3)
    distance: float
    diverged: bool
    min_height: float
    kinetic_energy: float = 0.0  # at the end of the run

    @property
    def displacement(self) -> np.ndarray:
        return self.com[-1] - self.com[0]


@numba.njit(cache=True)
def _integrate(pos, vel, springs, rest0, k, c, amp, phase, n_steps, dt, freq, g, mu, mass, record_every, max_speed):
    n = pos.shape[0]
    m = springs.shape[0]
    n_rec = n_steps // record_every + 1
    com = np.zeros((n_rec, 3))
    min_h = np.inf
    force = np.zeros((n, 3))
    scale = np.ones(n)
    for d in range(3):
        com[0, d] = pos[:, d].mean()
    rec = 1
    two_pi_f = 2.0 * np.pi * freq
    for step in range(n_steps):
        t = step * dt
        for i in range(n):
            scale[i] = 1.0 + amp[i] * np.sin(two_pi_f * t + phase[i])
            force[i, 0] = 0.0
            force[i, 1] = 0.0
            force[i, 2] = -g * mass
        for s in range(m):
            i = springs[s, 0]
            j = springs[s, 1]
            dx = pos[j, 0] - pos[i, 0]
            dy = pos[j, 1] - pos[i, 1]
            dz = pos[j, 2] - pos[i, 2]
            length = np.sqrt(dx * dx + dy * dy + dz * dz)
            if length < 1e-12:
                continue
            ux = dx / length
            uy = dy / length
            uz = dz / length
            target = rest0[s] * 0.5 * (scale[i] + scale[j])
            rel = (vel[j, 0] - vel[i, 0]) * ux + (vel[j, 1] - vel[i, 1]) * uy + (vel[j, 2] - vel[i, 2]) * uz
            f = k[s] * (length - target) + c[s] * rel
            force[i, 0] += f * ux
            force[i, 1] += f * uy
            force[i, 2] += f * uz
            force[j, 0] -= f * ux
            force[j, 1] -= f * uy
            force[j, 2] -= f * uz
        diverged = False
        for i in range(n):
            vx = vel[i, 0] + dt * force[i, 0] / mass
            vy = vel[i, 1] + dt * force[i, 1] / mass
            vz = vel[i, 2] + dt * force[i, 2] / mass
            zp = pos[i, 2] + dt * vz
            if zp < 0.0:
                # land exactly on the ground; the normal impulse bounds friction
                vz_new = -pos[i, 2] / dt
                jn = vz_new - vz
                vz = vz_new
                vt = np.sqrt(vx * vx + vy * vy)
                if vt <= mu * jn:
                    vx = 0.0
                    vy = 0.0
                else:
                    red = 1.0 - mu * jn / vt
                    vx *= red
                    vy *= red
            vel[i, 0] = vx
            vel[i, 1] = vy
            vel[i, 2] = vz
            pos[i, 0] += dt * vx
            pos[i, 1] += dt * vy
            pos[i, 2] += dt * vz
            if pos[i, 2] < 0.0:
                pos[i, 2] = 0.0
            if pos[i, 2] < min_h:
                min_h = pos[i, 2]
            sp = vx * vx + vy * vy + vz * vz
            if not (sp <= max_speed * max_speed):
                diverged = True
        if diverged:
            return com[:rec], True, min_h
        if (step + 1) % record_every == 0:
            for d in range(3):
                com[rec, d] = pos[:, d].mean()
            rec += 1
    return com[:rec], False, min_h


def simulate(model: RobotModel, config: SimConfig = SimConfig(), rng=None) -> SimResult:
    """Run the robot on flat ground and report its centre-of-mass path.

    ``rng`` is accepted for interface symmetry; the simulation is
    deterministic.
    """
    if model.empty:
        raise ValueError("cannot simulate an empty robot")
    # integer horizontal shift: keeps the arithmetic identical under grid translation
    origin = np.floor(model.positions.min(axis=0))
    origin[2] = 0.0
    pos = np.ascontiguousarray(model.positions - origin)
    vel = np.zeros_like(pos)
    amp = np.where(np.isnan(model.phase), 0.0, config.amplitude)
    phase = np.nan_to_num(model.phase, nan=0.0)
    c = 2.0 * config.damping * np.sqrt(model.stiffness * config.mass)
    com, diverged, min_h = _integrate(
        pos, vel, model.springs, model.rest, model.stiffness, c, amp, phase,
        config.steps, config.dt, config.frequency, config.gravity, config.friction,
        config.mass, config.record_every, config.max_speed,
    )
    com = com + origin
    times = np.arange(len(com)) * config.dt * config.record_every
    ke = 0.5 * config.mass * float((vel**2).sum())
    if diverged or not np.all(np.isfinite(com)):
        return SimResult(times, com, 0.0, True, float(min_h), ke)
    d = com[-1, :2] - com[0, :2]
    return SimResult(times, com, float(np.hypot(d[0], d[1])), False, float(min_h), ke)


def distance_fitness(result: SimResult) -> float:
    """Planar centre-of-mass displacement in voxel lengths; 0 for diverged runs."""
    if result.diverged:
        return 0.0
    return float(result.distance)


def write_trajectory_csv(result: SimResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "com_x", "com_y", "com_z"])
        for t, (x, y, z) in zip(result.times, result.com):
            w.writerow([f"{t:.6f}", f"{x:.9f}", f"{y:.9f}", f"{z:.9f}"])


def write_voxel_list(model: RobotModel, path) -> None:
    """``x y z type`` per line, grid coordinates."""
    with open(path, "w") as fh:
        fh.write("# x y z type\n")
        for (x, y, z), t in zip(model.sites, model.types):
            fh.write(f"{x} {y} {z} {int(t)}\n")
