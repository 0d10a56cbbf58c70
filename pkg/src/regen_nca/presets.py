"""Named experiment configurations, from quick desk runs to full-size runs."""

from __future__ import annotations

from dataclasses import dataclass, fields, is_dataclass, replace

from .conv import AdamConfig
from .dense import DenseRuleConfig
from .evolution import GaConfig
from .training import TrainConfig


@dataclass(frozen=True)
class EvolvePreset:
    protocol: str = "2d"
    size: int = 7
    ga: GaConfig = GaConfig(population_size=50, generations=100)
    recurrent: bool = False
    growth_steps: int = 10
    voxel_cost: float = 0.05


@dataclass(frozen=True)
class RegenPreset:
    target: str = "quadruped"
    size: int = 7
    train: TrainConfig = TrainConfig(max_steps=10000, stop_loss=1e-2, stop_patience=20, lr_schedule=((3000, 0.3), (6000, 0.1)))
    grow_steps: int = 60
    regrow_steps: int = 200
    evo: GaConfig = GaConfig(population_size=100, generations=200)
    evo_growth_steps: int = 10
    evo_size: int = 9  # the evolved regeneration rule works on this grid, target centred
    evo_rule: DenseRuleConfig = DenseRuleConfig(27, init_std=0.1)


@dataclass(frozen=True)
class Preset:
    name: str
    evolve_2d: EvolvePreset
    evolve_3d: EvolvePreset
    regen: RegenPreset
    notes: str = ""

    def evolve(self, protocol: str) -> EvolvePreset:
        if protocol == "2d":
            return self.evolve_2d
        if protocol == "3d":
            return self.evolve_3d
        raise ValueError(f"unknown protocol {protocol!r}")


PRESETS: dict[str, Preset] = {
    "desk": Preset(
        "desk",
        EvolvePreset("2d", 7, GaConfig(50, 100)),
        EvolvePreset("3d", 7, GaConfig(50, 100)),
        RegenPreset(),
        notes="laptop scale: minutes to an hour per command",
    ),
    "paper-2d": Preset(
        "paper-2d",
        EvolvePreset("2d", 7, GaConfig(300, 500)),
        EvolvePreset("3d", 9, GaConfig(100, 300)),
        RegenPreset(),
    ),
    "paper-3d": Preset(
        "paper-3d",
        EvolvePreset("2d", 7, GaConfig(300, 500)),
        EvolvePreset("3d", 9, GaConfig(100, 300, truncation_fraction=0.2)),
        RegenPreset(),
    ),
    "paper-regen": Preset(
        "paper-regen",
        EvolvePreset("2d", 7, GaConfig(300, 500)),
        EvolvePreset("3d", 9, GaConfig(100, 300)),
        RegenPreset(size=9, evo=GaConfig(1000, 1000, truncation_fraction=0.2)),
    ),
    "paper-diff": Preset(
        "paper-diff",
        EvolvePreset("2d", 7, GaConfig(300, 500)),
        EvolvePreset("3d", 9, GaConfig(100, 300)),
        RegenPreset(
            size=9,
            train=TrainConfig(max_steps=20000, seed_pos=(3, 3, 3), adam=AdamConfig(lr=1e-3)),
            grow_steps=60,
            regrow_steps=200,
        ),
    ),
}


def get_preset(name: str) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def to_jsonable(obj):
    if is_dataclass(obj):
        return {f.name: to_jsonable(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, dict):
        return {k: to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    return obj


def override(cfg, **changes):
    """``dataclasses.replace`` that ignores ``None`` values."""
    changes = {k: v for k, v in changes.items() if v is not None}
    return replace(cfg, **changes) if changes else cfg


__all__ = ["EvolvePreset", "PRESETS", "Preset", "RegenPreset", "get_preset", "override", "to_jsonable"]
