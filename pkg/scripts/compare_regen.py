"""Regrow a half-cut quadruped two ways and compare voxel similarity.

The evolutionary path evolves a second dense NCA that starts from the
damaged body; the differentiable path reuses a trained conv NCA checkpoint
(train one first with ``train_regen_desk.py``).

    python scripts/compare_regen.py --checkpoint runs/regen-desk/train/checkpoint.npz
"""

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from regen_nca.analysis import HalfCut, conv_recovery_suite
from regen_nca.conv import load_checkpoint
from regen_nca.evolution import evolve_regeneration
from regen_nca.grid import layer_dump
from regen_nca.presets import get_preset, override
from regen_nca.targets import embed, quadruped


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--checkpoint", required=True)
    ap.add_argument("--side", default="left")
    ap.add_argument("--preset", default="desk")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--generations", type=int)
    ap.add_argument("--out", default="runs/compare-regen")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    preset = get_preset(args.preset).regen
    target = quadruped()
    cut = HalfCut(args.side)

    params = load_checkpoint(args.checkpoint)["params"]
    reports, bodies = conv_recovery_suite(
        params, target, [cut], preset.grow_steps, preset.regrow_steps, rng=np.random.default_rng(args.seed)
    )

    ga_cfg = override(preset.evo, seed=args.seed, generations=args.generations)
    t0 = time.perf_counter()
    ga, task = evolve_regeneration(
        embed(target, (preset.evo_size,) * 3), cut, ga_cfg, rule=preset.evo_rule, growth_steps=preset.evo_growth_steps,
        log_path=out / "evolution_log.csv",
    )
    (out / "evolved_regrown.txt").write_text(layer_dump(task.regrow(ga.best_genome)))
    (out / "differentiable_regrown.txt").write_text(layer_dump(bodies[cut.name]))
    summary = {
        "damage": cut.name,
        "evolved_similarity": ga.best_record.similarity,
        "evolved_cells": task.total,
        "evolved_seconds": round(time.perf_counter() - t0, 1),
        "differentiable_similarity": reports[0].similarity_regrown,
        "damaged_similarity": reports[0].similarity_damaged,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
