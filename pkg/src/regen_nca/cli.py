"""Command-line entry point: ``python -m regen_nca <command> ...``.

Every command writes into its own run directory, starting with
``config.json`` (the fully resolved configuration). Exit codes: 0 on
success, 2 for configuration or input errors, 3 when training diverges.
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import analysis, conv, dense, evolution, grid, physics, presets, targets, training

log = logging.getLogger("regen_nca")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


class ConfigError(ValueError):
    pass


# -- helpers -----------------------------------------------------------------


def _run_dir(args, command: str) -> Path:
    out = Path(args.out) if args.out else Path("runs") / f"{command}-{time.strftime('%Y%m%d-%H%M%S')}"
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_config(out: Path, command: str, args, resolved: dict) -> None:
    doc = {
        "command": command,
        "preset": args.preset,
        "seed": args.seed,
        "workers": _workers(args),
        "args": {k: v for k, v in vars(args).items() if k != "func"},
        "resolved": presets.to_jsonable(resolved),
        "versions": _versions(),
    }
    (out / "config.json").write_text(json.dumps(doc, indent=2, default=str))


def _versions() -> dict:
    import numba
    import scipy

    from . import __version__

    return {
        "regen_nca": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
    }


def _workers(args) -> int:
    return 1 if getattr(args, "single_thread", False) else evolution.default_workers()


def load_target(spec: str, size: int | None = None) -> np.ndarray:
    """A built-in target name or a path to a layer-dump text file."""
    if spec in targets.TARGETS:
        n = size or 7
        return targets.TARGETS[spec]((n, n, n))
    path = Path(spec)
    if not path.exists():
        raise ConfigError(f"unknown target {spec!r} (not a built-in name or a file)")
    return grid.parse_layer_dump(path.read_text())


def load_types(path: str) -> np.ndarray:
    """Voxel types from a grid file or a layer dump."""
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"no such file: {path}")
    data = p.read_bytes()
    if data.startswith(b"{"):
        return grid.decode_types(grid.grid_from_bytes(data))
    return grid.parse_layer_dump(data.decode())


def _save_types(out: Path, stem: str, types: np.ndarray) -> None:
    (out / f"{stem}.txt").write_text(grid.layer_dump(types))
    grid.save_grid(grid.types_to_dense(types), out / f"{stem}.grid")


# -- commands ----------------------------------------------------------------


def cmd_evolve(args) -> int:
    preset = presets.get_preset(args.preset).evolve(args.protocol)
    ga = presets.override(preset.ga, population_size=args.population, generations=args.generations, seed=args.seed)
    size = args.size or preset.size
    rule = dense.DenseRuleConfig(9 if args.protocol == "2d" else 27, recurrent=args.recurrent or preset.recurrent)
    if args.protocol == "2d":
        task = evolution.LocomotionTask.planar(size, rule=rule, growth_seed=args.seed, voxel_cost=preset.voxel_cost)
    else:
        task = evolution.LocomotionTask.solid(size, rule=rule, growth_seed=args.seed, voxel_cost=preset.voxel_cost)
    out = _run_dir(args, "evolve")
    _write_config(out, "evolve", args, {"ga": ga, "task": task})
    ckpt = out / "checkpoints"
    ckpt.mkdir(exist_ok=True)

    def on_generation(stats, genome):
        dense.save_genome(out / "best_genome.bin", rule, genome)
        dense.save_genome(ckpt / f"gen{stats.generation:04d}.bin", rule, genome)
        (ckpt / f"gen{stats.generation:04d}.txt").write_text(grid.layer_dump(task.develop(genome)))

    result = evolution.ga_run(
        ga, task, lambda r: dense.init_genome(rule, r), out / "evolution_log.csv", _workers(args), on_generation
    )
    types = task.develop(result.best_genome)
    _save_types(out, "best_morphology", types)
    model = physics.materialize(types, task.seed, task.sim)
    if not model.empty:
        sim = physics.simulate(model, task.sim)
        physics.write_trajectory_csv(sim, out / "best_trajectory.csv")
        physics.write_voxel_list(model, out / "best_voxels.txt")
    summary = {
        "best_fitness": result.best_record.fitness,
        "generation0_best": result.history[0].best,
        "distance": result.best_record.distance,
        "voxels": result.best_record.voxels,
        "generations": len(result.history),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary))
    return EXIT_OK


def cmd_train_regen(args) -> int:
    preset = presets.get_preset(args.preset).regen
    size = args.size or preset.size
    target = load_target(args.target or preset.target, size)
    train_cfg = preset.train
    if args.max_steps is not None:
        train_cfg = presets.override(train_cfg, max_steps=args.max_steps)
    if args.lr is not None:
        train_cfg = presets.override(train_cfg, adam=presets.override(train_cfg.adam, lr=args.lr))
    seed_pos = tuple(d // 2 for d in target.shape)
    train_cfg = presets.override(train_cfg, seed_pos=seed_pos)
    out = _run_dir(args, "train-regen")
    every = args.checkpoint_every
    _write_config(out, "train-regen", args, {"train": train_cfg, "rule": conv.ConvRuleConfig(), "dims": target.shape})
    (out / "target.txt").write_text(grid.layer_dump(target))
    rng = np.random.default_rng(args.seed)
    params = conv.ConvParameters.init(conv.ConvRuleConfig(), rng)
    extra = {"target": args.target or preset.target}

    def on_step(step, loss):
        if every and step and step % every == 0:
            conv.save_checkpoint(out / "checkpoint.npz", params, None, step, None, extra)

    try:
        res = training.pool_train(
            params, training.TargetSpec(target), train_cfg, rng, log_path=out / "train_log.csv", on_step=on_step
        )
    except conv.DivergenceError:
        # parameters are only touched after a finite step, so these are the last good ones
        conv.save_checkpoint(out / "checkpoint_diverged.npz", params, None, 0, rng, extra)
        raise
    conv.save_checkpoint(out / "checkpoint.npz", res.params, res.adam, res.steps, rng, extra)
    seed = grid.seed_grid(target.shape, seed_pos, "conv", rng)
    frames = conv.grow(res.params, seed, preset.grow_steps, rng)
    grown = grid.decode_types_array(frames[-1], "conv")
    _save_types(out, "grown", grown)
    with open(out / "growth_frames.txt", "w") as fh:
        for i, f in enumerate(frames):
            fh.write(f"# step {i}\n{grid.layer_dump(grid.decode_types_array(f, 'conv'))}\n")
    summary = {
        "steps": res.steps,
        "converged": res.converged,
        "final_loss": res.losses[-1] if res.losses else None,
        "growth_similarity": analysis.similarity(grown, target)[2],
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary))
    return EXIT_OK


def cmd_damage_eval(args) -> int:
    preset = presets.get_preset(args.preset).regen
    ck = conv.load_checkpoint(args.checkpoint)
    target = load_target(args.target or ck["extra"].get("target", preset.target), args.size or preset.size)
    out = _run_dir(args, "damage-eval")
    steps = args.steps or preset.regrow_steps
    sim = physics.SOLID_3D if args.locomotion else None
    _write_config(out, "damage-eval", args, {"regrow_steps": steps, "grow_steps": preset.grow_steps, "sim": sim})
    damages = analysis.six_half_cuts() + ([analysis.Sphere(args.sphere)] if args.sphere else [])
    reports, bodies = analysis.conv_recovery_suite(
        ck["params"], target, damages, grow_steps=preset.grow_steps, regrow_steps=steps,
        seed_pos=tuple(d // 2 for d in target.shape), rng=np.random.default_rng(args.seed), sim=sim,
    )
    (out / "report.json").write_text(analysis.reports_to_json(reports))
    table = analysis.reports_table(reports)
    (out / "report.txt").write_text(table + "\n")
    for name, types in bodies.items():
        (out / f"regrown_{name}.txt").write_text(grid.layer_dump(types))
    print(table)
    return EXIT_OK


def cmd_grow(args) -> int:
    out = _run_dir(args, "grow")
    rng = np.random.default_rng(args.seed)
    if args.checkpoint:
        ck = conv.load_checkpoint(args.checkpoint)
        n = args.size or presets.get_preset(args.preset).regen.size
        dims = (n, n, n)
        steps = args.steps if args.steps is not None else 60
        _write_config(out, "grow", args, {"dims": dims, "steps": steps, "rule": ck["params"].config})
        seed = grid.seed_grid(dims, tuple(d // 2 for d in dims), "conv", rng)
        seq = [grid.CellGrid(s, "conv") for s in conv.grow(ck["params"], seed, steps, rng)]
    elif args.genome:
        cfg, genome = dense.load_genome(args.genome)
        n = args.size or 7
        dims = (n, n, 1) if cfg.ndim == 2 else (n, n, n)
        steps = args.steps if args.steps is not None else 10
        _write_config(out, "grow", args, {"dims": dims, "steps": steps, "rule": cfg})
        seq = dense.grow(dense.DenseRule(cfg, genome), dense.dense_seed(dims), steps, rng)
    else:
        raise ConfigError("grow needs --checkpoint or --genome")
    grid.save_grid(seq[-1], out / "final.grid")
    (out / "final.txt").write_text(grid.layer_dump(grid.decode_types(seq[-1])))
    if args.all_steps:
        with open(out / "steps.txt", "w") as fh:
            for i, g in enumerate(seq):
                fh.write(f"# step {i}\n{grid.layer_dump(grid.decode_types(g))}\n")
    print(out / "final.txt")
    return EXIT_OK


def cmd_simulate(args) -> int:
    out = _run_dir(args, "simulate")
    if args.genome:
        cfg, genome = dense.load_genome(args.genome)
        n = args.size or 7
        task = (evolution.LocomotionTask.planar(n, rule=cfg, growth_seed=args.seed) if cfg.ndim == 2
                else evolution.LocomotionTask.solid(n, rule=cfg, growth_seed=args.seed))
        types, seed_pos, sim_cfg = task.develop(genome), task.seed, task.sim
    elif args.grid:
        types = load_types(args.grid)
        seed_pos = None
        sim_cfg = physics.PLANAR_2D if types.ndim == 2 or types.shape[2] == 1 else physics.SOLID_3D
    else:
        raise ConfigError("simulate needs --grid or --genome")
    if args.duration is not None:
        sim_cfg = presets.override(sim_cfg, duration=args.duration)
    _write_config(out, "simulate", args, {"sim": sim_cfg})
    model = physics.materialize(types, seed_pos, sim_cfg)
    if model.empty:
        raise ConfigError("the morphology has no voxels")
    res = physics.simulate(model, sim_cfg)
    physics.write_trajectory_csv(res, out / "trajectory.csv")
    physics.write_voxel_list(model, out / "voxels.txt")
    summary = {"distance": res.distance, "diverged": res.diverged, "voxels": model.n_masses, "springs": model.n_springs}
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary))
    return EXIT_OK


def apply_config_file(args) -> None:
    """Fill options left unset on the command line from ``--config``; then defaults."""
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"no such config file: {path}")
        values = json.loads(path.read_text())
        if not isinstance(values, dict):
            raise ConfigError("config file must hold a JSON object")
        for key, value in values.items():
            if key in ("func", "command", "config") or not hasattr(args, key):
                raise ConfigError(f"unknown config key {key!r} for {args.command}")
            if getattr(args, key) in (None, False):
                setattr(args, key, value)
    if args.preset is None:
        args.preset = "desk"
    if args.preset not in presets.PRESETS:
        raise ConfigError(f"unknown preset {args.preset!r}")
    if args.seed is None:
        args.seed = 0


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="regen-nca", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON file of option values (keys are option names with underscores)")
        p.add_argument("--preset", choices=sorted(presets.PRESETS))
        p.add_argument("--out", help="run directory (default: runs/<command>-<timestamp>)")
        p.add_argument("--seed", type=int)
        p.add_argument("--size", type=int, help="grid edge length")
        p.add_argument("--single-thread", action="store_true", help=f"ignore {evolution.WORKERS_ENV}")

    p = sub.add_parser("evolve", help="evolve a growing, walking robot")
    common(p)
    p.add_argument("--protocol", choices=("2d", "3d"), default="2d")
    p.add_argument("--population", type=int)
    p.add_argument("--generations", type=int)
    p.add_argument("--recurrent", action="store_true")
    p.set_defaults(func=cmd_evolve)

    p = sub.add_parser("train-regen", help="train a conv NCA to grow and regrow a target")
    common(p)
    p.add_argument("--target", help=f"built-in ({', '.join(targets.TARGETS)}) or layer-dump file")
    p.add_argument("--max-steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--checkpoint-every", type=int, default=1000)
    p.set_defaults(func=cmd_train_regen)

    p = sub.add_parser("damage-eval", help="damage a trained body six ways plus a sphere and regrow")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--target")
    p.add_argument("--steps", type=int, help="regrowth steps")
    p.add_argument("--locomotion", action="store_true", help="also simulate each body")
    p.add_argument("--sphere", type=float, metavar="RADIUS", help="also test sphere damage of this radius")
    p.set_defaults(func=cmd_damage_eval)

    p = sub.add_parser("grow", help="grow a morphology from a checkpoint or genome")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--genome")
    p.add_argument("--steps", type=int)
    p.add_argument("--all-steps", action="store_true")
    p.set_defaults(func=cmd_grow)

    p = sub.add_parser("simulate", help="simulate a morphology and export its trajectory")
    common(p)
    p.add_argument("--grid", help="grid file or layer dump")
    p.add_argument("--genome")
    p.add_argument("--duration", type=float)
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        apply_config_file(args)
        return args.func(args)
    except conv.DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
