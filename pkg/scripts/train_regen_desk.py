"""Train the conv NCA on the quadruped target, then run the damage suite on it.

    python scripts/train_regen_desk.py --out runs/regen-desk
"""

import argparse
import sys
from pathlib import Path

from regen_nca import cli


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/regen-desk")
    ap.add_argument("--locomotion", action="store_true", help="also simulate original, damaged and regrown bodies")
    args = ap.parse_args()
    out = Path(args.out)
    code = cli.main(["train-regen", "--preset", "desk", "--seed", str(args.seed), "--out", str(out / "train")])
    if code != 0:
        return code
    extra = ["--locomotion"] if args.locomotion else []
    return cli.main([
        "damage-eval", "--preset", "desk", "--seed", str(args.seed), "--sphere", "3",
        "--checkpoint", str(out / "train" / "checkpoint.npz"), "--out", str(out / "damage"), *extra,
    ])


if __name__ == "__main__":
    sys.exit(main())
