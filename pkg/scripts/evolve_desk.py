"""Evolve a walking 2D (or 3D) robot at desk scale and print the fitness curve.

    python scripts/evolve_desk.py --protocol 2d --out runs/evolve-2d
"""

import argparse
import sys

from regen_nca import cli


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--protocol", choices=("2d", "3d"), default="2d")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/evolve-desk")
    args = ap.parse_args()
    return cli.main(["evolve", "--preset", "desk", "--protocol", args.protocol, "--seed", str(args.seed), "--out", args.out])


if __name__ == "__main__":
    sys.exit(main())
