"""Regenerate the bundled toy dataset under data/toy."""

import argparse
from pathlib import Path

from partial_reid import toy


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "data" / "toy"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--identities", type=int, default=toy.N_IDENTITIES)
    args = p.parse_args()
    paths = toy.write_toy_dataset(args.out, seed=args.seed, n_identities=args.identities)
    for name, path in paths.items():
        print(f"{name:>13}: {path}")


if __name__ == "__main__":
    main()
