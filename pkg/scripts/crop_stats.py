"""Overlap statistics of sampled crop pairs for the four standard crop settings."""

import argparse
import math

from partial_reid.cropgen import STANDARD_SETTINGS, CropSpec, overlap, sample_crop_pair
from partial_reid.rng import substream


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--pairs", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=7)
    args = p.parse_args()
    print(f"{'s':>5} {'o_min':>6} {'min':>7} {'mean':>7} {'max':>7} {'floor':>7}")
    for s, o_min in STANDARD_SETTINGS:
        spec = CropSpec(s, o_min, args.seed)
        ovs = [overlap(*sample_crop_pair(spec, substream(args.seed, i))) for i in range(args.pairs)]
        # Smallest overlap any two crops of side sqrt(s) can have inside the unit frame.
        floor = max(0.0, (2 * math.sqrt(s) - 1) / math.sqrt(s)) ** 2
        print(f"{s:>5} {o_min:>6} {min(ovs):7.4f} {sum(ovs) / len(ovs):7.4f} {max(ovs):7.4f} {floor:7.4f}")


if __name__ == "__main__":
    main()
