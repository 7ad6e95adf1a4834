"""Train the cycle objective on the 1-D linear fixture and print the loss trace."""

import argparse

from partial_reid.hallucination import CycleObjectiveConfig, linear_fixture_1d, train_cycle
from partial_reid.rng import substream


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--lam", type=float, default=10.0)
    p.add_argument("--every", type=int, default=20)
    args = p.parse_args()
    f = linear_fixture_1d(seed=args.seed)
    _, trace = train_cycle(f.pgn, f.pcn, f.d_phi, f.d_h, f.phi, f.h, CycleObjectiveConfig(args.lam),
                           args.steps, args.lr, substream(args.seed, 2))
    print("step l_total l_gan_pgn l_gan_pcn l_cyc")
    for step, t in enumerate(trace):
        if step % args.every == 0 or step == len(trace) - 1:
            print(f"{step} {t.l_total:.4f} {t.l_gan_pgn:.4f} {t.l_gan_pcn:.4f} {t.l_cyc:.4f}")
    print(f"final / initial: {trace[-1].l_total / trace[0].l_total:.3f}")


if __name__ == "__main__":
    main()
