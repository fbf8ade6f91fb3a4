#!/usr/bin/env python3
"""Sweep the coarse-supervision level on the default synthetic dataset.

Trains the baseline classifier once per (level, seed) pair, from no coarse
supervision at all up to coarse labels at the leaf level, and reports the
mean test accuracy per level.  Results land in <out>/sweep.txt.
"""

import argparse
from pathlib import Path

from hierssl.data import GenConfig, generate
from hierssl.evaluate import sweep_means, top1, write_sweep
from hierssl.trainers import TrainConfig, train


def parse_args() -> argparse.Namespace:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", default="0,1,2,3,4",
                   help="comma-separated training seeds")
    p.add_argument("--steps", type=int, default=400)
    p.add_argument("--data-seed", type=int, default=0)
    p.add_argument("--out", default="runs/level_sweep")
    return p.parse_args()


def main() -> None:
    args = parse_args()
    seeds = [int(s) for s in args.seeds.split(",")]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    gen = generate(GenConfig(seed=args.data_seed))
    depth = gen.in_taxonomy.num_levels
    levels: list[int | None] = [None] + list(range(1, depth + 1))

    rows = []
    for level in levels:
        for seed in seeds:
            cfg = TrainConfig(method="baseline", supervision_level=level,
                              steps=args.steps, seed=seed)
            acc = top1(train(gen.split, gen.in_taxonomy, cfg).model,
                       gen.split.test, gen.in_taxonomy)
            rows.append((level, seed, acc))
            print(f"level {'none' if level is None else level} "
                  f"seed {seed} top1 {acc:.4f}")

    write_sweep(rows, out / "sweep.txt")
    print(f"\nwrote {out / 'sweep.txt'}")
    print(f"\nmean top1 over {len(seeds)} seeds:")
    for level, mean in sorted(sweep_means(rows).items(),
                              key=lambda kv: -1 if kv[0] is None else kv[0]):
        tag = "none" if level is None else f"L{level}"
        print(f"  {tag:>5}  {mean:.4f}")


if __name__ == "__main__":
    main()
