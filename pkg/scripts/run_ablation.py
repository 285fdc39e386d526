"""Run the alignment ablation over several seeds and tally the trend.

    python3 scripts/run_ablation.py --seeds 0,1,2,3,4 --out runs/ablation
"""

import argparse
import os
import time
from dataclasses import replace

from shiftalign.trainer import DEFAULT_ARMS, AblationConfig, arm_means, run_ablation, write_ablation_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", default="0,1,2,3,4")
    ap.add_argument("--steps", type=int, default=None)
    ap.add_argument("--max-shift", type=float, default=None)
    ap.add_argument("--out", default=None, help="write ablation_seedN.csv files here")
    args = ap.parse_args()

    base = AblationConfig()
    if args.steps is not None:
        base = replace(base, steps=args.steps)
    if args.max_shift is not None:
        base = replace(base, max_shift=args.max_shift)
    if args.out:
        os.makedirs(args.out, exist_ok=True)

    beats = between = 0
    seeds = [int(s) for s in args.seeds.split(",")]
    print(f"{'seed':>4}  {'tsm':>8}  {'exact':>8}  {'perturbed':>9}  seconds")
    for seed in seeds:
        t0 = time.perf_counter()
        rows = run_ablation(DEFAULT_ARMS, replace(base, seed=seed))
        m = arm_means(rows)
        tsm, exact, pert = m["tsm"], m["tsam_exact_flow"], m["tsam_perturbed_flow"]
        beats += exact < tsm
        between += min(exact, tsm) <= pert <= max(exact, tsm)
        print(f"{seed:>4}  {tsm:8.5f}  {exact:8.5f}  {pert:9.5f}  {time.perf_counter() - t0:.0f}", flush=True)
        if args.out:
            write_ablation_csv(os.path.join(args.out, f"ablation_seed{seed}.csv"), rows)
    print(f"exact beats tsm in {beats}/{len(seeds)} seeds, perturbed in between in {between}/{len(seeds)}")


if __name__ == "__main__":
    main()
