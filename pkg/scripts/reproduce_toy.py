#!/usr/bin/env python3
"""Three-seed comparison of the prior branch against the plain network.

Trains six models at the stock configuration (seeds 0..2, with and
without the context-prior branch), then prints per-run metrics and the
medians. The affinity ratio column is the supervised prior's loss at
the final step divided by its value at step 10; a value well below 1
means the prior map actually moved toward its target during training.

Runs take roughly half a minute each on a laptop-class CPU, all of it
single process. Pass --quiet to silence per-step progress.
"""

import argparse
import os
import statistics

from cpnet.config import TrainConfig
from cpnet.train import affinity_series, train


def run_one(seed: int, use_prior: bool, out_root: str, quiet: bool) -> dict:
    cfg = TrainConfig(seed=seed, use_context_prior=use_prior)
    name = f"{'prior' if use_prior else 'plain'}_{seed}"
    out = os.path.join(out_root, name)
    progress = None if quiet else (lambda msg: print(f"  [{name}] {msg}", flush=True))
    result = train(cfg, out, progress=progress)

    ratio = None
    if use_prior:
        series = dict(affinity_series(result["loss_csv"]))
        ratio = series[cfg.total_iterations] / series[10]
    return {
        "name": name,
        "pix_acc": result["pix_acc"],
        "miou": result["miou"],
        "ratio": ratio,
    }


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="runs", help="directory for the six runs")
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--quiet", action="store_true")
    args = parser.parse_args()

    rows = []
    for seed in args.seeds:
        for use_prior in (True, False):
            print(f"training seed {seed} {'with' if use_prior else 'without'} "
                  f"the prior branch", flush=True)
            rows.append(run_one(seed, use_prior, args.out, args.quiet))

    print()
    print(f"{'run':<12} {'pixAcc':>8} {'mIoU':>8} {'affinity ratio':>15}")
    for row in rows:
        ratio = "-" if row["ratio"] is None else f"{row['ratio']:.3f}"
        print(f"{row['name']:<12} {row['pix_acc']:>8.4f} {row['miou']:>8.4f} "
              f"{ratio:>15}")

    prior = [r["miou"] for r in rows if r["ratio"] is not None]
    plain = [r["miou"] for r in rows if r["ratio"] is None]
    if prior and plain:
        pm, nm = statistics.median(prior), statistics.median(plain)
        print()
        print(f"median mIoU with prior    {pm:.4f}")
        print(f"median mIoU without prior {nm:.4f}")
        print(f"gap                       {pm - nm:+.4f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
