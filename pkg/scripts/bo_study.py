#!/usr/bin/env python3
"""Lander design study: TPE over the touchdown objective, batched over workers.

Writes trials.jsonl, the best-value-vs-wallclock curve, plot data, and a
manifest that reproduces the run. Example:

    python scripts/bo_study.py --n-env 4 --trials 80 --out runs/bo
"""

import argparse

from rollout_grid.bench import run_study
from rollout_grid.config import config_from_dict


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/bo")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--n-env", type=int, default=4)
    parser.add_argument("--trials", type=int, default=80)
    parser.add_argument("--transport", choices=["in-process", "socket"], default="socket")
    parser.add_argument("--pad-ms", type=float, default=0.0,
                        help="sleep this long per evaluation to emulate a costly simulator")
    args = parser.parse_args()

    cfg = config_from_dict(
        {
            "mode": "bo",
            "env": "lander",
            "n_env": args.n_env,
            "seed": args.seed,
            "transport": args.transport,
            "pad_ms": args.pad_ms,
            "pad_mode": "sleep",
            "output_dir": args.out,
            "bo": {"n_trials": args.trials},
        }
    )
    best, curve = run_study(cfg, args.out)
    print(f"best J = {best.value:.6g} at {best.params}")
    print(f"{len(curve)} completions, final wall clock {curve[-1][0]:.2f} s")


if __name__ == "__main__":
    main()
