#!/usr/bin/env python3
"""Throughput sweep over worker counts with a padded tracker step.

Example:
    python scripts/throughput_sweep.py --out runs/throughput --sweep 1 2 4 8
"""

import argparse

from rollout_grid.bench import run_throughput
from rollout_grid.config import config_from_dict


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/throughput")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--steps", type=int, default=300)
    parser.add_argument("--pad-ms", type=float, default=1.0)
    parser.add_argument("--pad-mode", choices=["busy", "sleep"], default="busy")
    parser.add_argument("--sweep", type=int, nargs="+", default=[1, 2, 4, 8])
    parser.add_argument("--transport", choices=["in-process", "socket"], default="socket")
    args = parser.parse_args()

    cfg = config_from_dict(
        {
            "mode": "throughput",
            "env": "tracker",
            "n_env": args.sweep[0],
            "seed": args.seed,
            "transport": args.transport,
            "pad_ms": args.pad_ms,
            "pad_mode": args.pad_mode,
            "output_dir": args.out,
            "throughput": {"steps": args.steps, "sweep": args.sweep[1:]},
        }
    )
    rows = run_throughput(cfg, args.out)
    base = rows[0]["env_steps_per_s"]
    for row in rows:
        print(
            f"n_env={row['n_env']:>3}  {row['env_steps_per_s']:>10.1f} env-steps/s  "
            f"speedup x{row['env_steps_per_s'] / base:.2f}  "
            f"barrier latency {1e3 * row['mean_barrier_latency_s']:.3f} ms"
        )


if __name__ == "__main__":
    main()
