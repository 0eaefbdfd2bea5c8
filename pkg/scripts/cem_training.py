#!/usr/bin/env python3
"""Train the velocity-tracking policy with CEM and log the learning curves.

Uses the study configuration that learns reliably at desk scale (short
horizon, planar commands only). Example:

    python scripts/cem_training.py --n-env 8 --iterations 25 --out runs/cem
"""

import argparse

from rollout_grid.bench import run_training
from rollout_grid.config import config_from_dict


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/cem")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--n-env", type=int, default=8)
    parser.add_argument("--iterations", type=int, default=25)
    parser.add_argument("--population", type=int, default=24)
    parser.add_argument("--horizon", type=int, default=40)
    parser.add_argument("--transport", choices=["in-process", "socket"], default="socket")
    args = parser.parse_args()

    cfg = config_from_dict(
        {
            "mode": "cem",
            "env": "tracker",
            "n_env": args.n_env,
            "seed": args.seed,
            "transport": args.transport,
            "output_dir": args.out,
            "tracker": {
                "horizon": args.horizon,
                "weights": {"sigma_track": 0.5, "scale_prev_action": 0.25, "scale_q": 0.5},
                "cmd_vx": [-0.6, 0.6], "cmd_vy": [-0.6, 0.6], "cmd_yaw": [0.0, 0.0],
            },
            "cem": {
                "iterations": args.iterations,
                "population": args.population,
                "episodes_per_candidate": 2,
                "elite_frac": 0.25,
                "sigma_init": 0.2,
                "smoothing": 0.6,
                "sigma_min": 0.02,
            },
        }
    )
    _, curve = run_training(cfg, args.out)
    first, last = curve[0], curve[-1]
    print(f"mean return {first.mean_return:.2f} -> {last.mean_return:.2f}")
    print(f"tracking MSE x {first.mse_x:.4f} -> {last.mse_x:.4f}, "
          f"y {first.mse_y:.4f} -> {last.mse_y:.4f}")
    print(f"wall clock {last.wall_clock_s:.1f} s for {len(curve)} iterations")


if __name__ == "__main__":
    main()
