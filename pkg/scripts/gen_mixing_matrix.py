#!/usr/bin/env python3
"""Regenerate the frozen tracker mixing matrix data file.

The matrix is a function of MIXING_SEED and MIXING_ROW_NORMS only; rerunning
this script must be a no-op unless those constants changed.
"""

import json
from pathlib import Path

from rollout_grid.tracker import MIXING_ROW_NORMS, MIXING_SEED, generate_mixing_matrix


def main() -> None:
    out = Path(__file__).resolve().parent.parent / "src" / "rollout_grid" / "data" / "mixing_matrix.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "seed": MIXING_SEED,
        "row_norms": list(MIXING_ROW_NORMS),
        "matrix": generate_mixing_matrix().tolist(),
    }
    out.write_text(json.dumps(payload, indent=2) + "\n")
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
