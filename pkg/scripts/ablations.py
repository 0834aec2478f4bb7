#!/usr/bin/env python3
"""Run the three documented knob sweeps and gate each on its shape check.

The scoring-depth sweep uses the headline comparison environment. The
trust-threshold and retention-margin sweeps each run in a stress regime
where mis-setting the knob visibly costs accuracy; on the headline
environment both curves are flat because the trusted anchors there are
accurate enough that rescue decisions rarely change the outcome. The
regimes are spelled out in the README.
"""
import json
import os
import sys

from uats.cli import main

SWEEPS = {
    "k0": {
        "parameter": "k0",
        "grid": list(range(2, 11)),
        "reps": 1000,
        "seed": 1,
    },
    "tau": {
        "env": {
            "M": 4, "T": 10, "epsilon": 0.5, "r0": 0.9,
            "delta_min": 0.03, "delta_max": 0.15,
            "sigma_id": 0.02, "sigma_ood": 0.5,
            "ood_mode": "independent",
        },
        "params": {"nu1": 2.0, "nu2": 0.05},
        "parameter": "tau",
        "grid": [0.0, 0.001, 0.003, 0.02, 0.1, 0.5],
        "reps": 1000,
        "seed": 1,
    },
    "delta": {
        "env": {
            "M": 4, "T": 14, "epsilon": 0.5, "r0": 0.9,
            "delta_min": 0.09, "delta_max": 0.28,
            "sigma_id": 0.18, "sigma_ood": 1.1,
            "ood_mode": "independent",
        },
        "params": {"tau": 0.0334, "alpha": 0.0, "nu1": 2.0, "nu2": 0.02},
        "parameter": "delta",
        "grid": [0.0, 0.04, 0.08, 0.15, 0.3, 0.6],
        "reps": 1000,
        "seed": 1,
    },
}


def run(out_root: str, extra) -> int:
    worst = 0
    for name, spec in SWEEPS.items():
        out = os.path.join(out_root, f"ablate_{name}")
        os.makedirs(out, exist_ok=True)
        config = os.path.join(out, "config.json")
        with open(config, "w") as f:
            json.dump(spec, f, indent=2)
        code = main(["ablate", "--config", config, "--out", out, "--check", *extra])
        print(f"[{name}] exit {code}")
        worst = max(worst, code)
    return worst


if __name__ == "__main__":
    sys.exit(run("out", sys.argv[1:]))
