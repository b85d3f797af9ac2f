"""Training-component ablation grid; prints mean train/test error per combination and noise level."""

import argparse
import csv
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from stirk.cli import main as stirk

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
KEYS = ("parameterization", "lr_schedule", "optimizer", "rollout_schedule")


def run():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=str(CONFIGS / "ablation.json"))
    ap.add_argument("--out", default="runs/ablation")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    code = stirk(["ablation", "--config", args.config, "--out", args.out, "--workers", str(args.workers), "--force"])
    if code:
        return code
    lines = [ln for ln in (Path(args.out) / "ablation.csv").read_text().splitlines() if not ln.startswith("#")]
    groups = defaultdict(list)
    for r in csv.DictReader(lines):
        groups[(float(r["noise_sigma"]),) + tuple(r[k] for k in KEYS)].append(
            (float(r["train_error"]), float(r["test_error"])))
    for key in sorted(groups):
        tr, te = np.mean(groups[key], axis=0)
        print(f"{key[0]:7.4f} " + " ".join(f"{v:12s}" for v in key[1:]) + f" {tr:8.4f} {te:8.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(run())
