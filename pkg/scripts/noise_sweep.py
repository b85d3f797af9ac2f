"""Van der Pol multi-trajectory comparison at the reduced training budget.

Runs generate, train and evaluate through the CLI into one directory and
prints the mean normalized training/test error per method and noise level.
"""

import argparse
import csv
import sys
from pathlib import Path

from stirk.cli import main as stirk

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def print_summary(path):
    lines = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]
    rows = list(csv.DictReader(lines))
    print(f"{'method':10s} {'sigma':>8s} {'train':>8s} {'test':>8s}")
    for r in sorted(rows, key=lambda r: (float(r["noise_sigma"]), r["method"])):
        print(f"{r['method']:10s} {float(r['noise_sigma']):8.4f} {float(r['mean_train_error']):8.4f} "
              f"{float(r['mean_test_error']):8.4f}")


def run():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=str(CONFIGS / "vdp_multi.json"))
    ap.add_argument("--out", default="runs/vdp_multi")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    common = ["--config", args.config, "--out", args.out, "--workers", str(args.workers), "--force"]
    for cmd in ("generate", "train", "evaluate"):
        code = stirk([cmd, *common])
        if code:
            return code
    print_summary(Path(args.out) / "summary.csv")
    return 0


if __name__ == "__main__":
    sys.exit(run())
