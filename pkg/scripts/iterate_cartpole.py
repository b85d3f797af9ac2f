"""Closed-loop augmentation rounds on CartPole; prints the per-round mean MPC cost."""

import argparse
import json
import sys
from pathlib import Path

from stirk.cli import main as stirk

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def run():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=str(CONFIGS / "cartpole.json"))
    ap.add_argument("--out", default="runs/cartpole_iterate")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    code = stirk(["iterate", "--config", args.config, "--out", args.out, "--workers", str(args.workers), "--force"])
    if code:
        return code
    for path in sorted((Path(args.out) / "rounds").glob("round*.json")):
        s = json.loads(path.read_text())
        print(f"round {s['round']}: windows {s['n_windows']:6d}  seen {s['mean_cost_seen']:9.2f}  "
              f"unseen {s['mean_cost_unseen']:9.2f}  failures {s['failure_count']}")
    return 0


if __name__ == "__main__":
    sys.exit(run())
