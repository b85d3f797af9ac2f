"""Train the CartPole model at noise 0.1 and run closed-loop MPC from 20 sampled ICs."""

import argparse
import json
import sys
from pathlib import Path

from stirk.cli import main as stirk

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def run():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=str(CONFIGS / "cartpole.json"))
    ap.add_argument("--out", default="runs/cartpole")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    common = ["--config", args.config, "--out", args.out, "--workers", str(args.workers), "--force"]
    for cmd in ("generate", "train", "mpc"):
        code = stirk([cmd, *common])
        if code:
            return code
    s = json.loads((Path(args.out) / "mpc_summary.json").read_text())
    print(f"stabilized {s['success_count']}/{s['episodes']}  mean cost {s['mean_cost']:.2f}")
    return 0


if __name__ == "__main__":
    sys.exit(run())
