"""Model-selection success rates per noise level (first-order opinion dynamics, d = 1).

Runs the sweep defined by ``configs/opinion_1d.toml`` (20 trials per noise
level, M = 3) and prints, for each criterion, the fraction of trials whose
selected pinned index lies in the true support {1..10}.

    python scripts/reproduce_table3.py [--config PATH] [--trials N] [--jobs N] [--out DIR]
"""
import argparse
import json
from pathlib import Path

from mtlearn import cli, config
from mtlearn.selection import CRITERIA

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description="Selection success rates per noise level.")
    ap.add_argument("--config", default=str(ROOT / "configs" / "opinion_1d.toml"))
    ap.add_argument("--trials", type=int, default=None)
    ap.add_argument("--jobs", type=int, default=None)
    ap.add_argument("--out", default="runs/table3")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = config.load(args.config)
    if args.trials is not None:
        cfg = cfg.replace(sweep={"trials": args.trials})
    (out / "config.toml").write_text(config.dumps(cfg))

    argv = ["sweep", "--config", str(out / "config.toml"), "--out", str(out)]
    if args.jobs:
        argv += ["--jobs", str(args.jobs)]
    rc = cli.main(argv)
    if rc:
        raise SystemExit(rc)

    summary = json.loads((out / "metrics.json").read_text())
    print(f"{'noise':>6} " + " ".join(f"{c:>6}" for c in CRITERIA))
    for g in summary["groups"]:
        rates = " ".join(f"{g.get('success_rate_' + c, float('nan')):6.2f}" for c in CRITERIA)
        print(f"{100 * g['noise_level']:5.0f}% {rates}")


if __name__ == "__main__":
    main()
