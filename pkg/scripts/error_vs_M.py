"""Kernel error and wall time as functions of the number of trajectories M.

Sweeps M over ``--M`` at the given noise levels (default 0%, 50%, 100%) for a
first-order config and prints the median relative sup-norm error per cell plus
the log-log slope of wall time against M.

    python scripts/error_vs_M.py [--config PATH] [--M 1 3 5 10] [--noise 0 0.5 1] [--trials N]
"""
import argparse
import json
from pathlib import Path

from mtlearn import cli, config

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description="Error and runtime versus M.")
    ap.add_argument("--config", default=str(ROOT / "configs" / "opinion_1d.toml"))
    ap.add_argument("--M", type=int, nargs="+", default=[1, 3, 5, 10])
    ap.add_argument("--noise", type=float, nargs="+", default=[0.0, 0.5, 1.0])
    ap.add_argument("--trials", type=int, default=10)
    ap.add_argument("--jobs", type=int, default=None)
    ap.add_argument("--out", default="runs/error_vs_M")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = config.load(args.config).replace(
        noise={"levels": tuple(args.noise)},
        sweep={"M_values": tuple(args.M), "trials": args.trials})
    (out / "config.toml").write_text(config.dumps(cfg))
    argv = ["sweep", "--config", str(out / "config.toml"), "--out", str(out)]
    if args.jobs:
        argv += ["--jobs", str(args.jobs)]
    rc = cli.main(argv)
    if rc:
        raise SystemExit(rc)

    summary = json.loads((out / "metrics.json").read_text())
    print(f"{'noise':>6} {'M':>4} {'median rel_Linf':>16} {'median rel_L1':>14} {'time [s]':>9}")
    for g in summary["groups"]:
        print(f"{100 * g['noise_level']:5.0f}% {g['M']:4d} {g['rel_Linf_median']:16.4g} "
              f"{g['rel_L1_rho_median']:14.4g} {g['wall_time_mean']:9.2f}")
    print(f"runtime log-log slope: {summary['runtime_slope']}")


if __name__ == "__main__":
    main()
