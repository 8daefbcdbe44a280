"""Command-line experiment driver.

Subcommands::

    mtlearn simulate --config C [--seed S] [--out D] [--noise-levels X]
    mtlearn learn    --config C --dataset D.csv [--criterion wTU] [--candidates all|1,2,..] [--jobs N]
    mtlearn evaluate --config C --dataset D.csv --estimate E.json [--out D]
    mtlearn sweep    --config C [--seed S] [--noise-levels L] [--jobs N] [--out D]

Exit codes: 0 success, 2 configuration or input error, 3 simulation failure,
4 model-selection failure.

Seeds. ``simulate`` and every sweep cell draw trial ``m`` from the entropy
``[seed, m]`` and observation noise from ``[seed, 2**32 - 1]``. Sweep cell
``c`` (cells enumerated noise level, then M, then trial) uses
``seed = base_seed XOR c``, so no two cells share a stream and a one-cell
sweep reproduces ``simulate`` + ``learn`` + ``evaluate`` with the base seed.

Every JSON output carries ``config_hash`` and ``seed``; CSV outputs other
than the dataset start with a ``# config_hash=...,seed=...`` comment line
(the dataset file records its seed in its own header and its config hash in
``manifest.json``).
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .assembly import assemble
from .data import (
    DatasetParseError,
    TrialFailure,
    empirical_distance_distribution,
    export_csv,
    generate_dataset,
    import_csv,
    inject_noise,
    noise_rng_seed,
)
from .dynamics import (
    IntegrationError,
    SingularNormalizationError,
    State,
    SystemSpec,
    integrate,
)
from .kernels import BasisExpansion, BasisFamily
from .selection import (
    CRITERIA,
    NormalizationError,
    SelectionError,
    choose_estimate,
    error_metrics,
    fit_candidates,
    normalization_scale,
)

EXIT_OK, EXIT_CONFIG, EXIT_SIMULATION, EXIT_SELECTION = 0, 2, 3, 4
BAND_POINTS = 201
PREDICTION_POINTS = 41


class CliError(Exception):
    def __init__(self, msg: str, code: int):
        super().__init__(msg)
        self.code = code


# -- helpers -------------------------------------------------------------------

def _parse_levels(text):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise CliError(f"bad --noise-levels {text!r}", EXIT_CONFIG) from None
    if not vals or any(v < 0 for v in vals):
        raise CliError("--noise-levels needs nonnegative numbers", EXIT_CONFIG)
    return vals


def _parse_candidates(text):
    if text == "all":
        return "all"
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise CliError(f"bad --candidates {text!r}", EXIT_CONFIG) from None


def load_config(args) -> cfgmod.ExperimentConfig:
    """Config file plus command-line overrides, validated."""
    try:
        cfg = cfgmod.load(args.config)
        over = {}
        if getattr(args, "seed", None) is not None:
            over.setdefault("data", {})["seed"] = args.seed
        if getattr(args, "noise_levels", None) is not None:
            over["noise"] = {"levels": _parse_levels(args.noise_levels)}
        if getattr(args, "criterion", None) is not None:
            over.setdefault("selection", {})["criterion"] = args.criterion
        if getattr(args, "candidates", None) is not None:
            over.setdefault("selection", {})["candidates"] = _parse_candidates(args.candidates)
        if getattr(args, "out", None) is not None:
            over["output"] = {"dir": args.out}
        return cfg.replace(**over) if over else cfg
    except cfgmod.ConfigError as exc:
        raise CliError(f"config error: {exc}", EXIT_CONFIG) from None


def _out_dir(cfg) -> Path:
    out = Path(cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _stamp(cfg, seed) -> dict:
    return {"config_hash": cfg.hash(), "seed": seed}


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_csv(path: Path, cfg, seed, header, rows) -> None:
    lines = [f"# config_hash={cfg.hash()},seed={seed}", ",".join(header)]
    for row in rows:
        lines.append(",".join(_cell(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def simulate_dataset(cfg, seed, level=0.0, M=None):
    """Noise-free simulation followed by noise injection at ``level``."""
    spec = cfg.system_spec()
    try:
        ds = generate_dataset(spec, M or cfg.data.M, cfg.data.L, cfg.data.T, cfg.ic_box(),
                              seed, cfg.integrator_config())
    except TrialFailure as exc:
        raise CliError(f"simulation failed: {exc}", EXIT_SIMULATION) from None
    return ds, inject_noise(ds, level, noise_rng_seed(seed))


def _check_dataset(ds, cfg) -> None:
    s = cfg.system
    if (ds.order, ds.N, ds.d) != (s.order, s.N, s.d):
        raise CliError(
            f"dataset (order={ds.order}, N={ds.N}, d={ds.d}) does not match config "
            f"(order={s.order}, N={s.N}, d={s.d})", EXIT_CONFIG)
    if ds.include_self != s.include_self:
        raise CliError("dataset include_self differs from config", EXIT_CONFIG)


def learn(ds, cfg, jobs=1):
    basis = cfg.basis_family()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # distances beyond R are expected and harmless
        A = assemble(ds, basis)
    try:
        results = fit_candidates(A, cfg.sbl_config(), cfg.candidate_list(), jobs)
        estimates = {c: choose_estimate(A, results, c) for c in CRITERIA}
    except SelectionError as exc:
        raise CliError(f"selection failed: {exc}", EXIT_SELECTION) from None
    return estimates, results


def estimate_metrics(coefficients, basis, truth, ds) -> dict:
    rho = empirical_distance_distribution(ds)
    kern = BasisExpansion(basis, coefficients)
    try:
        scale = normalization_scale(kern, truth, rho)
    except NormalizationError as exc:
        raise CliError(f"normalization failed: {exc}", EXIT_SELECTION) from None
    normed = BasisExpansion(basis, kern.coefficients * scale)
    out = error_metrics(normed, truth, rho)
    out["scale"] = scale
    return out, normed


def trajectory_deviation(cfg, ds, kernel, horizon):
    """Re-simulate every trial with ``kernel`` and the true kernel from the recorded initial states.

    Returns per-(trial, time) rows of mean and max agent deviation and the
    true configuration diameter.
    """
    s = cfg.system
    times = np.linspace(0.0, horizon, PREDICTION_POINTS)
    masses = None if s.order == 1 else cfg.system_spec().masses
    true_spec = cfg.system_spec()
    est_spec = SystemSpec(order=s.order, N=s.N, d=s.d, kernel=kernel, masses=masses,
                          include_self=s.include_self)
    icfg = cfg.integrator_config()
    rows = []
    for m in range(ds.M):
        ic = State(ds.positions[m, 0], None if s.order == 1 else ds.velocities[m, 0])
        try:
            ref = integrate(true_spec, ic, times, icfg)
            est = integrate(est_spec, ic, times, icfg)
        except (IntegrationError, SingularNormalizationError) as exc:
            raise CliError(f"re-simulation failed: {exc}", EXIT_SIMULATION) from None
        for l, t in enumerate(times):
            dev = np.linalg.norm(est.positions[l] - ref.positions[l], axis=-1)
            x = ref.positions[l]
            diam = float(np.max(np.linalg.norm(x[:, None] - x[None, :], axis=-1)))
            rows.append((m, float(t), float(dev.mean()), float(dev.max()), diam))
    return rows


# -- subcommands -----------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = load_config(args)
    seed = cfg.data.seed
    level = cfg.noise.levels[0]
    _, ds = simulate_dataset(cfg, seed, level)
    out = _out_dir(cfg)
    export_csv(ds, out / "dataset.csv")
    manifest = {
        **_stamp(cfg, seed),
        "noise_level": level,
        "v_bar": ds.v_bar,
        "shape": {"M": ds.M, "L": ds.L, "N": ds.N, "d": ds.d},
        "order": ds.order,
        "config": cfg.to_dict(),
    }
    _write_json(out / "manifest.json", manifest)
    print(f"wrote {out / 'dataset.csv'} ({ds.M * ds.L * ds.N} rows)")
    return EXIT_OK


def _read_dataset(path, cfg):
    try:
        ds = import_csv(path)
    except (OSError, DatasetParseError) as exc:
        raise CliError(f"cannot read dataset: {exc}", EXIT_CONFIG) from None
    _check_dataset(ds, cfg)
    return ds


def cmd_learn(args) -> int:
    cfg = load_config(args)
    ds = _read_dataset(args.dataset, cfg)
    seed = ds.seed
    jobs = args.jobs or 1
    estimates, results = learn(ds, cfg, jobs)
    est = estimates[cfg.selection.criterion]
    out = _out_dir(cfg)
    grid = np.linspace(0.0, cfg.basis.R, BAND_POINTS)
    doc = est.to_dict()
    doc.update(_stamp(cfg, seed))
    doc["selected_by_criterion"] = {c: e.k_star for c, e in estimates.items()}
    _write_json(out / "estimate.json", doc)
    band = est.to_dict(band_grid=grid)["band"]
    _write_csv(out / "band.csv", cfg, seed, ["r", "estimate", "lower", "upper"],
               zip(band["r"], band["estimate"], band["lower"], band["upper"]))
    rows = []
    for r in results:
        n_act = "" if r.posterior is None else int(r.posterior.active.size)
        rows.append((r.k_star, r.admissible, r.wTU, r.wPE, r.wEU, n_act))
    _write_csv(out / "candidates.csv", cfg, seed,
               ["k_star", "admissible", "wTU", "wPE", "wEU", "n_active"], rows)
    print(f"selected k*={est.k_star} by {est.criterion}; wrote {out / 'estimate.json'}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = load_config(args)
    ds = _read_dataset(args.dataset, cfg)
    try:
        doc = json.loads(Path(args.estimate).read_text(encoding="utf-8"))
        basis = BasisFamily(float(doc["R"]), int(doc["K"]))
        coeffs = np.asarray(doc["coefficients"], float)
    except (OSError, ValueError, KeyError) as exc:
        raise CliError(f"cannot read estimate: {exc}", EXIT_CONFIG) from None
    if basis.cell_count != coeffs.size:
        raise CliError("estimate coefficient count differs from K", EXIT_CONFIG)
    truth = cfg.kernel()
    metrics, normed = estimate_metrics(coeffs, basis, truth, ds)
    horizon = cfg.data.T_f if cfg.data.T_f is not None else cfg.data.T
    rows = trajectory_deviation(cfg, ds, normed, horizon)
    rel = np.array([r[2] / r[4] if r[4] > 0 else 0.0 for r in rows])
    rel_max = np.array([r[3] / r[4] if r[4] > 0 else 0.0 for r in rows])
    metrics.update({
        **_stamp(cfg, ds.seed),
        "k_star": doc.get("k_star"),
        "horizon": horizon,
        "trajectory_mean_dev_rel": float(rel.mean()),
        "trajectory_max_dev_rel": float(rel_max.max()),
    })
    out = _out_dir(cfg)
    _write_json(out / "metrics.json", metrics)
    _write_csv(out / "prediction.csv", cfg, ds.seed,
               ["m", "t", "mean_dev", "max_dev", "diameter"], rows)
    print(f"rel_Linf={metrics['rel_Linf']:.3g} rel_L1_rho={metrics['rel_L1_rho']:.3g} "
          f"trajectory_mean_dev_rel={metrics['trajectory_mean_dev_rel']:.3g}")
    return EXIT_OK


def sweep_cells(cfg):
    """``(cell_index, level, M, trial)`` in the documented enumeration order."""
    cells = []
    for level in cfg.noise.levels:
        for M in cfg.sweep.M_values:
            for trial in range(cfg.sweep.trials):
                cells.append((len(cells), level, M, trial))
    return cells


def run_cell(cfg, cell):
    index, level, M, trial = cell
    seed = cfg.data.seed ^ index
    t0 = time.perf_counter()
    row = {"cell": index, "noise_level": level, "M": M, "trial": trial, "seed": seed}
    try:
        clean, ds = simulate_dataset(cfg, seed, level, M)
        estimates, _ = learn(ds, cfg)
        est = estimates[cfg.selection.criterion]
        metrics, _ = estimate_metrics(est.coefficients, est.basis, cfg.kernel(), clean)
        row["status"] = "ok"
    except CliError as exc:
        row["status"] = f"failed({exc.code})"
        row["wall_time"] = time.perf_counter() - t0
        return row
    row["wall_time"] = time.perf_counter() - t0
    support = cfg.support_range()
    for c, e in estimates.items():
        row[f"k_star_{c}"] = e.k_star
        if support is not None:
            row[f"success_{c}"] = bool(support[0] <= e.k_star <= support[1])
    row["rel_Linf"] = metrics["rel_Linf"]
    row["rel_L1_rho"] = metrics["rel_L1_rho"]
    return row


def _run_cell_star(payload):
    cfg_dict, cell = payload
    return run_cell(cfgmod.from_dict(cfg_dict), cell)


def summarize(rows, cfg) -> dict:
    groups = {}
    for r in rows:
        if r["status"] != "ok":
            continue
        groups.setdefault((r["noise_level"], r["M"]), []).append(r)
    summary = []
    for (level, M), rs in sorted(groups.items()):
        entry = {"noise_level": level, "M": M, "trials": len(rs)}
        for key in ("rel_Linf", "rel_L1_rho", "wall_time"):
            vals = np.array([r[key] for r in rs])
            entry[f"{key}_mean"] = float(vals.mean())
            entry[f"{key}_median"] = float(np.median(vals))
            entry[f"{key}_std"] = float(vals.std())
        for c in CRITERIA:
            if f"success_{c}" in rs[0]:
                entry[f"success_rate_{c}"] = float(np.mean([r[f"success_{c}"] for r in rs]))
        summary.append(entry)
    Ms = sorted({r["M"] for r in rows if r["status"] == "ok"})
    slope = None
    if len(Ms) >= 2:
        mean_t = [np.mean([r["wall_time"] for r in rows if r["status"] == "ok" and r["M"] == M])
                  for M in Ms]
        slope = float(np.polyfit(np.log(Ms), np.log(mean_t), 1)[0])
    return {"groups": summary, "runtime_slope": slope,
            "failed_cells": [r["cell"] for r in rows if r["status"] != "ok"]}


def cmd_sweep(args) -> int:
    cfg = load_config(args)
    cells = sweep_cells(cfg)
    jobs = args.jobs or os.cpu_count() or 1
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            rows = list(pool.map(_run_cell_star, [(cfg.to_dict(), c) for c in cells]))
    else:
        rows = [run_cell(cfg, c) for c in cells]
    keys = ["cell", "noise_level", "M", "trial", "seed", "status", "wall_time",
            "rel_Linf", "rel_L1_rho"]
    for c in CRITERIA:
        keys.append(f"k_star_{c}")
        if cfg.support_range() is not None:
            keys.append(f"success_{c}")
    out = _out_dir(cfg)
    _write_csv(out / "sweep.csv", cfg, cfg.data.seed, keys,
               [[r.get(k, "") for k in keys] for r in rows])
    summary = summarize(rows, cfg)
    summary.update(_stamp(cfg, cfg.data.seed))
    summary["seed_rule"] = "cell seed = base seed XOR cell index"
    _write_json(out / "metrics.json", summary)
    print(f"{len(rows)} cells, {len(summary['failed_cells'])} failed; wrote {out / 'sweep.csv'}")
    return EXIT_OK


# -- entry point -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mtlearn", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="TOML experiment config")
        sp.add_argument("--out", help="output directory (overrides [output] dir)")

    sp = sub.add_parser("simulate", help="generate a trajectory dataset")
    common(sp)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--noise-levels", help="noise level to apply (first entry is used)")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("learn", help="fit and select a kernel from a dataset")
    common(sp)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--criterion", choices=CRITERIA)
    sp.add_argument("--candidates", help="'all' or comma-separated one-based indices")
    sp.add_argument("--jobs", type=int, default=1)
    sp.set_defaults(func=cmd_learn)

    sp = sub.add_parser("evaluate", help="error metrics and trajectory prediction")
    common(sp)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--estimate", required=True)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("sweep", help="grid over noise level x M x trial")
    common(sp)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--noise-levels", help="comma-separated noise fractions")
    sp.add_argument("--criterion", choices=CRITERIA)
    sp.add_argument("--candidates", help="'all' or comma-separated one-based indices")
    sp.add_argument("--jobs", type=int, help="worker processes (default: all cores)")
    sp.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
