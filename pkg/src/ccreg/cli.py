"""Command-line driver.

    ccreg generate  --config cfg.json --out data.ccrd
    ccreg estimate  data.ccrd --estimator cca --k 8 --ell 10 --out fit/
    ccreg diagnose  data.ccrd --k 8 --ell 10 [--out report.json]
    ccreg sweep     --config cfg.json --out results/ [--workers 4] [--resume] [--dry-run]
    ccreg summarize results/replications.csv --out summary.csv
    ccreg plot      results/summary.csv --out mse.svg

Exit codes: 0 ok, 2 usage or config error, 3 I/O or malformed input file,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import diagnostics as dg
from .config import ConfigError, RunConfig, config_to_dict, parse_config, read_config_doc
from .datamodel import (
    DegenerateDisturbance,
    FormatError,
    generate_dataset,
    load_dataset,
    noise_scales,
    save_dataset,
)
from .estimators import EstimatorKind, EstimatorSpec, SingularWeight, fit
from .harness import SchemaError, read_csv, run_plan, summarize, write_csv
from .plot import render_svg
from .speclin import NonFinite, operator_norm, thin_svd

log = logging.getLogger("ccreg")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4
SLOW_RUN_SECONDS = 3600.0
# seconds per unit of n * p * (p + p_w) per estimator, measured on one core
_COST_PER_UNIT = 4e-10


class UsageError(Exception):
    pass


def _dump(obj, path: str | None) -> None:
    text = json.dumps(dg.to_json_safe(obj), indent=2, sort_keys=True) + "\n"
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _effective_config(args) -> RunConfig:
    doc = read_config_doc(args.config)
    dgp_over = {k: v for k, v in (("n", getattr(args, "n", None)), ("delta", getattr(args, "delta", None)),
                                  ("regime", getattr(args, "regime", None)),
                                  ("base_seed", args.seed)) if v is not None}
    plan_over = {k: v for k, v in (("base_seed", args.seed), ("workers", args.workers)) if v is not None}
    for section, over in (("dgp", dgp_over), ("plan", plan_over)):
        if over:
            if not isinstance(doc.get(section, {}), dict):
                raise ConfigError(f"{section}: expected an object")
            doc[section] = {**doc.get(section, {}), **over}
    return parse_config(doc)


# ---------------------------------------------------------------- subcommands


def cmd_generate(args) -> int:
    cfg = _effective_config(args)
    if args.print_config:
        _dump(config_to_dict(cfg), None)
        return EXIT_OK
    out = args.out or cfg.output.get("dataset")
    if not out:
        raise UsageError("generate: --out is required")
    ds = generate_dataset(cfg.dgp, args.rep)
    save_dataset(ds, out)
    t = ds.truth
    sx, sw = thin_svd(t.x), thin_svd(t.w)
    eps_norm = np.linalg.norm(t.eps)
    leak = np.linalg.norm(sw.u.T @ t.eps) / eps_norm if eps_norm > 0 else 0.0
    p, p_w = cfg.dgp.dims
    report = {
        "path": str(out), "n": cfg.dgp.n, "p": p, "p_w": p_w,
        "rank_x": sx.rank, "rank_w": sw.rank,
        "instrument_leakage": leak,
        "small_noise_x": operator_norm(ds.h_x) <= sx.s[-1],
        "small_noise_w": operator_norm(ds.h_w) <= sw.s[-1],
        "dataset_hash": ds.content_hash(),
    }
    _dump(report, None)
    return EXIT_OK


def _spec_from_args(args) -> EstimatorSpec:
    if args.k < 1 or args.ell < 1:
        raise UsageError(f"--k and --ell must be >= 1 (got k={args.k}, ell={args.ell})")
    return EstimatorSpec(EstimatorKind(args.estimator), args.k, args.ell)


def cmd_estimate(args) -> int:
    spec = _spec_from_args(args)
    ds = load_dataset(args.dataset)
    truth = ds.truth
    if spec.kind is EstimatorKind.ORACLE and truth is None:
        raise UsageError("oracle estimator needs a dataset with ground truth")
    result = fit(spec, ds.y, ds.z_x, ds.z_w,
                 truth.x if truth else None, truth.w if truth else None)
    out = Path(args.out or "estimate")
    out.mkdir(parents=True, exist_ok=True)
    beta_path = out / "beta_hat.f64"
    beta_path.write_bytes(np.asarray(result.beta, dtype="<f8").tobytes())
    report = {"estimator": spec.name, "k": spec.k, "ell": spec.ell, "p": int(result.beta.shape[0]),
              "beta_file": beta_path.name, "flags": list(result.flags),
              "mse": None, "term_row": None, "term_null": None, "term_perp": None}
    if truth is not None:
        dec = dg.error_decomposition(result.beta, truth, result.first_stage)
        report.update(mse=dec.total / result.beta.shape[0], term_row=dec.term_row,
                      term_null=dec.term_null, term_perp=dec.term_perp, total=dec.total,
                      residual=dec.residual)
    _dump(report, str(out / "estimate.json"))
    _dump(report, None)
    return EXIT_OK


def diagnose_dataset(ds, k: int, ell: int, sigma_bar_sq: float | None = None) -> dict:
    """Full diagnostics report as a JSON-ready dict; truth-dependent fields are None without truth."""
    spec = EstimatorSpec(EstimatorKind.CCA, k, ell)
    fs = fit(spec, ds.y, ds.z_x, ds.z_w).first_stage
    truth = ds.truth
    if truth is not None and sigma_bar_sq is None:
        sigma_bar_sq = float(np.var(truth.eps))
    kq = dg.key_quantities(ds, fs, sigma_bar_sq, require_truth=False)
    report = {
        "k": k, "ell": ell, "flags": list(fs.flags),
        "empirical": {
            "overlap_cosines": kq.overlap_cosines_empirical,
            "r": kq.r, "c_ell": kq.c_ell, "c_k": kq.c_k,
            "sigma_cov": fs.cov.s.tolist(), "sigma_inst": fs.inst.s.tolist(),
        },
        "key_quantities": kq.to_dict(),
        "regime": None, "recommendation": None, "lower_bound": None,
        "lower_bound_low_rank_condition": None, "wedin": None,
        "rank_selection": "user-supplied (oracle-tuned if set to the true ranks)",
    }
    if truth is None:
        return report

    nsr = kq.nsr_x + kq.nsr_w
    regime = dg.classify_regime(nsr, kq.kappa_xw, sigma_bar_sq, kq.r)
    rec = dg.recommend_estimator(regime, kq.sigma_min_x, kq.sigma_max_w, kq.kappa_w)
    sigma_x_noise = float(np.std(ds.h_x))
    if "config" in ds.meta:
        from .datamodel import DgpConfig
        sigma_x_noise = noise_scales(DgpConfig(**ds.meta["config"]))[0]
    sigma_eps = math.sqrt(sigma_bar_sq) if sigma_bar_sq else 0.0
    lb = None
    if sigma_eps > 0 and kq.overlap_cosines and kq.overlap_cosines[0] > 0:
        lb = dg.minimax_lower_bound(sigma_eps, sigma_x_noise, kq.r_star, kq.sigma_min_w, kq.overlap_cosines[0])
    report.update(
        regime=regime.value,
        recommendation=rec.value,
        nsr_total=nsr,
        lower_bound=lb.value if lb else None,
        lower_bound_low_rank_condition=lb.low_rank_condition if lb else None,
        sigma_x_noise=sigma_x_noise,
    )
    try:
        report["wedin"] = dg.wedin_check(ds, fs).to_dict()
    except ValueError as e:
        report["wedin"] = {"error": str(e)}
    return report


def cmd_diagnose(args) -> int:
    if args.k < 1 or args.ell < 1:
        raise UsageError(f"--k and --ell must be >= 1 (got k={args.k}, ell={args.ell})")
    ds = load_dataset(args.dataset)
    _dump(diagnose_dataset(ds, args.k, args.ell, args.sigma_bar_sq), args.out)
    return EXIT_OK


def estimate_runtime(plan) -> float:
    total = 0.0
    for cell in plan.cells():
        cfg = plan.config_for(cell)
        p, p_w = cfg.dims
        total += cfg.n * p * (p + p_w) * len(plan.estimators) * plan.reps
    return total * _COST_PER_UNIT / max(1, plan.workers or 1)


def cmd_sweep(args) -> int:
    cfg = _effective_config(args)
    if args.print_config:
        _dump(config_to_dict(cfg), None)
        return EXIT_OK
    plan = cfg.plan
    out = Path(args.out or cfg.output.get("dir") or "sweep")
    est = estimate_runtime(plan)
    if est > SLOW_RUN_SECONDS:
        log.warning("plan has %d fits; estimated runtime %.1f hours", plan.n_fits(), est / 3600)
    if args.dry_run:
        _dump({"cells": len(plan.cells()), "fits": plan.n_fits(), "estimated_seconds": est}, None)
        return EXIT_OK
    out.mkdir(parents=True, exist_ok=True)

    t0 = time.perf_counter()

    def progress(cell, done, total):
        regime, n, delta = cell
        print(f"[{done}/{total}] {regime.value} n={n} delta={delta:g} "
              f"({time.perf_counter() - t0:.1f}s)", file=sys.stderr)

    records = run_plan(plan, parts_dir=out / "parts", resume=args.resume, progress=progress)
    write_csv(records, out / "replications.csv")
    write_csv(summarize(records), out / "summary.csv")
    (out / "config.json").write_text(json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n")
    n_err = sum(1 for r in records if r.error)
    print(f"wrote {len(records)} rows ({n_err} error rows) to {out}", file=sys.stderr)
    return EXIT_OK


def cmd_summarize(args) -> int:
    rows = read_csv(args.replications)
    if rows and not hasattr(rows[0], "rep"):
        raise SchemaError("summarize expects a replication CSV")
    out = args.out or str(Path(args.replications).with_name("summary.csv"))
    write_csv(summarize(rows), out)
    print(out)
    return EXIT_OK


def cmd_plot(args) -> int:
    rows = read_csv(args.summary)
    if rows and not hasattr(rows[0], "rep_count"):
        raise SchemaError("plot expects a summary CSV")
    out = args.out or str(Path(args.summary).with_suffix(".svg"))
    Path(out).write_text(render_svg(rows))
    print(out)
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON run configuration")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override the base seed")
    common.add_argument("--workers", type=int, default=argparse.SUPPRESS, help="worker processes (0 = all cores)")
    common.add_argument("--resume", action="store_true", default=argparse.SUPPRESS,
                        help="reuse completed cells of an interrupted sweep")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output path")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="ccreg", description="Canonical correlation regression toolkit.",
                                     parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="draw a synthetic dataset")
    p.add_argument("--n", type=int)
    p.add_argument("--delta", type=float)
    p.add_argument("--regime", choices=["moderate", "high"])
    p.add_argument("--rep", type=int, default=0, help="replication index")
    p.add_argument("--print-config", action="store_true")
    p.set_defaults(func=cmd_generate)

    choices = [k.value for k in EstimatorKind if k is not EstimatorKind.CUSTOM]
    p = sub.add_parser("estimate", parents=[common], help="fit an estimator to a dataset")
    p.add_argument("dataset")
    p.add_argument("--estimator", choices=choices, default="cca")
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--ell", type=int, default=10)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("diagnose", parents=[common], help="key quantities, regime and lower bound")
    p.add_argument("dataset")
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--ell", type=int, default=10)
    p.add_argument("--sigma-bar-sq", type=float, default=None)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("sweep", parents=[common], help="run a Monte-Carlo sweep")
    p.add_argument("--print-config", action="store_true")
    p.add_argument("--dry-run", action="store_true", help="report plan size and estimated runtime, then stop")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("summarize", parents=[common], help="aggregate a replication CSV")
    p.add_argument("replications")
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("plot", parents=[common], help="render a summary CSV as SVG")
    p.add_argument("summary")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name, default in (("config", None), ("seed", None), ("workers", None), ("resume", False),
                          ("out", None), ("verbose", False)):
        if not hasattr(args, name):
            setattr(args, name, default)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, SchemaError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except (NonFinite, SingularWeight, DegenerateDisturbance, np.linalg.LinAlgError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
