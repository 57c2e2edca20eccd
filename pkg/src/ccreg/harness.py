"""Deterministic Monte-Carlo sweeps over (regime, n, delta).

One dataset is drawn per (cell, replication) from its own RNG substream and
every estimator in the plan is fit on that same dataset.  Work items are
independent, so they can run on any number of worker processes; results are
sorted before writing, which makes the CSV bytes independent of scheduling.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .datamodel import DgpConfig, Regime, block_key, generate_dataset, replication_seed
from .diagnostics import TruthFactors, error_decomposition
from .estimators import EstimatorKind, EstimatorSpec, fit
from .speclin import RANK_TOL, operator_norm

log = logging.getLogger(__name__)

REPLICATION_HEADER = (
    "regime,n,p,p_w,delta,estimator,rep,seed,dataset_hash,mse,"
    "term_row,term_null,term_perp,nsr_x,nsr_w,runtime_ms,error"
).split(",")
SUMMARY_HEADER = "regime,n,delta,estimator,rep_count,mean_mse,q025,q975".split(",")


class SchemaError(ValueError):
    pass


def default_estimators(k: int = 8, ell: int = 10) -> list[EstimatorSpec]:
    return [EstimatorSpec(kind, k, ell) for kind in
            (EstimatorKind.NAIVE, EstimatorKind.PCA, EstimatorKind.WHITEN, EstimatorKind.CCA)]


@dataclass
class SimulationPlan:
    dgp: DgpConfig = field(default_factory=DgpConfig)
    n_grid: list[int] = field(default_factory=lambda: [300, 500, 1000, 2000, 5000])
    delta_grid: list[float] = field(default_factory=lambda: [0.001, 0.05, 0.65])
    regimes: list[Regime] = field(default_factory=lambda: [Regime.HIGH, Regime.MODERATE])
    estimators: list[EstimatorSpec] = field(default_factory=default_estimators)
    reps: int = 250
    base_seed: int = 20251201
    workers: int = 1
    record_runtime: bool = False

    def __post_init__(self) -> None:
        self.regimes = [Regime(r) for r in self.regimes]
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if not (self.n_grid and self.delta_grid and self.regimes and self.estimators):
            raise ValueError("grids and estimator list must be nonempty")
        if self.workers < 0:
            raise ValueError("workers must be >= 0")

    def cells(self) -> list[tuple[Regime, int, float]]:
        return [(reg, int(n), float(d))
                for reg in self.regimes for n in sorted(self.n_grid) for d in sorted(self.delta_grid)]

    def config_for(self, cell: tuple[Regime, int, float]) -> DgpConfig:
        regime, n, delta = cell
        return dataclasses.replace(self.dgp, regime=regime, n=n, delta=delta, base_seed=self.base_seed)

    def n_fits(self) -> int:
        return len(self.cells()) * self.reps * len(self.estimators)


@dataclass
class ReplicationRecord:
    regime: str
    n: int
    p: int
    p_w: int
    delta: float
    estimator: str
    rep: int
    seed: int
    dataset_hash: str
    mse: float
    term_row: float
    term_null: float
    term_perp: float
    nsr_x: float
    nsr_w: float
    runtime_ms: float
    error: str = ""


@dataclass
class SummaryRecord:
    regime: str
    n: int
    delta: float
    estimator: str
    rep_count: int
    mean_mse: float
    q025: float
    q975: float
    error_count: int = field(default=0, compare=False)


def run_replication(plan: SimulationPlan, cell: tuple[Regime, int, float], rep_index: int) -> list[ReplicationRecord]:
    config = plan.config_for(cell)
    p, p_w = config.dims
    seed = replication_seed(plan.base_seed, block_key(config), rep_index)
    ds = generate_dataset(config, rep_index)
    truth = TruthFactors(ds.truth)
    nsr_x = operator_norm(ds.h_x) ** 2 / truth.x.s[-1] ** 2
    nsr_w = operator_norm(ds.h_w) ** 2 / truth.w.s[-1] ** 2
    digest = ds.content_hash()
    base = dict(regime=config.regime.value, n=config.n, p=p, p_w=p_w, delta=config.delta,
                rep=int(rep_index), seed=seed, dataset_hash=digest, nsr_x=float(nsr_x), nsr_w=float(nsr_w))

    # one factorization per matrix, shared by every estimator
    cache = {("x", RANK_TOL): truth.x, ("w", RANK_TOL): truth.w}
    records = []
    for spec in plan.estimators:
        t0 = time.perf_counter()
        try:
            result = fit(spec, ds.y, ds.z_x, ds.z_w, ds.truth.x, ds.truth.w, cache=cache)
            dec = error_decomposition(result.beta, truth, result.first_stage)
            row = dict(mse=dec.total / p, term_row=dec.term_row, term_null=dec.term_null,
                       term_perp=dec.term_perp, error="")
        except (ValueError, np.linalg.LinAlgError) as e:
            row = dict(mse=math.nan, term_row=math.nan, term_null=math.nan, term_perp=math.nan,
                       error=f"{type(e).__name__}: {e}".replace("\n", " "))
        runtime = (time.perf_counter() - t0) * 1e3 if plan.record_runtime else math.nan
        records.append(ReplicationRecord(estimator=spec.name, runtime_ms=runtime, **base, **row))
    return records


def _run_cell(plan: SimulationPlan, cell) -> list[ReplicationRecord]:
    out = []
    for rep in range(plan.reps):
        out.extend(run_replication(plan, cell, rep))
    return out


def _sort_key(plan: SimulationPlan):
    cell_order = {(reg.value, n, d): i for i, (reg, n, d) in enumerate(plan.cells())}
    est_order = {spec.name: i for i, spec in enumerate(plan.estimators)}

    def key(r: ReplicationRecord):
        return (cell_order[(r.regime, r.n, r.delta)], r.rep, est_order.get(r.estimator, len(est_order)))
    return key


def _resolve_workers(workers: int) -> int:
    if workers == 0:
        return os.cpu_count() or 1
    return workers


def run_plan(plan: SimulationPlan, parts_dir: str | Path | None = None, resume: bool = False,
             progress=None) -> list[ReplicationRecord]:
    """Run every (cell, replication) and return records in canonical order.

    With ``parts_dir`` each finished cell is persisted as its own CSV, and a
    resumed run reuses cells that were already completed.
    """
    cells = plan.cells()
    done: dict[tuple, list[ReplicationRecord]] = {}
    if parts_dir is not None:
        parts_dir = Path(parts_dir)
        parts_dir.mkdir(parents=True, exist_ok=True)
        if resume:
            for cell in cells:
                path = parts_dir / _part_name(cell)
                if path.exists():
                    done[cell] = read_csv(path)
        elif any(parts_dir.glob("cell_*.csv")):
            for stale in parts_dir.glob("cell_*.csv"):
                stale.unlink()

    todo = [c for c in cells if c not in done]
    workers = _resolve_workers(plan.workers)

    def finish(cell, records):
        done[cell] = records
        if parts_dir is not None:
            tmp = parts_dir / (_part_name(cell) + ".tmp")
            write_csv(records, tmp)
            tmp.replace(parts_dir / _part_name(cell))
        if progress is not None:
            progress(cell, len(done), len(cells))

    if workers <= 1 or len(todo) * plan.reps <= 1:
        for cell in todo:
            finish(cell, _run_cell(plan, cell))
    else:
        # (cell, rep) work items keep all workers busy even for a single cell
        with ProcessPoolExecutor(max_workers=workers) as pool:
            pending = [(cell, [pool.submit(run_replication, plan, cell, rep) for rep in range(plan.reps)])
                       for cell in todo]
            for cell, futures in pending:
                finish(cell, [r for f in futures for r in f.result()])

    records = [r for cell in cells for r in done[cell]]
    records.sort(key=_sort_key(plan))
    return records


def _part_name(cell) -> str:
    regime, n, delta = cell
    return f"cell_{Regime(regime).value}_{n}_{delta!r}.csv"


# ---------------------------------------------------------------- summaries


def summarize(records: Iterable[ReplicationRecord]) -> list[SummaryRecord]:
    """Mean MSE and linear-interpolation 2.5%/97.5% quantiles per (cell, estimator)."""
    groups: dict[tuple, list[ReplicationRecord]] = {}
    for r in records:
        groups.setdefault((r.regime, r.n, r.delta, r.estimator), []).append(r)
    out = []
    for key, rows in groups.items():
        ok = np.array([r.mse for r in rows if not r.error], dtype=np.float64)
        n_err = sum(1 for r in rows if r.error)
        if ok.size == 0:
            log.warning("cell %s has no successful replications; skipped", key)
            continue
        if n_err:
            log.warning("cell %s: %d error rows excluded", key, n_err)
        q025, q975 = np.quantile(ok, [0.025, 0.975], method="linear")
        out.append(SummaryRecord(*key, rep_count=int(ok.size), mean_mse=float(np.mean(ok)),
                                 q025=float(q025), q975=float(q975), error_count=n_err))
    return out


# ---------------------------------------------------------------- CSV i/o


def _fmt(value) -> str:
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def write_csv(rows: Sequence[ReplicationRecord] | Sequence[SummaryRecord], path: str | Path) -> None:
    rows = list(rows)
    if rows and isinstance(rows[0], SummaryRecord):
        header = SUMMARY_HEADER
    else:
        header = REPLICATION_HEADER
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for r in rows:
            writer.writerow([_fmt(getattr(r, name)) for name in header])


def _parse(cls, header: list[str], values: list[str], lineno: int):
    kwargs = {}
    types = {f.name: f.type for f in fields(cls)}
    for name, raw in zip(header, values):
        t = types[name]
        try:
            if t == "int":
                kwargs[name] = int(raw)
            elif t == "float":
                kwargs[name] = float(raw)
            else:
                kwargs[name] = raw
        except ValueError:
            raise SchemaError(f"line {lineno}, column {name!r}: cannot parse {raw!r}") from None
    return cls(**kwargs)


def read_csv(path: str | Path) -> list:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError("empty file: missing header row") from None
        if header[:1] == ["regime"] and len(header) > 4 and header[4] == "rep_count":
            cls, expected = SummaryRecord, SUMMARY_HEADER
        else:
            cls, expected = ReplicationRecord, REPLICATION_HEADER
        for i, (got, want) in enumerate(zip(header, expected)):
            if got != want:
                raise SchemaError(f"column {i + 1}: expected {want!r}, found {got!r}")
        if len(header) != len(expected):
            missing = expected[len(header):] or header[len(expected):]
            raise SchemaError(f"column count {len(header)} != {len(expected)} (offending: {missing[0]!r})")
        rows = []
        for lineno, values in enumerate(reader, start=2):
            if len(values) != len(expected):
                raise SchemaError(f"line {lineno}: expected {len(expected)} fields, got {len(values)}")
            rows.append(_parse(cls, header, values, lineno))
    return rows


# ---------------------------------------------------------------- plan (de)serialization


def spec_to_dict(spec: EstimatorSpec) -> dict:
    d = {"kind": spec.kind.value, "k": spec.k, "ell": spec.ell, "pinv_tol": spec.pinv_tol}
    if spec.weights is not None:
        w = spec.weights
        d["weights"] = {"left": w.left.value, "right": w.right.value,
                        "left_values": list(w.left_values) if w.left_values else None,
                        "right_values": list(w.right_values) if w.right_values else None}
    return d


def plan_to_dict(plan: SimulationPlan) -> dict:
    return {
        "dgp": plan.dgp.to_dict(),
        "n_grid": list(plan.n_grid),
        "delta_grid": list(plan.delta_grid),
        "regimes": [r.value for r in plan.regimes],
        "estimators": [spec_to_dict(s) for s in plan.estimators],
        "reps": plan.reps,
        "base_seed": plan.base_seed,
        "workers": plan.workers,
        "record_runtime": plan.record_runtime,
    }


def plan_to_json(plan: SimulationPlan) -> str:
    return json.dumps(plan_to_dict(plan), indent=2, sort_keys=True)
