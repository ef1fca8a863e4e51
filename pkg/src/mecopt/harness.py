"""Monte-Carlo sweeps, convergence reports and trend checks.

Every draw gets its own layout and channel seeds derived from the master seed
and the draw index, so a draw gives the same numbers no matter which worker
runs it or in what order.
"""

from __future__ import annotations

import csv
import io
import os
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .baselines import solve_binary, solve_fixed_frequency
from .inner_pd import InnerConfig
from .outer_descent import OuterConfig, OuterSolution, solve
from .scenario import merge_config, build_scenario, draw_channel

WORKERS_ENV = "MECOPT_WORKERS"
SCHEMES = ("partial", "binary", "fixed-frequency")
VARIABLES = ("u", "Td", "scheme", "csi_mode")
METRICS = ("E_total", "E_u", "E_m", "offloaded_fraction", "local_fraction", "T_total",
           "T1", "T2", "T3", "latency_violation")


@dataclass
class SweepSpec:
    variable: str
    grid: list
    draws: int = 100
    seed: int = 0
    outputs: list = field(default_factory=lambda: list(METRICS))
    scheme: str = "partial"
    csi_mode: str = "perfect"
    method: str = "newton"
    config: dict = field(default_factory=dict)
    outer: dict = field(default_factory=dict)
    inner: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.variable not in VARIABLES:
            raise ValueError(f"unknown sweep variable {self.variable!r}")
        if len(self.grid) == 0:
            raise ValueError("sweep grid is empty")
        if self.draws < 1:
            raise ValueError("draws must be >= 1")
        unknown = set(self.outputs) - set(METRICS)
        if unknown:
            raise ValueError(f"unknown metrics {sorted(unknown)}")


@dataclass
class SweepRow:
    value: Any
    metrics: dict
    feasible_fraction: float
    outer_iterations: float
    inner_iterations: float
    status: str
    records: list = field(default_factory=list, repr=False)


def draw_seeds(master: int, draw: int) -> tuple[int, int]:
    """Independent layout and channel seeds for one Monte-Carlo draw."""
    state = np.random.SeedSequence([int(master), int(draw)]).generate_state(2)
    return int(state[0]), int(state[1])


def _point(sweep: SweepSpec, value):
    """Scenario overrides, scheme and CSI mode for one grid value."""
    config = sweep.config
    scheme, csi = sweep.scheme, sweep.csi_mode
    if sweep.variable == "u":
        config = merge_config(config, {"request_bits": float(value)})
    elif sweep.variable == "Td":
        config = merge_config(config, {"compute": {"latency": float(value)}})
    elif sweep.variable == "scheme":
        scheme = str(value)
    else:
        csi = str(value)
    return config, scheme, csi


def solve_scheme(scheme: str, scn, ch, outer: OuterConfig, inner: InnerConfig) -> OuterSolution:
    if scheme == "partial":
        return solve(scn, ch, outer, inner)
    if scheme == "binary":
        return solve_binary(scn, ch, outer, inner)[1]
    if scheme == "fixed-frequency":
        return solve_fixed_frequency(scn, ch, outer, inner)
    raise ValueError(f"unknown scheme {scheme!r}")


def record_of(sol: OuterSolution, latency: float) -> dict:
    """Per-draw metrics of a finished solve."""
    violation = max(sol.timing.T_total - latency, 0.0) if sol.feasible else np.inf
    return {
        "E_total": sol.objective,
        "E_u": sol.energy.E_u,
        "E_m": sol.energy.E_m,
        "offloaded_fraction": sol.offloaded_fraction,
        "local_fraction": 1.0 - sol.offloaded_fraction,
        "T_total": sol.timing.T_total,
        "T1": sol.timing.T1,
        "T2": sol.timing.T2,
        "T3": sol.timing.T3,
        "latency_violation": violation,
        "feasible": sol.feasible,
        "termination": sol.termination,
        "outer_iterations": sol.outer_iterations,
        "inner_iterations": sol.inner_iterations,
    }


def run_draw(sweep: SweepSpec, value, draw: int) -> dict:
    config, scheme, csi = _point(sweep, value)
    layout_seed, channel_seed = draw_seeds(sweep.seed, draw)
    scn = build_scenario(config, seed=layout_seed)
    ch = draw_channel(scn, seed=channel_seed, csi_mode=csi)
    outer = OuterConfig(**{"method": sweep.method, **sweep.outer})
    inner = InnerConfig(**sweep.inner)
    try:
        sol = solve_scheme(scheme, scn, ch, outer, inner)
        rec = record_of(sol, scn.compute.latency)
    except Exception as exc:  # one failed draw must not abort the sweep
        rec = {m: np.nan for m in METRICS}
        rec.update(feasible=False, termination=f"error:{type(exc).__name__}",
                   outer_iterations=0, inner_iterations=0)
    rec["draw"] = draw
    return rec


def _run_task(args):
    sweep, value, draw = args
    return value, run_draw(sweep, value, draw)


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def _summarize(value, recs: list, outputs) -> SweepRow:
    recs = sorted(recs, key=lambda r: r["draw"])
    feas = [r for r in recs if r["feasible"]]
    metrics = {}
    for m in outputs:
        vals = np.array([r[m] for r in feas], dtype=float)
        metrics[m] = float(vals.mean()) if len(vals) else float("nan")
    counts = Counter(r["termination"] for r in recs)
    status = ";".join(f"{k}:{counts[k]}" for k in sorted(counts))
    return SweepRow(
        value=value, metrics=metrics, feasible_fraction=len(feas) / len(recs),
        outer_iterations=float(np.mean([r["outer_iterations"] for r in recs])),
        inner_iterations=float(np.mean([r["inner_iterations"] for r in recs])),
        status=status, records=recs,
    )


def run_sweep(sweep: SweepSpec, workers: int | None = None) -> list[SweepRow]:
    """Run every (grid value, draw) pair and average per grid value."""
    sweep.validate()
    tasks = [(sweep, v, d) for v in sweep.grid for d in range(sweep.draws)]
    workers = workers or worker_count()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    else:
        results = [_run_task(t) for t in tasks]
    grouped: dict = {}
    for value, rec in results:
        grouped.setdefault(value, []).append(rec)
    rows = [_summarize(v, grouped[v], sweep.outputs) for v in sweep.grid]
    if sweep.variable in ("u", "Td"):
        rows.sort(key=lambda r: float(r.value))
    return rows


def rows_to_csv(rows: list[SweepRow], sweep: SweepSpec) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([sweep.variable, *sweep.outputs, "feasible_fraction", "outer_iterations",
                     "inner_iterations", "status"])
    for r in rows:
        writer.writerow([r.value, *(repr(r.metrics[m]) for m in sweep.outputs), repr(r.feasible_fraction),
                         repr(r.outer_iterations), repr(r.inner_iterations), r.status])
    return buf.getvalue()


def write_csv(rows: list[SweepRow], sweep: SweepSpec, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(rows_to_csv(rows, sweep))


# --------------------------------------------------------------------------- convergence

def linear_fit_r2(y) -> float:
    """R^2 of a least-squares line through ``y`` against its index."""
    y = np.asarray(y, dtype=float)
    if len(y) < 3:
        return float("nan")
    x = np.arange(len(y), dtype=float)
    coef = np.polyfit(x, y, 1)
    resid = y - np.polyval(coef, x)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0


def log_suboptimality(objectives) -> np.ndarray:
    """log(f_k - f_final) over the iterates before the last, dropping exact zeros."""
    f = np.asarray(objectives, dtype=float)
    gap = f[:-1] - f[-1]
    gap = gap[gap > 0]
    return np.log(gap)


def run_convergence_report(config: dict | None = None, seed: int = 0, csi_mode: str = "perfect",
                           outer: dict | None = None, inner: dict | None = None) -> dict:
    """Gradient and Newton runs on one instance, with iteration counts and trace statistics."""
    layout_seed, channel_seed = draw_seeds(seed, 0)
    scn = build_scenario(config or {}, seed=layout_seed)
    ch = draw_channel(scn, seed=channel_seed, csi_mode=csi_mode)
    report = {}
    for method in ("gradient", "newton"):
        cfg = OuterConfig(**{**(outer or {}), "method": method})
        sol = solve(scn, ch, cfg, InnerConfig(**(inner or {})))
        objectives = sol.trace.objectives
        # the first round runs on one fixed channel, so its objective trace is a clean descent
        logs = log_suboptimality(sol.trace.round(0).objectives)
        outer_n = sol.outer_iterations
        report[method] = {
            "solution": sol,
            "outer_iterations": outer_n,
            "inner_iterations": sol.inner_iterations,
            "objectives": objectives,
            "log_suboptimality": logs,
            "linear_r2": linear_fit_r2(logs),
            "inner_share": sol.inner_iterations / max(sol.inner_iterations + outer_n, 1),
            "termination": sol.termination,
        }
    return report


def convergence_csv(report: dict) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["method", "round", "iteration", "objective", "grad_norm", "T_total", "inner_iterations"])
    for method, rep in report.items():
        for row in rep["solution"].trace.rows:
            writer.writerow([method, row.get("round", 0), row["iteration"], repr(row["objective"]), repr(row["grad_norm"]),
                             repr(row["T_total"]), row["inner_iterations"]])
    return buf.getvalue()


# --------------------------------------------------------------------------- trend checks

@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def _col(rows, metric):
    return np.array([r.metrics[metric] for r in rows], dtype=float)


def check_data_sweep(rows: list[SweepRow], latency: float, zero_until: float = 30e3, band: float = 0.25,
                     bind_from: float = 40e3, min_frac_at_top: float = 0.45, tol: float = 1e-4) -> list[Check]:
    """Offloaded-fraction and latency trends of a sweep over the request size."""
    u = np.array([float(r.value) for r in rows])
    frac = _col(rows, "offloaded_fraction")
    T = _col(rows, "T_total")
    checks = []
    lo_zero = u <= zero_until * (1 - band)
    checks.append(Check("no offloading for small requests", bool(np.all(frac[lo_zero] <= 1e-9)),
                        f"fractions {np.round(frac[lo_zero], 4).tolist()} at u <= {zero_until * (1 - band):g}"))
    ok_mono = bool(np.all(np.diff(frac) >= -1e-9))
    checks.append(Check("offloaded fraction nondecreasing in u", ok_mono, f"fractions {np.round(frac, 4).tolist()}"))
    checks.append(Check("offloaded fraction at the largest request", bool(frac[-1] >= min_frac_at_top),
                        f"{frac[-1]:.3f} >= {min_frac_at_top}"))
    hi = u >= bind_from * (1 + band)
    checks.append(Check("deadline binds for large requests", bool(np.all(np.abs(T[hi] - latency) <= tol * latency)),
                        f"T_total {np.round(T[hi] * 1e3, 5).tolist()} ms"))
    lo = u <= bind_from * (1 - band)
    checks.append(Check("deadline slack for small requests", bool(np.all(T[lo] < latency)),
                        f"T_total {np.round(T[lo] * 1e3, 5).tolist()} ms"))
    return checks


def check_latency_sweep(rows: list[SweepRow], local_from: float = 15e-3, e_m_tol: float = 1e-12) -> list[Check]:
    Td = np.array([float(r.value) for r in rows])
    local = _col(rows, "local_fraction")
    e_m = _col(rows, "E_m")
    sel = Td >= local_from - 1e-12
    return [
        Check("all bits computed locally for loose deadlines", bool(np.all(local[sel] >= 1 - 1e-9)),
              f"local fractions {np.round(local[sel], 4).tolist()} for Td >= {local_from * 1e3:g} ms"),
        Check("MEC energy vanishes for loose deadlines", bool(np.all(e_m[sel] <= e_m_tol)),
              f"E_m {e_m[sel].tolist()}"),
    ]


def check_convergence(report: dict, r2_min: float = 0.9, share_min: float = 0.9) -> list[Check]:
    gd, nt = report["gradient"], report["newton"]
    return [
        Check("Newton needs fewer outer iterations", nt["outer_iterations"] < gd["outer_iterations"],
              f"newton {nt['outer_iterations']} vs gradient {gd['outer_iterations']}"),
        Check("gradient trace converges linearly", bool(gd["linear_r2"] >= r2_min),
              f"R^2 {gd['linear_r2']:.3f} over {len(gd['log_suboptimality'])} points"),
        Check("inner iterations dominate the cost", bool(min(gd["inner_share"], nt["inner_share"]) >= share_min),
              f"inner share {gd['inner_share']:.4f} / {nt['inner_share']:.4f}"),
    ]
