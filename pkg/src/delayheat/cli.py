"""Command-line entry point: ``design``, ``simulate`` and ``sweep`` verbs.

Exit codes: 0 success, 2 configuration error, 3 design error, 4 numerical
error, 5 divergence.
"""

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import initial_condition, load_config, potential_from
from .errors import ConfigError, DelayHeatError
from .monitor import NormEvaluator, big_m, decay_rate_fit, h1_norm, lyapunov_diagnostics
from .predictor import place_poles, predictor_series_alpha
from .reduction import (build_reduced_system, kalman_determinant_closed_form,
                        kalman_determinant_direct, kalman_rank)
from .sim import SimConfig, simulate
from .spectral import Grid, decompose, eigen_residual, spectral_report

log = logging.getLogger("delayheat")

FLOAT_FMT = "%.17g"
MONITOR_COLUMNS = ("t", "V1", "VD", "integral_term", "modal_term", "h1_norm", "l2_norm")
SWEEP_COLUMNS = ("parameter", "value", "n", "norm_K1", "M", "h1_slope", "h1_r2",
                 "vd_monotone", "status", "message")


@dataclass
class Pipeline:
    pot: object
    grid: Grid
    operator: object
    dec: object
    coeffs: object
    sys: object
    rank: dict
    design: object
    weights: object


def build_pipeline(cfg, system_hook=None):
    """Spectral decomposition, reduced system, gain and Lyapunov weights.

    ``system_hook`` maps the reduced system to a replacement before the
    design step; tests use it to inject synthetic systems.
    """
    pot = potential_from(cfg)
    grid = Grid(cfg.grid_N, cfg.L)
    M, dec, coeffs = decompose(pot, grid, J=cfg.J, eta=cfg.eta)
    sys_ = build_reduced_system(dec, coeffs)
    if system_hook is not None:
        sys_ = system_hook(sys_)
    rank = kalman_rank(sys_, cfg.D)
    design = place_poles(sys_, cfg.D, cfg.target_poles)
    weights = big_m(sys_, design, pot, grid, cfg.safety_factor)
    return Pipeline(pot, grid, M, dec, coeffs, sys_, rank, design, weights)


def design_report(p, series_terms=None):
    sys_ = p.sys
    reduction = {
        "n": sys_.n,
        "A1": sys_.A1.tolist(),
        "B1": sys_.B1.tolist(),
        "kalman_rank": p.rank["rank"],
        "kalman_rank_undelayed": p.rank["rank_undelayed"],
        "controllable": p.rank["controllable"],
        "determinant_direct": kalman_determinant_direct(sys_),
    }
    if sys_.n:
        reduction["determinant_closed_form"] = kalman_determinant_closed_form(sys_)
    weights = p.weights.as_dict()
    weights["sufficiency_margins"] = list(p.weights.sufficiency_margins())
    spectral = spectral_report(p.dec, p.coeffs)
    spectral["orthonormality_defect"] = p.dec.orthonormality_defect()
    spectral["eigen_residual"] = float(np.max(eigen_residual(p.operator, p.dec)))
    spectral["boundary_identity_defect"] = float(
        np.max(p.coeffs.boundary_identity_defect(p.dec.eigenvalues)))
    spectral["near_zero_eigenvalue"] = bool(p.dec.near_zero)
    return {"spectral": spectral, "reduction": reduction,
            "gain": p.design.report(series_terms), "weights": weights}


def sim_config(cfg):
    return SimConfig(dt=cfg.dt, t_final=cfg.t_final, D=cfg.D, y0=initial_condition(cfg),
                     open_loop=cfg.open_loop, consistency_cadence=cfg.consistency_cadence,
                     snapshot_times=tuple(cfg.snapshot_times))


def _ensure_dir(out):
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"output directory {out} is not writable", [str(exc)]) from exc
    return out


def write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, allow_nan=True)
        fh.write("\n")


def _write_table(path, header, columns):
    data = np.column_stack([np.asarray(c, dtype=float) for c in columns])
    np.savetxt(path, data, fmt=FLOAT_FMT, delimiter=",", header=",".join(header), comments="")


def trajectory_columns(traj):
    header = ["t", "u_D", "alpha", "h1_norm", "l2_norm", "V1", "VD"]
    header += [f"w_{j + 1}" for j in range(traj.J)]
    cols = [traj.t, traj.u_D, traj.alpha, traj.h1_norm, traj.l2_norm, traj.V1, traj.VD]
    cols += list(traj.w.T)
    return header, cols


def write_trajectory_csv(path, traj):
    _write_table(path, *trajectory_columns(traj))


def write_monitor_csv(path, traj):
    _write_table(path, MONITOR_COLUMNS, [getattr(traj, c) for c in MONITOR_COLUMNS])


def read_csv_columns(path):
    """Parse an emitted CSV into ``{column: array}``."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return {name: data[:, i] for i, name in enumerate(header)}


def h1_fit(traj, cfg):
    lo, hi = cfg.window()
    return decay_rate_fit(traj.t, traj.h1_norm, (lo, min(hi, traj.t[-1])))


def summary_line(p, fit, diag, open_loop):
    eig = ", ".join(f"{e.real:.6g}{e.imag:+.3g}j"
                    for e in np.sort_complex(p.design.closed_loop_eigenvalues()))
    parts = [f"n={p.sys.n}", f"eig(A_cl)=[{eig}]",
             f"h1_slope={fit['slope']:.6g}", f"r2={fit['r2']:.4f}"]
    if open_loop:
        parts.append("UNSTABLE (open loop)" if fit["slope"] > 0 else "open loop")
    elif diag["vd_monotone"]:
        parts.append("VD monotone after 2D")
    else:
        parts.append(f"VD NOT monotone after 2D ({diag['vd_increases']} increases)")
    return " ".join(parts)


def run_design(cfg, out, system_hook=None, echo=print):
    p = build_pipeline(cfg, system_hook)
    out = _ensure_dir(out)
    write_json(out / cfg.report_path, design_report(p))
    eig = ", ".join(f"{e.real:.6g}{e.imag:+.3g}j"
                    for e in np.sort_complex(p.design.closed_loop_eigenvalues()))
    echo(f"n={p.sys.n} eig(A_cl)=[{eig}] K1={np.array2string(p.design.K1, precision=6)} "
         f"M={p.weights.M:.6g}")
    return 0


def run_simulate(cfg, out, system_hook=None, echo=print):
    """Full pipeline; returns ``(exit_code, result dict)``."""
    p = build_pipeline(cfg, system_hook)
    out = _ensure_dir(out)
    scfg = sim_config(cfg)
    traj = simulate(scfg, p.dec, p.coeffs, p.sys, p.design, p.pot, p.grid,
                    weights=None if cfg.open_loop else p.weights)
    for ts, y in traj.snapshots.items():
        k = int(round(ts / cfg.dt))
        h1_norm(traj.w[k], p.dec, p.pot, p.grid)           # identity cross-check
        _write_table(out / f"snapshot_t{ts:g}.csv", ("x", "y"), (p.grid.nodes, y))
    fit = h1_fit(traj, cfg)
    evaluator = NormEvaluator(p.dec, p.pot, p.grid)
    series_terms = None
    checks = {"h1_fit": fit}
    diag = {"vd_monotone": False, "vd_increases": 0}
    if not cfg.open_loop:
        diag = lyapunov_diagnostics(traj, evaluator)
        checks["lyapunov"] = diag
        series = predictor_series_alpha(traj.t, traj.X1, p.design)
        m = int(round(cfg.D / cfg.dt))
        series_terms = series.terms
        checks["series"] = {"terms": series.terms, "converged": series.converged,
                            "max_alpha_error": float(np.max(np.abs(series.alpha[m:]
                                                                   - traj.alpha[m:])))}
        checks["artstein_defect_max"] = float(np.nanmax(traj.artstein_defect)) \
            if np.any(np.isfinite(traj.artstein_defect)) else 0.0
        checks["artstein_drift_max"] = float(np.max(traj.artstein_drift))
    summary = summary_line(p, fit, diag, cfg.open_loop)
    report = design_report(p, series_terms)
    report["simulation"] = {"dt": cfg.dt, "t_final": cfg.t_final, "J": p.dec.J,
                            "open_loop": cfg.open_loop, "fit_window": list(cfg.window())}
    report["checks"] = checks
    report["summary"] = summary
    write_json(out / cfg.report_path, report)
    write_trajectory_csv(out / cfg.trajectory_path, traj)
    write_monitor_csv(out / cfg.monitor_path, traj)
    echo(summary)
    return 0, {"pipeline": p, "trajectory": traj, "fit": fit, "diagnostics": diag,
               "summary": summary}


def _sweep_row(args):
    index, cfg, out, param, value = args
    row = {"parameter": param, "value": value, "n": "", "norm_K1": "", "M": "",
           "h1_slope": "", "h1_r2": "", "vd_monotone": "", "status": "ok", "message": ""}
    try:
        row_cfg = cfg.with_value(param, value)
        row_dir = Path(out) / f"row_{index:03d}_{param}_{value:g}"
        _, res = run_simulate(row_cfg, row_dir, echo=lambda s: None)
        p, fit, diag = res["pipeline"], res["fit"], res["diagnostics"]
        row.update(n=p.sys.n, norm_K1=float(np.linalg.norm(p.design.K1)), M=p.weights.M,
                   h1_slope=fit["slope"], h1_r2=fit["r2"],
                   vd_monotone="" if row_cfg.open_loop else bool(diag["vd_monotone"]),
                   message=res["summary"])
    except DelayHeatError as exc:
        row.update(status=type(exc).__name__, message=str(exc))
    return row


def _format_cell(v):
    if isinstance(v, float):
        return FLOAT_FMT % v
    return str(v)


def run_sweep(cfg, out, workers=None, echo=print):
    if not cfg.sweep_values:
        raise ConfigError("no sweep configured", ["sweep.values: must be a non-empty list"])
    out = _ensure_dir(out)
    jobs = [(i, cfg, str(out), cfg.sweep_parameter, v) for i, v in enumerate(cfg.sweep_values)]
    workers = workers or cfg.workers or min(len(jobs), os.cpu_count() or 1)
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_row, jobs))
    else:
        rows = [_sweep_row(j) for j in jobs]
    with open(out / "sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SWEEP_COLUMNS)
        for row in rows:
            writer.writerow([_format_cell(row[c]) for c in SWEEP_COLUMNS])
    failed = sum(r["status"] != "ok" for r in rows)
    echo(f"sweep over {cfg.sweep_parameter}: {len(rows)} rows, {failed} failed")
    return 0, rows


def read_sweep_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def run(cfg, out, verb="simulate", system_hook=None, echo=print):
    """Dispatch a verb; returns the process exit status."""
    try:
        if verb == "design":
            return run_design(cfg, out, system_hook, echo)
        if verb == "simulate":
            return run_simulate(cfg, out, system_hook, echo)[0]
        if verb == "sweep":
            return run_sweep(cfg, out, echo=echo)[0]
        raise ConfigError(f"unknown verb {verb!r}")
    except DelayHeatError as exc:
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return exc.exit_code


def parser():
    ap = argparse.ArgumentParser(
        prog="delayheat",
        description="Predictor-based boundary stabilization of a reaction-diffusion "
                    "equation with input delay.")
    ap.add_argument("verb", choices=("design", "simulate", "sweep"))
    ap.add_argument("--config", required=True, help="JSON run configuration")
    ap.add_argument("--out", default=".", help="output directory (default: current)")
    ap.add_argument("--verbose", "-v", action="count", default=0)
    return ap


def main(argv=None, system_hook=None):
    args = parser().parse_args(argv)
    level = logging.WARNING if args.verbose == 0 else (
        logging.INFO if args.verbose == 1 else logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    logging.captureWarnings(True)
    try:
        cfg = load_config(args.config)
    except DelayHeatError as exc:
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return exc.exit_code
    if args.verb == "sweep" and not cfg.sweep_values:
        print("error (ConfigError): the sweep verb needs a 'sweep' section", file=sys.stderr)
        return ConfigError.exit_code
    return run(cfg, args.out, args.verb, system_hook)


if __name__ == "__main__":
    sys.exit(main())
