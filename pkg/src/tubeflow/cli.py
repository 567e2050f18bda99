"""Batch experiment runner.

Subcommands expose the pipeline stages (calibrate, decompose, verify,
bilinear, kakeya) plus a standalone flow checker; ``run`` chains the
configured stages and emits a JSON report with one recorded outcome per
invariant and CSV tables for the sweeps.  Identical config and seed produce
byte-identical CSV output.  Exit codes: 0 all checks pass, 1 a check failed,
2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, load_config
from .estimates import (
    BilinearTubeConfig,
    bilinear_ratio,
    bilinear_via_tubes,
    loglog_slope,
    make_lipschitz_family,
    multilinear_overlap,
)
from .flow import FlowInfeasibleError, verify_local_conservation
from .kernels import (
    CalibrationError,
    EnsembleSpec,
    KernelBuildError,
    build_kernel,
    calibrate_tau,
    verify_fs,
    verify_lc,
)
from .lattice import WeightLayers
from .report import RunReport, write_csv
from .schrodinger import FrequencyWindow, make_band_limited, save_field
from .tubes import DominationError, decompose, verify_domination, verify_efficiency

PARTITION_BUDGET = 1e-10


def _map_ordered(fn, items, threads: int):
    if threads <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _resolve_out_dir(cfg: ExperimentConfig, arg_out: str | None) -> Path:
    out = arg_out or cfg.out_dir or os.environ.get("TUBEFLOW_OUT_DIR", "runs/latest")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _build_stage(cfg: ExperimentConfig):
    grid = cfg.grid.grid()
    kernel = build_kernel(grid, R=cfg.kernel.dilation)
    return grid, kernel


def _tau_stage(cfg: ExperimentConfig, kernel, report: RunReport) -> float:
    if cfg.tau.policy == "fixed":
        report.constants["tau"] = cfg.tau.value
        report.tau = cfg.tau.value
        return cfg.tau.value
    spec = EnsembleSpec(count=cfg.tau.ensemble_fields, seed=cfg.tau.seed)
    result = calibrate_tau(spec, kernel, cfg.tau.max, trials=cfg.tau.subsets,
                           seed=cfg.tau.seed)
    report.constants["tau"] = result.tau
    report.constants["tau_feasible"] = result.feasible_tau
    report.tau = result.tau
    return result.tau


def _verify_stage(cfg: ExperimentConfig, grid, kernel, tau, report: RunReport,
                  out_dir: Path, threads: int):
    err = float(np.max(np.abs(kernel.partition_sum() - 1.0)))
    report.record("partition_of_unity", err <= PARTITION_BUDGET, err,
                  f"max deviation {err:.3e}, budget {PARTITION_BUDGET:g}")
    window = FrequencyWindow((0.0,) * grid.d, 1.0)
    lc_values = [
        verify_lc(make_band_limited(grid, window, "random-phase",
                                    seed=cfg.verify.seed + i), kernel)
        for i in range(cfg.verify.lc_fields)
    ]
    report.constants["C_LC"] = max(lc_values)
    report.record("lc_finite", all(np.isfinite(v) for v in lc_values),
                  max(lc_values), f"{len(lc_values)} fields")

    def fs_one(i):
        u = make_band_limited(grid, window, "random-phase", seed=cfg.verify.seed + i)
        return verify_fs(u, kernel, tau, trials=cfg.verify.fs_subsets,
                         seed=cfg.verify.seed + i)

    fs_reports = _map_ordered(fs_one, range(cfg.verify.fs_fields), threads)
    worst = min(r.margin_min for r in fs_reports)
    report.record("fs_margins", worst >= 0.0, worst,
                  f"{sum(r.n_checks for r in fs_reports)} subset/time checks")
    rows = [(i, r.tau, r.margin_min, r.n_checks) for i, r in enumerate(fs_reports)]
    path = out_dir / "fs_margins.csv"
    write_csv(path, ("field", "tau", "margin_min", "n_checks"), rows)
    report.outputs.append(str(path))


def _decompose_stage(cfg: ExperimentConfig, grid, kernel, tau, report: RunReport,
                     out_dir: Path):
    window = FrequencyWindow(cfg.field.window_center, cfg.field.window_radius)
    u0 = make_band_limited(grid, window, cfg.field.profile, seed=cfg.field.seed)
    time_radius = cfg.decomposition.time_radius
    if cfg.decomposition.layers is not None:
        time_radius = cfg.decomposition.layers * tau / 2
    try:
        dec = decompose(u0, kernel, tau, time_radius,
                        den_bits=cfg.kernel.denominator_bits)
    except FlowInfeasibleError as err:
        report.record("flow_feasible", False, None,
                      f"layer {err.layer}: step too long for the finite-speed bound",
                      witness={"layer": err.layer, "cut": sorted(err.cut),
                               "deficit": err.deficit})
        return None
    report.record("flow_feasible", True, None,
                  f"{dec.n_layers} layers on {dec.graph.n_sites} sites")
    w = dec.ensemble.weights
    lf = dec.ensemble.flow
    exact = all(
        lf.out_marginal(i) == w.layer(i) and lf.in_marginal(i) == w.layer(i + 1)
        for i in range(lf.n_transitions)
    )
    report.record("flow_marginals_exact", exact, None,
                  f"{lf.n_transitions} transitions, zero error required")
    totals = {sum(w.layer(i)) for i in range(w.n_layers)}
    report.record("layer_totals_constant", len(totals) == 1, float(w.layer_total))
    tubes = dec.tubes(min_weight=cfg.decomposition.tube_threshold
                      * float(dec.total_weight))
    speed_ok = all(t.max_speed() <= dec.speed_limit + 1e-9 for t in tubes)
    report.record("tube_speed_limit", speed_ok, dec.speed_limit,
                  f"{len(tubes)} tubes above threshold")
    try:
        dom = verify_domination(
            u0, dec, time_samples_per_layer=cfg.decomposition.domination_time_samples)
        report.constants["C_dom"] = dom.constant
        report.record("domination", True, dom.constant,
                      f"{dom.n_samples} prism samples, peak {dom.peak_intensity:.3e}")
    except DominationError as err:
        report.record("domination", False, None, str(err),
                      witness={"point": [list(map(float, err.point[0])), err.point[1]],
                               "intensity": err.intensity_value})
    eff = verify_efficiency(dec, u0)
    report.constants["C_eff"] = eff.constant
    report.record("efficiency", eff.passed, eff.constant,
                  f"bound {eff.bound:.6g}")
    doc = {
        "d": dec.d,
        "S": dec.graph.S,
        "denominator": w.den,
        "tau": dec.tau,
        "radius": dec.radius,
        "time_radius": dec.time_radius,
        "boost_xi": list(dec.boost_xi),
        "boost_rho": dec.boost_rho,
        "layers": [list(w.layer(i)) for i in range(w.n_layers)],
        "flows": lf.to_triples(),
    }
    path = out_dir / "decomposition.json"
    path.write_text(json.dumps(doc) + "\n")
    report.outputs.append(str(path))
    rows = []
    for tid, tube in enumerate(tubes):
        for t, v in zip(tube.times, tube.vertices):
            rows.append((tid, tube.weight, t, *v))
    path = out_dir / "tubes.csv"
    write_csv(path, ("tube", "weight", "t") + tuple(f"x{i}" for i in range(dec.d)), rows)
    report.outputs.append(str(path))
    save_field(u0, out_dir / "field0")
    report.outputs.append(str(out_dir / "field0.npy"))
    return dec


def _bilinear_stage(cfg: ExperimentConfig, grid, report: RunReport, out_dir: Path,
                    threads: int):
    if grid.d != 1:
        raise ConfigError("bilinear: sweeps are one-dimensional")
    bc = cfg.bilinear
    rows = []
    by_m: dict[float, list[float]] = {}
    points = [(seed, m, n) for seed in bc.seeds for (m, n) in bc.pairs]

    def one(point):
        seed, m, n = point
        u = make_band_limited(grid, FrequencyWindow((n,) * 1, n * bc.u_window_fraction),
                              "gaussian", seed=seed)
        v = make_band_limited(grid, FrequencyWindow((bc.v_center * m,), bc.v_radius * m),
                              "gaussian", seed=seed + 1)
        ratio = bilinear_ratio(u, v, n, m, bc.time_radius, bc.nt)
        sandwich = None
        measured_c = None
        if bc.sandwich:
            tube_cfg = BilinearTubeConfig(time_radius=bc.sandwich_time_radius,
                                          tau=bc.tau, nt=min(bc.nt, 33))
            rep = bilinear_via_tubes(u, v, n, m, tube_cfg)
            sandwich = rep.sandwich_ok
            measured_c = rep.measured_constant
        return ratio, sandwich, measured_c

    results = _map_ordered(one, points, threads)
    sandwich_all = True
    for (seed, m, n), (ratio, sandwich, measured_c) in zip(points, results):
        rows.append((seed, m, n, ratio,
                     "" if measured_c is None else measured_c,
                     "" if sandwich is None else sandwich))
        by_m.setdefault(m, []).append(ratio)
        if sandwich is False:
            sandwich_all = False
    path = out_dir / "bilinear.csv"
    write_csv(path, ("seed", "m", "n", "ratio", "tube_constant", "sandwich"), rows)
    report.outputs.append(str(path))
    ratios = [r for (r, _, _) in results]
    report.constants["bilinear_ratio_max"] = max(ratios) if ratios else 0.0
    if bc.sandwich:
        report.record("bilinear_sandwich", sandwich_all, None,
                      f"{len(points)} sweep points")
    for m, values in sorted(by_m.items()):
        if len(values) >= 2 and min(values) > 0:
            trend = max(values) / min(values) - 1.0
            report.record(f"bilinear_trend_m{m:g}", trend <= 0.10, trend,
                          f"{len(values)} scales, spread over mean bound 10%")


def _kakeya_stage(cfg: ExperimentConfig, report: RunReport, out_dir: Path):
    kc = cfg.kakeya
    n = 3
    extent = max(kc.radii) + 8.0
    axes = np.eye(n)
    families = [
        make_lipschitz_family(tuple(axes[i]), kc.tubes_per_family, kc.delta,
                              extent, kc.seed + i, base_spread=kc.base_spread)
        for i in range(n)
    ]
    rows = []
    ratios = []
    for r in kc.radii:
        record = multilinear_overlap(families, r, nu=kc.nu, delta=kc.delta)
        rows.append((r, record.lhs, record.rhs, record.ratio))
        ratios.append(record.ratio)
    path = out_dir / "kakeya.csv"
    write_csv(path, ("box_radius", "lhs", "rhs", "ratio"), rows)
    report.outputs.append(str(path))
    if len(kc.radii) >= 2:
        slope = loglog_slope(kc.radii, ratios)
        report.constants["kakeya_slope"] = slope
        report.record("kakeya_slope", slope < 0.5, slope,
                      f"log-log fit over radii {list(kc.radii)}")


def run_pipeline(cfg: ExperimentConfig, out_dir: Path, threads: int = 1,
                 stages=("verify", "decompose", "bilinear", "kakeya")) -> RunReport:
    report = RunReport(cfg.content_hash())
    t_start = time.perf_counter()
    grid, kernel = _build_stage(cfg)
    report.timings["build"] = time.perf_counter() - t_start
    t0 = time.perf_counter()
    tau = _tau_stage(cfg, kernel, report)
    report.timings["tau"] = time.perf_counter() - t0
    if "verify" in stages:
        t0 = time.perf_counter()
        _verify_stage(cfg, grid, kernel, tau, report, out_dir, threads)
        report.timings["verify"] = time.perf_counter() - t0
    if "decompose" in stages:
        t0 = time.perf_counter()
        _decompose_stage(cfg, grid, kernel, tau, report, out_dir)
        report.timings["decompose"] = time.perf_counter() - t0
    if "bilinear" in stages and cfg.bilinear:
        t0 = time.perf_counter()
        _bilinear_stage(cfg, grid, report, out_dir, threads)
        report.timings["bilinear"] = time.perf_counter() - t0
    if "kakeya" in stages and cfg.kakeya:
        t0 = time.perf_counter()
        _kakeya_stage(cfg, report, out_dir)
        report.timings["kakeya"] = time.perf_counter() - t0
    report.timings["total"] = time.perf_counter() - t_start
    report_path = out_dir / "report.json"
    report.write(report_path)
    report.outputs.append(str(report_path))
    return report


def _cmd_flow_check(args) -> int:
    path = Path(args.weights)
    if not path.exists():
        print(f"weights file not found: {path}", file=sys.stderr)
        return 2
    try:
        weights, graph = WeightLayers.from_json(path.read_text())
    except (ValueError, KeyError) as err:
        print(f"bad weights file: {err}", file=sys.stderr)
        return 2
    reports = {}
    modes = ["cut-feasibility"]
    if args.mode == "both" and graph.n_sites <= 20:
        modes.append("brute-force")
    elif args.mode != "both":
        modes = [args.mode]
    for mode in modes:
        reports[mode] = verify_local_conservation(weights, graph, mode)
    verdicts = {
        mode: {
            "feasible": rep.feasible,
            "violations": [
                {"layer": v.layer, "sites": sorted(v.sites),
                 "held": v.held, "receivable": v.receivable}
                for v in rep.violations
            ],
        }
        for mode, rep in reports.items()
    }
    print(json.dumps(verdicts, indent=2, sort_keys=True))
    feasibilities = {rep.feasible for rep in reports.values()}
    return 0 if len(feasibilities) == 1 else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="tubeflow",
        description="mass-transport tube decompositions and estimate checks",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "calibrate", "decompose", "verify", "bilinear", "kakeya"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out-dir", default=None)
        p.add_argument("--seed-override", type=int, default=None)
        p.add_argument("--threads", type=int, default=1)
    fc = sub.add_parser("flow-check")
    fc.add_argument("--weights", required=True)
    fc.add_argument("--mode", default="both",
                    choices=("both", "cut-feasibility", "brute-force"))
    args = parser.parse_args(argv)
    if args.command == "flow-check":
        return _cmd_flow_check(args)
    try:
        cfg = load_config(args.config)
        if args.seed_override is not None:
            cfg = cfg.with_seed(args.seed_override)
        out_dir = _resolve_out_dir(cfg, args.out_dir)
        stage_map = {
            "run": ("verify", "decompose", "bilinear", "kakeya"),
            "calibrate": (),
            "decompose": ("decompose",),
            "verify": ("verify",),
            "bilinear": ("bilinear",),
            "kakeya": ("kakeya",),
        }
        if args.command == "bilinear" and not cfg.bilinear:
            raise ConfigError("bilinear: no sweep configured")
        if args.command == "kakeya" and not cfg.kakeya:
            raise ConfigError("kakeya: no sweep configured")
        report = run_pipeline(cfg, out_dir, args.threads, stage_map[args.command])
    except (ConfigError, KernelBuildError, CalibrationError) as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 2
    for check in report.checks:
        status = "PASS" if check.passed else "FAIL"
        value = "" if check.value is None else f" value={check.value:.6g}"
        print(f"[{status}] {check.name}{value}  {check.detail}")
    print(f"report: {out_dir / 'report.json'}")
    return 0 if report.passed else 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
