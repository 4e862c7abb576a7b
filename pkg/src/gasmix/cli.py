"""Command-line entry point: ``gasmix <subcommand> ...``.

Every subcommand exits 0 on success.  Failures print ``error [stage]: ...``
on stderr and exit 1; bad arguments exit 2 (argparse convention).
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from .dynamics import BoundaryValues, steady_state
from .network import load_network, refine, save_network
from .simulator import simulate
from .validation import compare_tables
from .workflow import (
    HOUR,
    KM,
    MPA,
    ScenarioDocument,
    WorkflowError,
    _plain,
    _stage,
    load_table,
    mean_steady_state,
    optimize,
    periodicity_gap,
    read_controls,
    read_report,
    read_state,
    run_workflow,
    write_optimization,
    write_report,
    write_state,
)

log = logging.getLogger("gasmix")


def _load_doc(path) -> ScenarioDocument:
    return _stage("parse", ScenarioDocument.load, path)


def _network(doc: ScenarioDocument, path):
    return _stage("refine", doc.refined_network, path)


def cmd_refine(args) -> None:
    net = _stage("parse", load_network, args.network)
    fine = _stage("refine", refine, net, args.cap_km * KM)
    _stage("write", save_network, fine, args.out)
    print(f"{len(net.edges)} edges -> {len(fine.edges)} segments, "
          f"{len(fine.withdrawal_nodes)} withdrawal nodes; wrote {args.out}")


def cmd_steady(args) -> None:
    doc = _load_doc(args.scenario)
    net = _network(doc, args.network)
    state, ratios = _stage("steady", mean_steady_state, doc, net, args.ratio)
    _stage("write", write_state, args.out, state, net, doc, ratios)
    p = state.pressure(*doc.sigmas) / MPA
    print(f"steady state: pressure {p.min():.4f} .. {p.max():.4f} MPa; wrote {args.out}")


def cmd_simulate(args) -> None:
    doc = _load_doc(args.scenario)
    net = _network(doc, args.network)
    labels = [a.label for a in net.actuators]
    controls = _stage("parse", read_controls, args.controls, labels, doc.horizon)
    boundary = _stage("build", doc.boundary, net)
    s1, s2 = doc.sigmas
    if args.initial_state:
        x0 = _stage("parse", read_state, args.initial_state, net)
    else:
        b0 = boundary.at(0.0)
        r0 = np.atleast_1d(controls(0.0)) if controls is not None else None
        x0 = _stage("steady", steady_state, net, BoundaryValues(b0.s1, b0.s2, b0.w), r0, s1, s2)
    traj = _stage("simulate", simulate, net, boundary, controls, x0, doc.horizon,
                  doc.simulation_options(), s1, s2)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _stage("write", traj.to_csv, out / "simulated.csv")
    print(f"simulated {doc.horizon / HOUR:g} h in {traj.stats.get('steps', 0)} steps; "
          f"periodicity gap {100 * periodicity_gap(traj):.2f}%; wrote {out / 'simulated.csv'}")


def cmd_optimize(args) -> None:
    doc = _load_doc(args.scenario)
    net = _network(doc, args.network)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _stage("write", save_network, net, out / "network_refined.yaml")
    opt = optimize(doc, net, doc.solver_options(verbose=args.verbose))
    _stage("write", write_optimization, out, doc, net, opt)
    r = opt.result
    print(f"{r.status} in {r.iterations} iterations, J = {r.objective_value:.6g}; wrote {out}")


def cmd_validate(args) -> None:
    optimized = _stage("parse", load_table, args.optimized, "optimized.csv")
    simulated = _stage("parse", load_table, args.simulated, "simulated.csv")
    report = _stage("validate", compare_tables, optimized, simulated)
    solver_file = Path(args.optimized) / "solver.yaml"
    if solver_file.is_file():
        stats = yaml.safe_load(solver_file.read_text())
        report.objective = stats.pop("objective", None)
        report.runtimes = stats.pop("runtimes", {})
        report.solver = stats
    _stage("write", write_report, args.out, report)
    print(report.table())


def _plot_rows(optimized, simulated, which):
    grid = np.union1d(optimized.times, simulated.times)
    grid = grid[(grid >= max(optimized.times[0], simulated.times[0]))
                & (grid <= min(optimized.times[-1], simulated.times[-1]))]
    if which == "pressure":
        ids, a, b, scale, unit = optimized.node_ids, optimized.pressure, simulated.pressure, MPA, "mpa"
        prefix = "node"
    else:
        ids, a, b, scale, unit = optimized.edge_ids, optimized.flux, simulated.flux, 1.0, "kg_m2s"
        prefix = "edge"
    header = ["t_h"]
    cols = [grid / HOUR]
    for j, i in enumerate(ids):
        header += [f"{prefix}_{i}_optimized_{unit}", f"{prefix}_{i}_simulated_{unit}"]
        cols += [np.interp(grid, optimized.times, a[:, j]) / scale,
                 np.interp(grid, simulated.times, b[:, j]) / scale]
    return header, np.column_stack(cols)


def cmd_report(args) -> None:
    run = Path(args.run_dir)
    report_file = run / "report.yaml"
    optimized = _stage("parse", load_table, run, "optimized.csv")
    simulated = _stage("parse", load_table, run, "simulated.csv")
    if report_file.is_file():
        report = _stage("parse", read_report, report_file)
    else:
        report = _stage("validate", compare_tables, optimized, simulated)
    plot_dir = run / "plot"
    plot_dir.mkdir(exist_ok=True)
    for which in ("pressure", "flux"):
        header, rows = _plot_rows(optimized, simulated, which)
        with open(plot_dir / f"{which}.csv", "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(header)
            wr.writerows(rows.tolist())
    with open(plot_dir / "metrics.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["quantity", "avg_rel_l2_pct", "max_rel_pct"])
        wr.writerow(["pressure", report.pressure_l2, report.pressure_max])
        wr.writerow(["flux", report.flux_l2, report.flux_max])
    print(report.table())
    print(f"plot tables in {plot_dir}")


def _run_one(scenario, network, out_dir, fraction):
    doc = ScenarioDocument.load(scenario)
    if fraction is not None:
        doc = doc.with_hydrogen_fraction(fraction)
    report = run_workflow(doc, out_dir, network)
    return fraction, report


def cmd_run(args) -> None:
    base = Path(args.out_dir)
    fractions = args.hydrogen_fraction or [None]
    jobs = [(f, base if len(fractions) == 1 else base / f"h2_{f:g}") for f in fractions]
    if args.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            futures = [pool.submit(_run_one, args.scenario, args.network, d, f) for f, d in jobs]
            results = [fut.result() for fut in futures]
    else:
        results = [_run_one(args.scenario, args.network, d, f) for f, d in jobs]
    summary = []
    for (f, report), (_, d) in zip(results, jobs):
        if f is not None:
            print(f"hydrogen fraction {f:g}:")
        print(report.table())
        summary.append({"hydrogen_fraction": f, "objective": report.objective, "dir": str(d)})
    if len(jobs) > 1:
        (base / "sweep.yaml").write_text(yaml.safe_dump(_plain(summary), sort_keys=False))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gasmix", description="Hydrogen/natural-gas pipeline simulation and control")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("refine", help="split long pipes into short segments")
    p.add_argument("--network", required=True)
    p.add_argument("--cap-km", type=float, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("steady", help="steady state for time-averaged boundary data")
    p.add_argument("--scenario", required=True)
    p.add_argument("--network", help="overrides the scenario's network")
    p.add_argument("--ratio", type=float, help="uniform actuator ratio (default: lowest one meeting p_min)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_steady)

    p = sub.add_parser("simulate", help="integrate the network ODEs under given controls")
    p.add_argument("--scenario", required=True)
    p.add_argument("--network")
    p.add_argument("--controls", required=True)
    p.add_argument("--initial-state", help="state file (default: steady state at t = 0)")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("optimize", help="solve the periodic optimal control problem")
    p.add_argument("--scenario", required=True)
    p.add_argument("--network")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("validate", help="compare optimized and simulated trajectories")
    p.add_argument("--optimized", required=True, help="directory or CSV file")
    p.add_argument("--simulated", required=True, help="directory or CSV file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("report", help="print metrics and write plot-ready tables")
    p.add_argument("--run-dir", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("run", help="optimize, simulate and validate in one go")
    p.add_argument("--scenario", required=True)
    p.add_argument("--network")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--hydrogen-fraction", type=float, action="append",
                   help="constant supply hydrogen mass fraction; repeat for a sweep")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_run)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except WorkflowError as exc:
        print(f"error {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
