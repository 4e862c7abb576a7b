"""Scenario documents and the optimize -> simulate -> validate pipeline.

Scenario files are YAML with engineering units at the boundary (km, MPa,
hours, mass fractions); everything is converted to SI on load.  A profile
entry is either a constant or a mapping ``{times_hours: [...], values: [...]}``
of periodic piecewise-linear samples.
"""
from __future__ import annotations

import copy
import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .dynamics import BoundaryValues, MixtureState, ScenarioConfig, SteadyStateError, steady_state
from .network import GasConstituent, Network, load_network, refine, save_network
from .nlp_solver import SolverOptions, solve
from .ocp import OcpProblem, build_nlp, extract_controls
from .simulator import BoundaryProfiles, PeriodicProfile, SeriesTable, SimulationOptions, simulate
from .validation import ValidationReport, compare_tables

log = logging.getLogger(__name__)

MPA = 1e6
HOUR = 3600.0
KM = 1000.0


class ScenarioError(ValueError):
    """Malformed or inconsistent scenario document."""


class WorkflowError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause

    def __reduce__(self):
        return (type(self), (self.stage, self.cause))


def _profile_samples(spec, period, what):
    """``(times_s, values)`` for a constant or a sampled profile entry."""
    if isinstance(spec, (int, float)):
        return np.array([0.0]), np.array([float(spec)])
    if isinstance(spec, dict) and "times_hours" in spec and "values" in spec:
        t = np.asarray(spec["times_hours"], float) * HOUR
        v = np.asarray(spec["values"], float)
        if t.shape != v.shape:
            raise ScenarioError(f"{what}: times_hours and values differ in length")
        if t.size == 0 or t[0] != 0.0 or np.any(np.diff(t) <= 0) or t[-1] >= period:
            raise ScenarioError(f"{what}: sample times must increase from 0 and stay below the horizon")
        return t, v
    raise ScenarioError(f"{what}: expected a number or {{times_hours, values}}")


def _merge_profiles(profiles, period):
    times = np.unique(np.concatenate([t for t, _ in profiles]))
    cols = [PeriodicProfile(t, v, period)(times) for t, v in profiles]
    return times, np.column_stack(cols)


@dataclass
class ScenarioDocument:
    data: dict
    base_dir: Path = field(default_factory=Path.cwd)

    # -- loading -----------------------------------------------------------------
    @classmethod
    def load(cls, path) -> "ScenarioDocument":
        path = Path(path)
        try:
            data = yaml.safe_load(path.read_text())
        except yaml.YAMLError as exc:
            raise ScenarioError(f"{path}: {exc}") from exc
        doc = cls(data, path.parent)
        doc.validate()
        return doc

    @classmethod
    def from_dict(cls, data: dict, base_dir=None) -> "ScenarioDocument":
        doc = cls(copy.deepcopy(data), Path(base_dir) if base_dir else Path.cwd())
        doc.validate()
        return doc

    def validate(self) -> None:
        d = self.data
        if not isinstance(d, dict):
            raise ScenarioError("scenario document must be a mapping")
        for key in ("horizon_hours", "time_steps", "constituents", "supply", "withdrawal", "pressure_bounds_mpa"):
            if key not in d:
                raise ScenarioError(f"missing key {key!r}")
        if len(d["constituents"]) != 2:
            raise ScenarioError("exactly two constituents are required")
        if not float(d["horizon_hours"]) > 0:
            raise ScenarioError("horizon_hours must be positive")
        if int(d["time_steps"]) < 2:
            raise ScenarioError("time_steps must be at least 2")
        T = self.horizon
        for s in d["supply"]:
            _profile_samples(s.get("pressure_mpa"), T, f"supply {s.get('node')} pressure")
            _profile_samples(s.get("hydrogen_fraction", 0.0), T, f"supply {s.get('node')} hydrogen fraction")
        for w in d["withdrawal"]:
            _profile_samples(w.get("flux"), T, f"withdrawal {w.get('node')} flux")

    def with_hydrogen_fraction(self, fraction: float) -> "ScenarioDocument":
        """Copy with every supply injecting a constant hydrogen mass fraction."""
        data = copy.deepcopy(self.data)
        for s in data["supply"]:
            s["hydrogen_fraction"] = float(fraction)
        return ScenarioDocument.from_dict(data, self.base_dir)

    # -- derived objects -----------------------------------------------------------
    @property
    def horizon(self) -> float:
        return float(self.data["horizon_hours"]) * HOUR

    @property
    def segment_cap(self) -> float:
        return float(self.data.get("segment_cap_km", 10.0)) * KM

    @property
    def sigmas(self):
        c = self.data["constituents"]
        return float(c[0]["sound_speed"]), float(c[1]["sound_speed"])

    def network(self, override=None) -> Network:
        ref = override or self.data.get("network")
        if ref is None:
            raise ScenarioError("no network given (scenario key 'network' or --network)")
        path = Path(ref)
        if not path.is_absolute() and override is None:
            path = self.base_dir / path
        return load_network(path)

    def refined_network(self, override=None) -> Network:
        return refine(self.network(override), self.segment_cap)

    def scenario_config(self, net: Network) -> ScenarioConfig:
        d = self.data
        c = d["constituents"]
        pb = d["pressure_bounds_mpa"]
        A = len(net.actuators)
        coef = d.get("compressor_coefficient", 1.0)
        ratio_bounds = None
        if d.get("actuator_bounds"):
            rb = []
            for act in net.actuators:
                lo, hi = d["actuator_bounds"].get(act.label, (act.min_ratio, act.max_ratio))
                rb.append((float(lo), float(hi)))
            ratio_bounds = np.array(rb).reshape(A, 2)
        return ScenarioConfig(
            constituents=(GasConstituent(str(c[0]["name"]), float(c[0]["sound_speed"])),
                          GasConstituent(str(c[1]["name"]), float(c[1]["sound_speed"]))),
            horizon=self.horizon,
            pressure_min=float(pb["min"]) * MPA,
            pressure_max=float(pb["max"]) * MPA,
            isentropic_exponent=float(d.get("isentropic_exponent", 1.28)),
            compressor_coefficients=np.full(A, float(coef)),
            time_steps=int(d["time_steps"]),
            ratio_bounds=ratio_bounds,
        )

    def boundary(self, net: Network) -> BoundaryProfiles:
        T = self.horizon
        s1_sig, s2_sig = self.sigmas
        supply_ids = [n.id for n in net.supply_nodes]
        by_node = {int(s["node"]): s for s in self.data["supply"]}
        if set(by_node) != set(supply_ids):
            raise ScenarioError(f"supply entries {sorted(by_node)} do not match supply nodes {supply_ids}")
        s1_cols, s2_cols = [], []
        for nid in supply_ids:
            s = by_node[nid]
            tp, p = _profile_samples(s["pressure_mpa"], T, f"supply {nid} pressure")
            ta, a2 = _profile_samples(s.get("hydrogen_fraction", 0.0), T, f"supply {nid} hydrogen fraction")
            if np.any(a2 < 0) or np.any(a2 > 1):
                raise ScenarioError(f"supply {nid}: hydrogen fraction outside [0, 1]")
            times, vals = _merge_profiles([(tp, p * MPA), (ta, a2)], T)
            bv = BoundaryValues.from_pressure(vals[:, 0], vals[:, 1], np.zeros(times.size), s1_sig, s2_sig)
            s1_cols.append((times, bv.s1))
            s2_cols.append((times, bv.s2))
        ids = [n.id for n in net.withdrawal_nodes]
        w_by_node = {int(w["node"]): w for w in self.data["withdrawal"]}
        unknown = set(w_by_node) - set(ids)
        if unknown:
            raise ScenarioError(f"withdrawal entries reference unknown nodes {sorted(unknown)}")
        w_cols = []
        for nid in ids:
            if nid in w_by_node:
                w_cols.append(_profile_samples(w_by_node[nid]["flux"], T, f"withdrawal {nid} flux"))
            else:
                w_cols.append((np.array([0.0]), np.array([0.0])))
        ts1, S1 = _merge_profiles(s1_cols, T)
        ts2, S2 = _merge_profiles(s2_cols, T)
        tw, W = _merge_profiles(w_cols, T)
        return BoundaryProfiles(PeriodicProfile(ts1, S1, T), PeriodicProfile(ts2, S2, T), PeriodicProfile(tw, W, T))

    def solver_options(self, **overrides) -> SolverOptions:
        opts = dict(curvature="finite-difference")
        opts.update(self.data.get("solver") or {})
        opts.update(overrides)
        return SolverOptions(**opts)

    def simulation_options(self, **overrides) -> SimulationOptions:
        opts = dict(self.data.get("integrator") or {})
        opts.update(overrides)
        return SimulationOptions(**opts)


# -- control and state files ---------------------------------------------------------


def write_controls(path, profile: PeriodicProfile | None, labels) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t_s"] + [f"mu_{lab}" for lab in labels])
        if profile is None:
            return
        for t, row in zip(profile.sample_times, profile.values):
            wr.writerow([repr(float(t))] + [repr(float(v)) for v in row])


def read_controls(path, labels, period) -> PeriodicProfile | None:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    want = ["t_s"] + [f"mu_{lab}" for lab in labels]
    if header != want:
        raise ScenarioError(f"{path}: expected columns {want}, found {header}")
    if not labels:
        return None
    body = np.array(rows[1:], dtype=float)
    return PeriodicProfile(body[:, 0], body[:, 1:], period)


def state_document(state: MixtureState, net: Network, sigma1, sigma2) -> dict:
    p = state.pressure(sigma1, sigma2)
    return {
        "nodes": [
            {"id": n.id, "rho1": float(state.rho1[j]), "rho2": float(state.rho2[j]),
             "pressure_mpa": float(p[j] / MPA), "hydrogen_fraction": float(state.eta2[j])}
            for j, n in enumerate(net.withdrawal_nodes)
        ],
        "edges": [{"id": e.id, "flux": float(state.flux[k])} for k, e in enumerate(net.edges)],
    }


def read_state(path, net: Network) -> MixtureState:
    doc = yaml.safe_load(Path(path).read_text())
    by_id = {int(n["id"]): n for n in doc["nodes"]}
    ids = [n.id for n in net.withdrawal_nodes]
    if set(by_id) != set(ids):
        raise ScenarioError(f"{path}: state nodes do not match the network")
    rho1 = np.array([by_id[i]["rho1"] for i in ids], float)
    rho2 = np.array([by_id[i]["rho2"] for i in ids], float)
    flux_by = {int(e["id"]): e["flux"] for e in doc.get("edges", [])}
    flux = np.array([flux_by.get(e.id, 0.0) for e in net.edges], float)
    return MixtureState(rho1, rho2, flux)


# -- pipeline -----------------------------------------------------------------------


@dataclass
class OptimizationOutcome:
    problem: OcpProblem
    result: object
    z: np.ndarray
    controls: PeriodicProfile | None
    initial_state: MixtureState
    runtimes: dict


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except WorkflowError:
        raise
    except Exception as exc:  # noqa: BLE001 - re-raised with the stage tag
        raise WorkflowError(name, exc) from exc


def optimize(doc: ScenarioDocument, net: Network, solver_opts: SolverOptions | None = None) -> OptimizationOutcome:
    """Build and solve the NLP for an already refined network."""
    runtimes = {}
    t0 = time.perf_counter()
    cfg = _stage("build", doc.scenario_config, net)
    bnd = _stage("build", doc.boundary, net)
    problem = _stage("build", build_nlp, net, cfg, bnd)
    runtimes["build"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    z0 = _stage("steady", problem.feasible_start)
    runtimes["steady"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    opts = solver_opts or doc.solver_options()
    result = _stage("solve", solve, problem, problem.scale(z0), opts)
    runtimes["solve"] = time.perf_counter() - t0
    if not result.success:
        raise WorkflowError("solve", RuntimeError(f"solver status {result.status} after {result.iterations} iterations"))
    z = problem.unscale(result.x)
    controls = extract_controls(problem, z)
    rho1, rho2, phi, _ = problem.layout.split(z)
    x0 = MixtureState(np.maximum(rho1[0], 0.0), np.maximum(rho2[0], 0.0), phi[0].copy())
    return OptimizationOutcome(problem, result, z, controls, x0, runtimes)


def solver_stats(problem: OcpProblem, result) -> dict:
    return {
        "status": result.status,
        "iterations": int(result.iterations),
        "kkt_residual": float(result.kkt_residual),
        "feasibility": float(result.feasibility),
        "wall_time_s": float(result.wall_time),
        "variables": int(problem.num_vars),
        "equality_rows": int(problem.num_equalities),
        "pressure_rows_one_sided": int(problem.num_inequalities),
        "ratio_bounds": int(2 * problem.layout.N * problem.layout.A),
    }


def periodicity_gap(traj) -> float:
    """``|x(T) - x(0)| / |peak-to-peak of x|`` for the partial-density state."""
    X = np.concatenate([traj.rho1, traj.rho2], axis=1)
    ptp = np.ptp(X, axis=0)
    den = float(np.linalg.norm(ptp))
    return float(np.linalg.norm(X[-1] - X[0]) / den) if den > 0 else 0.0


def mean_steady_state(doc: ScenarioDocument, net: Network, ratio=None, samples: int = 2000):
    """Steady state for the time-averaged boundary data.

    Returns ``(state, ratios)``.  Without ``ratio`` all actuators share the
    smallest ratio (within their bounds) that keeps every nodal pressure at or
    above the lower pressure bound; the upper ratio bound is used if none does.
    """
    s1_sig, s2_sig = doc.sigmas
    t = np.arange(samples) * (doc.horizon / samples)
    s1, s2, w = doc.boundary(net).sample(t)
    bv = BoundaryValues(s1.mean(axis=0), s2.mean(axis=0), w.mean(axis=0))
    A = len(net.actuators)
    if not A:
        return steady_state(net, bv, None, s1_sig, s2_sig), np.zeros(0)
    if ratio is not None:
        r = np.broadcast_to(np.asarray(ratio, float), (A,)).copy()
        return steady_state(net, bv, r, s1_sig, s2_sig), r
    cfg = doc.scenario_config(net)
    bounds = cfg.ratio_bounds if cfg.ratio_bounds is not None else np.array(
        [[a.min_ratio, a.max_ratio] for a in net.actuators])
    lo, hi = float(np.max(bounds[:, 0])), float(np.min(bounds[:, 1]))

    def attempt(r):
        try:
            s = steady_state(net, bv, np.full(A, r), s1_sig, s2_sig)
        except SteadyStateError:
            return None
        return s if np.all(s.pressure(s1_sig, s2_sig) >= cfg.pressure_min) else None

    best = attempt(lo)
    if best is not None:
        return best, np.full(A, lo)
    best = attempt(hi)
    if best is None:
        return steady_state(net, bv, np.full(A, hi), s1_sig, s2_sig), np.full(A, hi)
    while hi - lo > 1e-4:
        mid = 0.5 * (lo + hi)
        s = attempt(mid)
        if s is None:
            lo = mid
        else:
            hi, best = mid, s
    return best, np.full(A, hi)


def write_state(path, state: MixtureState, net: Network, doc: ScenarioDocument, ratios=None) -> None:
    s1, s2 = doc.sigmas
    d = state_document(state, net, s1, s2)
    if ratios is not None and len(ratios):
        d["ratios"] = {a.label: float(r) for a, r in zip(net.actuators, ratios)}
    Path(path).write_text(yaml.safe_dump(d, sort_keys=False))


def write_optimization(out, doc: ScenarioDocument, net: Network, opt: OptimizationOutcome):
    """Write optimized.csv, controls.csv, initial_state.yaml and solver.yaml; return the table."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    optimized = opt.problem.table(opt.z)
    optimized.to_csv(out / "optimized.csv")
    write_controls(out / "controls.csv", opt.controls, [a.label for a in net.actuators])
    write_state(out / "initial_state.yaml", opt.initial_state, net, doc)
    stats = dict(solver_stats(opt.problem, opt.result), objective=float(opt.result.objective_value),
                 runtimes=opt.runtimes)
    (out / "solver.yaml").write_text(yaml.safe_dump(_plain(stats), sort_keys=False))
    return optimized


def run_workflow(doc: ScenarioDocument, out_dir=None, network_override=None,
                 solver_opts: SolverOptions | None = None) -> ValidationReport:
    """Refine, optimize, simulate from the optimal initial state, compare.

    With ``out_dir`` every intermediate artifact is written as soon as it
    exists, so a failing stage leaves the earlier ones in place.
    """
    t_all = time.perf_counter()
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    net = _stage("parse", doc.refined_network, network_override)
    if out:
        save_network(net, out / "network_refined.yaml")
    opt = optimize(doc, net, solver_opts)
    problem, z = opt.problem, opt.z
    if out:
        optimized = _stage("write", write_optimization, out, doc, net, opt)
    else:
        optimized = problem.table(z)
    t0 = time.perf_counter()
    s1, s2 = doc.sigmas
    traj = _stage("simulate", simulate, net, problem.boundary, opt.controls, opt.initial_state,
                  doc.horizon, doc.simulation_options(), s1, s2)
    t_sim = time.perf_counter() - t0
    if out:
        traj.to_csv(out / "simulated.csv")
    report = _stage("validate", compare_tables, optimized, traj.table())
    report.objective = float(opt.result.objective_value)
    report.solver = solver_stats(problem, opt.result)
    report.runtimes = dict(opt.runtimes, simulate=t_sim, total=time.perf_counter() - t_all)
    report.extra = {
        "periodicity_gap": periodicity_gap(traj),
        "simulation_steps": int(traj.stats.get("steps", 0)),
        "hydrogen_fraction_mean": float(np.mean(problem.s2 / (problem.s1 + problem.s2))),
    }
    if out:
        write_report(out / "report.yaml", report)
    return report


def write_report(path, report: ValidationReport) -> None:
    Path(path).write_text(yaml.safe_dump(_plain(report.to_dict()), sort_keys=False))


def read_report(path) -> ValidationReport:
    d = yaml.safe_load(Path(path).read_text())
    return ValidationReport(**d)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def load_table(path_or_dir, name: str) -> SeriesTable:
    p = Path(path_or_dir)
    return SeriesTable.from_csv(p / name if p.is_dir() else p)
