"""Time integration of the reduced network system.

Boundary data and actuator ratios are periodic piecewise-linear profiles.
The density ODE is integrated with an adaptive stiff BDF method; the edge
fluxes are eliminated at every right-hand-side evaluation and the Jacobian
is supplied analytically.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp, trapezoid

from .dynamics import (
    BoundaryValues,
    HomogeneousModel,
    MixtureModel,
    MixtureState,
    nodal_concentration,
    pressure,
    steady_state,
)
from .network import Network, refine

log = logging.getLogger(__name__)

SIGMA1 = 338.38
SIGMA2 = 4 * SIGMA1


class SimulationError(RuntimeError):
    """Integration failed; ``time`` is the last time reached (s)."""

    def __init__(self, message: str, time: float):
        super().__init__(f"{message} (t = {time:.3f} s)")
        self.time = float(time)


# -- profiles ----------------------------------------------------------------------


class PeriodicProfile:
    """Piecewise-linear, ``period``-periodic vector-valued function.

    ``values`` has one row per sample time (or is 1-D for scalar samples).
    Between the last sample and ``period`` the profile interpolates back
    toward the first sample.
    """

    def __init__(self, sample_times, values, period: float):
        t = np.asarray(sample_times, dtype=float)
        v = np.asarray(values, dtype=float)
        if t.ndim != 1 or t.size < 1:
            raise ValueError("sample_times must be a non-empty 1-D array")
        if t[0] != 0.0:
            raise ValueError("sample_times must start at 0")
        if np.any(np.diff(t) <= 0):
            raise ValueError("sample_times must be strictly increasing")
        if not period > t[-1]:
            raise ValueError("sample_times must lie in [0, period)")
        self.scalar = v.ndim == 1
        v2 = v[:, None] if self.scalar else v
        if v2.shape[0] != t.size:
            raise ValueError("values need one row per sample time")
        self.sample_times = t
        self.values = v2
        self.period = float(period)
        self._tx = np.append(t, self.period)
        self._vx = np.vstack([v2, v2[:1]])

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @classmethod
    def constant(cls, value, period: float) -> "PeriodicProfile":
        v = np.asarray(value, dtype=float)
        return cls([0.0], v[None] if v.ndim else np.array([float(v)]), period)

    def __call__(self, t):
        tt = np.asarray(t, dtype=float)
        tau = np.mod(tt, self.period)
        i = np.clip(np.searchsorted(self._tx, tau, side="right") - 1, 0, self._tx.size - 2)
        w = (tau - self._tx[i]) / (self._tx[i + 1] - self._tx[i])
        w = np.asarray(w)[..., None]
        out = (1.0 - w) * self._vx[i] + w * self._vx[i + 1]
        if self.scalar:
            out = out[..., 0]
        return out

    def resample(self, times) -> "PeriodicProfile":
        """Profile through this one's values at ``times`` (same period)."""
        return PeriodicProfile(times, self(np.asarray(times)), self.period)


def interpolate(profile: PeriodicProfile, t):
    """Value of ``profile`` at ``t`` (reduced modulo the period)."""
    return profile(t)


@dataclass(frozen=True)
class BoundaryProfiles:
    """Supply constituent densities and withdrawal fluxes over one period."""

    s1: PeriodicProfile  # one column per supply node
    s2: PeriodicProfile
    w: PeriodicProfile  # one column per withdrawal node

    def __post_init__(self):
        periods = {self.s1.period, self.s2.period, self.w.period}
        if len(periods) != 1:
            raise ValueError("boundary profiles must share one period")

    @property
    def period(self) -> float:
        return self.w.period

    def at(self, t) -> BoundaryValues:
        return BoundaryValues(np.atleast_1d(self.s1(t)), np.atleast_1d(self.s2(t)), np.atleast_1d(self.w(t)))

    def sample(self, times):
        """Arrays ``(s1, s2, w)`` with one row per time."""
        t = np.asarray(times, dtype=float)
        return (
            np.atleast_2d(self.s1(t).reshape(t.size, -1)),
            np.atleast_2d(self.s2(t).reshape(t.size, -1)),
            np.atleast_2d(self.w(t).reshape(t.size, -1)),
        )

    def resample(self, times) -> "BoundaryProfiles":
        return BoundaryProfiles(self.s1.resample(times), self.s2.resample(times), self.w.resample(times))

    @classmethod
    def constant(cls, boundary: BoundaryValues, period: float) -> "BoundaryProfiles":
        return cls(
            PeriodicProfile.constant(boundary.s1, period),
            PeriodicProfile.constant(boundary.s2, period),
            PeriodicProfile.constant(boundary.w, period),
        )

    @classmethod
    def from_pressure(cls, times, supply_pressure, alpha2, withdrawal, period, sigma1, sigma2):
        """Build from supply pressure and hydrogen mass fraction samples.

        ``supply_pressure`` and ``alpha2`` have shape ``(n_times, n_supply)``
        (or ``(n_times,)`` for one supply node); the constituent densities
        are interpolated linearly between samples.
        """
        t = np.asarray(times, dtype=float)
        p = np.asarray(supply_pressure, dtype=float).reshape(t.size, -1)
        a2 = np.asarray(alpha2, dtype=float).reshape(t.size, -1)
        w = np.asarray(withdrawal, dtype=float).reshape(t.size, -1)
        s1, s2 = np.empty_like(p), np.empty_like(p)
        for i in range(t.size):
            bv = BoundaryValues.from_pressure(p[i], a2[i], w[i], sigma1, sigma2)
            s1[i], s2[i] = bv.s1, bv.s2
        return cls(PeriodicProfile(t, s1, period), PeriodicProfile(t, s2, period), PeriodicProfile(t, w, period))


def constant_controls(net: Network, period: float, value=1.0) -> PeriodicProfile | None:
    if not net.actuators:
        return None
    return PeriodicProfile.constant(np.full(len(net.actuators), float(value)), period)


# -- trajectories ------------------------------------------------------------------


@dataclass
class SeriesTable:
    """Time series of nodal pressure, concentration and edge flux.

    This is the representation compared by the validation metrics and the
    content of a trajectory CSV file.
    """

    times: np.ndarray
    pressure: np.ndarray  # (nt, nw) Pa
    eta2: np.ndarray  # (nt, nw)
    flux: np.ndarray  # (nt, E)
    node_ids: list
    edge_ids: list

    def to_csv(self, path) -> None:
        header = (
            ["t_s"]
            + [f"p_node_{i}" for i in self.node_ids]
            + [f"eta2_node_{i}" for i in self.node_ids]
            + [f"phi_edge_{k}" for k in self.edge_ids]
        )
        data = np.column_stack([self.times, self.pressure, self.eta2, self.flux])
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(header)
            for row in data:
                wr.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> "SeriesTable":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], np.array(rows[1:], dtype=float).reshape(len(rows) - 1, len(rows[0]))
        if header[0] != "t_s":
            raise ValueError(f"{path}: first column must be t_s")
        cols = {"p_node_": [], "eta2_node_": [], "phi_edge_": []}
        ids = {k: [] for k in cols}
        for j, name in enumerate(header[1:], start=1):
            for prefix in cols:
                if name.startswith(prefix):
                    cols[prefix].append(j)
                    ids[prefix].append(_parse_id(name[len(prefix) :]))
                    break
            else:
                raise ValueError(f"{path}: unknown column {name!r}")
        if ids["p_node_"] != ids["eta2_node_"]:
            raise ValueError(f"{path}: pressure and concentration columns disagree")
        return cls(
            times=body[:, 0],
            pressure=body[:, cols["p_node_"]],
            eta2=body[:, cols["eta2_node_"]],
            flux=body[:, cols["phi_edge_"]],
            node_ids=ids["p_node_"],
            edge_ids=ids["phi_edge_"],
        )


def _parse_id(text: str):
    try:
        return int(text)
    except ValueError:
        return text


@dataclass
class Trajectory:
    times: np.ndarray
    rho1: np.ndarray  # (nt, nw)
    rho2: np.ndarray
    flux: np.ndarray  # (nt, E)
    ratios: np.ndarray  # (nt, A)
    sigma1: float
    sigma2: float
    node_ids: list
    edge_ids: list
    stats: dict = field(default_factory=dict)

    @property
    def pressure(self) -> np.ndarray:
        return pressure(self.rho1, self.rho2, self.sigma1, self.sigma2)

    @property
    def eta2(self) -> np.ndarray:
        return nodal_concentration(self.rho1, self.rho2)

    @property
    def total_density(self) -> np.ndarray:
        return self.rho1 + self.rho2

    def state(self, i: int) -> MixtureState:
        return MixtureState(self.rho1[i].copy(), self.rho2[i].copy(), self.flux[i].copy())

    @property
    def states(self) -> list:
        return [self.state(i) for i in range(self.times.size)]

    def table(self) -> SeriesTable:
        return SeriesTable(self.times, self.pressure, self.eta2, self.flux, list(self.node_ids), list(self.edge_ids))

    def to_csv(self, path) -> None:
        self.table().to_csv(path)


@dataclass
class SimulationOptions:
    rtol: float = 1e-6
    atol: float | None = None  # default 1e-9 * pressure_scale / sigma1^2
    pressure_scale: float | None = None  # default: peak initial pressure
    report_points: int = 241
    include_steps: bool = True
    method: str = "BDF"
    max_step: float = np.inf

    def __post_init__(self):
        if not self.rtol > 0:
            raise ValueError("rtol must be positive")
        if self.report_points < 2:
            raise ValueError("need at least 2 reporting points")


def _report_grid(T, opts, step_times):
    grid = np.linspace(0.0, T, opts.report_points)
    if opts.include_steps:
        grid = np.union1d(grid, step_times)
    return grid


def _integrate(fun, jac, y0, T, opts, atol):
    sol = solve_ivp(
        fun, (0.0, T), y0, method=opts.method, jac=jac, rtol=opts.rtol, atol=atol,
        dense_output=True, max_step=opts.max_step,
    )
    if sol.status != 0:
        reached = float(sol.t[-1]) if sol.t.size else 0.0
        raise SimulationError(f"integrator stopped: {sol.message}", reached)
    times = _report_grid(T, opts, sol.t)
    Y = sol.sol(times).T
    # integrator step values are exact, not interpolated
    idx = np.searchsorted(times, sol.t)
    hit = (idx < times.size) & (times[np.minimum(idx, times.size - 1)] == sol.t)
    Y[idx[hit]] = sol.y.T[hit]
    return times, Y, dict(nfev=int(sol.nfev), njev=int(sol.njev), nlu=int(sol.nlu), steps=int(sol.t.size - 1))


def simulate(
    net: Network,
    boundary: BoundaryProfiles,
    controls: PeriodicProfile | None,
    x0: MixtureState,
    T: float,
    opts: SimulationOptions | None = None,
    sigma1: float = SIGMA1,
    sigma2: float = SIGMA2,
) -> Trajectory:
    """Integrate the partial densities over ``[0, T]`` from ``x0``."""
    opts = opts or SimulationOptions()
    model = MixtureModel(net, sigma1, sigma2)
    nw = net.num_withdrawal
    A = len(net.actuators)
    if A and controls is None:
        raise ValueError("network has actuators; control profiles are required")
    rho1_0, rho2_0 = np.asarray(x0.rho1, float), np.asarray(x0.rho2, float)
    if rho1_0.shape != (nw,) or rho2_0.shape != (nw,):
        raise ValueError("initial state does not match the network")
    p_scale = opts.pressure_scale or float(np.max(pressure(rho1_0, rho2_0, sigma1, sigma2)))
    atol = opts.atol if opts.atol is not None else 1e-9 * p_scale / sigma1**2

    def ratios_at(t):
        return None if not A else np.maximum(np.atleast_1d(controls(t)), 1.0)

    # A constituent missing from the supply and the initial state stays zero,
    # so it is pinned there instead of integrated.
    s1_all, s2_all = boundary.s1.values, boundary.s2.values
    absent = [not np.any(s1_all) and not np.any(rho1_0), not np.any(s2_all) and not np.any(rho2_0)]
    live = np.concatenate([np.full(nw, not absent[0]), np.full(nw, not absent[1])])
    full = np.concatenate([rho1_0, rho2_0])

    def unpack(t, y):
        yy = full.copy()
        yy[live] = y
        if np.any(yy < -atol) or np.any(yy[:nw] + yy[nw:] <= 0):
            raise SimulationError("density became nonpositive", t)
        yy = np.maximum(yy, 0.0)
        return yy[:nw], yy[nw:]

    def fun(t, y):
        r1, r2 = unpack(t, y)
        d1, d2, phi = model.rhs(r1, r2, boundary.at(t), ratios_at(t))
        model.check_reversal(phi, t)
        return np.concatenate([d1, d2])[live]

    def jac(t, y):
        r1, r2 = unpack(t, y)
        Jf = model.rhs_jacobian(r1, r2, boundary.at(t), ratios_at(t))
        return Jf[live][:, live]

    times, Yl, stats = _integrate(fun, jac, full[live], T, opts, atol)
    Y = np.tile(full, (times.size, 1))
    Y[:, live] = Yl
    rho1, rho2 = Y[:, :nw], Y[:, nw:]
    s1, s2, _ = boundary.sample(times)
    if A:
        U = np.maximum(np.atleast_2d(controls(times)).reshape(times.size, A), 1.0)
        mu_in, mu_out = net.ratio_vectors(U)
    else:
        U = np.zeros((times.size, 0))
        mu_in = mu_out = np.ones((times.size, len(net.edges)))
    flux = model.flux(rho1, rho2, s1, s2, mu_in, mu_out)
    return Trajectory(
        times=times, rho1=rho1, rho2=rho2, flux=flux, ratios=U, sigma1=sigma1, sigma2=sigma2,
        node_ids=[n.id for n in net.withdrawal_nodes], edge_ids=[e.id for e in net.edges], stats=stats,
    )


def simulate_homogeneous(
    model: HomogeneousModel,
    supply_density: PeriodicProfile,
    withdrawal: PeriodicProfile,
    controls: PeriodicProfile | None,
    rho0,
    T: float,
    opts: SimulationOptions | None = None,
):
    """Integrate the total-density system; returns ``(times, rho)``."""
    opts = opts or SimulationOptions()
    net = model.net
    A = len(net.actuators)

    def ratios_at(t):
        return None if not A else tuple(np.maximum(np.atleast_1d(controls(t)), 1.0))

    def fun(t, y):
        if np.any(y <= 0):
            raise SimulationError("density became nonpositive", t)
        rdot, _ = model.rhs(y, np.atleast_1d(supply_density(t)), np.atleast_1d(withdrawal(t)), ratios_at(t))
        return rdot

    rho0 = np.asarray(rho0, dtype=float)
    p_scale = opts.pressure_scale or float(np.max(model.a_sq * rho0))
    atol = opts.atol if opts.atol is not None else 1e-9 * p_scale / model.sigma1**2
    times, Y, _ = _integrate(fun, None, rho0, T, opts, atol)
    return times, Y


# -- checks ------------------------------------------------------------------------


def linepack_residuals(net: Network, traj: Trajectory, boundary: BoundaryProfiles) -> np.ndarray:
    """Relative per-constituent linepack balance residual at every output time.

    Compares ``d/dt (1^T F rho^(m))`` with injection minus withdrawal of
    constituent ``m``; returns an ``(nt, 2)`` array normalized by the total
    withdrawal rate.
    """
    model = MixtureModel(net, traj.sigma1, traj.sigma2)
    a = model.arrays
    sup = a.tail_supply.astype(bool)
    out = np.empty((traj.times.size, 2))
    for i, t in enumerate(traj.times):
        bv = boundary.at(t)
        ratios = traj.ratios[i] if traj.ratios.shape[1] else None
        mu_in, mu_out = net.ratio_vectors(ratios)
        d1, d2, phi = model.rhs(traj.rho1[i], traj.rho2[i], bv, ratios)
        f = model.mass_diagonal(mu_out)[0]
        eta2 = nodal_concentration(traj.rho1[i], traj.rho2[i])
        scale = max(float(np.sum(np.abs(bv.w))), float(np.sum(np.abs(phi[sup]))), 1e-300)
        for m, (dm, alpha, eta) in enumerate(((d1, bv.alpha1, 1.0 - eta2), (d2, bv.alpha2, eta2))):
            inj = np.sum(alpha[a.tail[sup]] * phi[sup])
            wd = np.sum(eta * bv.w)
            out[i, m] = abs(np.sum(f * dm) - (inj - wd)) / scale
    return out


# -- refinement consistency study --------------------------------------------------


@dataclass
class ConsistencyResult:
    caps: list
    reference_cap: float
    pressure_errors: np.ndarray
    flux_errors: np.ndarray
    pressure_orders: np.ndarray
    flux_orders: np.ndarray
    runtime: float = 0.0


def _single_line_ends(net: Network):
    sup = [n for n in net.nodes if n.kind == "supply"]
    if len(sup) != 1:
        raise ValueError("consistency study needs a single-line pipe with one supply node")
    a = net.arrays
    first = int(np.flatnonzero(a.tail_supply)[0])
    ends = set(range(net.num_withdrawal)) - set(a.tail[a.tail_supply == 0].tolist())
    if len(ends) != 1:
        raise ValueError("consistency study needs a single-line pipe")
    return first, ends.pop()


def _relative_l2(times, a, ref):
    num = trapezoid((a - ref) ** 2, times)
    den = trapezoid(ref**2, times)
    return float(np.sqrt(num / den))


def consistency_study(
    pipe: Network,
    caps,
    reference_cap: float,
    boundary: BoundaryProfiles,
    T: float,
    opts: SimulationOptions | None = None,
    sigma1: float = SIGMA1,
    sigma2: float = SIGMA2,
) -> ConsistencyResult:
    """Refine ``pipe`` at each cap (m), simulate one transient, compare ends.

    Each run starts from its own steady state at ``boundary.at(0)``.  The
    outlet pressure and inlet flux are sampled on a common uniform grid and
    compared with the ``reference_cap`` run by relative L2 error.  Observed
    orders are ``log(e_i / e_{i+1}) / log(cap_i / cap_{i+1})``.
    """
    import time as _time

    t0 = _time.perf_counter()
    opts = opts or SimulationOptions(rtol=1e-8)
    grid_opts = SimulationOptions(
        rtol=opts.rtol, atol=opts.atol, pressure_scale=opts.pressure_scale,
        report_points=opts.report_points, include_steps=False, method=opts.method, max_step=opts.max_step,
    )
    outlet_id = None
    series = {}
    for cap in list(caps) + [reference_cap]:
        net = refine(pipe, cap)
        first, last = _single_line_ends(net)
        if outlet_id is None:
            outlet_id = net.withdrawal_nodes[last].id
        elif net.withdrawal_nodes[last].id != outlet_id:
            raise ValueError("outlet node changed under refinement")
        # only the original outlet withdraws
        wsel = np.zeros(net.num_withdrawal)
        wsel[last] = 1.0
        w_prof = PeriodicProfile(boundary.w.sample_times, boundary.w.values[:, :1] * wsel, boundary.period)
        bnd = BoundaryProfiles(boundary.s1, boundary.s2, w_prof)
        x0 = steady_state(net, bnd.at(0.0), None, sigma1, sigma2)
        traj = simulate(net, bnd, None, x0, T, grid_opts, sigma1, sigma2)
        series[cap] = (traj.times, traj.pressure[:, last], traj.flux[:, first])
    t_ref, p_ref, f_ref = series[reference_cap]
    pe = np.array([_relative_l2(t_ref, series[c][1], p_ref) for c in caps])
    fe = np.array([_relative_l2(t_ref, series[c][2], f_ref) for c in caps])
    ratios = np.log(np.asarray(caps[:-1], float) / np.asarray(caps[1:], float))
    with np.errstate(divide="ignore", invalid="ignore"):
        po = np.log(pe[:-1] / pe[1:]) / ratios
        fo = np.log(fe[:-1] / fe[1:]) / ratios
    return ConsistencyResult(list(caps), reference_cap, pe, fe, po, fo, _time.perf_counter() - t0)
