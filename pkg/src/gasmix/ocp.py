"""Direct transcription of the periodic compressor-scheduling problem.

States (partial densities and edge fluxes) and actuator ratios are sampled
at ``N`` equally spaced times ``t_n = n T / N``; time derivatives use the
periodic forward difference ``(x_{n+1} - x_n) N / T`` with ``x_N = x_0``.
The decision vector is stacked per time sample::

    z = [rho1(t_0), rho2(t_0), phi(t_0), ..., rho1(t_{N-1}), rho2, phi,
         mu(t_0), ..., mu(t_{N-1})]

Equality rows at each sample are the two density balances followed by the
edge momentum residuals; inequality rows bound every nodal pressure.
Actuator ratios are bounded as variables.  The solver sees a scaled copy of
the problem (densities by ``p_max / sigma1^2``, fluxes by the peak
withdrawal, momentum and pressure rows by ``p_max``).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .dynamics import (
    BoundaryValues,
    MixtureModel,
    ScenarioConfig,
    SteadyStateError,
    _damped_newton,
    pressure,
    steady_state,
)
from .network import Network
from .nlp_solver import NlpProblem
from .simulator import BoundaryProfiles, PeriodicProfile, SeriesTable


class DifferentiationOperator:
    """Periodic forward difference on ``N`` samples over horizon ``T``."""

    def __init__(self, N: int, T: float):
        if N < 2:
            raise ValueError("need at least 2 time steps")
        if not T > 0:
            raise ValueError("horizon must be positive")
        self.N, self.T = int(N), float(T)
        self.scale = self.N / self.T

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return (np.roll(x, -1, axis=0) - x) * self.scale

    def matrix(self) -> sp.csr_matrix:
        N = self.N
        rows = np.r_[np.arange(N), np.arange(N)]
        cols = np.r_[(np.arange(N) + 1) % N, np.arange(N)]
        vals = np.r_[np.full(N, self.scale), np.full(N, -self.scale)]
        return sp.csr_matrix((vals, (rows, cols)), shape=(N, N))


@dataclass(frozen=True)
class VariableLayout:
    N: int
    nw: int
    E: int
    A: int
    node_ids: tuple
    edge_ids: tuple
    actuator_labels: tuple

    @property
    def block(self) -> int:
        return 2 * self.nw + self.E

    @property
    def num_vars(self) -> int:
        return self.N * (self.block + self.A)

    @property
    def num_equalities(self) -> int:
        return self.N * self.block

    @property
    def num_pressure_rows(self) -> int:
        return self.N * self.nw

    def state_index(self, n, local):
        return n * self.block + local

    def control_index(self, n, a):
        return self.N * self.block + n * self.A + a

    def split(self, z):
        z = np.asarray(z, dtype=float)
        X = z[: self.N * self.block].reshape(self.N, self.block)
        U = z[self.N * self.block :].reshape(self.N, self.A)
        nw = self.nw
        return X[:, :nw], X[:, nw : 2 * nw], X[:, 2 * nw :], U

    def stack(self, rho1, rho2, phi, mu):
        N = self.N
        X = np.concatenate(
            [np.broadcast_to(rho1, (N, self.nw)), np.broadcast_to(rho2, (N, self.nw)),
             np.broadcast_to(phi, (N, self.E))], axis=1,
        )
        U = np.broadcast_to(np.asarray(mu, dtype=float).reshape(-1, self.A) if self.A else np.zeros((N, 0)), (N, self.A))
        return np.concatenate([X.ravel(), U.ravel()])

    def variable_info(self, i: int):
        """``(family, node/edge/actuator id, time index)`` of variable ``i``."""
        if not 0 <= i < self.num_vars:
            raise IndexError(i)
        if i >= self.N * self.block:
            n, a = divmod(i - self.N * self.block, self.A)
            return ("mu", self.actuator_labels[a], n)
        n, l = divmod(i, self.block)
        if l < self.nw:
            return ("rho1", self.node_ids[l], n)
        if l < 2 * self.nw:
            return ("rho2", self.node_ids[l - self.nw], n)
        return ("phi", self.edge_ids[l - 2 * self.nw], n)

    def row_info(self, r: int):
        """``(equation family, node/edge id, time index)`` of constraint row ``r``."""
        if r < 0:
            raise IndexError(r)
        if r < self.num_equalities:
            n, l = divmod(r, self.block)
            if l < self.nw:
                return ("density1", self.node_ids[l], n)
            if l < 2 * self.nw:
                return ("density2", self.node_ids[l - self.nw], n)
            return ("momentum", self.edge_ids[l - 2 * self.nw], n)
        r -= self.num_equalities
        if r < self.num_pressure_rows:
            n, j = divmod(r, self.nw)
            return ("pressure", self.node_ids[j], n)
        raise IndexError(r)


class OcpProblem(NlpProblem):
    """The transcribed program.

    Methods without a leading ``objective``/``gradient``/``constraints``/
    ``jacobian`` name (the solver interface, which works on scaled vectors)
    take the physical stacked vector ``z``.
    """

    def __init__(self, net: Network, scenario: ScenarioConfig, boundary: BoundaryProfiles,
                 flux_scale: float | None = None):
        if abs(boundary.period - scenario.horizon) > 1e-9 * scenario.horizon:
            raise ValueError("boundary profile period must equal the horizon")
        self.net = net
        self.scenario = scenario
        self.boundary = boundary
        N, T = scenario.time_steps, scenario.horizon
        nw, E, A = net.num_withdrawal, len(net.edges), len(net.actuators)
        self.layout = VariableLayout(
            N, nw, E, A, tuple(n.id for n in net.withdrawal_nodes), tuple(e.id for e in net.edges),
            tuple(a.label for a in net.actuators),
        )
        self.D = DifferentiationOperator(N, T)
        self.times = np.arange(N) * (T / N)
        self.s1, self.s2, self.w = boundary.sample(self.times)
        self.model = MixtureModel(net, scenario.sigma1, scenario.sigma2)
        self.sig1sq, self.sig2sq = scenario.sigma1**2, scenario.sigma2**2

        self.p_min = np.broadcast_to(np.asarray(scenario.pressure_min, float), (nw,)).copy()
        self.p_max = np.broadcast_to(np.asarray(scenario.pressure_max, float), (nw,)).copy()
        if scenario.ratio_bounds is not None:
            rb = np.asarray(scenario.ratio_bounds, float).reshape(A, 2)
        else:
            rb = np.array([[a.min_ratio, a.max_ratio] for a in net.actuators]).reshape(A, 2)
        if np.any(rb[:, 0] < 1.0) or np.any(rb[:, 0] >= rb[:, 1]):
            raise ValueError("ratio bounds need 1 <= min < max")
        self.ratio_bounds = rb
        coef = np.broadcast_to(np.asarray(scenario.compressor_coefficients, float), (A,))
        self.compressors = np.array([a.is_compressor for a in net.actuators], dtype=bool)
        self.coef = np.where(self.compressors, coef, 0.0)
        self.beta = (scenario.isentropic_exponent - 1.0) / scenario.isentropic_exponent
        self.act_edge = net.actuator_edges()
        self.regulators = np.flatnonzero(~self.compressors)

        # scaling
        self.p_scale = float(np.max(self.p_max))
        self.rho_scale = self.p_scale / self.sig1sq
        self.flux_scale = float(flux_scale or max(float(np.max(np.abs(self.w))), 1e-12))
        self.eps = 1e-6 * self.flux_scale
        lay = self.layout
        xs = np.empty(lay.num_vars)
        Xs = np.concatenate([np.full(2 * nw, self.rho_scale), np.full(E, self.flux_scale)])
        xs[: N * lay.block] = np.tile(Xs, N)
        xs[N * lay.block :] = 1.0
        self.x_scale = xs
        cs = np.concatenate([np.full(2 * nw, self.flux_scale), np.full(E, self.p_scale)])
        self.c_scale = np.concatenate([np.tile(cs, N), np.full(lay.num_pressure_rows, self.p_scale)])

        xl = np.full(lay.num_vars, -np.inf)
        xu = np.full(lay.num_vars, np.inf)
        xl[N * lay.block :] = np.tile(rb[:, 0], N)
        # a constituent absent from every supply sample stays identically zero
        for k, s in enumerate((self.s1, self.s2)):
            if not np.any(s):
                cols = (lay.state_index(np.arange(N)[:, None], k * nw) + np.arange(nw)).ravel()
                xl[cols] = xu[cols] = 0.0
        xu[N * lay.block :] = np.tile(rb[:, 1], N)
        self.x_lower = xl / xs
        self.x_upper = xu / xs
        cl = np.r_[np.zeros(lay.num_equalities), np.tile(self.p_min, N)]
        cu = np.r_[np.zeros(lay.num_equalities), np.tile(self.p_max, N)]
        self.c_lower = cl / self.c_scale
        self.c_upper = cu / self.c_scale
        self._build_pattern()

    # -- structure -----------------------------------------------------------------
    @property
    def num_vars(self) -> int:
        return self.layout.num_vars

    @property
    def num_equalities(self) -> int:
        return self.layout.num_equalities

    @property
    def num_inequalities(self) -> int:
        """Two-sided pressure rows counted once per side."""
        return 2 * self.layout.num_pressure_rows

    def _build_pattern(self):
        lay, p = self.layout, self.model.pattern
        N, nw, E, A, blk = lay.N, lay.nw, lay.E, lay.A, lay.block
        a = self.model.arrays
        n_idx = np.arange(N)
        R, C, nl = [], [], []  # rows, cols, nonlinear flag

        def add(rows, cols, nonlinear):
            rows, cols = np.broadcast_arrays(rows, cols)
            R.append(rows.ravel())
            C.append(cols.ravel())
            nl.append(np.full(rows.size, nonlinear))

        nxt = (n_idx + 1) % N
        loc = np.arange(2 * nw)
        # D-term: + at n+1, - at n
        add(n_idx[:, None] * blk + loc, nxt[:, None] * blk + loc, False)
        add(n_idx[:, None] * blk + loc, n_idx[:, None] * blk + loc, False)
        # regulator ratios scale F
        self._reg_rows = []
        for ai in self.regulators:
            j = a.head[self.act_edge[ai]]
            rows = n_idx[:, None] * blk + np.array([j, nw + j])
            add(rows, (N * blk + n_idx * A + ai)[:, None], True)
            add(rows, nxt[:, None] * blk + np.array([j, nw + j]), True)
            add(rows, n_idx[:, None] * blk + np.array([j, nw + j]), True)
        # balance partials
        add(n_idx[:, None] * blk + p.balance_rows, n_idx[:, None] * blk + p.balance_cols, True)
        # momentum partials
        add(n_idx[:, None] * blk + 2 * nw + p.momentum_rows, n_idx[:, None] * blk + p.momentum_cols, True)
        add(n_idx[:, None] * blk + 2 * nw + np.arange(E), n_idx[:, None] * blk + 2 * nw + np.arange(E), True)
        if A:
            add(n_idx[:, None] * blk + 2 * nw + self.act_edge, N * blk + n_idx[:, None] * A + np.arange(A), True)
        # pressure rows
        prow = lay.num_equalities + n_idx[:, None] * nw + np.arange(nw)
        add(prow, n_idx[:, None] * blk + np.arange(nw), False)
        add(prow, n_idx[:, None] * blk + nw + np.arange(nw), False)
        rows, cols, nonlin = np.concatenate(R), np.concatenate(C), np.concatenate(nl)
        m = lay.num_equalities + lay.num_pressure_rows
        shape = (m, lay.num_vars)
        # map each COO entry onto its CSR slot
        csr = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=shape)
        csr.sum_duplicates()
        csr.sort_indices()
        key = rows.astype(np.int64) * shape[1] + cols
        slot_keys = np.repeat(np.arange(shape[0], dtype=np.int64), np.diff(csr.indptr)) * shape[1] + csr.indices
        self._slot = np.searchsorted(slot_keys, key)
        self._indptr, self._indices = csr.indptr.copy(), csr.indices.copy()
        self._shape = shape
        self._nnz = csr.nnz
        # Hessian sparsity from rows of nonlinear entries plus objective pairs
        Jn = sp.csr_matrix((np.ones(int(nonlin.sum())), (rows[nonlin], cols[nonlin])), shape=shape)
        H = (Jn.T @ Jn).tocsr()
        comp = np.flatnonzero(self.compressors)
        if comp.size:
            ph = (n_idx[:, None] * blk + 2 * nw + self.act_edge[comp]).ravel()
            mu = (N * blk + n_idx[:, None] * A + comp).ravel()
            extra = sp.csr_matrix((np.ones(2 * ph.size), (np.r_[ph, mu], np.r_[mu, ph])), shape=H.shape)
            H = H + extra + sp.csr_matrix((np.ones(2 * ph.size), (np.r_[ph, mu], np.r_[ph, mu])), shape=H.shape)
        H.data[:] = 1.0
        self._hess_pattern = H

    def hessian_sparsity(self):
        return self._hess_pattern

    # -- physical evaluations ------------------------------------------------------
    def _ratios(self, U):
        return self.net.ratio_vectors(np.maximum(U, 1.0)) if self.layout.A else (
            np.ones((self.layout.N, self.layout.E)), np.ones((self.layout.N, self.layout.E)))

    def objective_value(self, z) -> float:
        _, _, phi, U = self.layout.split(z)
        if not self.compressors.any():
            return 0.0
        c = self.compressors
        ph = phi[:, self.act_edge[c]]
        work = self.coef[c] * np.sqrt(ph * ph + self.eps**2) * (np.maximum(U[:, c], 0.0) ** self.beta - 1.0)
        return float(self.D.T / self.D.N * work.sum())

    def objective_gradient(self, z) -> np.ndarray:
        lay = self.layout
        _, _, phi, U = lay.split(z)
        g = np.zeros(lay.num_vars)
        if not self.compressors.any():
            return g
        h = self.D.T / self.D.N
        for a in np.flatnonzero(self.compressors):
            k = self.act_edge[a]
            ph, mu = phi[:, k], np.maximum(U[:, a], 1e-300)
            root = np.sqrt(ph * ph + self.eps**2)
            n = np.arange(lay.N)
            g[lay.state_index(n, 2 * lay.nw + k)] += h * self.coef[a] * ph / root * (mu**self.beta - 1.0)
            g[lay.control_index(n, a)] += h * self.coef[a] * root * self.beta * mu ** (self.beta - 1.0)
        return g

    def equality_residual(self, z) -> np.ndarray:
        lay = self.layout
        rho1, rho2, phi, U = lay.split(z)
        mu_in, mu_out = self._ratios(U)
        F = self.model.mass_diagonal(mu_out)
        g1, g2 = self.model.balance(rho1, rho2, self.s1, self.s2, phi, self.w)
        d1 = F * self.D(rho1) - g1
        d2 = F * self.D(rho2) - g2
        mom = self.model.momentum(rho1, rho2, self.s1, self.s2, phi, mu_in, mu_out)
        return np.concatenate([d1, d2, mom], axis=1).ravel()

    def pressure_values(self, z) -> np.ndarray:
        rho1, rho2, _, _ = self.layout.split(z)
        return (self.sig1sq * rho1 + self.sig2sq * rho2).ravel()

    def constraint_values(self, z) -> np.ndarray:
        return np.concatenate([self.equality_residual(z), self.pressure_values(z)])

    def constraint_jacobian(self, z) -> sp.csr_matrix:
        """Jacobian of ``[equality rows; pressure rows]`` w.r.t. physical ``z``."""
        lay = self.layout
        N, nw = lay.N, lay.nw
        rho1, rho2, phi, U = lay.split(z)
        mu_in, mu_out = self._ratios(U)
        F = self.model.mass_diagonal(mu_out)
        a = self.model.arrays
        vals = []
        Fd = np.concatenate([F, F], axis=1) * self.D.scale
        vals += [Fd.ravel(), -Fd.ravel()]
        Drho = np.concatenate([self.D(rho1), self.D(rho2)], axis=1)
        for ai in self.regulators:
            k = self.act_edge[ai]
            j = a.head[k]
            vals.append((a.length[k] * Drho[:, [j, nw + j]]).ravel())
            # pattern-only slots marking the D-term entries as mu-dependent
            vals.append(np.zeros(2 * N))
            vals.append(np.zeros(2 * N))
        d = self.model.partials(rho1, rho2, self.s1, self.s2, phi, self.w, mu_in, mu_out, self.eps)
        vals += [-d.balance.ravel(), d.momentum.ravel(), d.momentum_phi.ravel()]
        if lay.A:
            vals.append(d.momentum_mu.ravel())
        vals += [np.full(N * nw, self.sig1sq), np.full(N * nw, self.sig2sq)]
        v = np.concatenate(vals)
        data = np.bincount(self._slot, weights=v, minlength=self._nnz)
        return sp.csr_matrix((data, self._indices, self._indptr), shape=self._shape)

    # -- solver interface (scaled) -------------------------------------------------
    def objective(self, x) -> float:
        return self.objective_value(x * self.x_scale)

    def gradient(self, x) -> np.ndarray:
        return self.objective_gradient(x * self.x_scale) * self.x_scale

    def constraints(self, x) -> np.ndarray:
        return self.constraint_values(x * self.x_scale) / self.c_scale

    def jacobian(self, x) -> sp.csr_matrix:
        J = self.constraint_jacobian(x * self.x_scale)
        J.data *= self.x_scale[J.indices]
        J.data /= np.repeat(self.c_scale, np.diff(J.indptr))
        return J

    def scale(self, z) -> np.ndarray:
        return np.asarray(z, float) / self.x_scale

    def unscale(self, x) -> np.ndarray:
        return np.asarray(x, float) * self.x_scale

    # -- helpers -------------------------------------------------------------------
    def table(self, z) -> SeriesTable:
        """Series at the collocation times, closed periodically at ``t = T``."""
        rho1, rho2, phi, _ = self.layout.split(z)
        idx = np.r_[np.arange(self.layout.N), 0]
        times = np.r_[self.times, self.D.T]
        tot = rho1 + rho2
        eta2 = np.divide(rho2, tot, out=np.zeros_like(tot), where=tot > 0)
        return SeriesTable(
            times, pressure(rho1, rho2, self.scenario.sigma1, self.scenario.sigma2)[idx], eta2[idx],
            phi[idx], list(self.layout.node_ids), list(self.layout.edge_ids),
        )

    def quasi_steady_state(self, ratio=1.0) -> np.ndarray:
        """Steady states of each boundary sample, stacked.

        ``ratio`` is one value for all actuators or one value per actuator.
        """
        lay = self.layout
        A = lay.A
        ratio = np.broadcast_to(np.asarray(ratio, float), (A,))
        states = []
        for n in range(lay.N):
            bv = BoundaryValues(self.s1[n], self.s2[n], self.w[n])
            states.append(steady_state(self.net, bv, ratio.copy() if A else None,
                                       self.scenario.sigma1, self.scenario.sigma2))
        rho1 = np.array([s.rho1 for s in states])
        rho2 = np.array([s.rho2 for s in states])
        phi = np.array([s.flux for s in states])
        return lay.stack(rho1, rho2, phi, np.tile(ratio, (lay.N, 1)))

    def periodic_solution(self, z_guess, tol: float = 1e-10, max_iter: int = 50) -> np.ndarray:
        """Solve the equality rows for the states, keeping the ratios of ``z_guess``.

        The state system is square, so this yields a point that satisfies
        every dynamic constraint exactly (up to ``tol`` in scaled units).
        """
        lay = self.layout
        ns, neq = lay.N * lay.block, lay.num_equalities
        x = self.scale(z_guess)
        u = x[ns:]

        def resid(xs):
            return self.constraints(np.r_[xs, u])[:neq]

        def jac(xs):
            return self.jacobian(np.r_[xs, u])[:neq, :ns]

        def feasible(xs):
            r1, r2, _, _ = lay.split(self.unscale(np.r_[xs, u]))
            return bool(np.all(r1 + r2 > 0))

        xs, _, _ = _damped_newton(resid, jac, x[:ns].copy(), feasible, tol, max_iter, "periodic start")
        return self.unscale(np.r_[xs, u])

    def pressure_margin(self, z) -> tuple[float, float]:
        """Smallest distance (Pa) of any sampled pressure above ``p_min`` and below ``p_max``."""
        p = self.pressure_values(z).reshape(self.layout.N, self.layout.nw)
        return float(np.min(p - self.p_min)), float(np.min(self.p_max - p))

    def feasible_start(self, ratio: float | None = None, tol: float = 1e-3) -> np.ndarray:
        """Periodic, dynamically feasible starting point.

        All actuators share one ratio.  Unless ``ratio`` is given, it is
        bisected to the smallest value whose periodic solution keeps every
        sampled pressure above ``p_min`` (or the upper ratio bound if none does).
        """
        lay = self.layout
        A = lay.A
        if ratio is not None or not A:
            r = 1.0 if ratio is None else ratio
            return self.periodic_solution(self.quasi_steady_state(r))
        lo = float(np.max(self.ratio_bounds[:, 0]))
        hi = float(np.min(self.ratio_bounds[:, 1]))

        def attempt(r, guess=None):
            try:
                z = self.quasi_steady_state(r) if guess is None else guess.copy()
                z[lay.N * lay.block :] = r
                z = self.periodic_solution(z)
            except (SteadyStateError, FloatingPointError, ValueError):
                return None, -np.inf
            return z, self.pressure_margin(z)[0]

        # Raising the ratio raises downstream pressure, so bisect on the lower margin.
        z_lo, m_lo = attempt(lo)
        if z_lo is not None and m_lo >= 0:
            return z_lo
        z_hi, m_hi = attempt(hi)
        if z_hi is None:
            raise SteadyStateError("no periodic start at the largest admissible ratio", np.inf)
        if m_hi < 0:
            return z_hi
        best = z_hi
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            z_mid, m_mid = attempt(mid, best)
            if m_mid >= 0:
                hi, best = mid, z_mid
            else:
                lo = mid
        return best


def build_nlp(net: Network, scenario: ScenarioConfig, boundary: BoundaryProfiles, flux_scale=None) -> OcpProblem:
    """Transcribe the periodic control problem on ``net`` into an NLP."""
    return OcpProblem(net, scenario, boundary, flux_scale)


def extract_controls(problem: OcpProblem, z) -> PeriodicProfile | None:
    """Actuator ratio profiles through the collocation samples of ``z``."""
    _, _, _, U = problem.layout.split(z)
    if problem.layout.A == 0:
        return None
    return PeriodicProfile(problem.times, np.maximum(U, 1.0), problem.D.T)
