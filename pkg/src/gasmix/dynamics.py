"""Reduced network dynamics for a two-constituent gas mixture.

The state is the pair of nodal partial densities at withdrawal nodes.  Edge
inlet fluxes are eliminated per edge from the friction-dominated momentum
balance, which leaves an ODE

    F rho_dot^(m) = Q_w^T [eta_in^(m) * phi] - eta^(m) * w,    m = 1, 2

with ``F = Q_bar_w^T L M_bar_w``.  Because every edge ends in a withdrawal
node, ``F`` is diagonal: ``F_jj`` is the sum of ``l_k * mu_out_k`` over the
edges entering node ``j``.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .network import GasConstituent, Network, incidence

log = logging.getLogger(__name__)


class FlowReversalWarning(RuntimeWarning):
    """Edge flux turned negative; tail-node upwinding may be inaccurate."""


class SteadyStateError(RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


def pressure(rho1, rho2, sigma1, sigma2):
    """Mixture pressure as the sum of ideal partial pressures."""
    return sigma1**2 * np.asarray(rho1) + sigma2**2 * np.asarray(rho2)


def nodal_concentration(rho1, rho2) -> np.ndarray:
    """Hydrogen mass fraction ``rho2 / (rho1 + rho2)``."""
    rho1 = np.asarray(rho1, dtype=float)
    rho2 = np.asarray(rho2, dtype=float)
    tot = rho1 + rho2
    if np.any(tot <= 0):
        bad = np.argwhere(np.atleast_1d(tot) <= 0)[0].tolist()
        raise ValueError(f"zero total density at index {bad}")
    return rho2 / tot


def mixture_sound_speed_sq(alpha2, sigma1, sigma2):
    return sigma1**2 * (1.0 - np.asarray(alpha2)) + sigma2**2 * np.asarray(alpha2)


@dataclass(frozen=True)
class MixtureState:
    rho1: np.ndarray
    rho2: np.ndarray
    flux: np.ndarray

    def __post_init__(self):
        if np.any(self.rho1 < 0) or np.any(self.rho2 < 0):
            raise ValueError("partial densities must be nonnegative")
        if np.any(self.rho1 + self.rho2 <= 0):
            raise ValueError("total density must be positive at every node")

    @property
    def total_density(self):
        return self.rho1 + self.rho2

    @property
    def eta2(self):
        return nodal_concentration(self.rho1, self.rho2)

    def pressure(self, sigma1, sigma2):
        return pressure(self.rho1, self.rho2, sigma1, sigma2)


@dataclass(frozen=True)
class BoundaryValues:
    """Supply constituent densities and withdrawal mass fluxes at one instant."""

    s1: np.ndarray
    s2: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "s1", np.atleast_1d(np.asarray(self.s1, dtype=float)))
        object.__setattr__(self, "s2", np.atleast_1d(np.asarray(self.s2, dtype=float)))
        object.__setattr__(self, "w", np.atleast_1d(np.asarray(self.w, dtype=float)))
        if np.any(self.s1 < 0) or np.any(self.s2 < 0) or np.any(self.s1 + self.s2 <= 0):
            raise ValueError("supply densities must be nonnegative with positive total")

    @classmethod
    def from_pressure(cls, supply_pressure, alpha2, w, sigma1, sigma2):
        alpha2 = np.atleast_1d(np.asarray(alpha2, dtype=float))
        if np.any(alpha2 < 0) or np.any(alpha2 > 1):
            raise ValueError("hydrogen fraction must lie in [0, 1]")
        total = np.asarray(supply_pressure, dtype=float) / mixture_sound_speed_sq(alpha2, sigma1, sigma2)
        return cls((1.0 - alpha2) * total, alpha2 * total, w)

    @property
    def alpha2(self):
        return self.s2 / (self.s1 + self.s2)

    @property
    def alpha1(self):
        return self.s1 / (self.s1 + self.s2)

    def supply_pressure(self, sigma1, sigma2):
        return pressure(self.s1, self.s2, sigma1, sigma2)


@dataclass(frozen=True)
class ScenarioConfig:
    constituents: tuple[GasConstituent, GasConstituent]
    horizon: float
    pressure_min: np.ndarray
    pressure_max: np.ndarray
    isentropic_exponent: float
    compressor_coefficients: np.ndarray
    time_steps: int
    ratio_bounds: np.ndarray | None = None  # (A, 2); defaults to actuator bounds

    def __post_init__(self):
        if len(self.constituents) != 2:
            raise ValueError("exactly two constituents are required")
        pmin = np.asarray(self.pressure_min, dtype=float)
        pmax = np.asarray(self.pressure_max, dtype=float)
        if np.any(pmin <= 0) or np.any(pmin >= pmax):
            raise ValueError("need 0 < pressure_min < pressure_max")
        if not self.isentropic_exponent > 1:
            raise ValueError("isentropic exponent must exceed 1")
        if np.any(np.asarray(self.compressor_coefficients) < 0):
            raise ValueError("compressor coefficients must be nonnegative")
        if self.time_steps < 2:
            raise ValueError("need at least 2 time steps")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")

    @property
    def sigma1(self):
        return self.constituents[0].sound_speed

    @property
    def sigma2(self):
        return self.constituents[1].sound_speed


@dataclass
class LocalPartials:
    """Derivative values for one batch of samples, ordered like ``JacobianPattern``."""

    balance: np.ndarray  # (B, nnz_balance)
    momentum: np.ndarray  # (B, nnz_momentum)
    momentum_phi: np.ndarray  # (B, E) diagonal d r_k / d phi_k
    momentum_mu: np.ndarray  # (B, A)


class JacobianPattern:
    """Fixed per-sample sparsity of the balance and momentum derivatives.

    Local variable layout of one sample is ``[rho1 (nw), rho2 (nw), phi (E)]``;
    balance rows are ``[g1 (nw), g2 (nw)]`` and momentum rows ``[r (E)]``.
    Actuator derivatives are reported separately (one entry per actuator).
    """

    def __init__(self, net: Network):
        a = net.arrays
        nw, E = net.num_withdrawal, len(net.edges)
        self.nw, self.E = nw, E
        internal = np.flatnonzero(a.tail_supply == 0)
        self.internal = internal
        rows, cols = [], []
        # own-node concentration terms
        for m in range(2):
            for n in range(2):
                rows.append(m * nw + np.arange(nw))
                cols.append(n * nw + np.arange(nw))
        # upstream concentration carried by internal edges
        for m in range(2):
            for n in range(2):
                rows.append(m * nw + a.head[internal])
                cols.append(n * nw + a.tail[internal])
        # flux columns
        for m in range(2):
            rows.append(m * nw + a.head)
            cols.append(2 * nw + np.arange(E))
        for m in range(2):
            rows.append(m * nw + a.tail[internal])
            cols.append(2 * nw + internal)
        self.balance_rows = np.concatenate(rows).astype(np.intp)
        self.balance_cols = np.concatenate(cols).astype(np.intp)
        rows, cols = [], []
        for n in range(2):
            rows.append(np.arange(E))
            cols.append(n * nw + a.head)
        for n in range(2):
            rows.append(internal)
            cols.append(n * nw + a.tail[internal])
        self.momentum_rows = np.concatenate(rows).astype(np.intp)
        self.momentum_cols = np.concatenate(cols).astype(np.intp)
        self.actuator_edge = net.actuator_edges()
        self.actuator_inlet = np.array([act.is_compressor for act in net.actuators], dtype=bool)


class MixtureModel:
    """Evaluator of the reduced two-density network system.

    Holds only immutable configuration; every method allocates its own
    outputs, so one instance may be shared by concurrent callers.
    """

    def __init__(self, net: Network, sigma1: float, sigma2: float):
        self.net = net
        self.sigma1 = float(sigma1)
        self.sigma2 = float(sigma2)
        self.sig1sq = self.sigma1**2
        self.sig2sq = self.sigma2**2
        self.arrays = net.arrays
        self.nw = net.num_withdrawal
        self.E = len(net.edges)
        self.pattern = JacobianPattern(net)
        self._warned = False

    # -- primitive evaluations (batched) -------------------------------------
    def mass_diagonal(self, mu_out) -> np.ndarray:
        """Diagonal of ``Q_bar_w^T L M_bar_w`` for outlet ratios ``mu_out``."""
        mu_out = np.atleast_2d(mu_out)
        a = self.arrays
        out = np.zeros((mu_out.shape[0], self.nw))
        for b in range(mu_out.shape[0]):
            out[b] = np.bincount(a.head, weights=a.length * mu_out[b], minlength=self.nw)
        return out

    def flux(self, rho1, rho2, s1, s2, mu_in, mu_out):
        return kernels.edge_flux(self.arrays, rho1, rho2, s1, s2, mu_in, mu_out, self.sig1sq, self.sig2sq)

    def balance(self, rho1, rho2, s1, s2, phi, w):
        tot = np.atleast_2d(s1) + np.atleast_2d(s2)
        return kernels.node_balance(
            self.arrays, rho1, rho2, np.atleast_2d(s1) / tot, np.atleast_2d(s2) / tot, phi, w
        )

    def momentum(self, rho1, rho2, s1, s2, phi, mu_in, mu_out):
        return kernels.momentum_residual(
            self.arrays, rho1, rho2, s1, s2, phi, mu_in, mu_out, self.sig1sq, self.sig2sq
        )

    def check_reversal(self, phi, t=None):
        if not self._warned and np.any(np.asarray(phi) < 0):
            self._warned = True
            where = "" if t is None else f" at t={t:.1f} s"
            warnings.warn(f"flow reversal on at least one edge{where}", FlowReversalWarning, stacklevel=3)

    # -- state-level API -----------------------------------------------------
    def edge_flux(self, rho1, rho2, boundary: BoundaryValues, ratios=None) -> np.ndarray:
        mu_in, mu_out = self.net.ratio_vectors(ratios)
        return self.flux(rho1, rho2, boundary.s1, boundary.s2, mu_in, mu_out)[0]

    def rhs(self, rho1, rho2, boundary: BoundaryValues, ratios=None, flux=None):
        """Return ``(rho1_dot, rho2_dot, flux)``."""
        mu_in, mu_out = self.net.ratio_vectors(ratios)
        if flux is None:
            flux = self.flux(rho1, rho2, boundary.s1, boundary.s2, mu_in, mu_out)[0]
        g1, g2 = self.balance(rho1, rho2, boundary.s1, boundary.s2, flux, boundary.w)
        f = self.mass_diagonal(mu_out)[0]
        return g1[0] / f, g2[0] / f, flux

    def partials(self, rho1, rho2, s1, s2, phi, w, mu_in, mu_out, eps=0.0) -> LocalPartials:
        """Balance and momentum derivatives for a batch of samples.

        Below ``|phi| < eps`` the factor ``|phi|`` in ``d r / d phi`` is replaced
        by ``sqrt(phi^2 + eps^2)`` so the derivative never vanishes; elsewhere,
        and always with ``eps = 0``, values are exact.
        """
        rho1, rho2, s1, s2, phi, w = (np.atleast_2d(v) for v in (rho1, rho2, s1, s2, phi, w))
        mu_in, mu_out = np.atleast_2d(mu_in), np.atleast_2d(mu_out)
        a = self.arrays
        p = self.pattern
        B, nw, E = rho1.shape[0], self.nw, self.E
        internal = p.internal
        tot = rho1 + rho2
        eta = (rho1 / tot, rho2 / tot)
        tot2 = tot * tot
        # d eta^(m) / d rho^(n)
        deta = {
            (0, 0): rho2 / tot2,
            (0, 1): -rho1 / tot2,
            (1, 0): -rho2 / tot2,
            (1, 1): rho1 / tot2,
        }
        stot = s1 + s2
        alpha = (s1 / np.where(stot > 0, stot, 1.0), s2 / np.where(stot > 0, stot, 1.0))
        outflow = w.copy()
        for b in range(B):
            outflow[b] += np.bincount(a.tail[internal], weights=phi[b, internal], minlength=nw)
        parts = []
        for m in range(2):
            for n in range(2):
                parts.append(-deta[m, n] * outflow)
        for m in range(2):
            for n in range(2):
                parts.append(deta[m, n][:, a.tail[internal]] * phi[:, internal])
        sup = a.tail_supply.astype(bool)
        for m in range(2):
            e_in = np.empty((B, E))
            e_in[:, sup] = alpha[m][:, a.tail[sup]]
            e_in[:, ~sup] = eta[m][:, a.tail[~sup]]
            parts.append(e_in)
        for m in range(2):
            parts.append(-eta[m][:, a.tail[internal]])
        balance = np.concatenate(parts, axis=1)

        rho_h = tot[:, a.head]
        rho_out = mu_out * rho_h
        fric = a.lk * phi * np.abs(phi)
        d_out = fric / (rho_out * rho_out)
        mparts = [mu_out * sq - d_out * mu_out for sq in (self.sig1sq, self.sig2sq)]
        mparts += [-mu_in[:, internal] * sq for sq in (self.sig1sq, self.sig2sq)]
        momentum = np.concatenate(mparts, axis=1)
        absphi = np.abs(phi)
        if eps:
            absphi = np.where(absphi < eps, np.sqrt(phi * phi + eps * eps), absphi)
        momentum_phi = 2.0 * a.lk * absphi / rho_out

        A = p.actuator_edge.size
        momentum_mu = np.zeros((B, A))
        if A:
            wd_p = self.sig1sq * rho1 + self.sig2sq * rho2
            sp_p = self.sig1sq * s1 + self.sig2sq * s2
            for i, (k, inlet) in enumerate(zip(p.actuator_edge, p.actuator_inlet)):
                if inlet:
                    t = a.tail[k]
                    p_tail = sp_p[:, t] if a.tail_supply[k] else wd_p[:, t]
                    momentum_mu[:, i] = -p_tail
                else:
                    h = a.head[k]
                    momentum_mu[:, i] = wd_p[:, h] - fric[:, k] * rho_h[:, k] / rho_out[:, k] ** 2
        return LocalPartials(balance, momentum, momentum_phi, momentum_mu)

    def rhs_jacobian(self, rho1, rho2, boundary: BoundaryValues, ratios=None, flux=None, eps=None):
        """Sparse Jacobian of ``(rho1_dot, rho2_dot)`` w.r.t. ``(rho1, rho2)``.

        The flux is eliminated by the implicit-function rule
        ``d phi / d rho = -(d r / d phi)^{-1} d r / d rho``.
        """
        mu_in, mu_out = self.net.ratio_vectors(ratios)
        if flux is None:
            flux = self.flux(rho1, rho2, boundary.s1, boundary.s2, mu_in, mu_out)[0]
        if eps is None:
            eps = 1e-8 * max(1.0, float(np.max(np.abs(flux))) if flux.size else 1.0)
        d = self.partials(rho1, rho2, boundary.s1, boundary.s2, flux, boundary.w, mu_in, mu_out, eps)
        p = self.pattern
        nw, E = self.nw, self.E
        nb = 2 * nw + E
        G = sp.csr_matrix((d.balance[0], (p.balance_rows, p.balance_cols)), shape=(2 * nw, nb))
        Rrho = sp.csr_matrix((d.momentum[0], (p.momentum_rows, p.momentum_cols)), shape=(E, 2 * nw))
        dphi = -sp.diags(1.0 / d.momentum_phi[0]) @ Rrho
        J = G[:, : 2 * nw] + G[:, 2 * nw :] @ dphi
        finv = 1.0 / self.mass_diagonal(mu_out)[0]
        return (sp.diags(np.concatenate([finv, finv])) @ J).tocsc()


# -- module-level convenience wrappers --------------------------------------------


def solve_edge_flux(net: Network, rho1, rho2, boundary: BoundaryValues, ratios=None,
                    sigma1: float = 338.38, sigma2: float = 4 * 338.38):
    """Edge inlet fluxes that zero the momentum residual on every edge."""
    return MixtureModel(net, sigma1, sigma2).edge_flux(rho1, rho2, boundary, ratios)


def density_rhs(model: MixtureModel, rho1, rho2, boundary: BoundaryValues, ratios=None, flux=None):
    """Time derivative of nodal partial densities, ``(rho1_dot, rho2_dot)``."""
    d1, d2, _ = model.rhs(rho1, rho2, boundary, ratios, flux)
    return d1, d2


def linepack_balance(model: MixtureModel, rho1, rho2, boundary: BoundaryValues, ratios=None):
    """Per-constituent ``(d/dt linepack, injection - withdrawal)`` at one state.

    Linepack is ``1^T F rho^(m)``; the two returned pairs agree identically
    for the discrete scheme.
    """
    mu_in, mu_out = model.net.ratio_vectors(ratios)
    d1, d2, phi = model.rhs(rho1, rho2, boundary, ratios)
    f = model.mass_diagonal(mu_out)[0]
    a = model.arrays
    sup = a.tail_supply.astype(bool)
    eta2 = nodal_concentration(rho1, rho2)
    out = []
    for dm, alpha, eta in ((d1, boundary.alpha1, 1.0 - eta2), (d2, boundary.alpha2, eta2)):
        inj = float(np.sum(alpha[a.tail[sup]] * phi[sup]))
        wd = float(np.sum(eta * boundary.w))
        out.append((float(np.sum(f * dm)), inj - wd))
    return out


# -- steady state ------------------------------------------------------------------


@dataclass
class SteadyStateResult:
    state: MixtureState
    iterations: int
    residual: float
    history: list = field(default_factory=list)


def _damped_newton(resid, jac, z, feasible, tol, max_iter, label):
    """Newton iteration with Armijo backtracking on ``0.5 |r|^2``.

    Falls back to a Levenberg-Marquardt step when the Jacobian is singular;
    that step leaves unresolvable directions at their current value.
    """

    def safe(z):
        if not feasible(z):
            return None
        try:
            with np.errstate(all="ignore"):
                r = resid(z)
        except FloatingPointError:
            return None
        return r if np.all(np.isfinite(r)) else None

    r = resid(z)
    history = [float(np.max(np.abs(r)))]
    it = 0
    while history[-1] > tol:
        if it >= max_iter:
            raise SteadyStateError(
                f"{label}: Newton did not converge in {max_iter} iterations "
                f"(scaled residual {history[-1]:.3e})",
                residual=history[-1],
            )
        it += 1
        J = jac(z)
        dz = None
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error", spla.MatrixRankWarning)
                dz = spla.spsolve(J.tocsc(), -r)
        except (spla.MatrixRankWarning, RuntimeError):
            pass
        if dz is None or not np.all(np.isfinite(dz)):
            JtJ = (J.T @ J).tocsc()
            lam = 1e-10 * max(1.0, JtJ.diagonal().max())
            dz = spla.spsolve(JtJ + lam * sp.identity(JtJ.shape[0], format="csc"), -(J.T @ r))
        f0 = 0.5 * float(r @ r)
        step = 1.0
        while True:
            rt = safe(z + step * dz)
            if rt is not None and 0.5 * float(rt @ rt) <= (1.0 - 1e-4 * step) * f0:
                break
            step *= 0.5
            if step < 1e-12:
                raise SteadyStateError(
                    f"{label}: line search failed (scaled residual {history[-1]:.3e})",
                    residual=history[-1],
                )
        z, r = z + step * dz, rt
        history.append(float(np.max(np.abs(r))))
    return z, it, history


def _mixing(model: MixtureModel, phi, boundary: BoundaryValues, eta_default: float, reg: float):
    """Flow-weighted nodal hydrogen fractions for fixed edge fluxes.

    Solves ``eta_j (outflow_j + w_j) - sum_in eta_tail phi = 0`` with a tiny
    pull ``reg * (eta_j - eta_default)`` that only matters at nodes without
    through-flow.
    """
    a = model.arrays
    nw = model.nw
    internal = model.pattern.internal
    sup = a.tail_supply.astype(bool)
    diag = boundary.w + np.bincount(a.tail[internal], weights=phi[internal], minlength=nw) + reg
    A = sp.csr_matrix(
        (np.concatenate([diag, -phi[internal]]),
         (np.concatenate([np.arange(nw), a.head[internal]]), np.concatenate([np.arange(nw), a.tail[internal]]))),
        shape=(nw, nw),
    )
    c = np.bincount(a.head[sup], weights=boundary.alpha2[a.tail[sup]] * phi[sup], minlength=nw) + reg * eta_default
    return np.clip(spla.spsolve(A.tocsc(), c), 0.0, 1.0)


def steady_state(
    net: Network,
    boundary: BoundaryValues,
    ratios=None,
    sigma1: float = 338.38,
    sigma2: float = 4 * 338.38,
    tol: float = 1e-10,
    max_iter: int = 100,
    return_info: bool = False,
):
    """Time-invariant solution by damped Newton iteration.

    Starting from the mean supply densities replicated over the network with
    zero flux, Newton is run on total density and flux with the hydrogen
    fraction held fixed, the fraction is then updated by flow-weighted mixing,
    and the full two-density system is polished by Newton.  Residuals are the
    nodal balances scaled by a flux scale and the momentum balances scaled by
    the supply pressure; convergence means a max-norm scaled residual below
    ``tol``.
    """
    model = MixtureModel(net, sigma1, sigma2)
    nw, E = net.num_withdrawal, len(net.edges)
    p = model.pattern
    mu_in, mu_out = net.ratio_vectors(ratios)
    s1, s2, w = boundary.s1, boundary.s2, boundary.w
    if w.shape != (nw,):
        raise ValueError(f"expected {nw} withdrawal values, got {w.shape}")
    p_scale = float(np.max(boundary.supply_pressure(sigma1, sigma2)))
    rho_scale = p_scale / model.sig1sq
    phi_scale = max(float(np.sum(np.abs(w))), 1e-3 * np.sqrt(p_scale * rho_scale / np.max(net.arrays.lk)))
    xs = np.concatenate([np.full(2 * nw, rho_scale), np.full(E, phi_scale)])
    rs = np.concatenate([np.full(2 * nw, phi_scale), np.full(E, p_scale)])

    def resid(z):
        r1, r2, phi = z[:nw], z[nw : 2 * nw], z[2 * nw :]
        g1, g2 = model.balance(r1, r2, s1, s2, phi, w)
        mom = model.momentum(r1, r2, s1, s2, phi, mu_in, mu_out)
        return np.concatenate([g1[0], g2[0], mom[0]]) / rs

    def jac(z):
        r1, r2, phi = z[:nw], z[nw : 2 * nw], z[2 * nw :]
        d = model.partials(r1, r2, s1, s2, phi, w, mu_in, mu_out, eps=1e-6 * phi_scale)
        rows = np.concatenate([p.balance_rows, 2 * nw + p.momentum_rows, 2 * nw + np.arange(E)])
        cols = np.concatenate([p.balance_cols, p.momentum_cols, 2 * nw + np.arange(E)])
        vals = np.concatenate([d.balance[0], d.momentum[0], d.momentum_phi[0]])
        return sp.csr_matrix((vals, (rows, cols)), shape=(2 * nw + E, 2 * nw + E))

    def feasible(z):
        return bool(np.all(z[: 2 * nw] >= 0) and np.all(z[:nw] + z[nw : 2 * nw] > 0))

    eta_default = float(np.mean(boundary.alpha2))
    eta = np.full(nw, eta_default)
    zr = np.concatenate([np.full(nw, np.mean(s1 + s2)), np.zeros(E)])
    total_iters = 0
    history: list[float] = []
    for _ in range(20):
        # total-density Newton with the hydrogen fraction held fixed
        T = sp.bmat([[sp.diags(1.0 - eta), None], [sp.diags(eta), None], [None, sp.identity(E)]])
        S = sp.bmat([[sp.identity(nw), sp.identity(nw), None], [None, None, sp.identity(E)]])
        rsr = np.concatenate([np.full(nw, phi_scale), np.full(E, p_scale)])
        xsr = np.concatenate([np.full(nw, rho_scale), np.full(E, phi_scale)])

        def lift(y, T=T):
            return T @ (y * xsr)

        def resid_r(y, S=S):
            return (S @ (resid(lift(y)) * rs)) / rsr

        def jac_r(y, S=S, T=T):
            return sp.diags(1.0 / rsr) @ S @ jac(lift(y)) @ T @ sp.diags(xsr)

        y, it, hist = _damped_newton(
            resid_r, jac_r, zr / xsr, lambda y: feasible(lift(y)), 0.1 * tol, max_iter, "steady state"
        )
        total_iters += it
        history += hist
        zr = y * xsr
        phi = zr[nw:]
        new_eta = _mixing(model, phi, boundary, eta_default, 1e-9 * phi_scale)
        done = np.max(np.abs(new_eta - eta)) <= 1e-14
        eta = new_eta
        if done:
            break
    z = np.concatenate([(1.0 - eta) * zr[:nw], eta * zr[:nw], zr[nw:]])
    zs, it, hist = _damped_newton(
        lambda u: resid(u * xs),
        lambda u: sp.diags(1.0 / rs) @ jac(u * xs) @ sp.diags(xs),
        z / xs,
        lambda u: feasible(u * xs),
        tol,
        max_iter,
        "steady state",
    )
    total_iters += it
    history += hist
    z = zs * xs
    state = MixtureState(z[:nw].copy(), z[nw : 2 * nw].copy(), z[2 * nw :].copy())
    log.debug("steady state converged in %d iterations, residual %.2e", total_iters, history[-1])
    if return_info:
        return SteadyStateResult(state, total_iters, history[-1], history)
    return state


# -- homogeneous reduction ---------------------------------------------------------


class HomogeneousModel:
    """Total-density system for a network-uniform, constant hydrogen fraction.

    Evaluated in incidence-matrix form, independently of the per-edge kernels:

        F rho_dot = Q_w^T phi - w
        M_w (a^2 rho) + M_s (b^2 s) = -L K (phi |phi|) / (M_bar_w rho)
    """

    def __init__(self, net: Network, alpha2, sigma1: float, sigma2: float):
        alpha2 = np.atleast_1d(np.asarray(alpha2, dtype=float))
        if alpha2.size > 1 and np.ptp(alpha2) > 0:
            raise ValueError("homogeneous reduction needs a network-uniform concentration")
        self.net = net
        self.alpha2 = float(alpha2[0])
        self.sigma1, self.sigma2 = float(sigma1), float(sigma2)
        self.a_sq = float(mixture_sound_speed_sq(self.alpha2, sigma1, sigma2))
        self.b_sq = self.a_sq
        self._inc_cache = {}

    @property
    def sound_speed(self) -> float:
        return float(np.sqrt(self.a_sq))

    def _inc(self, ratios):
        key = None if ratios is None else tuple(np.asarray(ratios, dtype=float))
        if key not in self._inc_cache:
            self._inc_cache[key] = incidence(self.net, ratios)
        return self._inc_cache[key]

    def flux(self, rho, s, ratios=None):
        inc = self._inc(ratios)
        lhs = inc.M_w @ (self.a_sq * rho) + inc.M_s @ (self.b_sq * s)
        rho_out = inc.M_bar_w @ rho
        lk = inc.L.diagonal() * inc.K.diagonal()
        q = np.sqrt(np.abs(lhs) * rho_out / lk)
        return np.where(lhs <= 0, q, -q)

    def rhs(self, rho, s, w, ratios=None):
        inc = self._inc(ratios)
        phi = self.flux(rho, s, ratios)
        F = inc.mass_matrix()
        return spla.spsolve(F.tocsc(), inc.Q_w.T @ phi - w), phi

    def partial_densities(self, rho):
        return (1.0 - self.alpha2) * rho, self.alpha2 * rho


def homogeneous_reduce(net: Network, alpha2, sigma1: float, sigma2: float) -> HomogeneousModel:
    return HomogeneousModel(net, alpha2, sigma1, sigma2)
