"""Primal-dual interior-point solver for smooth sparse nonlinear programs.

Problems have the form::

    min f(x)  s.t.  c_lower <= c(x) <= c_upper,  x_lower <= x <= x_upper

where rows with ``c_lower == c_upper`` are equalities.  Inequality rows get
slack variables, bounds are handled by log barriers, and each Newton step
solves a sparse condensed KKT system.  Only first derivatives are required;
curvature comes from a damped BFGS update, a Gauss-Newton product for
least-squares objectives, or sparse finite differences of the Lagrangian
gradient (columns grouped by a greedy coloring of the Hessian sparsity).  Steps are globalized by an l1 exact-penalty merit line
search with fraction-to-boundary rule, and the barrier parameter decreases
monotonically.

The solver knows nothing about the problem's meaning; it only calls the
methods of :class:`NlpProblem`.
"""
from __future__ import annotations

import logging
import sys
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.linalg as sla
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

CONVERGED = "converged"
ITERATION_CAP = "iteration-cap"
INFEASIBLE = "infeasible"
NUMERICAL_FAILURE = "numerical-failure"

CURVATURE_OPTIONS = ("quasi-update", "gauss-newton", "finite-difference")


class NlpProblem:
    """Interface consumed by :func:`solve`.

    Subclasses set ``x_lower``, ``x_upper``, ``c_lower``, ``c_upper`` (use
    ``inf`` for absent bounds) and implement the four evaluation methods.
    ``jacobian`` must return a sparse matrix with a constant pattern.
    """

    x_lower: np.ndarray
    x_upper: np.ndarray
    c_lower: np.ndarray
    c_upper: np.ndarray

    @property
    def n(self) -> int:
        return self.x_lower.size

    @property
    def m(self) -> int:
        return self.c_lower.size

    def objective(self, x) -> float:
        raise NotImplementedError

    def gradient(self, x) -> np.ndarray:
        raise NotImplementedError

    def constraints(self, x) -> np.ndarray:
        return np.zeros(0)

    def jacobian(self, x) -> sp.csr_matrix:
        return sp.csr_matrix((0, self.n))

    def hessian_sparsity(self):
        """Boolean sparse pattern of the Lagrangian Hessian, or None (dense)."""
        return None

    # Problems with f(x) = 0.5 |r(x)|^2 may also define
    # ``residual_jacobian(x)`` to enable Gauss-Newton curvature.


@dataclass
class SolverOptions:
    tol_kkt: float = 1e-6
    tol_feas: float = 1e-8
    max_iter: int = 500
    curvature: str = "quasi-update"  # | "gauss-newton" | "finite-difference"
    regularization_floor: float = 1e-12
    regularization_max: float = 1e6
    mu_init: float = 0.1
    fd_step: float = 1e-7
    bound_push: float = 1e-2
    verbose: bool = False

    def __post_init__(self):
        if not (self.tol_kkt > 0 and self.tol_feas > 0):
            raise ValueError("tolerances must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.curvature not in CURVATURE_OPTIONS:
            raise ValueError(f"unknown curvature option {self.curvature!r}")


@dataclass
class NlpResult:
    status: str
    x: np.ndarray
    multipliers: dict
    objective_value: float
    kkt_residual: float
    feasibility: float
    iterations: int
    wall_time: float
    history: list = field(default_factory=list)

    @property
    def success(self) -> bool:
        return self.status == CONVERGED


def greedy_coloring(pattern) -> np.ndarray:
    """Group columns so that no Hessian row touches two columns of a group.

    Columns ``i`` and ``j`` conflict when ``(P^T P)_ij != 0``.  Colors are
    assigned greedily in order of decreasing degree (ties by index), which
    keeps the result deterministic.
    """
    P = sp.csr_matrix(pattern, dtype=float)
    P.data[:] = 1.0
    G = (P.T @ P).tocsr()
    n = G.shape[0]
    degree = np.diff(G.indptr)
    order = sorted(range(n), key=lambda i: (-degree[i], i))
    color = np.full(n, -1, dtype=np.intp)
    for i in order:
        nbrs = G.indices[G.indptr[i] : G.indptr[i + 1]]
        used = set(color[nbrs][color[nbrs] >= 0].tolist())
        c = 0
        while c in used:
            c += 1
        color[i] = c
    return color


class _FiniteDifferenceHessian:
    def __init__(self, problem: NlpProblem, step: float):
        n = problem.n
        pattern = problem.hessian_sparsity()
        if pattern is None:
            pattern = sp.csr_matrix(np.ones((n, n)))
        pattern = sp.csr_matrix(pattern, dtype=float)
        pattern = (pattern + pattern.T + sp.identity(n)).tocsr()
        pattern.data[:] = 1.0
        self.pattern = pattern.tocoo()
        self.colors = greedy_coloring(pattern)
        self.num_colors = int(self.colors.max()) + 1 if n else 0
        self.step = step

    def evaluate(self, grad_lag, x, g0):
        rows, cols = self.pattern.row, self.pattern.col
        h = self.step * np.maximum(1.0, np.abs(x))
        vals = np.empty(rows.size)
        for c in range(self.num_colors):
            d = np.where(self.colors == c, h, 0.0)
            diff = grad_lag(x + d) - g0
            sel = self.colors[cols] == c
            vals[sel] = diff[rows[sel]] / h[cols[sel]]
        H = sp.csr_matrix((vals, (rows, cols)), shape=(x.size, x.size))
        return ((H + H.T) * 0.5).tocsr()


class _Bfgs:
    def __init__(self, n):
        self.B = np.eye(n)
        self.first = True

    def update(self, s, y):
        ss = float(s @ s)
        if ss < 1e-30:
            return
        if self.first:
            sy = float(s @ y)
            if sy > 0:
                self.B *= float(y @ y) / sy
            self.first = False
        Bs = self.B @ s
        sBs = float(s @ Bs)
        sy = float(s @ y)
        if sy < 0.2 * sBs:
            theta = 0.8 * sBs / (sBs - sy)
            y = theta * y + (1.0 - theta) * Bs
            sy = float(s @ y)
        self.B += np.outer(y, y) / sy - np.outer(Bs, Bs) / sBs

    def matrix(self):
        return sp.csr_matrix(self.B)


class _FixedReduced(NlpProblem):
    """View of a problem with the variables where ``x_lower == x_upper`` removed."""

    def __init__(self, problem: NlpProblem, fixed: np.ndarray):
        self.base = problem
        self.free = np.flatnonzero(~fixed)
        self.full = np.asarray(problem.x_lower, float).copy()
        self.x_lower = self.full[self.free]
        self.x_upper = np.asarray(problem.x_upper, float)[self.free]
        self.c_lower, self.c_upper = problem.c_lower, problem.c_upper
        if hasattr(problem, "residual_jacobian"):
            self.residual_jacobian = lambda x: sp.csr_matrix(
                problem.residual_jacobian(self.expand(x)))[:, self.free]

    def expand(self, xf):
        x = self.full.copy()
        x[self.free] = xf
        return x

    def objective(self, x):
        return self.base.objective(self.expand(x))

    def gradient(self, x):
        return self.base.gradient(self.expand(x))[self.free]

    def constraints(self, x):
        return self.base.constraints(self.expand(x))

    def jacobian(self, x):
        return sp.csr_matrix(self.base.jacobian(self.expand(x)))[:, self.free]

    def hessian_sparsity(self):
        P = self.base.hessian_sparsity()
        return None if P is None else sp.csr_matrix(P)[self.free][:, self.free]


def solve(problem: NlpProblem, x0, opts: SolverOptions | None = None) -> NlpResult:
    """Minimize ``problem`` from ``x0`` (projected into the bound interior).

    Variables with equal lower and upper bounds are held at that value and
    removed from the iteration.
    """
    opts = opts or SolverOptions()
    fixed = np.asarray(problem.x_lower, float) == np.asarray(problem.x_upper, float)
    if not np.any(fixed):
        return _solve(problem, x0, opts)
    reduced = _FixedReduced(problem, fixed)
    res = _solve(reduced, np.asarray(x0, float)[reduced.free], opts)
    n = problem.n
    res.x = reduced.expand(res.x)
    # bound multipliers of a fixed variable absorb its Lagrangian gradient
    g = problem.gradient(res.x)
    J = sp.csr_matrix(problem.jacobian(res.x))
    y = np.zeros(problem.m)
    eq = np.asarray(problem.c_lower) == np.asarray(problem.c_upper)
    y[eq] = res.multipliers["equality"]
    gl = g - J.T @ (y + res.multipliers["inequality"])
    for key in ("bound_lower", "bound_upper"):
        full = np.zeros(n)
        full[reduced.free] = res.multipliers[key]
        res.multipliers[key] = full
    fx = np.flatnonzero(fixed)
    res.multipliers["bound_lower"][fx] = np.maximum(gl[fx], 0.0)
    res.multipliers["bound_upper"][fx] = np.maximum(-gl[fx], 0.0)
    return res


def _solve(problem: NlpProblem, x0, opts: SolverOptions) -> NlpResult:
    t_start = time.perf_counter()
    n = problem.n
    xl, xu = np.asarray(problem.x_lower, float), np.asarray(problem.x_upper, float)
    cl, cu = np.asarray(problem.c_lower, float), np.asarray(problem.c_upper, float)
    eq = np.flatnonzero(cl == cu)
    il = np.flatnonzero((cl != cu) & np.isfinite(cl))
    iu = np.flatnonzero((cl != cu) & np.isfinite(cu))
    lb = np.flatnonzero(np.isfinite(xl))
    ub = np.flatnonzero(np.isfinite(xu))
    mI = il.size + iu.size

    # push the start strictly inside the bounds
    x = np.array(x0, dtype=float)
    if x.shape != (n,):
        raise ValueError(f"x0 must have shape ({n},)")
    kap = opts.bound_push
    with np.errstate(invalid="ignore"):
        width = np.where(np.isfinite(xl) & np.isfinite(xu), xu - xl, np.inf)
        push_l = np.minimum(kap * np.maximum(1.0, np.abs(xl)), 0.5 * kap * width)
        push_u = np.minimum(kap * np.maximum(1.0, np.abs(xu)), 0.5 * kap * width)
        x = np.where(np.isfinite(xl), np.maximum(x, xl + push_l), x)
        x = np.where(np.isfinite(xu), np.minimum(x, xu - push_u), x)

    def d_of(c):
        return np.concatenate([c[il] - cl[il], cu[iu] - c[iu]])

    def jd_of(J):
        return sp.vstack([J[il], -J[iu]]).tocsr()

    f = problem.objective(x)
    g = problem.gradient(x)
    c = problem.constraints(x)
    J = problem.jacobian(x).tocsr()
    dval = d_of(c)
    s = np.maximum(dval, kap * np.maximum(1.0, np.abs(dval)))
    mu = opts.mu_init
    v = mu / s
    zl = mu / (x[lb] - xl[lb])
    zu = mu / (xu[ub] - x[ub])

    JE, JD = J[eq], jd_of(J)
    y = _least_squares_multipliers(g, JE, JD, v, zl, zu, lb, ub, n)

    def grad_lag(xx, yE, vv):
        Jx = problem.jacobian(xx).tocsr()
        return problem.gradient(xx) - Jx[eq].T @ yE - jd_of(Jx).T @ vv

    bfgs = fdh = None
    if opts.curvature == "quasi-update":
        bfgs = _Bfgs(n)
    elif opts.curvature == "finite-difference":
        fdh = _FiniteDifferenceHessian(problem, opts.fd_step)
    elif not hasattr(problem, "residual_jacobian"):
        raise ValueError("gauss-newton curvature needs problem.residual_jacobian(x)")

    nu = 1.0
    delta_last = 0.0
    history = []
    status = ITERATION_CAP
    it = 0
    kkt = feas = np.inf

    def errors(mu_):
        rd = g - JE.T @ y - JD.T @ v
        rd[lb] -= zl
        rd[ub] += zu
        comp = np.concatenate([s * v, (x[lb] - xl[lb]) * zl, (xu[ub] - x[ub]) * zu])
        ncomp = comp.size
        zsum = np.abs(v).sum() + np.abs(zl).sum() + np.abs(zu).sum()
        s_max = 100.0
        sd = max(s_max, (np.abs(y).sum() + zsum) / max(1, eq.size + ncomp)) / s_max
        sc = max(s_max, zsum / max(1, ncomp)) / s_max
        primal = max(_inf(c[eq] - cl[eq]), _inf(dval - s))
        return max(_inf(rd) / sd, primal, _inf(comp - mu_) / sc)

    def feasibility():
        return max(_inf(c[eq] - cl[eq]), _inf(np.minimum(dval, 0.0)))

    if opts.verbose:
        print(f"{'iter':>4} {'objective':>14} {'feas':>9} {'kkt':>9} {'step':>9} {'mu':>9}", file=sys.stderr)

    step = 0.0
    while True:
        kkt = errors(0.0)
        feas = feasibility()
        history.append(dict(iter=it, objective=f, feasibility=feas, kkt=kkt, step=step, mu=mu))
        if opts.verbose:
            print(f"{it:4d} {f:14.7e} {feas:9.2e} {kkt:9.2e} {step:9.2e} {mu:9.2e}", file=sys.stderr)
        if kkt <= opts.tol_kkt and feas <= opts.tol_feas:
            status = CONVERGED
            break
        if it >= opts.max_iter:
            status = ITERATION_CAP
            break
        mu_floor = min(opts.tol_kkt, opts.tol_feas) / 10.0
        while mu > mu_floor and errors(mu) <= 10.0 * mu:
            mu = max(mu_floor, min(0.2 * mu, mu**1.5))
        it += 1

        # curvature
        if bfgs is not None:
            W = bfgs.matrix()
        elif fdh is None:
            R = sp.csr_matrix(problem.residual_jacobian(x))
            W = (R.T @ R).tocsr()
        else:
            W = fdh.evaluate(lambda xx: grad_lag(xx, y, v), x, g - JE.T @ y - JD.T @ v)

        sig_s = v / s
        sig_x = np.zeros(n)
        sig_x[lb] += zl / (x[lb] - xl[lb])
        sig_x[ub] += zu / (xu[ub] - x[ub])
        gb = g.copy()
        gb[lb] -= mu / (x[lb] - xl[lb])
        gb[ub] += mu / (xu[ub] - x[ub])
        rE = c[eq] - cl[eq]
        rD = dval - s
        H0 = (W + sp.diags(sig_x) + JD.T @ sp.diags(sig_s) @ JD).tocsc()
        rhs1 = -(gb - JE.T @ y - JD.T @ v) + JD.T @ (mu / s - v - sig_s * rD)

        sol = _solve_kkt(H0, JE, rhs1, -rE, delta_last, opts)
        if sol is None:
            status = NUMERICAL_FAILURE
            break
        dx, dy, delta_last, kkt_solve = sol
        ds = JD @ dx + rD
        dv = mu / s - v - sig_s * ds
        dzl = mu / (x[lb] - xl[lb]) - zl - (zl / (x[lb] - xl[lb])) * dx[lb]
        dzu = mu / (xu[ub] - x[ub]) - zu + (zu / (xu[ub] - x[ub])) * dx[ub]

        tau = max(0.99, 1.0 - mu)
        a_pri = min(
            _max_step(s, ds, tau),
            _max_step(x[lb] - xl[lb], dx[lb], tau),
            _max_step(xu[ub] - x[ub], -dx[ub], tau),
        )
        a_dual = min(_max_step(v, dv, tau), _max_step(zl, dzl, tau), _max_step(zu, dzu, tau))

        # merit line search
        def merit(xx, ss, ff, cc):
            bar = ff - mu * np.log(ss).sum()
            bar -= mu * np.log(xx[lb] - xl[lb]).sum() + mu * np.log(xu[ub] - xx[ub]).sum()
            return bar + nu * (np.abs(cc[eq] - cl[eq]).sum() + np.abs(d_of(cc) - ss).sum())

        viol = np.abs(rE).sum() + np.abs(rD).sum()
        grad_phi = float(gb @ dx - mu * np.sum(ds / s))
        curv = float(dx @ (H0 @ dx))
        if viol > 0:
            nu_trial = (grad_phi + max(0.0, 0.5 * curv)) / (0.9 * viol)
            if nu < nu_trial:
                nu = nu_trial + 1.0
        dphi = grad_phi - nu * viol
        log.debug("iter %d penalty %.3e violation %.3e slope %.3e", it, nu, viol, dphi)
        phi0 = merit(x, s, f, c)

        def trial(xt, st):
            try:
                with np.errstate(all="ignore"):
                    ft = problem.objective(xt)
                    ct = problem.constraints(xt)
                    # each slack enters the merit only through
                    # -mu ln s + nu |d - s|, minimized exactly at max(d, mu/nu)
                    st = np.maximum(d_of(ct), mu / nu)
                    pt = merit(xt, st, ft, ct)
            except (FloatingPointError, ValueError):
                return np.nan, None, None, None
            return pt, ft, ct, st

        alpha = a_pri
        accepted = False
        first = True
        while alpha >= 1e-14:
            xt = x + alpha * dx
            pt, ft, ct, st = trial(xt, s + alpha * ds)
            if np.isfinite(pt) and pt <= phi0 + 1e-4 * alpha * dphi + 1e-14 * abs(phi0):
                accepted = True
                break
            if first and ct is not None:
                # second-order correction against the curvature of the constraints
                first = False
                cE_t = ct[eq] - cl[eq]
                rD_t = d_of(ct) - (s + alpha * ds)
                if np.abs(cE_t).sum() + np.abs(rD_t).sum() > 0.0:
                    dxc, _ = kkt_solve(-(JD.T @ (sig_s * rD_t)), -cE_t)
                    dsc = JD @ dxc + rD_t
                    dx2, ds2 = alpha * dx + dxc, alpha * ds + dsc
                    a2 = min(
                        _max_step(s, ds2, tau),
                        _max_step(x[lb] - xl[lb], dx2[lb], tau),
                        _max_step(xu[ub] - x[ub], -dx2[ub], tau),
                    )
                    if a2 >= 1.0 - 1e-12:
                        xs = x + dx2
                        ps, fs, cs, ss = trial(xs, s + ds2)
                        if np.isfinite(ps) and ps <= phi0 + 1e-4 * alpha * dphi + 1e-14 * abs(phi0):
                            xt, pt, ft, ct, st = xs, ps, fs, cs, ss
                            accepted = True
                            break
            alpha *= 0.5
        if not accepted:
            status = NUMERICAL_FAILURE
            if log.isEnabledFor(logging.DEBUG):
                for aa in (a_pri, 1e-4 * a_pri, 1e-8 * a_pri):
                    pt_, *_ = trial(x + aa * dx, s + aa * ds)
                    log.debug("  alpha %.1e merit change %.6e armijo %.6e", aa, pt_ - phi0, 1e-4 * aa * dphi)
            log.debug("line search failed at iteration %d", it)
            break
        step = alpha
        x_old, gl_old = x, None
        if bfgs is not None:
            gl_old = g - JE.T @ (y + alpha * dy) - JD.T @ (v + a_dual * dv)
        x, s, f, c = xt, st, ft, ct
        y = y + alpha * dy
        v = v + a_dual * dv
        zl = zl + a_dual * dzl
        zu = zu + a_dual * dzu
        # keep duals near the central path
        k_sig = 1e10
        v = np.clip(v, mu / (k_sig * s), k_sig * mu / s)
        zl = np.clip(zl, mu / (k_sig * (x[lb] - xl[lb])), k_sig * mu / (x[lb] - xl[lb]))
        zu = np.clip(zu, mu / (k_sig * (xu[ub] - x[ub])), k_sig * mu / (xu[ub] - x[ub]))
        g = problem.gradient(x)
        J = problem.jacobian(x).tocsr()
        JE, JD = J[eq], jd_of(J)
        dval = d_of(c)
        if bfgs is not None:
            bfgs.update(x - x_old, (g - JE.T @ y - JD.T @ v) - gl_old)

    y_ineq = np.zeros(cl.size)
    y_ineq[il] += v[: il.size]
    y_ineq[iu] -= v[il.size :]
    y_full = np.zeros(cl.size)
    y_full[eq] = y
    multipliers = dict(
        equality=y_full[eq],
        inequality=y_ineq,
        bound_lower=_scatter(zl, lb, n),
        bound_upper=_scatter(zu, ub, n),
        slack=s.copy(),
        slack_dual=v.copy(),
    )
    return NlpResult(
        status=status,
        x=x,
        multipliers=multipliers,
        objective_value=float(f),
        kkt_residual=float(kkt),
        feasibility=float(feas),
        iterations=it,
        wall_time=time.perf_counter() - t_start,
        history=history,
    )


def _inf(a) -> float:
    return float(np.max(np.abs(a))) if np.size(a) else 0.0


def _scatter(vals, idx, n):
    out = np.zeros(n)
    out[idx] = vals
    return out


def _max_step(val, dval, tau) -> float:
    neg = dval < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-tau * val[neg] / dval[neg])))


def _least_squares_multipliers(g, JE, JD, v, zl, zu, lb, ub, n):
    mE = JE.shape[0]
    if mE == 0:
        return np.zeros(0)
    rhs = g - JD.T @ v
    rhs[lb] -= zl
    rhs[ub] += zu
    K = sp.bmat([[sp.identity(n), JE.T], [JE, None]], format="csc")
    try:
        sol = spla.splu(K).solve(np.concatenate([rhs, np.zeros(mE)]))
        y = sol[n:]
    except RuntimeError:
        return np.zeros(mE)
    if not np.all(np.isfinite(y)) or _inf(y) > 1e3:
        return np.zeros(mE)
    return y


def inertia(K) -> tuple[int, int, int]:
    """(positive, negative, zero) eigenvalue counts of a symmetric matrix.

    Uses a dense Bunch-Kaufman factorization; Sylvester's law of inertia
    lets us read the counts off the 1x1 and 2x2 pivot blocks.
    """
    Kd = K.toarray() if sp.issparse(K) else np.asarray(K)
    _, d, _ = sla.ldl(Kd, lower=True, hermitian=True)
    pos = neg = zero = 0
    i, m = 0, d.shape[0]
    while i < m:
        if i + 1 < m and d[i + 1, i] != 0.0:
            ev = np.linalg.eigvalsh(d[i : i + 2, i : i + 2])
            i += 2
        else:
            ev = (d[i, i],)
            i += 1
        for e in ev:
            if e > 0:
                pos += 1
            elif e < 0:
                neg += 1
            else:
                zero += 1
    return pos, neg, zero


# above this size the dense inertia count is replaced by a curvature test
DENSE_INERTIA_LIMIT = 4000


def _solve_kkt(H0, JE, rhs1, rhs2, delta_last, opts):
    """Solve the condensed KKT system with inertia control.

    The Hessian block is shifted by ``delta_w I`` until the matrix has
    exactly ``n`` positive and ``mE`` negative eigenvalues (a small
    ``-delta_c I`` block handles rank-deficient Jacobians).  For systems
    larger than ``DENSE_INERTIA_LIMIT`` the inertia count is replaced by the
    test ``dx^T H dx >= 1e-10 |dx|^2`` on the computed step.

    Returns ``(dx, dy, delta_w, resolve)`` or None once ``delta_w`` would
    exceed ``opts.regularization_max``.
    """
    n, mE = H0.shape[0], JE.shape[0]
    dense = n + mE <= DENSE_INERTIA_LIMIT
    delta_w = 0.0
    delta_c = 0.0
    while True:
        H = H0 + delta_w * sp.identity(n, format="csc") if delta_w else H0
        blocks = [[H, JE.T], [JE, -delta_c * sp.identity(mE) if delta_c else None]] if mE else [[H]]
        K = sp.bmat(blocks, format="csc")
        ok = True
        if dense:
            pos, neg, zero = inertia(K)
            log.debug("  inertia (%d, %d, %d) delta_w %.1e delta_c %.1e", pos, neg, zero, delta_w, delta_c)
            if (zero or neg < mE) and mE and delta_c == 0.0:
                # too few negative pivots: treat the Jacobian as rank deficient
                delta_c = 1e-8
                continue
            ok = pos == n and neg == mE and zero == 0
        if ok:
            try:
                lu = spla.splu(K, permc_spec="MMD_AT_PLUS_A")
                sol = lu.solve(np.concatenate([rhs1, rhs2]) if mE else rhs1)
                ok = bool(np.all(np.isfinite(sol)))
            except RuntimeError:
                ok = False
            if not ok and delta_c == 0.0 and mE:
                delta_c = 1e-8
                continue
        if ok:
            dx = sol[:n]
            dy = -sol[n:]
            if dense or float(dx @ (H @ dx)) >= 1e-10 * float(dx @ dx) or not np.any(dx):
                def resolve(r1, r2, lu=lu):
                    z = lu.solve(np.concatenate([r1, r2]) if mE else r1)
                    return z[:n], -z[n:]

                return dx, dy, delta_w, resolve
        if delta_w == 0.0:
            delta_w = max(opts.regularization_floor, delta_last / 3.0)
        else:
            delta_w *= 10.0
        if delta_w > opts.regularization_max:
            return None
