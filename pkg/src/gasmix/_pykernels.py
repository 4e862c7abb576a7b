"""Pure numpy implementation of the per-edge kernels (fallback backend)."""
import numpy as np


def _tail_values(wd, sup_vals, tail, sup):
    out = np.empty((wd.shape[0], tail.shape[0]))
    out[:, sup] = sup_vals[:, tail[sup]]
    out[:, ~sup] = wd[:, tail[~sup]]
    return out


def _outlet(rho1, rho2, head, mu_out, sig1sq, sig2sq):
    rho_out = mu_out * (rho1[:, head] + rho2[:, head])
    if not np.all(rho_out > 0):
        k = int(np.argwhere(~(rho_out > 0))[0, 1])
        raise FloatingPointError(f"nonpositive outlet density on edge index {k}")
    return rho_out, mu_out * (sig1sq * rho1[:, head] + sig2sq * rho2[:, head])


def _pressure_drop(rho1, rho2, s1, s2, tail, head, tail_supply, mu_in, mu_out, sig1sq, sig2sq):
    sup = tail_supply.astype(bool)
    rho_out, p_out = _outlet(rho1, rho2, head, mu_out, sig1sq, sig2sq)
    p_in = mu_in * _tail_values(sig1sq * rho1 + sig2sq * rho2, sig1sq * s1 + sig2sq * s2, tail, sup)
    return p_in - p_out, rho_out


def edge_flux(rho1, rho2, s1, s2, tail, head, tail_supply, mu_in, mu_out, lk, sig1sq, sig2sq):
    d, rho_out = _pressure_drop(rho1, rho2, s1, s2, tail, head, tail_supply, mu_in, mu_out, sig1sq, sig2sq)
    q = np.sqrt(np.abs(d) * rho_out / lk)
    return np.where(d >= 0, q, -q)


def node_balance(rho1, rho2, a1, a2, phi, w, tail, head, tail_supply):
    tot = rho1 + rho2
    if not np.all(tot > 0):
        j = int(np.argwhere(~(tot > 0))[0, 1])
        raise FloatingPointError(f"nonpositive total density at withdrawal index {j}")
    sup = tail_supply.astype(bool)
    internal = np.flatnonzero(~sup)
    idx = np.concatenate([tail[internal], head])
    out = []
    for rho, a in ((rho1, a1), (rho2, a2)):
        eta = rho / tot
        carried = _tail_values(eta, a, tail, sup) * phi
        g = -eta * w
        vals = np.concatenate([-carried[:, internal], carried], axis=1)
        for b in range(g.shape[0]):
            np.add.at(g[b], idx, vals[b])
        out.append(g)
    return out[0], out[1]


def momentum_residual(rho1, rho2, s1, s2, phi, tail, head, tail_supply, mu_in, mu_out, lk, sig1sq, sig2sq):
    d, rho_out = _pressure_drop(rho1, rho2, s1, s2, tail, head, tail_supply, mu_in, mu_out, sig1sq, sig2sq)
    return lk * phi * np.abs(phi) / rho_out - d
