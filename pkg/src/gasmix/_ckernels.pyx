# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-edge kernels.  Mirrors ``_pykernels`` exactly."""
import numpy as np

from libc.math cimport fabs, sqrt


def edge_flux(const double[:, ::1] rho1, const double[:, ::1] rho2,
              const double[:, ::1] s1, const double[:, ::1] s2,
              const Py_ssize_t[::1] tail, const Py_ssize_t[::1] head,
              const signed char[::1] tail_supply,
              const double[:, ::1] mu_in, const double[:, ::1] mu_out,
              const double[::1] lk, double sig1sq, double sig2sq):
    cdef Py_ssize_t B = rho1.shape[0], E = tail.shape[0]
    cdef Py_ssize_t b, k, h, t
    cdef double rho_out, p_in, p_out, d, q
    phi_arr = np.empty((B, E))
    cdef double[:, ::1] phi = phi_arr
    for b in range(B):
        for k in range(E):
            h = head[k]
            t = tail[k]
            rho_out = mu_out[b, k] * (rho1[b, h] + rho2[b, h])
            if not rho_out > 0.0:
                raise FloatingPointError(f"nonpositive outlet density on edge index {k}")
            p_out = mu_out[b, k] * (sig1sq * rho1[b, h] + sig2sq * rho2[b, h])
            if tail_supply[k]:
                p_in = mu_in[b, k] * (sig1sq * s1[b, t] + sig2sq * s2[b, t])
            else:
                p_in = mu_in[b, k] * (sig1sq * rho1[b, t] + sig2sq * rho2[b, t])
            d = p_in - p_out
            q = sqrt(fabs(d) * rho_out / lk[k])
            phi[b, k] = q if d >= 0.0 else -q
    return phi_arr


def node_balance(const double[:, ::1] rho1, const double[:, ::1] rho2,
                 const double[:, ::1] a1, const double[:, ::1] a2,
                 const double[:, ::1] phi, const double[:, ::1] w,
                 const Py_ssize_t[::1] tail, const Py_ssize_t[::1] head,
                 const signed char[::1] tail_supply):
    cdef Py_ssize_t B = rho1.shape[0], nw = rho1.shape[1], E = tail.shape[0]
    cdef Py_ssize_t b, j, k, h, t
    cdef double tot, e1, e2, f
    g1_arr = np.empty((B, nw))
    g2_arr = np.empty((B, nw))
    eta1_arr = np.empty(nw)
    eta2_arr = np.empty(nw)
    cdef double[:, ::1] g1 = g1_arr
    cdef double[:, ::1] g2 = g2_arr
    cdef double[::1] eta1 = eta1_arr
    cdef double[::1] eta2 = eta2_arr
    for b in range(B):
        for j in range(nw):
            tot = rho1[b, j] + rho2[b, j]
            if not tot > 0.0:
                raise FloatingPointError(f"nonpositive total density at withdrawal index {j}")
            eta1[j] = rho1[b, j] / tot
            eta2[j] = rho2[b, j] / tot
            g1[b, j] = -eta1[j] * w[b, j]
            g2[b, j] = -eta2[j] * w[b, j]
        for k in range(E):
            h = head[k]
            t = tail[k]
            f = phi[b, k]
            if tail_supply[k]:
                e1 = a1[b, t]
                e2 = a2[b, t]
            else:
                e1 = eta1[t]
                e2 = eta2[t]
                g1[b, t] -= e1 * f
                g2[b, t] -= e2 * f
            g1[b, h] += e1 * f
            g2[b, h] += e2 * f
    return g1_arr, g2_arr


def momentum_residual(const double[:, ::1] rho1, const double[:, ::1] rho2,
                      const double[:, ::1] s1, const double[:, ::1] s2,
                      const double[:, ::1] phi,
                      const Py_ssize_t[::1] tail, const Py_ssize_t[::1] head,
                      const signed char[::1] tail_supply,
                      const double[:, ::1] mu_in, const double[:, ::1] mu_out,
                      const double[::1] lk, double sig1sq, double sig2sq):
    cdef Py_ssize_t B = rho1.shape[0], E = tail.shape[0]
    cdef Py_ssize_t b, k, h, t
    cdef double rho_out, p_in, p_out, f
    res_arr = np.empty((B, E))
    cdef double[:, ::1] res = res_arr
    for b in range(B):
        for k in range(E):
            h = head[k]
            t = tail[k]
            rho_out = mu_out[b, k] * (rho1[b, h] + rho2[b, h])
            if not rho_out > 0.0:
                raise FloatingPointError(f"nonpositive outlet density on edge index {k}")
            p_out = mu_out[b, k] * (sig1sq * rho1[b, h] + sig2sq * rho2[b, h])
            if tail_supply[k]:
                p_in = mu_in[b, k] * (sig1sq * s1[b, t] + sig2sq * s2[b, t])
            else:
                p_in = mu_in[b, k] * (sig1sq * rho1[b, t] + sig2sq * rho2[b, t])
            f = phi[b, k]
            res[b, k] = (p_out - p_in) + lk[k] * f * fabs(f) / rho_out
    return res_arr
