"""Backend selection for the hot per-edge kernels.

The compiled extension is used when it was built; otherwise the numpy
fallback is loaded.  Set ``GASMIX_PURE_PYTHON=1`` to force the fallback.

All kernels take batched 2-D float arrays of shape ``(B, n)`` (one row per
time sample) and the flat index arrays of :class:`gasmix.network.EdgeArrays`.
"""
import os

import numpy as np

from . import _pykernels

if os.environ.get("GASMIX_PURE_PYTHON"):
    _compiled = None
else:
    try:
        from . import _ckernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _pykernels


def backends():
    """Available backend modules keyed by name."""
    out = {"python": _pykernels}
    if _compiled is not None:
        out["compiled"] = _compiled
    return out


def _f2(a):
    return np.ascontiguousarray(np.atleast_2d(a), dtype=float)


def _args(arrays):
    return arrays.tail, arrays.head, arrays.tail_supply


def edge_flux(arrays, rho1, rho2, s1, s2, mu_in, mu_out, sig1sq, sig2sq, impl=None):
    impl = impl or _impl
    return impl.edge_flux(
        _f2(rho1), _f2(rho2), _f2(s1), _f2(s2), *_args(arrays),
        _f2(mu_in), _f2(mu_out), arrays.lk, float(sig1sq), float(sig2sq),
    )


def node_balance(arrays, rho1, rho2, a1, a2, phi, w, impl=None):
    impl = impl or _impl
    return impl.node_balance(
        _f2(rho1), _f2(rho2), _f2(a1), _f2(a2), _f2(phi), _f2(w), *_args(arrays)
    )


def momentum_residual(arrays, rho1, rho2, s1, s2, phi, mu_in, mu_out, sig1sq, sig2sq, impl=None):
    impl = impl or _impl
    return impl.momentum_residual(
        _f2(rho1), _f2(rho2), _f2(s1), _f2(s2), _f2(phi), *_args(arrays),
        _f2(mu_in), _f2(mu_out), arrays.lk, float(sig1sq), float(sig2sq),
    )
