"""Hot kernels with a compiled backend and a numpy fallback.

The compiled extension ``drlood._kernels`` is used when it imports; set
``DRLOOD_PURE_PYTHON=1`` to force the numpy fallback. ``BACKEND`` names the
active choice. Both backends are importable directly for comparison.
"""
import os

import numpy as np

from drlood import _kernels_py

try:
    if os.environ.get("DRLOOD_PURE_PYTHON"):
        raise ImportError("pure-python backend forced")
    from drlood import _kernels as _compiled
except ImportError:
    _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _kernels_py


def available_backends():
    """Mapping of backend name to kernel module, for tests and benchmarks."""
    out = {"python": _kernels_py}
    if _compiled is not None:
        out["compiled"] = _compiled
    return out


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def implicit_constraint(mu, d, sigma, epsilon):
    mu, d, sigma = _c(np.atleast_2d(mu)), _c(np.atleast_2d(d)), _c(sigma)
    return _impl.implicit_constraint(mu, d, sigma, float(epsilon))


def implicit_constraint_grad(grad_c, mu, d, epsilon):
    grad_c, mu, d = _c(np.atleast_2d(grad_c)), _c(np.atleast_2d(mu)), _c(np.atleast_2d(d))
    return _impl.implicit_constraint_grad(grad_c, mu, d, float(epsilon))


def mc_weighted_sum(mu, chol, d, epsilon, normals):
    return _impl.mc_weighted_sum(_c(mu), _c(chol), _c(d), float(epsilon), _c(normals))


def kth_distance(queries, bank, k):
    return _impl.kth_distance(_c(queries), _c(bank), int(k))
