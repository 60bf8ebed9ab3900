"""Pure numpy implementations of the hot kernels.

Each function mirrors one in ``_kernels.pyx`` with the same signature and
the same arithmetic order where that is practical. This module is the
fallback when the compiled extension is unavailable, and the reference the
compiled one is tested against.
"""
import numpy as np

# Bounds the (chunk, bank, dim) difference tensor in kth_distance.
_MAX_CHUNK_ELEMENTS = 1 << 21


def implicit_constraint(mu, d, sigma, epsilon):
    """Row-wise ``c = mu - eps * (sigma @ d + (mu . d) * mu)``."""
    sigma_d = d @ sigma.T
    dot = np.einsum("ij,ij->i", mu, d)
    return mu - epsilon * (sigma_d + dot[:, None] * mu)


def implicit_constraint_grad(grad_c, mu, d, epsilon):
    """Pull ``grad_c`` back through the constraint to ``mu``.

    The Jacobian is ``I - eps * (mu d^T + (mu . d) I)``, so the
    vector-Jacobian product is ``g - eps * ((mu . g) d + (mu . d) g)``.
    """
    dot_md = np.einsum("ij,ij->i", mu, d)
    dot_mg = np.einsum("ij,ij->i", mu, grad_c)
    return grad_c - epsilon * (dot_mg[:, None] * d + dot_md[:, None] * grad_c)


def mc_weighted_sum(mu, chol, d, epsilon, normals):
    """Sum over rows of ``(1 - eps * z.d) * z`` with ``z = mu + chol @ e``."""
    z = mu + normals @ chol.T
    w = 1.0 - epsilon * (z @ d)
    return w @ z


def kth_distance(queries, bank, k):
    """Euclidean distance from each query to its k-th nearest bank row."""
    n, p = queries.shape
    m = bank.shape[0]
    out = np.empty(n)
    chunk = max(1, _MAX_CHUNK_ELEMENTS // max(1, m * p))
    for start in range(0, n, chunk):
        q = queries[start:start + chunk]
        diff = q[:, None, :] - bank[None, :, :]
        sq = np.einsum("ijk,ijk->ij", diff, diff)
        kth = np.partition(sq, k - 1, axis=1)[:, k - 1]
        out[start:start + chunk] = np.sqrt(kth)
    return out
