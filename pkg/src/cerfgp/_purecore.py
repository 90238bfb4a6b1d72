"""Pure-numpy implementation of the hot numerical kernels.

Mirrors the API of the compiled ``_fastcore`` extension; the active backend
is selected in ``backend.py``. All coordinate inputs are pre-scaled so that
the kernel argument is the plain Euclidean distance: w' = w / sqrt(beta),
s' = s / sqrt(alpha). Family codes: 0 gaussian, 1 matern12, 2 matern32,
3 matern52. Radial profiles are evaluated at unit signal variance; callers
apply gamma^2 factors.
"""

import numpy as np

SQRT3 = np.sqrt(3.0)
SQRT5 = np.sqrt(5.0)

# queries-by-data blocks are processed in chunks of roughly this many cells
_CHUNK_CELLS = 4_000_000


def _h_from_d2(d2, family):
    """Radial profile from squared distance."""
    if family == 0:
        return np.exp(-d2)
    z = np.sqrt(d2)
    if family == 1:
        return np.exp(-z)
    if family == 2:
        t = SQRT3 * z
        return (1.0 + t) * np.exp(-t)
    if family == 3:
        t = SQRT5 * z
        return (1.0 + t + t * t / 3.0) * np.exp(-t)
    raise ValueError(f"unknown kernel family code {family}")


def _d1_factor(d2, family):
    """phi(z) such that d k / d w_query = dw_unscaled / beta * phi(z)."""
    if family == 0:
        return -2.0 * np.exp(-d2)
    z = np.sqrt(d2)
    if family == 2:
        return -3.0 * np.exp(-SQRT3 * z)
    if family == 3:
        t = SQRT5 * z
        return -(5.0 / 3.0) * (1.0 + t) * np.exp(-t)
    raise ValueError(f"family code {family} has no first derivative")


def _d2zero_profile(d2, family, inv_beta):
    """Mixed second derivative at zero exposure offset, squared s-distance d2."""
    if family == 0:
        return 2.0 * inv_beta * np.exp(-d2)
    z = np.sqrt(d2)
    if family == 2:
        return 3.0 * inv_beta * np.exp(-SQRT3 * z)
    if family == 3:
        t = SQRT5 * z
        return (5.0 / 3.0) * inv_beta * (1.0 + t) * np.exp(-t)
    raise ValueError(f"family code {family} has no second derivative")


def _pair_d2(qw, qs, xw, xs):
    dw = qw[:, None] - xw[None, :]
    ds = qs[:, None] - xs[None, :]
    return dw * dw + ds * ds


def gram(w, s, family):
    """Symmetric unit-scale Gram matrix over pre-scaled points."""
    return _h_from_d2(_pair_d2(w, s, w, s), family)


def cross(qw, qs, xw, xs, family):
    """(nq, nx) cross-kernel matrix between queries and data points."""
    return _h_from_d2(_pair_d2(qw, qs, xw, xs), family)


def cross_matmul(qw, qs, xw, xs, family, mat, trans):
    """Fused product with the implicit cross matrix K (nq, nx).

    trans=False: K @ mat with mat (nx, k) -> (nq, k).
    trans=True:  K.T @ mat with mat (nq, k) -> (nx, k).
    Processes the cross matrix in row chunks to bound memory.
    """
    nq, nx = qw.shape[0], xw.shape[0]
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    if mat.shape[0] not in (nq, nx):
        raise ValueError("matrix rows do not match either point set")
    rows = max(1, _CHUNK_CELLS // max(nx, 1))
    if trans:
        out = np.zeros((nx, mat.shape[1]))
        for lo in range(0, nq, rows):
            hi = min(lo + rows, nq)
            block = cross(qw[lo:hi], qs[lo:hi], xw, xs, family)
            out += block.T @ mat[lo:hi]
        return out
    out = np.empty((nq, mat.shape[1]))
    for lo in range(0, nq, rows):
        hi = min(lo + rows, nq)
        block = cross(qw[lo:hi], qs[lo:hi], xw, xs, family)
        out[lo:hi] = block @ mat
    return out


def gram_sum(w, s, family):
    """Sum of all entries of gram(w, s), diagonal included."""
    n = w.shape[0]
    rows = max(1, _CHUNK_CELLS // max(n, 1))
    total = 0.0
    for lo in range(0, n, rows):
        hi = min(lo + rows, n)
        total += float(np.sum(cross(w[lo:hi], s[lo:hi], w, s, family)))
    return total


def d2zero_gram_sum(s, family, inv_beta):
    """Sum over all pairs of the mixed second derivative at equal exposures."""
    n = s.shape[0]
    zeros = np.zeros(1)
    rows = max(1, _CHUNK_CELLS // max(n, 1))
    total = 0.0
    for lo in range(0, n, rows):
        hi = min(lo + rows, n)
        ds = s[lo:hi, None] - s[None, :]
        total += float(np.sum(_d2zero_profile(ds * ds, family, inv_beta)))
    del zeros
    return total


def d1_cross(qw, qs, xw, xs, family, inv_sqrt_beta):
    """(nq, nx) matrix of d k(q, x) / d w_query at unit signal variance."""
    dw = qw[:, None] - xw[None, :]
    ds = qs[:, None] - xs[None, :]
    d2 = dw * dw + ds * ds
    return dw * inv_sqrt_beta * _d1_factor(d2, family)


def _gather_pair_gram(xw, xs, nbrs, family, r2, jitter):
    xwn = xw[nbrs]
    xsn = xs[nbrs]
    dw = xwn[:, :, None] - xwn[:, None, :]
    ds = xsn[:, :, None] - xsn[:, None, :]
    b = r2 * _h_from_d2(dw * dw + ds * ds, family)
    ell = nbrs.shape[1]
    b[:, np.arange(ell), np.arange(ell)] += 1.0 + jitter
    return b, xwn, xsn


def nn_solve(xw, xs, nbrs, qw, qs, r2, family, jitter=0.0):
    """Neighbor-conditional weights for a batch of queries.

    For query i with neighbor index row nbrs[i]: solves
    (r2 * H_nbr + (1 + jitter) I) a = r2 * h_q and returns (a, a . h_q).
    """
    nq, ell = nbrs.shape
    weights = np.empty((nq, ell))
    adh = np.empty(nq)
    chunk = max(1, _CHUNK_CELLS // max(ell * ell, 1))
    for lo in range(0, nq, chunk):
        hi = min(lo + chunk, nq)
        b, xwn, xsn = _gather_pair_gram(xw, xs, nbrs[lo:hi], family, r2, jitter)
        dwq = qw[lo:hi, None] - xwn
        dsq = qs[lo:hi, None] - xsn
        h = _h_from_d2(dwq * dwq + dsq * dsq, family)
        a = r2 * np.linalg.solve(b, h[:, :, None])[:, :, 0]
        weights[lo:hi] = a
        adh[lo:hi] = np.einsum("ij,ij->i", a, h)
    return weights, adh


def nn_solve_d1(xw, xs, nbrs, qw, qs, r2, family, inv_sqrt_beta, jitter=0.0):
    """Neighbor-conditional derivative weights for a batch of queries.

    Solves (r2 * H_nbr + (1 + jitter) I) a = r2 * c with c the
    cross-derivative vector; returns (a, a . c) used for derivative means
    and variances.
    """
    nq, ell = nbrs.shape
    weights = np.empty((nq, ell))
    quad = np.empty(nq)
    chunk = max(1, _CHUNK_CELLS // max(ell * ell, 1))
    for lo in range(0, nq, chunk):
        hi = min(lo + chunk, nq)
        b, xwn, xsn = _gather_pair_gram(xw, xs, nbrs[lo:hi], family, r2, jitter)
        dwq = qw[lo:hi, None] - xwn
        dsq = qs[lo:hi, None] - xsn
        d2 = dwq * dwq + dsq * dsq
        c = dwq * inv_sqrt_beta * _d1_factor(d2, family)
        a = r2 * np.linalg.solve(b, c[:, :, None])[:, :, 0]
        weights[lo:hi] = a
        quad[lo:hi] = np.einsum("ij,ij->i", a, c)
    return weights, quad
