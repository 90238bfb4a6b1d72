"""Nearest-neighbor GP approximation for large N.

Each prediction conditions only on the ell nearest observed units in the
kernel-induced distance d((w,s),(w',s')) = sqrt((s-s')^2/alpha +
(w-w')^2/beta) on standardized coordinates. Neighbor lookup uses a balanced
2-D tree over the pre-scaled points, so Euclidean tree distance equals the
kernel-induced distance; the tree is rebuilt per (alpha, beta) candidate.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .backend import ops
from .data import Dataset, standardized_coords
from .errors import NumericalError
from .gp import TRUNCATION_THRESHOLD, AggWeights, CerfEstimate
from .gps import GpsSurface
from .kernels import Hyperparams, scale_coords

_TIE_RTOL = 1e-12


@dataclass(frozen=True)
class NeighborIndex:
    """Neighbor sets for a batch of queries under kernel-induced distance."""

    ell: int
    sets: np.ndarray
    distances: np.ndarray
    tree: cKDTree


def _build_tree(xw_scaled, xs_scaled) -> cKDTree:
    return cKDTree(np.column_stack([xw_scaled, xs_scaled]))


def _query_neighbors(tree, pts, ell):
    """Exact ell-nearest sets, ties broken by lower index."""
    n = tree.n
    k = min(ell + 1, n)
    dist, idx = tree.query(pts, k=k)
    dist = np.atleast_2d(dist)
    idx = np.atleast_2d(idx)
    take_d = dist[:, :ell].copy()
    take_i = idx[:, :ell].copy()
    if k > ell:
        # boundary ties: the excluded (ell+1)-th point is as close as the
        # ell-th, so membership must be decided by index
        boundary = dist[:, ell] <= dist[:, ell - 1] * (1.0 + _TIE_RTOL)
        for row in np.flatnonzero(boundary):
            r = dist[row, ell - 1] * (1.0 + _TIE_RTOL) + 1e-300
            cand = np.asarray(tree.query_ball_point(pts[row], r), dtype=np.int64)
            d = np.linalg.norm(tree.data[cand] - pts[row], axis=1)
            order = np.lexsort((cand, d))
            take_d[row] = d[order][:ell]
            take_i[row] = cand[order][:ell]
    # deterministic within-set order: by (distance, index)
    order = np.lexsort((take_i, take_d), axis=1)
    rows = np.arange(take_i.shape[0])[:, None]
    return take_d[rows, order], take_i[rows, order].astype(np.int64)


def neighbor_sets(coords, queries, hp: Hyperparams, ell: int) -> NeighborIndex:
    """ell-nearest observed units for each query point.

    ``coords`` and ``queries`` are (w, s) pairs of arrays on the
    standardized scale. ell greater than N is clamped with a warning.
    """
    if ell < 1:
        raise ValueError("ell must be >= 1")
    xw, xs = scale_coords(coords[0], coords[1], hp)
    qw, qs = scale_coords(queries[0], queries[1], hp)
    n = xw.shape[0]
    if n == 0:
        raise ValueError("no observed points to search")
    if ell > n:
        warnings.warn(f"ell={ell} exceeds N={n}; clamped to N")
        ell = n
    tree = _build_tree(xw, xs)
    pts = np.column_stack([qw, qs])
    dist, idx = _query_neighbors(tree, pts, ell)
    return NeighborIndex(ell, idx, dist, tree)


def _trunc_renorm(weights, threshold):
    """Per-row truncate-below-threshold then renormalize to sum one."""
    t = np.where(np.abs(weights) < threshold, 0.0, weights) if threshold > 0 else weights
    sums = t.sum(axis=1)
    dead = sums == 0.0
    if np.any(dead):
        t = t.copy()
        t[dead] = weights[dead]
        sums = t.sum(axis=1)
    ok = sums != 0.0
    out = np.zeros_like(t)
    out[ok] = t[ok] / sums[ok, None]
    return out, ok


def _nn_solve_jittered(xw, xs, nbrs, qw, qs, r2, code, solver=None, **kw):
    solver = solver or ops.nn_solve
    jitter = 0.0
    while True:
        try:
            return solver(xw, xs, nbrs, qw, qs, r2, code, jitter=jitter, **kw)
        except np.linalg.LinAlgError:
            jitter = 1e-8 * (r2 + 1.0) if jitter == 0.0 else jitter * 10.0
            if jitter > 1e-4 * (r2 + 1.0):
                raise NumericalError("neighbor Gram not factorizable with jitter")


def nngp_cerf(data: Dataset, surface: GpsSurface, hp: Hyperparams, ell: int,
              w_grid, sigma2: float,
              threshold: float = TRUNCATION_THRESHOLD):
    """Exposure-response estimate from ell-point conditional normals.

    Returns (CerfEstimate, list of per-grid-point AggWeights). Per-unit
    weight vectors have at most ell nonzero entries before aggregation and
    go through the same truncation/renormalization as the exact GP. The
    posterior sd treats units as independent apart from noise shared through
    common neighbors (a cheap, conservative-leaning approximation).
    """
    if ell < 1:
        raise ValueError("ell must be >= 1")
    coords = standardized_coords(data.w, surface.s_obs)
    xw, xs = scale_coords(coords.w_std, coords.s_std, hp)
    n = data.n
    if ell > n:
        warnings.warn(f"ell={ell} exceeds N={n}; clamped to N")
        ell = n
    tree = _build_tree(xw, xs)
    code = hp.family.code
    r2 = hp.ratio2
    inv_sa = 1.0 / math.sqrt(hp.alpha)
    inv_sb = 1.0 / math.sqrt(hp.beta)
    y = data.y

    w_grid = np.asarray(w_grid, dtype=float)
    r_hat = np.empty(w_grid.shape[0])
    sd_r = np.empty(w_grid.shape[0])
    agg: list[AggWeights] = []

    for m, w in enumerate(w_grid):
        qs = coords.map_s(surface.eval_at(float(w))) * inv_sa
        qw = np.full(n, coords.map_w(float(w)) * inv_sb)
        _, nbrs = _query_neighbors(tree, np.column_stack([qw, qs]), ell)
        weights, adh = _nn_solve_jittered(xw, xs, nbrs, qw, qs, r2, code)
        raw_sum = float(weights.sum(axis=1).mean())
        renorm, _ = _trunc_renorm(weights, threshold)
        preds = np.einsum("ij,ij->i", renorm, y[nbrs])
        r_hat[m] = float(preds.mean())

        # aggregated weights: scatter-mean of the sparse per-unit vectors
        a_bar = np.zeros(n)
        np.add.at(a_bar, nbrs.ravel(), renorm.ravel())
        a_bar /= n
        agg.append(AggWeights(float(w), a_bar, raw_sum))

        # per-unit conditional variances plus shared-neighbor noise terms
        var_units = sigma2 * np.maximum(0.0, r2 + 1.0 - r2 * adh)
        svec = a_bar * n
        cross = sigma2 * (float(svec @ svec) - float(np.einsum("ij,ij->", renorm, renorm)))
        sd_r[m] = math.sqrt(max(0.0, (var_units.sum() + cross))) / n

    return CerfEstimate(w_grid, r_hat, sd_r), agg
