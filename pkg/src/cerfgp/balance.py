"""GP-induced covariate balance: weighted exposure/covariate correlations.

For the aggregated weights at a query exposure, each covariate's balance
score is the weighted correlation between the exposure and that covariate
after weighted standardization of the exposure and weighted whitening of
the covariate matrix. The whitening uses the symmetric inverse square root
so scores are invariant to covariate ordering and affine maps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .errors import ZeroVarianceError

_EIG_FLOOR_FACTOR = 1e-8


@dataclass(frozen=True)
class BalanceReport:
    """Per-grid-point and overall balance scores.

    rho_rw[m, r] is the weighted correlation of covariate r with the
    exposure at grid point m; rho_w[m] averages their absolute values;
    rho_overall averages rho_w over the grid.
    """

    w_grid: np.ndarray
    rho_rw: np.ndarray
    rho_w: np.ndarray
    rho_overall: float
    covariate_names: tuple[str, ...]
    floored_points: tuple[int, ...] = field(default=())


def _point_scores(a, w, C):
    """Balance scores for one grid point; returns (rho vector, floored flag)."""
    w_bar = float(a @ w)
    var_w = float(a @ (w - w_bar) ** 2)
    if var_w <= 0.0:
        raise ZeroVarianceError("degenerate weighted exposure variance")
    w_star = (w - w_bar) / np.sqrt(var_w)

    c_bar = a @ C
    Xc = C - c_bar
    cov = Xc.T @ (a[:, None] * Xc)
    cov = 0.5 * (cov + cov.T)
    vals, vecs = np.linalg.eigh(cov)
    floor = _EIG_FLOOR_FACTOR * max(float(np.trace(cov)), 0.0) / C.shape[1]
    floor = max(floor, np.finfo(float).tiny)
    floored = bool(np.any(vals < floor))
    vals = np.maximum(vals, floor)
    inv_sqrt = (vecs / np.sqrt(vals)) @ vecs.T
    c_star = Xc @ inv_sqrt
    rho = (a * w_star) @ c_star
    return rho, floored


def covariate_balance(weights, data: Dataset, w_grid) -> BalanceReport:
    """Balance report over a grid given per-grid-point aggregated weights.

    ``weights`` is a sequence of AggWeights (or bare weight vectors), one per
    grid point, each summing to one. Raises ZeroVarianceError when all weight
    concentrates on a single exposure value at some grid point.
    """
    w_grid = np.asarray(w_grid, dtype=float)
    if len(weights) != w_grid.shape[0]:
        raise ValueError("one weight vector per grid point required")
    w = data.w
    C = data.covariates
    m_count = w_grid.shape[0]
    rho_rw = np.empty((m_count, data.p))
    floored = []
    for m in range(m_count):
        a = getattr(weights[m], "a_bar", weights[m])
        a = np.asarray(a, dtype=float)
        if abs(float(a.sum()) - 1.0) > 1e-8:
            raise ValueError(f"weights at grid point {m} do not sum to one")
        try:
            rho_rw[m], fl = _point_scores(a, w, C)
        except ZeroVarianceError as exc:
            raise ZeroVarianceError(f"{exc} at grid point {m} (w={w_grid[m]:g})") from None
        if fl:
            floored.append(m)
    if floored:
        import warnings

        warnings.warn(
            f"covariate covariance nearly singular at {len(floored)} grid point(s); "
            "eigenvalues floored"
        )
    rho_w = np.abs(rho_rw).mean(axis=1)
    return BalanceReport(
        w_grid, rho_rw, rho_w, float(rho_w.mean()), data.covariate_names, tuple(floored)
    )
