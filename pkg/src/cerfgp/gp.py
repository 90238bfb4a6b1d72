"""Exact (full) Gaussian-process machinery for counterfactual estimation.

All linear algebra runs at unit noise scale: with r = gamma/sigma, the Gram
system is B = r^2 H + I where H is the unit-variance kernel matrix on the
standardized (exposure, propensity) coordinates. Because the posterior mean
depends on (gamma, sigma) only through r, hyperparameter tuning never needs
the outcome noise; sigma^2 enters the posterior variance as a final factor.

Counterfactual predictions for unit i at exposure w condition on all N
observations through the kernel vector between the query point
(w, s(w, c_i)) and the observed points (w_j, s_j). The induced weight
vectors (one per unit, averaged into one weight per observation) are the
objects the covariate-balance tuning criterion is built on: weights below
the truncation threshold are zeroed and each unit's weight vector is then
renormalized to sum to one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky
from scipy.linalg.lapack import dpotri

from .backend import ops
from .data import Dataset, StandardizedCoords, standardized_coords
from .errors import (
    DatasetTooSmallError,
    IllConditionedError,
    NoSupportError,
    StateError,
)
from .gps import GpsSurface
from .kernels import Hyperparams, scale_coords

TRUNCATION_THRESHOLD = 1e-5

# exact per-unit truncation is O(N^3) per grid point; beyond this size the
# renormalized-only collapsed path is used (see cerf_estimate)
EXACT_MAX_N = 1000

_JITTER_START = 1e-8
_JITTER_MAX = 1e-4

# materialize cross-kernel blocks up to this many rows; larger systems use
# the fused matrix-free products
_MATERIALIZE_MAX_N = 3000


@dataclass
class GpFit:
    """Fitted Gram system plus cached solves.

    Treat as immutable after ``loo_sigma2`` has run; predictions and weight
    computations are pure reads.
    """

    data: Dataset
    surface: GpsSurface
    coords: StandardizedCoords
    hp: Hyperparams
    chol: np.ndarray
    jitter: float
    sigma2: float | None = None
    _xw: np.ndarray = field(default=None, repr=False)
    _xs: np.ndarray = field(default=None, repr=False)
    _v_raw: np.ndarray = field(default=None, repr=False)
    _u: np.ndarray = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.data.n

    @property
    def y_mean(self) -> float:
        return float(np.mean(self.data.y))

    def solve(self, rhs):
        """B^{-1} rhs via the stored Cholesky factor."""
        return cho_solve((self.chol, True), rhs)

    def query_scaled(self, w: float):
        """Pre-scaled query coordinates (w, s(w, c_i)) for every unit."""
        s_q = self.surface.eval_at(w)
        qs = self.coords.map_s(s_q) / math.sqrt(self.hp.alpha)
        qw = np.full(self.n, self.coords.map_w(w) / math.sqrt(self.hp.beta))
        return np.ascontiguousarray(qw), np.ascontiguousarray(qs)


@dataclass(frozen=True)
class CerfEstimate:
    """Point estimates and posterior sds of the exposure-response curve."""

    w_grid: np.ndarray
    r_hat: np.ndarray
    sd_r: np.ndarray
    scale: str = "outcome"


@dataclass(frozen=True)
class AggWeights:
    """Aggregated per-observation weights at one query exposure."""

    w: float
    a_bar: np.ndarray
    raw_sum: float


def chol_with_jitter(B):
    """Lower Cholesky factor of B, escalating diagonal jitter if needed.

    Returns (L, jitter). Raises IllConditionedError when jitter up to
    1e-4 * mean diagonal does not make the factorization succeed.
    """
    mean_diag = float(np.trace(B)) / B.shape[0]
    jitter = 0.0
    while True:
        try:
            if jitter > 0.0:
                L = cholesky(B + jitter * np.eye(B.shape[0]), lower=True)
            else:
                L = cholesky(B, lower=True)
            return L, jitter
        except np.linalg.LinAlgError:
            jitter = _JITTER_START * mean_diag if jitter == 0.0 else jitter * 10.0
            if jitter > _JITTER_MAX * mean_diag:
                cond = np.linalg.cond(B, 1) if B.shape[0] <= 2000 else math.inf
                raise IllConditionedError(
                    f"Gram factorization failed (1-norm condition ~ {cond:.3e})"
                ) from None


def fit_gp(data: Dataset, surface: GpsSurface, hp: Hyperparams,
           sigma2: float | None = None) -> GpFit:
    """Build and factor the Gram system on standardized coordinates."""
    coords = standardized_coords(data.w, surface.s_obs)
    xw, xs = scale_coords(coords.w_std, coords.s_std, hp)
    H = ops.gram(xw, xs, hp.family.code)
    B = hp.ratio2 * H
    np.fill_diagonal(B, hp.ratio2 + 1.0)
    L, jitter = chol_with_jitter(B)
    fit = GpFit(data, surface, coords, hp, L, jitter, sigma2, xw, xs)
    fit._v_raw = fit.solve(data.y)
    fit._u = fit.solve(np.ones(data.n))
    return fit


def predict_counterfactual(fit: GpFit, w: float, unit: int) -> float:
    """Raw posterior mean of unit's potential outcome at exposure w.

    This is the zero-prior-mean prediction r^2 h_q . B^{-1} y without weight
    truncation or renormalization.
    """
    if not 0 <= unit < fit.n:
        raise IndexError(f"unit index {unit} out of range for N={fit.n}")
    if not math.isfinite(w):
        raise ValueError("query exposure must be finite")
    qw, qs = fit.query_scaled(w)
    h = ops.cross(qw[unit : unit + 1], qs[unit : unit + 1], fit._xw, fit._xs,
                  fit.hp.family.code)[0]
    return float(fit.hp.ratio2 * (h @ fit._v_raw))


def _weight_matrix(fit: GpFit, w: float):
    """Raw weight matrix A with A[i, j] = weight of y_j in unit i's prediction."""
    qw, qs = fit.query_scaled(w)
    Hq = ops.cross(qw, qs, fit._xw, fit._xs, fit.hp.family.code)
    return fit.hp.ratio2 * cho_solve((fit.chol, True), Hq.T).T, Hq


def pointwise_weights(fit: GpFit, w: float, threshold: float = TRUNCATION_THRESHOLD,
                      renormalize: bool = True) -> AggWeights:
    """Aggregated observation weights at a query exposure.

    Entries below ``threshold`` in absolute value are set to exactly zero,
    each unit's weight vector is renormalized to sum to one, and the vectors
    are averaged over units. Raises NoSupportError when every weight of some
    unit truncates to zero.
    """
    A, _ = _weight_matrix(fit, w)
    raw_sum = float(A.sum(axis=1).mean())
    if threshold > 0.0:
        A = np.where(np.abs(A) < threshold, 0.0, A)
    if renormalize:
        sums = A.sum(axis=1)
        dead = np.flatnonzero(sums == 0.0)
        if dead.size:
            raise NoSupportError(
                f"all weights truncated to zero for unit {dead[0]} at w={w:g} "
                "(query outside data support)"
            )
        A = A / sums[:, None]
    a_bar = A.mean(axis=0)
    return AggWeights(float(w), a_bar, raw_sum)


def weights_for_grid(fit: GpFit, w_grid, mode: str = "auto",
                     threshold: float = TRUNCATION_THRESHOLD) -> list[AggWeights]:
    """Aggregated weights at every grid point, tolerating dead units.

    Unlike :func:`pointwise_weights` this never raises for units whose
    weights all truncate; those fall back to their untruncated weights,
    matching the estimator's behavior in :func:`cerf_estimate`.
    """
    if mode == "auto":
        mode = "exact" if fit.n <= EXACT_MAX_N else "fast"
    n = fit.n
    r2 = fit.hp.ratio2
    out = []
    for w in np.asarray(w_grid, dtype=float):
        if mode == "exact":
            A, _ = _weight_matrix(fit, float(w))
            raw_sum = float(A.sum(axis=1).mean())
            T = np.where(np.abs(A) < threshold, 0.0, A) if threshold > 0 else A
            tsums = T.sum(axis=1)
            dead = tsums == 0.0
            if np.any(dead):
                T = T.copy()
                T[dead] = A[dead]
                tsums[dead] = A[dead].sum(axis=1)
            ok = tsums != 0.0
            R = np.zeros_like(T)
            R[ok] = T[ok] / tsums[ok, None]
            a_bar = R[ok].sum(axis=0) / max(int(ok.sum()), 1)
        else:
            qw, qs = fit.query_scaled(float(w))
            Hq = ops.cross(qw, qs, fit._xw, fit._xs, fit.hp.family.code)
            s = r2 * (Hq @ fit._u)
            raw_sum = float(s.mean())
            alive = s != 0.0
            z = np.zeros(n)
            z[alive] = 1.0 / (s[alive] * max(int(alive.sum()), 1))
            a_bar = r2 * fit.solve(Hq.T @ z)
        out.append(AggWeights(float(w), a_bar, raw_sum))
    return out


def loo_sigma2(fit: GpFit) -> float:
    """Noise variance from leave-one-out residuals, stored on the fit.

    Uses the closed-form identity e_i = [B^{-1} y]_i / [B^{-1}]_ii on
    mean-centered outcomes; valid because the predictor depends on sigma
    only through gamma/sigma.
    """
    if fit.n < 3:
        raise DatasetTooSmallError("leave-one-out variance needs at least 3 units")
    inv, info = dpotri(fit.chol, lower=1)
    if info != 0:
        raise IllConditionedError("inverse from Cholesky factor failed")
    diag = np.diag(inv)
    y_c = fit.data.y - fit.y_mean
    e = fit.solve(y_c) / diag
    sigma2 = float(e @ e) / (fit.n - 1)
    fit.sigma2 = sigma2
    return sigma2


def _variance_terms(fit: GpFit, qw, qs, col_sum):
    """Unit-scale posterior variance of the grid-point average estimate."""
    r2 = fit.hp.ratio2
    n = fit.n
    qsum = ops.gram_sum(qw, qs, fit.hp.family.code)
    quad = float(col_sum @ fit.solve(col_sum))
    total = r2 * qsum + n - r2 * r2 * quad
    return max(0.0, total) / (n * n)


def cerf_estimate(fit: GpFit, w_grid, mode: str = "auto",
                  threshold: float = TRUNCATION_THRESHOLD) -> CerfEstimate:
    """Exposure-response curve estimate with pointwise posterior sds.

    mode "exact" computes per-unit truncated-and-renormalized weights at
    every grid point (O(N^3) per point); mode "fast" skips truncation and
    applies the per-unit renormalization in collapsed O(N^2) form. "auto"
    selects "exact" up to N=1000.
    """
    if fit.sigma2 is None:
        raise StateError("sigma2 not set: call loo_sigma2 first or supply it")
    w_grid = np.asarray(w_grid, dtype=float)
    if not np.all(np.isfinite(w_grid)):
        raise ValueError("non-finite grid value")
    if mode == "auto":
        mode = "exact" if fit.n <= EXACT_MAX_N else "fast"
    if mode not in ("exact", "fast"):
        raise ValueError(f"unknown mode {mode!r}")

    n = fit.n
    r2 = fit.hp.ratio2
    y = fit.data.y
    y_mean = fit.y_mean
    sigma = math.sqrt(fit.sigma2)
    r_hat = np.empty(w_grid.shape[0])
    sd_r = np.empty(w_grid.shape[0])

    for m, w in enumerate(w_grid):
        qw, qs = fit.query_scaled(float(w))
        if mode == "exact":
            A, Hq = _weight_matrix(fit, float(w))
            raw_sums = A.sum(axis=1)
            T = np.where(np.abs(A) < threshold, 0.0, A) if threshold > 0 else A
            tsums = T.sum(axis=1)
            # fully-truncated or underflowed units fall back gracefully
            use_raw = tsums == 0.0
            if np.any(use_raw):
                T = T.copy()
                T[use_raw] = A[use_raw]
                tsums[use_raw] = raw_sums[use_raw]
            ok = tsums != 0.0
            preds = np.full(n, y_mean)
            preds[ok] = (T[ok] @ y) / tsums[ok]
            r_hat[m] = float(preds.mean())
            col_sum = Hq.sum(axis=0)
        elif n <= _MATERIALIZE_MAX_N:
            Hq = ops.cross(qw, qs, fit._xw, fit._xs, fit.hp.family.code)
            pred_raw = r2 * (Hq @ fit._v_raw)
            row_sum = r2 * (Hq @ fit._u)
            ok = row_sum != 0.0
            preds = np.full(n, y_mean)
            preds[ok] = pred_raw[ok] / row_sum[ok]
            r_hat[m] = float(preds.mean())
            col_sum = Hq.sum(axis=0)
        else:
            pv = ops.cross_matmul(qw, qs, fit._xw, fit._xs, fit.hp.family.code,
                                  np.column_stack([fit._v_raw, fit._u]), False)
            pred_raw = r2 * pv[:, 0]
            row_sum = r2 * pv[:, 1]
            ok = row_sum != 0.0
            preds = np.full(n, y_mean)
            preds[ok] = pred_raw[ok] / row_sum[ok]
            r_hat[m] = float(preds.mean())
            col_sum = ops.cross_matmul(qw, qs, fit._xw, fit._xs,
                                       fit.hp.family.code,
                                       np.ones((n, 1)), True)[:, 0]
        sd_r[m] = sigma * math.sqrt(_variance_terms(fit, qw, qs, col_sum))

    return CerfEstimate(w_grid, r_hat, sd_r)
