"""Change-point detection through one-sided derivatives of the response curve.

The derivative of the GP is itself a GP, so the posterior of dR/dw at a
candidate exposure w0 is available in closed form. Conditioning the
derivative process once on the units with w <= w0 and once on the units with
w > w0 gives left and right derivative posteriors; their difference
Delta(w0) = left - right is approximately zero where the curve is smooth and
jumps at kinks. Candidate intervals are maximal grid runs whose credible
interval for Delta excludes zero; within each, the change point is the
maximizer of |E Delta|. Reported signs follow the first-derivative jump:
positive when the slope increases from left to right.

Derivatives are taken with respect to the exposure coordinate holding the
propensity coordinate fixed; an optional chain-rule mode also propagates the
exposure-dependence of the propensity surface.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.stats import norm

from . import _purecore
from .backend import ops
from .data import Dataset, standardized_coords
from .errors import (
    GridTooSmallError,
    InsufficientSideDataError,
    NonDifferentiableKernelError,
)
from .gp import chol_with_jitter
from .gps import GpsSurface
from .kernels import Hyperparams
from .nngp import _build_tree, _nn_solve_jittered, _query_neighbors

DEFAULT_ELL_MIN = 10


@dataclass(frozen=True)
class DerivativeEstimate:
    """One-sided derivative posteriors of the curve at a single exposure."""

    w0: float
    left_mean: float
    right_mean: float
    left_var: float
    right_var: float
    n_left: int
    n_right: int


@dataclass(frozen=True)
class DetectedPoint:
    w: float
    sign: int
    delta_mean: float
    interval: tuple[float, float]


@dataclass(frozen=True)
class ChangePointReport:
    grid: np.ndarray
    delta_mean: np.ndarray
    delta_sd: np.ndarray
    usable: np.ndarray
    flagged: np.ndarray
    intervals: tuple[tuple[int, int], ...]
    points: tuple[DetectedPoint, ...]
    level: float


class _Context:
    """Shared precomputation for derivative estimation."""

    def __init__(self, data: Dataset, surface: GpsSurface, hp: Hyperparams,
                 sigma2: float, chain_rule: bool = False):
        if not hp.family.differentiable:
            raise NonDifferentiableKernelError(
                "change-point analysis needs a differentiable kernel (not matern12)"
            )
        self.data = data
        self.surface = surface
        self.hp = hp
        self.sigma2 = float(sigma2)
        self.chain_rule = bool(chain_rule)
        self.coords = standardized_coords(data.w, surface.s_obs)
        self.inv_sa = 1.0 / math.sqrt(hp.alpha)
        self.inv_sb = 1.0 / math.sqrt(hp.beta)
        self.xw = np.ascontiguousarray(self.coords.w_std * self.inv_sb)
        self.xs = np.ascontiguousarray(self.coords.s_std * self.inv_sa)
        self.y_c = data.y - float(np.mean(data.y))
        self.code = hp.family.code
        self.r2 = hp.ratio2
        self.w_sd = self.coords.w_sd

    def queries(self, w0: float):
        """Pre-scaled query coordinates for all N units at w0."""
        s_raw = self.surface.eval_at(w0)
        qs = self.coords.map_s(s_raw) * self.inv_sa
        qw = np.full(self.data.n, self.coords.map_w(w0) * self.inv_sb)
        return np.ascontiguousarray(qw), np.ascontiguousarray(qs), s_raw

    def d1_matrix(self, qw, qs, s_raw, xw_side, xs_side):
        """Cross-derivative matrix d k(q_i, x_j) / d w_raw at unit variance."""
        d1 = ops.d1_cross(qw, qs, xw_side, xs_side, self.code, self.inv_sb)
        d1 = d1 / self.w_sd
        if self.chain_rule:
            # propagate d s_hat / d w = -((w - m_hat)/v) * s_hat through the
            # propensity coordinate of the query
            v = self.surface.residual_variance
            w0 = qw[0] / self.inv_sb * self.coords.w_sd + self.coords.w_mean
            ds_dw = -((w0 - self.surface.mhat_obs) / v) * s_raw
            g = ds_dw / self.coords.s_sd  # d s_std / d w_raw
            dsq = qs[:, None] - xs_side[None, :]
            dwq = qw[:, None] - xw_side[None, :]
            phi = _purecore._d1_factor(dwq * dwq + dsq * dsq, self.code)
            d1 = d1 + (g[:, None]) * (dsq * self.inv_sa) * phi
        return d1

    def prior_d2_sum(self, qw, qs, s_raw):
        """Sum over query pairs of the derivative-process prior covariance."""
        if not self.chain_rule:
            return ops.d2zero_gram_sum(qs, self.code, 1.0 / self.hp.beta) / self.w_sd**2
        # same-exposure queries: the w-w block plus the s-s block scaled by
        # the propensity responses; the mixed block vanishes at zero offset
        v = self.surface.residual_variance
        w0 = qw[0] / self.inv_sb * self.coords.w_sd + self.coords.w_mean
        g = (-((w0 - self.surface.mhat_obs) / v) * s_raw) / self.coords.s_sd
        ds = qs[:, None] - qs[None, :]
        d2 = ds * ds
        ww = _purecore._d2zero_profile(d2, self.code, 1.0 / self.hp.beta) / self.w_sd**2
        ss = _d2_along_s(ds, d2, self.code, self.hp.alpha)
        return float(np.sum(ww + g[:, None] * g[None, :] * ss))


def _d2_along_s(ds_scaled, d2, code, alpha):
    """Mixed second derivative along the propensity coordinate."""
    # same radial forms as the exposure derivative, with alpha in place of beta
    ds_unscaled2 = ds_scaled * ds_scaled * alpha  # (delta s_std)^2
    if code == 0:
        e = np.exp(-d2)
        return e * (2.0 / alpha - 4.0 * ds_unscaled2 / alpha**2)
    z = np.sqrt(d2)
    if code == 2:
        e = np.exp(-_purecore.SQRT3 * z)
        with np.errstate(invalid="ignore", divide="ignore"):
            term = np.where(z > 0, 3.0 * _purecore.SQRT3 * ds_unscaled2 / (alpha**2 * z), 0.0)
        return e * (3.0 / alpha - term)
    t = _purecore.SQRT5 * np.sqrt(d2)
    e = np.exp(-t)
    return (5.0 / 3.0) * e * ((1.0 + t) / alpha - 5.0 * ds_unscaled2 / alpha**2)


def _side_mask(w, w0, side):
    if side == "left":
        return w <= w0
    if side == "right":
        return w > w0
    raise ValueError(f"side must be 'left' or 'right', got {side!r}")


def _full_side_posterior(ctx: _Context, w0, idx, chol=None):
    """Posterior (mean, var) of dR/dw conditioned on the units in idx."""
    n = ctx.data.n
    xw_s = np.ascontiguousarray(ctx.xw[idx])
    xs_s = np.ascontiguousarray(ctx.xs[idx])
    if chol is None:
        B = ctx.r2 * ops.gram(xw_s, xs_s, ctx.code)
        np.fill_diagonal(B, ctx.r2 + 1.0)
        chol, _ = chol_with_jitter(B)
    qw, qs, s_raw = ctx.queries(w0)
    D1 = ctx.d1_matrix(qw, qs, s_raw, xw_s, xs_s)
    cbar = D1.mean(axis=0)
    v_s = cho_solve((chol, True), ctx.y_c[idx])
    mean = float(ctx.r2 * (cbar @ v_s))
    d2sum = ctx.prior_d2_sum(qw, qs, s_raw)
    csum = D1.sum(axis=0)
    quad = float(csum @ cho_solve((chol, True), csum))
    var = ctx.sigma2 * (ctx.r2 * d2sum - ctx.r2 * ctx.r2 * quad) / (n * n)
    return mean, max(0.0, var)


def _nngp_side_posterior(ctx: _Context, w0, idx, ell):
    """nnGP version: each unit's derivative conditions on its side neighbors."""
    xw_s = np.ascontiguousarray(ctx.xw[idx])
    xs_s = np.ascontiguousarray(ctx.xs[idx])
    n = ctx.data.n
    n_side = idx.shape[0]
    ell_eff = min(ell, n_side)
    tree = _build_tree(xw_s, xs_s)
    qw, qs, _ = ctx.queries(w0)
    _, nbrs = _query_neighbors(tree, np.column_stack([qw, qs]), ell_eff)
    if ctx.chain_rule:
        raise NotImplementedError("chain-rule mode is only available for the full GP")
    dW, quad = _nn_solve_jittered(xw_s, xs_s, nbrs, qw, qs, ctx.r2, ctx.code,
                                  solver=ops.nn_solve_d1, inv_sqrt_beta=ctx.inv_sb)
    dW = dW / ctx.w_sd
    quad = quad / ctx.w_sd**2
    y_side = ctx.y_c[idx]
    means = np.einsum("ij,ij->i", dW, y_side[nbrs])
    mean = float(means.mean())
    d2self = _purecore._d2zero_profile(np.zeros(1), ctx.code, 1.0 / ctx.hp.beta)[0]
    d2self /= ctx.w_sd**2
    var_units = ctx.sigma2 * np.maximum(0.0, ctx.r2 * d2self - ctx.r2 * quad)
    svec = np.zeros(n_side)
    np.add.at(svec, nbrs.ravel(), dW.ravel())
    cross = ctx.sigma2 * (float(svec @ svec) - float(np.einsum("ij,ij->", dW, dW)))
    var = (var_units.sum() + cross) / (n * n)
    return mean, max(0.0, var)


def one_sided_derivative(data: Dataset, surface: GpsSurface, hp: Hyperparams,
                         sigma2: float, w0: float, side: str,
                         ell_min: int = DEFAULT_ELL_MIN, engine: str = "full-gp",
                         ell: int = 25, chain_rule: bool = False):
    """Posterior (mean, variance) of one side's derivative of R at w0.

    Conditions the derivative process only on the units with w <= w0 (left)
    or w > w0 (right); the posterior mean averages the per-unit derivative
    predictions over all N units. No observation noise is added to the
    derivative (noise attaches to outcomes, not to slopes).
    """
    ctx = _Context(data, surface, hp, sigma2, chain_rule)
    mask = _side_mask(data.w, w0, side)
    idx = np.flatnonzero(mask)
    if idx.size < ell_min:
        raise InsufficientSideDataError(
            f"{side} side of w0={w0:g} has {idx.size} units (< {ell_min})"
        )
    if engine == "nngp":
        return _nngp_side_posterior(ctx, w0, idx, ell)
    return _full_side_posterior(ctx, w0, idx)


class _GrowingCholesky:
    """Cholesky factor of a Gram system that grows by appended points."""

    def __init__(self, ctx: _Context, capacity):
        self.ctx = ctx
        self.L = np.zeros((capacity, capacity))
        self.idx = np.empty(capacity, dtype=np.int64)
        self.k = 0

    def append(self, new_idx):
        if new_idx.size == 0:
            return
        ctx = self.ctx
        k, m = self.k, new_idx.size
        xw_n = np.ascontiguousarray(ctx.xw[new_idx])
        xs_n = np.ascontiguousarray(ctx.xs[new_idx])
        B22 = ctx.r2 * ops.gram(xw_n, xs_n, ctx.code)
        np.fill_diagonal(B22, ctx.r2 + 1.0)
        if k:
            old = self.idx[:k]
            B21 = ctx.r2 * ops.cross(xw_n, xs_n,
                                     np.ascontiguousarray(ctx.xw[old]),
                                     np.ascontiguousarray(ctx.xs[old]), ctx.code)
            L21 = solve_triangular(self.L[:k, :k], B21.T, lower=True).T
            self.L[k:k + m, :k] = L21
            B22 = B22 - L21 @ L21.T
        L22, _ = chol_with_jitter(B22)
        self.L[k:k + m, k:k + m] = L22
        self.idx[k:k + m] = new_idx
        self.k = k + m

    def posterior(self, w0):
        return _full_side_posterior(self.ctx, w0, self.idx[: self.k],
                                    chol=self.L[: self.k, : self.k])


def detect_change_points(data: Dataset, surface: GpsSurface, hp: Hyperparams,
                         sigma2: float, grid, level: float = 0.95,
                         ell_min: int = DEFAULT_ELL_MIN, engine: str = "full-gp",
                         ell: int = 25, chain_rule: bool = False) -> ChangePointReport:
    """Three-step change-point detection over a sorted exposure grid.

    Delta(w) = left minus right derivative posterior; the two sides condition
    on disjoint subsets and are treated as independent, so their variances
    add. A grid point is usable when both sides have at least ell_min units;
    unusable points are dropped from the Delta curve with a warning.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.shape[0] < 3:
        raise GridTooSmallError("need a grid of at least 3 points")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be sorted strictly ascending")
    if not 0.0 < level < 1.0:
        raise ValueError("credible level must be in (0, 1)")

    ctx = _Context(data, surface, hp, sigma2, chain_rule)
    w = data.w
    n = data.n
    order_asc = np.argsort(w, kind="stable")
    w_sorted = w[order_asc]
    m_count = grid.shape[0]
    n_left = np.searchsorted(w_sorted, grid, side="right")
    n_right = n - n_left
    usable = (n_left >= ell_min) & (n_right >= ell_min)
    if int(usable.sum()) < 3:
        raise GridTooSmallError(
            f"only {int(usable.sum())} grid points have >= {ell_min} units per side"
        )
    if not np.all(usable):
        warnings.warn(
            f"{int((~usable).sum())} grid point(s) dropped: "
            f"fewer than {ell_min} units on one side"
        )

    left_mean = np.full(m_count, np.nan)
    left_var = np.full(m_count, np.nan)
    right_mean = np.full(m_count, np.nan)
    right_var = np.full(m_count, np.nan)

    if engine == "nngp":
        for m in np.flatnonzero(usable):
            lidx = order_asc[: n_left[m]]
            ridx = order_asc[n_left[m]:]
            left_mean[m], left_var[m] = _nngp_side_posterior(ctx, grid[m], lidx, ell)
            right_mean[m], right_var[m] = _nngp_side_posterior(ctx, grid[m], ridx, ell)
    else:
        # left conditioning sets grow with w0, right sets grow as w0 falls;
        # both scans extend one Cholesky factor instead of refactoring
        left = _GrowingCholesky(ctx, n)
        for m in range(m_count):
            prev = left.k
            left.append(order_asc[prev: n_left[m]])
            if usable[m]:
                left_mean[m], left_var[m] = left.posterior(float(grid[m]))
        right = _GrowingCholesky(ctx, n)
        order_desc = order_asc[::-1]
        for m in range(m_count - 1, -1, -1):
            prev = right.k
            right.append(order_desc[prev: n_right[m]])
            if usable[m]:
                right_mean[m], right_var[m] = right.posterior(float(grid[m]))

    delta_mean = left_mean - right_mean
    delta_sd = np.sqrt(left_var + right_var)
    z = float(norm.ppf(0.5 + level / 2.0))
    with np.errstate(invalid="ignore"):
        flagged = usable & (np.abs(delta_mean) > z * delta_sd)

    intervals = []
    points = []
    usable_idx = np.flatnonzero(usable)
    run: list[int] = []
    for pos, m in enumerate(usable_idx):
        if flagged[m]:
            run.append(m)
        if run and (not flagged[m] or pos == usable_idx.size - 1):
            lo, hi = run[0], run[-1]
            intervals.append((int(lo), int(hi)))
            inside = np.arange(lo, hi + 1)
            inside = inside[flagged[inside]]
            best = inside[int(np.argmax(np.abs(delta_mean[inside])))]
            sign = -1 if delta_mean[best] > 0 else 1
            points.append(
                DetectedPoint(float(grid[best]), sign, float(delta_mean[best]),
                              (float(grid[lo]), float(grid[hi])))
            )
            run = []

    return ChangePointReport(
        grid, delta_mean, delta_sd, usable, flagged,
        tuple(intervals), tuple(points), level,
    )
