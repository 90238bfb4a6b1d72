"""Generalized propensity score: p(W = w | C = c) as a normal density.

The conditional mean E(W | C) is learned by a regressor (boosted trees by
default, ridge-linear as a fast deterministic fallback); the conditional
variance is the residual variance of that fit. A fitted model is immutable
and safe for concurrent evaluation.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .boosting import BoostedTrees, RidgeLinear
from .data import Dataset
from .errors import DegenerateGpsError, StateError
from .errors import ParseError

BOOSTED = "boosted-trees"
RIDGE = "ridge-linear"

_DEGENERATE_VARIANCE = 1e-12


@dataclass(frozen=True)
class GpsConfig:
    regressor: str = BOOSTED
    rounds: int = 200
    depth: int = 3
    learning_rate: float = 0.1
    min_leaf: int = 5
    ridge_penalty: float = 1e-6


@dataclass(frozen=True)
class GpsModel:
    """Conditional-mean regressor plus homoscedastic residual variance."""

    mean_predictor: object
    residual_variance: float
    regressor_kind: str
    seed: int = 0

    def predict_mean(self, covariates):
        c = np.atleast_2d(np.asarray(covariates, dtype=float))
        return self.mean_predictor.predict(c)


@dataclass(frozen=True)
class GpsSurface:
    """Propensity values at the observed units plus an evaluator over w.

    ``s_obs[i]`` is the density at (w_i, c_i); ``eval_at`` returns the
    density of every unit at an arbitrary counterfactual exposure level.
    """

    s_obs: np.ndarray
    mhat_obs: np.ndarray
    residual_variance: float

    def __post_init__(self):
        if np.any(self.s_obs <= 0) or not np.all(np.isfinite(self.s_obs)):
            raise DegenerateGpsError("propensity values must be finite and positive")

    def eval_at(self, w):
        """Vector of densities s(w, c_i) for all units at exposure w."""
        return _normal_density(np.asarray(w, dtype=float) - self.mhat_obs,
                               self.residual_variance)


def _normal_density(delta, variance):
    return np.exp(-(delta * delta) / (2.0 * variance)) / math.sqrt(2.0 * math.pi * variance)


def fit_gps(data: Dataset, config: GpsConfig | None = None, seed: int = 0) -> GpsModel:
    """Fit the propensity model W | C on the observed data.

    Falls back to the ridge-linear regressor with a warning when there are
    too few observations for boosting. Raises DegenerateGpsError when the
    exposure is (near-)perfectly predicted, which violates overlap.
    """
    config = config or GpsConfig()
    kind = config.regressor
    if kind not in (BOOSTED, RIDGE):
        raise ValueError(f"unknown regressor kind {kind!r}")
    if kind == BOOSTED and data.n < 10:
        warnings.warn("fewer than 10 observations: falling back to ridge-linear GPS")
        kind = RIDGE

    if kind == BOOSTED:
        reg = BoostedTrees(
            rounds=config.rounds,
            max_depth=config.depth,
            learning_rate=config.learning_rate,
            min_leaf=config.min_leaf,
        ).fit(data.covariates, data.w)
    else:
        reg = RidgeLinear(penalty=config.ridge_penalty).fit(data.covariates, data.w)

    resid = data.w - reg.predict(data.covariates)
    variance = float(resid @ resid) / (data.n - 1)
    if variance < _DEGENERATE_VARIANCE:
        raise DegenerateGpsError(
            f"residual variance {variance:.3e} below {_DEGENERATE_VARIANCE:g}: "
            "exposure is perfectly predicted by covariates (no overlap)"
        )
    return GpsModel(reg, variance, kind, seed)


def eval_gps(model: GpsModel, w: float, c) -> float:
    """Density of the fitted normal GPS at exposure w for covariates c."""
    if model.residual_variance <= 0:
        raise StateError("GPS model not fitted")
    w = float(w)
    c = np.asarray(c, dtype=float)
    if not math.isfinite(w) or not np.all(np.isfinite(c)):
        raise ParseError("non-finite input to eval_gps")
    m = float(model.predict_mean(c.reshape(1, -1))[0])
    return float(_normal_density(np.array(w - m), model.residual_variance))


def gps_surface(model: GpsModel, data: Dataset, w_grid=None):
    """Propensity surface over the data, plus the grid matrix when requested.

    Mean predictions are computed once and reused for every grid row.
    Returns (surface, S) where S[m][i] = s(w_m, c_i); S is None when no grid
    is supplied.
    """
    mhat = model.predict_mean(data.covariates)
    v = model.residual_variance
    surface = GpsSurface(_normal_density(data.w - mhat, v), mhat, v)
    if w_grid is None:
        return surface, None
    w_grid = np.asarray(w_grid, dtype=float)
    if not np.all(np.isfinite(w_grid)):
        raise ParseError("non-finite grid value")
    S = _normal_density(w_grid[:, None] - mhat[None, :], v)
    return surface, S
