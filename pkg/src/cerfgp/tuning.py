"""Hyperparameter selection by minimizing the overall covariate balance score.

Candidates over (kernel family, alpha, beta, gamma/sigma) are scored by the
mean absolute weighted exposure/covariate correlation their induced weights
produce across the analysis grid; the first minimizer in deterministic
lattice order (families, then alpha, beta, ratio ascending) wins. The tuner
only ever sees exposures, covariates and the propensity surface: outcomes
are never passed in, which keeps the design stage separated from the
analysis stage.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve

from .backend import ops
from .balance import _point_scores
from .data import Dataset, exposure_grid, standardized_coords
from .errors import TuningFailedError, ZeroVarianceError
from .gp import TRUNCATION_THRESHOLD, chol_with_jitter
from .gps import GpsSurface
from .kernels import ALL_FAMILIES, Hyperparams, KernelFamily
from .nngp import _build_tree, _nn_solve_jittered, _query_neighbors, _trunc_renorm

DEFAULT_ALPHAS = (0.03, 0.1, 0.32, 1.0, 3.2, 10.0, 32.0)
DEFAULT_BETAS = DEFAULT_ALPHAS
DEFAULT_RATIOS = (0.1, 0.32, 1.0, 3.2, 10.0)

# exact truncated weights are O(N^3) per candidate grid point; larger
# problems use the collapsed renormalized-only weights
EXACT_TUNE_MAX_N = 400

_TIE_TOL = 1e-12


@dataclass(frozen=True)
class TuneGrid:
    """Candidate lattice plus the balance evaluation grid."""

    alphas: tuple[float, ...] = DEFAULT_ALPHAS
    betas: tuple[float, ...] = DEFAULT_BETAS
    ratios: tuple[float, ...] = DEFAULT_RATIOS
    families: tuple[KernelFamily, ...] = ALL_FAMILIES
    w_grid: np.ndarray = None
    engine: str = "full-gp"
    ell: int = 25

    def __post_init__(self):
        if self.w_grid is None:
            raise ValueError("TuneGrid needs an evaluation grid; see TuneGrid.default")
        for name in ("alphas", "betas", "ratios"):
            vals = getattr(self, name)
            if not vals or any(v <= 0 or not math.isfinite(v) for v in vals):
                raise ValueError(f"{name} must be positive finite and non-empty")
        if not self.families:
            raise ValueError("need at least one kernel family")
        object.__setattr__(
            self,
            "families",
            tuple(f if isinstance(f, KernelFamily) else KernelFamily.from_tag(f)
                  for f in self.families),
        )
        if self.engine not in ("full-gp", "nngp"):
            raise ValueError(f"unknown tuning engine {self.engine!r}")
        if self.ell < 1:
            raise ValueError("ell must be >= 1")

    @classmethod
    def default(cls, w, m=100, **kw):
        """Lattice with the default log-spaced scales and a percentile grid."""
        return cls(w_grid=exposure_grid(w, m), **kw)

    def candidates(self):
        for family in self.families:
            for alpha in self.alphas:
                for beta in self.betas:
                    for ratio in self.ratios:
                        yield Hyperparams(family, alpha, beta, ratio)


@dataclass(frozen=True)
class TuneResult:
    best: Hyperparams
    best_rho: float
    table: tuple[tuple[Hyperparams, float], ...]
    ties: tuple[Hyperparams, ...] = field(default=())


@dataclass(frozen=True)
class _Design:
    """Outcome-free view of the data used for candidate evaluation."""

    w: np.ndarray
    C: np.ndarray
    w_std: np.ndarray
    s_std: np.ndarray
    qw_std: np.ndarray
    qs_std: np.ndarray
    w_grid: np.ndarray


def _make_design(data: Dataset, surface: GpsSurface, w_grid) -> _Design:
    coords = standardized_coords(data.w, surface.s_obs)
    w_grid = np.asarray(w_grid, dtype=float)
    qs = np.stack([coords.map_s(surface.eval_at(float(w))) for w in w_grid])
    return _Design(
        data.w, data.covariates, coords.w_std, coords.s_std,
        coords.map_w(w_grid), qs, w_grid,
    )


def _rho_of_point(a_bar, design):
    try:
        rho, _ = _point_scores(a_bar, design.w, design.C)
    except ZeroVarianceError:
        return None
    return float(np.abs(rho).mean())


def _eval_group(design: _Design, family: KernelFamily, alpha, beta, ratios,
                engine, ell, threshold=TRUNCATION_THRESHOLD):
    """Balance score per ratio for one (family, alpha, beta) group."""
    inv_sa = 1.0 / math.sqrt(alpha)
    inv_sb = 1.0 / math.sqrt(beta)
    xw = np.ascontiguousarray(design.w_std * inv_sb)
    xs = np.ascontiguousarray(design.s_std * inv_sa)
    n = xw.shape[0]
    code = family.code
    m_count = design.w_grid.shape[0]
    sums = [0.0] * len(ratios)
    counts = [0] * len(ratios)

    if engine == "nngp":
        tree = _build_tree(xw, xs)
        ell_eff = min(ell, n)
        for m in range(m_count):
            qw = np.full(n, design.qw_std[m] * inv_sb)
            qs = np.ascontiguousarray(design.qs_std[m] * inv_sa)
            _, nbrs = _query_neighbors(tree, np.column_stack([qw, qs]), ell_eff)
            for k, ratio in enumerate(ratios):
                weights, _ = _nn_solve_jittered(xw, xs, nbrs, qw, qs,
                                                ratio * ratio, code)
                renorm, ok = _trunc_renorm(weights, threshold)
                if not np.any(ok):
                    continue
                a_bar = np.zeros(n)
                np.add.at(a_bar, nbrs[ok].ravel(), renorm[ok].ravel())
                a_bar /= int(ok.sum())
                rho = _rho_of_point(a_bar, design)
                if rho is not None:
                    sums[k] += rho
                    counts[k] += 1
        return [sums[k] / counts[k] if counts[k] else math.nan
                for k in range(len(ratios))]

    H = ops.gram(xw, xs, code)
    chols = []
    us = []
    for ratio in ratios:
        B = ratio * ratio * H
        np.fill_diagonal(B, ratio * ratio + 1.0)
        L, _ = chol_with_jitter(B)
        chols.append(L)
        us.append(cho_solve((L, True), np.ones(n)))
    exact = n <= EXACT_TUNE_MAX_N

    for m in range(m_count):
        qw = np.full(n, design.qw_std[m] * inv_sb)
        qs = np.ascontiguousarray(design.qs_std[m] * inv_sa)
        Hq = ops.cross(qw, qs, xw, xs, code)
        for k, ratio in enumerate(ratios):
            r2 = ratio * ratio
            if exact:
                A = r2 * cho_solve((chols[k], True), Hq.T).T
                renorm, ok = _trunc_renorm(A, threshold)
                if not np.any(ok):
                    continue
                a_bar = renorm[ok].mean(axis=0)
            else:
                s = r2 * (Hq @ us[k])
                alive = s != 0.0
                if not np.any(alive):
                    continue
                z = np.zeros(n)
                z[alive] = 1.0 / (s[alive] * int(alive.sum()))
                a_bar = r2 * cho_solve((chols[k], True), Hq.T @ z)
            rho = _rho_of_point(a_bar, design)
            if rho is not None:
                sums[k] += rho
                counts[k] += 1
    return [sums[k] / counts[k] if counts[k] else math.nan
            for k in range(len(ratios))]


def _group_task(args):
    design, family_tag, alpha, beta, ratios, engine, ell = args
    return _eval_group(design, KernelFamily.from_tag(family_tag), alpha, beta,
                       ratios, engine, ell)


def tune(data: Dataset, surface: GpsSurface, grid: TuneGrid,
         threads: int = 1) -> TuneResult:
    """Pick the candidate with the lowest overall balance score.

    Candidate evaluations are independent; with threads > 1 they run in a
    process pool and are reduced in fixed lattice order, so results do not
    depend on the worker count. Raises TuningFailedError when no candidate
    yields a usable score.
    """
    design = _make_design(data, surface, grid.w_grid)
    groups = [
        (design, family.tag, alpha, beta, grid.ratios, grid.engine, grid.ell)
        for family in grid.families
        for alpha in grid.alphas
        for beta in grid.betas
    ]
    if threads > 1 and len(groups) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_group_task, groups, chunksize=max(1, len(groups) // (4 * threads))))
    else:
        results = [_group_task(g) for g in groups]

    table = []
    for (_, family_tag, alpha, beta, _, _, _), rhos in zip(groups, results):
        family = KernelFamily.from_tag(family_tag)
        for ratio, rho in zip(grid.ratios, rhos):
            table.append((Hyperparams(family, alpha, beta, ratio), rho))

    usable = [(hp, rho) for hp, rho in table if not math.isnan(rho)]
    if not usable:
        raise TuningFailedError(
            f"no usable balance score among {len(table)} candidates "
            "(no support at every grid point)"
        )
    best_rho = min(rho for _, rho in usable)
    # first exact minimizer in lattice order wins
    best_hp = next(hp for hp, rho in table if rho == best_rho)
    ties = tuple(hp for hp, rho in table
                 if not math.isnan(rho) and abs(rho - best_rho) <= _TIE_TOL)
    return TuneResult(best_hp, float(best_rho), tuple(table), ties)
