"""Causal exposure-response curve estimation with balance-tuned Gaussian
processes on (exposure, generalized-propensity-score) coordinates.

Main entry points:

- data: :func:`load_dataset`, :class:`Dataset`, :func:`standardize`
- propensity model: :func:`fit_gps`, :func:`eval_gps`, :func:`gps_surface`
- exact GP: :func:`fit_gp`, :func:`cerf_estimate`, :func:`loo_sigma2`
- nearest-neighbor GP: :func:`neighbor_sets`, :func:`nngp_cerf`
- hyperparameter selection: :func:`tune`, :func:`covariate_balance`
- change points: :func:`one_sided_derivative`, :func:`detect_change_points`
- simulation and baselines: :func:`gen_dataset`, :func:`run_benchmark`
"""

from .backend import BACKEND
from .balance import BalanceReport, covariate_balance
from .changepoint import (
    ChangePointReport,
    DerivativeEstimate,
    detect_change_points,
    one_sided_derivative,
)
from .data import (
    Dataset,
    Observation,
    StandardizedCoords,
    exposure_grid,
    load_dataset,
    save_dataset,
    standardize,
)
from .gp import (
    AggWeights,
    CerfEstimate,
    GpFit,
    cerf_estimate,
    fit_gp,
    loo_sigma2,
    pointwise_weights,
    predict_counterfactual,
)
from .gps import GpsModel, GpsSurface, eval_gps, fit_gps, gps_surface
from .kernels import (
    ALL_FAMILIES,
    DIFFERENTIABLE_FAMILIES,
    Hyperparams,
    KernelFamily,
    kernel_derivatives,
    kernel_eval,
)
from .nngp import NeighborIndex, neighbor_sets, nngp_cerf
from .simulation import (
    ScenarioConfig,
    SimulationResult,
    baseline_adjustment,
    baseline_iptw,
    gen_dataset,
    run_benchmark,
    true_cerf,
)
from .tuning import TuneGrid, TuneResult, tune

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "AggWeights",
    "ALL_FAMILIES",
    "BalanceReport",
    "CerfEstimate",
    "ChangePointReport",
    "Dataset",
    "DerivativeEstimate",
    "DIFFERENTIABLE_FAMILIES",
    "GpFit",
    "GpsModel",
    "GpsSurface",
    "Hyperparams",
    "KernelFamily",
    "NeighborIndex",
    "Observation",
    "ScenarioConfig",
    "SimulationResult",
    "StandardizedCoords",
    "TuneGrid",
    "TuneResult",
    "baseline_adjustment",
    "baseline_iptw",
    "cerf_estimate",
    "covariate_balance",
    "detect_change_points",
    "eval_gps",
    "exposure_grid",
    "fit_gp",
    "fit_gps",
    "gen_dataset",
    "gps_surface",
    "kernel_derivatives",
    "kernel_eval",
    "load_dataset",
    "loo_sigma2",
    "neighbor_sets",
    "nngp_cerf",
    "one_sided_derivative",
    "pointwise_weights",
    "predict_counterfactual",
    "run_benchmark",
    "save_dataset",
    "standardize",
    "true_cerf",
    "tune",
]
