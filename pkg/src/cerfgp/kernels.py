"""Covariance function on (exposure, propensity) coordinates.

The kernel is k((w,s),(w',s')) = gamma^2 * h(z) with
z = sqrt((s - s')^2 / alpha + (w - w')^2 / beta), for four radial
families. alpha and beta act as squared length-scales of the two
coordinates; gamma^2 sets the overall signal variance.

Scalar entry points live here; the batched matrix builders live in the
backend (compiled or numpy). Derivatives are taken with respect to the
explicit exposure coordinate only, holding the propensity coordinate fixed.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

from .errors import NonDifferentiableKernelError

_SQRT3 = math.sqrt(3.0)
_SQRT5 = math.sqrt(5.0)


class KernelFamily(enum.Enum):
    """Radial profile h. matern12 is continuous but not differentiable."""

    GAUSSIAN = "gaussian"
    MATERN12 = "matern12"
    MATERN32 = "matern32"
    MATERN52 = "matern52"

    @property
    def tag(self) -> str:
        return self.value

    @property
    def code(self) -> int:
        # backend integer codes
        return {"gaussian": 0, "matern12": 1, "matern32": 2, "matern52": 3}[self.value]

    @property
    def differentiable(self) -> bool:
        return self is not KernelFamily.MATERN12

    @classmethod
    def from_tag(cls, tag: str) -> "KernelFamily":
        for fam in cls:
            if fam.value == tag:
                return fam
        raise ValueError(f"unknown kernel family {tag!r}")


ALL_FAMILIES = tuple(KernelFamily)
DIFFERENTIABLE_FAMILIES = tuple(f for f in KernelFamily if f.differentiable)


@dataclass(frozen=True)
class Hyperparams:
    """Tunable kernel configuration: family plus (alpha, beta, gamma/sigma)."""

    family: KernelFamily
    alpha: float
    beta: float
    gamma_over_sigma: float

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma_over_sigma"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be a positive finite number, got {v!r}")
        if not isinstance(self.family, KernelFamily):
            object.__setattr__(self, "family", KernelFamily.from_tag(self.family))

    @property
    def ratio2(self) -> float:
        """(gamma / sigma)^2, the signal-to-noise ratio entering the Gram."""
        return self.gamma_over_sigma**2


def profile(family: KernelFamily, z: float) -> float:
    """Radial profile h(z), non-increasing with h(0) = 1."""
    if family is KernelFamily.GAUSSIAN:
        return math.exp(-z * z)
    if family is KernelFamily.MATERN12:
        return math.exp(-z)
    if family is KernelFamily.MATERN32:
        t = _SQRT3 * z
        return (1.0 + t) * math.exp(-t)
    t = _SQRT5 * z
    return (1.0 + t + t * t / 3.0) * math.exp(-t)


def _check_finite(*values):
    for v in values:
        if not math.isfinite(v):
            raise ValueError("non-finite kernel input")


def kernel_eval(hp: Hyperparams, gamma2: float, p1, p2) -> float:
    """Evaluate gamma^2 * h(z) between two (w, s) points."""
    w1, s1 = p1
    w2, s2 = p2
    _check_finite(w1, s1, w2, s2, gamma2)
    if gamma2 < 0:
        raise ValueError("gamma2 must be >= 0")
    z = math.sqrt((s1 - s2) ** 2 / hp.alpha + (w1 - w2) ** 2 / hp.beta)
    return gamma2 * profile(hp.family, z)


def kernel_derivatives(hp: Hyperparams, gamma2: float, p1, p2) -> tuple[float, float]:
    """First and mixed-second exposure derivatives of the kernel.

    Returns (d1, d2) with d1 = dk/dw' (second argument) and
    d2 = d^2 k / (dw dw'), both holding the s coordinates fixed.
    """
    if not hp.family.differentiable:
        raise NonDifferentiableKernelError(
            "matern12 is not differentiable in the mean-square sense"
        )
    w1, s1 = p1
    w2, s2 = p2
    _check_finite(w1, s1, w2, s2, gamma2)
    dw = w1 - w2
    ds = s1 - s2
    beta = hp.beta
    z = math.sqrt(ds * ds / hp.alpha + dw * dw / beta)
    fam = hp.family
    if fam is KernelFamily.GAUSSIAN:
        e = math.exp(-z * z)
        d1 = 2.0 * (dw / beta) * e
        d2 = e * (2.0 / beta - 4.0 * dw * dw / (beta * beta))
    elif fam is KernelFamily.MATERN32:
        e = math.exp(-_SQRT3 * z)
        d1 = 3.0 * (dw / beta) * e
        if z > 0.0:
            d2 = e * (3.0 / beta - 3.0 * _SQRT3 * dw * dw / (beta * beta * z))
        else:
            d2 = 3.0 / beta
    else:  # matern52
        e = math.exp(-_SQRT5 * z)
        d1 = (5.0 / 3.0) * (dw / beta) * (1.0 + _SQRT5 * z) * e
        d2 = (5.0 / 3.0) * e * ((1.0 + _SQRT5 * z) / beta - 5.0 * dw * dw / (beta * beta))
    return gamma2 * d1, gamma2 * d2


def scale_coords(w, s, hp: Hyperparams):
    """Pre-scale coordinates so the kernel argument is Euclidean distance."""
    import numpy as np

    inv_sb = 1.0 / math.sqrt(hp.beta)
    inv_sa = 1.0 / math.sqrt(hp.alpha)
    return (
        np.ascontiguousarray(np.asarray(w, dtype=float) * inv_sb),
        np.ascontiguousarray(np.asarray(s, dtype=float) * inv_sa),
    )
