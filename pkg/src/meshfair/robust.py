"""Geman-McClure robust norm, derivatives, secant weight, and scale rule.

With scale sigma > 0 the norm and its derivatives are

    rho(e)  = e^2 / (sigma + e^2)
    rho'(e) = 2 sigma e / (sigma + e^2)^2
    rho''(e) = 2 sigma (sigma - 3 e^2) / (sigma + e^2)^3

Note the scale enters alongside e^2 while the scale rule below sets it from
max(|e|); that dimensional mismatch is deliberate and kept exactly as given,
rather than silently "fixed" to max(|e|)^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyResiduals, NonPositiveSigma

SIGMA_FLOOR = 1e-6


@dataclass(frozen=True)
class RobustScale:
    """Scale factor controlling the norm's convexity and outlier influence."""

    sigma: float

    def __post_init__(self):
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise NonPositiveSigma(f"sigma must be positive and finite, got {self.sigma}")


def _check_sigma(sigma: float) -> None:
    if not (sigma > 0 and math.isfinite(sigma)):
        raise NonPositiveSigma(f"sigma must be positive and finite, got {sigma}")


def rho(e, sigma: float):
    """Robust error, in [0, 1)."""
    _check_sigma(sigma)
    e = np.asarray(e, dtype=float)
    return e * e / (sigma + e * e)


def rho_dot(e, sigma: float):
    """First derivative (the influence function)."""
    _check_sigma(sigma)
    e = np.asarray(e, dtype=float)
    return 2.0 * sigma * e / (sigma + e * e) ** 2


def rho_ddot(e, sigma: float):
    """Second derivative; changes sign at e = sqrt(sigma / 3)."""
    _check_sigma(sigma)
    e = np.asarray(e, dtype=float)
    e2 = e * e
    return 2.0 * sigma * (sigma - 3.0 * e2) / (sigma + e2) ** 3


def secant_weight(e, sigma: float):
    """rho'(e) / e, evaluated in closed form: 2 sigma / (sigma + e^2)^2.

    The removable singularity at e = 0 evaluates to 2 / sigma; the weight is
    strictly positive for all finite e, which is what makes secant-weighted
    normal equations positive semi-definite.
    """
    _check_sigma(sigma)
    e = np.asarray(e, dtype=float)
    return 2.0 * sigma / (sigma + e * e) ** 2


def estimate_sigma(residuals) -> RobustScale:
    """Scale rule sigma = max(|e|) / sqrt(3), floored to avoid degeneracy."""
    e = np.asarray(residuals, dtype=float)
    if e.size == 0:
        raise EmptyResiduals("cannot estimate sigma from zero residuals")
    return RobustScale(max(float(np.abs(e).max()) / math.sqrt(3.0), SIGMA_FLOOR))


def outlier_mask(residuals, sigma: float) -> np.ndarray:
    """Diagnostic flags where |e| exceeds sigma / sqrt(3).

    Flagged pixels stay in the optimization; the norm itself down-weights
    them.  The threshold marks where rho'' turns negative, i.e. where the
    influence of a residual starts to redescend.
    """
    _check_sigma(sigma)
    e = np.asarray(residuals, dtype=float)
    return np.abs(e) > sigma / math.sqrt(3.0)
