"""Summary ROC outputs derived from a fitted model.

The factor model implies a dependence between the latent sensitivity and
specificity of each test.  Mapping both linking parameters through the
normal-copula correspondence (theta = sin(pi tau / 2), rho = theta_1 *
theta_0) gives the within-test Kendall tau; a bivariate copula with that
tau then yields quantile regression curves (the SROC family) and a
density surface on the link scale (the predictive region).

The pair copula is oriented with the SPECIFICITY coordinate first, so
the primary curve direction x1_on_x0 conditions directly on the first
coordinate; x0_on_x1 conditions through the transposed family.  For the
rotation-asymmetric Clayton families the orientation is part of the
family token's meaning here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .copulas import CopulaFamily, ccdf_inv, copula_density, theta_from_tau
from .margins import MarginSpec, latent_cdf, latent_pdf, latent_quantile, prob_from_u

__all__ = [
    "ContourGrid",
    "SrocCurve",
    "default_pair_family",
    "density_contour",
    "quantile_curve",
    "within_test_tau",
]

_DIRECTIONS = ("x1_on_x0", "x0_on_x1")
_GRID_LO = 0.005
_GRID_HI = 0.995


@dataclass(frozen=True)
class SrocCurve:
    """One quantile regression curve on the probability scale.

    points are (specificity value, sensitivity value) pairs, ordered so
    the conditioning coordinate (specificity for x1_on_x0, sensitivity
    for x0_on_x1) is strictly increasing.
    """

    test: int
    quantile_q: float
    direction: str
    points: tuple

    def __post_init__(self):
        if self.direction not in _DIRECTIONS:
            raise ValueError(f"direction must be one of {_DIRECTIONS}")
        if not 0.0 < self.quantile_q < 1.0:
            raise ValueError("quantile_q must lie in (0, 1)")
        pts = tuple((float(a), float(b)) for a, b in self.points)
        object.__setattr__(self, "points", pts)
        arr = np.array(pts)
        if arr.size == 0:
            raise ValueError("curve needs at least one point")
        if np.any(arr <= 0.0) or np.any(arr >= 1.0):
            raise ValueError("curve coordinates must lie in (0, 1)")
        cond = arr[:, 0] if self.direction == "x1_on_x0" else arr[:, 1]
        if len(cond) > 1 and np.any(np.diff(cond) <= 0.0):
            raise ValueError("conditioning axis must be strictly increasing")


@dataclass(frozen=True)
class ContourGrid:
    """Joint link-scale density of one test's (accuracy) latent pair.

    density[i, j] is evaluated at (grid_x1[i], grid_x0[j]).
    """

    test: int
    grid_x0: tuple
    grid_x1: tuple
    density: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "grid_x0", tuple(float(v) for v in self.grid_x0))
        object.__setattr__(self, "grid_x1", tuple(float(v) for v in self.grid_x1))
        d = np.asarray(self.density, dtype=float)
        object.__setattr__(self, "density", d)
        if d.shape != (len(self.grid_x1), len(self.grid_x0)):
            raise ValueError("density shape must be (len(grid_x1), len(grid_x0))")
        if np.any(~np.isfinite(d)) or np.any(d < 0.0):
            raise ValueError("density values must be finite and nonnegative")


def within_test_tau(tau_1t, tau_0t):
    """Kendall tau between a test's latent sensitivity and specificity.

    Both linking taus pass through the normal-copula correspondence;
    the factor structure multiplies the loadings.
    """
    t1, t0 = float(tau_1t), float(tau_0t)
    if not (abs(t1) < 1.0 and abs(t0) < 1.0):
        raise ValueError("linking taus must lie in (-1, 1)")
    rho = np.sin(0.5 * np.pi * t1) * np.sin(0.5 * np.pi * t0)
    return float(2.0 / np.pi * np.arcsin(rho))


def default_pair_family(sens_family, tau_pair):
    """Pair family for the SROC step: the sensitivity linking family,
    swapped to its opposite-sign Clayton rotation when the within-test
    tau has the wrong sign for it."""
    fam = CopulaFamily(sens_family)
    if not fam.is_clayton or fam.tau_sign * tau_pair > 0.0:
        return fam
    swap = {
        CopulaFamily.CLAYTON0: CopulaFamily.CLAYTON270,
        CopulaFamily.CLAYTON270: CopulaFamily.CLAYTON0,
        CopulaFamily.CLAYTON180: CopulaFamily.CLAYTON90,
        CopulaFamily.CLAYTON90: CopulaFamily.CLAYTON180,
    }
    return swap[fam]


def _margin_pair(m_1t, m_0t):
    if not isinstance(m_1t, MarginSpec) or not isinstance(m_0t, MarginSpec):
        raise TypeError("margins must be MarginSpec instances")
    return m_1t, m_0t


def quantile_curve(m_1t, m_0t, pair_family, tau_pair, q, direction="x1_on_x0",
                   grid_size=201, test=0):
    """Quantile regression curve of one accuracy on the other.

    x1_on_x0: for each u0 on the grid, u1 = ccdf_inv(q | u0) under the
    pair copula; x0_on_x1 swaps the roles through the transposed family.
    Output points are on the probability scale.
    """
    m1, m0 = _margin_pair(m_1t, m_0t)
    if direction not in _DIRECTIONS:
        raise ValueError(f"direction must be one of {_DIRECTIONS}")
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie in (0, 1)")
    if grid_size < 2:
        raise ValueError("grid_size must be at least 2")
    fam = CopulaFamily(pair_family)
    grid = np.linspace(_GRID_LO, _GRID_HI, int(grid_size))
    if direction == "x1_on_x0":
        p = theta_from_tau(fam, tau_pair)
        u0 = grid
        u1 = ccdf_inv(p, np.full_like(grid, q), u0)
    else:
        p = theta_from_tau(fam.transposed, tau_pair)
        u1 = grid
        u0 = ccdf_inv(p, np.full_like(grid, q), u1)
    x0 = prob_from_u(m0, u0)
    x1 = prob_from_u(m1, u1)
    return SrocCurve(
        test=test,
        quantile_q=float(q),
        direction=direction,
        points=tuple(zip(x0, x1)),
    )


def density_contour(m_1t, m_0t, pair_family, tau_pair, grid_size=201, test=0):
    """Joint density of the link-scale latent pair over the central 99%
    marginal ranges: copula density times the two marginal densities."""
    m1, m0 = _margin_pair(m_1t, m_0t)
    if grid_size < 2:
        raise ValueError("grid_size must be at least 2")
    fam = CopulaFamily(pair_family)
    p = theta_from_tau(fam, tau_pair)
    w0 = np.linspace(
        latent_quantile(m0, _GRID_LO), latent_quantile(m0, _GRID_HI), int(grid_size)
    )
    w1 = np.linspace(
        latent_quantile(m1, _GRID_LO), latent_quantile(m1, _GRID_HI), int(grid_size)
    )
    # copula arguments: cdf of each latent coordinate, specificity first
    u0 = np.clip(latent_cdf(m0, w0), 1e-12, 1.0 - 1e-12)
    u1 = np.clip(latent_cdf(m1, w1), 1e-12, 1.0 - 1e-12)
    c = copula_density(p, u0[None, :], u1[:, None])
    dens = c * latent_pdf(m0, w0)[None, :] * latent_pdf(m1, w1)[:, None]
    return ContourGrid(
        test=test, grid_x0=tuple(w0), grid_x1=tuple(w1), density=dens
    )
