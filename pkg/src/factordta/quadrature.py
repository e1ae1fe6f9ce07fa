"""Gauss-Legendre quadrature rules mapped to the unit interval."""

from dataclasses import dataclass

import numpy as np

__all__ = ["QuadratureRule", "gauss_legendre_01"]


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weights of a quadrature rule on [0, 1].

    Weights sum to one; nodes are strictly increasing and strictly
    interior, so integrands may safely assume arguments in (0, 1).
    """

    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if nodes.ndim != 1 or nodes.shape != weights.shape:
            raise ValueError("nodes and weights must be 1-d arrays of equal length")
        if nodes.size == 0:
            raise ValueError("empty rule")
        if np.any(nodes <= 0.0) or np.any(nodes >= 1.0):
            raise ValueError("nodes must lie strictly inside (0, 1)")
        if np.any(np.diff(nodes) <= 0.0):
            raise ValueError("nodes must be strictly increasing")
        if np.any(weights <= 0.0):
            raise ValueError("weights must be positive")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    def __len__(self):
        return self.nodes.size


def _legendre_and_derivative(x, n):
    """Value and derivative of the degree-n Legendre polynomial at x."""
    p_prev = np.ones_like(x)
    p = x.copy()
    for k in range(2, n + 1):
        p_prev, p = p, ((2 * k - 1) * x * p - (k - 1) * p_prev) / k
    dp = n * (x * p - p_prev) / (x * x - 1.0)
    return p, dp


def gauss_legendre_01(nq):
    """Build the nq-point Gauss-Legendre rule on [0, 1].

    Nodes are found by Newton iteration on the Legendre polynomial with
    the usual asymptotic cosine initial guesses; the rule on [-1, 1] is
    then mapped affinely onto [0, 1], which divides the weights by two
    so they sum to one.  Exact for polynomials of degree <= 2*nq - 1.
    """
    nq = int(nq)
    if nq < 1 or nq > 200:
        raise ValueError(f"nq must be in [1, 200], got {nq}")
    if nq == 1:
        return QuadratureRule(np.array([0.5]), np.array([1.0]))

    k = np.arange(nq)
    t = np.cos(np.pi * (k + 0.75) / (nq + 0.5))
    for _ in range(100):
        p, dp = _legendre_and_derivative(t, nq)
        step = p / dp
        t = t - step
        if np.max(np.abs(step)) < 1e-15:
            break
    p, dp = _legendre_and_derivative(t, nq)
    w = 2.0 / ((1.0 - t * t) * dp * dp)

    order = np.argsort(t)
    t, w = t[order], w[order]
    # The rule is symmetric; averaging the two halves removes the last
    # bit of asymmetry left by the iteration.
    t = 0.5 * (t - t[::-1])
    w = 0.5 * (w + w[::-1])
    return QuadratureRule(0.5 * (t + 1.0), 0.5 * w)
