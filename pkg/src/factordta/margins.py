"""Random-effect margins: normal on the logit scale, beta on the original scale.

A margin maps the copula-scale variable u in (0, 1) to a study-level
success probability.  The normal margin works on the logit scale with
mean logit(pi) and standard deviation delta; the beta margin works on
the probability scale itself with mean pi and dispersion gamma = delta,
using shapes alpha = pi (1 - gamma) / gamma, beta = (1 - pi)(1 - gamma) / gamma
so that gamma -> 0 degenerates at pi.
"""

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import (
    betainc,
    betaincinv,
    betaln,
    expit,
    gammaln,
    logit,
    ndtr,
    ndtri,
    xlog1py,
    xlogy,
)

__all__ = [
    "MarginKind",
    "MarginSpec",
    "prob_from_u",
    "u_from_prob",
    "binom_pmf",
    "latent_quantile",
    "latent_cdf",
    "latent_pdf",
]


class MarginKind(enum.Enum):
    NORMAL_LOGIT = "normal"
    BETA_IDENTITY = "beta"


@dataclass(frozen=True)
class MarginSpec:
    """Margin family with meta-analytic proportion pi and variability delta."""

    kind: MarginKind
    pi: float
    delta: float

    def __post_init__(self):
        pi = float(self.pi)
        delta = float(self.delta)
        if not 0.0 < pi < 1.0:
            raise ValueError(f"pi must be in (0, 1), got {pi}")
        if not delta > 0.0:
            raise ValueError(f"delta must be positive, got {delta}")
        if self.kind == MarginKind.BETA_IDENTITY and not delta < 1.0:
            raise ValueError(f"beta margin requires delta in (0, 1), got {delta}")
        if not (math.isfinite(pi) and math.isfinite(delta)):
            raise ValueError("pi and delta must be finite")
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "delta", delta)

    def beta_shapes(self):
        if self.kind != MarginKind.BETA_IDENTITY:
            raise ValueError("beta_shapes is only defined for beta margins")
        g = self.delta
        return self.pi * (1.0 - g) / g, (1.0 - self.pi) * (1.0 - g) / g


def _interior(x, name):
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0.0) or np.any(x >= 1.0) or np.any(~np.isfinite(x)):
        raise ValueError(f"{name} must lie strictly inside (0, 1)")
    return x


def _maybe_scalar(out, x):
    return float(out) if np.ndim(x) == 0 else out


def prob_from_u(m, u):
    """Quantile transform u -> study-level probability, monotone in u."""
    u = _interior(u, "u")
    if m.kind == MarginKind.NORMAL_LOGIT:
        out = expit(logit(m.pi) + m.delta * ndtri(u))
    else:
        a, b = m.beta_shapes()
        out = betaincinv(a, b, u)
    return _maybe_scalar(out, u)


def u_from_prob(m, x):
    """Inverse of prob_from_u: the margin cdf at probability x."""
    x = _interior(x, "x")
    if m.kind == MarginKind.NORMAL_LOGIT:
        out = ndtr((logit(x) - logit(m.pi)) / m.delta)
    else:
        a, b = m.beta_shapes()
        out = betainc(a, b, x)
    return _maybe_scalar(out, x)


def binom_pmf(y, n, prob):
    """Binomial pmf computed in log space; exact-ish up to n ~ 1e5."""
    y = np.asarray(y)
    n = np.asarray(n)
    if np.any(y < 0) or np.any(y > n):
        raise ValueError("require 0 <= y <= n")
    yf = y.astype(float)
    nf = n.astype(float)
    prob = np.asarray(prob, dtype=float)
    log_pmf = (
        gammaln(nf + 1.0)
        - gammaln(yf + 1.0)
        - gammaln(nf - yf + 1.0)
        + xlogy(yf, prob)
        + xlog1py(nf - yf, -prob)
    )
    out = np.exp(log_pmf)
    if np.ndim(y) == 0 and np.ndim(n) == 0 and np.ndim(prob) == 0:
        return float(out)
    return out


# The SROC layer works on the "link scale": logit of the probability for
# normal margins, the probability itself for beta margins.  On that
# scale the random effect has an ordinary parametric law.

def latent_quantile(m, p):
    """Quantile of the link-scale random effect."""
    p = _interior(p, "p")
    if m.kind == MarginKind.NORMAL_LOGIT:
        out = logit(m.pi) + m.delta * ndtri(p)
    else:
        a, b = m.beta_shapes()
        out = betaincinv(a, b, p)
    return _maybe_scalar(out, p)


def latent_cdf(m, w):
    """Cdf of the link-scale random effect at w."""
    w = np.asarray(w, dtype=float)
    if m.kind == MarginKind.NORMAL_LOGIT:
        out = ndtr((w - logit(m.pi)) / m.delta)
    else:
        a, b = m.beta_shapes()
        out = betainc(a, b, np.clip(w, 0.0, 1.0))
    return _maybe_scalar(out, w)


def latent_pdf(m, w):
    """Density of the link-scale random effect at w."""
    w = np.asarray(w, dtype=float)
    if m.kind == MarginKind.NORMAL_LOGIT:
        z = (w - logit(m.pi)) / m.delta
        out = np.exp(-0.5 * z * z) / (m.delta * math.sqrt(2.0 * math.pi))
    else:
        a, b = m.beta_shapes()
        wc = np.clip(w, 1e-300, 1.0 - 1e-16)
        out = np.exp(xlogy(a - 1.0, wc) + xlog1py(b - 1.0, -wc) - betaln(a, b))
        out = np.where((w <= 0.0) | (w >= 1.0), 0.0, out)
    return _maybe_scalar(out, w)
