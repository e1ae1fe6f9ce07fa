"""Bivariate linking copulas: BVN, Frank, and Clayton with rotations.

All conditional quantities use one fixed convention: ``ccdf(p, v, u)``
is the conditional cdf of the SECOND copula argument given the FIRST,
i.e. dC(u, v)/du.  Callers that need the factor variable as the
conditioning coordinate therefore pass it first, everywhere.  The
rotated Clayton cdfs are

    90:   C(u, v) = v - C0(1 - u, v)
    180:  C(u, v) = u + v - 1 + C0(1 - u, 1 - v)
    270:  C(u, v) = u - C0(u, 1 - v)

with C0 the unrotated Clayton cdf, and the densities, conditionals and
inverse conditionals follow by differentiating these forms.

Density and conditional arguments are clamped to [CLAMP, 1 - CLAMP]
before evaluation; quadrature nodes never reach the boundary but user
input may.
"""

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from .quadrature import gauss_legendre_01

__all__ = [
    "CopulaFamily",
    "CopulaParam",
    "copula_cdf",
    "copula_density",
    "ccdf",
    "ccdf_inv",
    "tau_from_theta",
    "theta_from_tau",
]

CLAMP = 1e-12

# Frank evaluation degrades past exp-underflow territory; the tau
# inverse is bracketed on [FRANK_THETA_MIN, FRANK_THETA_MAX] as well.
FRANK_THETA_MIN = 1e-5
FRANK_THETA_MAX = 700.0


class CopulaFamily(enum.Enum):
    """Supported bivariate linking-copula families."""

    BVN = "bvn"
    FRANK = "frank"
    CLAYTON0 = "cln0"
    CLAYTON90 = "cln90"
    CLAYTON180 = "cln180"
    CLAYTON270 = "cln270"

    @property
    def is_clayton(self):
        return self in (
            CopulaFamily.CLAYTON0,
            CopulaFamily.CLAYTON90,
            CopulaFamily.CLAYTON180,
            CopulaFamily.CLAYTON270,
        )

    @property
    def rotation(self):
        """Rotation angle in degrees (0 for BVN and Frank)."""
        return {
            CopulaFamily.CLAYTON90: 90,
            CopulaFamily.CLAYTON180: 180,
            CopulaFamily.CLAYTON270: 270,
        }.get(self, 0)

    @property
    def tau_sign(self):
        """+1/-1 for families with a fixed Kendall-tau sign, else 0."""
        if self in (CopulaFamily.CLAYTON0, CopulaFamily.CLAYTON180):
            return 1
        if self in (CopulaFamily.CLAYTON90, CopulaFamily.CLAYTON270):
            return -1
        return 0

    @property
    def transposed(self):
        """Family of the copula with its two arguments swapped."""
        if self == CopulaFamily.CLAYTON90:
            return CopulaFamily.CLAYTON270
        if self == CopulaFamily.CLAYTON270:
            return CopulaFamily.CLAYTON90
        return self


@dataclass(frozen=True)
class CopulaParam:
    """A copula family together with its native parameter theta."""

    family: CopulaFamily
    theta: float

    def __post_init__(self):
        theta = float(self.theta)
        fam = self.family
        if fam == CopulaFamily.BVN:
            if not -1.0 < theta < 1.0:
                raise ValueError(f"BVN theta must be in (-1, 1), got {theta}")
        elif fam == CopulaFamily.FRANK:
            if theta == 0.0 or not abs(theta) <= FRANK_THETA_MAX:
                raise ValueError(
                    f"Frank theta must be nonzero with |theta| <= {FRANK_THETA_MAX}, got {theta}"
                )
        else:
            if not theta > 0.0:
                raise ValueError(f"Clayton theta must be positive, got {theta}")
        if not math.isfinite(theta):
            raise ValueError("theta must be finite")
        object.__setattr__(self, "theta", theta)


def _clamp(x):
    return np.clip(x, CLAMP, 1.0 - CLAMP)


def _as_float_array(x, name):
    x = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(x)):
        raise ValueError(f"{name} must be finite")
    return x


def _require_interior(x, name):
    if np.any(x <= 0.0) or np.any(x >= 1.0):
        raise ValueError(f"{name} must lie strictly inside (0, 1)")


def _maybe_scalar(out, *inputs):
    if all(np.ndim(a) == 0 for a in inputs):
        return float(out)
    return out


# ---------------------------------------------------------------------------
# Bivariate normal

def _bvn_rectangle_cdf(h, k, rho):
    """P(Z1 <= h, Z2 <= k) for standard normals with correlation rho.

    Uses the tetrachoric integral dPhi2/drho = phi2 along the path from
    independence, with the sin substitution that removes the square-root
    singularity:

        Phi2(h, k, rho) = Phi(h) Phi(k)
            + 1/(2 pi) * int_0^{asin rho} exp(-(h^2 + k^2 - 2 h k sin t)
                                              / (2 cos^2 t)) dt.

    The integrand is analytic on the integration range, so composite
    Gauss-Legendre panels (refined toward the endpoint when |rho| is
    close to 1) give full double precision.
    """
    h = np.asarray(h, dtype=float)
    k = np.asarray(k, dtype=float)
    if rho == 0.0:
        return ndtr(h) * ndtr(k)
    asr = math.asin(rho)
    if abs(rho) <= 0.95:
        edges = np.linspace(0.0, asr, 11)
    else:
        # geometric refinement toward asin(rho) where cos(t) is small
        frac = 1.0 - np.geomspace(1.0, 1e-8, 16)
        edges = np.concatenate(([0.0], asr * frac, [asr]))
    rule = gauss_legendre_01(20)
    starts = edges[:-1]
    widths = np.diff(edges)
    t = (starts[:, None] + widths[:, None] * rule.nodes[None, :]).ravel()
    w = (widths[:, None] * rule.weights[None, :]).ravel()

    hh = h[..., None]
    kk = k[..., None]
    sin_t = np.sin(t)
    cos2_t = np.cos(t) ** 2
    expo = -(hh * hh + kk * kk - 2.0 * hh * kk * sin_t) / (2.0 * cos2_t)
    integral = np.exp(expo) @ w
    out = ndtr(h) * ndtr(k) + integral / (2.0 * math.pi)
    # Frechet bounds guard against quadrature noise at extreme arguments
    upper = np.minimum(ndtr(h), ndtr(k))
    lower = np.maximum(ndtr(h) + ndtr(k) - 1.0, 0.0)
    return np.minimum(np.maximum(out, lower), upper)


def _bvn_cdf(u, v, theta):
    return _bvn_rectangle_cdf(ndtri(u), ndtri(v), theta)


def _bvn_density(u, v, theta):
    x = ndtri(u)
    y = ndtri(v)
    om = 1.0 - theta * theta
    quad = theta * theta * (x * x + y * y) - 2.0 * theta * x * y
    return np.exp(-quad / (2.0 * om)) / np.sqrt(om)


def _bvn_ccdf(v, u, theta):
    return ndtr((ndtri(v) - theta * ndtri(u)) / np.sqrt(1.0 - theta * theta))


def _bvn_ccdf_inv(q, u, theta):
    return ndtr(np.sqrt(1.0 - theta * theta) * ndtri(q) + theta * ndtri(u))


# ---------------------------------------------------------------------------
# Frank
#
# Core formulas are written for theta > 0 with expm1/log1p stabilization.
# Negative theta is the 90-degree reflection in the conditioning argument:
# if (U, V) ~ C_theta then (1 - U, V) ~ C_{-theta}.

def _frank_log_p(u, v, theta):
    # log of P = e^{-t u} + e^{-t v} - e^{-t} - e^{-t(u+v)}, split into the
    # two positive addends e^{-t u}(1 - e^{-t v}) and e^{-t v}(1 - e^{-t(1-v)})
    # so no cancellation occurs at any theta; returns (log first addend, log P)
    a = -theta * u + np.log(-np.expm1(-theta * v))
    b = -theta * v + np.log(-np.expm1(-theta * (1.0 - v)))
    return a, np.logaddexp(a, b)


def _frank_cdf_pos(u, v, theta):
    # C = -(1/theta) log(P / (1 - e^{-theta}))
    _, log_p = _frank_log_p(u, v, theta)
    return -(log_p - np.log(-np.expm1(-theta))) / theta


def _frank_cdf(u, v, theta):
    if theta > 0:
        return _frank_cdf_pos(u, v, theta)
    return v - _frank_cdf_pos(1.0 - u, v, -theta)


def _frank_density_pos(u, v, theta):
    # c = theta (1 - e^{-theta}) e^{-theta(u+v)} / P^2
    _, log_p = _frank_log_p(u, v, theta)
    return np.exp(
        np.log(theta) + np.log(-np.expm1(-theta)) - theta * (u + v) - 2.0 * log_p
    )


def _frank_density(u, v, theta):
    if theta > 0:
        return _frank_density_pos(u, v, theta)
    return _frank_density_pos(1.0 - u, v, -theta)


def _frank_ccdf_pos(v, u, theta):
    # h(v|u) = e^{-theta u}(1 - e^{-theta v}) / P
    a, log_p = _frank_log_p(u, v, theta)
    return np.exp(a - log_p)


def _frank_ccdf(v, u, theta):
    if theta > 0:
        return _frank_ccdf_pos(v, u, theta)
    return _frank_ccdf_pos(v, 1.0 - u, -theta)


def _frank_ccdf_inv_pos(q, u, theta):
    # Solve q = e^{-theta u} (e^{-theta v} - 1) / (D + a(u) a(v)) for v.
    # In log form, v = -(1/theta) [log(e^{-theta u}(1-q) + q e^{-theta})
    #                              - log(e^{-theta u}(1-q) + q)],
    # which survives theta u near the underflow edge.
    base = -theta * u + np.log1p(-q)
    log_num = np.logaddexp(base, -theta + np.log(q))
    log_den = np.logaddexp(base, np.log(q))
    return -(log_num - log_den) / theta


def _frank_ccdf_inv(q, u, theta):
    if theta > 0:
        return _frank_ccdf_inv_pos(q, u, theta)
    return _frank_ccdf_inv_pos(q, 1.0 - u, -theta)


# Kendall tau of the Frank copula: tau(theta) = 1 - 4/theta
# + 4 I(theta)/theta^2 with I(theta) = int_0^theta t/(e^t - 1) dt.
# Small theta uses the Bernoulli (Maclaurin) series arranged so the
# 1 - 4/theta cancellation never happens in floating point; larger
# theta uses I(theta) = pi^2/6 - sum_n e^{-n theta}(theta/n + 1/n^2).

_FRANK_SERIES_COEF = tuple(
    4.0 * b / ((2 * k + 3) * f)
    for k, (b, f) in enumerate(
        zip(
            (1 / 6, -1 / 30, 1 / 42, -1 / 30, 5 / 66, -691 / 2730, 7 / 6),
            (2.0, 24.0, 720.0, 40320.0, 3628800.0, 479001600.0, 87178291200.0),
        )
    )
)
_FRANK_SWITCH = 0.7
_PI2_OVER_6 = math.pi * math.pi / 6.0


def _frank_tau_abs(theta):
    """Kendall tau for Frank theta > 0 (array-safe)."""
    theta = np.asarray(theta, dtype=float)
    small = theta <= _FRANK_SWITCH
    out = np.empty_like(theta)

    if np.any(small):
        t = theta[small]
        t2 = t * t
        acc = np.zeros_like(t)
        power = t
        for c in _FRANK_SERIES_COEF:
            acc = acc + c * power
            power = power * t2
        out[small] = acc

    if np.any(~small):
        t = theta[~small]
        n = np.arange(1, 65, dtype=float)
        en = np.exp(-np.outer(t, n))
        integral = _PI2_OVER_6 - (en * (t[:, None] / n + 1.0 / (n * n))).sum(axis=1)
        out[~small] = 1.0 - 4.0 / t + 4.0 * integral / (t * t)

    return out


# largest |tau| the bracketed Frank parameter range can represent
FRANK_TAU_MAX = float(_frank_tau_abs(FRANK_THETA_MAX))


def _frank_theta_from_abs_tau(tau_abs):
    """Invert _frank_tau_abs on [FRANK_THETA_MIN, FRANK_THETA_MAX].

    Bisection-safeguarded secant; targets outside the bracket's tau
    range clamp to the bracket edge.
    """
    lo, hi = FRANK_THETA_MIN, FRANK_THETA_MAX
    f_lo = float(_frank_tau_abs(lo)) - tau_abs
    f_hi = float(_frank_tau_abs(hi)) - tau_abs
    if f_lo >= 0.0:
        return lo
    if f_hi <= 0.0:
        return hi
    # rough starting point from the small/large-theta behaviour
    x0 = min(max(9.0 * tau_abs, lo), hi)
    x1 = min(max(4.0 / (1.0 - tau_abs), lo), hi)
    if x0 == x1:
        x1 = 0.5 * (lo + hi)
    f0 = float(_frank_tau_abs(x0)) - tau_abs
    f1 = float(_frank_tau_abs(x1)) - tau_abs
    for _ in range(200):
        if f1 == 0.0:
            return x1
        if f1 * f_lo < 0.0:
            hi = x1
        else:
            lo = x1
        denom = f1 - f0
        if denom != 0.0:
            x2 = x1 - f1 * (x1 - x0) / denom
        else:
            x2 = 0.5 * (lo + hi)
        if not lo < x2 < hi:
            x2 = 0.5 * (lo + hi)
        x0, f0 = x1, f1
        x1 = x2
        f1 = float(_frank_tau_abs(x1)) - tau_abs
        if abs(f1) < 1e-14 or hi - lo < 1e-13 * max(1.0, hi):
            return x1
    return x1


# ---------------------------------------------------------------------------
# Clayton (unrotated kernels, theta > 0), all in log space so that large
# theta (up to the tau cap) cannot overflow u^{-theta}.

def _clayton_logsum(u, v, theta):
    """log(u^-theta + v^-theta - 1), stable for large theta."""
    a = -theta * np.log(u)
    b = -theta * np.log(v)
    m = np.maximum(a, b)
    return m + np.log(np.exp(a - m) + np.exp(b - m) - np.exp(-m))


def _clayton_cdf0(u, v, theta):
    return np.exp(-_clayton_logsum(u, v, theta) / theta)


def _clayton_density0(u, v, theta):
    log_c = (
        np.log1p(theta)
        - (theta + 1.0) * (np.log(u) + np.log(v))
        - (2.0 + 1.0 / theta) * _clayton_logsum(u, v, theta)
    )
    return np.exp(log_c)


def _clayton_ccdf0(v, u, theta):
    log_h = -(theta + 1.0) * np.log(u) - (1.0 + 1.0 / theta) * _clayton_logsum(
        u, v, theta
    )
    return np.exp(log_h)


def _clayton_log_hinv0(q, u, theta):
    """log of the unrotated Clayton inverse conditional, times -theta.

    Returns t >= 0 with hinv0(q | u) = exp(-t / theta); callers pick
    exp(-t/theta) or -expm1(-t/theta) depending on the rotation, which
    keeps full precision on whichever side of the interval matters.
    """
    s = -theta / (1.0 + theta) * np.log(q)
    log_term = np.log(np.expm1(s)) - theta * np.log(u)
    return np.logaddexp(log_term, 0.0)


def _clayton_ccdf_inv0(q, u, theta):
    return np.exp(-_clayton_log_hinv0(q, u, theta) / theta)


# ---------------------------------------------------------------------------
# Family dispatch with rotation by argument reflection.

def _cdf_kernel(family, u, v, theta):
    if family == CopulaFamily.BVN:
        return _bvn_cdf(u, v, theta)
    if family == CopulaFamily.FRANK:
        return _frank_cdf(u, v, theta)
    rot = family.rotation
    if rot == 0:
        return _clayton_cdf0(u, v, theta)
    if rot == 90:
        return v - _clayton_cdf0(1.0 - u, v, theta)
    if rot == 180:
        return u + v - 1.0 + _clayton_cdf0(1.0 - u, 1.0 - v, theta)
    return u - _clayton_cdf0(u, 1.0 - v, theta)


def _density_kernel(family, u, v, theta):
    if family == CopulaFamily.BVN:
        return _bvn_density(u, v, theta)
    if family == CopulaFamily.FRANK:
        return _frank_density(u, v, theta)
    rot = family.rotation
    if rot == 0:
        return _clayton_density0(u, v, theta)
    if rot == 90:
        return _clayton_density0(1.0 - u, v, theta)
    if rot == 180:
        return _clayton_density0(1.0 - u, 1.0 - v, theta)
    return _clayton_density0(u, 1.0 - v, theta)


def _ccdf_kernel(family, v, u, theta):
    if family == CopulaFamily.BVN:
        return _bvn_ccdf(v, u, theta)
    if family == CopulaFamily.FRANK:
        return _frank_ccdf(v, u, theta)
    rot = family.rotation
    if rot == 0:
        return _clayton_ccdf0(v, u, theta)
    if rot == 90:
        return _clayton_ccdf0(v, 1.0 - u, theta)
    if rot == 180:
        return 1.0 - _clayton_ccdf0(1.0 - v, 1.0 - u, theta)
    return 1.0 - _clayton_ccdf0(1.0 - v, u, theta)


def _ccdf_inv_kernel(family, q, u, theta):
    if family == CopulaFamily.BVN:
        return _bvn_ccdf_inv(q, u, theta)
    if family == CopulaFamily.FRANK:
        return _frank_ccdf_inv(q, u, theta)
    rot = family.rotation
    if rot == 0:
        return _clayton_ccdf_inv0(q, u, theta)
    if rot == 90:
        return _clayton_ccdf_inv0(q, 1.0 - u, theta)
    if rot == 180:
        return -np.expm1(-_clayton_log_hinv0(1.0 - q, 1.0 - u, theta) / theta)
    return -np.expm1(-_clayton_log_hinv0(1.0 - q, u, theta) / theta)


# ---------------------------------------------------------------------------
# Public operations

def copula_cdf(p, u, v):
    """C(u, v) with uniform-margin boundary identities held exactly."""
    u = _as_float_array(u, "u")
    v = _as_float_array(v, "v")
    if np.any(u < 0.0) or np.any(u > 1.0) or np.any(v < 0.0) or np.any(v > 1.0):
        raise ValueError("u and v must lie in [0, 1]")
    u_b, v_b = np.broadcast_arrays(u, v)
    ui = _clamp(u_b)
    vi = _clamp(v_b)
    out = np.asarray(_cdf_kernel(p.family, ui, vi, p.theta), dtype=float)
    out = np.where(np.minimum(u_b, v_b) == 0.0, 0.0, out)
    out = np.where(u_b == 1.0, v_b, out)
    out = np.where(v_b == 1.0, np.where(u_b == 1.0, 1.0, u_b), out)
    return _maybe_scalar(out, u, v)


def copula_density(p, u, v):
    """Copula density c(u, v); boundary arguments are clamped interior."""
    u = _clamp(_as_float_array(u, "u"))
    v = _clamp(_as_float_array(v, "v"))
    out = _density_kernel(p.family, u, v, p.theta)
    return _maybe_scalar(out, u, v)


def ccdf(p, v, given_u):
    """Conditional cdf of the second argument given the first, dC/du."""
    v = _as_float_array(v, "v")
    given_u = _as_float_array(given_u, "given_u")
    _require_interior(given_u, "given_u")
    if np.any(v < 0.0) or np.any(v > 1.0):
        raise ValueError("v must lie in [0, 1]")
    v_b, u_b = np.broadcast_arrays(v, given_u)
    out = np.asarray(
        _ccdf_kernel(p.family, _clamp(v_b), _clamp(u_b), p.theta), dtype=float
    )
    out = np.where(v_b == 0.0, 0.0, out)
    out = np.where(v_b == 1.0, 1.0, out)
    return _maybe_scalar(out, v, given_u)


def ccdf_inv(p, q, given_u):
    """Inverse of ccdf in v: returns v with ccdf(p, v, given_u) = q."""
    q = _as_float_array(q, "q")
    given_u = _as_float_array(given_u, "given_u")
    _require_interior(q, "q")
    _require_interior(given_u, "given_u")
    out = _ccdf_inv_kernel(p.family, _clamp(q), _clamp(given_u), p.theta)
    return _maybe_scalar(out, q, given_u)


def tau_from_theta(p):
    """Kendall's tau implied by the native copula parameter."""
    theta = p.theta
    fam = p.family
    if fam == CopulaFamily.BVN:
        return 2.0 / math.pi * math.asin(theta)
    if fam == CopulaFamily.FRANK:
        return math.copysign(float(_frank_tau_abs(abs(theta))), theta)
    tau0 = theta / (theta + 2.0)
    return fam.tau_sign * tau0


def theta_from_tau(family, tau):
    """Native copula parameter for a target Kendall's tau.

    Sign-fixed families reject a tau of the wrong sign (or zero, which
    no positive Clayton parameter can produce).
    """
    tau = float(tau)
    if not -1.0 < tau < 1.0:
        raise ValueError(f"tau must be in (-1, 1), got {tau}")
    if family == CopulaFamily.BVN:
        return CopulaParam(family, math.sin(math.pi * tau / 2.0))
    if family == CopulaFamily.FRANK:
        if tau == 0.0:
            raise ValueError("Frank cannot represent tau = 0 (theta = 0 excluded)")
        theta = _frank_theta_from_abs_tau(abs(tau))
        return CopulaParam(family, math.copysign(theta, tau))
    sign = family.tau_sign
    if tau * sign <= 0.0:
        raise ValueError(
            f"{family.value} requires tau with sign {sign:+d}, got {tau}"
        )
    return CopulaParam(family, 2.0 * abs(tau) / (1.0 - abs(tau)))
