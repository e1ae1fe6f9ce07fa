"""Joint study pmf and dataset likelihood for the one-factor copula model.

Each study reports, for every test t, the true positives among a shared
pool of diseased subjects and the true negatives among a shared pool of
non-diseased subjects.  Sensitivities (k=1) and specificities (k=0) vary
across studies; their study-level values are quantile transforms of 2T
latent uniforms that are conditionally independent given a common factor
V ~ U(0,1).  Integrating V out and replacing every inner integral by a
Gauss-Legendre sum at dependent quadrature points gives the double sum
evaluated here:

    pmf = sum_q1 w_q1  prod_slots  sum_q2 w_q2 g(y; n, x(u_q1, u_q2))

with x(u1, u2) = prob_from_u(margin, ccdf_inv(u2 | u1)) and g the
binomial pmf.  Slots are ordered sensitivity 1..T then specificity 1..T
throughout the package.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, gammaln, logit, logsumexp, ndtri, xlog1py, xlogy

from .copulas import CopulaFamily, ccdf_inv, theta_from_tau
from .margins import MarginKind, MarginSpec, binom_pmf, prob_from_u
from .quadrature import QuadratureRule

__all__ = [
    "Dataset",
    "EvaluationError",
    "ModelSpec",
    "ParamSet",
    "StudyRecord",
    "glmm_pmf_bvn",
    "implied_correlation_matrix",
    "mc_pmf_oracle",
    "neg_log_lik",
    "study_pmf",
]

_PMF_FLOOR = 1e-300


class EvaluationError(ArithmeticError):
    """A pmf evaluation produced a non-finite intermediate value."""


@dataclass(frozen=True)
class StudyRecord:
    """Counts for one study: 2xT margins against a shared gold standard.

    ``tp[t]`` of ``n_diseased`` subjects test positive on test t and
    ``tn[t]`` of ``n_nondiseased`` test negative.  The denominators are
    scalars because every test is scored on the same two subject pools.
    """

    tp: tuple
    n_diseased: int
    tn: tuple
    n_nondiseased: int

    def __post_init__(self):
        tp = tuple(int(y) for y in self.tp)
        tn = tuple(int(y) for y in self.tn)
        object.__setattr__(self, "tp", tp)
        object.__setattr__(self, "tn", tn)
        object.__setattr__(self, "n_diseased", int(self.n_diseased))
        object.__setattr__(self, "n_nondiseased", int(self.n_nondiseased))
        if len(tp) == 0 or len(tp) != len(tn):
            raise ValueError("tp and tn must have the same nonzero length")
        if self.n_diseased < 0 or self.n_nondiseased < 0:
            raise ValueError("group sizes must be nonnegative")
        for t, y in enumerate(tp):
            if not 0 <= y <= self.n_diseased:
                raise ValueError(f"tp[{t}]={y} outside 0..{self.n_diseased}")
        for t, y in enumerate(tn):
            if not 0 <= y <= self.n_nondiseased:
                raise ValueError(f"tn[{t}]={y} outside 0..{self.n_nondiseased}")

    @property
    def n_tests(self):
        return len(self.tp)


@dataclass(frozen=True)
class Dataset:
    """An ordered collection of studies, all reporting the same T tests."""

    studies: tuple

    def __post_init__(self):
        studies = tuple(self.studies)
        object.__setattr__(self, "studies", studies)
        if not studies:
            raise ValueError("dataset contains no studies")
        T = studies[0].n_tests
        for i, s in enumerate(studies):
            if not isinstance(s, StudyRecord):
                raise TypeError(f"studies[{i}] is not a StudyRecord")
            if s.n_tests != T:
                raise ValueError(
                    f"studies[{i}] has {s.n_tests} tests, expected {T}"
                )

    @property
    def T(self):
        return self.studies[0].n_tests

    def __len__(self):
        return len(self.studies)


@dataclass(frozen=True)
class ModelSpec:
    """Margin family and per-slot linking copulas for a T-test model."""

    T: int
    margin_kind: MarginKind
    linking_copulas: tuple

    def __post_init__(self):
        object.__setattr__(self, "T", int(self.T))
        fams = tuple(CopulaFamily(f) for f in self.linking_copulas)
        object.__setattr__(self, "linking_copulas", fams)
        if self.T < 1:
            raise ValueError("T must be at least 1")
        if not isinstance(self.margin_kind, MarginKind):
            raise TypeError("margin_kind must be a MarginKind")
        if len(fams) != 2 * self.T:
            raise ValueError(
                f"need {2 * self.T} linking copulas (sens 1..T then spec 1..T), "
                f"got {len(fams)}"
            )


@dataclass(frozen=True)
class ParamSet:
    """Model parameters on the reporting scale.

    Dependence is stored as Kendall's tau, one per slot, because tau is
    portable across copula families; conversion to the native parameter
    happens once per likelihood call.
    """

    pi1: tuple
    pi0: tuple
    delta1: tuple
    delta0: tuple
    tau: tuple

    def __post_init__(self):
        for name in ("pi1", "pi0", "delta1", "delta0", "tau"):
            object.__setattr__(
                self, name, tuple(float(x) for x in getattr(self, name))
            )
        T = len(self.pi1)
        if T < 1:
            raise ValueError("need at least one test")
        for name in ("pi0", "delta1", "delta0"):
            if len(getattr(self, name)) != T:
                raise ValueError(f"{name} must have length {T}")
        if len(self.tau) != 2 * T:
            raise ValueError(f"tau must have length {2 * T}")
        for name in ("pi1", "pi0"):
            for x in getattr(self, name):
                if not 0.0 < x < 1.0 or not np.isfinite(x):
                    raise ValueError(f"{name} entries must lie in (0, 1)")
        for name in ("delta1", "delta0"):
            for x in getattr(self, name):
                if not x > 0.0 or not np.isfinite(x):
                    raise ValueError(f"{name} entries must be positive")
        for x in self.tau:
            if not -1.0 < x < 1.0:
                raise ValueError("tau entries must lie in (-1, 1)")

    @property
    def T(self):
        return len(self.pi1)


def _slot_margins(spec, params):
    kind = spec.margin_kind
    return [
        MarginSpec(kind, pi=p, delta=d)
        for p, d in zip(params.pi1 + params.pi0, params.delta1 + params.delta0)
    ]


def _slot_copulas(spec, params):
    # raises for tau/family sign mismatches, including Frank at tau = 0
    return [
        theta_from_tau(fam, tau)
        for fam, tau in zip(spec.linking_copulas, params.tau)
    ]


def _check_compat(s, spec, params):
    if spec.T != params.T:
        raise ValueError(f"spec has T={spec.T} but params have T={params.T}")
    if s is not None and s.n_tests != spec.T:
        raise ValueError(f"study has {s.n_tests} tests but spec expects {spec.T}")


def _prob_grids(spec, params, outer, inner):
    """Per-slot success probabilities at all (outer, inner) node pairs.

    Returns an array of shape (2T, len(outer), len(inner)).  Entry
    [k, i, j] is the response-scale probability for slot k when the
    factor sits at outer node i and the slot's own uniform at inner
    node j.  The grids do not depend on the observed counts, so they
    are shared by every study in a dataset.
    """
    margins = _slot_margins(spec, params)
    copulas = _slot_copulas(spec, params)
    q1, q2 = len(outer), len(inner)
    vv = np.broadcast_to(outer.nodes[:, None], (q1, q2))
    ww = np.broadcast_to(inner.nodes[None, :], (q1, q2))
    grids = np.empty((len(margins), q1, q2))
    for k, (m, cp) in enumerate(zip(margins, copulas)):
        grids[k] = prob_from_u(m, ccdf_inv(cp, ww, vv))
    return grids


def _locate_bad(grids):
    k, i, j = np.argwhere(~np.isfinite(grids))[0]
    side = "sensitivity" if k < grids.shape[0] // 2 else "specificity"
    t = k if k < grids.shape[0] // 2 else k - grids.shape[0] // 2
    return (
        f"non-finite probability at {side} slot for test {t + 1} "
        f"(outer node {i}, inner node {j})"
    )


def _log_pmfs_from_grids(grids, y, n, outer, inner):
    # y, n: (N, 2T) count arrays; grids: (2T, Q1, Q2)
    if not np.isfinite(grids).all():
        raise EvaluationError(_locate_bad(grids))
    nslots = grids.shape[0]
    coef = gammaln(n + 1.0) - gammaln(y + 1.0) - gammaln(n - y + 1.0)
    acc = np.zeros((y.shape[0], len(outer)))
    w2 = inner.weights
    for k in range(nslots):
        logpmf = (
            coef[:, k, None, None]
            + xlogy(y[:, k, None, None], grids[k])
            + xlog1py(n[:, k, None, None] - y[:, k, None, None], -grids[k])
        )
        inner_sum = np.exp(logpmf) @ w2
        acc += np.log(np.maximum(inner_sum, _PMF_FLOOR))
    return logsumexp(acc + np.log(outer.weights), axis=1)


def _count_arrays(studies, T):
    y = np.array([s.tp + s.tn for s in studies], dtype=float)
    n = np.array(
        [(s.n_diseased,) * T + (s.n_nondiseased,) * T for s in studies],
        dtype=float,
    )
    return y, n


def study_pmf(s, spec, params, outer, inner):
    """Exact-quadrature probability of one study's 2xT count table."""
    _check_compat(s, spec, params)
    grids = _prob_grids(spec, params, outer, inner)
    y, n = _count_arrays([s], spec.T)
    return float(np.exp(_log_pmfs_from_grids(grids, y, n, outer, inner)[0]))


def neg_log_lik(d, spec, params, outer, inner):
    """Negative log-likelihood of a dataset: -sum_i log study_pmf(s_i).

    The per-study log pmfs share one set of probability grids, so the
    cost is O(nq^2 * 2T) for the grids plus O(N * nq^2 * 2T) for the
    count-dependent part.
    """
    if d.T != spec.T:
        raise ValueError(f"dataset has T={d.T} but spec expects T={spec.T}")
    _check_compat(None, spec, params)
    grids = _prob_grids(spec, params, outer, inner)
    y, n = _count_arrays(d.studies, spec.T)
    logpmfs = _log_pmfs_from_grids(grids, y, n, outer, inner)
    if not np.isfinite(logpmfs).all():
        i = int(np.argwhere(~np.isfinite(logpmfs))[0][0])
        raise EvaluationError(f"study {i}: non-finite log pmf")
    return float(-logpmfs.sum())


def mc_pmf_oracle(s, spec, params, ndraws, seed):
    """Plain Monte-Carlo estimate of study_pmf, for verification.

    Draws the factor V and one fresh uniform per slot, pushes them
    through the conditional quantile transform, and averages the product
    of binomial pmfs.  Returns (estimate, standard error of the mean).
    Deliberately shares no quadrature code with study_pmf.
    """
    ndraws = int(ndraws)
    if ndraws < 10_000:
        raise ValueError("ndraws must be at least 10000")
    _check_compat(s, spec, params)
    margins = _slot_margins(spec, params)
    copulas = _slot_copulas(spec, params)
    rng = np.random.default_rng(seed)
    v = rng.random(ndraws)
    w = rng.random((ndraws, 2 * spec.T))
    # guard the open-interval requirement of the conditional inverse
    tiny = np.finfo(float).tiny
    v = np.clip(v, tiny, 1.0 - 1e-16)
    w = np.clip(w, tiny, 1.0 - 1e-16)
    counts = s.tp + s.tn
    sizes = (s.n_diseased,) * spec.T + (s.n_nondiseased,) * spec.T
    prod = np.ones(ndraws)
    for k, (m, cp) in enumerate(zip(margins, copulas)):
        x = prob_from_u(m, ccdf_inv(cp, w[:, k], v))
        prod *= binom_pmf(counts[k], sizes[k], x)
    estimate = float(prod.mean())
    mc_se = float(prod.std(ddof=1) / np.sqrt(ndraws))
    return estimate, mc_se


def glmm_pmf_bvn(s, params, outer, inner, spec=None):
    """Study pmf through the additive normal-factor representation.

    For logit-normal margins with bivariate-normal linking copulas the
    model coincides with a 2T-variate probit-style mixed model whose
    latent normals share a one-factor correlation structure: each slot's
    latent value is theta*w + sqrt(1-theta^2)*eps with standard-normal w
    and eps, theta = sin(pi*tau/2).  This path maps the same quadrature
    nodes through the normal quantile and never calls copula code, so
    agreement with study_pmf is a genuine two-route check.

    If a ModelSpec is supplied it must declare NormalLogit margins and
    all-BVN linking copulas.
    """
    if spec is not None:
        if spec.margin_kind is not MarginKind.NORMAL_LOGIT:
            raise ValueError("glmm_pmf_bvn requires NormalLogit margins")
        if any(f is not CopulaFamily.BVN for f in spec.linking_copulas):
            raise ValueError("glmm_pmf_bvn requires all-BVN linking copulas")
        _check_compat(s, spec, params)
    T = params.T
    if s.n_tests != T:
        raise ValueError(f"study has {s.n_tests} tests but params have T={T}")
    tau = np.asarray(params.tau)
    theta = np.sin(0.5 * np.pi * tau)
    mu = logit(np.asarray(params.pi1 + params.pi0))
    delta = np.asarray(params.delta1 + params.delta0)
    wnode = ndtri(outer.nodes)[:, None]
    enode = ndtri(inner.nodes)[None, :]
    grids = np.empty((2 * T, len(outer), len(inner)))
    for k in range(2 * T):
        z = theta[k] * wnode + np.sqrt(1.0 - theta[k] ** 2) * enode
        grids[k] = expit(mu[k] + delta[k] * z)
    y, n = _count_arrays([s], T)
    return float(np.exp(_log_pmfs_from_grids(grids, y, n, outer, inner)[0]))


def implied_correlation_matrix(params):
    """Latent-scale correlation matrix under all-BVN linking copulas.

    With loadings theta_k = sin(pi*tau_k/2) the latent normals have
    corr(k, l) = theta_k * theta_l, k != l: a rank-one structure that is
    positive semidefinite by construction.
    """
    theta = np.sin(0.5 * np.pi * np.asarray(params.tau))
    mat = np.outer(theta, theta)
    np.fill_diagonal(mat, 1.0)
    return mat
