"""Maximum likelihood fitting on an unconstrained reparameterization.

The optimizer is a BFGS quasi-Newton iteration with Armijo backtracking
and numerically differenced gradients, applied to the negative
log-likelihood as a function of transformed parameters:

    pi    -> logit(pi)
    delta -> log(delta)            (logit-normal margins)
    delta -> logit(delta)          (beta margins, delta in (0,1))
    tau   -> atanh(tau)            (sign-free families: bvn, frank)
    tau   -> logit(|tau|)          (rotation-fixed Clayton families)

Standard errors come from the inverse of the numerical Hessian at the
optimum, mapped back to the reporting scale by the (diagonal) Jacobian
of the inverse transform.

Objective evaluations are batched: every gradient, line-search probe set
and Hessian stencil is evaluated as one vectorized pass over parameter
vectors, which is what makes the simulation studies affordable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.special import betaincinv, expit, gammaln, logit, logsumexp, ndtri, xlog1py, xlogy

from .copulas import (
    FRANK_TAU_MAX,
    CopulaFamily,
    _ccdf_inv_kernel,
    _frank_ccdf_inv_pos,
    _frank_theta_from_abs_tau,
)
from .likelihood import Dataset, ModelSpec, ParamSet, _count_arrays
from .margins import MarginKind
from .quadrature import gauss_legendre_01

__all__ = [
    "FitConfig",
    "FitResult",
    "StdErrorSet",
    "fit",
    "fit_grid",
    "from_unconstrained",
    "to_unconstrained",
]

# clip levels for the inverse transforms; estimates this close to a
# boundary are flagged through FitResult.tau_cap_hit where relevant
_PI_EPS = 1e-12
_DELTA_LOG_BOUND = np.log(1e8)
_DELTA_BETA_EPS = 1e-12
_TAU_CAP = 0.999
_TAU_FLOOR = 1e-7
_ARMIJO_C = 1e-4
_LS_BATCH = 4
_MAX_HALVINGS = 40


@dataclass(frozen=True)
class FitConfig:
    """Optimizer settings.

    grad_tol is on the sup-norm of the unconstrained gradient; obj_tol
    on the relative objective decrease.  hess_step is deliberately
    larger than grad_step: second differences divide by step^2, so the
    step must stay well above the objective's noise floor.
    compute_se=False skips the Hessian entirely (simulation loops).
    """

    nq: int = 25
    max_iter: int = 500
    grad_step: float = 1e-5
    grad_tol: float = 1e-8
    obj_tol: float = 1e-10
    hess_step: float = 1e-3
    start: ParamSet | None = None
    compute_se: bool = True


@dataclass(frozen=True)
class StdErrorSet:
    """Delta-method standard errors, shaped like ParamSet (NaN = unavailable)."""

    pi1: tuple
    pi0: tuple
    delta1: tuple
    delta0: tuple
    tau: tuple


@dataclass(frozen=True)
class FitResult:
    spec: ModelSpec
    estimates: ParamSet | None
    std_errors: StdErrorSet | None
    loglik: float
    converged: bool
    iterations: int
    hessian: np.ndarray | None
    grad_norm: float
    hessian_pd: bool = False
    tau_cap_hit: bool = False
    message: str = ""


def _tau_sign_free(fam):
    return fam is CopulaFamily.BVN or fam is CopulaFamily.FRANK


def _tau_cap(fam):
    return min(_TAU_CAP, FRANK_TAU_MAX) if fam is CopulaFamily.FRANK else _TAU_CAP


def to_unconstrained(params, spec):
    """Map a ParamSet to the optimizer's unconstrained vector (length 6T)."""
    if params.T != spec.T:
        raise ValueError(f"params have T={params.T}, spec expects T={spec.T}")
    pi = np.array(params.pi1 + params.pi0)
    delta = np.array(params.delta1 + params.delta0)
    if spec.margin_kind is MarginKind.NORMAL_LOGIT:
        d_tr = np.log(delta)
    else:
        if np.any(delta >= 1.0):
            raise ValueError("beta-margin delta must lie in (0, 1)")
        d_tr = logit(delta)
    t_tr = np.empty(2 * spec.T)
    for k, fam in enumerate(spec.linking_copulas):
        tau = params.tau[k]
        cap = _tau_cap(fam)
        if _tau_sign_free(fam):
            t_tr[k] = np.arctanh(np.clip(tau, -cap, cap))
        else:
            sign = fam.tau_sign
            if tau * sign <= 0.0:
                raise ValueError(
                    f"tau[{k}]={tau} incompatible with {fam.value} rotation sign"
                )
            t_tr[k] = logit(np.clip(abs(tau), _TAU_FLOOR, cap))
    return np.concatenate([logit(np.clip(pi, _PI_EPS, 1 - _PI_EPS)), d_tr, t_tr])


def _decode_batch(X, spec):
    """Inverse transform for a (B, 6T) batch; returns clipped arrays.

    pi: (B, 2T) with sensitivities first, delta: (B, 2T), tau: (B, 2T),
    plus the per-slot native copula parameters theta: (B, 2T).
    """
    T = spec.T
    X = np.atleast_2d(np.asarray(X, dtype=float))
    pi = np.clip(expit(X[:, : 2 * T]), _PI_EPS, 1 - _PI_EPS)
    draw = X[:, 2 * T : 4 * T]
    if spec.margin_kind is MarginKind.NORMAL_LOGIT:
        delta = np.exp(np.clip(draw, -_DELTA_LOG_BOUND, _DELTA_LOG_BOUND))
    else:
        delta = np.clip(expit(draw), _DELTA_BETA_EPS, 1 - _DELTA_BETA_EPS)
    tau = np.empty((X.shape[0], 2 * T))
    theta = np.empty((X.shape[0], 2 * T))
    for k, fam in enumerate(spec.linking_copulas):
        xk = X[:, 4 * T + k]
        cap = _tau_cap(fam)
        if _tau_sign_free(fam):
            tk = np.clip(np.tanh(xk), -cap, cap)
            # the sign-free transform passes through 0; nudge off the
            # puncture so Frank stays evaluable
            tiny = np.abs(tk) < _TAU_FLOOR
            if np.any(tiny):
                tk = np.where(tiny, np.where(tk < 0, -_TAU_FLOOR, _TAU_FLOOR), tk)
        else:
            tk = fam.tau_sign * np.clip(expit(xk), _TAU_FLOOR, cap)
        tau[:, k] = tk
        if fam is CopulaFamily.BVN:
            theta[:, k] = np.sin(0.5 * np.pi * tk)
        elif fam is CopulaFamily.FRANK:
            theta[:, k] = np.array(
                [np.sign(t) * _frank_theta_from_abs_tau(abs(t)) for t in tk]
            )
        else:
            a = np.abs(tk)
            theta[:, k] = 2.0 * a / (1.0 - a)
    return pi, delta, tau, theta


def from_unconstrained(x, spec):
    """Inverse of to_unconstrained; clips land inside valid domains."""
    pi, delta, tau, _ = _decode_batch(np.asarray(x, dtype=float)[None, :], spec)
    T = spec.T
    return ParamSet(
        pi1=tuple(pi[0, :T]),
        pi0=tuple(pi[0, T:]),
        delta1=tuple(delta[0, :T]),
        delta0=tuple(delta[0, T:]),
        tau=tuple(tau[0]),
    )


def _ccdf_inv_batch(fam, q, u, theta):
    # theta may mix signs across the batch only for Frank, whose
    # negative-parameter copula is the reflection in the conditioning
    # coordinate; everything else dispatches straight to the kernel
    if fam is CopulaFamily.FRANK:
        u_eff = np.where(theta > 0, u, 1.0 - u)
        return _frank_ccdf_inv_pos(q, u_eff, np.abs(theta))
    return _ccdf_inv_kernel(fam, q, u, theta)


class _BatchObjective:
    """Dataset nll evaluated at many unconstrained points per call."""

    def __init__(self, dataset, spec, rule):
        self.spec = spec
        self.rule = rule
        self.y, self.n = _count_arrays(dataset.studies, spec.T)
        self.coef = gammaln(self.n + 1) - gammaln(self.y + 1) - gammaln(
            self.n - self.y + 1
        )
        self.log_w1 = np.log(rule.weights)
        self.n_eval = 0
        # keep per-slot temporaries around ~32 MB
        per_point = self.y.shape[0] * len(rule) ** 2
        self.chunk = max(1, int(4_000_000 // max(per_point, 1)))

    def __call__(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.empty(X.shape[0])
        for lo in range(0, X.shape[0], self.chunk):
            self._eval(X[lo : lo + self.chunk], out[lo : lo + self.chunk])
        self.n_eval += X.shape[0]
        return out

    def _eval(self, X, out):
        spec, rule = self.spec, self.rule
        pi, delta, _, theta = _decode_batch(X, spec)
        B = X.shape[0]
        q1 = q2 = len(rule)
        vq = rule.nodes[None, :, None]  # factor (outer) nodes
        wq = rule.nodes[None, None, :]  # slot (inner) nodes
        w2 = rule.weights
        beta_margins = spec.margin_kind is MarginKind.BETA_IDENTITY
        acc = np.zeros((B, self.y.shape[0], q1))
        for k, fam in enumerate(spec.linking_copulas):
            th = theta[:, k][:, None, None]
            u = _ccdf_inv_batch(fam, wq, vq, th)  # (B, q1, q2)
            if beta_margins:
                g = delta[:, k][:, None, None]
                p = pi[:, k][:, None, None]
                grid = betaincinv(
                    p * (1.0 - g) / g, (1.0 - p) * (1.0 - g) / g, u
                )
            else:
                grid = expit(
                    logit(pi[:, k])[:, None, None]
                    + delta[:, k][:, None, None] * ndtri(u)
                )
            yk = self.y[:, k][None, :, None, None]
            nk = self.n[:, k][None, :, None, None]
            logpmf = (
                self.coef[:, k][None, :, None, None]
                + xlogy(yk, grid[:, None, :, :])
                + xlog1py(nk - yk, -grid[:, None, :, :])
            )
            inner = np.exp(logpmf) @ w2  # (B, N, q1)
            acc += np.log(np.maximum(inner, 1e-300))
        out[:] = -logsumexp(acc + self.log_w1, axis=2).sum(axis=1)


def _gradient(obj, x, step):
    P = x.size
    h = step * np.maximum(1.0, np.abs(x))
    pts = np.tile(x, (2 * P + 1, 1))
    idx = np.arange(P)
    pts[2 * idx, idx] += h
    pts[2 * idx + 1, idx] -= h
    vals = obj(pts)
    g = (vals[0 : 2 * P : 2] - vals[1 : 2 * P + 1 : 2]) / (2.0 * h)
    return g, float(vals[-1])


def _line_search(obj, x, direction, f0, slope):
    # Armijo backtracking, probing _LS_BATCH step sizes per objective call
    for block in range(0, _MAX_HALVINGS, _LS_BATCH):
        alphas = 0.5 ** np.arange(block, block + _LS_BATCH, dtype=float)
        vals = obj(x + alphas[:, None] * direction)
        for a, fv in zip(alphas, vals):
            if np.isfinite(fv) and fv <= f0 + _ARMIJO_C * a * slope:
                return float(a), float(fv)
    return None, None


def _bfgs(obj, x0, cfg):
    """Minimize obj from x0. Returns (x, f, grad, iterations, converged, msg)."""
    x = np.asarray(x0, dtype=float).copy()
    P = x.size
    H = np.eye(P)
    g, f = _gradient(obj, x, cfg.grad_step)
    if not np.isfinite(f):
        return x, f, g, 0, False, "objective not finite at start"
    s_prev = y_prev = None
    for it in range(1, cfg.max_iter + 1):
        if np.max(np.abs(g)) <= cfg.grad_tol:
            return x, f, g, it - 1, True, "gradient tolerance reached"
        direction = -H @ g
        slope = float(direction @ g)
        if slope >= 0.0:  # stale curvature; restart from steepest descent
            H = np.eye(P)
            direction = -g
            slope = float(direction @ g)
        alpha, f_new = _line_search(obj, x, direction, f, slope)
        if alpha is None:
            if not np.allclose(H, np.eye(P)):
                H = np.eye(P)
                direction = -g
                slope = float(direction @ g)
                alpha, f_new = _line_search(obj, x, direction, f, slope)
            if alpha is None:
                return x, f, g, it, False, "line search failed"
        step = alpha * direction
        x = x + step
        g_new, f_check = _gradient(obj, x, cfg.grad_step)
        # curvature update with the standard positivity safeguard
        y_vec = g_new - g
        sy = float(step @ y_vec)
        if sy > 1e-10 * np.linalg.norm(step) * np.linalg.norm(y_vec):
            rho = 1.0 / sy
            V = np.eye(P) - rho * np.outer(step, y_vec)
            H = V @ H @ V.T + rho * np.outer(step, step)
        rel_drop = abs(f - f_new) / (1.0 + abs(f))
        f, g = f_check, g_new
        if rel_drop <= cfg.obj_tol:
            return x, f, g, it, True, "objective tolerance reached"
    return x, f, g, cfg.max_iter, False, "iteration limit reached"


def _hessian(obj, x, step):
    """Dense symmetric Hessian by fourth-order diagonal and second-order
    cross central differences; one batched objective pass."""
    P = x.size
    h = step * np.maximum(1.0, np.abs(x))
    pts = [x]
    for i in range(P):
        for mult in (1.0, -1.0, 2.0, -2.0):
            p = x.copy()
            p[i] += mult * h[i]
            pts.append(p)
    pairs = [(i, j) for i in range(P) for j in range(i + 1, P)]
    for i, j in pairs:
        for si, sj in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
            p = x.copy()
            p[i] += si * h[i]
            p[j] += sj * h[j]
            pts.append(p)
    vals = obj(np.asarray(pts))
    f0 = vals[0]
    hess = np.empty((P, P))
    for i in range(P):
        fp, fm, fp2, fm2 = vals[1 + 4 * i : 5 + 4 * i]
        hess[i, i] = (-fp2 + 16 * fp - 30 * f0 + 16 * fm - fm2) / (12 * h[i] ** 2)
    base = 1 + 4 * P
    for m, (i, j) in enumerate(pairs):
        fpp, fpm, fmp, fmm = vals[base + 4 * m : base + 4 * m + 4]
        hess[i, j] = hess[j, i] = (fpp - fpm - fmp + fmm) / (4 * h[i] * h[j])
    return hess


def _reporting_jacobian(x, spec):
    """|d(reported param)/d(unconstrained coord)| for each coordinate."""
    pi, delta, tau, _ = _decode_batch(x[None, :], spec)
    d_pi = pi[0] * (1 - pi[0])
    if spec.margin_kind is MarginKind.NORMAL_LOGIT:
        d_delta = delta[0]
    else:
        d_delta = delta[0] * (1 - delta[0])
    a = np.abs(tau[0])
    d_tau = np.where(
        [_tau_sign_free(f) for f in spec.linking_copulas],
        1.0 - tau[0] ** 2,
        a * (1.0 - a),
    )
    return np.concatenate([d_pi, d_delta, d_tau])


def _std_errors(hess, x, spec):
    T = spec.T
    try:
        factor = cho_factor(hess)
        cov = cho_solve(factor, np.eye(hess.shape[0]))
    except (LinAlgError, ValueError):
        nan = (float("nan"),) * T
        return StdErrorSet(nan, nan, nan, nan, nan + nan), False
    se_x = np.sqrt(np.maximum(np.diag(cov), 0.0))
    se = _reporting_jacobian(x, spec) * se_x
    return (
        StdErrorSet(
            pi1=tuple(se[:T]),
            pi0=tuple(se[T : 2 * T]),
            delta1=tuple(se[2 * T : 3 * T]),
            delta0=tuple(se[3 * T : 4 * T]),
            tau=tuple(se[4 * T :]),
        ),
        True,
    )


def _default_start(d, spec):
    """Pooled proportions with a continuity correction; mild dependence."""
    T = spec.T
    tp = np.sum([s.tp for s in d.studies], axis=0)
    tn = np.sum([s.tn for s in d.studies], axis=0)
    n1 = sum(s.n_diseased for s in d.studies)
    n0 = sum(s.n_nondiseased for s in d.studies)
    pi1 = (tp + 0.5) / (n1 + 1.0)
    pi0 = (tn + 0.5) / (n0 + 1.0)
    delta = 0.5 if spec.margin_kind is MarginKind.NORMAL_LOGIT else 0.05
    tau = []
    for k, fam in enumerate(spec.linking_copulas):
        if _tau_sign_free(fam):
            tau.append(0.3 if k < T else -0.3)
        else:
            tau.append(0.3 * fam.tau_sign)
    return ParamSet(
        pi1=tuple(pi1), pi0=tuple(pi0),
        delta1=(delta,) * T, delta0=(delta,) * T,
        tau=tuple(tau),
    )


def _tau_cap_hit(params, spec):
    for fam, tau in zip(spec.linking_copulas, params.tau):
        if abs(tau) >= _tau_cap(fam) * (1.0 - 1e-9):
            return True
    return False


def fit(d, spec, cfg=None):
    """Maximize the joint likelihood of a dataset under one model spec."""
    cfg = cfg or FitConfig()
    if not isinstance(d, Dataset):
        raise TypeError("d must be a Dataset")
    if len(d.studies) < 2:
        raise ValueError("fitting requires at least 2 studies")
    if d.T != spec.T:
        raise ValueError(f"dataset has T={d.T}, spec expects T={spec.T}")
    rule = gauss_legendre_01(cfg.nq)
    obj = _BatchObjective(d, spec, rule)
    start = cfg.start if cfg.start is not None else _default_start(d, spec)
    x0 = to_unconstrained(start, spec)
    x, f, g, iters, converged, msg = _bfgs(obj, x0, cfg)
    estimates = from_unconstrained(x, spec)
    hessian = None
    std_errors = None
    hessian_pd = False
    if cfg.compute_se:
        hessian = _hessian(obj, x, cfg.hess_step)
        std_errors, hessian_pd = _std_errors(hessian, x, spec)
    return FitResult(
        spec=spec,
        estimates=estimates,
        std_errors=std_errors,
        loglik=-f,
        converged=converged,
        iterations=iters,
        hessian=hessian,
        grad_norm=float(np.max(np.abs(g))),
        hessian_pd=hessian_pd,
        tau_cap_hit=_tau_cap_hit(estimates, spec),
        message=msg,
    )


def fit_grid(d, specs, cfg=None):
    """Fit several model specs and rank them.

    Order: log-likelihood descending, ties broken by iteration count
    (fewer first) and then by position in the input list.  A spec whose
    fit raises is kept in the output as a failed FitResult rather than
    aborting the scan.
    """
    cfg = cfg or FitConfig()
    results = []
    for spec in specs:
        try:
            results.append(fit(d, spec, cfg))
        except Exception as exc:  # noqa: BLE001 - survey must keep going
            results.append(
                FitResult(
                    spec=spec,
                    estimates=None,
                    std_errors=None,
                    loglik=float("-inf"),
                    converged=False,
                    iterations=0,
                    hessian=None,
                    grad_norm=float("nan"),
                    message=f"fit failed: {exc}",
                )
            )
    order = sorted(
        range(len(results)),
        key=lambda i: (-results[i].loglik, results[i].iterations, i),
    )
    return [results[i] for i in order]
