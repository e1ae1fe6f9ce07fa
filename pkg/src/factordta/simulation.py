"""Synthetic meta-analysis generation and simulation studies.

Data generation follows the five-step recipe: draw a dependence vector
of 2T latent uniforms, transform each to a study-level sensitivity or
specificity through its margin, draw a study size from a shifted gamma
distribution, split it into diseased/non-diseased groups binomially,
then draw the observed counts.  The latent vector comes either from the
one-factor copula itself or, for the misspecification study, from a
4-dimensional D-vine over (U_11, U_01, U_12, U_02).

Replicate RNG streams are counter-based Philox generators keyed by
(seed, replicate), so any replicate can be regenerated in isolation and
the replicate order never matters.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .copulas import CopulaFamily, ccdf, ccdf_inv, theta_from_tau
from .estimation import FitConfig, fit, to_unconstrained
from .likelihood import Dataset, ModelSpec, ParamSet, StudyRecord, _slot_margins
from .margins import prob_from_u

__all__ = [
    "DVineSpec",
    "SimDesign",
    "SimStudyReport",
    "SimTable",
    "SizeDist",
    "run_sim_study",
    "sample_dvine4",
    "sample_one_factor_copula",
    "simulate_dataset",
]


@dataclass(frozen=True)
class SizeDist:
    """Shifted gamma study-size law: n = round(lag + Gamma(shape, rate)).

    The second gamma parameter acts as a RATE, giving mean study size
    lag + shape/rate (150 with the defaults), which is the only reading
    that produces realistic meta-analysis study sizes.
    """

    shape: float = 1.2
    rate: float = 0.01
    lag: float = 30.0

    def __post_init__(self):
        if self.shape <= 0 or self.rate <= 0:
            raise ValueError("shape and rate must be positive")
        if self.lag < 0:
            raise ValueError("lag must be nonnegative")


@dataclass(frozen=True)
class DVineSpec:
    """4-dimensional D-vine on the variable order (U_11, U_01, U_12, U_02).

    Three adjacent-pair edges at level 1, two at level 2, one at level 3;
    families run level by level in that order.
    """

    level1_taus: tuple
    level2_taus: tuple
    level3_tau: float
    families: tuple

    def __post_init__(self):
        l1 = tuple(float(t) for t in self.level1_taus)
        l2 = tuple(float(t) for t in self.level2_taus)
        fams = tuple(CopulaFamily(f) for f in self.families)
        object.__setattr__(self, "level1_taus", l1)
        object.__setattr__(self, "level2_taus", l2)
        object.__setattr__(self, "level3_tau", float(self.level3_tau))
        object.__setattr__(self, "families", fams)
        if len(l1) != 3:
            raise ValueError("a 4-dimensional D-vine has 3 level-1 edges")
        if len(l2) != 2:
            raise ValueError("level 2 has 2 edges")
        if len(fams) != 6:
            raise ValueError("need 6 edge families (3 + 2 + 1)")

    @property
    def taus(self):
        return self.level1_taus + self.level2_taus + (self.level3_tau,)


@dataclass(frozen=True)
class SimDesign:
    """Everything needed to regenerate a simulation study from its seed."""

    N: int
    spec: ModelSpec
    truth: ParamSet
    replicates: int
    seed: int
    prevalence: float = 0.4
    size_dist: SizeDist = SizeDist()
    dvine: DVineSpec | None = None

    def __post_init__(self):
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "replicates", int(self.replicates))
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "prevalence", float(self.prevalence))
        if self.N < 1:
            raise ValueError("N must be positive")
        if self.replicates < 1:
            raise ValueError("replicates must be positive")
        if not 0.0 < self.prevalence < 1.0:
            raise ValueError("prevalence must lie in (0, 1)")
        if self.spec.T != self.truth.T:
            raise ValueError("spec and truth disagree on T")
        if self.dvine is not None and self.spec.T != 2:
            raise ValueError("the D-vine generator is 4-dimensional (T = 2)")


def _slot_params(taus, families):
    return [theta_from_tau(CopulaFamily(f), t) for f, t in zip(families, taus)]


def sample_one_factor_copula(taus, families, rng, size=None, return_factor=False):
    """Draw latent uniforms from the one-factor copula.

    Returns shape (2T,) for size=None, else (size, 2T).  Components are
    conditionally independent given the factor: u_k = ccdf_inv(w_k | v).
    return_factor=True also returns the factor draws (for diagnostics).
    """
    params = _slot_params(taus, families)
    n = 1 if size is None else int(size)
    v = rng.random(n)
    w = rng.random((n, len(params)))
    tiny = np.finfo(float).tiny
    v = np.clip(v, tiny, 1.0 - 1e-16)
    w = np.clip(w, tiny, 1.0 - 1e-16)
    out = np.empty_like(w)
    for k, p in enumerate(params):
        out[:, k] = ccdf_inv(p, w[:, k], v)
    if size is None:
        return (out[0], v[0]) if return_factor else out[0]
    return (out, v) if return_factor else out


def _h(p, v, u):
    return ccdf(p, v, u)


def _hinv(p, q, u):
    return ccdf_inv(p, q, u)


def _h_t(p, v, u):
    # conditional of the FIRST copula argument given the second: the
    # ccdf of the transposed family at the same parameter
    pt = theta_from_tau(p.family.transposed, _signed_tau(p))
    return ccdf(pt, v, u)


def _signed_tau(p):
    from .copulas import tau_from_theta

    return tau_from_theta(p)


def sample_dvine4(level1_taus, level2_taus, level3_tau, families, rng, size=None):
    """Draw from the 4-dimensional D-vine by inverse Rosenblatt transform.

    Edges: level 1 links adjacent variables (1,2), (2,3), (3,4); level 2
    links (1,3 | 2) and (2,4 | 3); level 3 links (1,4 | 2,3).  families
    lists the six edge copulas in that order.
    """
    dv = DVineSpec(tuple(level1_taus), tuple(level2_taus), level3_tau, tuple(families))
    e12, e23, e34, e13, e24, e14 = _slot_params(dv.taus, dv.families)
    n = 1 if size is None else int(size)
    w = rng.random((n, 4))
    tiny = np.finfo(float).tiny
    w = np.clip(w, tiny, 1.0 - 1e-16)

    x1 = w[:, 0]
    x2 = _hinv(e12, w[:, 1], x1)
    # conditional cdfs of the tree-1 variables given their neighbours
    f1_2 = _h_t(e12, x1, x2)      # F(x1 | x2)
    x3 = _hinv(e23, _hinv(e13, w[:, 2], f1_2), x2)
    f3_2 = _h(e23, x3, x2)        # F(x3 | x2)
    f1_23 = _h_t(e13, f1_2, f3_2)  # F(x1 | x2, x3)
    f2_3 = _h_t(e23, x2, x3)      # F(x2 | x3)
    a = _hinv(e14, w[:, 3], f1_23)
    b = _hinv(e24, a, f2_3)
    x4 = _hinv(e34, b, x3)
    out = np.column_stack([x1, x2, x3, x4])
    return out[0] if size is None else out


def _draw_latent(design, rng):
    if design.dvine is None:
        return sample_one_factor_copula(
            design.truth.tau, design.spec.linking_copulas, rng
        )
    dv = design.dvine
    # vine order (U_11, U_01, U_12, U_02) -> slot order (U_11, U_12, U_01, U_02)
    u = sample_dvine4(dv.level1_taus, dv.level2_taus, dv.level3_tau, dv.families, rng)
    return u[[0, 2, 1, 3]]


def simulate_dataset(design, rng):
    """Generate one synthetic dataset; consumes the rng sequentially."""
    margins = _slot_margins(design.spec, design.truth)
    sd = design.size_dist
    studies = []
    for _ in range(design.N):
        u = _draw_latent(design, rng)
        x = np.array([prob_from_u(m, uk) for m, uk in zip(margins, u)])
        n = int(np.rint(sd.lag + rng.gamma(sd.shape, 1.0 / sd.rate)))
        n1 = int(rng.binomial(n, design.prevalence))
        n0 = n - n1
        T = design.spec.T
        tp = tuple(int(rng.binomial(n1, x[t])) for t in range(T))
        tn = tuple(int(rng.binomial(n0, x[T + t])) for t in range(T))
        studies.append(StudyRecord(tp=tp, n_diseased=n1, tn=tn, n_nondiseased=n0))
    return Dataset(tuple(studies))


@dataclass(frozen=True)
class SimTable:
    """Bias/SD/RMSE/sqrt(mean theoretical variance) for one fitted spec.

    All four rows are on the x100 scale used in the reference tables.
    sqrt_mean_var is NaN when standard errors were not computed or never
    available.  Only converged replicates enter the statistics.
    """

    spec: ModelSpec
    parameter_names: tuple
    truth: tuple
    bias: tuple
    sd: tuple
    rmse: tuple
    sqrt_mean_var: tuple
    n_converged: int
    n_failed: int
    replicates: int

    @property
    def convergence_rate(self):
        return self.n_converged / self.replicates


@dataclass(frozen=True)
class SimStudyReport:
    design: SimDesign
    tables: tuple

    def table_for(self, spec):
        for t in self.tables:
            if t.spec == spec:
                return t
        raise KeyError("no table for that spec")


def _param_names(T):
    names = []
    for group in ("pi1", "pi0", "delta1", "delta0"):
        names += [f"{group}_{t + 1}" for t in range(T)]
    names += [f"tau1_{t + 1}" for t in range(T)]
    names += [f"tau0_{t + 1}" for t in range(T)]
    return tuple(names)


def _param_vector(params):
    return np.array(
        params.pi1 + params.pi0 + params.delta1 + params.delta0 + params.tau
    )


def _se_vector(se):
    if se is None:
        return None
    vec = np.array(se.pi1 + se.pi0 + se.delta1 + se.delta0 + se.tau)
    return vec if np.all(np.isfinite(vec)) else None


def _start_for(truth, fit_spec):
    # warm-starting at the generating truth is valid only when the truth
    # parameters are representable under the fitted spec
    try:
        to_unconstrained(truth, fit_spec)
    except (ValueError, TypeError):
        return None
    return truth


def replicate_rng(seed, replicate):
    """The Philox stream for one replicate of a study keyed by its seed."""
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence((seed, replicate)))
    )


def run_sim_study(design, fit_specs, cfg=None):
    """Simulate, fit every spec per replicate, and tabulate the errors.

    Non-converged fits are excluded from the statistics but counted;
    fits that raise are counted as failures.  Replicate r of the study
    always uses replicate_rng(design.seed, r), so partial reruns agree
    with full ones.
    """
    if design.replicates < 2:
        raise ValueError("a simulation study needs at least 2 replicates")
    cfg = cfg or FitConfig()
    fit_specs = list(fit_specs)
    estimates = [[] for _ in fit_specs]
    variances = [[] for _ in fit_specs]
    failed = [0 for _ in fit_specs]
    nonconv = [0 for _ in fit_specs]
    starts = [
        cfg.start if cfg.start is not None else _start_for(design.truth, fs)
        for fs in fit_specs
    ]
    for rep in range(design.replicates):
        rng = replicate_rng(design.seed, rep)
        data = simulate_dataset(design, rng)
        for i, fs in enumerate(fit_specs):
            try:
                res = fit(data, fs, replace(cfg, start=starts[i]))
            except Exception:  # noqa: BLE001 - tabulated, not fatal
                failed[i] += 1
                continue
            if not res.converged:
                nonconv[i] += 1
                continue
            estimates[i].append(_param_vector(res.estimates))
            sevec = _se_vector(res.std_errors)
            if sevec is not None:
                variances[i].append(sevec**2)
    truth_vec = _param_vector(design.truth)
    names = _param_names(design.spec.T)
    tables = []
    for i, fs in enumerate(fit_specs):
        est = np.array(estimates[i])
        if est.size == 0:
            nan = (float("nan"),) * truth_vec.size
            tables.append(
                SimTable(fs, names, tuple(truth_vec), nan, nan, nan, nan,
                         0, failed[i], design.replicates)
            )
            continue
        err = est - truth_vec
        bias = err.mean(axis=0)
        # population SD so that rmse^2 = bias^2 + sd^2 is an identity
        sd = est.std(axis=0, ddof=0)
        rmse = np.sqrt((err**2).mean(axis=0))
        if variances[i]:
            smv = np.sqrt(np.mean(np.array(variances[i]), axis=0))
        else:
            smv = np.full(truth_vec.size, np.nan)
        tables.append(
            SimTable(
                spec=fs,
                parameter_names=names,
                truth=tuple(truth_vec),
                bias=tuple(100.0 * bias),
                sd=tuple(100.0 * sd),
                rmse=tuple(100.0 * rmse),
                sqrt_mean_var=tuple(100.0 * smv),
                n_converged=len(estimates[i]),
                n_failed=failed[i],
                replicates=design.replicates,
            )
        )
    return SimStudyReport(design=design, tables=tuple(tables))
