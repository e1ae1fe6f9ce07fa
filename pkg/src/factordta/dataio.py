"""Dataset ingestion, validation, and result emission.

The on-disk dataset format is one CSV row per (study, test) pair with
columns study,test,tp,n_diseased,tn,n_nondiseased.  Within a study every
test must report the same diseased and non-diseased group sizes: the
gold standard classifies each patient once, so the group totals cannot
differ between tests.  An alternate cell layout (tp,fn,tn,fp) is
accepted and converted on load.

Emission writes plain UTF-8 CSV/JSON next to a manifest that records
the command, configuration, seed, and library version.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .likelihood import Dataset, ModelSpec, ParamSet, StudyRecord

__all__ = [
    "DataValidationError",
    "emit_fit",
    "emit_fit_grid",
    "emit_sim_report",
    "emit_sroc",
    "load_dataset",
    "load_design",
    "write_dataset",
    "write_manifest",
]

_COUNT_HEADER = ["study", "test", "tp", "n_diseased", "tn", "n_nondiseased"]
_CELL_HEADER = ["study", "test", "tp", "fn", "tn", "fp"]


class DataValidationError(ValueError):
    """A dataset file violates the input contract."""


def _parse_int(text, column, line_no):
    try:
        value = int(text)
    except (TypeError, ValueError):
        raise DataValidationError(
            f"line {line_no}: column '{column}' must be an integer, got {text!r}"
        ) from None
    return value


def load_dataset(path, cells=False):
    """Read a dataset CSV; cells=True accepts the tp,fn,tn,fp layout.

    Raises DataValidationError naming the offending line, study, or
    tests for any violated invariant.
    """
    path = Path(path)
    expected = _CELL_HEADER if cells else _COUNT_HEADER
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataValidationError("no studies: file is empty") from None
        if [h.strip().lower() for h in header] != expected:
            raise DataValidationError(
                f"header must be {','.join(expected)}, got {','.join(header)}"
            )
        # rows[study] = {test: (tp, n1, tn, n0, line_no)}
        rows: dict = {}
        order: list = []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 6:
                raise DataValidationError(
                    f"line {line_no}: expected 6 columns, got {len(row)}"
                )
            study = row[0].strip()
            test = _parse_int(row[1], "test", line_no)
            a = _parse_int(row[2], expected[2], line_no)
            b = _parse_int(row[3], expected[3], line_no)
            c = _parse_int(row[4], expected[4], line_no)
            d = _parse_int(row[5], expected[5], line_no)
            if cells:
                tp, n1, tn, n0 = a, a + b, c, c + d
            else:
                tp, n1, tn, n0 = a, b, c, d
            if min(a, b, c, d) < 0:
                raise DataValidationError(f"line {line_no}: negative count")
            if tp > n1:
                raise DataValidationError(
                    f"line {line_no}: tp={tp} exceeds n_diseased={n1} "
                    f"(study {study}, test {test})"
                )
            if tn > n0:
                raise DataValidationError(
                    f"line {line_no}: tn={tn} exceeds n_nondiseased={n0} "
                    f"(study {study}, test {test})"
                )
            if test < 1:
                raise DataValidationError(
                    f"line {line_no}: test indices are 1-based, got {test}"
                )
            if study not in rows:
                rows[study] = {}
                order.append(study)
            if test in rows[study]:
                raise DataValidationError(
                    f"line {line_no}: duplicate row for study {study}, test {test}"
                )
            rows[study][test] = (tp, n1, tn, n0, line_no)
    if not rows:
        raise DataValidationError("no studies: file has a header but no rows")
    T = max(max(tests) for tests in rows.values())
    studies = []
    for study in order:
        tests = rows[study]
        missing = sorted(set(range(1, T + 1)) - set(tests))
        if missing:
            raise DataValidationError(
                f"study {study}: missing test block(s) {missing} "
                f"(every study must report all {T} tests)"
            )
        n1s = {t: tests[t][1] for t in range(1, T + 1)}
        n0s = {t: tests[t][3] for t in range(1, T + 1)}
        if len(set(n1s.values())) > 1 or len(set(n0s.values())) > 1:
            detail = ", ".join(
                f"test {t}: n_diseased={n1s[t]}, n_nondiseased={n0s[t]}"
                for t in range(1, T + 1)
            )
            raise DataValidationError(
                f"study {study}: group sizes differ between tests ({detail}); "
                "the gold standard is the same for the T tests, so each "
                "study has one diseased and one non-diseased group"
            )
        studies.append(
            StudyRecord(
                tp=tuple(tests[t][0] for t in range(1, T + 1)),
                n_diseased=tests[1][1],
                tn=tuple(tests[t][2] for t in range(1, T + 1)),
                n_nondiseased=tests[1][3],
            )
        )
    return Dataset(tuple(studies))


def write_dataset(d, path):
    """Write a Dataset in the load_dataset count layout (round-trips)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_COUNT_HEADER)
        for i, s in enumerate(d.studies, start=1):
            for t in range(d.T):
                writer.writerow(
                    [i, t + 1, s.tp[t], s.n_diseased, s.tn[t], s.n_nondiseased]
                )
    return path


_DESIGN_KEYS = {
    "N", "margin", "copulas", "pi1", "pi0", "delta1", "delta0", "tau",
    "prevalence", "size_dist", "replicates", "seed", "dvine",
}


def load_design(path):
    """Read a simulation design from a JSON config file.

    Required keys: N, margin, copulas, pi1, pi0, delta1, delta0, tau,
    replicates, seed.  Optional: prevalence, size_dist {shape, rate, lag},
    dvine {level1_taus, level2_taus, level3_tau, families}.
    """
    from .margins import MarginKind
    from .simulation import DVineSpec, SimDesign, SizeDist

    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataValidationError(f"{path.name}: not valid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise DataValidationError(f"{path.name}: top level must be an object")
    unknown = sorted(set(raw) - _DESIGN_KEYS)
    if unknown:
        raise DataValidationError(f"{path.name}: unknown key(s) {unknown}")
    missing = sorted(
        k for k in ("N", "margin", "copulas", "pi1", "pi0", "delta1",
                    "delta0", "tau", "replicates", "seed")
        if k not in raw
    )
    if missing:
        raise DataValidationError(f"{path.name}: missing key(s) {missing}")
    try:
        margin = MarginKind(raw["margin"])
    except ValueError:
        tokens = ", ".join(k.value for k in MarginKind)
        raise DataValidationError(
            f"{path.name}: margin must be one of {tokens}, got {raw['margin']!r}"
        ) from None
    try:
        spec = ModelSpec(
            T=len(raw["pi1"]), margin_kind=margin,
            linking_copulas=tuple(raw["copulas"]),
        )
        truth = ParamSet(
            pi1=raw["pi1"], pi0=raw["pi0"],
            delta1=raw["delta1"], delta0=raw["delta0"], tau=raw["tau"],
        )
        size_dist = SizeDist(**raw.get("size_dist", {}))
        dvine = None
        if raw.get("dvine") is not None:
            dvine = DVineSpec(
                level1_taus=tuple(raw["dvine"]["level1_taus"]),
                level2_taus=tuple(raw["dvine"]["level2_taus"]),
                level3_tau=raw["dvine"]["level3_tau"],
                families=tuple(raw["dvine"]["families"]),
            )
        return SimDesign(
            N=raw["N"], spec=spec, truth=truth,
            replicates=raw["replicates"], seed=raw["seed"],
            prevalence=raw.get("prevalence", 0.4),
            size_dist=size_dist, dvine=dvine,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataValidationError(f"{path.name}: invalid design ({exc})") from None


def _param_rows(result):
    T = result.spec.T
    est = result.estimates
    se = result.std_errors
    groups = (("pi1", est.pi1), ("pi0", est.pi0),
              ("delta1", est.delta1), ("delta0", est.delta0))
    rows = []
    for name, values in groups:
        se_vals = getattr(se, name) if se is not None else (float("nan"),) * T
        for t in range(T):
            rows.append((f"{name}_{t + 1}", values[t], se_vals[t]))
    se_tau = se.tau if se is not None else (float("nan"),) * (2 * T)
    for k in range(2 * T):
        group = "tau1" if k < T else "tau0"
        rows.append((f"{group}_{k % T + 1}", est.tau[k], se_tau[k]))
    return rows


def _fmt(x):
    return "NA" if not np.isfinite(x) else format(float(x), ".10g")


def _spec_tokens(spec):
    return {
        "T": spec.T,
        "margin": spec.margin_kind.value,
        "copulas": [f.value for f in spec.linking_copulas],
    }


def emit_fit(result, out_dir, fmt="csv"):
    """Write one fit: parameter table (+ convergence) or a JSON bundle.

    CSV mode writes fit.csv (6T parameter rows + a loglik row, with NA
    for unavailable standard errors) and convergence.csv.  JSON mode
    writes fit.json including the unconstrained-scale Hessian.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if result.estimates is None:
        raise ValueError("cannot emit a failed fit (no estimates)")
    written = []
    if fmt == "csv":
        fit_path = out / "fit.csv"
        with fit_path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["parameter", "estimate", "se"])
            for name, value, se in _param_rows(result):
                writer.writerow([name, _fmt(value), _fmt(se)])
            writer.writerow(["loglik", _fmt(result.loglik), "NA"])
        conv_path = out / "convergence.csv"
        with conv_path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["converged", "iterations", "grad_norm", "hessian_pd",
                 "tau_cap_hit", "message"]
            )
            writer.writerow(
                [result.converged, result.iterations, _fmt(result.grad_norm),
                 result.hessian_pd, result.tau_cap_hit, result.message]
            )
        written += [fit_path, conv_path]
    elif fmt == "json":
        payload = {
            "spec": _spec_tokens(result.spec),
            "parameters": [
                {"name": name, "estimate": value,
                 "se": None if not np.isfinite(se) else se}
                for name, value, se in _param_rows(result)
            ],
            "loglik": result.loglik,
            "convergence": {
                "converged": result.converged,
                "iterations": result.iterations,
                "grad_norm": result.grad_norm,
                "hessian_pd": result.hessian_pd,
                "tau_cap_hit": result.tau_cap_hit,
                "message": result.message,
            },
            "hessian_unconstrained": None
            if result.hessian is None
            else np.asarray(result.hessian).tolist(),
        }
        fit_path = out / "fit.json"
        fit_path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
        written.append(fit_path)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return written


def emit_fit_grid(results, out_dir):
    """Write the model-scan ranking table (already sorted by loglik)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "fit_grid.csv"
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["rank", "margin", "copulas", "loglik", "converged", "iterations",
             "message"]
        )
        for rank, r in enumerate(results, start=1):
            writer.writerow(
                [rank, r.spec.margin_kind.value,
                 "+".join(f.value for f in r.spec.linking_copulas),
                 "-inf" if r.loglik == float("-inf") else _fmt(r.loglik),
                 r.converged, r.iterations, r.message]
            )
    return [path]


def _q_token(q):
    return format(q, "g")


def emit_sroc(curves, contours, out_dir, margin_kind=None):
    """Write SROC curve and contour files.

    Curves: sroc_test<t>_q<q>_<direction>.csv with probability-scale and
    link-scale columns (the link is logit for normal margins, identity
    for beta).  Contours: contour_test<t>.csv in long format.
    """
    from scipy.special import logit

    from .margins import MarginKind

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    identity_link = margin_kind is MarginKind.BETA_IDENTITY
    written = []
    for c in curves:
        name = f"sroc_test{c.test}_q{_q_token(c.quantile_q)}_{c.direction}.csv"
        path = out / name
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["spec_prob", "sens_prob", "spec_link", "sens_link"])
            for x0, x1 in c.points:
                if identity_link:
                    l0, l1 = x0, x1
                else:
                    l0, l1 = float(logit(x0)), float(logit(x1))
                writer.writerow([_fmt(x0), _fmt(x1), _fmt(l0), _fmt(l1)])
        written.append(path)
    for g in contours:
        path = out / f"contour_test{g.test}.csv"
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x0", "x1", "density"])
            for i, w1 in enumerate(g.grid_x1):
                for j, w0 in enumerate(g.grid_x0):
                    writer.writerow([_fmt(w0), _fmt(w1), _fmt(g.density[i, j])])
        written.append(path)
    return written


def emit_sim_report(report, out_dir):
    """Write one CSV (stat rows by parameter columns) and one JSON per
    fitted spec of a simulation study."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for tab in report.tables:
        slug = (
            f"{tab.spec.margin_kind.value}_"
            + "-".join(f.value for f in tab.spec.linking_copulas)
        )
        path = out / f"sim_report_{slug}.csv"
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["stat"] + list(tab.parameter_names))
            for stat, values in (
                ("bias", tab.bias),
                ("sd", tab.sd),
                ("sqrt_mean_var", tab.sqrt_mean_var),
                ("rmse", tab.rmse),
            ):
                writer.writerow([stat] + [_fmt(v) for v in values])
        meta = out / f"sim_report_{slug}.json"
        meta.write_text(
            json.dumps(
                {
                    "spec": _spec_tokens(tab.spec),
                    "truth": list(tab.truth),
                    "replicates": tab.replicates,
                    "n_converged": tab.n_converged,
                    "n_failed": tab.n_failed,
                    "convergence_rate": tab.convergence_rate,
                },
                indent=2,
            )
            + "\n",
            encoding="utf-8",
        )
        written += [path, meta]
    return written


def write_manifest(out_dir, command, config, seed=None):
    """Record what produced the files in out_dir."""
    from . import __version__

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "manifest.json"
    payload = {
        "command": command,
        "config": config,
        "seed": seed,
        "version": __version__,
    }
    path.write_text(json.dumps(payload, indent=2, default=str) + "\n",
                    encoding="utf-8")
    return path
