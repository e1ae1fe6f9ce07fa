"""Command-line interface.

Subcommands:

  validate   check a dataset file and report its dimensions
  fit        fit one model spec and write the parameter table
  fit-grid   fit a margin x copula grid and write the ranking
  sroc       fit, then write SROC quantile curves and density contours
  simulate   draw one synthetic dataset from a design config
  sim-study  run a full simulation study and write the summary tables

Copula specs are given as one shorthand token ("bvn", "frank", "cln0",
"cln0-270" meaning sensitivity block then specificity block) or as an
explicit comma list of 2T per-slot families.  Exit codes: 0 success,
2 invalid input, 3 numerical failure, 4 non-convergence under --strict.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .copulas import CopulaFamily
from .dataio import (
    DataValidationError,
    emit_fit,
    emit_fit_grid,
    emit_sim_report,
    emit_sroc,
    load_dataset,
    load_design,
    write_dataset,
    write_manifest,
)
from .estimation import FitConfig, fit, fit_grid
from .likelihood import ModelSpec
from .margins import MarginKind, MarginSpec
from .simulation import replicate_rng, run_sim_study, simulate_dataset
from .sroc import default_pair_family, density_contour, quantile_curve, within_test_tau

__all__ = ["main"]

_GRID_MARGINS = "normal,beta"
_GRID_COPULAS = "bvn,frank,cln0-90,cln0-270,cln180-270"


def _split(text):
    return [t.strip().lower() for t in text.split(",") if t.strip()]


def _family(token):
    try:
        return CopulaFamily(token)
    except ValueError:
        names = ", ".join(f.value for f in CopulaFamily)
        raise ValueError(
            f"unknown copula family {token!r} (choose from {names})"
        ) from None


def _margin(token):
    try:
        return MarginKind(token)
    except ValueError:
        names = ", ".join(k.value for k in MarginKind)
        raise ValueError(
            f"unknown margin {token!r} (choose from {names})"
        ) from None


def _expand_shorthand(token, T):
    """One token to 2T slot families: "fam", or "famA-famB" blockwise."""
    if "-" in token:
        left, right = token.split("-", 1)
        # "cln0-270" abbreviates the rotation of the second block
        if right.isdigit():
            right = "cln" + right
        return (_family(left),) * T + (_family(right),) * T
    return (_family(token),) * (2 * T)


def _parse_copulas(text, T):
    parts = _split(text)
    if len(parts) == 2 * T:
        return tuple(_family(p) for p in parts)
    if len(parts) == 1:
        return _expand_shorthand(parts[0], T)
    raise ValueError(
        f"--copulas needs one shorthand token or {2 * T} per-slot tokens, "
        f"got {len(parts)}"
    )


def _grid_specs(margin_text, copulas_text, T):
    margins = [_margin(tok) for tok in _split(margin_text)]
    tokens = _split(copulas_text)
    if not margins or not tokens:
        raise ValueError("--margin and --copulas must each list at least one token")
    return [
        ModelSpec(T=T, margin_kind=m, linking_copulas=_expand_shorthand(tok, T))
        for m in margins
        for tok in tokens
    ]


def _manifest_config(args):
    skip = {"func", "command"}
    return {k: v for k, v in vars(args).items() if k not in skip}


def _report_written(paths):
    for p in paths:
        print(f"wrote {p}")


def _finish(args, result):
    """Shared tail for fitting commands: honesty line plus strict gate."""
    print(
        f"converged: {result.converged} ({result.iterations} iterations, "
        f"{result.message})"
    )
    print(f"loglik: {result.loglik:.6g}")
    if result.converged and not result.hessian_pd:
        print("note: Hessian not positive definite, standard errors withheld")
    if getattr(args, "strict", False) and not result.converged:
        print("error: fit did not converge (--strict)", file=sys.stderr)
        return 4
    return 0


def _cmd_validate(args):
    d = load_dataset(args.data, cells=args.cells)
    print(f"ok: {len(d.studies)} studies, {d.T} tests")
    return 0


def _cmd_fit(args):
    d = load_dataset(args.data, cells=args.cells)
    spec = ModelSpec(
        T=d.T,
        margin_kind=_margin(args.margin),
        linking_copulas=_parse_copulas(args.copulas, d.T),
    )
    cfg = FitConfig(nq=args.nq, max_iter=args.max_iter)
    result = fit(d, spec, cfg)
    out = Path(args.out)
    written = emit_fit(result, out, fmt=args.format)
    written.append(write_manifest(out, "fit", _manifest_config(args)))
    _report_written(written)
    return _finish(args, result)


def _cmd_fit_grid(args):
    d = load_dataset(args.data, cells=args.cells)
    specs = _grid_specs(args.margin, args.copulas, d.T)
    cfg = FitConfig(nq=args.nq, max_iter=args.max_iter)
    results = fit_grid(d, specs, cfg)
    out = Path(args.out)
    written = emit_fit_grid(results, out)
    best = results[0]
    if best.estimates is not None:
        written += emit_fit(best, out, fmt="csv")
    written.append(write_manifest(out, "fit-grid", _manifest_config(args)))
    _report_written(written)
    if best.estimates is None:
        print("error: every spec in the grid failed", file=sys.stderr)
        return 3
    label = "+".join(f.value for f in best.spec.linking_copulas)
    print(f"best: {best.spec.margin_kind.value} {label} loglik={best.loglik:.6g}")
    return _finish(args, best)


def _cmd_sroc(args):
    d = load_dataset(args.data, cells=args.cells)
    spec = ModelSpec(
        T=d.T,
        margin_kind=_margin(args.margin),
        linking_copulas=_parse_copulas(args.copulas, d.T),
    )
    quantiles = [float(tok) for tok in _split(args.quantiles)]
    if not quantiles:
        raise ValueError("--quantiles must list at least one value")
    override = _family(args.pair_copula) if args.pair_copula else None
    cfg = FitConfig(nq=args.nq, max_iter=args.max_iter)
    result = fit(d, spec, cfg)
    est = result.estimates
    curves, contours = [], []
    for t in range(d.T):
        tau_pair = within_test_tau(est.tau[t], est.tau[d.T + t])
        fam = override or default_pair_family(spec.linking_copulas[t], tau_pair)
        m1 = MarginSpec(spec.margin_kind, est.pi1[t], est.delta1[t])
        m0 = MarginSpec(spec.margin_kind, est.pi0[t], est.delta0[t])
        for q in quantiles:
            for direction in ("x1_on_x0", "x0_on_x1"):
                curves.append(
                    quantile_curve(
                        m1, m0, fam, tau_pair, q,
                        direction=direction, grid_size=args.grid_size,
                        test=t + 1,
                    )
                )
        contours.append(
            density_contour(m1, m0, fam, tau_pair, grid_size=args.grid_size,
                            test=t + 1)
        )
    out = Path(args.out)
    written = emit_fit(result, out, fmt="csv")
    written += emit_sroc(curves, contours, out, margin_kind=spec.margin_kind)
    written.append(write_manifest(out, "sroc", _manifest_config(args)))
    _report_written(written)
    return _finish(args, result)


def _cmd_simulate(args):
    design = load_design(args.truth)
    seed = design.seed if args.seed is None else args.seed
    rng = replicate_rng(seed, args.replicate)
    d = simulate_dataset(design, rng)
    out = Path(args.out)
    written = [write_dataset(d, out / "dataset.csv")]
    written.append(write_manifest(out, "simulate", _manifest_config(args), seed=seed))
    _report_written(written)
    print(f"simulated {len(d.studies)} studies, {d.T} tests (replicate {args.replicate})")
    return 0


def _cmd_sim_study(args):
    design = load_design(args.truth)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.replicates is not None:
        overrides["replicates"] = args.replicates
    if overrides:
        design = replace(design, **overrides)
    if args.margin is None and args.copulas is None:
        specs = [design.spec]
    elif args.copulas is None:
        # keep the generating slot families, vary only the margin
        specs = [
            replace(design.spec, margin_kind=_margin(tok))
            for tok in _split(args.margin)
        ]
    else:
        specs = _grid_specs(
            args.margin or design.spec.margin_kind.value,
            args.copulas,
            design.spec.T,
        )
    cfg = FitConfig(nq=args.nq, max_iter=args.max_iter,
                    compute_se=not args.no_se)
    report = run_sim_study(design, specs, cfg)
    out = Path(args.out)
    written = emit_sim_report(report, out)
    written.append(
        write_manifest(out, "sim-study", _manifest_config(args), seed=design.seed)
    )
    _report_written(written)
    for tab in report.tables:
        label = "+".join(f.value for f in tab.spec.linking_copulas)
        print(
            f"{tab.spec.margin_kind.value} {label}: "
            f"{tab.n_converged}/{tab.replicates} converged, "
            f"{tab.n_failed} failed"
        )
    return 0


def _add_data_opts(sp):
    sp.add_argument("--data", required=True, help="dataset CSV path")
    sp.add_argument(
        "--cells", action="store_true",
        help="input columns are tp,fn,tn,fp instead of counts with group sizes",
    )


def _add_fit_opts(sp, margin_default, copulas_default):
    sp.add_argument("--margin", default=margin_default,
                    help=f"margin family (default: {margin_default})")
    sp.add_argument("--copulas", default=copulas_default,
                    help=f"copula spec (default: {copulas_default})")
    sp.add_argument("--nq", type=int, default=25,
                    help="quadrature nodes per level (default: 25)")
    sp.add_argument("--max-iter", type=int, default=500,
                    help="optimizer iteration cap (default: 500)")
    sp.add_argument("--strict", action="store_true",
                    help="exit 4 if the fit does not converge")


def _add_out_opt(sp):
    sp.add_argument("--out", default="out", help="output directory (default: out)")


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="factordta",
        description="Joint meta-analysis of diagnostic tests with a "
                    "one-factor copula mixed model.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("validate", help="check a dataset file")
    _add_data_opts(sp)
    sp.set_defaults(func=_cmd_validate)

    sp = sub.add_parser("fit", help="fit one model spec")
    _add_data_opts(sp)
    _add_fit_opts(sp, "normal", "cln0-270")
    sp.add_argument("--format", choices=("csv", "json"), default="csv",
                    help="output format (default: csv)")
    _add_out_opt(sp)
    sp.set_defaults(func=_cmd_fit)

    sp = sub.add_parser("fit-grid", help="fit and rank a grid of model specs")
    _add_data_opts(sp)
    _add_fit_opts(sp, _GRID_MARGINS, _GRID_COPULAS)
    _add_out_opt(sp)
    sp.set_defaults(func=_cmd_fit_grid)

    sp = sub.add_parser("sroc", help="fit, then write SROC curves and contours")
    _add_data_opts(sp)
    _add_fit_opts(sp, "normal", "cln0-270")
    sp.add_argument("--quantiles", default="0.01,0.5,0.99",
                    help="quantile levels, comma separated (default: 0.01,0.5,0.99)")
    sp.add_argument("--pair-copula", default=None,
                    help="override the within-test pair family (one token)")
    sp.add_argument("--grid-size", type=int, default=201,
                    help="points per curve axis (default: 201)")
    _add_out_opt(sp)
    sp.set_defaults(func=_cmd_sroc)

    sp = sub.add_parser("simulate", help="draw one dataset from a design config")
    sp.add_argument("--truth", required=True, help="design config JSON path")
    sp.add_argument("--seed", type=int, default=None,
                    help="override the config seed")
    sp.add_argument("--replicate", type=int, default=0,
                    help="replicate index within the seed stream (default: 0)")
    _add_out_opt(sp)
    sp.set_defaults(func=_cmd_simulate)

    sp = sub.add_parser("sim-study", help="run a simulation study")
    sp.add_argument("--truth", required=True, help="design config JSON path")
    sp.add_argument("--seed", type=int, default=None,
                    help="override the config seed")
    sp.add_argument("--replicates", type=int, default=None,
                    help="override the config replicate count")
    sp.add_argument("--margin", default=None,
                    help="margin(s) to fit (default: the generating margin)")
    sp.add_argument("--copulas", default=None,
                    help="copula spec(s) to fit (default: the generating spec)")
    sp.add_argument("--nq", type=int, default=25,
                    help="quadrature nodes per level (default: 25)")
    sp.add_argument("--max-iter", type=int, default=500,
                    help="optimizer iteration cap (default: 500)")
    sp.add_argument("--no-se", action="store_true",
                    help="skip standard errors (sqrt_mean_var becomes NA)")
    _add_out_opt(sp)
    sp.set_defaults(func=_cmd_sim_study)

    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DataValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except np.linalg.LinAlgError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except ArithmeticError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except (TypeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
