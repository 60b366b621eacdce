"""Batch command-line front end.

Commands: fit, simulate, efficiency, bootstrap, gaussian-oracle. Every
stochastic command takes a seed and is a pure function of (inputs, config,
seed); reports are JSON with fixed key order and 12 significant digits, plus
aligned plain-text tables where applicable.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from . import __version__
from .asymptotics import (
    EfficiencyConfig,
    bootstrap_se,
    efficiency_study,
    ml_fisher_ci,
    trivariate_gaussian_analytic,
)
from .copulas import Family
from .estimation import VineSkeleton, fit as fit_dispatch
from .exceptions import DomainError, VinefitError
from .margins import MarginFamily, MarginModel, marg_quantile, pseudo_observations
from .vine import (
    make_spec,
    n_edges,
    parameter_labels,
    simulate,
    spec_to_dict,
)

FAMILY_ALIASES = {
    "gaussian": Family.GAUSSIAN,
    "t": Family.STUDENT_T,
    "gumbel": Family.GUMBEL,
    "indep": Family.INDEPENDENCE,
}


def _fmt(x):
    return float(f"{float(x):.12g}")


def _round_floats(obj):
    if isinstance(obj, (float, np.floating)):
        return _fmt(obj)
    if isinstance(obj, (int, np.integer, str, bool)) or obj is None:
        return obj
    if isinstance(obj, dict):
        return {k: _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, np.ndarray):
        return _round_floats(obj.tolist())
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v) for v in obj]
    return obj


def write_report(report, path):
    text = json.dumps(_round_floats(report), indent=2)
    if path:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def read_csv(path, drop_nonpositive=False):
    """Strict CSV contract: one header row, comma separator, finite decimal
    floats; offending rows are reported with their line numbers."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DomainError(f"{path}: empty file") from None
        rows, bad_lines = [], []
        kept, dropped = 0, 0
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                vals = [float(v) for v in row]
            except ValueError:
                bad_lines.append(lineno)
                continue
            if len(vals) != len(header) or not all(np.isfinite(v) for v in vals):
                bad_lines.append(lineno)
                continue
            if drop_nonpositive and any(v <= 0.0 for v in vals):
                dropped += 1
                continue
            rows.append(vals)
            kept += 1
        if bad_lines:
            shown = ", ".join(map(str, bad_lines[:20]))
            raise DomainError(
                f"{path}: {len(bad_lines)} row(s) with non-numeric or non-finite "
                f"values (lines {shown}{'...' if len(bad_lines) > 20 else ''})"
            )
        if not rows:
            raise DomainError(f"{path}: no usable data rows")
    return header, np.array(rows), dropped


def write_csv(path, header, mat):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in mat:
            writer.writerow([f"{v:.12g}" for v in row])


def _parse_families(text, parser):
    fams = []
    for tok in text.split(","):
        tok = tok.strip().lower()
        if tok not in FAMILY_ALIASES:
            parser.error(
                f"unknown copula family {tok!r}; expected one of {sorted(FAMILY_ALIASES)}"
            )
        fams.append(FAMILY_ALIASES[tok])
    return fams


def _parse_margin_families(text, parser):
    out = []
    for tok in text.split(","):
        name = tok.strip().lower().split(":")[0]
        try:
            out.append(MarginFamily(name))
        except ValueError:
            parser.error(f"unknown margin family {name!r}")
    return out


def _parse_margin_models(text, parser):
    out = []
    for tok in text.split(","):
        parts = tok.strip().lower().split(":")
        try:
            fam = MarginFamily(parts[0])
            params = tuple(float(p) for p in parts[1:])
            out.append(MarginModel(fam, params))
        except (ValueError, DomainError) as exc:
            parser.error(f"bad margin spec {tok!r}: {exc}")
    return out


def _infer_dim(n_fams, parser):
    dim = int(round(0.5 * (1.0 + np.sqrt(1.0 + 8.0 * n_fams))))
    if n_edges(dim) != n_fams:
        parser.error(
            f"family list has {n_fams} entries, which is not d(d-1)/2 for any d"
        )
    return dim


def _aligned_table(col_names, rows):
    widths = [
        max(len(str(name)), max((len(str(r[i])) for r in rows), default=0))
        for i, name in enumerate(col_names)
    ]
    lines = ["  ".join(str(n).ljust(w) for n, w in zip(col_names, widths))]
    for r in rows:
        lines.append("  ".join(str(v).rjust(w) for v, w in zip(r, widths)))
    return "\n".join(lines)


def _matrix_block(name, mat):
    rows = [[f"{v: .10g}" for v in row] for row in mat]
    width = max(len(s) for row in rows for s in row)
    body = "\n".join("  ".join(s.rjust(width) for s in row) for row in rows)
    return f"{name}:\n{body}"


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_fit(args, parser):
    fams = _parse_families(args.families, parser)
    header, x, dropped = read_csv(args.data, args.drop_nonpositive)
    dim = x.shape[1]
    if len(fams) != n_edges(dim):
        parser.error(
            f"data has {dim} columns so the vine needs {n_edges(dim)} families, "
            f"got {len(fams)}"
        )
    skeleton = VineSkeleton(args.vine, dim, fams)
    method = args.method
    margin_fams = None
    if method in ("ml", "ifm"):
        if not args.margins:
            parser.error(f"--margins is required for method {method}")
        margin_fams = _parse_margin_families(args.margins, parser)
        if len(margin_fams) != dim:
            parser.error(f"need {dim} margin families, got {len(margin_fams)}")

    kwargs = {"force_large": True} if args.force_large and method != "ssp" else {}
    if method in ("sp", "ssp"):
        fit = fit_dispatch(method, u=pseudo_observations(x), skeleton=skeleton, **kwargs)
    else:
        fit = fit_dispatch(method, x=x, margin_families=margin_fams, skeleton=skeleton, **kwargs)

    labels = parameter_labels(fit.spec)
    report = {
        "command": args.command,
        "version": __version__,
        "data": args.data,
        "n": int(fit.n_obs),
        "d": int(dim),
        "dropped_nonpositive_rows": int(dropped),
        "vine": args.vine,
        "method": method,
        "families": [f.value for f in fams],
        "margins": [m.value for m in margin_fams] if margin_fams else None,
        "estimates": {lab: float(v) for lab, v in zip(labels, fit.theta)},
        "loglik": float(fit.loglik),
        "converged": bool(fit.converged),
    }
    if fit.margins:
        report["margin_estimates"] = {
            f"{header[l]}:{m.family.value}": list(map(float, m.params))
            for l, m in enumerate(fit.margins)
        }

    if method == "ml":
        ci = ml_fisher_ci(fit, x)
        report["se_method"] = "fisher"
        report["se"] = {lab: float(v) for lab, v in zip(labels, ci["se"])}
        report["ci95"] = {lab: list(map(float, row)) for lab, row in zip(labels, ci["ci"])}
    elif args.bootstrap > 0:
        boot = bootstrap_se(fit, n_boot=args.bootstrap, seed=args.seed, n_jobs=args.threads)
        report["se_method"] = f"parametric bootstrap (B={args.bootstrap})"
        report["se"] = {lab: float(v) for lab, v in zip(labels, boot.se)}
        report["ci95"] = {lab: list(map(float, row)) for lab, row in zip(labels, boot.ci)}
        report["bootstrap_failed_replicates"] = int(boot.n_failed)

    if args.compare:
        ub = pseudo_observations(x)
        comparison = {}
        for m in ("ssp", "sp"):
            alt = fit_dispatch(m, u=ub, skeleton=skeleton)
            comparison[m] = {
                "estimates": {lab: float(v) for lab, v in zip(labels, alt.theta)},
                "loglik": float(alt.loglik),
            }
        report["compare"] = comparison
    write_report(report, args.out)
    return 0


def cmd_simulate(args, parser):
    fams = _parse_families(args.families, parser)
    dim = _infer_dim(len(fams), parser)
    params = [float(t) for t in args.params.split(",")] if args.params else []
    try:
        spec = make_spec(args.vine, fams, params)
    except DomainError as exc:
        parser.error(str(exc))
    u = simulate(spec, args.n, seed=args.seed)
    if args.margins:
        models = _parse_margin_models(args.margins, parser)
        if len(models) != dim:
            parser.error(f"need {dim} margin models, got {len(models)}")
        mat = np.column_stack([marg_quantile(m, u[:, j]) for j, m in enumerate(models)])
        header = [f"x{j + 1}" for j in range(dim)]
    else:
        mat = u
        header = [f"u{j + 1}" for j in range(dim)]
    if args.out:
        write_csv(args.out, header, mat)
    else:
        writer = csv.writer(sys.stdout)
        writer.writerow(header)
        for row in mat:
            writer.writerow([f"{v:.12g}" for v in row])
    return 0


def cmd_efficiency(args, parser):
    fams = _parse_families(args.families, parser)
    dim = _infer_dim(len(fams), parser)
    params = [float(t) for t in args.params.split(",")] if args.params else []
    try:
        spec = make_spec(args.vine, fams, params)
    except DomainError as exc:
        parser.error(str(exc))
    if not args.margins:
        parser.error("--margins with explicit parameters is required (true margins)")
    models = _parse_margin_models(args.margins, parser)
    if len(models) != dim:
        parser.error(f"need {dim} margin models, got {len(models)}")
    estimators = tuple(t.strip().lower() for t in args.estimators.split(","))
    config = EfficiencyConfig(
        spec=spec,
        margins=models,
        n=args.n,
        n_replicates=args.replicates,
        estimators=estimators,
        seed=args.seed,
        n_jobs=args.threads,
        force_large=args.force_large,
    )
    result = efficiency_study(config)

    methods = [m for m in result.estimators if m != "ml"]
    col_names = ["parameter"] + methods
    rows = [
        [lab] + [f"{result.efficiency[m][i]:.4f}" for m in methods]
        for i, lab in enumerate(result.labels)
    ]
    table = _aligned_table(col_names, rows)
    print("Relative efficiency (Var_ML / Var_method)")
    print(table)

    report = {
        "command": "efficiency",
        "version": __version__,
        "spec": spec_to_dict(spec),
        "margins": [[m.family.value, list(map(float, m.params))] for m in models],
        "n": args.n,
        "replicates": args.replicates,
        "seed": args.seed,
        "estimators": list(result.estimators),
        "labels": result.labels,
        "efficiency": {m: list(map(float, result.efficiency[m])) for m in methods},
        "variances": {m: list(map(float, result.variances[m])) for m in result.estimators},
        "failed": {m: int(result.n_failed[m]) for m in result.estimators},
        "table": table,
    }
    if args.out:
        write_report(report, args.out)
    return 0


def cmd_bootstrap(args, parser):
    args.compare = False
    args.bootstrap = max(args.bootstrap, 1)
    return cmd_fit(args, parser)


def cmd_gaussian_oracle(args, parser):
    try:
        oracle = trivariate_gaussian_analytic(args.r12, args.r23, args.r13)
    except DomainError as exc:
        parser.error(str(exc))
    blocks = [
        ("V_ML", oracle.v_ml),
        ("K_theta", oracle.k_theta),
        ("J_theta", oracle.j_theta),
        ("B_SSP", oracle.b_ssp),
        ("V_SSP", oracle.v_ssp),
    ]
    for name, mat in blocks:
        print(_matrix_block(name, mat))
        print()
    if args.out:
        report = {
            "command": "gaussian-oracle",
            "version": __version__,
            "r12": args.r12,
            "r23": args.r23,
            "r13": args.r13,
        }
        report.update({name: mat.tolist() for name, mat in blocks})
        write_report(report, args.out)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="vinefit",
        description="Fit, simulate and study pair-copula constructions (D- and C-vines).",
    )
    parser.add_argument("--version", action="version", version=f"vinefit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, data=False, spec_params=False):
        p.add_argument("--vine", choices=["dvine", "cvine"], default="dvine")
        p.add_argument(
            "--families",
            required=True,
            help="level-major comma list, e.g. gumbel,gumbel,gaussian",
        )
        if data:
            p.add_argument("--data", required=True, help="input CSV (header + numeric rows)")
            p.add_argument("--drop-nonpositive", action="store_true",
                           help="drop rows with any value <= 0 before fitting")
        if spec_params:
            p.add_argument("--params", required=True,
                           help="flat comma list of edge parameters, level-major")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=1,
                       help="worker processes for replicate jobs (results identical)")
        p.add_argument("--out", default=None, help="output path (JSON or CSV)")
        p.add_argument("--force-large", action="store_true",
                       help="override the ML/SP parameter cap")

    p_fit = sub.add_parser("fit", help="fit a vine to CSV data")
    add_common(p_fit, data=True)
    p_fit.add_argument("--method", choices=["ml", "ifm", "sp", "ssp"], default="ssp")
    p_fit.add_argument("--margins", default=None,
                       help="comma list of margin families (required for ml/ifm)")
    p_fit.add_argument("--bootstrap", type=int, default=200,
                       help="bootstrap replicates for SEs (non-ML methods); 0 disables")
    p_fit.add_argument("--compare", action="store_true",
                       help="also report SSP and SP estimates side by side")
    p_fit.set_defaults(func=cmd_fit)

    p_sim = sub.add_parser("simulate", help="simulate from an explicit vine")
    add_common(p_sim, spec_params=True)
    p_sim.add_argument("--n", type=int, required=True)
    p_sim.add_argument("--margins", default=None,
                       help="margin models with parameters, e.g. exponential:1.0,...")
    p_sim.set_defaults(func=cmd_simulate)

    p_eff = sub.add_parser("efficiency", help="Monte Carlo relative-efficiency study")
    add_common(p_eff, spec_params=True)
    p_eff.add_argument("--n", type=int, required=True)
    p_eff.add_argument("--replicates", "-N", type=int, required=True)
    p_eff.add_argument("--margins", required=True,
                       help="true margin models, e.g. exponential:1.0,exponential:1.0,...")
    p_eff.add_argument("--estimators", default="ml,ifm,sp,ssp")
    p_eff.set_defaults(func=cmd_efficiency)

    p_boot = sub.add_parser("bootstrap", help="fit then parametric-bootstrap SEs")
    add_common(p_boot, data=True)
    p_boot.add_argument("--method", choices=["ifm", "sp", "ssp"], default="ssp")
    p_boot.add_argument("--margins", default=None)
    p_boot.add_argument("--bootstrap", "-B", type=int, default=200)
    p_boot.set_defaults(func=cmd_bootstrap)

    p_go = sub.add_parser("gaussian-oracle",
                          help="print the analytic trivariate-Gaussian matrices")
    p_go.add_argument("r12", type=float)
    p_go.add_argument("r23", type=float)
    p_go.add_argument("r13", type=float)
    p_go.add_argument("--out", default=None)
    p_go.set_defaults(func=cmd_gaussian_oracle)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, parser)
    except VinefitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
