"""Command-line interface: ``gpsvc {simulate,fit,predict,select}``.

Every artifact is written to the ``--out`` directory. On failure a single
line ``gpsvc: error: <Kind>: <message>`` goes to stderr and the exit status
is nonzero.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from .kernels import KERNELS
from .likelihood import LikelihoodEngine
from .mle import FitResult, MleControl, fit_mle
from .model import SvcData, ValidationError
from .predict import predict_svc
from .sample import sample_full_svc
from .select import CdControl, select_grid, select_mbo

SCHEMA_VERSION = 1

logger = logging.getLogger("gpsvc")


class CliError(Exception):
    """Expected failure reported to the user without a traceback."""

    def __init__(self, kind, message):
        super().__init__(message)
        self.kind = kind


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("UsageError", message)


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers, got {text!r}")


def _names(text):
    return [v.strip() for v in text.split(",") if v.strip()]


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _out_dir(path):
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError("OutputError", f"cannot create output directory {out}: {exc}")
    return out


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, allow_nan=False)
        fh.write("\n")


def _read_csv(path):
    try:
        return pd.read_csv(path, float_precision="round_trip")
    except FileNotFoundError:
        raise CliError("FileNotFound", f"no such file: {path}")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise CliError("CsvError", f"cannot parse {path}: {exc}")


def _columns(df, names, role, path):
    missing = [c for c in names if c not in df.columns]
    if missing:
        raise CliError("ColumnError", f"{role} column(s) {missing} not in header of {path}")
    try:
        return df[names].to_numpy(dtype=float)
    except ValueError as exc:
        raise CliError("ColumnError", f"{role} columns of {path} are not numeric: {exc}")


def _load_data(args):
    df = _read_csv(args.data)
    if not args.fixed:
        raise CliError("UsageError", "--fixed needs at least one column")
    random = args.random if args.random else args.fixed
    y = _columns(df, [args.response], "response", args.data)[:, 0]
    X = _columns(df, args.fixed, "fixed-effect", args.data)
    W = _columns(df, random, "random-effect", args.data)
    locs = _columns(df, args.locs, "location", args.data)
    fixed, random = list(args.fixed), list(random)
    if args.intercept:
        ones = np.ones((len(df), 1))
        X, W = np.hstack([ones, X]), np.hstack([ones, W])
        fixed, random = ["Intercept", *fixed], ["Intercept", *random]
    roles = {"response": args.response, "fixed": fixed, "random": random, "locs": list(args.locs),
             "intercept": bool(args.intercept)}
    return SvcData(y, X, locs, W), roles


def _control(args, **extra):
    return MleControl(
        kernel=args.kernel,
        taper=args.taper,
        profile=args.profile,
        lower=args.lower,
        init=args.init,
        upper=args.upper,
        threads=args.threads,
        **extra,
    )


# simulate


def cmd_simulate(args):
    means, variances, ranges = args.means, args.variances, args.ranges
    if not (len(means) == len(variances) == len(ranges)):
        raise CliError("ParameterError", "--means, --variances and --ranges need equal lengths")
    if any(v < 0 for v in variances) or any(r <= 0 for r in ranges):
        raise CliError("ParameterError", "variances must be >= 0 and ranges > 0")
    if args.nugget_sd < 0:
        raise CliError("ParameterError", "--nugget-sd must be >= 0")
    lo, hi = args.domain
    if not hi > lo:
        raise CliError("ParameterError", f"empty domain [{lo}, {hi}]")
    out = _out_dir(args.out)

    rng = np.random.default_rng(args.seed)
    locs = rng.uniform(lo, hi, size=(args.n, args.dim))
    if args.dim == 1:
        locs = np.sort(locs, axis=0)
    truth = sample_full_svc(means, variances, ranges, args.nugget_sd, locs, args.kernel, rng)

    q = len(means)
    table = {"y": truth.data.y}
    for k in range(q):
        table[f"x{k + 1}"] = truth.data.X[:, k]
    for j in range(args.dim):
        table[f"loc{j + 1}"] = locs[:, j]
    pd.DataFrame(table).to_csv(out / "data.csv", index=False)
    pd.DataFrame(truth.beta, columns=[f"beta_{k + 1}" for k in range(q)]).to_csv(
        out / "truth.csv", index=False
    )
    _write_json(
        out / "params.json",
        {
            "schema_version": SCHEMA_VERSION,
            "kernel": args.kernel,
            "n": args.n,
            "dim": args.dim,
            "domain": [lo, hi],
            "seed": args.seed,
            "means": list(map(float, means)),
            "variances": list(map(float, variances)),
            "ranges": list(map(float, ranges)),
            "nugget_sd": float(args.nugget_sd),
        },
    )
    print(f"wrote {out / 'data.csv'}, {out / 'truth.csv'}, {out / 'params.json'}")
    return 0


# fit


def _fmt_p(p):
    if p is None or not np.isfinite(p):
        return "NA"
    return "< 2e-16" if p < 2e-16 else f"{p:.3g}"


def _fmt(v, spec=".6g"):
    return "NA" if v is None or not np.isfinite(v) else format(v, spec)


def format_summary(fit, roles, n):
    """Plain-text summary of a fit, similar to a regression printout."""
    om = fit.omega
    se = fit.se or {}
    tests = fit.tests()
    lines = []
    q = om.q
    lines.append(f"GP-based SVC model with {om.mu.size} fixed effect(s) and {q} SVC(s), n = {n}")
    lines.append("")
    qs = np.quantile(fit.residuals, [0, 0.25, 0.5, 0.75, 1.0])
    lines.append("Residuals:")
    lines.append("      Min.    1st Qu.     Median    3rd Qu.       Max.")
    lines.append(" ".join(f"{v:10.6f}" for v in qs))
    lines.append("")
    lines.append(f"Residual standard error: {fit.resid_se:.4g}")
    lines.append(f"Multiple R-squared: {fit.r2:.4f}, BIC: {fit.bic:.1f}")
    lines.append("")
    lines.append("Coefficients of fixed effect(s):")
    lines.append(f"{'':16s}{'Estimate':>12s}{'Std. Error':>12s}{'Z value':>10s}{'Pr(>|Z|)':>10s}")
    se_mu = se.get("mu", np.full(om.mu.size, np.nan))
    for j, name in enumerate(roles["fixed"]):
        lines.append(
            f"{name:16.16s}{om.mu[j]:12.6g}{_fmt(se_mu[j]):>12s}"
            f"{_fmt(tests['z'][j], '.3f'):>10s}{_fmt_p(tests['z_pvalue'][j]):>10s}"
        )
    lines.append("")
    lines.append("Covariance parameters of the SVC(s):")
    lines.append(f"{'':22s}{'Estimate':>12s}{'Std. Error':>12s}{'W value':>10s}{'Pr(>W)':>10s}")
    se_rho = se.get("rho", np.full(q, np.nan))
    se_var = se.get("sigma2", np.full(q, np.nan))
    for k, name in enumerate(roles["random"]):
        lines.append(f"{(name + '.range'):22.22s}{om.rho[k]:12.6g}{_fmt(se_rho[k]):>12s}{'NA':>10s}{'NA':>10s}")
        lines.append(
            f"{(name + '.var'):22.22s}{om.sigma2[k]:12.6g}{_fmt(se_var[k]):>12s}"
            f"{_fmt(tests['wald'][k], '.3f'):>10s}{_fmt_p(tests['wald_pvalue'][k]):>10s}"
        )
    se_tau = se.get("nugget", np.array([np.nan]))[0]
    lines.append(f"{'nugget.var':22s}{om.nugget:12.6g}{_fmt(se_tau):>12s}{'NA':>10s}{'NA':>10s}")
    lines.append("")
    lines.append(f"Covariance function: {fit.kernel}")
    lines.append("No covariance tapering applied." if fit.taper is None else f"Taper range: {fit.taper}")
    lines.append("")
    lines.append("MLE:")
    kind = "profile " if fit.profile else ""
    lines.append(
        f"Terminated after {fit.nfev} function evaluations ({fit.neval} likelihood evaluations) "
        f"with convergence code {fit.code} (0 = success)."
    )
    lines.append(f"Final {kind}log likelihood: {fit.loglik:.1f}")
    return "\n".join(lines)


def _training_block(data, roles):
    return {
        "roles": roles,
        "y": data.y.tolist(),
        "X": data.X.tolist(),
        "W": data.W.tolist(),
        "locs": data.locs.tolist(),
    }


def fit_document(fit, data, roles):
    doc = {"schema_version": SCHEMA_VERSION}
    doc.update(fit.to_dict())
    doc["n_estimates"] = data.p + 2 * data.q + 1
    doc["training"] = _training_block(data, roles)
    return doc


def cmd_fit(args):
    data, roles = _load_data(args)
    out = _out_dir(args.out)
    fit = fit_mle(data, _control(args))
    _write_json(out / "fit.json", fit_document(fit, data, roles))
    pd.DataFrame({"residual": fit.residuals}).to_csv(out / "residuals.csv", index=False)
    print(format_summary(fit, roles, data.n))
    return 0


# predict


def load_fit(path):
    """Read a fit.json written by ``gpsvc fit``; returns ``(fit, data, roles)``."""
    path = Path(path)
    if not path.is_file():
        raise CliError("FileNotFound", f"no such fit file: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CliError("JsonError", f"cannot parse {path}: {exc}")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise CliError("SchemaError", f"{path} has schema_version {doc.get('schema_version')!r}, expected {SCHEMA_VERSION}")
    tr = doc["training"]
    data = SvcData(tr["y"], tr["X"], tr["locs"], tr["W"])
    engine = LikelihoodEngine(data, doc["kernel"], doc["taper"])
    fit = FitResult.from_dict(doc, engine=engine)
    return fit, data, tr["roles"]


def cmd_predict(args):
    fit, data, roles = load_fit(args.fit)
    df = _read_csv(args.newlocs)
    newlocs = _columns(df, roles["locs"], "location", args.newlocs)
    synthetic = {"Intercept"} if roles.get("intercept") else set()
    needed = [c for c in dict.fromkeys(roles["fixed"] + roles["random"]) if c not in synthetic]
    present = [c in df.columns for c in needed]
    newX = newW = None
    if all(present) and (any(present) or synthetic):
        if synthetic:
            df = df.assign(Intercept=1.0)
        newX = _columns(df, roles["fixed"], "fixed-effect", args.newlocs)
        newW = _columns(df, roles["random"], "random-effect", args.newlocs)
    elif any(present):
        missing = [c for c, ok in zip(needed, present) if not ok]
        raise CliError("ColumnError", f"{args.newlocs} has some covariate columns but lacks {missing}")
    out = _out_dir(args.out)
    pred = predict_svc(fit, newlocs, newX, newW)
    pd.DataFrame(pred.table(), columns=pred.columns).to_csv(out / "predictions.csv", index=False)
    print(f"wrote {out / 'predictions.csv'} ({newlocs.shape[0]} rows)")
    return 0


# select


def cmd_select(args):
    data, roles = _load_data(args)
    out = _out_dir(args.out)
    mle = fit_mle(data, _control(args, hessian=False))
    engine = mle.engine
    cd_control = CdControl(max_cycles=args.cd_cycles, delta=args.cd_delta)
    if args.method == "grid":
        result = select_grid(engine, mle, args.lambda_min, args.lambda_max, args.n_per_dim,
                             args.ic, cd_control, threads=args.threads)
    else:
        result = select_mbo(engine, mle, args.lambda_min, args.lambda_max, args.n_init, args.n_iter,
                            args.ic, cd_control, seed=args.seed, threads=args.threads)
    pd.DataFrame(result.trace_rows()).to_csv(out / "selection_trace.csv", index=False)
    best = result.best
    _write_json(
        out / "selected.json",
        {
            "schema_version": SCHEMA_VERSION,
            "method": result.method,
            "ic_type": result.ic_type,
            "lambda": [best.lambda_mu, best.lambda_theta],
            "ic_value": best.ic,
            "converged": best.converged,
            "flagged": result.flagged,
            "estimates": best.omega.as_dict(),
            "mle": {"estimates": mle.omega.as_dict(), "neg2loglik": mle.neg2loglik,
                    "convergence_code": mle.code},
            "roles": roles,
            "n_evaluations": len(result.evaluations),
        },
    )
    print(f"{result.method}: {len(result.evaluations)} evaluations, "
          f"lambda = ({best.lambda_mu:.4g}, {best.lambda_theta:.4g}), {result.ic_type} = {best.ic:.2f}")
    names_mu = roles["fixed"]
    names_k = roles["random"]
    print("mu:     " + ", ".join(f"{n}={v:.4g}" for n, v in zip(names_mu, best.omega.mu)))
    print("sigma2: " + ", ".join(f"{n}={v:.4g}" for n, v in zip(names_k, best.omega.sigma2)))
    return 0


def _add_data_args(p):
    p.add_argument("--data", required=True, help="input CSV")
    p.add_argument("--response", default="y")
    p.add_argument("--fixed", type=_names, required=True, help="comma-separated X columns")
    p.add_argument("--random", type=_names, default=None,
                   help="comma-separated W columns (default: same as --fixed)")
    p.add_argument("--locs", type=_names, required=True, help="comma-separated location columns")
    p.add_argument("--intercept", action="store_true",
                   help="prepend a column of ones to both X and W")


def _add_model_args(p):
    p.add_argument("--kernel", choices=KERNELS, default="exp")
    p.add_argument("--taper", type=float, default=None, help="taper range")
    p.add_argument("--profile", action=argparse.BooleanOptionalAction, default=True,
                   help="optimize the profile likelihood (default) or the full one")
    p.add_argument("--lower", type=_floats, default=None)
    p.add_argument("--init", type=_floats, default=None)
    p.add_argument("--upper", type=_floats, default=None)
    p.add_argument("--threads", type=_positive_int, default=1)


def build_parser():
    parser = _Parser(prog="gpsvc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="sample a full SVC data set")
    p.add_argument("--out", required=True)
    p.add_argument("--means", type=_floats, default=[1.0, 2.0])
    p.add_argument("--variances", type=_floats, default=[2.0, 1.0])
    p.add_argument("--ranges", type=_floats, default=[0.5, 1.0])
    p.add_argument("--nugget-sd", type=float, default=0.5)
    p.add_argument("--n", type=_positive_int, default=300)
    p.add_argument("--dim", type=_positive_int, default=1)
    p.add_argument("--domain", type=_floats, default=[0.0, 10.0])
    p.add_argument("--kernel", choices=KERNELS, default="mat32")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="maximum likelihood fit")
    _add_data_args(p)
    _add_model_args(p)
    p.add_argument("--seed", type=int, default=None, help="accepted for symmetry; fitting is deterministic")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="predict SVCs at new locations")
    p.add_argument("--fit", required=True, help="fit.json from `gpsvc fit`")
    p.add_argument("--newlocs", required=True, help="CSV with location (and optionally covariate) columns")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("select", help="penalized-likelihood variable selection")
    _add_data_args(p)
    _add_model_args(p)
    p.add_argument("--method", choices=("grid", "mbo"), default="grid")
    p.add_argument("--ic", choices=("bic", "caic"), default="bic")
    p.add_argument("--lambda-min", type=float, default=1e-3)
    p.add_argument("--lambda-max", type=float, default=1.0)
    p.add_argument("--n-per-dim", type=int, default=10)
    p.add_argument("--n-init", type=int, default=5)
    p.add_argument("--n-iter", type=int, default=15)
    p.add_argument("--cd-cycles", type=_positive_int, default=20)
    p.add_argument("--cd-delta", type=float, default=1e-8)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_select)
    return parser


def _one_line(text):
    return " ".join(str(text).split())


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if getattr(args, "domain", None) is not None and len(args.domain) != 2:
            raise CliError("UsageError", "--domain needs two numbers: low,high")
        return args.func(args)
    except CliError as exc:
        kind, message = exc.kind, str(exc)
    except ValidationError as exc:
        kind, message = "ValidationError", "; ".join(exc.problems)
    except (ValueError, np.linalg.LinAlgError, OSError) as exc:
        kind, message = type(exc).__name__, str(exc)
    print(f"gpsvc: error: {kind}: {_one_line(message)}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
