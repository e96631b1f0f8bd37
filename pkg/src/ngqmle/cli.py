"""Command-line interface.

    ngqmle simulate --params '{"sigma":0.5,"a":[0.35],"b":[0.3]}' --innovation t:5 --T 3000 --seed 1
    ngqmle fit --input returns.csv --order 1,1 --select --aggregate
    ngqmle tables eta --likelihoods gg:0.2,0.6,1.0 --innovations gg:0.2,1,t:5,7
    ngqmle mc --config experiment.json --threads 4

Exit status: 0 on success, 1 on usage or input errors, 2 on numerical
failure (a JSON object describing the error goes to stderr).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from ngqmle import __version__
from ngqmle import asymptotics as asy
from ngqmle import montecarlo as mc
from ngqmle.estimators import FitOptions, FitResult, StageError, fit_gaussian, fit_two_step
from ngqmle.eta import EtaBracketError, eta_table
from ngqmle.likelihoods import InnovationDistribution, QuadratureError, QuasiLikelihood
from ngqmle.selection import AggregationError, CandidateGrid, SelectionError, aggregate, four_step_fit
from ngqmle.volatility import GarchOrder, GarchParams, simulate, to_classic

NUMERICAL_ERRORS = (
    StageError,
    QuadratureError,
    EtaBracketError,
    asy.SingularDesignError,
    AggregationError,
    SelectionError,
    ArithmeticError,
    np.linalg.LinAlgError,
)


class UsageError(Exception):
    pass


class NumericalFailure(Exception):
    def __init__(self, message, payload=None):
        super().__init__(message)
        self.payload = payload or {}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# ----------------------------------------------------------------------------
# input helpers


def parse_family_list(text: str, cls):
    """'gg:0.2,0.6,t:5,7,gaussian' -> [gg0.2, gg0.6, t5, t7, gaussian]."""
    out, family = [], None
    for tok in (t.strip() for t in text.split(",")):
        if not tok:
            continue
        if ":" in tok:
            family, val = tok.split(":", 1)
            out.append(cls.parse(f"{family}:{val}"))
        elif tok in ("gaussian", "normal"):
            out.append(cls.parse("gaussian"))
        else:
            if family is None:
                raise UsageError(f"value {tok!r} has no family prefix")
            out.append(cls.parse(f"{family}:{tok}"))
    if not out:
        raise UsageError("empty list")
    return out


def read_returns(path: str, column: str | None = None) -> np.ndarray:
    """Numeric column of a CSV file (header optional, '#' lines skipped); defaults to the last column."""
    text = sys.stdin.read() if path == "-" else Path(path).read_text()
    rows = [r for r in csv.reader(line for line in io.StringIO(text) if line.strip() and not line.startswith("#"))]
    if not rows:
        raise UsageError(f"{path}: no data rows")
    header = None
    try:
        [float(v) for v in rows[0][-1:]]
    except ValueError:
        header, rows = rows[0], rows[1:]
    if column is None:
        idx = -1
    elif header is not None and column in header:
        idx = header.index(column)
    else:
        try:
            idx = int(column)
        except ValueError as exc:
            raise UsageError(f"column {column!r} not found") from exc
    try:
        x = np.array([float(r[idx]) for r in rows if r])
    except (ValueError, IndexError) as exc:
        raise UsageError(f"{path}: non-numeric value in returns column ({exc})") from exc
    return x


def _json_arg(text: str) -> dict:
    p = Path(text)
    if not text.lstrip().startswith("{") and p.exists():
        text = p.read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"invalid JSON: {exc}") from exc


def _header(args, **extra) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    cfg.update(extra)
    return {"tool": "ngqmle", "version": __version__, "command": args.command, "resolved_config": cfg}


def _emit(obj, path: str | None):
    text = json.dumps(obj, indent=2, default=_json_default)
    if path:
        Path(path).write_text(text + "\n")
    else:
        print(text)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    if hasattr(o, "to_dict"):
        return o.to_dict()
    raise TypeError(f"not serializable: {type(o).__name__}")


# ----------------------------------------------------------------------------
# subcommands


def cmd_simulate(args) -> int:
    params = GarchParams.from_dict(_json_arg(args.params))
    innov = InnovationDistribution.parse(args.innovation)
    x = simulate(params, innov, args.T, burn_in=args.burn_in, seed=args.seed)
    header = _header(args, params=params.to_dict(), innovation=innov.to_dict())
    buf = io.StringIO()
    buf.write("# " + json.dumps(header, default=_json_default) + "\n")
    buf.write("x\n")
    np.savetxt(buf, x, fmt="%.17g")
    if args.output:
        Path(args.output).write_text(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return 0


def _fit_block(fit: FitResult) -> dict:
    d = fit.to_dict()
    d["classic"] = to_classic(fit.params).to_dict()
    return d


def cmd_fit(args) -> int:
    x = read_returns(args.input, args.column)
    order = GarchOrder.parse(args.order)
    opts = FitOptions(max_iterations=args.max_iterations, gradient_tolerance=args.gradient_tolerance)
    grid = CandidateGrid.wide() if args.wide_grid else CandidateGrid()
    header = _header(args, n_obs=int(x.size))
    report: dict = {"header": header}
    if args.gaussian_only:
        g = fit_gaussian(x, order, opts)
        report["gaussian"] = _fit_block(g)
        return _finish_fit(report, [g], args)
    if args.select:
        fs = four_step_fit(x, order, grid, opts)
        ts = fs.fit
        report["selection"] = fs.choice.to_dict()
        report["header"]["resolved_config"]["grid"] = grid.to_dict()
    else:
        f = QuasiLikelihood.parse(args.likelihood)
        ts = fit_two_step(x, order, f, opts)
    report["gaussian"] = _fit_block(ts.gaussian)
    report["likelihood"] = ts.likelihood.label
    report["eta_hat"] = ts.eta_hat.eta
    report["eta_deviation_from_1"] = ts.eta_hat.eta - 1.0
    report["eta_note"] = (
        f"an unscaled {ts.likelihood.label} fit would bias sigma by a factor {ts.eta_hat.eta:.4f}"
    )
    report["two_step"] = _fit_block(ts.non_gaussian)
    se = ts.standard_errors()
    if se is not None:
        names = asy.param_names(order.p, order.q)
        report["standard_errors"] = {
            k: (dict(zip(names, v.tolist())) if isinstance(v, np.ndarray) else v) for k, v in se.items()
        }
    if ts.notes:
        report["notes"] = ts.notes
    if args.aggregate:
        agg = aggregate(ts, x)
        d = agg.to_dict()
        d["classic"] = to_classic(agg.params).to_dict()
        d.pop("covariance", None)
        report["aggregate"] = d
    return _finish_fit(report, [ts.gaussian, ts.non_gaussian], args)


def _finish_fit(report, fits, args) -> int:
    bad = [f.density for f in fits if not f.converged]
    if bad:
        raise NumericalFailure(f"optimizer did not converge for {', '.join(bad)}", {"partial_report": report})
    _emit(report, args.output)
    return 0


def cmd_tables(args) -> int:
    rows = parse_family_list(args.likelihoods, QuasiLikelihood)
    cols = parse_family_list(args.innovations, InnovationDistribution)
    if args.kind == "eta":
        values = eta_table(rows, cols)
    else:
        values = asy.mu_table(rows, cols)
    buf = io.StringIO()
    buf.write("# " + json.dumps(_header(args), default=_json_default) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["likelihood"] + [g.label for g in cols])
    for f, vals in zip(rows, values):
        w.writerow([f.label] + [f"{v:.{args.digits}f}" for v in vals])
    if args.output:
        Path(args.output).write_text(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return 0


def cmd_mc(args) -> int:
    cfg_dict = _json_arg(args.config)
    if args.seed is not None:
        cfg_dict["master_seed"] = args.seed
    try:
        config = mc.McConfig.from_dict(cfg_dict)
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"invalid Monte Carlo config: {exc}") from exc
    workers = args.threads or mc.default_workers()
    report = mc.run(config, workers=workers)
    out = {"header": _header(args, workers=workers, resolved_mc_config=config.to_dict())}
    out.update(report.to_dict())
    if config.standardize:
        std = {}
        for name in report.population_se:
            z = report.standardized(name)
            labels = report.param_names + (["eta"] if z.shape[1] > len(report.param_names) else [])
            std[name] = {
                "normality": mc.normality_check(z, labels),
                "histograms": {lab: mc.histogram(z[:, i]) for i, lab in enumerate(labels)},
            }
        out["standardized"] = std
    _emit(out, args.output)
    if args.csv_dir:
        d = Path(args.csv_dir)
        d.mkdir(parents=True, exist_ok=True)
        names = report.names
        for i, a in enumerate(names):
            for b in names[i + 1 :]:
                header, row = mc.ratio_csv_rows(report, (a, b))
                fname = d / f"ratios_{a}__{b}.csv".replace(":", "-")
                with fname.open("w", newline="") as fh:
                    w = csv.writer(fh)
                    w.writerow(header)
                    w.writerow(row)
    return 0


# ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ngqmle", description="Two-step non-Gaussian QMLE for GARCH models")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="simulate a GARCH path to CSV")
    s.add_argument("--params", required=True, help='JSON such as {"sigma":0.5,"a":[0.35],"b":[0.3]}')
    s.add_argument("--innovation", default="gaussian", help="gaussian | t:5 | gg:1 | skewed_t:7,0.5 | stable:1.5")
    s.add_argument("--T", type=int, default=3000)
    s.add_argument("--burn-in", type=int, default=500)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--output", "-o")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="fit a GARCH model to returns")
    f.add_argument("--input", "-i", required=True, help="CSV file ('-' for stdin)")
    f.add_argument("--column", help="column name or index (default: last column)")
    f.add_argument("--order", default="1,1", help="p,q")
    f.add_argument("--likelihood", default="t:4", help="quasi-likelihood for the second step")
    f.add_argument("--two-step", action="store_true", help="two-step fit with --likelihood (default)")
    f.add_argument("--select", action="store_true", help="choose the likelihood from the candidate grid")
    f.add_argument("--wide-grid", action="store_true", help="allow generalized Gaussian shapes up to 4")
    f.add_argument("--aggregate", action="store_true", help="also report the aggregated estimator")
    f.add_argument("--gaussian-only", action="store_true", help="only the Gaussian QMLE")
    f.add_argument("--max-iterations", type=int, default=500)
    f.add_argument("--gradient-tolerance", type=float, default=1e-8)
    f.add_argument("--output", "-o")
    f.set_defaults(func=cmd_fit)

    t = sub.add_parser("tables", help="eta_f or mu grids as CSV")
    t.add_argument("kind", choices=["eta", "mu"])
    t.add_argument("--likelihoods", required=True, help="e.g. gg:0.2,0.6,1.0 or t:2.5,3,4")
    t.add_argument("--innovations", required=True, help="e.g. gg:0.2,1,t:5,7")
    t.add_argument("--digits", type=int, default=3)
    t.add_argument("--output", "-o")
    t.set_defaults(func=cmd_tables)

    m = sub.add_parser("mc", help="run a Monte Carlo experiment from a JSON config")
    m.add_argument("--config", "-c", required=True, help="JSON file or inline JSON")
    m.add_argument("--threads", type=int, default=None, help=f"worker processes (default ${mc.THREADS_ENV} or 1)")
    m.add_argument("--seed", type=int, default=None, help="override master_seed")
    m.add_argument("--output", "-o")
    m.add_argument("--csv-dir", help="directory for ratio tables")
    m.set_defaults(func=cmd_mc)
    return p


def _error_json(kind: str, exc: Exception, extra: dict | None = None) -> str:
    d = {"error": kind, "type": type(exc).__name__, "message": str(exc)}
    stage = getattr(exc, "stage", None)
    if stage:
        d["stage"] = stage
    if extra:
        d.update(extra)
    return json.dumps(d, default=_json_default)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(_error_json("usage", exc), file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except NumericalFailure as exc:
        print(_error_json("numerical", exc, exc.payload), file=sys.stderr)
        return 2
    except NUMERICAL_ERRORS as exc:
        print(_error_json("numerical", exc), file=sys.stderr)
        return 2
    except (UsageError, ValueError, KeyError, OSError) as exc:
        print(_error_json("usage", exc), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
