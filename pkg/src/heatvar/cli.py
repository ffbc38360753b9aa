"""Command-line interface.

Exit codes: 0 success (all tests passed), 1 a statistical test failed,
2 usage, domain or resource error.
"""

import argparse
import csv
import json
import logging
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import kernel, oracle, sampler, stats, variations
from .errors import HeatVarError, UsageError

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _emit(obj, out=None):
    text = json.dumps(obj, indent=2, default=_json_default) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _json_default(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"cannot serialise {type(x).__name__}")


def _need_seed(args):
    if args.seed is None:
        raise UsageError("--seed is required for stochastic commands (no implicit entropy)")
    return args.seed


# --------------------------------------------------------------------------
# kernel


def cmd_kernel(args):
    q = args.quantity
    if q == "cov":
        out = {"value": kernel.cov_F(args.s, args.t)}
    elif q == "var":
        out = {"value": kernel.increment_variance(args.s, args.t)}
    elif q == "cross":
        out = {"value": kernel.cross_increment_cov(args.s, args.t, args.u, args.v)}
    elif q == "gamma":
        out = {"value": kernel.gamma(args.k)}
    elif q == "uniform":
        out = {"value": kernel.uniform_increment_cov(args.i, args.j, args.dt)}
    elif q == "K":
        out = {"value": kernel.k_function(args.x)}
    else:
        kc = kernel.kappa_sq(args.variant, args.tol)
        out = {
            "variant": kc.variant.value,
            "kappa_sq": kc.kappa_sq,
            "kappa": kc.kappa,
            "truncation_error": kc.truncation_error,
            "terms": kc.terms,
        }
    _emit(out, args.out)
    return EXIT_OK


# --------------------------------------------------------------------------
# sample


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([f"{x:.17g}" if isinstance(x, float) else x for x in row])


def cmd_sample(args):
    seed = _need_seed(args)
    cov = sampler.build_increment_covariance(args.n, args.horizon)
    factor = sampler.factorize(cov)
    batch = sampler.sample_batch(factor, sampler.SeedSpec(seed), args.reps, args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    times = cov.partition.times
    width = max(5, len(str(args.reps - 1)))
    files = []
    for r in range(len(batch)):
        name = f"path_{r:0{width}d}.csv"
        _write_rows(out / name, ["t", "F"], zip(map(float, times), map(float, batch.cumulative[r])))
        files.append(name)
        if args.increments:
            _write_rows(out / f"increments_{r:0{width}d}.csv", ["j", "t_j", "dF"],
                        ((j + 1, float(times[j + 1]), float(batch.increments[r, j]))
                         for j in range(batch.size)))
    meta = {
        "seed": seed,
        "n": args.n,
        "horizon": args.horizon,
        "reps": args.reps,
        "size": batch.size,
        "files": files,
        "factorization": {
            "jitter": factor.jitter,
            **factor.metadata,
            "reconstruction_error": factor.reconstruction_error() if batch.size <= 2048 else None,
        },
        "build": stats.build_metadata(),
    }
    _emit(meta, out / "metadata.json")
    return EXIT_OK


# --------------------------------------------------------------------------
# variation

FUNCTIONALS = ("quartic", "cubic", "sgn2", "centered", "centered_constant",
               "alternating", "alternating_raw", "rademacher", "midpoint")


def _series(path, name, seed, rep):
    if name == "quartic":
        return variations.quartic_variation(path)
    if name == "cubic":
        return variations.signed_cubic(path)
    if name == "alternating_raw":
        return variations.alternating_raw(path)
    if name == "centered_constant":
        return variations.centered_constant_series(path)
    if name == "midpoint":
        return variations.midpoint_riemann(path)
    if name == "rademacher":
        fam = variations.HFamily.rademacher(seed, path.size, replication=rep)
    else:
        fam = variations.HFamily.of(name)
    return variations.b_n(path, fam)


def _midpoint_diagnostics(path):
    res = variations.midpoint_identity_residuals(path)
    f2 = path.cumulative ** 2
    even = np.abs(res[::2]) / np.maximum(1.0, f2[::2])
    return {
        "identity": "F(t_2N)^2 = 2 I_n(t_2N) + sum_j (dF_2j^2 - dF_2j-1^2)",
        "max_rel_residual_even": float(np.max(even)),
        "residuals": [float(x) for x in res],
    }


def cmd_variation(args):
    seed = _need_seed(args)
    factor = sampler.factorize(sampler.build_increment_covariance(args.n, args.horizon))
    batch = sampler.sample_batch(factor, sampler.SeedSpec(seed), args.rep + 1)
    path = batch[args.rep]
    series = _series(path, args.functional, seed, args.rep)
    diag = _midpoint_diagnostics(path) if args.functional == "midpoint" else None
    if args.format == "json":
        doc = {"functional": args.functional, "seed": seed, "n": args.n, "horizon": args.horizon,
               "replication": args.rep, "series": series.to_json()}
        if diag is not None:
            doc["diagnostics"] = diag
        _emit(doc, args.out)
        return EXIT_OK
    text = series.to_csv()
    if args.out:
        Path(args.out).write_text(text)
        if diag is not None:
            _emit(diag, Path(args.out).with_suffix(".diagnostics.json"))
    else:
        sys.stdout.write(text)
        if diag is not None:
            print(json.dumps({k: v for k, v in diag.items() if k != "residuals"}), file=sys.stderr)
    return EXIT_OK


# --------------------------------------------------------------------------
# experiment


def load_spec(name):
    """Parse a spec file; ``acceptance`` names the bundled acceptance suite."""
    if name == "acceptance":
        text = resources.files("heatvar").joinpath("data/acceptance.json").read_text()
    else:
        try:
            text = Path(name).read_text()
        except OSError as exc:
            raise UsageError(f"cannot read spec: {exc}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"spec is not valid JSON: {exc}") from None


def cmd_experiment(args):
    doc = load_spec(args.spec)
    if args.seed is None and doc.get("master_seed") is None:
        raise UsageError("no master seed: pass --seed or set master_seed in the spec")

    def log(line):
        print(line, file=sys.stderr)

    report = stats.run_spec(doc, threads=args.threads, seed=args.seed, log=log)
    _emit(report, args.out)
    for line in stats.criterion_lines(report):
        log(line)
    if args.csv:
        rows = stats.summary_rows(report)
        keys = []
        for r in rows:
            keys += [k for k in r if k not in keys]
        with open(args.csv, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
            w.writeheader()
            for r in rows:
                w.writerow({k: json.dumps(v) if isinstance(v, (list, dict)) else v for k, v in r.items()})
    return EXIT_OK if report["passed"] else EXIT_FAILED


# --------------------------------------------------------------------------
# oracle


def cmd_oracle(args):
    q = args.quantity
    if q == "bivariate":
        out = {"value": oracle.bivariate_expectation(args.h1, args.h2, args.rho)}
    elif q == "moment44":
        out = {"value": oracle.moment44(args.rho)}
    elif q == "moment33":
        out = {"value": oracle.moment33(args.rho)}
    elif q == "quadruple":
        tags = args.tags.split(",")
        out = {"value": oracle.quadruple_expectation(tags, json.loads(args.corr))}
    else:
        grid = [float(x) for x in args.rho_grid.split(",")]
        if args.variant == "rademacher":
            fam = variations.HFamily.rademacher(0, 8)
        else:
            fam = variations.HFamily.of(args.variant)
        rep = oracle.check_assumption31(fam, grid)
        out = rep.to_json()
        _emit(out, args.out)
        return EXIT_OK if rep.passed else EXIT_FAILED
    _emit(out, args.out)
    return EXIT_OK


# --------------------------------------------------------------------------


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _seed(text):
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return v


def build_parser():
    p = _Parser(prog="heatvar", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=_seed)
    common.add_argument("--threads", type=_positive_int, default=1)
    common.add_argument("--out")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    k = sub.add_parser("kernel", help="closed-form kernels and constants")
    ksub = k.add_subparsers(dest="quantity", required=True, parser_class=_Parser)
    c = ksub.add_parser("cov", help="Cov(F(s), F(t))")
    c.add_argument("--s", type=float, required=True)
    c.add_argument("--t", type=float, required=True)
    c = ksub.add_parser("var", help="E|F(t) - F(s)|^2")
    c.add_argument("--s", type=float, required=True)
    c.add_argument("--t", type=float, required=True)
    c = ksub.add_parser("cross", help="covariance of F(t) - F(s) and F(v) - F(u)")
    for name in ("s", "t", "u", "v"):
        c.add_argument(f"--{name}", type=float, required=True)
    c = ksub.add_parser("gamma", help="gamma_k")
    c.add_argument("--k", type=int, required=True)
    c = ksub.add_parser("uniform", help="E dF_i dF_j on the uniform grid")
    c.add_argument("--i", type=int, required=True)
    c.add_argument("--j", type=int, required=True)
    c.add_argument("--dt", type=float, required=True)
    c = ksub.add_parser("K", help="signed-square correlation function")
    c.add_argument("--x", type=float, required=True)
    c = ksub.add_parser("kappa", help="limiting variance constant")
    c.add_argument("--variant", required=True,
                   help="rademacher | signed (sgn2: x^{2+-} read as x|x|) | centered | alternating")
    c.add_argument("--tol", type=float, default=1e-10)
    for q in ksub.choices.values():
        q.add_argument("--out")
    k.set_defaults(func=cmd_kernel)

    s = sub.add_parser("sample", help="sample paths to CSV", parents=[common])
    s.add_argument("--n", type=_positive_int, required=True)
    s.add_argument("--horizon", type=float, default=1.0)
    s.add_argument("--reps", type=_positive_int, default=1)
    s.add_argument("--increments", action="store_true", help="also write j,t_j,dF files")
    s.set_defaults(func=cmd_sample, needs_out=True)

    v = sub.add_parser("variation", help="one variation functional as a step series", parents=[common])
    v.add_argument("--functional", required=True, choices=FUNCTIONALS)
    v.add_argument("--n", type=_positive_int, required=True)
    v.add_argument("--horizon", type=float, default=1.0)
    v.add_argument("--rep", type=int, default=0, help="replication index")
    v.add_argument("--format", choices=("json", "csv"), default="csv")
    v.set_defaults(func=cmd_variation)

    e = sub.add_parser("experiment", help="run a JSON spec of studies", parents=[common])
    e.add_argument("--spec", required=True, help="spec file, or 'acceptance' for the bundled suite")
    e.add_argument("--csv", help="also write a flat summary table")
    e.set_defaults(func=cmd_experiment)

    o = sub.add_parser("oracle", help="quadrature oracles")
    osub = o.add_subparsers(dest="quantity", required=True, parser_class=_Parser)
    c = osub.add_parser("bivariate", help="E h1(X) h2(Y)")
    c.add_argument("--h1", required=True)
    c.add_argument("--h2", required=True)
    c.add_argument("--rho", type=float, required=True)
    c = osub.add_parser("moment44")
    c.add_argument("--rho", type=float, required=True)
    c = osub.add_parser("moment33")
    c.add_argument("--rho", type=float, required=True)
    c = osub.add_parser("quadruple", help="E prod h_i(X_i)")
    c.add_argument("--tags", required=True, help="four comma-separated tags")
    c.add_argument("--corr", required=True, help="4x4 correlation matrix as JSON")
    c = osub.add_parser("family-check", help="structural checks on a built-in family")
    c.add_argument("--variant", required=True)
    c.add_argument("--rho-grid", default="-0.9,-0.5,-0.1,0,0.1,0.5,0.9")
    for q in osub.choices.values():
        q.add_argument("--out")
    o.set_defaults(func=cmd_oracle)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "needs_out", False) and not args.out:
        print("heatvar: error: --out is required", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (HeatVarError, ValueError, OSError, MemoryError) as exc:
        print(f"heatvar: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # never leak an exit code other than 0/1/2
        print(f"heatvar: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
