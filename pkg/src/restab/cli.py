"""Command-line entry point: ``restab {gen,cv,rvamp,naive,compare}``.

Exit codes: 0 success, 2 non-convergence, 3 invalid input.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

from restab import data, engine, oracle
from restab.model import (
    BootstrapSpec,
    NotConverged,
    PenaltySpec,
    RestabError,
    RvampConfig,
)
from restab.statistics import compare

EXIT_OK = 0
EXIT_NOT_CONVERGED = 2
EXIT_INPUT = 3

log = logging.getLogger("restab")

class InputError(Exception):
    pass

class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad flags; that code is reserved here."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")

def _atoms(text: str) -> tuple[tuple[float, float], ...]:
    """Parse ``"1:0.5,2:0.5"`` into ((1, .5), (2, .5))."""
    try:
        pairs = [p.split(":") for p in text.split(",") if p.strip()]
        return tuple((float(m), float(w)) for m, w in pairs)
    except ValueError:
        raise argparse.ArgumentTypeError(f"cannot parse atoms {text!r}; expected mult:weight,...") from None

def _load(path: str):
    p = Path(path)
    if not p.is_file():
        raise InputError(f"no such file: {path}")
    return data.preprocess(data.read_csv(p, provenance="csv"))

def _penalty(args) -> PenaltySpec:
    return PenaltySpec(args.lam, args.atoms)

# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_gen(args) -> int:
    raw, x0 = data.make_synthetic(args.n, args.alpha, args.rho, args.sigma, args.seed,
                                  design=args.design, corr=args.corr)
    out = Path(args.out)
    data.write_csv(raw, out / "data.csv")
    data.write_vector_csv(x0, out / "truth.csv", name="x0")
    data.write_json({"n": args.n, "m": raw.m, "alpha": args.alpha, "rho": args.rho,
                     "sigma": args.sigma, "seed": args.seed, "design": args.design,
                     "corr": args.corr}, out / "meta.json")
    print(f"wrote {raw.m} x {raw.n} dataset to {out}")
    return EXIT_OK

def cmd_cv(args) -> int:
    ds = _load(args.data)
    best, grid, err = oracle.cross_validate_lambda(ds, folds=args.folds, grid_size=args.grid,
                                                   seed=args.seed, return_curve=True)
    print(repr(best))
    if args.out:
        data.write_json({"lambda": best, "folds": args.folds, "seed": args.seed,
                         "grid": grid.tolist(), "cv_error": err.tolist()}, args.out)
    return EXIT_OK

def cmd_rvamp(args) -> int:
    ds = _load(args.data)
    config = RvampConfig(delta_tol=args.tol, max_iter=args.max_iter, damping=args.damping,
                         seed=args.seed)
    bootstrap = BootstrapSpec(tau=args.tau, oracle_mode=args.mode)
    out = Path(args.out)
    t0 = time.perf_counter()
    status = EXIT_OK
    try:
        result = engine.run(ds, _penalty(args), bootstrap, config)
    except NotConverged as exc:
        log.error("%s", exc)
        result = exc.result
        status = EXIT_NOT_CONVERGED
    result.stats.meta["timing"] = {"wall_s": time.perf_counter() - t0}
    data.write_stats_json(result.stats, out / "stats.json")
    data.write_trace_jsonl(result.trace, out / "trace.jsonl")
    print(f"{len(result.trace)} iterations, delta={result.trace.deltas[-1]:.3e}")
    return status

def cmd_naive(args) -> int:
    ds = _load(args.data)
    bootstrap = BootstrapSpec(tau=args.tau, oracle_mode=args.mode)
    t0 = time.perf_counter()
    stats = oracle.naive_stability(ds, _penalty(args), bootstrap, args.b, args.seed,
                                   threads=args.threads)
    stats.meta["timing"] = {"wall_s": time.perf_counter() - t0}
    data.write_stats_json(stats, Path(args.out) / "stats.json")
    print(f"{args.b} resamples, {stats.meta['redraws']} redraws")
    return EXIT_OK

def cmd_compare(args) -> int:
    for p in (args.a, args.b):
        if not Path(p).is_file():
            raise InputError(f"no such file: {p}")
    a, b = data.read_stats_json(args.a), data.read_stats_json(args.b)
    cmp = compare(a, b)
    out = Path(args.out)
    data.write_json(cmp.to_dict(), out / "metrics.json")
    cols = {"mean_a": a.mean, "mean_b": b.mean, "variance_a": a.variance,
            "variance_b": b.variance, "pi_a": a.pi, "pi_b": b.pi}
    data.write_columns_csv(cols, out / "pairs.csv")
    for name in ("mean", "variance", "pi"):
        d = getattr(cmp, name)
        print(f"{name:9s} max_abs={d.max_abs:.3e} rms={d.rms:.3e} pearson={d.pearson:.4f}")
    print(f"pi differs by more than {cmp.pi_exceed_threshold} at {cmp.pi_exceed_count} coordinates")
    return EXIT_OK

# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_penalty_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="CSV file: y then feature columns")
    p.add_argument("--lambda", dest="lam", type=float, required=True, help="base penalty strength")
    p.add_argument("--atoms", type=_atoms, default=((1.0, 0.5), (2.0, 0.5)),
                   help="penalty multipliers and weights, e.g. 1:0.5,2:0.5 (default)")
    p.add_argument("--tau", type=float, default=0.5, help="resample size over M (default 0.5)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="restab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--n", type=int, required=True, help="number of features N")
    p.add_argument("--alpha", type=float, required=True, help="M = round(alpha N)")
    p.add_argument("--rho", type=float, required=True, help="signal density")
    p.add_argument("--sigma", type=float, required=True, help="noise standard deviation")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--design", choices=("dct", "correlated"), default="dct")
    p.add_argument("--corr", type=float, default=0.3, help="column correlation (correlated design)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("cv", help="select lambda by K-fold cross validation")
    p.add_argument("--data", required=True)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--grid", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="optional JSON file with the CV curve")
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("rvamp", help="resampling statistics by message passing")
    _add_penalty_flags(p)
    p.add_argument("--tol", type=float, default=1e-12)
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--damping", type=float, default=RvampConfig.damping)
    p.add_argument("--mode", choices=("poisson", "none"), default="poisson",
                   help="'none' fixes every occupation number at 1")
    p.set_defaults(func=cmd_rvamp)

    p = sub.add_parser("naive", help="resampling statistics by brute force")
    _add_penalty_flags(p)
    p.add_argument("--b", type=int, default=10_000, help="number of resamples")
    p.add_argument("--mode", choices=("poisson", "multinomial", "none"), default="poisson")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default: RESTAB_THREADS or CPU count)")
    p.set_defaults(func=cmd_naive)

    p = sub.add_parser("compare", help="compare two statistics files")
    p.add_argument("--a", required=True, help="first stats JSON")
    p.add_argument("--b", required=True, help="second stats JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_compare)
    return parser

def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NotConverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except (InputError, RestabError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

if __name__ == "__main__":
    sys.exit(main())
