"""Command-line interface.

Exit codes: 0 success, 2 configuration or schema error, 3 I/O error,
4 estimation did not converge, 5 internal error, 130 interrupted (partial
results are written with ``truncated: true``).
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import fields

import numpy as np

from . import __version__
from . import io as mio
from .confset import SLICE_TOL, GridSpec, default_workers, evaluate_point, export_slices, invert_test
from .demand import Draws, estimate_demand, invert_all
from .exceptions import (
    ConfigInvalid,
    IoFailure,
    MomIneqError,
    NoConvergence,
    SchemaError,
    SliceNotOnGrid,
)
from .market import SunkCostTheta, SynthConfig, VehicleMarketModel, prepare_panel, synth_dgp
from .montecarlo import (
    DESIGNS,
    CoverageConfig,
    interior_designs,
    run_coverage_study,
    run_size_study,
)
from .polyhedra import ENUMERATION_CAP, eliminate_nuisance
from .two_stage import FirstStageEstimate

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NOCONV, EXIT_INTERNAL, EXIT_INTERRUPT = 0, 2, 3, 4, 5, 130

log = logging.getLogger("momineq")

SYNTH_FLAGS = {
    "n_markets": int, "n_firms": int, "n_types": int, "n_periods": int,
    "lam": float, "slack": float, "xi_sd": float, "cost_sd": float, "size_sd": float,
    "event_rate": float, "market_size": float, "expectation_draws": int, "template_seed": int,
}
SYNTH_FIELDS = {f.name for f in fields(SynthConfig)}


def _floats(text):
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _add_draws(p):
    g = p.add_argument_group("simulation draws")
    g.add_argument("--draws", type=int, default=1, help="number of heterogeneity draws R")
    g.add_argument("--sigma", type=_floats, default=None,
                   help="draw standard deviations, 4 characteristics then price (default all 0)")
    g.add_argument("--draws-seed", type=int, default=0, help="seed of the common random numbers")


def _add_first_stage(p):
    g = p.add_argument_group("first stage")
    g.add_argument("--tol", type=float, default=1e-8, help="BFGS gradient tolerance")
    g.add_argument("--max-iter", type=int, default=500, help="BFGS iteration cap")
    g.add_argument("--inversion-tol", type=float, default=1e-12, help="share inversion tolerance")
    g.add_argument("--inversion-max-iter", type=int, default=10_000, help="share inversion iteration cap")
    g.add_argument("--init", type=_floats, default=None, help="starting value for (beta, alpha)")


def _add_synth(p):
    g = p.add_argument_group("synthetic data")
    for name, typ in SYNTH_FLAGS.items():
        g.add_argument("--" + name.replace("_", "-"), type=typ, default=None, dest=name,
                       help=f"override SynthConfig.{name}")
    g.add_argument("--eta", type=_floats, default=None, help="true sunk-cost loadings (4 values)")
    g.add_argument("--beta", type=_floats, default=None, help="true taste coefficients (4 values)")
    g.add_argument("--price-coef", type=float, default=None, dest="price_coef",
                   help="true price coefficient alpha in utility")
    g.add_argument("--synth", type=json.loads, default=None,
                   help="JSON object of SynthConfig fields")


def build_parser():
    parser = _Parser(prog="momineq", description="Moment-inequality inference with a first-stage nuisance estimate.")
    parser.add_argument("--version", action="version", version=f"momineq {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", default=None, help="JSON file whose keys set flag defaults")
        p.add_argument("--seed", type=int, default=0, help="master random seed")
        return p

    p = command("simulate", "Write a synthetic demand file, events file and truth JSON.")
    p.add_argument("--out", required=True, help="output directory")
    _add_synth(p)
    _add_draws(p)

    p = command("first-stage", "Estimate the demand parameters and their influence values.")
    p.add_argument("--demand", required=True, help="demand CSV")
    p.add_argument("--out", required=True, help="output JSON")
    _add_draws(p)
    _add_first_stage(p)

    for name, help_text in (("rcc-test", "Test one parameter value."),
                            ("confset", "Invert the test over a parameter grid.")):
        p = command(name, help_text)
        p.add_argument("--demand", required=True, help="demand CSV")
        p.add_argument("--events", required=True, help="events CSV")
        p.add_argument("--first-stage", default=None, dest="first_stage",
                       help="first-stage JSON to reuse instead of re-estimating")
        p.add_argument("--alpha", type=float, default=0.05, help="test level")
        p.add_argument("--center", action="store_true", help="demean the corrected moments")
        _add_draws(p)
        _add_first_stage(p)
        if name == "rcc-test":
            p.add_argument("--theta", type=_floats, required=True, help="lambda,eta_1,...,eta_4")
            p.add_argument("--out", default=None, help="also write the result JSON here")
        else:
            p.add_argument("--grid", type=json.loads, default=None, help="grid spec as JSON")
            p.add_argument("--grid-file", default=None, help="grid spec JSON file")
            p.add_argument("--fix", action="append", default=None,
                           help="slice to export, e.g. 'eta_2=0.2,eta_3=0.1,eta_4=0.3' (repeatable)")
            p.add_argument("--out", required=True, help="output directory")
            p.add_argument("--workers", type=int, default=None, help="worker processes")

    p = command("eliminate", "Eliminate the nuisance block by vertex enumeration.")
    p.add_argument("--B", required=True, dest="B", help="CSV matrix B")
    p.add_argument("--C", required=True, dest="C", help="CSV matrix C")
    p.add_argument("--d", required=True, dest="d", help="CSV vector d (one value per row)")
    p.add_argument("--cap", type=int, default=ENUMERATION_CAP, help="largest k accepted")
    p.add_argument("--out", required=True, help="output directory")

    p = command("size-study", "Monte Carlo rejection rates or coverage.")
    p.add_argument("--design", default="boundary",
                   choices=sorted(DESIGNS) + ["interior", "coverage"], help="study design")
    p.add_argument("--reps", type=int, default=10_000, help="replications")
    p.add_argument("--alpha", type=float, default=0.05, help="test level")
    p.add_argument("--n", type=int, default=500, help="sample size of the Gaussian designs")
    p.add_argument("--center", action="store_true", help="demean corrected moments (coverage)")
    p.add_argument("--workers", type=int, default=None, help="worker processes")
    p.add_argument("--out", required=True, help="output JSON")
    _add_synth(p)
    _add_draws(p)
    return parser


def _subparser(parser, command):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[command]
    raise KeyError(command)


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            with open(args.config) as fh:
                cfg = json.load(fh)
        except OSError as exc:
            raise IoFailure(f"cannot read config {args.config}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigInvalid(f"config: invalid JSON ({exc})") from exc
        if not isinstance(cfg, dict):
            raise ConfigInvalid("config: top level must be an object")
        sp = _subparser(parser, args.command)
        known = {a.dest for a in sp._actions} - {"help", "config"}
        unknown = sorted(set(cfg) - known)
        if unknown:
            raise ConfigInvalid(f"config: unknown keys {unknown}")
        # config values become defaults; flags given explicitly still win
        sp.set_defaults(**{k.replace("-", "_"): v for k, v in cfg.items()})
        args = parser.parse_args(argv)
    return args


# --------------------------------------------------------------------------
# helpers


def _draws(args):
    sigma = np.zeros(5) if args.sigma is None else np.asarray(args.sigma, dtype=float)
    if sigma.size != 5:
        raise ConfigInvalid("sigma: needs 5 values (4 characteristics, then price)")
    if args.draws < 1:
        raise ConfigInvalid("draws: must be at least 1")
    return Draws(R=args.draws, seed=args.draws_seed, sigma=sigma)


def _synth_config(args):
    base = dict(args.synth or {})
    unknown = sorted(set(base) - SYNTH_FIELDS)
    if unknown:
        raise ConfigInvalid(f"synth: unknown keys {unknown}")
    for name in SYNTH_FLAGS:
        if getattr(args, name) is not None:
            base[name] = getattr(args, name)
    for flag, name in (("eta", "eta"), ("beta", "beta"), ("price_coef", "alpha")):
        if getattr(args, flag) is not None:
            base[name] = getattr(args, flag)
    base["n_draws"] = args.draws
    base["draws_seed"] = args.draws_seed
    if args.sigma is not None:
        base["sigma"] = args.sigma
    try:
        return SynthConfig(**base)
    except TypeError as exc:
        raise ConfigInvalid(f"synth: {exc}") from exc


def _estimate(args, demand, draws):
    return estimate_demand(
        demand, draws, init=args.init, tol=args.tol, max_iter=args.max_iter,
        inversion_tol=args.inversion_tol, inversion_max_iter=args.inversion_max_iter,
    )


def _first_stage_record(est, draws, meta):
    return {
        "metadata": meta,
        "converged": est.converged,
        "delta_hat": est.delta_hat,
        "beta": est.delta_hat[:-1],
        "alpha": float(est.delta_hat[-1]),
        "objective": est.objective_value,
        "iterations": est.iterations,
        "message": est.message,
        "gradient_norm": est.extra.get("gradient_norm"),
        "fingerprint": est.fingerprint(),
        "draws": draws.to_dict(),
        "influence": est.influence,
        "G": est.G,
    }


def _load_first_stage(path):
    rec = mio.read_json(path)
    try:
        est = FirstStageEstimate(
            delta_hat=np.asarray(rec["delta_hat"], dtype=float),
            influence=np.asarray(rec["influence"], dtype=float),
            G=np.asarray(rec["G"], dtype=float),
            converged=bool(rec["converged"]),
            objective_value=float(rec["objective"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"{path}: not a first-stage file ({exc})") from exc
    if est.fingerprint() != rec.get("fingerprint"):
        raise SchemaError(f"{path}: fingerprint does not match its contents")
    return est


def _second_stage(args):
    draws = _draws(args)
    demand = mio.read_demand_csv(args.demand)
    events = mio.read_events_csv(args.events)
    if args.first_stage:
        est = _load_first_stage(args.first_stage)
        if not est.converged:
            raise NoConvergence("the supplied first stage did not converge")
        zeta = invert_all(demand, draws, tol=args.inversion_tol, max_iter=args.inversion_max_iter)
    else:
        est = _estimate(args, demand, draws)
        zeta = est.extra["zeta"]
    panel = prepare_panel(demand.with_zeta(zeta), events, draws)
    return VehicleMarketModel.from_panel(panel), panel, est


# --------------------------------------------------------------------------
# subcommands


def cmd_simulate(args):
    cfg = _synth_config(args)
    ds = synth_dgp(cfg, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    meta = mio.metadata(seed=args.seed, config=cfg.to_dict())
    mio.write_demand_csv(ds.demand, os.path.join(args.out, "demand.csv"), meta)
    mio.write_events_csv(ds.events, os.path.join(args.out, "events.csv"), meta)
    truth = dict(ds.truth(), metadata=meta, config=cfg.to_dict())
    mio.write_json(truth, os.path.join(args.out, "truth.json"))
    log.info("wrote %d demand rows and %d events to %s", ds.demand.n_rows, len(ds.events), args.out)
    return EXIT_OK


def cmd_first_stage(args):
    draws = _draws(args)
    demand = mio.read_demand_csv(args.demand)
    meta = mio.metadata(seed=args.seed, input=os.path.basename(args.demand))
    try:
        est = _estimate(args, demand, draws)
        code = EXIT_OK
    except NoConvergence as exc:
        est = getattr(exc, "estimate", None)
        if est is None:
            raise
        log.error("%s", exc)
        code = EXIT_NOCONV
    mio.write_json(_first_stage_record(est, draws, meta), args.out)
    return code


def cmd_rcc_test(args):
    model, panel, est = _second_stage(args)
    if len(args.theta) != len(model.theta_labels):
        raise ConfigInvalid(f"theta: needs {len(model.theta_labels)} values {model.theta_labels}")
    theta = SunkCostTheta.from_array(args.theta)
    if not 0.0 <= theta.lam <= 1.0:
        raise ConfigInvalid("theta: lambda must lie in [0, 1]")
    res = evaluate_point(model, panel, theta, est, alpha=args.alpha, center=args.center)
    out = dict(res.to_dict(), theta=list(args.theta), alpha=args.alpha,
               metadata=mio.metadata(seed=args.seed, delta_fingerprint=est.fingerprint()))
    text = mio.dumps_json(out)
    sys.stdout.write(text)
    if args.out:
        mio.write_json(out, args.out)
    return EXIT_OK


def _parse_fix(text):
    fixed = {}
    for part in text.split(","):
        if not part.strip():
            continue
        key, sep, value = part.partition("=")
        if not sep:
            raise ConfigInvalid(f"fix: expected label=value, got {part!r}")
        try:
            fixed[key.strip()] = float(value)
        except ValueError:
            raise ConfigInvalid(f"fix: {value!r} is not a number") from None
    return fixed


def _check_slice(grid, fixed):
    for label, value in fixed.items():
        if label not in grid.labels:
            raise SliceNotOnGrid(f"no grid dimension named {label!r}")
        vals = grid.dims[grid.labels.index(label)].values()
        if not np.any(np.abs(vals - value) <= SLICE_TOL * (1.0 + abs(value))):
            raise SliceNotOnGrid(f"{label}={value} is not a grid value")
    if len(grid.labels) - len(fixed) != 2:
        raise SliceNotOnGrid("a slice must leave exactly two dimensions free")


def cmd_confset(args):
    if args.grid_file:
        spec = mio.read_json(args.grid_file)
    elif args.grid is not None:
        spec = args.grid
    else:
        raise ConfigInvalid("grid: pass --grid or --grid-file")
    spec = dict(spec)
    spec.setdefault("alpha", args.alpha)
    grid = GridSpec.from_dict(spec)
    slices = [_parse_fix(f) for f in (args.fix or [])]
    for fixed in slices:
        _check_slice(grid, fixed)
    model, panel, est = _second_stage(args)
    os.makedirs(args.out, exist_ok=True)
    meta = mio.metadata(seed=args.seed, config=grid.to_dict(),
                        demand=os.path.basename(args.demand), events=os.path.basename(args.events))
    workers = default_workers() if args.workers is None else args.workers
    holder = {}
    try:
        result = invert_test(grid, model, panel, est, center=args.center, workers=workers,
                             metadata=meta, progress=lambda i, g: holder.update(grid=g, done=i + 1))
    except KeyboardInterrupt:
        partial = holder.get("grid")
        if partial is not None:
            partial.metadata["truncated"] = True
            partial.metadata["points_done"] = holder["done"]
            partial.dump(os.path.join(args.out, "confset.json"))
        return EXIT_INTERRUPT
    result.dump(os.path.join(args.out, "confset.json"))

    if not slices:
        free = [d.label for d in grid.dims if not d.is_fixed]
        if len(free) == 2:
            slices = [{d.label: float(d.values()[0]) for d in grid.dims if d.is_fixed}]
    for fixed in slices:
        labels = [l for l in grid.labels if l not in fixed]
        export_slices(result, fixed, os.path.join(args.out, f"slice_{'_'.join(labels)}.csv"), meta)
    n_acc = int(result.accepted.sum())
    log.info("%d of %d grid points accepted, %d undecided", n_acc, len(result.points), int(result.undecided.sum()))
    return EXIT_OK


def cmd_eliminate(args):
    B = mio.read_matrix_csv(args.B)
    C = mio.read_matrix_csv(args.C)
    d = mio.read_matrix_csv(args.d).ravel()
    if C.size == 0:
        C = np.zeros((B.shape[0], 1))
    res = eliminate_nuisance(B, C, d, cap=args.cap)
    os.makedirs(args.out, exist_ok=True)
    meta = mio.metadata(seed=args.seed)
    mio.write_matrix_csv(res.A, os.path.join(args.out, "A.csv"), meta)
    mio.write_matrix_csv(res.b[:, None], os.path.join(args.out, "b.csv"), meta)
    mio.write_matrix_csv(res.H, os.path.join(args.out, "H.csv"), meta)
    return EXIT_OK


def cmd_size_study(args):
    workers = default_workers() if args.workers is None else args.workers
    meta = mio.metadata(seed=args.seed)
    if args.design == "coverage":
        config = CoverageConfig(synth=_synth_config(args), reps=args.reps, alpha=args.alpha,
                                seed=args.seed, center=args.center)
        meta["config_hash"] = mio.config_hash(config.to_dict())
        results = [run_coverage_study(config, workers=workers)]
    elif args.design == "interior":
        results = [run_size_study(d, workers=workers)
                   for d in interior_designs(reps=args.reps, alpha=args.alpha, seed=args.seed, n=args.n)]
    else:
        design = DESIGNS[args.design](reps=args.reps, alpha=args.alpha, seed=args.seed, n=args.n)
        results = [run_size_study(design, workers=workers)]
    out = {"metadata": meta, "design": args.design, "alpha": args.alpha,
           "studies": [r.to_dict() for r in results]}
    mio.write_json(out, args.out)
    truncated = any(r.truncated for r in results)
    return EXIT_INTERRUPT if truncated else EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "first-stage": cmd_first_stage,
    "rcc-test": cmd_rcc_test,
    "confset": cmd_confset,
    "eliminate": cmd_eliminate,
    "size-study": cmd_size_study,
}


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
    except (ConfigInvalid, SchemaError) as exc:
        print(f"momineq: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IoFailure as exc:
        print(f"momineq: {exc}", file=sys.stderr)
        return EXIT_IO
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigInvalid, SchemaError, SliceNotOnGrid) as exc:
        print(f"momineq: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IoFailure, OSError) as exc:
        print(f"momineq: {exc}", file=sys.stderr)
        return EXIT_IO
    except NoConvergence as exc:
        print(f"momineq: {exc}", file=sys.stderr)
        return EXIT_NOCONV
    except KeyboardInterrupt:
        print("momineq: interrupted", file=sys.stderr)
        return EXIT_INTERRUPT
    except (MomIneqError, np.linalg.LinAlgError) as exc:
        print(f"momineq: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except ValueError as exc:
        print(f"momineq: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        print(f"momineq: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
