"""Batch command line: simulate, fit, oracle, dyadic, voronoi-fit, eval.

Exit status is 0 on success, 2 on usage errors (bad flags, unreadable
inputs) and 1 on runtime failures such as an exceeded oracle budget.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .core import DomainError, HierarchyPrior, LabeledDataset, ResourceError, UsageError

log = logging.getLogger("stepbayes")

DEFAULTS = {
    "simulate": {"kind": "f0", "n": 1024},
    "fit": {"prior": "geometric:0.5", "iters": 200_000, "burnin": None, "chains": 1, "grid": 513},
    "oracle": {"prior": "geometric:0.5", "kmax": 10, "grid": 513},
    "dyadic": {"prior": None, "kmax": 16, "grid": 513},
    "voronoi-fit": {"alpha": 0.5, "gamma": 5.0, "weighted": False, "iters": 200_000, "burnin": None, "grid": 0},
    "eval": {"kind": "f0"},
}
RANDOMIZED = {"simulate", "fit", "voronoi-fit"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="stepbayes", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, *flags):
        sp.add_argument("--config", help="JSON file with parameter values; flags override it")
        sp.add_argument("--out", help="output file (simulate) or directory")
        for f in flags:
            f(sp)

    seed = lambda sp: sp.add_argument("--seed", type=int)
    data = lambda sp: sp.add_argument("--data", help="input CSV")
    prior = lambda sp: sp.add_argument("--prior", help="geometric:A | poisson:L | table:PATH")
    grid = lambda sp: sp.add_argument("--grid", type=int, help="grid size")
    kind = lambda sp: sp.add_argument("--kind", help="f0 | null | hard:DEPTH (simulate also: 2d)")
    iters = lambda sp: sp.add_argument("--iters", type=int)
    burn = lambda sp: sp.add_argument("--burnin", type=int)
    kmax = lambda sp: sp.add_argument("--kmax", type=int)

    common(sub.add_parser("simulate", help="write a synthetic dataset"), kind, seed,
           lambda sp: sp.add_argument("--n", type=int))
    common(sub.add_parser("fit", help="MCMC posterior mean for 1-D data"), data, prior, iters, burn, seed, grid, kind,
           lambda sp: sp.add_argument("--chains", type=int))
    common(sub.add_parser("oracle", help="exact posterior for n <= 8"), data, prior, kmax, grid)
    common(sub.add_parser("dyadic", help="exact dyadic-prior posterior"), data, prior, kmax, grid)
    common(sub.add_parser("voronoi-fit", help="Voronoi subset posterior mean"), data, iters, burn, seed, grid,
           lambda sp: sp.add_argument("--alpha", type=float),
           lambda sp: sp.add_argument("--gamma", type=float),
           lambda sp: sp.add_argument("--weighted", action="store_true", default=None))
    common(sub.add_parser("eval", help="distances between a curve and a true function"), data, kind, grid)
    return p


def resolve_config(args: argparse.Namespace) -> dict:
    """Defaults, then the JSON config file, then explicit flags."""
    cmd = args.command
    cfg = dict(DEFAULTS.get(cmd, {}))
    if args.config:
        try:
            with open(args.config) as fh:
                file_cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(file_cfg, dict):
            raise UsageError("config file must hold a JSON object")
        cfg.update(file_cfg)
    for key, val in vars(args).items():
        if key in ("command", "config") or val is None:
            continue
        cfg[key] = val
    cfg["command"] = cmd
    if cmd in RANDOMIZED and cfg.get("seed") is None:
        raise UsageError(f"{cmd} requires --seed")
    if cmd != "simulate" and not cfg.get("data"):
        raise UsageError(f"{cmd} requires --data")
    if cfg.get("data") and not Path(cfg["data"]).is_file():
        raise UsageError(f"data file not found: {cfg['data']}")
    if not cfg.get("out"):
        raise UsageError(f"{cmd} requires --out")
    return cfg


def _outdir(cfg) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _load_1d(cfg) -> LabeledDataset:
    try:
        return LabeledDataset.from_csv(cfg["data"])
    except DomainError as exc:
        raise UsageError(str(exc)) from None


def cmd_simulate(cfg) -> None:
    from .datasim import generate_dataset_1d, generate_dataset_2d

    if cfg["kind"] == "2d":
        generate_dataset_2d(int(cfg["n"]), int(cfg["seed"])).to_csv(cfg["out"])
    else:
        generate_dataset_1d(cfg["kind"], int(cfg["n"]), int(cfg["seed"])).to_csv(cfg["out"])


def cmd_fit(cfg) -> None:
    from .datasim import true_function
    from .estimator import default_grid, lp_distance, model_size_histogram, posterior_mean_curve
    from .sampler import ChainTrace, KernelConfig, run_chains

    data = _load_1d(cfg)
    prior = HierarchyPrior.parse(cfg["prior"])
    kc = KernelConfig(iterations=int(cfg["iters"]), burn_in=cfg["burnin"], seed=int(cfg["seed"]))
    cfg["burnin"] = kc.burn_in
    traces = run_chains(data, prior, kc, chains=int(cfg["chains"]))
    trace = ChainTrace.merge(traces)
    grid = default_grid(int(cfg["grid"]))
    curve = posterior_mean_curve(trace, data, grid)
    hist = model_size_histogram(trace)
    out = _outdir(cfg)
    curve.to_csv(out / "curve.csv")
    hist.to_csv(out / "khist.csv")
    summary = {
        "k_mode": hist.mode,
        "acceptance_rates": {str(a): r for a, r in trace.acceptance_rates().items()},
        "l2_error": lp_distance(curve, true_function(cfg["kind"]), 2, grid) if cfg.get("kind") else None,
        "config": cfg,
    }
    _write_json(out / "summary.json", summary)


def cmd_oracle(cfg) -> None:
    from .estimator import default_grid
    from .oracle import exact_posterior_small

    data = _load_1d(cfg)
    prior = HierarchyPrior.parse(cfg["prior"])
    res = exact_posterior_small(data, prior, int(cfg["kmax"]), default_grid(int(cfg["grid"])))
    out = _outdir(cfg)
    res.curve.to_csv(out / "curve.csv")
    with open(out / "kpost.csv", "w") as fh:
        fh.write("k,probability\n")
        for k, p in enumerate(res.k_posterior, start=1):
            fh.write(f"{k},{p!r}\n")
    _write_json(out / "summary.json", {
        "k_mode": int(np.argmax(res.k_posterior) + 1),
        "prior_tail_mass": res.tail_mass,
        "posterior_tail_bound": res.posterior_tail_bound,
        "config": cfg,
    })


def cmd_dyadic(cfg) -> None:
    from .estimator import PosteriorMeanCurve, default_grid
    from .marginal import DYADIC_BETA, dyadic_exact_posterior, geometric_level_prior

    data = _load_1d(cfg)
    beta = DYADIC_BETA
    if cfg.get("prior"):
        kind, _, arg = cfg["prior"].partition(":")
        if kind != "geometric":
            raise UsageError("dyadic levels take a geometric:BETA prior")
        beta = float(arg)
    cfg["prior"] = f"geometric:{beta!r}"
    res = dyadic_exact_posterior(data, geometric_level_prior(beta), int(cfg["kmax"]), default_grid(int(cfg["grid"])))
    out = _outdir(cfg)
    PosteriorMeanCurve(res.grid, res.mean).to_csv(out / "curve.csv")
    with open(out / "levels.csv", "w") as fh:
        fh.write("level,probability\n")
        for k, p in zip(res.levels, res.level_posterior):
            fh.write(f"{k},{p!r}\n")
    _write_json(out / "summary.json", {"mode_level": res.mode_level, "tail_mass": res.tail_mass, "config": cfg})


def cmd_voronoi_fit(cfg) -> None:
    from .voronoi import CovariateSet, mean_surface_grid, run_subset_chain, voronoi_posterior_mean

    try:
        cov = CovariateSet.from_csv(cfg["data"])
    except DomainError as exc:
        raise UsageError(str(exc)) from None
    iters = int(cfg["iters"])
    burn = iters // 10 if cfg.get("burnin") is None else int(cfg["burnin"])
    cfg["burnin"] = burn
    weighted = bool(cfg.get("weighted"))
    trace = run_subset_chain(cov, float(cfg["alpha"]), iters, burn, int(cfg["seed"]),
                             gamma=float(cfg["gamma"]) if weighted else None, weighted=weighted)
    pts = cov.points if int(cfg["grid"]) <= 0 else mean_surface_grid(cov, int(cfg["grid"]))
    mean = voronoi_posterior_mean(trace, cov, pts)
    out = _outdir(cfg)
    with open(out / "surface.csv", "w") as fh:
        fh.write(",".join([f"x{i + 1}" for i in range(cov.dim)] + ["mean"]) + "\n")
        for row, m in zip(pts.tolist(), mean.tolist()):
            fh.write(",".join(repr(v) for v in row + [m]) + "\n")
    rates = {k: trace.accepted[k] / v for k, v in trace.proposals.items() if v}
    _write_json(out / "summary.json", {"acceptance_rates": rates, "config": cfg})


def cmd_eval(cfg) -> None:
    from .datasim import true_function
    from .estimator import PosteriorMeanCurve, hellinger_curves, lp_distance

    try:
        curve = PosteriorMeanCurve.from_csv(cfg["data"])
    except (DomainError, ValueError, IndexError) as exc:
        raise UsageError(f"bad curve file: {exc}") from None
    truth = true_function(cfg["kind"])
    out = Path(cfg["out"])
    if out.suffix != ".json":
        out.mkdir(parents=True, exist_ok=True)
        out = out / "metrics.json"
    _write_json(out, {
        "l1_error": lp_distance(curve, truth, 1),
        "l2_error": lp_distance(curve, truth, 2),
        "hellinger": hellinger_curves(curve, truth),
        "config": cfg,
    })


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "oracle": cmd_oracle,
    "dyadic": cmd_dyadic,
    "voronoi-fit": cmd_voronoi_fit,
    "eval": cmd_eval,
}


def run_command(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = resolve_config(args)
        if cfg["command"] in ("simulate", "eval"):
            from .datasim import parse_kind

            if cfg.get("kind") != "2d":
                try:
                    parse_kind(cfg["kind"])
                except (DomainError, ValueError) as exc:
                    raise UsageError(str(exc)) from None
        if cfg.get("prior") and cfg["command"] in ("fit", "oracle"):
            try:
                HierarchyPrior.parse(cfg["prior"])
            except (DomainError, ValueError, OSError) as exc:
                raise UsageError(f"bad --prior: {exc}") from None
    except UsageError as exc:
        print(f"stepbayes: error: {exc}", file=sys.stderr)
        return 2
    log.info("resolved config: %s", json.dumps(cfg, sort_keys=True, default=str))
    try:
        COMMANDS[cfg["command"]](cfg)
    except UsageError as exc:
        print(f"stepbayes: error: {exc}", file=sys.stderr)
        return 2
    except (ResourceError, DomainError, OSError, ValueError) as exc:
        print(f"stepbayes: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
