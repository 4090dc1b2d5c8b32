"""``jetsmc`` command-line interface.

Subcommands: ``generate``, ``infer``, ``fit`` and ``bench``.  Settings come
from an optional YAML file (``--config``) with one section per subcommand;
command-line flags override it.  Exit codes: 0 success, 2 configuration
error, 3 size guard, 4 inference dead end, 5 aborted fit, 1 other I/O
failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Optional

import numpy as np
import yaml

from ._rng import int_seed
from .bench import BENCH_METHODS, DEFAULT_SIZES, run_bench
from .core import GinkgoParams
from .errors import DeadEndError, FitAborted, SizeGuardError
from .exact import brute_force_log_marginal, all_tree_log_likelihoods, trellis_log_map, trellis_log_marginal
from .io import BENCH_HEADER, RUN_REPORT_HEADER, JetRecord, fit_trace_header, read_jets, write_csv, write_jets
from .search import beam_search, greedy_cluster
from .sim import default_root, generate_dataset
from .smc import run_csmc, run_ncsmc
from .variational import OptimizerConfig, VariationalParams, fit

EXIT_OK = 0
EXIT_IO = 1
EXIT_CONFIG = 2
EXIT_SIZE_GUARD = 3
EXIT_DEAD_END = 4
EXIT_FIT_ABORTED = 5

INFER_METHODS = ("greedy", "beam", "csmc", "ncsmc", "trellis-map", "trellis-marginal", "brute")

DEFAULTS: dict[str, dict[str, Any]] = {
    "generate": {
        "n_jets": 100, "lambdas": [1.5], "t_cut": 16.0, "root_energy": 400.0, "root_t": 6400.0,
        "min_leaves": 1, "max_leaves": None,
    },
    "infer": {"method": "ncsmc", "K": 64, "M": 1, "beam": 10},
    "fit": {
        "mode": "point", "method": "ncsmc", "K": 64, "M": 1, "steps": 50, "step_size": 0.05, "clip_norm": 10.0,
        "lambda0": [1.0], "mu_tilde": [0.0], "log_sigma_tilde": [-1.0], "mu0": 0.0, "sigma0": 1.0,
    },
    "bench": {
        "methods": list(BENCH_METHODS), "sizes": list(DEFAULT_SIZES), "K": 64, "beam": 64, "seeds": 3,
        "trellis_max_n": 12, "repeats": 1,
    },
}
TOP_LEVEL_KEYS = {"seed", "jobs", *DEFAULTS}


class ConfigError(ValueError):
    pass


def load_config(path: Optional[str]) -> dict[str, Any]:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = yaml.safe_load(fh) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    unknown = set(cfg) - TOP_LEVEL_KEYS
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    for section, defaults in DEFAULTS.items():
        sub = cfg.get(section, {})
        if not isinstance(sub, dict):
            raise ConfigError(f"{path}: section {section!r} must be a mapping")
        bad = set(sub) - set(defaults)
        if bad:
            raise ConfigError(f"{path}: unknown keys in {section!r}: {sorted(bad)}")
    return cfg


def resolve(cfg: dict[str, Any], section: str, args: argparse.Namespace) -> dict[str, Any]:
    """Defaults, then the config section, then command-line flags."""
    out = {**DEFAULTS[section], **cfg.get(section, {})}
    flag_map = {"method": "method", "K": "K", "M": "M", "beam": "beam"}
    for flag, key in flag_map.items():
        value = getattr(args, flag, None)
        if value is not None and key in out:
            out[key] = value
    out["seed"] = args.seed if args.seed is not None else cfg.get("seed", 0)
    out["jobs"] = resolve_jobs(args.jobs, cfg)
    if not isinstance(out["seed"], int) or out["seed"] < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {out['seed']!r}")
    if "M" in out and out["M"] != 1:
        raise ConfigError("only M = 1 is supported")
    for key in ("K", "beam", "n_jets", "steps", "seeds"):
        if key in out and (not isinstance(out[key], int) or out[key] < 1):
            raise ConfigError(f"{key} must be a positive integer, got {out[key]!r}")
    return out


def resolve_jobs(flag: Optional[int], cfg: dict[str, Any]) -> int:
    if flag is not None:
        jobs = flag
    elif "JETSMC_JOBS" in os.environ:
        try:
            jobs = int(os.environ["JETSMC_JOBS"])
        except ValueError as exc:
            raise ConfigError(f"JETSMC_JOBS must be an integer: {os.environ['JETSMC_JOBS']!r}") from exc
    else:
        jobs = cfg.get("jobs", 1)
    if not isinstance(jobs, int) or jobs < 1:
        raise ConfigError(f"jobs must be a positive integer, got {jobs!r}")
    return jobs


def _map(fn, tasks, jobs: int) -> list:
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, tasks))
    return [fn(t) for t in tasks]


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------


def cmd_generate(settings: dict[str, Any], out_path: str) -> int:
    try:
        root = default_root(float(settings["root_energy"]), float(settings["root_t"]))
        params = GinkgoParams(tuple(np.atleast_1d(settings["lambdas"])), float(settings["t_cut"]), root)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    jets = generate_dataset(params, settings["n_jets"], settings["seed"], min_leaves=settings["min_leaves"],
                            max_leaves=settings["max_leaves"])
    write_jets(out_path, (JetRecord.from_generated(j, f"jet{i:05d}") for i, j in enumerate(jets)))
    return EXIT_OK


# ---------------------------------------------------------------------------
# infer
# ---------------------------------------------------------------------------


def _infer_one(task) -> tuple:
    rec, method, K, beam, seed = task
    leaves, params = rec.leaves, rec.params
    n = rec.n_leaves
    log_z = best = None
    t0 = time.perf_counter()
    if method == "greedy":
        best = greedy_cluster(leaves, params)[1]
    elif method == "beam":
        best = beam_search(leaves, params, beam)[1]
    elif method in ("csmc", "ncsmc"):
        res = (run_csmc if method == "csmc" else run_ncsmc)(leaves, params, K, seed)
        log_z, best = res.log_z, res.best_log_likelihood
    elif method == "trellis-map":
        best = trellis_log_map(leaves, params)[1]
    elif method == "trellis-marginal":
        log_z = trellis_log_marginal(leaves, params)
    elif method == "brute":
        ll = all_tree_log_likelihoods(leaves, params)
        log_z, best = brute_force_log_marginal(leaves, params), float(ll.max())
    else:
        raise ValueError(method)
    wall_ms = 1e3 * (time.perf_counter() - t0)
    smc = method in ("csmc", "ncsmc")
    return (rec.jet_id, method, K if smc else None, 1 if smc else None, beam if method == "beam" else None,
            log_z, best, round(wall_ms, 3), seed if smc else None, n)


def cmd_infer(records: list[JetRecord], settings: dict[str, Any], out_path: str) -> int:
    method = settings["method"]
    if method not in INFER_METHODS:
        raise ConfigError(f"unknown method {method!r}; choose from {', '.join(INFER_METHODS)}")
    tasks = [(rec, method, settings["K"], settings["beam"], int_seed(settings["seed"], j)) for j, rec in enumerate(records)]
    rows = _map(_infer_one, tasks, settings["jobs"])
    write_csv(out_path, RUN_REPORT_HEADER, (row[:-1] for row in rows))
    return EXIT_OK


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------


def _initial_params(settings: dict[str, Any]) -> VariationalParams:
    try:
        if settings["mode"] == "point":
            return VariationalParams.point(settings["lambda0"])
        if settings["mode"] == "pseudo":
            return VariationalParams.pseudo(settings["mu_tilde"], settings["log_sigma_tilde"], settings["mu0"],
                                            settings["sigma0"])
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    raise ConfigError(f"fit mode must be 'point' or 'pseudo', got {settings['mode']!r}")


def param_names(vp: VariationalParams) -> list[str]:
    d = vp.n_rates
    if vp.mode == "point-estimate":
        return [f"lambda_{i + 1}" for i in range(d)]
    return [f"mu_tilde_{i + 1}" for i in range(d)] + [f"log_sigma_tilde_{i + 1}" for i in range(d)]


def cmd_fit(records: list[JetRecord], settings: dict[str, Any], out_path: str, stdout=None) -> int:
    vp0 = _initial_params(settings)
    if settings["method"] not in ("csmc", "ncsmc"):
        raise ConfigError("fit method must be csmc or ncsmc")
    try:
        config = OptimizerConfig(settings["steps"], float(settings["step_size"]),
                                 None if settings["clip_norm"] is None else float(settings["clip_norm"]))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    data = [(r.leaves, r.t_cut) for r in records]
    vp, trace = fit(data, vp0, settings["K"], settings["method"], config, settings["seed"], settings["jobs"])
    rows = ((s.step, s.objective, *map(float, s.params), s.grad_norm, round(s.wall_ms, 3)) for s in trace)
    write_csv(out_path, fit_trace_header(param_names(vp)), rows)
    result = dict(zip(param_names(vp), map(float, vp.active())))
    result["mode"] = vp.mode
    if vp.mode == "pseudo-marginal":
        result["exp_mu_tilde"] = [math.exp(m) for m in vp.mu_tilde]
    print(json.dumps(result), file=stdout or sys.stdout)
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------


def cmd_bench(settings: dict[str, Any], out_path: str) -> int:
    unknown = set(settings["methods"]) - set(BENCH_METHODS)
    if unknown:
        raise ConfigError(f"unknown bench methods {sorted(unknown)}")
    rows = run_bench(settings["methods"], settings["sizes"], settings["K"], settings["beam"], settings["seeds"],
                     settings["trellis_max_n"], settings["repeats"])
    write_csv(out_path, BENCH_HEADER, (r.as_tuple() for r in rows))
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML settings file")
    common.add_argument("--seed", type=int)
    common.add_argument("--method")
    common.add_argument("--K", type=int)
    common.add_argument("--M", type=int, help="inner samples per merge; must be 1")
    common.add_argument("--beam", type=int)
    common.add_argument("--out", required=True)
    common.add_argument("--jobs", type=int, help="worker processes (default: $JETSMC_JOBS or 1)")

    parser = argparse.ArgumentParser(prog="jetsmc", description="Jet simulation and tree inference")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="simulate jets to JSON Lines")
    p = sub.add_parser("infer", parents=[common], help="cluster every jet in a dataset")
    p.add_argument("dataset")
    p = sub.add_parser("fit", parents=[common], help="learn decay rates from a dataset")
    p.add_argument("dataset")
    sub.add_parser("bench", parents=[common], help="time methods against the leaf count")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        settings = resolve(cfg, args.command, args)
        if args.command == "generate":
            return cmd_generate(settings, args.out)
        if args.command == "bench":
            return cmd_bench(settings, args.out)
        records = read_jets(args.dataset)
        if args.command == "infer":
            return cmd_infer(records, settings, args.out)
        return cmd_fit(records, settings, args.out)
    except ConfigError as exc:
        print(f"jetsmc: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SizeGuardError as exc:
        print(f"jetsmc: size guard: {exc}", file=sys.stderr)
        return EXIT_SIZE_GUARD
    except DeadEndError as exc:
        print(f"jetsmc: dead end: {exc}", file=sys.stderr)
        return EXIT_DEAD_END
    except FitAborted as exc:
        print(f"jetsmc: fit aborted: {exc}", file=sys.stderr)
        return EXIT_FIT_ABORTED
    except (OSError, ValueError) as exc:
        print(f"jetsmc: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
