"""Command-line interface: ``causalvd decompose`` and ``causalvd simulate``.

Exit codes: 0 success, 2 invalid input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .data import OUTCOME_KINDS, ColumnRoles, load_csv
from .decompose import COLUMNS, decompose
from .errors import DataError, DimensionMismatch, FitError, UnsupportedDims
from .kernels import BACKEND
from .models import fit_models
from .simulate import (
    BUILTINS,
    DEFAULT_SUPERPOP,
    Scenario,
    builtin,
    run_replicates,
    sampling_distribution_rows,
    sd_se_rows,
    true_components,
)
from .uncertainty import Pipeline, bootstrap, posterior_draws, to_percent, write_replicates_csv

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3

# keys accepted in a --config file, mapped to argparse destinations
_CONFIG_KEYS = {
    "data": "data", "outcome": "outcome", "hospital": "hospital", "group": "group",
    "covariates": "covariates", "outcome_kind": "outcome_kind", "outcome-kind": "outcome_kind",
    "hospital_levels": "hospital_levels", "group_levels": "group_levels", "uncertainty": "uncertainty",
    "b": "B", "seed": "seed", "out": "out", "scale": "scale", "threads": "threads",
}


class UsageError(Exception):
    pass


def _split(value):
    if value is None:
        return ()
    if isinstance(value, (list, tuple)):
        return tuple(value)
    return tuple(v.strip() for v in str(value).split(",") if v.strip())


def read_config(path):
    """Parse ``key = value`` lines (``#`` comments, optional ``[section]`` headers)."""
    text = Path(path).read_text(encoding="utf-8")
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str.lower
    if not text.lstrip().startswith("["):
        text = "[run]\n" + text
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise UsageError(f"cannot parse config file {path}: {exc}") from None
    out = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            if key not in _CONFIG_KEYS:
                raise UsageError(f"unknown config key {key!r}")
            out[_CONFIG_KEYS[key]] = value
    return out


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _dump_json(obj, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_rows(rows, path, fields=None):
    fields = fields or (list(rows[0]) if rows else [])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def _manifest(command, config, seed, inputs, timings):
    return {
        "command": command,
        "config": config,
        "seed": seed,
        "version": __version__,
        "kernel_backend": BACKEND,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "inputs": inputs,
        "timings_seconds": timings,
    }


# ---------------------------------------------------------------------------
# decompose
# ---------------------------------------------------------------------------

def _scaled(vec, scale):
    """Nine values (w1..w8, total) in the presentation scale and its multiplier."""
    vec = np.asarray(vec, dtype=float)
    if scale == "percent":
        return to_percent(vec[None, :])[0], None
    return vec * 100.0, 100.0


def _resolve_decompose(args):
    cfg = read_config(args.config) if args.config else {}
    merged = dict(cfg)
    for key in _CONFIG_KEYS.values():
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = val
    for key in ("data", "outcome", "hospital", "group", "outcome_kind"):
        if not merged.get(key):
            flag = "--" + key.replace("_", "-")
            raise UsageError(f"missing required option {flag}")
    if merged["outcome_kind"] not in OUTCOME_KINDS:
        raise UsageError(f"--outcome-kind must be one of {OUTCOME_KINDS}")
    merged.setdefault("uncertainty", "none")
    merged.setdefault("scale", "percent")
    if merged["uncertainty"] not in ("none", "draws", "bootstrap"):
        raise UsageError("--uncertainty must be none, draws or bootstrap")
    if merged["scale"] not in ("raw", "percent"):
        raise UsageError("--scale must be raw or percent")
    try:
        merged["B"] = int(merged.get("B", 1000))
        merged["threads"] = int(merged.get("threads", 1))
        if merged.get("seed") is not None:
            merged["seed"] = int(merged["seed"])
    except ValueError as exc:
        raise UsageError(f"invalid integer option: {exc}") from None
    if merged["uncertainty"] != "none":
        if merged.get("seed") is None:
            raise UsageError("--seed is required when --uncertainty is draws or bootstrap")
        if merged["B"] < 2:
            raise UsageError("--B must be at least 2")
    merged["covariates"] = list(_split(merged.get("covariates")))
    for key in ("hospital_levels", "group_levels"):
        if merged.get(key) is not None:
            merged[key] = list(_split(merged[key]))
    return merged


def cmd_decompose(args) -> int:
    t0 = time.perf_counter()
    cfg = _resolve_decompose(args)
    levels = {}
    if cfg.get("hospital_levels"):
        levels[cfg["hospital"]] = tuple(cfg["hospital_levels"])
    if cfg.get("group_levels"):
        levels[cfg["group"]] = tuple(cfg["group_levels"])
    roles = ColumnRoles(cfg["outcome"], cfg["hospital"], cfg["group"], tuple(cfg["covariates"]),
                        cfg["outcome_kind"], levels)
    try:
        dataset = load_csv(cfg["data"], roles)
    except FileNotFoundError:
        raise UsageError(f"data file not found: {cfg['data']}") from None
    t_load = time.perf_counter()

    models = fit_models(dataset)
    comp = decompose(dataset, models)
    t_fit = time.perf_counter()

    scale = cfg["scale"]
    values, mult = _scaled(comp.vector(), scale)
    result = {
        "scale": scale,
        "multiplier": mult,
        "components": dict(zip(COLUMNS, values.tolist())),
        "raw": comp.as_dict(),
        "n": dataset.n, "J": dataset.J, "K": dataset.K, "p": dataset.p,
        "sample_variance_y": comp.sample_variance_y,
        "empty_cells": [list(c) for c in comp.empty_cells],
        "fits": {
            name: {"converged": fit.converged, "iterations": fit.iterations, "separation": fit.separation}
            for name, fit in (("outcome", models.outcome), ("hospital", models.hospital), ("group", models.group))
        },
        "hospital_levels": list(dataset.hospitals.labels),
        "group_levels": list(dataset.groups.labels),
    }
    unc = None
    if cfg["uncertainty"] == "draws":
        unc = posterior_draws(models, dataset, cfg["B"], cfg["seed"], threads=cfg["threads"])
    elif cfg["uncertainty"] == "bootstrap":
        unc = bootstrap(dataset, cfg["B"], cfg["seed"], Pipeline(), threads=cfg["threads"])
    if unc is not None:
        mat = to_percent(unc.matrix) if scale == "percent" else unc.matrix * 100.0
        summary = type(unc.summary).from_matrix(mat, unc.summary.method, cfg["seed"], unc.summary.failures)
        d = summary.as_dict()
        d["scale"] = scale
        d["failed_replicates"] = list(unc.failed_replicates)
        result["uncertainty"] = d
    t_end = time.perf_counter()

    timings = {"load": t_load - t0, "fit_and_decompose": t_fit - t_load, "uncertainty": t_end - t_fit}
    manifest = _manifest("decompose", {k: v for k, v in cfg.items()}, cfg.get("seed"),
                         {"data": {"path": str(cfg["data"]), "sha256": file_digest(cfg["data"])}}, timings)
    if cfg.get("out"):
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        _dump_json(result, out / "components.json")
        rows = [{"component": name, "value": float(values[k])} for k, name in enumerate(COLUMNS)]
        if unc is not None:
            s = result["uncertainty"]["components"]
            for row in rows:
                row.update({f: s[row["component"]][f] for f in ("point", "lo", "hi", "sd")})
        _write_rows(rows, out / "components.csv")
        if unc is not None:
            write_replicates_csv(unc.matrix, out / "replicates.csv")
        _dump_json(manifest, out / "manifest.json")
    else:
        json.dump(result, sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def _load_scenario(name):
    if name in BUILTINS:
        return builtin(name)
    path = Path(name)
    if not path.exists():
        raise UsageError(f"unknown scenario {name!r} (expected one of {', '.join(BUILTINS)} or a JSON file)")
    return Scenario.load(path)


def cmd_simulate(args) -> int:
    t0 = time.perf_counter()
    scenario = _load_scenario(args.scenario)
    if args.reps is not None and not args.n:
        raise UsageError("--reps requires --n")
    if args.reps is not None and args.reps < 2:
        raise UsageError("--reps must be at least 2")
    if not args.truth and args.reps is None:
        raise UsageError("nothing to do: give --truth and/or --n with --reps")
    if args.figure_data and not args.out:
        raise UsageError("--figure-data needs --out")
    out = Path(args.out) if args.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    timings = {}
    printed = {"scenario": scenario.to_dict()}

    truth = None
    if args.truth or args.figure_data:
        t = time.perf_counter()
        truth = true_components(scenario, args.superpop, args.seed)
        timings["truth"] = time.perf_counter() - t
        printed["truth"] = truth.as_dict()
        if out and args.truth:
            _dump_json(truth.as_dict(), out / "truth.json")
            _write_rows([
                {"component": name, "value": float(truth.components.vector()[k]),
                 "percent": float(truth.percent[k]), "mc_se": float(truth.mc_se[k])}
                for k, name in enumerate(COLUMNS)
            ], out / "truth.csv")

    reports = []
    if args.reps is not None:
        for n in args.n:
            t = time.perf_counter()
            rep = run_replicates(scenario, n, args.reps, args.seed, with_draw_se=args.draws > 0,
                                 B=args.draws, threads=args.threads)
            timings[f"replicates_n{n}"] = time.perf_counter() - t
            reports.append(rep)
            if out:
                _dump_json(rep.as_dict(), out / f"replicates_n{n}.json")
                rows = [dict(replicate=r, **dict(zip(COLUMNS, map(float, rep.estimates[i]))))
                        for i, r in enumerate(rep.replicates)]
                _write_rows(rows, out / f"replicates_n{n}.csv", ["replicate", *COLUMNS])
        printed["replicates"] = [
            {"n": rep.n, "reps": rep.reps, "failures": list(rep.failures),
             "summary_percent": {k: v.tolist() for k, v in rep.summary("percent").items()}}
            for rep in reports
        ]

    if args.figure_data and out:
        _write_rows(sampling_distribution_rows(reports, truth), out / "figure_sampling_distribution.csv",
                    ["scenario", "n", "replicate", "component", "estimate_percent", "truth_percent"])
        _write_rows(sd_se_rows(reports), out / "figure_sd_se.csv",
                    ["scenario", "n", "component", "mc_sd", "mean_se", "sd_minus_se"])

    timings["total"] = time.perf_counter() - t0
    config = {k: v for k, v in vars(args).items() if k != "func"}
    inputs = {}
    if args.scenario not in BUILTINS:
        inputs["scenario"] = {"path": args.scenario, "sha256": file_digest(args.scenario)}
    manifest = _manifest("simulate", config, args.seed, inputs, timings)
    manifest["error_sd"] = scenario.error_sd if scenario.link == "identity" else None
    if out:
        _dump_json(manifest, out / "manifest.json")
    else:
        json.dump(printed, sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="causalvd", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("decompose", help="fit the plug-in models on a CSV file and decompose its variance")
    d.add_argument("--config", help="file of key = value lines; command-line flags take precedence")
    d.add_argument("--data", help="input CSV with a header row")
    d.add_argument("--outcome")
    d.add_argument("--hospital")
    d.add_argument("--group")
    d.add_argument("--covariates", help="comma-separated covariate columns")
    d.add_argument("--outcome-kind", dest="outcome_kind", choices=OUTCOME_KINDS)
    d.add_argument("--hospital-levels", dest="hospital_levels", help="comma-separated level order (first = reference)")
    d.add_argument("--group-levels", dest="group_levels", help="comma-separated level order (first = reference)")
    d.add_argument("--uncertainty", choices=("none", "draws", "bootstrap"))
    d.add_argument("--B", type=int, help="number of draws or bootstrap replicates (default 1000)")
    d.add_argument("--seed", type=int, help="required with --uncertainty draws/bootstrap")
    d.add_argument("--out", help="output directory; results go to stdout when omitted")
    d.add_argument("--scale", choices=("raw", "percent"), help="percent of total (default) or raw x 100")
    d.add_argument("--threads", type=int, help="worker processes for replicates (default 1)")
    d.set_defaults(func=cmd_decompose)

    s = sub.add_parser("simulate", help="super-population truths and replication runs")
    s.add_argument("--scenario", required=True, help=f"one of {', '.join(BUILTINS)} or a scenario JSON file")
    s.add_argument("--n", type=int, nargs="+", help="sample size(s) per replicate")
    s.add_argument("--reps", type=int)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--truth", action="store_true", help="evaluate the super-population truth")
    s.add_argument("--superpop", type=int, default=DEFAULT_SUPERPOP)
    s.add_argument("--draws", type=int, default=0, help="normal-approximation draws per replicate for SEs")
    s.add_argument("--figure-data", dest="figure_data", action="store_true",
                   help="emit long-format tables of sampling distributions and SD-vs-SE")
    s.add_argument("--out", help="output directory; a summary goes to stdout when omitted")
    s.add_argument("--threads", type=int, default=1)
    s.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, DataError, DimensionMismatch, UnsupportedDims) as exc:
        print(f"causalvd: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FitError as exc:
        print(f"causalvd: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError) as exc:
        print(f"causalvd: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
