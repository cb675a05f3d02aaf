"""Command-line front end: ``uwbnlos {synth,fit,simulate,report}``.

Configuration is an INI file with optional ``[synth]``, ``[density]`` and
``[simulate]`` sections; every key and default is listed by ``--help``.
Exit codes: 0 success, 2 configuration error, 3 fit error, 4 data error.
Diagnostics go to stderr, written paths to stdout.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import datetime as _dt
import json
import os
import sys
from dataclasses import fields

import numpy as np

from uwbnlos import __version__
from uwbnlos.dataset import read_dataset, split_pool, write_dataset
from uwbnlos.errors import ConfigError, DataError, FitError, UwbNlosError
from uwbnlos.features import correlation_report, feature_matrix, fit_di_model, format_correlation_table
from uwbnlos.models import DEFAULT_BINS, DEFAULT_REFINE, ESTIMATORS, FamilySpec, LinkPool, ModelSet, fit_family, fit_models
from uwbnlos.montecarlo import ScenarioConfig, run_sweep
from uwbnlos.synth import ChannelState, SynthParams, synth_pool

EXIT_CONFIG, EXIT_FIT, EXIT_DATA = 2, 3, 4

CONFIG_HELP = f"""\
configuration file (INI):

  [synth]      n_los = 2000, n_nlos = 10000, plus any generator parameter:
               t_wall = 0.32 m (wall thickness of the reference campaign),
               wall_refractive_index = 2.0, incidence_angle_max = 1.0 rad,
               gamma = (0.03 m / c0)^2 s^2 m^-beta, sigma_n_sq = 1.0,
               beta = 2.0 (ranging std 3 cm at 1 m),
               multipath_decay = 5e-9 s, tap_rate = 1e10 1/s,
               sample_rate = 24.2e9 Hz and duration = 110e-9 s (acquisition
               settings of the reference radios), pulse_width = 0.2e-9 s,
               nlos_attenuation_db = 6.0, nlos_decay_exponent = 0.1
               (NLOS decay stretched by cos(phi)^-exponent),
               multipath_gain = 0.07,
               sample_noise_std = 2e-4, d_min = 1.0 m, d_max = 5.0 m
               (distance range of the reference campaign), rng_seed = 0
  [density]    bins_2d = {DEFAULT_BINS[2]}, bins_4d = {DEFAULT_BINS[4]},
               refine_2d = {DEFAULT_REFINE[2]}, refine_4d = {DEFAULT_REFINE[4]},
               bias_source = measured (or true), bias_blur = 0 s,
               split = true (fit on even records of each state)
  [simulate]   dataset = path, p_los = 0, 0.2, 0.5, 0.9, 1.0, trials = 1000,
               estimators = {", ".join(ESTIMATORS)},
               n_anchors = 3 (fewest anchors allowing a 2-D fix),
               grid_step = 0.01 m (search step of the reference study),
               grid_margin = 1.0 m, prior = known (or equal: 0.5/0.5 weights),
               point_estimate = mean (or map), max_iter = 10, tol = 1e-12 s,
               rng_seed = 0, split = true (evaluate on odd records)

exit codes: 0 success, 2 config error, 3 fit error, 4 data error
"""


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

def load_config(path) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    if path is None:
        return cp
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        if path.endswith(".json"):
            # A run manifest replays its configuration snapshot.
            with open(path, encoding="utf-8") as fh:
                cp.read_dict(json.load(fh)["config"])
        else:
            cp.read(path, encoding="utf-8")
    except (configparser.Error, KeyError, ValueError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    unknown = set(cp.sections()) - {"synth", "density", "simulate"}
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")
    return cp


def _get(cp, section, key, default, kind=str):
    if not cp.has_option(section, key):
        return default
    raw = cp.get(section, key)
    try:
        if kind is bool:
            return cp.getboolean(section, key)
        return kind(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from None


def _list(cp, section, key, default, kind=str):
    if not cp.has_option(section, key):
        return tuple(default)
    items = [s.strip() for s in cp.get(section, key).split(",") if s.strip()]
    try:
        return tuple(kind(s) for s in items)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {cp.get(section, key)!r}") from None


def _check_keys(cp, section, allowed):
    if cp.has_section(section):
        extra = set(cp.options(section)) - set(allowed)
        if extra:
            raise ConfigError(f"[{section}] unknown key(s): {', '.join(sorted(extra))}")


_SYNTH_KEYS = {f.name for f in fields(SynthParams)} | {"n_los", "n_nlos"}
_DENSITY_KEYS = {"bins_2d", "bins_4d", "refine_2d", "refine_4d", "bias_source", "bias_blur", "split"}
_SIM_KEYS = {
    "dataset", "p_los", "trials", "estimators", "n_anchors", "grid_step", "grid_margin",
    "prior", "point_estimate", "max_iter", "tol", "rng_seed", "split",
}


def synth_settings(cp, seed=None):
    _check_keys(cp, "synth", _SYNTH_KEYS)
    values = {k: v for k, v in (cp.items("synth") if cp.has_section("synth") else []) if k not in ("n_los", "n_nlos")}
    if seed is not None:
        values["rng_seed"] = seed
    params = SynthParams.from_mapping(values)
    n_los = _get(cp, "synth", "n_los", 2000, int)
    n_nlos = _get(cp, "synth", "n_nlos", 10000, int)
    if n_los < 0 or n_nlos < 0:
        raise ConfigError("n_los and n_nlos must be >= 0")
    return params, n_los, n_nlos


def density_settings(cp):
    _check_keys(cp, "density", _DENSITY_KEYS)
    bias = _get(cp, "density", "bias_source", "measured")
    if bias not in ("true", "measured"):
        raise ConfigError("[density] bias_source must be 'true' or 'measured'")
    blur = _get(cp, "density", "bias_blur", 0.0, float)
    if blur < 0:
        raise ConfigError("[density] bias_blur must be >= 0")
    bins = {2: _get(cp, "density", "bins_2d", DEFAULT_BINS[2], int), 4: _get(cp, "density", "bins_4d", DEFAULT_BINS[4], int)}
    refine = {2: _get(cp, "density", "refine_2d", DEFAULT_REFINE[2], int),
              4: _get(cp, "density", "refine_4d", DEFAULT_REFINE[4], int)}
    if min(bins.values()) < 2 or min(refine.values()) < 2:
        raise ConfigError("[density] bins and refine factors must be >= 2")
    return {"bins": bins, "refine": refine, "bias": bias, "bias_blur": blur or None}


def scenario_settings(cp, args) -> ScenarioConfig:
    _check_keys(cp, "simulate", _SIM_KEYS)
    s = "simulate"
    estimators = _list(cp, s, "estimators", ESTIMATORS)
    if getattr(args, "estimators", None):
        estimators = tuple(e.strip() for e in args.estimators.split(",") if e.strip())
    grid_step = _get(cp, s, "grid_step", 0.01, float)
    if getattr(args, "grid_step", None) is not None:
        grid_step = args.grid_step
    seed = _get(cp, s, "rng_seed", 0, int) if args.seed is None else args.seed
    return ScenarioConfig(
        p_los_values=_list(cp, s, "p_los", (0.0, 0.2, 0.5, 0.9, 1.0), float),
        trials=_get(cp, s, "trials", 1000, int),
        estimators=estimators,
        n_anchors=_get(cp, s, "n_anchors", 3, int),
        grid_step=grid_step,
        grid_margin=_get(cp, s, "grid_margin", 1.0, float),
        rng_seed=seed,
        prior=_get(cp, s, "prior", "known"),
        point_estimate=_get(cp, s, "point_estimate", "mean"),
        max_iter=_get(cp, s, "max_iter", 10, int),
        tol=_get(cp, s, "tol", 1e-12, float),
    )


def _config_snapshot(cp):
    return {sec: dict(cp.items(sec)) for sec in cp.sections()}


def write_manifest(out_dir, command, cp, seed, inputs, outputs, started, extra=None):
    manifest = {
        "command": command,
        "version": __version__,
        "config": _config_snapshot(cp),
        "seed": seed,
        "inputs": inputs,
        "outputs": outputs,
        "started": started,
        "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    }
    if extra:
        manifest.update(extra)
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


# ---------------------------------------------------------------------------
# Data helpers
# ---------------------------------------------------------------------------

def _pools(dataset_path, split, train):
    """LOS and NLOS pools (features precomputed) of one half of a dataset."""
    if not os.path.exists(dataset_path):
        raise DataError(f"dataset not found: {dataset_path}")
    obs = read_dataset(dataset_path)
    out = {}
    for state in (ChannelState.LOS, ChannelState.NLOS):
        sel = [o for o in obs if o.state is state]
        if split:
            sel = split_pool(sel, train=train)
        feats = feature_matrix(sel) if sel else np.empty((0, 6))
        out[state] = (sel, LinkPool.from_observations(sel, feats))
    return out


def _di_params(pools):
    obs = pools[ChannelState.LOS][0] + pools[ChannelState.NLOS][0]
    feats = np.vstack([pools[s][1].features for s in (ChannelState.LOS, ChannelState.NLOS)])
    return fit_di_model(obs, feats)


def _require(pool, name):
    if len(pool) == 0:
        raise DataError(f"{name} pool is empty")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_synth(args):
    started = _now()
    cp = load_config(args.config)
    params, n_los, n_nlos = synth_settings(cp, args.seed)
    rng = np.random.default_rng(params.rng_seed)
    obs = synth_pool(n_los, ChannelState.LOS, params, rng) + synth_pool(n_nlos, ChannelState.NLOS, params, rng)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "dataset.csv")
    write_dataset(obs, path)
    write_manifest(args.out, "synth", cp, params.rng_seed, {"config": args.config}, [path], started,
                   {"records": {"LOS": n_los, "NLOS": n_nlos}})
    print(path)


def cmd_fit(args):
    started = _now()
    cp = load_config(args.config)
    dens = density_settings(cp)
    split = _get(cp, "density", "split", True, bool) and not args.no_split
    pools = _pools(args.dataset, split, train=True)
    los, nlos = pools[ChannelState.LOS][1], pools[ChannelState.NLOS][1]
    _require(los, "LOS training")
    _require(nlos, "NLOS training")
    dp = _di_params(pools)
    kwargs = {"bias": dens["bias"], "bias_blur": dens["bias_blur"]}
    if args.all or args.estimators:
        names = ESTIMATORS if args.all else tuple(e.strip() for e in args.estimators.split(","))
        bins = {d: _auto_bins(b, len(los), len(nlos), args.bins) for d, b in dens["bins"].items()}
        models = fit_models(names, los, nlos, dp, bins, dens["refine"], **kwargs)
    else:
        spec = FamilySpec(args.kind, args.dims, args.param == "indep")
        bins = _auto_bins(dens["bins"][spec.dims], len(los), len(nlos), args.bins)
        pair = fit_family(spec, los, nlos, dp, bins, dens["refine"][spec.dims], **kwargs)
        models = ModelSet({spec.name: pair}, dp)
    models.save(args.out)
    outputs = [os.path.join(args.out, "models.json")]
    for name in sorted(models.families):
        outputs += [os.path.join(args.out, f"{name}.los.txt"), os.path.join(args.out, f"{name}.nlos.txt")]
    write_manifest(args.out, "fit", cp, None, {"dataset": args.dataset, "config": args.config}, outputs, started,
                   {"split": split})
    for p in outputs:
        print(p)


def _auto_bins(default, n_los, n_nlos, override):
    """Bins per axis: the override, else the default capped by ``sqrt(n)``."""
    if override is not None:
        if override < 2:
            raise ConfigError("--bins must be >= 2")
        return override
    n = min(n_los, n_nlos)
    return int(min(default, max(2, np.floor(np.sqrt(n)))))


def cmd_simulate(args):
    started = _now()
    cp = load_config(args.config)
    cfg = scenario_settings(cp, args)
    dataset = args.dataset or _get(cp, "simulate", "dataset", None)
    if dataset is None:
        raise ConfigError("no dataset given (use --dataset or [simulate] dataset)")
    split = _get(cp, "simulate", "split", True, bool) and not args.no_split
    eval_pools = _pools(dataset, split, train=False)
    los, nlos = eval_pools[ChannelState.LOS][1], eval_pools[ChannelState.NLOS][1]

    models = None
    if any(e != "LS" for e in cfg.estimators):
        if args.densities:
            models = ModelSet.load(args.densities)
        else:
            dens = density_settings(cp)
            train = _pools(dataset, split, train=True)
            _require(train[ChannelState.LOS][1], "LOS training")
            _require(train[ChannelState.NLOS][1], "NLOS training")
            t_los, t_nlos = train[ChannelState.LOS][1], train[ChannelState.NLOS][1]
            bins = {d: _auto_bins(b, len(t_los), len(t_nlos), None) for d, b in dens["bins"].items()}
            models = fit_models(cfg.estimators, t_los, t_nlos, _di_params(train), bins, dens["refine"],
                                bias=dens["bias"], bias_blur=dens["bias_blur"])
    result = run_sweep(cfg, los, nlos, models, threads=args.threads)
    paths = result.write(args.out)
    # The manifest replays this run: it records the effective settings.
    snap = configparser.ConfigParser()
    snap.read_dict(_config_snapshot(cp))
    if not snap.has_section("simulate"):
        snap.add_section("simulate")
    for key, value in (
        ("dataset", os.path.abspath(dataset)),
        ("estimators", ", ".join(cfg.estimators)),
        ("grid_step", repr(cfg.grid_step)),
        ("rng_seed", str(cfg.rng_seed)),
        ("split", str(split).lower()),
    ):
        snap.set("simulate", key, value)
    runtime = {f"{e}@{p!r}": t for (e, p), t in result.runtime.items()}
    write_manifest(args.out, "simulate", snap, cfg.rng_seed,
                   {"dataset": dataset, "densities": args.densities, "config": args.config},
                   paths, started, {"threads": args.threads, "runtime_s": runtime})
    for p in paths:
        print(p)


def _read_csv(path):
    with open(path, newline="", encoding="ascii") as fh:
        return list(csv.DictReader(fh))


def cmd_report(args):
    rmse_path = os.path.join(args.results, "rmse.csv")
    cdf_path = os.path.join(args.results, "cdf.csv")
    if not (os.path.isfile(rmse_path) and os.path.isfile(cdf_path)):
        raise DataError(f"no results found in {args.results}")
    rmse_rows = _read_csv(rmse_path)
    cdf_rows = _read_csv(cdf_path)
    if not rmse_rows:
        raise DataError(f"no results found in {args.results}")
    out = args.out or args.results
    os.makedirs(out, exist_ok=True)
    written = []

    # RMSE vs p_los: one gnuplot data block (index) per estimator.
    series = {}
    for r in rmse_rows:
        series.setdefault(r["estimator"], []).append((float(r["p_los"]), r["rmse_m"]))
    lines = []
    for est, pts in series.items():
        lines.append(f"# estimator {est}")
        lines.append("# p_los rmse_m")
        lines.extend(f"{p!r} {v}" for p, v in sorted(pts))
        lines += ["", ""]
    path = os.path.join(out, "rmse_vs_plos.dat")
    _write_text(path, lines)
    written.append(path)

    # Error CDFs: one file per p_los, one block per estimator.
    by_p = {}
    for r in cdf_rows:
        by_p.setdefault(r["p_los"], {}).setdefault(r["estimator"], []).append((r["error_m"], r["cum_prob"]))
    for p, ests in by_p.items():
        lines = []
        for est, pts in ests.items():
            lines.append(f"# estimator {est} p_los {p}")
            lines.append("# error_m cum_prob")
            lines.extend(f"{e} {c}" for e, c in pts)
            lines += ["", ""]
        path = os.path.join(out, f"cdf_plos_{p}.dat")
        _write_text(path, lines)
        written.append(path)

    if args.dataset:
        obs = read_dataset(args.dataset)
        feats = feature_matrix(obs)
        dp = fit_di_model(obs, feats)
        for bias in ("true", "measured"):
            table = format_correlation_table(correlation_report(obs, dp, bias=bias, features=feats))
            path = os.path.join(out, f"correlation_{bias}.csv")
            _write_text(path, table.rstrip("\n").split("\n"))
            written.append(path)
    for p in written:
        print(p)


def _write_text(path, lines):
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="uwbnlos",
        description="Synthetic UWB TOA localization with statistical NLOS bias mitigation.",
        epilog=CONFIG_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_help):
        p.add_argument("--config", help="INI configuration file (or a run manifest.json)")
        p.add_argument("--seed", type=int, help="override the configured RNG seed")
        p.add_argument("--out", required=True, help=out_help)

    p = sub.add_parser("synth", help="generate a LOS/NLOS link dataset", epilog=CONFIG_HELP,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    common(p, "output directory (dataset.csv, manifest.json)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", help="fit LOS/NLOS densities", epilog=CONFIG_HELP,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    common(p, "output directory for the density files")
    p.add_argument("--dataset", required=True, help="dataset written by 'synth'")
    p.add_argument("--kind", choices=("hist", "smooth", "poly", "ve"), default="smooth",
                   help="density kind (default: smooth)")
    p.add_argument("--dims", type=int, choices=(2, 4), default=2, help="2 (bias + delay spread) or 4 (default: 2)")
    p.add_argument("--param", choices=("dep", "indep"), default="dep",
                   help="distance-dependent or distance-independent features (default: dep)")
    p.add_argument("--bins", type=int, help="bins per axis (default: config value capped by sqrt of the pool size)")
    p.add_argument("--all", action="store_true", help="fit every family used by the estimators")
    p.add_argument("--estimators", help="comma list; fit the families these estimators need")
    p.add_argument("--no-split", action="store_true", help="fit on the whole dataset instead of the even records")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", help="Monte-Carlo RMSE/CDF sweep over p_los", epilog=CONFIG_HELP,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    common(p, "output directory (rmse.csv, cdf.csv, manifest.json)")
    p.add_argument("--dataset", help="dataset written by 'synth' (overrides [simulate] dataset)")
    p.add_argument("--densities", help="directory written by 'fit'; fitted on the fly when omitted")
    p.add_argument("--threads", type=int, default=1, help="worker processes (default: 1)")
    p.add_argument("--grid-step", type=float, help="search grid step in metres (default: 0.01)")
    p.add_argument("--estimators", help=f"comma list from {','.join(ESTIMATORS)}")
    p.add_argument("--no-split", action="store_true",
                   help="evaluate on the same records the densities were fitted on")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="plot-ready series and correlation tables")
    p.add_argument("results", help="directory holding rmse.csv and cdf.csv")
    p.add_argument("--out", help="output directory (default: the results directory)")
    p.add_argument("--dataset", help="also write bias/feature correlation tables for this dataset")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FitError as exc:
        print(f"fit error: {exc}", file=sys.stderr)
        return EXIT_FIT
    except (UwbNlosError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
