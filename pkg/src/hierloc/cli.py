"""Batch experiment runner.

Flat key=value configs, one global seed split per trial, JSON report plus
one CSV per curve, and a stable index of the registered experiments.  Exit
status: 0 all asserted checks passed, 1 an asserted check failed or a
measurement could not be completed, 2 configuration or precondition error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from .lattice import LatticeBox
from .operator import ModelParams, assemble, derived_constants
from .potential import (HierarchyParams, sample_bernoulli,
                        symmetric_hierarchical, total_potential)
from .rng import bernoulli, split
from . import experiments as xp
from .transversality import uc_experiment


class ConfigError(Exception):
    pass


_KEY_TYPES = {
    "experiment": str,
    "out": str,
    "d": int, "d0": int, "N": int, "a": int, "k": int, "L": int,
    "trials": int, "seed": int, "threads": int,
    "alpha": float, "h": float, "beta": float, "E": float, "eps": float,
    "times": "floats", "thresholds": "floats",
}


def parse_config(text: str) -> dict:
    """Flat key=value lines; '#' comments and blank lines ignored."""
    cfg = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected key=value, got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in _KEY_TYPES:
            raise ConfigError(f"line {ln}: unknown key {key!r}")
        kind = _KEY_TYPES[key]
        try:
            if kind is str:
                cfg[key] = val
            elif kind is int:
                cfg[key] = int(val)
            elif kind is float:
                cfg[key] = float(val)
            else:
                cfg[key] = [float(v) for v in val.split(",") if v.strip()]
        except ValueError:
            raise ConfigError(f"line {ln}: bad value for {key!r}: {val!r}")
    return cfg


def _low_window(d: int, beta: float, h: float) -> tuple:
    iota = min(0.01, (h - 4 * d - beta) / 2)
    return (-iota, 4 * d + beta + iota)


def _hierarchy(cfg: dict) -> HierarchyParams:
    return HierarchyParams(d=cfg.get("d", 1), h=cfg.get("h", 20.0),
                           beta=cfg.get("beta", 1.0),
                           alpha=cfg.get("alpha", 2.0),
                           d0=cfg.get("d0", 5))


def _desk_config(cfg: dict):
    over = {}
    for key, field in (("d", "d"), ("h", "h"), ("beta", "beta"),
                       ("a", "a"), ("k", "P")):
        if key in cfg:
            over[field] = cfg[key]
    return dataclasses.replace(xp.DESK, **over) if over else xp.DESK


def _run_wegner_mc(cfg, seed, threads):
    box = LatticeBox(center=(0,) * cfg.get("d", 1), radius=cfg.get("L", 7))
    p = ModelParams(cfg.get("d", 1), cfg.get("h", 20.0), cfg.get("beta", 1.0))
    return xp.wegner_mc(box, 0.0, p, E=cfg.get("E", 2.0),
                        eps=cfg.get("eps", 0.05),
                        trials=cfg.get("trials", 10000), seed=seed)


def _run_wegner_bruteforce(cfg, seed, threads):
    box = LatticeBox(center=(0,) * cfg.get("d", 1), radius=cfg.get("L", 7))
    p = ModelParams(cfg.get("d", 1), cfg.get("h", 20.0), cfg.get("beta", 1.0))
    E, eps = cfg.get("E", 2.0), cfg.get("eps", 0.05)
    prob = xp.wegner_bruteforce(box, 0.0, p, E=E, eps=eps)
    return xp.ExperimentReport(
        "wegner_bruteforce",
        {"d": p.d, "h": p.h, "beta": p.beta, "E": E, "eps": eps,
         "radius": box.radius},
        [], {"probability": prob}, True, 0.0)


def _run_separation_mc(cfg, seed, threads):
    hp = _hierarchy(cfg)
    kwargs = {"threads": threads}
    if "eps" in cfg:
        kwargs["eps_cfg"] = cfg["eps"]
    return xp.separation_mc(k=cfg.get("k", 1), params=hp,
                            trials=cfg.get("trials", 100), seed=seed,
                            **kwargs)


def _decay_operator(cfg, seed):
    hp = dataclasses.replace(_hierarchy(cfg),
                             alpha=cfg.get("alpha", 1.7),
                             d0=cfg.get("d0", 9))
    k = cfg.get("k", 2)
    v_hi = symmetric_hierarchical(hp, k)
    omega = sample_bernoulli(v_hi.domain, seed)
    v = total_potential(v_hi, omega, hp.beta)
    op = assemble(v_hi.domain, v, ModelParams(hp.d, hp.h, hp.beta))
    return hp, k, op


def _run_decay_profile(cfg, seed, threads):
    hp, k, op = _decay_operator(cfg, seed)
    window = _low_window(hp.d, hp.beta, hp.h)
    kwargs = {}
    if "thresholds" in cfg and cfg["thresholds"]:
        kwargs["floor"] = cfg["thresholds"][0]
    fits = xp.decay_profile(op, window, **kwargs)
    c = derived_constants(hp.d, hp.h, hp.beta)
    rate_min = 0.4 * c.gamma0
    r2_min = 0.9
    ok = all(f["rate"] >= rate_min and f["r2"] >= r2_min for f in fits)
    stats = {"n_eigenpairs": len(fits),
             "rate_min_required": rate_min, "r2_min_required": r2_min,
             "rate_min": min((f["rate"] for f in fits), default=None),
             "r2_min": min((f["r2"] for f in fits), default=None)}
    return xp.ExperimentReport(
        "decay_profile",
        {"d": hp.d, "h": hp.h, "beta": hp.beta, "alpha": hp.alpha,
         "d0": hp.d0, "k": k, "seed": seed, "window": list(window),
         "sites": op.n},
        fits, stats, ok, 0.0)


def _run_msd(cfg, seed, threads):
    hp, k, op = _decay_operator(cfg, seed)
    window = _low_window(hp.d, hp.beta, hp.h)
    times = cfg.get("times") or list(np.linspace(0.0, 50.0, 26))
    out = xp.msd(op, window, times)
    records = [{"t": float(t), "r2": float(r), "r2_neg": float(rn)}
               for t, r, rn in zip(out["times"], out["r2"], out["r2_neg"])]
    ok = (out["norm_dev_max"] <= 1e-10
          and out["time_reversal_dev"] <= 1e-10)
    stats = {key: out[key] for key in
             ("n_window", "norm", "norm_dev_max", "boundary_leak_max",
              "time_reversal_dev", "site")}
    return xp.ExperimentReport(
        "msd",
        {"d": hp.d, "h": hp.h, "beta": hp.beta, "alpha": hp.alpha,
         "d0": hp.d0, "k": k, "seed": seed, "window": list(window),
         "sites": op.n},
        records, stats, ok, 0.0)


def _run_shnol(cfg, seed, threads):
    hp = _hierarchy(cfg)
    window = _low_window(hp.d, hp.beta, hp.h)
    return xp.shnol_approx_check(params=hp, k=cfg.get("k", 1), window=window,
                                 trials=cfg.get("trials", 20), seed=seed,
                                 threads=threads)


def _run_offdiagonal(cfg, seed, threads):
    d = cfg.get("d", 1)
    radius = cfg.get("L", 100)
    h, beta = cfg.get("h", 20.0), cfg.get("beta", 1.0)
    box = LatticeBox(center=(0,) * d, radius=radius)
    v = h + beta * bernoulli(split(seed, 0), 0, box.sites)
    op = assemble(box, v, ModelParams(d, h, beta))
    kwargs = {}
    if "thresholds" in cfg and cfg["thresholds"]:
        kwargs["gate_norm"] = cfg["thresholds"][0]
    rep = xp.offdiagonal_decay_check(op, E=cfg.get("E", 2.0),
                                     L1=float(radius), **kwargs)
    stats = {key: rep[key] for key in
             ("armed", "measured", "pairs", "violations", "rate",
              "worst_margin", "cutoff")}
    return xp.ExperimentReport(
        "offdiagonal_decay",
        {"d": d, "h": h, "beta": beta, "radius": radius,
         "E": cfg.get("E", 2.0), "seed": seed},
        [], stats, bool(rep["ok"]), 0.0)


def _run_uc_experiment(cfg, seed, threads):
    d = cfg.get("d", 2)
    p = ModelParams(d, cfg.get("h", 20.0), cfg.get("beta", 1.0))
    kwargs = {}
    th = cfg.get("thresholds") or []
    if len(th) >= 1:
        kwargs["eps_test"] = th[0]
    if len(th) >= 2:
        kwargs["C_test"] = th[1]
    rep = uc_experiment(L=cfg.get("L", 40), u0=None, lam=cfg.get("E", 1.0),
                        params=p, trials=cfg.get("trials", 200), seed=seed,
                        **kwargs)
    records = [{"trial": i, "size": float(s)}
               for i, s in enumerate(rep["sizes"])]
    stats = {key: rep[key] for key in
             ("threshold", "required_size", "frequency", "wilson_ci",
              "eps_test", "C_test")}
    return xp.ExperimentReport(
        "uc_experiment",
        {"d": d, "L": rep["L"], "lam": rep["lam"], "h": p.h, "beta": p.beta,
         "trials": rep["trials"], "seed": seed},
        records, stats, bool(rep["ok"]), 0.0)


def _run_uc_martingale(cfg, seed, threads):
    d = cfg.get("d", 2)
    p = ModelParams(d, cfg.get("h", 20.0), cfg.get("beta", 1.0))
    return xp.uc_martingale_experiment(L=cfg.get("L", 40),
                                       lam=cfg.get("E", 1.0), params=p,
                                       trials=cfg.get("trials", 100),
                                       seed=seed,
                                       T=cfg.get("k"), threads=threads)


def _run_monotonicity(cfg, seed, threads):
    return xp.monotonicity_experiment(trials=cfg.get("trials", 200),
                                      seed=seed, config=_desk_config(cfg),
                                      threads=threads)


def _run_wegner_martingale(cfg, seed, threads):
    return xp.wegner_martingale_experiment(trials=cfg.get("trials", 100),
                                           seed=seed,
                                           config=_desk_config(cfg),
                                           E=cfg.get("E"), threads=threads)


def _run_spectral_inclusion(cfg, seed, threads):
    kwargs = {"threads": threads}
    if "d" in cfg:
        kwargs["dims"] = (cfg["d"],)
    if "h" in cfg:
        kwargs["heights"] = (cfg["h"],)
    if "beta" in cfg:
        kwargs["betas"] = (cfg["beta"],)
    if "eps" in cfg:
        kwargs["tol"] = cfg["eps"]
    return xp.spectral_inclusion_experiment(trials=cfg.get("trials", 50),
                                            seed=seed, **kwargs)


EXPERIMENTS = (
    ("wegner-mc", _run_wegner_mc,
     "Monte-Carlo frequency of an eigenvalue within eps of a fixed energy, "
     "with a four-sigma Wilson interval"),
    ("wegner-bruteforce", _run_wegner_bruteforce,
     "Exact eigenvalue-proximity probability by enumerating every Bernoulli "
     "configuration of a small box"),
    ("separation-mc", _run_separation_mc,
     "Minimal spectral separation between two disjoint disordered blocks "
     "against the next-scale closeness threshold"),
    ("decay-profile", _run_decay_profile,
     "Exponential-decay envelope fit for every low-window eigenfunction of "
     "a disordered hierarchical instance"),
    ("msd", _run_msd,
     "Mean square displacement of a window-projected delta state under "
     "exact unitary evolution"),
    ("shnol-approx", _run_shnol,
     "Interior-concentrated eigenvalues of a padded box approximate the "
     "enlarged nested-block spectrum"),
    ("offdiagonal-decay", _run_offdiagonal,
     "Off-diagonal Green-function decay across a region, asserted when the "
     "sub-block resolvent gates pass"),
    ("uc-experiment", _run_uc_experiment,
     "Frequency of the unique-continuation event: the transversal set "
     "covers a fixed fraction of the box"),
    ("uc-martingale", _run_uc_martingale,
     "Betting-martingale unique continuation: per-step indicator means, "
     "disjoint edge sets, chain increments in {1,2}"),
    ("monotonicity", _run_monotonicity,
     "Window eigenvalue counts never increase from one cascade level to the "
     "next; conditional drop frequency with CI"),
    ("wegner-martingale", _run_wegner_martingale,
     "Counting martingale across cascade levels: seeded reproducibility, "
     "monotone counts, small-count tail against the Azuma bound"),
    ("spectral-inclusion", _run_spectral_inclusion,
     "Every eigenvalue of random two-band instances lies in the low or the "
     "high band"),
)

_RUNNERS = {name: fn for name, fn, _ in EXPERIMENTS}


def list_experiments(stream=None) -> None:
    stream = stream or sys.stdout
    width = max(len(name) for name, _, _ in EXPERIMENTS)
    for name, _, claim in EXPERIMENTS:
        stream.write(f"{name:<{width}}  {claim}\n")


def _numeric_columns(records: list) -> tuple:
    if not records or not isinstance(records[0], dict):
        return [], []
    keys = [k for k, v in records[0].items()
            if isinstance(v, (int, float, bool))
            and not isinstance(v, complex)]
    keys = [k for k in keys
            if all(isinstance(r.get(k), (int, float, bool)) for r in records)]
    cols = [[float(r[k]) for r in records] for k in keys]
    return keys, cols


def run(config_path: str, seed: int | None = None,
        threads: int | None = None, out_dir: str | None = None,
        stream=None) -> int:
    stream = stream or sys.stderr
    try:
        with open(config_path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        stream.write(f"config error: {e}\n")
        return 2
    try:
        cfg = parse_config(text)
    except ConfigError as e:
        stream.write(f"config error: {e}\n")
        return 2
    name = cfg.get("experiment")
    if name is None:
        stream.write("config error: missing 'experiment' key\n")
        return 2
    if name not in _RUNNERS:
        stream.write(f"config error: unknown experiment {name!r}\n")
        return 2
    if "trials" in cfg and cfg["trials"] < 1:
        stream.write(f"config error: trials = {cfg['trials']}, need >= 1\n")
        return 2
    if seed is None:
        seed = cfg.get("seed", 0)
    if threads is None:
        threads = cfg.get("threads")
        if threads is None and os.environ.get("HIERLOC_THREADS"):
            threads = int(os.environ["HIERLOC_THREADS"])
    out = out_dir or cfg.get("out") or "."
    try:
        report = _RUNNERS[name](cfg, seed, threads)
    except (ValueError, xp.TooLarge, xp.BoundaryLeak) as e:
        stream.write(f"config error: {type(e).__name__}: {e}\n")
        return 2
    except Exception as e:
        stream.write(f"run failed: {type(e).__name__}: {e}\n")
        return 1
    os.makedirs(out, exist_ok=True)
    body = json.loads(report.to_json())
    body["config"] = {**cfg, "seed": seed,
                      "threads": threads, "out": out}
    with open(os.path.join(out, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(body, fh, sort_keys=True, indent=1)
        fh.write("\n")
    keys, cols = _numeric_columns(report.records)
    if keys:
        csv_path = os.path.join(out, f"{name}.csv")
        with open(csv_path, "w", encoding="utf-8") as fh:
            fh.write(xp.curve_csv(keys, cols))
    if not report.ok:
        stream.write(f"{name}: asserted checks failed\n")
        return 1
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="hierloc",
        description="Run seeded spectral experiments from a flat config.")
    sub = parser.add_subparsers(dest="command")
    p_run = sub.add_parser("run", help="run one experiment from a config")
    p_run.add_argument("--config", required=True, help="key=value file")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--threads", type=int, default=None)
    p_run.add_argument("--out", default=None, help="output directory")
    sub.add_parser("list-experiments",
                   help="print the registered experiments")
    args = parser.parse_args(argv)
    if args.command == "run":
        return run(args.config, seed=args.seed, threads=args.threads,
                   out_dir=args.out)
    if args.command == "list-experiments":
        list_experiments()
        return 0
    parser.print_usage(sys.stderr)
    return 2


if __name__ == "__main__":
    sys.exit(main())
