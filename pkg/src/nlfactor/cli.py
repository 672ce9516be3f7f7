"""Command line entry point: ``nlfactor {synth,fit,preset,eval}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from .diagnostics import procrustes_align
from .experiments import config as cfgmod
from .experiments.datasets import FORMATS, load_ratings, rmse
from .experiments.presets import PRESET_NAMES, get_preset, run_preset
from .experiments.traces import format_number, write_trace
from .kernels import LinkFunction
from .model import FactorMatrix, GroundTruth, ObservationSet, analytic_link, generate_synthetic
from .parallel import num_threads
from .solver import SolverDiverged, bcd_run

log = logging.getLogger("nlfactor")

OBS_FORMATS = ("npz",) + FORMATS


def save_observations(obs: ObservationSet, path) -> None:
    np.savez(path, n=obs.n, T=obs.T, rows=obs.rows, cols=obs.cols, y=obs.y)


def load_observations(path, fmt="npz") -> ObservationSet:
    if fmt == "npz":
        with np.load(path) as f:
            return ObservationSet(int(f["n"]), int(f["T"]), f["rows"], f["cols"], f["y"])
    return load_ratings(path, fmt).observations()


def save_truth(truth: GroundTruth, link_name: str, path) -> None:
    np.savez(path, z=truth.z_star.values, n=truth.z_star.n, sigma=truth.sigma,
             spectrum=truth.spectrum, link=link_name)


def load_truth(path) -> GroundTruth:
    with np.load(path) as f:
        z = FactorMatrix(f["z"], int(f["n"]))
        return GroundTruth(z, analytic_link(str(f["link"])), float(f["sigma"]), f["spectrum"])


def save_model(z: FactorMatrix, phi, path) -> None:
    if isinstance(phi, LinkFunction):
        link = json.dumps(phi.to_record())
    else:
        link = json.dumps({"analytic": phi.name})
    np.savez(path, z=z.values, n=z.n, link=link)


def load_model(path):
    with np.load(path) as f:
        z = FactorMatrix(f["z"], int(f["n"]))
        rec = json.loads(str(f["link"]))
    phi = analytic_link(rec["analytic"]) if "analytic" in rec else LinkFunction.from_record(rec)
    return z, phi


def _parse_set(items):
    """``section.key=value`` strings to parsed config sections."""
    raw = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot:
            raise ValueError(f"--set expects section.key=value, got {item!r}")
        raw.setdefault(section, {})[name] = value.strip()
    return {s: cfgmod.coerce_section(s, v) for s, v in raw.items()}


def _layers(args):
    base = cfgmod.load_config(args.config) if args.config else {}
    flags = {}
    if args.seed is not None:
        flags["synthetic"] = {"seed": args.seed}
        flags["solver"] = {"seed": args.seed}
        flags["preset"] = {"seeds": (args.seed,)}
    if args.diag_every is not None:
        flags.setdefault("solver", {})["diag_every"] = args.diag_every
    return cfgmod.merge(base, flags, _parse_set(args.set))


def _synth_defaults():
    return dict(n=100, T=100, r=3, M=5000, link="identity", seed=0)


def cmd_synth(args, layers):
    values = dict(_synth_defaults(), **layers.get("synthetic", {}))
    cfg = cfgmod.build_synthetic_config(values)
    obs, truth = generate_synthetic(cfg)
    os.makedirs(args.out, exist_ok=True)
    save_observations(obs, os.path.join(args.out, "observations.npz"))
    save_truth(truth, cfg.link, os.path.join(args.out, "truth.npz"))
    print(f"wrote {obs.M} samples of a {obs.n} x {obs.T} matrix to {args.out}")
    return 0


def cmd_fit(args, layers):
    obs = load_observations(args.data, args.format)
    truth = load_truth(args.truth) if args.truth else None
    # without an explicit [solver] r, fit at the rank of the truth or the synthetic section
    rank = truth.z_star.r if truth is not None else layers.get("synthetic", {}).get("r", 3)
    values = dict(dict(r=rank, reduction="sum"), **layers.get("solver", {}))
    cfg = cfgmod.build_solver_config(values)
    os.makedirs(args.out, exist_ok=True)
    trace_path = os.path.join(args.out, "trace.csv")
    status = 0
    try:
        trace = bcd_run(obs, cfg, truth)
    except SolverDiverged as err:
        log.error("%s", err)
        trace, status = err.trace, 2
    write_trace(trace, trace_path)
    save_model(trace.z, trace.phi, os.path.join(args.out, "model.npz"))
    last = trace.rows[-1]
    msg = f"iter {last.iter} loss {format_number(last.loss)}"
    if truth is not None:
        msg += f" delta_fro {format_number(procrustes_align(trace.z, truth.z_star).delta_fro)}"
    print(msg)
    for note in trace.notes:
        print(f"note: {note}")
    return status


def cmd_preset(args, layers):
    preset = get_preset(args.name)
    if args.data:
        layers = cfgmod.merge(layers, {"data": {"path": args.data}})
    if args.timing:
        layers = cfgmod.merge(layers, {"solver": {"record_time": True}})
    preset = preset.with_overrides(layers)
    results = run_preset(preset, args.out)
    with open(os.path.join(args.out, "summary.txt")) as fh:
        sys.stdout.write(fh.read())
    return 1 if any(r.error for r in results) else 0


def cmd_eval(args, layers):
    z, phi = load_model(args.model)
    obs = load_observations(args.data, args.format)
    if (obs.n, obs.T) != (z.n, z.T):
        raise ValueError(f"model is {z.n} x {z.T} but data is {obs.n} x {obs.T}")
    print(f"rmse {format_number(rmse(obs, z, phi))}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nlfactor", description="Nonlinear factor model fitting.")
    p.add_argument("--config", help="key=value config file with sections")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--seed", type=int, help="seed for data, solver and presets")
    p.add_argument("--threads", type=int, default=1, help="worker threads")
    p.add_argument("--diag-every", type=int, help="diagnostic cadence in iterations")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override a config value (repeatable)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("synth", help="generate a synthetic instance")

    f = sub.add_parser("fit", help="run the solver on an observation file")
    f.add_argument("data")
    f.add_argument("--format", choices=OBS_FORMATS, default="npz")
    f.add_argument("--truth", help="truth.npz from synth, enables ground-truth diagnostics")

    pr = sub.add_parser("preset", help="run a named experiment preset")
    pr.add_argument("name", choices=PRESET_NAMES)
    pr.add_argument("--data", help="ratings file for the movielens and jester presets")
    pr.add_argument("--timing", action="store_true",
                    help="record wall-clock columns (output is then not byte-reproducible)")

    e = sub.add_parser("eval", help="RMSE of a saved model on an observation file")
    e.add_argument("model")
    e.add_argument("data")
    e.add_argument("--format", choices=OBS_FORMATS, default="npz")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        layers = _layers(args)
        handler = {"synth": cmd_synth, "fit": cmd_fit, "preset": cmd_preset,
                   "eval": cmd_eval}[args.command]
        with num_threads(args.threads):
            return handler(args, layers)
    except (ValueError, OSError) as err:
        print(f"nlfactor: error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
