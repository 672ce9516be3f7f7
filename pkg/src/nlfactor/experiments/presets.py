"""Named experiment presets and the runner that writes traces and summaries.

Synthetic presets sweep one key (``grid_key``) over ``grid`` for each seed.
The ratings presets run the four method variants on a user-supplied file.
"""

from __future__ import annotations

import logging
import os
import re
import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..diagnostics import procrustes_align
from ..model import generate_synthetic, sample_inner_products
from ..parallel import num_threads
from ..solver import SolverDiverged, bcd_run
from .config import SECTIONS, build_solver_config, build_synthetic_config, merge
from .datasets import SplitSpec, load_ratings, rmse, split
from .traces import SummaryRow, format_table, write_summary, write_trace

__all__ = [
    "METHODS",
    "PRESET_NAMES",
    "ExperimentPreset",
    "RunResult",
    "get_preset",
    "run_preset",
]

log = logging.getLogger(__name__)

PRESET_NAMES = ("noise-sweep", "sample-size-sweep", "alpha-sweep", "regret-curve",
                "movielens", "jester", "custom")

METHODS = ("id", "id-proj", "nl-proj", "nl-monotone")

# shared-parameter synthetic instance used by the joint-learning presets
_JOINT_SYNTH = dict(n=100, T=100, r=3, M=5000, link="identity", seed=0)
_JOINT_SOLVER = dict(r=3, zeta=1e-5, eta=1e-4, lam=0.5, alpha=1e-3, reduction="sum",
                     max_iters=2000, diag_every=25, record_time=False)


@dataclass
class ExperimentPreset:
    """A named sweep.

    ``sections`` holds typed ``[synthetic]``, ``[solver]`` and ``[data]``
    values; ``grid_key`` is ``section.key`` (or ``method`` for the ratings
    presets).
    """

    name: str
    grid: Tuple
    grid_key: str
    sections: Dict[str, dict] = field(default_factory=dict)
    seeds: Tuple[int, ...] = (0,)
    normalize: bool = False

    def __post_init__(self):
        if self.name not in PRESET_NAMES:
            raise ValueError(f"unknown preset {self.name!r}; choose from {PRESET_NAMES}")
        if len(self.grid) == 0:
            raise ValueError("preset grid must be non-empty")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.grid_key != "method":
            section, _, key = self.grid_key.partition(".")
            if section not in ("synthetic", "solver") or key not in SECTIONS[section]:
                raise ValueError(f"grid_key {self.grid_key!r} is not a synthetic or solver key")
            parse = SECTIONS[section][key]
            self.grid = tuple(parse(g) if isinstance(g, str) else g for g in self.grid)
        elif any(g not in METHODS for g in self.grid):
            raise ValueError(f"methods must be among {METHODS}")

    @property
    def real_data(self) -> bool:
        return self.grid_key == "method"

    def with_overrides(self, sections: Dict[str, dict]) -> "ExperimentPreset":
        """Apply parsed config sections; ``[preset]`` keys replace fields."""
        sections = dict(sections or {})
        extra = sections.pop("preset", {})
        kw = {}
        if "grid" in extra:
            kw["grid"] = tuple(extra["grid"])
        for k in ("grid_key", "seeds", "normalize"):
            if k in extra:
                kw[k] = extra[k]
        return replace(self, sections=merge(self.sections, sections), **kw)


def _ratings_preset(name, beta_id, beta_nl, r, fmt, split_strategy):
    return ExperimentPreset(
        name, METHODS, "method",
        {
            "data": dict(path=None, format=fmt, holdout_fraction=0.1, strategy=split_strategy,
                         split_seed=0, beta_identity=beta_id, beta_nonlinear=beta_nl),
            "solver": dict(r=r, zeta=2e-4, eta=5e-6, lam=0.5, alpha=1e-3, reduction="sum",
                           max_iters=2000, diag_every=25, rescale=False, record_time=False,
                           track_potential=False),
        },
    )


def get_preset(name: str) -> ExperimentPreset:
    """Default preset by name."""
    if name == "noise-sweep":
        return ExperimentPreset(
            name, (0.0, 0.05, 0.1, 0.2), "synthetic.sigma",
            {"synthetic": dict(_JOINT_SYNTH, link="sigmoid", noise="gaussian"),
             "solver": dict(_JOINT_SOLVER, zeta=1e-2, alpha=0.0, max_iters=1000,
                            frozen_link="sigmoid", diag_every=100)},
            seeds=(0, 1, 2), normalize=True)
    if name == "sample-size-sweep":
        return ExperimentPreset(
            name, tuple(float(k) for k in range(1, 9)), "synthetic.M_per_nr",
            {"synthetic": dict(n=200, T=200, r=5, M=None, link="identity", seed=0),
             "solver": dict(_JOINT_SOLVER, r=5, zeta=2e-3, alpha=0.0, max_iters=5000,
                            frozen_link="identity", diag_every=100)})
    if name == "alpha-sweep":
        return ExperimentPreset(
            name, (1e-4, 1e-3, 1e-2, 1e-1, 1.0), "solver.alpha",
            {"synthetic": dict(_JOINT_SYNTH, link="sigmoid", noise="gaussian", sigma=0.1),
             "solver": dict(_JOINT_SOLVER, track_potential=False)})
    if name == "regret-curve":
        return ExperimentPreset(
            name, ("identity", "sigmoid", "tanh"), "synthetic.link",
            {"synthetic": dict(_JOINT_SYNTH), "solver": dict(_JOINT_SOLVER)})
    if name == "movielens":
        return _ratings_preset(name, 2.441, 0.496, 10, "movielens-csv", "row-stratified")
    if name == "jester":
        return _ratings_preset(name, None, 3.537, 5, "jester-dense", "uniform")
    if name == "custom":
        return ExperimentPreset(
            name, (1e-3,), "solver.alpha",
            {"synthetic": dict(_JOINT_SYNTH), "solver": dict(_JOINT_SOLVER)})
    raise ValueError(f"unknown preset {name!r}; choose from {PRESET_NAMES}")


@dataclass
class RunResult:
    summary: SummaryRow
    trace_path: str
    error: Optional[str] = None


def _label(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _slug(text) -> str:
    return re.sub(r"[^A-Za-z0-9.+-]+", "_", text)


def _x_range(z, obs_list):
    xs = [sample_inner_products(z, o) for o in obs_list]
    x = np.concatenate(xs)
    return float(x.min()), float(x.max())


def _run_synthetic(preset, value, seed, run_dir):
    section, _, key = preset.grid_key.partition(".")
    synth = dict(preset.sections.get("synthetic", {}), seed=seed)
    solver = dict(preset.sections.get("solver", {}), seed=seed)
    (synth if section == "synthetic" else solver)[key] = value
    if preset.name == "regret-curve":
        solver.pop("frozen_link", None)
    obs, truth = generate_synthetic(build_synthetic_config(synth))
    cfg = build_solver_config(solver)
    method = "frozen-" + cfg.frozen_link.name if cfg.frozen_link is not None else "joint"
    row = SummaryRow(preset.name, _label(value), method if len(preset.seeds) == 1
                     else f"{method}#seed{seed}")
    path = os.path.join(run_dir, "trace.csv")
    start = time.perf_counter()
    error = None
    try:
        trace = bcd_run(obs, cfg, truth)
    except SolverDiverged as err:
        trace, error = err.trace, str(err)
    write_trace(trace, path)
    if error is None:
        row.best_iter = trace.rows[-1].iter
        row.train_rmse = rmse(obs, trace.z, trace.phi)
        row.delta_fro_final = procrustes_align(trace.z, truth.z_star).delta_fro
        row.x_min, row.x_max = _x_range(trace.z, [obs])
    if cfg.record_time:
        row.wall_s = time.perf_counter() - start
    return RunResult(row, path, error)


def _ratings_config(preset, method, train):
    data = preset.sections.get("data", {})
    solver = dict(preset.sections.get("solver", {}))
    if method.startswith("id"):
        solver["frozen_link"] = "identity"
    else:
        solver.pop("frozen_link", None)
        solver["monotone_mode"] = "slope-clip" if method == "nl-monotone" else "none"
    solver["incoherent_projection"] = method != "id"
    beta_key = "beta_identity" if method.startswith("id") else "beta_nonlinear"
    if method != "id" and data.get(beta_key) is not None:
        solver["beta_override"] = data[beta_key]
    return build_solver_config(solver)


def _run_ratings(preset, method, seed, run_dir, dataset):
    data = preset.sections.get("data", {})
    train, val = split(dataset, SplitSpec(data.get("holdout_fraction", 0.1),
                                          data.get("strategy", "row-stratified"),
                                          data.get("split_seed", 0) + seed))
    cfg = replace(_ratings_config(preset, method, train), seed=seed)
    both = [train, val]

    def monitor(t, z, phi):
        lo, hi = _x_range(z, both)
        return {"train_rmse": rmse(train, z, phi), "val_rmse": rmse(val, z, phi),
                "x_min": lo, "x_max": hi}

    path = os.path.join(run_dir, "trace.csv")
    start = time.perf_counter()
    error = None
    try:
        trace = bcd_run(train, cfg, monitor=monitor)
    except SolverDiverged as err:
        trace, error = err.trace, str(err)
    write_trace(trace, path)
    label = _label(trace.beta) if trace.beta is not None else "-"
    row = SummaryRow(preset.name, label, method if len(preset.seeds) == 1
                     else f"{method}#seed{seed}")
    checked = [r for r in trace.rows if "val_rmse" in r.extra]
    if checked:
        best = min(checked, key=lambda r: (r.extra["val_rmse"], r.iter))
        row.best_iter = best.iter
        row.train_rmse = best.extra["train_rmse"]
        row.val_rmse = best.extra["val_rmse"]
        row.x_min, row.x_max = best.extra["x_min"], best.extra["x_max"]
    if cfg.record_time:
        row.wall_s = time.perf_counter() - start
    return RunResult(row, path, error)


def _normalize(results, preset):
    """Divide each seed's final error by its own sigma = 0 error."""
    by_seed = {}
    for (value, seed), res in results.items():
        by_seed.setdefault(seed, {})[value] = res
    for seed, runs in by_seed.items():
        ref = runs.get(0.0)
        base = ref.summary.delta_fro_final if ref is not None else None
        for res in runs.values():
            d = res.summary.delta_fro_final
            res.summary.delta_fro_final = (d / base if d is not None and base else None)


def run_preset(preset: ExperimentPreset, out_dir, threads: Optional[int] = None,
               dataset=None) -> List[RunResult]:
    """Run every grid point and seed; write traces, ``summary.csv`` and ``summary.txt``.

    A diverged run is recorded with empty metrics and listed in
    ``errors.txt``; the remaining runs continue. For ``noise-sweep`` with
    ``normalize`` the ``delta_fro_final`` column is divided by the same
    seed's sigma = 0 error (a reference run is added when 0 is not on the
    grid).
    """
    os.makedirs(out_dir, exist_ok=True)
    if preset.real_data and dataset is None:
        data = preset.sections.get("data", {})
        if not data.get("path"):
            raise ValueError(f"preset {preset.name!r} needs a ratings file ([data] path)")
        dataset = load_ratings(data["path"], data.get("format", "movielens-csv"))
        if dataset.dropped_users:
            log.info("dropped %d users without ratings", len(dataset.dropped_users))

    grid = list(preset.grid)
    extra_ref = (preset.normalize and preset.grid_key == "synthetic.sigma"
                 and 0.0 not in [float(g) for g in grid])
    runs = grid + ([0.0] if extra_ref else [])
    results = {}
    with num_threads(threads if threads is not None else 1):
        for value in runs:
            for seed in preset.seeds:
                tag = _slug(f"{_label(value)}_seed{seed}")
                run_dir = os.path.join(out_dir, "runs", tag)
                os.makedirs(run_dir, exist_ok=True)
                if preset.real_data:
                    res = _run_ratings(preset, value, seed, run_dir, dataset)
                else:
                    res = _run_synthetic(preset, value, seed, run_dir)
                if res.error:
                    log.warning("%s %s seed %d: %s", preset.name, value, seed, res.error)
                results[(value, seed)] = res
    if preset.normalize and preset.grid_key == "synthetic.sigma":
        _normalize(results, preset)
    ordered = [results[(v, s)] for v in grid for s in preset.seeds]
    rows = [r.summary for r in ordered]
    write_summary(rows, os.path.join(out_dir, "summary.csv"))
    with open(os.path.join(out_dir, "summary.txt"), "w", newline="") as fh:
        fh.write(format_table(rows))
    errors = [f"{r.summary.grid_value} {r.summary.method}: {r.error}" for r in ordered if r.error]
    err_path = os.path.join(out_dir, "errors.txt")
    if errors:
        with open(err_path, "w", newline="") as fh:
            fh.write("\n".join(errors) + "\n")
    elif os.path.exists(err_path):
        os.remove(err_path)
    return ordered
