"""Flat ``key = value`` configuration files with sections.

Sections are ``[synthetic]``, ``[solver]``, ``[data]`` and ``[preset]``.
Values are parsed by key; lists are comma separated and ``none`` clears an
optional value.
"""

from __future__ import annotations

import configparser
from typing import Dict

from ..kernels import KernelSpec, MonotoneBounds
from ..model import SyntheticConfig, analytic_link
from ..objective import ObjectiveParams
from ..solver import SolverConfig

__all__ = [
    "SECTIONS",
    "build_solver_config",
    "build_synthetic_config",
    "coerce_section",
    "load_config",
    "merge",
]


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional(kind):
    def parse(text):
        if isinstance(text, str) and text.strip().lower() in ("none", ""):
            return None
        return kind(text)
    return parse


def _list(kind):
    def parse(text):
        if not isinstance(text, str):
            return tuple(kind(v) for v in text)
        return tuple(kind(v.strip()) for v in text.split(",") if v.strip())
    return parse


def _str(text):
    return str(text).strip()


SECTIONS = {
    "synthetic": {
        "n": int, "T": int, "r": int, "M": _optional(int), "M_per_nr": _optional(float),
        "sampling": _str, "noise": _str, "sigma": float, "link": _str,
        "factor_scale": _optional(_list(float)), "seed": int,
    },
    "solver": {
        "r": int, "zeta": float, "eta": float, "lam": float, "alpha": float,
        "reduction": _str, "xi": float, "Xi": float, "grid_points": _optional(int),
        "monotone_mode": _str, "incoherent_projection": _bool,
        "beta_override": _optional(float), "mu_estimate": float, "max_iters": int,
        "phi_init": _str, "diag_every": int, "seed": int, "kernel": _str,
        "bandwidth": _optional(float), "grid_spacing": _optional(float), "gamma": float,
        "rescale": _optional(_bool), "frozen_link": _optional(_str), "record_time": _bool,
        "qp_iters": int, "track_potential": _bool,
    },
    "data": {
        "path": _optional(_str), "format": _str, "holdout_fraction": float,
        "strategy": _str, "split_seed": int, "beta_identity": _optional(float),
        "beta_nonlinear": _optional(float),
    },
    "preset": {
        "grid": _list(_str), "grid_key": _str, "seeds": _list(int), "normalize": _bool,
    },
}


def coerce_section(section: str, raw: dict) -> dict:
    try:
        spec = SECTIONS[section]
    except KeyError:
        raise ValueError(f"unknown config section [{section}]") from None
    out = {}
    for key, text in raw.items():
        if key not in spec:
            raise ValueError(f"unknown key {key!r} in [{section}]")
        try:
            out[key] = spec[key](text)
        except (TypeError, ValueError) as err:
            raise ValueError(f"[{section}] {key}: {err}") from None
    return out


def load_config(path) -> Dict[str, dict]:
    """Parse a config file into ``{section: {key: typed value}}``."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keys are case sensitive (xi vs Xi)
    with open(path) as fh:
        parser.read_file(fh)
    return {s: coerce_section(s, dict(parser[s])) for s in parser.sections()}


def merge(*layers: Dict[str, dict]) -> Dict[str, dict]:
    """Later layers override earlier ones key by key."""
    out: Dict[str, dict] = {}
    for layer in layers:
        for section, values in (layer or {}).items():
            out.setdefault(section, {}).update(values)
    return out


def build_synthetic_config(values: dict) -> SyntheticConfig:
    v = dict(values)
    per = v.pop("M_per_nr", None)
    if per is not None:
        v["M"] = int(round(per * v["n"] * v["r"]))
    return SyntheticConfig(**v)


_SOLVER_DIRECT = ("r", "zeta", "eta", "monotone_mode", "incoherent_projection", "beta_override",
                  "mu_estimate", "max_iters", "phi_init", "diag_every", "seed", "grid_spacing",
                  "gamma", "rescale", "record_time", "qp_iters", "track_potential")


def build_solver_config(values: dict) -> SolverConfig:
    v = dict(values)
    kw = {k: v[k] for k in _SOLVER_DIRECT if k in v}
    kw["params"] = ObjectiveParams(v.get("lam", 0.5), v.get("alpha", 1e-3),
                                   v.get("reduction", "mean"))
    kw["bounds"] = MonotoneBounds(v.get("xi", 1e-2), v.get("Xi", 1e2), v.get("grid_points"))
    if v.get("bandwidth") is not None:
        kw["kernel"] = KernelSpec(v.get("kernel", "gaussian"), v["bandwidth"])
    elif v.get("kernel", "gaussian") != "gaussian":
        raise ValueError("a non-default kernel family needs an explicit bandwidth")
    if v.get("frozen_link"):
        kw["frozen_link"] = analytic_link(v["frozen_link"])
        kw["monotone_mode"] = "none"
    return SolverConfig(**kw)
