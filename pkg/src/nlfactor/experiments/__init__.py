"""Datasets, presets and file I/O for running experiments."""

from .config import build_solver_config, build_synthetic_config, load_config, merge
from .datasets import RatingsDataset, SplitSpec, load_ratings, rmse, split
from .presets import METHODS, PRESET_NAMES, ExperimentPreset, get_preset, run_preset
from .traces import (
    SUMMARY_COLUMNS,
    TRACE_COLUMNS,
    SummaryRow,
    format_table,
    read_summary,
    read_trace,
    write_summary,
    write_trace,
)

__all__ = [
    "METHODS",
    "PRESET_NAMES",
    "SUMMARY_COLUMNS",
    "TRACE_COLUMNS",
    "ExperimentPreset",
    "RatingsDataset",
    "SplitSpec",
    "SummaryRow",
    "build_solver_config",
    "build_synthetic_config",
    "format_table",
    "get_preset",
    "load_config",
    "load_ratings",
    "merge",
    "read_summary",
    "read_trace",
    "rmse",
    "run_preset",
    "split",
    "write_summary",
    "write_trace",
]
