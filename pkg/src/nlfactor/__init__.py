"""Nonlinear factor models with a learned monotone link.

Observations follow ``y = phi(u_i . v_t) + noise`` where ``phi`` lives in a
reproducing kernel Hilbert space. The solver alternates projected gradient
steps on the stacked factors ``Z = [U; V]`` and on ``phi``.
"""

from .diagnostics import (
    fit_phi_sharp,
    link_error,
    phi_sharp,
    potential,
    procrustes_align,
    regret,
    residual_bound_check,
)
from .kernels import (
    KernelSpec,
    LinkFunction,
    MonotoneBounds,
    compress_dictionary,
    default_bandwidth,
    project_monotone,
    rkhs_norm_sq,
)
from .model import (
    AnalyticLink,
    FactorMatrix,
    GroundTruth,
    ObservationSet,
    SyntheticConfig,
    analytic_link,
    generate_synthetic,
    incoherence,
    sample_inner_product,
)
from .objective import ObjectiveParams, grad_phi, grad_z, loss, loss_terms
from .parallel import num_threads, set_num_threads
from .solver import (
    SolverConfig,
    SolverDiverged,
    SolverTrace,
    bcd_run,
    compute_beta,
    freeze_phi_mode,
    init_svd,
    project_incoherent,
)

__version__ = "0.1.0"

__all__ = [
    "AnalyticLink",
    "FactorMatrix",
    "GroundTruth",
    "KernelSpec",
    "LinkFunction",
    "MonotoneBounds",
    "ObjectiveParams",
    "ObservationSet",
    "SolverConfig",
    "SolverDiverged",
    "SolverTrace",
    "SyntheticConfig",
    "analytic_link",
    "bcd_run",
    "compress_dictionary",
    "compute_beta",
    "default_bandwidth",
    "fit_phi_sharp",
    "freeze_phi_mode",
    "generate_synthetic",
    "grad_phi",
    "grad_z",
    "incoherence",
    "init_svd",
    "link_error",
    "loss",
    "loss_terms",
    "num_threads",
    "phi_sharp",
    "potential",
    "procrustes_align",
    "project_incoherent",
    "project_monotone",
    "regret",
    "residual_bound_check",
    "rkhs_norm_sq",
    "sample_inner_product",
    "set_num_threads",
]
