"""Projected block coordinate descent over ``(Z, phi)``.

Each iteration takes a projected gradient step in ``Z`` at ``(phi_t, Z_t)``
and then a projected functional gradient step in ``phi`` at
``(phi_t, Z_{t+1})``.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional

import numpy as np
from scipy.sparse.linalg import svds

from . import objective as obj
from .diagnostics import fit_phi_sharp, link_error, procrustes_align, regret_gap
from .kernels import (
    KernelSpec,
    LinkFunction,
    MonotoneBounds,
    default_bandwidth,
    kernel_matrix,
    project_monotone,
    with_range,
)
from .model import AnalyticLink, FactorMatrix, GroundTruth, ObservationSet, zero_filled_matrix
from .model import sample_inner_products
from .parallel import single_threaded_blas
from .objective import ObjectiveParams

__all__ = [
    "SolverConfig",
    "SolverDiverged",
    "SolverTrace",
    "TraceRow",
    "bcd_run",
    "compute_beta",
    "freeze_phi_mode",
    "init_svd",
    "project_incoherent",
]

log = logging.getLogger(__name__)

PHI_INITS = ("zero", "mean-offset", "kernel-ridge-warmstart")


@dataclass(frozen=True)
class SolverConfig:
    r: int
    zeta: float = 1e-5
    eta: float = 1e-4
    params: ObjectiveParams = field(default_factory=ObjectiveParams)
    bounds: MonotoneBounds = field(default_factory=lambda: MonotoneBounds(1e-2, 1e2))
    monotone_mode: str = "none"
    incoherent_projection: bool = False
    beta_override: Optional[float] = None
    mu_estimate: float = 3.0
    max_iters: int = 1000
    phi_init: str = "mean-offset"
    diag_every: int = 25
    seed: int = 0
    kernel: Optional[KernelSpec] = None
    grid_spacing: Optional[float] = None
    gamma: float = 1.0
    rescale: Optional[bool] = None
    frozen_link: Optional[AnalyticLink] = None
    record_time: bool = True
    qp_iters: int = 500
    track_potential: bool = True

    def __post_init__(self):
        if self.r < 1:
            raise ValueError("r must be >= 1")
        if not (self.zeta > 0 and self.eta > 0):
            raise ValueError("step sizes must be positive")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        if self.monotone_mode not in ("none", "slope-clip", "qp"):
            raise ValueError(f"unknown monotone_mode {self.monotone_mode!r}")
        if self.phi_init not in PHI_INITS:
            raise ValueError(f"phi_init must be one of {PHI_INITS}")
        if self.diag_every < 1:
            raise ValueError("diag_every must be >= 1")
        if self.beta_override is not None and not self.beta_override > 0:
            raise ValueError("beta_override must be positive")
        if self.mu_estimate < 1:
            raise ValueError("mu_estimate must be >= 1")


def freeze_phi_mode(cfg: SolverConfig, link: AnalyticLink) -> SolverConfig:
    """Config for known-link runs: ``phi`` is fixed to ``link`` and never updated."""
    if link is None:
        raise ValueError("a known link is required")
    return replace(cfg, frozen_link=link, monotone_mode="none")


@dataclass
class TraceRow:
    iter: int
    loss: float
    data_term: float
    balance_term: float
    tikhonov_term: float
    delta_fro: Optional[float] = None
    phi_h_err: Optional[float] = None
    E_t: Optional[float] = None
    D_t: Optional[float] = None
    V_t: Optional[float] = None
    regret_gap: Optional[float] = None
    regret_avg: Optional[float] = None
    wall_ms: Optional[float] = None
    extra: dict = field(default_factory=dict)


@dataclass
class SolverTrace:
    rows: List[TraceRow]
    z: FactorMatrix
    phi: object
    beta: Optional[float] = None
    kernel: Optional[KernelSpec] = None
    notes: List[str] = field(default_factory=list)

    def column(self, name) -> np.ndarray:
        return np.array([np.nan if getattr(r, name) is None else getattr(r, name)
                         for r in self.rows], dtype=float)


class SolverDiverged(FloatingPointError):
    def __init__(self, iteration: int, trace: SolverTrace):
        super().__init__(f"non-finite loss at iteration {iteration}; reduce the step sizes")
        self.iteration = iteration
        self.trace = trace


def init_svd(obs: ObservationSet, r: int, rescale: Optional[bool] = None,
             notes: Optional[list] = None) -> FactorMatrix:
    """``Z_0 = [U S^{1/2}; V S^{1/2}]`` from the rank-r SVD of the zero-filled data."""
    if r > min(obs.n, obs.T):
        raise ValueError("r exceeds min(n, T)")
    y = zero_filled_matrix(obs, rescale)
    if r < min(y.shape) - 1 and min(y.shape) > 200:
        u, s, vt = svds(y, k=r, random_state=0)
        order = np.argsort(s)[::-1]
        u, s, vt = u[:, order], s[order], vt[order]
    else:
        u, s, vt = np.linalg.svd(y, full_matrices=False)
        u, s, vt = u[:, :r], s[:r], vt[:r]
    # fix the sign ambiguity: largest-magnitude entry of each left vector positive
    flip = np.sign(u[np.argmax(np.abs(u), axis=0), np.arange(r)])
    flip[flip == 0] = 1.0
    u, vt = u * flip, vt * flip[:, None]
    tiny = s <= s[0] * 1e-12 if s[0] > 0 else np.ones(r, bool)
    if np.any(tiny) and notes is not None:
        notes.append(f"init_svd: data rank {int(np.sum(~tiny))} < r={r}; zero columns used")
    s = np.where(tiny, 0.0, s)
    root = np.sqrt(s)
    return FactorMatrix.from_blocks(u * root, vt.T * root)


def project_incoherent(z: FactorMatrix, beta: float) -> FactorMatrix:
    """Rescale every row whose norm exceeds ``beta`` down to norm ``beta``."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    a = z.values
    norms = np.linalg.norm(a, axis=1)
    # rows already clipped may sit a few ulps above beta; leave them alone so
    # the projection is exactly idempotent
    over = norms > beta * (1.0 + 1e-14)
    if not np.any(over):
        return z
    out = a.copy()
    out[over] *= (beta / norms[over])[:, None]
    return FactorMatrix(out, z.n)


def compute_beta(z0: FactorMatrix, mu: float) -> float:
    """Row-norm radius ``(4/3) sqrt(mu / (n + T)) ||Z_0||_F``."""
    if mu < 1:
        raise ValueError("mu must be >= 1")
    return (4.0 / 3.0) * math.sqrt(mu / z0.values.shape[0]) * float(np.linalg.norm(z0.values))


def _initial_phi(cfg, obs, z0, kernel):
    if cfg.frozen_link is not None:
        return cfg.frozen_link
    if cfg.phi_init == "zero":
        return LinkFunction.zero(kernel)
    offset = float(np.mean(obs.y))
    if cfg.phi_init == "mean-offset":
        return LinkFunction.zero(kernel, offset)
    if cfg.grid_spacing is None:
        return fit_phi_sharp(obs, z0, kernel, cfg.params, offset=offset).link()
    return _grid_ridge_fit(obs, z0, kernel, cfg.params, offset, cfg.grid_spacing)


def _grid_ridge_fit(obs, z, kernel, params, offset, spacing):
    """Kernel ridge fit with atoms restricted to multiples of ``spacing``.

    Snapping an unrestricted fit onto the grid is badly conditioned when the
    ridge is small, so the restricted problem is solved directly.
    """
    x = sample_inner_products(z, obs)
    if not params.alpha > 0:
        raise ValueError("alpha must be > 0 for a unique minimiser")
    lo, hi = np.floor(x.min() / spacing), np.ceil(x.max() / spacing)
    grid = np.arange(lo, hi + 1) * spacing
    kxg = kernel_matrix(kernel, x, grid)
    kgg = kernel_matrix(kernel, grid, grid)
    # minimise ||t - Kxg b||^2 + (ridge / 2) b' Kgg b
    lhs = kxg.T @ kxg + 0.5 * params.ridge(obs.M) * kgg
    w, q = np.linalg.eigh(lhs)
    keep = w > 1e-12 * w[-1]
    beta = q[:, keep] @ ((q[:, keep].T @ (kxg.T @ (obs.y - offset))) / w[keep])
    return LinkFunction(kernel, grid, beta, offset)


class _Diagnostics:
    """Expensive per-iteration quantities on a cadence, interpolated in between."""

    FIELDS = ("E_t", "regret_gap", "phi_h_err")

    def __init__(self, cfg, obs, truth, writer, monitor):
        self.cfg, self.obs, self.truth = cfg, obs, truth
        self.writer, self.monitor = writer, monitor
        self.rows: List[TraceRow] = []
        self.pending: List[TraceRow] = []
        self.last: Optional[TraceRow] = None
        self.gap_sum = 0.0

    @property
    def joint(self):
        return self.cfg.frozen_link is None

    def measure(self, row, z, phi):
        cfg, obs, truth = self.cfg, self.obs, self.truth
        if self.joint and cfg.track_potential:
            fit = fit_phi_sharp(obs, z, phi.kernel, cfg.params, offset=phi.offset)
            row.E_t = fit.distance_sq(phi)
            row.regret_gap = regret_gap(obs, z, phi, cfg.params, fit=fit)
            if truth is not None:
                support = (float(fit.x.min()), float(fit.x.max()))
                row.phi_h_err = link_error(phi, truth.phi_star, support=support)
        if self.monitor is not None:
            row.extra.update(self.monitor(row.iter, z, phi))

    def push(self, row, z, phi, force=False):
        if self.truth is not None:
            row.delta_fro = procrustes_align(z, self.truth.z_star).delta_fro
            row.D_t = row.delta_fro ** 2
        if force or row.iter % self.cfg.diag_every == 0:
            self.measure(row, z, phi)
            self._fill(row)
            self.last = row
            for r in self.pending + [row]:
                self._finish(r)
            self.pending = []
        else:
            self.pending.append(row)

    def _fill(self, row):
        if self.last is None or not self.pending:
            return
        t0, t1 = self.last.iter, row.iter
        for name in self.FIELDS:
            a, b = getattr(self.last, name), getattr(row, name)
            if a is None or b is None:
                continue
            for r in self.pending:
                w = (r.iter - t0) / (t1 - t0)
                setattr(r, name, (1.0 - w) * a + w * b)

    def _finish(self, row):
        if row.E_t is not None and row.D_t is not None:
            row.V_t = row.E_t + self.cfg.gamma * row.D_t
        if row.regret_gap is not None and row.iter >= 1:
            self.gap_sum += row.regret_gap
            row.regret_avg = self.gap_sum / row.iter
        self.rows.append(row)
        if self.writer is not None:
            self.writer(row)


def _row(t, terms, start, cfg):
    wall = (time.perf_counter() - start) * 1e3 if cfg.record_time else None
    return TraceRow(t, terms.total, terms.data, terms.balance, terms.tikhonov, wall_ms=wall)


def _support(x, h):
    lo, hi = float(np.min(x)), float(np.max(x))
    return lo - h, hi + h


def bcd_run(obs: ObservationSet, cfg: SolverConfig, truth: Optional[GroundTruth] = None,
            writer: Optional[Callable] = None, monitor: Optional[Callable] = None,
            z0: Optional[FactorMatrix] = None) -> SolverTrace:
    """Run the projected BCD for ``cfg.max_iters`` iterations.

    ``writer`` receives each finished :class:`TraceRow` in order; rows
    between diagnostic iterations are released once the next diagnostic
    iteration has been computed. ``monitor(t, Z, phi)`` may return extra
    metrics (for instance a validation RMSE) recorded on diagnostic rows.
    BLAS runs single threaded so traces do not depend on the thread count.
    """
    with single_threaded_blas():
        return _bcd_run(obs, cfg, truth, writer, monitor, z0)


def _bcd_run(obs, cfg, truth, writer, monitor, z0):
    start = time.perf_counter()
    notes: List[str] = []
    if z0 is None:
        z0 = init_svd(obs, cfg.r, cfg.rescale, notes)
    beta = None
    if cfg.incoherent_projection:
        if cfg.beta_override is not None:
            beta = cfg.beta_override
        else:
            mu = truth.mu if truth is not None else cfg.mu_estimate
            beta = compute_beta(z0, mu)
        if beta > 0 and np.any(z0.values):
            z0 = project_incoherent(z0, beta)
        else:
            beta = None
            notes.append("incoherent projection skipped: Z_0 = 0")

    kernel = cfg.kernel
    if kernel is None and cfg.frozen_link is None:
        kernel = KernelSpec("gaussian", default_bandwidth(sample_inner_products(z0, obs)))
    spacing = cfg.grid_spacing
    if spacing is None and kernel is not None:
        spacing = kernel.bandwidth / 10.0
    cfg = replace(cfg, kernel=kernel, grid_spacing=spacing)

    z = z0
    phi = _initial_phi(cfg, obs, z, kernel)
    params = cfg.params
    diag = _Diagnostics(cfg, obs, truth, writer, monitor)

    x, g, slope = obj.residuals_with_slope(obs, z, phi)
    terms = obj.loss_terms(obs, z, phi, params, g=g)
    diag.push(_row(0, terms, start, cfg), z, phi, force=True)

    for t in range(cfg.max_iters):
        gz = obj.grad_z(obs, z, phi, params, x=x, g=g, slope=slope)
        step = z.values - cfg.zeta * gz
        if not np.all(np.isfinite(step)):
            raise SolverDiverged(t + 1, SolverTrace(diag.rows, z, phi, beta, kernel, notes))
        z = FactorMatrix(step, z.n)
        if beta is not None:
            z = project_incoherent(z, beta)

        if cfg.frozen_link is None:
            x, g = obj.residuals(obs, z, phi)
            gp = obj.grad_phi(obs, z, phi, params, x=x, g=g)
            phi = obj.phi_step(phi, gp, cfg.eta, cfg.grid_spacing)
            if cfg.monotone_mode != "none":
                lo, hi = _support(x, kernel.bandwidth)
                phi = project_monotone(phi, with_range(cfg.bounds, lo, hi),
                                       cfg.monotone_mode, cfg.qp_iters)

        x, g, slope = obj.residuals_with_slope(obs, z, phi)
        terms = obj.loss_terms(obs, z, phi, params, g=g)
        if not math.isfinite(terms.total):
            raise SolverDiverged(t + 1, SolverTrace(diag.rows, z, phi, beta, kernel, notes))
        last = t + 1 == cfg.max_iters
        diag.push(_row(t + 1, terms, start, cfg), z, phi, force=last)

    return SolverTrace(diag.rows, z, phi, beta, kernel, notes)
