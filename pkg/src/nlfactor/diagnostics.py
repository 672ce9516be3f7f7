"""Ground-truth and theory-facing metrics.

The phi-subproblem minimiser ``phi_sharp(Z)`` is the kernel ridge solution
``(aI + 2K) beta = 2 (y - offset)`` over the current sample inputs ``x_k``,
with ``a = M * alpha`` for the averaged loss and ``a = alpha`` for the summed
one. It is the minimiser over the whole RKHS, not over the monotone class,
so regret gaps measured against it upper-bound the constrained gaps.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg

from .kernels import (
    KernelSpec,
    LinkFunction,
    gram_matrix,
    h_distance_sq,
    interpolate_on_grid,
    kernel_matrix,
    rkhs_norm_sq,
)
from .model import AnalyticLink, FactorMatrix, ObservationSet, sample_inner_products
from .objective import ObjectiveParams, loss_terms

__all__ = [
    "AlignmentResult",
    "KernelRidgeFit",
    "PotentialReport",
    "fit_phi_sharp",
    "link_error",
    "phi_sharp",
    "potential",
    "procrustes_align",
    "regret",
    "residual_bound_check",
]

# dense Cholesky below this many samples, low-rank Woodbury above
DENSE_LIMIT = 2000
_PIVOT_TOL = 1e-13


@dataclass(frozen=True)
class AlignmentResult:
    rotation: np.ndarray
    delta: FactorMatrix
    delta_fro: float


def procrustes_align(z: FactorMatrix, z_star: FactorMatrix) -> AlignmentResult:
    """Rotation ``R`` minimising ``||Z - Z* R||_F`` and the residual ``Z - Z* R``.

    With ``Z*^T Z = P S Q^T`` the minimiser is ``R = P Q^T``.
    """
    a, b = z.values, z_star.values
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    p, _, qt = np.linalg.svd(b.T @ a)
    rot = p @ qt
    delta = a - b @ rot
    return AlignmentResult(rot, FactorMatrix(delta, z.n), float(np.linalg.norm(delta)))


def _pivoted_cholesky(kernel, x, tol, max_rank):
    """``K ~= L L^T`` with the largest residual diagonal below ``tol``."""
    m = len(x)
    diag = np.ones(m)  # K(x, x) = 1 for both families
    cols = []
    while len(cols) < max_rank:
        p = int(np.argmax(diag))
        if diag[p] <= tol:
            break
        col = kernel_matrix(kernel, x, x[p:p + 1])[:, 0]
        for c in cols:
            col -= c * c[p]
        col /= np.sqrt(diag[p])
        cols.append(col)
        diag -= col * col
        diag[p] = 0.0
    else:
        return None
    return np.column_stack(cols) if cols else np.zeros((m, 0))


@dataclass(frozen=True)
class KernelRidgeFit:
    """Solution of ``(aI + 2K) beta = 2 t`` on inputs ``x``.

    ``fitted = K beta``; on the low-rank route it is ``L L^T beta``, within
    the pivoting tolerance of the exact value.
    """

    x: np.ndarray
    beta: np.ndarray
    fitted: np.ndarray
    ridge: float
    offset: float
    kernel: KernelSpec

    @property
    def norm_sq(self) -> float:
        return max(float(self.beta @ self.fitted), 0.0)

    def link(self) -> LinkFunction:
        return LinkFunction.from_atoms(self.kernel, self.x, self.beta, self.offset)

    def eval_h(self, points) -> np.ndarray:
        """Dictionary part ``sum_k beta_k K(x_k, p)`` at ``points``."""
        points = np.asarray(points, dtype=float)
        if not len(points):
            return np.empty(0)
        return kernel_matrix(self.kernel, points, self.x) @ self.beta

    def distance_sq(self, phi: LinkFunction) -> float:
        """``||phi_H - fit_H||_H^2``; offsets are not part of the H-norm."""
        if phi.kernel != self.kernel:
            raise ValueError("kernel mismatch")
        own = rkhs_norm_sq(phi)
        cross = float(phi.coeffs @ self.eval_h(phi.centers)) if len(phi) else 0.0
        return max(own - 2.0 * cross + self.norm_sq, 0.0)


def _ridge_solve(kernel, x, target, ridge, method):
    m = len(x)
    if method == "auto":
        method = "dense" if m <= DENSE_LIMIT else "lowrank"
    if method == "lowrank":
        low = _pivoted_cholesky(kernel, x, _PIVOT_TOL, max_rank=max(m // 4, 1))
        if low is None:
            method = "dense"
        else:
            inner = 0.5 * ridge * np.eye(low.shape[1]) + low.T @ low
            w = linalg.cho_solve(linalg.cho_factor(inner), low.T @ target)
            beta = (2.0 / ridge) * (target - low @ w)
            return beta, low @ (low.T @ beta)
    if method != "dense":
        raise ValueError(f"unknown solve method {method!r}")
    sys = 2.0 * gram_matrix(kernel, x)
    sys[np.diag_indices_from(sys)] += ridge
    try:
        fac = linalg.cho_factor(sys)
    except linalg.LinAlgError as err:
        raise np.linalg.LinAlgError(
            "phi-subproblem system is not positive definite; increase alpha") from err
    beta = linalg.cho_solve(fac, 2.0 * target)
    # one round of iterative refinement
    resid = 2.0 * target - sys @ beta
    beta = beta + linalg.cho_solve(fac, resid)
    sys[np.diag_indices_from(sys)] -= ridge
    return beta, 0.5 * (sys @ beta)


def fit_phi_sharp(obs: ObservationSet, z: FactorMatrix, kernel: KernelSpec,
                  params: ObjectiveParams, offset: float = 0.0,
                  subsample: Optional[int] = None, seed: int = 0,
                  method: str = "auto") -> KernelRidgeFit:
    """Exact minimiser of ``L(., Z)`` over ``offset + H`` (offset held fixed)."""
    if not params.alpha > 0:
        raise ValueError("alpha must be > 0 for a unique minimiser")
    if subsample is not None and subsample < obs.M:
        idx = np.sort(np.random.default_rng(seed).choice(obs.M, subsample, replace=False))
        obs = obs.subset(idx)
    x = sample_inner_products(z, obs)
    target = obs.y - offset
    ridge = params.ridge(obs.M)
    beta, fitted = _ridge_solve(kernel, x, target, ridge, method)
    return KernelRidgeFit(x, beta, fitted, ridge, offset, kernel)


def phi_sharp(obs, z, kernel, alpha, subsample=None, reduction="mean",
              offset=0.0) -> LinkFunction:
    """``phi_sharp(Z)`` as a dictionary over the sample inputs ``x_k``."""
    params = ObjectiveParams(lam=0.0, alpha=alpha, reduction=reduction)
    return fit_phi_sharp(obs, z, kernel, params, offset, subsample).link()


def residual_bound_check(obs, z, kernel, alpha, phi_star_norm, reduction="mean"):
    """Residual of ``phi_sharp`` against the stationary-point bound.

    Returns ``(lhs, rhs, holds)`` with ``lhs = ||e||_2 / sqrt(M)`` and
    ``rhs = a sqrt(B_K) ||phi*||_H / (a + 2 lambda_min(K))``, where ``a`` is
    the ridge of the phi-subproblem system.
    """
    params = ObjectiveParams(lam=0.0, alpha=alpha, reduction=reduction)
    fit = fit_phi_sharp(obs, z, kernel, params, method="dense")
    e = obs.y - fit.fitted
    lhs = float(np.linalg.norm(e) / np.sqrt(obs.M))
    lam_min = max(float(linalg.eigvalsh(gram_matrix(kernel, fit.x), subset_by_index=[0, 0])[0]), 0.0)
    a = fit.ridge
    rhs = a * np.sqrt(kernel.b_k) * phi_star_norm / (a + 2.0 * lam_min)
    return lhs, float(rhs), bool(lhs <= rhs + 1e-9)


@dataclass(frozen=True)
class PotentialReport:
    E_t: float
    D_t: Optional[float]
    gamma: float
    V_t: Optional[float]
    chi: Optional[float] = None


def _as_dictionary(phi_star, phi: LinkFunction, support=None) -> LinkFunction:
    """Grid interpolant of a closed-form link, sharing ``phi``'s offset.

    The grid spacing equals the bandwidth so the interpolation system stays
    well conditioned. ``support`` defaults to the span of ``phi``'s centers.
    """
    if isinstance(phi_star, LinkFunction):
        return phi_star
    if support is None:
        if not len(phi):
            raise ValueError("support needed to interpolate a closed-form link")
        support = (phi.centers[0], phi.centers[-1])
    lo, hi = map(float, support)
    h = phi.kernel.bandwidth
    m = max(2, int(np.ceil((hi - lo) / h)) + 1)
    grid = np.linspace(lo, hi, m)
    return interpolate_on_grid(phi.kernel, grid, phi_star(grid), phi.offset)


def link_error(phi: LinkFunction, phi_star, kernel: Optional[KernelSpec] = None,
               support=None) -> float:
    """``||phi - phi*||_H`` over the dictionary parts.

    A closed-form ``phi*`` is first replaced by its kernel interpolant on a
    grid over ``support``; this is a surrogate, since such links are usually
    not RKHS members.
    """
    if kernel is not None and kernel != phi.kernel:
        raise ValueError("phi does not use the given kernel")
    ref = _as_dictionary(phi_star, phi, support)
    return float(np.sqrt(h_distance_sq(phi, ref)))


def potential(obs, z, phi: LinkFunction, kernel: KernelSpec, params: ObjectiveParams,
              gamma: float = 1.0, z_star: Optional[FactorMatrix] = None,
              phi_star=None, fit: Optional[KernelRidgeFit] = None) -> PotentialReport:
    """``V_t = E_t + gamma * D_t`` with ``E_t = ||phi - phi_sharp(Z)||_H^2``."""
    if not gamma > 0:
        raise ValueError("gamma must be > 0")
    if fit is None:
        fit = fit_phi_sharp(obs, z, kernel, params, offset=phi.offset)
    e_t = fit.distance_sq(phi)
    d_t = procrustes_align(z, z_star).delta_fro ** 2 if z_star is not None else None
    v_t = e_t + gamma * d_t if d_t is not None else None
    chi = None
    if phi_star is not None:
        support = (float(fit.x.min()), float(fit.x.max()))
        ref = _as_dictionary(phi_star, phi, support)
        chi = float(np.sqrt(fit.distance_sq(ref)))
    return PotentialReport(e_t, d_t, gamma, v_t, chi)


def regret_gap(obs, z, phi, params, fit: Optional[KernelRidgeFit] = None) -> float:
    """``L(phi, Z) - L(phi_sharp(Z), Z)``."""
    if fit is None:
        fit = fit_phi_sharp(obs, z, phi.kernel, params, offset=phi.offset)
    current = loss_terms(obs, z, phi, params)
    g_sharp = obs.y - fit.offset - fit.fitted
    best_data = float(g_sharp @ g_sharp) * params.data_weight(obs.M)
    best = best_data + 0.5 * params.alpha * fit.norm_sq
    return (current.data + current.tikhonov) - best


def regret(pairs, obs, kernel, params: ObjectiveParams):
    """Running averages ``R_T = (1/T) sum_{t<=T} gap_t`` over ``(phi_t, Z_t)``."""
    gaps = []
    for phi, z in pairs:
        if phi.kernel != kernel:
            raise ValueError("kernel mismatch")
        gaps.append(regret_gap(obs, z, phi, params))
    gaps = np.asarray(gaps)
    return (np.cumsum(gaps) / np.arange(1, len(gaps) + 1)).tolist()
