"""Regularised squared loss and its two block gradients.

    L(phi, Z) = (1/M) sum_k (y_k - phi(x_k))^2
                + (lam / 4) ||Z^T D Z||_F^2 + (alpha / 2) ||phi||_H^2

with ``x_k = u_{i_k} . v_{t_k}`` and ``D = diag(I_n, -I_T)``.

``reduction="sum"`` drops the ``1/M`` on the data term. The regularisers
are unchanged, so for a given ``(lam, alpha, zeta, eta)`` the two
conventions describe different problems.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import LinkFunction, compress_dictionary, rkhs_norm_sq
from .model import FactorMatrix, ObservationSet, sample_inner_products
from .parallel import chunk_map, ordered_sum

__all__ = [
    "LossTerms",
    "ObjectiveParams",
    "PhiGradient",
    "balance_core",
    "grad_phi",
    "grad_z",
    "loss",
    "loss_terms",
    "phi_step",
    "residuals",
    "residuals_with_slope",
]


@dataclass(frozen=True)
class ObjectiveParams:
    lam: float = 0.5
    alpha: float = 1e-3
    reduction: str = "mean"

    def __post_init__(self):
        for name in ("lam", "alpha"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and >= 0")
        if self.reduction not in ("mean", "sum"):
            raise ValueError("reduction must be 'mean' or 'sum'")

    def data_weight(self, m: int) -> float:
        return 1.0 / m if self.reduction == "mean" else 1.0

    def ridge(self, m: int) -> float:
        """Diagonal shift ``a`` of the phi-subproblem system ``(aI + 2K) beta = 2y``."""
        return self.alpha / self.data_weight(m)


@dataclass(frozen=True)
class LossTerms:
    data: float
    balance: float
    tikhonov: float

    @property
    def total(self) -> float:
        return self.data + self.balance + self.tikhonov


def _h_norm_sq(phi) -> float:
    # closed-form links are not RKHS elements and carry no penalty
    return rkhs_norm_sq(phi) if isinstance(phi, LinkFunction) else 0.0


def residuals(obs: ObservationSet, z: FactorMatrix, phi):
    """``(x, g)`` with ``x_k = <A_k, ZZ^T>`` and ``g_k = y_k - phi(x_k)``."""
    x = sample_inner_products(z, obs)
    return x, obs.y - phi(x)


def residuals_with_slope(obs: ObservationSet, z: FactorMatrix, phi):
    """``(x, g, phi'(x))`` from a single kernel evaluation."""
    x = sample_inner_products(z, obs)
    val, der = phi.value_and_deriv(x)
    return x, obs.y - val, der


def balance_core(z) -> np.ndarray:
    """``Z^T D Z = U^T U - V^T V`` (r x r)."""
    if isinstance(z, FactorMatrix):
        u, v = z.u, z.v
    else:
        raise TypeError("balance_core needs a FactorMatrix")
    return u.T @ u - v.T @ v


def loss_terms(obs, z, phi, params: ObjectiveParams, g=None) -> LossTerms:
    if g is None:
        _, g = residuals(obs, z, phi)
    parts = chunk_map(lambda a, b: float(g[a:b] @ g[a:b]), len(g))
    data = ordered_sum(parts) * params.data_weight(obs.M)
    c = balance_core(z)
    balance = 0.25 * params.lam * float(np.sum(c * c)) if params.lam else 0.0
    tik = 0.5 * params.alpha * _h_norm_sq(phi) if params.alpha else 0.0
    return LossTerms(data, balance, tik)


def loss(obs, z, phi, params: ObjectiveParams) -> float:
    return loss_terms(obs, z, phi, params).total


def grad_z(obs, z: FactorMatrix, phi, params: ObjectiveParams, x=None, g=None,
           slope=None) -> np.ndarray:
    """Gradient in ``Z``; ``(n + T) x r``.

    Each sample adds ``w_k * v_{t_k}`` to row ``i_k`` and ``w_k * u_{i_k}``
    to row ``n + t_k`` with ``w_k = -(2/M) g_k phi'(x_k)`` (``-2 g_k phi'(x_k)``
    under ``reduction='sum'``). The balance part
    ``lam * D Z (Z^T D Z)`` only forms r x r intermediates.
    """
    a = z.values
    n, r = z.n, z.r
    size = a.shape[0]
    if x is None or g is None:
        x, g, slope = residuals_with_slope(obs, z, phi)
    elif slope is None:
        slope = phi.deriv(x)
    w = (-2.0 * params.data_weight(obs.M)) * g * slope
    rows, cols = obs.rows, n + obs.cols

    def partial(s, e):
        out = np.empty((size, r))
        wr, ri, ci = w[s:e], rows[s:e], cols[s:e]
        for j in range(r):
            out[:, j] = np.bincount(ri, weights=wr * a[ci, j], minlength=size)
            out[:, j] += np.bincount(ci, weights=wr * a[ri, j], minlength=size)
        return out

    grad = ordered_sum(chunk_map(partial, obs.M))
    if params.lam:
        c = balance_core(z)
        grad[:n] += params.lam * (a[:n] @ c)
        grad[n:] -= params.lam * (a[n:] @ c)
    return grad


@dataclass(frozen=True)
class PhiGradient:
    """``grad_phi L = decay * phi_H + sum_k new_coeffs[k] K(new_centers[k], .)``.

    ``phi_H`` is the dictionary part of ``phi`` (offset excluded).
    """

    decay: float
    new_centers: np.ndarray
    new_coeffs: np.ndarray

    def as_link(self, phi: LinkFunction) -> LinkFunction:
        """The gradient itself as an RKHS element."""
        return LinkFunction.from_atoms(
            phi.kernel,
            np.concatenate([phi.centers, self.new_centers]),
            np.concatenate([self.decay * phi.coeffs, self.new_coeffs]),
        )

    def inner(self, phi: LinkFunction, psi: LinkFunction) -> float:
        """``<grad, psi>_H`` for a dictionary ``psi`` (its offset ignored)."""
        psi_h = psi(self.new_centers) - psi.offset
        own = 0.0
        if self.decay and len(phi):
            own = self.decay * float(phi.coeffs @ (psi(phi.centers) - psi.offset))
        return float(self.new_coeffs @ psi_h) + own


def grad_phi(obs, z, phi: LinkFunction, params: ObjectiveParams, x=None, g=None) -> PhiGradient:
    if x is None or g is None:
        x, g = residuals(obs, z, phi)
    coeffs = (-2.0 * params.data_weight(obs.M)) * g
    if not params.alpha and not np.any(coeffs):
        return PhiGradient(0.0, np.empty(0), np.empty(0))
    return PhiGradient(float(params.alpha), np.asarray(x, dtype=float), coeffs)


def phi_step(phi: LinkFunction, grad: PhiGradient, eta: float,
             grid_spacing: float = None) -> LinkFunction:
    """``phi - eta * grad``: shrink by ``1 - eta*decay``, append atoms, compress.

    The offset is shrunk with the coefficients.
    """
    shrink = 1.0 - eta * grad.decay
    merged = LinkFunction.from_atoms(
        phi.kernel,
        np.concatenate([phi.centers, grad.new_centers]),
        np.concatenate([shrink * phi.coeffs, -eta * grad.new_coeffs]),
        shrink * phi.offset,
    )
    if grid_spacing is not None:
        merged = compress_dictionary(merged, grid_spacing)
    return merged
