"""Scalar kernels, dictionary-represented RKHS functions and their projections.

A link ``phi`` is stored as ``offset + sum_j coeffs[j] * K(centers[j], .)``.
The offset is a constant outside the RKHS; it never enters an H-norm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy import linalg

__all__ = [
    "KernelSpec",
    "LinkFunction",
    "MonotoneBounds",
    "SingularGramError",
    "compress_dictionary",
    "default_bandwidth",
    "gram_matrix",
    "h_distance_sq",
    "interpolate_on_grid",
    "kernel_eval",
    "kernel_matrix",
    "link_deriv",
    "link_eval",
    "project_monotone",
    "rkhs_norm_sq",
]

# rows per block when evaluating a dictionary at many points
_EVAL_BLOCK = 8192


class SingularGramError(np.linalg.LinAlgError):
    """Gram system on the projection grid is numerically singular."""


@dataclass(frozen=True)
class KernelSpec:
    """Translation-invariant scalar kernel.

    ``gaussian``: ``exp(-(a - b)^2 / (2 h^2))``; ``laplacian``:
    ``exp(-|a - b| / h)``. Both have ``K(x, x) = 1``.
    """

    family: str = "gaussian"
    bandwidth: float = 1.0

    def __post_init__(self):
        if self.family not in ("gaussian", "laplacian"):
            raise ValueError(f"unknown kernel family {self.family!r}")
        if not (self.bandwidth > 0 and math.isfinite(self.bandwidth)):
            raise ValueError("bandwidth must be positive and finite")

    @property
    def b_k(self) -> float:
        return 1.0

    @property
    def lipschitz_k(self) -> float:
        # ||K(a,.) - K(b,.)||_H^2 = 2 - 2 k(a - b)
        if self.family == "gaussian":
            return 1.0 / self.bandwidth
        return math.inf

    @property
    def lipschitz_kprime(self) -> float:
        if self.family == "gaussian":
            return math.sqrt(3.0) / self.bandwidth**2
        return math.inf


def kernel_matrix(spec: KernelSpec, a, b) -> np.ndarray:
    """``K[i, j] = K(a[i], b[j])``."""
    a = np.asarray(a, dtype=float).reshape(-1, 1)
    b = np.asarray(b, dtype=float).reshape(1, -1)
    d = a - b
    h = spec.bandwidth
    if spec.family == "gaussian":
        np.multiply(d, d, out=d)
        d *= -0.5 / (h * h)
    else:
        np.abs(d, out=d)
        d *= -1.0 / h
    return np.exp(d, out=d)


def kernel_eval(spec: KernelSpec, a: float, b: float) -> float:
    return float(kernel_matrix(spec, [a], [b])[0, 0])


def gram_matrix(spec: KernelSpec, points) -> np.ndarray:
    k = kernel_matrix(spec, points, points)
    return 0.5 * (k + k.T)


@dataclass(frozen=True)
class LinkFunction:
    """Kernel dictionary ``offset + sum_j coeffs[j] K(centers[j], .)``.

    ``centers`` are strictly increasing. Use :meth:`from_atoms` to build one
    from unsorted, possibly repeated centers.
    """

    kernel: KernelSpec
    centers: np.ndarray
    coeffs: np.ndarray
    offset: float = 0.0

    def __post_init__(self):
        c = np.array(self.centers, dtype=float).ravel()
        b = np.array(self.coeffs, dtype=float).ravel()
        if c.shape != b.shape:
            raise ValueError("centers and coeffs must have equal length")
        if c.size > 1 and not np.all(np.diff(c) > 0):
            raise ValueError("centers must be strictly increasing")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(b)) and math.isfinite(self.offset)):
            raise ValueError("dictionary entries must be finite")
        c.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "coeffs", b)
        object.__setattr__(self, "offset", float(self.offset))

    @classmethod
    def zero(cls, kernel: KernelSpec, offset: float = 0.0) -> "LinkFunction":
        return cls(kernel, np.empty(0), np.empty(0), offset)

    @classmethod
    def from_atoms(cls, kernel, centers, coeffs, offset=0.0) -> "LinkFunction":
        """Sort atoms and sum the coefficients of identical centers."""
        centers = np.asarray(centers, dtype=float).ravel()
        coeffs = np.asarray(coeffs, dtype=float).ravel()
        uniq, inverse = np.unique(centers, return_inverse=True)
        summed = np.bincount(inverse, weights=coeffs, minlength=len(uniq))
        return cls(kernel, uniq, summed, offset)

    def __len__(self):
        return len(self.centers)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        flat = x.ravel()
        out = np.full(flat.shape, self.offset)
        if len(self.centers):
            for s in range(0, len(flat), _EVAL_BLOCK):
                blk = flat[s:s + _EVAL_BLOCK]
                out[s:s + _EVAL_BLOCK] += kernel_matrix(self.kernel, blk, self.centers) @ self.coeffs
        return out.reshape(x.shape)

    def deriv(self, x):
        return self.value_and_deriv(x)[1]

    def value_and_deriv(self, x):
        """``(phi(x), phi'(x))`` sharing one kernel evaluation."""
        x = np.asarray(x, dtype=float)
        flat = x.ravel()
        val = np.full(flat.shape, self.offset)
        der = np.zeros(flat.shape)
        if len(self.centers):
            h = self.kernel.bandwidth
            for s in range(0, len(flat), _EVAL_BLOCK):
                blk = flat[s:s + _EVAL_BLOCK]
                k = kernel_matrix(self.kernel, blk, self.centers)
                val[s:s + _EVAL_BLOCK] += k @ self.coeffs
                d = blk[:, None] - self.centers[None, :]
                if self.kernel.family == "gaussian":
                    d *= -1.0 / (h * h)
                else:
                    d = -np.sign(d) / h
                d *= k
                der[s:s + _EVAL_BLOCK] = d @ self.coeffs
        return val.reshape(x.shape), der.reshape(x.shape)

    def to_record(self) -> dict:
        return {
            "family": self.kernel.family,
            "bandwidth": self.kernel.bandwidth,
            "offset": self.offset,
            "centers": self.centers.tolist(),
            "coeffs": self.coeffs.tolist(),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "LinkFunction":
        kernel = KernelSpec(rec["family"], float(rec["bandwidth"]))
        return cls(kernel, rec["centers"], rec["coeffs"], rec["offset"])


def link_eval(phi, x):
    return phi(x)


def link_deriv(phi, x):
    return phi.deriv(x)


def rkhs_norm_sq(phi: LinkFunction) -> float:
    """``beta^T K beta`` over the dictionary; the offset is excluded."""
    if not len(phi):
        return 0.0
    b = phi.coeffs
    return max(float(b @ gram_matrix(phi.kernel, phi.centers) @ b), 0.0)


def h_distance_sq(f: LinkFunction, g: LinkFunction) -> float:
    """``||f - g||_H^2`` via the Gram quadratic form on the merged dictionary."""
    if f.kernel != g.kernel:
        raise ValueError("both functions must share a kernel")
    merged = LinkFunction.from_atoms(
        f.kernel,
        np.concatenate([f.centers, g.centers]),
        np.concatenate([f.coeffs, -g.coeffs]),
    )
    return rkhs_norm_sq(merged)


def compress_dictionary(phi: LinkFunction, grid_spacing: float) -> LinkFunction:
    """Snap every center to the nearest multiple of ``grid_spacing``.

    Coefficients landing on the same grid point are summed. The sup-norm
    change is at most ``sum|beta| * L_K * grid_spacing / 2``.
    """
    if not grid_spacing > 0:
        raise ValueError("grid_spacing must be positive")
    if not len(phi):
        return phi
    idx = np.rint(phi.centers / grid_spacing)
    snapped = idx * grid_spacing
    # centers already on the grid up to rounding are left untouched
    tol = 4.0 * np.finfo(float).eps * np.maximum(np.abs(phi.centers), grid_spacing)
    if np.all(np.abs(snapped - phi.centers) <= tol):
        return phi
    uniq, inverse = np.unique(idx, return_inverse=True)
    summed = np.bincount(inverse, weights=phi.coeffs, minlength=len(uniq))
    return LinkFunction(phi.kernel, uniq * grid_spacing, summed, phi.offset)


def default_bandwidth(x, m: int = 16) -> float:
    """``0.5 * (max(x) - min(x)) / sqrt(m)``; median heuristic if the span is 0."""
    x = np.asarray(x, dtype=float)
    width = float(np.max(x) - np.min(x)) if x.size else 0.0
    if width > 0:
        return 0.5 * width / math.sqrt(m)
    spread = float(np.median(np.abs(x - np.median(x)))) if x.size else 0.0
    return spread if spread > 0 else 1.0


@dataclass(frozen=True)
class MonotoneBounds:
    """Derivative box ``[xi, Xi]`` enforced on a uniform grid over ``range``.

    ``grid_points=None`` picks a spacing close to the kernel bandwidth, which
    keeps the grid Gram matrix well conditioned. ``range=None`` means the
    caller supplies it per call (the solver uses the current sample span).
    """

    xi: float
    Xi: float
    grid_points: Optional[int] = None
    range: Optional[tuple] = None

    def __post_init__(self):
        if not (0 < self.xi <= self.Xi < math.inf):
            raise ValueError("need 0 < xi <= Xi < inf")
        if self.grid_points is not None and self.grid_points < 2:
            raise ValueError("grid_points must be >= 2")
        if self.range is not None:
            lo, hi = self.range
            if not lo < hi:
                raise ValueError("range must satisfy lo < hi")

    def grid(self, kernel: KernelSpec) -> np.ndarray:
        if self.range is None:
            raise ValueError("MonotoneBounds.range is unset")
        lo, hi = map(float, self.range)
        m = self.grid_points
        if m is None:
            m = max(2, int(math.ceil((hi - lo) / kernel.bandwidth)) + 1)
        return np.linspace(lo, hi, m)


def _grid_gram_factor(kernel: KernelSpec, grid: np.ndarray):
    g = gram_matrix(kernel, grid)
    m = len(grid)
    lam = linalg.eigvalsh(g)
    if lam[0] <= 1e-12 * lam[-1]:
        raise SingularGramError(
            f"Gram matrix on {m} grid points is singular for bandwidth {kernel.bandwidth:g}; "
            "use fewer grid points"
        )
    jitter = 1e-8 * np.trace(g) / m
    return g, linalg.cho_factor(g + jitter * np.eye(m))


def interpolate_on_grid(kernel: KernelSpec, grid, values, offset: float = 0.0) -> LinkFunction:
    """Kernel interpolant through ``(grid, values)`` with the given offset.

    Solves the jittered Gram system, then refines against the exact Gram so
    the grid values are reproduced to rounding error.
    """
    grid = np.asarray(grid, dtype=float)
    target = np.asarray(values, dtype=float) - offset
    g, fac = _grid_gram_factor(kernel, grid)
    c = linalg.cho_solve(fac, target)
    for _ in range(4):
        c = c + linalg.cho_solve(fac, target - g @ c)
    return LinkFunction(kernel, grid, c, offset)


def _clip_slopes(values, step, xi, Xi):
    slopes = np.clip(np.diff(values) / step, xi, Xi)
    mid = (len(values) - 1) // 2
    rebuilt = np.concatenate([[0.0], np.cumsum(slopes * step)])
    return rebuilt - rebuilt[mid] + values[mid]


def _qp_refine(g, target, start, step, xi, Xi, iters):
    """Minimise ``(v - target)^T G^{-1} (v - target)`` over slope-boxed ``v``.

    ``v = v0 + step * cumsum(w)`` with ``w`` boxed in ``[xi, Xi]``; projected
    gradient on ``(v0, w)``, warm started at ``start`` and monotone in the
    objective, so the result is never worse than ``start``.
    """
    m = len(target)
    basis = np.zeros((m, m))
    basis[:, 0] = 1.0
    basis[1:, 1:] = step * np.tril(np.ones((m - 1, m - 1)))
    ginv = linalg.cho_solve(linalg.cho_factor(g), np.eye(m))
    ginv = 0.5 * (ginv + ginv.T)
    hess = basis.T @ ginv @ basis
    lip = 2.0 * linalg.eigvalsh(hess)[-1]
    lo = np.concatenate([[-np.inf], np.full(m - 1, xi)])
    hi = np.concatenate([[np.inf], np.full(m - 1, Xi)])

    def objective(theta):
        d = basis @ theta - target
        return float(d @ ginv @ d)

    theta = np.concatenate([[start[0]], np.diff(start) / step])
    theta = np.clip(theta, lo, hi)
    best, best_val = theta, objective(theta)
    # accelerated projected gradient with function-value restart
    y, prev, tk = theta.copy(), theta.copy(), 1.0
    for _ in range(iters):
        grad = 2.0 * basis.T @ (ginv @ (basis @ y - target))
        nxt = np.clip(y - grad / lip, lo, hi)
        val = objective(nxt)
        if val < best_val:
            best, best_val = nxt, val
        if val > objective(prev):
            y, tk = prev.copy(), 1.0
            continue
        tn = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * tk * tk))
        y = nxt + ((tk - 1.0) / tn) * (nxt - prev)
        prev, tk = nxt, tn
    return basis @ best


def project_monotone(phi: LinkFunction, bounds: MonotoneBounds, mode: str = "slope-clip",
                     qp_iters: int = 500) -> LinkFunction:
    """Push ``phi`` into the derivative box ``[xi, Xi]`` on the bounds grid.

    ``none`` returns ``phi``. ``slope-clip`` clamps the grid slopes, rebuilds
    the values anchored at the grid midpoint, and interpolates them with the
    kernel. ``qp`` then lowers the H-distance to ``phi`` by projected
    gradient over feasible grid values. A ``phi`` already feasible on the
    grid is returned unchanged.
    """
    if mode == "none":
        return phi
    if mode not in ("slope-clip", "qp"):
        raise ValueError(f"unknown projection mode {mode!r}")
    grid = bounds.grid(phi.kernel)
    step = grid[1] - grid[0]
    values = phi(grid)
    slopes = np.diff(values) / step
    tol = 1e-10
    if np.all(slopes >= bounds.xi - tol) and np.all(slopes <= bounds.Xi + tol):
        return phi
    clipped = _clip_slopes(values, step, bounds.xi, bounds.Xi)
    if mode == "qp":
        g = gram_matrix(phi.kernel, grid)
        clipped = _qp_refine(g, values, clipped, step, bounds.xi, bounds.Xi, qp_iters)
    return interpolate_on_grid(phi.kernel, grid, clipped, phi.offset)


def with_range(bounds: MonotoneBounds, lo: float, hi: float) -> MonotoneBounds:
    return replace(bounds, range=(float(lo), float(hi)))
