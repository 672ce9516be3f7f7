"""Observation containers, ground truth and the synthetic data generator.

Observations are triples ``(i, t, y)`` with ``y = phi(u_i . v_t) + noise``.
Factors and loadings are stacked into a single ``(n + T) x r`` matrix ``Z``
whose first ``n`` rows hold the loadings and the last ``T`` rows the factors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "AnalyticLink",
    "FactorMatrix",
    "GroundTruth",
    "ObservationSet",
    "SyntheticConfig",
    "analytic_link",
    "generate_synthetic",
    "incoherence",
    "sample_inner_product",
    "sample_inner_products",
    "zero_filled_matrix",
]


@dataclass(frozen=True)
class ObservationSet:
    """Observed entries of an ``n x T`` matrix, in a fixed order.

    Duplicate ``(i, t)`` pairs are allowed and kept as separate samples.
    """

    n: int
    T: int
    rows: np.ndarray
    cols: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        rows = np.ascontiguousarray(self.rows, dtype=np.int64)
        cols = np.ascontiguousarray(self.cols, dtype=np.int64)
        y = np.ascontiguousarray(self.y, dtype=np.float64)
        if self.n < 1 or self.T < 1:
            raise ValueError("n and T must be positive")
        if not (rows.ndim == cols.ndim == y.ndim == 1):
            raise ValueError("rows, cols and y must be 1-d")
        if not (len(rows) == len(cols) == len(y)):
            raise ValueError("rows, cols and y must have equal length")
        if len(y) == 0:
            raise ValueError("an ObservationSet needs at least one sample")
        if rows.min() < 0 or rows.max() >= self.n:
            raise ValueError("row index out of range [0, n)")
        if cols.min() < 0 or cols.max() >= self.T:
            raise ValueError("column index out of range [0, T)")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "y", y)

    @property
    def M(self) -> int:
        return len(self.y)

    @classmethod
    def from_triples(cls, n, T, samples):
        samples = list(samples)
        if not samples:
            raise ValueError("an ObservationSet needs at least one sample")
        i, t, y = zip(*samples)
        return cls(n, T, np.array(i), np.array(t), np.array(y, dtype=float))

    def triples(self):
        return list(zip(self.rows.tolist(), self.cols.tolist(), self.y.tolist()))

    def subset(self, index) -> "ObservationSet":
        index = np.asarray(index)
        return ObservationSet(self.n, self.T, self.rows[index], self.cols[index], self.y[index])


@dataclass(frozen=True)
class FactorMatrix:
    """Stacked loading/factor matrix ``Z = [U; V]`` of shape ``(n + T, r)``."""

    values: np.ndarray
    n: int

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] < 1:
            raise ValueError("Z must be a 2-d array with at least one column")
        if not 0 < self.n < values.shape[0]:
            raise ValueError("n must split Z into two non-empty blocks")
        if not np.all(np.isfinite(values)):
            raise ValueError("Z has non-finite entries")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def T(self) -> int:
        return self.values.shape[0] - self.n

    @property
    def r(self) -> int:
        return self.values.shape[1]

    @property
    def u(self) -> np.ndarray:
        return self.values[: self.n]

    @property
    def v(self) -> np.ndarray:
        return self.values[self.n:]

    def product(self) -> np.ndarray:
        """The ``n x T`` matrix ``X = U V^T``."""
        return self.u @ self.v.T

    @classmethod
    def from_blocks(cls, u, v) -> "FactorMatrix":
        u = np.atleast_2d(np.asarray(u, dtype=float))
        v = np.atleast_2d(np.asarray(v, dtype=float))
        return cls(np.vstack([u, v]), u.shape[0])


class AnalyticLink:
    """A closed-form link function with its derivative.

    Used as ground truth and as a frozen link in known-link runs. It has no
    RKHS coordinates, so it carries no H-norm.
    """

    def __init__(self, name: str, f: Callable, df: Callable):
        self.name = name
        self._f = f
        self._df = df

    def __call__(self, x):
        return self._f(np.asarray(x, dtype=float))

    def deriv(self, x):
        return self._df(np.asarray(x, dtype=float))

    def value_and_deriv(self, x):
        return self(x), self.deriv(x)

    def __repr__(self):
        return f"AnalyticLink({self.name!r})"


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _sigmoid_prime(x):
    s = _sigmoid(x)
    return s * (1.0 - s)


# slopes on either side of the kink at zero
_PIECEWISE_LO, _PIECEWISE_HI = 1.0, 0.25

_LINKS = {
    "identity": (lambda x: x.copy(), lambda x: np.ones_like(x)),
    "sigmoid": (_sigmoid, _sigmoid_prime),
    "tanh": (np.tanh, lambda x: 1.0 - np.tanh(x) ** 2),
    "piecewise": (
        lambda x: np.where(x < 0, _PIECEWISE_LO * x, _PIECEWISE_HI * x),
        lambda x: np.where(x < 0, _PIECEWISE_LO, _PIECEWISE_HI) + 0.0 * x,
    ),
}


def analytic_link(name: str) -> AnalyticLink:
    """Look up a named link: identity, sigmoid, tanh or piecewise."""
    try:
        f, df = _LINKS[name]
    except KeyError:
        raise ValueError(f"unknown link {name!r}; choose from {sorted(_LINKS)}") from None
    return AnalyticLink(name, f, df)


def incoherence(z: FactorMatrix) -> float:
    """``(n + T) * max_row_norm^2 / ||Z||_F^2``."""
    a = z.values
    fro2 = float(np.sum(a * a))
    if fro2 == 0.0:
        raise ValueError("incoherence undefined for Z = 0")
    return a.shape[0] * float(np.max(np.sum(a * a, axis=1))) / fro2


@dataclass(frozen=True)
class GroundTruth:
    z_star: FactorMatrix
    phi_star: object
    sigma: float
    spectrum: np.ndarray

    @property
    def kappa(self) -> float:
        s = self.spectrum
        return float(s[0] / s[-1])

    @property
    def mu(self) -> float:
        return incoherence(self.z_star)

    @property
    def noiseless(self) -> bool:
        return self.sigma == 0


_SAMPLING = ("with-replacement-uniform", "without-replacement-uniform", "complete")
_NOISE = ("none", "gaussian", "subgaussian-bounded")


@dataclass(frozen=True)
class SyntheticConfig:
    """Parameters of a synthetic instance.

    ``factor_scale`` lists the singular values of ``X* = U* S V*^T``; by
    default all equal to ``sqrt(n T / r)`` so that entries of ``X*`` have
    roughly unit variance.
    """

    n: int
    T: int
    r: int
    M: Optional[int] = None
    sampling: str = "with-replacement-uniform"
    noise: str = "none"
    sigma: float = 0.0
    link: str = "identity"
    factor_scale: Optional[Sequence[float]] = None
    seed: int = 0

    def __post_init__(self):
        if min(self.n, self.T, self.r) < 1:
            raise ValueError("n, T and r must be positive")
        if self.r > min(self.n, self.T):
            raise ValueError("r cannot exceed min(n, T)")
        if self.sampling not in _SAMPLING:
            raise ValueError(f"sampling must be one of {_SAMPLING}")
        if self.noise not in _NOISE:
            raise ValueError(f"noise must be one of {_NOISE}")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.n * self.T > 2**40:
            raise OverflowError("n * T too large")
        if self.sampling == "complete":
            if self.M is not None and self.M != self.n * self.T:
                raise ValueError("complete sampling requires M = n * T")
        else:
            if self.M is None or self.M < 1:
                raise ValueError("random sampling needs M >= 1")
            if self.sampling == "without-replacement-uniform" and self.M > self.n * self.T:
                raise ValueError("M > n * T is impossible without replacement")
        if self.factor_scale is not None and len(self.factor_scale) != self.r:
            raise ValueError("factor_scale needs one value per rank")

    @property
    def sample_count(self) -> int:
        return self.n * self.T if self.sampling == "complete" else int(self.M)

    @property
    def noise_sigma(self) -> float:
        return 0.0 if self.noise == "none" else float(self.sigma)

    def spectrum(self) -> np.ndarray:
        if self.factor_scale is None:
            return np.full(self.r, np.sqrt(self.n * self.T / self.r))
        s = np.sort(np.asarray(self.factor_scale, dtype=float))[::-1]
        if s[-1] <= 0:
            raise ValueError("factor_scale entries must be positive")
        return s


def _orthonormal(rng, rows, cols):
    q, rr = np.linalg.qr(rng.standard_normal((rows, cols)))
    return q * np.sign(np.diag(rr))


def generate_synthetic(cfg: SyntheticConfig):
    """Draw ``(ObservationSet, GroundTruth)`` from ``cfg``; fully seeded."""
    rng = np.random.default_rng(cfg.seed)
    s = cfg.spectrum()
    root = np.sqrt(s)
    u = _orthonormal(rng, cfg.n, cfg.r) * root
    v = _orthonormal(rng, cfg.T, cfg.r) * root
    z_star = FactorMatrix.from_blocks(u, v)

    if cfg.sampling == "complete":
        rows, cols = np.divmod(np.arange(cfg.n * cfg.T), cfg.T)
    elif cfg.sampling == "with-replacement-uniform":
        rows = rng.integers(0, cfg.n, size=cfg.M)
        cols = rng.integers(0, cfg.T, size=cfg.M)
    else:
        flat = rng.choice(cfg.n * cfg.T, size=cfg.M, replace=False)
        rows, cols = np.divmod(flat, cfg.T)

    phi = analytic_link(cfg.link)
    x = _row_dots(z_star.u[rows], z_star.v[cols])
    y = phi(x)
    sigma = cfg.noise_sigma
    if cfg.noise == "gaussian":
        y = y + sigma * rng.standard_normal(len(y))
    elif cfg.noise == "subgaussian-bounded":
        half = sigma * np.sqrt(3.0)
        y = y + rng.uniform(-half, half, size=len(y))

    obs = ObservationSet(cfg.n, cfg.T, rows, cols, y)
    return obs, GroundTruth(z_star, phi, sigma, s)


def _row_dots(a, b):
    # column-by-column accumulation: the rounding of each dot product does
    # not depend on how many rows are processed together
    out = a[:, 0] * b[:, 0]
    for j in range(1, a.shape[1]):
        out += a[:, j] * b[:, j]
    return out


def sample_inner_product(z: FactorMatrix, i: int, t: int) -> float:
    """``<A_k, Z Z^T>`` for the cell ``(i, t)``: loading row i dot factor row t."""
    if not (0 <= i < z.n and 0 <= t < z.T):
        raise IndexError(f"cell ({i}, {t}) outside {z.n} x {z.T}")
    a = z.values
    return float(_row_dots(a[[i]], a[[z.n + t]])[0])


def sample_inner_products(z: FactorMatrix, obs: ObservationSet) -> np.ndarray:
    """Vectorised :func:`sample_inner_product` over every sample of ``obs``."""
    a = z.values
    return _row_dots(a[obs.rows], a[z.n + obs.cols])


def zero_filled_matrix(obs: ObservationSet, rescale: Optional[bool] = None) -> np.ndarray:
    """Dense ``n x T`` matrix of observed values, zeros elsewhere.

    Duplicated cells are averaged. With ``rescale`` the observed cells are
    multiplied by ``nT / M``; the default rescales unless every cell is
    observed.
    """
    n, T = obs.n, obs.T
    flat = obs.rows * T + obs.cols
    sums = np.bincount(flat, weights=obs.y, minlength=n * T)
    counts = np.bincount(flat, minlength=n * T)
    seen = counts > 0
    out = np.zeros(n * T)
    out[seen] = sums[seen] / counts[seen]
    if rescale is None:
        rescale = not bool(np.all(seen))
    if rescale:
        out *= n * T / obs.M
    return out.reshape(n, T)
