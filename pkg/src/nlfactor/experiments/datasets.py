"""Ratings ingestion, train/validation splits and RMSE."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import List

import numpy as np

from ..model import FactorMatrix, ObservationSet, sample_inner_products

__all__ = [
    "FORMATS",
    "RatingsDataset",
    "SplitSpec",
    "load_ratings",
    "rmse",
    "split",
]

FORMATS = ("movielens-csv", "jester-dense")

JESTER_MISSING = 99.0
_RANGES = {"movielens-csv": (0.5, 5.0), "jester-dense": (-10.0, 10.0)}


@dataclass(frozen=True)
class RatingsDataset:
    """Reindexed ratings with one value per ``(user, item)`` cell.

    ``user_ids[k]`` and ``item_ids[k]`` give the original id of dense index
    ``k``. Ratings are sorted by user, then item.
    """

    user_ids: np.ndarray
    item_ids: np.ndarray
    users: np.ndarray
    items: np.ndarray
    values: np.ndarray
    dropped_users: List = field(default_factory=list)

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @property
    def ratings(self):
        return list(zip(self.users.tolist(), self.items.tolist(), self.values.tolist()))

    def __len__(self):
        return len(self.values)

    def observations(self, index=None) -> ObservationSet:
        if index is None:
            index = slice(None)
        return ObservationSet(self.n_users, self.n_items, self.users[index],
                              self.items[index], self.values[index])

    @classmethod
    def from_raw(cls, users, items, values, dropped=()) -> "RatingsDataset":
        """Reindex raw ids; a repeated ``(user, item)`` keeps its last value."""
        users = np.asarray(users)
        items = np.asarray(items)
        values = np.asarray(values, dtype=float)
        if len(values) == 0:
            raise ValueError("empty dataset")
        user_ids, u = np.unique(users, return_inverse=True)
        item_ids, i = np.unique(items, return_inverse=True)
        key = u.astype(np.int64) * len(item_ids) + i
        # first hit in the reversed order is the last write
        _, first = np.unique(key[::-1], return_index=True)
        keep = np.sort(len(key) - 1 - first)
        order = keep[np.lexsort((i[keep], u[keep]))]
        return cls(user_ids, item_ids, u[order].astype(np.int64), i[order].astype(np.int64),
                   values[order], list(dropped))


def _number(text, path, lineno, what):
    try:
        v = float(text)
    except ValueError:
        raise ValueError(f"{path}:{lineno}: malformed {what} {text!r}") from None
    if not math.isfinite(v):
        raise ValueError(f"{path}:{lineno}: non-finite {what}")
    return v


def _read_movielens(path):
    lo, hi = _RANGES["movielens-csv"]
    users, items, values = [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty dataset")
        for row in reader:
            lineno = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 fields "
                                 f"userId,movieId,rating,timestamp, got {len(row)}")
            try:
                u, m = int(row[0]), int(row[1])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: malformed id") from None
            v = _number(row[2], path, lineno, "rating")
            if not lo <= v <= hi:
                raise ValueError(f"{path}:{lineno}: rating {v} outside [{lo}, {hi}]")
            users.append(u)
            items.append(m)
            values.append(v)
    if not values:
        raise ValueError(f"{path}: empty dataset")
    return users, items, values, []


def _read_jester(path):
    lo, hi = _RANGES["jester-dense"]
    users, items, values, dropped = [], [], [], []
    width = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            while row and not row[-1].strip():
                row = row[:-1]
            if not row:
                continue
            if len(row) < 2:
                raise ValueError(f"{path}:{lineno}: expected a count and ratings")
            if width is None:
                width = len(row) - 1
            elif len(row) - 1 != width:
                raise ValueError(f"{path}:{lineno}: expected {width} ratings, got {len(row) - 1}")
            _number(row[0], path, lineno, "rating count")
            vals = np.array([_number(c, path, lineno, "rating") for c in row[1:]])
            seen = vals != JESTER_MISSING
            bad = seen & ((vals < lo) | (vals > hi))
            if np.any(bad):
                raise ValueError(f"{path}:{lineno}: rating {vals[bad][0]} outside [{lo}, {hi}]")
            if not np.any(seen):
                dropped.append(lineno)
                continue
            cols = np.flatnonzero(seen)
            users.extend([lineno] * len(cols))
            items.extend((cols + 1).tolist())
            values.extend(vals[seen].tolist())
    if not values:
        raise ValueError(f"{path}: empty dataset")
    return users, items, values, dropped


def load_ratings(path, format: str = "movielens-csv") -> RatingsDataset:
    """Read a ratings file.

    ``movielens-csv`` is a header line followed by
    ``userId,movieId,rating,timestamp`` rows. ``jester-dense`` has one row per
    user: a rating count followed by one column per joke, with ``99`` for a
    missing rating. Users are then identified by their 1-based line number;
    users without any rating are dropped and listed in ``dropped_users``.
    Values keep their native scale.
    """
    if format == "movielens-csv":
        raw = _read_movielens(path)
    elif format == "jester-dense":
        raw = _read_jester(path)
    else:
        raise ValueError(f"format must be one of {FORMATS}")
    return RatingsDataset.from_raw(*raw)


@dataclass(frozen=True)
class SplitSpec:
    holdout_fraction: float = 0.1
    strategy: str = "row-stratified"
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.holdout_fraction < 1:
            raise ValueError("holdout_fraction must lie in (0, 1)")
        if self.strategy not in ("row-stratified", "uniform"):
            raise ValueError("strategy must be 'row-stratified' or 'uniform'")


def split(ds: RatingsDataset, spec: SplitSpec):
    """``(train, val)`` observation sets.

    ``row-stratified`` moves ``floor(f * c)`` of each user's ``c`` ratings to
    validation, so every user keeps at least one training rating. ``uniform``
    moves ``floor(f * total)`` ratings chosen without regard to users.
    """
    rng = np.random.default_rng(spec.seed)
    m = len(ds)
    key = rng.random(m)
    val = np.zeros(m, dtype=bool)
    if spec.strategy == "uniform":
        val[np.argsort(key, kind="stable")[: int(math.floor(spec.holdout_fraction * m))]] = True
    else:
        order = np.lexsort((key, ds.users))
        counts = np.bincount(ds.users, minlength=ds.n_users)
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        take = np.floor(spec.holdout_fraction * counts + 1e-12).astype(np.int64)
        take = np.minimum(take, np.maximum(counts - 1, 0))
        rank = np.arange(m) - np.repeat(starts, counts)
        val[order] = rank < np.repeat(take, counts)
    if not np.any(val):
        raise ValueError(f"holdout_fraction {spec.holdout_fraction} leaves the validation set "
                         f"empty for {m} ratings")
    return ds.observations(~val), ds.observations(val)


def rmse(obs: ObservationSet, z: FactorMatrix, phi) -> float:
    """Root mean squared error of ``phi(u_i . v_t)`` against ``y``.

    The sum uses ``math.fsum`` so the result does not depend on sample order.
    """
    e = obs.y - phi(sample_inner_products(z, obs))
    return math.sqrt(math.fsum((e * e).tolist()) / obs.M)
