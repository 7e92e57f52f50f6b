"""MovieLens ``ratings.dat`` parsing, the normalised user-item matrix and user splits."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from ._npz import save_npz

MATRIX_FORMAT_VERSION = 1
MAX_RATING = 5.0


class RatingsParseError(ValueError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class EmptyDatasetError(ValueError):
    pass


@dataclass(frozen=True)
class RatingRecord:
    user_id: int
    movie_id: int
    rating: float
    timestamp: int


def parse_ratings(lines: Iterable[str]) -> list:
    """Parse ``user::movie::rating::timestamp`` lines; blank lines are skipped."""
    records = []
    for line_no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        fields = line.split("::")
        if len(fields) != 4:
            raise RatingsParseError(line_no, f"expected 4 '::'-separated fields, got {len(fields)}")
        try:
            user, movie = int(fields[0]), int(fields[1])
            rating = float(fields[2])
            ts = int(fields[3])
        except ValueError as exc:
            raise RatingsParseError(line_no, str(exc)) from None
        if user <= 0 or movie <= 0:
            raise RatingsParseError(line_no, "ids must be positive")
        if not 0.0 <= rating <= MAX_RATING:
            raise ValueError(f"line {line_no}: rating {rating} outside [0, 5]")
        if rating * 2 != round(rating * 2):
            raise ValueError(f"line {line_no}: rating {rating} is not a half step")
        records.append(RatingRecord(user, movie, rating, ts))
    return records


def read_ratings(path) -> list:
    with open(path, encoding="latin-1") as fh:
        return parse_ratings(fh)


@dataclass
class RatingsMatrix:
    values: np.ndarray  # (users, movies), entries in [0, 1], 0 = unrated
    user_ids: np.ndarray  # row -> user id
    movie_ids: np.ndarray  # column -> movie id

    @property
    def num_users(self) -> int:
        return self.values.shape[0]

    @property
    def num_movies(self) -> int:
        return self.values.shape[1]

    def rows(self, idx) -> "RatingsMatrix":
        idx = np.asarray(idx)
        return RatingsMatrix(self.values[idx], self.user_ids[idx], self.movie_ids)

    def save(self, path):
        save_npz(
            path,
            format_version=np.int64(MATRIX_FORMAT_VERSION),
            shape=np.asarray(self.values.shape, dtype=np.int64),
            user_ids=self.user_ids,
            movie_ids=self.movie_ids,
            values=np.ascontiguousarray(self.values),
        )

    @classmethod
    def load(cls, path) -> "RatingsMatrix":
        with np.load(path) as f:
            if int(f["format_version"]) != MATRIX_FORMAT_VERSION:
                raise ValueError(f"{path}: unsupported matrix format {int(f['format_version'])}")
            values = f["values"]
            if tuple(f["shape"]) != values.shape:
                raise ValueError(f"{path}: shape header does not match values")
            return cls(values, f["user_ids"], f["movie_ids"])


def build_matrix(records, min_ratings: int = 20) -> RatingsMatrix:
    """Dense users x movies matrix of rating / 5, keeping users with enough ratings.

    Columns cover every movie present in ``records``, even if only dropped
    users rated it.  A repeated (user, movie) pair keeps its last rating.
    """
    if not records:
        raise EmptyDatasetError("no ratings to build a matrix from")
    users = np.fromiter((r.user_id for r in records), dtype=np.int64, count=len(records))
    movies = np.fromiter((r.movie_id for r in records), dtype=np.int64, count=len(records))
    ratings = np.fromiter((r.rating for r in records), dtype=float, count=len(records))
    movie_ids, col = np.unique(movies, return_inverse=True)
    user_ids, row = np.unique(users, return_inverse=True)
    values = np.zeros((len(user_ids), len(movie_ids)))
    values[row, col] = ratings / MAX_RATING
    keep = np.count_nonzero(values, axis=1) >= min_ratings
    if not keep.any():
        raise EmptyDatasetError(f"no user has at least {min_ratings} ratings")
    return RatingsMatrix(values[keep], user_ids[keep], movie_ids)


@dataclass
class SplitSet:
    train: RatingsMatrix
    validation: RatingsMatrix
    test: RatingsMatrix
    seed: int
    ratio: float = 0.33

    def manifest(self) -> dict:
        return {
            "seed": self.seed,
            "ratio": self.ratio,
            "pool_assignment": "smaller share of the held-out pool is test, remainder validation",
            "rounding": "round-half-to-even",
            "train": self.train.user_ids.tolist(),
            "validation": self.validation.user_ids.tolist(),
            "test": self.test.user_ids.tolist(),
        }

    def save_manifest(self, path):
        Path(path).write_text(json.dumps(self.manifest()) + "\n")

    @classmethod
    def from_manifest(cls, matrix: RatingsMatrix, manifest: dict) -> "SplitSet":
        pos = {int(u): i for i, u in enumerate(matrix.user_ids)}
        parts = [matrix.rows([pos[u] for u in manifest[name]]) for name in ("train", "validation", "test")]
        return cls(*parts, seed=manifest["seed"], ratio=manifest["ratio"])


def split_sizes(num_users: int, ratio: float = 0.33) -> tuple:
    """``(train, validation, test)`` sizes for the two-stage held-out split."""
    pool = int(round(ratio * num_users))
    test = int(round(ratio * pool))
    return num_users - pool, pool - test, test


def split(matrix: RatingsMatrix, ratio: float = 0.33, seed: int = 0) -> SplitSet:
    """Shuffle users, hold out ``ratio`` of them, then ``ratio`` of the held-out as test."""
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio {ratio} must lie in (0, 1)")
    if matrix.num_users < 3:
        raise ValueError("need at least 3 users to split")
    n_train, n_val, _ = split_sizes(matrix.num_users, ratio)
    order = np.random.default_rng(seed).permutation(matrix.num_users)
    train = np.sort(order[:n_train])
    val = np.sort(order[n_train:n_train + n_val])
    test = np.sort(order[n_train + n_val:])
    return SplitSet(matrix.rows(train), matrix.rows(val), matrix.rows(test), seed=seed, ratio=ratio)


def synthetic_ratings(
    num_users: int = 200,
    num_movies: int = 300,
    groups: int = 4,
    density: float = 0.15,
    seed: int = 0,
) -> list:
    """MovieLens-style ``::`` lines with planted taste groups, for demos and tests.

    Each group favours its own block of movies; activity varies per user.
    """
    if num_movies < 20:
        raise ValueError("need at least 20 movies so every user can reach 20 ratings")
    rng = np.random.default_rng(seed)
    group = rng.integers(0, groups, size=num_users)
    block = np.arange(num_movies) % groups
    lines = []
    for u in range(num_users):
        own = block == group[u]
        p = np.where(own, min(1.0, 2.5 * density), density * 0.4)
        p = p * rng.uniform(0.7, 1.3)
        rated = np.flatnonzero(rng.random(num_movies) < p)
        if len(rated) < 20:
            # top up with unrated movies, own block first
            spare = np.setdiff1d(np.arange(num_movies), rated)
            spare = np.concatenate([rng.permutation(spare[own[spare]]), rng.permutation(spare[~own[spare]])])
            rated = np.union1d(rated, spare[: 20 - len(rated)])
        for m in rated:
            mean = 4.3 if own[m] else 2.2
            r = float(np.clip(np.round(rng.normal(mean, 0.8) * 2) / 2, 0.5, 5.0))
            lines.append(f"{u + 1}::{m + 1}::{r:g}::{978300000 + int(rng.integers(0, 10**6))}")
    return lines
