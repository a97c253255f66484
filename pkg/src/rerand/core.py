"""Shared domain types: covariate matrices, allocations, outcomes, RNG streams.

Everything here is immutable after construction. Operations are pure
functions of their inputs plus an explicitly passed random stream, so
concurrent use across independent streams is safe.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

# Columns whose sample sd falls below this (relative to their magnitude)
# are treated as constant: centered only and excluded from rank downstream.
_CONSTANT_SD_TOL = 1e-12


def _as_float_matrix(raw) -> np.ndarray:
    a = np.asarray(raw, dtype=float)
    if a.ndim != 2 or a.size == 0:
        raise ValueError("covariate matrix must be a nonempty 2-d array")
    if not np.all(np.isfinite(a)):
        raise ValueError("covariate matrix contains non-finite entries")
    return a


@dataclass(frozen=True)
class CovariateMatrix:
    """A fixed n x d design matrix with standardization metadata.

    `column_means` and `column_sds` are the pre-standardization moments,
    kept so reports can translate standardized effects back to raw units.
    `constant_columns` marks columns that had (near-)zero sample sd; they
    are centered to zero rather than scaled.
    """

    values: np.ndarray
    n: int
    d: int
    standardized: bool
    column_means: np.ndarray
    column_sds: np.ndarray
    constant_columns: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.n < 2 or self.d < 1:
            raise ValueError("need n >= 2 and d >= 1")
        if self.values.shape != (self.n, self.d):
            raise ValueError("shape metadata disagrees with values")
        if self.constant_columns is None:
            object.__setattr__(
                self, "constant_columns", np.zeros(self.d, dtype=bool)
            )


@dataclass(frozen=True)
class Allocation:
    """Binary assignment vector W (1 = treatment) with group bookkeeping."""

    assignment: np.ndarray
    n_treated: int
    n_control: int

    def __post_init__(self):
        w = np.asarray(self.assignment)
        if not np.all((w == 0) | (w == 1)):
            raise ValueError("assignment must be 0/1")
        if int(w.sum()) != self.n_treated or w.size != self.n:
            raise ValueError("group counts disagree with assignment")

    @property
    def n(self) -> int:
        return self.n_treated + self.n_control

    @property
    def equal_split(self) -> bool:
        return self.n_treated == self.n_control

    def complement(self) -> "Allocation":
        """The mirrored allocation 1 - W."""
        return Allocation(1 - self.assignment, self.n_control, self.n_treated)


def make_allocation(assignment) -> Allocation:
    w = np.asarray(assignment, dtype=np.int8)
    n_t = int(w.sum())
    return Allocation(w, n_t, w.size - n_t)


@dataclass(frozen=True)
class GroupMeans:
    treat_mean: np.ndarray
    control_mean: np.ndarray
    diff: np.ndarray


@dataclass(frozen=True)
class Outcome:
    """Observed outcomes y, one per unit."""

    y: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.y)):
            raise ValueError("outcomes must be finite")


def _mix64(x: int) -> int:
    # splitmix64 finalizer; good avalanche for deriving stream ids.
    x = (x + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return x ^ (x >> 31)


@dataclass(frozen=True)
class RngStream:
    """Deterministic, addressable randomness.

    Identical (seed, stream_id) pairs reproduce identical draw sequences
    across runs and platforms; distinct stream_ids derived from one master
    seed are statistically independent. Backed by the Philox counter
    generator, so streams are cheap to create and never overlap.
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(
            entropy=self.seed, spawn_key=(self.stream_id,)
        )
        return np.random.Generator(np.random.Philox(ss))

    def child(self, index: int) -> "RngStream":
        """Derive an independent substream addressed by `index`."""
        return RngStream(self.seed, _mix64(self.stream_id ^ _mix64(index)))


def as_generator(rng) -> np.random.Generator:
    """Coerce an RngStream or numpy Generator to a Generator."""
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError("rng must be an RngStream or a numpy Generator")


def half_split_matrix(n: int, count: int, gen: np.random.Generator) -> np.ndarray:
    """count x n matrix of independent equal-split 0/1 rows.

    Odd n puts the extra unit in treatment (ceil(n/2) ones per row).
    """
    base = np.zeros(n, dtype=np.int8)
    base[: (n + 1) // 2] = 1
    return gen.permuted(np.tile(base, (count, 1)), axis=1)


def standardize(raw) -> CovariateMatrix:
    """Center each column and scale it to unit sample variance.

    Uses the n-1 divisor so downstream covariance formulas line up with
    cov(X) = X'X/(n-1). Columns with (near-)zero sd are centered only and
    flagged in `constant_columns`.

    Args:
        raw: n x d array-like, n >= 2, finite entries.

    Returns:
        A standardized CovariateMatrix retaining the original column
        means and sds.
    """
    a = _as_float_matrix(raw)
    n, d = a.shape
    if n < 2:
        raise ValueError("need at least two rows to standardize")
    means = a.mean(axis=0)
    sds = a.std(axis=0, ddof=1)
    constant = sds <= _CONSTANT_SD_TOL * np.maximum(1.0, np.abs(means))
    safe = np.where(constant, 1.0, sds)
    vals = (a - means) / safe
    vals[:, constant] = 0.0
    return CovariateMatrix(
        values=vals,
        n=n,
        d=d,
        standardized=True,
        column_means=means,
        column_sds=sds,
        constant_columns=constant,
    )


def group_means(x: CovariateMatrix, w: Allocation) -> GroupMeans:
    """Treatment and control covariate means and their difference.

    Matches (2/n) X'W for the treated mean scale when the split is exact.
    """
    if w.n != x.n:
        raise ValueError("allocation length disagrees with covariate rows")
    if w.n_treated == 0 or w.n_control == 0:
        raise ValueError("both groups must be nonempty")
    mask = np.asarray(w.assignment, dtype=bool)
    t = x.values[mask].mean(axis=0)
    c = x.values[~mask].mean(axis=0)
    return GroupMeans(treat_mean=t, control_mean=c, diff=t - c)


def sate_estimator(y: Outcome, w: Allocation) -> float:
    """Mean difference of observed outcomes, treated minus control."""
    if y.y.size != w.n:
        raise ValueError("outcome length disagrees with allocation")
    if w.n_treated == 0 or w.n_control == 0:
        raise ValueError("both groups must be nonempty")
    mask = np.asarray(w.assignment, dtype=bool)
    return float(y.y[mask].mean() - y.y[~mask].mean())


def sigma_factor(n_treated: int, n_control: int) -> float:
    """Per-sigma^2 scale of cov(xbar_T - xbar_C) in the spectral basis.

    Equals C_n = 4/(n^2 - n) at an exact split; the general form is the
    finite-population (without-replacement) covariance scale.
    """
    n = n_treated + n_control
    return (1.0 / n_treated + 1.0 / n_control) / (n - 1)


def read_covariate_csv(path) -> tuple[list[str], np.ndarray]:
    """Read a covariate CSV: header row of names, numeric cells, no gaps."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ValueError(f"{path}: need a header row and at least one unit")
    names = rows[0]
    width = len(names)
    data = []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise ValueError(f"{path}: row {i} has {len(row)} cells, expected {width}")
        try:
            data.append([float(cell) for cell in row])
        except ValueError as exc:
            raise ValueError(f"{path}: non-numeric cell in row {i}: {exc}") from None
    a = np.asarray(data, dtype=float)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{path}: non-finite value")
    return names, a


def write_allocation_csv(path, w: Allocation) -> None:
    """Write an allocation as unit_index,assignment rows."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["unit_index", "assignment"])
        for i, a in enumerate(np.asarray(w.assignment, dtype=int)):
            out.writerow([i, int(a)])


def format_float(v: float) -> str:
    """Stable float formatting for deterministic file output."""
    if v != v:
        return "nan"
    if v in (math.inf, -math.inf):
        return "inf" if v > 0 else "-inf"
    return repr(float(v))
