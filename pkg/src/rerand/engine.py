"""Allocation generation: complete randomization and the rejection loop.

Candidate draws are evaluated in fixed-size batches (one matrix product
per batch) but acceptance is decided in draw order, so the returned
allocation is exactly the one a draw-at-a-time loop would accept.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass

import numpy as np

from .balance import BalanceCriterion, batch_distances
from .core import (
    Allocation,
    CovariateMatrix,
    RngStream,
    as_generator,
    half_split_matrix,
)
from .spectral import SpectralBasis, decompose

# Rejection batches start small (most criteria accept within a few dozen
# draws at the default p_a) and grow geometrically toward hard cases.
_BATCH_START = 16
_BATCH_CAP = 1024

DEFAULT_MAX_DRAWS = 10**6


@dataclass(frozen=True)
class RerandomizationResult:
    """Outcome of one rejection-sampling run.

    criterion_value is the final distance (None for complete
    randomization). When max_draws is exhausted the best-so-far
    allocation is returned with accepted=False; exhaustion is a soft
    failure, not an error.
    """

    allocation: Allocation
    criterion_value: float | None
    draws_attempted: int
    accepted: bool
    elapsed: float


def complete_randomization(n: int, rng, near_equal: bool = False) -> Allocation:
    """Uniform draw over all half-split assignments of n units.

    Odd n needs near_equal=True and assigns ceil(n/2) units to treatment.
    """
    if n < 2:
        raise ValueError("need at least two units")
    if n % 2 == 1:
        if not near_equal:
            raise ValueError("odd n requires near_equal=True")
        warnings.warn(
            "odd n: using a near-equal split, outside the exact-split theory",
            UserWarning,
            stacklevel=2,
        )
    gen = as_generator(rng)
    row = half_split_matrix(n, 1, gen)[0]
    n_t = (n + 1) // 2
    return Allocation(row, n_t, n - n_t)


def _row_allocation(row: np.ndarray, n: int) -> Allocation:
    n_t = (n + 1) // 2
    return Allocation(row, n_t, n - n_t)


def rerandomize(
    x: CovariateMatrix,
    criterion: BalanceCriterion,
    rng,
    max_draws: int = DEFAULT_MAX_DRAWS,
    basis: SpectralBasis | None = None,
    near_equal: bool = False,
) -> RerandomizationResult:
    """Draw complete randomizations until the criterion accepts one.

    Returns the first accepted allocation. If max_draws is exhausted the
    allocation with the smallest criterion value seen is returned with
    accepted=False. A degenerate criterion (constant distance) skips the
    loop entirely and behaves like complete randomization.

    Args:
        x: standardized covariates.
        criterion: calibrated acceptance rule.
        rng: RngStream or numpy Generator driving the draws.
        max_draws: cap on candidate draws, >= 1.
        basis: optional precomputed spectral basis of x.
        near_equal: allow odd n (ceil(n/2) treated).
    """
    if max_draws < 1:
        raise ValueError("max_draws must be at least 1")
    if criterion.scheme != "cr" and criterion.threshold is None:
        raise ValueError("criterion has no calibrated threshold")
    n = x.n
    if n % 2 == 1 and not near_equal:
        raise ValueError("odd n requires near_equal=True")
    gen = as_generator(rng)

    start = time.perf_counter()
    if criterion.scheme == "cr":
        w = complete_randomization(n, gen, near_equal=near_equal)
        return RerandomizationResult(w, None, 1, True, time.perf_counter() - start)

    if basis is None:
        basis = decompose(x)

    if criterion.degenerate:
        row = half_split_matrix(n, 1, gen)[0]
        value = float(batch_distances(criterion, basis, row[None, :])[0])
        w = _row_allocation(row, n)
        accepted = value <= criterion.threshold
        return RerandomizationResult(
            w, value, 1, accepted, time.perf_counter() - start
        )

    best_value = np.inf
    best_row = None
    done = 0
    batch = _BATCH_START
    while done < max_draws:
        count = min(batch, max_draws - done)
        rows = half_split_matrix(n, count, gen)
        dists = batch_distances(criterion, basis, rows)
        hits = np.nonzero(dists <= criterion.threshold)[0]
        if hits.size:
            first = int(hits[0])
            return RerandomizationResult(
                _row_allocation(rows[first], n),
                float(dists[first]),
                done + first + 1,
                True,
                time.perf_counter() - start,
            )
        local_best = int(np.argmin(dists))
        if dists[local_best] < best_value:
            best_value = float(dists[local_best])
            best_row = rows[local_best].copy()
        done += count
        batch = min(batch * 4, _BATCH_CAP)

    return RerandomizationResult(
        _row_allocation(best_row, n),
        best_value,
        max_draws,
        False,
        time.perf_counter() - start,
    )


def accepted_sample(
    x: CovariateMatrix,
    criterion: BalanceCriterion,
    rng: RngStream,
    n_accepted: int,
    max_draws: int = DEFAULT_MAX_DRAWS,
    basis: SpectralBasis | None = None,
) -> list[Allocation]:
    """n_accepted accepted allocations from independent substreams.

    Substream i is rng.child(i), so any prefix of the sample is
    reproducible independently of n_accepted. Raises if any substream
    exhausts max_draws without an acceptance.
    """
    if not isinstance(rng, RngStream):
        raise TypeError("accepted_sample needs an RngStream to derive substreams")
    if n_accepted < 0:
        raise ValueError("n_accepted must be nonnegative")
    if basis is None and criterion.scheme != "cr":
        basis = decompose(x)
    out = []
    for i in range(n_accepted):
        res = rerandomize(x, criterion, rng.child(i), max_draws, basis=basis)
        if not res.accepted:
            raise RuntimeError(
                f"substream {i} exhausted {max_draws} draws without acceptance"
            )
        out.append(res.allocation)
    return out
