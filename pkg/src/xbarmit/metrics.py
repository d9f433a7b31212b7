"""Bit accuracy of analog VMM outputs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_MAX_BITS = 24.0


@dataclass(frozen=True)
class AccuracyReport:
    """Per-column bit accuracy over a batch of test vectors.

    Columns whose ideal outputs never vary (zero range) carry ``nan`` bits
    and are listed in ``excluded_columns``; they do not enter the aggregates.
    """

    bits: np.ndarray
    mean_bits: float
    worst_bits: float
    output_range: np.ndarray
    avg_error: np.ndarray
    n_test_vectors: int
    excluded_columns: tuple[int, ...] = ()


def bit_accuracy(y_ideal, y_actual, max_bits: float = DEFAULT_MAX_BITS) -> AccuracyReport:
    """``log2(range / mean|error| + 1)`` per column, capped at ``max_bits``.

    ``range`` is the spread of the ideal outputs of each column across the
    ``T`` test vectors (rows of ``y_ideal``).
    """
    y_ideal = np.asarray(y_ideal, dtype=float)
    y_actual = np.asarray(y_actual, dtype=float)
    if y_ideal.shape != y_actual.shape:
        raise ValueError(f"shape mismatch: {y_ideal.shape} vs {y_actual.shape}")
    if y_ideal.ndim != 2 or y_ideal.shape[0] < 2:
        raise ValueError("need a (T, cols) batch with T >= 2")
    rng = y_ideal.max(axis=0) - y_ideal.min(axis=0)
    err = np.abs(y_actual - y_ideal).mean(axis=0)
    valid = rng > 0
    if not valid.any():
        raise ValueError("every column has zero output range")
    capped = err <= rng * 2.0 ** (-max_bits)
    with np.errstate(divide="ignore", invalid="ignore"):
        bits = np.log2(rng / err + 1.0)
    bits = np.where(capped, max_bits, np.minimum(bits, max_bits))
    bits = np.where(valid, bits, np.nan)
    good = bits[valid]
    return AccuracyReport(
        bits=bits,
        mean_bits=float(good.mean()),
        worst_bits=float(good.min()),
        output_range=rng,
        avg_error=err,
        n_test_vectors=y_ideal.shape[0],
        excluded_columns=tuple(int(j) for j in np.nonzero(~valid)[0]),
    )
