"""Median-of-ratios size factors and the arcsinh transform."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, ValidationError

SCHEMES = ("auto", "strict", "positive")


@dataclass(frozen=True)
class SizeFactors:
    delta: np.ndarray
    scheme: str = "strict"

    def __post_init__(self):
        delta = np.asarray(self.delta, dtype=float)
        if delta.ndim != 1 or not np.all(np.isfinite(delta)) or np.any(delta <= 0):
            raise ValidationError("size factors must be finite and positive")
        object.__setattr__(self, "delta", delta)


@dataclass(frozen=True)
class TransformedMatrix:
    values: np.ndarray


def masked_median(x: np.ndarray, mask: np.ndarray, axis: int) -> np.ndarray:
    """Median of ``x`` over ``axis`` using only entries where ``mask`` is true.

    Returns NaN where no entry is selected.
    """
    x = np.moveaxis(x, axis, -1)
    mask = np.moveaxis(np.broadcast_to(mask, np.moveaxis(x, -1, axis).shape), axis, -1)
    s = np.where(mask, x, np.nan)
    s.sort(axis=-1)
    k = np.sum(mask, axis=-1, keepdims=True)
    lo = np.maximum((k - 1) // 2, 0)
    hi = np.maximum(k // 2, 0)
    a = np.take_along_axis(s, lo, axis=-1)
    b = np.take_along_axis(s, hi, axis=-1)
    med = np.where(k > 0, 0.5 * (a + b), np.nan)
    return med[..., 0]


def _log_geomeans(y: np.ndarray, positive_only: bool) -> np.ndarray:
    with np.errstate(divide="ignore"):
        logy = np.log(y)
    if positive_only:
        pos = y > 0
        n = pos.sum(axis=-1)
        total = np.where(pos, logy, 0.0).sum(axis=-1)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(n > 0, total / np.maximum(n, 1), -np.inf)
    return logy.mean(axis=-1)


def size_factors_batch(y: np.ndarray, scheme: str = "auto") -> tuple[np.ndarray, np.ndarray]:
    """Per-sample size factors for a stack of count matrices.

    ``y`` has shape ``(..., m, N)``. Returns ``(delta, used_fallback)`` with
    shapes ``(..., N)`` and ``(...,)``. ``delta`` is NaN for a sample that has
    no usable reference taxon.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown size-factor scheme {scheme!r}")
    y = np.asarray(y, dtype=float)
    batch_shape = y.shape[:-2]
    delta = np.full(batch_shape + (y.shape[-1],), np.nan)
    fallback = np.zeros(batch_shape, dtype=bool)

    if scheme in ("auto", "strict"):
        lg = _log_geomeans(y, positive_only=False)
        ref = np.isfinite(lg)
        has_ref = ref.any(axis=-1)
        with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
            ratio = y / np.exp(lg)[..., None]
        strict = masked_median(ratio, ref[..., None], axis=-2)
        delta = np.where(has_ref[..., None], strict, delta)
        fallback = ~has_ref
        if scheme == "strict":
            return delta, np.zeros(batch_shape, dtype=bool)
    else:
        fallback = np.ones(batch_shape, dtype=bool)

    if np.any(fallback):
        lg = _log_geomeans(y, positive_only=True)
        with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
            ratio = y / np.exp(lg)[..., None]
        pos = y > 0
        loose = masked_median(ratio, pos, axis=-2)
        delta = np.where(fallback[..., None], loose, delta)
    return delta, fallback


def size_factors(counts, scheme: str = "auto") -> SizeFactors:
    """Median-of-ratios size factors, one per sample.

    Parameters
    ----------
    counts : CountMatrix or array of shape (m, N)
    scheme : {"auto", "strict", "positive"}
        ``strict`` uses only taxa with a positive count in every sample.
        ``positive`` takes geometric means over positive entries and, per
        sample, the median over taxa observed in that sample. ``auto`` uses
        ``strict`` unless no taxon qualifies.
    """
    y = np.asarray(getattr(counts, "counts", counts), dtype=float)
    delta, fallback = size_factors_batch(y, scheme)
    bad = ~np.isfinite(delta) | (delta <= 0)
    if np.any(bad):
        if scheme == "strict" and not np.any(np.all(y > 0, axis=1)):
            raise NumericalError("no reference taxa: every taxon has a zero count in some sample")
        raise NumericalError(
            f"size factor undefined for {int(bad.sum())} sample(s) with no positive counts"
        )
    return SizeFactors(delta, "positive" if bool(fallback) else "strict")


def transform(counts, delta) -> TransformedMatrix:
    """Elementwise ``arcsinh(count / delta)``."""
    y = np.asarray(getattr(counts, "counts", counts), dtype=float)
    d = np.asarray(getattr(delta, "delta", delta), dtype=float)
    return TransformedMatrix(np.arcsinh(y / d))
