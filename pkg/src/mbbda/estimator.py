"""Per-taxon group effects on the arcsinh scale, empirical-Bayes shrinkage, pivots.

With a working-independence correlation and a response that already lives on
the link scale, the estimating equations for the design ``(1, group)`` are
the ordinary least-squares normal equations, so the group coefficient is the
difference of the two group means of the transformed abundances. All of the
work below is written for a stack of ``B`` count matrices so that bootstrap
replicates can be fitted together.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np

from .errors import DegenerateDesignError
from .preprocess import size_factors_batch

SE_FLOOR = 1e-8


@dataclass(frozen=True)
class Design:
    """Column-level design shared by a dataset and all of its MBB realizations."""

    group: np.ndarray
    subject: np.ndarray
    subject_group: np.ndarray

    @classmethod
    def from_dataset(cls, ds) -> "Design":
        return cls(ds.column_group, ds.column_subject, ds.subject_groups)

    def __post_init__(self):
        n1 = int(np.sum(self.group == 1))
        n0 = int(np.sum(self.group == 0))
        if n0 == 0 or n1 == 0:
            raise DegenerateDesignError("degenerate design: both groups need at least one sample")

    @property
    def n_subjects(self) -> int:
        return len(self.subject_group)

    @cached_property
    def group_sizes(self) -> np.ndarray:
        return np.bincount(self.group, minlength=2)

    @cached_property
    def subject_sizes(self) -> np.ndarray:
        return np.bincount(self.subject, minlength=self.n_subjects)

    @cached_property
    def subject_indicator(self) -> np.ndarray:
        """(N, n) one-hot subject membership."""
        s = np.zeros((len(self.subject), self.n_subjects))
        s[np.arange(len(self.subject)), self.subject] = 1.0
        return s

    @cached_property
    def cluster_factors(self) -> np.ndarray:
        """Per-subject weight J_g / (J_g - 1) / N_g^2 of the clustered variance."""
        out = np.empty(self.n_subjects)
        for g in (0, 1):
            subj = self.subject_group == g
            j = int(subj.sum())
            out[subj] = (j / (j - 1) if j > 1 else 1.0) / self.group_sizes[g] ** 2
        return out


@dataclass(frozen=True)
class MarginalFit:
    beta_raw: np.ndarray
    intercept: np.ndarray
    se_naive: np.ndarray
    se_robust: np.ndarray


@dataclass(frozen=True)
class ShrunkenFit:
    beta: np.ndarray
    prior_mean: float
    prior_var: float


@dataclass
class EstimatorOptions:
    scheme: str = "auto"
    shrinkage: bool = True
    se_floor: float = SE_FLOOR


def _marginal_batch(a: np.ndarray, design: Design, naive: bool = True):
    # subject totals are all the clustered sandwich needs
    sums = a @ design.subject_indicator                      # (B, m, n)
    sg = design.subject_group
    n_g = design.group_sizes
    g0 = sums[..., sg == 0].sum(axis=-1) / n_g[0]
    g1 = sums[..., sg == 1].sum(axis=-1) / n_g[1]
    beta_raw = g1 - g0
    means = np.stack([g0, g1], axis=-1)
    totals = sums - design.subject_sizes * means[..., sg]
    se_robust = np.sqrt((totals ** 2) @ design.cluster_factors)
    se_naive = None
    if naive:
        ss = np.einsum("...ij,...ij->...i", a, a) - n_g[0] * g0 ** 2 - n_g[1] * g1 ** 2
        dof = max(len(design.group) - 2, 1)
        se_naive = np.sqrt(np.maximum(ss, 0.0) / dof * (1.0 / n_g[0] + 1.0 / n_g[1]))
    return beta_raw, g0, se_naive, se_robust


def shrink_arrays(beta_raw: np.ndarray, se: np.ndarray):
    """Method-of-moments normal-normal posterior means along the last axis.

    Returns ``(beta, prior_mean, prior_var)``; the prior terms carry the
    leading batch shape.
    """
    se2 = np.asarray(se, dtype=float) ** 2
    w = 1.0 / se2
    prior_mean = (w * beta_raw).sum(axis=-1) / w.sum(axis=-1)
    wvar = (w * (beta_raw - prior_mean[..., None]) ** 2).sum(axis=-1) / w.sum(axis=-1)
    prior_var = np.maximum(0.0, wvar - se2.mean(axis=-1))
    pv = prior_var[..., None]
    pm = prior_mean[..., None]
    with np.errstate(divide="ignore", invalid="ignore"):
        post = (beta_raw / se2 + pm / pv) / (1.0 / se2 + 1.0 / pv)
    beta = np.where(pv > 0, post, np.broadcast_to(pm, beta_raw.shape))
    return beta, prior_mean, prior_var


@dataclass
class BatchEstimate:
    beta: np.ndarray
    beta_raw: np.ndarray
    intercept: np.ndarray
    se_naive: np.ndarray
    se_robust: np.ndarray
    prior_mean: np.ndarray
    prior_var: np.ndarray
    ok: np.ndarray


def estimate_batch(y: np.ndarray, design: Design, options: Optional[EstimatorOptions] = None,
                   delta: Optional[np.ndarray] = None) -> BatchEstimate:
    """Normalize, transform, fit and shrink a stack of count matrices.

    Parameters
    ----------
    y : array, shape (B, m, N)
        Counts. Column ``s`` of every matrix belongs to the subject and group
        given by ``design``.
    delta : array, shape (B, N), optional
        Fixed size factors. Computed from ``y`` when omitted.
    """
    opts = options or EstimatorOptions()
    y = np.asarray(y, dtype=float)
    if y.ndim == 2:
        y = y[None]
    if delta is None:
        delta, _ = size_factors_batch(y, opts.scheme)
    ok = np.all(np.isfinite(delta) & (delta > 0), axis=-1)
    safe = np.where(ok[:, None], delta, 1.0)
    a = np.arcsinh(y / safe[:, None, :])
    beta_raw, intercept, se_naive, se_robust = _marginal_batch(a, design, naive=False)
    m = y.shape[1]
    if opts.shrinkage and m >= 2:
        beta, pm, pv = shrink_arrays(beta_raw, np.maximum(se_robust, opts.se_floor))
    else:
        beta = beta_raw
        pm = np.full(y.shape[0], np.nan)
        pv = np.full(y.shape[0], np.nan)
    return BatchEstimate(beta, beta_raw, intercept, se_naive, se_robust, pm, pv, ok)


def fit_marginal(ds, tm) -> MarginalFit:
    """Working-independence fit of the transformed abundances on ``(1, group)``."""
    design = Design.from_dataset(ds)
    a = np.asarray(getattr(tm, "values", tm), dtype=float)[None]
    beta_raw, intercept, se_naive, se_robust = _marginal_batch(a, design)
    return MarginalFit(beta_raw[0], intercept[0], se_naive[0], se_robust[0])


def shrink(fit, se_boot) -> ShrunkenFit:
    """Shrink ``fit.beta_raw`` toward a precision-weighted common mean.

    ``se_boot`` supplies the per-taxon sampling standard errors. Values below
    the SE floor are clamped to it.
    """
    beta_raw = np.asarray(getattr(fit, "beta_raw", fit), dtype=float)
    se = np.maximum(np.asarray(se_boot, dtype=float), SE_FLOOR)
    if beta_raw.size < 2:
        warnings.warn("a single taxon cannot be pooled; returning the unshrunken estimate",
                      stacklevel=2)
        return ShrunkenFit(beta_raw.copy(), float(beta_raw[0]), float("nan"))
    if not np.all(np.isfinite(se)):
        raise ValueError("standard errors must be finite")
    beta, pm, pv = shrink_arrays(beta_raw, se)
    return ShrunkenFit(beta, float(pm), float(pv))


def studentize(beta_hat, beta_null, se, se_floor: float = SE_FLOOR):
    """``(beta_hat - beta_null) / se`` with ``se`` clamped to ``se_floor``."""
    se = np.maximum(np.asarray(se, dtype=float), se_floor)
    out = (np.asarray(beta_hat, dtype=float) - beta_null) / se
    return float(out) if np.ndim(out) == 0 else out
