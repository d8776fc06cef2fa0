"""Comparison tests: merge-by-subject (MBS) and presume-independent-samples (PIS).

Both fit a gamma-Poisson (negative binomial) GLM with a log link, median-of-
ratios offsets and a per-taxon method-of-moments dispersion that is held
fixed during the fit, then report a Wald test of the group coefficient on
the log2 scale.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import stats

from .data import from_arrays
from .errors import DegenerateDesignError
from .inference import bh_adjust
from .preprocess import size_factors

LN2 = np.log(2.0)
_ETA_CLIP = 30.0


@dataclass
class BaselineResult:
    taxa_ids: tuple
    lfc: np.ndarray
    se: np.ndarray
    wald: np.ndarray
    p: np.ndarray
    p_adj: np.ndarray
    dispersion: np.ndarray
    method: str

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "taxon": self.taxa_ids, "lfc": self.lfc, "se": self.se, "wald": self.wald,
            "p": self.p, "p_adj": self.p_adj,
        })


def mom_dispersion(y: np.ndarray, delta: np.ndarray, group: np.ndarray) -> np.ndarray:
    """Per-taxon dispersion ``alpha`` from ``Var = mu + alpha * mu^2`` on normalized counts."""
    z = y / delta
    resid = np.empty_like(z)
    for g in (0, 1):
        sel = group == g
        resid[:, sel] = z[:, sel] - z[:, sel].mean(axis=1, keepdims=True)
    dof = max(z.shape[1] - 2, 1)
    s2 = (resid ** 2).sum(axis=1) / dof
    mu = z.mean(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        alpha = (s2 - mu * np.mean(1.0 / delta)) / mu ** 2
    return np.where(np.isfinite(alpha), np.maximum(alpha, 1e-8), 1e-8)


def nb_glm_two_group(y: np.ndarray, offset: np.ndarray, group: np.ndarray, alpha: np.ndarray,
                     max_iter: int = 100, tol: float = 1e-10):
    """IRLS fit of ``log mu = offset + b0 + b1 * group`` for every row of ``y``.

    Returns ``(b0, b1, se_b1, converged)`` on the natural-log scale.
    """
    y = np.asarray(y, dtype=float)
    x = np.asarray(group, dtype=float)
    alpha = np.asarray(alpha, dtype=float)[:, None]
    z0 = (y[:, x == 0] / np.exp(offset[x == 0])).mean(axis=1)
    z1 = (y[:, x == 1] / np.exp(offset[x == 1])).mean(axis=1)
    b0 = np.log(np.maximum(z0, 1e-8))
    b1 = np.log(np.maximum(z1, 1e-8)) - b0
    converged = np.zeros(len(y), dtype=bool)
    for _ in range(max_iter):
        eta = np.clip(offset + b0[:, None] + b1[:, None] * x, -_ETA_CLIP, _ETA_CLIP)
        mu = np.exp(eta)
        w = mu / (1.0 + alpha * mu)
        work = eta - offset + (y - mu) / mu
        s0 = w.sum(axis=1)
        s1 = (w * x).sum(axis=1)
        t0 = (w * work).sum(axis=1)
        t1 = (w * x * work).sum(axis=1)
        det = s0 * s1 - s1 * s1
        with np.errstate(divide="ignore", invalid="ignore"):
            nb0 = (s1 * t0 - s1 * t1) / det
            nb1 = (s0 * t1 - s1 * t0) / det
        step = np.maximum(np.abs(nb0 - b0), np.abs(nb1 - b1))
        ok = np.isfinite(nb0) & np.isfinite(nb1)
        b0 = np.where(ok, nb0, b0)
        b1 = np.where(ok, nb1, b1)
        converged = ok & (step < tol * (1.0 + np.abs(b1)))
        if converged.all():
            break
    eta = np.clip(offset + b0[:, None] + b1[:, None] * x, -_ETA_CLIP, _ETA_CLIP)
    mu = np.exp(eta)
    w = mu / (1.0 + alpha * mu)
    s0 = w.sum(axis=1)
    s1 = (w * x).sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        se_b1 = np.sqrt(s0 / (s0 * s1 - s1 * s1))
    return b0, b1, se_b1, converged


def _wald_test(ds, method: str) -> BaselineResult:
    group = ds.column_group
    n0, n1 = int(np.sum(group == 0)), int(np.sum(group == 1))
    if n0 < 2 or n1 < 2:
        raise DegenerateDesignError(f"degenerate design: {method} needs >= 2 units per group")
    y = ds.counts.astype(float)
    delta = size_factors(ds.counts).delta
    alpha = mom_dispersion(y, delta, group)
    _, b1, se, _ = nb_glm_two_group(y, np.log(delta), group, alpha)
    lfc = b1 / LN2
    se2 = se / LN2
    with np.errstate(divide="ignore", invalid="ignore"):
        wald = np.where(se2 > 0, lfc / se2, 0.0)
    p = 2.0 * stats.norm.sf(np.abs(wald))
    p = np.where(np.isfinite(p), p, 1.0)
    return BaselineResult(ds.taxa_ids, lfc, se2, wald, p, bh_adjust(np.maximum(p, 1e-300)),
                          alpha, method)


def merge_by_subject(ds):
    """Dataset with one column per subject holding the rounded mean counts."""
    merged = np.empty((ds.m, ds.n_subjects), dtype=np.int64)
    for j, series in ds.iter_series():
        merged[:, j] = np.floor(series.mean(axis=1) + 0.5).astype(np.int64)
    return from_arrays(
        merged, ds.subject_ids, np.ones(ds.n_subjects, dtype=int), ds.subject_groups,
        ds.taxa_ids, tuple(ds.subject_ids), ds.group_labels,
    )


def mbs_test(ds) -> BaselineResult:
    """Average counts within subject, then test subjects as independent units."""
    if min(np.sum(ds.subject_groups == 0), np.sum(ds.subject_groups == 1)) < 2:
        raise DegenerateDesignError("degenerate design: MBS needs >= 2 subjects per group")
    return _wald_test(merge_by_subject(ds), "mbs")


def pis_test(ds) -> BaselineResult:
    """Test every sample as an independent unit, ignoring subject structure."""
    return _wald_test(ds, "pis")
