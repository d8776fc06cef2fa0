"""Exploratory checks: PAC profiles, the initial block size, lag pairs, pivotality."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy import stats

from . import rng as rngmod
from .baselines import mom_dispersion
from .mbb import bootstrap_distribution
from .preprocess import size_factors


MIN_LAG_PAIRS = 4


def pacf(x: np.ndarray, max_lag: int) -> tuple[np.ndarray, bool]:
    """Sample partial autocorrelations at lags 1..max_lag (Durbin-Levinson).

    Uses the biased (divide by n) autocovariance of the demeaned series.
    Returns ``(pac, degenerate)``; a constant series gives zeros and
    ``degenerate=True``.
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    max_lag = min(max_lag, n - 1)
    if max_lag < 1:
        return np.zeros(0), False
    d = x - x.mean()
    c0 = d @ d / n
    if c0 <= 1e-14 * max(1.0, float(np.abs(x).max()) ** 2):
        return np.zeros(max_lag), True
    rho = np.array([d[: n - h] @ d[h:] / n for h in range(max_lag + 1)]) / c0
    pac = np.zeros(max_lag)
    phi = np.zeros(0)
    v = 1.0
    for k in range(1, max_lag + 1):
        num = rho[k] - phi @ rho[1:k][::-1]
        a = num / v if v > 0 else 0.0
        phi = np.concatenate([phi - a * phi[::-1], [a]])
        v *= 1.0 - a * a
        pac[k - 1] = a
    return np.clip(pac, -1.0, 1.0), False


def top_taxa(tm: np.ndarray, top_k: int) -> np.ndarray:
    """Indices of the ``top_k`` taxa with the largest total transformed abundance."""
    totals = np.asarray(tm).sum(axis=1)
    return np.argsort(-totals, kind="stable")[:top_k]


def group_mean_series(ds, values: np.ndarray, group: int) -> np.ndarray:
    """(len(values), T) average over the group's subjects at every time rank."""
    sel = ds.column_group == group
    rank = ds.column_rank[sel]
    length = int(rank.max()) + 1
    sums = np.zeros((values.shape[0], length))
    np.add.at(sums.T, rank, values[:, sel].T)
    counts = np.bincount(rank, minlength=length)
    return sums / counts


def pac_profile(ds, tm, top_k: int = 6, max_lag: Optional[int] = None,
                mode: str = "group-mean") -> pd.DataFrame:
    """PAC by (taxon, group, lag) for the most abundant taxa.

    ``mode="group-mean"`` computes the PAC of the series of group means at each
    time rank; ``mode="subject"`` averages the PACs of the individual subject
    series. The ``pairs`` column is the number of lagged pairs behind each
    value (series length minus lag).
    """
    values = np.asarray(getattr(tm, "values", tm), dtype=float)
    q_min = int(ds.q.min())
    if max_lag is None:
        max_lag = q_min - 1
    rows, truncated = [], 0
    for i in top_taxa(values, top_k):
        for g in (0, 1):
            if mode == "group-mean":
                series = group_mean_series(ds, values[i:i + 1], g)[0]
                pac, degenerate = pacf(series, max_lag)
                n = len(series)
            elif mode == "subject":
                pacs, degenerate, n = [], True, 0
                for j in np.flatnonzero(ds.subject_groups == g):
                    s = values[i, ds.offsets[j]:ds.offsets[j + 1]]
                    p_j, deg_j = pacf(s, max_lag)
                    padded = np.full(max_lag, np.nan)
                    padded[: len(p_j)] = p_j
                    pacs.append(padded)
                    degenerate &= deg_j
                    n = max(n, len(s))
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", RuntimeWarning)
                    pac = np.nanmean(np.vstack(pacs), axis=0)
                pac = pac[~np.isnan(pac)]
            else:
                raise ValueError(f"unknown PAC mode {mode!r}")
            truncated += len(pac) < max_lag
            for h, value in enumerate(pac, start=1):
                rows.append((ds.taxa_ids[i], ds.group_labels[g], h, float(value),
                             bool(degenerate), n - h))
    if truncated:
        warnings.warn(f"{truncated} series shorter than max_lag + 1 = {max_lag + 1}; "
                      "their lags are truncated", stacklevel=2)
    return pd.DataFrame(rows, columns=["taxon", "group", "lag", "pac", "degenerate", "pairs"])


def suggest_initial_block(pac: pd.DataFrame, threshold: float = 0.25,
                          min_pairs: int = MIN_LAG_PAIRS) -> int:
    """One more than the first lag at which every |PAC| is below ``threshold``.

    Lags backed by fewer than ``min_pairs`` lagged pairs are not considered.
    """
    if len(pac) == 0:
        raise ValueError("empty PAC table")
    usable = pac[pac["pairs"] >= min_pairs]
    worst = usable.assign(a=usable["pac"].abs()).groupby("lag")["a"].max().sort_index()
    below = worst[worst < threshold]
    if len(below) == 0:
        max_lag = int(pac["lag"].max())
        warnings.warn(f"no lag with |PAC| < {threshold}; using {max_lag + 1}", stacklevel=2)
        return max_lag + 1
    return int(below.index[0]) + 1


def lag_table(tm, ds, taxon, lags: Sequence[int]) -> pd.DataFrame:
    """Within-subject pairs ``(x_t, x_{t+h})`` of transformed abundance for one taxon."""
    values = np.asarray(getattr(tm, "values", tm), dtype=float)
    i = ds.taxa_ids.index(taxon) if isinstance(taxon, str) else int(taxon)
    rows = []
    for h in lags:
        if h < 1:
            raise ValueError("lags must be positive")
        for j in range(ds.n_subjects):
            s = values[i, ds.offsets[j]:ds.offsets[j + 1]]
            g = ds.group_labels[ds.subject_groups[j]]
            for t in range(len(s) - h):
                rows.append((ds.subject_ids[j], g, h, s[t], s[t + h]))
    return pd.DataFrame(rows, columns=["subject", "group", "lag", "x_t", "x_t_plus_h"])


# pivotality -------------------------------------------------------------------------

@dataclass
class PivotCheck:
    qq: pd.DataFrame
    ks_t: np.ndarray
    ks_t_baseline: np.ndarray
    ks_beta: np.ndarray
    ks_beta_baseline: np.ndarray

    def summary(self) -> dict:
        return {
            "ks_t": float(np.mean(self.ks_t)),
            "ks_t_baseline": float(np.mean(self.ks_t_baseline)),
            "ks_beta": float(np.mean(self.ks_beta)),
            "ks_beta_baseline": float(np.mean(self.ks_beta_baseline)),
        }


def fit_gamma_poisson(ds):
    """Per-taxon, per-group means of normalized counts and a per-taxon dispersion."""
    y = ds.counts.astype(float)
    delta = size_factors(ds.counts).delta
    group = ds.column_group
    mu = np.stack([(y[:, group == g] / delta[group == g]).mean(axis=1) for g in (0, 1)], axis=1)
    return mu, mom_dispersion(y, delta, group), delta


def simulate_like(ds, mu, dispersion, delta, rng: np.random.Generator):
    """Draw a dataset with the design of ``ds`` from independent gamma-Poisson cells."""
    mean = mu[:, ds.column_group] * delta[None, :]
    r = 1.0 / np.maximum(dispersion, 1e-8)[:, None]
    r = np.broadcast_to(r, mean.shape)
    counts = np.where(mean > 0, rng.negative_binomial(r, r / (r + np.maximum(mean, 1e-12))), 0)
    return ds.with_counts(counts)


def ks_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.array([stats.ks_2samp(x, y).statistic for x, y in zip(a, b)])


def pivot_check(ds, variance_perturbation: float = 2.0, l: int = 3, R: int = 100, RR: int = 25,
                seed: rngmod.SeedLike = 0, n_quantiles: int = 99, threads: int = 1,
                **boot_kwargs) -> PivotCheck:
    """Compare bootstrap pivot distributions under a perturbed dispersion.

    A gamma-Poisson model fitted to ``ds`` generates a reference panel, a
    second panel from the same model (baseline) and a panel whose dispersion
    is multiplied by ``variance_perturbation``. The full MBB pipeline runs on
    each; per taxon the Kolmogorov-Smirnov distance between the reference and
    the other two is reported for the studentized pivots and for the centered
    (non-studentized) bootstrap estimates.
    """
    if variance_perturbation <= 0:
        raise ValueError("variance_perturbation must be positive")
    mu, alpha, delta = fit_gamma_poisson(ds)
    panels = {}
    for label, factor in ((0, 1.0), (1, 1.0), (2, variance_perturbation)):
        gen = rngmod.substream(seed, rngmod.PIVOT, label)
        sim = simulate_like(ds, mu, alpha * factor, delta, gen)
        panels[label] = bootstrap_distribution(sim, l, R, RR, rngmod.child_key(seed, rngmod.PIVOT, 10 + label),
                                               threads=threads, **boot_kwargs)
    ref, base, pert = panels[0], panels[1], panels[2]
    centered = {k: d.beta_star - d.beta_hat[:, None] for k, d in panels.items()}
    probs = np.linspace(0.01, 0.99, n_quantiles)
    q_ref = np.quantile(ref.t_star, probs, axis=1).T
    q_pert = np.quantile(pert.t_star, probs, axis=1).T
    qq = pd.DataFrame({
        "taxon": np.repeat(ds.taxa_ids, n_quantiles),
        "prob": np.tile(probs, ds.m),
        "t_original": q_ref.ravel(),
        "t_perturbed": q_pert.ravel(),
    })
    return PivotCheck(
        qq,
        ks_rows(ref.t_star, pert.t_star),
        ks_rows(ref.t_star, base.t_star),
        ks_rows(centered[0], centered[2]),
        ks_rows(centered[0], centered[1]),
    )
