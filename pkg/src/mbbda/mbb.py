"""Moving-block resampling within subjects and the nested double bootstrap."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import rng as rngmod
from .errors import NumericalError
from .estimator import Design, EstimatorOptions, estimate_batch
from .preprocess import size_factors_batch

logger = logging.getLogger(__name__)

MAX_RETRIES = 10
# elements per estimate_batch call before the inner level is split up
_CHUNK_ELEMENTS = 4_000_000


@dataclass(frozen=True)
class BlockPlan:
    """Per-subject blocking arithmetic for block size ``l``.

    ``n_blocks`` is the number of overlapping blocks ``q - l + 1`` (1 when the
    block is longer than the series) and ``n_draws`` is ``ceil(q / l)``.
    """

    l: int
    q: np.ndarray
    n_blocks: np.ndarray = field(init=False)
    n_draws: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.l < 1:
            raise ValueError(f"block size must be >= 1, got {self.l}")
        q = np.atleast_1d(np.asarray(self.q, dtype=np.int64))
        if np.any(q < 1):
            raise ValueError("every series needs at least one observation")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "n_blocks", np.maximum(1, q - self.l + 1))
        object.__setattr__(self, "n_draws", -(-q // self.l))


class BlockSampler:
    """Draws MBB column indices for a panel laid out subject by subject."""

    def __init__(self, q, l: int):
        self.plan = BlockPlan(int(l), q)
        q = self.plan.q
        offsets = np.concatenate([[0], np.cumsum(q)])
        slot_offsets = np.concatenate([[0], np.cumsum(self.plan.n_draws)])
        self.n_slots = int(slot_offsets[-1])
        self.high = np.repeat(self.plan.n_blocks, self.plan.n_draws)
        rank = np.arange(offsets[-1]) - np.repeat(offsets[:-1], q)
        self._slot = np.repeat(slot_offsets[:-1], q) + rank // self.plan.l
        self._within = rank % self.plan.l
        self._base = np.repeat(offsets[:-1], q)

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Return ``size`` index vectors, shape ``(size, N)``."""
        starts = rng.integers(0, self.high, size=(size, self.n_slots))
        return self._base + starts[:, self._slot] + self._within


def resample_subject_indices(q: int, l: int, rng: np.random.Generator) -> np.ndarray:
    """Block-resampled positions ``0..q-1`` for one series of length ``q``."""
    return BlockSampler([q], l).draw(rng, 1)[0]


def mbb_realization(ds, l: int, rng: np.random.Generator):
    """One pairwise MBB realization: every subject's columns are block-resampled
    from its own series, all taxa sharing the same draws."""
    idx = BlockSampler(ds.q, l).draw(rng, 1)[0]
    return ds.with_counts(ds.counts[:, idx])


@dataclass
class BootstrapDistribution:
    beta_hat: np.ndarray
    beta_star: np.ndarray
    t_star: np.ndarray
    se_outer: np.ndarray
    se_inner: np.ndarray
    floored_se_count: int
    l: int
    R: int
    RR: int
    se_obs: np.ndarray
    pivot_se: str = "robust"
    retries: int = 0

    @property
    def t_obs(self) -> np.ndarray:
        """Observed studentized statistic under ``beta = 0``."""
        return self.beta_hat / self.se_obs


def _estimate_chunked(counts, idx, design, options, delta_full):
    """Estimates for the realizations in ``idx`` (shape (B, N)), shrunken betas and ok flags."""
    m, n = counts.shape
    per = max(1, _CHUNK_ELEMENTS // max(1, m * n))
    betas, oks = [], []
    for start in range(0, len(idx), per):
        part = idx[start:start + per]
        y = np.moveaxis(counts[:, part], 1, 0)
        delta = None if delta_full is None else delta_full[part]
        est = estimate_batch(y, design, options, delta)
        betas.append(est.beta)
        oks.append(est.ok & np.all(np.isfinite(est.beta), axis=-1))
    return np.concatenate(betas), np.concatenate(oks)


def bootstrap_distribution(ds, l: int, R: int, RR: int, seed: rngmod.SeedLike = 0,
                           threads: int = 1, options: Optional[EstimatorOptions] = None,
                           freeze_size_factors: bool = False,
                           pivot_se: str = "robust") -> BootstrapDistribution:
    """Nested MBB distribution of shrunken estimates and studentized pivots.

    For each of ``R`` outer realizations the full estimator is rerun, and
    ``RR`` inner realizations of that realization give its standard error.
    ``pivot_se`` picks the standard error of the observed estimate: the
    subject-clustered sandwich SE of the estimating equations (``robust``) or
    the spread of the outer replicates (``bootstrap``).
    Replicate ``r`` draws only from the streams keyed ``(seed, OUTER, r, attempt)``
    and ``(seed, INNER, r, attempt)``, so the result does not depend on
    ``threads``.
    """
    if R < 2 or RR < 2:
        raise ValueError("need R >= 2 and RR >= 2")
    if pivot_se not in ("robust", "bootstrap"):
        raise ValueError(f"pivot_se must be 'robust' or 'bootstrap', got {pivot_se!r}")
    options = options or EstimatorOptions()
    design = Design.from_dataset(ds)
    counts = np.asarray(ds.counts, dtype=float)
    observed = estimate_batch(counts[None], design, options)
    if not observed.ok[0]:
        raise NumericalError("size factors undefined on the observed data")
    delta_full = None
    if freeze_size_factors:
        delta_full = size_factors_batch(counts, options.scheme)[0]
    beta_hat = observed.beta[0]
    sampler = BlockSampler(ds.q, l)
    m = ds.m

    beta_star = np.empty((m, R))
    se_inner = np.empty((m, R))
    retries = np.zeros(R, dtype=int)

    def replicate(r: int) -> None:
        for attempt in range(MAX_RETRIES + 1):
            outer = sampler.draw(rngmod.substream(seed, rngmod.OUTER, r, attempt), 1)
            inner = outer[0][sampler.draw(rngmod.substream(seed, rngmod.INNER, r, attempt), RR)]
            betas, ok = _estimate_chunked(counts, np.vstack([outer, inner]), design,
                                          options, delta_full)
            if ok.all():
                beta_star[:, r] = betas[0]
                se_inner[:, r] = betas[1:].std(axis=0, ddof=1)
                retries[r] = attempt
                return
        raise NumericalError(f"replicate {r} stayed degenerate after {MAX_RETRIES} redraws")

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(replicate, range(R)))
    else:
        for r in range(R):
            replicate(r)

    floor = options.se_floor
    floored = int(np.sum(se_inner < floor))
    se_outer = beta_star.std(axis=1, ddof=1)
    floored += int(np.sum(se_outer < floor))
    se_outer = np.maximum(se_outer, floor)
    if pivot_se == "robust":
        se_obs = np.maximum(observed.se_robust[0], floor)
    else:
        se_obs = se_outer
    t_star = (beta_star - beta_hat[:, None]) / np.maximum(se_inner, floor)
    if retries.any():
        logger.warning("%d replicate(s) redrawn after degenerate realizations", int((retries > 0).sum()))
    return BootstrapDistribution(beta_hat, beta_star, t_star, se_outer, se_inner, floored,
                                 int(l), int(R), int(RR), se_obs, pivot_se, int(retries.sum()))


def p_values(t_obs, dist: BootstrapDistribution) -> np.ndarray:
    """Monte-Carlo two-sided p-values ``(1 + #{|T*| >= |t|}) / (R + 1)``."""
    t_obs = np.abs(np.asarray(t_obs, dtype=float))
    t_star = np.abs(np.asarray(dist.t_star if hasattr(dist, "t_star") else dist, dtype=float))
    count = np.sum(t_star >= t_obs[:, None], axis=1)
    return (1.0 + count) / (t_star.shape[1] + 1.0)


def conf_intervals(beta_hat, dist: BootstrapDistribution, alpha: float = 0.05):
    """Bootstrap-t limits ``beta - t_{1-a/2} se`` and ``beta - t_{a/2} se``.

    ``se`` is the same observed-data SE that studentizes ``t_obs``, so the
    interval excludes 0 roughly when the p-value falls below ``alpha``.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    beta_hat = np.asarray(beta_hat, dtype=float)
    hi_q, lo_q = np.quantile(dist.t_star, [1 - alpha / 2, alpha / 2], axis=1)
    lcl = beta_hat - hi_q * dist.se_obs
    ucl = beta_hat - lo_q * dist.se_obs
    return lcl, ucl
