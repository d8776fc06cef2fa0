"""Data-driven block size via subsampling the two-sided rejection probability."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from . import rng as rngmod
from .errors import ValidationError
from .mbb import bootstrap_distribution

logger = logging.getLogger(__name__)

NU_TWO_SIDED = 5
_FULL = 0


@dataclass
class MseProfile:
    candidates: list
    mse_matrix: np.ndarray
    l1_norms: np.ndarray = field(init=False)
    psi_full: Optional[np.ndarray] = None
    psi_sub: Optional[np.ndarray] = None
    k: Optional[np.ndarray] = None
    initial_block: Optional[int] = None
    omega: Union[int, float, None] = None

    def __post_init__(self):
        self.mse_matrix = np.asarray(self.mse_matrix, dtype=float)
        if self.mse_matrix.shape[1] != len(self.candidates):
            raise ValueError("one MSE column per candidate block size")
        self.l1_norms = self.mse_matrix.sum(axis=0)


@dataclass(frozen=True)
class BlockSizeChoice:
    l_subsample: int
    l_full: int
    nu: int = NU_TWO_SIDED
    profile: Optional[MseProfile] = None


def two_sided_prob(t_star, k):
    """Fraction of bootstrap pivots with ``|T*| >= |k|`` (row-wise for 2-D input)."""
    t_star = np.abs(np.asarray(t_star, dtype=float))
    k = np.abs(np.asarray(k, dtype=float))
    if t_star.ndim == 1:
        return float(np.mean(t_star >= k))
    return np.mean(t_star >= k[:, None], axis=1)


def is_proportion(omega) -> bool:
    return isinstance(omega, float) and 0 < omega < 1


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def subsample_windows(q: Sequence[int], omega) -> list:
    """Per-window lists of ``(start, stop)`` ranks, one pair per subject."""
    q = np.asarray(q, dtype=int)
    if is_proportion(omega):
        width = max(1, _round_half_up(omega * q.max()))
        n_windows = int(q.max()) - width + 1
        return [[(j, j + width) if j + width <= qj else (0, int(qj)) for qj in q]
                for j in range(n_windows)]
    omega = int(omega)
    if omega < 1 or omega > q.min():
        raise ValidationError(f"omega={omega} must lie in [1, {q.min()}] (shortest series)")
    n_windows = int(q.min()) - omega + 1
    return [[(j, j + omega) for _ in q] for j in range(n_windows)]


def make_subsamples(ds, omega) -> list:
    """Overlapping sub-panels of ``omega`` consecutive observations per subject.

    An integer ``omega`` is a count of observations; a float in (0, 1) is a
    proportion of the longest series.
    """
    return [ds.select_windows(w) for w in subsample_windows(ds.q, omega)]


def default_omega(ds, min_windows: int = 5) -> int:
    """Largest window length that still yields ``min_windows`` subsamples."""
    return max(1, int(ds.q.min()) - min_windows + 1)


def mse_profile(ds, l_I: int, candidates: Sequence[int], omega, R: int, RR: int,
                seed: rngmod.SeedLike = 0, threads: int = 1, **boot_kwargs) -> MseProfile:
    """Subsample MSE of the two-sided probability for every candidate block size.

    The reference value comes from the full panel at block size ``l_I`` and
    the observed studentized statistic ``k``; each subsample at each candidate
    gets its own independently seeded double bootstrap.
    """
    candidates = sorted(int(c) for c in candidates)
    if not candidates:
        raise ValidationError("candidate list is empty")
    bad = [c for c in candidates if not 1 < c < l_I]
    if bad:
        raise ValidationError(f"candidate block sizes {bad} must satisfy 1 < l < {l_I}")
    full = bootstrap_distribution(ds, l_I, R, RR, rngmod.child_key(seed, _FULL),
                                  threads=threads, **boot_kwargs)
    k = full.t_obs
    psi_full = two_sided_prob(full.t_star, k)
    subs = make_subsamples(ds, omega)
    psi_sub = np.empty((ds.m, len(subs), len(candidates)))
    for j, sub in enumerate(subs):
        for c, l_c in enumerate(candidates):
            dist = bootstrap_distribution(
                sub, l_c, R, RR, rngmod.child_key(seed, rngmod.SUBSAMPLE, j, l_c),
                threads=threads, **boot_kwargs)
            psi_sub[:, j, c] = two_sided_prob(dist.t_star, k)
    mse = np.mean((psi_full[:, None, None] - psi_sub) ** 2, axis=1)
    return MseProfile(candidates, mse, psi_full, psi_sub, k, int(l_I), omega)


def select_block_size(profile: MseProfile) -> int:
    """Candidate with the smallest l1-norm of the MSE vector; ties go to the smaller size."""
    if len(profile.candidates) == 0:
        raise ValidationError("empty MSE profile")
    order = np.argsort(profile.candidates, kind="stable")
    norms = np.asarray(profile.l1_norms)[order]
    return int(np.asarray(profile.candidates)[order][int(np.argmin(norms))])


def scale_up(l_subsample: int, q: int, omega, nu: int = NU_TWO_SIDED,
             min_q: Optional[int] = None, rounding: str = "nearest") -> int:
    """Block size for the full panel from the subsample optimum.

    Count mode (integer ``omega``): ``(q / omega) ** (1 / nu) * l``.
    Proportion mode (``0 < omega < 1``): ``(1 / omega) ** (1 / nu) * l``.
    The result is rounded (half away from zero, or down with
    ``rounding="floor"``) and clamped to ``[2, min_q]``.
    """
    if nu < 1:
        raise ValueError("nu must be >= 1")
    if is_proportion(omega):
        factor = (1.0 / omega) ** (1.0 / nu)
    else:
        factor = (q / float(omega)) ** (1.0 / nu)
    raw = factor * l_subsample
    value = math.floor(raw + 1e-12) if rounding == "floor" else _round_half_up(raw)
    upper = int(min_q if min_q is not None else q)
    return int(min(max(value, 2), max(upper, 2)))


def choose_block_size(ds, l_I: int, omega=None, candidates=None, R: int = 100, RR: int = 25,
                      seed: rngmod.SeedLike = 0, threads: int = 1, nu: int = NU_TWO_SIDED,
                      rounding: str = "nearest", **boot_kwargs) -> BlockSizeChoice:
    """Full selection: MSE profile, argmin on the subsample, scale-up to the panel."""
    if omega is None:
        omega = default_omega(ds)
    if candidates is None:
        candidates = list(range(2, int(l_I)))
    profile = mse_profile(ds, l_I, candidates, omega, R, RR, seed, threads, **boot_kwargs)
    l_sub = select_block_size(profile)
    q_min = int(ds.q.min())
    l_full = scale_up(l_sub, q_min, omega, nu, min_q=q_min, rounding=rounding)
    logger.info("block size: subsample optimum %d, full-panel %d (l1 norms %s)",
                l_sub, l_full, np.round(profile.l1_norms, 5).tolist())
    return BlockSizeChoice(l_sub, l_full, nu, profile)
