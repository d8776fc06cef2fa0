"""End-to-end MBB differential abundance analysis of one dataset."""
from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from . import rng as rngmod
from .blocksize import BlockSizeChoice, choose_block_size, default_omega
from .data import prevalence_filter
from .diagnostics import pac_profile, suggest_initial_block
from .errors import ValidationError
from .estimator import EstimatorOptions
from .inference import ResultsTable, assemble_results, bh_adjust
from .mbb import BootstrapDistribution, bootstrap_distribution, conf_intervals, p_values
from .preprocess import size_factors, transform

logger = logging.getLogger(__name__)


@dataclass
class FitConfig:
    """Settings of an MBB analysis.

    ``block_size`` fixes the block length; otherwise ``auto_block`` runs the
    subsampling selection, starting from ``initial_block`` (suggested from
    the PAC profile when omitted). The selection runs its own double
    bootstraps with ``select_outer_reps`` x ``select_inner_reps`` draws,
    defaulting to the final replicate counts.
    """

    block_size: Optional[int] = None
    auto_block: bool = False
    initial_block: Optional[int] = None
    omega: Union[int, float, None] = None
    candidates: Optional[Sequence[int]] = None
    outer_reps: int = 200
    inner_reps: int = 50
    select_outer_reps: Optional[int] = None
    select_inner_reps: Optional[int] = None
    seed: rngmod.SeedLike = 0
    alpha: float = 0.05
    fdr: float = 0.05
    prevalence: float = 0.0
    scheme: str = "auto"
    shrinkage: bool = True
    pivot_se: str = "robust"
    freeze_size_factors: bool = False
    rounding: str = "nearest"
    top_k: int = 6
    threads: int = 1

    def __post_init__(self):
        if self.block_size is None and not self.auto_block:
            raise ValidationError("give a block size or enable automatic selection")
        if self.block_size is not None and self.block_size < 1:
            raise ValidationError("block size must be >= 1")
        if not 0 < self.alpha < 1:
            raise ValidationError("alpha must lie in (0, 1)")
        if not 0 <= self.fdr <= 1:
            raise ValidationError("fdr must lie in [0, 1]")
        if self.threads < 1:
            raise ValidationError("threads must be >= 1")

    def manifest(self) -> dict:
        out = asdict(self)
        if out["candidates"] is not None:
            out["candidates"] = [int(c) for c in out["candidates"]]
        return out


@dataclass
class MbbRun:
    results: ResultsTable
    distribution: BootstrapDistribution
    block_size: int
    choice: Optional[BlockSizeChoice] = None
    initial_block: Optional[int] = None
    taxa_ids: tuple = field(default_factory=tuple)


def initial_block_from_pac(ds, top_k: int = 6, scheme: str = "auto") -> int:
    """Initial block size suggested by the PAC profile of the most abundant taxa."""
    tm = transform(ds.counts, size_factors(ds.counts, scheme).delta)
    return suggest_initial_block(pac_profile(ds, tm, top_k, int(ds.q.min()) - 1))


def select_block(ds, cfg: FitConfig) -> tuple[int, Optional[BlockSizeChoice], int]:
    """Returns ``(block_size, choice, initial_block)`` for an automatic run."""
    l_I = cfg.initial_block or initial_block_from_pac(ds, cfg.top_k, cfg.scheme)
    candidates = list(cfg.candidates) if cfg.candidates is not None else list(range(2, l_I))
    if not candidates:
        warnings.warn(f"initial block {l_I} leaves no candidate below it; using block size 2",
                      stacklevel=2)
        return 2, None, l_I
    omega = cfg.omega if cfg.omega is not None else default_omega(ds)
    choice = choose_block_size(
        ds, l_I, omega, candidates,
        R=cfg.select_outer_reps or cfg.outer_reps, RR=cfg.select_inner_reps or cfg.inner_reps,
        seed=rngmod.child_key(cfg.seed, rngmod.SELECT), threads=cfg.threads,
        rounding=cfg.rounding, options=_options(cfg), freeze_size_factors=cfg.freeze_size_factors,
        pivot_se=cfg.pivot_se,
    )
    return choice.l_full, choice, l_I


def _options(cfg: FitConfig) -> EstimatorOptions:
    return EstimatorOptions(scheme=cfg.scheme, shrinkage=cfg.shrinkage)


def run_mbb(ds, cfg: FitConfig) -> MbbRun:
    """Filter, choose the block size if asked, bootstrap, test and tabulate."""
    if cfg.prevalence > 0:
        ds = prevalence_filter(ds, cfg.prevalence)
    choice, l_I = None, None
    if cfg.block_size is not None:
        l = int(cfg.block_size)
    else:
        l, choice, l_I = select_block(ds, cfg)
    dist = bootstrap_distribution(
        ds, l, cfg.outer_reps, cfg.inner_reps, cfg.seed, threads=cfg.threads,
        options=_options(cfg), freeze_size_factors=cfg.freeze_size_factors, pivot_se=cfg.pivot_se,
    )
    p = p_values(dist.t_obs, dist)
    p_adj = bh_adjust(p)
    ci = conf_intervals(dist.beta_hat, dist, cfg.alpha)
    meta = {
        "block_size": l,
        "initial_block": l_I,
        "n_taxa": ds.m,
        "n_samples": ds.N,
        "n_subjects": ds.n_subjects,
        "group_labels": list(ds.group_labels),
        "floored_se_count": dist.floored_se_count,
        "redrawn_replicates": dist.retries,
    }
    if choice is not None:
        meta["block_selection"] = {
            "l_subsample": choice.l_subsample,
            "candidates": list(choice.profile.candidates),
            "l1_norms": np.asarray(choice.profile.l1_norms).tolist(),
            "omega": choice.profile.omega,
        }
    results = assemble_results(ds.taxa_ids, dist.beta_hat, p, p_adj, ci, meta, cfg.fdr)
    return MbbRun(results, dist, l, choice, l_I, tuple(ds.taxa_ids))
