"""Simulation benchmark: MBB against the merge-by-subject and independent-samples tests."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from . import rng as rngmod
from .baselines import mbs_test, pis_test
from .errors import ValidationError
from .pipeline import FitConfig, run_mbb
from .simulate import SimConfig, gen_setting, roc_curve

logger = logging.getLogger(__name__)

METHODS = ("mbb", "mbs", "pis")

# initial block and subsample length used for the two standard settings
SELECTION_PRESETS = {
    "Z": {"initial_block": 5, "omega": 6},
    "ZL": {"initial_block": 7, "omega": 10},
}


@dataclass
class BenchmarkResult:
    methods: tuple
    truth: np.ndarray                          # (runs, m)
    p_adj: dict                                # method -> (runs, m)
    roc: dict                                  # method -> RocCurve
    block_sizes: list = field(default_factory=list)
    subsample_block_sizes: list = field(default_factory=list)

    def roc_frame(self) -> pd.DataFrame:
        parts = [pd.DataFrame({"method": name, "cutoff": c.cutoffs, "fpr": c.fpr, "tpr": c.tpr})
                 for name, c in self.roc.items()]
        return pd.concat(parts, ignore_index=True)

    def block_size_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"run": np.arange(len(self.block_sizes)), "l": self.block_sizes})

    def block_size_frequencies(self) -> pd.Series:
        counts = pd.Series(self.block_sizes, dtype=int).value_counts().sort_index()
        return counts / counts.sum()

    def truth_frame(self) -> pd.DataFrame:
        runs, m = self.truth.shape
        return pd.DataFrame({
            "run": np.repeat(np.arange(runs), m),
            "taxon": np.tile([f"taxon_{i + 1}" for i in range(m)], runs),
            "da": self.truth.ravel(),
        })


def run_benchmark(cfg: SimConfig, methods: Sequence[str] = METHODS, R: int = 100, RR: int = 25,
                  initial_block: Optional[int] = None, omega=None, candidates=None,
                  block_size: Optional[int] = None, threads: int = 1,
                  runs: Optional[int] = None, progress=None, **fit_kwargs) -> BenchmarkResult:
    """Simulate ``runs`` datasets and score every method by its BH-adjusted p-values.

    MBB selects its block size on every run unless ``block_size`` is given.
    ``progress`` is called with the run index after each run.
    """
    methods = tuple(methods)
    unknown = set(methods) - set(METHODS)
    if unknown or not methods:
        raise ValidationError(f"methods must be a non-empty subset of {METHODS}")
    n_runs = int(runs if runs is not None else cfg.runs)
    if n_runs < 1:
        raise ValidationError("runs must be >= 1")
    truth = np.zeros((n_runs, cfg.m), dtype=bool)
    p_adj = {name: np.empty((n_runs, cfg.m)) for name in methods}
    sizes, sub_sizes = [], []
    for run in range(n_runs):
        ds, truth[run] = gen_setting(cfg, run)
        if "mbb" in methods:
            fc = FitConfig(
                block_size=block_size, auto_block=block_size is None,
                initial_block=initial_block, omega=omega, candidates=candidates,
                outer_reps=R, inner_reps=RR, seed=rngmod.child_key(cfg.seed, rngmod.BENCH, run),
                threads=threads, **fit_kwargs,
            )
            res = run_mbb(ds, fc)
            frame = res.results.frame.set_index("taxon").loc[list(ds.taxa_ids)]
            p_adj["mbb"][run] = frame["p_adj"].to_numpy()
            sizes.append(res.block_size)
            sub_sizes.append(res.choice.l_subsample if res.choice else None)
        if "mbs" in methods:
            p_adj["mbs"][run] = mbs_test(ds).p_adj
        if "pis" in methods:
            p_adj["pis"][run] = pis_test(ds).p_adj
        if progress is not None:
            progress(run)
    roc = {name: roc_curve(p_adj[name], truth) for name in methods}
    return BenchmarkResult(methods, truth, p_adj, roc, sizes, sub_sizes)
