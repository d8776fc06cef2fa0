"""Longitudinal count simulation with known truth, and ROC scoring."""
from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from typing import Mapping, Optional

import numpy as np
import pandas as pd

from . import rng as rngmod
from .data import LongitudinalDataset, from_arrays
from .errors import ValidationError

AR_COEFS = {
    "order1": (0.8, 0.0),
    "order2": (0.3, 0.5),
}
DEP_ORDERS = ("order1", "order2", "mixed")
GENERATORS = ("inar", "rounded-ar")
BURN_IN = 50
GROUP_LABELS = ("control", "treated")


def load_nb_params(path=None) -> pd.DataFrame:
    """Per-taxon innovation mean and dispersion (variance = mu + dispersion * mu^2)."""
    if path is None:
        with resources.files("mbbda").joinpath("data/nb_params.csv").open() as fh:
            return pd.read_csv(fh)
    return pd.read_csv(path, sep=None, engine="python")


@dataclass
class SimConfig:
    m: int = 50
    frac_da: float = 0.5
    n_per_group: int = 10
    q: int = 10
    dep_order: str = "order1"
    ar_coefs: Optional[tuple] = None
    da_fold: float = 3.0
    da_direction: str = "balanced"
    generator: str = "inar"
    params_file: Optional[str] = None
    runs: int = 1
    seed: int = 0
    nb_mean: Optional[np.ndarray] = field(default=None, repr=False)
    nb_dispersion: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if not 0 <= self.frac_da <= 1:
            raise ValidationError("frac_da must lie in [0, 1]")
        if self.dep_order not in DEP_ORDERS:
            raise ValidationError(f"dep_order must be one of {DEP_ORDERS}")
        if self.generator not in GENERATORS:
            raise ValidationError(f"generator must be one of {GENERATORS}")
        if self.da_direction not in ("balanced", "up"):
            raise ValidationError("da_direction must be 'balanced' or 'up'")
        if self.m < 1 or self.n_per_group < 1 or self.q < 1:
            raise ValidationError("m, n_per_group and q must be positive")
        if self.da_fold <= 0:
            raise ValidationError("da_fold must be positive")
        for phi in self.coefs_for("control"), self.coefs_for("treated"):
            if min(phi) < 0 or sum(phi) >= 1:
                raise ValidationError(f"AR coefficients {phi} are not stationary")
        if self.nb_mean is None or self.nb_dispersion is None:
            params = load_nb_params(self.params_file)
            if len(params) < self.m:
                raise ValidationError(f"parameter file has {len(params)} taxa, need {self.m}")
            self.nb_mean = params["nb_mean"].to_numpy(float)[: self.m]
            self.nb_dispersion = params["nb_dispersion"].to_numpy(float)[: self.m]
        self.nb_mean = np.asarray(self.nb_mean, dtype=float)
        self.nb_dispersion = np.asarray(self.nb_dispersion, dtype=float)
        if self.nb_mean.shape != (self.m,) or self.nb_dispersion.shape != (self.m,):
            raise ValidationError("nb_mean and nb_dispersion need one value per taxon")

    def coefs_for(self, arm: str) -> tuple:
        if self.ar_coefs is not None:
            return tuple(self.ar_coefs)
        if self.dep_order == "mixed":
            return AR_COEFS["order1" if arm == "control" else "order2"]
        return AR_COEFS[self.dep_order]

    @property
    def n_da(self) -> int:
        return int(round(self.frac_da * self.m))

    @classmethod
    def preset(cls, setting: str, **overrides) -> "SimConfig":
        presets = {
            "Z": dict(m=50, frac_da=0.5, n_per_group=10, q=10),
            "ZL": dict(m=100, frac_da=0.2, n_per_group=10, q=15),
        }
        try:
            base = presets[setting.upper()]
        except KeyError:
            raise ValidationError(f"unknown setting {setting!r}; use Z or ZL") from None
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_mapping(cls, values: Mapping[str, str], **overrides) -> "SimConfig":
        """Build from string key-value pairs (config files), then apply overrides."""
        kinds = {f.name: f.type for f in fields(cls)}
        kwargs: dict = {}
        setting = values.get("setting")
        for key, raw in values.items():
            if key == "setting":
                continue
            if key not in kinds or key in ("nb_mean", "nb_dispersion"):
                raise ValidationError(f"unknown simulation config key {key!r}")
            kwargs[key] = _coerce(key, raw)
        kwargs.update({k: v for k, v in overrides.items() if v is not None})
        if setting:
            return cls.preset(setting, **kwargs)
        return cls(**kwargs)

    def manifest(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if k not in ("nb_mean", "nb_dispersion")}
        out["ar_coefs_control"] = list(self.coefs_for("control"))
        out["ar_coefs_treated"] = list(self.coefs_for("treated"))
        return out


def _coerce(key: str, raw):
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    if key in ("m", "n_per_group", "q", "runs", "seed"):
        return int(raw)
    if key in ("frac_da", "da_fold"):
        return float(raw)
    if key == "ar_coefs":
        return tuple(float(x) for x in raw.replace(",", " ").split())
    return raw


def read_config_file(path) -> dict:
    """Parse a ``key = value`` file; a leading ``[section]`` header is optional."""
    text = open(path, encoding="utf-8").read()
    parser = configparser.ConfigParser()
    if not text.lstrip().startswith("["):
        text = "[config]\n" + text
    parser.read_string(text)
    out: dict = {}
    for section in parser.sections():
        out.update(dict(parser[section]))
    return out


def _nb(rng, mean, dispersion, size):
    mean = np.broadcast_to(mean, size)
    disp = np.broadcast_to(dispersion, size)
    out = np.zeros(size, dtype=np.int64)
    pois = disp <= 0
    live = (mean > 0) & ~pois
    if np.any(live):
        r = 1.0 / disp[live]
        out[live] = rng.negative_binomial(r, r / (r + mean[live]))
    if np.any(pois & (mean > 0)):
        sel = pois & (mean > 0)
        out[sel] = rng.poisson(mean[sel])
    return out


def gen_panel(coefs, mean, dispersion, q: int, rng: np.random.Generator,
              generator: str = "inar", shape: tuple = ()) -> np.ndarray:
    """Series of length ``q`` for every cell of ``shape``; returns ``shape + (q,)``.

    ``inar`` uses binomial thinning ``X_n = phi1 o X_{n-1} + phi2 o X_{n-2} + Z_n``;
    ``rounded-ar`` rounds the real-valued recursion. Both discard a burn-in.
    """
    phi1, phi2 = coefs
    shape = tuple(shape) or np.broadcast(np.asarray(mean), np.asarray(dispersion)).shape
    x1 = np.zeros(shape, dtype=np.int64)
    x2 = np.zeros(shape, dtype=np.int64)
    out = np.empty(shape + (q,), dtype=np.int64)
    for step in range(BURN_IN + q):
        z = _nb(rng, mean, dispersion, shape)
        if generator == "inar":
            x = rng.binomial(x1, phi1) + rng.binomial(x2, phi2) + z
        else:
            x = np.rint(phi1 * x1 + phi2 * x2 + z).astype(np.int64)
        x2, x1 = x1, x
        if step >= BURN_IN:
            out[..., step - BURN_IN] = x
    return out


def gen_series(order, coefs, nb_params, q: int, rng: np.random.Generator,
               generator: str = "inar") -> np.ndarray:
    """One stationary count series of length ``q``.

    ``order`` is ``order1``/``order2`` and ``coefs`` overrides its
    coefficients when given; ``nb_params`` is ``(mean, dispersion)``.
    """
    phi = tuple(coefs) if coefs is not None else AR_COEFS[order]
    if min(phi) < 0 or sum(phi) >= 1:
        raise ValidationError(f"AR coefficients {phi} are not stationary")
    mean, disp = nb_params
    return gen_panel(phi, float(mean), float(disp), q, rng, generator, shape=())


def gen_setting(cfg: SimConfig, run_index: int = 0) -> tuple[LongitudinalDataset, np.ndarray]:
    """Simulate one panel; returns the dataset and the per-taxon DA truth vector."""
    rng = rngmod.substream(cfg.seed, rngmod.SIMULATION, run_index)
    m, n, q = cfg.m, cfg.n_per_group, cfg.q
    da = np.zeros(m, dtype=bool)
    da_idx = np.sort(rng.choice(m, size=cfg.n_da, replace=False))
    da[da_idx] = True
    fold = np.ones(m)
    if cfg.da_direction == "balanced":
        fold[da_idx[0::2]] = cfg.da_fold
        fold[da_idx[1::2]] = 1.0 / cfg.da_fold
    else:
        fold[da_idx] = cfg.da_fold

    blocks = []
    for arm, mult in (("control", np.ones(m)), ("treated", fold)):
        mean = (cfg.nb_mean * mult)[:, None]
        disp = cfg.nb_dispersion[:, None]
        blocks.append(gen_panel(cfg.coefs_for(arm), mean, disp, q, rng, cfg.generator,
                                shape=(m, n)))
    counts = np.concatenate(blocks, axis=1).reshape(m, 2 * n * q)
    subjects = np.repeat(
        [f"control_{k + 1}" for k in range(n)] + [f"treated_{k + 1}" for k in range(n)], q)
    times = np.tile(np.arange(1, q + 1), 2 * n)
    groups = np.repeat([0, 1], n * q)
    sample_ids = tuple(f"{s}_t{t}" for s, t in zip(subjects, times))
    taxa = tuple(f"taxon_{i + 1}" for i in range(m))
    ds = from_arrays(counts, subjects, times, groups, taxa, sample_ids, GROUP_LABELS)
    return ds, da


@dataclass
class RocCurve:
    cutoffs: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    fpr_runs: np.ndarray
    tpr_runs: np.ndarray

    def at(self, cutoff: float) -> tuple[float, float]:
        k = int(np.argmin(np.abs(self.cutoffs - cutoff)))
        return float(self.fpr[k]), float(self.tpr[k])


def rates_at(p_adj, truth, cutoff: float) -> tuple[float, float]:
    """(FPR, TPR) of the rejection set ``{p_adj <= cutoff}``; NaN where undefined."""
    p_adj = np.asarray(p_adj)
    truth = np.asarray(truth, dtype=bool)
    rej = p_adj <= cutoff
    pos, neg = truth.sum(), (~truth).sum()
    tpr = (rej & truth).sum() / pos if pos else np.nan
    fpr = (rej & ~truth).sum() / neg if neg else np.nan
    return float(fpr), float(tpr)


def roc_curve(p_adj_runs, truth, n_grid: int = 1001) -> RocCurve:
    """Average (FPR, TPR) over runs on an evenly spaced grid of FDR cutoffs in [0, 1].

    ``truth`` is either one vector shared by all runs or one vector per run.
    Rates that are undefined (no true or no false hypotheses) are NaN.
    """
    p = np.atleast_2d(np.asarray(p_adj_runs, dtype=float))
    t = np.asarray(truth, dtype=bool)
    if t.ndim == 1 and t.shape[0] == p.shape[1]:
        t = np.broadcast_to(t, p.shape)
    if t.shape != p.shape:
        raise ValidationError("every run must cover the same taxon set as the truth vector")
    cut = np.linspace(0.0, 1.0, n_grid)
    rej = p[:, None, :] <= cut[None, :, None]            # (runs, grid, m)
    pos = t.sum(axis=1)[:, None]
    neg = (~t).sum(axis=1)[:, None]
    tp = (rej & t[:, None, :]).sum(axis=2)
    fp = (rej & ~t[:, None, :]).sum(axis=2)
    with np.errstate(invalid="ignore", divide="ignore"):
        tpr = np.where(pos > 0, tp / np.maximum(pos, 1), np.nan)
        fpr = np.where(neg > 0, fp / np.maximum(neg, 1), np.nan)
    return RocCurve(cut, _nanmean(fpr), _nanmean(tpr), fpr, tpr)


def _nanmean(x):
    with np.errstate(invalid="ignore"):
        ok = ~np.isnan(x)
        n = ok.sum(axis=0)
        return np.where(n > 0, np.where(ok, x, 0).sum(axis=0) / np.maximum(n, 1), np.nan)
