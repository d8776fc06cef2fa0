"""Benjamini-Hochberg adjustment and the per-taxon results table."""
from __future__ import annotations

import io
import json
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import ValidationError

RESULT_COLUMNS = ("taxon", "beta", "lcl", "ucl", "p", "p_adj", "significant")


def bh_adjust(p) -> np.ndarray:
    """Step-up Benjamini-Hochberg adjusted p-values, returned in input order."""
    p = np.asarray(p, dtype=float)
    if p.ndim != 1:
        raise ValueError("p must be one-dimensional")
    if p.size == 0:
        return p.copy()
    if np.any(~np.isfinite(p)) or np.any(p <= 0) or np.any(p > 1):
        raise ValueError("p-values must lie in (0, 1]")
    m = p.size
    order = np.argsort(p, kind="stable")
    scaled = p[order] * m / np.arange(1, m + 1)
    adj = np.minimum(1.0, np.minimum.accumulate(scaled[::-1])[::-1])
    # p * m / m can round one ulp below p
    adj = np.maximum(adj, p[order])
    out = np.empty(m)
    out[order] = adj
    return out


@dataclass
class ResultsTable:
    frame: pd.DataFrame
    meta: dict = field(default_factory=dict)

    def to_csv(self, path=None) -> str:
        text = _format_frame(self.frame)
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
        return text

    def write(self, path) -> None:
        self.to_csv(path)
        with open(f"{path}.meta.json", "w", encoding="utf-8") as fh:
            json.dump(self.meta, fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")

    def significant(self) -> pd.DataFrame:
        return self.frame[self.frame["significant"]]


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj)}")


def _format_frame(frame: pd.DataFrame) -> str:
    buf = io.StringIO()
    frame.to_csv(buf, index=False, float_format="%.10g", lineterminator="\n")
    return buf.getvalue()


def assemble_results(taxa_ids, beta, p, p_adj, ci, meta=None, fdr: float = 0.05) -> ResultsTable:
    """Per-taxon table sorted by ``beta`` descending, with a significance flag at ``fdr``."""
    taxa_ids = list(taxa_ids)
    if not taxa_ids:
        raise ValidationError("empty taxon set")
    lcl, ucl = ci
    arrays = [np.asarray(a, dtype=float) for a in (beta, p, p_adj, lcl, ucl)]
    if any(a.shape != (len(taxa_ids),) for a in arrays):
        raise ValidationError("taxon-set mismatch between results components")
    beta, p, p_adj, lcl, ucl = arrays
    frame = pd.DataFrame({
        "taxon": taxa_ids, "beta": beta, "lcl": lcl, "ucl": ucl,
        "p": p, "p_adj": p_adj, "significant": p_adj <= fdr,
    })
    frame = frame.sort_values("beta", ascending=False, kind="mergesort").reset_index(drop=True)
    meta = dict(meta or {})
    meta.setdefault("fdr", fdr)
    return ResultsTable(frame, meta)
