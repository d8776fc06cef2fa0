"""Loading, validating and indexing longitudinal count tables."""
from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np
import pandas as pd

from .errors import MalformedInputError, ValidationError

logger = logging.getLogger(__name__)

META_COLUMNS = ("sample_id", "subject_id", "time", "group")


def infer_delimiter(path, delimiter: Optional[str] = None) -> str:
    if delimiter:
        return "\t" if delimiter in ("tab", "\\t") else delimiter
    suffix = Path(path).suffix.lower()
    if suffix in (".csv",):
        return ","
    return "\t"


def _read_text(path) -> str:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise MalformedInputError(f"cannot read {path}: {exc}") from exc
    try:
        text = raw.decode("utf-8-sig")
    except UnicodeDecodeError as exc:
        raise MalformedInputError(f"{path} is not valid UTF-8: {exc}") from exc
    return text.replace("\r\n", "\n")


@dataclass(frozen=True, eq=False)
class CountMatrix:
    """Integer abundance table with taxa in rows and samples in columns."""

    taxa_ids: tuple
    sample_ids: tuple
    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts)
        object.__setattr__(self, "taxa_ids", tuple(str(t) for t in self.taxa_ids))
        object.__setattr__(self, "sample_ids", tuple(str(s) for s in self.sample_ids))
        if counts.ndim != 2:
            raise ValidationError("count matrix must be two-dimensional")
        if counts.shape[0] == 0:
            raise ValidationError("no taxa")
        if counts.shape[1] == 0:
            raise ValidationError("no samples")
        if counts.shape != (len(self.taxa_ids), len(self.sample_ids)):
            raise ValidationError(
                f"count shape {counts.shape} does not match "
                f"{len(self.taxa_ids)} taxa x {len(self.sample_ids)} samples"
            )
        if not np.issubdtype(counts.dtype, np.integer):
            if not np.all(np.isfinite(counts)) or np.any(counts != np.round(counts)):
                raise ValidationError("counts must be integers")
        if np.any(counts < 0):
            r, c = np.argwhere(counts < 0)[0]
            raise ValidationError(
                f"negative count at taxon {self.taxa_ids[r]!r}, sample {self.sample_ids[c]!r}"
            )
        _require_unique(self.taxa_ids, "taxon")
        _require_unique(self.sample_ids, "sample")
        counts = counts.astype(np.int64)
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def shape(self) -> tuple[int, int]:
        return self.counts.shape


def _require_unique(ids: Sequence[str], what: str) -> None:
    seen = set()
    dup = [x for x in ids if x in seen or seen.add(x)]
    if dup:
        raise ValidationError(f"duplicate {what} ids: {sorted(set(dup))[:5]}")


@dataclass(frozen=True, eq=False)
class SampleTable:
    """Per-sample design: subject, integer time rank and a binary group."""

    sample_ids: tuple
    subject_ids: tuple
    times: np.ndarray
    groups: np.ndarray
    group_labels: tuple = ("0", "1")

    def __post_init__(self):
        object.__setattr__(self, "sample_ids", tuple(str(s) for s in self.sample_ids))
        object.__setattr__(self, "subject_ids", tuple(str(s) for s in self.subject_ids))
        times = np.asarray(self.times, dtype=np.int64)
        groups = np.asarray(self.groups, dtype=np.int64)
        n = len(self.sample_ids)
        if not (len(self.subject_ids) == n == len(times) == len(groups)):
            raise ValidationError("sample table columns have unequal lengths")
        if n == 0:
            raise ValidationError("sample table is empty")
        if not np.all(np.isin(groups, (0, 1))):
            raise ValidationError("group must be coded 0/1")
        _require_unique(self.sample_ids, "sample")
        pairs = set()
        subject_group: dict = {}
        for sid, subj, t, g in zip(self.sample_ids, self.subject_ids, times, groups):
            if (subj, t) in pairs:
                raise ValidationError(f"duplicate (subject, time) = ({subj!r}, {t})")
            pairs.add((subj, t))
            if subject_group.setdefault(subj, g) != g:
                raise ValidationError(f"subject {subj!r} has more than one group label")
        times.setflags(write=False)
        groups.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "groups", groups)

    def __len__(self) -> int:
        return len(self.sample_ids)


@dataclass(frozen=True)
class SubjectView:
    subject_id: str
    group: int
    columns: np.ndarray

    @property
    def q(self) -> int:
        return len(self.columns)


@dataclass(frozen=True, eq=False)
class LongitudinalDataset:
    """Counts joined to the design, with columns grouped by subject and sorted by time.

    Columns are stored so that every subject occupies a contiguous run
    ``offsets[j]:offsets[j + 1]``. Resampling never moves a column out of its
    subject's run, which keeps the group label attached to each position.
    """

    taxa_ids: tuple
    sample_ids: tuple
    counts: np.ndarray
    subject_ids: tuple
    subject_groups: np.ndarray
    offsets: np.ndarray
    times: np.ndarray
    group_labels: tuple = ("0", "1")
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for name in ("counts", "subject_groups", "offsets", "times"):
            arr = np.asarray(getattr(self, name))
            if arr.flags.writeable:
                arr = arr.copy()
                arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.offsets[0] != 0 or self.offsets[-1] != self.counts.shape[1]:
            raise ValidationError("subject offsets do not cover the sample columns")
        if np.any(np.diff(self.offsets) < 1):
            raise ValidationError("every subject needs at least one sample")
        for j in range(self.n_subjects):
            t = self.times[self.offsets[j]:self.offsets[j + 1]]
            if np.any(np.diff(t) <= 0):
                raise ValidationError(
                    f"time ranks within subject {self.subject_ids[j]!r} must be strictly increasing"
                )

    # sizes -----------------------------------------------------------------
    @property
    def m(self) -> int:
        return self.counts.shape[0]

    @property
    def N(self) -> int:
        return self.counts.shape[1]

    @property
    def n_subjects(self) -> int:
        return len(self.subject_ids)

    @property
    def q(self) -> np.ndarray:
        return np.diff(self.offsets)

    @property
    def equal_q(self) -> bool:
        return bool(np.all(self.q == self.q[0]))

    # per-column views --------------------------------------------------------
    @property
    def column_subject(self) -> np.ndarray:
        if "column_subject" not in self._cache:
            self._cache["column_subject"] = np.repeat(np.arange(self.n_subjects), self.q)
        return self._cache["column_subject"]

    @property
    def column_group(self) -> np.ndarray:
        return self.subject_groups[self.column_subject]

    @property
    def column_rank(self) -> np.ndarray:
        """0-based position of each column within its subject's series."""
        return np.arange(self.N) - np.repeat(self.offsets[:-1], self.q)

    @property
    def subjects(self) -> list:
        return [
            SubjectView(
                self.subject_ids[j],
                int(self.subject_groups[j]),
                np.arange(self.offsets[j], self.offsets[j + 1]),
            )
            for j in range(self.n_subjects)
        ]

    def iter_series(self) -> Iterator[tuple[int, np.ndarray]]:
        for j in range(self.n_subjects):
            yield j, self.counts[:, self.offsets[j]:self.offsets[j + 1]]

    # derived datasets ----------------------------------------------------------
    def with_counts(self, counts: np.ndarray) -> "LongitudinalDataset":
        counts = np.asarray(counts)
        if counts.shape != self.counts.shape:
            raise ValidationError("replacement counts must keep the dataset shape")
        return LongitudinalDataset(
            self.taxa_ids, self.sample_ids, counts, self.subject_ids,
            self.subject_groups, self.offsets, self.times, self.group_labels,
        )

    def select_taxa(self, keep) -> "LongitudinalDataset":
        keep = np.asarray(keep)
        if keep.dtype == bool:
            keep = np.flatnonzero(keep)
        if keep.size == 0:
            raise ValidationError("empty after filtering")
        return LongitudinalDataset(
            tuple(self.taxa_ids[i] for i in keep), self.sample_ids, self.counts[keep],
            self.subject_ids, self.subject_groups, self.offsets, self.times, self.group_labels,
        )

    def select_windows(self, windows: Sequence[tuple[int, int]]) -> "LongitudinalDataset":
        """Keep observations ``start:stop`` (0-based ranks) of every subject."""
        cols, offsets = [], [0]
        for j, (start, stop) in enumerate(windows):
            base = self.offsets[j]
            q = self.offsets[j + 1] - base
            if not 0 <= start < stop <= q:
                raise ValidationError(f"window {start}:{stop} outside subject of length {q}")
            cols.append(np.arange(base + start, base + stop))
            offsets.append(offsets[-1] + stop - start)
        cols = np.concatenate(cols)
        return LongitudinalDataset(
            self.taxa_ids, tuple(self.sample_ids[c] for c in cols), self.counts[:, cols],
            self.subject_ids, self.subject_groups, np.asarray(offsets), self.times[cols],
            self.group_labels,
        )

    def group_sizes(self) -> tuple[int, int]:
        g = self.column_group
        return int(np.sum(g == 0)), int(np.sum(g == 1))

    def count_matrix(self) -> CountMatrix:
        return CountMatrix(self.taxa_ids, self.sample_ids, self.counts)

    def sample_table(self) -> SampleTable:
        return SampleTable(
            self.sample_ids,
            tuple(self.subject_ids[j] for j in self.column_subject),
            self.times,
            self.column_group,
            self.group_labels,
        )

    def to_frames(self) -> tuple[pd.DataFrame, pd.DataFrame]:
        counts = pd.DataFrame(self.counts, index=pd.Index(self.taxa_ids, name="taxon"),
                              columns=list(self.sample_ids))
        meta = pd.DataFrame({
            "sample_id": self.sample_ids,
            "subject_id": [self.subject_ids[j] for j in self.column_subject],
            "time": self.times,
            "group": [self.group_labels[g] for g in self.column_group],
        })
        return counts, meta

    def serialize(self) -> bytes:
        """Canonical byte form used for reproducibility checks."""
        counts, meta = self.to_frames()
        buf = io.StringIO()
        counts.to_csv(buf, sep="\t", lineterminator="\n")
        meta.to_csv(buf, sep="\t", index=False, lineterminator="\n")
        return buf.getvalue().encode()


# file parsing -----------------------------------------------------------------

def load_counts(path, delimiter: Optional[str] = None) -> CountMatrix:
    """Read a taxa x samples integer table (first column taxon id, header sample ids)."""
    sep = infer_delimiter(path, delimiter)
    text = _read_text(path)
    lines = [ln for ln in text.split("\n") if ln.strip() != ""]
    if not lines:
        raise MalformedInputError(f"{path}: empty file")
    header = lines[0].split(sep)
    if len(header) < 2:
        raise MalformedInputError(f"{path}: header row needs a taxon column and at least one sample")
    sample_ids = [h.strip() for h in header[1:]]
    if len(lines) == 1:
        raise ValidationError(f"{path}: no taxa")
    taxa, rows = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        cells = line.split(sep)
        if len(cells) != len(header):
            raise MalformedInputError(
                f"{path}: row {lineno} has {len(cells)} fields, expected {len(header)}"
            )
        taxa.append(cells[0].strip())
        row = []
        for col, cell in enumerate(cells[1:], start=2):
            value = _parse_count(cell.strip(), path, lineno, col, sample_ids[col - 2])
            row.append(value)
        rows.append(row)
    return CountMatrix(tuple(taxa), tuple(sample_ids), np.asarray(rows, dtype=np.int64))


def _parse_count(cell: str, path, row: int, col: int, sample: str) -> int:
    try:
        value = float(cell)
    except ValueError:
        raise MalformedInputError(
            f"{path}: row {row}, column {col} ({sample}): cannot parse {cell!r} as a count"
        ) from None
    if not np.isfinite(value) or value != int(value):
        raise ValidationError(f"{path}: row {row}, column {col} ({sample}): non-integer count {cell!r}")
    if value < 0:
        raise ValidationError(f"{path}: row {row}, column {col} ({sample}): negative count {cell!r}")
    return int(value)


def encode_groups(labels: Sequence[str], reference: Optional[str] = None) -> tuple[np.ndarray, tuple]:
    """Map two group labels onto 0/1; ``reference`` (default: lexicographically smaller) becomes 0."""
    levels = sorted(set(str(x) for x in labels))
    if len(levels) > 2:
        raise ValidationError(f"group must have at most two levels, found {levels}")
    if reference is not None:
        reference = str(reference)
        if reference not in levels:
            raise ValidationError(f"reference level {reference!r} not among group labels {levels}")
        levels = [reference] + [x for x in levels if x != reference]
    if len(levels) == 1:
        levels = levels + [levels[0] + "_other"]
    code = {lab: i for i, lab in enumerate(levels)}
    return np.array([code[str(x)] for x in labels], dtype=np.int64), tuple(levels)


def load_metadata(path, delimiter: Optional[str] = None, reference: Optional[str] = None) -> SampleTable:
    """Read sample metadata with named columns sample_id, subject_id, time, group."""
    sep = infer_delimiter(path, delimiter)
    text = _read_text(path)
    try:
        frame = pd.read_csv(io.StringIO(text), sep=sep, dtype=str, keep_default_na=False)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise MalformedInputError(f"{path}: {exc}") from exc
    frame.columns = [c.strip() for c in frame.columns]
    missing = [c for c in META_COLUMNS if c not in frame.columns]
    if missing:
        raise MalformedInputError(f"{path}: missing metadata columns {missing}")
    times = []
    for i, t in enumerate(frame["time"], start=2):
        try:
            value = float(t)
        except ValueError:
            raise MalformedInputError(f"{path}: row {i}, column 'time': cannot parse {t!r}") from None
        if value != int(value):
            raise ValidationError(f"{path}: row {i}, column 'time': time must be an integer rank")
        times.append(int(value))
    labels = [s.strip() for s in frame["group"]]
    subjects = [s.strip() for s in frame["subject_id"]]
    per_subject: dict = {}
    for subj, lab in zip(subjects, labels):
        if per_subject.setdefault(subj, lab) != lab:
            raise ValidationError(f"subject {subj!r} is labeled both {per_subject[subj]!r} and {lab!r}")
    groups, levels = encode_groups(labels, reference)
    return SampleTable(
        tuple(s.strip() for s in frame["sample_id"]), tuple(subjects),
        np.asarray(times), groups, levels,
    )


def assemble(counts: CountMatrix, meta: SampleTable) -> LongitudinalDataset:
    """Join counts to metadata and order columns by (subject, time)."""
    cset, mset = set(counts.sample_ids), set(meta.sample_ids)
    if cset != mset:
        diff = sorted(cset ^ mset)
        raise ValidationError(f"sample ids differ between counts and metadata: {diff[:10]}"
                              + (" ..." if len(diff) > 10 else ""))
    # subjects keep the order of first appearance in the metadata
    subject_order: dict = {}
    for s in meta.subject_ids:
        subject_order.setdefault(s, len(subject_order))
    rows = sorted(range(len(meta)), key=lambda k: (subject_order[meta.subject_ids[k]], meta.times[k]))
    col_of = {s: i for i, s in enumerate(counts.sample_ids)}
    sample_ids = tuple(meta.sample_ids[k] for k in rows)
    cols = np.array([col_of[s] for s in sample_ids])
    subj_ids = tuple(subject_order)
    q = np.bincount([subject_order[meta.subject_ids[k]] for k in rows], minlength=len(subj_ids))
    groups = np.zeros(len(subj_ids), dtype=np.int64)
    for k in rows:
        groups[subject_order[meta.subject_ids[k]]] = meta.groups[k]
    return LongitudinalDataset(
        taxa_ids=counts.taxa_ids,
        sample_ids=sample_ids,
        counts=counts.counts[:, cols],
        subject_ids=subj_ids,
        subject_groups=groups,
        offsets=np.concatenate([[0], np.cumsum(q)]),
        times=meta.times[rows],
        group_labels=meta.group_labels,
    )


def from_arrays(counts, subjects, times, groups, taxa_ids=None, sample_ids=None,
                group_labels=("0", "1")) -> LongitudinalDataset:
    """Build a dataset directly from arrays (simulation and tests)."""
    counts = np.asarray(counts)
    m, n = counts.shape
    taxa_ids = taxa_ids or tuple(f"taxon_{i + 1}" for i in range(m))
    sample_ids = sample_ids or tuple(f"s{k + 1}" for k in range(n))
    cm = CountMatrix(tuple(taxa_ids), tuple(sample_ids), counts)
    meta = SampleTable(tuple(sample_ids), tuple(str(s) for s in subjects), times, groups, group_labels)
    return assemble(cm, meta)


def prevalence_filter(ds: LongitudinalDataset, threshold: float) -> LongitudinalDataset:
    """Keep taxa present (count > 0) in at least ``threshold`` of the samples."""
    if not 0 < threshold < 1:
        raise ValidationError(f"prevalence threshold must lie in (0, 1), got {threshold}")
    prevalence = np.count_nonzero(ds.counts > 0, axis=1) / ds.N
    keep = prevalence >= threshold
    if not keep.any():
        raise ValidationError("empty after filtering")
    logger.info("prevalence filter kept %d of %d taxa", keep.sum(), ds.m)
    return ds.select_taxa(keep)
