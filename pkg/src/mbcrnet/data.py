"""ECG record files, preprocessing and stratified fold assignment."""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, TextIO, Tuple, Union

import numpy as np

from . import container
from .model import CANONICAL_LEADS

NORMAL_LABELS = ("normal electrocardiogram", "normal sinus rhythm")
MIN_SECONDS = 8
TARGET_HZ = 250


class RecordFormatError(ValueError):
    """Malformed record file; the message carries the offending line number."""


@dataclass
class EcgRecord:
    id: str
    sample_rate_hz: int
    lead_names: List[str]
    samples: np.ndarray  # [n_leads, n_samples]
    label_text: str = ""
    label: Optional[int] = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2:
            raise ValueError("samples must be a [n_leads, n_samples] matrix")
        if self.samples.shape[0] != len(self.lead_names):
            raise ValueError(
                f"{len(self.lead_names)} lead names for {self.samples.shape[0]} sample rows"
            )
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")

    @property
    def n_leads(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_seconds(self) -> float:
        return self.n_samples / self.sample_rate_hz

    def __eq__(self, other):
        if not isinstance(other, EcgRecord):
            return NotImplemented
        return (
            self.id == other.id
            and self.sample_rate_hz == other.sample_rate_hz
            and list(self.lead_names) == list(other.lead_names)
            and self.label_text == other.label_text
            and self.label == other.label
            and self.samples.shape == other.samples.shape
            and np.array_equal(self.samples, other.samples, equal_nan=True)
        )


# ------------------------------------------------------------------ file I/O


def _split(line: str) -> List[str]:
    return next(csv.reader([line]))


def parse_record(stream: Union[TextIO, str]) -> EcgRecord:
    """Read one record from a text stream (or a string holding the file)."""
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    header = stream.readline()
    if not header.strip():
        raise RecordFormatError("line 1: missing header")
    fields = _split(header.rstrip("\r\n"))
    if len(fields) != 5:
        raise RecordFormatError(
            f"line 1: header needs id,sample_rate_hz,n_leads,n_samples,label_text; got {len(fields)} fields"
        )
    rec_id, rate, n_leads, n_samples, label_text = fields
    try:
        rate_i, leads_i, samples_i = int(rate), int(n_leads), int(n_samples)
    except ValueError:
        raise RecordFormatError("line 1: sample_rate_hz, n_leads and n_samples must be integers") from None
    if rate_i <= 0 or leads_i <= 0 or samples_i < 0:
        raise RecordFormatError("line 1: sample_rate_hz and n_leads must be positive")
    names_line = stream.readline()
    if not names_line.strip():
        raise RecordFormatError("line 2: missing lead names")
    names = [n.strip() for n in _split(names_line.rstrip("\r\n"))]
    if len(names) != leads_i:
        raise RecordFormatError(f"line 2: expected {leads_i} lead names, got {len(names)}")

    samples = np.empty((samples_i, leads_i))
    row = 0
    for lineno, line in enumerate(stream, start=3):
        if not line.strip():
            continue
        if row >= samples_i:
            raise RecordFormatError(f"line {lineno}: more sample rows than n_samples={samples_i}")
        cells = line.rstrip("\r\n").split(",")
        if len(cells) != leads_i:
            raise RecordFormatError(
                f"line {lineno}: ragged row, expected {leads_i} values, got {len(cells)}"
            )
        try:
            samples[row] = [float(c) for c in cells]
        except ValueError:
            raise RecordFormatError(f"line {lineno}: non-numeric value") from None
        row += 1
    if row != samples_i:
        raise RecordFormatError(f"line {row + 3}: expected {samples_i} sample rows, got {row}")

    label = map_label(label_text) if label_text.strip() else None
    return EcgRecord(rec_id, rate_i, names, samples.T.copy(), label_text, label)


def format_record(record: EcgRecord) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        [record.id, record.sample_rate_hz, record.n_leads, record.n_samples, record.label_text]
    )
    writer.writerow(record.lead_names)
    for col in record.samples.T:
        buf.write(",".join(repr(float(v)) for v in col))
        buf.write("\n")
    return buf.getvalue()


def read_record(path: Union[str, os.PathLike]) -> EcgRecord:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        try:
            return parse_record(fh)
        except RecordFormatError as exc:
            raise RecordFormatError(f"{path}: {exc}") from None


def write_record(record: EcgRecord, path: Union[str, os.PathLike]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(format_record(record))


def read_manifest(path: Union[str, os.PathLike]) -> List[Path]:
    """Record paths listed one per line; relative entries resolve against the manifest's directory."""
    base = Path(path).parent
    with open(path, "r", encoding="utf-8") as fh:
        entries = [line.strip() for line in fh if line.strip()]
    return [p if p.is_absolute() else base / p for p in map(Path, entries)]


def write_manifest(paths: Iterable[Union[str, os.PathLike]], path: Union[str, os.PathLike]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for p in paths:
            fh.write(f"{p}\n")


# ------------------------------------------------------------ preprocessing


def map_label(label_text: str) -> int:
    """0 for the two normal diagnoses, 1 for anything else."""
    norm = " ".join(label_text.split()).lower()
    if not norm:
        raise ValueError("missing label")
    return 0 if norm in NORMAL_LABELS else 1


def filter_valid(
    records: Iterable[EcgRecord],
    min_seconds: float = MIN_SECONDS,
    required_leads: Sequence[str] = CANONICAL_LEADS,
) -> Tuple[List[EcgRecord], List[Tuple[EcgRecord, str]]]:
    kept, rejected = [], []
    for rec in records:
        missing = [name for name in required_leads if name not in rec.lead_names]
        if missing:
            rejected.append((rec, f"missing lead {missing[0]}"))
        elif rec.duration_seconds < min_seconds:
            rejected.append((rec, "too short"))
        elif not np.all(np.isfinite(rec.samples)):
            rejected.append((rec, "invalid"))
        else:
            kept.append(rec)
    return kept, rejected


def downsample(record: EcgRecord, target_hz: int = TARGET_HZ) -> EcgRecord:
    """Plain decimation: keep every k-th sample from index 0."""
    if target_hz <= 0 or record.sample_rate_hz % target_hz:
        raise ValueError(
            f"cannot decimate {record.sample_rate_hz} Hz to {target_hz} Hz by an integer factor"
        )
    k = record.sample_rate_hz // target_hz
    return replace(record, sample_rate_hz=target_hz, samples=record.samples[:, ::k].copy())


def select_leads(record: EcgRecord, leads: Sequence[str] = CANONICAL_LEADS) -> EcgRecord:
    index = {name: i for i, name in enumerate(record.lead_names)}
    for name in leads:
        if name not in index:
            raise ValueError(f"missing lead {name}")
    rows = [index[name] for name in leads]
    return replace(record, lead_names=list(leads), samples=record.samples[rows].copy())


def window(record: EcgRecord, seconds: int = MIN_SECONDS) -> np.ndarray:
    """Leading ``seconds`` of every lead as ``[n_leads, seconds * rate]``."""
    n = seconds * record.sample_rate_hz
    if record.n_samples < n:
        raise ValueError(
            f"record {record.id} has {record.n_samples} samples, window needs {n}"
        )
    return record.samples[:, :n].copy()


def preprocess(record: EcgRecord, target_hz: int = TARGET_HZ, seconds: int = MIN_SECONDS) -> np.ndarray:
    """downsample -> select_leads -> window; validity is checked by :func:`filter_valid`."""
    return window(select_leads(downsample(record, target_hz)), seconds)


def preprocess_records(records: Iterable[EcgRecord]):
    """Run the full pipeline.

    Returns ``(ids, X[N,8,2000], y, rejected)`` where ``rejected`` lists
    ``(id, reason)`` pairs.
    """
    kept, rejected = filter_valid(records)
    ids, xs, ys = [], [], []
    for rec in kept:
        label = rec.label if rec.label is not None else map_label(rec.label_text)
        ids.append(rec.id)
        xs.append(preprocess(rec))
        ys.append(label)
    X = np.stack(xs) if xs else np.empty((0, len(CANONICAL_LEADS), TARGET_HZ * MIN_SECONDS))
    return ids, X, np.asarray(ys, dtype=np.int64), [(r.id, why) for r, why in rejected]


def fit_length(X: np.ndarray, time_len: int) -> np.ndarray:
    """Shrink the time axis of ``X[..., T]`` to ``time_len`` by block averaging.

    ``T`` must be an integer multiple of ``time_len``.
    """
    t = X.shape[-1]
    if t == time_len:
        return X
    if t % time_len:
        raise ValueError(f"time extent {t} is not a multiple of {time_len}")
    k = t // time_len
    return X.reshape(X.shape[:-1] + (time_len, k)).mean(axis=-1)


# ---------------------------------------------------------------- caching


def save_cache(path, ids: Sequence[str], X: np.ndarray, y: np.ndarray) -> None:
    tensors = []
    for rid, x, label in zip(ids, X, y):
        tensors.append((f"signal/{rid}", x))
        tensors.append((f"label/{rid}", np.array([float(label)])))
    container.save(path, {"kind": "cache", "count": len(ids)}, tensors)


def load_cache(path):
    meta, tensors = container.load(path)
    if meta.get("kind") != "cache":
        raise container.ContainerError(f"{path}: not a preprocessed cache")
    ids = [name[len("signal/"):] for name in tensors if name.startswith("signal/")]
    X = np.stack([tensors[f"signal/{i}"] for i in ids]) if ids else np.empty((0, 8, 2000))
    y = np.array([int(tensors[f"label/{i}"][0]) for i in ids], dtype=np.int64)
    return ids, X, y


# ------------------------------------------------------------------ folds


def balance_classes(ids: Sequence[str], labels: Sequence[int], seed: int = 0):
    """Randomly subsample the majority class down to the minority count.

    Returns the kept ``(ids, labels)`` in their original relative order.
    """
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    by_class = [np.flatnonzero(labels == c) for c in (0, 1)]
    n = min(len(idx) for idx in by_class)
    keep = np.sort(np.concatenate([np.sort(rng.permutation(idx)[:n]) for idx in by_class]))
    return [ids[i] for i in keep], labels[keep]


@dataclass
class FoldPlan:
    seed: int
    n_folds: int
    assignments: Dict[str, int] = field(default_factory=dict)

    def test_ids(self, fold: int) -> List[str]:
        return [i for i, f in self.assignments.items() if f == fold]

    def train_ids(self, fold: int) -> List[str]:
        return [i for i, f in self.assignments.items() if f != fold]

    def masks(self, ids: Sequence[str], fold: int) -> Tuple[np.ndarray, np.ndarray]:
        test = np.array([self.assignments[i] == fold for i in ids])
        return ~test, test


def make_folds(ids: Sequence[str], labels: Sequence[int], seed: int = 0, n_folds: int = 10) -> FoldPlan:
    """Stratified round-robin after a seeded per-class shuffle.

    When the two classes differ in size by at most one, every fold's
    normal and abnormal counts differ by at most one.
    """
    if len(ids) != len(labels):
        raise ValueError("ids and labels differ in length")
    if len(set(ids)) != len(ids):
        raise ValueError("record ids must be unique")
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    plan = FoldPlan(seed=seed, n_folds=n_folds)
    for c in (0, 1):
        idx = np.flatnonzero(labels == c)
        if len(idx) < n_folds:
            raise ValueError(
                f"class {c} has {len(idx)} samples; {n_folds} folds need at least {n_folds}"
            )
        for pos, i in enumerate(rng.permutation(idx)):
            plan.assignments[ids[i]] = pos % n_folds
    return plan
