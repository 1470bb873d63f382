"""Recording ingest: CSV loading, unit conversion, resampling, windowing, QC."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

G_PER_MS2 = 1.0 / 9.80665

UNLABELED = -1


class SchemaError(ValueError):
    pass


class ParseError(ValueError):
    pass


class TooShortError(ValueError):
    pass


@dataclass
class RawRecording:
    subject_id: str
    sample_rate_hz: float
    samples: np.ndarray                   # (n, 3) in g after normalization
    labels: np.ndarray | None = None      # (n,) int class ids, UNLABELED allowed
    source_name: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")
        if self.samples.ndim != 2 or self.samples.shape[1] != 3:
            raise ValueError("samples must be (n, 3)")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if len(self.labels) != len(self.samples):
                raise ValueError("labels must align 1:1 with samples")


@dataclass
class Window:
    subject_id: str
    index: int
    data: np.ndarray                      # (T, 3) in g
    sample_rate_hz: float
    duration_s: float = 10.0
    label: int | None = None
    start_time_s: float = 0.0


@dataclass
class DatasetManifest:
    dataset_name: str
    recordings: list[RawRecording] = field(default_factory=list)
    class_names: tuple[str, ...] = ()
    target_hz: float = 80.0


def load_csv_dataset(path: str | Path, schema: dict) -> list[RawRecording]:
    """Read one CSV into per-subject recordings, preserving row order.

    schema keys: subject, x, y, z, optional label; plus sample_rate_hz and
    optional class_names (label-string -> id mapping is positional in
    class_names; integer labels pass through).
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    required = ("subject", "x", "y", "z")
    for key in required:
        if key not in schema:
            raise SchemaError(f"schema missing '{key}' column name")
    label_col = schema.get("label") or None
    rate = float(schema.get("sample_rate_hz", 80.0))
    class_names = list(schema.get("class_names", ()))

    by_subject: dict[str, list] = {}
    label_by_subject: dict[str, list] = {}
    order: list[str] = []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for key in required:
            if schema[key] not in header:
                raise SchemaError(f"column '{schema[key]}' not in CSV header {header}")
        if label_col and label_col not in header:
            raise SchemaError(f"label column '{label_col}' not in CSV header")
        for rownum, row in enumerate(reader, start=2):
            subj = row[schema["subject"]]
            try:
                xyz = (float(row[schema["x"]]), float(row[schema["y"]]),
                       float(row[schema["z"]]))
            except (TypeError, ValueError):
                raise ParseError(f"non-numeric sample at row {rownum}") from None
            if subj not in by_subject:
                by_subject[subj] = []
                label_by_subject[subj] = []
                order.append(subj)
            by_subject[subj].append(xyz)
            if label_col:
                raw = row[label_col]
                if raw is None or raw == "":
                    label_by_subject[subj].append(UNLABELED)
                else:
                    try:
                        label_by_subject[subj].append(int(raw))
                    except ValueError:
                        if raw not in class_names:
                            class_names.append(raw)
                        label_by_subject[subj].append(class_names.index(raw))

    recs = []
    for subj in order:
        labels = np.array(label_by_subject[subj]) if label_col else None
        recs.append(RawRecording(subject_id=subj, sample_rate_hz=rate,
                                 samples=np.array(by_subject[subj]),
                                 labels=labels, source_name=path.name))
    return recs


def convert_units_to_g(rec: RawRecording, input_units: str) -> RawRecording:
    if input_units == "g":
        return rec
    if input_units == "m_s2":
        return RawRecording(rec.subject_id, rec.sample_rate_hz,
                            rec.samples * G_PER_MS2, rec.labels, rec.source_name)
    raise ValueError(f"unknown input units: {input_units!r}")


def resample_stream(rec: RawRecording, target_hz: float) -> RawRecording:
    """Per-axis linear interpolation onto a uniform grid at target_hz."""
    n = len(rec.samples)
    if n < 2:
        raise TooShortError("need at least 2 samples to resample")
    src_t = np.arange(n, dtype=np.float64) / rec.sample_rate_hz
    span = src_t[-1]
    n_out = int(np.floor(span * target_hz)) + 1
    dst_t = np.arange(n_out, dtype=np.float64) / target_hz
    out = np.column_stack([np.interp(dst_t, src_t, rec.samples[:, a])
                           for a in range(3)])
    labels = None
    if rec.labels is not None:
        nearest = np.clip(np.round(dst_t * rec.sample_rate_hz).astype(int), 0, n - 1)
        labels = rec.labels[nearest]
    return RawRecording(rec.subject_id, target_hz, out, labels, rec.source_name)


def majority_label(labels: np.ndarray) -> tuple[int, float]:
    """Histogram argmax with ties broken by lowest class id.

    Returns (label, fraction of samples carrying it); UNLABELED rows are
    counted in the denominator but never win.
    """
    valid = labels[labels != UNLABELED]
    if len(valid) == 0:
        return UNLABELED, 0.0
    ids, counts = np.unique(valid, return_counts=True)
    best = ids[np.argmax(counts)]          # np.unique sorts, argmax takes first max
    frac = counts.max() / len(labels)
    return int(best), float(frac)


def make_windows(rec: RawRecording, duration_s: float = 10.0,
                 overlap_fraction: float = 0.0,
                 majority_min_frac: float = 0.5,
                 null_max_frac: float = 0.10,
                 null_labels: frozenset[int] = frozenset()) -> list[Window]:
    """Tile the stream into T-sample windows with majority-vote labels.

    QC drops windows with non-finite samples, a weak label majority, or too
    many null/transition labels. A recording shorter than one window yields
    an empty list.
    """
    if not (0.0 <= overlap_fraction < 1.0):
        raise ValueError("overlap_fraction must be in [0, 1)")
    T = int(round(duration_s * rec.sample_rate_hz))
    step = int(round(T * (1.0 - overlap_fraction)))
    if step < 1:
        raise ValueError("overlap too large: zero step")
    n = len(rec.samples)
    windows = []
    idx = 0
    for start in range(0, n - T + 1, step):
        data = rec.samples[start:start + T]
        if not np.all(np.isfinite(data)):
            continue
        label = None
        if rec.labels is not None:
            wl = rec.labels[start:start + T]
            null_mask = wl == UNLABELED
            for nl in null_labels:
                null_mask |= wl == nl
            if null_mask.mean() >= null_max_frac and null_mask.any():
                continue
            lab, frac = majority_label(np.where(null_mask, UNLABELED, wl))
            if lab == UNLABELED or frac < majority_min_frac:
                continue
            label = lab
        windows.append(Window(subject_id=rec.subject_id, index=idx, data=data,
                              sample_rate_hz=rec.sample_rate_hz,
                              duration_s=duration_s, label=label,
                              start_time_s=start / rec.sample_rate_hz))
        idx += 1
    return windows
