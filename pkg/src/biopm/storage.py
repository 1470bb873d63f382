"""Binary artifact formats: windows, tokens, embeddings, checkpoints.

All files are little-endian with explicit magic bytes. Windows/tokens/
embeddings carry {format version, config hash, seed} in a common header;
the checkpoint layout is fixed (magic, tensor table, trailing step counter)
and its config hash lives in a sidecar .meta file.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .data import Window
from .tokenize import TokenSequence

FORMAT_VERSION = 1


class FormatError(ValueError):
    pass


def _write_header(fh, magic: bytes, config_hash: str, seed: int) -> None:
    fh.write(magic)
    fh.write(struct.pack("<H", FORMAT_VERSION))
    fh.write(struct.pack("<q", seed))
    h = config_hash.encode()
    fh.write(struct.pack("<H", len(h)))
    fh.write(h)


def _read_header(fh, magic: bytes) -> tuple[str, int]:
    got = fh.read(len(magic))
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}")
    version, = struct.unpack("<H", fh.read(2))
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}")
    seed, = struct.unpack("<q", fh.read(8))
    hlen, = struct.unpack("<H", fh.read(2))
    config_hash = fh.read(hlen).decode()
    return config_hash, seed


def _write_str(fh, s: str) -> None:
    b = s.encode()
    fh.write(struct.pack("<H", len(b)))
    fh.write(b)


def _read_str(fh) -> str:
    n, = struct.unpack("<H", fh.read(2))
    return fh.read(n).decode()


# ---------------------------------------------------------------------------
# windows (BWIN1)


def save_windows(path: str | Path, windows: list[Window], config_hash: str,
                 seed: int) -> None:
    with open(path, "wb") as fh:
        _write_header(fh, b"BWIN1", config_hash, seed)
        fh.write(struct.pack("<I", len(windows)))
        for w in windows:
            _write_str(fh, w.subject_id)
            lab = -1 if w.label is None else int(w.label)
            fh.write(struct.pack("<Iidd", w.index, lab, w.start_time_s,
                                 w.sample_rate_hz))
            fh.write(struct.pack("<I", w.data.shape[0]))
            fh.write(w.data.astype("<f4").tobytes())


def load_windows(path: str | Path,
                 expect_hash: str | None = None) -> tuple[list[Window], str, int]:
    with open(path, "rb") as fh:
        config_hash, seed = _read_header(fh, b"BWIN1")
        if expect_hash is not None and config_hash != expect_hash:
            raise FormatError(
                f"config hash mismatch: file {config_hash}, run {expect_hash}")
        count, = struct.unpack("<I", fh.read(4))
        out = []
        for _ in range(count):
            subj = _read_str(fh)
            index, lab, start, rate = struct.unpack("<Iidd", fh.read(24))
            t, = struct.unpack("<I", fh.read(4))
            data = np.frombuffer(fh.read(t * 3 * 4), dtype="<f4")
            data = data.reshape(t, 3).astype(np.float64)
            out.append(Window(subject_id=subj, index=index, data=data,
                              sample_rate_hz=rate, duration_s=t / rate,
                              label=None if lab < 0 else lab,
                              start_time_s=start))
    return out, config_hash, seed


# ---------------------------------------------------------------------------
# tokens (BSEG1)


def save_tokens(path: str | Path, seqs: list[TokenSequence],
                labels: list[int | None], sample_rate_hz: float,
                window_s: float, config_hash: str, seed: int) -> None:
    with open(path, "wb") as fh:
        _write_header(fh, b"BSEG1", config_hash, seed)
        fh.write(struct.pack("<dd", sample_rate_hz, window_s))
        fh.write(struct.pack("<I", len(seqs)))
        for seq, lab in zip(seqs, labels):
            _write_str(fh, seq.window_ref[0])
            fh.write(struct.pack("<Ii", seq.window_ref[1],
                                 -1 if lab is None else int(lab)))
            fh.write(struct.pack("<I", seq.n))
            for j in range(seq.n):
                ms = int(round(seq.times_s[j] * 1000.0))
                fh.write(struct.pack("<BHH", int(seq.axes[j]),
                                     int(seq.durations[j]), ms))
                fh.write(np.asarray(seq.waveforms[j], dtype="<f4").tobytes())


def load_tokens(path: str | Path, expect_hash: str | None = None):
    """Returns (seqs, labels, sample_rate_hz, window_s, config_hash, seed)."""
    with open(path, "rb") as fh:
        config_hash, seed = _read_header(fh, b"BSEG1")
        if expect_hash is not None and config_hash != expect_hash:
            raise FormatError(
                f"config hash mismatch: file {config_hash}, run {expect_hash}")
        rate, window_s = struct.unpack("<dd", fh.read(16))
        count, = struct.unpack("<I", fh.read(4))
        seqs, labels = [], []
        for _ in range(count):
            subj = _read_str(fh)
            index, lab = struct.unpack("<Ii", fh.read(8))
            n, = struct.unpack("<I", fh.read(4))
            axes = np.empty(n, dtype=np.int64)
            durs = np.empty(n, dtype=np.int64)
            times = np.empty(n)
            wfs = np.empty((n, 32))
            for j in range(n):
                axis, dur, ms = struct.unpack("<BHH", fh.read(5))
                wfs[j] = np.frombuffer(fh.read(32 * 4),
                                       dtype="<f4").astype(np.float64)
                axes[j], durs[j], times[j] = axis, dur, ms / 1000.0
            starts = np.round(times * rate - durs / 2.0).astype(np.int64)
            seqs.append(TokenSequence(
                window_ref=(subj, index), waveforms=wfs, axes=axes,
                starts=starts, durations=durs, times_s=times,
                merged=np.zeros(n, dtype=bool)))
            labels.append(None if lab < 0 else lab)
    return seqs, labels, rate, window_s, config_hash, seed


# ---------------------------------------------------------------------------
# embeddings (BEMB1)


def save_embeddings(path: str | Path, refs: list[tuple[str, int]],
                    labels: list[int | None], features: np.ndarray,
                    config_hash: str, seed: int) -> None:
    features = np.asarray(features)
    with open(path, "wb") as fh:
        _write_header(fh, b"BEMB1", config_hash, seed)
        fh.write(struct.pack("<II", features.shape[1], features.shape[0]))
        for (subj, idx), lab, row in zip(refs, labels, features):
            _write_str(fh, subj)
            fh.write(struct.pack("<Ii", idx, -1 if lab is None else int(lab)))
            fh.write(row.astype("<f4").tobytes())


def load_embeddings(path: str | Path, expect_hash: str | None = None):
    """Returns (refs, labels, features, dim, config_hash, seed)."""
    with open(path, "rb") as fh:
        config_hash, seed = _read_header(fh, b"BEMB1")
        if expect_hash is not None and config_hash != expect_hash:
            raise FormatError(
                f"config hash mismatch: file {config_hash}, run {expect_hash}")
        dim, count = struct.unpack("<II", fh.read(8))
        refs, labels, rows = [], [], []
        for _ in range(count):
            subj = _read_str(fh)
            idx, lab = struct.unpack("<Ii", fh.read(8))
            row = np.frombuffer(fh.read(dim * 4), dtype="<f4")
            refs.append((subj, idx))
            labels.append(None if lab < 0 else lab)
            rows.append(row.astype(np.float64))
    feats = np.stack(rows) if rows else np.zeros((0, dim))
    return refs, labels, feats, dim, config_hash, seed


# ---------------------------------------------------------------------------
# checkpoints (BIOPM1)


def save_checkpoint(path: str | Path, params: dict[str, np.ndarray],
                    step: int, config_hash: str = "", seed: int = 0) -> None:
    with open(path, "wb") as fh:
        fh.write(b"BIOPM1")
        fh.write(struct.pack("<I", len(params)))
        for name in sorted(params):
            tensor = np.asarray(params[name])
            nb = name.encode()
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", tensor.ndim))
            for dim in tensor.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(tensor.astype("<f4").tobytes())
        fh.write(struct.pack("<Q", step))
    meta = {"format_version": FORMAT_VERSION, "config_hash": config_hash,
            "seed": seed, "step": step}
    Path(str(path) + ".meta").write_text(json.dumps(meta, sort_keys=True))


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], int]:
    with open(path, "rb") as fh:
        magic = fh.read(6)
        if magic != b"BIOPM1":
            raise FormatError(f"bad checkpoint magic {magic!r}")
        count, = struct.unpack("<I", fh.read(4))
        params = {}
        for _ in range(count):
            nlen, = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode()
            rank, = struct.unpack("<B", fh.read(1))
            dims = [struct.unpack("<I", fh.read(4))[0] for _ in range(rank)]
            size = int(np.prod(dims)) if dims else 1
            data = np.frombuffer(fh.read(size * 4), dtype="<f4")
            params[name] = data.reshape(dims).astype(np.float64)
        step, = struct.unpack("<Q", fh.read(8))
    return params, step


# ---------------------------------------------------------------------------
# structured-text logs


def append_jsonl(path: str | Path, record: dict) -> None:
    with open(path, "a") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_jsonl(path: str | Path) -> list[dict]:
    p = Path(path)
    if not p.exists():
        return []
    return [json.loads(line) for line in p.read_text().splitlines() if line]
