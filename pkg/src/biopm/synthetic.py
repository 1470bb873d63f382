"""Seeded synthetic signal generators used by tests, scripts, and the CLI."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .data import RawRecording, Window

FS = 80.0
WINDOW_S = 10.0
T = int(FS * WINDOW_S)


# ---------------------------------------------------------------------------
# low-level motif builders


def lobe_train(rng: np.random.Generator, n_samples: int, freq_hz: float,
               amp: float, fs: float = FS, jitter: float = 0.1,
               start_sign: float = 1.0) -> np.ndarray:
    """Alternating-sign half-sine lobes; duration jittered per lobe."""
    out = np.zeros(n_samples)
    pos = 0
    sign = start_sign
    while pos < n_samples:
        d = max(3, int(round(fs / (2.0 * freq_hz)
                             * (1.0 + jitter * (rng.random() * 2 - 1)))))
        d = min(d, n_samples - pos)
        t = np.arange(d) / d
        out[pos:pos + d] = sign * amp * (0.9 + 0.2 * rng.random()) \
            * np.sin(np.pi * t)
        pos += d
        sign = -sign
    return out


def _as_raw_window(x: np.ndarray, y: np.ndarray, z_motion: np.ndarray,
                   subject: str, index: int, label=None) -> Window:
    data = np.column_stack([x, y, z_motion + 1.0])   # gravity on z
    return Window(subject_id=subject, index=index, data=data,
                  sample_rate_hz=FS, duration_s=WINDOW_S, label=label)


# ---------------------------------------------------------------------------
# tokenizer-oracle windows (fed directly to the tokenizer as "linear")


def random_linear_window(rng: np.random.Generator, T_: int = T,
                         fs: float = FS) -> np.ndarray:
    """Mixture of sinusoids, bursts, and noise per axis, (T, 3)."""
    t = np.arange(T_) / fs
    cols = []
    for _ in range(3):
        sig = np.zeros(T_)
        for _ in range(rng.integers(1, 4)):
            f = rng.uniform(0.5, 8.0)
            a = rng.uniform(0.05, 1.0)
            sig += a * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
        if rng.random() < 0.5:   # burst envelope
            c = rng.uniform(1, WINDOW_S - 1)
            w = rng.uniform(0.5, 3.0)
            sig *= np.exp(-0.5 * ((t - c) / w) ** 2)
        sig += rng.normal(0, rng.uniform(0.0, 0.05), T_)
        if rng.random() < 0.2:   # inject exact zeros to exercise the rule
            zi = rng.choice(T_, size=rng.integers(1, 10), replace=False)
            sig[zi] = 0.0
        cols.append(sig)
    return np.column_stack(cols)


# ---------------------------------------------------------------------------
# activity corpus: five latent generators composing segment motifs


def _activity_window(rng: np.random.Generator, gen: int) -> np.ndarray:
    x = np.zeros(T)
    y = np.zeros(T)
    if gen == 0:        # fast small oscillation
        x = lobe_train(rng, T, 1.5, 0.4)
    elif gen == 1:      # slow large oscillation
        x = lobe_train(rng, T, 0.5, 0.8)
    elif gen == 2:      # mixed axes
        x = lobe_train(rng, T, 1.0, 0.5)
        y = lobe_train(rng, T, 0.6, 0.5)
    elif gen == 3:      # bursts with quiet gaps
        on = int(2.0 * FS)
        off = int(1.0 * FS)
        pos = 0
        while pos < T:
            seg = min(on, T - pos)
            x[pos:pos + seg] = lobe_train(rng, seg, 1.2, 0.6)
            pos += seg + off
    else:               # superposed rates
        x = lobe_train(rng, T, 0.5, 0.5) + lobe_train(rng, T, 2.0, 0.15)
    return x, y


def make_activity_corpus(n_windows: int, seed: int = 0) -> list[Window]:
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_windows):
        gen = int(rng.integers(0, 5))
        x, y = _activity_window(rng, gen)
        x = x + rng.normal(0, 0.002, T)
        y = y + rng.normal(0, 0.002, T)
        out.append(_as_raw_window(x, y, np.zeros(T), f"act{gen}", i))
    return out


# ---------------------------------------------------------------------------
# ordered 3-class dataset: classes share marginals, differ in motif order


# Each pattern element is one full sine period (two movement segments): S a
# short period, L a long one. Zero-mean per element, so element order never
# leaks through the gravity filter. Every class carries 4 S and 4 L per
# cycle, so the segment-duration marginals are identical; only the
# arrangement (run length 4 / alternation / run length 2) separates the
# classes.
SEG_SHORT_S = 0.25
SEG_LONG_S = 1.0
CLASS_PATTERNS = {
    0: "SSSSLLLL",
    1: "SLSLSLSL",
    2: "SSLLSSLL",
}


def _ordered_window_signal(rng: np.random.Generator,
                           label: int, amp_scale: float) -> np.ndarray:
    pattern = CLASS_PATTERNS[label]
    # per-window tempo warp: every duration scales together, so the
    # short/long dichotomy stays crisp while fixed-position chunk contents
    # drift out of register
    warp = rng.uniform(0.85, 1.15)
    x = np.zeros(T)
    pos = 0
    i = 0
    while pos < T:
        ch = pattern[i % len(pattern)]
        d = int(round((SEG_SHORT_S if ch == "S" else SEG_LONG_S)
                      * warp * FS))
        d = min(d, T - pos)
        t = np.arange(d) / d
        amp = rng.uniform(0.35, 0.65) * amp_scale
        x[pos:pos + d] = amp * np.sin(2 * np.pi * t)
        pos += d
        i += 1
    # jitter the pattern phase by up to two short elements; classes stay
    # separated by where short/long segments sit within the window
    x = np.roll(x, int(rng.integers(0, int(2 * SEG_SHORT_S * FS))))
    return x + rng.normal(0, 0.002, T)


def make_ordered_dataset(n_subjects: int = 12, windows_per_class: int = 8,
                         seed: int = 0) -> list[Window]:
    """Raw labeled windows; per-subject amplitude scaling, random rotation."""
    rng = np.random.default_rng(seed)
    out = []
    for s in range(n_subjects):
        amp_scale = rng.uniform(0.8, 1.2)
        idx = 0
        for label in (0, 1, 2):
            for _ in range(windows_per_class):
                x = _ordered_window_signal(rng, label, amp_scale)
                out.append(_as_raw_window(x, np.zeros(T), np.zeros(T),
                                          f"subj{s:02d}", idx, label))
                idx += 1
    return out


def make_ordered_recordings(n_subjects: int = 12, windows_per_class: int = 8,
                            seed: int = 0) -> list[RawRecording]:
    """Same generator as make_ordered_dataset, as continuous labeled streams."""
    rng = np.random.default_rng(seed)
    recs = []
    for s in range(n_subjects):
        amp_scale = rng.uniform(0.8, 1.2)
        chunks, labels = [], []
        order = [(lab, k) for lab in (0, 1, 2)
                 for k in range(windows_per_class)]
        for label, _ in order:
            x = _ordered_window_signal(rng, label, amp_scale)
            chunks.append(np.column_stack([x, np.zeros(T), np.ones(T)]))
            labels.append(np.full(T, label))
        recs.append(RawRecording(subject_id=f"subj{s:02d}",
                                 sample_rate_hz=FS,
                                 samples=np.vstack(chunks),
                                 labels=np.concatenate(labels),
                                 source_name="synthetic_ordered"))
    return recs


# ---------------------------------------------------------------------------
# cyclic-grammar corpus for the syntax probe


CYCLE_FREQS = (1.0, 1.33, 1.78, 2.37)
CYCLE_AMPS = (0.30, 0.48, 0.66, 0.84)
# Deterministic cycle over motif types. Each type occurs twice per period
# with two *different* successors, so every successor type also follows two
# different predecessors: a first-order Markov model cannot disambiguate,
# while the bigram-type vocabulary shares labels across types.
CYCLE_ORDER = (0, 2, 1, 3, 0, 3, 1, 2)


def make_cycle_corpus(n_windows: int, seed: int = 0) -> list[Window]:
    """Motif types follow the deterministic CYCLE_ORDER; each motif is one
    full period with a type-specific frequency and base amplitude.
    Per-window tempo warp and per-motif amplitude jitter spread each type
    into a blob (rather than a point) in feature space without blurring
    type identity.
    """
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_windows):
        x = np.zeros(T)
        pos = 0
        warp = rng.uniform(0.9, 1.1)
        j = int(rng.integers(0, len(CYCLE_ORDER)))
        while pos < T:
            motif = CYCLE_ORDER[j % len(CYCLE_ORDER)]
            freq = CYCLE_FREQS[motif]
            dur = min(int(round(warp * FS / freq)), T - pos)
            t = np.arange(dur) / dur
            amp = CYCLE_AMPS[motif] * rng.uniform(0.9, 1.1)
            x[pos:pos + dur] = amp * np.sin(2 * np.pi * t)
            pos += dur
            j += 1
        x += rng.normal(0, 0.002, T)
        out.append(_as_raw_window(x, np.zeros(T), np.zeros(T),
                                  f"cycle{i % 4}", i))
    return out


# ---------------------------------------------------------------------------
# CSV export (for exercising the ingest path end to end)


def recordings_to_csv(recs: list[RawRecording], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject", "x", "y", "z", "label"])
        for rec in recs:
            labels = rec.labels if rec.labels is not None \
                else np.full(len(rec.samples), -1)
            for (x, y, z), lab in zip(rec.samples, labels):
                writer.writerow([rec.subject_id, repr(float(x)),
                                 repr(float(y)), repr(float(z)), int(lab)])
