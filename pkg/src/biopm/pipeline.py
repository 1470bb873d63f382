"""Window-to-embedding plumbing shared by the CLI and the eval suite."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import model as mdl
from .config import RunConfig
from .data import Window
from .model import TokenBatch
from .probe import fuse_features, gravity_features
from .signals import split_gravity
from .tokenize import (TokenSequence, equal_chunk_tokenize, tokenize_corpus,
                       tokenize_window)


@dataclass
class QCReport:
    n_windows: int = 0
    n_empty_dropped: int = 0
    kept_refs: list = field(default_factory=list)


def tokenize_windows(windows: list[Window], cfg: RunConfig,
                     scheme: str = "segments"):
    """Gravity-split and tokenize every window; drop empty sequences.

    Returns (seqs, labels, kept_windows, qc_report). scheme is "segments"
    (zero-crossing tokens) or "chunks" (equal-length baseline).
    """
    tok = cfg.tokenizer
    pipe = cfg.pipeline
    qc = QCReport(n_windows=len(windows))
    linears = [split_gravity(w, pipe.cutoff_hz, pipe.filter_order).linear
               for w in windows]
    refs = [(w.subject_id, w.index) for w in windows]
    uniform = windows and \
        len({x.shape for x in linears}) == 1 and \
        len({w.sample_rate_hz for w in windows}) == 1
    if scheme == "segments" and uniform:
        # batched path; bit-identical to per-window tokenize_window
        all_seqs = tokenize_corpus(np.stack(linears),
                                   windows[0].sample_rate_hz, refs,
                                   tok.min_gap_s, tok.amp_threshold_g,
                                   tok.resample_len, tok.max_tokens)
    elif scheme == "segments":
        all_seqs = [tokenize_window(x, w.sample_rate_hz, r, tok.min_gap_s,
                                    tok.amp_threshold_g, tok.resample_len,
                                    tok.max_tokens)
                    for x, w, r in zip(linears, windows, refs)]
    elif scheme == "chunks":
        all_seqs = [equal_chunk_tokenize(x, w.sample_rate_hz, r, tok.chunk_s,
                                         tok.resample_len, tok.max_tokens)
                    for x, w, r in zip(linears, windows, refs)]
    else:
        raise ValueError(f"unknown tokenization scheme {scheme!r}")
    seqs, labels, kept = [], [], []
    for w, ref, seq in zip(windows, refs, all_seqs):
        if seq.n == 0:
            qc.n_empty_dropped += 1
            continue
        seqs.append(seq)
        labels.append(w.label)
        kept.append(w)
        qc.kept_refs.append(ref)
    return seqs, labels, kept, qc


def _batched(items, size):
    for i in range(0, len(items), size):
        yield i, items[i:i + size]


def contextual_embeddings(params: dict, cfg: RunConfig,
                          seqs: list[TokenSequence],
                          disable_positional: bool = False,
                          batch_size: int = 64) -> list[np.ndarray]:
    """Per-window contextual token embeddings u (list of (N_j, D))."""
    out = []
    for _, chunk in _batched(seqs, batch_size):
        batch = mdl.batch_from_sequences(chunk, cfg.pipeline.sample_rate_hz,
                                         cfg.pipeline.window_s)
        u, _, _ = mdl.forward(params, cfg.model, batch,
                              disable_positional=disable_positional)
        for i, s in enumerate(chunk):
            out.append(u[i, :s.n])
    return out


def noncontextual_embeddings(params: dict, cfg: RunConfig,
                             seqs: list[TokenSequence],
                             batch_size: int = 64) -> list[np.ndarray]:
    """Assembled pre-Transformer tokens z = [h | axis | duration]."""
    out = []
    for _, chunk in _batched(seqs, batch_size):
        batch = mdl.batch_from_sequences(chunk, cfg.pipeline.sample_rate_hz,
                                         cfg.pipeline.window_s)
        b, n, L = batch.waveforms.shape
        x0 = batch.waveforms.reshape(b * n, L, 1)
        c0, _ = mdl.conv1d_fwd(x0, params["cnn.conv0.w"], params["cnn.conv0.b"])
        c1, _ = mdl.conv1d_fwd(mdl.gelu(c0), params["cnn.conv1.w"],
                               params["cnn.conv1.b"])
        c2, _ = mdl.conv1d_fwd(mdl.gelu(c1), params["cnn.conv2.w"],
                               params["cnn.conv2.b"])
        h = mdl.gelu(c2).mean(axis=1).reshape(b, n, cfg.model.h_dim)
        e = params["axis_embed"][batch.axes]
        z = np.concatenate([h, e, batch.dur_s[:, :, None]], axis=2)
        for i, s in enumerate(chunk):
            out.append(z[i, :s.n])
    return out


def window_embeddings(params: dict, cfg: RunConfig,
                      windows: list[Window], seqs: list[TokenSequence],
                      include_gravity: bool = True,
                      disable_positional: bool = False,
                      batch_size: int = 64) -> np.ndarray:
    """Pooled (mean || std) contextual features, optionally gravity-fused."""
    assert len(windows) == len(seqs)
    us = contextual_embeddings(params, cfg, seqs, disable_positional,
                               batch_size)
    rows = []
    for w, u in zip(windows, us):
        pooled = mdl.pool_window(u, np.ones(len(u), dtype=bool))
        grav = gravity_features(w, cfg.pipeline.cutoff_hz,
                                cfg.pipeline.filter_order) \
            if include_gravity else None
        rows.append(fuse_features(pooled, grav))
    return np.stack(rows)
