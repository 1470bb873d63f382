"""Movement-segment tokenization plus the equal-length-chunk baseline.

Token sequences are stored as struct-of-arrays: the tokenizer is on the hot
path for corpus-scale runs and per-token Python objects dominate its cost.
`MovementSegment` remains available as a per-token view for readability in
tests and small-scale inspection.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np


@dataclass
class MovementSegment:
    axis: int                 # 0=x, 1=y, 2=z
    start_idx: int
    end_idx: int              # exclusive
    duration_samples: int
    midpoint_time_s: float    # within-window
    waveform: np.ndarray      # (L,) in g
    merged: bool = False      # amplitude-hysteresis merge happened


@dataclass
class TokenSequence:
    window_ref: tuple[str, int]
    waveforms: np.ndarray = None      # (n, L)
    axes: np.ndarray = None           # (n,) int64
    starts: np.ndarray = None         # (n,) int64 sample index
    durations: np.ndarray = None      # (n,) int64 samples
    times_s: np.ndarray = None        # (n,) float64 midpoint seconds
    merged: np.ndarray = None         # (n,) bool

    def __post_init__(self):
        if self.waveforms is None:
            self.waveforms = np.empty((0, 0))
        for name, dtype in (("axes", np.int64), ("starts", np.int64),
                            ("durations", np.int64), ("times_s", np.float64),
                            ("merged", bool)):
            if getattr(self, name) is None:
                setattr(self, name, np.empty(0, dtype=dtype))

    @property
    def n(self) -> int:
        return len(self.axes)

    @property
    def tokens(self) -> list[MovementSegment]:
        return [MovementSegment(
            axis=int(self.axes[i]), start_idx=int(self.starts[i]),
            end_idx=int(self.starts[i] + self.durations[i]),
            duration_samples=int(self.durations[i]),
            midpoint_time_s=float(self.times_s[i]),
            waveform=self.waveforms[i], merged=bool(self.merged[i]))
            for i in range(self.n)]


def sequence_from_tokens(window_ref: tuple[str, int],
                         tokens: list[MovementSegment]) -> TokenSequence:
    """Build an array-backed sequence from per-token records."""
    if not tokens:
        return TokenSequence(window_ref=window_ref)
    return TokenSequence(
        window_ref=window_ref,
        waveforms=np.stack([t.waveform for t in tokens]),
        axes=np.array([t.axis for t in tokens], dtype=np.int64),
        starts=np.array([t.start_idx for t in tokens], dtype=np.int64),
        durations=np.array([t.duration_samples for t in tokens],
                           dtype=np.int64),
        times_s=np.array([t.midpoint_time_s for t in tokens]),
        merged=np.array([t.merged for t in tokens], dtype=bool))


def detect_zero_crossings(axis_signal: np.ndarray) -> np.ndarray:
    """Indices where the sign regime changes; exact zeros attach forward.

    Index i is a crossing iff the first sample of a new-sign run starts
    there, counting any zero run immediately before the sign flip as part
    of the new segment.
    """
    sig = np.asarray(axis_signal, dtype=np.float64)
    nz = np.flatnonzero(sig != 0.0)
    if len(nz) < 2:
        return np.empty(0, dtype=np.int64)
    signs = np.sign(sig[nz])
    flips = np.flatnonzero(signs[1:] != signs[:-1])
    return nz[flips] + 1


def apply_hysteresis(crossings: np.ndarray, axis_signal: np.ndarray,
                     sample_rate_hz: float, min_gap_s: float = 0.050,
                     amp_threshold_g: float = 0.01) -> np.ndarray:
    """Two-stage suppression of noise-induced crossings.

    Stage 1 drops candidates closer than min_gap_s to the last accepted
    crossing. Stage 2 merges runs of adjacent segments whose peak |signal|
    all fall below amp_threshold_g, removing their shared crossings;
    merging iterates to fixpoint.
    """
    if len(crossings) == 0:
        return np.empty(0, dtype=np.int64)
    sig = np.asarray(axis_signal, dtype=np.float64)
    min_gap = min_gap_s * sample_rate_hz
    if np.all(np.diff(crossings) >= min_gap):
        acc = np.asarray(crossings, dtype=np.int64)
    else:
        # greedy debounce; iterate only over survivors via searchsorted jumps
        cl = np.asarray(crossings)
        accepted: list[int] = []
        i, n = 0, len(cl)
        while i < n:
            c = int(cl[i])
            accepted.append(c)
            i = int(np.searchsorted(cl, c + min_gap, side="left"))
        acc = np.array(accepted, dtype=np.int64)
    if len(acc) < 2:
        return acc

    # Peak amplitude of each provisional segment [acc[k], acc[k+1)).
    # reduceat's last entry runs to the end of its input, so reduce over a
    # view truncated at the final crossing.
    absig = np.abs(sig[:acc[-1]])
    peaks = np.maximum.reduceat(absig, acc[:-1])
    low = peaks < amp_threshold_g
    # Fixpoint of pairwise merging == collapse runs of consecutive low
    # segments: every interior crossing of a low run disappears.
    keep = np.ones(len(acc), dtype=bool)
    keep[1:-1] = ~(low[:-1] & low[1:])
    return acc[keep]


def resample_segment(samples: np.ndarray, L: int = 32) -> np.ndarray:
    """Linear interpolation onto L points; endpoints preserved exactly."""
    d = len(samples)
    if d < 1:
        raise ValueError("empty segment")
    if d == 1:
        return np.full(L, float(samples[0]))
    pos = np.arange(L, dtype=np.float64) * (d - 1) / (L - 1)
    lo = np.minimum(pos.astype(np.int64), d - 2)
    w = pos - lo
    s = np.asarray(samples, dtype=np.float64)
    return s[lo] * (1.0 - w) + s[lo + 1] * w


@lru_cache(maxsize=8192)
def _resample_rows(d: int, L: int) -> tuple[np.ndarray, np.ndarray,
                                            np.ndarray]:
    """Gather offsets and interpolation weights for one segment length.

    Computed with the exact arithmetic of resample_segment so table-based
    resampling stays bit-identical to the scalar path.
    """
    pos = np.arange(L, dtype=np.float64) * (d - 1) / (L - 1)
    lo = np.minimum(pos.astype(np.int64), d - 2)
    w = pos - lo
    return lo, w, 1.0 - w


def _axis_waveforms(sig: np.ndarray, starts: np.ndarray, durs: np.ndarray,
                    L: int) -> np.ndarray:
    """Vectorized resample of every segment of one axis.

    Interpolation positions are segment-relative (bit-identical to
    resample_segment); only the gather indices are shifted by the integer
    segment starts. Rows are cached per distinct duration.
    """
    ud, inv = np.unique(durs, return_inverse=True)
    lo_t = np.empty((len(ud), L), dtype=np.int64)
    w_t = np.empty((len(ud), L))
    omw_t = np.empty((len(ud), L))
    for j, d in enumerate(ud):
        if d == 1:   # placeholder rows; duration-1 segments overridden below
            lo_t[j] = 0
            w_t[j] = 0.0
            omw_t[j] = 1.0
        else:
            lo_t[j], w_t[j], omw_t[j] = _resample_rows(int(d), L)
    idx = starts[:, None] + lo_t[inv]
    wf = sig[idx] * omw_t[inv]
    wf += sig[idx + 1] * w_t[inv]
    single = durs == 1
    if single.any():
        wf[single] = sig[starts[single], None]
    return wf


def tokenize_window(linear: np.ndarray, sample_rate_hz: float,
                    window_ref: tuple[str, int] = ("", 0),
                    min_gap_s: float = 0.050, amp_threshold_g: float = 0.01,
                    L: int = 32, max_tokens: int = 512) -> TokenSequence:
    """Per-axis detect/hysteresis/segment/resample, merged by midpoint time.

    Ties in midpoint time order x < y < z; sequences are truncated to the
    earliest max_tokens tokens. An all-quiet window yields an empty sequence.
    """
    wf_parts, ax_parts, st_parts, du_parts, tm_parts, mg_parts = \
        [], [], [], [], [], []
    for axis in range(3):
        sig = np.ascontiguousarray(linear[:, axis], dtype=np.float64)
        crossings = detect_zero_crossings(sig)
        accepted = apply_hysteresis(crossings, sig, sample_rate_hz,
                                    min_gap_s, amp_threshold_g)
        if len(accepted) < 2:
            continue
        s, e = accepted[:-1], accepted[1:]
        v = sig[:accepted[-1]]
        has_pos = np.logical_or.reduceat(v > 0, s)
        has_neg = np.logical_or.reduceat(v < 0, s)
        durs = e - s
        wf_parts.append(_axis_waveforms(sig, s, durs, L))
        ax_parts.append(np.full(len(s), axis, dtype=np.int64))
        st_parts.append(s)
        du_parts.append(durs)
        tm_parts.append((s + e) / 2.0 / sample_rate_hz)
        mg_parts.append(has_pos & has_neg)
    if not ax_parts:
        return TokenSequence(window_ref=window_ref,
                             waveforms=np.empty((0, L)))
    times = np.concatenate(tm_parts)
    axes = np.concatenate(ax_parts)
    order = np.lexsort((axes, times))[:max_tokens]
    return TokenSequence(
        window_ref=window_ref,
        waveforms=np.concatenate(wf_parts)[order],
        axes=axes[order],
        starts=np.concatenate(st_parts)[order],
        durations=np.concatenate(du_parts)[order],
        times_s=times[order],
        merged=np.concatenate(mg_parts)[order])


def _debounce_rows(cross: np.ndarray, crow: np.ndarray,
                   min_gap: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-row greedy min-gap debounce; only rows with violations pay for
    the sequential pass."""
    dif = np.diff(cross)
    viol = (crow[1:] == crow[:-1]) & (dif < min_gap)
    if not viol.any():
        return cross, crow
    keep = np.ones(len(cross), dtype=bool)
    for r in np.unique(crow[:-1][viol]):
        a, b = np.searchsorted(crow, [r, r + 1])
        sel = keep[a:b]
        thresh = -np.inf
        for j, c in enumerate(cross[a:b].tolist()):
            if c >= thresh:
                thresh = c + min_gap
            else:
                sel[j] = False
    return cross[keep], crow[keep]


def _pair_reduceat(ufunc, values: np.ndarray, starts: np.ndarray,
                   ends: np.ndarray) -> np.ndarray:
    """ufunc reduction over each [start, end) range of a flat array."""
    idx = np.empty(2 * len(starts), dtype=np.int64)
    idx[0::2] = starts
    idx[1::2] = ends
    return ufunc.reduceat(values, idx)[0::2]


def tokenize_corpus(data: np.ndarray, sample_rate_hz: float,
                    refs: list[tuple[str, int]] | None = None,
                    min_gap_s: float = 0.050, amp_threshold_g: float = 0.01,
                    L: int = 32, max_tokens: int = 512) -> list[TokenSequence]:
    """Batched tokenize_window over a (M, T, 3) stack of equal-length windows.

    Bit-identical to calling tokenize_window on each window; the per-axis
    stages run once over the whole corpus, which amortizes fixed numpy call
    overhead and is the entry point for corpus-scale throughput.
    """
    data = np.asarray(data, dtype=np.float64)
    M, T, _ = data.shape
    if refs is None:
        refs = [("", i) for i in range(M)]
    min_gap = min_gap_s * sample_rate_hz

    # axis-major contiguous copy: axis a of window i lives at
    # allflat[(a * M + i) * T : ...]; one buffer serves every gather
    allflat = np.ascontiguousarray(data.transpose(2, 0, 1)).reshape(-1)
    row_bounds = np.arange(1, M, dtype=np.int64) * T
    parts = {k: [] for k in ("win", "gs", "ax", "st", "du", "tm", "mg")}
    for axis in range(3):
        flat = allflat[axis * M * T:(axis + 1) * M * T]
        nz = np.flatnonzero(flat)
        if len(nz) < 2:
            continue
        sb = np.signbit(flat[nz])
        flip = sb[1:] != sb[:-1]
        # knock out nonzero pairs straddling a window boundary
        bpos = np.searchsorted(nz, row_bounds)
        inb = bpos[(bpos > 0) & (bpos < len(nz))]
        flip[inb - 1] = False
        cross = nz[:-1][flip] + 1            # flat corpus indices
        if len(cross) == 0:
            continue
        ccounts = np.diff(np.searchsorted(cross, row_bounds),
                          prepend=0, append=len(cross))
        crow = np.repeat(np.arange(M, dtype=np.int64), ccounts)

        cross, crow = _debounce_rows(cross, crow, min_gap)

        # amplitude hysteresis: provisional segments are same-row pairs
        pair = np.flatnonzero(crow[1:] == crow[:-1])
        if len(pair) == 0:
            continue
        peaks = _pair_reduceat(np.maximum, np.abs(flat),
                               cross[pair], cross[pair + 1])
        low = peaks < amp_threshold_g
        if low.any():
            # interior crossings of each row-group drop when both flanking
            # segments are low (run-collapse fixpoint, as in apply_hysteresis)
            rstart = np.flatnonzero(np.r_[True, crow[1:] != crow[:-1]])
            counts = np.diff(np.r_[rstart, len(cross)])
            p = np.arange(len(cross)) - np.repeat(rstart, counts)
            segbase = np.repeat(rstart - np.arange(len(rstart)), counts)
            interior = (p > 0) & (p < np.repeat(counts - 1, counts))
            drop = np.zeros(len(cross), dtype=bool)
            ii = np.flatnonzero(interior)
            drop[ii] = low[segbase[ii] + p[ii] - 1] & low[segbase[ii] + p[ii]]
            cross, crow = cross[~drop], crow[~drop]
            pair = np.flatnonzero(crow[1:] == crow[:-1])
            if len(pair) == 0:
                continue
        s, e = cross[pair], cross[pair + 1]
        wrow = crow[pair]
        durs = e - s
        has_pos = _pair_reduceat(np.logical_or, flat > 0, s, e)
        has_neg = _pair_reduceat(np.logical_or, flat < 0, s, e)
        base = wrow * T
        parts["win"].append(wrow)
        parts["gs"].append(s + axis * M * T)
        parts["ax"].append(np.full(len(s), axis, dtype=np.int64))
        parts["st"].append(s - base)
        parts["du"].append(durs)
        parts["tm"].append(((s - base) + (e - base)) / 2.0 / sample_rate_hz)
        parts["mg"].append(has_pos & has_neg)

    if not parts["ax"]:
        return [TokenSequence(window_ref=refs[i], waveforms=np.empty((0, L)))
                for i in range(M)]
    win = np.concatenate(parts["win"])
    times = np.concatenate(parts["tm"])
    axes = np.concatenate(parts["ax"])
    order = np.lexsort((axes, times, win))
    win, times, axes = win[order], times[order], axes[order]
    gs = np.concatenate(parts["gs"])[order]
    st = np.concatenate(parts["st"])[order]
    du = np.concatenate(parts["du"])[order]
    mg = np.concatenate(parts["mg"])[order]
    wf = _axis_waveforms(allflat, gs, du, L)
    offs = np.zeros(M + 1, dtype=np.int64)
    np.cumsum(np.bincount(win, minlength=M), out=offs[1:])
    out = []
    for i in range(M):
        a = int(offs[i])
        b = min(int(offs[i + 1]), a + max_tokens)
        out.append(TokenSequence(
            window_ref=refs[i], waveforms=wf[a:b], axes=axes[a:b],
            starts=st[a:b], durations=du[a:b], times_s=times[a:b],
            merged=mg[a:b]))
    return out


def equal_chunk_tokenize(linear: np.ndarray, sample_rate_hz: float,
                         window_ref: tuple[str, int] = ("", 0),
                         chunk_s: float = 0.5, L: int = 32,
                         max_tokens: int = 512) -> TokenSequence:
    """Structure-agnostic baseline: fixed-length chunks per axis."""
    T = linear.shape[0]
    size = int(round(chunk_s * sample_rate_hz))
    n_chunks = T // size
    starts1 = np.arange(n_chunks, dtype=np.int64) * size
    durs1 = np.full(n_chunks, size, dtype=np.int64)
    times1 = (starts1 + (starts1 + size)) / 2.0 / sample_rate_hz
    wf_parts = []
    for axis in range(3):
        sig = np.ascontiguousarray(linear[:, axis], dtype=np.float64)
        wf_parts.append(_axis_waveforms(sig, starts1, durs1, L))
    times = np.tile(times1, 3)
    axes = np.repeat(np.arange(3, dtype=np.int64), n_chunks)
    order = np.lexsort((axes, times))[:max_tokens]
    return TokenSequence(
        window_ref=window_ref,
        waveforms=np.concatenate(wf_parts)[order],
        axes=axes[order],
        starts=np.tile(starts1, 3)[order],
        durations=np.tile(durs1, 3)[order],
        times_s=times[order],
        merged=np.zeros(3 * n_chunks, dtype=bool)[order])
