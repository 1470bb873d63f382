"""Gravity separation via Butterworth filtering plus window intensity stats."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal as sp_signal

from .data import TooShortError, Window


class FilterDesignError(ValueError):
    pass


@dataclass
class FilterSpec:
    sample_rate_hz: float
    cutoff_hz: float = 0.5
    order: int = 6
    kind: str = "highpass"   # or "lowpass"


@dataclass
class SplitWindow:
    linear: np.ndarray    # (T, 3) gravity-reduced acceleration
    gravity: np.ndarray   # (T, 3) low-frequency residual


def design_butterworth(spec: FilterSpec) -> np.ndarray:
    """Second-order-section cascade from the bilinear-transformed prototype."""
    nyq = spec.sample_rate_hz / 2.0
    if not (0.0 < spec.cutoff_hz < nyq):
        raise FilterDesignError(
            f"cutoff {spec.cutoff_hz} Hz outside (0, {nyq}) Hz")
    if spec.order % 2 != 0 or spec.order < 2:
        raise FilterDesignError("order must be a positive even integer")
    if spec.kind not in ("highpass", "lowpass"):
        raise FilterDesignError(f"unknown filter kind {spec.kind!r}")
    return sp_signal.butter(spec.order, spec.cutoff_hz, btype=spec.kind,
                            fs=spec.sample_rate_hz, output="sos")


def sos_response(sos: np.ndarray, freq_hz: float, sample_rate_hz: float) -> complex:
    """Single-pass transfer function value at one frequency."""
    _, h = sp_signal.sosfreqz(sos, worN=[2 * np.pi * freq_hz / sample_rate_hz])
    return complex(h[0])


def _filtfilt(sos: np.ndarray, x: np.ndarray) -> np.ndarray:
    # Zero-phase two-pass filtering with reflective ('even') edge padding.
    # The design cutoff stays at the nominal value; two passes square the
    # magnitude response, so the nominal cutoff sits at -6 dB.
    padlen = min(3 * len(sos) * 2, x.shape[0] - 1)
    return sp_signal.sosfiltfilt(sos, x, axis=0, padtype="even", padlen=padlen)


def split_gravity(window: Window, cutoff_hz: float = 0.5,
                  order: int = 6) -> SplitWindow:
    """Split a window into gravity-reduced and low-frequency components.

    Both components come from independent highpass/lowpass filters at the
    same matched cutoff; no complementarity is claimed or assumed.
    """
    T = window.data.shape[0]
    if T < 3 * order:
        raise TooShortError(f"window of {T} samples too short to filter")
    hp = design_butterworth(FilterSpec(window.sample_rate_hz, cutoff_hz,
                                       order, "highpass"))
    lp = design_butterworth(FilterSpec(window.sample_rate_hz, cutoff_hz,
                                       order, "lowpass"))
    return SplitWindow(linear=_filtfilt(hp, window.data),
                       gravity=_filtfilt(lp, window.data))


def activity_index(window: Window, noise_variance: float = 0.0,
                   epoch_s: float = 1.0) -> float:
    """Epoch-wise variance intensity score, acceleration in milli-g.

    AI = sum over epochs of sqrt(max(0, mean_axes(var_axis - noise_variance))).
    """
    mg = window.data * 1000.0
    ep = int(round(epoch_s * window.sample_rate_hz))
    n_epochs = mg.shape[0] // ep
    total = 0.0
    for e in range(n_epochs):
        var = mg[e * ep:(e + 1) * ep].var(axis=0)
        total += np.sqrt(max(0.0, float(np.mean(var - noise_variance))))
    return total


def mad_magnitude(linear: np.ndarray) -> float:
    """Mean absolute deviation of the acceleration magnitude."""
    mag = np.linalg.norm(linear, axis=1)
    return float(np.mean(np.abs(mag - mag.mean())))
