from __future__ import annotations

import numpy as np
import pytest

from biopm.data import Window
from biopm.signals import (FilterDesignError, FilterSpec, activity_index,
                           design_butterworth, mad_magnitude, sos_response,
                           split_gravity)

FS = 80.0


def fit_sinusoid_gain(x_in: np.ndarray, x_out: np.ndarray, freq: float,
                      fs: float) -> float:
    """|gain| via least-squares sin/cos fit on the central stretch."""
    n = len(x_in)
    lo, hi = n // 8, n - n // 8
    t = np.arange(n)[lo:hi] / fs
    basis = np.column_stack([np.sin(2 * np.pi * freq * t),
                             np.cos(2 * np.pi * freq * t)])
    a_in, *_ = np.linalg.lstsq(basis, x_in[lo:hi], rcond=None)
    a_out, *_ = np.linalg.lstsq(basis, x_out[lo:hi], rcond=None)
    return float(np.linalg.norm(a_out) / np.linalg.norm(a_in))


class TestFilterDesign:
    def test_highpass_dc_gain(self):
        sos = design_butterworth(FilterSpec(FS, 0.5, 6, "highpass"))
        assert abs(sos_response(sos, 0.0, FS)) <= 1e-10

    def test_lowpass_dc_gain(self):
        sos = design_butterworth(FilterSpec(FS, 0.5, 6, "lowpass"))
        assert abs(abs(sos_response(sos, 0.0, FS)) - 1.0) <= 1e-10

    def test_cutoff_half_power(self):
        for kind in ("highpass", "lowpass"):
            sos = design_butterworth(FilterSpec(FS, 0.5, 6, kind))
            assert abs(sos_response(sos, 0.5, FS)) == pytest.approx(
                np.sqrt(0.5), abs=1e-4)

    def test_bad_specs_rejected(self):
        with pytest.raises(FilterDesignError):
            design_butterworth(FilterSpec(FS, 0.0, 6))
        with pytest.raises(FilterDesignError):
            design_butterworth(FilterSpec(FS, 50.0, 6))
        with pytest.raises(FilterDesignError):
            design_butterworth(FilterSpec(FS, 0.5, 5))
        with pytest.raises(FilterDesignError):
            design_butterworth(FilterSpec(FS, 0.5, 6, "bandpass"))


class TestSplitGravity:
    def _window(self, data):
        return Window(subject_id="s", index=0, data=data, sample_rate_hz=FS,
                      duration_s=len(data) / FS)

    def test_constant_offset_goes_to_gravity(self):
        n = 4800   # 60 s: the 0.5 Hz filter needs several seconds to settle
        t = np.arange(n) / FS
        motion = 0.3 * np.sin(2 * np.pi * 3.0 * t)
        data = np.column_stack([motion + 0.0, motion + 0.5, motion + 1.0])
        split = split_gravity(self._window(data))
        mid = slice(1200, n - 1200)
        # linear part: offset removed, motion preserved
        for a, off in enumerate((0.0, 0.5, 1.0)):
            np.testing.assert_allclose(split.linear[mid, a], motion[mid],
                                       atol=2e-3)
            np.testing.assert_allclose(split.gravity[mid, a], off, atol=2e-3)

    def test_two_pass_gain_at_high_frequency(self):
        t = np.arange(4800) / FS
        x = np.sin(2 * np.pi * 5.0 * t)
        data = np.column_stack([x, x, x])
        split = split_gravity(self._window(data))
        g = fit_sinusoid_gain(x, split.linear[:, 0], 5.0, FS)
        assert g == pytest.approx(1.0, abs=1e-3)

    def test_too_short_window_rejected(self):
        from biopm.data import TooShortError
        with pytest.raises(TooShortError):
            split_gravity(self._window(np.zeros((10, 3))))


class TestActivityIndex:
    def _window(self, data):
        return Window(subject_id="s", index=0, data=data, sample_rate_hz=FS,
                      duration_s=len(data) / FS)

    def test_still_window_zero(self):
        assert activity_index(self._window(np.zeros((800, 3)))) == 0.0

    def test_monotone_in_amplitude(self):
        t = np.arange(800) / FS
        small = np.column_stack([0.1 * np.sin(2 * np.pi * 2 * t)] * 3)
        big = np.column_stack([0.4 * np.sin(2 * np.pi * 2 * t)] * 3)
        assert activity_index(self._window(big)) > \
            activity_index(self._window(small))

    def test_noise_floor_subtracted(self):
        r = np.random.default_rng(0)
        data = r.normal(0, 0.001, (800, 3))   # 1 milli-g noise, var = 1 mg^2
        w = self._window(data)
        assert activity_index(w, noise_variance=25.0) == 0.0
        assert activity_index(w, noise_variance=0.0) > 0.0

    def test_mad_magnitude_zero_for_constant(self):
        assert mad_magnitude(np.ones((100, 3))) == pytest.approx(0.0)
