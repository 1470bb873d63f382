from __future__ import annotations

import numpy as np
import pytest

from biopm.config import ModelConfig, RunConfig


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def tiny_model_cfg():
    """Small enough for finite-difference checks and fast forward passes."""
    return ModelConfig(d_model=16, n_layers=2, n_heads=2, ff_mult=2,
                       cnn_channels=(3, 6), max_rel_offset=4)


@pytest.fixture
def run_cfg():
    return RunConfig()


def make_tiny_batch(model_cfg, b=2, n=6, L=32, seed=0):
    """Random token batch with one padded row for invariance tests."""
    from biopm.model import TokenBatch
    r = np.random.default_rng(seed)
    wf = r.normal(0, 0.5, (b, n, L))
    axes = r.integers(0, 3, (b, n))
    dur = r.uniform(0.05, 0.8, (b, n))
    times = np.sort(r.uniform(0, 10, (b, n)), axis=1)
    pad = np.ones((b, n), dtype=bool)
    if b > 1:
        pad[1, n - 1] = False
    return TokenBatch(waveforms=wf, axes=axes, dur_s=dur, times_s=times,
                      pad_mask=pad)
