from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import biopm.model as mdl
from biopm.config import ModelConfig, PretrainConfig
from biopm.pretrain import (AdamState, adam_step, apply_masking_to_batch,
                            copy_last_visible_baseline, is_holdout,
                            reconstruction_loss, sample_masking,
                            select_upstream_windows)
from conftest import make_tiny_batch


def _times(n, rng):
    return np.sort(rng.uniform(0, 10, n))


class TestSampleMasking:
    def test_random_scheme_exact_count(self):
        rng = np.random.default_rng(0)
        for n in (2, 5, 10, 40):
            for r in (0.25, 0.5, 0.75):
                for _ in range(20):
                    plan = sample_masking(_times(n, rng), np.full(n, 0.2),
                                          r, rng)
                    if plan.scheme == "random":
                        want = min(max(int(round(r * n)), 1), n - 1)
                        assert len(plan.masked) == want

    def test_always_one_masked_one_visible(self):
        rng = np.random.default_rng(1)
        for n in (2, 3, 7):
            for _ in range(50):
                plan = sample_masking(_times(n, rng), np.full(n, 0.2),
                                      0.5, rng)
                assert 1 <= len(plan.masked) <= n - 1

    def test_single_token_masks_it(self):
        rng = np.random.default_rng(2)
        plan = sample_masking(np.array([1.0]), np.array([0.2]), 0.5, rng)
        assert plan.masked.tolist() == [0]

    def test_contiguous_scheme_masks_time_bins(self):
        rng = np.random.default_rng(3)
        times = np.sort(rng.uniform(0.01, 9.99, 60))
        seen = False
        for _ in range(50):
            # near-point tokens: bin overlap reduces to midpoint membership
            plan = sample_masking(times, np.full(60, 1e-6), 0.5, rng)
            if plan.scheme != "contiguous":
                continue
            seen = True
            masked_t = np.sort(times[plan.masked])
            visible_t = times[np.setdiff1d(np.arange(60), plan.masked)]
            # masked tokens fall in whole 1 s bins: no visible token shares
            # a bin with a masked one
            masked_bins = set(np.floor(masked_t).astype(int))
            visible_bins = set(np.floor(visible_t).astype(int))
            assert not (masked_bins & visible_bins)
        assert seen

    def test_corruption_sources_visible_and_distinct(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            n = int(rng.integers(3, 30))
            plan = sample_masking(_times(n, rng), np.full(n, 0.1), 0.5, rng,
                                  corruption_rate=0.2)
            masked = set(plan.masked.tolist())
            for dst, src in plan.corrupted.items():
                assert dst not in masked
                assert src not in masked
                assert src != dst


class TestMaskingStatistics:
    def test_pooled_fraction_and_corruption(self):
        rng = np.random.default_rng(10)
        masked_tot = tok_tot = corr_tot = vis_tot = 0
        for _ in range(2000):
            n = int(rng.integers(5, 60))
            plan = sample_masking(_times(n, rng), np.full(n, 0.1), 0.5, rng)
            masked_tot += len(plan.masked)
            tok_tot += n
            corr_tot += len(plan.corrupted)
            vis_tot += n - len(plan.masked)
        assert 0.45 <= masked_tot / tok_tot <= 0.55
        assert 0.18 <= corr_tot / vis_tot <= 0.22


class TestReconstructionLoss:
    def test_zero_at_perfect_prediction(self):
        t = np.random.default_rng(0).normal(0, 1, (2, 4, 8))
        pad = np.ones((2, 4), dtype=bool)
        mask = np.zeros((2, 4), dtype=bool)
        mask[0, 0] = True
        loss, d = reconstruction_loss(t.copy(), t, mask, pad)
        assert loss == 0.0

    def test_masked_weight_dominates(self):
        r = np.random.default_rng(1)
        t = r.normal(0, 1, (1, 2, 4))
        pad = np.ones((1, 2), dtype=bool)
        pred = t.copy()
        pred[0, 0] += 1.0     # error on token 0 only
        m_on = np.array([[True, False]])
        m_off = np.array([[False, True]])
        l_on, _ = reconstruction_loss(pred, t, m_on, pad)
        l_off, _ = reconstruction_loss(pred, t, m_off, pad)
        assert l_on == pytest.approx(100.0 / 101.0)
        assert l_off == pytest.approx(1.0 / 101.0)

    def test_padding_invariance(self):
        r = np.random.default_rng(2)
        t = r.normal(0, 1, (2, 5, 8))
        pred = r.normal(0, 1, (2, 5, 8))
        pad = np.ones((2, 5), dtype=bool)
        pad[1, 3:] = False
        mask = np.zeros((2, 5), dtype=bool)
        mask[:, 0] = True
        l1, d1 = reconstruction_loss(pred, t, mask, pad)
        pred2 = pred.copy(); pred2[~pad] = 1e3
        t2 = t.copy(); t2[~pad] = -1e3
        l2, d2 = reconstruction_loss(pred2, t2, mask, pad)
        assert abs(l1 - l2) < 1e-9
        np.testing.assert_allclose(d1[pad], d2[pad], atol=1e-12)
        assert np.all(d2[~pad] == 0)

    def test_gradient_matches_fd(self):
        r = np.random.default_rng(3)
        t = r.normal(0, 1, (1, 3, 4))
        pred = r.normal(0, 1, (1, 3, 4))
        pad = np.ones((1, 3), dtype=bool)
        mask = np.array([[True, False, False]])
        _, d = reconstruction_loss(pred, t, mask, pad)
        eps = 1e-7
        for i in np.ndindex(pred.shape):
            p2 = pred.copy(); p2[i] += eps
            lp, _ = reconstruction_loss(p2, t, mask, pad)
            p2[i] -= 2 * eps
            lm, _ = reconstruction_loss(p2, t, mask, pad)
            assert d[i] == pytest.approx((lp - lm) / (2 * eps), abs=1e-6)


class TestAdam:
    def test_moves_against_gradient(self):
        params = {"w": np.array([1.0, -1.0])}
        grads = {"w": np.array([1.0, -1.0])}
        state = AdamState(params)
        cfg = PretrainConfig(lr=0.1)
        adam_step(params, grads, state, cfg)
        assert params["w"][0] < 1.0 and params["w"][1] > -1.0

    def test_bias_correction_first_step_magnitude(self):
        params = {"w": np.array([0.0])}
        grads = {"w": np.array([0.5])}
        state = AdamState(params)
        cfg = PretrainConfig(lr=1e-3)
        adam_step(params, grads, state, cfg)
        # first Adam step size is ~lr regardless of gradient scale
        assert abs(params["w"][0] + 1e-3) < 1e-6


class TestCopyBaseline:
    def test_copies_nearest_earlier_visible(self, tiny_model_cfg):
        batch = make_tiny_batch(tiny_model_cfg)
        batch.mask_flags = np.zeros(batch.pad_mask.shape, dtype=bool)
        batch.mask_flags[0, 2] = True
        mae = copy_last_visible_baseline(batch)
        want = np.abs(batch.waveforms[0, 1] - batch.waveforms[0, 2]).mean()
        assert mae == pytest.approx(want)

    def test_leading_mask_falls_forward(self, tiny_model_cfg):
        batch = make_tiny_batch(tiny_model_cfg)
        batch.mask_flags = np.zeros(batch.pad_mask.shape, dtype=bool)
        batch.mask_flags[0, 0] = True
        mae = copy_last_visible_baseline(batch)
        want = np.abs(batch.waveforms[0, 1] - batch.waveforms[0, 0]).mean()
        assert mae == pytest.approx(want)


class TestHoldout:
    def test_deterministic(self):
        assert is_holdout(("subj", 3), 0.5) == is_holdout(("subj", 3), 0.5)

    def test_fraction_approximate(self):
        n = 20000
        hits = sum(is_holdout(("s", i), 0.1) for i in range(n))
        assert 0.08 <= hits / n <= 0.12

    def test_zero_fraction_empty(self):
        assert not any(is_holdout(("s", i), 0.0) for i in range(100))


class TestUpstreamSelection:
    def test_threshold_filters_quiet_windows(self):
        from biopm.data import Window
        t = np.arange(800) / 80.0
        quiet = Window("a", 0, np.zeros((800, 3)), 80.0)
        active = Window("a", 1,
                        np.column_stack([0.5 * np.sin(2 * np.pi * 2 * t)] * 3),
                        80.0)
        cfg = PretrainConfig(ai_threshold=50.0)
        out = select_upstream_windows([quiet, active], cfg, seed=0)
        assert [w.index for w in out] == [1]

    def test_deterministic_given_seed(self):
        from biopm.synthetic import make_activity_corpus
        wins = make_activity_corpus(60, seed=4)
        cfg = PretrainConfig(subsample_rates=(0.3, 0.5, 1.0))
        a = select_upstream_windows(wins, cfg, seed=9)
        b = select_upstream_windows(wins, cfg, seed=9)
        assert [(w.subject_id, w.index) for w in a] == \
            [(w.subject_id, w.index) for w in b]


class TestMaskingOnBatch:
    def test_flags_respect_padding(self, tiny_model_cfg):
        batch = make_tiny_batch(tiny_model_cfg)
        rng = np.random.default_rng(0)
        apply_masking_to_batch(batch, 0.5, rng)
        assert not (batch.mask_flags & ~batch.pad_mask).any()
        assert not (batch.corrupt_src[~batch.pad_mask] >= 0).any()
