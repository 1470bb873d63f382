from __future__ import annotations

import numpy as np
import pytest

import biopm.model as mdl
from biopm.config import ModelConfig
from conftest import make_tiny_batch


def fd_check(params, cfg, batch, names, eps=1e-5):
    """Central finite differences against analytic gradients."""
    from biopm.pretrain import reconstruction_loss

    def loss_of(p):
        _, pred, _ = mdl.forward(p, cfg, batch)
        loss, _ = reconstruction_loss(pred, batch.waveforms,
                                      batch.mask_flags, batch.pad_mask)
        return loss

    _, pred, cache = mdl.forward(params, cfg, batch, want_cache=True)
    _, d_pred = reconstruction_loss(pred, batch.waveforms, batch.mask_flags,
                                    batch.pad_mask)
    grads = mdl.backward(params, cfg, batch, cache, d_pred)
    worst = {}
    r = np.random.default_rng(0)
    for name in names:
        g = grads[name]
        flat = params[name].reshape(-1)
        k = min(6, flat.size)
        idxs = r.choice(flat.size, size=k, replace=False)
        for idx in idxs:
            orig = flat[idx]
            flat[idx] = orig + eps
            lp = loss_of(params)
            flat[idx] = orig - eps
            lm = loss_of(params)
            flat[idx] = orig
            num = (lp - lm) / (2 * eps)
            ana = g.reshape(-1)[idx]
            denom = max(abs(num), abs(ana), 1e-8)
            worst[name] = max(worst.get(name, 0.0), abs(num - ana) / denom)
    return worst


def randomize(params, seed=3):
    for k, v in params.items():
        if "ln" in k or k.endswith(".g"):
            continue
        r = np.random.default_rng(abs(hash(k)) % 2 ** 32)
        params[k] = r.normal(0, 0.1, v.shape)
    return params


class TestGelu:
    def test_matches_tanh_form(self):
        x = np.linspace(-4, 4, 101)
        expected = 0.5 * x * (1 + np.tanh(np.sqrt(2 / np.pi)
                                          * (x + 0.044715 * x ** 3)))
        np.testing.assert_allclose(mdl.gelu(x), expected, atol=1e-12)

    def test_grad_finite_difference(self):
        x = np.linspace(-3, 3, 61)
        eps = 1e-6
        num = (mdl.gelu(x + eps) - mdl.gelu(x - eps)) / (2 * eps)
        np.testing.assert_allclose(mdl.gelu_grad(x), num, atol=1e-8)


class TestLayerNorm:
    def test_normalizes(self):
        r = np.random.default_rng(0)
        x = r.normal(3, 5, (4, 7, 16))
        y, _ = mdl.layernorm_fwd(x, np.ones(16), np.zeros(16))
        np.testing.assert_allclose(y.mean(-1), 0, atol=1e-12)
        np.testing.assert_allclose(y.std(-1), 1, atol=1e-6)

    def test_backward_fd(self):
        r = np.random.default_rng(1)
        x = r.normal(0, 1, (2, 3, 8))
        g = r.normal(1, 0.1, 8)
        b = r.normal(0, 0.1, 8)
        w = r.normal(0, 1, (2, 3, 8))   # random cotangent

        def f(xx):
            y, _ = mdl.layernorm_fwd(xx, g, b)
            return float((y * w).sum())

        y, cache = mdl.layernorm_fwd(x, g, b)
        dx, dg, db = mdl.layernorm_bwd(w, cache, g)
        eps = 1e-6
        for _ in range(10):
            i = tuple(r.integers(0, s) for s in x.shape)
            xp = x.copy(); xp[i] += eps
            xm = x.copy(); xm[i] -= eps
            num = (f(xp) - f(xm)) / (2 * eps)
            assert dx[i] == pytest.approx(num, abs=1e-5, rel=1e-5)
        np.testing.assert_allclose(db, w.sum((0, 1)), atol=1e-12)


class TestConv:
    def test_same_padding_shape(self):
        r = np.random.default_rng(0)
        x = r.normal(0, 1, (4, 32, 3))
        w = r.normal(0, 1, (6, 3, 5))
        y, _ = mdl.conv1d_fwd(x, w, np.zeros(6))
        assert y.shape == (4, 32, 6)

    def test_matches_direct_convolution(self):
        r = np.random.default_rng(2)
        x = r.normal(0, 1, (1, 10, 2))
        w = r.normal(0, 1, (3, 2, 5))
        b = r.normal(0, 1, 3)
        y, _ = mdl.conv1d_fwd(x, w, b)
        xp = np.zeros((1, 14, 2))
        xp[:, 2:12] = x
        for t in range(10):
            for co in range(3):
                ref = b[co] + sum(xp[0, t + k, ci] * w[co, ci, k]
                                  for ci in range(2) for k in range(5))
                assert y[0, t, co] == pytest.approx(ref, rel=1e-12)


class TestForward:
    def test_shapes_and_finite(self, tiny_model_cfg):
        batch = make_tiny_batch(tiny_model_cfg)
        params = mdl.init_params(tiny_model_cfg, seed=0)
        u, pred, _ = mdl.forward(params, tiny_model_cfg, batch)
        b, n, L = batch.waveforms.shape
        assert u.shape == (b, n, tiny_model_cfg.d_model)
        assert pred.shape == (b, n, L)
        assert np.isfinite(u).all() and np.isfinite(pred).all()

    def test_padding_invariance(self, tiny_model_cfg):
        """Valid-token outputs are unchanged by garbage in padded slots."""
        batch = make_tiny_batch(tiny_model_cfg)
        params = mdl.init_params(tiny_model_cfg, seed=0)
        u1, p1, _ = mdl.forward(params, tiny_model_cfg, batch)
        batch2 = make_tiny_batch(tiny_model_cfg)
        batch2.waveforms[~batch2.pad_mask] = 77.0
        batch2.times_s[~batch2.pad_mask] = -5.0
        u2, p2, _ = mdl.forward(params, tiny_model_cfg, batch2)
        m = batch.pad_mask
        np.testing.assert_allclose(u1[m], u2[m], atol=1e-10)
        np.testing.assert_allclose(p1[m], p2[m], atol=1e-10)

    def test_masked_token_ignores_own_waveform(self, tiny_model_cfg):
        batch = make_tiny_batch(tiny_model_cfg)
        batch.mask_flags = np.zeros(batch.pad_mask.shape, dtype=bool)
        batch.mask_flags[0, 2] = True
        params = mdl.init_params(tiny_model_cfg, seed=0)
        _, p1, _ = mdl.forward(params, tiny_model_cfg, batch)
        batch.waveforms[0, 2] += 9.0    # only the masked token's waveform
        _, p2, _ = mdl.forward(params, tiny_model_cfg, batch)
        np.testing.assert_allclose(p1[0, 2], p2[0, 2], atol=1e-12)

    def test_disable_positional_removes_time_sensitivity(self,
                                                         tiny_model_cfg):
        batch = make_tiny_batch(tiny_model_cfg)
        params = mdl.init_params(tiny_model_cfg, seed=0)
        u1, _, _ = mdl.forward(params, tiny_model_cfg, batch,
                               disable_positional=True)
        batch.times_s = np.sort(batch.times_s[:, ::-1] * 0.37, axis=1)
        u2, _, _ = mdl.forward(params, tiny_model_cfg, batch,
                               disable_positional=True)
        np.testing.assert_allclose(u1, u2, atol=1e-12)


class TestGradients:
    def test_every_tensor_within_tolerance(self, tiny_model_cfg):
        batch = make_tiny_batch(tiny_model_cfg)
        r = np.random.default_rng(7)
        batch.mask_flags = r.random(batch.pad_mask.shape) < 0.4
        batch.mask_flags &= batch.pad_mask
        if not batch.mask_flags.any():
            batch.mask_flags[0, 0] = True
        params = randomize(mdl.init_params(tiny_model_cfg, seed=0))
        worst = fd_check(params, tiny_model_cfg, batch,
                         mdl.param_names(tiny_model_cfg))
        bad = {k: v for k, v in worst.items() if v > 1e-4}
        assert not bad, f"gradient mismatches: {bad}"

    def test_gradient_with_corruption(self, tiny_model_cfg):
        batch = make_tiny_batch(tiny_model_cfg)
        r = np.random.default_rng(8)
        batch.mask_flags = r.random(batch.pad_mask.shape) < 0.3
        batch.mask_flags &= batch.pad_mask
        batch.mask_flags[0, 0] = True
        batch.corrupt_src = np.full(batch.pad_mask.shape, -1, dtype=np.int64)
        batch.corrupt_src[0, 3] = 1   # visible token 3 takes h from token 1
        params = randomize(mdl.init_params(tiny_model_cfg, seed=0))
        worst = fd_check(params, tiny_model_cfg, batch,
                         ["cnn.conv0.w", "mask_embed", "dec.w0",
                          "layer0.attn.wq", "time_mlp.w0"])
        bad = {k: v for k, v in worst.items() if v > 1e-4}
        assert not bad, f"gradient mismatches: {bad}"


class TestPooling:
    def test_mean_std_content(self):
        r = np.random.default_rng(0)
        u = r.normal(0, 1, (7, 5))
        pooled = mdl.pool_window(u, np.ones(7, dtype=bool))
        np.testing.assert_allclose(pooled[:5], u.mean(0), atol=1e-12)
        np.testing.assert_allclose(pooled[5:], u.std(0), atol=1e-12)

    def test_permutation_invariance(self):
        r = np.random.default_rng(1)
        u = r.normal(0, 1, (9, 4))
        mask = np.ones(9, dtype=bool)
        p1 = mdl.pool_window(u, mask)
        p2 = mdl.pool_window(u[r.permutation(9)], mask)
        np.testing.assert_allclose(p1, p2, atol=1e-12)

    def test_padding_excluded(self):
        r = np.random.default_rng(2)
        u = r.normal(0, 1, (6, 3))
        mask = np.array([True, True, True, True, False, False])
        p1 = mdl.pool_window(u, mask)
        u2 = u.copy()
        u2[~mask] = 1e6
        np.testing.assert_allclose(p1, mdl.pool_window(u2, mask), atol=1e-9)


class TestDeterminism:
    def test_init_params_reproducible(self, tiny_model_cfg):
        p1 = mdl.init_params(tiny_model_cfg, seed=5)
        p2 = mdl.init_params(tiny_model_cfg, seed=5)
        assert all(np.array_equal(p1[k], p2[k]) for k in p1)

    def test_forward_reproducible(self, tiny_model_cfg):
        batch = make_tiny_batch(tiny_model_cfg)
        params = mdl.init_params(tiny_model_cfg, seed=0)
        u1, p1, _ = mdl.forward(params, tiny_model_cfg, batch)
        u2, p2, _ = mdl.forward(params, tiny_model_cfg, batch)
        assert np.array_equal(u1, u2) and np.array_equal(p1, p2)
