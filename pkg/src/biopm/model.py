"""Segment encoder, time-aware Transformer, decoder, and exact gradients.

Everything runs in float64 numpy. The backward pass is written by hand and
is checked against central finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import ModelConfig
from .tokenize import TokenSequence

LN_EPS = 1e-5
NEG_INF = -1e30


class NumericError(FloatingPointError):
    pass


# ---------------------------------------------------------------------------
# primitives


_GELU_C = np.sqrt(2.0 / np.pi)
_GELU_A = 0.044715


def _gelu_tanh_arg(x):
    arg = x * x
    arg *= _GELU_A
    arg += 1.0
    arg *= x
    arg *= _GELU_C
    return arg


def gelu(x):
    """GELU, tanh form (Hendrycks & Gimpel): much cheaper than erf on CPU."""
    return gelu_fwd(x)[0]


def gelu_fwd(x):
    """Returns (gelu(x), tanh term) so backward can reuse the tanh.

    Written with in-place ufuncs: these arrays dominate the model's
    elementwise cost and extra temporaries are measurably expensive.
    """
    th = _gelu_tanh_arg(x)
    np.tanh(th, out=th)
    y = th + 1.0
    y *= x
    y *= 0.5
    return y, th


def gelu_grad(x, th=None):
    if th is None:
        th = _gelu_tanh_arg(x)
        np.tanh(th, out=th)
    # 0.5 * (1 + th + x * C * (1 + 3A x^2) * (1 - th^2))
    g = x * x
    g *= 3.0 * _GELU_A
    g += 1.0
    g *= _GELU_C
    g *= x
    sech2 = th * th
    np.subtract(1.0, sech2, out=sech2)
    g *= sech2
    g += 1.0
    g += th
    g *= 0.5
    return g


def layernorm_fwd(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv
    return xhat * g + b, (xhat, inv)


def layernorm_bwd(dy, cache, g):
    xhat, inv = cache
    dg = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    db = dy.sum(axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * g
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (dxhat - m1 - xhat * m2)
    return dx, dg, db


def conv1d_fwd(x, w, b):
    """Same-padded 1D convolution as K shifted flat GEMMs.

    Channels-last layout: x (M, T, Cin), w (Cout, Cin, K), y (M, T, Cout).
    Weight taps are copied contiguous so matmul stays on the BLAS path;
    the cache is the time-padded copy of x.
    """
    m, t, cin = x.shape
    cout, _, k = w.shape
    pad = k // 2
    xp = np.zeros((m, t + 2 * pad, cin))
    xp[:, pad:pad + t] = x
    # im2col: windows over the time axis; channels-last keeps this contiguous
    sw = np.lib.stride_tricks.sliding_window_view(xp, k, axis=1)
    xcol = np.ascontiguousarray(sw).reshape(m * t, cin * k)
    wmat = np.ascontiguousarray(w.transpose(1, 2, 0)).reshape(cin * k, cout)
    y = (xcol @ wmat).reshape(m, t, cout)
    return y + b, xcol


def conv1d_bwd(dy, xcol, w, x_shape):
    m, t, cin = x_shape
    cout, _, k = w.shape
    pad = k // 2
    dy2 = np.ascontiguousarray(dy).reshape(m * t, cout)
    wmat = np.ascontiguousarray(w.transpose(1, 2, 0)).reshape(cin * k, cout)
    dw = (dy2.T @ xcol).reshape(cout, cin, k)
    dxcol = (dy2 @ wmat.T).reshape(m, t, cin, k)
    dxp = np.zeros((m, t + 2 * pad, cin))
    for kk in range(k):
        dxp[:, kk:kk + t] += dxcol[:, :, :, kk]
    db = dy.sum(axis=(0, 1))
    return dxp[:, pad:pad + t], dw, db


# ---------------------------------------------------------------------------
# parameters


def param_names(cfg: ModelConfig) -> list[str]:
    names = ["cnn.conv0.w", "cnn.conv0.b", "cnn.conv1.w", "cnn.conv1.b",
             "cnn.conv2.w", "cnn.conv2.b", "axis_embed",
             "time_mlp.w0", "time_mlp.b0", "time_mlp.w1", "time_mlp.b1",
             "embed_ln.g", "embed_ln.b", "mask_embed", "rel_bias"]
    for l in range(cfg.n_layers):
        names += [f"layer{l}.ln1.g", f"layer{l}.ln1.b",
                  f"layer{l}.attn.wq", f"layer{l}.attn.bq",
                  f"layer{l}.attn.wk", f"layer{l}.attn.bk",
                  f"layer{l}.attn.wv", f"layer{l}.attn.bv",
                  f"layer{l}.attn.wo", f"layer{l}.attn.bo",
                  f"layer{l}.ln2.g", f"layer{l}.ln2.b",
                  f"layer{l}.ff.w0", f"layer{l}.ff.b0",
                  f"layer{l}.ff.w1", f"layer{l}.ff.b1"]
    names += ["final_ln.g", "final_ln.b", "dec.w0", "dec.b0", "dec.w1",
              "dec.b1"]
    return names


def init_params(cfg: ModelConfig, seed: int = 0,
                waveform_len: int = 32) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    d, hdim = cfg.d_model, cfg.h_dim
    c1, c2 = cfg.cnn_channels

    def tn(*shape):
        x = rng.standard_normal(shape) * cfg.init_std
        return np.clip(x, -2 * cfg.init_std, 2 * cfg.init_std)

    p: dict[str, np.ndarray] = {}
    p["cnn.conv0.w"] = tn(c1, 1, 5)
    p["cnn.conv0.b"] = np.zeros(c1)
    p["cnn.conv1.w"] = tn(c2, c1, 5)
    p["cnn.conv1.b"] = np.zeros(c2)
    p["cnn.conv2.w"] = tn(hdim, c2, 5)
    p["cnn.conv2.b"] = np.zeros(hdim)
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    p["axis_embed"] = q
    p["time_mlp.w0"] = tn(1, d)
    p["time_mlp.b0"] = np.zeros(d)
    p["time_mlp.w1"] = tn(d, d)
    p["time_mlp.b1"] = np.zeros(d)
    p["embed_ln.g"] = np.ones(d)
    p["embed_ln.b"] = np.zeros(d)
    p["mask_embed"] = tn(hdim)
    p["rel_bias"] = np.zeros((cfg.n_buckets, cfg.n_heads))
    for l in range(cfg.n_layers):
        p[f"layer{l}.ln1.g"] = np.ones(d)
        p[f"layer{l}.ln1.b"] = np.zeros(d)
        for nm in ("wq", "wk", "wv", "wo"):
            p[f"layer{l}.attn.{nm}"] = tn(d, d)
        for nm in ("bq", "bk", "bv", "bo"):
            p[f"layer{l}.attn.{nm}"] = np.zeros(d)
        p[f"layer{l}.ln2.g"] = np.ones(d)
        p[f"layer{l}.ln2.b"] = np.zeros(d)
        p[f"layer{l}.ff.w0"] = tn(d, cfg.ff_dim)
        p[f"layer{l}.ff.b0"] = np.zeros(cfg.ff_dim)
        p[f"layer{l}.ff.w1"] = tn(cfg.ff_dim, d)
        p[f"layer{l}.ff.b1"] = np.zeros(d)
    p["final_ln.g"] = np.ones(d)
    p["final_ln.b"] = np.zeros(d)
    p["dec.w0"] = tn(d, cfg.dec_hidden)
    p["dec.b0"] = np.zeros(cfg.dec_hidden)
    p["dec.w1"] = tn(cfg.dec_hidden, waveform_len)
    p["dec.b1"] = np.zeros(waveform_len)
    return p


def zeros_like_params(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.items()}


def param_count(params: dict[str, np.ndarray]) -> int:
    return sum(v.size for v in params.values())


# ---------------------------------------------------------------------------
# batching


@dataclass
class TokenBatch:
    waveforms: np.ndarray      # (B, N, L) reconstruction targets
    axes: np.ndarray           # (B, N) int
    dur_s: np.ndarray          # (B, N) duration in seconds
    times_s: np.ndarray        # (B, N) midpoint times, sorted among valid
    pad_mask: np.ndarray       # (B, N) True where a real token sits
    window_s: float = 10.0
    mask_flags: np.ndarray | None = None   # (B, N) True = masked token
    corrupt_src: np.ndarray | None = None  # (B, N) source index or -1
    window_refs: list = field(default_factory=list)

    @property
    def shape(self):
        return self.waveforms.shape


def batch_from_sequences(seqs: list[TokenSequence], sample_rate_hz: float,
                         window_s: float = 10.0) -> TokenBatch:
    b = len(seqs)
    n = max(s.n for s in seqs)
    L = seqs[0].waveforms.shape[1]
    wf = np.zeros((b, n, L))
    axes = np.zeros((b, n), dtype=np.int64)
    dur = np.zeros((b, n))
    times = np.zeros((b, n))
    pad = np.zeros((b, n), dtype=bool)
    for i, s in enumerate(seqs):
        k = s.n
        wf[i, :k] = s.waveforms
        axes[i, :k] = s.axes
        dur[i, :k] = s.durations / sample_rate_hz
        times[i, :k] = s.times_s
        pad[i, :k] = True
    return TokenBatch(wf, axes, dur, times, pad, window_s,
                      window_refs=[s.window_ref for s in seqs])


# ---------------------------------------------------------------------------
# relative position buckets


def relative_bucket_matrix(times_s: np.ndarray, pad_mask: np.ndarray,
                           window_s: float, max_offset: int) -> np.ndarray:
    """(B, N, N) bucket indices from median-interval-normalized offsets."""
    b, n = times_s.shape
    buckets = np.zeros((b, n, n), dtype=np.int64)
    for i in range(b):
        t = times_s[i][pad_mask[i]]
        if len(t) >= 2:
            gaps = np.diff(t)
            med = float(np.median(gaps))
        else:
            med = 0.0
        if med <= 0.0:
            med = window_s / max(len(t), 1)
        dt = times_s[i][:, None] - times_s[i][None, :]
        s = np.clip(np.round(dt / med), -max_offset, max_offset)
        buckets[i] = s.astype(np.int64) + max_offset
    return buckets


# ---------------------------------------------------------------------------
# forward


def forward(params: dict, cfg: ModelConfig, batch: TokenBatch,
            disable_positional: bool = False,
            want_cache: bool = False):
    """Full forward pass: CNN encode, assemble, Transformer, decode.

    Masking/corruption (batch.mask_flags / batch.corrupt_src) are applied to
    the CNN embeddings before token assembly. Returns (u, pred, cache).
    """
    b, n, L = batch.waveforms.shape
    d, hdim, heads = cfg.d_model, cfg.h_dim, cfg.n_heads
    dh = d // heads
    cache: dict = {"layers": []}

    # segment encoder (run only on real tokens; padded slots stay zero and
    # carry exactly zero gradient, so compressing them is a pure speedup)
    valid = batch.pad_mask.reshape(-1)
    x0 = batch.waveforms.reshape(b * n, L, 1)[valid]
    c0, xp0 = conv1d_fwd(x0, params["cnn.conv0.w"], params["cnn.conv0.b"])
    a0, cdf0 = gelu_fwd(c0)
    c1, xp1 = conv1d_fwd(a0, params["cnn.conv1.w"], params["cnn.conv1.b"])
    a1, cdf1 = gelu_fwd(c1)
    c2, xp2 = conv1d_fwd(a1, params["cnn.conv2.w"], params["cnn.conv2.b"])
    a2, cdf2 = gelu_fwd(c2)
    h = np.zeros((b * n, hdim))
    h[valid] = a2.mean(axis=1)
    h = h.reshape(b, n, hdim)

    # masking / corruption on h
    if batch.corrupt_src is not None:
        gather = np.where(batch.corrupt_src >= 0, batch.corrupt_src,
                          np.arange(n)[None, :])
    else:
        gather = np.tile(np.arange(n)[None, :], (b, 1))
    h_eff = np.take_along_axis(h, gather[:, :, None], axis=1)
    if batch.mask_flags is not None:
        h_eff = np.where(batch.mask_flags[:, :, None], params["mask_embed"],
                         h_eff)

    # token assembly: [h | axis embedding | duration]
    e = params["axis_embed"][batch.axes]
    z = np.concatenate([h_eff, e, batch.dur_s[:, :, None]], axis=2)

    # absolute time embedding
    t_norm = batch.times_s / batch.window_s
    p_in = t_norm[:, :, None]
    p1 = p_in @ params["time_mlp.w0"] + params["time_mlp.b0"]
    pg = gelu(p1)
    p_out = pg @ params["time_mlp.w1"] + params["time_mlp.b1"]
    if disable_positional:
        p_out = np.zeros_like(p_out)
    pre = z + p_out
    x, ln_embed_cache = layernorm_fwd(pre, params["embed_ln.g"],
                                      params["embed_ln.b"])

    # relative attention bias
    buckets = relative_bucket_matrix(batch.times_s, batch.pad_mask,
                                     batch.window_s, cfg.max_rel_offset)
    if disable_positional:
        bias = np.zeros((b, heads, n, n))
    else:
        bias = params["rel_bias"][buckets].transpose(0, 3, 1, 2)
    key_mask = np.where(batch.pad_mask[:, None, None, :], 0.0, NEG_INF)

    if want_cache:
        cache.update(xp0=xp0, c0=c0, cdf0=cdf0, xp1=xp1, c1=c1, cdf1=cdf1,
                     xp2=xp2, c2=c2, cdf2=cdf2, valid=valid,
                     gather=gather, h=h, h_eff=h_eff, p1=p1, pg=pg,
                     p_in=p_in, ln_embed=ln_embed_cache, buckets=buckets,
                     L=L, x0_shape=x0.shape, a0_shape=a0.shape,
                     a1_shape=a1.shape)

    # transformer layers (pre-norm)
    scale = 1.0 / np.sqrt(dh)
    for l in range(cfg.n_layers):
        lc: dict = {}
        a, lc["ln1"] = layernorm_fwd(x, params[f"layer{l}.ln1.g"],
                                     params[f"layer{l}.ln1.b"])
        q = a @ params[f"layer{l}.attn.wq"] + params[f"layer{l}.attn.bq"]
        k = a @ params[f"layer{l}.attn.wk"] + params[f"layer{l}.attn.bk"]
        v = a @ params[f"layer{l}.attn.wv"] + params[f"layer{l}.attn.bv"]
        qh = q.reshape(b, n, heads, dh).transpose(0, 2, 1, 3)
        kh = k.reshape(b, n, heads, dh).transpose(0, 2, 1, 3)
        vh = v.reshape(b, n, heads, dh).transpose(0, 2, 1, 3)
        logits = (qh @ kh.swapaxes(-1, -2)) * scale
        logits = logits + bias + key_mask
        logits -= logits.max(axis=-1, keepdims=True)
        expl = np.exp(logits)
        attn = expl / expl.sum(axis=-1, keepdims=True)
        ctx = attn @ vh
        ctx_flat = ctx.transpose(0, 2, 1, 3).reshape(b, n, d)
        out = ctx_flat @ params[f"layer{l}.attn.wo"] + params[f"layer{l}.attn.bo"]
        x = x + out
        f, lc["ln2"] = layernorm_fwd(x, params[f"layer{l}.ln2.g"],
                                     params[f"layer{l}.ln2.b"])
        f1 = f @ params[f"layer{l}.ff.w0"] + params[f"layer{l}.ff.b0"]
        fg, fcdf = gelu_fwd(f1)
        f2 = fg @ params[f"layer{l}.ff.w1"] + params[f"layer{l}.ff.b1"]
        x = x + f2
        if not np.all(np.isfinite(x[batch.pad_mask])):
            raise NumericError(f"non-finite activations in layer {l}")
        if want_cache:
            lc.update(a=a, qh=qh, kh=kh, vh=vh, attn=attn,
                      ctx_flat=ctx_flat, f=f, f1=f1, fg=fg, fcdf=fcdf)
            cache["layers"].append(lc)

    u, ln_final_cache = layernorm_fwd(x, params["final_ln.g"],
                                      params["final_ln.b"])

    d1 = u @ params["dec.w0"] + params["dec.b0"]
    dg, dcdf = gelu_fwd(d1)
    pred = dg @ params["dec.w1"] + params["dec.b1"]

    if want_cache:
        cache.update(ln_final=ln_final_cache, u=u, d1=d1, dg=dg, dcdf=dcdf,
                     disable_positional=disable_positional)
    return u, pred, cache


def backward(params: dict, cfg: ModelConfig, batch: TokenBatch, cache: dict,
             d_pred: np.ndarray,
             d_u: np.ndarray | None = None) -> dict[str, np.ndarray]:
    """Exact gradients of the scalar loss for every parameter tensor.

    d_pred is dLoss/d(decoder output); d_u optionally injects gradient at
    the contextual embeddings (used by the end-to-end classification head).
    """
    b, n, L = batch.waveforms.shape
    d, hdim, heads = cfg.d_model, cfg.h_dim, cfg.n_heads
    dh = d // heads
    scale = 1.0 / np.sqrt(dh)
    g = zeros_like_params(params)

    # decoder
    u, d1, dg = cache["u"], cache["d1"], cache["dg"]
    g["dec.w1"] = dg.reshape(-1, dg.shape[-1]).T @ d_pred.reshape(-1, d_pred.shape[-1])
    g["dec.b1"] = d_pred.sum(axis=(0, 1))
    ddg = d_pred @ params["dec.w1"].T
    dd1 = ddg * gelu_grad(d1, cache["dcdf"])
    g["dec.w0"] = u.reshape(-1, u.shape[-1]).T @ dd1.reshape(-1, dd1.shape[-1])
    g["dec.b0"] = dd1.sum(axis=(0, 1))
    du = dd1 @ params["dec.w0"].T
    if d_u is not None:
        du = du + d_u

    dx, g["final_ln.g"], g["final_ln.b"] = layernorm_bwd(
        du, cache["ln_final"], params["final_ln.g"])

    d_bias = np.zeros((b, heads, n, n))
    for l in reversed(range(cfg.n_layers)):
        lc = cache["layers"][l]
        # feed-forward block
        df2 = dx
        g[f"layer{l}.ff.w1"] = lc["fg"].reshape(-1, lc["fg"].shape[-1]).T @ df2.reshape(-1, d)
        g[f"layer{l}.ff.b1"] = df2.sum(axis=(0, 1))
        dfg = df2 @ params[f"layer{l}.ff.w1"].T
        df1 = dfg * gelu_grad(lc["f1"], lc["fcdf"])
        g[f"layer{l}.ff.w0"] = lc["f"].reshape(-1, d).T @ df1.reshape(-1, df1.shape[-1])
        g[f"layer{l}.ff.b0"] = df1.sum(axis=(0, 1))
        df = df1 @ params[f"layer{l}.ff.w0"].T
        dres, g[f"layer{l}.ln2.g"], g[f"layer{l}.ln2.b"] = layernorm_bwd(
            df, lc["ln2"], params[f"layer{l}.ln2.g"])
        dx = dx + dres
        # attention block
        dout = dx
        g[f"layer{l}.attn.wo"] = lc["ctx_flat"].reshape(-1, d).T @ dout.reshape(-1, d)
        g[f"layer{l}.attn.bo"] = dout.sum(axis=(0, 1))
        dctx_flat = dout @ params[f"layer{l}.attn.wo"].T
        dctx = dctx_flat.reshape(b, n, heads, dh).transpose(0, 2, 1, 3)
        attn, vh, qh, kh = lc["attn"], lc["vh"], lc["qh"], lc["kh"]
        dattn = dctx @ vh.swapaxes(-1, -2)
        dvh = attn.swapaxes(-1, -2) @ dctx
        dlogits = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
        d_bias += dlogits
        dqh = (dlogits @ kh) * scale
        dkh = (dlogits.swapaxes(-1, -2) @ qh) * scale
        dq = dqh.transpose(0, 2, 1, 3).reshape(b, n, d)
        dk = dkh.transpose(0, 2, 1, 3).reshape(b, n, d)
        dv = dvh.transpose(0, 2, 1, 3).reshape(b, n, d)
        a = lc["a"]
        a2 = a.reshape(-1, d)
        g[f"layer{l}.attn.wq"] = a2.T @ dq.reshape(-1, d)
        g[f"layer{l}.attn.bq"] = dq.sum(axis=(0, 1))
        g[f"layer{l}.attn.wk"] = a2.T @ dk.reshape(-1, d)
        g[f"layer{l}.attn.bk"] = dk.sum(axis=(0, 1))
        g[f"layer{l}.attn.wv"] = a2.T @ dv.reshape(-1, d)
        g[f"layer{l}.attn.bv"] = dv.sum(axis=(0, 1))
        da = (dq @ params[f"layer{l}.attn.wq"].T
              + dk @ params[f"layer{l}.attn.wk"].T
              + dv @ params[f"layer{l}.attn.wv"].T)
        dres, g[f"layer{l}.ln1.g"], g[f"layer{l}.ln1.b"] = layernorm_bwd(
            da, lc["ln1"], params[f"layer{l}.ln1.g"])
        dx = dx + dres

    # relative bias gradient: shared across layers, scatter by bucket id
    if not cache["disable_positional"]:
        np.add.at(g["rel_bias"], cache["buckets"].reshape(-1),
                  d_bias.transpose(0, 2, 3, 1).reshape(-1, heads))

    # embedding layer norm
    dpre, g["embed_ln.g"], g["embed_ln.b"] = layernorm_bwd(
        dx, cache["ln_embed"], params["embed_ln.g"])

    # time MLP
    if not cache["disable_positional"]:
        dp_out = dpre
        pg, p1, p_in = cache["pg"], cache["p1"], cache["p_in"]
        g["time_mlp.w1"] = pg.reshape(-1, pg.shape[-1]).T @ dp_out.reshape(-1, dp_out.shape[-1])
        g["time_mlp.b1"] = dp_out.sum(axis=(0, 1))
        dpg = dp_out @ params["time_mlp.w1"].T
        dp1 = dpg * gelu_grad(p1)
        g["time_mlp.w0"] = p_in.reshape(-1, 1).T @ dp1.reshape(-1, dp1.shape[-1])
        g["time_mlp.b0"] = dp1.sum(axis=(0, 1))

    dz = dpre
    dh_eff = dz[:, :, :hdim]
    de = dz[:, :, hdim:hdim + 3]
    np.add.at(g["axis_embed"], batch.axes.reshape(-1), de.reshape(-1, 3))

    # undo masking / corruption routing
    if batch.mask_flags is not None:
        masked = batch.mask_flags[:, :, None]
        g["mask_embed"] = dh_eff[batch.mask_flags].sum(axis=0) \
            if batch.mask_flags.any() else np.zeros(hdim)
        dh_routed = np.where(masked, 0.0, dh_eff)
    else:
        dh_routed = dh_eff
    dhm = np.zeros((b, n, hdim))
    bidx = np.repeat(np.arange(b), n)
    np.add.at(dhm, (bidx, cache["gather"].reshape(-1)),
              dh_routed.reshape(-1, hdim))

    # CNN backward on real tokens only; mean-pool spreads gradient uniformly
    da2_tok = dhm.reshape(b * n, hdim)[cache["valid"]] / L
    dc2 = da2_tok[:, None, :] * gelu_grad(cache["c2"], cache["cdf2"])
    da1, g["cnn.conv2.w"], g["cnn.conv2.b"] = conv1d_bwd(
        dc2, cache["xp2"], params["cnn.conv2.w"], cache["a1_shape"])
    dc1 = da1 * gelu_grad(cache["c1"], cache["cdf1"])
    da0, g["cnn.conv1.w"], g["cnn.conv1.b"] = conv1d_bwd(
        dc1, cache["xp1"], params["cnn.conv1.w"], cache["a0_shape"])
    dc0 = da0 * gelu_grad(cache["c0"], cache["cdf0"])
    _, g["cnn.conv0.w"], g["cnn.conv0.b"] = conv1d_bwd(
        dc0, cache["xp0"], params["cnn.conv0.w"], cache["x0_shape"])
    return g


# ---------------------------------------------------------------------------
# pooling (window-level representation)


def pool_window(u: np.ndarray, pad_mask: np.ndarray) -> np.ndarray:
    """Mean and population-std pooling over valid tokens. (B,N,D) -> (B,2D)."""
    if u.ndim == 2:
        u, pad_mask = u[None], pad_mask[None]
        squeeze = True
    else:
        squeeze = False
    counts = pad_mask.sum(axis=1)
    if np.any(counts == 0):
        raise ValueError("window with zero valid tokens cannot be pooled")
    w = pad_mask[:, :, None].astype(np.float64)
    mean = (u * w).sum(axis=1) / counts[:, None]
    var = (((u - mean[:, None, :]) ** 2) * w).sum(axis=1) / counts[:, None]
    out = np.concatenate([mean, np.sqrt(var)], axis=1)
    return out[0] if squeeze else out


def pool_window_bwd(u: np.ndarray, pad_mask: np.ndarray,
                    d_pooled: np.ndarray) -> np.ndarray:
    """Gradient of pool_window wrt u; std guarded away from zero."""
    counts = pad_mask.sum(axis=1)[:, None]
    w = pad_mask[:, :, None].astype(np.float64)
    dmodel = u.shape[2]
    mean = (u * w).sum(axis=1) / counts
    centered = (u - mean[:, None, :]) * w
    var = (centered ** 2).sum(axis=1) / counts
    std = np.sqrt(var)
    dmean = d_pooled[:, :dmodel]
    dstd = d_pooled[:, dmodel:]
    dvar = dstd / (2.0 * np.maximum(std, 1e-12))
    # centered sums to zero over valid tokens, so the mean-shift inside the
    # variance term cancels exactly
    du = w * dmean[:, None, :] / counts[:, None, :]
    du += 2.0 * centered * (dvar / counts)[:, None, :]
    return du
