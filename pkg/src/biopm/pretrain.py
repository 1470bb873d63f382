"""Masked-reconstruction pretraining: masking, corruption, loss, Adam, loop."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import model as mdl
from .config import ModelConfig, PretrainConfig
from .data import Window
from .model import TokenBatch
from .signals import activity_index
from .storage import append_jsonl, save_checkpoint
from .tokenize import TokenSequence


@dataclass
class MaskPlan:
    scheme: str                                   # "random" | "contiguous"
    masked: np.ndarray                            # token indices
    corrupted: dict[int, int] = field(default_factory=dict)  # idx -> source


def sample_masking(times_s: np.ndarray, dur_s: np.ndarray, r: float,
                   rng: np.random.Generator, window_s: float = 10.0,
                   corruption_rate: float = 0.2) -> MaskPlan:
    """Hybrid masking: random-token or contiguous-bin scheme, p=1/2 each.

    Guarantees at least one masked and (for N >= 2) at least one visible
    token. Also samples the visible-token corruption set: sources are drawn
    uniformly from the other visible tokens of the same window.
    """
    n = len(times_s)
    if n == 0:
        raise ValueError("cannot mask an empty token sequence")
    if n == 1:
        return MaskPlan(scheme="random", masked=np.array([0]))

    scheme = "random" if rng.random() < 0.5 else "contiguous"
    if scheme == "random":
        k = int(np.clip(round(r * n), 1, n - 1))
        masked = np.sort(rng.choice(n, size=k, replace=False))
    else:
        n_bins = max(int(round(window_s)), 1)
        k_bins = int(np.clip(round(r * n_bins), 1, n_bins))
        start = times_s - dur_s / 2.0
        end = times_s + dur_s / 2.0
        masked = None
        for _ in range(20):
            bins = rng.choice(n_bins, size=k_bins, replace=False)
            hit = np.zeros(n, dtype=bool)
            for bstart in bins:
                hit |= (start < bstart + 1.0) & (end > float(bstart))
            if hit.any() and not hit.all():
                masked = np.flatnonzero(hit)
                break
        if masked is None:
            # degenerate geometry; fall back to the random scheme
            scheme = "random"
            k = int(np.clip(round(r * n), 1, n - 1))
            masked = np.sort(rng.choice(n, size=k, replace=False))

    plan = MaskPlan(scheme=scheme, masked=masked)
    visible = np.setdiff1d(np.arange(n), masked)
    if len(visible) >= 2:
        n_corr = int(round(corruption_rate * len(visible)))
        if n_corr > 0:
            targets = rng.choice(visible, size=n_corr, replace=False)
            for t in targets:
                others = visible[visible != t]
                plan.corrupted[int(t)] = int(rng.choice(others))
    return plan


def apply_masking_to_batch(batch: TokenBatch, r: float,
                           rng: np.random.Generator,
                           corruption_rate: float = 0.2) -> list[MaskPlan]:
    """Fill batch.mask_flags / batch.corrupt_src from per-window plans."""
    b, n = batch.pad_mask.shape
    batch.mask_flags = np.zeros((b, n), dtype=bool)
    batch.corrupt_src = np.full((b, n), -1, dtype=np.int64)
    plans = []
    for i in range(b):
        nv = int(batch.pad_mask[i].sum())
        plan = sample_masking(batch.times_s[i, :nv], batch.dur_s[i, :nv], r,
                              rng, batch.window_s, corruption_rate)
        batch.mask_flags[i, plan.masked] = True
        for idx, src in plan.corrupted.items():
            batch.corrupt_src[i, idx] = src
        plans.append(plan)
    return plans


def apply_corruption(features: np.ndarray, plan: MaskPlan,
                     mask_embed: np.ndarray, h_dim: int) -> np.ndarray:
    """Feature-level view of masking/corruption for one window.

    Masked tokens get the learned embedding in positions [0, h_dim); corrupted
    tokens get the source token's h. Metadata positions stay untouched.
    """
    out = features.copy()
    for idx, src in plan.corrupted.items():
        out[idx, :h_dim] = features[src, :h_dim]
    out[plan.masked, :h_dim] = mask_embed
    return out


def reconstruction_loss(pred: np.ndarray, targets: np.ndarray,
                        mask_flags: np.ndarray, pad_mask: np.ndarray,
                        masked_weight: float = 100.0):
    """Weighted-mean L1 over valid tokens; returns (loss, dLoss/dpred)."""
    if not pad_mask.any():
        raise ValueError("no valid tokens in batch")
    L = pred.shape[-1]
    w = np.where(pad_mask, np.where(mask_flags, masked_weight, 1.0), 0.0)
    diff = pred - targets
    mae = np.abs(diff).mean(axis=-1)
    wsum = w.sum()
    loss = float((w * mae).sum() / wsum)
    d_pred = (w[:, :, None] * np.sign(diff)) / (L * wsum)
    return loss, d_pred


class AdamState:
    def __init__(self, params: dict[str, np.ndarray]):
        self.m = mdl.zeros_like_params(params)
        self.v = mdl.zeros_like_params(params)
        self.t = 0


def adam_step(params: dict, grads: dict, state: AdamState,
              cfg: PretrainConfig) -> None:
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {name}")
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, g in grads.items():
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        params[name] -= cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)


# ---------------------------------------------------------------------------
# upstream window selection


def select_upstream_windows(windows: list[Window], cfg: PretrainConfig,
                            seed: int,
                            noise_variance: float = 0.0) -> list[Window]:
    """AI-threshold filter, intensity strata, per-stratum subsampling.

    The top stratum is always fully retained.
    """
    scored = [(w, activity_index(w, noise_variance)) for w in windows]
    kept = [(w, ai) for w, ai in scored if ai >= cfg.ai_threshold]
    if not kept:
        return []
    ais = np.array([ai for _, ai in kept])
    cuts = np.quantile(ais, cfg.strata_cuts)
    rng = np.random.default_rng(seed)
    out = []
    for stratum, rate in enumerate(cfg.subsample_rates):
        if stratum == 0:
            members = [w for w, ai in kept if ai < cuts[0]]
        elif stratum == 1:
            members = [w for w, ai in kept if cuts[0] <= ai < cuts[1]]
        else:
            members = [w for w, ai in kept if ai >= cuts[1]]
            rate = 1.0   # all high-intensity windows are retained
        if rate >= 1.0:
            out.extend(members)
        else:
            n_keep = int(round(rate * len(members)))
            idx = rng.choice(len(members), size=n_keep, replace=False)
            out.extend(members[i] for i in sorted(idx))
    return out


# ---------------------------------------------------------------------------
# held-out shard and metrics


def is_holdout(window_ref: tuple[str, int], frac: float) -> bool:
    key = f"{window_ref[0]}:{window_ref[1]}".encode()
    bucket = int(hashlib.sha1(key).hexdigest(), 16) % 10000
    return bucket < int(round(frac * 10000))


def masked_region_metrics(pred: np.ndarray, targets: np.ndarray,
                          mask_flags: np.ndarray) -> dict[str, float]:
    p = pred[mask_flags].ravel()
    t = targets[mask_flags].ravel()
    if len(t) == 0:
        return {k: float("nan") for k in
                ("masked_mse", "masked_rmse", "masked_mae", "pearson_r",
                 "nrmse")}
    err = p - t
    mse = float(np.mean(err ** 2))
    rmse = float(np.sqrt(mse))
    mae = float(np.mean(np.abs(err)))
    rng = float(t.max() - t.min())
    nrmse = rmse / rng if rng > 0 else float("nan")
    if np.std(p) > 0 and np.std(t) > 0:
        r = float(np.corrcoef(p, t)[0, 1])
    else:
        r = float("nan")
    return {"masked_mse": mse, "masked_rmse": rmse, "masked_mae": mae,
            "pearson_r": r, "nrmse": nrmse}


def copy_last_visible_baseline(batch: TokenBatch) -> float:
    """Masked L1 of predicting each masked token as the nearest earlier
    visible token's waveform (falling back to the nearest later one)."""
    total, count = 0.0, 0
    b, n, L = batch.waveforms.shape
    for i in range(b):
        valid = np.flatnonzero(batch.pad_mask[i])
        vis = [j for j in valid if not batch.mask_flags[i, j]]
        if not vis:
            continue
        for j in valid:
            if not batch.mask_flags[i, j]:
                continue
            earlier = [v for v in vis if v < j]
            src = earlier[-1] if earlier else vis[0]
            total += float(np.abs(batch.waveforms[i, src]
                                  - batch.waveforms[i, j]).mean())
            count += 1
    return total / max(count, 1)


# ---------------------------------------------------------------------------
# training loop


def pretrain_loop(seqs: list[TokenSequence], model_cfg: ModelConfig,
                  cfg: PretrainConfig, sample_rate_hz: float,
                  window_s: float = 10.0, seed: int = 0,
                  out_dir: str | Path | None = None,
                  config_hash: str = "",
                  log_fn=None) -> tuple[dict, list[dict]]:
    """Train on tokenized windows; returns (params, metrics records)."""
    seqs = [s for s in seqs if s.n > 0]
    if not seqs:
        raise ValueError("empty pretraining corpus")
    seqs = sorted(seqs, key=lambda s: s.window_ref)
    holdout = [s for s in seqs if is_holdout(s.window_ref, cfg.holdout_frac)]
    train = [s for s in seqs if not is_holdout(s.window_ref, cfg.holdout_frac)]
    if not train:
        train = seqs

    params = mdl.init_params(model_cfg, seed=seed)
    state = AdamState(params)
    rng = np.random.default_rng(seed)
    metrics: list[dict] = []
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics_path = out_dir / "pretrain_metrics.jsonl"
        metrics_path.write_text("")

    order: list[int] = []
    for step in range(cfg.steps):
        if len(order) < cfg.batch_size:
            fresh = rng.permutation(len(train)).tolist()
            order.extend(fresh)
        take, order = order[:cfg.batch_size], order[cfg.batch_size:]
        batch = mdl.batch_from_sequences([train[i] for i in take],
                                         sample_rate_hz, window_s)
        apply_masking_to_batch(batch, cfg.mask_rate, rng,
                               cfg.corruption_rate)
        _, pred, cache = mdl.forward(params, model_cfg, batch,
                                     want_cache=True)
        loss, d_pred = reconstruction_loss(pred, batch.waveforms,
                                           batch.mask_flags, batch.pad_mask,
                                           cfg.masked_weight)
        grads = mdl.backward(params, model_cfg, batch, cache, d_pred)
        adam_step(params, grads, state, cfg)

        do_eval = (step + 1) % cfg.eval_interval == 0 or step == cfg.steps - 1
        if do_eval:
            rec = {"step": step + 1, "loss": loss}
            if holdout:
                ev_rng = np.random.default_rng((seed, 0xE7A1))
                ev_batch = mdl.batch_from_sequences(holdout, sample_rate_hz,
                                                    window_s)
                apply_masking_to_batch(ev_batch, cfg.mask_rate, ev_rng,
                                       cfg.corruption_rate)
                _, ev_pred, _ = mdl.forward(params, model_cfg, ev_batch)
                rec.update(masked_region_metrics(ev_pred, ev_batch.waveforms,
                                                 ev_batch.mask_flags))
            metrics.append(rec)
            if out_dir is not None:
                append_jsonl(metrics_path, rec)
            if log_fn is not None:
                log_fn(rec)
        if out_dir is not None and (step + 1) % cfg.checkpoint_interval == 0:
            save_checkpoint(out_dir / f"step_{step + 1:06d}.ckpt", params,
                            step + 1, config_hash, seed)
    if out_dir is not None:
        save_checkpoint(out_dir / "final.ckpt", params, cfg.steps,
                        config_hash, seed)
    return params, metrics
