"""Subject-disjoint evaluation: splits, probe protocol, sweeps, syntax probe."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.metrics import silhouette_score

from . import model as mdl
from .config import EvalConfig, PretrainConfig, ProbeConfig, RunConfig
from .data import Window
from .pipeline import (contextual_embeddings, noncontextual_embeddings,
                       window_embeddings)
from .pretrain import AdamState, adam_step
from .probe import (Scaler, confusion_matrix, fit_probe, macro_f1,
                    train_logreg)
from .tokenize import TokenSequence


class SplitError(ValueError):
    pass


class VocabularyError(ValueError):
    pass


@dataclass
class SplitPlan:
    mode: str                                  # "losocv" | "kfold5"
    folds: list[tuple[tuple, tuple]]           # (train ids, test ids)
    seed: int


@dataclass
class FoldResult:
    fold: int
    macro_f1: float
    n_test_windows: int
    confusion: np.ndarray


@dataclass
class ProtocolResult:
    folds: list[FoldResult]

    @property
    def mean(self) -> float:
        return float(np.mean([f.macro_f1 for f in self.folds]))

    @property
    def std(self) -> float:
        return float(np.std([f.macro_f1 for f in self.folds]))


@dataclass
class SyntaxProbeResult:
    K: int
    silhouette: float
    accuracy_contextual: float
    accuracy_noncontextual: float
    accuracy_markov: float
    accuracy_shuffle: float
    n_unique_bigrams: int


def make_split_plan(subject_ids, seed: int = 0) -> SplitPlan:
    uniq = sorted(set(subject_ids))
    if len(uniq) < 2:
        raise SplitError("need at least 2 subjects for subject-disjoint splits")
    if len(uniq) <= 10:
        folds = [(tuple(s for s in uniq if s != t), (t,)) for t in uniq]
        return SplitPlan(mode="losocv", folds=folds, seed=seed)
    rng = np.random.default_rng(seed)
    perm = [uniq[i] for i in rng.permutation(len(uniq))]
    parts = np.array_split(np.arange(len(perm)), 5)
    folds = []
    for p in parts:
        test = tuple(perm[i] for i in p)
        train = tuple(s for s in uniq if s not in test)
        folds.append((train, test))
    return SplitPlan(mode="kfold5", folds=folds, seed=seed)


def run_probe_protocol(features: np.ndarray, labels: np.ndarray,
                       subjects: np.ndarray, plan: SplitPlan,
                       probe_cfg: ProbeConfig, n_classes: int,
                       seed: int = 0) -> ProtocolResult:
    """Per fold: scaler on train, C selection, refit, test Macro-F1."""
    labels = np.asarray(labels)
    subjects = np.asarray(subjects)
    results = []
    for fi, (train_subj, test_subj) in enumerate(plan.folds):
        tr = np.isin(subjects, train_subj)
        te = np.isin(subjects, test_subj)
        assert not np.any(tr & te), "subject-disjointness violated"
        if len(np.unique(labels[tr])) < 2:
            warnings.warn(f"fold {fi}: single-class training data, skipped")
            continue
        if te.sum() == 0:
            warnings.warn(f"fold {fi}: no test windows, skipped")
            continue
        model = fit_probe(features[tr], labels[tr], subjects[tr], probe_cfg,
                          seed=seed)
        pred = model.predict(features[te])
        results.append(FoldResult(
            fold=fi, macro_f1=macro_f1(pred, labels[te], n_classes),
            n_test_windows=int(te.sum()),
            confusion=confusion_matrix(pred, labels[te], n_classes)))
    return ProtocolResult(folds=results)


def data_efficiency_sweep(features: np.ndarray, labels: np.ndarray,
                          subjects: np.ndarray, plan: SplitPlan,
                          fractions, probe_cfg: ProbeConfig, n_classes: int,
                          seed: int = 0) -> dict[float, ProtocolResult]:
    """Subsample training subjects per fraction; test subjects stay fixed."""
    labels = np.asarray(labels)
    subjects = np.asarray(subjects)
    out: dict[float, ProtocolResult] = {}
    for frac in fractions:
        folds = []
        for fi, (train_subj, test_subj) in enumerate(plan.folds):
            rng = np.random.default_rng((seed, fi, int(round(frac * 10000))))
            n_keep = max(1, int(round(frac * len(train_subj))))
            idx = rng.choice(len(train_subj), size=n_keep, replace=False)
            sub_train = tuple(train_subj[i] for i in sorted(idx))
            folds.append((sub_train, test_subj))
        sub_plan = SplitPlan(mode=plan.mode, folds=folds, seed=seed)
        out[frac] = run_probe_protocol(features, labels, subjects, sub_plan,
                                       probe_cfg, n_classes, seed)
    return out


# ---------------------------------------------------------------------------
# K-means with silhouette-based vocabulary size selection


def kmeans_fit(x: np.ndarray, k: int, rng: np.random.Generator,
               iters: int = 50) -> np.ndarray:
    """Seeded greedy farthest-candidate init, then Lloyd iterations."""
    n = len(x)
    centers = [x[rng.integers(n)]]
    while len(centers) < k:
        cand = x[rng.choice(n, size=min(128, n), replace=False)]
        d = np.min(((cand[:, None, :] - np.array(centers)[None]) ** 2)
                   .sum(axis=2), axis=1)
        centers.append(cand[np.argmax(d)])
    centers = np.array(centers)
    for _ in range(iters):
        assign = kmeans_assign(x, centers)
        new = centers.copy()
        for c in range(k):
            members = x[assign == c]
            if len(members):
                new[c] = members.mean(axis=0)
            else:
                d = ((x - centers[assign]) ** 2).sum(axis=1)
                new[c] = x[np.argmax(d)]
        if np.allclose(new, centers):
            break
        centers = new
    return centers


def kmeans_assign(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d = ((x[:, None, :] - centers[None]) ** 2).sum(axis=2)
    return np.argmin(d, axis=1)


def select_vocabulary(tokens: np.ndarray, cfg: EvalConfig,
                      seed: int = 0) -> tuple[int, float, np.ndarray]:
    """Sweep K, pick the highest silhouette (ties to smaller K)."""
    n = len(tokens)
    ks = [k for k in cfg.k_sweep if 2 * k <= n]
    if not ks:
        raise VocabularyError(
            f"{n} tokens is too few for any K in {cfg.k_sweep}")
    rng = np.random.default_rng((seed, 0x5EED))
    fit_idx = rng.choice(n, size=min(cfg.kmeans_sample, n), replace=False)
    sil_idx = rng.choice(n, size=min(cfg.silhouette_sample, n), replace=False)
    best = None
    for k in ks:
        centers = kmeans_fit(tokens[fit_idx], k,
                             np.random.default_rng((seed, k)),
                             cfg.kmeans_iters)
        lab = kmeans_assign(tokens[sil_idx], centers)
        if len(np.unique(lab)) < 2:
            score = -1.0
        else:
            score = float(silhouette_score(tokens[sil_idx], lab))
        if best is None or score > best[1]:
            best = (k, score, centers)
    return best


# ---------------------------------------------------------------------------
# syntax probe


def _bigram_instances(id_seqs, emb_seqs):
    """(embedding of p_i, type of p_{i+1}, bigram type) triples."""
    embs, nxt, types = [], [], []
    for ids, em in zip(id_seqs, emb_seqs):
        for i in range(len(ids) - 1):
            embs.append(em[i])
            nxt.append(ids[i + 1])
            types.append((int(ids[i]), int(ids[i + 1])))
    return np.array(embs), np.array(nxt), types


def _split_bigram_types(types, train_frac: float, seed: int):
    uniq = sorted(set(types))
    rng = np.random.default_rng((seed, 0xB16A))
    perm = rng.permutation(len(uniq))
    n_train = int(round(train_frac * len(uniq)))
    train_types = {uniq[i] for i in perm[:n_train]}
    test_types = {uniq[i] for i in perm[n_train:]}
    return train_types, test_types


def _linear_next_type_accuracy(embs, nxt, types, train_types, test_types,
                               K: int, seed: int) -> float:
    tr = np.array([t in train_types for t in types])
    te = np.array([t in test_types for t in types])
    assert not np.any(tr & te)
    if te.sum() == 0 or tr.sum() == 0:
        return float("nan")
    classes = np.unique(nxt[tr])
    if len(classes) < 2:
        return float(np.mean(nxt[te] == classes[0]))
    remap = {c: i for i, c in enumerate(classes)}
    y = np.array([remap[v] for v in nxt[tr]])
    scaler = Scaler.fit(embs[tr])
    w, b = train_logreg(scaler.transform(embs[tr]), y, len(classes), C=1.0,
                        max_iter=300)
    logits = scaler.transform(embs[te]) @ w + b
    pred = classes[np.argmax(logits, axis=1)]
    return float(np.mean(pred == nxt[te]))


def _markov_accuracy(nxt, types, train_types, test_types) -> float:
    tr_counts: dict[int, dict[int, int]] = {}
    for (cur, suc), keep in zip(types, (t in train_types for t in types)):
        if keep:
            tr_counts.setdefault(cur, {}).setdefault(suc, 0)
            tr_counts[cur][suc] += 1
    hits, total = 0, 0
    for cur, suc in types:
        if (cur, suc) not in test_types:
            continue
        total += 1
        if cur in tr_counts:
            # modal successor, ties broken by smaller id
            best = min(sorted(tr_counts[cur]),
                       key=lambda s: (-tr_counts[cur][s], s))
            hits += int(best == suc)
    return hits / total if total else float("nan")


def syntax_probe(seqs: list[TokenSequence], params: dict, cfg: RunConfig,
                 seed: int = 0) -> SyntaxProbeResult:
    """Vocabulary induction, held-out-bigram next-type probe, controls."""
    z_list = noncontextual_embeddings(params, cfg, seqs)
    u_list = contextual_embeddings(params, cfg, seqs)
    # standardize before clustering: k-means is scale-sensitive and the
    # duration coordinate lives on a much smaller scale than the CNN dims
    scaler = Scaler.fit(np.vstack(z_list))
    all_z = scaler.transform(np.vstack(z_list))
    K, sil, centers = select_vocabulary(all_z, cfg.eval, seed)
    id_seqs = [kmeans_assign(scaler.transform(z), centers) for z in z_list]

    _, _, all_types = _bigram_instances(id_seqs, z_list)
    train_types, test_types = _split_bigram_types(
        all_types, cfg.eval.bigram_train_frac, seed)

    embs_u, nxt, types = _bigram_instances(id_seqs, u_list)
    acc_ctx = _linear_next_type_accuracy(embs_u, nxt, types, train_types,
                                         test_types, K, seed)
    embs_z, nxt_z, types_z = _bigram_instances(id_seqs, z_list)
    acc_non = _linear_next_type_accuracy(embs_z, nxt_z, types_z, train_types,
                                         test_types, K, seed)
    acc_mkv = _markov_accuracy(nxt, types, train_types, test_types)

    # shuffle control: permute (embedding, id) pairs within each window,
    # preserving the per-window multiset of token ids
    rng = np.random.default_rng((seed, 0x5F0F))
    sh_ids, sh_embs = [], []
    for ids, em in zip(id_seqs, u_list):
        perm = rng.permutation(len(ids))
        sh_ids.append(ids[perm])
        sh_embs.append(em[perm])
    embs_s, nxt_s, types_s = _bigram_instances(sh_ids, sh_embs)
    tr_s, te_s = _split_bigram_types(types_s, cfg.eval.bigram_train_frac,
                                     seed)
    acc_shf = _linear_next_type_accuracy(embs_s, nxt_s, types_s, tr_s, te_s,
                                         K, seed)

    return SyntaxProbeResult(
        K=K, silhouette=sil, accuracy_contextual=acc_ctx,
        accuracy_noncontextual=acc_non, accuracy_markov=acc_mkv,
        accuracy_shuffle=acc_shf, n_unique_bigrams=len(set(all_types)))


# ---------------------------------------------------------------------------
# end-to-end finetuning baseline (no pretraining)


def end_to_end_finetune(windows: list[Window], seqs: list[TokenSequence],
                        labels: np.ndarray, subjects: np.ndarray,
                        train_subjects, cfg: RunConfig, n_classes: int,
                        seed: int = 0, max_steps: int = 300,
                        batch_size: int = 32, lr: float = 1e-3,
                        eval_interval: int = 25, patience: int = 3):
    """Train the randomly initialized encoder plus a linear head on pooled
    features with cross-entropy; early stopping on a held-out shard of the
    training subjects. Returns a predict(windows, seqs) callable."""
    from .probe import gravity_features

    labels = np.asarray(labels)
    subjects = np.asarray(subjects)
    tr_subj = sorted(set(train_subjects))
    rng = np.random.default_rng(seed)
    n_val = max(1, len(tr_subj) // 5)
    val_subj = set(rng.choice(tr_subj, size=n_val, replace=False).tolist())
    fit_subj = [s for s in tr_subj if s not in val_subj]
    if not fit_subj:
        fit_subj, val_subj = tr_subj, set()

    fit_idx = np.flatnonzero(np.isin(subjects, fit_subj))
    val_idx = np.flatnonzero(np.isin(subjects, sorted(val_subj)))

    params = mdl.init_params(cfg.model, seed=seed)
    feat_dim = 2 * cfg.model.d_model + 900
    params["head.w"] = np.zeros((feat_dim, n_classes))
    params["head.b"] = np.zeros(n_classes)
    state = AdamState(params)
    fs = cfg.pipeline.sample_rate_hz
    win_s = cfg.pipeline.window_s
    grav = {i: gravity_features(windows[i], cfg.pipeline.cutoff_hz,
                                cfg.pipeline.filter_order)
            for i in np.concatenate([fit_idx, val_idx])} if len(val_idx) \
        else {i: gravity_features(windows[i], cfg.pipeline.cutoff_hz,
                                  cfg.pipeline.filter_order)
              for i in fit_idx}

    def batch_forward(idx, want_cache):
        batch = mdl.batch_from_sequences([seqs[i] for i in idx], fs, win_s)
        u, _, cache = mdl.forward(params, cfg.model, batch,
                                  want_cache=want_cache)
        pooled = mdl.pool_window(u, batch.pad_mask)
        gfeat = np.stack([grav[i] for i in idx])
        feats = np.concatenate([pooled, gfeat], axis=1)
        logits = feats @ params["head.w"] + params["head.b"]
        return batch, u, pooled, feats, logits, cache

    def predict_idx(idx):
        preds = []
        for s in range(0, len(idx), batch_size):
            _, _, _, _, logits, _ = batch_forward(idx[s:s + batch_size],
                                                  False)
            preds.append(np.argmax(logits, axis=1))
        return np.concatenate(preds)

    best_val, best_params, strikes = -1.0, None, 0
    for step in range(max_steps):
        take = rng.choice(fit_idx, size=min(batch_size, len(fit_idx)),
                          replace=False)
        batch, u, pooled, feats, logits, cache = batch_forward(take, True)
        y = labels[take]
        probs = np.exp(logits - logits.max(axis=1, keepdims=True))
        probs /= probs.sum(axis=1, keepdims=True)
        delta = probs
        delta[np.arange(len(y)), y] -= 1.0
        delta /= len(y)
        d_feats = delta @ params["head.w"].T
        d_pooled = d_feats[:, :2 * cfg.model.d_model]
        d_u = mdl.pool_window_bwd(u, batch.pad_mask, d_pooled)
        grads = mdl.backward(params, cfg.model, batch, cache,
                             d_pred=np.zeros_like(batch.waveforms), d_u=d_u)
        grads["head.w"] = feats.T @ delta
        grads["head.b"] = delta.sum(axis=0)
        adam_step(params, grads, state, PretrainConfig(lr=lr))
        if len(val_idx) and (step + 1) % eval_interval == 0:
            val_pred = predict_idx(val_idx)
            score = macro_f1(val_pred, labels[val_idx], n_classes)
            if score > best_val:
                best_val, strikes = score, 0
                best_params = {k: v.copy() for k, v in params.items()}
            else:
                strikes += 1
                if strikes >= patience:
                    break
    if best_params is not None:
        params.update(best_params)

    def predict(test_idx):
        return predict_idx(np.asarray(test_idx))

    return predict
