"""Frozen-encoder window embeddings and the linear probing machinery."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ProbeConfig
from .data import Window
from .signals import FilterSpec, _filtfilt, design_butterworth
from .tokenize import resample_segment


class DegenerateProbeError(ValueError):
    pass


# ---------------------------------------------------------------------------
# features


def gravity_features(window: Window, cutoff_hz: float = 0.5,
                     order: int = 6, n_per_axis: int = 300) -> np.ndarray:
    """Lowpass residual, each axis resampled to n_per_axis, axis-major."""
    lp = design_butterworth(FilterSpec(window.sample_rate_hz, cutoff_hz,
                                       order, "lowpass"))
    grav = _filtfilt(lp, window.data)
    parts = [resample_segment(grav[:, a], n_per_axis) for a in range(3)]
    return np.concatenate(parts)


def fuse_features(segment_repr: np.ndarray,
                  gravity_feat: np.ndarray | None) -> np.ndarray:
    if gravity_feat is None:
        return segment_repr
    return np.concatenate([segment_repr, gravity_feat])


# ---------------------------------------------------------------------------
# scaler


@dataclass
class Scaler:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "Scaler":
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        std = np.where(std == 0.0, 1.0, std)   # zero-variance guard
        return cls(mean=mean, std=std)

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std


# ---------------------------------------------------------------------------
# multinomial logistic regression (full-batch, backtracking line search)


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _nll_and_grad(w: np.ndarray, b: np.ndarray, x: np.ndarray,
                  y: np.ndarray, C: float):
    """L2-regularized multinomial cross-entropy (sum over rows) and grads.

    Objective: sum_i CE_i + ||W||^2 / (2C); intercepts unpenalized.
    """
    n = len(y)
    probs = _softmax(x @ w + b)
    loss = -np.log(np.clip(probs[np.arange(n), y], 1e-300, None)).sum()
    loss += (w ** 2).sum() / (2.0 * C)
    delta = probs
    delta[np.arange(n), y] -= 1.0
    gw = x.T @ delta + w / C
    gb = delta.sum(axis=0)
    return loss, gw, gb


def train_logreg(x: np.ndarray, y: np.ndarray, n_classes: int, C: float,
                 max_iter: int = 500, grad_tol: float = 1e-5,
                 return_history: bool = False):
    """Deterministic full-batch gradient descent with backtracking.

    Stops at gradient-norm tolerance (scaled by row count) or iteration cap.
    """
    n, dim = x.shape
    w = np.zeros((dim, n_classes))
    b = np.zeros(n_classes)
    loss, gw, gb = _nll_and_grad(w, b, x, y, C)
    lr = 1.0 / max(n, 1)
    history = [loss]
    for _ in range(max_iter):
        gnorm = np.sqrt((gw ** 2).sum() + (gb ** 2).sum())
        if gnorm / max(n, 1) < grad_tol:
            break
        # backtracking line search on the full objective
        step = lr * 2.0
        for _ in range(40):
            w2 = w - step * gw
            b2 = b - step * gb
            loss2, gw2, gb2 = _nll_and_grad(w2, b2, x, y, C)
            if loss2 <= loss - 1e-4 * step * gnorm ** 2:
                break
            step *= 0.5
        else:
            break
        w, b, loss, gw, gb, lr = w2, b2, loss2, gw2, gb2, step
        history.append(loss)
    if return_history:
        return w, b, history
    return w, b


@dataclass
class ProbeModel:
    weights: np.ndarray        # (dim, K)
    intercepts: np.ndarray     # (K,)
    scaler: Scaler
    C: float
    classes: np.ndarray        # original class ids, sorted

    def predict(self, x: np.ndarray) -> np.ndarray:
        z = self.scaler.transform(x)
        return self.classes[np.argmax(z @ self.weights + self.intercepts,
                                      axis=1)]


def macro_f1(predictions: np.ndarray, labels: np.ndarray, K: int) -> float:
    """Unweighted mean per-class F1.

    A class absent from both predictions and labels is excluded; a class
    present in one but with zero P or R contributes F1 = 0.
    """
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    scores = []
    for k in range(K):
        tp = np.sum((predictions == k) & (labels == k))
        fp = np.sum((predictions == k) & (labels != k))
        fn = np.sum((predictions != k) & (labels == k))
        if tp + fp + fn == 0:
            continue   # absent from both sides
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom > 0 else 0.0)
    return float(np.mean(scores)) if scores else 0.0


def confusion_matrix(predictions: np.ndarray, labels: np.ndarray,
                     K: int) -> np.ndarray:
    cm = np.zeros((K, K), dtype=np.int64)
    for t, p in zip(labels, predictions):
        cm[int(t), int(p)] += 1
    return cm


def _subject_folds(subjects: np.ndarray, n_folds: int,
                   seed: int) -> list[np.ndarray]:
    uniq = np.array(sorted(set(subjects)))
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(uniq))
    return [uniq[perm[i::n_folds]] for i in range(n_folds)]


def fit_probe(features: np.ndarray, labels: np.ndarray,
              subjects: np.ndarray, cfg: ProbeConfig,
              seed: int = 0) -> ProbeModel:
    """The linear-probe recipe: scaler on train rows, C by inner subject-wise
    CV maximizing Macro-F1 (ties to smaller C), refit on all train rows."""
    classes = np.unique(labels)
    if len(classes) < 2:
        raise DegenerateProbeError("training data has a single class")
    remap = {c: i for i, c in enumerate(classes)}
    y = np.array([remap[l] for l in labels])
    K = len(classes)

    n_subj = len(set(subjects))
    scores_by_c: dict[float, list[float]] = {c: [] for c in cfg.c_grid}
    if n_subj >= 2:
        n_folds = min(cfg.inner_folds, n_subj)
        folds = _subject_folds(np.asarray(subjects), n_folds, seed)
        for test_subj in folds:
            te = np.isin(subjects, test_subj)
            tr = ~te
            if len(np.unique(y[tr])) < 2 or te.sum() == 0:
                continue
            scaler = Scaler.fit(features[tr])
            xtr = scaler.transform(features[tr])
            xte = scaler.transform(features[te])
            for C in cfg.c_grid:
                w, b = train_logreg(xtr, y[tr], K, C, cfg.max_iter,
                                    cfg.grad_tol)
                pred = np.argmax(xte @ w + b, axis=1)
                scores_by_c[C].append(macro_f1(pred, y[te], K))
    means = {C: (np.mean(v) if v else 0.0) for C, v in scores_by_c.items()}
    best = max(means.values())
    best_c = min(C for C, m in means.items() if m == best)

    scaler = Scaler.fit(features)
    x = scaler.transform(features)
    w, b = train_logreg(x, y, K, best_c, cfg.max_iter, cfg.grad_tol)
    return ProbeModel(weights=w, intercepts=b, scaler=scaler, C=best_c,
                      classes=classes)
