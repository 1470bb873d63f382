"""Ablation orchestration: each variant is a full pipeline re-run.

Every variant keeps the identical evaluation protocol (same subject-disjoint
split plan, same probe) and changes exactly one pipeline ingredient:

- full               segment tokens, pretrained encoder, fused features
- no_gravity         drop the gravity feature block (pooled features only)
- no_positional      zero the absolute-time MLP and relative bias at inference
- naive_tokenization equal-length chunks end to end (own pretraining,
                     identical step budget)
- no_pretraining     randomly initialized encoder finetuned end to end
- mask_rate_<r>      pretraining with masking rate r
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .config import RunConfig
from .data import Window
from .evaluate import (FoldResult, ProtocolResult, SplitPlan,
                       end_to_end_finetune, make_split_plan,
                       run_probe_protocol)
from .pipeline import tokenize_windows, window_embeddings
from .pretrain import pretrain_loop
from .probe import confusion_matrix, macro_f1

STANDARD_ABLATIONS = ("full", "no_gravity", "no_positional",
                      "naive_tokenization", "no_pretraining")


@dataclass
class AblationOutcome:
    name: str
    result: ProtocolResult
    details: dict


def _labeled_arrays(windows, labels):
    keep = [i for i, lab in enumerate(labels) if lab is not None]
    return (np.array(keep, dtype=np.int64),
            np.array([labels[i] for i in keep], dtype=np.int64),
            np.array([windows[i].subject_id for i in keep]))


def pipeline_probe_result(windows: list[Window], cfg: RunConfig,
                          seed: int, scheme: str = "segments",
                          params: dict | None = None,
                          include_gravity: bool = True,
                          disable_positional: bool = False,
                          pretrain_windows: list[Window] | None = None,
                          plan: SplitPlan | None = None,
                          n_classes: int | None = None):
    """Tokenize -> (pretrain if needed) -> embed -> probe protocol."""
    seqs, labels, kept, _ = tokenize_windows(windows, cfg, scheme=scheme)
    if params is None:
        if pretrain_windows is not None:
            pre_seqs, _, _, _ = tokenize_windows(pretrain_windows, cfg,
                                                 scheme=scheme)
        else:
            pre_seqs = seqs
        params, _ = pretrain_loop(pre_seqs, cfg.model, cfg.pretrain,
                                  cfg.pipeline.sample_rate_hz,
                                  cfg.pipeline.window_s, seed=seed)
    idx, y, subj = _labeled_arrays(kept, labels)
    feats = window_embeddings(params, cfg, [kept[i] for i in idx],
                              [seqs[i] for i in idx],
                              include_gravity=include_gravity,
                              disable_positional=disable_positional)
    if n_classes is None:
        n_classes = int(y.max()) + 1
    if plan is None:
        plan = make_split_plan(subj, seed=seed)
    result = run_probe_protocol(feats, y, subj, plan, cfg.probe, n_classes,
                                seed=seed)
    return result, params


def no_pretraining_result(windows: list[Window], cfg: RunConfig, seed: int,
                          plan: SplitPlan | None = None,
                          n_classes: int | None = None) -> ProtocolResult:
    """End-to-end supervised training from random init, per fold."""
    seqs, labels, kept, _ = tokenize_windows(windows, cfg)
    idx, y, subj = _labeled_arrays(kept, labels)
    kept = [kept[i] for i in idx]
    seqs = [seqs[i] for i in idx]
    if n_classes is None:
        n_classes = int(y.max()) + 1
    if plan is None:
        plan = make_split_plan(subj, seed=seed)
    folds = []
    for fi, (train_subj, test_subj) in enumerate(plan.folds):
        tr = np.flatnonzero(np.isin(subj, train_subj))
        te = np.flatnonzero(np.isin(subj, test_subj))
        if len(te) == 0 or len(np.unique(y[tr])) < 2:
            continue
        predict = end_to_end_finetune(kept, seqs, y, subj, train_subj, cfg,
                                      n_classes, seed=seed)
        pred = predict(te)
        folds.append(FoldResult(
            fold=fi, macro_f1=macro_f1(pred, y[te], n_classes),
            n_test_windows=len(te),
            confusion=confusion_matrix(pred, y[te], n_classes)))
    return ProtocolResult(folds=folds)


def run_ablation(name: str, windows: list[Window], cfg: RunConfig,
                 seed: int = 0, params: dict | None = None,
                 plan: SplitPlan | None = None,
                 n_classes: int | None = None) -> AblationOutcome:
    """Run one named variant. `params` (a pretrained checkpoint) is reused
    where the variant does not retrain the encoder."""
    details: dict = {}
    if name == "full":
        result, _ = pipeline_probe_result(windows, cfg, seed, params=params,
                                          plan=plan, n_classes=n_classes)
    elif name == "no_gravity":
        result, _ = pipeline_probe_result(windows, cfg, seed, params=params,
                                          include_gravity=False, plan=plan,
                                          n_classes=n_classes)
    elif name == "no_positional":
        result, _ = pipeline_probe_result(windows, cfg, seed, params=params,
                                          disable_positional=True, plan=plan,
                                          n_classes=n_classes)
    elif name == "naive_tokenization":
        # chunks need their own pretraining: same steps, same budget
        result, _ = pipeline_probe_result(windows, cfg, seed,
                                          scheme="chunks", params=None,
                                          plan=plan, n_classes=n_classes)
    elif name == "no_pretraining":
        result = no_pretraining_result(windows, cfg, seed, plan=plan,
                                       n_classes=n_classes)
    elif name.startswith("mask_rate_"):
        r = float(name[len("mask_rate_"):])
        if not 0.0 < r < 1.0:
            raise ValueError(f"mask rate must be in (0, 1), got {r}")
        variant = replace(cfg.pretrain, mask_rate=r)
        vcfg = replace(cfg, pretrain=variant)
        result, _ = pipeline_probe_result(windows, vcfg, seed, params=None,
                                          plan=plan, n_classes=n_classes)
        details["mask_rate"] = r
    else:
        raise ValueError(f"unknown ablation {name!r}; known: "
                         f"{STANDARD_ABLATIONS} or mask_rate_<r>")
    details.update(mean_macro_f1=result.mean, std_macro_f1=result.std,
                   n_folds=len(result.folds))
    return AblationOutcome(name=name, result=result, details=details)


def mask_rate_sweep(windows: list[Window], cfg: RunConfig,
                    rates=(0.25, 0.5, 0.75), seed: int = 0,
                    plan: SplitPlan | None = None) -> dict[float, ProtocolResult]:
    out = {}
    for r in rates:
        outcome = run_ablation(f"mask_rate_{r}", windows, cfg, seed,
                               plan=plan)
        out[r] = outcome.result
    return out
