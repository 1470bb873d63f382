"""Command-line pipeline driver.

Verbs: ingest, tokenize, pretrain, embed, probe, sweep, syntax, ablate,
report. Each stage reads its predecessor's artifact from the run directory,
verifies the embedded config hash, and writes its own artifact plus a JSONL
log record. Environment variables BIOPM_OUT_DIR and BIOPM_THREADS override
only the output directory and thread count.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import storage
from .ablations import run_ablation
from .config import RunConfig, config_hash, load_config, save_config
from .data import (convert_units_to_g, load_csv_dataset, make_windows,
                   resample_stream)
from .evaluate import (data_efficiency_sweep, make_split_plan,
                       run_probe_protocol, syntax_probe)
from .pipeline import tokenize_windows, window_embeddings
from .pretrain import pretrain_loop, select_upstream_windows
from .synthetic import make_ordered_recordings

log = logging.getLogger("biopm")

DOWNSTREAM_WINDOWS = "windows_downstream.bwin"
UPSTREAM_WINDOWS = "windows_upstream.bwin"
DOWNSTREAM_TOKENS = "tokens_downstream.bseg"
UPSTREAM_TOKENS = "tokens_upstream.bseg"
EMBEDDINGS = "embeddings.bemb"
FINAL_CKPT = "checkpoints/final.ckpt"


def _out_dir(cfg: RunConfig) -> Path:
    d = Path(os.environ.get("BIOPM_OUT_DIR", cfg.out_dir))
    d.mkdir(parents=True, exist_ok=True)
    return d


def _record(out: Path, verb: str, payload: dict) -> None:
    storage.append_jsonl(out / "run.log",
                         {"verb": verb, "time": time.time(), **payload})


def _result_json(result) -> dict:
    return {"mean_macro_f1": result.mean, "std_macro_f1": result.std,
            "folds": [{"fold": f.fold, "macro_f1": f.macro_f1,
                       "n_test_windows": f.n_test_windows,
                       "confusion": f.confusion.tolist()}
                      for f in result.folds]}


def _load_recordings(cfg: RunConfig):
    ds = cfg.dataset
    if not ds.path:
        log.info("no dataset path configured; generating the synthetic "
                 "ordered 3-class corpus")
        return make_ordered_recordings(seed=cfg.seed)
    schema = {"subject": ds.subject_col, "x": ds.x_col, "y": ds.y_col,
              "z": ds.z_col, "sample_rate_hz": ds.native_hz}
    if ds.label_col:
        schema["label"] = ds.label_col
    if ds.class_names:
        schema["class_names"] = ds.class_names
    recs = load_csv_dataset(ds.path, schema)
    recs = [convert_units_to_g(r, ds.input_units) for r in recs]
    return [resample_stream(r, cfg.pipeline.sample_rate_hz) for r in recs]


def cmd_ingest(cfg: RunConfig, args) -> None:
    out = _out_dir(cfg)
    h = config_hash(cfg)
    recs = _load_recordings(cfg)
    pipe = cfg.pipeline
    down, up = [], []
    for rec in recs:
        down.extend(make_windows(rec, pipe.window_s, pipe.downstream_overlap,
                                 pipe.majority_min_frac, pipe.null_max_frac))
        up.extend(make_windows(rec, pipe.window_s, pipe.upstream_overlap,
                               pipe.majority_min_frac, pipe.null_max_frac))
    up = select_upstream_windows(up, cfg.pretrain, cfg.seed,
                                 pipe.noise_variance)
    storage.save_windows(out / DOWNSTREAM_WINDOWS, down, h, cfg.seed)
    storage.save_windows(out / UPSTREAM_WINDOWS, up, h, cfg.seed)
    log.info("ingest: %d recordings -> %d downstream / %d upstream windows",
             len(recs), len(down), len(up))
    _record(out, "ingest", {"config_hash": h, "n_downstream": len(down),
                            "n_upstream": len(up)})


def _write_idempotent(path: Path, writer) -> bool:
    """Write via a temp file; keep the old file when bytes are unchanged.

    Returns True when the artifact was already up to date.
    """
    tmp = path.with_suffix(path.suffix + ".tmp")
    writer(tmp)
    if path.exists() and path.read_bytes() == tmp.read_bytes():
        tmp.unlink()
        return True
    tmp.replace(path)
    return False


def cmd_tokenize(cfg: RunConfig, args) -> None:
    out = _out_dir(cfg)
    h = config_hash(cfg)
    for win_name, tok_name in ((DOWNSTREAM_WINDOWS, DOWNSTREAM_TOKENS),
                               (UPSTREAM_WINDOWS, UPSTREAM_TOKENS)):
        windows, _, _ = storage.load_windows(out / win_name, expect_hash=h)
        seqs, labels, _, qc = tokenize_windows(windows, cfg)
        unchanged = _write_idempotent(
            out / tok_name,
            lambda p: storage.save_tokens(p, seqs, labels,
                                          cfg.pipeline.sample_rate_hz,
                                          cfg.pipeline.window_s, h, cfg.seed))
        log.info("tokenize %s: %d windows -> %d sequences "
                 "(%d empty dropped)%s", win_name, qc.n_windows, len(seqs),
                 qc.n_empty_dropped, " [unchanged]" if unchanged else "")
        _record(out, "tokenize", {"config_hash": h, "input": win_name,
                                  "n_sequences": len(seqs),
                                  "n_empty_dropped": qc.n_empty_dropped,
                                  "unchanged": unchanged})


def cmd_pretrain(cfg: RunConfig, args) -> None:
    out = _out_dir(cfg)
    h = config_hash(cfg)
    seqs, _, rate, window_s, _, _ = storage.load_tokens(
        out / UPSTREAM_TOKENS, expect_hash=h)
    t0 = time.perf_counter()
    _, metrics = pretrain_loop(seqs, cfg.model, cfg.pretrain, rate, window_s,
                               seed=cfg.seed, out_dir=out / "checkpoints",
                               config_hash=h,
                               log_fn=lambda m: log.info("pretrain %s", m))
    for m in metrics:
        storage.append_jsonl(out / "pretrain_metrics.jsonl", m)
    log.info("pretrain: %d steps in %.1fs", cfg.pretrain.steps,
             time.perf_counter() - t0)
    _record(out, "pretrain", {"config_hash": h, "steps": cfg.pretrain.steps,
                              "final": metrics[-1] if metrics else None})


def _checkpoint_path(cfg: RunConfig, args) -> Path:
    if args.checkpoint:
        return Path(args.checkpoint)
    return _out_dir(cfg) / FINAL_CKPT


def _load_aligned(cfg: RunConfig, out: Path, h: str):
    """Downstream windows and token sequences, matched by window ref."""
    windows, _, _ = storage.load_windows(out / DOWNSTREAM_WINDOWS,
                                         expect_hash=h)
    seqs, labels, _, _, _, _ = storage.load_tokens(out / DOWNSTREAM_TOKENS,
                                                   expect_hash=h)
    by_ref = {(w.subject_id, w.index): w for w in windows}
    aligned = [(by_ref[s.window_ref], s, lab)
               for s, lab in zip(seqs, labels) if s.window_ref in by_ref]
    return ([w for w, _, _ in aligned], [s for _, s, _ in aligned],
            [lab for _, _, lab in aligned])


def cmd_embed(cfg: RunConfig, args) -> None:
    out = _out_dir(cfg)
    h = config_hash(cfg)
    windows, seqs, labels = _load_aligned(cfg, out, h)
    params, step = storage.load_checkpoint(_checkpoint_path(cfg, args))
    feats = window_embeddings(params, cfg, windows, seqs)
    refs = [s.window_ref for s in seqs]
    storage.save_embeddings(out / EMBEDDINGS, refs, labels, feats, h,
                            cfg.seed)
    log.info("embed: %d windows, dim %d (checkpoint step %d)",
             feats.shape[0], feats.shape[1], step)
    _record(out, "embed", {"config_hash": h, "n_windows": feats.shape[0],
                           "dim": feats.shape[1], "checkpoint_step": step})


def _load_labeled_embeddings(out: Path, h: str):
    refs, labels, feats, _, _, _ = storage.load_embeddings(out / EMBEDDINGS,
                                                           expect_hash=h)
    keep = [i for i, lab in enumerate(labels) if lab is not None]
    y = np.array([labels[i] for i in keep], dtype=np.int64)
    subj = np.array([refs[i][0] for i in keep])
    return feats[keep], y, subj


def cmd_probe(cfg: RunConfig, args) -> None:
    out = _out_dir(cfg)
    h = config_hash(cfg)
    feats, y, subj = _load_labeled_embeddings(out, h)
    n_classes = int(y.max()) + 1
    plan = make_split_plan(subj, seed=cfg.seed)
    result = run_probe_protocol(feats, y, subj, plan, cfg.probe, n_classes,
                                seed=cfg.seed)
    payload = {"config_hash": h, "split_mode": plan.mode,
               "n_classes": n_classes, **_result_json(result)}
    (out / "probe.json").write_text(json.dumps(payload, indent=2))
    log.info("probe: Macro-F1 %.4f +/- %.4f over %d folds (%s)",
             result.mean, result.std, len(result.folds), plan.mode)
    _record(out, "probe", {"config_hash": h, "mean_macro_f1": result.mean})


def cmd_sweep(cfg: RunConfig, args) -> None:
    out = _out_dir(cfg)
    h = config_hash(cfg)
    feats, y, subj = _load_labeled_embeddings(out, h)
    n_classes = int(y.max()) + 1
    plan = make_split_plan(subj, seed=cfg.seed)
    results = data_efficiency_sweep(feats, y, subj, plan,
                                    cfg.eval.fractions, cfg.probe,
                                    n_classes, seed=cfg.seed)
    payload = {"config_hash": h,
               "fractions": {str(f): _result_json(r)
                             for f, r in results.items()}}
    (out / "sweep.json").write_text(json.dumps(payload, indent=2))
    for f, r in results.items():
        log.info("sweep %.2f: Macro-F1 %.4f +/- %.4f", f, r.mean, r.std)
    _record(out, "sweep", {"config_hash": h})


def cmd_syntax(cfg: RunConfig, args) -> None:
    out = _out_dir(cfg)
    h = config_hash(cfg)
    seqs, _, _, _, _, _ = storage.load_tokens(out / DOWNSTREAM_TOKENS,
                                              expect_hash=h)
    params, _ = storage.load_checkpoint(_checkpoint_path(cfg, args))
    result = syntax_probe(seqs, params, cfg, seed=cfg.seed)
    payload = {"config_hash": h, **asdict(result)}
    (out / "syntax.json").write_text(json.dumps(payload, indent=2))
    log.info("syntax: K=%d contextual %.3f noncontextual %.3f markov %.3f "
             "shuffle %.3f", result.K, result.accuracy_contextual,
             result.accuracy_noncontextual, result.accuracy_markov,
             result.accuracy_shuffle)
    _record(out, "syntax", {"config_hash": h,
                            "contextual": result.accuracy_contextual,
                            "shuffle": result.accuracy_shuffle})


def cmd_ablate(cfg: RunConfig, args) -> None:
    if not args.flag:
        raise SystemExit("ablate requires --flag <name>")
    out = _out_dir(cfg)
    h = config_hash(cfg)
    windows, _, _ = storage.load_windows(out / DOWNSTREAM_WINDOWS,
                                         expect_hash=h)
    params = None
    ckpt = _checkpoint_path(cfg, args)
    if args.flag in ("full", "no_gravity", "no_positional") and ckpt.exists():
        params, _ = storage.load_checkpoint(ckpt)
    outcome = run_ablation(args.flag, windows, cfg, seed=cfg.seed,
                           params=params)
    abl_dir = out / "ablations"
    abl_dir.mkdir(exist_ok=True)
    payload = {"config_hash": h, "name": outcome.name,
               "details": outcome.details, **_result_json(outcome.result)}
    (abl_dir / f"{args.flag}.json").write_text(json.dumps(payload, indent=2))
    log.info("ablate %s: Macro-F1 %.4f +/- %.4f", outcome.name,
             outcome.result.mean, outcome.result.std)
    _record(out, "ablate", {"config_hash": h, "flag": args.flag,
                            "mean_macro_f1": outcome.result.mean})


def cmd_report(cfg: RunConfig, args) -> None:
    out = _out_dir(cfg)
    lines = [f"# Run report: {out}", ""]
    probe_p = out / "probe.json"
    if probe_p.exists():
        d = json.loads(probe_p.read_text())
        lines += ["## Probe",
                  f"Macro-F1 {d['mean_macro_f1']:.4f} "
                  f"+/- {d['std_macro_f1']:.4f} "
                  f"({len(d['folds'])} folds, {d['split_mode']})", ""]
    sweep_p = out / "sweep.json"
    if sweep_p.exists():
        d = json.loads(sweep_p.read_text())
        lines += ["## Data efficiency", "| fraction | Macro-F1 | std |",
                  "|---|---|---|"]
        for f, r in sorted(d["fractions"].items(), key=lambda kv: float(kv[0])):
            lines.append(f"| {f} | {r['mean_macro_f1']:.4f} "
                         f"| {r['std_macro_f1']:.4f} |")
        lines.append("")
    syn_p = out / "syntax.json"
    if syn_p.exists():
        d = json.loads(syn_p.read_text())
        lines += ["## Syntax probe",
                  f"K={d['K']} contextual {d['accuracy_contextual']:.3f}, "
                  f"non-contextual {d['accuracy_noncontextual']:.3f}, "
                  f"markov {d['accuracy_markov']:.3f}, "
                  f"shuffle {d['accuracy_shuffle']:.3f}, "
                  f"chance {1.0 / d['K']:.3f}", ""]
    abl_dir = out / "ablations"
    if abl_dir.exists():
        rows = sorted(abl_dir.glob("*.json"))
        if rows:
            lines += ["## Ablations", "| variant | Macro-F1 | std |",
                      "|---|---|---|"]
            for p in rows:
                d = json.loads(p.read_text())
                lines.append(f"| {d['name']} | {d['mean_macro_f1']:.4f} "
                             f"| {d['std_macro_f1']:.4f} |")
            lines.append("")
    metrics = storage.read_jsonl(out / "pretrain_metrics.jsonl")
    if metrics:
        last = metrics[-1]
        lines += ["## Pretraining",
                  f"final step {last.get('step')}: "
                  f"loss {last.get('loss', float('nan')):.4f}, "
                  f"masked MAE {last.get('masked_mae', float('nan')):.4f}",
                  ""]
    text = "\n".join(lines)
    (out / "report.md").write_text(text)
    print(text)


VERBS = {
    "ingest": cmd_ingest,
    "tokenize": cmd_tokenize,
    "pretrain": cmd_pretrain,
    "embed": cmd_embed,
    "probe": cmd_probe,
    "sweep": cmd_sweep,
    "syntax": cmd_syntax,
    "ablate": cmd_ablate,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="biopm",
        description="Movement-segment tokenization, masked-reconstruction "
                    "pretraining, and downstream evaluation.")
    p.add_argument("verb", choices=sorted(VERBS))
    p.add_argument("--config", default=None,
                   help="key=value config file (defaults used when omitted)")
    p.add_argument("--seed", type=int, default=None,
                   help="override the configured seed")
    p.add_argument("--threads", type=int, default=None,
                   help="override the configured thread count")
    p.add_argument("--deterministic", action="store_true",
                   help="force deterministic mode")
    p.add_argument("--checkpoint", default=None,
                   help="checkpoint path (default: <out_dir>/checkpoints/"
                        "final.ckpt)")
    p.add_argument("--flag", default=None,
                   help="ablation variant name (ablate verb)")
    return p


def _apply_threads(n: int) -> None:
    try:
        from threadpoolctl import threadpool_limits
        threadpool_limits(limits=n)
    except ImportError:
        log.debug("threadpoolctl unavailable; thread count is advisory")


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(asctime)s %(name)s %(message)s")
    args = build_parser().parse_args(argv)
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.deterministic:
        cfg.deterministic = True
    threads = args.threads if args.threads is not None else \
        int(os.environ.get("BIOPM_THREADS", cfg.threads))
    cfg.threads = threads
    _apply_threads(threads)
    out = _out_dir(cfg)
    save_config(cfg, out / "config.ini")
    VERBS[args.verb](cfg, args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
