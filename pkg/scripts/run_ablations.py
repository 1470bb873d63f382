#!/usr/bin/env python3
"""Run the standard ablation suite against one run directory.

Each variant re-runs the pipeline with exactly one ingredient changed and
reports Macro-F1 under the identical subject-disjoint split plan.
"""
from __future__ import annotations

import argparse
import json
from pathlib import Path

from biopm.ablations import STANDARD_ABLATIONS, run_ablation
from biopm.config import RunConfig, config_hash, load_config
from biopm.evaluate import make_split_plan
from biopm import storage


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=None)
    ap.add_argument("--flags", nargs="*", default=list(STANDARD_ABLATIONS))
    ap.add_argument("--seed", type=int, default=None)
    args = ap.parse_args()

    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    out = Path(cfg.out_dir)
    h = config_hash(cfg)
    windows, _, _ = storage.load_windows(out / "windows_downstream.bwin",
                                         expect_hash=h)
    plan = make_split_plan([w.subject_id for w in windows], seed=cfg.seed)
    ckpt = out / "checkpoints" / "final.ckpt"
    abl_dir = out / "ablations"
    abl_dir.mkdir(exist_ok=True)

    for flag in args.flags:
        params = None
        if flag in ("full", "no_gravity", "no_positional") and ckpt.exists():
            params, _ = storage.load_checkpoint(ckpt)
        outcome = run_ablation(flag, windows, cfg, seed=cfg.seed,
                               params=params, plan=plan)
        payload = {"config_hash": h, "name": outcome.name,
                   "details": outcome.details,
                   "mean_macro_f1": outcome.result.mean,
                   "std_macro_f1": outcome.result.std}
        (abl_dir / f"{flag}.json").write_text(json.dumps(payload, indent=2))
        print(f"{flag:20s} Macro-F1 {outcome.result.mean:.4f} "
              f"+/- {outcome.result.std:.4f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
