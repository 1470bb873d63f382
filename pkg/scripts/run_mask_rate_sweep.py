#!/usr/bin/env python3
"""Sweep the pretraining masking rate and report downstream Macro-F1."""
from __future__ import annotations

import argparse
import json
from pathlib import Path

from biopm.ablations import mask_rate_sweep
from biopm.config import RunConfig, config_hash, load_config
from biopm.evaluate import make_split_plan
from biopm import storage


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=None)
    ap.add_argument("--rates", nargs="*", type=float,
                    default=[0.25, 0.5, 0.75])
    args = ap.parse_args()

    cfg = load_config(args.config) if args.config else RunConfig()
    out = Path(cfg.out_dir)
    h = config_hash(cfg)
    windows, _, _ = storage.load_windows(out / "windows_downstream.bwin",
                                         expect_hash=h)
    plan = make_split_plan([w.subject_id for w in windows], seed=cfg.seed)
    results = mask_rate_sweep(windows, cfg, rates=args.rates, seed=cfg.seed,
                              plan=plan)
    payload = {"config_hash": h,
               "rates": {str(r): {"mean_macro_f1": res.mean,
                                  "std_macro_f1": res.std}
                         for r, res in results.items()}}
    (out / "mask_rate_sweep.json").write_text(json.dumps(payload, indent=2))
    for r, res in sorted(results.items()):
        print(f"mask rate {r:.2f}: Macro-F1 {res.mean:.4f} "
              f"+/- {res.std:.4f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
