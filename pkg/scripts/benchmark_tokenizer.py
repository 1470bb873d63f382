#!/usr/bin/env python3
"""Tokenizer throughput benchmark on synthetic movement-like windows.

Reports ten-second windows per second per core, best of N repeats (the best
is reported because wall time on a shared core is noisy downward only).
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from biopm.synthetic import make_activity_corpus
from biopm.tokenize import tokenize_corpus


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--windows", type=int, default=2000)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    wins = make_activity_corpus(args.windows, seed=args.seed)
    data = np.stack([w.data for w in wins])
    refs = [(w.subject_id, w.index) for w in wins]
    rate = wins[0].sample_rate_hz

    tokenize_corpus(data[:64], rate, refs[:64])   # warm caches
    best = float("inf")
    n_tokens = 0
    for _ in range(args.repeats):
        t0 = time.perf_counter()
        seqs = tokenize_corpus(data, rate, refs)
        dt = time.perf_counter() - t0
        best = min(best, dt)
        n_tokens = sum(s.n for s in seqs)
    wps = args.windows / best
    print(f"{args.windows} windows, {n_tokens} tokens "
          f"({n_tokens / args.windows:.1f}/window)")
    print(f"best of {args.repeats}: {best:.3f}s -> {wps:,.0f} windows/s/core")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
