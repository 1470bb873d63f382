#!/usr/bin/env python3
"""Convert the public MHEALTH dataset into the CSV schema this package reads.

Download and unzip the dataset first (UCI repository, "MHEALTH Dataset");
then point this script at the directory containing mHealth_subject*.log.
It extracts the right-lower-arm accelerometer (closest to a wrist placement,
columns 15-17, m/s^2, 50 Hz) and the activity label (column 24; 0 denotes
the unlabeled/null class and is written as -1).

Example config once converted:

    [dataset]
    path = mhealth.csv
    label_col = label
    input_units = m_s2
    native_hz = 50.0
"""
from __future__ import annotations

import argparse
import csv
from pathlib import Path

ARM_ACC_COLS = (14, 15, 16)   # 0-indexed
LABEL_COL = 23
NULL_LABEL = 0


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("source", help="directory with mHealth_subject*.log")
    ap.add_argument("--out", default="mhealth.csv")
    args = ap.parse_args()

    logs = sorted(Path(args.source).glob("mHealth_subject*.log"))
    if not logs:
        raise SystemExit(f"no mHealth_subject*.log files in {args.source}")
    n_rows = 0
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject", "x", "y", "z", "label"])
        for log in logs:
            subject = log.stem.replace("mHealth_", "")
            with open(log) as src:
                for line in src:
                    parts = line.split()
                    if len(parts) <= LABEL_COL:
                        continue
                    x, y, z = (parts[c] for c in ARM_ACC_COLS)
                    label = int(float(parts[LABEL_COL]))
                    writer.writerow(
                        [subject, x, y, z,
                         -1 if label == NULL_LABEL else label])
                    n_rows += 1
    print(f"wrote {n_rows} rows from {len(logs)} subjects to {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
