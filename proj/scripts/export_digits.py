#!/usr/bin/env python3
"""Write digits data in the 65-column comma-separated format the loader reads.

The scikit-learn digits array is ordered in contiguous writer blocks, so a
contiguous 68/32 split keeps the writer shift between the two files instead of
mixing writers across them. Existing files are left untouched, so real
optdigits.tra/optdigits.tes copies take precedence when provided.
"""

import os
import sys

from sklearn.datasets import load_digits

OUT_DIR = os.path.join(os.path.dirname(__file__), os.pardir, "data", "optdigits")
TRAIN_FRACTION = 0.68


def write_rows(path, xs, ys):
    with open(path, "w") as f:
        for row, label in zip(xs, ys):
            f.write(",".join(str(int(v)) for v in row) + "," + str(int(label)) + "\n")


def main():
    tra = os.path.join(OUT_DIR, "optdigits.tra")
    tes = os.path.join(OUT_DIR, "optdigits.tes")
    if os.path.exists(tra) and os.path.exists(tes):
        print("data files already present, nothing to do")
        return 0
    os.makedirs(OUT_DIR, exist_ok=True)
    digits = load_digits()
    x = digits.data
    y = digits.target
    cut = round(TRAIN_FRACTION * len(x))
    write_rows(tra, x[:cut], y[:cut])
    write_rows(tes, x[cut:], y[cut:])
    print(f"wrote {cut} train rows and {len(x) - cut} test rows under {OUT_DIR}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
