#!/usr/bin/env python3
"""Regenerate the default smoothness-classifier artifact.

Fixed seeds make the artifact reproducible; the result is written to the
package data directory (or --out).
"""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from fcflow import classifier as cl   # noqa: E402


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--count", type=int, default=120_000)
    ap.add_argument("--data-seed", type=int, default=2024)
    ap.add_argument("--train-seed", type=int, default=7)
    ap.add_argument("--out", default=cl.default_model_path())
    args = ap.parse_args()

    feats, labels = cl.generate_training_set(args.data_seed, args.count)
    model, acc = cl.train_classifier(feats, labels, seed=args.train_seed)
    os.makedirs(os.path.dirname(args.out), exist_ok=True)
    cl.save_model(model, args.out)
    print(f"held-out accuracy {acc:.4f}; model written to {args.out}")


if __name__ == "__main__":
    main()
