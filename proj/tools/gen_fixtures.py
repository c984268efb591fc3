#!/usr/bin/env python3
"""Regenerates the committed test fixtures under tests/fixtures/.

Output is deterministic (fixed seeds, fixed float formatting); rerunning
must leave the checked-in files unchanged.
"""
import argparse
import pathlib
import random


def blobs(rng, n=200):
    rows = []
    for i in range(n):
        y = i % 2
        cx, cy = (-2.0, -2.0) if y == 0 else (2.0, 2.0)
        rows.append((rng.gauss(cx, 0.6), rng.gauss(cy, 0.6), y))
    return ["x1,x2,y"] + [f"{a:.6f},{b:.6f},{y}" for a, b, y in rows]


def signal16(rng, n=200):
    # class 0 lights features 0-3, class 1 lights features 4-7; 8-15 are noise
    header = ",".join(f"f{i}" for i in range(16)) + ",y"
    lines = [header]
    for i in range(n):
        y = i % 2
        feats = []
        for f in range(16):
            if f < 8:
                on = (f < 4) == (y == 0)
                feats.append(rng.uniform(0.7, 1.0) if on else rng.uniform(0.0, 0.1))
            else:
                feats.append(rng.uniform(0.0, 0.3))
        lines.append(",".join(f"{v:.6f}" for v in feats) + f",{y}")
    return lines


def text():
    vocab = ["<pad>", "good", "great", "fine", "bad", "awful", "movie", "plot", "the", "was"]
    docs = [
        "1\tthe movie was great",
        "0\tthe plot was awful",
        "1\tgood good movie",
        "0\tbad <b>plot</b> & stuff",
    ]
    return [f"{tok}\t{i}" for i, tok in enumerate(vocab) if i > 0], docs


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(pathlib.Path(__file__).resolve().parent.parent / "tests" / "fixtures"))
    args = ap.parse_args()
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "blobs.csv").write_text("\n".join(blobs(random.Random(7))) + "\n")
    (out / "signal16.csv").write_text("\n".join(signal16(random.Random(16))) + "\n")
    vocab, docs = text()
    (out / "vocab.tsv").write_text("\n".join(vocab) + "\n")
    (out / "docs.txt").write_text("\n".join(docs) + "\n")


if __name__ == "__main__":
    main()
