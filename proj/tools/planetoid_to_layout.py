#!/usr/bin/env python3
"""Convert raw Planetoid files (ind.<name>.x, .y, .tx, .ty, .allx, .ally,
.graph, .test.index) into the edges.tsv / features.csv / labels.txt /
splits.json layout read by `grand --data`.

Split follows the usual Planetoid convention: train = the labelled x rows
(20 per class), val = the next 500 nodes, test = test.index.

    python3 tools/planetoid_to_layout.py --raw planetoid/raw --name cora --out data/cora
"""

import argparse
import json
import pickle
import sys
from pathlib import Path

import numpy as np
import scipy.sparse as sp


def load_part(raw: Path, name: str, part: str):
    with open(raw / f"ind.{name}.{part}", "rb") as f:
        return pickle.load(f, encoding="latin1")


def convert(raw: Path, name: str, out: Path) -> None:
    x, y, tx, ty, allx, ally, graph = (load_part(raw, name, p) for p in ("x", "y", "tx", "ty", "allx", "ally", "graph"))
    test_index = [int(line) for line in (raw / f"ind.{name}.test.index").read_text().split()]
    test_sorted = np.sort(test_index)

    if name == "citeseer":
        # Some test nodes are isolated and missing from tx/ty; pad with zero rows.
        full = range(test_sorted.min(), test_sorted.max() + 1)
        tx_ext = sp.lil_matrix((len(full), tx.shape[1]))
        tx_ext[test_sorted - test_sorted.min(), :] = tx
        tx = tx_ext
        ty_ext = np.zeros((len(full), ty.shape[1]))
        ty_ext[test_sorted - test_sorted.min(), :] = ty
        ty = ty_ext

    features = sp.vstack((allx, tx)).tolil()
    features[test_index, :] = features[test_sorted, :]
    labels = np.vstack((ally, ty))
    labels[test_index, :] = labels[test_sorted, :]
    n = features.shape[0]

    edges = set()
    for i, neighbours in graph.items():
        for j in neighbours:
            if i != j and i < n and j < n:
                edges.add((min(i, j), max(i, j)))

    out.mkdir(parents=True, exist_ok=True)
    with open(out / "edges.tsv", "w") as f:
        for i, j in sorted(edges):
            f.write(f"{i}\t{j}\n")
    dense = features.toarray()
    with open(out / "features.csv", "w") as f:
        for row in dense:
            f.write(",".join(repr(float(v)) for v in row) + "\n")
    with open(out / "labels.txt", "w") as f:
        for row in labels:
            f.write(f"{int(np.argmax(row))}\n")
    splits = {
        "train": list(range(len(y))),
        "val": list(range(len(y), min(len(y) + 500, n))),
        "test": sorted(int(i) for i in test_index),
    }
    (out / "splits.json").write_text(json.dumps(splits) + "\n")
    print(f"{name}: {n} nodes, {len(edges)} edges, {dense.shape[1]} features, {labels.shape[1]} classes", file=sys.stderr)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--raw", type=Path, required=True, help="directory holding the ind.<name>.* files")
    ap.add_argument("--name", default="cora")
    ap.add_argument("--out", type=Path, required=True)
    args = ap.parse_args()
    convert(args.raw, args.name, args.out)


if __name__ == "__main__":
    main()
