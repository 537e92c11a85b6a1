#!/usr/bin/env python3
"""Convert Planetoid raw files (ind.<name>.*) into the simulator's dataset directory."""

import argparse
import json
import pickle
import sys
from pathlib import Path

import numpy as np
import scipy.sparse as sp

PARTS = ("x", "y", "tx", "ty", "allx", "ally", "graph")


def load_part(raw: Path, name: str, part: str):
    with open(raw / f"ind.{name}.{part}", "rb") as f:
        return pickle.load(f, encoding="latin1")


def load_planetoid(raw: Path, name: str):
    x, y, tx, ty, allx, ally, graph = (load_part(raw, name, p) for p in PARTS)
    test_index = np.loadtxt(raw / f"ind.{name}.test.index", dtype=np.int64)
    test_sorted = np.sort(test_index)

    # Citeseer has isolated test nodes missing from tx; pad them with zero rows.
    if name == "citeseer":
        full = range(test_sorted.min(), test_sorted.max() + 1)
        tx_ext = sp.lil_matrix((len(full), tx.shape[1]))
        tx_ext[test_sorted - test_sorted.min(), :] = tx
        tx = tx_ext
        ty_ext = np.zeros((len(full), y.shape[1]))
        ty_ext[test_sorted - test_sorted.min(), :] = ty
        ty = ty_ext

    features = sp.vstack((allx, tx)).tolil()
    features[test_index, :] = features[test_sorted, :]
    onehot = np.vstack((ally, ty))
    onehot[test_index, :] = onehot[test_sorted, :]
    labels = onehot.argmax(axis=1)
    labels[onehot.sum(axis=1) == 0] = -1

    n = features.shape[0]
    edges = set()
    for src, nbrs in graph.items():
        for dst in nbrs:
            if src != dst and src < n and dst < n:
                edges.add((min(src, dst), max(src, dst)))
    return features.tocsr(), labels, sorted(edges)


def write_dir(out: Path, features, labels, edges):
    keep = np.flatnonzero(labels >= 0)
    remap = -np.ones(len(labels), dtype=np.int64)
    remap[keep] = np.arange(len(keep))
    features = features[keep]
    labels = labels[keep]
    edges = [(remap[s], remap[d]) for s, d in edges if remap[s] >= 0 and remap[d] >= 0]

    out.mkdir(parents=True, exist_ok=True)
    dense = features.toarray()
    meta = {"num_nodes": int(dense.shape[0]), "num_features": int(dense.shape[1]),
            "num_classes": int(labels.max()) + 1}
    (out / "meta.json").write_text(json.dumps(meta) + "\n")
    np.savetxt(out / "features.csv", dense, delimiter=",", fmt="%.17g")
    np.savetxt(out / "labels.tsv", labels, fmt="%d")
    with open(out / "edges.tsv", "w") as f:
        for s, d in edges:
            f.write(f"{s}\t{d}\n")
    return meta, len(edges), len(remap) - len(keep)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--raw", type=Path, required=True, help="directory holding ind.<name>.* files")
    parser.add_argument("--name", choices=("cora", "citeseer", "pubmed"), required=True)
    parser.add_argument("--out", type=Path, required=True, help="output dataset directory")
    args = parser.parse_args()
    try:
        features, labels, edges = load_planetoid(args.raw, args.name)
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 4
    meta, num_edges, dropped = write_dir(args.out, features, labels, edges)
    print(f"{args.name}: {meta['num_nodes']} nodes, {num_edges} edges, "
          f"{meta['num_features']} features, {meta['num_classes']} classes, {dropped} unlabeled dropped")
    return 0


if __name__ == "__main__":
    sys.exit(main())
