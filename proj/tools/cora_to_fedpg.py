#!/usr/bin/env python3
"""Convert the LINQS Cora release (cora.content, cora.cites) to a fedpg dataset.

Split: a fixed number of training nodes per class, then validation and test
nodes drawn from the rest; leftover nodes are tagged val so they never count
toward test accuracy.
"""
import argparse
import json
import random
from pathlib import Path


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("src", type=Path, help="directory holding cora.content and cora.cites")
    ap.add_argument("out", type=Path, help="output dataset directory")
    ap.add_argument("--train-per-class", type=int, default=20)
    ap.add_argument("--test", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--row-normalize", action="store_true", help="scale each feature row to sum 1")
    args = ap.parse_args()

    ids, rows, names = [], [], []
    with open(args.src / "cora.content") as f:
        for line in f:
            parts = line.split()
            if not parts:
                continue
            ids.append(parts[0])
            rows.append([float(x) for x in parts[1:-1]])
            names.append(parts[-1])
    index = {pid: i for i, pid in enumerate(ids)}
    classes = sorted(set(names))
    labels = [classes.index(n) for n in names]

    edges = set()
    with open(args.src / "cora.cites") as f:
        for line in f:
            parts = line.split()
            if len(parts) != 2 or parts[0] not in index or parts[1] not in index:
                continue
            u, v = index[parts[0]], index[parts[1]]
            if u != v:
                edges.add((min(u, v), max(u, v)))

    rng = random.Random(args.seed)
    order = list(range(len(ids)))
    rng.shuffle(order)
    splits = ["val"] * len(ids)
    taken = {c: 0 for c in range(len(classes))}
    rest = []
    for v in order:
        if taken[labels[v]] < args.train_per_class:
            splits[v] = "train"
            taken[labels[v]] += 1
        else:
            rest.append(v)
    for v in rest[: args.test]:
        splits[v] = "test"

    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "features.csv", "w") as f:
        for row in rows:
            if args.row_normalize:
                s = sum(row) or 1.0
                row = [x / s for x in row]
            f.write(",".join(repr(x) for x in row) + "\n")
    with open(args.out / "labels.csv", "w") as f:
        f.writelines(f"{y}\n" for y in labels)
    with open(args.out / "splits.csv", "w") as f:
        f.writelines(f"{s}\n" for s in splits)
    with open(args.out / "edges.tsv", "w") as f:
        f.writelines(f"{u}\t{v}\n" for u, v in sorted(edges))
    with open(args.out / "meta.json", "w") as f:
        json.dump({"num_nodes": len(ids), "num_features": len(rows[0]), "num_classes": len(classes)}, f)
        f.write("\n")
    print(f"{len(ids)} nodes, {len(edges)} edges, {len(classes)} classes -> {args.out}")


if __name__ == "__main__":
    main()
