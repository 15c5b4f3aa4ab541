#!/usr/bin/env python3
#
# PolySeq - Copyright 2026 The PolySeq Authors.
# SPDX-License-Identifier: Apache-2.0
#
# Writes the synthetic mini dataset under data/mini. The property is a made-up
# additive function of the repeat-unit fragments plus a temperature term, so a
# small model can learn it from the sequence alone.

import argparse
import csv
import pathlib
import random

# (fragment, contribution)
FRAGMENTS = [
    ("CC", 0.0),
    ("C(C)", 8.0),
    ("C(=O)O", 15.0),
    ("O", -20.0),
    ("c1ccc(cc1)", 45.0),
    ("C(F)(F)", 12.0),
    ("C(Cl)", 25.0),
    ("C(Br)", 30.0),
    ("[Si](C)(C)O", -35.0),
    ("N", 5.0),
    ("C(=O)N", 28.0),
    ("S", -5.0),
    ("C(C#N)", 22.0),
]


def make_unit(rng):
    picks = [rng.randrange(len(FRAGMENTS)) for _ in range(rng.randint(2, 4))]
    smiles = "*" + "".join(FRAGMENTS[i][0] for i in picks) + "*"
    value = sum(FRAGMENTS[i][1] for i in picks)
    return smiles, value


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(pathlib.Path(__file__).resolve().parent.parent / "data" / "mini"))
    ap.add_argument("--records", type=int, default=60)
    ap.add_argument("--corpus", type=int, default=400)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    rng = random.Random(args.seed)
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    seen = set()
    rows = []
    while len(rows) < args.records:
        smiles, value = make_unit(rng)
        if smiles in seen:
            continue
        seen.add(smiles)
        temp = rng.choice([250, 300, 350])
        label = 100.0 + value + 0.1 * (temp - 300) + rng.gauss(0.0, 2.0)
        temp_cell = "" if rng.random() < 0.1 else str(temp)
        rows.append([smiles, temp_cell, f"{label:.2f}"])
    with open(out / "mini_dataset.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["smiles", "temperature", "value"])
        w.writerows(rows)

    lines = []
    while len(lines) < args.corpus:
        smiles, _ = make_unit(rng)
        if smiles in seen:
            continue
        seen.add(smiles)
        temp = "NAN_temperature" if rng.random() < 0.1 else str(rng.choice([250, 300, 350]))
        lines.append(f"{smiles}${temp}")
    (out / "pretrain_corpus.txt").write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    main()
