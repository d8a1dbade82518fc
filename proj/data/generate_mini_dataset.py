#!/usr/bin/env python3
"""Regenerate data/mini_dataset.csv.

The bundled dataset is synthetic. Compositions are drawn from alloy families
(base element plus typical co-elements, small substitutional variations);
properties come from simple descriptor-driven relations plus noise, so the
guidance models have real signal to learn. Output is deterministic.

    python3 data/generate_mini_dataset.py > data/mini_dataset.csv
"""
import csv
import math
import os
import sys

import numpy as np

HERE = os.path.dirname(os.path.abspath(__file__))

# base element, {element: (lo, hi)}, optional extras, row count
FAMILIES = [
    ("Zr", {"Zr": (55, 65), "Cu": (12, 20), "Al": (7, 12), "Ni": (5, 12)}, ["Ti", "Fe", "Nb", "Be", "Ag", "Co"], 30),
    ("Cu", {"Cu": (45, 55), "Zr": (35, 45), "Al": (4, 9)}, ["Ag", "Y", "Ti", "Be"], 20),
    ("Fe", {"Fe": (60, 75), "B": (10, 20), "Si": (3, 8), "Nb": (2, 5)}, ["Cr", "Mo", "C", "P", "Co", "Y"], 20),
    ("Mg", {"Mg": (60, 70), "Cu": (20, 27), "Y": (5, 12)}, ["Gd", "Zn", "Ag", "Nd"], 15),
    ("Pd", {"Pd": (38, 45), "Ni": (8, 12), "Cu": (25, 32), "P": (18, 22)}, ["Si", "Fe", "Co"], 12),
    ("La", {"La": (55, 65), "Al": (12, 18), "Cu": (10, 15), "Ni": (8, 12)}, ["Co", "Ce", "Pr"], 10),
    ("Ti", {"Ti": (40, 50), "Cu": (30, 40), "Ni": (5, 10), "Zr": (5, 12)}, ["Sn", "Hf", "Be", "Si"], 12),
    ("Ca", {"Ca": (60, 70), "Mg": (10, 20), "Zn": (12, 25)}, ["Cu", "Li", "Sr", "Yb"], 10),
    ("Au", {"Au": (45, 55), "Cu": (20, 28), "Si": (14, 18), "Ag": (3, 7)}, ["Pd", "Ge"], 8),
    ("Ce", {"Ce": (65, 70), "Al": (8, 12), "Cu": (15, 22)}, ["Nb", "Co", "Ni"], 8),
    ("Co", {"Co": (40, 50), "Fe": (15, 25), "B": (20, 25), "Si": (3, 6)}, ["Nb", "Ta", "Mo"], 8),
    ("Ni", {"Ni": (55, 62), "Nb": (30, 40), "Ti": (3, 8)}, ["Zr", "Ta", "Sn", "P"], 8),
    ("Pt", {"Pt": (55, 60), "Cu": (14, 18), "Ni": (4, 7), "P": (20, 23)}, ["Pd"], 6),
    ("Hf", {"Hf": (45, 55), "Cu": (20, 30), "Ni": (8, 12), "Al": (8, 12)}, ["Ti", "Nb"], 6),
    ("Nd", {"Nd": (55, 62), "Fe": (28, 33), "Al": (8, 12)}, ["Co", "B"], 5),
    ("Zn", {"Zn": (35, 45), "Mg": (10, 20), "Ca": (25, 35)}, ["Yb", "Sr"], 5),
    ("Al", {"Al": (84, 88), "Ni": (5, 9), "Y": (4, 8)}, ["Co", "La", "Fe"], 5),
    ("Sm", {"Sm": (55, 62), "Co": (15, 22), "Al": (12, 18)}, ["Fe"], 3),
    ("Ag", {"Ag": (30, 40), "Cu": (20, 30), "Zr": (30, 40)}, ["Al"], 3),
    ("Gd", {"Gd": (55, 60), "Co": (20, 25), "Al": (15, 20)}, ["Ni"], 3),
    ("Ta", {"Ta": (40, 50), "Ni": (30, 40), "Co": (10, 20)}, ["Cr"], 2),
    ("Y", {"Y": (55, 58), "Sc": (2, 6), "Al": (22, 26), "Co": (15, 20)}, ["Ni"], 1),
]

PROPERTIES = ["Dmax", "Tg", "Tl", "Tx", "sigma_Y", "E", "epsilon"]


def load_elements():
    with open(os.path.join(HERE, "elements.csv")) as fh:
        rows = list(csv.DictReader(fh))
    symbols = [r["symbol"] for r in rows]
    table = {r["symbol"]: {k: float(v) for k, v in r.items() if k != "symbol"} for r in rows}
    return symbols, table


def draw_composition(rng, family):
    _, ranges, extras, _ = family
    comp = {el: rng.uniform(lo, hi) for el, (lo, hi) in ranges.items()}
    if extras and rng.random() < 0.45:
        n_extra = 1 if rng.random() < 0.7 else 2
        for el in rng.choice(extras, size=min(n_extra, len(extras)), replace=False):
            comp[str(el)] = rng.uniform(1.0, 5.0)
    total = sum(comp.values())
    comp = {el: round(100.0 * v / total, 2) for el, v in comp.items()}
    biggest = max(comp, key=comp.get)
    comp[biggest] = round(comp[biggest] + 100.0 - sum(comp.values()), 2)
    return comp


def descriptors(comp, table):
    c = {el: v / 100.0 for el, v in comp.items()}
    mean = lambda key: sum(w * table[el][key] for el, w in c.items())
    r_bar = mean("atomic_radius")
    delta = math.sqrt(sum(w * (1.0 - table[el]["atomic_radius"] / r_bar) ** 2 for el, w in c.items()))
    en_bar = mean("electronegativity")
    en_std = math.sqrt(sum(w * (table[el]["electronegativity"] - en_bar) ** 2 for el, w in c.items()))
    return {
        "delta": delta,
        "tm": mean("melting_point"),
        "en_std": en_std,
        "vec": mean("valence_electrons"),
        "ecoh": mean("cohesive_energy"),
        "vm": mean("molar_volume"),
        "n": len(comp),
    }


def main():
    rng = np.random.default_rng(20240613)
    symbols, table = load_elements()
    rows = []
    for family in FAMILIES:
        base = family[0]
        family_bias = rng.normal(0.0, 0.25)
        for _ in range(family[3]):
            comp = draw_composition(rng, family)
            d = descriptors(comp, table)
            gfa = 7.0 * d["delta"] + 0.25 * (d["n"] - 3) + 1.2 * d["en_std"] + family_bias + rng.normal(0.0, 0.2)
            rows.append((base, comp, d, gfa))

    gfas = np.array([r[3] for r in rows])
    bmg_cut, rmg_cut = np.quantile(gfas, [0.74, 0.28])

    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(symbols + PROPERTIES + ["label"])
    for base, comp, d, gfa in rows:
        label = "BMG" if gfa >= bmg_cut else ("RMG" if gfa >= rmg_cut else "CRA")
        props = {}
        tg = 0.37 * d["tm"] * (1.0 + 0.5 * (d["delta"] - 0.1)) + rng.normal(0.0, 10.0)
        e_mod = 180.0 * d["ecoh"] / d["vm"] + 10.0 + rng.normal(0.0, 4.0)
        sigma = 20.0 * e_mod * (1.0 + 0.15 * gfa) + rng.normal(0.0, 80.0)
        if label != "CRA" and rng.random() < 0.85:
            props["Tg"] = tg
            props["Tx"] = tg + 30.0 + 25.0 * gfa + rng.normal(0.0, 5.0)
            props["Tl"] = tg / (0.55 + 0.05 * gfa) + rng.normal(0.0, 15.0)
        if label == "BMG" and rng.random() < 0.9:
            props["Dmax"] = math.exp(1.2 * gfa - 0.5 + rng.normal(0.0, 0.3))
        mech_p = {"BMG": 0.65, "RMG": 0.2, "CRA": 0.1}[label]
        if rng.random() < mech_p:
            props["E"] = e_mod
            props["sigma_Y"] = max(sigma, 100.0)
            if rng.random() < 0.8:
                props["epsilon"] = max(0.0, 30.0 * math.exp(-sigma / 1500.0) * d["vec"] / 8.0 + rng.normal(0.0, 1.5))
        line = [("%.2f" % comp[s]) if s in comp else "0" for s in symbols]
        line += [("%.4g" % props[p]) if p in props else "" for p in PROPERTIES]
        line.append(label)
        writer.writerow(line)


if __name__ == "__main__":
    main()
