#!/usr/bin/env python3
"""Regenerates the CSV fixtures under data/.

Linear attenuation tables are synthesized from a two-term cross-section
model (Klein-Nishina scatter + a Z^alpha/E^beta photoelectric-plus-coherent
term) whose four global constants are least-squares fitted to reference
mass-attenuation values of water, aluminium and iron. That keeps every
material on the project energy grid mutually consistent and within a few
percent of published data over 20-150 keV, without shipping any external
database.

Run from the repository root:  python3 scripts/gen_tables.py
"""

import math
import os

import numpy as np
from scipy.optimize import least_squares

GRID = np.arange(20.0, 151.0, 1.0)  # keV, 131 bins
N_A = 6.02214076e23
R_E_CM = 2.8179403262e-13

# reference mass attenuation (cm^2/g) used to pin the model constants
ANCHORS = {
    "water": {20: 0.8096, 30: 0.3756, 40: 0.2683, 50: 0.2269,
              60: 0.2059, 80: 0.1837, 100: 0.1707, 150: 0.1505},
    "aluminium": {20: 3.441, 30: 1.128, 40: 0.5685, 50: 0.3681,
                  60: 0.2778, 80: 0.2018, 100: 0.1704, 150: 0.1378},
    "iron": {20: 25.68, 30: 8.176, 40: 3.629, 50: 1.958,
             60: 1.205, 80: 0.5952, 100: 0.3717, 150: 0.1964},
}

ELEMENTS = {
    "H": (1, 1.008), "C": (6, 12.011), "N": (7, 14.007), "O": (8, 15.999),
    "Al": (13, 26.982), "P": (15, 30.974), "Cl": (17, 35.45),
    "K": (19, 39.098), "Ca": (20, 40.078), "Cr": (24, 51.996),
    "Fe": (26, 55.845), "Ni": (28, 58.693),
}

ANCHOR_COMPOSITIONS = {
    "water": {"H": 0.1119, "O": 0.8881},
    "aluminium": {"Al": 1.0},
    "iron": {"Fe": 1.0},
}

# mass fractions and densities (g/cm^3) of the project materials
MATERIALS = {
    "water": ({"H": 0.1119, "O": 0.8881}, 1.000),
    "polystyrene": ({"C": 0.9226, "H": 0.0774}, 1.05),
    "butanol": ({"C": 0.6482, "H": 0.1360, "O": 0.2158}, 0.8098),
    "propanol": ({"C": 0.5996, "H": 0.1342, "O": 0.2662}, 0.8035),
    "cacl2_23": ({"Ca": 0.08306, "Cl": 0.14695, "H": 0.08616, "O": 0.68383}, 1.20),
    "cacl2_12": ({"Ca": 0.04333, "Cl": 0.07667, "H": 0.09847, "O": 0.78153}, 1.10),
    "k2hpo4_29": ({"K": 0.13020, "P": 0.05157, "H": 0.08113, "O": 0.73710}, 1.24),
    "k2hpo4_15": ({"K": 0.06734, "P": 0.02667, "H": 0.09599, "O": 0.81000}, 1.12),
    "steel": ({"Fe": 0.70, "Cr": 0.18, "Ni": 0.12}, 8.00),
}


def klein_nishina(e_kev):
    k = np.asarray(e_kev, dtype=float) / 511.0
    s = (1 + k) / k**2 * (2 * (1 + k) / (1 + 2 * k) - np.log(1 + 2 * k) / k)
    s += np.log(1 + 2 * k) / (2 * k) - (1 + 3 * k) / (1 + 2 * k) ** 2
    return 2 * math.pi * R_E_CM**2 * s  # cm^2 per electron


def element_mu_rho(params, z, a, e_kev):
    c_s, k_p, alpha, beta = params
    sigma = c_s * klein_nishina(e_kev) + k_p * 1e-24 * z**alpha / np.asarray(e_kev) ** beta
    return (N_A * z / a) * sigma  # cm^2/g


def mixture_mu_rho(params, fractions, e_kev):
    total = np.zeros_like(np.asarray(e_kev, dtype=float))
    for sym, w in fractions.items():
        z, a = ELEMENTS[sym]
        total += w * element_mu_rho(params, z, a, e_kev)
    return total


def fit_model():
    es, refs, comps = [], [], []
    for mat, table in ANCHORS.items():
        for e, v in table.items():
            es.append(float(e))
            refs.append(v)
            comps.append(ANCHOR_COMPOSITIONS[mat])
    es = np.array(es)
    refs = np.array(refs)

    def residual(p):
        model = np.array([mixture_mu_rho(p, comps[i], es[i : i + 1])[0] for i in range(len(es))])
        return np.log(model) - np.log(refs)

    fit = least_squares(residual, x0=[1.0, 1.0, 4.0, 3.0], method="lm")
    worst = float(np.max(np.abs(np.exp(residual(fit.x)) - 1.0)))
    print(f"cross-section fit: c_s={fit.x[0]:.4f} k_p={fit.x[1]:.4e} "
          f"alpha={fit.x[2]:.4f} beta={fit.x[3]:.4f} worst anchor error {100*worst:.2f}%")
    return fit.x


def kramers_spectrum(kvp, mu_al_per_mm, filtration_mm):
    counts = np.zeros_like(GRID)
    inside = GRID < kvp
    counts[inside] = (kvp / GRID[inside] - 1.0) * np.exp(-mu_al_per_mm[inside] * filtration_mm)
    total = counts.sum()
    return counts / total


def write_csv(path, energies, values, header):
    with open(path, "w") as f:
        f.write(f"energy_keV,{header}\n")
        for e, v in zip(energies, values):
            f.write(f"{fmt(e)},{fmt(v)}\n")
    print(f"wrote {path}")


def fmt(v):
    return repr(float(v))


def basis_fit(mu, mu1, mu2, weights):
    a = np.stack([mu1 * weights, mu2 * weights], axis=1)
    b = mu * weights
    coef, *_ = np.linalg.lstsq(a, b, rcond=None)
    return coef


def main():
    root = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..")
    data = os.path.join(root, "data")
    phantoms = os.path.join(data, "phantoms")
    os.makedirs(phantoms, exist_ok=True)

    params = fit_model()

    mu_tables = {}
    for name, (fractions, density) in MATERIALS.items():
        mu_cm = mixture_mu_rho(params, fractions, GRID) * density  # 1/cm
        mu_tables[name] = mu_cm / 10.0  # 1/mm
    al_z, al_a = ELEMENTS["Al"]
    mu_al_mm = element_mu_rho(params, al_z, al_a, GRID) * 2.699 / 10.0

    w60 = mu_tables["water"][GRID == 60.0][0]
    print(f"water mu(60 keV) = {w60:.6f} /mm (reference 0.02059)")
    assert abs(w60 - 0.02059) / 0.02059 < 0.01, "water anchor drifted"

    spec90 = kramers_spectrum(90.0, mu_al_mm, 3.0)
    spec140 = kramers_spectrum(140.0, mu_al_mm, 3.0)
    mean90 = float((GRID * spec90).sum())
    mean140 = float((GRID * spec140).sum())
    print(f"mean energies: 90 kVp -> {mean90:.1f} keV, 140 kVp -> {mean140:.1f} keV")

    for name in MATERIALS:
        write_csv(os.path.join(data, f"mu_{name}.csv"), GRID, mu_tables[name], "mu_per_mm")
    write_csv(os.path.join(data, "spectrum_90kvp.csv"), GRID, spec90, "counts")
    write_csv(os.path.join(data, "spectrum_140kvp.csv"), GRID, spec140, "counts")

    # declared basis coefficients: weighted fit onto (polystyrene, cacl2_23)
    weights = np.sqrt(spec90 + spec140 + 0.02 * max(spec90.max(), spec140.max()))
    coeffs = {}
    print("\nbasis coefficients (polystyrene, cacl2_23) and fit residuals:")
    for name in MATERIALS:
        if name == "steel":
            # metal lies far outside the soft-tissue basis span; declare a
            # strongly attenuating nonnegative pair instead of a fit
            c2 = mu_tables["steel"][GRID == 70.0][0] / mu_tables["cacl2_23"][GRID == 70.0][0]
            coeffs[name] = (0.0, round(float(c2), 1))
            print(f"  steel: declared (0, {coeffs[name][1]})")
            continue
        c = basis_fit(mu_tables[name], mu_tables["polystyrene"], mu_tables["cacl2_23"], weights)
        coeffs[name] = (float(c[0]), float(c[1]))
        recon = c[0] * mu_tables["polystyrene"] + c[1] * mu_tables["cacl2_23"]
        sel = np.isin(GRID, [60.0, 80.0, 100.0, 120.0, 140.0])
        resid = np.max(np.abs(recon[sel] / mu_tables[name][sel] - 1.0))
        print(f"  {name}: c1={c[0]:.4f} c2={c[1]:.4f} max 60-140 keV residual {100*resid:.3f}%")

    def material_block(names):
        lines = []
        for n in names:
            c1, c2 = coeffs[n]
            lines += [f"[material {n}]", f"c1 = {fmt(c1)}", f"c2 = {fmt(c2)}", ""]
        return "\n".join(lines)

    def disc(kind, name, material, x, y, r):
        return (f"[{kind} {name}]\nmaterial = {material}\ncenter_x_mm = {fmt(x)}\n"
                f"center_y_mm = {fmt(y)}\nradius_mm = {fmt(r)}\n")

    def roi(name, material, x, y, hx, hy):
        return (f"[roi {name}]\ncenter_x_mm = {fmt(x)}\ncenter_y_mm = {fmt(y)}\n"
                f"half_width_x_mm = {fmt(hx)}\nhalf_width_y_mm = {fmt(hy)}\n"
                f"material = {material}\n")

    gen_note = "# generated by scripts/gen_tables.py\n\n"

    rods = gen_note
    rods += material_block(["water", "steel", "butanol", "propanol",
                            "cacl2_23", "k2hpo4_29", "polystyrene", "k2hpo4_15"])
    rods += "[background]\nmaterial = water\nradius_mm = 60\n\n"
    rods += disc("insert", "rod1", "steel", -30, -30, 12) + "\n"
    rods += disc("insert", "rod2", "steel", 30, 30, 12) + "\n"
    rods += disc("insert", "butanol", "butanol", -17, 17, 16) + "\n"
    rods += disc("insert", "propanol", "propanol", 17, -17, 16) + "\n"
    rods += disc("insert", "cacl2", "cacl2_23", 0, 44, 13) + "\n"
    rods += disc("insert", "k2hpo4_29", "k2hpo4_29", 0, -44, 13) + "\n"
    rods += disc("insert", "polystyrene", "polystyrene", -44, 0, 13) + "\n"
    rods += disc("insert", "k2hpo4_15", "k2hpo4_15", 44, 0, 13)
    with open(os.path.join(phantoms, "rods.ini"), "w") as f:
        f.write(rods)

    rois = gen_note
    rois += roi("water_center", "water", 0, 0, 4, 4) + "\n"
    rois += roi("butanol", "butanol", -17, 17, 6, 6) + "\n"
    rois += roi("propanol", "propanol", 17, -17, 6, 6) + "\n"
    rois += roi("cacl2", "cacl2_23", 0, 44, 5, 5) + "\n"
    rois += roi("k2hpo4_29", "k2hpo4_29", 0, -44, 5, 5) + "\n"
    rois += roi("polystyrene", "polystyrene", -44, 0, 5, 5) + "\n"
    rois += roi("k2hpo4_15", "k2hpo4_15", 44, 0, 5, 5)
    with open(os.path.join(phantoms, "rods_rois.ini"), "w") as f:
        f.write(rois)

    inserts = gen_note
    inserts += material_block(["water", "k2hpo4_29", "k2hpo4_15", "cacl2_12"])
    inserts += "[background]\nmaterial = water\nradius_mm = 40\n\n"
    inserts += disc("insert", "k2hpo4_29", "k2hpo4_29", -20, 0, 11) + "\n"
    inserts += disc("insert", "k2hpo4_15", "k2hpo4_15", 20, 0, 11) + "\n"
    inserts += disc("insert", "cacl2_12", "cacl2_12", 0, 22, 11)
    with open(os.path.join(phantoms, "inserts.ini"), "w") as f:
        f.write(inserts)

    irois = gen_note
    irois += roi("k2hpo4_29", "k2hpo4_29", -20, 0, 5, 5) + "\n"
    irois += roi("k2hpo4_15", "k2hpo4_15", 20, 0, 5, 5) + "\n"
    irois += roi("cacl2_12", "cacl2_12", 0, 22, 5, 5) + "\n"
    irois += roi("water", "water", 0, -28, 5, 5)
    with open(os.path.join(phantoms, "inserts_rois.ini"), "w") as f:
        f.write(irois)

    calib = gen_note
    calib += material_block(["water", "k2hpo4_29", "k2hpo4_15"])
    calib += "[background]\nmaterial = water\nradius_mm = 50\n\n"
    calib += disc("insert", "k2hpo4_29", "k2hpo4_29", -25, 0, 14) + "\n"
    calib += disc("insert", "k2hpo4_15", "k2hpo4_15", 25, 0, 14)
    with open(os.path.join(phantoms, "calib.ini"), "w") as f:
        f.write(calib)

    crois = gen_note
    crois += roi("water", "water", 0, -32, 6, 6) + "\n"
    crois += roi("k2hpo4_29", "k2hpo4_29", -25, 0, 7, 7) + "\n"
    crois += roi("k2hpo4_15", "k2hpo4_15", 25, 0, 7, 7)
    with open(os.path.join(phantoms, "calib_rois.ini"), "w") as f:
        f.write(crois)

    print("\nphantom specs written under data/phantoms/")


if __name__ == "__main__":
    main()
