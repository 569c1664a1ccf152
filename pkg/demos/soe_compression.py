"""Kernel compression walkthrough.

Builds exponential-sum approximations of the memory kernel t^(-1-alpha) at a
few tolerances, compares the certified bound with the measured residual on a
log grid, and dumps one of the tables to CSV. Run from the repo root:

    python3 demos/soe_compression.py [--out demo_out]
"""

import argparse
from pathlib import Path

import numpy as np

from wemp.soe import build_soe, dump_soe_table, soe_residual


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="demo_out")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    tau_f = 1e-3
    print(f"compressing t^(-1-alpha) over [{tau_f:g}, 1] into exponentials\n")
    print(f"{'alpha':>6} {'epsilon':>9} {'terms':>6} {'bound':>10} "
          f"{'residual':>10} {'slowest rate':>13}")
    for alpha in (0.1, 0.5, 0.9):
        for eps in (1e-1, 1e-3, 1e-6):
            soe = build_soe(alpha, tau_f, eps)
            res = soe_residual(soe, 1.0)
            print(f"{alpha:>6} {eps:>9.0e} {soe.n_terms:>6} "
                  f"{soe.epsilon:>10.3e} {res:>10.3e} {soe.gamma_min:>13.4e}")
    print("\nthe measured residual sits well under the certified bound; the")
    print("term count grows like log(1/eps)^2 and is independent of the")
    print("number of time steps, which is what makes long runs affordable.")

    soe = build_soe(0.5, tau_f, 1e-6)
    with open(out / "soe_table_alpha0.5.csv", "w") as fh:
        dump_soe_table(soe, fh)
    print(f"\nwrote the alpha=0.5, eps=1e-6 table to "
          f"{out / 'soe_table_alpha0.5.csv'}")

    # pointwise view of the kernel against the sum, for plotting
    t = np.geomspace(tau_f, 1.0, 400)
    kernel = t ** (-1.5)
    approx = (soe.weights[None, :] * np.exp(-np.outer(t, soe.rates))).sum(axis=1)
    with open(out / "soe_kernel_alpha0.5.csv", "w") as fh:
        fh.write("t,kernel,approx,abs_error\n")
        for row in zip(t, kernel, approx, np.abs(kernel - approx)):
            fh.write(",".join(f"{v:.10e}" for v in row) + "\n")
    print(f"wrote the pointwise comparison to {out / 'soe_kernel_alpha0.5.csv'}")

    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        print("matplotlib not available, skipping the plot")
        return
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.loglog(t, np.abs(kernel - approx), label="|kernel - sum|")
    ax.axhline(soe.epsilon, color="k", ls="--", label="certified bound")
    ax.set_xlabel("t")
    ax.set_ylabel("absolute error")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / "soe_kernel_error.png", dpi=120)
    print(f"wrote {out / 'soe_kernel_error.png'}")


if __name__ == "__main__":
    main()
