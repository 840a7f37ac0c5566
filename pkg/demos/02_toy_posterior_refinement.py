#!/usr/bin/env python3
"""Refining a Laplace approximation on a 2D logistic regression posterior.

A 50-point bimodal binary task gives a skewed, banana-ish 3-parameter
posterior. The Laplace approximation is a symmetric Gaussian and misses
that shape; mean-field VB does a bit better; pushing the Laplace Gaussian
through a short trained radial flow lands almost on top of full-batch HMC.
The MMD between each approximation's samples and HMC's quantifies it.

    python demos/02_toy_posterior_refinement.py
"""

from pathlib import Path

from flowrefine.experiments import run_toy2d

OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)


def main():
    print("Running LA, mean-field VB, LA+flow (5 layers), and HMC (4 chains)...")
    res = run_toy2d(flow_lengths=[5], seed=0)
    print(f"  HMC split R-hat (max over dims): {res['rhat'].max():.4f}")
    print(f"  HMC mean acceptance rate:        {res['accept_rates'].mean():.2f}")

    print("\nMMD to the HMC samples (lower = closer to the gold standard):")
    order = ["la", "vb", "la-refine-5", "hmc"]
    labels = {
        "la": "Laplace approximation",
        "vb": "mean-field VB",
        "la-refine-5": "LA + radial flow (5)",
        "hmc": "HMC self-distance",
    }
    for name in order:
        print(f"  {labels[name]:<24s} {res['mmd'][name]:.5f}")
    print("  -> refinement closes most of the LA-to-HMC gap.")

    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        g1, g2 = res["kde_axes"]
        fig, axes = plt.subplots(1, 4, figsize=(13, 3.2), sharex=True, sharey=True)
        for ax, name in zip(axes, order):
            ax.contourf(g1, g2, res["kde_grids"][name].T, levels=12, cmap="viridis")
            s = res["samples"][name]
            ax.plot(s[:300, 0], s[:300, 1], ".", color="white", markersize=1, alpha=0.5)
            title = labels[name]
            if name != "hmc":
                title += f"  (MMD {res['mmd'][name]:.3f})"
            ax.set_title(title, fontsize=9)
            ax.set_xlabel("weight 1")
        axes[0].set_ylabel("weight 2")
        fig.tight_layout()
        fig.savefig(OUT / "toy_posteriors.png", dpi=130)
        print(f"\nwrote {OUT / 'toy_posteriors.png'}")
    except ImportError:
        print("\nmatplotlib not available; skipped the figure")


if __name__ == "__main__":
    main()
