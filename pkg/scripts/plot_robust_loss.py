#!/usr/bin/env python3
"""Plot the robust loss and its gradient; print the analytic landmarks.

Usage: python scripts/plot_robust_loss.py [out.png]
"""

import math
import sys

import numpy as np

from covisflow.objective import RobustLossParams, robust_charbonnier, robust_charbonnier_grad


def main():
    params = RobustLossParams()
    xs = np.geomspace(1e-3, 1e3, 4000)
    loss = robust_charbonnier(xs, params)
    grad = robust_charbonnier_grad(xs, params)

    peak_x = params.c * math.sqrt(3)
    print(f"gradient peak at x = {peak_x:.5f} px (grad {robust_charbonnier_grad(peak_x, params):.5f})")
    print(f"gradient at 500 px = {robust_charbonnier_grad(500.0, params):.5f}")

    out = sys.argv[1] if len(sys.argv) > 1 else "robust_loss.png"
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    ax1.loglog(xs, loss)
    ax1.set_xlabel("flow error (px)")
    ax1.set_ylabel("loss")
    ax2.semilogx(xs, grad)
    ax2.axvline(peak_x, color="r", ls="--", label=f"peak {peak_x:.3f} px")
    ax2.set_xlabel("flow error (px)")
    ax2.set_ylabel("d loss / d error")
    ax2.legend()
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
