#!/usr/bin/env python3
"""Log-log plot of a convergence table written by `dislocore sweep`.

    python3 docs/plot_sweep.py out/table.csv [--drift out/drift.csv] [-o sweep.png]

The table's last row holds the fitted slopes and is shown in the legend.
"""

import argparse

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd


def split_footer(path):
    df = pd.read_csv(path)
    footer = df[df["eps"] == "slope"]
    body = df[df["eps"] != "slope"].astype(float)
    slopes = footer.iloc[0, 1:].to_dict() if len(footer) else {}
    return body, slopes


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("table")
    ap.add_argument("--drift")
    ap.add_argument("-o", "--output", default="sweep.png")
    args = ap.parse_args()

    body, slopes = split_footer(args.table)
    panels = 2 if args.drift else 1
    fig, axes = plt.subplots(1, panels, figsize=(5.5 * panels, 4.2), squeeze=False)
    ax = axes[0][0]
    for col, marker in [("x_err", "o"), ("e_gap", "s"), ("consist", "^")]:
        label = col
        if col in slopes and pd.notna(slopes[col]):
            label += f" (slope {float(slopes[col]):.3f})"
        ax.loglog(body["eps"], body[col], marker=marker, label=label)
    eps = body["eps"]
    ref = body["x_err"].iloc[0] * (eps / eps.iloc[0]) ** 2
    ax.loglog(eps, ref, "k--", lw=0.8, label="eps^2")
    ax.set_xlabel("eps")
    ax.set_title("atomistic vs continuum")
    ax.legend()

    if args.drift:
        drift, dslopes = split_footer(args.drift)
        ax = axes[0][1]
        label = "mean |drift|"
        if "mean_abs_drift" in dslopes:
            label = f"mean |drift| (slope {float(dslopes['mean_abs_drift']):.3f})"
        ax.loglog(drift["eps"], drift["mean_abs_drift"], "o-", label=label)
        ax.loglog(drift["eps"], drift["max_abs_drift"], "s-", label="max |drift|")
        ax.set_xlabel("eps")
        ax.set_title("second-variation drift")
        ax.legend()

    fig.tight_layout()
    fig.savefig(args.output, dpi=150)


if __name__ == "__main__":
    main()
