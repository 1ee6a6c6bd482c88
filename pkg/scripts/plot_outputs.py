"""Render forecast and activation CSVs written by the CLI.

Uses matplotlib when it is installed and falls back to a text summary.
"""
import argparse
from pathlib import Path

import pandas as pd


def summarize(forecast, curves):
    if forecast is not None:
        for (name, kind), g in forecast.groupby(["channel", "kind"], sort=False):
            print(f"{name:>16} {kind:>8}: {len(g)} points, last {g['value'].iloc[-1]:.4g}")
    if curves is not None:
        for rank, g in curves.groupby("rank"):
            gap = (g["spline"] - g["symbolic"]).abs().max()
            print(f"formula {rank}: {g['branch'].iloc[0]} {g['mixer'].iloc[0]}, max |spline - fit| {gap:.3g}")


def render(forecast, curves, out):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if forecast is not None:
        names = list(dict.fromkeys(forecast["channel"]))
        fig, axes = plt.subplots(len(names), 1, figsize=(9, 2.4 * len(names)), squeeze=False)
        for ax, name in zip(axes[:, 0], names):
            for kind, style in (("history", "-"), ("forecast", "--")):
                g = forecast[(forecast["channel"] == name) & (forecast["kind"] == kind)]
                ax.plot(pd.to_datetime(g["timestamp"]), g["value"], style, label=kind)
            ax.set_title(name)
            ax.legend(loc="upper left")
        fig.tight_layout()
        fig.savefig(out / "forecast.png", dpi=120)
        print(f"wrote {out / 'forecast.png'}")
    if curves is not None:
        ranks = sorted(curves["rank"].unique())
        cols = min(5, len(ranks))
        rows = (len(ranks) + cols - 1) // cols
        fig, axes = plt.subplots(rows, cols, figsize=(3 * cols, 2.6 * rows), squeeze=False)
        for ax, rank in zip(axes.ravel(), ranks):
            g = curves[curves["rank"] == rank]
            ax.plot(g["x"], g["spline"], label="spline")
            ax.plot(g["x"], g["symbolic"], "--", label="symbolic")
            ax.set_title(f"#{rank} {g['branch'].iloc[0]}", fontsize=8)
        for ax in axes.ravel()[len(ranks):]:
            ax.axis("off")
        axes[0, 0].legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(out / "activations.png", dpi=120)
        print(f"wrote {out / 'activations.png'}")


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("run_dir", help="directory holding forecast_plot.csv and/or activation_curves.csv")
    args = p.parse_args()
    out = Path(args.run_dir)
    f_path, c_path = out / "forecast_plot.csv", out / "activation_curves.csv"
    forecast = pd.read_csv(f_path) if f_path.is_file() else None
    curves = pd.read_csv(c_path) if c_path.is_file() else None
    if forecast is None and curves is None:
        raise SystemExit(f"nothing to plot in {out}")
    try:
        render(forecast, curves, out)
    except ImportError:
        print("matplotlib not installed; text summary follows")
        summarize(forecast, curves)


if __name__ == "__main__":
    main()
