"""Figure rendering for calibration reports.

Saved SVGs are byte-reproducible: element ids are salted with a fixed
string and the date field is stripped, so identical inputs give identical
files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .metrics import CalibrationBins

_SVG_SALT = "affuq"


def save_reliability_diagram(bins: CalibrationBins, path, title: str = "Reliability diagram") -> None:
    """Accuracy-vs-confidence bars over the bin partition, with the identity
    line for reference and per-bin counts on a twin axis."""
    path = str(path)
    width = 1.0 / bins.num_bins
    centers = bins.centers
    occupied = [i for i, c in enumerate(bins.counts) if c > 0]

    with plt.rc_context({"svg.hashsalt": _SVG_SALT}):
        fig, ax = plt.subplots(figsize=(5.0, 4.2))
        ax.bar(
            centers, bins.accuracy, width=0.92 * width,
            color="#4878cf", edgecolor="#2b4a84", label="accuracy",
        )
        ax.plot([0, 1], [0, 1], linestyle="--", color="black", linewidth=1.0,
                label="perfect calibration")
        if occupied:
            ax.plot(
                [centers[i] for i in occupied],
                [bins.confidence[i] for i in occupied],
                linestyle="none", marker="D", markersize=4,
                color="#d65f5f", label="mean confidence",
            )
        ax.set_xlim(0.0, 1.0)
        ax.set_ylim(0.0, 1.0)
        ax.set_xlabel("confidence")
        ax.set_ylabel("accuracy")
        ax.set_title(title)
        ax.legend(loc="upper left", fontsize=8)

        count_ax = ax.twinx()
        count_ax.bar(
            centers, bins.counts, width=0.92 * width,
            color="gray", alpha=0.18, zorder=0,
        )
        count_ax.set_ylabel("count", color="gray", fontsize=8)
        count_ax.tick_params(axis="y", labelcolor="gray", labelsize=8)

        fig.tight_layout()
        if path.endswith(".svg"):
            fig.savefig(path, metadata={"Date": None})
        else:
            fig.savefig(path)
        plt.close(fig)
