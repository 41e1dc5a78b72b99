"""Box-plot figures of PSNR/SSIM per experiment, rendered to standalone SVG."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .degrade import DEFAULT_RESOLUTIONS, ResolutionSpec  # noqa: E402
from .harness import CONTRAST_LABELS  # noqa: E402

__all__ = ["publication_style", "boxplot_experiment", "write_report_figures"]

CONTRAST_COLORS = {"T1w": "#1f77b4", "T2w": "#d62728", "FLAIR": "#2ca02c"}
METRIC_LABELS = {"psnr": "PSNR (dB)", "ssim": "SSIM"}


def publication_style():
    """rcParams for compact, reproducible vector figures."""
    return {
        "font.size": 9,
        "axes.titlesize": 10,
        "axes.labelsize": 9,
        "xtick.labelsize": 8,
        "ytick.labelsize": 8,
        "legend.fontsize": 8,
        "axes.spines.top": False,
        "axes.spines.right": False,
        "svg.fonttype": "path",
        "svg.hashsalt": "anisosim",
        "figure.dpi": 100,
    }


def _resolution_order(records):
    present = {str(r.resolution) for r in records}
    order = [str(r) for r in DEFAULT_RESOLUTIONS if str(r) in present]
    extra = sorted(
        present - set(order), key=lambda s: (ResolutionSpec.parse(s).spacing, s)
    )
    return order + extra


def boxplot_experiment(records, experiment: str, metric: str, path) -> None:
    """One SVG: resolutions on the x-axis, one box per contrast within each group."""
    recs = [r for r in records if r.experiment == experiment]
    resolutions = _resolution_order(recs)
    contrasts = [c for c in CONTRAST_LABELS.values() if any(r.contrast == c for r in recs)]
    width = 0.8 / max(len(contrasts), 1)

    with plt.rc_context(publication_style()):
        fig, ax = plt.subplots(figsize=(7.0, 3.2))
        for ci, contrast in enumerate(contrasts):
            data, positions = [], []
            for ri, res in enumerate(resolutions):
                vals = [
                    getattr(r, "psnr_db" if metric == "psnr" else "ssim")
                    for r in recs
                    if r.contrast == contrast and str(r.resolution) == res
                ]
                vals = [v for v in vals if math.isfinite(v)]
                if vals:
                    data.append(vals)
                    positions.append(ri + (ci - (len(contrasts) - 1) / 2.0) * width)
            if not data:
                continue
            color = CONTRAST_COLORS.get(contrast, "0.4")
            ax.boxplot(
                data,
                positions=positions,
                widths=width * 0.85,
                patch_artist=True,
                boxprops={"facecolor": color, "alpha": 0.45, "edgecolor": color},
                medianprops={"color": "black"},
                whiskerprops={"color": color},
                capprops={"color": color},
                flierprops={"markeredgecolor": color, "markersize": 3},
                manage_ticks=False,
            )
            ax.plot([], [], "s", color=color, alpha=0.6, label=contrast)
        ax.set_xticks(range(len(resolutions)))
        ax.set_xticklabels([r.replace("||", "‖") for r in resolutions])
        ax.set_xlim(-0.6, len(resolutions) - 0.4)
        ax.set_xlabel("slice thickness ‖ gap (mm)")
        ax.set_ylabel(METRIC_LABELS[metric])
        ax.set_title(f"Experiment {experiment}")
        if contrasts:
            ax.legend(frameon=False, loc="best")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)


def write_report_figures(records, outdir) -> list:
    """Write ``exp<id>_<metric>.svg`` for every experiment present; returns the paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    experiments = []
    for r in records:
        if r.experiment not in experiments:
            experiments.append(r.experiment)
    paths = []
    for exp in experiments:
        for metric in ("psnr", "ssim"):
            path = outdir / f"exp{exp}_{metric}.svg"
            boxplot_experiment(records, exp, metric, path)
            paths.append(path)
    return paths
