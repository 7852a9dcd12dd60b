"""Success and precision plots rendered to PNG files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .metrics import PR_THRESHOLDS, SR_THRESHOLDS, EvalResult  # noqa: E402


def _plot(results: dict[str, EvalResult], attr: str, grid, xlabel: str, title: str, score, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(4.5, 3.6), dpi=120)
    for name, r in sorted(results.items(), key=lambda kv: -score(kv[1])):
        ax.plot(grid, getattr(r, attr), lw=1.6, label=f"{name} [{100 * score(r):.1f}]")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("fraction of frames")
    ax.set_title(title)
    ax.set_xlim(grid[0], grid[-1])
    ax.set_ylim(0, 1.02)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=7, loc="lower left" if attr == "sr_curve" else "lower right")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_curves(results: dict[str, EvalResult], out_dir) -> dict[str, Path]:
    """Write ``success.png`` (legend: AUC) and ``precision.png`` (legend: value at 20 px)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return {
        "success": _plot(results, "sr_curve", SR_THRESHOLDS, "overlap threshold", "Success plot",
                         lambda r: r.sr_auc, out / "success.png"),
        "precision": _plot(results, "pr_curve", PR_THRESHOLDS, "location error threshold [px]",
                           "Precision plot", lambda r: r.pr20, out / "precision.png"),
    }
