"""Report figures written next to the CSV outputs."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.linewidth": 0.6,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "grid.linewidth": 0.4,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.4,
    "lines.markersize": 4,
    "savefig.dpi": 120,
    "savefig.bbox": "tight",
}


def _fig(ncols=1, width=4.0, height=3.0):
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, ncols, figsize=(width * ncols, height), squeeze=False)
    return fig, axes[0]


def plot_trajectory(records, path):
    """Tracked loss and (when evaluated) recall per outer iteration."""
    with plt.rc_context(STYLE):
        has_recall = any(r.recall == r.recall for r in records)
        fig, axes = _fig(2 if has_recall else 1)
        its = [r.iteration for r in records]
        ax = axes[0]
        ax.plot(its, [r.loss_after_train for r in records], "o-", label="after training")
        ax.plot(its, [r.loss_after_tree for r in records], "s--", label="after tree learning")
        ax.set_xlabel("iteration")
        ax.set_ylabel("tracked loss")
        ax.grid(True)
        ax.legend(frameon=False)
        if has_recall:
            ax = axes[1]
            ax.plot(its, [r.recall for r in records], "o-", label="recall")
            ax.plot(its, [r.precision for r in records], "^-", label="precision")
            ax.plot(its, [r.f_measure for r in records], "s-", label="F-measure")
            ax.set_xlabel("iteration")
            ax.set_ylabel("metric @ M")
            ax.grid(True)
            ax.legend(frameon=False)
        fig.savefig(path)
        plt.close(fig)
    return path


def plot_metrics(report, path, title=None):
    with plt.rc_context(STYLE):
        fig, axes = _fig(1, width=3.5)
        ax = axes[0]
        names = [n for n, _ in report.as_rows()]
        values = [v for _, v in report.as_rows()]
        bars = ax.bar(names, values, color=["#4c72b0", "#dd8452", "#55a868"])
        for bar, v in zip(bars, values):
            ax.annotate(f"{v:.3f}", (bar.get_x() + bar.get_width() / 2, v), ha="center", va="bottom", fontsize=8)
        ax.set_ylim(0, max(1e-6, max(values)) * 1.2)
        ax.set_title(title or f"{report.users_evaluated} users")
        fig.savefig(path)
        plt.close(fig)
    return path
