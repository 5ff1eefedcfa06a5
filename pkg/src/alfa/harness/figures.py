"""Optional figures next to the CSV output.

matplotlib is imported lazily (and only here), so the library and the CLI
work without it; ``--plot`` then fails with a clear message.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from alfa.errors import InvalidConfig


def _pyplot():
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        raise InvalidConfig("plotting needs matplotlib (pip install 'artifact[plot]')") from None
    return plt


def plot_curve(result, path) -> Path:
    """Accuracy and robust count against training size, one line per modality."""
    plt = _pyplot()
    cells = result.cells()
    methods = sorted({c.method for c in cells})
    fig, axes = plt.subplots(2, len(methods), figsize=(4.5 * len(methods), 6), squeeze=False, sharex=True)
    for col, method in enumerate(methods):
        for j in sorted({c.modality for c in cells if c.method == method}):
            cs = [c for c in cells if c.method == method and c.modality == j]
            sizes = [c.size for c in cs]
            axes[0, col].plot(sizes, [c.accuracy_mean for c in cs], marker="o", ms=3, label=f"prefix {j + 1}")
            axes[1, col].plot(sizes, [c.robust_count_mean for c in cs], marker="o", ms=3)
        axes[0, col].set_title(method)
        axes[0, col].set_ylabel("test accuracy")
        axes[1, col].set_ylabel("robust predictions")
        axes[1, col].set_xlabel("training instances")
    axes[0, 0].legend(fontsize=8)
    return _save(fig, plt, path)


def plot_correlations(results, path) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(1.2 * max(len(results), 3) + 2, 3.5))
    names = [r.dataset for r in results]
    rs = [r.r for r in results]
    colors = ["tab:blue" if r.significant else "tab:gray" for r in results]
    ax.bar(names, rs, color=colors)
    ax.axhline(0.0, color="black", lw=0.8)
    ax.set_ylim(-1, 1)
    ax.set_ylabel("pearson r (EU, AU)")
    ax.set_title("blue: p < 0.05")
    return _save(fig, plt, path)


def plot_monotonicity(result, path) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    per = np.array([eus for _, eus in result.per_seed])
    if per.size:
        ax.fill_between(result.sizes, per.min(axis=0), per.max(axis=0), alpha=0.2, lw=0)
    ax.plot(result.sizes, result.mean_eu, marker="o", ms=3)
    ax.set_xlabel("training instances")
    ax.set_ylabel("mean test EU")
    ax.set_title(f"spearman = {result.spearman:.3f}")
    return _save(fig, plt, path)


def plot_episodes(summary, path) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    names = list(summary.termination)
    rel = [summary.termination[m]["Reliable"] for m in names]
    exh = [summary.termination[m]["BudgetExhausted"] for m in names]
    ax.bar(names, rel, label="Reliable")
    ax.bar(names, exh, bottom=rel, label="BudgetExhausted")
    ax.set_ylabel("episodes")
    ax.set_xlabel("final modality")
    ax.legend(fontsize=8)
    return _save(fig, plt, path)


def _save(fig, plt, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
