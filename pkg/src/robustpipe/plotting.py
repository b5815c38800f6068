"""Report figures rendered to files (non-interactive Agg backend)."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.lines import Line2D  # noqa: E402

from .numgrad import predict_proba  # noqa: E402

RC = {
    "figure.dpi": 100,
    "savefig.dpi": 120,
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "svg.hashsalt": "robustpipe",
}


def _save(fig, path):
    # fixed metadata keeps repeated renders byte-identical
    meta = {"Software": None} if str(path).endswith(".png") else {"Creator": None, "Date": None}
    fig.savefig(path, metadata=meta, bbox_inches="tight")
    plt.close(fig)


def plot_running_best(curves, path, metric="cvar10"):
    """``curves`` maps a label to a list of ``(trial, best)`` pairs."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(5, 3.2))
        for label, curve in curves.items():
            c = np.asarray(curve, dtype=float)
            ax.step(c[:, 0] + 1, c[:, 1], where="post", label=label, lw=1.3 if label == "joint" else 0.9)
        ax.set_xlabel("trial")
        ax.set_ylabel(f"running best {metric}")
        ax.legend(fontsize=7, ncol=2, frameon=False)
        _save(fig, path)


def plot_coalitions(game, path, shapley=None, pairs=None):
    """Bar chart of coalition values with optional Shapley and pairwise panels."""
    from .shapley import members

    labels = []
    for mask in range(len(game.values)):
        names = [game.players[i] for i in sorted(members(mask, game.k))]
        labels.append("+".join(names) if names else "(none)")
    panels = 1 + (shapley is not None) + (pairs is not None)
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, panels, figsize=(4 * panels, 3.2), squeeze=False)
        ax = axes[0, 0]
        ax.bar(range(len(labels)), game.values, color="0.45")
        ax.set_xticks(range(len(labels)), labels, rotation=45, ha="right", fontsize=7)
        ax.axhline(0, color="k", lw=0.6)
        ax.set_ylabel("value vs empty coalition")
        col = 1
        if shapley is not None:
            axes[0, col].bar(game.players, shapley, color="C0")
            axes[0, col].axhline(0, color="k", lw=0.6)
            axes[0, col].set_title("Shapley", fontsize=9)
            col += 1
        if pairs is not None:
            keys = [f"{game.players[i]}x{game.players[j]}" for i, j in pairs]
            axes[0, col].bar(keys, list(pairs.values()), color="C3")
            axes[0, col].axhline(0, color="k", lw=0.6)
            axes[0, col].set_title("pairwise interaction", fontsize=9)
            axes[0, col].tick_params(axis="x", labelsize=7)
        _save(fig, path)


def plot_decision_boundaries(models, ds, path, splits=("train", "test_ood"), grid=200):
    """Probability-0.5 contours of each 2-D classifier over the data."""
    X = np.asarray(ds.X)
    lo, hi = X.min(axis=0) - 0.5, X.max(axis=0) + 0.5
    gx, gy = np.meshgrid(np.linspace(lo[0], hi[0], grid), np.linspace(lo[1], hi[1], grid))
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(5, 4))
        markers = {"train": "o", "test_ood": "x"}
        for tag in splits:
            Xs, ys = ds.subset(tag)
            ax.scatter(Xs[:, 0], Xs[:, 1], c=ys, cmap="coolwarm", s=8, marker=markers.get(tag, "."), alpha=0.6, label=tag)
        handles, names = ax.get_legend_handles_labels()
        for k, (label, model) in enumerate(models.items()):
            p = predict_proba(model, pts)[:, 1].reshape(gx.shape)
            ax.contour(gx, gy, p, levels=[0.5], colors=[f"C{k}"], linewidths=1.2)
            handles.append(Line2D([], [], color=f"C{k}", lw=1.2))
            names.append(label)
        ax.legend(handles, names, fontsize=7, frameon=False)
        ax.set_aspect("equal")
        _save(fig, path)
