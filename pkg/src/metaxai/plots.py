"""Static SVG figures rendered from report tables.

Figures are written through matplotlib's SVG backend with text converted to
paths, a fixed hash salt and no date metadata, so the same inputs produce the
same bytes and the files need no external fonts.
"""
from __future__ import annotations

from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

GROUP_COLORS = {
    "Hyperparameter": "#d62728",
    "Landmarker": "#2ca02c",
    "Statistical": "#1f77b4",
    "": "#7f7f7f",
}
CLUSTER_COLORS = ("#e41a1c", "#377eb8", "#4daf4a", "#984ea3", "#ff7f00", "#a65628", "#f781bf", "#999999")

_RC = {
    "svg.hashsalt": "metaxai",
    "svg.fonttype": "path",
    "font.family": "DejaVu Sans",
    "font.size": 8,
}


def _save(fig, path) -> None:
    with plt.rc_context(_RC):
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None}, bbox_inches="tight")
    plt.close(fig)


def _figure(width, height):
    with plt.rc_context(_RC):
        return plt.figure(figsize=(width, height))


def bar_chart(labels: Sequence[str], values: Sequence[float], path, *, errors: Sequence[float] | None = None,
              groups: Sequence[str] | None = None, colors: Sequence[str] | None = None,
              title: str = "", xlabel: str = "") -> None:
    """Horizontal bars, first label on top, colored by feature group unless ``colors`` is given."""
    n = len(labels)
    fig = _figure(6.0, 0.8 + 0.25 * max(n, 1))
    with plt.rc_context(_RC):
        ax = fig.add_subplot(111)
        ypos = np.arange(n)[::-1]
        if colors is None:
            colors = [GROUP_COLORS.get(g, GROUP_COLORS[""]) for g in (groups or [""] * n)]
        ax.barh(ypos, values, xerr=errors, color=colors, ecolor="#333333", capsize=2)
        ax.set_yticks(ypos)
        ax.set_yticklabels(labels)
        ax.axvline(0.0, color="black", linewidth=0.6)
        ax.set_xlabel(xlabel)
        ax.set_title(title)
        if groups:
            seen = [g for g in GROUP_COLORS if g and g in set(groups)]
            handles = [plt.Rectangle((0, 0), 1, 1, color=GROUP_COLORS[g]) for g in seen]
            if handles:
                ax.legend(handles, seen, loc="lower right", frameon=False)
    _save(fig, path)


def _dendro_coords(node, leaf_pos: dict, segments: list, labels: list):
    """Returns (y, x) of ``node``; appends elbow segments and merge annotations."""
    if node.left is None:
        return leaf_pos[node.members[0]], 0.0
    y1, x1 = _dendro_coords(node.left, leaf_pos, segments, labels)
    y2, x2 = _dendro_coords(node.right, leaf_pos, segments, labels)
    x = node.height
    segments.append(((x1, y1), (x, y1)))
    segments.append(((x2, y2), (x, y2)))
    segments.append(((x, y1), (x, y2)))
    y = (y1 + y2) / 2
    labels.append((x, y, node.importance))
    return y, x


def triplot_chart(tree, path, *, groups: Mapping[str, str] | None = None, title: str = "") -> None:
    """Leaf importance bars next to the correlation dendrogram; merges annotated with group dropout."""
    leaves = tree.leaves
    n = len(leaves)
    order = [leaf.members[0] for leaf in leaves]
    leaf_pos = {f: n - 1 - i for i, f in enumerate(order)}
    fig = _figure(10.0, 0.8 + 0.22 * n)
    with plt.rc_context(_RC):
        ax_bar, ax_tree = fig.subplots(1, 2, sharey=True, gridspec_kw={"width_ratios": [1, 1.6]})
        vals = [leaf.importance or 0.0 for leaf in leaves]
        colors = [GROUP_COLORS.get((groups or {}).get(f, ""), GROUP_COLORS[""]) for f in order]
        ax_bar.barh([leaf_pos[f] for f in order], vals, color=colors)
        ax_bar.set_yticks([leaf_pos[f] for f in order])
        ax_bar.set_yticklabels(order)
        ax_bar.set_xlabel("dropout (single feature)")
        ax_bar.axvline(0.0, color="black", linewidth=0.6)
        segments, notes = [], []
        _dendro_coords(tree.root, leaf_pos, segments, notes)
        for (xa, ya), (xb, yb) in segments:
            ax_tree.plot([xa, xb], [ya, yb], color="#444444", linewidth=0.8)
        for x, y, imp in notes:
            if imp is not None:
                ax_tree.text(x, y, f" {imp:.3g}", va="center", ha="left", fontsize=6, color="#d62728")
        ax_tree.set_xlabel("1 - |Spearman correlation|  (red: joint dropout of the merged group)")
        ax_tree.set_xlim(-0.02, 1.1)
        fig.suptitle(title)
    _save(fig, path)


def profile_chart(profiles, path, *, clusters: Mapping[str, str] | None = None, aggregated=None,
                  title: str = "") -> None:
    """Thin per-dataset CP profiles colored by cluster, thick aggregated curves."""
    clusters = clusters or {}
    labels = sorted(set(clusters.values()))
    color = {c: CLUSTER_COLORS[i % len(CLUSTER_COLORS)] for i, c in enumerate(labels)}
    fig = _figure(6.0, 4.0)
    with plt.rc_context(_RC):
        ax = fig.add_subplot(111)
        for p in sorted(profiles, key=lambda p: p.dataset_id):
            ax.plot(p.grid.points, p.predictions, color=color.get(clusters.get(p.dataset_id), "#999999"),
                    linewidth=0.6, alpha=0.7)
        for label, agg in sorted((aggregated or {}).items()):
            ax.plot(agg.grid.points, agg.predictions, color=color.get(label, "black"), linewidth=2.5,
                    label=f"cluster {label}")
        if profiles and profiles[0].grid.scale == "log10":
            ax.set_xscale("log")
        if aggregated:
            ax.legend(frameon=False)
        ax.set_xlabel(profiles[0].feature if profiles else "")
        ax.set_ylabel("predicted rating")
        ax.set_title(title)
    _save(fig, path)


def influence_chart(records, full_profile, reduced_profiles: Mapping[str, object], path, *,
                    title: str = "", label_top: int = 5) -> None:
    """Cook's distance against optimum shift, next to the full and reduced CP profiles."""
    fig = _figure(11.0, 4.0)
    with plt.rc_context(_RC):
        ax_sc, ax_pr = fig.subplots(1, 2)
        cd = np.array([r.cooks_distance for r in records])
        sh = np.array([r.optimal_shift for r in records])
        ax_sc.scatter(cd, sh, color="#1f77b4", s=14)
        for r in records[:label_top]:
            ax_sc.annotate(r.removed_dataset_id, (r.cooks_distance, r.optimal_shift), fontsize=7,
                           xytext=(3, 3), textcoords="offset points")
        ax_sc.set_xlabel("Cook's distance")
        feature = records[0].feature if records else ""
        ax_sc.set_ylabel(f"change in optimal {feature}")
        top = {r.removed_dataset_id for r in records[:label_top]}
        for d in sorted(reduced_profiles):
            p = reduced_profiles[d]
            emph = d in top
            ax_pr.plot(p.grid.points, p.predictions, linewidth=1.0 if emph else 0.5,
                       color="#ff7f00" if emph else "#bbbbbb", label=f"without {d}" if emph else None)
        if full_profile is not None:
            ax_pr.plot(full_profile.grid.points, full_profile.predictions, color="black", linewidth=2.0,
                       label="full")
            if full_profile.grid.scale == "log10":
                ax_pr.set_xscale("log")
            ax_pr.set_xlabel(full_profile.feature)
        ax_pr.set_ylabel("predicted rating")
        ax_pr.legend(frameon=False, fontsize=6)
        fig.suptitle(title)
    _save(fig, path)
