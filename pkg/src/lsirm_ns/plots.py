"""SVG renderings of an analysis report.

Every figure reads its numbers from the report dictionary (and, for density
contours, from a persisted density grid); nothing is recomputed here. Output is
byte-stable: the SVG hash salt is fixed and the date stamp omitted.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_SVG_META = {"Date": None}
_RC = {"svg.hashsalt": "lsirm-ns", "svg.fonttype": "none", "path.simplify": False}


def _report_dict(report):
    return report.to_dict() if hasattr(report, "to_dict") else report


def _palette(labels):
    cmap = plt.get_cmap("tab10")
    return {lab: cmap(k % 10) for k, lab in enumerate(labels)}


def item_map_figure(group: dict, density=None):
    """Item positions coloured by cluster, centers as labelled stars, optional KDE contours."""
    cl = group["clusters"]
    labels = cl["labels"]
    colors = _palette(labels)
    fig, ax = plt.subplots(figsize=(6, 6))
    if density is not None:
        ax.contour(density.xs, density.ys, density.density, levels=8, colors="0.75", linewidths=0.6)
    pos = group["item_positions"]
    for item, (x, y) in pos.items():
        ax.scatter([x], [y], s=18, color=colors[cl["item_membership"][item]], zorder=2)
        ax.annotate(item, (x, y), fontsize=6, xytext=(2, 2), textcoords="offset points")
    for lab in labels:
        cx, cy = cl["centers"][lab]
        (h,) = ax.plot([cx], [cy], marker="*", markersize=16, color=colors[lab], markeredgecolor="k", linestyle="none", zorder=3)
        h.set_gid(f"center-{lab}")
        ax.annotate(lab, (cx, cy), fontsize=11, fontweight="bold", xytext=(5, -12), textcoords="offset points")
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_title(f"Item map: {group['name']}")
    return fig


def count_histogram_figure(group: dict):
    hist = {int(k): v for k, v in group["clusters"]["histogram"].items()}
    ms = sorted(hist)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    bars = ax.bar(ms, [hist[m] for m in ms], color="0.5")
    for m, b in zip(ms, bars):
        b.set_gid(f"count-{m}")
    ax.set_xlabel("number of cluster centers")
    ax.set_ylabel("runs")
    ax.set_xticks(ms)
    ax.set_title(f"Cluster counts: {group['name']}")
    return fig


def student_map_figure(group: dict):
    cl = group["clusters"]
    labels = cl["labels"]
    colors = _palette(labels)
    colors["M"] = (0.6, 0.6, 0.6, 1.0)
    fig, ax = plt.subplots(figsize=(6, 6))
    pos = group["respondent_positions"]
    members = cl["student_membership"]
    for lab in labels + ["M"]:
        pts = np.array([pos[r] for r in pos if members[r] == lab]).reshape(-1, 2)
        if len(pts):
            ax.scatter(pts[:, 0], pts[:, 1], s=6, color=colors[lab], label=lab)
    for lab in labels:
        cx, cy = cl["centers"][lab]
        (h,) = ax.plot([cx], [cy], marker="*", markersize=14, color=colors[lab], markeredgecolor="k", linestyle="none")
        h.set_gid(f"center-{lab}")
    mx, my = cl["midpoint"]
    ax.plot([mx], [my], marker="X", markersize=12, color="k", linestyle="none", gid="midpoint")
    ax.legend(fontsize=7, markerscale=2, loc="best")
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_title(f"Respondent map: {group['name']}")
    return fig


def proportion_profile_figure(report: dict):
    fig, ax = plt.subplots(figsize=(8, 3.5))
    for name, g in report["groups"].items():
        props = g["positive_proportions"]
        items = list(props)
        vals = [np.nan if props[i] is None else props[i] for i in items]
        ax.plot(range(1, len(items) + 1), vals, marker="o", markersize=3, linewidth=1, label=name, gid=f"profile-{name}")
    ax.set_xlabel("item")
    ax.set_ylabel("positive proportion")
    ax.set_ylim(0, 1)
    ax.legend(fontsize=8)
    return fig


def _save(fig, path):
    with plt.rc_context(_RC):
        fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)
    return path


def emit_plots(report, out_dir, densities: dict | None = None):
    """Write the item map, count histogram and respondent map per group, plus the proportion profile."""
    rep = _report_dict(report)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    densities = densities or {}
    paths = []
    with plt.rc_context(_RC):
        for name, g in rep["groups"].items():
            paths.append(_save(item_map_figure(g, densities.get(name)), out / f"item_map_{name}.svg"))
            paths.append(_save(count_histogram_figure(g), out / f"cluster_counts_{name}.svg"))
            paths.append(_save(student_map_figure(g), out / f"student_map_{name}.svg"))
        paths.append(_save(proportion_profile_figure(rep), out / "positive_proportions.svg"))
    return paths
