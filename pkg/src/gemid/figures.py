"""Matplotlib renderings saved next to the delimited report artifacts."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

KIND_COLORS = {"CV": "#3b6fb6", "SS": "#c44e52", "DD": "#55a868"}
_SAVE = {"dpi": 140, "metadata": {"Software": None}}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)


def kappa_scan_figure(kt, path) -> None:
    """Per-feature mean kappa under CV vs SS vs DD, sorted by CV score."""
    cv = kt.columns("CV").mean(axis=1)
    ss = kt.columns("SS").mean(axis=1)
    dd = kt.columns("DD").mean(axis=1)
    order = np.argsort(-cv, kind="stable")
    x = np.arange(len(kt.features))
    fig, ax = plt.subplots(figsize=(max(7, len(x) * 0.22), 4))
    ax.plot(x, cv[order], color=KIND_COLORS["CV"], label="CV", lw=1.4)
    ax.plot(x, ss[order], color=KIND_COLORS["SS"], label="SS", lw=1.4)
    ax.plot(x, dd[order], color=KIND_COLORS["DD"], label="DD", lw=1.4)
    ax.set_xticks(x)
    ax.set_xticklabels([kt.features[i] for i in order], rotation=90, fontsize=6)
    ax.set_ylabel("mean kappa")
    ax.set_title("Single-feature utility per evaluation kind")
    ax.legend()
    ax.grid(alpha=0.25)
    _save(fig, path)


def vote_figure(tally, path) -> None:
    entries = tally.entries
    x = np.arange(len(entries))
    width = 0.28
    fig, ax = plt.subplots(figsize=(max(7, len(entries) * 0.22), 4))
    ax.bar(x - width, [e.cv_votes for e in entries], width,
           color=KIND_COLORS["CV"], label="CV (informational)")
    ax.bar(x, [e.ss_votes for e in entries], width,
           color=KIND_COLORS["SS"], label="SS")
    ax.bar(x + width, [e.dd_votes for e in entries], width,
           color=KIND_COLORS["DD"], label="DD")
    for e, xi in zip(entries, x):
        if e.selected:
            ax.scatter([xi], [max(e.cv_votes, e.ss_votes, e.dd_votes) + 0.3],
                       marker="v", color="black", s=14)
    ax.set_xticks(x)
    ax.set_xticklabels([e.feature for e in entries], rotation=90, fontsize=6)
    ax.set_ylabel("votes")
    ax.set_title("Context votes per feature (markers: selected)")
    ax.legend()
    _save(fig, path)


def ga_fitness_figure(results, path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    for res in results:
        ax.plot(res.trace, lw=1.2, label=res.case)
    ax.set_xlabel("generation")
    ax.set_ylabel("best macro F1")
    ax.set_title("Wrapper-search fitness per DD case")
    ax.legend(fontsize=6)
    ax.grid(alpha=0.25)
    _save(fig, path)


def cross_eval_figure(cross, path) -> None:
    values = np.array([row.scores for row in cross.rows])
    fig, ax = plt.subplots(
        figsize=(1.1 + 0.6 * len(cross.case_names), 1.2 + 0.32 * len(cross.rows)))
    im = ax.imshow(values, cmap="RdYlGn", vmin=0.0, vmax=1.0, aspect="auto")
    ax.set_xticks(range(len(cross.case_names)))
    ax.set_xticklabels(cross.case_names, rotation=45, ha="right", fontsize=7)
    ax.set_yticks(range(len(cross.rows)))
    ax.set_yticklabels([r.name for r in cross.rows], fontsize=7)
    for i in range(values.shape[0]):
        for j in range(values.shape[1]):
            ax.text(j, i, f"{values[i, j]:.2f}", ha="center", va="center", fontsize=6)
    ax.set_title("Feature-set macro F1 across DD cases")
    fig.colorbar(im, ax=ax, shrink=0.8)
    _save(fig, path)


def study_scores_figure(reports, kind_means, path) -> None:
    fig, ax = plt.subplots(figsize=(max(7, len(reports) * 0.5), 4))
    x = np.arange(len(reports))
    colors = [KIND_COLORS[r.kind] for r in reports]
    ax.bar(x, [r.scores.macro_f1 for r in reports], color=colors)
    for kind, mean in kind_means.items():
        idx = [i for i, r in enumerate(reports) if r.kind == kind]
        ax.hlines(mean["macro_f1"], min(idx) - 0.4, max(idx) + 0.4,
                  colors="black", linestyles="dashed", lw=1)
    ax.set_xticks(x)
    ax.set_xticklabels([r.name for r in reports], rotation=45, ha="right", fontsize=7)
    ax.set_ylabel("macro F1")
    ax.set_ylim(0, 1.05)
    ax.set_title("Context scores (dashed: per-kind mean)")
    _save(fig, path)


def per_device_figure(dd_reports, path) -> None:
    union = sorted(set().union(*(set(r.scores.per_class) for r in dd_reports)))
    values = np.full((len(union), len(dd_reports)), np.nan)
    for j, r in enumerate(dd_reports):
        for i, cls in enumerate(union):
            entry = r.scores.per_class.get(cls)
            if entry is not None:
                values[i, j] = entry["f1"]
    fig, ax = plt.subplots(
        figsize=(1.5 + 0.6 * len(dd_reports), 1.0 + 0.3 * len(union)))
    im = ax.imshow(values, cmap="RdYlGn", vmin=0.0, vmax=1.0, aspect="auto")
    ax.set_xticks(range(len(dd_reports)))
    ax.set_xticklabels([r.name for r in dd_reports], rotation=45, ha="right", fontsize=7)
    ax.set_yticks(range(len(union)))
    ax.set_yticklabels(union, fontsize=7)
    ax.set_title("Per-device F1 across DD cases")
    fig.colorbar(im, ax=ax, shrink=0.8)
    _save(fig, path)
