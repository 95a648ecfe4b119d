"""Figure rendering for run reports.

Kept separate from the orchestrator so search and persistence never import
matplotlib; only the reporting path pays for it.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .orchestrator import (
    GenerationRecord,
    RunManifest,
    overall_frontier,
    per_generation_frontiers,
    run_hypervolumes,
)


def render_frontier_plot(
    manifest: RunManifest, records: Sequence[GenerationRecord], path: str | Path
) -> Path:
    """Scatter every evaluated candidate, overlay per-generation frontiers in a
    light color ramp, and draw the overall frontier as a bold staircase."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(7.0, 5.0))

    seen = set()
    xs, ys = [], []
    for record in records:
        for c in record.union:
            if c.id in seen:
                continue
            seen.add(c.id)
            xs.append(c.cost_tmacs)
            ys.append(c.quality_loss)
    ax.scatter(xs, ys, s=8, c="0.8", label="evaluated", zorder=1)

    per_gen = per_generation_frontiers(records)
    cmap = plt.get_cmap("viridis")
    denom = max(len(per_gen) - 1, 1)
    for i, (gen, points) in enumerate(per_gen):
        if not points:
            continue
        fx = [p.cost_tmacs for p in points]
        fy = [p.quality_loss for p in points]
        ax.plot(
            fx,
            fy,
            drawstyle="steps-post",
            color=cmap(i / denom),
            alpha=0.35,
            linewidth=1.0,
            zorder=2,
        )

    front = overall_frontier(records)
    ax.plot(
        [p.cost_tmacs for p in front],
        [p.quality_loss for p in front],
        drawstyle="steps-post",
        color="crimson",
        linewidth=2.0,
        marker="o",
        markersize=4,
        label="overall frontier",
        zorder=3,
    )

    ax.set_xlabel("cost (TMACs)")
    ax.set_ylabel("quality loss")
    ax.set_title(f"Caching schedule frontier: {manifest.topology_config.get('name', '?')}")
    ax.legend(loc="best")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_hypervolume_plot(
    manifest: RunManifest, records: Sequence[GenerationRecord], path: str | Path
) -> Path:
    """Dominated hypervolume of the cumulative frontier per generation."""
    path = Path(path)
    topology = manifest.topology()
    values = run_hypervolumes(topology, records)
    gens = [r.generation for r in records]

    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    ax.plot(gens, values, marker="o", markersize=3, color="tab:blue")
    ax.set_xlabel("generation")
    ax.set_ylabel("dominated hypervolume")
    ax.set_title(f"Search progress: {manifest.topology_config.get('name', '?')}")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
