"""Matplotlib figures for evaluation reports."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def render_report_figures(report, out_dir) -> list[Path]:
    """Write reduction box plot, timing bar chart and example meshes as PNG files."""
    plt = _pyplot()
    out = Path(out_dir)
    written = []
    methods = [r.method for r in report.rows]

    fig, ax = plt.subplots(figsize=(1.6 * len(methods) + 2, 4))
    data = [[100 * s.reduction for s in report.samples if s.method == m] for m in methods]
    ax.boxplot(data)
    ax.set_xticks(range(1, len(methods) + 1), methods)
    ax.axhline(0.0, color="grey", lw=0.8)
    ax.set_ylabel("error reduction (%)")
    ax.set_title(f"{report.problem}: error reduction per sample")
    fig.tight_layout()
    written.append(out / "reduction.png")
    fig.savefig(written[-1], dpi=120)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(1.6 * len(methods) + 2, 4))
    times = [r.time_ms_mean for r in report.rows]
    ax.bar(methods, times, color="tab:blue")
    ax.set_yscale("log")
    ax.set_ylabel("time per deformation (ms)")
    fig.tight_layout()
    written.append(out / "timing.png")
    fig.savefig(written[-1], dpi=120)
    plt.close(fig)

    ex = report.example or {}
    if ex.get("coords"):
        mesh = ex["mesh"]
        panels = [("initial", mesh.nodes)] + list(ex["coords"].items())
        fig, axes = plt.subplots(1, len(panels), figsize=(3.2 * len(panels), 3.4), squeeze=False)
        for ax, (name, coords) in zip(axes[0], panels):
            ax.triplot(coords[:, 0], coords[:, 1], mesh.triangles, lw=0.4, color="k")
            bad = mesh.areas(coords) <= 0
            if np.any(bad):
                for tri in mesh.triangles[bad]:
                    ax.fill(coords[tri, 0], coords[tri, 1], color="red", alpha=0.6)
            ax.set_aspect("equal")
            ax.set_axis_off()
            ax.set_title(name)
        fig.tight_layout()
        written.append(out / "example_meshes.png")
        fig.savefig(written[-1], dpi=120)
        plt.close(fig)
    return written
