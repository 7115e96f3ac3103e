"""Convergence-trace figures (optional; needs matplotlib)."""

from __future__ import annotations

import io

from .fent import atomic_write
from .optimizer import FitReport


def write_trace_svg(report: FitReport, path, title: str = "") -> None:
    """Plot objective and gradient-norm traces on log axes and write an SVG."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    # Fixed metadata keeps the SVG bytes reproducible.
    matplotlib.rcParams["svg.hashsalt"] = "fennet"
    fig, (ax_f, ax_g) = plt.subplots(1, 2, figsize=(8, 3))
    ax_f.semilogy(range(len(report.objective_trace)), report.objective_trace, marker=".")
    ax_f.set_xlabel("iteration")
    ax_f.set_ylabel("objective")
    if report.grad_norm_trace:
        ax_g.semilogy(range(len(report.grad_norm_trace)), report.grad_norm_trace, marker=".")
    ax_g.set_xlabel("iteration")
    ax_g.set_ylabel("gradient norm")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    atomic_write(path, buf.getvalue())
