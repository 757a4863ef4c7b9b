"""Figure and image export for reconstruction reports.

Everything here is presentation-only: PGM/PNG renderings of potentials and
matplotlib figures for convergence traces and sweep summaries, written next
to the CSV/JSON outputs. Nothing in the reconstruction path reads images.
"""

from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)

_RC = {
    "figure.dpi": 120,
    "savefig.dpi": 150,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.4,
}

# no timestamps or library versions inside the files: outputs stay byte-reproducible
_PNG_META = {"Software": None}


def write_pgm(path, img):
    """8-bit binary PGM of a 2D array, min-max scaled; returns the scale used."""
    img = np.asarray(img, dtype=float)
    lo, hi = float(img.min()), float(img.max())
    span = hi - lo if hi > lo else 1.0
    scaled = np.round((img - lo) / span * 255.0).astype(np.uint8)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode()
    Path(path).write_bytes(header + scaled.tobytes())
    return {"min": lo, "max": hi}


def save_image_png(path, img, extent_cm=None, title=None, cbar_label=None):
    """Grayscale rendering of a potential/permittivity image."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.2, 3.6))
        extent = None
        if extent_cm is not None:
            ex, ey = extent_cm
            extent = (-ex / 2, ex / 2, -ey / 2, ey / 2)
        im = ax.imshow(np.asarray(img, dtype=float), cmap="gray", origin="lower",
                       extent=extent, interpolation="nearest")
        ax.grid(False)
        if extent is not None:
            ax.set_xlabel("x (cm)")
            ax.set_ylabel("y (cm)")
        if title:
            ax.set_title(title)
        fig.colorbar(im, ax=ax, label=cbar_label)
        fig.tight_layout()
        fig.savefig(path, metadata=_PNG_META)
        plt.close(fig)


def save_trace_figure(path, traces, ylabel="relative data fit", logy=True):
    """Per-iteration curves, one line per labeled trace."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.6, 3.4))
        for label, values in traces.items():
            values = np.asarray(values, dtype=float)
            ax.plot(np.arange(1, len(values) + 1), values, label=label)
        if logy:
            ax.set_yscale("log")
        ax.set_xlabel("iteration")
        ax.set_ylabel(ylabel)
        if len(traces) > 1:
            ax.legend()
        fig.tight_layout()
        fig.savefig(path, metadata=_PNG_META)
        plt.close(fig)


def save_series_figure(path, x, series, xlabel, ylabel, logx=False):
    """Generic x-vs-y summary figure (e.g. SNR against layer count)."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.6, 3.4))
        for label, values in series.items():
            ax.plot(x, np.asarray(values, dtype=float), marker="o", label=label)
        if logx:
            ax.set_xscale("log", base=2)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if len(series) > 1:
            ax.legend()
        fig.tight_layout()
        fig.savefig(path, metadata=_PNG_META)
        plt.close(fig)
