"""Figure rendering for decomposition curves and confidence bands.

Rendering is headless and deterministic: fixed figure geometry, fixed dpi,
and no software/version stamp in the PNG metadata, so identical inputs give
identical bytes.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .decomposition import DecompositionCurve
from .inference import SCBResult

_DPI = 144
_LABELS = {
    "D": "overall disparity D",
    "D1": "within-profile gap D1",
    "D2": "covariate composition D2",
    "D3": "modifier composition D3",
}


def _save(fig, path) -> None:
    fig.savefig(path, dpi=_DPI, metadata={"Software": None})
    plt.close(fig)


def plot_decomposition(curve: DecompositionCurve, path) -> None:
    """All four components on one axis against time."""
    t = curve.grid.points
    fig, ax = plt.subplots(figsize=(8.0, 5.0))
    for name, values in curve.components().items():
        ax.plot(t, values, label=_LABELS[name], linewidth=1.6)
    ax.axhline(0.0, color="0.6", linewidth=0.8, zorder=0)
    ax.set_xlabel("time")
    ax.set_ylabel("disparity")
    ax.set_title(f"{curve.method} decomposition")
    ax.legend(frameon=False, fontsize=9)
    fig.tight_layout()
    _save(fig, path)


def plot_bands(results: list[SCBResult], path, *, method: str | None = None) -> None:
    """One panel per component with its simultaneous confidence band."""
    fig, axes = plt.subplots(2, 2, figsize=(9.0, 6.5), sharex=True)
    for res, ax in zip(results, axes.ravel()):
        t = res.grid.points
        band = np.where(res.supported, True, False)
        ax.fill_between(
            t, res.lower, res.upper, where=band, color="0.8", linewidth=0, label="95% band"
        )
        ax.plot(t, res.point, color="C0", linewidth=1.6)
        ax.axhline(0.0, color="0.6", linewidth=0.8, zorder=0)
        ax.set_title(_LABELS.get(res.component, res.component), fontsize=10)
    for ax in axes[1]:
        ax.set_xlabel("time")
    for ax in axes[:, 0]:
        ax.set_ylabel("disparity")
    if method is not None:
        fig.suptitle(f"{method} components with simultaneous bands", fontsize=11)
    fig.tight_layout()
    _save(fig, path)
