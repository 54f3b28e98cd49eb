"""Static SVG figures.  Output is byte-stable: no timestamps, fixed element ids."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..core import GrbmParams  # noqa: E402

COMPONENT_COLOURS = ("#4c72b0", "#dd8452", "#55a868", "#c44e52")


def _save(fig, path, config_hash: str, seed: int) -> None:
    with matplotlib.rc_context({"svg.hashsalt": "grbm-infomax"}):
        fig.savefig(path, format="svg", metadata={
            "Date": None, "Description": f"config_hash={config_hash} seed={seed}"})
    plt.close(fig)


def ami_trace(path, epochs, values, *, selected=None, constant: float = 0.0, config_hash="", seed=0) -> None:
    fig, (top, bottom) = plt.subplots(2, 1, figsize=(6, 5), sharex=True)
    top.plot(epochs, values, color="k", lw=1)
    top.set_ylabel("AMI [nat]")
    bottom.plot(epochs, -np.asarray(values) + constant, color="0.4", lw=1)
    bottom.set_ylabel("-AMI + const")
    bottom.set_xlabel("epoch")
    for epoch, label in (selected or {}).items():
        top.axvline(epoch, color="tab:red", lw=0.8, ls="--")
        top.annotate(label, (epoch, top.get_ylim()[1]), fontsize=7, ha="center", va="bottom")
    _save(fig, path, config_hash, seed)


def filter_norm_trace(path, epochs, norms, *, config_hash="", seed=0) -> None:
    norms = np.asarray(norms)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for i in range(norms.shape[1]):
        ax.plot(epochs, norms[:, i], lw=1, label=f"unit {i}" if norms.shape[1] <= 8 else None)
    ax.set_xlabel("epoch")
    ax.set_ylabel("filter norm")
    if norms.shape[1] <= 8:
        ax.legend(fontsize=7)
    _save(fig, path, config_hash, seed)


def toy_snapshot(path, data, components, params: GrbmParams, epoch: int, *, config_hash="", seed=0) -> None:
    """Data coloured by component, filters as arrows from the visible bias, and the
    lines where each hidden unit's activation probability is 0.5."""
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    for c in range(4):
        pts = data[components == c]
        ax.scatter(pts[:, 0], pts[:, 1], s=3, color=COMPONENT_COLOURS[c], alpha=0.5, linewidths=0)
    lo = data.min(axis=0) - 1.0
    hi = data.max(axis=0) + 1.0
    xs = np.linspace(lo[0], hi[0], 2)
    scaled = params.W / params.var  # unit i is half-on where a_i + scaled_i . v = 0
    for i in range(params.M):
        ax.annotate("", xy=params.b + params.W[i], xytext=params.b,
                    arrowprops=dict(arrowstyle="->", color="k", lw=1.2))
        wx, wy = scaled[i]
        if abs(wy) > 1e-12:
            ax.plot(xs, -(params.a[i] + wx * xs) / wy, color="k", lw=0.6, ls=":")
        elif abs(wx) > 1e-12:
            ax.axvline(-params.a[i] / wx, color="k", lw=0.6, ls=":")
    ax.set_xlim(lo[0], hi[0])
    ax.set_ylim(lo[1], hi[1])
    ax.set_aspect("equal")
    ax.set_title(f"epoch {epoch}")
    _save(fig, path, config_hash, seed)
