#
# Copyright (c) 2024 rcrplan developers.
#
# This file is part of `python-rcrplan`
#

"""rcrplan.viz

static svg plots of learned critical regions in the (dx, dy) plane
"""
from __future__ import annotations

import io
import logging
import math
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.patches import Ellipse  # noqa: E402

from rcrplan.regions import PredictorMap  # noqa: E402
from rcrplan.regions import rcr_sample  # noqa: E402

__all__ = ["render_regions", "write_regions_svg"]

_log = logging.getLogger(__name__)

_SAMPLES = 200
_SIGMA = 2.0


def _ellipse(mean: np.ndarray, cov: np.ndarray, **kwargs) -> Ellipse:
    vals, vecs = np.linalg.eigh(cov[:2, :2])
    vals = np.clip(vals, 0.0, None)
    angle = math.degrees(math.atan2(vecs[1, 1], vecs[0, 1]))
    w, h = 2.0 * _SIGMA * np.sqrt(vals[::-1])
    return Ellipse((mean[0], mean[1]), w, h, angle=angle, fill=False, **kwargs)


def render_regions(predictors: PredictorMap, seed: int = 0) -> str:
    """svg text with one panel per type pair; an empty bundle gives an empty figure"""
    pairs = [p for p, preds in predictors.items() if preds]
    n = max(1, len(pairs))
    fig, axes = plt.subplots(1, n, figsize=(4 * n, 4), squeeze=False)
    rng = np.random.default_rng(seed)
    if not pairs:
        axes[0, 0].axis("off")
        axes[0, 0].set_title("no predictors")
    for ax, pair in zip(axes[0], pairs):
        for p in sorted(predictors[pair], key=lambda p: p.component_id):
            pts = rcr_sample(p, rng, _SAMPLES)
            label = f"{p.component_id}"
            dots = ax.scatter(pts[:, 0], pts[:, 1], s=3, alpha=0.4, label=label)
            color = dots.get_facecolor()[0]
            for mean, cov in zip(p.mixture.means, p.mixture.covs):
                ax.add_patch(_ellipse(mean, cov, edgecolor=color, linewidth=1.0))
        ax.set_title(f"{pair[0]} -> {pair[1]}")
        ax.set_xlabel("dx [m]")
        ax.set_ylabel("dy [m]")
        ax.set_aspect("equal", adjustable="datalim")
        ax.legend(loc="upper right", fontsize="small", title="region")
    fig.tight_layout()
    buf = io.StringIO()
    # no date stamp and seeded element ids so reruns are byte identical
    with matplotlib.rc_context({"svg.hashsalt": f"rcrplan-{seed}"}):
        fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    return buf.getvalue()


def write_regions_svg(
    path: str | os.PathLike, predictors: PredictorMap, seed: int = 0
) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(render_regions(predictors, seed))
    _log.info(f"wrote region plot {os.fspath(path)}")
