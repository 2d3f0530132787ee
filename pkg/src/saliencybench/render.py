"""Heatmap PNG rendering.

Output-only convenience: all quantitative comparisons run on SBT1 tensors,
the PNGs are for eyeballs.  The color ramp is fixed and documented so the
images are comparable across runs and machines.
"""

from __future__ import annotations

import numpy as np
from PIL import Image as PILImage

from .core import Image, SaliencyMap, normalize_array

__all__ = ["render_heatmap", "write_png"]

# Piecewise-linear ramp anchors (t, r, g, b): dark violet to pale yellow.
_RAMP_ANCHORS = (
    (0.00, 0, 0, 4),
    (0.25, 81, 18, 124),
    (0.50, 183, 55, 121),
    (0.75, 252, 136, 59),
    (1.00, 252, 253, 191),
)


def _apply_ramp(t: np.ndarray) -> np.ndarray:
    ts = np.array([a[0] for a in _RAMP_ANCHORS])
    out = np.empty(t.shape + (3,), dtype=np.float64)
    for ch in range(3):
        vals = np.array([a[1 + ch] for a in _RAMP_ANCHORS], dtype=np.float64)
        out[..., ch] = np.interp(t, ts, vals)
    return out


def render_heatmap(
    saliency: SaliencyMap,
    base: Image = None,
    alpha: float = 0.6,
) -> np.ndarray:
    """(H, W, 3) uint8 heatmap; optionally alpha-blended over the input frame.

    The map is normalized to [0, 1] first, then run through the fixed ramp.
    When ``base`` is given, the frame's channel-mean is used as a grayscale
    backdrop and the heatmap is blended on top with weight ``alpha``.
    """
    t = normalize_array(saliency.values).astype(np.float64)
    rgb = _apply_ramp(t)
    if base is not None:
        if (base.height, base.width) != (saliency.height, saliency.width):
            raise ValueError("base image dims do not match the saliency map")
        grey = base.data.mean(axis=2, dtype=np.float64) * 255.0
        rgb = alpha * rgb + (1.0 - alpha) * grey[:, :, None]
    return np.clip(np.rint(rgb), 0, 255).astype(np.uint8)


def write_png(rgb: np.ndarray, path) -> None:
    PILImage.fromarray(rgb, mode="RGB").save(path, format="PNG")
