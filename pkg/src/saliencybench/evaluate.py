"""Computational evaluation of saliency maps.

Three metric families: the insertion metric with its AUC summary, the
cascading parameter-randomization sanity check scored by three similarity
measures (Spearman, SSIM, HOG-Pearson), and wall-clock runtime statistics.

Similarity measures return NaN where they are undefined (constant input,
zero-variance features); aggregation excludes those values and reports how
many were excluded rather than silently coercing them to a number.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import List, Optional, Sequence, Union

import numpy as np

from .core import Image, RngStream, SaliencyMap, normalize_array
from .explain import (
    ExplainerConfig,
    LimeConfig,
    LimeExplanation,
    _batch_probs,
    explain_image,
    lime_binarize,
)
from .models import LayeredModel, randomize_layers

__all__ = [
    "InsertionCurve",
    "SanityRow",
    "SanityReport",
    "TimingStats",
    "insertion_curve",
    "auc",
    "spearman",
    "ssim",
    "hog_pearson",
    "sanity_check",
    "time_explainer",
]


# ---------------------------------------------------------------------------
# Insertion metric
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InsertionCurve:
    """Confidence in the original prediction as pixels are restored.

    ``fractions`` runs from 0 (fully occluded) to 1 (original image);
    ``confidences`` holds the model's probability for the class predicted on
    the unperturbed image.
    """

    fractions: np.ndarray
    confidences: np.ndarray

    def __post_init__(self):
        fr = np.asarray(self.fractions, dtype=np.float64)
        cf = np.asarray(self.confidences, dtype=np.float64)
        if fr.shape != cf.shape or fr.ndim != 1 or fr.size < 2:
            raise ValueError("fractions and confidences must be equal-length vectors (>= 2)")
        if fr[0] != 0.0 or fr[-1] != 1.0 or np.any(np.diff(fr) <= 0):
            raise ValueError("fractions must increase strictly from 0 to 1")
        fr.flags.writeable = False
        cf.flags.writeable = False
        object.__setattr__(self, "fractions", fr)
        object.__setattr__(self, "confidences", cf)


def _pixel_order(saliency: SaliencyMap) -> np.ndarray:
    # descending saliency, ties resolved in row-major order
    flat = saliency.values.reshape(-1)
    return np.argsort(-flat.astype(np.float64), kind="stable")


def _lime_pixel_order(expl: LimeExplanation, rng: RngStream) -> np.ndarray:
    """Superpixels sorted by weight (ties: lower label); pixels inside each
    superpixel are visited in an rng-shuffled order."""
    k = expl.weights.size
    seg_order = np.lexsort((np.arange(k), -expl.weights.astype(np.float64)))
    labels = expl.segmentation.labels.reshape(-1)
    pieces = []
    for rank, label in enumerate(seg_order):
        members = np.flatnonzero(labels == label)
        perm = _shuffle(members.size, rng.child(rank))
        pieces.append(members[perm])
    return np.concatenate(pieces)


def _shuffle(n: int, rng: RngStream) -> np.ndarray:
    # Fisher-Yates driven by the stream's integer draws
    perm = np.arange(n)
    for i in range(n - 1, 0, -1):
        j = int(rng.integers(1, i + 1)[0])
        perm[i], perm[j] = perm[j], perm[i]
    return perm


def insertion_curve(
    model,
    image: Image,
    saliency: Union[SaliencyMap, LimeExplanation],
    step_pixels: int = 84,
    rng: Optional[RngStream] = None,
) -> InsertionCurve:
    """Restore pixels in decreasing relevance order, recording confidence.

    Starts from the all-zero image and restores ``step_pixels`` spatial
    positions (all channels) per step; the final point is the unmodified
    image.  The recorded confidence is the probability of the class the model
    predicts for the original image.  Passing a LimeExplanation orders whole
    superpixels by weight and shuffles the pixel order inside each one using
    ``rng``.
    """
    if step_pixels < 1:
        raise ValueError(f"step_pixels must be >= 1, got {step_pixels}")
    if isinstance(saliency, LimeExplanation):
        if rng is None:
            raise ValueError("an RngStream is required to order pixels inside superpixels")
        if (saliency.saliency.height, saliency.saliency.width) != (image.height, image.width):
            raise ValueError("saliency dims do not match the image")
        order = _lime_pixel_order(saliency, rng)
    else:
        if (saliency.height, saliency.width) != (image.height, image.width):
            raise ValueError("saliency dims do not match the image")
        order = _pixel_order(saliency)

    target = model(image).predicted_index
    h, w, c = image.data.shape
    n_pixels = h * w
    n_steps = -(-n_pixels // step_pixels)

    flat_src = image.data.reshape(n_pixels, c)
    current = np.zeros((n_pixels, c), dtype=np.float32)
    states = np.empty((n_steps + 1, n_pixels, c), dtype=np.float32)
    states[0] = current
    fractions = np.empty(n_steps + 1, dtype=np.float64)
    fractions[0] = 0.0
    for step in range(1, n_steps + 1):
        chosen = order[(step - 1) * step_pixels : step * step_pixels]
        current[chosen] = flat_src[chosen]
        states[step] = current
        fractions[step] = min(step * step_pixels, n_pixels) / n_pixels

    probs = _batch_probs(model, states.reshape(n_steps + 1, h, w, c))
    return InsertionCurve(fractions, probs[:, target])


def auc(curve: InsertionCurve) -> float:
    """Trapezoidal area under the confidence curve over fraction in [0, 1].

    Deliberately not clipped at the full-image confidence: partially restored
    inputs can score above it.
    """
    return float(np.trapezoid(curve.confidences, curve.fractions))


# ---------------------------------------------------------------------------
# Similarity measures
# ---------------------------------------------------------------------------


def _midranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="stable")
    sorted_x = x[order]
    ranks = np.empty(x.size, dtype=np.float64)
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    x = x - x.mean()
    y = y - y.mean()
    nx = np.sqrt((x * x).sum())
    ny = np.sqrt((y * y).sum())
    if nx == 0.0 or ny == 0.0:
        return math.nan
    return float((x * y).sum() / (nx * ny))


def _check_same_dims(a: SaliencyMap, b: SaliencyMap):
    if (a.height, a.width) != (b.height, b.width):
        raise ValueError(f"maps differ in shape: {a.values.shape} vs {b.values.shape}")


def spearman(a: SaliencyMap, b: SaliencyMap) -> float:
    """Pearson correlation of mid-ranks (ties get their average rank).

    NaN when either map is constant (ranks carry no information); callers
    exclude NaNs from averages and count the exclusions.
    """
    _check_same_dims(a, b)
    ra = _midranks(a.values.reshape(-1).astype(np.float64))
    rb = _midranks(b.values.reshape(-1).astype(np.float64))
    return _pearson(ra, rb)


_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03


def _ssim_kernel() -> np.ndarray:
    half = (_SSIM_WINDOW - 1) / 2.0
    coords = np.arange(_SSIM_WINDOW) - half
    g = np.exp(-(coords**2) / (2.0 * _SSIM_SIGMA**2))
    k2d = np.outer(g, g)
    return k2d / k2d.sum()


def ssim(a: SaliencyMap, b: SaliencyMap) -> float:
    """Mean structural similarity over all fully-inside 11x11 windows.

    Both maps are first affinely normalized to [0, 1] (a constant map becomes
    all zeros), then scored with the Gaussian-weighted SSIM (sigma 1.5,
    K1=0.01, K2=0.03, dynamic range 1).
    """
    _check_same_dims(a, b)
    if a.height < _SSIM_WINDOW or a.width < _SSIM_WINDOW:
        raise ValueError(f"maps must be at least {_SSIM_WINDOW}x{_SSIM_WINDOW}")
    x = normalize_array(a.values).astype(np.float64)
    y = normalize_array(b.values).astype(np.float64)
    kernel = _ssim_kernel()

    def wmean(img: np.ndarray) -> np.ndarray:
        windows = np.lib.stride_tricks.sliding_window_view(img, (_SSIM_WINDOW, _SSIM_WINDOW))
        return np.tensordot(windows, kernel, axes=([2, 3], [0, 1]))

    mu_x = wmean(x)
    mu_y = wmean(y)
    var_x = wmean(x * x) - mu_x * mu_x
    var_y = wmean(y * y) - mu_y * mu_y
    cov = wmean(x * y) - mu_x * mu_y
    c1 = _SSIM_K1**2
    c2 = _SSIM_K2**2
    score = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / (
        (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    )
    return float(score.mean())


_HOG_BINS = 9
_HOG_CELL = 12


def _hog_features(values: np.ndarray) -> np.ndarray:
    v = values.astype(np.float64)
    gy, gx = np.gradient(v)
    magnitude = np.hypot(gy, gx)
    angle = np.degrees(np.arctan2(gy, gx)) % 180.0
    bins = np.minimum((angle / (180.0 / _HOG_BINS)).astype(np.int64), _HOG_BINS - 1)

    h, w = v.shape
    feats = []
    for y0 in range(0, h, _HOG_CELL):
        for x0 in range(0, w, _HOG_CELL):
            cell_bins = bins[y0 : y0 + _HOG_CELL, x0 : x0 + _HOG_CELL].reshape(-1)
            cell_mag = magnitude[y0 : y0 + _HOG_CELL, x0 : x0 + _HOG_CELL].reshape(-1)
            feats.append(np.bincount(cell_bins, weights=cell_mag, minlength=_HOG_BINS))
    return np.concatenate(feats)


def hog_pearson(a: SaliencyMap, b: SaliencyMap) -> float:
    """Pearson correlation of histogram-of-gradients feature vectors.

    Gradients are central differences, orientations are folded to [0, 180)
    and accumulated by magnitude into 9 hard bins over non-overlapping 12x12
    cells (border remainder cells included).  NaN when either feature vector
    has zero variance.
    """
    _check_same_dims(a, b)
    return _pearson(_hog_features(a.values), _hog_features(b.values))


# ---------------------------------------------------------------------------
# Sanity check (cascading parameter randomization)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SanityRow:
    """Average similarity between baseline maps and maps at one cascade depth."""

    depth: int
    spearman: float
    ssim: float
    hog_pearson: float
    n_images: int
    spearman_excluded: int
    ssim_excluded: int
    hog_excluded: int


@dataclass(frozen=True)
class SanityReport:
    explainer: str
    rows: List[SanityRow]


def _sanity_map(model, image, config, rng, absolute: bool) -> SaliencyMap:
    result = explain_image(model, image, config, rng)
    if isinstance(config, LimeConfig) and result.lime is not None:
        top_k = min(config.top_k, result.lime.weights.size)
        out = lime_binarize(result.lime, top_k)
    else:
        out = result.saliency
    if absolute:
        out = SaliencyMap(np.abs(out.values))
    return out


def _nan_mean(values: Sequence[float]) -> tuple:
    arr = np.asarray(values, dtype=np.float64)
    good = ~np.isnan(arr)
    excluded = int((~good).sum())
    mean = float(arr[good].mean()) if good.any() else math.nan
    return mean, excluded


def sanity_check(
    model: LayeredModel,
    images: Sequence[Image],
    config: ExplainerConfig,
    rng: RngStream,
    include_identity_row: bool = False,
    absolute: bool = False,
) -> SanityReport:
    """Cascadingly randomize layers from the output inward and compare maps.

    For each depth k the same randomization draw is reused across all images.
    Explainer randomness is keyed per (depth, image) as
    ``rng.child(0).child(depth).child(image)``, with the baseline sharing the
    depth-0 streams: the k = 0 row therefore reproduces the baseline exactly,
    while deeper rows draw fresh perturbations so that similarity reflects
    the model change, not perturbation noise shared between runs.  LIME maps
    are binarized (top_k superpixels) before comparison.  Maps are compared
    raw by default; ``absolute=True`` compares |map| instead.  Undefined
    similarities are excluded from the averages and counted.
    """
    if not images:
        raise ValueError("at least one image is required")
    explain_rng = rng.child(0)
    randomize_rng = rng.child(1)

    def maps_for(m, depth: int) -> List[SaliencyMap]:
        depth_rng = explain_rng.child(depth)
        return [
            _sanity_map(m, img, config, depth_rng.child(i), absolute)
            for i, img in enumerate(images)
        ]

    baseline = maps_for(model, 0)
    depths = range(0, len(model.parameterized_layers()) + 1) if include_identity_row else range(
        1, len(model.parameterized_layers()) + 1
    )
    rows = []
    for k in depths:
        randomized = randomize_layers(model, k, randomize_rng)
        current = maps_for(randomized, k)
        sp, sp_ex = _nan_mean([spearman(b, m) for b, m in zip(baseline, current)])
        ss, ss_ex = _nan_mean([ssim(b, m) for b, m in zip(baseline, current)])
        hp, hp_ex = _nan_mean([hog_pearson(b, m) for b, m in zip(baseline, current)])
        rows.append(SanityRow(k, sp, ss, hp, len(images), sp_ex, ss_ex, hp_ex))
    return SanityReport(getattr(config, "name", config.variant), rows)


# ---------------------------------------------------------------------------
# Runtime analysis
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TimingStats:
    mean: float
    std: float
    min: float
    max: float
    seconds: List[float]


def time_explainer(
    model,
    images: Sequence[Image],
    config: ExplainerConfig,
    warmup: int = 1,
    rng: Optional[RngStream] = None,
) -> TimingStats:
    """Wall-clock seconds per saliency map, one timed run per image.

    ``warmup`` runs on the first image are executed and discarded first.
    Must be run single-threaded and without concurrent load for the numbers
    to mean anything.
    """
    if not images:
        raise ValueError("at least one image is required")
    rng = rng if rng is not None else RngStream(0)
    for i in range(warmup):
        explain_image(model, images[0], config, rng.child(10_000 + i))
    seconds = []
    for i, image in enumerate(images):
        start = time.perf_counter()
        explain_image(model, image, config, rng.child(i))
        seconds.append(time.perf_counter() - start)
    arr = np.asarray(seconds)
    return TimingStats(float(arr.mean()), float(arr.std()), float(arr.min()), float(arr.max()), seconds)
