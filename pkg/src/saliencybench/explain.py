"""The four perturbation-based saliency map generators.

All explainers talk to the model exclusively through the black-box contract:
``model(image) -> ConfidenceOutput`` plus the optional ``predict_batch``
acceleration.  Per-model-query bookkeeping is deterministic, so a fixed seed
reproduces every map bit for bit.

Model query counts are part of the contract and are documented per function:
one query per perturbation, plus a single baseline query where the method
needs the unperturbed output (occlusion/RISE only when the target class is
resolved from the image, noise sensitivity always).  LIME's first sample is
the unperturbed image itself, so it needs no extra baseline query.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .core import Image, RngStream, SaliencyMap, bilinear_array
from .perturb import (
    QuickshiftParams,
    Segmentation,
    disc_mask,
    gaussian_blur_array,
    generate_rise_masks,
    occlude_patch_array,
    quickshift_segment,
)

__all__ = [
    "OcclusionConfig",
    "NoiseConfig",
    "RiseConfig",
    "LimeConfig",
    "DummyConfig",
    "ExplainerConfig",
    "LimeExplanation",
    "ExplainResult",
    "occlusion_sensitivity",
    "noise_sensitivity",
    "rise",
    "lime",
    "lime_binarize",
    "input_intensity_saliency",
    "explain_image",
    "write_lime_explanation",
    "read_lime_explanation",
]


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OcclusionConfig:
    """Occlusion sensitivity: slide a patch of a fixed color over the image.

    Defaults follow the primary 84x84 setting: 5x5 patch, black fill (the
    grey variant uses color=0.5), stride equal to the patch so tiles do not
    overlap.
    """

    patch: int = 5
    color: float = 0.0
    stride: Optional[int] = None  # None -> patch size
    target_class: Optional[int] = None
    name: str = "occlusion"
    variant: str = field(default="occlusion", init=False)


@dataclass(frozen=True)
class NoiseConfig:
    """Noise sensitivity: perturb a disc per probe point, compare logits.

    mode="blur" applies a Gaussian blur (sigma defaults to the radius) inside
    the disc; mode="black" covers the disc with black instead.
    """

    radius: int = 5
    probe_stride: int = 5
    mode: str = "blur"
    sigma: Optional[float] = None  # None -> radius
    name: str = "noise"
    variant: str = field(default="noise", init=False)


@dataclass(frozen=True)
class RiseConfig:
    n: int = 2000
    s: int = 8
    p: float = 0.9
    shift: bool = True
    target_class: Optional[int] = None
    seed: Optional[int] = None
    name: str = "rise"
    variant: str = field(default="rise", init=False)


@dataclass(frozen=True)
class LimeConfig:
    kernel_size: float = 4.0
    max_dist: float = 200.0
    ratio: float = 0.2
    n_samples: int = 1000
    kernel_width: float = 0.25
    ridge_lambda: float = 1.0
    top_k: int = 5
    target_class: Optional[int] = None
    seed: Optional[int] = None
    name: str = "lime"
    variant: str = field(default="lime", init=False)


@dataclass(frozen=True)
class DummyConfig:
    """Model-independent explainer (returns the input's own intensity).

    Exists to demonstrate what a failed parameter-randomization sanity check
    looks like: its maps never change, so every similarity score is 1.
    """

    name: str = "dummy"
    variant: str = field(default="dummy", init=False)


ExplainerConfig = Union[OcclusionConfig, NoiseConfig, RiseConfig, LimeConfig, DummyConfig]


@dataclass(frozen=True)
class LimeExplanation:
    """Per-superpixel surrogate weights plus the painted saliency map."""

    segmentation: Segmentation
    weights: np.ndarray
    intercept: float
    saliency: SaliencyMap


@dataclass(frozen=True)
class ExplainResult:
    saliency: SaliencyMap
    lime: Optional[LimeExplanation] = None


# ---------------------------------------------------------------------------
# Model access
# ---------------------------------------------------------------------------


def _batch_probs(model, batch: np.ndarray) -> np.ndarray:
    logits, probs = _batch_outputs(model, batch)
    return probs


def _batch_outputs(model, batch: np.ndarray):
    if hasattr(model, "predict_batch"):
        return model.predict_batch(batch)
    outs = [model(Image(arr)) for arr in batch]
    logits = np.stack([o.logits for o in outs])
    probs = np.stack([o.probabilities for o in outs])
    return logits, probs


def _resolve_target(model, image: Image, target: Optional[int]) -> int:
    if target is None:
        return model(image).predicted_index
    if not 0 <= target < model.n_outputs:
        raise ValueError(f"target class {target} out of range [0, {model.n_outputs})")
    return int(target)


# ---------------------------------------------------------------------------
# Occlusion sensitivity
# ---------------------------------------------------------------------------


def occlusion_sensitivity(
    model,
    image: Image,
    patch: int = 5,
    color: float = 0.0,
    stride: Optional[int] = None,
    target: Optional[int] = None,
) -> SaliencyMap:
    """Slide a ``patch`` x ``patch`` block of ``color`` over the image.

    Anchors sit at multiples of ``stride`` on both axes (the final patch is
    clipped at the border).  Every pixel under a patch receives that patch's
    score 1 - f(I'); where patches overlap, scores are averaged.  The model
    is queried once per anchor, plus once to resolve the target class when
    ``target`` is None.
    """
    h, w = image.height, image.width
    if not 1 <= patch <= min(h, w):
        raise ValueError(f"patch must lie in [1, {min(h, w)}], got {patch}")
    stride = patch if stride is None else stride
    if not 1 <= stride <= patch:
        raise ValueError(f"stride must lie in [1, patch], got {stride}")
    if not 0.0 <= color <= 1.0:
        raise ValueError(f"color must lie in [0, 1], got {color}")
    target = _resolve_target(model, image, target)

    anchors = [(y, x) for y in range(0, h, stride) for x in range(0, w, stride)]
    batch = np.stack(
        [occlude_patch_array(image.data, y, x, patch, patch, color) for y, x in anchors]
    )
    scores = 1.0 - _batch_probs(model, batch)[:, target]

    total = np.zeros((h, w), dtype=np.float64)
    count = np.zeros((h, w), dtype=np.int64)
    for (y, x), score in zip(anchors, scores):
        total[y : y + patch, x : x + patch] += score
        count[y : y + patch, x : x + patch] += 1
    return SaliencyMap((total / count).astype(np.float32))


# ---------------------------------------------------------------------------
# Noise sensitivity
# ---------------------------------------------------------------------------


def noise_sensitivity(
    model,
    image: Image,
    r: int = 5,
    probe_stride: int = 5,
    mode: str = "blur",
    sigma: Optional[float] = None,
    target_dims: Optional[tuple] = None,
) -> SaliencyMap:
    """Perturb a disc around every probe point and score the logit shift.

    Per probe pixel (both axes on the stride grid, starting at 0) the score
    is half the squared Euclidean distance between the clean and perturbed
    logit vectors.  The probe grid is then bilinearly upsampled to the image
    dims (or ``target_dims``).  Queries: one per probe, plus one for the
    baseline logits.
    """
    if r < 1:
        raise ValueError(f"radius must be >= 1, got {r}")
    if probe_stride < 1:
        raise ValueError(f"probe_stride must be >= 1, got {probe_stride}")
    if mode not in ("blur", "black"):
        raise ValueError(f"mode must be 'blur' or 'black', got {mode!r}")
    h, w = image.height, image.width
    base = model(image)
    if getattr(base, "logits", None) is None:
        raise ValueError("noise sensitivity needs a model that exposes logits")
    base_logits = np.asarray(base.logits, dtype=np.float64)

    if mode == "blur":
        sigma = float(r) if sigma is None else sigma
        blurred = np.clip(gaussian_blur_array(image.data, sigma), 0.0, 1.0).astype(np.float32)

    ys = range(0, h, probe_stride)
    xs = range(0, w, probe_stride)
    perturbed = []
    for y in ys:
        for x in xs:
            inside = disc_mask(h, w, y, x, r)
            arr = image.data.copy()
            arr[inside] = blurred[inside] if mode == "blur" else 0.0
            perturbed.append(arr)
    logits, _ = _batch_outputs(model, np.stack(perturbed))
    diffs = logits - base_logits[None, :]
    coarse = 0.5 * (diffs * diffs).sum(axis=1)
    coarse = coarse.reshape(len(ys), len(xs))

    th, tw = target_dims if target_dims is not None else (h, w)
    return SaliencyMap(bilinear_array(coarse, th, tw).astype(np.float32))


# ---------------------------------------------------------------------------
# RISE
# ---------------------------------------------------------------------------


def rise(
    model,
    image: Image,
    n: int = 2000,
    s: int = 8,
    p: float = 0.9,
    rng: RngStream = None,
    target: Optional[int] = None,
    shift: bool = True,
) -> SaliencyMap:
    """Monte Carlo saliency from random soft masks.

    S = (1 / (p * n)) * sum_i f(I * M_i) * M_i, with f the probability of the
    target class.  Queries: n masked images, plus one for target resolution
    when ``target`` is None.  Masks come from ``generate_rise_masks``, so a
    fixed stream reproduces the map exactly.
    """
    if rng is None:
        raise ValueError("rise requires an RngStream")
    target = _resolve_target(model, image, target)
    h, w = image.height, image.width
    masks = generate_rise_masks(n, s, p, h, w, rng, shift=shift)
    mask_stack = np.stack([m.values for m in masks])

    accum = np.zeros((h, w), dtype=np.float64)
    chunk = 256
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        sub = mask_stack[start:stop]
        batch = image.data[None, :, :, :] * sub[:, :, :, None]
        f = _batch_probs(model, batch)[:, target]
        accum += np.tensordot(f, sub.astype(np.float64), axes=([0], [0]))
    return SaliencyMap((accum / (p * n)).astype(np.float32))


# ---------------------------------------------------------------------------
# LIME
# ---------------------------------------------------------------------------


def lime(
    model,
    image: Image,
    seg_params: Union[QuickshiftParams, Segmentation, None] = None,
    n_samples: int = 1000,
    kernel_width: float = 0.25,
    ridge_lambda: float = 1.0,
    rng: RngStream = None,
    target: Optional[int] = None,
) -> LimeExplanation:
    """Local surrogate explanation over on/off superpixel indicators.

    The image is segmented (quickshift, unless an explicit Segmentation is
    passed), n_samples on/off vectors are drawn (sample 0 is always all-ones,
    the rest Bernoulli(0.5) per coordinate), the corresponding superpixels
    are deleted, and a weighted ridge regression of the model scores on the
    indicators is solved in closed form.  Sample weights are
    exp(-d^2 / kernel_width^2) with d the cosine distance to the all-ones
    vector.  Draw order: segmentation jitter from rng.child(0), sample
    indicators from rng.child(1) (row-major per sample).  Queries: exactly
    n_samples; the target class, when unset, is read from sample 0.
    """
    if rng is None:
        raise ValueError("lime requires an RngStream")
    if seg_params is None:
        seg_params = QuickshiftParams()
    if isinstance(seg_params, Segmentation):
        seg = seg_params
    else:
        seg = quickshift_segment(
            image,
            kernel_size=seg_params.kernel_size,
            max_dist=seg_params.max_dist,
            ratio=seg_params.ratio,
            rng=rng.child(0),
        )
    if (seg.height, seg.width) != (image.height, image.width):
        raise ValueError("segmentation dims do not match the image")
    k = seg.n_segments
    if n_samples < k + 1:
        raise ValueError(f"n_samples must be >= n_segments + 1 = {k + 1}, got {n_samples}")

    sample_rng = rng.child(1)
    z = np.ones((n_samples, k), dtype=np.float64)
    if n_samples > 1:
        z[1:] = (sample_rng.uniforms((n_samples - 1) * k).reshape(n_samples - 1, k) < 0.5).astype(
            np.float64
        )

    labels = seg.labels
    batch = np.empty((n_samples,) + image.data.shape, dtype=np.float32)
    for i in range(n_samples):
        keep = z[i][labels]  # 1 keeps the superpixel, 0 deletes it
        batch[i] = image.data * keep[:, :, None].astype(np.float32)
    logits, probs = _batch_outputs(model, batch)
    if target is None:
        target = int(np.argmax(probs[0]))
    elif not 0 <= target < probs.shape[1]:
        raise ValueError(f"target class {target} out of range [0, {probs.shape[1]})")
    f = probs[:, target]

    on_counts = z.sum(axis=1)
    cos_sim = np.where(on_counts > 0, np.sqrt(on_counts / k), 0.0)
    distances = 1.0 - cos_sim
    sample_weights = np.exp(-(distances**2) / (kernel_width**2))

    design = np.concatenate([np.ones((n_samples, 1)), z], axis=1)
    wx = design * sample_weights[:, None]
    gram = design.T @ wx
    gram[np.arange(1, k + 1), np.arange(1, k + 1)] += ridge_lambda  # intercept unpenalized
    rhs = wx.T @ f
    try:
        theta = np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError as exc:
        raise ValueError(
            "degenerate weighted design matrix; draw more samples (n_samples)"
        ) from exc

    weights = theta[1:].astype(np.float32)
    saliency = SaliencyMap(weights[labels])
    return LimeExplanation(seg, weights, float(theta[0]), saliency)


def lime_binarize(expl: LimeExplanation, top_k: int) -> SaliencyMap:
    """1 for pixels of the top_k superpixels by weight (ties: lower label), else 0."""
    k = expl.weights.size
    if not 1 <= top_k <= k:
        raise ValueError(f"top_k must lie in [1, {k}], got {top_k}")
    order = np.lexsort((np.arange(k), -expl.weights.astype(np.float64)))
    chosen = order[:top_k]
    binary = np.isin(expl.segmentation.labels, chosen).astype(np.float32)
    return SaliencyMap(binary)


# ---------------------------------------------------------------------------
# Dummy explainer and dispatch
# ---------------------------------------------------------------------------


def input_intensity_saliency(image: Image) -> SaliencyMap:
    """Channel-mean intensity of the input; ignores the model entirely."""
    return SaliencyMap(image.data.mean(axis=2).astype(np.float32))


def write_lime_explanation(expl: LimeExplanation, path, config_echo: Optional[dict] = None):
    """Structured text record next to a segmentation tensor.

    Writes the segmentation as ``<stem>_segmentation.sbt1`` beside ``path``
    and a JSON record holding that file name, the per-superpixel weights,
    the intercept and an optional config echo.  Weights are float32, which
    JSON doubles represent exactly, so the round trip is lossless.
    """
    import json
    from pathlib import Path

    from .perturb import write_segmentation

    path = Path(path)
    seg_name = path.stem + "_segmentation.sbt1"
    write_segmentation(expl.segmentation, path.parent / seg_name)
    record = {
        "segmentation": seg_name,
        "weights": [float(w) for w in expl.weights],
        "intercept": expl.intercept,
        "config": config_echo,
    }
    with open(path, "w") as fh:
        json.dump(record, fh, indent=2)
        fh.write("\n")


def read_lime_explanation(path) -> LimeExplanation:
    import json
    from pathlib import Path

    from .perturb import read_segmentation

    path = Path(path)
    with open(path) as fh:
        record = json.load(fh)
    seg = read_segmentation(path.parent / record["segmentation"])
    weights = np.asarray(record["weights"], dtype=np.float32)
    if weights.size != seg.n_segments:
        raise ValueError(
            f"record lists {weights.size} weights but the segmentation has {seg.n_segments} segments"
        )
    saliency = SaliencyMap(weights[seg.labels])
    return LimeExplanation(seg, weights, float(record["intercept"]), saliency)


def explain_image(model, image: Image, config: ExplainerConfig, rng: RngStream) -> ExplainResult:
    """Run the explainer described by ``config``; stochastic ones draw from ``rng``."""
    if isinstance(config, OcclusionConfig):
        sal = occlusion_sensitivity(
            model, image, config.patch, config.color, config.stride, config.target_class
        )
        return ExplainResult(sal)
    if isinstance(config, NoiseConfig):
        sal = noise_sensitivity(
            model, image, config.radius, config.probe_stride, config.mode, config.sigma
        )
        return ExplainResult(sal)
    if isinstance(config, RiseConfig):
        sal = rise(
            model, image, config.n, config.s, config.p, rng, config.target_class, config.shift
        )
        return ExplainResult(sal)
    if isinstance(config, LimeConfig):
        expl = lime(
            model,
            image,
            QuickshiftParams(config.kernel_size, config.max_dist, config.ratio),
            config.n_samples,
            config.kernel_width,
            config.ridge_lambda,
            rng,
            config.target_class,
        )
        return ExplainResult(expl.saliency, expl)
    if isinstance(config, DummyConfig):
        return ExplainResult(input_intensity_saliency(image))
    raise ValueError(f"unknown explainer config {config!r}")
