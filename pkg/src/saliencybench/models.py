"""Minimal layered feed-forward network engine and oracle model zoo.

Provides the black-box contract every explainer consumes: a model is any
object with ``n_outputs``, a call signature ``model(image) -> ConfidenceOutput``
and (optionally) ``predict_batch`` for vectorized evaluation.  LayeredModel
additionally exposes its parameterized layers so the cascading randomization
test can rewrite them from the output side inward.

The oracle constructors (constant, planted-region, toy DQN) are first-class
library citizens: every experiment in the CLI can run end to end against
them without external assets.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import List, Sequence, Tuple, Union

import numpy as np

from .core import FormatError, Image, RngStream

__all__ = [
    "Conv2D",
    "Dense",
    "ReLU",
    "Flatten",
    "Softmax",
    "ConfidenceOutput",
    "LayeredModel",
    "ConstantModel",
    "forward",
    "randomize_layers",
    "build_dqn_toy",
    "build_planted_model",
    "build_constant_model",
    "read_model",
    "write_model",
    "softmax",
]


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable softmax in float64."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class ConfidenceOutput:
    """Logit vector plus softmax probabilities for one input.

    ``predicted_index`` is the argmax of the probabilities with ties going
    to the lowest index.
    """

    logits: np.ndarray
    probabilities: np.ndarray
    predicted_index: int

    @staticmethod
    def from_logits(logits: np.ndarray) -> "ConfidenceOutput":
        logits = np.asarray(logits, dtype=np.float64).copy()
        probs = softmax(logits)
        logits.flags.writeable = False
        probs.flags.writeable = False
        return ConfidenceOutput(logits, probs, int(np.argmax(probs)))


def _frozen(arr: np.ndarray, dtype=np.float32) -> np.ndarray:
    out = np.ascontiguousarray(np.asarray(arr, dtype=dtype))
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class Conv2D:
    """Valid (no padding) convolution; weights (out_ch, in_ch, kh, kw)."""

    weights: np.ndarray
    biases: np.ndarray
    stride: int

    def __post_init__(self):
        w = _frozen(self.weights)
        b = _frozen(self.biases)
        if w.ndim != 4:
            raise ValueError(f"conv weights must be 4-D, got {w.shape}")
        if b.shape != (w.shape[0],):
            raise ValueError(f"conv biases shape {b.shape} != ({w.shape[0]},)")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "biases", b)

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def kernel_h(self) -> int:
        return self.weights.shape[2]

    @property
    def kernel_w(self) -> int:
        return self.weights.shape[3]


@dataclass(frozen=True)
class Dense:
    """Fully connected layer; weights (out_dim, in_dim)."""

    weights: np.ndarray
    biases: np.ndarray

    def __post_init__(self):
        w = _frozen(self.weights)
        b = _frozen(self.biases)
        if w.ndim != 2:
            raise ValueError(f"dense weights must be 2-D, got {w.shape}")
        if b.shape != (w.shape[0],):
            raise ValueError(f"dense biases shape {b.shape} != ({w.shape[0]},)")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "biases", b)

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class Softmax:
    pass


Layer = Union[Conv2D, Dense, ReLU, Flatten, Softmax]


def _propagate_shapes(layers: Sequence[Layer], input_shape: Tuple[int, int, int]) -> list:
    """Walk the layer list, checking shape compatibility; returns the shape list."""
    shapes = [tuple(input_shape)]
    shape = tuple(input_shape)
    for i, layer in enumerate(layers):
        if isinstance(layer, Conv2D):
            if len(shape) != 3:
                raise ValueError(f"layer {i}: Conv2D needs an (H, W, C) input, got {shape}")
            h, w, c = shape
            if layer.weights.shape[1] != c:
                raise ValueError(
                    f"layer {i}: Conv2D expects {layer.weights.shape[1]} input channels, got {c}"
                )
            if layer.kernel_h > h or layer.kernel_w > w:
                raise ValueError(f"layer {i}: kernel exceeds input extent {shape}")
            shape = (
                (h - layer.kernel_h) // layer.stride + 1,
                (w - layer.kernel_w) // layer.stride + 1,
                layer.out_channels,
            )
        elif isinstance(layer, Dense):
            if len(shape) != 1:
                raise ValueError(f"layer {i}: Dense needs a flat input, got {shape}")
            if layer.in_dim != shape[0]:
                raise ValueError(f"layer {i}: Dense expects {layer.in_dim} inputs, got {shape[0]}")
            shape = (layer.out_dim,)
        elif isinstance(layer, Flatten):
            shape = (int(np.prod(shape)),)
        elif isinstance(layer, ReLU):
            pass
        elif isinstance(layer, Softmax):
            if len(shape) != 1:
                raise ValueError(f"layer {i}: Softmax needs a flat input, got {shape}")
        else:
            raise ValueError(f"layer {i}: unknown layer type {type(layer)!r}")
        shapes.append(shape)
    return shapes


class LayeredModel:
    """Immutable ordered stack of layers ending in exactly one Softmax.

    Logits are the activations entering the terminal Softmax; probabilities
    are their softmax.  ``forward`` is pure and safe to call from many
    threads.
    """

    def __init__(self, layers: Sequence[Layer], input_shape: Tuple[int, int, int]):
        layers = tuple(layers)
        input_shape = tuple(int(d) for d in input_shape)
        if len(input_shape) != 3 or min(input_shape) < 1:
            raise ValueError(f"input_shape must be (H, W, C), got {input_shape}")
        n_softmax = sum(isinstance(l, Softmax) for l in layers)
        if n_softmax != 1 or not isinstance(layers[-1], Softmax):
            raise ValueError("model must contain exactly one Softmax, as the final layer")
        shapes = _propagate_shapes(layers, input_shape)
        self.layers = layers
        self.input_shape = input_shape
        self._shapes = shapes
        self._n_outputs = shapes[-1][0]

    @property
    def n_outputs(self) -> int:
        return self._n_outputs

    def parameterized_layers(self) -> List[Tuple[int, Layer]]:
        """(layer index, layer) pairs for Conv2D/Dense, ordered output to input."""
        pairs = [(i, l) for i, l in enumerate(self.layers) if isinstance(l, (Conv2D, Dense))]
        return pairs[::-1]

    def predict_batch(self, batch: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Run (B, H, W, C) inputs through the stack.

        Returns (logits, probabilities), both float64 of shape (B, n_outputs).
        Images are evaluated one at a time so each result is bit-identical to
        a standalone ``forward`` call, whatever the batch composition; this is
        what makes saliency maps reproducible bit for bit under any
        perturbation evaluation order.
        """
        batch = np.asarray(batch, dtype=np.float32)
        if batch.ndim != 4 or batch.shape[1:] != self.input_shape:
            raise ValueError(
                f"batch shape {batch.shape[1:]} does not match input shape {self.input_shape}"
            )
        logits = np.empty((batch.shape[0], self._n_outputs), dtype=np.float64)
        for i in range(batch.shape[0]):
            x = batch[i : i + 1]
            for layer in self.layers[:-1]:
                x = _apply_layer(layer, x)
            logits[i] = x[0]
        return logits, softmax(logits)

    def forward(self, image: Image) -> ConfidenceOutput:
        if image.data.shape != self.input_shape:
            raise ValueError(
                f"image shape {image.data.shape} does not match input shape {self.input_shape}"
            )
        logits, _ = self.predict_batch(image.data[None])
        return ConfidenceOutput.from_logits(logits[0])

    def __call__(self, image: Image) -> ConfidenceOutput:
        return self.forward(image)


def _apply_layer(layer: Layer, x: np.ndarray) -> np.ndarray:
    if isinstance(layer, Conv2D):
        windows = np.lib.stride_tricks.sliding_window_view(
            x, (layer.kernel_h, layer.kernel_w), axis=(1, 2)
        )[:, :: layer.stride, :: layer.stride]
        b, oh, ow = windows.shape[:3]
        cols = windows.reshape(b, oh, ow, -1)
        wm = layer.weights.reshape(layer.out_channels, -1)
        return cols @ wm.T + layer.biases
    if isinstance(layer, Dense):
        return x @ layer.weights.T + layer.biases
    if isinstance(layer, ReLU):
        return np.maximum(x, 0.0)
    if isinstance(layer, Flatten):
        return x.reshape(x.shape[0], -1)
    raise AssertionError(f"unexpected layer {layer!r}")


def forward(model: LayeredModel, image: Image) -> ConfidenceOutput:
    return model.forward(image)


# ---------------------------------------------------------------------------
# Cascading randomization
# ---------------------------------------------------------------------------


def _fan(layer: Layer) -> Tuple[int, int]:
    if isinstance(layer, Conv2D):
        o, i, kh, kw = layer.weights.shape
        return i * kh * kw, o * kh * kw
    return layer.in_dim, layer.out_dim


def _glorot_uniform(shape: Tuple[int, ...], fan_in: int, fan_out: int, rng: RngStream) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    u = rng.uniforms(int(np.prod(shape)))
    return ((u * 2.0 - 1.0) * limit).astype(np.float32).reshape(shape)


def randomize_layers(
    model: LayeredModel, k: int, rng: RngStream, redraw_biases: bool = False
) -> LayeredModel:
    """Copy of ``model`` with the k parameterized layers nearest the output re-drawn.

    Re-drawn weights are uniform in [-L, L] with L = sqrt(6/(fan_in+fan_out)).
    Biases are zeroed by default; ``redraw_biases=True`` re-draws them from
    the same uniform range instead (drawn after the layer's weights).  Each
    layer draws from ``rng.child(layer_index)`` so the same layer receives the
    same redraw at every cascade depth for a given base stream.  k = 0 returns
    an identical copy.
    """
    params = model.parameterized_layers()
    if not 0 <= k <= len(params):
        raise ValueError(f"k must be in [0, {len(params)}], got {k}")
    replace = {}
    for idx, layer in params[:k]:
        child = rng.child(idx)
        fan_in, fan_out = _fan(layer)
        w = _glorot_uniform(layer.weights.shape, fan_in, fan_out, child)
        if redraw_biases:
            b = _glorot_uniform(layer.biases.shape, fan_in, fan_out, child)
        else:
            b = np.zeros_like(layer.biases)
        if isinstance(layer, Conv2D):
            replace[idx] = Conv2D(w, b, layer.stride)
        else:
            replace[idx] = Dense(w, b)
    new_layers = [replace.get(i, l) for i, l in enumerate(model.layers)]
    return LayeredModel(new_layers, model.input_shape)


# ---------------------------------------------------------------------------
# Oracle zoo
# ---------------------------------------------------------------------------


def build_dqn_toy(n_actions: int, rng: RngStream) -> LayeredModel:
    """84x84x4 convolutional stack in the classic DQN layout, seeded weights.

    Conv 32@8x8/4, Conv 64@4x4/2, Conv 64@3x3/1, Dense 512, Dense n_actions;
    five parameterized layers in total, ReLU between each, Softmax on top.
    """
    if n_actions < 2:
        raise ValueError(f"n_actions must be >= 2, got {n_actions}")

    def conv(index, out_ch, in_ch, k, stride):
        w = _glorot_uniform(
            (out_ch, in_ch, k, k), in_ch * k * k, out_ch * k * k, rng.child(index)
        )
        return Conv2D(w, np.zeros(out_ch, dtype=np.float32), stride)

    def dense(index, out_dim, in_dim):
        w = _glorot_uniform((out_dim, in_dim), in_dim, out_dim, rng.child(index))
        return Dense(w, np.zeros(out_dim, dtype=np.float32))

    layers: List[Layer] = [
        conv(0, 32, 4, 8, 4),
        ReLU(),
        conv(2, 64, 32, 4, 2),
        ReLU(),
        conv(4, 64, 64, 3, 1),
        ReLU(),
        Flatten(),
        dense(7, 512, 7 * 7 * 64),
        ReLU(),
        dense(9, n_actions, 512),
        Softmax(),
    ]
    return LayeredModel(layers, (84, 84, 4))


def build_planted_model(
    region: Tuple[int, int, int, int],
    input_shape: Tuple[int, int, int],
    n_outputs: int,
    rng: RngStream,
    hidden_dims: Tuple[int, ...] = (24, 12),
    gain: float = 4.0,
    offset: float = 0.0,
) -> LayeredModel:
    """Dense stack whose logits depend only on pixels inside ``region``.

    ``region`` is (top, left, height, width).  Every first-layer weight that
    touches a pixel outside the region is zero, so out-of-region perturbations
    leave the output bit-identical.  Hidden unit 0 carries the region's mean
    intensity straight through the stack and the class-0 output reads only
    that unit, giving ``logit_0 = gain * (region_mean - offset)`` exactly, so
    the class-0 logit increases strictly with the region mean.  ``offset``
    places the softmax operating point: with the default 0 a bright region
    saturates the top class; ~0.5 keeps the model on the steep part of the
    logistic so perturbations move the output visibly.  The remaining units
    carry seeded non-degenerate weights over the region.
    """
    h, w, c = (int(d) for d in input_shape)
    top, left, rh, rw = (int(v) for v in region)
    if rh < 1 or rw < 1 or top < 0 or left < 0 or top + rh > h or left + rw > w:
        raise ValueError(f"region {region} out of bounds for {h}x{w} input")
    if n_outputs < 2:
        raise ValueError(f"n_outputs must be >= 2, got {n_outputs}")
    if len(hidden_dims) < 1:
        raise ValueError("at least one hidden layer is required")

    inside = np.zeros((h, w, c), dtype=bool)
    inside[top : top + rh, left : left + rw, :] = True
    flat_inside = inside.reshape(-1)
    m = int(flat_inside.sum())

    # Unit 0 of every layer carries the region mean unchanged; the other
    # units mix seeded noise with a small positive pull toward that mean, so
    # the network behaves like a trained feature stack: most features rise
    # and fall together with the decision-relevant content, which is what
    # lets cascaded randomization degrade saliency maps gradually instead of
    # scrambling them in one step.
    d0 = hidden_dims[0]
    child = rng.child(0)
    noise = ((child.uniforms(d0 * m).reshape(d0, m) * 2.0 - 1.0) * (3.0 / np.sqrt(m))).astype(
        np.float32
    )
    pull = (3.0 * (0.25 + 0.75 * child.uniforms(d0))).astype(np.float32)
    w0 = noise + pull[:, None] / m
    w0[0, :] = 1.0 / m
    full_w0 = np.zeros((d0, h * w * c), dtype=np.float32)
    full_w0[:, flat_inside] = w0
    layers: List[Layer] = [Flatten(), Dense(full_w0, np.zeros(d0, dtype=np.float32)), ReLU()]

    prev = d0
    for li, d in enumerate(hidden_dims[1:], start=1):
        child = rng.child(li)
        wl = _glorot_uniform((d, prev), prev, d, child)
        wl[:, 0] += (1.5 * (0.25 + 0.75 * child.uniforms(d))).astype(np.float32)
        wl[0, :] = 0.0
        wl[0, 0] = 1.0  # pass-through lane for the region-mean signal
        layers.extend([Dense(wl, np.zeros(d, dtype=np.float32)), ReLU()])
        prev = d

    child = rng.child(len(hidden_dims))
    wout = (
        (child.uniforms(n_outputs * prev).reshape(n_outputs, prev) * 2.0 - 1.0)
        * (0.5 / np.sqrt(prev))
    ).astype(np.float32)
    wout[0, :] = 0.0
    wout[0, 0] = gain
    bout = np.zeros(n_outputs, dtype=np.float32)
    bout[0] = -gain * offset  # logit_0 = gain * (region_mean - offset)
    layers.append(Dense(wout, bout))
    layers.append(Softmax())
    return LayeredModel(layers, (h, w, c))


class ConstantModel:
    """Black-box oracle that ignores its input entirely.

    Logits are log(probabilities), so the softmax recovers the requested
    probability vector and f(I) equals its maximum entry for every image.
    """

    def __init__(self, probabilities: Sequence[float]):
        p = np.asarray(probabilities, dtype=np.float64)
        if p.ndim != 1 or p.size < 2:
            raise ValueError("probabilities must be a vector of length >= 2")
        if np.any(p <= 0.0) or abs(p.sum() - 1.0) > 1e-6:
            raise ValueError("probabilities must be strictly positive and sum to 1")
        self._output = ConfidenceOutput.from_logits(np.log(p))

    @property
    def n_outputs(self) -> int:
        return self._output.logits.size

    def __call__(self, image: Image) -> ConfidenceOutput:
        return self._output

    def forward(self, image: Image) -> ConfidenceOutput:
        return self._output

    def predict_batch(self, batch: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        n = np.asarray(batch).shape[0]
        logits = np.tile(self._output.logits, (n, 1))
        probs = np.tile(self._output.probabilities, (n, 1))
        return logits, probs


def build_constant_model(probabilities: Sequence[float]) -> ConstantModel:
    return ConstantModel(probabilities)


# ---------------------------------------------------------------------------
# SBM1 model files
# ---------------------------------------------------------------------------
#
# Layout: magic b"SBM1"; u32 layer count; u32 input height, width, channels;
# then one record per layer: u8 tag (1=Conv2D, 2=Dense, 3=ReLU, 4=Flatten,
# 5=Softmax); Conv2D: u32 out_ch, in_ch, kh, kw, stride then float32 weights
# (output index slowest) then float32 biases; Dense: u32 out, in then weights
# then biases.  All integers and floats little-endian.

_SBM1_MAGIC = b"SBM1"
_TAG_CONV, _TAG_DENSE, _TAG_RELU, _TAG_FLATTEN, _TAG_SOFTMAX = 1, 2, 3, 4, 5


def write_model(model: LayeredModel, path) -> None:
    parts = [_SBM1_MAGIC, struct.pack("<I", len(model.layers))]
    parts.append(struct.pack("<III", *model.input_shape))
    for layer in model.layers:
        if isinstance(layer, Conv2D):
            o, i, kh, kw = layer.weights.shape
            parts.append(struct.pack("<BIIIII", _TAG_CONV, o, i, kh, kw, layer.stride))
            parts.append(layer.weights.astype("<f4").tobytes(order="C"))
            parts.append(layer.biases.astype("<f4").tobytes(order="C"))
        elif isinstance(layer, Dense):
            parts.append(struct.pack("<BII", _TAG_DENSE, layer.out_dim, layer.in_dim))
            parts.append(layer.weights.astype("<f4").tobytes(order="C"))
            parts.append(layer.biases.astype("<f4").tobytes(order="C"))
        elif isinstance(layer, ReLU):
            parts.append(struct.pack("<B", _TAG_RELU))
        elif isinstance(layer, Flatten):
            parts.append(struct.pack("<B", _TAG_FLATTEN))
        elif isinstance(layer, Softmax):
            parts.append(struct.pack("<B", _TAG_SOFTMAX))
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


class _Cursor:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError(f"truncated {what}", len(self.blob))
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, count: int, what: str) -> Tuple[int, ...]:
        return struct.unpack(f"<{count}I", self.take(4 * count, what))

    def floats(self, count: int, what: str) -> np.ndarray:
        raw = self.take(4 * count, what)
        return np.frombuffer(raw, dtype="<f4").astype(np.float32)


def read_model(path) -> LayeredModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _SBM1_MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {_SBM1_MAGIC!r}", 0)
    cur = _Cursor(blob)
    cur.pos = 4
    (n_layers,) = cur.u32(1, "layer count")
    input_shape = cur.u32(3, "input shape")
    layers: List[Layer] = []
    for _ in range(n_layers):
        tag_offset = cur.pos
        (tag,) = struct.unpack("<B", cur.take(1, "layer tag"))
        if tag == _TAG_CONV:
            o, i, kh, kw, stride = cur.u32(5, "conv header")
            w = cur.floats(o * i * kh * kw, "conv weights").reshape(o, i, kh, kw)
            b = cur.floats(o, "conv biases")
            layers.append(Conv2D(w, b, stride))
        elif tag == _TAG_DENSE:
            o, i = cur.u32(2, "dense header")
            w = cur.floats(o * i, "dense weights").reshape(o, i)
            b = cur.floats(o, "dense biases")
            layers.append(Dense(w, b))
        elif tag == _TAG_RELU:
            layers.append(ReLU())
        elif tag == _TAG_FLATTEN:
            layers.append(Flatten())
        elif tag == _TAG_SOFTMAX:
            layers.append(Softmax())
        else:
            raise FormatError(f"unknown layer tag {tag}", tag_offset)
    if cur.pos != len(blob):
        raise FormatError(f"{len(blob) - cur.pos} trailing bytes after last layer", cur.pos)
    try:
        return LayeredModel(layers, input_shape)
    except ValueError as exc:
        raise FormatError(f"inconsistent model: {exc}", cur.pos) from exc
