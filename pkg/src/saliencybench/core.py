"""Shared tensor types, deterministic randomness, interpolation and file I/O.

Everything downstream (models, perturbations, explainers, metrics) is built
on the types in this module.  Pixel intensities live in the real interval
[0, 1]; 8-bit sources must be divided by 255 before an Image is constructed,
so that "half of the maximum color value" is exactly 0.5.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

__all__ = [
    "FormatError",
    "Image",
    "SaliencyMap",
    "RngStream",
    "bilinear_upsample",
    "normalize_map",
    "read_tensor",
    "write_tensor",
    "read_map",
    "write_map",
]


class FormatError(ValueError):
    """Raised when a tensor or model file is malformed.

    Carries the byte offset at which parsing failed.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def _as_float32(data, shape, what: str) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float32)
    if arr.shape != shape:
        raise ValueError(f"{what}: expected shape {shape}, got {arr.shape}")
    return arr


@dataclass(frozen=True)
class Image:
    """Dense H x W x C intensity tensor with values in [0, 1].

    The backing array is float32, row-major (row, column, channel), and is
    frozen after construction so instances can be shared freely.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ValueError(f"image data must be (H, W, C) with positive dims, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("image values must lie in [0, 1]")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class SaliencyMap:
    """Dense H x W relevance grid. Values are arbitrary finite reals."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float32)
        if arr.ndim != 2 or min(arr.shape) < 1:
            raise ValueError(f"saliency values must be (H, W) with positive dims, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("saliency map contains non-finite values")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


# ---------------------------------------------------------------------------
# Deterministic randomness
# ---------------------------------------------------------------------------

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_CHILD_GAMMA = 0xC2B2AE3D27D4EB4F
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def _mix64_scalar(z: int) -> int:
    z &= _MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


class RngStream:
    """Counter-based splitmix64 generator.

    The k-th 64-bit output (0-based, counting every draw made on the stream)
    is ``mix64(seed + (k + 1) * GAMMA)`` where ``mix64`` is the splitmix64
    finalizer and GAMMA = 0x9E3779B97F4A7C15.  The mapping from counters to
    outputs is closed-form, so bulk draws vectorize and the sequence is
    identical on every platform for a given seed.

    Draw conventions (all documented so ports can match bit-for-bit):
      * ``uniforms(n)``   -- n doubles in [0, 1), each (u64 >> 11) * 2**-53.
      * ``integers(n,m)`` -- n ints in [0, m), each min(floor(u * m), m - 1).
      * ``child(i)``      -- independent stream with seed
                             mix64(seed + (i + 1) * 0xC2B2AE3D27D4EB4F); the
                             child's draws never advance the parent counter.

    Streams are single-owner: pass them by value or split via ``child``,
    never share one stream across threads.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self._counter = 0

    def _raw(self, n: int) -> np.ndarray:
        ks = np.arange(self._counter + 1, self._counter + n + 1, dtype=np.uint64)
        self._counter += n
        z = np.uint64(self.seed) + ks * np.uint64(_GAMMA)
        return _mix64_array(z)

    def uniforms(self, n: int) -> np.ndarray:
        """n doubles uniform in [0, 1)."""
        return (self._raw(n) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53

    def uniform(self) -> float:
        return float(self.uniforms(1)[0])

    def integers(self, n: int, upper: int) -> np.ndarray:
        """n ints uniform in [0, upper)."""
        if upper < 1:
            raise ValueError(f"upper must be >= 1, got {upper}")
        vals = np.floor(self.uniforms(n) * upper).astype(np.int64)
        return np.minimum(vals, upper - 1)

    def child(self, index: int) -> "RngStream":
        """Independent stream derived from this stream's seed and an index."""
        return RngStream(_mix64_scalar((self.seed + (int(index) + 1) * _CHILD_GAMMA) & _MASK64))


# ---------------------------------------------------------------------------
# Interpolation and normalization
# ---------------------------------------------------------------------------


def bilinear_array(src: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    """Align-corners bilinear interpolation of a 2-D float array.

    Output corner cells coincide with source corner cells: output (0, 0) is
    source (0, 0) and output (target_h-1, target_w-1) is source (h-1, w-1).
    Interior cells blend the four nearest source cells with ``a + f*(b - a)``
    lerps, which keeps every output inside the source min/max.
    """
    src = np.asarray(src, dtype=np.float64)
    sh, sw = src.shape
    ys = np.linspace(0.0, sh - 1.0, target_h) if target_h > 1 else np.zeros(1)
    xs = np.linspace(0.0, sw - 1.0, target_w) if target_w > 1 else np.zeros(1)
    y0 = np.minimum(ys.astype(np.int64), sh - 1)
    x0 = np.minimum(xs.astype(np.int64), sw - 1)
    y1 = np.minimum(y0 + 1, sh - 1)
    x1 = np.minimum(x0 + 1, sw - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]

    a = src[np.ix_(y0, x0)]
    b = src[np.ix_(y0, x1)]
    c = src[np.ix_(y1, x0)]
    d = src[np.ix_(y1, x1)]
    top = a + fx * (b - a)
    bot = c + fx * (d - c)
    return top + fy * (bot - top)


def bilinear_upsample(small: SaliencyMap, target_h: int, target_w: int) -> SaliencyMap:
    """Upsample a map to (target_h, target_w) with align-corners bilinear blending."""
    if target_h < 1 or target_w < 1:
        raise ValueError(f"target dims must be positive, got {target_h}x{target_w}")
    if small.height > target_h or small.width > target_w:
        raise ValueError(
            f"source {small.height}x{small.width} exceeds target {target_h}x{target_w}"
        )
    out = bilinear_array(small.values, target_h, target_w)
    return SaliencyMap(out.astype(np.float32))


def normalize_array(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=np.float32)
    lo = values.min()
    hi = values.max()
    if hi == lo:
        return np.zeros_like(values)
    return (values - lo) / (hi - lo)


def normalize_map(saliency: SaliencyMap) -> SaliencyMap:
    """Affine rescale to [0, 1]; a constant map becomes all zeros."""
    return SaliencyMap(normalize_array(saliency.values))


# ---------------------------------------------------------------------------
# SBT1 tensor files
# ---------------------------------------------------------------------------
#
# Layout: magic b"SBT1"; three u32 little-endian (height, width, channels);
# then height*width*channels IEEE-754 float32 little-endian values in
# row-major (row, column, channel) order.  Saliency maps use channels = 1.

_SBT1_MAGIC = b"SBT1"
_U32_MAX = 2**32 - 1


def _encode_sbt1(arr: np.ndarray) -> bytes:
    h, w, c = arr.shape
    for name, dim in (("height", h), ("width", w), ("channels", c)):
        if not (1 <= dim <= _U32_MAX):
            raise ValueError(f"{name}={dim} does not fit the SBT1 header")
    header = _SBT1_MAGIC + struct.pack("<III", h, w, c)
    return header + arr.astype("<f4").tobytes(order="C")


def _decode_sbt1(blob: bytes) -> np.ndarray:
    if blob[:4] != _SBT1_MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {_SBT1_MAGIC!r}", 0)
    if len(blob) < 16:
        raise FormatError("truncated header", len(blob))
    h, w, c = struct.unpack("<III", blob[4:16])
    if h < 1 or w < 1 or c < 1:
        raise FormatError(f"invalid dimensions {h}x{w}x{c}", 4)
    count = h * w * c
    expected = 16 + 4 * count
    if len(blob) < expected:
        raise FormatError(
            f"truncated payload: expected {expected} bytes, got {len(blob)}", len(blob)
        )
    if len(blob) > expected:
        raise FormatError(f"{len(blob) - expected} trailing bytes after payload", expected)
    flat = np.frombuffer(blob, dtype="<f4", count=count, offset=16)
    return flat.reshape(h, w, c).astype(np.float32)


def write_tensor(image: Image, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_encode_sbt1(image.data))


def read_tensor(path) -> Image:
    with open(path, "rb") as fh:
        blob = fh.read()
    arr = _decode_sbt1(blob)
    try:
        return Image(arr)
    except ValueError as exc:
        raise FormatError(f"payload is not a valid image: {exc}", 16) from exc


def write_map(saliency: SaliencyMap, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_encode_sbt1(saliency.values[:, :, None]))


def read_map(path) -> SaliencyMap:
    with open(path, "rb") as fh:
        blob = fh.read()
    arr = _decode_sbt1(blob)
    if arr.shape[2] != 1:
        raise FormatError(f"saliency file must have channels=1, got {arr.shape[2]}", 12)
    if not np.all(np.isfinite(arr)):
        raise FormatError("payload contains non-finite values", 16)
    return SaliencyMap(arr[:, :, 0])
