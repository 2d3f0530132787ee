"""Deterministic synthetic input frames.

These stand in for game frames so every experiment can run without external
assets.  All generators are pure functions of (kind, params, seed); frame i
of a batch draws from ``RngStream(seed).child(i)``.
"""

from __future__ import annotations

from typing import List

import numpy as np

from .core import Image, RngStream

__all__ = ["FRAME_KINDS", "generate_frames", "DEFAULT_REGION"]

# Region shared by the planted-rect generator and the planted-model examples.
DEFAULT_REGION = (22, 22, 40, 40)

FRAME_KINDS = ("planted-rect", "grey-maze", "checker", "noise")


def _shape(params: dict) -> tuple:
    return (
        int(params.get("height", 84)),
        int(params.get("width", 84)),
        int(params.get("channels", 4)),
    )


def _planted_rect(params: dict, rng: RngStream) -> np.ndarray:
    """Dim background (<= 0.2) with a bright rectangle (>= 0.8) at ``region``."""
    h, w, c = _shape(params)
    top, left, rh, rw = params.get("region", DEFAULT_REGION)
    arr = (rng.uniforms(h * w * c).reshape(h, w, c) * 0.2).astype(np.float32)
    block = 0.8 + rng.uniforms(rh * rw * c).reshape(rh, rw, c) * 0.2
    arr[top : top + rh, left : left + rw, :] = block.astype(np.float32)
    return np.clip(arr, 0.0, 1.0)


def _grey_maze(params: dict, rng: RngStream) -> np.ndarray:
    """Black walls, corridors of exactly 0.5, one bright sprite on the grid.

    Corridors are the rows/columns with (index % period) < lane_width, which
    covers well over 30% of the frame with the exact value 0.5.  The sprite is
    a small block of 1.0 placed (seeded) inside ``region``.
    """
    h, w, c = _shape(params)
    period = int(params.get("period", 8))
    lanes = int(params.get("lane_width", 2))
    top, left, rh, rw = params.get("region", DEFAULT_REGION)
    sprite = int(params.get("sprite_size", 4))

    ys = np.arange(h) % period < lanes
    xs = np.arange(w) % period < lanes
    corridor = ys[:, None] | xs[None, :]
    arr = np.zeros((h, w, c), dtype=np.float32)
    arr[corridor] = 0.5

    sy = top + int(rng.integers(1, max(rh - sprite, 1))[0])
    sx = left + int(rng.integers(1, max(rw - sprite, 1))[0])
    arr[sy : sy + sprite, sx : sx + sprite, :] = 1.0
    return arr


def _checker(params: dict, rng: RngStream) -> np.ndarray:
    h, w, c = _shape(params)
    block = int(params.get("block", 6))
    phase = int(rng.integers(1, 2)[0])
    ys = (np.arange(h) // block + phase) % 2
    xs = np.arange(w) // block % 2
    board = (ys[:, None] + xs[None, :]) % 2
    lo, hi = float(params.get("low", 0.25)), float(params.get("high", 0.75))
    arr = np.where(board[:, :, None] == 1, hi, lo).astype(np.float32)
    return np.broadcast_to(arr, (h, w, c)).copy()


def _noise(params: dict, rng: RngStream) -> np.ndarray:
    h, w, c = _shape(params)
    return rng.uniforms(h * w * c).reshape(h, w, c).astype(np.float32)


_GENERATORS = {
    "planted-rect": _planted_rect,
    "grey-maze": _grey_maze,
    "checker": _checker,
    "noise": _noise,
}


def generate_frames(kind: str, params: dict, seed: int, count: int) -> List[Image]:
    if kind not in _GENERATORS:
        raise ValueError(f"unknown frame kind {kind!r}; known kinds: {', '.join(FRAME_KINDS)}")
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    base = RngStream(seed)
    gen = _GENERATORS[kind]
    return [Image(gen(dict(params or {}), base.child(i))) for i in range(count)]
