"""Numeric image grids, resampling, and per-channel normalization.

Grids hold double-precision samples in (row, col, channel) order. All
operations are pure: they never mutate their inputs and are safe to call
concurrently.

Coordinate convention for resampling is align-corners,
``src = dst * (src_len - 1) / (dst_len - 1)``, which makes an identity
resize exact and turns the canonical window-size ladder (61/121/181)
into exact integer-step decimation.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from PIL import Image

from reefnet.errors import ConstantChannel, OutOfBounds

NEAREST = "nearest"
BILINEAR = "bilinear"
BICUBIC = "bicubic"
INTERPOLATION_KINDS = (NEAREST, BILINEAR, BICUBIC)

MIN_MAX = "min_max"
Z_SCORE = "z_score"

# Luma weights for RGB -> grayscale.
_LUMA = np.array([0.299, 0.587, 0.114])

_GRID_MAGIC = b"RGRD"
_GRID_VERSION = 1


@dataclass(frozen=True)
class ImageGrid:
    """An height x width x channels block of finite float64 samples."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, np.newaxis]
        if arr.ndim != 3 or arr.shape[0] < 1 or arr.shape[1] < 1 or arr.shape[2] < 1:
            raise ValueError(f"grid must be (h, w, c) with positive dims, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("grid contains non-finite samples")
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

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass(frozen=True)
class NormalizationSpec:
    """How to rescale channel values before they enter the network."""

    kind: str = MIN_MAX
    out_min: float = -1.0
    out_max: float = 1.0

    def __post_init__(self):
        if self.kind not in (MIN_MAX, Z_SCORE):
            raise ValueError(f"unknown normalization kind {self.kind!r}")
        if self.kind == MIN_MAX and not self.out_min < self.out_max:
            raise ValueError("out_min must be below out_max")


def normalize(img: ImageGrid, spec: NormalizationSpec,
              constant_fallback: float | None = None) -> ImageGrid:
    """Normalize every channel independently.

    min_max maps each channel's [min, max] onto [out_min, out_max];
    z_score centers each channel and divides by its sample standard
    deviation (n-1 denominator).

    Channels are treated independently because stacked feature channels
    live on incommensurate scales.

    Raises ConstantChannel on zero-spread channels unless
    ``constant_fallback`` gives a value to emit for them instead.
    """
    out = np.empty_like(img.data)
    for c in range(img.channels):
        chan = img.data[:, :, c]
        if spec.kind == MIN_MAX:
            lo, hi = chan.min(), chan.max()
            if hi == lo:
                if constant_fallback is None:
                    raise ConstantChannel(f"channel {c} is constant ({lo})")
                out[:, :, c] = constant_fallback
                continue
            out[:, :, c] = (spec.out_max - spec.out_min) * ((chan - lo) / (hi - lo)) + spec.out_min
        else:
            mean = chan.mean()
            std = chan.std(ddof=1) if chan.size > 1 else 0.0
            if std == 0.0:
                if constant_fallback is None:
                    raise ConstantChannel(f"channel {c} is constant ({mean})")
                out[:, :, c] = constant_fallback
                continue
            out[:, :, c] = (chan - mean) / std
    return ImageGrid(out)


def _check_bounds(img: ImageGrid, y: float, x: float):
    if not (0.0 <= y <= img.height - 1 and 0.0 <= x <= img.width - 1):
        raise OutOfBounds(f"({y}, {x}) outside grid of {img.height}x{img.width}")


def sample_bilinear(img: ImageGrid, y: float, x: float, ch: int = 0) -> float:
    """Weighted sum of the four lattice neighbors of (y, x)."""
    _check_bounds(img, y, x)
    y0 = int(np.floor(y))
    x0 = int(np.floor(x))
    y1 = min(y0 + 1, img.height - 1)
    x1 = min(x0 + 1, img.width - 1)
    dy = y - y0
    dx = x - x0
    d = img.data
    return float((1 - dx) * (1 - dy) * d[y0, x0, ch]
                 + (1 - dx) * dy * d[y1, x0, ch]
                 + dx * (1 - dy) * d[y0, x1, ch]
                 + dx * dy * d[y1, x1, ch])


def sample_nearest(img: ImageGrid, y: float, x: float, ch: int = 0) -> float:
    """Value of the Euclidean-nearest lattice point.

    Exact half-way ties go to the smaller row, then smaller column.
    """
    _check_bounds(img, y, x)
    yi = int(np.ceil(y - 0.5))
    xi = int(np.ceil(x - 0.5))
    return float(img.data[yi, xi, ch])


def _cubic_weights(t: np.ndarray) -> np.ndarray:
    # Catmull-Rom kernel (a = -0.5), evaluated at |t| <= 2.
    a = -0.5
    t = np.abs(t)
    w = np.zeros_like(t)
    near = t <= 1.0
    far = (t > 1.0) & (t < 2.0)
    w[near] = (a + 2) * t[near] ** 3 - (a + 3) * t[near] ** 2 + 1
    w[far] = a * t[far] ** 3 - 5 * a * t[far] ** 2 + 8 * a * t[far] - 4 * a
    return w


def _resample_matrix(src_len: int, dst_len: int, kind: str) -> np.ndarray:
    """(dst_len, src_len) row-stochastic matrix of sampling weights."""
    if dst_len > 1:
        pos = np.arange(dst_len) * ((src_len - 1) / (dst_len - 1))
    else:
        pos = np.full(1, (src_len - 1) / 2.0)
    mat = np.zeros((dst_len, src_len))
    rows = np.arange(dst_len)
    if kind == NEAREST:
        idx = np.clip(np.ceil(pos - 0.5).astype(int), 0, src_len - 1)
        mat[rows, idx] = 1.0
    elif kind == BILINEAR:
        i0 = np.clip(np.floor(pos).astype(int), 0, src_len - 1)
        i1 = np.minimum(i0 + 1, src_len - 1)
        frac = pos - i0
        mat[rows, i0] += 1.0 - frac
        mat[rows, i1] += frac
    elif kind == BICUBIC:
        base = np.floor(pos).astype(int)
        for off in (-1, 0, 1, 2):
            idx = np.clip(base + off, 0, src_len - 1)  # edge clamp
            mat[rows, idx] += _cubic_weights(pos - (base + off))
    else:
        raise ValueError(f"unknown interpolation kind {kind!r}")
    return mat


def resize(img: ImageGrid, new_h: int, new_w: int, kind: str = BILINEAR) -> ImageGrid:
    """Resample to (new_h, new_w) with align-corners positioning."""
    if new_h < 1 or new_w < 1:
        raise ValueError("target size must be at least 1x1")
    wr = _resample_matrix(img.height, new_h, kind)
    wc = _resample_matrix(img.width, new_w, kind)
    out = np.einsum("ij,jkc,lk->ilc", wr, img.data, wc, optimize=True)
    return ImageGrid(out)


def to_grayscale(img: ImageGrid) -> ImageGrid:
    """Collapse RGB to one luma channel; single-channel input passes through."""
    if img.channels == 1:
        return img
    if img.channels != 3:
        raise ValueError(f"expected 1 or 3 channels, got {img.channels}")
    gray = img.data @ _LUMA
    return ImageGrid(gray[:, :, np.newaxis])


def read_png(path) -> ImageGrid:
    """Load an 8-bit PNG as a float64 grid with values in [0, 255]."""
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        arr = np.asarray(im, dtype=np.float64)
    return ImageGrid(arr)


def write_png(img: ImageGrid, path, rescale: bool = True):
    """Write a grid as an 8-bit PNG.

    With ``rescale`` the value range is affinely mapped onto [0, 255]
    (a constant grid becomes mid-gray); without it, values are taken as
    already being on the [0, 255] scale. Either way values are clamped.
    """
    data = img.data
    if rescale:
        lo, hi = data.min(), data.max()
        if hi > lo:
            data = (data - lo) * (255.0 / (hi - lo))
        else:
            data = np.full_like(data, 128.0)
    data = np.clip(np.rint(data), 0, 255).astype(np.uint8)
    if img.channels == 1:
        Image.fromarray(data[:, :, 0], mode="L").save(path, format="PNG")
    elif img.channels == 3:
        Image.fromarray(data, mode="RGB").save(path, format="PNG")
    else:
        raise ValueError(f"cannot write {img.channels}-channel grid as PNG")


def write_grid(img: ImageGrid, path):
    """Write the raw grid exchange format (RGRD, float64 little-endian)."""
    with open(path, "wb") as fh:
        fh.write(_GRID_MAGIC)
        fh.write(struct.pack("<HIII", _GRID_VERSION, img.height, img.width, img.channels))
        fh.write(np.ascontiguousarray(img.data, dtype="<f8").tobytes())


def read_grid(path) -> ImageGrid:
    """Read a grid written by :func:`write_grid`."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _GRID_MAGIC:
            raise ValueError(f"bad grid magic {magic!r}")
        version, h, w, c = struct.unpack("<HIII", fh.read(14))
        if version != _GRID_VERSION:
            raise ValueError(f"unsupported grid version {version}")
        data = np.frombuffer(fh.read(8 * h * w * c), dtype="<f8").reshape(h, w, c)
    return ImageGrid(data.astype(np.float64))
