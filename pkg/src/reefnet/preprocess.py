"""Color enhancement and multi-size window extraction around annotated points."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from reefnet import gridcore
from reefnet.errors import DegenerateHistogram, UnsupportedEnhancement
from reefnet.gridcore import ImageGrid

ENHANCE_NONE = "none"
PERCENTILE_STRETCH = "percentile_stretch"
# Reserved plug-in slots; selecting them raises UnsupportedEnhancement.
RESERVED_ENHANCEMENTS = ("bazeille06", "iqbal07")

UP_SCALE = "up_scale"
DOWN_SCALE = "down_scale"


@dataclass(frozen=True)
class EnhancementSpec:
    kind: str = ENHANCE_NONE
    low_pct: float = 1.0
    high_pct: float = 99.0

    def __post_init__(self):
        known = (ENHANCE_NONE, PERCENTILE_STRETCH) + RESERVED_ENHANCEMENTS
        if self.kind not in known:
            raise ValueError(f"unknown enhancement kind {self.kind!r}")
        if not (0.0 < self.low_pct < 50.0 and 50.0 < self.high_pct < 100.0):
            raise ValueError("percentiles must satisfy 0 < low < 50 < high < 100")


@dataclass(frozen=True)
class HybridPatchSpec:
    """Co-centered window sizes and how they are unified to one size."""

    sizes: tuple[int, ...] = (61, 121, 181)
    unify: str = DOWN_SCALE
    interp: str = gridcore.BICUBIC

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        if not self.sizes:
            raise ValueError("at least one window size is required")
        if any(s < 1 or s % 2 == 0 for s in self.sizes):
            raise ValueError("window sizes must be odd and positive")
        if list(self.sizes) != sorted(set(self.sizes)):
            raise ValueError("window sizes must be strictly increasing")
        if self.unify not in (UP_SCALE, DOWN_SCALE):
            raise ValueError(f"unknown unify mode {self.unify!r}")
        if self.interp not in gridcore.INTERPOLATION_KINDS:
            raise ValueError(f"unknown interpolation kind {self.interp!r}")

    @property
    def unified_size(self) -> int:
        return max(self.sizes) if self.unify == UP_SCALE else min(self.sizes)


@dataclass(frozen=True)
class PatchStack:
    """The rescaled windows cut around one annotated point."""

    point: object
    patches: tuple[ImageGrid, ...]
    label: int = -1

    def __post_init__(self):
        sides = {(g.height, g.width) for g in self.patches}
        chans = {g.channels for g in self.patches}
        if len(sides) > 1 or len(chans) > 1:
            raise ValueError("stack members must share one size and channel count")


def _nearest_rank(sorted_vals: np.ndarray, pct: float) -> float:
    rank = max(1, int(np.ceil(pct / 100.0 * sorted_vals.size)))
    return float(sorted_vals[rank - 1])


def enhance(img: ImageGrid, spec: EnhancementSpec) -> ImageGrid:
    """Stretch each channel so its low/high percentiles map to 0 and 255.

    Values are clipped to [0, 255]; ``kind="none"`` returns the input as is.
    """
    if spec.kind == ENHANCE_NONE:
        return img
    if spec.kind in RESERVED_ENHANCEMENTS:
        raise UnsupportedEnhancement(f"{spec.kind} is reserved but not implemented")
    if img.channels not in (1, 3):
        raise ValueError(f"expected 1 or 3 channels, got {img.channels}")
    out = np.empty_like(img.data)
    for c in range(img.channels):
        chan = img.data[:, :, c]
        ordered = np.sort(chan, axis=None)
        lo = _nearest_rank(ordered, spec.low_pct)
        hi = _nearest_rank(ordered, spec.high_pct)
        if hi == lo:
            raise DegenerateHistogram(f"channel {c}: percentiles coincide at {lo}")
        out[:, :, c] = np.clip((chan - lo) * (255.0 / (hi - lo)), 0.0, 255.0)
    return ImageGrid(out)


def cut_window(img: ImageGrid, row: int, col: int, size: int) -> ImageGrid:
    """Cut a size x size window centered on (row, col), clamping at edges."""
    half = size // 2
    rows = np.clip(np.arange(row - half, row + half + 1), 0, img.height - 1)
    cols = np.clip(np.arange(col - half, col + half + 1), 0, img.width - 1)
    return ImageGrid(img.data[np.ix_(rows, cols)])


def extract_hybrid(img: ImageGrid, pt, spec: HybridPatchSpec, label: int = -1) -> PatchStack:
    """Cut one window per configured size around ``pt`` and rescale all of
    them to the unified size.

    ``pt`` needs ``row`` and ``col`` attributes; windows overhanging the
    image replicate the border pixels. ``label`` is the class id the caller
    resolved for the point.
    """
    if not (0 <= pt.row < img.height and 0 <= pt.col < img.width):
        raise ValueError(f"point ({pt.row}, {pt.col}) outside image")
    unified = spec.unified_size
    patches = []
    for size in spec.sizes:
        window = cut_window(img, pt.row, pt.col, size)
        if size != unified:
            window = gridcore.resize(window, unified, unified, spec.interp)
        patches.append(window)
    return PatchStack(point=pt, patches=tuple(patches), label=label)
