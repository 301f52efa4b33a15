"""Point-annotation ingestion, class balancing, stratified splitting, and
sample streaming.

Annotation files are CSV with the header ``image,row,col,label`` (UTF-8,
0-indexed pixel coordinates, image paths relative to the image root). The
catalog file lists one class name per line; its line order defines the class
ids used in one-hot targets. Split manifests are CSV
``image,row,col,label,fold`` with fold in {train, test}.
"""

from __future__ import annotations

import csv
import os.path
from dataclasses import dataclass

import numpy as np

from reefnet import features, gridcore, preprocess
from reefnet.errors import EmptyClass, MissingImage, ParseError, PointOutOfBounds
from reefnet.gridcore import ImageGrid, NormalizationSpec

CAP_POINTS = "points"
CAP_PATCHES = "patches"


@dataclass(frozen=True)
class AnnotatedPoint:
    image_id: str
    row: int
    col: int
    label: str

    @property
    def key(self) -> tuple[str, int, int]:
        return (self.image_id, self.row, self.col)


@dataclass(frozen=True)
class ClassCatalog:
    """Ordered class names; position = class id."""

    names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if len(set(self.names)) != len(self.names):
            raise ValueError("class names must be unique")

    def __len__(self) -> int:
        return len(self.names)

    def id_of(self, name: str) -> int:
        return self.names.index(name)


@dataclass(frozen=True)
class SplitSpec:
    train_ratio: float = 2.0 / 3.0
    per_class_cap: int = 300
    seed: int = 0
    cap_unit: str = CAP_POINTS

    def __post_init__(self):
        if not 0.0 < self.train_ratio < 1.0:
            raise ValueError("train ratio must lie strictly between 0 and 1")
        if self.per_class_cap < 1:
            raise ValueError("per-class cap must be positive")
        if self.cap_unit not in (CAP_POINTS, CAP_PATCHES):
            raise ValueError(f"unknown cap unit {self.cap_unit!r}")


@dataclass(frozen=True)
class FeatureFlags:
    """Which derived channels to append after the color channels."""

    zca: bool = False
    wld: bool = False
    pc: bool = False
    zca_spec: features.ZcaSpec = features.ZcaSpec()
    wld_spec: features.WldSpec = features.WldSpec()
    pc_spec: features.PcSpec = features.PcSpec()
    # Feature maps are computed from the same (enhanced) patch the color
    # channels come from; set False to use the raw patch instead.
    from_enhanced: bool = True

    @property
    def count(self) -> int:
        return int(self.zca) + int(self.wld) + int(self.pc)


@dataclass(frozen=True)
class Sample:
    """One network input: a single rescaled window with feature channels."""

    image_id: str
    row: int
    col: int
    source_size: int
    label: int
    x: np.ndarray  # (channels, side, side)


class _ImageCache:
    """Lazily loads images by id, keeping at most ``capacity`` around."""

    def __init__(self, image_root, capacity: int = 4):
        self.root = image_root
        self.capacity = capacity
        self._grids: dict[str, ImageGrid] = {}

    def path(self, image_id: str):
        return os.path.join(str(self.root), image_id)

    def get(self, image_id: str) -> ImageGrid:
        grid = self._grids.get(image_id)
        if grid is None:
            path = self.path(image_id)
            if not os.path.isfile(path):
                raise MissingImage(f"image '{path}' does not exist")
            grid = gridcore.read_png(path)
            if len(self._grids) >= self.capacity:
                self._grids.pop(next(iter(self._grids)))
            self._grids[image_id] = grid
        return grid


def ingest(annotation_file, image_root) -> tuple[list[AnnotatedPoint], ClassCatalog]:
    """Parse and validate an annotation CSV.

    Every referenced image must exist and contain its points. The catalog is
    built from the sorted distinct labels.
    """
    points: list[AnnotatedPoint] = []
    cache = _ImageCache(image_root)
    with open(annotation_file, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is not None and [h.strip() for h in header] != ["image", "row", "col", "label"]:
            raise ParseError(1, f"expected header image,row,col,label, got {header}")
        for line_no, fields in enumerate(reader, start=2):
            if not fields or (len(fields) == 1 and not fields[0].strip()):
                continue
            if len(fields) != 4:
                raise ParseError(line_no, f"expected 4 fields, got {len(fields)}")
            image_id, row_s, col_s, label = (f.strip() for f in fields)
            try:
                row, col = int(row_s), int(col_s)
            except ValueError as exc:
                raise ParseError(line_no, f"bad coordinates ({row_s}, {col_s})") from exc
            if not label:
                raise ParseError(line_no, "empty label")
            img = cache.get(image_id)
            if not (0 <= row < img.height and 0 <= col < img.width):
                raise PointOutOfBounds(image_id, row, col)
            points.append(AnnotatedPoint(image_id, row, col, label))
    catalog = ClassCatalog(tuple(sorted({p.label for p in points})))
    return points, catalog


def balance_and_split(points, spec: SplitSpec,
                      sizes_per_point: int = 1) -> tuple[list[AnnotatedPoint], list[AnnotatedPoint]]:
    """Per class: seeded uniform subsample down to the cap, then a stratified
    train/test split at the configured ratio (at least one point per side).

    When the cap counts patches rather than points, the point budget is the
    cap divided by ``sizes_per_point``.
    """
    by_class: dict[str, list[AnnotatedPoint]] = {}
    for p in points:
        by_class.setdefault(p.label, []).append(p)
    for label, members in by_class.items():
        if len(members) < 3:
            raise EmptyClass(f"class '{label}' has only {len(members)} points; need at least 3")

    budget = spec.per_class_cap
    if spec.cap_unit == CAP_PATCHES:
        budget = max(1, budget // sizes_per_point)

    rng = np.random.default_rng(spec.seed)
    train: list[AnnotatedPoint] = []
    test: list[AnnotatedPoint] = []
    for label in sorted(by_class):
        members = sorted(by_class[label], key=lambda p: p.key)
        order = rng.permutation(len(members))
        chosen = [members[i] for i in order[:min(len(members), budget)]]
        n_train = round(spec.train_ratio * len(chosen))
        n_train = min(max(n_train, 1), len(chosen) - 1)
        train.extend(chosen[:n_train])
        test.extend(chosen[n_train:])
    train.sort(key=lambda p: p.key)
    test.sort(key=lambda p: p.key)
    return train, test


def _feature_channels(patch: ImageGrid, flags: FeatureFlags) -> list[np.ndarray]:
    """Derived channels for one patch, on a [0, 1] gray version of it."""
    gray = gridcore.to_grayscale(patch)
    gray = ImageGrid(gray.data / 255.0)
    maps = []
    if flags.zca:
        maps.append(features.zca_whiten(gray, flags.zca_spec).data[:, :, 0])
    if flags.wld:
        maps.append(features.wld(gray, flags.wld_spec).data[:, :, 0])
    if flags.pc:
        maps.append(features.phase_congruency(gray, flags.pc_spec).data[:, :, 0])
    return maps


def point_samples(img_raw: ImageGrid, img_enhanced: ImageGrid, point: AnnotatedPoint,
                  label_id: int, patch_spec: preprocess.HybridPatchSpec,
                  flags: FeatureFlags, norm: NormalizationSpec) -> list[Sample]:
    """The network inputs for one annotated point: one Sample per window size."""
    stack = preprocess.extract_hybrid(img_enhanced, point, patch_spec, label=label_id)
    raw_stack = None
    if flags.count and not flags.from_enhanced and img_raw is not img_enhanced:
        raw_stack = preprocess.extract_hybrid(img_raw, point, patch_spec, label=label_id)
    samples = []
    for idx, patch in enumerate(stack.patches):
        channels = [patch.data[:, :, c] for c in range(patch.channels)]
        if flags.count:
            source = raw_stack.patches[idx] if raw_stack is not None else patch
            channels.extend(_feature_channels(source, flags))
        stacked = ImageGrid(np.stack(channels, axis=2))
        # Constant channels carry no signal; map them to the neutral value.
        neutral = 0.0 if norm.kind == gridcore.Z_SCORE else (norm.out_min + norm.out_max) / 2.0
        normed = gridcore.normalize(stacked, norm, constant_fallback=neutral)
        samples.append(Sample(
            image_id=point.image_id, row=point.row, col=point.col,
            source_size=patch_spec.sizes[idx], label=label_id,
            x=np.ascontiguousarray(np.moveaxis(normed.data, 2, 0)),
        ))
    return samples


def build_samples(points, catalog: ClassCatalog, image_root,
                  patch_spec: preprocess.HybridPatchSpec = preprocess.HybridPatchSpec(),
                  enhancement: preprocess.EnhancementSpec = preprocess.EnhancementSpec(),
                  flags: FeatureFlags = FeatureFlags(),
                  norm: NormalizationSpec = NormalizationSpec(),
                  workers: int = 1):
    """Yield one Sample per (point, window size), deterministically ordered
    by (image id, row, col) and then window size.

    Channel order is color channels first, then the enabled derived maps in
    [zca, wld, pc] order; every channel is normalized independently.
    """
    ordered = sorted(points, key=lambda p: p.key)
    by_image: dict[str, list[AnnotatedPoint]] = {}
    for p in ordered:
        by_image.setdefault(p.image_id, []).append(p)
    groups = sorted(by_image.items())

    if workers > 1 and len(groups) > 1:
        from concurrent.futures import ProcessPoolExecutor
        args = [(image_root, image_id, pts, catalog, patch_spec, enhancement, flags, norm)
                for image_id, pts in groups]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for batch in pool.map(_image_worker, args):
                yield from batch
    else:
        for arg in groups:
            yield from _image_worker((image_root, arg[0], arg[1], catalog,
                                      patch_spec, enhancement, flags, norm))


def _image_worker(args) -> list[Sample]:
    image_root, image_id, points, catalog, patch_spec, enhancement, flags, norm = args
    cache = _ImageCache(image_root)
    raw = cache.get(image_id)
    enhanced = preprocess.enhance(raw, enhancement)
    out: list[Sample] = []
    for point in points:
        label_id = catalog.id_of(point.label)
        out.extend(point_samples(raw, enhanced, point, label_id, patch_spec, flags, norm))
    return out


def write_catalog(catalog: ClassCatalog, path):
    with open(path, "w", encoding="utf-8") as fh:
        for name in catalog.names:
            fh.write(name + "\n")


def read_catalog(path) -> ClassCatalog:
    with open(path, encoding="utf-8") as fh:
        return ClassCatalog(tuple(line.rstrip("\n") for line in fh if line.strip()))


def write_manifest(train, test, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("image,row,col,label,fold\n")
        for fold, members in (("train", train), ("test", test)):
            for p in members:
                fh.write(f"{p.image_id},{p.row},{p.col},{p.label},{fold}\n")


def read_manifest(path) -> tuple[list[AnnotatedPoint], list[AnnotatedPoint]]:
    train: list[AnnotatedPoint] = []
    test: list[AnnotatedPoint] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["image", "row", "col", "label", "fold"]:
            raise ParseError(1, f"expected manifest header, got {header}")
        for line_no, fields in enumerate(reader, start=2):
            if not fields:
                continue
            if len(fields) != 5 or fields[4] not in ("train", "test"):
                raise ParseError(line_no, f"bad manifest row {fields}")
            point = AnnotatedPoint(fields[0], int(fields[1]), int(fields[2]), fields[3])
            (train if fields[4] == "train" else test).append(point)
    return train, test
