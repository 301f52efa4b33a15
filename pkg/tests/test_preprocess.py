import numpy as np
import numpy.testing as npt
import pytest

from reefnet import gridcore, preprocess
from reefnet.errors import DegenerateHistogram, UnsupportedEnhancement
from reefnet.gridcore import ImageGrid
from reefnet.preprocess import EnhancementSpec, HybridPatchSpec


class Point:
    def __init__(self, row, col):
        self.row = row
        self.col = col


def test_enhance_none_is_identity():
    g = ImageGrid(np.random.default_rng(0).uniform(0, 255, (8, 8, 3)))
    assert preprocess.enhance(g, EnhancementSpec(kind="none")) is g


def test_enhance_percentile_mapping():
    # one channel holding every intensity 0..255 once
    vals = np.arange(256, dtype=np.float64).reshape(16, 16)
    g = ImageGrid(vals)
    out = preprocess.enhance(g, EnhancementSpec(kind="percentile_stretch"))
    ordered = np.sort(vals, axis=None)
    lo = ordered[int(np.ceil(0.01 * 256)) - 1]
    hi = ordered[int(np.ceil(0.99 * 256)) - 1]
    assert (out.data[vals <= lo] == 0.0).all()
    assert (out.data[vals >= hi] == 255.0).all()
    assert out.data.min() == 0.0 and out.data.max() == 255.0


def test_enhance_constant_channel_degenerate():
    g = ImageGrid(np.full((4, 4, 1), 9.0))
    with pytest.raises(DegenerateHistogram):
        preprocess.enhance(g, EnhancementSpec(kind="percentile_stretch"))


@pytest.mark.parametrize("kind", preprocess.RESERVED_ENHANCEMENTS)
def test_reserved_enhancements_unsupported(kind):
    g = ImageGrid(np.zeros((4, 4, 3)))
    with pytest.raises(UnsupportedEnhancement):
        preprocess.enhance(g, EnhancementSpec(kind=kind))


def test_enhance_monotone_and_idempotent_at_full_range():
    rng = np.random.default_rng(1)
    vals = rng.uniform(30, 200, (32, 32, 1))
    spec = EnhancementSpec(kind="percentile_stretch")
    once = preprocess.enhance(ImageGrid(vals), spec)
    order = np.argsort(vals, axis=None)
    assert (np.diff(once.data.flatten()[order]) >= -1e-12).all(), "monotone per channel"
    twice = preprocess.enhance(once, spec)
    npt.assert_allclose(twice.data, once.data, atol=1.0)


class TestHybridPatchSpec:
    def test_rejects_even_sizes(self):
        with pytest.raises(ValueError):
            HybridPatchSpec(sizes=(60, 121))

    def test_rejects_unordered_sizes(self):
        with pytest.raises(ValueError):
            HybridPatchSpec(sizes=(121, 61))

    def test_unified_size(self):
        assert HybridPatchSpec(unify="down_scale").unified_size == 61
        assert HybridPatchSpec(unify="up_scale").unified_size == 181


class TestExtractHybrid:
    def test_down_scale_produces_three_small_grids(self):
        img = ImageGrid(np.random.default_rng(2).uniform(0, 255, (200, 200, 3)))
        stack = preprocess.extract_hybrid(img, Point(100, 100), HybridPatchSpec())
        assert len(stack.patches) == 3
        assert all(p.shape == (61, 61, 3) for p in stack.patches)

    def test_up_scale_produces_three_large_grids(self):
        img = ImageGrid(np.random.default_rng(3).uniform(0, 255, (200, 200, 3)))
        stack = preprocess.extract_hybrid(img, Point(100, 100), HybridPatchSpec(unify="up_scale"))
        assert all(p.shape == (181, 181, 3) for p in stack.patches)

    def test_single_size_center_is_exact_crop(self):
        img = ImageGrid(np.random.default_rng(4).uniform(0, 255, (80, 80, 1)))
        stack = preprocess.extract_hybrid(img, Point(40, 40), HybridPatchSpec(sizes=(61,)))
        assert np.array_equal(stack.patches[0].data, img.data[10:71, 10:71])

    def test_border_points_replicate_edges(self):
        img = ImageGrid(np.random.default_rng(5).uniform(0, 255, (100, 100, 1)))
        stack = preprocess.extract_hybrid(img, Point(0, 0), HybridPatchSpec(sizes=(61,)))
        patch = stack.patches[0].data
        # rows/cols overhanging the image clamp to the first row/col
        assert (patch[0:31, 0, 0] == img.data[0, 0, 0]).all()
        assert (patch[0, 0:31, 0] == img.data[0, 0, 0]).all()
        assert np.array_equal(patch[30:, 30:, 0], img.data[0:31, 0:31, 0])

    def test_constant_image_gives_constant_stack(self):
        img = ImageGrid(np.full((200, 200, 3), 37.0))
        stack = preprocess.extract_hybrid(img, Point(30, 170), HybridPatchSpec())
        for patch in stack.patches:
            npt.assert_allclose(patch.data, 37.0, atol=1e-9)

    def test_point_outside_image_rejected(self):
        img = ImageGrid(np.zeros((10, 10, 1)))
        with pytest.raises(ValueError):
            preprocess.extract_hybrid(img, Point(10, 0), HybridPatchSpec(sizes=(5,)))

    def test_patch_order_matches_sizes(self):
        rng = np.random.default_rng(6)
        img = ImageGrid(rng.uniform(0, 255, (300, 300, 1)))
        spec = HybridPatchSpec(sizes=(21, 41, 61), unify="down_scale")
        stack = preprocess.extract_hybrid(img, Point(150, 150), spec)
        # first member is the native crop at the unified size
        assert np.array_equal(stack.patches[0].data, img.data[140:161, 140:161])
