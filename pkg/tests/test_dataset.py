import hashlib

import numpy as np
import pytest

from reefnet import dataset, gridcore, preprocess
from reefnet.dataset import AnnotatedPoint, ClassCatalog, FeatureFlags, SplitSpec
from reefnet.errors import EmptyClass, MissingImage, ParseError, PointOutOfBounds
from reefnet.gridcore import ImageGrid


@pytest.fixture
def image_root(tmp_path):
    rng = np.random.default_rng(0)
    root = tmp_path / "imgs"
    root.mkdir()
    for name in ("a.png", "b.png"):
        grid = ImageGrid(rng.integers(0, 256, (40, 50, 3)).astype(np.float64))
        gridcore.write_png(grid, root / name, rescale=False)
    return root


def write_csv(tmp_path, rows, header="image,row,col,label"):
    path = tmp_path / "ann.csv"
    path.write_text("\n".join([header] + rows) + "\n")
    return path


class TestIngest:
    def test_empty_file(self, tmp_path, image_root):
        path = write_csv(tmp_path, [])
        points, catalog = dataset.ingest(path, image_root)
        assert points == [] and len(catalog) == 0

    def test_counts_and_sorted_catalog(self, tmp_path, image_root):
        rows = [f"a.png,{r},{c},zebra" for r, c in [(0, 0), (1, 2)]]
        rows += [f"b.png,{r},{c},algae" for r, c in [(3, 4), (5, 6)]]
        points, catalog = dataset.ingest(write_csv(tmp_path, rows), image_root)
        assert len(points) == 4
        assert catalog.names == ("algae", "zebra")

    def test_negative_coordinate_rejected(self, tmp_path, image_root):
        path = write_csv(tmp_path, ["a.png,-1,5,kelp"])
        with pytest.raises(PointOutOfBounds):
            dataset.ingest(path, image_root)

    def test_point_past_edge_rejected(self, tmp_path, image_root):
        path = write_csv(tmp_path, ["a.png,40,0,kelp"])
        with pytest.raises(PointOutOfBounds):
            dataset.ingest(path, image_root)

    def test_missing_image(self, tmp_path, image_root):
        path = write_csv(tmp_path, ["ghost.png,0,0,kelp"])
        with pytest.raises(MissingImage):
            dataset.ingest(path, image_root)

    def test_malformed_row(self, tmp_path, image_root):
        path = write_csv(tmp_path, ["a.png,1,2"])
        with pytest.raises(ParseError) as err:
            dataset.ingest(path, image_root)
        assert err.value.line_no == 2

    def test_bad_header(self, tmp_path, image_root):
        path = write_csv(tmp_path, ["a.png,1,2,x"], header="img,y,x,cls")
        with pytest.raises(ParseError):
            dataset.ingest(path, image_root)


def make_points(label, count, image="img.png"):
    return [AnnotatedPoint(image, i, 2 * i, label) for i in range(count)]


class TestBalanceAndSplit:
    def test_cap_then_two_to_one_split(self):
        points = make_points("coral", 900)
        train, test = dataset.balance_and_split(points, SplitSpec(seed=5))
        assert (len(train), len(test)) == (200, 100)

    def test_minimum_class_keeps_one_test_point(self):
        points = make_points("rare", 3)
        train, test = dataset.balance_and_split(points, SplitSpec(seed=5))
        assert (len(train), len(test)) == (2, 1)

    def test_too_small_class_rejected(self):
        with pytest.raises(EmptyClass):
            dataset.balance_and_split(make_points("nearly", 2), SplitSpec())

    def test_identical_seed_identical_split(self):
        points = make_points("a", 50) + make_points("b", 70, image="other.png")
        s1 = dataset.balance_and_split(points, SplitSpec(seed=9))
        s2 = dataset.balance_and_split(points, SplitSpec(seed=9))
        assert s1 == s2

    def test_folds_are_disjoint(self):
        points = make_points("a", 40) + make_points("b", 55, image="other.png")
        train, test = dataset.balance_and_split(points, SplitSpec(seed=3))
        assert not {p.key for p in train} & {p.key for p in test}

    def test_ratio_within_one_point_per_class(self):
        rng = np.random.default_rng(11)
        for ratio in (0.5, 2.0 / 3.0, 0.8):
            count = int(rng.integers(5, 200))
            train, test = dataset.balance_and_split(
                make_points("x", count), SplitSpec(train_ratio=ratio, per_class_cap=500, seed=1))
            assert abs(len(train) - ratio * count) <= 1.0

    def test_patch_cap_unit_divides_budget(self):
        points = make_points("x", 200)
        train, test = dataset.balance_and_split(
            points, SplitSpec(per_class_cap=90, cap_unit="patches", seed=2), sizes_per_point=3)
        assert len(train) + len(test) == 30


@pytest.fixture
def small_world(tmp_path):
    """Two tiny images with a handful of points, ready for build_samples."""
    rng = np.random.default_rng(1)
    root = tmp_path / "im"
    root.mkdir()
    for name in ("x.png", "y.png"):
        grid = ImageGrid(rng.integers(0, 256, (64, 64, 3)).astype(np.float64))
        gridcore.write_png(grid, root / name, rescale=False)
    points = [AnnotatedPoint("x.png", 20, 30, "one"), AnnotatedPoint("y.png", 40, 10, "two"),
              AnnotatedPoint("x.png", 5, 60, "two")]
    catalog = ClassCatalog(("one", "two"))
    return root, points, catalog


SMALL_PATCH = preprocess.HybridPatchSpec(sizes=(9, 17, 25))


class TestBuildSamples:
    def test_color_only_has_three_channels(self, small_world):
        root, points, catalog = small_world
        samples = list(dataset.build_samples(points, catalog, root, patch_spec=SMALL_PATCH))
        assert all(s.x.shape == (3, 9, 9) for s in samples)

    def test_all_feature_flags_add_three_channels(self, small_world):
        root, points, catalog = small_world
        flags = FeatureFlags(zca=True, wld=True, pc=True)
        samples = list(dataset.build_samples(points, catalog, root,
                                             patch_spec=SMALL_PATCH, flags=flags))
        assert all(s.x.shape == (6, 9, 9) for s in samples)

    def test_three_sizes_give_three_samples_per_point(self, small_world):
        root, points, catalog = small_world
        samples = list(dataset.build_samples(points, catalog, root, patch_spec=SMALL_PATCH))
        assert len(samples) == 3 * len(points)

    def test_normalized_range(self, small_world):
        root, points, catalog = small_world
        samples = list(dataset.build_samples(points, catalog, root, patch_spec=SMALL_PATCH))
        for s in samples:
            assert s.x.min() >= -1.0 - 1e-12 and s.x.max() <= 1.0 + 1e-12

    def test_deterministic_ordering_and_content(self, small_world):
        root, points, catalog = small_world
        def digest():
            h = hashlib.sha256()
            for s in dataset.build_samples(points, catalog, root, patch_spec=SMALL_PATCH):
                h.update(s.image_id.encode())
                h.update(np.ascontiguousarray(s.x).tobytes())
            return h.hexdigest()
        assert digest() == digest()

    def test_order_is_by_image_then_position_then_size(self, small_world):
        root, points, catalog = small_world
        samples = list(dataset.build_samples(points, catalog, root, patch_spec=SMALL_PATCH))
        keys = [(s.image_id, s.row, s.col) for s in samples]
        assert keys == sorted(keys)
        assert [s.source_size for s in samples[:3]] == [9, 17, 25]

    def test_labels_follow_catalog(self, small_world):
        root, points, catalog = small_world
        samples = list(dataset.build_samples(points, catalog, root, patch_spec=SMALL_PATCH))
        for s in samples:
            expected = next(p for p in points
                            if (p.image_id, p.row, p.col) == (s.image_id, s.row, s.col))
            assert catalog.names[s.label] == expected.label

    def test_worker_pool_matches_serial_output(self, small_world):
        root, points, catalog = small_world
        serial = list(dataset.build_samples(points, catalog, root, patch_spec=SMALL_PATCH))
        pooled = list(dataset.build_samples(points, catalog, root, patch_spec=SMALL_PATCH,
                                            workers=2))
        assert len(serial) == len(pooled)
        for a, b in zip(serial, pooled):
            assert (a.image_id, a.row, a.col, a.source_size, a.label) == \
                   (b.image_id, b.row, b.col, b.source_size, b.label)
            assert np.array_equal(a.x, b.x)


class TestManifestAndCatalogFiles:
    def test_catalog_roundtrip(self, tmp_path):
        catalog = ClassCatalog(("b", "a", "c"))
        path = tmp_path / "catalog.txt"
        dataset.write_catalog(catalog, path)
        assert dataset.read_catalog(path) == catalog

    def test_manifest_roundtrip(self, tmp_path):
        train = make_points("a", 3)
        test = make_points("b", 2, image="z.png")
        path = tmp_path / "manifest.csv"
        dataset.write_manifest(train, test, path)
        train2, test2 = dataset.read_manifest(path)
        assert train2 == train and test2 == test

    def test_manifest_bad_fold_rejected(self, tmp_path):
        path = tmp_path / "manifest.csv"
        path.write_text("image,row,col,label,fold\nx.png,1,2,a,validation\n")
        with pytest.raises(ParseError):
            dataset.read_manifest(path)
