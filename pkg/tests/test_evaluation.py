import numpy as np
import pytest

from reefnet import evaluation, gridcore
from reefnet.dataset import ClassCatalog
from reefnet.errors import BadClassId, EmptyMatrix
from reefnet.evaluation import ConfusionMatrix, accumulate, metrics


def catalog(n):
    return ClassCatalog(tuple(f"c{i}" for i in range(n)))


class TestAccumulate:
    def test_first_count(self):
        cm = accumulate(ConfusionMatrix(catalog(3)), 0, 0)
        assert cm.total == 1 and np.trace(cm.counts) == 1

    def test_crossed_counts_give_zero_accuracy(self):
        cm = ConfusionMatrix(catalog(2))
        accumulate(cm, 0, 1)
        accumulate(cm, 1, 0)
        assert metrics(cm).overall_accuracy == 0.0

    def test_matrix_keeps_its_size(self):
        cm = ConfusionMatrix(catalog(9))
        accumulate(cm, 8, 3)
        assert cm.counts.shape == (9, 9)

    def test_bad_ids_rejected(self):
        cm = ConfusionMatrix(catalog(2))
        with pytest.raises(BadClassId):
            accumulate(cm, 2, 0)
        with pytest.raises(BadClassId):
            accumulate(cm, 0, -1)

    def test_merge_adds_counts(self):
        a = accumulate(ConfusionMatrix(catalog(2)), 0, 0)
        b = accumulate(ConfusionMatrix(catalog(2)), 1, 0)
        merged = a.merge(b)
        assert merged.total == 2 and merged.counts[1, 0] == 1


class TestMetrics:
    def test_perfect_diagonal(self):
        cm = ConfusionMatrix(catalog(4), np.diag([5, 2, 9, 1]))
        rep = metrics(cm)
        assert rep.overall_accuracy == 1.0
        for m in rep.per_class:
            assert m.precision == m.recall == m.specificity == m.f_score == 1.0

    def test_hand_computed_two_class_values(self):
        cm = ConfusionMatrix(catalog(2), np.array([[3, 1], [2, 4]]))
        rep = metrics(cm)
        assert rep.overall_accuracy == pytest.approx(0.7)
        m0 = rep.per_class[0]
        assert m0.precision == pytest.approx(0.6)
        assert m0.recall == pytest.approx(0.75)
        assert m0.f_score == pytest.approx(2 * 0.6 * 0.75 / 1.35)

    def test_absent_class_excluded_from_macro(self):
        counts = np.zeros((3, 3), dtype=int)
        counts[0, 0] = 4
        counts[1, 1] = 6
        cm = ConfusionMatrix(catalog(3), counts)
        rep = metrics(cm)
        assert rep.per_class[2].precision is None
        assert rep.per_class[2].recall is None
        assert rep.macro_precision == pytest.approx(1.0)

    def test_empty_matrix_rejected(self):
        with pytest.raises(EmptyMatrix):
            metrics(ConfusionMatrix(catalog(2)))

    def test_overall_accuracy_is_exact_trace_ratio(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            c = int(rng.integers(2, 8))
            counts = rng.integers(0, 30, (c, c))
            if counts.sum() == 0:
                continue
            cm = ConfusionMatrix(catalog(c), counts)
            assert metrics(cm).overall_accuracy == np.trace(counts) / counts.sum()

    def test_matches_stream_recount(self):
        # brute-force oracle: recount every quantity from the raw stream
        rng = np.random.default_rng(1)
        c = 5
        stream = [(int(rng.integers(0, c)), int(rng.integers(0, c))) for _ in range(400)]
        cm = ConfusionMatrix(catalog(c))
        for target, predicted in stream:
            accumulate(cm, target, predicted)
        rep = metrics(cm)
        for k in range(c):
            tp = sum(1 for t, p in stream if t == k and p == k)
            fp = sum(1 for t, p in stream if t != k and p == k)
            fn = sum(1 for t, p in stream if t == k and p != k)
            tn = len(stream) - tp - fp - fn
            assert rep.per_class[k].precision == pytest.approx(tp / (tp + fp))
            assert rep.per_class[k].recall == pytest.approx(tp / (tp + fn))
            assert rep.per_class[k].specificity == pytest.approx(tn / (tn + fp))

    def test_permuting_classes_permutes_metrics(self):
        rng = np.random.default_rng(2)
        counts = rng.integers(1, 20, (4, 4))
        cm = ConfusionMatrix(catalog(4), counts)
        rep = metrics(cm)
        perm = np.array([2, 0, 3, 1])
        permuted = ConfusionMatrix(catalog(4), counts[np.ix_(perm, perm)])
        rep_p = metrics(permuted)
        assert rep_p.overall_accuracy == rep.overall_accuracy
        assert rep_p.macro_f_score == pytest.approx(rep.macro_f_score)
        for new_idx, old_idx in enumerate(perm):
            assert rep_p.per_class[new_idx] == rep.per_class[old_idx]

    def test_pure_function_of_counts(self):
        counts = np.array([[3, 1], [2, 4]])
        cm = ConfusionMatrix(catalog(2), counts)
        assert metrics(cm) == metrics(cm)
        assert np.array_equal(cm.counts, counts)


class TestReportFiles:
    def test_report_has_one_row_per_class_plus_overall(self, tmp_path):
        cm = ConfusionMatrix(catalog(3), np.diag([2, 3, 4]))
        path = tmp_path / "report.csv"
        evaluation.write_report(cm, path)
        lines = path.read_text().splitlines()
        assert len(lines) == 1 + 3 + 1
        assert lines[-1].startswith("__overall__")
        assert lines[-1].endswith("1.0")

    def test_undefined_cells_are_empty(self, tmp_path):
        counts = np.zeros((2, 2), dtype=int)
        counts[0, 0] = 3
        path = tmp_path / "report.csv"
        evaluation.write_report(ConfusionMatrix(catalog(2), counts), path)
        row = path.read_text().splitlines()[2]
        assert row.startswith("c1,,")

    def test_confusion_csv_layout(self, tmp_path):
        cm = ConfusionMatrix(catalog(2), np.array([[3, 1], [2, 4]]))
        path = tmp_path / "confusion.csv"
        evaluation.write_confusion_csv(cm, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "target\\predicted,c0,c1"
        assert lines[1] == "c0,3,1"

    def test_heatmap_dimensions_and_row_normalization(self, tmp_path):
        cm = ConfusionMatrix(catalog(2), np.array([[4, 0], [1, 1]]))
        grid = evaluation.heatmap(cm, cell_px=8)
        assert grid.shape == (16, 16, 1)
        assert grid.data[0, 0, 0] == pytest.approx(255.0)
        assert grid.data[15, 15, 0] == pytest.approx(127.5)
        path = tmp_path / "confusion.png"
        evaluation.write_heatmap(cm, path, cell_px=8)
        assert gridcore.read_png(path).shape == (16, 16, 1)
