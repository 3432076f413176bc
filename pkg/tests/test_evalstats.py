import csv
import math
from types import SimpleNamespace

import numpy as np
import pytest

from pacn.errors import UsageError
from pacn.evalstats import (Q_ALPHA, draw_subsets, evaluate, format_eval_text,
                            friedman_test, nemenyi_cd, predict, rank_matrix,
                            rank_report, subset_accuracy_row, write_eval_csv,
                            write_rank_csv, write_rank_svg)
from pacn.tensor import Tensor


class StubModel:
    """Duck-typed classifier emitting scripted logits batch by batch."""

    def __init__(self, logits, num_classes=10):
        self.logits = np.asarray(logits, dtype=np.float32)
        self.config = SimpleNamespace(num_classes=num_classes)
        self.cursor = 0

    def __call__(self, x, training=False):
        n = x.data.shape[0]
        out = self.logits[self.cursor:self.cursor + n]
        self.cursor += n
        return Tensor(out)


def stub_dataset(labels, devices=None):
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    return SimpleNamespace(features=np.zeros((n, 256, 65, 2), dtype=np.float32),
                           labels=labels,
                           devices=tuple(devices or ["a"] * n))


class TestPredict:
    def test_ties_resolve_to_lowest_index(self):
        model = StubModel(np.zeros((5, 10)))
        ds = stub_dataset([0] * 5)
        assert predict(model, ds.features).tolist() == [0] * 5

    def test_empty_rejected(self):
        model = StubModel(np.zeros((0, 10)))
        with pytest.raises(UsageError):
            predict(model, np.zeros((0, 256, 65, 2), dtype=np.float32))

    def test_batching_matches_labels(self):
        want = [3, 1, 4, 1, 5, 9, 2, 6]
        logits = np.eye(10)[want] * 7.0
        preds = predict(StubModel(logits), stub_dataset(want).features,
                        batch_size=3)
        assert preds.tolist() == want


class TestEvaluate:
    def test_constant_predictor_on_balanced_data(self):
        labels = list(range(10)) * 3
        model = StubModel(np.zeros((30, 10)))
        result = evaluate(model, stub_dataset(labels))
        assert result.overall_accuracy == pytest.approx(0.10)

    def test_device_accuracies_average_to_overall(self):
        rng = np.random.default_rng(0)
        labels = rng.integers(0, 10, size=60)
        preds = rng.integers(0, 10, size=60)
        devices = rng.choice(["a", "b", "s1"], size=60).tolist()
        model = StubModel(np.eye(10)[preds] * 5.0)
        result = evaluate(model, stub_dataset(labels, devices))
        weighted = sum(result.per_device_accuracy[d] * devices.count(d)
                       for d in set(devices)) / 60
        assert abs(weighted - result.overall_accuracy) < 1e-9

    def test_confusion_rows_are_true_classes(self):
        labels = [0, 1, 1]
        preds = [0, 2, 1]
        model = StubModel(np.eye(10)[preds] * 5.0)
        result = evaluate(model, stub_dataset(labels))
        assert result.confusion.shape == (10, 10)
        assert result.confusion[0, 0] == 1
        assert result.confusion[1, 2] == 1
        assert result.confusion[1, 1] == 1
        assert result.confusion.sum() == 3
        np.testing.assert_array_equal(result.confusion.sum(axis=1)[:2], [1, 2])

    def test_per_class_accuracy_names(self):
        labels = [0, 0, 9]
        model = StubModel(np.eye(10)[[0, 1, 9]] * 5.0)
        result = evaluate(model, stub_dataset(labels))
        assert result.per_class_accuracy["airport"] == 0.5
        assert result.per_class_accuracy["tram"] == 1.0

    def test_empty_dataset_rejected(self):
        with pytest.raises(UsageError):
            evaluate(StubModel(np.zeros((0, 10))), stub_dataset([]))

    def test_text_and_csv_outputs(self, tmp_path):
        labels = [0, 1, 0, 1]
        model = StubModel(np.eye(10)[[0, 1, 1, 1]] * 5.0)
        result = evaluate(model, stub_dataset(labels, ["a", "a", "s1", "s1"]),
                          unseen_devices=("s1",))
        text = format_eval_text(result)
        assert "overall accuracy: 0.7500" in text
        assert "device s1 (unseen)" in text
        path = tmp_path / "r.csv"
        write_eval_csv(path, result)
        rows = list(csv.reader(open(path)))
        assert rows[0] == ["section", "key", "value"]
        assert ["device_unseen", "s1", repr(0.5)] in rows
        assert any(r[0] == "confusion" and r[1] == "airport" for r in rows)


class TestRanks:
    def test_winner_gets_rank_one(self):
        scores = np.array([[0.9] * 4, [0.5] * 4, [0.4] * 4])
        ranks = rank_matrix(scores)
        assert (ranks[0] == 1.0).all()

    def test_ties_average(self):
        ranks = rank_matrix(np.array([[0.5], [0.5], [0.5], [0.5]]))
        assert (ranks == 2.5).all()

    def test_columns_sum_to_constant(self):
        rng = np.random.default_rng(1)
        scores = rng.random((5, 9))
        ranks = rank_matrix(scores)
        np.testing.assert_allclose(ranks.sum(axis=0), 5 * 6 / 2)

    def test_shape_validated(self):
        with pytest.raises(UsageError):
            rank_matrix(np.zeros((1, 5)))
        with pytest.raises(UsageError):
            rank_matrix(np.zeros(5))


class TestFriedman:
    def test_three_by_four_hand_example(self):
        # ranks per subset: A = (1,1,2,1), B = (2,3,1,2), C = (3,2,3,3)
        scores = np.array([
            [0.9, 0.9, 0.5, 0.9],
            [0.8, 0.5, 0.9, 0.8],
            [0.5, 0.8, 0.4, 0.5],
        ])
        fr = friedman_test(scores)
        np.testing.assert_allclose(fr.avg_ranks, [1.25, 2.0, 2.75])
        assert abs(fr.statistic - 4.5) < 1e-9

    def test_all_tied_gives_zero(self):
        fr = friedman_test(np.full((4, 6), 0.7))
        assert fr.statistic == pytest.approx(0.0, abs=1e-12)
        assert (fr.avg_ranks == 2.5).all()

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(2)
        scores = rng.random((4, 12))
        a = friedman_test(scores)
        b = friedman_test(scores ** 3 + 2.0)
        np.testing.assert_array_equal(a.ranks, b.ranks)
        assert a.statistic == b.statistic

    def test_matches_scipy(self):
        from scipy.stats import friedmanchisquare

        rng = np.random.default_rng(3)
        scores = rng.random((4, 15))
        ours = friedman_test(scores).statistic
        theirs = friedmanchisquare(*[scores[i] for i in range(4)]).statistic
        assert abs(ours - theirs) < 1e-9


class TestNemenyi:
    def test_reference_value_k4_n20(self):
        expected = Q_ALPHA[0.05][4] * math.sqrt(4 * 5 / (6.0 * 20))
        assert nemenyi_cd(4, 20) == expected
        assert expected == pytest.approx(1.0488, abs=2e-4)

    @pytest.mark.parametrize("k", [2, 3, 5, 10])
    @pytest.mark.parametrize("alpha", [0.05, 0.10])
    def test_doubling_subsets_shrinks_by_sqrt2(self, k, alpha):
        a = nemenyi_cd(k, 24, alpha)
        b = nemenyi_cd(k, 48, alpha)
        assert abs(b - a / math.sqrt(2.0)) < 1e-12

    def test_out_of_table_rejected(self):
        with pytest.raises(UsageError):
            nemenyi_cd(1, 20)
        with pytest.raises(UsageError):
            nemenyi_cd(11, 20)
        with pytest.raises(UsageError):
            nemenyi_cd(4, 0)
        with pytest.raises(UsageError):
            nemenyi_cd(4, 20, alpha=0.01)

    def test_table_against_studentized_range(self):
        from scipy.stats import studentized_range

        for k in (2, 4, 10):
            q = studentized_range.ppf(0.95, k, np.inf) / math.sqrt(2.0)
            assert abs(q - Q_ALPHA[0.05][k]) < 1e-3

    def test_alpha_ten_is_looser(self):
        assert nemenyi_cd(5, 20, 0.10) < nemenyi_cd(5, 20, 0.05)


class TestSubsets:
    def test_five_percent_of_1200_is_60(self):
        subsets = draw_subsets(1200, n_subsets=20, fraction=0.05, seed=0)
        assert len(subsets) == 20
        assert all(len(s) == 60 for s in subsets)
        assert all(len(np.unique(s)) == 60 for s in subsets)

    def test_deterministic_and_distinct(self):
        a = draw_subsets(100, 5, 0.1, seed=3)
        b = draw_subsets(100, 5, 0.1, seed=3)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)
        assert any(not np.array_equal(a[0], s) for s in a[1:])

    def test_fraction_validated(self):
        with pytest.raises(UsageError):
            draw_subsets(10, 5, 0.0)
        with pytest.raises(UsageError):
            draw_subsets(0, 5, 0.5)

    def test_accuracy_row(self):
        correct = np.array([1, 1, 0, 0, 1], dtype=bool)
        row = subset_accuracy_row(correct, [np.array([0, 1]), np.array([2, 3])])
        np.testing.assert_allclose(row, [1.0, 0.0])


def ladder_scores():
    """4 methods x 20 subsets with avg ranks exactly (1.0, 2.1, 2.9, 4.0)."""
    scores = np.tile(np.array([[0.9], [0.8], [0.7], [0.6]]), (1, 20))
    scores[1, :2], scores[2, :2] = 0.7, 0.8      # methods 1 and 2 swap twice
    return scores


class TestRankReport:
    def test_always_winning_method(self):
        scores = np.vstack([np.full(20, 0.95), np.full(20, 0.5),
                            np.full(20, 0.4), np.full(20, 0.3)])
        report = rank_report(scores, ["ours", "a", "b", "c"])
        assert report.avg_ranks[0] == 1.0
        assert report.histogram[0].tolist() == [20, 0, 0, 0]

    def test_ladder_ranks_and_links(self):
        report = rank_report(ladder_scores(), ["m1", "m2", "m3", "m4"])
        np.testing.assert_allclose(report.avg_ranks, [1.0, 2.1, 2.9, 4.0])
        assert report.linked == [(1, 2)]
        assert report.histogram[1].tolist() == [0, 18, 2, 0]

    def test_name_count_validated(self):
        with pytest.raises(UsageError):
            rank_report(ladder_scores(), ["a", "b"])

    def test_csv_content(self, tmp_path):
        report = rank_report(ladder_scores(), ["m1", "m2", "m3", "m4"])
        path = tmp_path / "ranks.csv"
        write_rank_csv(path, report)
        rows = list(csv.reader(open(path)))
        assert rows[0][:3] == ["method", "avg_rank", "cd"]
        assert [r[0] for r in rows[1:]] == ["m1", "m2", "m3", "m4"]
        m2 = rows[2]
        assert float(m2[1]) == 2.1
        assert m2[6] == "m3"
        assert [int(v) for v in m2[7:]] == [0, 18, 2, 0]

    def test_svg_deterministic_and_labelled(self, tmp_path):
        report = rank_report(ladder_scores(), ["m1", "m2", "m3", "m4"])
        a, b = tmp_path / "a.svg", tmp_path / "b.svg"
        write_rank_svg(a, report)
        write_rank_svg(b, report)
        text = a.read_text()
        assert text.startswith("<svg")
        assert "m3" in text and "CD = " in text
        assert a.read_bytes() == b.read_bytes()
