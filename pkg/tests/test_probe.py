"""Tests for probe metrics, probe training and result aggregation."""

import random
from unittest.mock import patch

import numpy as np
import pytest

from gauss_distill.core.data_models import Labels
from gauss_distill.core.datastore import make_splits
from gauss_distill.core.errors import (
    DataFormatError,
    DegenerateTaskError,
    IncompleteGridError,
    ShapeError,
    UndefinedMetricError,
    UsageError,
)
from gauss_distill.core.probe import (
    ProbeConfig,
    RunRecord,
    accuracy,
    aggregate_runs,
    auroc,
    primary_metric,
    probe_predict,
    probe_records,
    r_squared,
    read_records_csv,
    seed_splits,
    train_probe,
)


def _grid(means):
    """Records for {(embedder, task): [value per seed]}."""
    return [
        RunRecord(embedder, task, seed, "accuracy", value)
        for (embedder, task), values in means.items()
        for seed, value in enumerate(values)
    ]


@pytest.fixture
def fast_probe():
    """Small probe with a short fixed schedule."""
    return ProbeConfig(
        hidden=16, lr=1e-2, seeds=(0,), batch_size=32, max_epochs=20, min_epochs=20
    )


@pytest.fixture
def blobs():
    """Two well separated Gaussian blobs in the plane."""
    rng = np.random.default_rng(3)
    labels = np.repeat([0, 1], 100)
    centers = np.where(labels[:, None] == 1, 5.0, -5.0)
    points = centers + 0.5 * rng.standard_normal((200, 2))
    return points, Labels("classification", labels)


class TestMetrics:
    """accuracy, auroc and r_squared tests."""

    def test_accuracy_examples(self):
        """Test identical, mismatched and partial agreement."""
        assert accuracy([0, 1, 1], [0, 1, 1]) == 1.0
        assert accuracy([1, 0], [0, 1]) == 0.0
        assert accuracy([0, 1, 1, 0], [0, 1, 0, 0]) == 0.75

    def test_accuracy_errors(self):
        """Test empty and misaligned inputs."""
        with pytest.raises(UndefinedMetricError):
            accuracy([], [])
        with pytest.raises(ShapeError):
            accuracy([0, 1], [0])

    def test_auroc_examples(self):
        """Test separated, pairwise-counted and all-tied scores."""
        assert auroc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
        assert auroc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == pytest.approx(0.75)
        assert auroc([0.3, 0.3, 0.3], [0, 1, 1]) == 0.5

    def test_auroc_needs_both_classes(self):
        """Test a single class makes AUROC undefined."""
        with pytest.raises(UndefinedMetricError):
            auroc([0.1, 0.2], [1, 1])

    def test_auroc_monotone_invariance(self, rng):
        """Test strictly increasing transforms leave AUROC unchanged."""
        scores = rng.uniform(0.0, 1.0, size=60)
        labels = rng.integers(0, 2, size=60)
        labels[:2] = [0, 1]
        base = auroc(scores, labels)

        for _ in range(100):
            a, b = rng.uniform(0.1, 5.0, size=2)
            transformed = a * scores + b * scores**3 + rng.normal()
            assert auroc(transformed, labels) == pytest.approx(base, abs=1e-12)

    def test_auroc_negation(self, rng):
        """Test negated scores give the complementary AUROC."""
        scores = rng.standard_normal(40)
        labels = np.arange(40) % 2

        assert auroc(-scores, labels) == pytest.approx(1.0 - auroc(scores, labels))

    def test_r_squared_examples(self):
        """Test perfect, mean and negated predictions."""
        targets = np.array([-1.0, 1.0, -2.0, 2.0])

        assert r_squared(targets, targets) == 1.0
        assert r_squared(np.zeros(4), targets) == pytest.approx(0.0)
        assert r_squared(-targets, targets) == pytest.approx(-3.0)

    def test_r_squared_undefined(self):
        """Test constant targets and single samples."""
        with pytest.raises(UndefinedMetricError):
            r_squared([1.0, 2.0], [3.0, 3.0])
        with pytest.raises(UndefinedMetricError):
            r_squared([1.0], [2.0])

    def test_primary_metric(self):
        """Test metric selection by task kind."""
        assert primary_metric(Labels("classification", np.array([0, 1]))) == "auroc"
        assert primary_metric(Labels("classification", np.array([0, 2, 1]))) == (
            "accuracy"
        )
        assert primary_metric(Labels("regression", np.array([0.5]))) == "r2"


class TestProbeConfig:
    """ProbeConfig tests."""

    def test_epoch_rule(self):
        """Test the epoch cap and floor."""
        cfg = ProbeConfig()

        assert cfg.epochs_for(5000) == 100
        assert cfg.epochs_for(20_000) == 50
        assert cfg.epochs_for(1_000_000) == 10
        assert ProbeConfig(min_epochs=1).epochs_for(1_000_000) == 1

    def test_validation(self):
        """Test widths and seeds are validated."""
        with pytest.raises(UsageError):
            ProbeConfig(hidden=0)
        with pytest.raises(UsageError):
            ProbeConfig(seeds=())


class TestTrainProbe:
    """train_probe tests."""

    def test_separable_blobs(self, blobs, fast_probe):
        """Test separable blobs reach perfect test accuracy."""
        points, labels = blobs
        splits = make_splits(200, seed=0)

        result = train_probe(points, labels, splits, fast_probe)

        assert result.metric_name == "auroc"
        assert result.test_metric == 1.0
        assert result.test_accuracy == 1.0
        predicted = probe_predict(result, points[splits.test])
        assert np.array_equal(predicted, labels.values[splits.test])

    def test_noise_labels_near_chance(self):
        """Test labels independent of the embeddings give chance AUROC."""
        rng = np.random.default_rng(8)
        embeddings = rng.standard_normal((1000, 4))
        labels = Labels("classification", rng.integers(0, 2, size=1000))
        splits = make_splits(1000, seed=1)
        cfg = ProbeConfig(hidden=16, batch_size=64, max_epochs=10)

        for seed in range(5):
            result = train_probe(embeddings, labels, splits, cfg, seed=seed)
            assert 0.35 <= result.test_metric <= 0.65

    def test_regression_identity(self):
        """Test y = first coordinate is recovered by a linear probe."""
        rng = np.random.default_rng(2)
        embeddings = rng.standard_normal((300, 3)) * [3.0, 1.0, 1.0] + 2.0
        labels = Labels("regression", embeddings[:, 0].copy())
        splits = make_splits(300, seed=0)
        cfg = ProbeConfig(depth=1, lr=1e-2, batch_size=32, max_epochs=50, min_epochs=50)

        result = train_probe(embeddings, labels, splits, cfg)

        assert result.metric_name == "r2"
        assert result.test_metric > 0.99
        predicted = probe_predict(result, embeddings[splits.test])
        assert r_squared(predicted, labels.values[splits.test]) > 0.99

    def test_embeddings_not_mutated(self, blobs, fast_probe):
        """Test probe training leaves the frozen embeddings untouched."""
        points, labels = blobs
        before = points.copy()

        train_probe(points, labels, make_splits(200, seed=0), fast_probe)

        assert np.array_equal(points, before)

    def test_seeded_runs_repeat(self, blobs, fast_probe):
        """Test the same seed gives the same probe."""
        points, labels = blobs
        splits = make_splits(200, seed=0)

        first = train_probe(points, labels, splits, fast_probe, seed=4)
        second = train_probe(points, labels, splits, fast_probe, seed=4)

        assert first.best_epoch == second.best_epoch
        assert all(
            np.array_equal(a, b)
            for a, b in zip(first.params.arrays(), second.params.arrays())
        )

    def test_single_class_split(self, fast_probe):
        """Test a single-class training split is a degenerate task."""
        labels = Labels("classification", np.zeros(50, dtype=int))

        with pytest.raises(DegenerateTaskError, match="single class"):
            train_probe(np.ones((50, 2)), labels, make_splits(50), fast_probe)

    def test_misaligned_labels(self, fast_probe):
        """Test labels must align with embedding rows."""
        labels = Labels("regression", np.arange(10.0))

        with pytest.raises(ShapeError):
            train_probe(np.ones((12, 2)), labels, make_splits(10), fast_probe)

    def test_probe_records_binary(self, blobs):
        """Test binary tasks get AUROC and accuracy records per seed."""
        points, labels = blobs
        cfg = ProbeConfig(hidden=8, seeds=(0, 1), max_epochs=3, min_epochs=3)

        records = probe_records("blobs-emb", points, "blobs", labels, cfg)

        assert [(r.seed, r.metric) for r in records] == [
            (0, "auroc"),
            (0, "accuracy"),
            (1, "auroc"),
            (1, "accuracy"),
        ]
        assert all(r.embedder == "blobs-emb" and r.task == "blobs" for r in records)

    def test_probe_records_split_per_seed(self, blobs):
        """Test every seed trains and scores on its own partition."""
        points, labels = blobs
        cfg = ProbeConfig(hidden=8, seeds=(0, 1, 2), max_epochs=2, min_epochs=2)

        with patch("gauss_distill.core.probe.train_probe", wraps=train_probe) as spy:
            probe_records("blobs-emb", points, "blobs", labels, cfg, split_seed=9)

        test_sets = [tuple(call.args[2].test) for call in spy.call_args_list]
        assert len(set(test_sets)) == 3
        assert test_sets[1] == tuple(seed_splits(200, 9, 1).test)


class TestSeedSplits:
    """seed_splits tests."""

    def test_seeds_give_different_test_sets(self):
        """Test two probe seeds draw different test rows."""
        first = seed_splits(200, split_seed=0, seed=0)
        second = seed_splits(200, split_seed=0, seed=1)

        assert not np.array_equal(first.test, second.test)
        assert len(first.test) == len(second.test) == 40

    def test_same_seed_same_split(self):
        """Test embedders probed under one seed share the partition."""
        first = seed_splits(200, split_seed=5, seed=2)
        second = seed_splits(200, split_seed=5, seed=2)

        assert np.array_equal(first.train, second.train)
        assert np.array_equal(first.test, second.test)

    def test_split_seed_matters(self):
        """Test the split seed changes the partition for a fixed probe seed."""
        first = seed_splits(200, split_seed=0, seed=0)
        second = seed_splits(200, split_seed=1, seed=0)

        assert not np.array_equal(first.test, second.test)


class TestAggregateRuns:
    """aggregate_runs tests."""

    def test_dominating_embedder(self):
        """Test an embedder best on every task has average rank 1."""
        report = aggregate_runs(
            _grid(
                {
                    ("best", "t1"): [0.9, 0.9],
                    ("best", "t2"): [0.8, 0.8],
                    ("other", "t1"): [0.5, 0.6],
                    ("other", "t2"): [0.4, 0.4],
                }
            )
        )

        assert report.average_ranks["accuracy"] == {"best": 1.0, "other": 2.0}

    def test_ties_share_ranks(self):
        """Test tied means share the average of their ranks."""
        report = aggregate_runs(_grid({("a", "t"): [0.7], ("b", "t"): [0.7]}))

        assert report.ranks[("t", "accuracy")] == {"a": 1.5, "b": 1.5}

    def test_hand_ranked_grid(self):
        """Test three embedders on two tasks against hand-computed ranks."""
        report = aggregate_runs(
            _grid(
                {
                    ("e1", "t1"): [0.9],
                    ("e2", "t1"): [0.8],
                    ("e3", "t1"): [0.7],
                    ("e1", "t2"): [0.5],
                    ("e2", "t2"): [0.9],
                    ("e3", "t2"): [0.5],
                }
            )
        )

        assert report.ranks[("t2", "accuracy")] == {"e1": 2.5, "e2": 1.0, "e3": 2.5}
        assert report.average_ranks["accuracy"] == {"e1": 1.75, "e2": 1.5, "e3": 2.75}
        assert report.mean_over_tasks("e1", "accuracy") == pytest.approx(0.7)

    def test_mean_and_std(self):
        """Test std uses the n - 1 denominator."""
        report = aggregate_runs(_grid({("a", "t"): [1.0, 2.0, 3.0]}))

        cell = report.cells[("a", "t", "accuracy")]
        assert (cell.mean, cell.std, cell.n_seeds) == (2.0, 1.0, 3)

    def test_order_invariant(self):
        """Test shuffling the input leaves the report unchanged."""
        records = _grid(
            {
                ("a", "t1"): [0.1, 0.5, 0.3],
                ("b", "t1"): [0.2, 0.2, 0.9],
                ("a", "t2"): [0.6, 0.4, 0.5],
                ("b", "t2"): [0.1, 0.3, 0.2],
            }
        )
        reference = aggregate_runs(records)

        for seed in range(10):
            shuffled = records[:]
            random.Random(seed).shuffle(shuffled)
            report = aggregate_runs(shuffled)
            assert report.cells == reference.cells
            assert report.ranks == reference.ranks
            assert report.to_csv_text() == reference.to_csv_text()

    def test_missing_cell(self):
        """Test an incomplete grid names the missing seeds."""
        records = _grid({("a", "t"): [0.1, 0.2], ("b", "t"): [0.3]})

        with pytest.raises(IncompleteGridError, match=r"\[1\]"):
            aggregate_runs(records)

    def test_duplicate_cell(self):
        """Test the same seed twice is rejected."""
        records = _grid({("a", "t"): [0.1]}) * 2

        with pytest.raises(IncompleteGridError, match="Duplicate"):
            aggregate_runs(records)

    def test_empty(self):
        """Test nothing to aggregate is an error."""
        with pytest.raises(IncompleteGridError):
            aggregate_runs([])


class TestMetricsReportFiles:
    """MetricsReport serialization tests."""

    def test_csv_round_trip(self, tmp_path):
        """Test written records read back unchanged."""
        records = _grid({("a", "t"): [0.125, 1 / 3], ("b", "t"): [0.5, 0.25]})
        report = aggregate_runs(records)
        path = tmp_path / "metrics.csv"

        report.write_csv(path)

        assert read_records_csv(path) == report.records
        assert path.read_text().splitlines()[0] == "embedder,task,seed,metric,value"

    def test_json_summary(self, tmp_path):
        """Test the aggregated JSON layout."""
        report = aggregate_runs(_grid({("a", "t"): [0.4, 0.6], ("b", "t"): [0.1, 0.3]}))

        summary = report.to_json_dict()["metrics"]["accuracy"]

        assert summary["average_rank"] == {"a": 1.0, "b": 2.0}
        assert summary["ranks"] == {"t": {"a": 1.0, "b": 2.0}}
        assert summary["mean_over_tasks"]["a"] == pytest.approx(0.5)
        assert summary["cells"][0]["n_seeds"] == 2

    def test_format_table(self):
        """Test the text table lists every embedder."""
        report = aggregate_runs(_grid({("alpha", "t"): [0.4], ("beta", "t"): [0.1]}))

        table = report.format_table("accuracy")

        assert "alpha" in table and "beta" in table
        assert "avg rank" in table.splitlines()[0]

    def test_bad_columns(self, tmp_path):
        """Test CSVs with other columns are rejected."""
        path = tmp_path / "other.csv"
        path.write_text("name,score\nx,1\n")

        with pytest.raises(DataFormatError):
            read_records_csv(path)
