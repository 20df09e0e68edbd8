"""Tests for the core data structures, error hierarchy and CPU reader."""

from unittest.mock import Mock, patch

import numpy as np
import pytest

from gauss_distill.core.cpu_reader import CPUReader, CPUReaderError
from gauss_distill.core.data_models import EmbeddingDataset, Labels
from gauss_distill.core.errors import (
    DataFormatError,
    GaussDistillError,
    InvalidValueError,
    NumericFailure,
    ShapeError,
    TrainingAborted,
    UnknownKeyError,
    UsageError,
)


class TestLabels:
    """Labels tests."""

    def test_classification_ids(self):
        """Test class ids are stored as integers with a class count."""
        labels = Labels("classification", np.array([0.0, 2.0, 1.0]))

        assert labels.values.dtype == np.int64
        assert labels.n_classes == 3
        assert labels.is_binary is False

    def test_binary(self):
        """Test two classes make a binary task."""
        assert Labels("classification", np.array([1, 0, 1])).is_binary is True

    def test_regression_has_no_classes(self):
        """Test regression labels report zero classes."""
        labels = Labels("regression", np.array([0.5, -1.5]))

        assert labels.n_classes == 0
        assert labels.values.dtype == np.float64

    def test_rejects_fractional_ids(self):
        """Test class ids must be whole numbers."""
        with pytest.raises(DataFormatError):
            Labels("classification", np.array([0.5, 1.0]))

    def test_rejects_unknown_kind(self):
        """Test the label kind is validated."""
        with pytest.raises(DataFormatError, match="ordinal"):
            Labels("ordinal", np.array([1, 2]))

    def test_rejects_non_finite_targets(self):
        """Test regression targets must be finite."""
        with pytest.raises(DataFormatError):
            Labels("regression", np.array([np.nan]))

    def test_subset(self):
        """Test subsetting keeps the kind."""
        labels = Labels("classification", np.array([0, 1, 2, 1]))

        subset = labels.subset(np.array([1, 3]))

        assert subset.kind == "classification"
        np.testing.assert_array_equal(subset.values, [1, 1])


class TestEmbeddingDataset:
    """EmbeddingDataset tests."""

    def test_properties(self, linear_dataset):
        """Test derived sizes and names."""
        assert linear_dataset.n == 80
        assert linear_dataset.input_dim == 5
        assert linear_dataset.teacher_names == ["alpha", "beta"]
        assert linear_dataset.teacher_dims == [3, 2]
        assert len(linear_dataset.teachers()) == 2

    def test_row_mismatch(self):
        """Test every teacher must share the base row count."""
        with pytest.raises(ShapeError, match="beta"):
            EmbeddingDataset(np.zeros((4, 2)), [("beta", np.zeros((3, 2)))])

    def test_duplicate_names(self):
        """Test teacher names are unique."""
        view = np.zeros((2, 2))
        with pytest.raises(DataFormatError, match="unique"):
            EmbeddingDataset(np.zeros((2, 2)), [("a", view), ("a", view)])

    def test_sparse_class_ids(self):
        """Test class ids must be dense in [0, C)."""
        labels = Labels("classification", np.array([0, 2, 2]))

        with pytest.raises(DataFormatError, match="dense"):
            EmbeddingDataset(np.zeros((3, 1)), [], labels)

    def test_non_finite_features(self):
        """Test NaN features are rejected on construction."""
        with pytest.raises(NumericFailure):
            EmbeddingDataset(np.array([[np.nan]]), [])

    def test_select_teachers_reorders(self, linear_dataset):
        """Test selecting teachers keeps the requested order."""
        selected = linear_dataset.select_teachers(["beta", "alpha"])

        assert selected.teacher_names == ["beta", "alpha"]
        assert selected.teacher_dims == [2, 3]

    def test_select_unknown_teacher(self, linear_dataset):
        """Test unknown names are reported."""
        with pytest.raises(DataFormatError, match="gamma"):
            linear_dataset.select_teachers(["gamma"])


class TestErrors:
    """Error hierarchy tests."""

    def test_exit_codes(self):
        """Test each error family maps to its exit code."""
        assert UsageError("x").exit_code == 1
        assert DataFormatError("x").exit_code == 2
        assert NumericFailure("x").exit_code == 3
        assert TrainingAborted("x").exit_code == 3

    def test_key_errors_name_the_key(self):
        """Test configuration errors carry the offending key."""
        assert "trian.lr" in str(UnknownKeyError("trian.lr"))
        error = InvalidValueError("train.lr", "abc", "not a number")
        assert error.key == "train.lr"
        assert "'abc'" in str(error)

    def test_training_aborted_carries_checkpoint(self):
        """Test the last good checkpoint travels with the abort."""
        marker = object()

        error = TrainingAborted("NaN", checkpoint=marker)

        assert error.checkpoint is marker
        assert isinstance(error, GaussDistillError)


class TestCPUReader:
    """CPUReader tests."""

    @patch("builtins.__import__")
    def test_process_cpu_seconds(self, mock_import, mock_psutil):
        """Test process CPU time sums user and system time."""
        mock_import.return_value = mock_psutil

        reader = CPUReader()

        assert reader.process_cpu_seconds() == 1.75

    def test_psutil_import_failure(self):
        """Test behavior when psutil is not available."""
        real_import = __import__

        def fake_import(name, *args, **kwargs):
            if name == "psutil":
                raise ImportError("No module named psutil")
            return real_import(name, *args, **kwargs)

        with patch("builtins.__import__", side_effect=fake_import):
            with pytest.raises(CPUReaderError, match="Install psutil"):
                CPUReader()

    @patch("builtins.__import__")
    def test_process_cpu_seconds_wraps_psutil_errors(self, mock_import):
        """Test psutil exception handling."""
        mock_psutil = Mock()
        mock_psutil.Process.return_value.cpu_times.side_effect = Exception("denied")
        mock_import.return_value = mock_psutil

        reader = CPUReader()

        with pytest.raises(CPUReaderError, match="Failed to read process CPU time"):
            reader.process_cpu_seconds()

    @patch("builtins.__import__")
    def test_get_core_count(self, mock_import, mock_psutil):
        """Test get_core_count delegates to psutil."""
        mock_import.return_value = mock_psutil

        reader = CPUReader()

        assert reader.get_core_count() == 4
        mock_psutil.cpu_count.assert_called_once_with(logical=True)

    @patch("builtins.__import__")
    def test_get_core_count_unknown(self, mock_import):
        """Test get_core_count returns 0 when psutil cannot determine a count."""
        mock_psutil = Mock()
        mock_psutil.cpu_count.return_value = None
        mock_import.return_value = mock_psutil

        reader = CPUReader()

        assert reader.get_core_count() == 0

    @patch("builtins.__import__")
    def test_get_core_count_wraps_psutil_errors(self, mock_import):
        """Test get_core_count exception handling."""
        mock_psutil = Mock()
        mock_psutil.cpu_count.side_effect = Exception("psutil error")
        mock_import.return_value = mock_psutil

        reader = CPUReader()

        with pytest.raises(CPUReaderError, match="Failed to get CPU core count"):
            reader.get_core_count()


class TestCPUReaderIntegration:
    """Integration tests against the real psutil."""

    def test_real_readings(self):
        """Test process CPU time is monotone and the core count positive."""
        try:
            reader = CPUReader()
            first = reader.process_cpu_seconds()
            sum(i * i for i in range(100_000))
            second = reader.process_cpu_seconds()

            assert second >= first >= 0.0
            assert reader.get_core_count() > 0
        except CPUReaderError:
            pytest.skip("CPU readings not available in test environment")
