"""Tests for SVG loss charts."""

import numpy as np
import pytest

from gauss_distill.charts.chart_renderer import (
    ChartRenderer,
    history_series,
    render_loss_chart,
)
from gauss_distill.charts.colors import ChartColors, ChartLayout
from gauss_distill.core.errors import UsageError


class TestChartColors:
    """ChartColors tests."""

    def test_palette_cycles(self):
        """Test series indices wrap around the palette."""
        size = len(ChartColors.SERIES_PALETTE)

        assert ChartColors.get_series_color(0) == ChartColors.SERIES_PALETTE[0]
        assert ChartColors.get_series_color(size + 2) == ChartColors.SERIES_PALETTE[2]


class TestChartRenderer:
    """ChartRenderer tests."""

    def test_plot_boundaries(self):
        """Test the plot area sits inside the margins."""
        renderer = ChartRenderer(640, 360)

        left, top, right, bottom = renderer.plot_boundaries

        assert (left, top) == (60, 35)
        assert right == 640 - ChartLayout.MARGINS["right"]
        assert bottom == 360 - ChartLayout.MARGINS["bottom"]

    def test_document_structure(self):
        """Test one polyline per series inside a complete SVG document."""
        series = [("train", [3.0, 2.0, 1.5]), ("val", [3.1, 2.4])]

        svg = render_loss_chart(series, "nll")

        assert svg.startswith("<svg")
        assert svg.rstrip().endswith("</svg>")
        assert svg.count("<polyline") == 2
        assert ChartColors.SERIES_PALETTE[1] in svg
        assert ">train<" in svg and ">val<" in svg

    def test_title_is_escaped(self):
        """Test markup in titles cannot break the document."""
        svg = render_loss_chart([("a", [1.0, 2.0])], "<b> & co")

        assert "&lt;b&gt; &amp; co" in svg
        assert "<b>" not in svg

    def test_constant_series(self):
        """Test a flat history still renders."""
        svg = render_loss_chart([("flat", [1.0, 1.0, 1.0])], "flat")

        assert "nan" not in svg.lower()

    def test_custom_size(self):
        """Test width and height reach the SVG header."""
        svg = render_loss_chart([("a", [1.0])], "t", width=300, height=200)

        assert 'width="300"' in svg and 'height="200"' in svg


class TestChartValidation:
    """render_loss_chart input checks."""

    def test_no_series(self):
        """Test an empty chart is refused."""
        with pytest.raises(UsageError):
            render_loss_chart([], "empty")

    def test_only_empty_series(self):
        """Test series without points are refused."""
        with pytest.raises(UsageError):
            render_loss_chart([("a", [])], "empty")

    def test_non_finite_value(self):
        """Test NaN values are named in the error."""
        with pytest.raises(UsageError, match="val"):
            render_loss_chart([("train", [1.0]), ("val", [np.nan])], "bad")


class TestHistorySeries:
    """history_series tests."""

    def test_series_per_teacher(self):
        """Test losses come first, then one entropy series per teacher."""
        series = history_series(
            [2.0, 1.0], [2.5, 1.5], [(0.5, 0.7), (0.4, 0.6)], ["alpha", "beta"]
        )

        assert [name for name, _ in series] == ["train", "val", "h alpha", "h beta"]
        assert series[3][1] == [0.7, 0.6]

    def test_no_entropy(self):
        """Test baseline objectives chart losses only."""
        series = history_series([1.0], [1.0], [], [])

        assert len(series) == 2
