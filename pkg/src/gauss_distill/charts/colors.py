"""
Chart color schemes and layout configuration.

Centralizes visual styling constants for consistent theming.
"""


class ChartColors:
    """Dark color scheme for loss charts, one palette entry per series."""

    BACKGROUND = "#0f1115"
    BORDER = "#2a2f3a"
    GRID = "#1c2029"
    TEXT = "#9aa0aa"
    TITLE = "#d7dde7"

    SERIES_PALETTE = [
        "#6fa8ff",
        "#ff6b6b",
        "#4ecdc4",
        "#feca57",
        "#96ceb4",
        "#ff9ff3",
        "#54a0ff",
        "#5f27cd",
        "#00d2d3",
        "#ff9f43",
        "#10ac84",
        "#a55eea",
    ]

    @classmethod
    def get_series_color(cls, series_index: int) -> str:
        """Get color for a series, cycling through the palette if needed."""
        return cls.SERIES_PALETTE[series_index % len(cls.SERIES_PALETTE)]


class ChartLayout:
    """Spacing and margins for chart rendering."""

    MARGINS = {"left": 60, "right": 10, "top": 35, "bottom": 28}
    Y_AXIS_TICKS = 5
    LEGEND_ITEM_WIDTH = 110  # Pixels per legend item
    LEGEND_ROW_HEIGHT = 15  # Pixels per legend row
    DEFAULT_SIZE = (640, 360)
