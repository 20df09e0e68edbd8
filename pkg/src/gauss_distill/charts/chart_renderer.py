"""
Static SVG line charts for training histories.

Draws train/validation loss and per-teacher entropy trajectories against the
epoch axis with a color-coded legend.
"""

from typing import List, Sequence, Tuple
from xml.sax.saxutils import escape

import numpy as np

from ..core.errors import UsageError
from .colors import ChartColors, ChartLayout

Series = Tuple[str, Sequence[float]]


class ChartRenderer:
    """Accumulates SVG elements for one chart.

    Values are mapped to the plot area with the y range taken from the data;
    epochs run left to right.
    """

    def __init__(self, width: int, height: int):
        """Initialize the chart renderer.

        Args:
            width: Image width in pixels
            height: Image height in pixels
        """
        self.width = width
        self.height = height
        self.elements: List[str] = []

    @property
    def plot_boundaries(self) -> Tuple[int, int, int, int]:
        """Calculate the actual plotting area within the margins."""
        left = ChartLayout.MARGINS["left"]
        top = ChartLayout.MARGINS["top"]
        right = self.width - ChartLayout.MARGINS["right"]
        bottom = self.height - ChartLayout.MARGINS["bottom"]
        return left, top, right, bottom

    def render(self, series: Sequence[Series], title: str) -> str:
        """Render all series into a complete SVG document."""
        self.elements = []
        boundaries = self.plot_boundaries
        low, high = self._value_range(series)
        points = max(len(values) for _, values in series)

        self._draw_border_and_grid(boundaries, low, high)
        self._draw_epoch_axis_labels(points, boundaries)
        for index, (_, values) in enumerate(series):
            color = ChartColors.get_series_color(index)
            self._draw_series_line(values, points, boundaries, low, high, color)
        self._draw_legend([name for name, _ in series], boundaries)
        self._draw_chart_title(title, boundaries)

        header = (
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" '
            f'height="{self.height}" viewBox="0 0 {self.width} {self.height}">'
        )
        background = (
            f'<rect width="{self.width}" height="{self.height}" '
            f'fill="{ChartColors.BACKGROUND}"/>'
        )
        return "\n".join([header, background, *self.elements, "</svg>"]) + "\n"

    @staticmethod
    def _value_range(series: Sequence[Series]) -> Tuple[float, float]:
        values = np.concatenate(
            [np.asarray(v, dtype=np.float64) for _, v in series if len(v)]
        )
        low, high = float(values.min()), float(values.max())
        if high - low < 1e-12:
            low, high = low - 0.5, high + 0.5
        return low, high

    def _draw_border_and_grid(
        self, boundaries: Tuple[int, int, int, int], low: float, high: float
    ) -> None:
        left, top, right, bottom = boundaries
        self.elements.append(
            f'<rect x="{left}" y="{top}" width="{right - left}" '
            f'height="{bottom - top}" fill="none" stroke="{ChartColors.BORDER}"/>'
        )
        for tick in range(ChartLayout.Y_AXIS_TICKS):
            fraction = tick / (ChartLayout.Y_AXIS_TICKS - 1)
            y = bottom - fraction * (bottom - top)
            value = low + fraction * (high - low)
            self.elements.append(
                f'<line x1="{left}" y1="{y:.1f}" x2="{right}" y2="{y:.1f}" '
                f'stroke="{ChartColors.GRID}" stroke-dasharray="2,3"/>'
            )
            self.elements.append(
                f'<text x="{left - 8}" y="{y:.1f}" fill="{ChartColors.TEXT}" '
                f'font-size="9" text-anchor="end" dominant-baseline="middle">'
                f"{value:.4g}</text>"
            )

    def _draw_epoch_axis_labels(
        self, points: int, boundaries: Tuple[int, int, int, int]
    ) -> None:
        left, _top, right, bottom = boundaries
        if points < 2:
            return
        step = max(1, (points - 1) // 10)
        for index in range(0, points, step):
            x = left + index / (points - 1) * (right - left)
            self.elements.append(
                f'<text x="{x:.1f}" y="{bottom + 14}" fill="{ChartColors.TEXT}" '
                f'font-size="9" text-anchor="middle">{index + 1}</text>'
            )

    def _draw_series_line(
        self,
        values: Sequence[float],
        points: int,
        boundaries: Tuple[int, int, int, int],
        low: float,
        high: float,
        color: str,
    ) -> None:
        left, top, right, bottom = boundaries
        span = max(points - 1, 1)
        coords = []
        for index, value in enumerate(values):
            x = left + index / span * (right - left)
            y = bottom - (float(value) - low) / (high - low) * (bottom - top)
            coords.append(f"{x:.1f},{y:.1f}")
        if len(coords) == 1:
            x, y = coords[0].split(",")
            self.elements.append(f'<circle cx="{x}" cy="{y}" r="2" fill="{color}"/>')
        elif coords:
            self.elements.append(
                f'<polyline points="{" ".join(coords)}" fill="none" '
                f'stroke="{color}" stroke-width="2"/>'
            )

    def _draw_legend(
        self, names: List[str], boundaries: Tuple[int, int, int, int]
    ) -> None:
        left, top, right, _bottom = boundaries
        per_row = max(1, (right - left) // ChartLayout.LEGEND_ITEM_WIDTH)
        for index, name in enumerate(names):
            color = ChartColors.get_series_color(index)
            x = left + (index % per_row) * ChartLayout.LEGEND_ITEM_WIDTH + 6
            y = top + 8 + (index // per_row) * ChartLayout.LEGEND_ROW_HEIGHT
            self.elements.append(
                f'<rect x="{x}" y="{y}" width="8" height="8" fill="{color}"/>'
            )
            self.elements.append(
                f'<text x="{x + 12}" y="{y + 7}" fill="{ChartColors.TEXT}" '
                f'font-size="8">{escape(name)}</text>'
            )

    def _draw_chart_title(
        self, title_text: str, boundaries: Tuple[int, int, int, int]
    ) -> None:
        left, top, right, _bottom = boundaries
        self.elements.append(
            f'<text x="{(left + right) / 2:.1f}" y="{top - 10}" '
            f'fill="{ChartColors.TITLE}" font-size="11" font-weight="bold" '
            f'text-anchor="middle">{escape(title_text)}</text>'
        )


def render_loss_chart(
    series: Sequence[Series],
    title: str,
    width: int = ChartLayout.DEFAULT_SIZE[0],
    height: int = ChartLayout.DEFAULT_SIZE[1],
) -> str:
    """SVG line chart of one or more per-epoch series.

    Raises:
        UsageError: If there is nothing to draw or a value is not finite
    """
    if not series or not any(len(values) for _, values in series):
        raise UsageError("Loss chart needs at least one non-empty series")
    for name, values in series:
        if not np.all(np.isfinite(np.asarray(values, dtype=np.float64))):
            raise UsageError(f"Series {name} holds non-finite values")
    return ChartRenderer(width, height).render(series, title)


def history_series(
    train_history: Sequence[float],
    val_history: Sequence[float],
    entropy_history: Sequence[Sequence[float]],
    teacher_names: Sequence[str],
) -> List[Series]:
    """Chart series for a checkpoint's histories: losses, then h_k per teacher."""
    series: List[Series] = [("train", list(train_history)), ("val", list(val_history))]
    for k, name in enumerate(teacher_names):
        series.append((f"h {name}", [float(h[k]) for h in entropy_history]))
    return series
