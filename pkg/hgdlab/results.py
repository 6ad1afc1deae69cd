import json
import math
import typing

__all__ = ["Table", "Chart"]


def _cell(value: typing.Any) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return "nan" if math.isnan(value) else f"{value:.4f}"
    return str(value)


class Table:
    """
    Fluent builder for tabular results.

    Usage:
        table = Table().set_headers(["defense", "accuracy"])
        table.add_row(["NA", 0.12]).add_row(["LGD", 0.71])
        print(table)           # JSON
        print(table.render())  # aligned plain text
    """

    def __init__(
        self,
        headers: list[str] | None = None,
        rows: list[list[typing.Any]] | None = None,
        title: str | None = None,
    ) -> None:
        self._headers = headers or []
        self._rows = rows or []
        self._title = title

    def set_headers(self, headers: list[str]) -> "Table":
        """Set column headers."""
        self._headers = headers
        return self

    def set_title(self, title: str) -> "Table":
        self._title = title
        return self

    def add_row(self, row: list[typing.Any]) -> "Table":
        """Add a data row."""
        if self._headers and len(row) != len(self._headers):
            raise ValueError(f"row has {len(row)} cells, table has {len(self._headers)} columns")
        self._rows.append(row)
        return self

    @property
    def rows(self) -> list[list[typing.Any]]:
        return [list(row) for row in self._rows]

    def build(self) -> dict[str, typing.Any]:
        """Build the final dictionary result."""
        result: dict[str, typing.Any] = {"type": "Table", "headers": self._headers, "rows": self._rows}
        if self._title:
            result["title"] = self._title
        return result

    def render(self) -> str:
        """Plain-text rendering with right-aligned numeric columns."""
        cells = [[_cell(value) for value in row] for row in self._rows]
        columns = len(self._headers) or max((len(row) for row in cells), default=0)
        widths = [0] * columns
        for row in [self._headers, *cells]:
            for index, text in enumerate(row[:columns]):
                widths[index] = max(widths[index], len(text))
        lines = []
        if self._title:
            lines.append(self._title)
        if self._headers:
            lines.append("  ".join(h.ljust(w) for h, w in zip(self._headers, widths)).rstrip())
            lines.append("  ".join("-" * w for w in widths))
        for raw, row in zip(self._rows, cells):
            parts = [
                c.rjust(w) if isinstance(v, (int, float)) and not isinstance(v, bool) else c.ljust(w)
                for v, c, w in zip(raw, row, widths)
            ]
            lines.append("  ".join(parts).rstrip())
        return "\n".join(lines) + "\n"

    def __str__(self) -> str:
        """Return JSON string."""
        return json.dumps(self.build(), indent=4)


class Chart:
    """
    Builder for chart results.

    Points carry a ``label`` (x position), a ``value`` and optionally a
    ``series`` name; bar charts group points with the same label.
    """

    def __init__(
        self,
        chart_type: str = "bar",
        data: list[dict[str, typing.Any]] | None = None,
        title: str = "",
    ) -> None:
        self._chart_type = chart_type
        self._data = data or []
        self._title = title

    def add_data(self, label: str, value: float, **metadata: typing.Any) -> "Chart":
        """Add a data point to the chart."""
        point = {"label": label, "value": value}
        point.update(metadata)
        self._data.append(point)
        return self

    @property
    def title(self) -> str:
        return self._title

    @property
    def data(self) -> list[dict[str, typing.Any]]:
        return [dict(point) for point in self._data]

    def build(self) -> dict[str, typing.Any]:
        """Build the final dictionary result."""
        return {"type": "Chart", "chart_type": self._chart_type, "title": self._title, "data": self._data}

    def __str__(self) -> str:
        """Return JSON string."""
        return json.dumps(self.build(), indent=4)
