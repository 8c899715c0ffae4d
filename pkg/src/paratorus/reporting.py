"""Per-iteration solver diagnostics and their CSV serialization."""

from __future__ import annotations

import io
from dataclasses import dataclass, field


def fmt(x) -> str:
    """Serialize a float with 17 significant digits (bit-faithful round trip)."""
    if isinstance(x, str):
        return x
    if isinstance(x, (int,)):
        return str(x)
    return format(float(x), ".17g")


@dataclass
class SolveReport:
    """Ordered per-iteration rows plus a terminal summary.

    Rows are dicts sharing the column list `columns`; `extras` holds terminal
    scalars (certificates, norms, certified gamma). Wall time is kept out of
    the data rows so identical configs serialize bit-identically.
    """

    columns: list
    rows: list = field(default_factory=list)
    status: str = "pending"
    extras: dict = field(default_factory=dict)
    wall_time: float = 0.0

    def add_row(self, **kwargs) -> None:
        row = {c: kwargs.get(c, "") for c in self.columns}
        self.rows.append(row)

    @property
    def iterations(self) -> int:
        return len(self.rows)

    def last(self, column):
        return self.rows[-1][column] if self.rows else None

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(["row_kind"] + self.columns) + "\n")
        for row in self.rows:
            buf.write(",".join(["iter"] + [fmt(row[c]) for c in self.columns]) + "\n")
        summary = ["summary", f"status={self.status}"]
        summary += [f"{k}={fmt(v)}" for k, v in sorted(self.extras.items())]
        buf.write(",".join(summary) + "\n")
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_csv())
