"""Training sets and prediction intervals."""

from __future__ import annotations

import bisect
import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DuplicateInput, EmptyDataset, PaddingTooSmall, ParseError


@dataclass(frozen=True)
class Dataset:
    """Training pairs with strictly increasing inputs."""

    x: tuple
    y: tuple

    def __post_init__(self):
        x = tuple(float(v) for v in self.x)
        y = tuple(float(v) for v in self.y)
        if len(x) == 0:
            raise EmptyDataset("dataset has no points")
        if len(x) != len(y):
            raise ParseError(f"{len(x)} inputs but {len(y)} labels")
        if not all(math.isfinite(v) for v in x + y):
            raise ParseError("non-finite value in dataset")
        for k in range(len(x) - 1):
            if x[k] == x[k + 1]:
                raise DuplicateInput(f"duplicate input x={x[k]}")
            if x[k] > x[k + 1]:
                raise ParseError("inputs must be sorted; use Dataset.from_points")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @classmethod
    def from_points(cls, points) -> "Dataset":
        pts = sorted((float(p[0]), float(p[1])) for p in points)
        return cls(tuple(p[0] for p in pts), tuple(p[1] for p in pts))

    @property
    def M(self) -> int:
        return len(self.x)

    @property
    def xs(self) -> np.ndarray:
        return np.array(self.x)

    @property
    def ys(self) -> np.ndarray:
        return np.array(self.y)

    @property
    def points(self) -> list:
        return [[a, b] for a, b in zip(self.x, self.y)]

    def to_json(self) -> dict:
        return {"points": self.points}

    @classmethod
    def from_json(cls, obj: dict) -> "Dataset":
        try:
            pts = obj["points"]
        except (KeyError, TypeError) as exc:
            raise ParseError('expected {"points": [[x, y], ...]}') from exc
        for k, p in enumerate(pts):
            if not isinstance(p, (list, tuple)) or len(p) != 2:
                raise ParseError(f"point {k} is not an [x, y] pair")
        return cls.from_points(pts)


def load_dataset(path, format: str | None = None) -> Dataset:
    """Read a dataset from CSV (``x,y`` rows, optional header) or JSON."""
    path = Path(path)
    fmt = format or ("json" if path.suffix.lower() == ".json" else "csv")
    if fmt == "json":
        try:
            obj = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(str(exc), line=exc.lineno) from exc
        return Dataset.from_json(obj)
    if fmt != "csv":
        raise ParseError(f"unknown dataset format {fmt!r}")
    points = []
    with path.open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if lineno == 1 and [c.strip().lower() for c in row] == ["x", "y"]:
                continue
            if len(row) != 2:
                raise ParseError(f"expected 2 columns, got {len(row)}", line=lineno)
            try:
                points.append((float(row[0]), float(row[1])))
            except ValueError as exc:
                raise ParseError(f"non-numeric value in {row!r}", line=lineno) from exc
    if not points:
        raise EmptyDataset(f"{path} contains no data rows")
    return Dataset.from_points(points)


def save_dataset(ds: Dataset, path, format: str | None = None) -> None:
    path = Path(path)
    fmt = format or ("json" if path.suffix.lower() == ".json" else "csv")
    if fmt == "json":
        path.write_text(json.dumps(ds.to_json()))
    else:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y"])
            for a, b in zip(ds.x, ds.y):
                w.writerow([repr(a), repr(b)])


def default_padding(ds: Dataset) -> float:
    return 1.5 * max(abs(v) for v in ds.x) + 1.0


@dataclass(frozen=True)
class PredictionIntervals:
    """The ``M + 1`` intervals ``[x_j, x_{j+1}]`` with ``x_0 = -L``, ``x_{M+1} = L``."""

    L: float
    edges: tuple

    @property
    def intervals(self) -> list:
        return [(self.edges[j], self.edges[j + 1]) for j in range(len(self.edges) - 1)]

    def __len__(self):
        return len(self.edges) - 1

    def __getitem__(self, j):
        return (self.edges[j], self.edges[j + 1])

    def locate(self, x: float) -> int:
        """Index of the interval containing ``x``; shared endpoints go left."""
        if x < -self.L or x > self.L:
            raise ValueError(f"x={x} outside [-L, L]")
        j = bisect.bisect_left(self.edges, x) - 1
        return min(max(j, 0), len(self) - 1)


def make_intervals(ds: Dataset, L: float | None = None) -> PredictionIntervals:
    if L is None:
        L = default_padding(ds)
    L = float(L)
    if L <= max(abs(v) for v in ds.x):
        raise PaddingTooSmall(f"L={L} must exceed max|x_j|={max(abs(v) for v in ds.x)}")
    return PredictionIntervals(L, (-L,) + ds.x + (L,))
