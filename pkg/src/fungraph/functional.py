"""Grid-discretized functional data: grids, datasets, quadrature and file I/O.

Functions are stored by their values on a uniform midpoint grid over
``[a, b]``; inner products use the rectangle rule with weight
``(b - a) / T``.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionError, InsufficientSamplesError, ParseError, ValidationError

MAX_GRID_POINTS = 10_000
BINARY_MAGIC = b"FGM1"


@dataclass(frozen=True)
class Grid:
    """Uniform grid of ``T`` cell midpoints on ``[a, b]``.

    Point ``k`` sits at ``a + (k + 1/2) (b - a) / T``, so every point lies in
    the closed interval and consecutive spacing equals the quadrature weight.
    """

    a: float = 0.0
    b: float = 1.0
    T: int = 100

    def __post_init__(self):
        if not (np.isfinite(self.a) and np.isfinite(self.b)) or self.b <= self.a:
            raise ValidationError(f"grid needs finite a < b, got a={self.a}, b={self.b}")
        if int(self.T) != self.T or self.T < 2:
            raise ValidationError(f"grid needs T >= 2 points, got {self.T}")
        if self.T > MAX_GRID_POINTS:
            raise ValidationError(f"T={self.T} exceeds the grid cap of {MAX_GRID_POINTS}")
        object.__setattr__(self, "T", int(self.T))

    @property
    def points(self) -> np.ndarray:
        return self.a + (np.arange(self.T) + 0.5) * self.delta

    @property
    def delta(self) -> float:
        return (self.b - self.a) / self.T

    def to_json(self) -> dict:
        return {"a": float(self.a), "b": float(self.b), "T": int(self.T)}

    @classmethod
    def from_json(cls, obj: dict) -> "Grid":
        unknown = set(obj) - {"a", "b", "T"}
        if unknown:
            raise ParseError(f"unknown grid keys: {sorted(unknown)}")
        return cls(float(obj.get("a", 0.0)), float(obj.get("b", 1.0)), int(obj["T"]))


@dataclass(frozen=True)
class FunctionalDataset:
    """``n`` samples of ``p`` curves observed on a common grid.

    ``values`` has shape ``(n, p, T)`` indexed as (sample, node, time).
    """

    grid: Grid
    values: np.ndarray
    node_labels: Optional[tuple] = None

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, order="C")
        if values.ndim != 3:
            raise DimensionError(f"dataset values must be n x p x T, got shape {values.shape}")
        n, p, T = values.shape
        if n < 1:
            raise InsufficientSamplesError("no samples")
        if p < 2:
            raise DimensionError(f"a graph needs p >= 2 nodes, got {p}")
        if T != self.grid.T:
            raise DimensionError(f"values have {T} time points but grid has {self.grid.T}")
        if not np.all(np.isfinite(values)):
            raise ValidationError("dataset contains non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if self.node_labels is not None:
            labels = tuple(str(s) for s in self.node_labels)
            if len(labels) != p:
                raise DimensionError(f"{len(labels)} node labels for {p} nodes")
            object.__setattr__(self, "node_labels", labels)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    def node(self, j: int) -> "FunctionMatrix":
        return FunctionMatrix(self.grid, self.values[:, j, :])

    def permute_nodes(self, order: Sequence[int]) -> "FunctionalDataset":
        order = list(order)
        labels = None if self.node_labels is None else tuple(self.node_labels[k] for k in order)
        return FunctionalDataset(self.grid, self.values[:, order, :], labels)


@dataclass(frozen=True)
class FunctionMatrix:
    """The ``n x T`` curves of a single node."""

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != self.grid.T:
            raise DimensionError(
                f"function matrix must be n x {self.grid.T}, got shape {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise ValidationError("function matrix contains non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.shape[0]


def inner_product(f, g, grid: Grid) -> float:
    """Rectangle-rule approximation of the L2 inner product on ``grid``."""
    f = np.asarray(f, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if f.shape != (grid.T,) or g.shape != (grid.T,):
        raise DimensionError(
            f"functions must be sampled on the {grid.T}-point grid, got {f.shape} and {g.shape}"
        )
    return float(grid.delta * np.dot(f, g))


def gram_matrix(functions: np.ndarray, grid: Grid) -> np.ndarray:
    """Pairwise inner products of the rows of ``functions``."""
    functions = np.asarray(functions, dtype=np.float64)
    return grid.delta * functions @ functions.T


def center_dataset(ds: FunctionalDataset) -> FunctionalDataset:
    """Subtract the pointwise sample mean of every node."""
    if ds.n < 2:
        raise InsufficientSamplesError(f"centering needs at least 2 samples, got {ds.n}")
    values = ds.values - ds.values.mean(axis=0, keepdims=True)
    return FunctionalDataset(ds.grid, values, ds.node_labels)


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------


def _infer_format(path: Path, fmt: Optional[str]) -> str:
    if fmt is not None:
        fmt = fmt.lower()
        if fmt not in ("csv", "binary"):
            raise ValidationError(f"unknown dataset format {fmt!r}; use 'csv' or 'binary'")
        return fmt
    return "csv" if path.suffix.lower() == ".csv" else "binary"


def grid_sidecar(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".grid.json")


def save_dataset(ds: FunctionalDataset, path, fmt: Optional[str] = None) -> None:
    """Write ``ds`` as CSV (plus a grid sidecar JSON) or as ``FGM1`` binary."""
    path = Path(path)
    fmt = _infer_format(path, fmt)
    if fmt == "binary":
        n, p, T = ds.values.shape
        with open(path, "wb") as fh:
            fh.write(BINARY_MAGIC)
            fh.write(struct.pack("<QQQ", n, p, T))
            fh.write(ds.values.astype("<f8").tobytes(order="C"))
        meta = ds.grid.to_json()
        if ds.node_labels is not None:
            meta["node_labels"] = list(ds.node_labels)
        grid_sidecar(path).write_text(json.dumps(meta, sort_keys=True) + "\n")
        return

    T = ds.grid.T
    labels = ds.node_labels or tuple(str(j + 1) for j in range(ds.p))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sample", "node"] + [f"t_{k + 1}" for k in range(T)])
        for i in range(ds.n):
            for j in range(ds.p):
                writer.writerow([i + 1, labels[j]] + [repr(float(v)) for v in ds.values[i, j]])
    meta = ds.grid.to_json()
    grid_sidecar(path).write_text(json.dumps(meta, sort_keys=True) + "\n")


def _read_sidecar(path: Path, T: int) -> tuple[Grid, Optional[tuple]]:
    side = grid_sidecar(path)
    if not side.exists():
        return Grid(0.0, 1.0, T), None
    try:
        meta = json.loads(side.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{side}: invalid JSON ({exc})") from exc
    labels = meta.pop("node_labels", None)
    grid = Grid.from_json(meta)
    if grid.T != T:
        raise ParseError(f"{side}: grid has T={grid.T} but data rows have {T} values")
    return grid, None if labels is None else tuple(labels)


def load_dataset(path, fmt: Optional[str] = None) -> FunctionalDataset:
    """Read a dataset written by :func:`save_dataset` (or a conforming CSV)."""
    path = Path(path)
    if not path.exists():
        raise ParseError(f"{path}: no such file")
    fmt = _infer_format(path, fmt)
    if fmt == "binary":
        return _load_binary(path)
    return _load_csv(path)


def _load_binary(path: Path) -> FunctionalDataset:
    raw = path.read_bytes()
    if len(raw) == 0:
        raise ParseError(f"{path}: no samples (empty file)")
    if raw[:4] != BINARY_MAGIC:
        raise ParseError(f"{path}: bad magic bytes {raw[:4]!r}, expected {BINARY_MAGIC!r}")
    if len(raw) < 28:
        raise ParseError(f"{path}: truncated header")
    n, p, T = struct.unpack("<QQQ", raw[4:28])
    expected = 28 + 8 * n * p * T
    if len(raw) != expected:
        raise ParseError(f"{path}: expected {expected} bytes for n={n}, p={p}, T={T}, got {len(raw)}")
    if n == 0:
        raise ParseError(f"{path}: no samples")
    values = np.frombuffer(raw, dtype="<f8", offset=28).reshape(n, p, T)
    grid, labels = _read_sidecar(path, T)
    return FunctionalDataset(grid, values.astype(np.float64), labels)


def _load_csv(path: Path) -> FunctionalDataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(f"{path}: no samples (empty file)")
    header = [h.strip() for h in rows[0]]
    if len(header) < 4 or header[0] != "sample" or header[1] != "node":
        raise ParseError(f"{path}: malformed header, expected 'sample,node,t_1,...,t_T'")
    T = len(header) - 2
    for col, name in enumerate(header[2:], start=3):
        if name != f"t_{col - 2}":
            raise ParseError(f"{path}: malformed header at column {col}: {name!r}")
    body = [r for r in rows[1:] if r]
    if not body:
        raise ParseError(f"{path}: no samples")

    samples: dict[str, int] = {}
    nodes: dict[str, int] = {}
    cells: dict[tuple[int, int], np.ndarray] = {}
    for r, row in enumerate(body, start=2):
        if len(row) != T + 2:
            raise ParseError(f"{path}: row {r} has {len(row) - 2} values, expected T={T}")
        sample, node = row[0].strip(), row[1].strip()
        try:
            vals = np.array([float(v) for v in row[2:]], dtype=np.float64)
        except ValueError:
            for c, v in enumerate(row[2:], start=3):
                try:
                    float(v)
                except ValueError:
                    raise ParseError(
                        f"{path}: row {r}, column {c}: non-numeric cell {v!r}"
                    ) from None
            raise
        i = samples.setdefault(sample, len(samples))
        j = nodes.setdefault(node, len(nodes))
        if (i, j) in cells:
            raise ParseError(f"{path}: row {r}: duplicate (sample={sample}, node={node})")
        cells[(i, j)] = vals

    n, p = len(samples), len(nodes)
    if len(cells) != n * p:
        raise ParseError(f"{path}: expected one row per (sample, node) pair: {n}x{p} != {len(cells)} rows")
    values = np.empty((n, p, T))
    for (i, j), vals in cells.items():
        values[i, j] = vals
    grid, _ = _read_sidecar(path, T)
    labels = tuple(nodes)
    return FunctionalDataset(grid, values, labels)
