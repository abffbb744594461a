"""Orthonormal bases on a grid and projection of datasets onto them."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np
from scipy.interpolate import BSpline

from .errors import DependenceError, DimensionError, RankError, ValidationError
from .functional import FunctionalDataset, FunctionMatrix, Grid, gram_matrix

BasisKind = Literal["fourier", "bspline", "fpca", "custom"]
BasisMode = Literal["fpca_gy", "fpca_gx", "fixed"]
BASIS_MODES = ("fpca_gy", "fpca_gx", "fixed")

ORTHONORMAL_TOL = 1e-8
PIVOT_TOL = 1e-10


@dataclass(frozen=True)
class BasisSet:
    """``M`` orthonormal functions sampled on ``grid`` (row ``m`` is one function)."""

    grid: Grid
    functions: np.ndarray = field(repr=False)
    kind: str = "custom"
    eigenvalues: Optional[np.ndarray] = None

    def __post_init__(self):
        funcs = np.array(self.functions, dtype=np.float64)
        if funcs.ndim != 2 or funcs.shape[1] != self.grid.T:
            raise DimensionError(f"basis must be M x {self.grid.T}, got {funcs.shape}")
        funcs.setflags(write=False)
        object.__setattr__(self, "functions", funcs)
        if self.eigenvalues is not None:
            ev = np.array(self.eigenvalues, dtype=np.float64)
            if ev.shape != (funcs.shape[0],):
                raise DimensionError("one eigenvalue per basis function required")
            if np.any(ev < -1e-10) or np.any(np.diff(ev) > 1e-12 * max(1.0, abs(ev[0]))):
                raise ValidationError("eigenvalues must be nonnegative and nonincreasing")
            ev.setflags(write=False)
            object.__setattr__(self, "eigenvalues", ev)

    @property
    def M(self) -> int:
        return self.functions.shape[0]

    def gram(self) -> np.ndarray:
        return gram_matrix(self.functions, self.grid)

    def orthonormality_error(self) -> float:
        return float(np.max(np.abs(self.gram() - np.eye(self.M))))

    def truncate(self, M: int) -> "BasisSet":
        if M > self.M:
            raise RankError(f"cannot take {M} functions from a basis of size {self.M}")
        ev = None if self.eigenvalues is None else self.eigenvalues[:M]
        return BasisSet(self.grid, self.functions[:M], self.kind, ev)

    def project(self, curves: np.ndarray) -> np.ndarray:
        """Scores of ``curves`` (``... x T``) on every basis function (``... x M``)."""
        return self.grid.delta * (np.asarray(curves, dtype=np.float64) @ self.functions.T)

    def reconstruct(self, scores: np.ndarray) -> np.ndarray:
        return np.asarray(scores) @ self.functions


def _check_orthonormal(basis: BasisSet) -> BasisSet:
    err = basis.orthonormality_error()
    if err >= ORTHONORMAL_TOL:
        raise RankError(f"{basis.kind} basis of size {basis.M} is not orthonormal on this grid (error {err:.2e})")
    return basis


def fourier_basis(M: int, grid: Grid) -> BasisSet:
    """Constant function followed by alternating sin/cos pairs of rising frequency."""
    if M < 1:
        raise ValidationError(f"M must be positive, got {M}")
    if M > grid.T:
        raise RankError(f"M={M} exceeds the number of grid points T={grid.T}")
    s = (grid.points - grid.a) / (grid.b - grid.a)
    scale = 1.0 / np.sqrt(grid.b - grid.a)
    funcs = np.empty((M, grid.T))
    funcs[0] = 1.0
    for m in range(1, M):
        k = (m + 1) // 2
        trig = np.sin if m % 2 == 1 else np.cos
        funcs[m] = np.sqrt(2.0) * trig(2.0 * np.pi * k * s)
    return _check_orthonormal(BasisSet(grid, scale * funcs, "fourier"))


def gram_schmidt(raw, grid: Grid, kind: str = "custom") -> BasisSet:
    """Orthonormalize ``raw`` (rows are functions) under the grid inner product.

    Uses modified Gram-Schmidt with one reorthogonalization pass, so the
    output span grows one input at a time.
    """
    raw = np.atleast_2d(np.asarray(raw, dtype=np.float64))
    if raw.shape[1] != grid.T:
        raise DimensionError(f"functions must have {grid.T} grid values, got {raw.shape[1]}")
    out = np.empty_like(raw)
    for m in range(raw.shape[0]):
        v = raw[m].copy()
        scale = np.sqrt(grid.delta * v @ v)
        for _ in range(2):
            for q in out[:m]:
                v -= grid.delta * (q @ v) * q
        norm = np.sqrt(grid.delta * v @ v)
        if norm < PIVOT_TOL * max(1.0, scale):
            raise DependenceError(m, norm)
        out[m] = v / norm
    return BasisSet(grid, out, kind)


def bspline_basis(M: int, grid: Grid, degree: int = 3) -> BasisSet:
    """``M`` B-splines on a uniform clamped knot vector, orthonormalized."""
    if degree < 0:
        raise ValidationError("degree must be nonnegative")
    if M < degree + 1:
        raise ValidationError(f"need M >= degree + 1 = {degree + 1}, got M={M}")
    if M > grid.T:
        raise RankError(f"M={M} exceeds the number of grid points T={grid.T}")
    n_interior = M - degree - 1
    inner = np.linspace(grid.a, grid.b, n_interior + 2)
    knots = np.concatenate([[grid.a] * degree, inner, [grid.b] * degree])
    x = grid.points
    raw = np.empty((M, grid.T))
    for m in range(M):
        coef = np.zeros(M)
        coef[m] = 1.0
        raw[m] = BSpline(knots, coef, degree, extrapolate=False)(x)
    raw = np.nan_to_num(raw)
    return _check_orthonormal(gram_schmidt(raw, grid, kind="bspline"))


def estimate_fpca(node_data: FunctionMatrix, M: int) -> BasisSet:
    """Top-``M`` eigenfunctions of the empirical covariance of one node.

    The data are assumed centered. Eigenvectors of ``delta * K`` are
    rescaled to unit quadrature norm and signed so their largest-magnitude
    entry is positive.
    """
    grid = node_data.grid
    X = node_data.values
    n, T = X.shape
    if M < 1:
        raise ValidationError(f"M must be positive, got {M}")
    if M > min(n, T):
        raise RankError(f"M={M} exceeds min(n, T) = {min(n, T)}")
    cov = X.T @ X / n
    evals, evecs = np.linalg.eigh(grid.delta * cov)
    order = np.argsort(evals, kind="stable")[::-1][:M]
    evals = evals[order]
    evecs = evecs[:, order]
    top = max(evals[0], 0.0)
    if top <= 0.0 or evals[M - 1] <= 1e-12 * top:
        raise RankError(f"covariance has numerical rank below M={M}")
    funcs = evecs.T / np.sqrt(grid.delta)
    peak = np.argmax(np.abs(funcs), axis=1)
    signs = np.sign(funcs[np.arange(M), peak])
    funcs *= signs[:, None]
    return BasisSet(grid, funcs, "fpca", np.maximum(evals, 0.0))


@dataclass(frozen=True)
class ScoreMatrices:
    """Projection scores for one regression: target node versus the rest.

    ``x_nodes[k]`` is the dataset node index whose scores are ``x_scores[k]``.
    """

    y_scores: np.ndarray
    x_scores: np.ndarray
    target_node: int
    basis_mode: str
    x_nodes: tuple = ()

    def __post_init__(self):
        y = np.asarray(self.y_scores, dtype=np.float64)
        x = np.asarray(self.x_scores, dtype=np.float64)
        if y.ndim != 2 or x.ndim != 3 or x.shape[1:] != y.shape:
            raise DimensionError(f"inconsistent score shapes: y {y.shape}, x {x.shape}")
        object.__setattr__(self, "y_scores", y)
        object.__setattr__(self, "x_scores", x)
        if not self.x_nodes:
            nodes = tuple(k for k in range(x.shape[0] + 1) if k != self.target_node)
            object.__setattr__(self, "x_nodes", nodes)
        if len(self.x_nodes) != x.shape[0] or self.target_node in self.x_nodes:
            raise ValidationError("x_nodes must list every predictor node except the target")

    @property
    def n(self) -> int:
        return self.y_scores.shape[0]

    @property
    def M(self) -> int:
        return self.y_scores.shape[1]

    @property
    def K(self) -> int:
        return self.x_scores.shape[0]

    def subset(self, rows) -> "ScoreMatrices":
        return ScoreMatrices(
            self.y_scores[rows], self.x_scores[:, rows], self.target_node, self.basis_mode, self.x_nodes
        )


def _check_mode(basis_mode: str, fixed_basis: Optional[BasisSet]) -> None:
    if basis_mode not in BASIS_MODES:
        raise ValidationError(f"unknown basis mode {basis_mode!r}; choose from {BASIS_MODES}")
    if (basis_mode == "fixed") != (fixed_basis is not None):
        raise ValidationError("fixed_basis is required for, and only for, basis_mode='fixed'")


def own_basis_scores(ds: FunctionalDataset, M: int) -> np.ndarray:
    """Scores of every node on its own FPCA basis, shape ``(p, n, M)``."""
    out = np.empty((ds.p, ds.n, M))
    for j in range(ds.p):
        basis = estimate_fpca(ds.node(j), M)
        out[j] = basis.project(ds.values[:, j, :])
    return out


def scores_from_node_scores(node_scores: np.ndarray, target: int, basis_mode: str) -> ScoreMatrices:
    """Split a ``(p, n, M)`` score array into target and predictor parts."""
    p = node_scores.shape[0]
    others = tuple(k for k in range(p) if k != target)
    return ScoreMatrices(node_scores[target], node_scores[list(others)], target, basis_mode, others)


def project_scores(
    ds: FunctionalDataset,
    target: int,
    basis_mode: str = "fpca_gy",
    M: int = 5,
    fixed_basis: Optional[BasisSet] = None,
) -> ScoreMatrices:
    """Projection scores for the regression of node ``target`` on all others.

    ``fpca_gy`` projects every node onto the target's FPCA basis,
    ``fpca_gx`` projects each node onto its own FPCA basis, and ``fixed``
    uses the first ``M`` functions of ``fixed_basis`` for all nodes.
    """
    _check_mode(basis_mode, fixed_basis)
    if not 0 <= target < ds.p:
        raise ValidationError(f"target node {target} out of range for p={ds.p}")
    if M < 1:
        raise ValidationError(f"M must be positive, got {M}")
    if basis_mode == "fpca_gx":
        node_scores = own_basis_scores(ds, M)
    else:
        if basis_mode == "fpca_gy":
            basis = estimate_fpca(ds.node(target), M)
        else:
            if fixed_basis.grid != ds.grid:
                raise DimensionError("fixed basis grid differs from the dataset grid")
            basis = fixed_basis.truncate(M)
        node_scores = np.ascontiguousarray(basis.project(ds.values).transpose(1, 0, 2))
    return scores_from_node_scores(node_scores, target, basis_mode)


def basis_by_name(kind: str, M: int, grid: Grid, degree: int = 3) -> BasisSet:
    if kind == "fourier":
        return fourier_basis(M, grid)
    if kind == "bspline":
        return bspline_basis(M, grid, degree)
    raise ValidationError(f"unknown fixed basis {kind!r}; choose 'fourier' or 'bspline'")
