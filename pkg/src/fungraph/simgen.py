"""Simulated functional graphical models.

Scores for all nodes are jointly Gaussian with a block precision matrix
(one ``m_star x m_star`` block per node pair); curves are the scores times
the first ``m_star`` Fourier functions plus white observation noise.

Random draws use Philox generators keyed by ``(seed, model, purpose)``, so
structure, scores and noise come from independent, reproducible substreams.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from .basis import fourier_basis
from .errors import ConstructionError, ValidationError
from .functional import FunctionalDataset, Grid
from .neighborhood import GraphEstimate

MODELS = ("A", "B", "C", "D")
DEFAULT_M_STAR = {"A": 15, "B": 15, "C": 5, "D": 15}
DEFAULT_SIGMA = 0.5
EDGE_TOL = 1e-12

_MODEL_CODE = {m: i for i, m in enumerate(MODELS)}
_PURPOSE_CODE = {"structure": 0, "scores": 1, "noise": 2}


def substream(seed: int, model: str, purpose: str, attempt: int = 0) -> np.random.Generator:
    """Independent counter-based generator for one (seed, model, purpose) triple."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(_MODEL_CODE[model], _PURPOSE_CODE[purpose], attempt))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class PrecisionSpec:
    model: str
    p: int
    m_star: Optional[int] = None
    seed: int = 0
    # Model C
    alpha: float = 2.0
    n_layers: int = 5
    layer_weight: float = 3.0
    layer_decay: float = 1.8
    max_retries: int = 100
    # Model D
    edge_prob: float = 0.1
    off_value: float = 0.5
    diag_margin: float = 0.01

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValidationError(f"unknown model {self.model!r}; choose from {MODELS}")
        if self.p < 2:
            raise ValidationError(f"need p >= 2 nodes, got {self.p}")
        if self.m_star is None:
            object.__setattr__(self, "m_star", DEFAULT_M_STAR[self.model])
        if self.m_star < 1:
            raise ValidationError("m_star must be positive")
        if self.model == "C" and self.m_star != self.n_layers:
            raise ValidationError(f"Model C uses one layer per basis function: m_star must equal {self.n_layers}")


@dataclass(frozen=True)
class PrecisionMatrix:
    """Precision matrix of the stacked node scores, node-major ordering."""

    theta: np.ndarray = field(repr=False)
    block_size: int
    model: str = "custom"
    noise_variance: Optional[float] = None

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=np.float64)
        if theta.ndim != 2 or theta.shape[0] != theta.shape[1] or theta.shape[0] % self.block_size:
            raise ValidationError(f"theta of shape {theta.shape} is not a square block matrix of size {self.block_size}")
        if np.max(np.abs(theta - theta.T)) > 1e-12 * max(1.0, np.max(np.abs(theta))):
            raise ValidationError("theta must be symmetric")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    @property
    def p(self) -> int:
        return self.theta.shape[0] // self.block_size

    def block(self, j: int, l: int) -> np.ndarray:
        m = self.block_size
        return self.theta[j * m:(j + 1) * m, l * m:(l + 1) * m]

    @cached_property
    def cholesky(self) -> np.ndarray:
        try:
            return np.linalg.cholesky(self.theta)
        except np.linalg.LinAlgError as exc:
            raise ConstructionError("precision matrix is not positive definite") from exc

    @cached_property
    def covariance(self) -> np.ndarray:
        cov = linalg.cho_solve((self.cholesky, True), np.eye(self.theta.shape[0]))
        return 0.5 * (cov + cov.T)

    def default_sigma(self) -> float:
        if self.noise_variance is not None:
            return float(np.sqrt(self.noise_variance))
        return DEFAULT_SIGMA


def _model_a_block(p: int, m: int) -> np.ndarray:
    A = np.eye(m) + 0.5 * (np.eye(m, k=1) + np.eye(m, k=-1))
    band = np.eye(p) + 0.4 * (np.eye(p, k=1) + np.eye(p, k=-1)) + 0.2 * (np.eye(p, k=2) + np.eye(p, k=-2))
    return np.kron(band, A)


def _model_b(p: int, m: int) -> np.ndarray:
    theta = np.zeros((p * m, p * m))
    for g, start in enumerate(range(0, p, 10)):
        size = min(10, p - start)
        sl = slice(start * m, (start + size) * m)
        # groups are counted from 1 in the model description: odd groups are banded
        theta[sl, sl] = _model_a_block(size, m) if g % 2 == 0 else np.eye(size * m)
    return theta


def _model_d(spec: PrecisionSpec) -> np.ndarray:
    p, m = spec.p, spec.m_star
    rng = substream(spec.seed, "D", "structure")
    upper = np.triu(rng.random((p, p)) < spec.edge_prob, 1)
    adj = upper | upper.T
    off = spec.off_value * adj.astype(float)
    delta = np.max(np.sum(np.abs(off), axis=1)) + spec.diag_margin
    return np.kron(off + delta * np.eye(p), np.eye(m))


def power_law_edges(p: int, alpha: float, rng: np.random.Generator) -> np.ndarray:
    """Symmetric adjacency where each node draws ``m ~ m^-alpha`` uniform neighbors."""
    degrees = np.arange(1, p)
    probs = degrees.astype(float) ** (-alpha)
    probs /= probs.sum()
    adj = np.zeros((p, p), dtype=bool)
    for j in range(p):
        m = rng.choice(degrees, p=probs)
        others = np.delete(np.arange(p), j)
        nbrs = rng.choice(others, size=m, replace=False)
        adj[j, nbrs] = True
    return adj | adj.T


def partition_edges(adj: np.ndarray, layers: int, rng: np.random.Generator) -> np.ndarray:
    """Split an edge set into ``layers`` disjoint edge sets.

    Edges are visited in random order and placed in the lowest layer where
    both endpoints are below their per-layer capacity ``ceil(deg / layers)``;
    otherwise in the least-loaded layer for that pair.
    """
    p = adj.shape[0]
    iu, ju = np.nonzero(np.triu(adj, 1))
    order = rng.permutation(iu.size)
    deg = adj.sum(axis=1)
    cap = np.maximum(1, np.ceil(deg / layers)).astype(int)
    load = np.zeros((layers, p), dtype=int)
    out = np.zeros((layers, p, p), dtype=bool)
    for e in order:
        u, v = iu[e], ju[e]
        free = [l for l in range(layers) if load[l, u] < cap[u] and load[l, v] < cap[v]]
        if free:
            l = free[0]
        else:
            l = int(np.argmin(np.maximum(load[:, u] / cap[u], load[:, v] / cap[v])))
        out[l, u, v] = out[l, v, u] = True
        load[l, u] += 1
        load[l, v] += 1
    return out


def _layer_precision(G: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    p = G.shape[0]
    lower = np.tril(G, -1)
    mags = rng.uniform(1.0 / 3.0, 2.0 / 3.0, size=(p, p))
    signs = np.where(rng.random((p, p)) < 0.5, -1.0, 1.0)
    omega = np.where(lower, signs * mags, 0.0) + np.eye(p)
    omega /= np.linalg.norm(omega, axis=1, keepdims=True)
    omega = 0.5 * (omega + omega.T)
    np.fill_diagonal(omega, 1.0)
    return omega


def _is_pd(mat: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(mat)
        return True
    except np.linalg.LinAlgError:
        return False


def _model_c(spec: PrecisionSpec) -> tuple[np.ndarray, float]:
    p, L = spec.p, spec.n_layers
    struct_rng = substream(spec.seed, "C", "structure")
    adj = power_law_edges(p, spec.alpha, struct_rng)
    layers = partition_edges(adj, L, struct_rng)
    for attempt in range(spec.max_retries):
        rng = substream(spec.seed, "C", "structure", attempt + 1)
        omegas = [_layer_precision(layers[l], rng) for l in range(L)]
        if not all(_is_pd(o) for o in omegas):
            continue
        weights = spec.layer_weight * np.arange(1, L + 1) ** (-spec.layer_decay)
        sigmas = [w * np.linalg.inv(o) for w, o in zip(weights, omegas)]
        omega_bar = np.zeros((L * p, L * p))
        for l in range(L):
            omega_bar[l * p:(l + 1) * p, l * p:(l + 1) * p] = omegas[l]
        for l in range(L - 1):
            coupling = 0.5 * ((omegas[l] - np.diag(np.diag(omegas[l]))) + (omegas[l + 1] - np.diag(np.diag(omegas[l + 1]))))
            omega_bar[l * p:(l + 1) * p, (l + 1) * p:(l + 2) * p] = coupling
            omega_bar[(l + 1) * p:(l + 2) * p, l * p:(l + 1) * p] = coupling
        if not _is_pd(omega_bar):
            continue
        d_ps = np.concatenate([np.diag(s) for s in sigmas])
        d_om = np.diag(omega_bar)
        normalized = omega_bar / np.sqrt(np.outer(d_om, d_om))
        # inverse of D^{1/2} normalized^{-1} D^{1/2}, kept exactly sparse
        theta_nps = normalized / np.sqrt(np.outer(d_ps, d_ps))
        perm = (np.arange(L)[None, :] * p + np.arange(p)[:, None]).ravel()
        theta = theta_nps[np.ix_(perm, perm)]
        theta = 0.5 * (theta + theta.T)
        noise_var = 0.05 * sum(np.trace(s) for s in sigmas) / p
        return theta, float(noise_var)
    raise ConstructionError(f"Model C: no positive definite layer matrices after {spec.max_retries} attempts")


def build_precision(spec: PrecisionSpec) -> PrecisionMatrix:
    p, m = spec.p, spec.m_star
    noise_var = None
    if spec.model == "A":
        theta = _model_a_block(p, m)
    elif spec.model == "B":
        theta = _model_b(p, m)
    elif spec.model == "C":
        theta, noise_var = _model_c(spec)
    else:
        theta = _model_d(spec)
    out = PrecisionMatrix(theta, m, spec.model, noise_var)
    out.cholesky  # fail early when not positive definite
    return out


def true_edges(theta: PrecisionMatrix) -> GraphEstimate:
    """Edge ``(j, l)`` iff block ``(j, l)`` of the precision matrix has a nonzero entry."""
    p, m = theta.p, theta.block_size
    blocks = np.abs(theta.theta).reshape(p, m, p, m).max(axis=(1, 3))
    adj = blocks > EDGE_TOL
    np.fill_diagonal(adj, False)
    return GraphEstimate(adj | adj.T, "truth")


def sample_dataset(
    theta: PrecisionMatrix,
    n: int = 100,
    T: int = 100,
    sigma: Optional[float] = None,
    seed: int = 0,
    grid: Optional[Grid] = None,
) -> tuple[FunctionalDataset, GraphEstimate]:
    """Draw ``n`` samples of ``p`` noisy curves and return them with the true graph."""
    if n < 1:
        raise ValidationError("n must be positive")
    sigma = theta.default_sigma() if sigma is None else float(sigma)
    if sigma < 0:
        raise ValidationError("sigma must be nonnegative")
    grid = Grid(0.0, 1.0, T) if grid is None else grid
    model = theta.model if theta.model in MODELS else "A"
    p, m = theta.p, theta.block_size
    basis = fourier_basis(m, grid)
    chol_sigma = np.linalg.cholesky(theta.covariance)
    z = substream(seed, model, "scores").standard_normal((n, p * m))
    scores = (z @ chol_sigma.T).reshape(n, p, m)
    values = scores @ basis.functions
    if sigma > 0:
        values = values + sigma * substream(seed, model, "noise").standard_normal(values.shape)
    return FunctionalDataset(grid, values), true_edges(theta)


def sample_scores(theta: PrecisionMatrix, n: int, seed: int = 0) -> np.ndarray:
    """The Gaussian score draws used by :func:`sample_dataset`, shape ``(n, p, m_star)``."""
    model = theta.model if theta.model in MODELS else "A"
    chol_sigma = np.linalg.cholesky(theta.covariance)
    z = substream(seed, model, "scores").standard_normal((n, theta.p * theta.block_size))
    return (z @ chol_sigma.T).reshape(n, theta.p, theta.block_size)


@dataclass(frozen=True)
class TheoryDiagnostics:
    node: int
    kappa: float
    tau: float
    neighborhood_size: int


def theory_diagnostics(theta: PrecisionMatrix, j: int, M: int,
                       neighborhood: Optional[Sequence[int]] = None) -> TheoryDiagnostics:
    """Conditioning and signal strength of node ``j``'s regression in the generator basis.

    ``kappa`` is the smallest eigenvalue of the neighborhood score covariance
    (first ``M`` coordinates of each neighbor); ``tau`` is the smallest
    Frobenius norm among the population coefficient blocks. Both are
    ``inf`` for an empty neighborhood.
    """
    m = theta.block_size
    if not 1 <= M <= m:
        raise ValidationError(f"M must lie in [1, {m}]")
    if neighborhood is None:
        nbrs = sorted(np.flatnonzero(true_edges(theta).adjacency[j]).tolist())
    else:
        nbrs = sorted(int(k) for k in neighborhood)
    if not nbrs:
        return TheoryDiagnostics(j, float("inf"), float("inf"), 0)
    cov = theta.covariance
    idx_x = np.concatenate([np.arange(k * m, k * m + M) for k in nbrs])
    idx_y = np.arange(j * m, j * m + M)
    sigma_x = cov[np.ix_(idx_x, idx_x)]
    kappa = float(np.linalg.eigvalsh(sigma_x)[0])
    sigma_yx = cov[np.ix_(idx_y, idx_x)]
    coef = np.linalg.solve(sigma_x, sigma_yx.T).T
    blocks = coef.reshape(M, len(nbrs), M)
    tau = float(min(np.linalg.norm(blocks[:, i, :]) for i in range(len(nbrs))))
    return TheoryDiagnostics(j, kappa, tau, len(nbrs))
