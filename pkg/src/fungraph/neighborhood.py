"""Per-node neighborhood estimation and AND/OR graph assembly."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence, Union

import numpy as np

from .basis import BasisSet, ScoreMatrices, estimate_fpca, own_basis_scores, project_scores, scores_from_node_scores, _check_mode
from .errors import DimensionError, ValidationError
from .functional import FunctionalDataset
from .grouplasso import AdmmConfig, GroupLassoProblem, lambda_max, solve_admm, solve_path
from .parallel import map_ordered

Rule = Literal["AND", "OR"]
RULES = ("AND", "OR")


@dataclass(frozen=True)
class NeighborhoodEstimate:
    node: int
    selected: frozenset
    block_norms: dict
    lambda_used: float
    epsilon_used: float = 0.0
    diagnostics: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.node in self.selected:
            raise ValidationError(f"node {self.node} cannot be its own neighbor")

    def to_json(self) -> dict:
        return {
            "node": self.node,
            "selected": sorted(self.selected),
            "block_norms": {str(k): v for k, v in sorted(self.block_norms.items())},
            "lambda": self.lambda_used,
            "epsilon": self.epsilon_used,
            **self.diagnostics,
        }


@dataclass(frozen=True)
class GraphEstimate:
    """Undirected graph as a symmetric boolean adjacency with empty diagonal."""

    adjacency: np.ndarray
    rule: str = "AND"

    def __post_init__(self):
        adj = np.array(self.adjacency, dtype=bool)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise DimensionError(f"adjacency must be square, got {adj.shape}")
        if not np.array_equal(adj, adj.T):
            raise ValidationError("adjacency must be symmetric")
        if adj.diagonal().any():
            raise ValidationError("adjacency must have an empty diagonal")
        adj.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)

    @property
    def p(self) -> int:
        return self.adjacency.shape[0]

    def edges(self) -> list:
        i, j = np.nonzero(np.triu(self.adjacency, 1))
        return [(int(a), int(b)) for a, b in zip(i, j)]

    def edge_set(self) -> frozenset:
        return frozenset(self.edges())


def _threshold(node: int, x_nodes: Sequence[int], norms: np.ndarray, lam: float, epsilon: float,
               diagnostics: Optional[dict] = None) -> NeighborhoodEstimate:
    block_norms = {int(k): float(v) for k, v in zip(x_nodes, norms)}
    selected = frozenset(k for k, v in block_norms.items() if v > epsilon)
    return NeighborhoodEstimate(node, selected, block_norms, float(lam), float(epsilon), diagnostics or {})


def neighborhood_from_scores(scores: ScoreMatrices, lam: float, epsilon: float = 0.0,
                             admm_config: AdmmConfig = AdmmConfig()) -> NeighborhoodEstimate:
    sol = solve_admm(GroupLassoProblem.from_scores(scores, lam), admm_config)
    diag = {"iterations": sol.iterations, "converged": sol.converged, "objective": sol.objective}
    return _threshold(scores.target_node, scores.x_nodes, sol.block_norms, lam, epsilon, diag)


def estimate_neighborhood(
    ds: FunctionalDataset,
    j: int,
    basis_mode: str = "fpca_gy",
    M: int = 5,
    lam: float = 0.0,
    epsilon: float = 0.0,
    admm_config: AdmmConfig = AdmmConfig(),
    fixed_basis: Optional[BasisSet] = None,
) -> NeighborhoodEstimate:
    """Project, solve the group lasso for node ``j`` and threshold the block norms."""
    if lam < 0 or epsilon < 0:
        raise ValidationError("lambda and epsilon must be nonnegative")
    scores = project_scores(ds, j, basis_mode, M, fixed_basis)
    return neighborhood_from_scores(scores, lam, epsilon, admm_config)


def combine(neighborhoods: Sequence[NeighborhoodEstimate], rule: str = "AND",
            p: Optional[int] = None) -> GraphEstimate:
    """Merge one neighborhood per node: AND keeps mutual selections, OR keeps any."""
    if rule not in RULES:
        raise ValidationError(f"unknown rule {rule!r}; choose AND or OR")
    p = len(neighborhoods) if p is None else p
    seen = sorted(nb.node for nb in neighborhoods)
    if seen != list(range(p)):
        missing = sorted(set(range(p)) - set(seen))
        raise ValidationError(f"need exactly one neighborhood per node; missing {missing}, got {seen}")
    sel = np.zeros((p, p), dtype=bool)
    for nb in neighborhoods:
        for k in nb.selected:
            if not 0 <= k < p:
                raise ValidationError(f"node {nb.node} selected out-of-range node {k}")
            sel[nb.node, k] = True
    adj = (sel & sel.T) if rule == "AND" else (sel | sel.T)
    return GraphEstimate(adj, rule)


# ---------------------------------------------------------------------------
# Whole-graph estimation
# ---------------------------------------------------------------------------


class ScoreProvider:
    """Builds per-node score matrices, computing each node's FPCA basis at most once."""

    def __init__(self, ds: FunctionalDataset, basis_mode: str = "fpca_gy", M: int = 5,
                 fixed_basis: Optional[BasisSet] = None):
        _check_mode(basis_mode, fixed_basis)
        self.ds = ds
        self.basis_mode = basis_mode
        self.M = M
        self.fixed_basis = fixed_basis
        self._shared = None

    def _shared_scores(self) -> np.ndarray:
        if self._shared is None:
            if self.basis_mode == "fpca_gx":
                self._shared = own_basis_scores(self.ds, self.M)
            else:
                basis = self.fixed_basis.truncate(self.M)
                self._shared = np.ascontiguousarray(basis.project(self.ds.values).transpose(1, 0, 2))
        return self._shared

    def basis_for(self, j: int) -> BasisSet:
        if self.basis_mode == "fixed":
            return self.fixed_basis.truncate(self.M)
        return estimate_fpca(self.ds.node(j), self.M)

    def __call__(self, j: int) -> ScoreMatrices:
        if self.basis_mode == "fpca_gy":
            return project_scores(self.ds, j, "fpca_gy", self.M)
        return scores_from_node_scores(self._shared_scores(), j, self.basis_mode)


def _as_lambda_list(lambda_per_node: Union[float, Sequence[float]], p: int) -> list:
    if np.isscalar(lambda_per_node):
        return [float(lambda_per_node)] * p
    lams = [float(v) for v in lambda_per_node]
    if len(lams) != p:
        raise ValidationError(f"need one lambda per node: got {len(lams)} for p={p}")
    return lams


def _graph_task(ctx, j):
    provider, lams, epsilon, config = ctx
    return neighborhood_from_scores(provider(j), lams[j], epsilon, config)


def estimate_graph(
    ds: FunctionalDataset,
    basis_mode: str = "fpca_gy",
    M: int = 5,
    lambda_per_node: Union[float, Sequence[float]] = 0.0,
    epsilon: float = 0.0,
    rule: str = "AND",
    admm_config: AdmmConfig = AdmmConfig(),
    fixed_basis: Optional[BasisSet] = None,
    threads: int = 1,
    return_neighborhoods: bool = False,
):
    """Estimate every neighborhood (in parallel when ``threads > 1``) and combine them."""
    if rule not in RULES:
        raise ValidationError(f"unknown rule {rule!r}; choose AND or OR")
    lams = _as_lambda_list(lambda_per_node, ds.p)
    provider = ScoreProvider(ds, basis_mode, M, fixed_basis)
    if basis_mode != "fpca_gy":
        provider._shared_scores()
    nbs = map_ordered(_graph_task, (provider, lams, epsilon, admm_config), range(ds.p), threads)
    graph = combine(nbs, rule)
    return (graph, nbs) if return_neighborhoods else graph


def _t_task(ctx, j):
    provider, t, epsilon, config = ctx
    scores = provider(j)
    lam = t * lambda_max(GroupLassoProblem.from_scores(scores))
    return neighborhood_from_scores(scores, lam, epsilon, config)


def neighborhoods_at_t(
    ds: FunctionalDataset,
    t: float,
    basis_mode: str = "fpca_gy",
    M: int = 5,
    epsilon: float = 0.0,
    admm_config: AdmmConfig = AdmmConfig(),
    fixed_basis: Optional[BasisSet] = None,
    threads: int = 1,
) -> list:
    """Neighborhoods at the node-specific penalties ``t * lambda_max(j)``."""
    if not 0.0 <= t <= 1.0:
        raise ValidationError(f"t must lie in [0, 1], got {t}")
    provider = ScoreProvider(ds, basis_mode, M, fixed_basis)
    if basis_mode != "fpca_gy":
        provider._shared_scores()
    return map_ordered(_t_task, (provider, float(t), epsilon, admm_config), range(ds.p), threads)


# ---------------------------------------------------------------------------
# Penalty paths
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NodePath:
    """Group-lasso solutions for one node along ``lambdas = t * lambda_max``."""

    node: int
    x_nodes: tuple
    lambda_max: float
    t_values: np.ndarray
    lambdas: np.ndarray
    block_norms: np.ndarray  # (len(t), K)
    iterations: np.ndarray
    converged: np.ndarray

    def selected(self, index: int, epsilon: float = 0.0) -> frozenset:
        return frozenset(self.x_nodes[k] for k in np.flatnonzero(self.block_norms[index] > epsilon))

    def support_indices(self, index: int, epsilon: float = 0.0) -> frozenset:
        return frozenset(int(k) for k in np.flatnonzero(self.block_norms[index] > epsilon))

    def neighborhood(self, index: int, epsilon: float = 0.0) -> NeighborhoodEstimate:
        return _threshold(self.node, self.x_nodes, self.block_norms[index], self.lambdas[index], epsilon)


def node_path(scores: ScoreMatrices, t_values: Sequence[float],
              admm_config: AdmmConfig = AdmmConfig()) -> NodePath:
    """Warm-started solutions at ``t * lambda_max`` for each ``t`` (given in decreasing order)."""
    t = np.asarray(t_values, dtype=np.float64)
    problem = GroupLassoProblem.from_scores(scores)
    lmax = lambda_max(problem)
    lambdas = t * lmax
    sols = solve_path(problem, lambdas, admm_config)
    return NodePath(
        node=scores.target_node,
        x_nodes=tuple(scores.x_nodes),
        lambda_max=lmax,
        t_values=t,
        lambdas=lambdas,
        block_norms=np.array([s.block_norms for s in sols]),
        iterations=np.array([s.iterations for s in sols]),
        converged=np.array([s.converged for s in sols]),
    )


def _path_task(ctx, j):
    provider, t_values, config = ctx
    return node_path(provider(j), t_values, config)


def graph_paths(
    ds: FunctionalDataset,
    t_values: Sequence[float],
    basis_mode: str = "fpca_gy",
    M: int = 5,
    admm_config: AdmmConfig = AdmmConfig(),
    fixed_basis: Optional[BasisSet] = None,
    threads: int = 1,
) -> list:
    """One :class:`NodePath` per node over a shared ``t`` grid."""
    t = np.asarray(t_values, dtype=np.float64)
    if t.ndim != 1 or t.size == 0 or np.any(t <= 0) or np.any(t > 1) or np.any(np.diff(t) >= 0):
        raise ValidationError("t values must be strictly decreasing within (0, 1]")
    provider = ScoreProvider(ds, basis_mode, M, fixed_basis)
    if basis_mode != "fpca_gy":
        provider._shared_scores()
    return map_ordered(_path_task, (provider, t, admm_config), range(ds.p), threads)


def graphs_along_path(paths: Sequence[NodePath], rule: str = "AND", epsilon: float = 0.0) -> list:
    """Graph estimate at every grid index of a set of node paths."""
    p = len(paths)
    L = len(paths[0].t_values)
    return [combine([path.neighborhood(i, epsilon) for path in paths], rule, p) for i in range(L)]
