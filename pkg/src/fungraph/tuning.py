"""Penalty grids, selective cross-validation (SCV-RSS) and choice of ``M``."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .basis import BasisSet, ScoreMatrices, estimate_fpca, _check_mode
from .errors import RankError, ValidationError
from .functional import FunctionalDataset, FunctionMatrix
from .grouplasso import (
    AdmmConfig,
    GroupLassoProblem,
    RankDeficientWarning,
    lambda_max,
    restricted_least_squares,
    solve_path,
)
from .neighborhood import NodePath, ScoreProvider
from .parallel import map_ordered

DEFAULT_T_POINTS = 50
DEFAULT_T_MIN = 0.01


def default_t_values(num: int = DEFAULT_T_POINTS, t_min: float = DEFAULT_T_MIN) -> np.ndarray:
    """``num`` log-spaced values from 1 down to ``t_min``."""
    return np.geomspace(1.0, t_min, num)


@dataclass(frozen=True)
class LambdaGrid:
    t_values: np.ndarray
    lambda_max: float
    lambdas: np.ndarray = field(init=False)

    def __post_init__(self):
        t = np.asarray(self.t_values, dtype=np.float64)
        if t.ndim != 1 or t.size == 0:
            raise ValidationError("t grid must be a nonempty 1-d sequence")
        if np.any(t <= 0) or np.any(t > 1):
            raise ValidationError("t values must lie in (0, 1]")
        if np.any(np.diff(t) >= 0):
            raise ValidationError("t values must be strictly decreasing")
        if self.lambda_max < 0:
            raise ValidationError("lambda_max must be nonnegative")
        object.__setattr__(self, "t_values", t)
        object.__setattr__(self, "lambdas", t * float(self.lambda_max))


def lambda_grid(problem: GroupLassoProblem, t_values: Optional[Sequence[float]] = None) -> LambdaGrid:
    t = default_t_values() if t_values is None else t_values
    return LambdaGrid(np.asarray(t, dtype=np.float64), lambda_max(problem))


@dataclass(frozen=True)
class ScvResult:
    chosen_lambda: float
    chosen_index: int
    lambdas: np.ndarray
    criterion: np.ndarray
    supports: tuple
    folds: tuple = ()
    seed: Optional[int] = None

    @property
    def criterion_by_lambda(self) -> dict:
        return {float(l): float(c) for l, c in zip(self.lambdas, self.criterion)}

    @property
    def support_by_lambda(self) -> dict:
        return {float(l): s for l, s in zip(self.lambdas, self.supports)}

    def table(self) -> list:
        """Rows of ``(lambda, |support|, criterion)``."""
        return [(float(l), len(s), float(c)) for l, s, c in zip(self.lambdas, self.supports, self.criterion)]


def fold_assignment(n: int, folds: int, seed: Optional[int] = 0) -> tuple:
    """Contiguous blocks of a seeded permutation of ``range(n)``."""
    if folds < 2:
        raise ValidationError(f"need at least 2 folds, got {folds}")
    if n < folds:
        raise ValidationError(f"cannot split n={n} samples into {folds} nonempty folds")
    perm = np.random.default_rng(seed).permutation(n)
    return tuple(np.sort(part) for part in np.array_split(perm, folds))


def _fold_split(n: int, test: np.ndarray):
    mask = np.ones(n, dtype=bool)
    mask[test] = False
    return np.flatnonzero(mask)


def scv_criterion(problem: GroupLassoProblem, supports: Sequence[frozenset], folds: Sequence[np.ndarray]) -> np.ndarray:
    """Mean over folds of held-out RSS after a restricted refit, plus ``log(n) * |support|``."""
    n = problem.n
    log_n = math.log(n)
    cache: dict = {}
    out = np.empty(len(supports))
    for idx, support in enumerate(supports):
        support = frozenset(support)
        if support not in cache:
            total = 0.0
            for test in folds:
                train = _fold_split(n, test)
                if train.size < 1 or test.size < 1:
                    raise ValidationError("every fold needs at least one training and one test sample")
                train_problem = GroupLassoProblem(problem.y[train], problem.x[:, train])
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", RankDeficientWarning)
                    blocks = restricted_least_squares(train_problem, support)
                resid = problem.y[test] - np.einsum("kim,kml->il", problem.x[:, test], blocks)
                total += float(np.sum(resid ** 2)) + log_n * len(support)
            cache[support] = total / len(folds)
        out[idx] = cache[support]
    return out


def _argmin_largest_lambda(lambdas: np.ndarray, criterion: np.ndarray) -> int:
    best = np.min(criterion)
    ties = np.flatnonzero(criterion == best)
    return int(ties[np.argmax(lambdas[ties])])


def scv_select_lambda(
    scores: ScoreMatrices,
    grid: LambdaGrid,
    folds: int = 5,
    admm_config: AdmmConfig = AdmmConfig(),
    seed: Optional[int] = 0,
    supports: Optional[Sequence[frozenset]] = None,
    epsilon: float = 0.0,
) -> ScvResult:
    """Pick the penalty minimizing the SCV-RSS criterion (ties go to the larger penalty).

    Supports come from full-data fits along ``grid``; pass ``supports`` to
    reuse a path that was already solved.
    """
    problem = GroupLassoProblem.from_scores(scores)
    fold_idx = fold_assignment(problem.n, folds, seed)
    if supports is None:
        sols = solve_path(problem, grid.lambdas, admm_config)
        supports = [s.support(epsilon) for s in sols]
    supports = tuple(frozenset(s) for s in supports)
    if len(supports) != len(grid.lambdas):
        raise ValidationError("one support per grid point required")
    crit = scv_criterion(problem, supports, fold_idx)
    best = _argmin_largest_lambda(grid.lambdas, crit)
    return ScvResult(
        chosen_lambda=float(grid.lambdas[best]),
        chosen_index=best,
        lambdas=grid.lambdas,
        criterion=crit,
        supports=supports,
        folds=tuple(tuple(int(i) for i in f) for f in fold_idx),
        seed=seed,
    )


def _scv_task(ctx, path: NodePath):
    provider, folds, seed, epsilon, config = ctx
    grid = LambdaGrid(path.t_values, path.lambda_max)
    supports = [path.support_indices(i, epsilon) for i in range(len(path.t_values))]
    return scv_select_lambda(provider(path.node), grid, folds, config, seed, supports=supports)


def scv_neighborhoods(
    ds: FunctionalDataset,
    paths: Sequence[NodePath],
    basis_mode: str = "fpca_gy",
    M: int = 5,
    folds: int = 5,
    seed: Optional[int] = 0,
    epsilon: float = 0.0,
    admm_config: AdmmConfig = AdmmConfig(),
    fixed_basis: Optional[BasisSet] = None,
    threads: int = 1,
) -> tuple:
    """SCV-selected neighborhood of every node from already solved paths.

    ``paths`` must come from the same dataset, basis mode and ``M``.
    Returns ``(neighborhoods, scv_results)``, both in node order.
    """
    provider = ScoreProvider(ds, basis_mode, M, fixed_basis)
    if basis_mode != "fpca_gy":
        provider._shared_scores()
    results = map_ordered(_scv_task, (provider, folds, seed, epsilon, admm_config), list(paths), threads)
    nbs = [path.neighborhood(res.chosen_index, epsilon) for path, res in zip(paths, results)]
    return nbs, results


def _fold_scores(ds: FunctionalDataset, target: int, basis_mode: str, M: int,
                 fixed_basis: Optional[BasisSet], train: np.ndarray, test: np.ndarray):
    """Score arrays ``(p, n, M)`` for train and test rows plus the target's basis.

    FPCA bases are estimated from the training rows only.
    """
    values = ds.values
    p = ds.p
    train_scores = np.empty((p, train.size, M))
    test_scores = np.empty((p, test.size, M))
    if basis_mode == "fpca_gx":
        target_basis = None
        for k in range(p):
            basis = estimate_fpca(_rows(ds, train, k), M)
            train_scores[k] = basis.project(values[train, k])
            test_scores[k] = basis.project(values[test, k])
            if k == target:
                target_basis = basis
        return train_scores, test_scores, target_basis
    if basis_mode == "fpca_gy":
        basis = estimate_fpca(_rows(ds, train, target), M)
    else:
        basis = fixed_basis.truncate(M)
    train_scores[:] = basis.project(values[train]).transpose(1, 0, 2)
    test_scores[:] = basis.project(values[test]).transpose(1, 0, 2)
    return train_scores, test_scores, basis


def _rows(ds: FunctionalDataset, rows: np.ndarray, node: int) -> FunctionMatrix:
    return FunctionMatrix(ds.grid, ds.values[rows, node])


def select_M(
    ds: FunctionalDataset,
    target_node: int,
    basis_mode: str = "fpca_gy",
    candidate_Ms: Sequence[int] = (3, 5, 8),
    folds: int = 5,
    t_values: Optional[Sequence[float]] = None,
    admm_config: AdmmConfig = AdmmConfig(),
    fixed_basis: Optional[BasisSet] = None,
    seed: Optional[int] = 0,
    return_criteria: bool = False,
):
    """Choose the number of basis functions by K-fold prediction error.

    For every candidate ``M`` and outer fold: estimate the basis on the
    training rows, tune the penalty there by SCV, refit on the selected
    support and predict the held-out target curves. The error is the L2
    distance between observed and predicted target curves, so candidates of
    different size are compared on the same scale. Candidates whose basis
    cannot be estimated (rank too low) score ``inf``; ties go to the
    smallest ``M``.
    """
    _check_mode(basis_mode, fixed_basis)
    cands = sorted(set(int(m) for m in candidate_Ms))
    if not cands:
        raise ValidationError("candidate_Ms must be nonempty")
    if any(m < 1 or m > min(ds.n, ds.grid.T) for m in cands):
        raise ValidationError(f"candidate M values must lie in [1, min(n, T)] = [1, {min(ds.n, ds.grid.T)}]")
    if len(cands) == 1:
        return (cands[0], {cands[0]: float("nan")}) if return_criteria else cands[0]
    t = default_t_values() if t_values is None else np.asarray(t_values, dtype=np.float64)
    outer = fold_assignment(ds.n, folds, seed)
    others = [k for k in range(ds.p) if k != target_node]
    crit = {}
    for M in cands:
        total = 0.0
        try:
            for test in outer:
                train = _fold_split(ds.n, test)
                tr, te, basis = _fold_scores(ds, target_node, basis_mode, M, fixed_basis, train, test)
                scores = ScoreMatrices(tr[target_node], tr[others], target_node, basis_mode, tuple(others))
                problem = GroupLassoProblem.from_scores(scores)
                grid = LambdaGrid(t, lambda_max(problem))
                inner_folds = min(folds, train.size)
                scv = scv_select_lambda(scores, grid, inner_folds, admm_config, seed)
                support = scv.supports[scv.chosen_index]
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", RankDeficientWarning)
                    blocks = restricted_least_squares(problem, support)
                pred_scores = np.einsum("kim,kml->il", te[others], blocks)
                pred_curves = basis.reconstruct(pred_scores)
                err = ds.values[test, target_node] - pred_curves
                total += ds.grid.delta * float(np.sum(err ** 2))
            crit[M] = total / len(outer)
        except RankError:
            crit[M] = float("inf")
    finite = [m for m in cands if np.isfinite(crit[m])]
    if not finite:
        raise RankError(f"no candidate M in {cands} admits a basis of full rank")
    best_val = min(crit[m] for m in finite)
    tol = 1e-9 * max(1.0, abs(best_val))
    chosen = min(m for m in finite if crit[m] <= best_val + tol)
    return (chosen, crit) if return_criteria else chosen
