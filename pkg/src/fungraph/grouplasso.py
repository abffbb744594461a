"""Group-lasso vector-on-vector regression solved by ADMM.

Solves

    min_B  1/(2n) ||A^Y - sum_k A^{X_k} B_k||_F^2 + lam * sum_k ||B_k||_F

over ``M x M`` blocks ``B_k``, where ``A^Y`` and ``A^{X_k}`` are ``n x M``
score matrices whose rows are samples. Block ``B_k`` maps the scores of
predictor ``k`` to the response scores (row-vector convention, so the
fitted response is ``A^{X_k} @ B_k``).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

import numpy as np

from . import _admm_kernel as kern
from .basis import ScoreMatrices
from .errors import DimensionError, NumericalFailure, ValidationError


class RankDeficientWarning(UserWarning):
    """Restricted least squares fell back to the minimum-norm solution."""


@dataclass(frozen=True)
class AdmmConfig:
    eps_abs: float = 1e-4
    eps_rel: float = 1e-3
    rho0: float = 1.0
    phi: float = 10.0
    tau_incr: float = 2.0
    tau_decr: float = 2.0
    max_iter: int = 5000
    bisection_tol: float = 1e-10
    bisection_max: int = 200
    adapt_rho: bool = True

    def __post_init__(self):
        for name in ("eps_abs", "eps_rel", "rho0", "phi", "tau_incr", "tau_decr",
                     "max_iter", "bisection_tol", "bisection_max"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"AdmmConfig.{name} must be positive")

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(frozen=True)
class GroupLassoProblem:
    """Response scores ``y`` (n x M), predictor scores ``x`` (K x n x M), penalty ``lam``."""

    y: np.ndarray
    x: np.ndarray
    lam: float = 0.0

    def __post_init__(self):
        y = np.ascontiguousarray(self.y, dtype=np.float64)
        x = np.ascontiguousarray(self.x, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        if y.ndim != 2 or x.ndim != 3 or x.shape[1:] != y.shape:
            raise DimensionError(f"need y (n x M) and x (K x n x M); got {y.shape} and {x.shape}")
        if x.shape[0] < 1:
            raise DimensionError("at least one predictor group is required")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x))):
            raise ValidationError("scores must be finite")
        lam = float(self.lam)
        if not (lam >= 0.0 and np.isfinite(lam)):
            raise ValidationError(f"lambda must be a finite nonnegative number, got {self.lam}")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "lam", lam)

    @classmethod
    def from_scores(cls, scores: ScoreMatrices, lam: float = 0.0) -> "GroupLassoProblem":
        return cls(scores.y_scores, scores.x_scores, lam)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def M(self) -> int:
        return self.y.shape[1]

    @property
    def K(self) -> int:
        return self.x.shape[0]

    def with_lambda(self, lam: float) -> "GroupLassoProblem":
        return replace(self, lam=lam)

    def stacked_design(self) -> np.ndarray:
        """``[A^{X_1}, ..., A^{X_K}]`` as an ``n x K*M`` matrix."""
        return np.ascontiguousarray(self.x.transpose(1, 0, 2).reshape(self.n, self.K * self.M))

    def fitted(self, b_blocks: np.ndarray) -> np.ndarray:
        return np.einsum("kim,kml->il", self.x, b_blocks)


@dataclass
class AdmmState:
    """Iterates of the ADMM plus the per-group eigendecompositions it reuses.

    ``u`` is the scaled dual variable. ``eig_vals[k]``, ``eig_vecs[k]``
    decompose ``A_k^T A_k``.
    """

    p_blocks: np.ndarray
    q_bar: np.ndarray
    u: np.ndarray
    rho: float
    eig_vals: np.ndarray
    eig_vecs: np.ndarray
    gram: np.ndarray = field(repr=False)
    design: np.ndarray = field(repr=False)

    @classmethod
    def initial(cls, problem: GroupLassoProblem, config: AdmmConfig = AdmmConfig()) -> "AdmmState":
        """Cold start at the all-zero solution with its matching dual."""
        K, n, M = problem.x.shape
        gram = np.ascontiguousarray(np.einsum("kim,kil->kml", problem.x, problem.x))
        eig_vals, eig_vecs = np.linalg.eigh(gram)
        eig_vals = np.ascontiguousarray(np.maximum(eig_vals, 0.0))
        eig_vecs = np.ascontiguousarray(eig_vecs)
        rho = float(config.rho0)
        return cls(
            p_blocks=np.zeros((K, M, M)),
            q_bar=np.zeros((n, M)),
            u=-problem.y / (rho * n),
            rho=rho,
            eig_vals=eig_vals,
            eig_vecs=eig_vecs,
            gram=gram,
            design=problem.stacked_design(),
        )

    def copy(self) -> "AdmmState":
        return AdmmState(
            self.p_blocks.copy(), self.q_bar.copy(), self.u.copy(), self.rho,
            self.eig_vals, self.eig_vecs, self.gram, self.design,
        )

    def to_json(self) -> dict:
        return {"rho": self.rho, "K": int(self.p_blocks.shape[0]), "M": int(self.p_blocks.shape[1])}


@dataclass(frozen=True)
class GroupLassoSolution:
    b_hat: np.ndarray
    iterations: int
    converged: bool
    final_primal_residual: float
    final_dual_residual: float
    objective: float
    lam: float
    state: Optional[AdmmState] = field(default=None, repr=False, compare=False)
    residual_trace: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    @property
    def block_norms(self) -> np.ndarray:
        return np.sqrt(np.sum(self.b_hat ** 2, axis=(1, 2)))

    def support(self, epsilon: float = 0.0) -> frozenset:
        return frozenset(int(k) for k in np.flatnonzero(self.block_norms > epsilon))

    def diagnostics(self) -> dict:
        out = {
            "lambda": self.lam,
            "iterations": self.iterations,
            "converged": self.converged,
            "final_primal_residual": self.final_primal_residual,
            "final_dual_residual": self.final_dual_residual,
            "objective": self.objective,
            "block_norms": self.block_norms.tolist(),
        }
        if self.residual_trace is not None:
            out["residual_trace"] = self.residual_trace.tolist()
        return out


def lambda_max(problem: GroupLassoProblem) -> float:
    """Smallest penalty above which every block is zero: ``max_k ||A_k^T A^Y||_F / n``."""
    cross = np.einsum("kim,il->kml", problem.x, problem.y)
    return float(np.max(np.sqrt(np.sum(cross ** 2, axis=(1, 2)))) / problem.n)


def objective(problem: GroupLassoProblem, b_blocks: np.ndarray) -> float:
    b_blocks = np.asarray(b_blocks, dtype=np.float64)
    if b_blocks.shape != (problem.K, problem.M, problem.M):
        raise DimensionError(f"expected blocks of shape {(problem.K, problem.M, problem.M)}, got {b_blocks.shape}")
    resid = problem.y - problem.fitted(b_blocks)
    penalty = np.sum(np.sqrt(np.sum(b_blocks ** 2, axis=(1, 2))))
    return float(0.5 * np.sum(resid ** 2) / problem.n + problem.lam * penalty)


def kkt_violation(problem: GroupLassoProblem, b_blocks: np.ndarray) -> np.ndarray:
    """Per-group subgradient violation of the optimality conditions.

    Nonzero groups report ``||g_k - lam B_k / ||B_k|| ||_F``; zero groups
    report ``max(0, ||g_k||_F - lam)``, where ``g_k = A_k^T r / n``.
    """
    resid = problem.y - problem.fitted(b_blocks)
    grad = np.einsum("kim,il->kml", problem.x, resid) / problem.n
    norms = np.sqrt(np.sum(b_blocks ** 2, axis=(1, 2)))
    out = np.empty(problem.K)
    for k in range(problem.K):
        if norms[k] > 0:
            out[k] = np.linalg.norm(grad[k] - problem.lam * b_blocks[k] / norms[k])
        else:
            out[k] = max(0.0, np.linalg.norm(grad[k]) - problem.lam)
    return out


def _raise_for_status(status: int, what: str) -> None:
    if status == kern.STATUS_NAN:
        raise NumericalFailure(f"{what}: non-finite values during ADMM iteration")
    if status == kern.STATUS_BRACKET:
        raise NumericalFailure(f"{what}: bisection for the ridge parameter failed to bracket")


def admm_iterate(state: AdmmState, problem: GroupLassoProblem, config: AdmmConfig = AdmmConfig()):
    """Advance a copy of ``state`` by one iterate.

    Returns ``(new_state, primal_residual, dual_residual)``; ``rho`` is not adapted.
    """
    new = state.copy()
    P = new.p_blocks.reshape(problem.K * problem.M, problem.M)
    AtQ, AtU, AtAvg = kern.carried_products(new.design, P, new.q_bar, new.u)
    status, primal, dual, *_ = kern.admm_step(
        new.design, new.gram, new.eig_vals, new.eig_vecs, problem.y, new.design.T @ problem.y,
        problem.lam, P, new.q_bar, new.u, AtQ, AtU, AtAvg, new.rho,
        config.bisection_tol, config.bisection_max,
    )
    _raise_for_status(status, "admm_iterate")
    return new, float(primal), float(dual)


def update_rho(rho: float, primal: float, dual: float, config: AdmmConfig = AdmmConfig()) -> float:
    """Residual balancing: grow ``rho`` when the primal residual dominates, shrink it when the dual does."""
    if rho <= 0:
        raise ValidationError("rho must be positive")
    return float(kern.update_rho(rho, primal, dual, config.phi, config.tau_incr, config.tau_decr))


def solve_admm(
    problem: GroupLassoProblem,
    config: AdmmConfig = AdmmConfig(),
    warm_start: Optional[AdmmState] = None,
    record_trace: bool = False,
) -> GroupLassoSolution:
    """Solve the group-lasso problem, optionally continuing from ``warm_start``.

    Hitting ``max_iter`` returns ``converged=False`` rather than raising.
    """
    state = AdmmState.initial(problem, config) if warm_start is None else warm_start.copy()
    if state.p_blocks.shape != (problem.K, problem.M, problem.M) or state.q_bar.shape != problem.y.shape:
        raise DimensionError("warm-start state does not match the problem dimensions")
    P = state.p_blocks.reshape(problem.K * problem.M, problem.M)
    trace = np.empty((config.max_iter, 3))
    iters, status, primal, dual, rho = kern.admm_solve(
        state.design, state.gram, state.eig_vals, state.eig_vecs, problem.y,
        state.design.T @ problem.y, problem.lam, P, state.q_bar, state.u, state.rho,
        config.eps_abs, config.eps_rel, config.phi, config.tau_incr, config.tau_decr,
        config.max_iter, config.bisection_tol, config.bisection_max, config.adapt_rho, trace,
    )
    _raise_for_status(status, "solve_admm")
    state.rho = float(rho)
    b_hat = state.p_blocks.copy()
    return GroupLassoSolution(
        b_hat=b_hat,
        iterations=int(iters),
        converged=status == kern.STATUS_OK,
        final_primal_residual=float(primal),
        final_dual_residual=float(dual),
        objective=objective(problem, b_hat),
        lam=problem.lam,
        state=state,
        residual_trace=trace[:iters].copy() if record_trace else None,
    )


def solve_path(
    problem: GroupLassoProblem,
    lambdas: Iterable[float],
    config: AdmmConfig = AdmmConfig(),
) -> list[GroupLassoSolution]:
    """Solve along a sequence of penalties, warm-starting each from the last."""
    out = []
    state = None
    for lam in lambdas:
        sol = solve_admm(problem.with_lambda(lam), config, warm_start=state)
        state = sol.state
        out.append(sol)
    return out


def restricted_least_squares(problem: GroupLassoProblem, support: Iterable[int]) -> np.ndarray:
    """Unpenalized least squares over the groups in ``support``; other blocks are zero."""
    support = sorted(set(int(k) for k in support))
    K, M = problem.K, problem.M
    blocks = np.zeros((K, M, M))
    if not support:
        return blocks
    if support[0] < 0 or support[-1] >= K:
        raise ValidationError(f"support indices must lie in [0, {K})")
    design = np.concatenate([problem.x[k] for k in support], axis=1)
    coef, _, rank, _ = np.linalg.lstsq(design, problem.y, rcond=None)
    if rank < design.shape[1]:
        warnings.warn(
            f"restricted design has rank {rank} < {design.shape[1]}; using minimum-norm solution",
            RankDeficientWarning,
            stacklevel=2,
        )
    blocks[support] = coef.reshape(len(support), M, M)
    return blocks
