"""Replicated simulation runs: ROC/AUC along penalty paths and SCV-selected graphs."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ValidationError
from .evaluation import auc, precision_recall, roc
from .grouplasso import AdmmConfig
from .neighborhood import RULES, combine, graph_paths, graphs_along_path
from .parallel import map_ordered
from .simgen import PrecisionSpec, build_precision, sample_dataset
from .tuning import default_t_values, scv_neighborhoods


@dataclass(frozen=True)
class ExperimentConfig:
    model: str = "A"
    p: int = 50
    n: int = 100
    T: int = 100
    M: int = 5
    sigma: Optional[float] = None
    t_values: tuple = field(default_factory=lambda: tuple(default_t_values()))
    basis_modes: tuple = ("fpca_gy",)
    rules: tuple = ("AND",)
    scv: bool = False
    scv_mode: str = "fpca_gy"
    folds: int = 5
    epsilon: float = 0.0
    admm: AdmmConfig = AdmmConfig()

    def __post_init__(self):
        object.__setattr__(self, "t_values", tuple(float(t) for t in self.t_values))
        object.__setattr__(self, "basis_modes", tuple(self.basis_modes))
        object.__setattr__(self, "rules", tuple(self.rules))
        bad = [r for r in self.rules if r not in RULES]
        if bad:
            raise ValidationError(f"unknown rules {bad}")
        if self.scv and self.scv_mode not in self.basis_modes:
            raise ValidationError("scv_mode must be one of basis_modes")
        if any(m == "fixed" for m in self.basis_modes):
            raise ValidationError("experiments use estimated FPCA bases only")

    def to_json(self) -> dict:
        out = asdict(self)
        out["t_values"] = list(self.t_values)
        out["basis_modes"] = list(self.basis_modes)
        out["rules"] = list(self.rules)
        out["admm"] = self.admm.to_json()
        return out


@dataclass
class ReplicateResult:
    seed: int
    auc: dict  # (basis_mode, rule) -> AUC
    scv: dict = field(default_factory=dict)  # rule -> (precision, recall, empty_prediction)
    roc_rows: dict = field(default_factory=dict)  # (basis_mode, rule) -> [(t, fpr, tpr)]


def scv_graphs(ds, paths, cfg: ExperimentConfig, seed: int) -> dict:
    """Per-node SCV on already solved paths; returns ``rule -> GraphEstimate``."""
    nbs, _ = scv_neighborhoods(ds, paths, cfg.scv_mode, cfg.M, cfg.folds, seed, cfg.epsilon, cfg.admm)
    return {rule: combine(nbs, rule) for rule in cfg.rules}


def replicate(cfg: ExperimentConfig, seed: int, threads: int = 1, keep_roc: bool = False) -> ReplicateResult:
    """One simulated dataset: AUC per (basis mode, rule) and optional SCV precision/recall."""
    theta = build_precision(PrecisionSpec(cfg.model, cfg.p, seed=seed))
    ds, truth = sample_dataset(theta, cfg.n, cfg.T, cfg.sigma, seed)
    t = np.asarray(cfg.t_values)
    out = ReplicateResult(seed, {})
    for mode in cfg.basis_modes:
        paths = graph_paths(ds, t, mode, cfg.M, cfg.admm, threads=threads)
        for rule in cfg.rules:
            curve = roc(graphs_along_path(paths, rule, cfg.epsilon), truth, t)
            out.auc[(mode, rule)] = auc(curve)
            if keep_roc:
                out.roc_rows[(mode, rule)] = curve.rows()
        if cfg.scv and mode == cfg.scv_mode:
            for rule, graph in scv_graphs(ds, paths, cfg, seed).items():
                out.scv[rule] = tuple(precision_recall(graph, truth))
    return out


def _replicate_task(ctx, seed):
    cfg, keep_roc = ctx
    return replicate(cfg, seed, 1, keep_roc)


@dataclass
class BatchResult:
    config: ExperimentConfig
    seeds: tuple
    replicates: list

    def auc_values(self, mode: str = "fpca_gy", rule: str = "AND") -> np.ndarray:
        return np.array([r.auc[(mode, rule)] for r in self.replicates])

    def scv_values(self, rule: str = "AND") -> np.ndarray:
        """``(runs, 2)`` array of precision and recall."""
        return np.array([r.scv[rule][:2] for r in self.replicates])

    def summary(self) -> dict:
        out = {"model": self.config.model, "p": self.config.p, "runs": len(self.replicates), "auc": {}, "scv": {}}
        for mode in self.config.basis_modes:
            for rule in self.config.rules:
                vals = self.auc_values(mode, rule)
                out["auc"][f"{mode}/{rule}"] = {"mean": float(vals.mean()), "sd": float(vals.std(ddof=1)) if vals.size > 1 else 0.0}
        if self.config.scv:
            for rule in self.config.rules:
                vals = self.scv_values(rule)
                sd = vals.std(axis=0, ddof=1) if len(vals) > 1 else np.zeros(2)
                out["scv"][rule] = {
                    "precision_mean": float(vals[:, 0].mean()), "precision_sd": float(sd[0]),
                    "recall_mean": float(vals[:, 1].mean()), "recall_sd": float(sd[1]),
                    "empty_predictions": int(sum(r.scv[rule][2] for r in self.replicates)),
                }
        return out


def run_batch(cfg: ExperimentConfig, seeds: Sequence[int], threads: int = 1, keep_roc: bool = False) -> BatchResult:
    """Replicates over ``seeds``, parallel across seeds; results are in seed order."""
    seeds = tuple(int(s) for s in seeds)
    if not seeds:
        raise ValidationError("need at least one seed")
    reps = map_ordered(_replicate_task, (cfg, keep_roc), seeds, threads)
    return BatchResult(cfg, seeds, reps)
