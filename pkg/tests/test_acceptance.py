"""Acceptance harness.

Each test prints one ``PASS``/``FAIL`` line for its criterion. The simulation
batches are computed once per module and shared between criteria.
"""

import numpy as np
import pytest

from oracles import (
    group_lasso_fista,
    group_lasso_objective,
    group_soft_threshold,
    legendre_pair,
    orthogonal_design,
)
from fungraph.basis import estimate_fpca, gram_schmidt
from fungraph.cli import main
from fungraph.evaluation import auc, confusion, roc
from fungraph.experiment import ExperimentConfig, run_batch
from fungraph.functional import FunctionMatrix, Grid
from fungraph.grouplasso import AdmmConfig, GroupLassoProblem, kkt_violation, lambda_max, solve_admm
from fungraph.neighborhood import GraphEstimate, NeighborhoodEstimate, combine
from fungraph.parallel import resolve_threads

SEEDS = range(1, 31)
TIGHT = AdmmConfig(eps_abs=1e-10, eps_rel=1e-10, max_iter=100_000)


@pytest.fixture
def report(capsys):
    def emit(name, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        return ok
    return emit


@pytest.fixture(scope="module")
def batch_a():
    cfg = ExperimentConfig(model="A", basis_modes=("fpca_gy", "fpca_gx"))
    return run_batch(cfg, SEEDS, threads=resolve_threads())


@pytest.fixture(scope="module")
def batch_b():
    cfg = ExperimentConfig(model="B", scv=True)
    return run_batch(cfg, SEEDS, threads=resolve_threads())


@pytest.fixture(scope="module")
def batch_d():
    return run_batch(ExperimentConfig(model="D"), SEEDS, threads=resolve_threads())


def band(values, target, tol=0.05):
    mean = float(np.mean(values))
    return abs(mean - target) <= tol, f"mean AUC {mean:.4f} (sd {np.std(values, ddof=1):.4f}), target {target} +/- {tol}"


# --- simulation criteria ------------------------------------------------------


def test_c1_model_a_auc(batch_a, report):
    ok, detail = band(batch_a.auc_values("fpca_gy", "AND"), 0.901)
    assert report("C1 Model A p=50 FPCA-gY AND AUC", ok, detail)


def test_c2_gy_not_worse_than_gx(batch_a, report):
    gy = batch_a.auc_values("fpca_gy", "AND").mean()
    gx = batch_a.auc_values("fpca_gx", "AND").mean()
    ok = gy >= gx - 0.01
    assert report("C2 basis-mode ordering", ok, f"gY {gy:.4f} vs gX {gx:.4f} (slack 0.01)")


def test_c3_model_b_auc(batch_b, report):
    ok, detail = band(batch_b.auc_values("fpca_gy", "AND"), 0.962)
    assert report("C3 Model B p=50 AUC", ok, detail)


def test_c3_model_d_auc(batch_d, report):
    ok, detail = band(batch_d.auc_values("fpca_gy", "AND"), 0.983)
    assert report("C3 Model D p=50 AUC", ok, detail)


def test_scv_precision_recall_band(batch_b, report):
    pr = batch_b.scv_values("AND")
    precision, recall = pr.mean(axis=0)
    ok = precision >= 0.5 and recall >= 0.35
    detail = f"precision {precision:.3f} (>= 0.5), recall {recall:.3f} (>= 0.35)"
    assert report("SCV Model B p=50 AND precision/recall band", ok, detail)


# --- solver criteria ----------------------------------------------------------


def random_problem(rng):
    n = int(rng.integers(8, 31))
    K = int(rng.integers(1, 6))
    M = int(rng.integers(1, 4))
    x = rng.standard_normal((K, n, M))
    coef = rng.standard_normal((K, M, M)) * (rng.random(K) < 0.5)[:, None, None]
    y = np.einsum("kim,kml->il", x, coef) + rng.standard_normal((n, M))
    return GroupLassoProblem(y, x)


def test_c4_oracle_equivalence(report):
    rng = np.random.default_rng(2024)
    worst_obj = worst_kkt = 0.0
    for lam_frac in np.linspace(0.05, 0.95, 50):
        pr = random_problem(rng)
        lam = float(lam_frac) * lambda_max(pr)
        pr = pr.with_lambda(lam)
        sol = solve_admm(pr, TIGHT)
        ref = group_lasso_fista(pr.y, pr.x, lam)
        worst_obj = max(worst_obj, abs(sol.objective - group_lasso_objective(pr.y, pr.x, lam, ref)))
        worst_kkt = max(worst_kkt, float(np.max(kkt_violation(pr, sol.b_hat))))
    ok = worst_obj <= 1e-6 and worst_kkt <= 1e-4
    assert report("C4 ADMM vs proximal gradient", ok,
                  f"max |objective gap| {worst_obj:.2e} (<= 1e-6), max KKT {worst_kkt:.2e} (<= 1e-4), 50 instances")


def test_c5_lambda_max_certificate(report):
    rng = np.random.default_rng(7)
    zero_ok = nonzero_ok = 0
    for _ in range(100):
        pr = random_problem(rng)
        lm = lambda_max(pr)
        assert lm > 0
        zero_ok += bool(np.all(solve_admm(pr.with_lambda(1.01 * lm)).b_hat == 0.0))
        nonzero_ok += len(solve_admm(pr.with_lambda(0.5 * lm)).support()) >= 1
    ok = zero_ok == 100 and nonzero_ok == 100
    assert report("C5 lambda_max certificate", ok,
                  f"exact zeros at 1.01*lmax {zero_ok}/100, nonzero at 0.5*lmax {nonzero_ok}/100")


# --- basis criteria -----------------------------------------------------------


def test_c6_fpca_properties(report):
    rng = np.random.default_rng(6)
    gram = recon = var = 0.0
    for _ in range(100):
        T = int(rng.integers(10, 80))
        n = int(rng.integers(3, 60))
        M = int(rng.integers(1, min(n, T, 8) + 1))
        grid = Grid(0.0, float(rng.uniform(0.5, 3.0)), T)
        # exactly rank M so the truncated expansion reproduces the covariance
        X = (rng.standard_normal((n, M)) * rng.uniform(0.5, 3.0, M)) @ rng.standard_normal((M, T))
        b = estimate_fpca(FunctionMatrix(grid, X), M)
        K = X.T @ X / n
        scores = b.project(X)
        gram = max(gram, b.orthonormality_error())
        recon = max(recon, np.max(np.abs((b.functions.T * b.eigenvalues) @ b.functions - K)) / np.max(np.abs(K)))
        var = max(var, np.max(np.abs(np.mean(scores ** 2, axis=0) - b.eigenvalues)) / b.eigenvalues[0])
    ok = gram < 1e-8 and recon < 1e-6 and var < 1e-8
    assert report("C6 FPCA properties", ok,
                  f"max Gram err {gram:.1e}, reconstruction {recon:.1e}, score variance {var:.1e} over 100 trials")


def test_c7_closed_forms(report):
    rng = np.random.default_rng(77)
    n, K, M = 40, 4, 3
    x = orthogonal_design(n, K, M, rng)
    y = 2.0 * rng.standard_normal((n, M))
    pr = GroupLassoProblem(y, x)
    lam = 0.5 * lambda_max(pr)
    sol = solve_admm(pr.with_lambda(lam), TIGHT)
    st_err = np.max(np.abs(sol.b_hat - group_soft_threshold(np.einsum("kim,il->kml", x, y) / n, lam)))
    g = Grid(0, 1, 10_000)
    gs = gram_schmidt(np.vstack([np.ones(g.T), g.points]), g)
    gs_err = max(np.max(np.abs(f - ref)) for f, ref in zip(gs.functions, legendre_pair(g.points)))
    ok = st_err < 1e-5 and gs_err < 1e-8
    assert report("C7 closed-form checks", ok, f"soft-threshold err {st_err:.1e} (< 1e-5), Legendre err {gs_err:.1e} (< 1e-8)")


# --- structural criteria ------------------------------------------------------


def random_adjacency(rng, p, density):
    upper = np.triu(rng.random((p, p)) < density, 1)
    return upper | upper.T


def structural_case(rng):
    p = int(rng.integers(2, 25))
    sel = rng.random((p, p)) < rng.random()
    np.fill_diagonal(sel, False)
    nbs = [NeighborhoodEstimate(j, frozenset(np.flatnonzero(sel[j]).tolist()), {}, 0.0) for j in range(p)]
    a, o = combine(nbs, "AND").adjacency, combine(nbs, "OR").adjacency
    if not (np.all(a <= o) and all(np.array_equal(g, g.T) and not g.diagonal().any() for g in (a, o))):
        return False
    est = GraphEstimate(random_adjacency(rng, p, rng.random()))
    truth = GraphEstimate(random_adjacency(rng, p, rng.random()))
    c = confusion(est, truth)
    if sum(c) != p * (p - 1) // 2 or min(c) < 0:
        return False
    iu = np.triu_indices(p, 1)
    if truth.adjacency[iu].all() or not truth.adjacency[iu].any():
        return True
    order = rng.permutation(iu[0].size)
    path = []
    for cut in np.sort(rng.integers(0, order.size + 1, size=int(rng.integers(1, 12)))):
        adj = np.zeros((p, p), dtype=bool)
        adj[iu[0][order[:cut]], iu[1][order[:cut]]] = True
        path.append(GraphEstimate(adj | adj.T))
    curve = roc(path, truth)
    return bool(np.all(np.diff(curve.fpr) >= 0) and np.all(np.diff(curve.tpr) >= 0) and 0 <= auc(curve) <= 1)


def test_c8_structural_invariants(report):
    rng = np.random.default_rng(8)
    passed = sum(structural_case(rng) for _ in range(1000))
    assert report("C8 structural invariants", passed == 1000, f"{passed}/1000 randomized cases")


# --- determinism --------------------------------------------------------------


def cli_run(workdir, threads):
    workdir.mkdir()
    steps = [
        ["simulate", "--model", "A", "--p", "8", "--n", "40", "--T", "30", "--seed", "5", "--out", "d.fgm"],
        ["estimate", "--data", "d.fgm", "--scv", "--t-num", "8", "--out", "g"],
        ["roc", "--data", "d.fgm", "--truth", "d.fgm.truth.json", "--t-num", "8", "--out", "r"],
    ]
    for argv in steps:
        argv = [str(workdir / a) if a in ("d.fgm", "g", "r", "d.fgm.truth.json") else a for a in argv]
        assert main(argv + ["--threads", str(threads)]) == 0
    return {f.name: f.read_bytes() for f in sorted(workdir.iterdir())}


def test_c9_determinism(tmp_path, monkeypatch, report):
    monkeypatch.delenv("FGM_THREADS", raising=False)
    first = cli_run(tmp_path / "a", 1)
    again = cli_run(tmp_path / "b", 1)
    four = cli_run(tmp_path / "c", 4)
    ok = first == again == four and len(first) >= 10
    assert report("C9 byte-identical outputs", ok, f"{len(first)} files compared across two runs and threads {{1, 4}}")
