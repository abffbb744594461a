"""Compiled inner loop of the group-lasso ADMM.

Layout: the ``K`` predictor score matrices are stacked column-wise into
``AXs`` (n x K*M); coefficient blocks are stacked row-wise into ``P``
(K*M x M), so ``AXs @ P`` is ``sum_k A_k P_k`` and ``AXs.T @ W`` stacks
``A_k^T W``.
"""

import numpy as np
from numba import njit

STATUS_OK = 0
STATUS_MAXITER = 1
STATUS_NAN = 2
STATUS_BRACKET = 3

PINV_RTOL = 1e-12
# groups whose norm exceeds the threshold by less than this relative margin
# are zero to working precision (the ridge parameter diverges)
ZERO_SLACK = 1e-12


@njit(cache=True)
def _p_step(AtV, evals, evecs, thresh, bis_tol, bis_max, P):
    """Group-wise ridge/bisection update. Returns a status code."""
    K = evals.shape[0]
    M = evals.shape[1]
    c = np.empty((M, M))
    w = np.empty(M)
    for k in range(K):
        base = k * M
        lam_max = 0.0
        for i in range(M):
            if evals[k, i] > lam_max:
                lam_max = evals[k, i]

        # c = Psi_k^T (A_k^T V_k); A_k^T V_k lies in the range of A_k^T, so
        # components along numerically null eigenvectors are rounding noise
        norm2 = 0.0
        for i in range(M):
            acc2 = 0.0
            for j in range(M):
                if evals[k, i] <= PINV_RTOL * lam_max:
                    c[i, j] = 0.0
                    continue
                acc = 0.0
                for r in range(M):
                    acc += evecs[k, r, i] * AtV[base + r, j]
                c[i, j] = acc
                acc2 += acc * acc
            w[i] = acc2
            norm2 += acc2
        norm = np.sqrt(norm2)
        if not np.isfinite(norm):
            return STATUS_NAN
        if norm <= thresh * (1.0 + ZERO_SLACK):
            for i in range(M):
                for j in range(M):
                    P[base + i, j] = 0.0
            continue

        nu = 0.0
        if thresh > 0.0:
            # g(nu) = nu * ||P(nu)|| - thresh increases from -thresh towards
            # ||A^T V|| - thresh > 0. Since nu/(lam + nu) is monotone in lam,
            # the root lies in [lam_min, lam_max] * t / (1 - t).
            t = thresh / norm
            lam_min = lam_max
            for i in range(M):
                if w[i] > 0.0 and evals[k, i] < lam_min:
                    lam_min = evals[k, i]
            nu_l = lam_min * t / (1.0 - t)
            nu_r = lam_max * t / (1.0 - t)
            if nu_r <= 0.0:
                nu_r = norm / thresh
            bracketed = False
            for _ in range(bis_max):
                f2 = 0.0
                for i in range(M):
                    d = evals[k, i] + nu_r
                    f2 += w[i] / (d * d)
                if nu_r * np.sqrt(f2) >= thresh:
                    bracketed = True
                    break
                nu_l = nu_r
                nu_r *= 2.0
            if not bracketed:
                return STATUS_BRACKET
            # safeguarded Newton: g is increasing and close to concave, so
            # steps from the left stay in the bracket; bisect otherwise
            nu = nu_l if nu_l > 0.0 else 0.5 * nu_r
            for _ in range(bis_max):
                f2 = 0.0
                df = 0.0
                for i in range(M):
                    lam_i = evals[k, i] if evals[k, i] > 0.0 else 0.0
                    d = lam_i + nu
                    q = w[i] / (d * d)
                    f2 += q
                    df += q * lam_i / d
                f = nu * np.sqrt(f2)
                g = f - thresh
                if g > 0.0:
                    nu_r = nu
                else:
                    nu_l = nu
                if g == 0.0 or nu_r - nu_l <= bis_tol * nu_r:
                    break
                # d/dnu of nu * ||P(nu)|| = sum_i w_i lam_i / d_i^3 / ||P(nu)||
                slope = df / np.sqrt(f2) if f2 > 0.0 else 0.0
                nxt = nu - g / slope if slope > 0.0 else -1.0
                if not (nu_l < nxt < nu_r):
                    nxt = 0.5 * (nu_l + nu_r)
                if abs(nxt - nu) <= bis_tol * nxt:
                    nu = nxt
                    break
                nu = nxt
        # P_k = Psi_k (Lambda_k + nu I)^{-1} c, pseudo-inverse when nu = 0
        for i in range(M):
            d = evals[k, i] + nu
            if nu == 0.0 and evals[k, i] <= PINV_RTOL * lam_max:
                inv = 0.0
            else:
                inv = 1.0 / d
            for j in range(M):
                w_ij = inv * c[i, j]
                c[i, j] = w_ij
        for i in range(M):
            for j in range(M):
                acc = 0.0
                for r in range(M):
                    acc += evecs[k, i, r] * c[r, j]
                P[base + i, j] = acc
    return STATUS_OK


@njit(cache=True)
def carried_products(AXs, P, Qbar, U):
    """``A^T Qbar``, ``A^T U`` and ``A^T avg(A P)`` for a given iterate."""
    K = P.shape[0] // P.shape[1]
    avg = (AXs @ P) / K
    return AXs.T @ Qbar, AXs.T @ U, AXs.T @ avg


@njit(cache=True)
def admm_step(AXs, G, evals, evecs, AY, AtY, lam, P, Qbar, U, AtQ, AtU, AtAvg,
              rho, bis_tol, bis_max):
    """One ADMM iterate, updating ``P``, ``Qbar``, ``U`` and the carried
    products ``AtQ = A^T Qbar``, ``AtU = A^T U``, ``AtAvg = A^T avg(A P)``
    in place.

    Returns ``(status, primal, dual, avg_norm, qbar_norm, rho_AtU_norm)``.
    """
    n = AY.shape[0]
    M = AY.shape[1]
    K = evals.shape[0]

    # A_k^T V_k = A_k^T A_k P_k + A_k^T (Qbar - avg - U)
    AtV = AtQ - AtAvg - AtU
    for k in range(K):
        base = k * M
        for i in range(M):
            for j in range(M):
                acc = 0.0
                for r in range(M):
                    acc += G[k, i, r] * P[base + r, j]
                AtV[base + i, j] += acc

    status = _p_step(AtV, evals, evecs, lam / rho, bis_tol, bis_max, P)
    if status != STATUS_OK:
        return status, np.nan, np.nan, np.nan, np.nan, np.nan

    avg = (AXs @ P) / K
    AtAvg_new = AXs.T @ avg
    denom = K + rho * n
    Qnew = (AY + rho * n * (avg + U)) / denom
    AtQ_new = (AtY + rho * n * (AtAvg_new + AtU)) / denom
    diff = avg - Qnew
    U += diff
    Qbar[:, :] = Qnew
    dual = rho * np.sqrt(np.sum((AtQ_new - AtQ) ** 2))
    AtU += AtAvg_new - AtQ_new
    AtQ[:, :] = AtQ_new
    AtAvg[:, :] = AtAvg_new

    primal = np.sqrt(K) * np.sqrt(np.sum(diff * diff))
    rho_AtU = rho * np.sqrt(np.sum(AtU * AtU))
    avg_norm = np.sqrt(np.sum(avg * avg))
    q_norm = np.sqrt(np.sum(Qnew * Qnew))
    if not (np.isfinite(primal) and np.isfinite(dual) and np.isfinite(rho_AtU)):
        return STATUS_NAN, primal, dual, avg_norm, q_norm, rho_AtU
    return STATUS_OK, primal, dual, avg_norm, q_norm, rho_AtU


@njit(cache=True)
def update_rho(rho, primal, dual, phi, tau_incr, tau_decr):
    if primal > phi * dual:
        return rho * tau_incr
    if dual > phi * primal:
        return rho / tau_decr
    return rho


@njit(cache=True)
def admm_solve(AXs, G, evals, evecs, AY, AtY, lam, P, Qbar, U, rho,
               eps_abs, eps_rel, phi, tau_incr, tau_decr, max_iter,
               bis_tol, bis_max, adapt_rho, trace):
    """Iterate until both residual tests pass or ``max_iter`` is hit.

    ``trace`` (max_iter x 3) receives primal, dual and rho per iterate.
    Returns ``(iterations, status, primal, dual, rho)``.
    """
    n = AY.shape[0]
    K = evals.shape[0]
    primal = np.inf
    dual = np.inf
    sqrtK = np.sqrt(K)
    sqrtn = np.sqrt(n)
    AtQ, AtU, AtAvg = carried_products(AXs, P, Qbar, U)
    for h in range(max_iter):
        status, primal, dual, avg_norm, q_norm, rho_AtU = admm_step(
            AXs, G, evals, evecs, AY, AtY, lam, P, Qbar, U, AtQ, AtU, AtAvg,
            rho, bis_tol, bis_max
        )
        trace[h, 0] = primal
        trace[h, 1] = dual
        trace[h, 2] = rho
        if status != STATUS_OK:
            return h + 1, status, primal, dual, rho
        eps_pri = sqrtK * eps_abs + eps_rel * max(avg_norm, q_norm)
        eps_dual = sqrtn * eps_abs + eps_rel * rho_AtU
        if primal <= eps_pri and dual <= eps_dual:
            return h + 1, STATUS_OK, primal, dual, rho
        if adapt_rho:
            new_rho = update_rho(rho, primal, dual, phi, tau_incr, tau_decr)
            if new_rho != rho:
                # keep the unscaled multiplier rho * U fixed
                scale = rho / new_rho
                U *= scale
                AtU *= scale
                rho = new_rho
    return max_iter, STATUS_MAXITER, primal, dual, rho
