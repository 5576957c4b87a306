"""Dense primal active-set QP with native box constraints.

Solves::

    min  0.5 x'Gx + c'x
    s.t. A x >= b
         lb <= x <= ub

from a feasible starting point. Bounds are handled by fixing variables rather
than as general rows, so each iteration solves a KKT system in the free
variables only. Intended for small problems (tens of variables).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class QPResult:
    x: np.ndarray
    lam: np.ndarray        # multipliers of A x >= b (>= 0)
    mu: np.ndarray         # bound multipliers; >0 at lower, <0 at upper
    iterations: int
    optimal: bool


class QPError(RuntimeError):
    pass


def _eqp(G, grad, A_w, free):
    """Step and multipliers for the equality-constrained subproblem on free variables."""
    Gf = G[np.ix_(free, free)]
    Af = A_w[:, free]
    m = Af.shape[0]
    nf = Gf.shape[0]
    K = np.zeros((nf + m, nf + m))
    K[:nf, :nf] = Gf
    K[:nf, nf:] = -Af.T
    K[nf:, :nf] = Af
    rhs = np.concatenate([-grad[free], np.zeros(m)])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    return sol[:nf], sol[nf:]


def solve_qp(G, c, A, b, lb, ub, x0, max_iter: int = 500, tol: float = 1e-10) -> QPResult:
    G = np.asarray(G, dtype=float)
    c = np.asarray(c, dtype=float)
    n = c.size
    A = np.asarray(A, dtype=float).reshape(-1, n)
    b = np.asarray(b, dtype=float).reshape(-1)
    lb = np.asarray(lb, dtype=float)
    ub = np.asarray(ub, dtype=float)
    x = np.array(x0, dtype=float)

    if np.any(x < lb - 1e-9) or np.any(x > ub + 1e-9):
        raise QPError("starting point violates bounds")
    if A.shape[0] and np.any(A @ x < b - 1e-9):
        raise QPError("starting point violates general constraints")
    x = np.clip(x, lb, ub)

    # bound state: 0 free, -1 fixed at lower, +1 fixed at upper
    fixed = np.zeros(n, dtype=int)
    fixed[(x <= lb) & (lb == ub)] = -1
    working: list[int] = []
    lam = np.zeros(A.shape[0])
    scale = 1.0 + np.abs(c).max(initial=0.0) + np.abs(G).max(initial=0.0)

    for it in range(1, max_iter + 1):
        grad = G @ x + c
        free = np.flatnonzero(fixed == 0)
        A_w = A[working] if working else np.zeros((0, n))
        if free.size:
            p_free, lam_w = _eqp(G, grad, A_w, free)
        else:
            # every variable sits on a bound; rows in the working set carry no weight
            p_free, lam_w = np.zeros(0), np.zeros(len(working))
        p = np.zeros(n)
        p[free] = p_free

        if np.abs(p).max(initial=0.0) <= tol * (1.0 + np.abs(x).max(initial=0.0)):
            # multipliers of active bounds from the stationarity residual
            resid = grad + G @ p - (A_w.T @ lam_w if working else 0.0)
            mu = np.where(fixed != 0, resid, 0.0)
            # sign-adjusted: lower bound wants mu >= 0, upper wants mu <= 0
            bound_viol = np.where(fixed == -1, mu, np.where(fixed == 1, -mu, np.inf))
            worst_gen = int(np.argmin(lam_w)) if working else -1
            gen_min = lam_w[worst_gen] if working else np.inf
            j = int(np.argmin(bound_viol))
            bnd_min = bound_viol[j]
            thresh = -1e-9 * scale
            if min(gen_min, bnd_min) >= thresh:
                lam = np.zeros(A.shape[0])
                lam[working] = lam_w
                return QPResult(x, lam, mu, it, True)
            if gen_min <= bnd_min:
                working.pop(worst_gen)
            else:
                fixed[j] = 0
            continue

        alpha = 1.0
        block_kind, block_idx = None, -1
        if A.shape[0]:
            Ap = A @ p
            inactive = np.ones(A.shape[0], dtype=bool)
            inactive[working] = False
            cand = np.flatnonzero(inactive & (Ap < -1e-14))
            if cand.size:
                ratios = np.maximum((b[cand] - A[cand] @ x) / Ap[cand], 0.0)
                k = int(np.argmin(ratios))
                if ratios[k] < alpha:
                    alpha, block_kind, block_idx = ratios[k], "gen", int(cand[k])
        lo = np.flatnonzero((fixed == 0) & (p < 0) & np.isfinite(lb))
        if lo.size:
            ratios = np.maximum((lb[lo] - x[lo]) / p[lo], 0.0)
            k = int(np.argmin(ratios))
            if ratios[k] < alpha:
                alpha, block_kind, block_idx = ratios[k], "lo", int(lo[k])
        hi = np.flatnonzero((fixed == 0) & (p > 0) & np.isfinite(ub))
        if hi.size:
            ratios = np.maximum((ub[hi] - x[hi]) / p[hi], 0.0)
            k = int(np.argmin(ratios))
            if ratios[k] < alpha:
                alpha, block_kind, block_idx = ratios[k], "hi", int(hi[k])

        x = x + alpha * p
        if block_kind == "gen":
            working.append(block_idx)
        elif block_kind == "lo":
            x[block_idx] = lb[block_idx]
            fixed[block_idx] = -1
        elif block_kind == "hi":
            x[block_idx] = ub[block_idx]
            fixed[block_idx] = 1

    lam = np.zeros(A.shape[0])
    mu = np.zeros(n)
    return QPResult(x, lam, mu, max_iter, False)
