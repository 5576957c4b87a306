"""Multiple-shooting NMPC with learned-barrier constraints, solved by SQP.

Decision variables are all horizon states ``X`` (Np+1, 3) and inputs ``U``
(Np, 2). Constraints:

* ``X[0] = x0`` and ``X[k+1] = step(X[k], U[k])``;
* box bounds on ``X[1:]`` and ``U``;
* barrier condition ``hm(X[k+1]) - (1 - gamma) hm(X[k]) >= 0`` with
  ``hm = h - barrier_margin`` evaluated at the position part of the state.

Each SQP iteration linearises the constraints, condenses the QP onto the
input increments via the linearised dynamics, and solves it with the
active-set method in :mod:`nmpc_lbf.qp`. The Hessian is the (exact) Hessian of
the quadratic objective; constraint curvature is dropped (Gauss-Newton). The
general inequality rows share one elastic slack so the QP is always feasible.
Steps are globalised with an l1 merit function and backtracking.
"""
from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field

import numpy as np

from . import kinematics
from .kinematics import KinematicsParams
from .lbf import BarrierNet
from .qp import solve_qp
from .world import Pose

INF = float("inf")


class SolverStatus(str, enum.Enum):
    CONVERGED = "Converged"
    MAX_ITERATIONS = "MaxIterations"
    INFEASIBLE = "Infeasible"


def _as_matrix(w, n):
    w = np.asarray(w, dtype=float)
    if w.ndim == 1:
        if w.size != n:
            raise ValueError(f"expected {n} diagonal weights, got {w.size}")
        return np.diag(w)
    if w.shape != (n, n):
        raise ValueError(f"expected {n}x{n} weight matrix, got {w.shape}")
    return w


@dataclass(frozen=True, eq=False)
class NmpcConfig:
    horizon: int = 15
    Ts: float = 0.05
    Q: np.ndarray = (5.0, 5.0, 0.05)
    R: np.ndarray = (2.0, 0.5)
    x_min: tuple = (-INF, -INF, -INF)
    x_max: tuple = (INF, INF, INF)
    u_min: tuple = (-0.22, -2.84)
    u_max: tuple = (0.22, 2.84)
    gamma: float = 0.1
    barrier_margin: float = 0.0
    max_iter: int = 50
    tol: float = 1e-4
    infeasible_tol: float = 1e-2

    def __post_init__(self):
        Q = _as_matrix(self.Q, 3)
        R = _as_matrix(self.R, 2)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        for name, n in (("x_min", 3), ("x_max", 3), ("u_min", 2), ("u_max", 2)):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != (n,):
                raise ValueError(f"{name} must have {n} entries")
            object.__setattr__(self, name, v)
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not self.Ts > 0:
            raise ValueError("Ts must be > 0")
        if not np.allclose(Q, Q.T) or np.linalg.eigvalsh(Q).min() < -1e-12:
            raise ValueError("Q must be symmetric positive semidefinite")
        if not np.allclose(R, R.T) or np.linalg.eigvalsh(R).min() <= 0:
            raise ValueError("R must be symmetric positive definite")
        if np.any(self.x_min > self.x_max) or np.any(self.u_min > self.u_max):
            raise ValueError("bounds must satisfy min <= max")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if self.barrier_margin < 0:
            raise ValueError("barrier_margin must be >= 0")

    def replace(self, **kw) -> "NmpcConfig":
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update(kw)
        return NmpcConfig(**d)


@dataclass
class WarmStart:
    U_init: np.ndarray   # (Np, 2)
    X_init: np.ndarray   # (Np+1, 3)

    def __post_init__(self):
        self.U_init = np.array(self.U_init, dtype=float).reshape(-1, 2)
        self.X_init = np.array(self.X_init, dtype=float).reshape(-1, 3)
        if self.X_init.shape[0] != self.U_init.shape[0] + 1:
            raise ValueError("warm start needs Np+1 states for Np inputs")


@dataclass
class HorizonSolution:
    U_star: np.ndarray
    X_star: np.ndarray
    status: SolverStatus
    objective: float
    max_eq_violation: float
    max_cbc_violation: float
    iterations: int = 0
    stationarity: float = INF
    max_bound_violation: float = 0.0
    h_values: np.ndarray = field(default=None, repr=False)
    solve_time: float = 0.0


def stage_cost(x, u, x_ref, Q, R) -> float:
    """Quadratic tracking cost; the heading error is the raw difference."""
    e = np.asarray(x.as_array() if isinstance(x, Pose) else x, dtype=float) \
        - np.asarray(x_ref.as_array() if isinstance(x_ref, Pose) else x_ref, dtype=float)
    u = np.asarray(u.as_array() if hasattr(u, "as_array") else u, dtype=float)
    Q = _as_matrix(Q, 3)
    R = _as_matrix(R, 2)
    return float(e @ Q @ e + u @ R @ u)


def cold_start(x0, horizon: int) -> WarmStart:
    x0 = np.asarray(x0.as_array() if isinstance(x0, Pose) else x0, dtype=float)
    return WarmStart(np.zeros((horizon, 2)), np.tile(x0, (horizon + 1, 1)))


def shift_warm_start(prev, x_c) -> WarmStart:
    """Shift-and-hold the previous solution and pin the first state to ``x_c``.

    The shifted heading trajectory is moved by a multiple of 2*pi so it lines
    up with the wrapped heading of ``x_c``.
    """
    U = np.asarray(prev.U_star if isinstance(prev, HorizonSolution) else prev.U_init, dtype=float)
    X = np.asarray(prev.X_star if isinstance(prev, HorizonSolution) else prev.X_init, dtype=float)
    xc = np.asarray(x_c.as_array() if isinstance(x_c, Pose) else x_c, dtype=float)
    U_new = np.vstack([U[1:], U[-1:]])
    X_new = np.vstack([xc[None, :], X[2:], X[-1:]]) if X.shape[0] > 2 else np.vstack([xc, X[-1:]])
    if X_new.shape[0] > 1:
        turns = np.round((xc[2] - X_new[1, 2]) / (2 * np.pi))
        X_new[1:, 2] += 2 * np.pi * turns
    return WarmStart(U_new, X_new)


@dataclass
class NlpProblem:
    """One horizon's nonlinear program plus its initial point."""

    x0: np.ndarray
    x_ref: np.ndarray
    net: BarrierNet
    config: NmpcConfig
    kinematics: KinematicsParams
    X_init: np.ndarray = None
    U_init: np.ndarray = None

    @property
    def horizon(self) -> int:
        return self.config.horizon

    @property
    def n_vars(self) -> int:
        return 3 * (self.horizon + 1) + 2 * self.horizon

    @property
    def n_eq(self) -> int:
        return 3 * (self.horizon + 1)

    @property
    def n_cbc(self) -> int:
        return self.horizon

    # -- evaluation ---------------------------------------------------

    def objective(self, X, U) -> float:
        Q, R = self.config.Q, self.config.R
        E = X[:-1] - self.x_ref
        return float(np.einsum("ki,ij,kj->", E, Q, E) + np.einsum("ki,ij,kj->", U, R, U))

    def eq_residual(self, X, U) -> np.ndarray:
        """(Np+1, 3): initial-state pin followed by dynamics defects."""
        res = np.empty_like(X)
        res[0] = X[0] - self.x0
        res[1:] = X[1:] - kinematics.step_array(X[:-1], U, self.kinematics)
        return res

    def barrier(self, X):
        h, grad = self.net.value_and_gradient(X[:, :2])
        return h, grad

    def cbc_values(self, h) -> np.ndarray:
        hm = h - self.config.barrier_margin
        return hm[1:] - (1.0 - self.config.gamma) * hm[:-1]

    def bound_violation(self, X, U) -> np.ndarray:
        c = self.config
        vx = np.maximum(c.x_min - X[1:], 0.0) + np.maximum(X[1:] - c.x_max, 0.0)
        vu = np.maximum(c.u_min - U, 0.0) + np.maximum(U - c.u_max, 0.0)
        return np.concatenate([vx.ravel(), vu.ravel()])


def build_problem(x0, x_ref, net: BarrierNet, config: NmpcConfig,
                  kin: KinematicsParams, warm: WarmStart | None = None) -> NlpProblem:
    x0 = np.asarray(x0.as_array() if isinstance(x0, Pose) else x0, dtype=float)
    x_ref = np.asarray(x_ref.as_array() if isinstance(x_ref, Pose) else x_ref, dtype=float)
    if warm is None:
        warm = cold_start(x0, config.horizon)
    if warm.U_init.shape[0] != config.horizon:
        raise ValueError(f"warm start has {warm.U_init.shape[0]} inputs, horizon is {config.horizon}")
    if abs(kin.Ts - config.Ts) > 1e-15:
        raise ValueError("kinematics Ts and NMPC Ts differ")
    U = np.clip(warm.U_init, config.u_min, config.u_max)
    return NlpProblem(x0=x0, x_ref=x_ref, net=net, config=config, kinematics=kin,
                      X_init=warm.X_init.copy(), U_init=U)


class _Eval:
    """Everything the SQP needs at one iterate."""

    def __init__(self, prob: NlpProblem, X, U, with_grad=True):
        self.X, self.U = X, U
        self.f = prob.objective(X, U)
        self.c_eq = prob.eq_residual(X, U)
        if with_grad:
            self.h, self.dh = prob.barrier(X)
        else:
            self.h = prob.net.predict(X[:, :2])
            self.dh = None
        self.cbc = prob.cbc_values(self.h)
        self.bnd = prob.bound_violation(X, U)
        self.eq_max = float(np.abs(self.c_eq).max())
        self.cbc_max = float(max(0.0, -self.cbc.min()))
        self.bnd_max = float(self.bnd.max(initial=0.0))
        self.viol_l1 = float(np.abs(self.c_eq).sum() + np.maximum(-self.cbc, 0.0).sum()
                             + self.bnd.sum())

    @property
    def viol_max(self) -> float:
        return max(self.eq_max, self.cbc_max, self.bnd_max)

    def merit(self, rho: float) -> float:
        return self.f + rho * self.viol_l1


def _condense(prob: NlpProblem, ev: _Eval):
    """Linearised state increments as ``dX = M dU + m`` (flattened)."""
    N = prob.horizon
    A, B = kinematics.jacobians(ev.X[:-1], ev.U, prob.kinematics)
    M = np.zeros((N + 1, 3, N, 2))
    m = np.zeros((N + 1, 3))
    m[0] = -ev.c_eq[0]
    for k in range(N):
        M[k + 1] = np.einsum("ij,jnl->inl", A[k], M[k])
        M[k + 1, :, k, :] = B[k]
        m[k + 1] = A[k] @ m[k] - ev.c_eq[k + 1]
    return M.reshape(3 * (N + 1), 2 * N), m.ravel()


def solve(problem: NlpProblem, warm: WarmStart | None = None, *,
          elastic_weight: float = 1e4) -> HorizonSolution:
    """Solve the horizon NLP from the problem's (or the given) warm start."""
    t_start = time.perf_counter()
    prob = problem
    cfg = prob.config
    N = cfg.horizon
    if warm is not None:
        X = np.array(warm.X_init, dtype=float)
        U = np.clip(np.array(warm.U_init, dtype=float), cfg.u_min, cfg.u_max)
    else:
        X, U = prob.X_init.copy(), prob.U_init.copy()

    nx = 3 * (N + 1)
    Qk = 2.0 * cfg.Q
    Hx_blocks = np.zeros((N + 1, 3, 3))
    Hx_blocks[:N] = Qk
    Hx = np.zeros((nx, nx))
    for k in range(N + 1):
        Hx[3 * k:3 * k + 3, 3 * k:3 * k + 3] = Hx_blocks[k]
    Hu = np.kron(np.eye(N), 2.0 * cfg.R)

    # finite state-bound rows on X[1:]
    bound_rows = [(k, j, lo, hi) for k in range(1, N + 1) for j in range(3)
                  for lo, hi in [(cfg.x_min[j], cfg.x_max[j])]
                  if np.isfinite(lo) or np.isfinite(hi)]

    ev = _Eval(prob, X, U)
    warm_eval = ev
    rho = 1.0
    status = SolverStatus.MAX_ITERATIONS
    stationarity = INF
    elastic_streak = 0
    it = 0
    for it in range(1, cfg.max_iter + 1):
        M, m = _condense(prob, ev)
        gx = np.zeros((N + 1, 3))
        gx[:N] = 2.0 * (ev.X[:N] - prob.x_ref) @ cfg.Q
        gx = gx.ravel()
        gu = (2.0 * ev.U @ cfg.R).ravel()
        HxM = Hx @ M
        Gu = M.T @ HxM + Hu
        hu = M.T @ (gx + Hx @ m) + gu

        # barrier rows over the flattened state increment
        J = np.zeros((N, nx))
        keep = 1.0 - cfg.gamma
        for k in range(N):
            J[k, 3 * (k + 1):3 * (k + 1) + 2] = ev.dh[k + 1]
            J[k, 3 * k:3 * k + 2] = -keep * ev.dh[k]
        rows = [J @ M]
        rhs = [-(ev.cbc + J @ m)]
        if bound_rows:
            Rb, bb = [], []
            for k, j, lo, hi in bound_rows:
                i = 3 * k + j
                if np.isfinite(lo):
                    Rb.append(M[i])
                    bb.append(lo - ev.X[k, j] - m[i])
                if np.isfinite(hi):
                    Rb.append(-M[i])
                    bb.append(ev.X[k, j] + m[i] - hi)
            rows.append(np.array(Rb))
            rhs.append(np.array(bb))
        Arow = np.vstack(rows)
        brow = np.concatenate(rhs)

        nu = 2 * N
        G = np.zeros((nu + 1, nu + 1))
        G[:nu, :nu] = Gu
        G[nu, nu] = 1e-6
        c = np.concatenate([hu, [elastic_weight]])
        A = np.hstack([Arow, np.ones((Arow.shape[0], 1))])
        lb = np.concatenate([(cfg.u_min - ev.U).ravel(), [0.0]])
        ub = np.concatenate([(cfg.u_max - ev.U).ravel(), [INF]])
        lb = np.minimum(lb, 0.0)
        ub = np.maximum(ub, 0.0)
        w0 = np.zeros(nu + 1)
        w0[nu] = max(0.0, float(brow.max(initial=0.0)))
        qp = solve_qp(G, c, A, brow, lb, ub, w0)
        dU = qp.x[:nu]
        slack = qp.x[nu]
        stationarity = float(np.abs(Gu @ dU).max())

        if (ev.viol_max <= cfg.tol and stationarity <= cfg.tol and slack <= cfg.tol):
            status = SolverStatus.CONVERGED
            break

        elastic_streak = elastic_streak + 1 if slack > cfg.tol else 0
        if elastic_streak >= 10 and ev.viol_max > cfg.infeasible_tol:
            status = SolverStatus.INFEASIBLE
            break

        dX = (M @ dU + m).reshape(N + 1, 3)
        dU2 = dU.reshape(N, 2)
        grad_dot = float(gx @ dX.ravel() + gu @ dU)
        curv = float(dX.ravel() @ Hx @ dX.ravel() + dU @ Hu @ dU)
        lam_max = float(np.abs(qp.lam).max(initial=0.0))
        if ev.viol_l1 > 0:
            rho_req = (grad_dot + 0.5 * max(curv, 0.0)) / (0.5 * ev.viol_l1)
            rho = max(rho, rho_req + 1e-3, 1.1 * lam_max)
        else:
            rho = max(rho, 1.1 * lam_max)
        D = grad_dot - rho * ev.viol_l1
        phi0 = ev.merit(rho)

        alpha = 1.0
        accepted = None
        while alpha >= 1e-6:
            Xt = ev.X + alpha * dX
            Ut = np.clip(ev.U + alpha * dU2, cfg.u_min, cfg.u_max)
            trial = _Eval(prob, Xt, Ut)
            if trial.merit(rho) <= phi0 + 1e-4 * alpha * min(D, 0.0):
                if D < 0 or trial.merit(rho) < phi0:
                    accepted = trial
                    break
            if alpha == 1.0:
                # second-order correction: re-simulate the states from x0
                Xs = kinematics.rollout_array(prob.x0, Ut, prob.kinematics)
                soc = _Eval(prob, Xs, Ut)
                if soc.merit(rho) <= phi0 + 1e-4 * min(D, 0.0) and (D < 0 or soc.merit(rho) < phi0):
                    accepted = soc
                    break
            alpha *= 0.5
        if accepted is None:
            break
        ev = accepted

    if status is SolverStatus.MAX_ITERATIONS:
        if ev.viol_max > cfg.infeasible_tol:
            status = SolverStatus.INFEASIBLE

    # descent safeguard: never return worse than a feasible warm start
    if (status is not SolverStatus.CONVERGED and warm_eval.viol_max <= cfg.tol
            and warm_eval.f < ev.f):
        ev = warm_eval

    return HorizonSolution(
        U_star=ev.U.copy(), X_star=ev.X.copy(), status=status, objective=ev.f,
        max_eq_violation=ev.eq_max, max_cbc_violation=ev.cbc_max, iterations=it,
        stationarity=stationarity, max_bound_violation=ev.bnd_max, h_values=ev.h.copy(),
        solve_time=time.perf_counter() - t_start)
