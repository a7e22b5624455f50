"""Small dense convex QP solver.

    minimize    0.5 x'Hx + g'x
    subject to  l <= A x <= u,   x_lb <= x <= x_ub

Strategy: a few iterations of an active-set search seeded from a warm start
(cheap and exact when the guess is close, which is the common case when
consecutive problems barely differ), falling back to OSQP-style ADMM whose
iterates are periodically *polished* by solving the KKT system on the active
set the ADMM iterate predicts.  Primal infeasibility is detected from the
ADMM dual increments and reported as a status, never raised.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize

__all__ = ["QpProblem", "QpSolution", "QpStatus", "kkt_residual", "solve_qp"]

TOL_FEAS = 1e-6
TOL_OPT = 1e-6


class QpStatus(str, enum.Enum):
    OPTIMAL = "Optimal"
    PRIMAL_INFEASIBLE = "PrimalInfeasible"
    MAX_ITERATIONS = "MaxIterations"


@dataclass(frozen=True, eq=False)
class QpProblem:
    H: np.ndarray
    g: np.ndarray
    A: np.ndarray | None = None
    l: np.ndarray | None = None
    u: np.ndarray | None = None
    x_lb: np.ndarray | None = None
    x_ub: np.ndarray | None = None

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        g = np.asarray(self.g, dtype=float).ravel()
        n = g.size
        if H.shape != (n, n):
            raise ValueError(f"H must be {n}x{n}, got {H.shape}")
        if np.max(np.abs(H - H.T), initial=0.0) > 1e-10 * max(1.0, np.max(np.abs(H), initial=0.0)):
            raise ValueError("H must be symmetric")
        A = np.zeros((0, n)) if self.A is None else np.atleast_2d(np.asarray(self.A, dtype=float))
        if A.shape[1] != n:
            raise ValueError(f"A must have {n} columns, got {A.shape}")
        m = A.shape[0]
        l = np.full(m, -np.inf) if self.l is None else np.asarray(self.l, dtype=float).ravel()
        u = np.full(m, np.inf) if self.u is None else np.asarray(self.u, dtype=float).ravel()
        lb = np.full(n, -np.inf) if self.x_lb is None else np.asarray(self.x_lb, dtype=float).ravel()
        ub = np.full(n, np.inf) if self.x_ub is None else np.asarray(self.x_ub, dtype=float).ravel()
        if l.size != m or u.size != m or lb.size != n or ub.size != n:
            raise ValueError("bound vectors have inconsistent sizes")
        if np.any(l > u) or np.any(lb > ub):
            raise ValueError("lower bounds must not exceed upper bounds")
        for name, val in (("H", 0.5 * (H + H.T)), ("g", g), ("A", A), ("l", l), ("u", u), ("x_lb", lb), ("x_ub", ub)):
            object.__setattr__(self, name, val)

    @property
    def n(self) -> int:
        return self.g.size

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.H @ x + self.g @ x)

    def stacked(self):
        """Constraint rows ``C = [A; I]`` with bounds ``lo <= C x <= hi``."""
        C = np.vstack([self.A, np.eye(self.n)])
        return C, np.concatenate([self.l, self.x_lb]), np.concatenate([self.u, self.x_ub])


@dataclass
class QpSolution:
    x: np.ndarray
    status: QpStatus
    iterations: int
    primal_residual: float
    dual_residual: float
    y: np.ndarray = field(default_factory=lambda: np.zeros(0))  # multipliers of [A; I]

    @property
    def ok(self) -> bool:
        return self.status is QpStatus.OPTIMAL


def _violation(Cx, lo, hi) -> float:
    if Cx.size == 0:
        return 0.0
    return float(max(0.0, np.max(lo - Cx), np.max(Cx - hi)))


def _inf_norm(v) -> float:
    return float(np.max(np.abs(v))) if v.size else 0.0


def _kkt_solve(H, g, C, b, rows):
    n = H.shape[0]
    k = len(rows)
    if k == 0:
        try:
            L = np.linalg.cholesky(H)
            if np.min(np.abs(np.diag(L))) > 1e-7 * max(1.0, float(np.max(np.abs(L)))):
                return scipy.linalg.cho_solve((L, True), -g), np.zeros(0)
        except np.linalg.LinAlgError:
            pass
        return np.linalg.lstsq(H, -g, rcond=None)[0], np.zeros(0)
    Ca = C[rows]
    K = np.zeros((n + k, n + k))
    K[:n, :n] = H
    K[:n, n:] = Ca.T
    K[n:, :n] = Ca
    rhs = np.concatenate([-g, b[rows]])
    sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    return sol[:n], sol[n:]


def _active_set(H, g, C, lo, hi, guess, tol, max_iter):
    """Active-set search from ``guess`` (row -> +1 upper / -1 lower).

    Returns ``(x, y, iterations)`` or ``None`` if it does not settle.
    """
    m = C.shape[0]
    work = dict(guess)
    for r in np.nonzero(lo == hi)[0]:
        work[int(r)] = 1
    seen = set()
    for it in range(1, max_iter + 1):
        rows = sorted(work)
        b = np.where(np.array([work[r] for r in rows], dtype=float) > 0, hi[rows], lo[rows]) if rows else np.zeros(0)
        bfull = np.zeros(m)
        bfull[rows] = b
        x, ya = _kkt_solve(H, g, C, bfull, rows)
        if not np.all(np.isfinite(x)):
            return None
        Cx = C @ x
        viol = np.maximum(lo - Cx, Cx - hi)
        if rows:
            viol[rows] = -np.inf
        worst = int(np.argmax(viol)) if m else -1
        key = tuple((r, work[r]) for r in rows)
        if key in seen:
            return None
        seen.add(key)
        if m and viol[worst] > tol:
            work[worst] = 1 if Cx[worst] > hi[worst] else -1
            continue
        # sign check: upper rows need y >= 0, lower rows y <= 0 (equalities free)
        bad, bad_val = None, tol
        for r, yr in zip(rows, ya):
            if lo[r] == hi[r]:
                continue
            wrong = -yr if work[r] > 0 else yr
            if wrong > bad_val:
                bad, bad_val = r, wrong
        if bad is not None:
            del work[bad]
            continue
        y = np.zeros(m)
        y[rows] = ya
        return x, y, it
    return None


def _pinf_certificate(dy, CTdy, lo, hi, eps) -> bool:
    ndy = _inf_norm(dy)
    if ndy < 1e-12 or _inf_norm(CTdy) > eps * ndy:
        return False
    small = eps * ndy
    up = dy > small
    dn = dy < -small
    if np.any(np.isinf(hi[up])) or np.any(np.isinf(lo[dn])):
        return False
    return float(hi[up] @ dy[up] + lo[dn] @ dy[dn]) < -eps * ndy


def _guess_from_admm(z, y, lo, hi):
    guess = {}
    lower = (z - lo) < -y
    upper = (hi - z) < y
    for r in np.nonzero(lower)[0]:
        guess[int(r)] = -1
    for r in np.nonzero(upper)[0]:
        guess[int(r)] = 1
    return guess


def solve_qp(
    problem: QpProblem,
    tol_feas: float = TOL_FEAS,
    tol_opt: float = TOL_OPT,
    max_iterations: int = 4000,
    warm_start: QpSolution | None = None,
) -> QpSolution:
    """Solve a convex QP; infeasibility is reported through ``status``.

    >>> sol = solve_qp(QpProblem(np.eye(2), [-1.0, -2.0]))
    >>> sol.status.value, np.round(sol.x, 9).tolist()
    ('Optimal', [1.0, 2.0])
    """
    H, g = problem.H, problem.g
    n = problem.n
    lam_min = float(np.linalg.eigvalsh(H)[0]) if n else 0.0
    if lam_min < -1e-8 * max(1.0, float(np.max(np.abs(H), initial=0.0))):
        raise ValueError(f"H is not positive semidefinite (smallest eigenvalue {lam_min:.3g})")
    if lam_min < 0.0:
        H = H + 1e-9 * np.eye(n)
    C, lo, hi = problem.stacked()
    m = C.shape[0]
    total_iter = 0

    def finish(x, y, status, iters):
        Cx = C @ x
        return QpSolution(x, status, iters, _violation(Cx, lo, hi), _inf_norm(H @ x + g + C.T @ y), y)

    def accept(res, iters):
        x, y = res
        sol = finish(x, y, QpStatus.OPTIMAL, iters)
        if sol.primal_residual <= tol_feas and sol.dual_residual <= tol_opt:
            return sol
        return None

    # 1. active-set search from the warm start (or the empty set)
    guess = {}
    if warm_start is not None and warm_start.y.size == m:
        guess = {int(r): (1 if warm_start.y[r] > 0 else -1) for r in np.nonzero(np.abs(warm_start.y) > 1e-12)[0]}
    as_res = _active_set(H, g, C, lo, hi, guess, 0.1 * tol_feas, max_iter=2 * (n + m) + 2)
    if as_res is not None:
        total_iter += as_res[2]
        sol = accept(as_res[:2], total_iter)
        if sol is not None:
            return sol

    # 2. ADMM with periodic polishing
    sigma, alpha = 1e-6, 1.6
    eq = lo == hi
    free = np.isinf(lo) & np.isinf(hi)
    rho0 = 0.1

    def rho_vec(rho):
        r = np.full(m, rho)
        r[eq] = 1e3 * rho
        r[free] = 1e-6
        return r

    rho = rho0
    rv = rho_vec(rho)
    factor = scipy.linalg.cho_factor(H + sigma * np.eye(n) + (C.T * rv) @ C)
    if warm_start is not None and warm_start.x.size == n:
        x = np.array(warm_start.x, dtype=float)
        y = np.array(warm_start.y, dtype=float) if warm_start.y.size == m else np.zeros(m)
    else:
        x = np.zeros(n)
        y = np.zeros(m)
    z = np.clip(C @ x, lo, hi)
    eps_abs, eps_rel = 1e-7, 1e-7
    next_polish = 10
    for k in range(1, max_iterations + 1):
        rhs = sigma * x - g + C.T @ (rv * z - y)
        xt = scipy.linalg.cho_solve(factor, rhs)
        zt = C @ xt
        x_new = alpha * xt + (1.0 - alpha) * x
        zh = alpha * zt + (1.0 - alpha) * z
        z_new = np.clip(zh + y / rv, lo, hi)
        y_new = y + rv * (zh - z_new)
        dy = y_new - y
        x, z, y = x_new, z_new, y_new
        if k % 5:
            continue
        Cx = C @ x
        r_p = _inf_norm(Cx - z)
        Hx = H @ x
        CTy = C.T @ y
        r_d = _inf_norm(Hx + g + CTy)
        scale_p = max(_inf_norm(Cx), _inf_norm(z))
        scale_d = max(_inf_norm(Hx), _inf_norm(CTy), _inf_norm(g))
        if _pinf_certificate(dy, C.T @ dy, lo, hi, 1e-6):
            return QpSolution(x, QpStatus.PRIMAL_INFEASIBLE, total_iter + k, _violation(Cx, lo, hi), r_d, y)
        if k >= next_polish or (r_p <= eps_abs + eps_rel * scale_p and r_d <= eps_abs + eps_rel * scale_d):
            next_polish = int(k * 1.5) + 5
            res = _active_set(H, g, C, lo, hi, _guess_from_admm(z, y, lo, hi), 0.1 * tol_feas, max_iter=n + m + 2)
            if res is not None:
                sol = accept(res[:2], total_iter + k)
                if sol is not None:
                    return sol
            if r_p <= eps_abs + eps_rel * scale_p and r_d <= eps_abs + eps_rel * scale_d:
                sol = finish(x, y, QpStatus.OPTIMAL, total_iter + k)
                if sol.primal_residual <= tol_feas and sol.dual_residual <= tol_opt:
                    return sol
        if k % 25 == 0 and scale_p > 0 and scale_d > 0 and r_d > 0:
            ratio = math.sqrt((r_p / max(scale_p, 1e-30)) / (r_d / max(scale_d, 1e-30)))
            new_rho = min(1e6, max(1e-6, rho * ratio))
            if new_rho > 5 * rho or new_rho < rho / 5:
                rho = new_rho
                rv = rho_vec(rho)
                factor = scipy.linalg.cho_factor(H + sigma * np.eye(n) + (C.T * rv) @ C)
    return finish(x, y, QpStatus.MAX_ITERATIONS, total_iter + max_iterations)


def kkt_residual(problem: QpProblem, x, active_tol: float = 1e-7) -> tuple[float, float]:
    """Primal violation and best achievable stationarity residual at ``x``.

    Multipliers are fitted by bounded least squares with the sign pattern
    allowed by which constraints are active at ``x``; inactive constraints
    get zero multipliers.
    """
    x = np.asarray(x, dtype=float).ravel()
    C, lo, hi = problem.stacked()
    Cx = C @ x
    primal = _violation(Cx, lo, hi)
    grad = problem.H @ x + problem.g
    with np.errstate(invalid="ignore"):
        at_lo = np.isfinite(lo) & (np.abs(Cx - lo) <= active_tol * (1.0 + np.abs(lo)))
        at_hi = np.isfinite(hi) & (np.abs(Cx - hi) <= active_tol * (1.0 + np.abs(hi)))
    active = np.nonzero(at_lo | at_hi)[0]
    if active.size == 0:
        return primal, _inf_norm(grad)
    lb = np.where(at_lo[active], -np.inf, 0.0)
    ub = np.where(at_hi[active], np.inf, 0.0)
    res = scipy.optimize.lsq_linear(C[active].T, -grad, bounds=(lb, ub), method="bvls", tol=1e-14)
    stat = _inf_norm(grad + C[active].T @ res.x)
    return primal, stat
