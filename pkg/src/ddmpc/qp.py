"""Dense strictly convex QP solver.

Solves::

    minimize    0.5 x'Hx + g'x + c
    subject to  A_eq x = b_eq
                lb <= C x <= ub

with a dual active-set method (Goldfarb & Idnani).  The method starts at the
unconstrained minimiser and adds violated constraints one at a time, so it
needs no feasible starting point.  Equalities are imposed first by projecting
onto their null space and are never released.

``H``, ``A_eq`` and ``C`` are factorised once in :class:`ActiveSetQP`; only
the vectors ``g``, ``b_eq``, ``lb``, ``ub`` change between solves, which is
the receding-horizon use case.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky, qr, solve_triangular

__all__ = [
    "CONVERGED",
    "MAX_ITER",
    "INFEASIBLE",
    "QpProblem",
    "QpResult",
    "ActiveSetQP",
    "solve_dense_qp",
    "kkt_residuals",
]

CONVERGED = "converged"
MAX_ITER = "max_iter"
INFEASIBLE = "infeasible"


@dataclass
class QpProblem:
    """Condensed QP data; ``C``/``lb``/``ub`` may be ``None`` for no boxes."""

    H: np.ndarray
    g: np.ndarray
    c: float = 0.0
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    C: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    @property
    def n_vars(self):
        return self.H.shape[0]

    def objective(self, x):
        return float(0.5 * x @ self.H @ x + self.g @ x + self.c)


@dataclass
class QpResult:
    x: np.ndarray
    status: str
    objective: float
    eq_multipliers: np.ndarray
    box_multipliers: np.ndarray  # signed: > 0 at a lower bound, < 0 at an upper bound
    active: list = field(default_factory=list)  # (row, side) pairs, side in {-1, +1}
    iterations: int = 0
    solve_time: float = 0.0


def kkt_residuals(problem, x, eq_multipliers=None, box_multipliers=None):
    """Infinity-norm KKT residuals of ``x`` for ``problem``.

    Sign convention: ``Hx + g = A_eq' nu + C' mu`` with ``mu >= 0`` on active
    lower bounds and ``mu <= 0`` on active upper bounds.  When multipliers are
    not supplied they are estimated by least squares over the constraints
    active at ``x``.

    ``stationarity_rel`` divides the stationarity residual by
    ``1 + |H|inf |x|inf + |g|inf``, which is the meaningful measure when the
    data carry large offsets.
    """
    H, g = problem.H, problem.g
    n = H.shape[0]
    A = problem.A_eq if problem.A_eq is not None else np.zeros((0, n))
    b = problem.b_eq if problem.b_eq is not None else np.zeros(0)
    C = problem.C if problem.C is not None else np.zeros((0, n))
    lb = problem.lb if problem.lb is not None else np.full(C.shape[0], -np.inf)
    ub = problem.ub if problem.ub is not None else np.full(C.shape[0], np.inf)
    cx = C @ x
    grad = H @ x + g
    if eq_multipliers is None or box_multipliers is None:
        scale = 1e-7 * (1.0 + np.abs(cx))
        near = (np.abs(cx - lb) <= scale) | (np.abs(cx - ub) <= scale)
        basis = np.vstack([A, C[near]]).T
        if basis.shape[1]:
            lam = np.linalg.lstsq(basis, grad, rcond=None)[0]
        else:
            lam = np.zeros(0)
        eq_multipliers = lam[: A.shape[0]]
        box_multipliers = np.zeros(C.shape[0])
        box_multipliers[near] = lam[A.shape[0] :]
    mu = box_multipliers
    stationarity = grad - A.T @ eq_multipliers - C.T @ mu
    eq_res = A @ x - b
    viol = np.maximum(lb - cx, 0.0) + np.maximum(cx - ub, 0.0)
    # a positive multiplier may only sit on a lower bound, a negative one on an upper bound
    dual_inf = np.maximum(-mu, 0.0) * np.isinf(ub) + np.maximum(mu, 0.0) * np.isinf(lb)
    with np.errstate(invalid="ignore"):
        slack_lo = np.where(np.isfinite(lb), cx - lb, 0.0)
        slack_hi = np.where(np.isfinite(ub), ub - cx, 0.0)
    comp = np.maximum(mu, 0.0) * np.abs(slack_lo) + np.maximum(-mu, 0.0) * np.abs(slack_hi)
    inf = lambda v: float(np.max(np.abs(v))) if v.size else 0.0  # noqa: E731
    scale = 1.0 + np.abs(H).sum(axis=1).max() * inf(x) + inf(g)
    return {
        "stationarity": inf(stationarity),
        "stationarity_rel": inf(stationarity) / scale,
        "equality": inf(eq_res),
        "box": inf(viol),
        "dual": inf(dual_inf),
        "complementarity": inf(comp),
    }


class ActiveSetQP:
    """Prepared dual active-set solver for fixed ``H``, ``A_eq`` and ``C``.

    Parameters
    ----------
    H : (n, n) symmetric positive-definite Hessian.
    A_eq : (k, n) equality matrix or None.
    C : (r, n) matrix whose image is box-constrained, or None.
    tol : feasibility tolerance for equalities and boxes.
    max_iter : cap on active-set changes for the inequality phase.
    """

    def __init__(self, H, A_eq=None, C=None, tol=1e-8, max_iter=200):
        H = np.asarray(H, dtype=float)
        n = H.shape[0]
        self.n = n
        self.tol = float(tol)
        self.max_iter = int(max_iter)
        self.H = H
        try:
            chol = cholesky(H, lower=True)
        except np.linalg.LinAlgError as exc:
            raise ValueError("Hessian is not positive definite") from exc
        # G^{-1} = Linv' Linv
        self._Linv = solve_triangular(chol, np.eye(n), lower=True)
        self._Hinv = self._Linv.T @ self._Linv
        self.A_eq = np.zeros((0, n)) if A_eq is None else np.asarray(A_eq, dtype=float)
        self.C = np.zeros((0, n)) if C is None else np.asarray(C, dtype=float)
        self._LC = self._Linv @ self.C.T  # columns = Linv c_i
        self._prepare_equalities()

    def _prepare_equalities(self):
        A = self.A_eq
        k = A.shape[0]
        self._eq_keep = np.arange(0)
        self._eq_Q = np.zeros((self.n, 0))
        self._eq_R = np.zeros((0, 0))
        self._eq_J = np.zeros((self.n, 0))
        if k == 0:
            return
        B = self._Linv @ A.T
        _, R_piv, piv = qr(B, mode="economic", pivoting=True)
        diag = np.abs(np.diag(R_piv))
        rank = int(np.sum(diag > 1e-11 * max(diag[0], 1e-300))) if diag.size else 0
        keep = np.sort(piv[:rank])
        Q, R = np.linalg.qr(B[:, keep])
        self._eq_keep = keep
        self._eq_dropped = np.setdiff1d(np.arange(k), keep)
        self._eq_Q = Q
        self._eq_R = R
        self._eq_J = self._Linv.T @ Q  # step directions spanning the equality correction

    def solve(self, g, b_eq=None, lb=None, ub=None, warm_active=None):
        """Solve for a new linear term and right-hand sides.

        ``warm_active`` is an iterable of ``(row, side)`` pairs from an earlier
        solve; violated constraints in it are added first.  It only changes
        the order of the iterations, never the optimum.
        """
        start = time.perf_counter()
        n, tol = self.n, self.tol
        Linv = self._Linv
        g = np.asarray(g, dtype=float).reshape(n)
        r_box = self.C.shape[0]
        lb = np.full(r_box, -np.inf) if lb is None else np.asarray(lb, dtype=float)
        ub = np.full(r_box, np.inf) if ub is None else np.asarray(ub, dtype=float)
        if np.any(lb > ub):
            return self._result(np.zeros(n), INFEASIBLE, g, start)

        x = -(self._Hinv @ g)
        Q1 = self._eq_Q.copy()
        R = self._eq_R.copy()
        n_eq = R.shape[0]
        u = np.zeros(n_eq)
        if self.A_eq.shape[0]:
            b = np.asarray(b_eq, dtype=float).reshape(-1)
            keep = self._eq_keep
            rhs = b[keep] - self.A_eq[keep] @ x
            y = solve_triangular(R, rhs, trans="T", lower=False)
            x = x + self._eq_J @ y
            u = solve_triangular(R, y, lower=False)
            if self._eq_dropped.size:
                res = self.A_eq[self._eq_dropped] @ x - b[self._eq_dropped]
                if np.max(np.abs(res)) > tol:
                    return self._result(x, INFEASIBLE, g, start)
        else:
            b = np.zeros(0)

        # active inequalities: list of (row, side); side +1 means C_i x >= lb_i,
        # side -1 means -C_i x >= -ub_i
        active = []
        warm = set(warm_active or ())
        it = 0
        eps_dep = 1e-12

        while True:
            cx = self.C @ x
            s_lo = cx - lb
            s_hi = ub - cx
            act_set = set(active)
            best, best_key = None, None
            for side, slack in ((1, s_lo), (-1, s_hi)):
                cand = np.flatnonzero(slack < -tol)
                for i in cand:
                    if (i, side) in act_set:
                        continue
                    key = ((i, side) in warm, -slack[i])
                    if best_key is None or key > best_key:
                        best, best_key = (i, side), key
            if best is None:
                status = CONVERGED
                break
            if it >= self.max_iter:
                status = MAX_ITER
                break
            p_row, p_side = best
            d = p_side * self._LC[:, p_row]
            rhs_p = lb[p_row] if p_side > 0 else -ub[p_row]
            u_plus = np.append(u, 0.0)
            added = False
            while not added:
                it += 1
                h = Q1.T @ d
                w = d - Q1 @ h
                h2 = Q1.T @ w
                w -= Q1 @ h2
                h += h2
                r = solve_triangular(R, h, lower=False) if R.size else np.zeros(0)
                # partial step: largest dual step keeping inequality multipliers >= 0
                t1, k_drop = np.inf, None
                for j in range(n_eq, r.size):
                    if r[j] > eps_dep:
                        ratio = u_plus[j] / r[j]
                        if ratio < t1:
                            t1, k_drop = ratio, j
                wn2 = float(w @ w)
                if wn2 > (eps_dep * max(1.0, float(d @ d) ** 0.5)) ** 2:
                    z = Linv.T @ w
                    slack_p = p_side * (self.C[p_row] @ x) - rhs_p
                    t2 = -slack_p / wn2
                else:
                    z, t2 = None, np.inf
                t = min(t1, t2)
                if not np.isfinite(t):
                    return self._result(x, INFEASIBLE, g, start, b, lb, ub, u, active, it)
                if z is not None:
                    x = x + t * z
                u_plus[:-1] -= t * r
                u_plus[-1] += t
                if t2 <= t1:
                    # full step: constraint p becomes active
                    if Q1.shape[1]:
                        Q1 = np.column_stack([Q1, w / np.sqrt(wn2)])
                    else:
                        Q1 = (w / np.sqrt(wn2)).reshape(-1, 1)
                    q = R.shape[0]
                    R_new = np.zeros((q + 1, q + 1))
                    R_new[:q, :q] = R
                    R_new[:q, q] = h
                    R_new[q, q] = np.sqrt(wn2)
                    R = R_new
                    u = u_plus
                    active.append(best)
                    added = True
                else:
                    Q1, R = _drop_column(Q1, R, k_drop)
                    u_plus = np.delete(u_plus, k_drop)
                    del active[k_drop - n_eq]
                    if it >= self.max_iter:
                        u = u_plus[:-1]
                        status = MAX_ITER
                        return self._result(x, status, g, start, b, lb, ub, u, active, it)

        return self._result(x, status, g, start, b, lb, ub, u, active, it)

    def _result(self, x, status, g, start, b=None, lb=None, ub=None, u=None, active=(), it=0):
        n_eq_total = self.A_eq.shape[0]
        nu = np.zeros(n_eq_total)
        mu = np.zeros(self.C.shape[0])
        if u is not None:
            n_keep = self._eq_keep.size
            nu[self._eq_keep] = u[:n_keep]
            for (row, side), val in zip(active, u[n_keep:]):
                mu[row] += side * val
        obj = float(0.5 * x @ self.H @ x + g @ x)
        return QpResult(
            x=x,
            status=status,
            objective=obj,
            eq_multipliers=nu,
            box_multipliers=mu,
            active=list(active),
            iterations=it,
            solve_time=time.perf_counter() - start,
        )


def _drop_column(Q1, R, k):
    """Remove column ``k`` from the thin factorisation ``B = Q1 R``."""
    Rk = np.delete(R, k, axis=1)
    if Rk.shape[1] == 0:
        return np.zeros((Q1.shape[0], 0)), np.zeros((0, 0))
    Qs, Rs = np.linalg.qr(Rk)
    return Q1 @ Qs, Rs


def solve_dense_qp(problem, tol=1e-8, max_iter=200):
    """One-shot solve of a :class:`QpProblem`."""
    solver = ActiveSetQP(problem.H, problem.A_eq, problem.C, tol=tol, max_iter=max_iter)
    res = solver.solve(problem.g, problem.b_eq, problem.lb, problem.ub)
    res.objective += float(problem.c)
    return res
