"""Data-driven MPC built directly on recorded input/output data.

The predictor is the column span of the stacked Hankel matrices
``[H(u); H(y)]`` of order ``L + v``.  Each step picks a coefficient vector
``alpha`` whose first ``v`` block rows reproduce the most recent measured
inputs and outputs, and whose last ``L`` block rows form the planned inputs
and predicted outputs.  Substituting ``u = Uf @ alpha`` and ``y = Yf @ alpha``
leaves a QP in ``alpha`` alone.
"""

from __future__ import annotations

import math
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_positive_int, check_samples, check_spd, check_vector
from .qp import CONVERGED, INFEASIBLE, ActiveSetQP, QpProblem, kkt_residuals
from .trajectory import (
    DEFAULT_RANK_TOL,
    HankelMatrix,
    PEResult,
    TrajectoryData,
    build_hankel,
    check_persistent_excitation,
)

__all__ = [
    "DdmpcConfig",
    "DataDictionary",
    "HistoryBuffer",
    "DdmpcSolution",
    "InsufficientDataError",
    "NotPersistentlyExcitingError",
    "build_dictionary",
    "predict_trajectory",
    "assemble_qp",
    "solve_qp",
    "ddmpc_step",
    "DDMPCController",
]



class InsufficientDataError(ValueError):
    pass


class NotPersistentlyExcitingError(ValueError):
    def __init__(self, result):
        self.result = result
        super().__init__(result.message)


@dataclass(frozen=True)
class DdmpcConfig:
    """Controller hyperparameters.

    ``Q`` and ``R`` accept a scalar (times identity), a diagonal, or a full
    matrix; they are resolved against the data dimensions when the
    dictionary is built.  Bounds are in radians.  Optional output and
    coefficient bounds default to unbounded.
    """

    L: int = 24
    v: int = 6
    Q: object = 1.0
    R: object = 1e-2
    lam: float = 1e-3
    u_min: object = -math.radians(5.0)
    u_max: object = math.radians(5.0)
    y_min: object = None
    y_max: object = None
    alpha_min: object = None
    alpha_max: object = None
    solver_tol: float = 1e-8
    solver_max_iter: int = 200
    relax_weight: float = 1e6
    pe_tol: float = DEFAULT_RANK_TOL

    def __post_init__(self):
        check_positive_int(self.L, "L")
        check_positive_int(self.v, "v")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.solver_tol <= 0:
            raise ValueError("solver_tol must be positive")
        check_positive_int(self.solver_max_iter, "solver_max_iter")
        check_spd(self.Q, "Q")
        check_spd(self.R, "R")
        lo, hi = np.broadcast_arrays(np.asarray(self.u_min, float), np.asarray(self.u_max, float))
        if np.any(lo >= hi):
            raise ValueError("u_min must be strictly below u_max")

    @property
    def horizon(self):
        return self.L + self.v

    def output_weight(self, p):
        return check_spd(self.Q, "Q", p)

    def input_weight(self, m):
        return check_spd(self.R, "R", m)

    def input_bounds(self, m):
        lo = check_vector(self.u_min, "u_min", m)
        hi = check_vector(self.u_max, "u_max", m)
        if np.any(lo >= hi):
            raise ValueError("u_min must be strictly below u_max")
        return lo, hi


@dataclass(frozen=True)
class DataDictionary:
    """Input and output Hankel matrices of order ``L + v``."""

    Hu: HankelMatrix
    Hy: HankelMatrix
    L: int
    v: int
    N: int
    pe: PEResult | None = None

    @property
    def m(self):
        return self.Hu.block_dim

    @property
    def p(self):
        return self.Hy.block_dim

    @property
    def n_cols(self):
        return self.Hu.n_cols

    @property
    def pe_verified(self):
        return bool(self.pe)

    @property
    def Up(self):
        return self.Hu.block_rows(0, self.v)

    @property
    def Uf(self):
        return self.Hu.block_rows(self.v)

    @property
    def Yp(self):
        return self.Hy.block_rows(0, self.v)

    @property
    def Yf(self):
        return self.Hy.block_rows(self.v)


def minimum_samples(m, order):
    """Smallest N for which an order-``order`` Hankel of an m-channel signal can have rank m*order."""
    return (m + 1) * order - 1


def build_dictionary(data, cfg, check_pe=True):
    """Build the order ``L + v`` dictionary after checking excitation of order ``L + 2v``."""
    L, v = cfg.L, cfg.v
    n, m = data.inputs.shape
    pe_order = L + 2 * v
    need = minimum_samples(m, pe_order)
    if n < need:
        raise InsufficientDataError(
            f"{n} samples are too few: persistent excitation of order {pe_order} "
            f"with {m} input(s) needs at least N = {need} samples "
            f"(columns insufficient for rank {m * pe_order})"
        )
    pe = None
    if check_pe:
        pe = check_persistent_excitation(data.inputs, pe_order, cfg.pe_tol)
        if not pe:
            raise NotPersistentlyExcitingError(pe)
    order = L + v
    return DataDictionary(
        Hu=build_hankel(data.inputs, order),
        Hy=build_hankel(data.outputs, order),
        L=L,
        v=v,
        N=n,
        pe=pe,
    )


def predict_trajectory(dictionary, alpha):
    """Input and output sequences ``[Hu; Hy] @ alpha`` over ``L + v`` steps."""
    alpha = np.asarray(alpha, dtype=float).reshape(-1)
    if alpha.shape[0] != dictionary.n_cols:
        raise ValueError(
            f"alpha has length {alpha.shape[0]}, dictionary has {dictionary.n_cols} columns"
        )
    order = dictionary.L + dictionary.v
    u = (dictionary.Hu.data @ alpha).reshape(order, dictionary.m)
    y = (dictionary.Hy.data @ alpha).reshape(order, dictionary.p)
    return u, y


class HistoryBuffer:
    """The most recent ``v`` input/output pairs, oldest first."""

    def __init__(self, v, m, p):
        self.v = check_positive_int(v, "v")
        self.m = m
        self.p = p
        self._u = deque(maxlen=self.v)
        self._y = deque(maxlen=self.v)

    def push(self, u, y):
        u = check_vector(u, "u", self.m)
        y = check_vector(y, "y", self.p)
        self._u.append(u.copy())
        self._y.append(y.copy())

    def fill(self, u_hist, y_hist):
        for u, y in zip(check_samples(u_hist, "u_hist", self.m), check_samples(y_hist, "y_hist", self.p)):
            self.push(u, y)

    @property
    def warmed(self):
        return len(self._u) == self.v

    def __len__(self):
        return len(self._u)

    @property
    def inputs(self):
        return np.array(self._u).reshape(-1, self.m)

    @property
    def outputs(self):
        return np.array(self._y).reshape(-1, self.p)

    def copy(self):
        new = HistoryBuffer(self.v, self.m, self.p)
        new._u.extend(a.copy() for a in self._u)
        new._y.extend(a.copy() for a in self._y)
        return new


def _reference(ref, rows, cols, name):
    if ref is None:
        return np.zeros(rows * cols)
    arr = np.asarray(ref, dtype=float)
    if arr.ndim == 1 and cols == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim == 1 and arr.shape[0] == cols:
        arr = np.tile(arr, (rows, 1))
    if arr.shape != (rows, cols):
        raise ValueError(f"{name} must have shape ({rows}, {cols}), got {arr.shape}")
    return arr.reshape(-1)


def _box_structure(dictionary, cfg):
    """Matrix whose image is bounded, with its bounds (inputs, then outputs, then alpha)."""
    L, m, p, nc = dictionary.L, dictionary.m, dictionary.p, dictionary.n_cols
    lo, hi = cfg.input_bounds(m)
    blocks = [dictionary.Uf]
    lbs, ubs = [np.tile(lo, L)], [np.tile(hi, L)]
    if cfg.y_min is not None or cfg.y_max is not None:
        ylo = check_vector(-np.inf if cfg.y_min is None else cfg.y_min, "y_min", p)
        yhi = check_vector(np.inf if cfg.y_max is None else cfg.y_max, "y_max", p)
        blocks.append(dictionary.Yf)
        lbs.append(np.tile(ylo, L))
        ubs.append(np.tile(yhi, L))
    if cfg.alpha_min is not None or cfg.alpha_max is not None:
        blocks.append(np.eye(nc))
        lbs.append(check_vector(-np.inf if cfg.alpha_min is None else cfg.alpha_min, "alpha_min", nc))
        ubs.append(check_vector(np.inf if cfg.alpha_max is None else cfg.alpha_max, "alpha_max", nc))
    return np.vstack(blocks), np.concatenate(lbs), np.concatenate(ubs)


def _cost_terms(dictionary, cfg):
    """Hessian and the maps from references to the linear term."""
    L = dictionary.L
    Qbar = np.kron(np.eye(L), cfg.output_weight(dictionary.p))
    Rbar = np.kron(np.eye(L), cfg.input_weight(dictionary.m))
    Uf, Yf = dictionary.Uf, dictionary.Yf
    QY = Qbar @ Yf
    RU = Rbar @ Uf
    H = 2.0 * (Yf.T @ QY + Uf.T @ RU + cfg.lam * np.eye(dictionary.n_cols))
    H = 0.5 * (H + H.T)
    return H, -2.0 * QY.T, -2.0 * RU.T, Qbar, Rbar


def assemble_qp(dictionary, cfg, hist, y_ref, u_ref=None):
    """Condensed QP over ``alpha`` for one control step.

    ``y_ref`` is ``(L, p)`` and ``u_ref`` is ``(L, m)`` (zeros when omitted).
    The cost ``0.5 a'Ha + g'a + c`` equals the tracking cost plus
    ``lam * |a|^2``.
    """
    L, m, p = dictionary.L, dictionary.m, dictionary.p
    if not hist.warmed:
        raise ValueError(f"history holds {len(hist)} of {dictionary.v} samples; not warmed up")
    yr = _reference(y_ref, L, p, "y_ref")
    ur = _reference(u_ref, L, m, "u_ref")
    H, Gy, Gu, Qbar, Rbar = _cost_terms(dictionary, cfg)
    g = Gy @ yr + Gu @ ur
    c = float(yr @ Qbar @ yr + ur @ Rbar @ ur)
    A_eq = np.vstack([dictionary.Up, dictionary.Yp])
    b_eq = np.concatenate([hist.inputs.reshape(-1), hist.outputs.reshape(-1)])
    C, lb, ub = _box_structure(dictionary, cfg)
    return QpProblem(H=H, g=g, c=c, A_eq=A_eq, b_eq=b_eq, C=C, lb=lb, ub=ub)


def _slack_structure(H, A, C, weight):
    """Matrices of the relaxed QP over ``(alpha, s)`` with ``A alpha - s = b``.

    The slack ``s`` is penalised by ``weight * |s|^2``.  Keeping the slack
    explicit, rather than folding ``weight * A'A`` into ``H``, leaves the
    Hessian as well conditioned as ``H`` itself and the equality rows full rank.
    """
    n, k = H.shape[0], A.shape[0]
    Hs = np.zeros((n + k, n + k))
    Hs[:n, :n] = H
    Hs[n:, n:] = 2.0 * weight * np.eye(k)
    As = np.hstack([A, -np.eye(k)])
    Cs = None if C is None else np.hstack([C, np.zeros((C.shape[0], k))])
    return Hs, As, Cs


def _strip_slack(res, n):
    res.x = res.x[:n]
    res.relaxed = True
    return res


def solve_qp(qp, cfg, warm_active=None):
    """Solve a condensed QP; fall back to a penalised equality fit if infeasible.

    When the equality rows cannot be met exactly the equalities move into the
    cost with weight ``cfg.relax_weight`` and the result carries
    ``relaxed = True``.
    """
    solver = ActiveSetQP(qp.H, qp.A_eq, qp.C, tol=cfg.solver_tol, max_iter=cfg.solver_max_iter)
    res = solver.solve(qp.g, qp.b_eq, qp.lb, qp.ub, warm_active=warm_active)
    res.objective += qp.c
    res.relaxed = False
    if res.status == INFEASIBLE and qp.A_eq is not None and qp.A_eq.shape[0]:
        Hs, As, Cs = _slack_structure(qp.H, qp.A_eq, qp.C, cfg.relax_weight)
        solver = ActiveSetQP(Hs, As, Cs, tol=cfg.solver_tol, max_iter=cfg.solver_max_iter)
        gs = np.concatenate([qp.g, np.zeros(qp.A_eq.shape[0])])
        res2 = _strip_slack(solver.solve(gs, qp.b_eq, qp.lb, qp.ub), qp.n_vars)
        res2.objective = qp.objective(res2.x)
        res2.solve_time += res.solve_time
        return res2
    return res


@dataclass
class DdmpcSolution:
    u_first: np.ndarray
    u_seq: np.ndarray
    y_seq: np.ndarray
    alpha: np.ndarray
    cost: float
    status: str
    solve_time: float
    relaxed: bool = False
    iterations: int = 0
    active: list = field(default_factory=list)

    @property
    def converged(self):
        return self.status == CONVERGED


def _package(dictionary, cfg, res, yr, ur, elapsed, weights=None):
    L, m, p = dictionary.L, dictionary.m, dictionary.p
    alpha = res.x
    u_seq = (dictionary.Uf @ alpha).reshape(L, m)
    y_seq = (dictionary.Yf @ alpha).reshape(L, p)
    ey = y_seq.reshape(-1) - yr
    eu = u_seq.reshape(-1) - ur
    Qm, Rm = weights if weights is not None else (cfg.output_weight(p), cfg.input_weight(m))
    cost = float(
        np.einsum("ki,ij,kj->", ey.reshape(L, p), Qm, ey.reshape(L, p))
        + np.einsum("ki,ij,kj->", eu.reshape(L, m), Rm, eu.reshape(L, m))
        + cfg.lam * alpha @ alpha
    )
    return DdmpcSolution(
        u_first=u_seq[0].copy(),
        u_seq=u_seq,
        y_seq=y_seq,
        alpha=alpha,
        cost=max(cost, 0.0),
        status=res.status,
        solve_time=elapsed,
        relaxed=res.relaxed,
        iterations=res.iterations,
        active=res.active,
    )


def ddmpc_step(dictionary, cfg, hist, y_ref, u_ref=None):
    """Assemble and solve one step; apply ``solution.u_first`` to the plant."""
    start = time.perf_counter()
    qp = assemble_qp(dictionary, cfg, hist, y_ref, u_ref)
    res = solve_qp(qp, cfg)
    yr = _reference(y_ref, dictionary.L, dictionary.p, "y_ref")
    ur = _reference(u_ref, dictionary.L, dictionary.m, "u_ref")
    return _package(dictionary, cfg, res, yr, ur, time.perf_counter() - start)


class DDMPCController(BaseEstimator):
    """Receding-horizon data-driven MPC with an sklearn-style interface.

    ``fit`` takes recorded data (a :class:`TrajectoryData`, or input samples
    ``X`` with output samples ``y``), checks excitation and factorises the
    QP once.  Then, each control period::

        sol = ctrl.control(y_ref)       # (L, p) reference window
        plant.apply(sol.u_first)
        ctrl.observe(sol.u_first, y_measured)

    Parameters mirror :class:`DdmpcConfig`.
    """

    def __init__(
        self,
        L=24,
        v=6,
        Q=1.0,
        R=1e-2,
        lam=1e-3,
        u_min=-math.radians(5.0),
        u_max=math.radians(5.0),
        y_min=None,
        y_max=None,
        alpha_min=None,
        alpha_max=None,
        solver_tol=1e-8,
        solver_max_iter=200,
        relax_weight=1e6,
        pe_tol=DEFAULT_RANK_TOL,
        warm_start=True,
    ):
        self.L = L
        self.v = v
        self.Q = Q
        self.R = R
        self.lam = lam
        self.u_min = u_min
        self.u_max = u_max
        self.y_min = y_min
        self.y_max = y_max
        self.alpha_min = alpha_min
        self.alpha_max = alpha_max
        self.solver_tol = solver_tol
        self.solver_max_iter = solver_max_iter
        self.relax_weight = relax_weight
        self.pe_tol = pe_tol
        self.warm_start = warm_start

    @classmethod
    def from_config(cls, cfg, **kwargs):
        params = {k: getattr(cfg, k) for k in DdmpcConfig.__dataclass_fields__}
        params.update(kwargs)
        return cls(**params)

    @property
    def config(self):
        params = self.get_params()
        params.pop("warm_start")
        return DdmpcConfig(**params)

    def fit(self, X, y=None, sample_time=1.0):
        if isinstance(X, TrajectoryData):
            data = X
        else:
            if y is None:
                raise ValueError("output samples y are required when X is not TrajectoryData")
            data = TrajectoryData(check_samples(X, "X"), check_samples(y, "y"), sample_time)
        cfg = self.config
        self.config_ = cfg
        self.dictionary_ = build_dictionary(data, cfg)
        d = self.dictionary_
        self.n_inputs_, self.n_outputs_ = d.m, d.p
        H, self._Gy, self._Gu, _, _ = _cost_terms(d, cfg)
        self._C, self._lb, self._ub = _box_structure(d, cfg)
        self._A_eq = np.vstack([d.Up, d.Yp])
        self._H = H
        self._weights = (cfg.output_weight(d.p), cfg.input_weight(d.m))
        self.solver_ = ActiveSetQP(H, self._A_eq, self._C, tol=cfg.solver_tol, max_iter=cfg.solver_max_iter)
        self._relaxed_solver = None
        self.history_ = HistoryBuffer(cfg.v, d.m, d.p)
        self._warm = None
        return self

    def reset(self, u_hist=None, y_hist=None):
        """Clear the history (optionally refilling it) and the warm start."""
        check_is_fitted(self, "dictionary_")
        self.history_ = HistoryBuffer(self.config_.v, self.n_inputs_, self.n_outputs_)
        if u_hist is not None:
            self.history_.fill(u_hist, y_hist)
        self._warm = None
        return self

    def observe(self, u, y):
        check_is_fitted(self, "dictionary_")
        self.history_.push(u, y)
        return self

    def control(self, y_ref, u_ref=None):
        """Solve one step from the current history; returns a :class:`DdmpcSolution`."""
        check_is_fitted(self, "dictionary_")
        start = time.perf_counter()
        d, cfg = self.dictionary_, self.config_
        hist = self.history_
        if not hist.warmed:
            raise ValueError(f"history holds {len(hist)} of {cfg.v} samples; not warmed up")
        yr = _reference(y_ref, cfg.L, d.p, "y_ref")
        ur = _reference(u_ref, cfg.L, d.m, "u_ref")
        g = self._Gy @ yr + self._Gu @ ur
        b_eq = np.concatenate([hist.inputs.reshape(-1), hist.outputs.reshape(-1)])
        warm = self._warm if self.warm_start else None
        res = self.solver_.solve(g, b_eq, self._lb, self._ub, warm_active=warm)
        res.relaxed = False
        if res.status == INFEASIBLE:
            res = self._solve_relaxed(g, b_eq)
        if self.warm_start:
            m = d.m
            n_u_rows = cfg.L * m
            # next step's window is one input block later
            self._warm = [(r - m, s) for r, s in res.active if r >= m and r < n_u_rows]
        return _package(d, cfg, res, yr, ur, time.perf_counter() - start, self._weights)

    def _solve_relaxed(self, g, b_eq):
        k = self._A_eq.shape[0]
        if self._relaxed_solver is None:
            Hs, As, Cs = _slack_structure(self._H, self._A_eq, self._C, self.config_.relax_weight)
            self._relaxed_solver = ActiveSetQP(
                Hs, As, Cs, tol=self.config_.solver_tol, max_iter=self.config_.solver_max_iter,
            )
        res = self._relaxed_solver.solve(np.concatenate([g, np.zeros(k)]), b_eq, self._lb, self._ub)
        return _strip_slack(res, self._H.shape[0])

    def predict(self, alpha):
        """Input/output trajectory spanned by ``alpha`` (past and future blocks)."""
        check_is_fitted(self, "dictionary_")
        return predict_trajectory(self.dictionary_, alpha)

    def kkt(self, solution, y_ref, u_ref=None):
        """Independent KKT residuals of ``solution`` for the current history."""
        qp = assemble_qp(self.dictionary_, self.config_, self.history_, y_ref, u_ref)
        return kkt_residuals(qp, solution.alpha)
