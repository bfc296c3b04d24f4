"""Model-based steering baselines: PID on path errors and kinematic MPC."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .qp import ActiveSetQP
from .vehicle import STEER_LIMIT, SteerCommand

__all__ = ["PidConfig", "KinMpcConfig", "PIDSteering", "KinematicMPC", "error_dynamics"]


@dataclass(frozen=True)
class PidConfig:
    """Gains map lateral error (m) and heading error (rad) to steer (rad).

    Defaults come from a grid search on the default dual lane switch; see
    :func:`ddmpc.scenario.tune_pid`.
    """

    kp: float = 32.0
    ki: float = 0.0
    kd: float = 0.1
    k_heading: float = 10.0
    integral_limit: float = math.radians(2.0)
    u_min: float = -math.radians(5.0)
    u_max: float = math.radians(5.0)

    def __post_init__(self):
        for name in ("kp", "ki", "kd", "k_heading", "integral_limit"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if not -STEER_LIMIT <= self.u_min < self.u_max <= STEER_LIMIT:
            raise ValueError(f"output limits must satisfy -{STEER_LIMIT} <= u_min < u_max <= {STEER_LIMIT}")


class PIDSteering(BaseEstimator):
    """Lateral PID plus heading feedback; both wheels get the same angle.

    State lives in ``integral_`` and ``prev_error_``.  ``lateral_error`` is
    the reference's offset from the vehicle along the path normal, so a
    reference to the left is positive and calls for positive (left) steer.
    """

    def __init__(self, kp=32.0, ki=0.0, kd=0.1, k_heading=10.0,
                 integral_limit=math.radians(2.0), u_min=-math.radians(5.0), u_max=math.radians(5.0)):
        self.kp = kp
        self.ki = ki
        self.kd = kd
        self.k_heading = k_heading
        self.integral_limit = integral_limit
        self.u_min = u_min
        self.u_max = u_max

    @classmethod
    def from_config(cls, cfg):
        return cls(**{k: getattr(cfg, k) for k in PidConfig.__dataclass_fields__})

    def reset(self):
        PidConfig(**self.get_params())
        self.integral_ = 0.0
        self.prev_error_ = None
        return self

    def step(self, lateral_error, heading_error, dt):
        if dt <= 0:
            raise ValueError("dt must be positive")
        if not hasattr(self, "integral_"):
            self.reset()
        e = float(lateral_error)
        self.integral_ += e * dt
        if self.ki != 0.0:
            cap = abs(self.integral_limit / self.ki)
            self.integral_ = float(np.clip(self.integral_, -cap, cap))
        de = 0.0 if self.prev_error_ is None else (e - self.prev_error_) / dt
        self.prev_error_ = e
        raw = self.kp * e + self.ki * self.integral_ + self.kd * de + self.k_heading * heading_error
        delta = float(np.clip(raw, self.u_min, self.u_max))
        return SteerCommand(delta, delta)


@dataclass(frozen=True)
class KinMpcConfig:
    horizon: int = 30
    q_lateral: float = 1.0
    q_heading: float = 1.0
    r: float = 2e-2
    u_min: float = -math.radians(5.0)
    u_max: float = math.radians(5.0)
    solver_tol: float = 1e-8
    solver_max_iter: int = 200

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.q_lateral <= 0 or self.q_heading <= 0 or self.r <= 0:
            raise ValueError("weights must be positive")
        if self.u_min >= self.u_max:
            raise ValueError("u_min must be below u_max")


def error_dynamics(speed, wheelbase, dt, ref_steer):
    """Discrete path-frame error model linearised about ``ref_steer``.

    State ``(lateral error, heading error)``; input is the steer deviation
    from ``ref_steer``.  Returns ``A`` and per-step ``B_k`` of shape (H, 2).
    """
    gain = speed / wheelbase / np.cos(ref_steer) ** 2
    A = np.array([[1.0, speed * dt], [0.0, 1.0]])
    B = np.column_stack([0.5 * speed * gain * dt**2, gain * dt])
    return A, B


class KinematicMPC(BaseEstimator):
    """Condensed linear MPC on the kinematic bicycle's path-error model.

    Decision variables are the absolute steer angles over the horizon,
    penalised towards zero like the data-driven controller's inputs.
    """

    def __init__(self, horizon=30, q_lateral=1.0, q_heading=1.0, r=2e-2,
                 u_min=-math.radians(5.0), u_max=math.radians(5.0), solver_tol=1e-8, solver_max_iter=200):
        self.horizon = horizon
        self.q_lateral = q_lateral
        self.q_heading = q_heading
        self.r = r
        self.u_min = u_min
        self.u_max = u_max
        self.solver_tol = solver_tol
        self.solver_max_iter = solver_max_iter

    @classmethod
    def from_config(cls, cfg):
        return cls(**{k: getattr(cfg, k) for k in KinMpcConfig.__dataclass_fields__})

    def reset(self):
        self.config_ = KinMpcConfig(**self.get_params())
        self._warm = None
        return self

    def condensed(self, errors, curvature, speed, wheelbase, dt):
        """Prediction matrices ``X = Sx e0 + Su (delta - delta_ref)`` and the QP data."""
        cfg = self.config_
        H = cfg.horizon
        kappa = np.asarray(curvature, dtype=float)[:H]
        ref_steer = np.arctan(wheelbase * kappa)
        A, B = error_dynamics(speed, wheelbase, dt, ref_steer)
        Sx = np.zeros((2 * H, 2))
        Su = np.zeros((2 * H, H))
        Ak = np.eye(2)
        for k in range(H):
            Ak = A @ Ak
            Sx[2 * k : 2 * k + 2] = Ak
        for j in range(H):
            col = B[j]
            for k in range(j, H):
                Su[2 * k : 2 * k + 2, j] = col
                col = A @ col
        Qbar = np.kron(np.eye(H), np.diag([cfg.q_lateral, cfg.q_heading]))
        free = Sx @ np.asarray(errors, dtype=float) - Su @ ref_steer
        Hess = 2.0 * (Su.T @ Qbar @ Su + cfg.r * np.eye(H))
        g = 2.0 * Su.T @ Qbar @ free
        return Hess, g, Sx, Su, ref_steer

    def step(self, lateral_error, heading_error, curvature, speed, wheelbase, dt):
        """Optimal first steer for path-frame errors (vehicle minus reference).

        ``curvature`` holds the reference curvature at the next ``horizon``
        stations.  Returns ``(SteerCommand, diagnostics)``.
        """
        if not hasattr(self, "config_"):
            self.reset()
        cfg = self.config_
        if len(curvature) < cfg.horizon:
            raise ValueError(f"need {cfg.horizon} curvature samples, got {len(curvature)}")
        start = time.perf_counter()
        Hess, g, *_ = self.condensed([lateral_error, heading_error], curvature, speed, wheelbase, dt)
        solver = ActiveSetQP(Hess, None, np.eye(cfg.horizon), tol=cfg.solver_tol, max_iter=cfg.solver_max_iter)
        res = solver.solve(g, None, np.full(cfg.horizon, cfg.u_min), np.full(cfg.horizon, cfg.u_max),
                           warm_active=self._warm)
        self._warm = [(r - 1, s) for r, s in res.active if r >= 1]
        delta = float(np.clip(res.x[0], cfg.u_min, cfg.u_max))
        diag = {"status": res.status, "iterations": res.iterations, "solve_time": time.perf_counter() - start,
                "u_seq": res.x, "result": res}
        return SteerCommand(delta, delta), diag
