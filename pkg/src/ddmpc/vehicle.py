"""Kinematic bicycle plant with a two-wheel steering input.

Inputs are the left and right front-wheel angles; the single-track model
steers with their mean.  Outputs are global X, Y and heading.  Speed is
constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._validation import check_positive, check_positive_int
from .trajectory import Signal, TrajectoryData

__all__ = [
    "STEER_LIMIT",
    "VehicleParams",
    "VehicleState",
    "SteerCommand",
    "effective_steer",
    "wrap_angle",
    "step",
    "simulate",
    "collect_open_loop",
    "make_excitation",
]

STEER_LIMIT = 0.6  # rad, physical wheel-angle limit


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    return math.pi - (math.pi - a) % (2.0 * math.pi)


@dataclass(frozen=True)
class VehicleParams:
    """Mass, inertia and track width are carried for reference only; the
    kinematic update uses wheelbase and speed."""

    wheelbase: float = 2.91
    sprung_mass: float = 1370.0
    yaw_inertia: float = 2315.3
    track_width: float = 1.6
    speed: float = 10.0

    def __post_init__(self):
        for name in ("wheelbase", "sprung_mass", "yaw_inertia", "track_width", "speed"):
            check_positive(getattr(self, name), name)


@dataclass(frozen=True)
class VehicleState:
    x: float = 0.0
    y: float = 0.0
    phi: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.phi)):
            raise ValueError("vehicle state must be finite")
        object.__setattr__(self, "phi", wrap_angle(self.phi))

    @property
    def output(self):
        """Measured output vector (X, Y, heading)."""
        return np.array([self.x, self.y, self.phi])


@dataclass(frozen=True)
class SteerCommand:
    delta_l: float = 0.0
    delta_r: float = 0.0

    def __post_init__(self):
        if abs(self.delta_l) > STEER_LIMIT or abs(self.delta_r) > STEER_LIMIT:
            raise ValueError(
                f"wheel angles ({self.delta_l}, {self.delta_r}) exceed {STEER_LIMIT} rad"
            )

    @classmethod
    def clamped(cls, delta_l, delta_r=None):
        delta_r = delta_l if delta_r is None else delta_r
        lim = STEER_LIMIT
        return cls(float(np.clip(delta_l, -lim, lim)), float(np.clip(delta_r, -lim, lim)))

    @property
    def vector(self):
        return np.array([self.delta_l, self.delta_r])


def effective_steer(cmd):
    return 0.5 * (cmd.delta_l + cmd.delta_r)


def _rhs(phi, speed, yaw_rate):
    return speed * math.cos(phi), speed * math.sin(phi), yaw_rate


def step(state, cmd, params, dt):
    """Advance one period of length ``dt`` with RK4, steer held constant."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    V = params.speed
    w = V / params.wheelbase * math.tan(effective_steer(cmd))
    phi = state.phi
    k1 = _rhs(phi, V, w)
    k2 = _rhs(phi + 0.5 * dt * k1[2], V, w)
    k3 = _rhs(phi + 0.5 * dt * k2[2], V, w)
    k4 = _rhs(phi + dt * k3[2], V, w)
    dx = dt / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
    dy = dt / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    dphi = dt / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
    return VehicleState(state.x + dx, state.y + dy, phi + dphi)


def simulate(state, commands, params, dt):
    """States after each command (the initial state is not included)."""
    out = []
    for cmd in commands:
        state = step(state, cmd, params, dt)
        out.append(state)
    return out


def _as_commands(excitation):
    arr = excitation.samples if isinstance(excitation, Signal) else np.asarray(excitation, float)
    arr = arr.reshape(len(arr), -1)
    if arr.shape[1] == 1:
        arr = np.repeat(arr, 2, axis=1)
    return [SteerCommand(float(a), float(b)) for a, b in arr]


def collect_open_loop(params, excitation, dt, initial=None):
    """Drive the plant open loop and record (wheel angles, X/Y/heading).

    Sample ``k`` pairs the command applied at step ``k`` with the output
    measured once that step has completed, which is how the closed loop
    feeds its history buffer.
    """
    commands = _as_commands(excitation)
    if not commands:
        raise ValueError("excitation is empty")
    state = initial or VehicleState()
    u = np.array([c.vector for c in commands])
    y = np.array([s.output for s in simulate(state, commands, params, dt)])
    return TrajectoryData(u, y, dt)


def _multisine(rng, length, corner):
    """Random-phase multisine on every DFT bin, first-order low-pass amplitude
    roll-off above ``corner`` (cycles per sample), scaled to unit peak."""
    k = np.arange(length)
    freqs = np.arange(1, length // 2 + 1) / length
    amp = 1.0 / np.sqrt(1.0 + (freqs / corner) ** 2)
    phases = rng.uniform(0.0, 2.0 * np.pi, freqs.size)
    sig = amp @ np.sin(2.0 * np.pi * freqs[:, None] * k[None, :] + phases[:, None])
    peak = np.max(np.abs(sig))
    return sig / peak if peak > 0 else sig


def make_excitation(kind, length, amplitude, seed=0, mismatch=0.1, hold=1, corner=0.02):
    """Deterministic two-wheel excitation bounded by ``amplitude`` (rad).

    The wheels move together except for a small independent part controlled
    by ``mismatch``: for ``prbs`` it is the probability that the right wheel
    takes the opposite sign, otherwise the weight of an independent multisine
    mixed into the right wheel.  ``mismatch=0`` gives identical wheels, whose
    Hankel matrix can never have full two-channel rank.

    ``hold`` keeps each PRBS level for that many samples.  ``corner`` sets
    where the multisine spectrum starts rolling off; low corners swing the
    heading further, which keeps recorded data representative of lane
    changes.
    """
    length = check_positive_int(length, "length")
    hold = check_positive_int(hold, "hold")
    if amplitude < 0:
        raise ValueError("amplitude must be nonnegative")
    if not 0.0 <= mismatch <= 1.0:
        raise ValueError("mismatch must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    if kind == "prbs":
        n_blocks = -(-length // hold)
        left = rng.choice([-1.0, 1.0], size=n_blocks)
        flip = rng.random(n_blocks) < mismatch
        right = np.where(flip, -left, left)
        left = np.repeat(left, hold)[:length]
        right = np.repeat(right, hold)[:length]
    elif kind in ("multisine", "chirp"):
        if kind == "multisine":
            left = _multisine(rng, length, corner)
        else:
            k = np.arange(length)
            f0, f1 = 0.005, 0.25  # cycles per sample
            left = np.sin(2 * np.pi * (f0 * k + 0.5 * (f1 - f0) * k**2 / max(length - 1, 1)))
        other = _multisine(rng, length, corner)
        right = (1.0 - mismatch) * left + mismatch * other
    else:
        raise ValueError(f"unknown excitation kind {kind!r}; use prbs, multisine or chirp")
    return Signal(amplitude * np.column_stack([left, right]))
