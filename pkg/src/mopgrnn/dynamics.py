"""Benchmark ODE systems, integration, excitation signals and energy balances.

Both benchmarks have the state ``[phi, phi_dot]``. Dynamics and energy
residuals broadcast over leading axes, so ``x`` may be a single state of
shape ``(2,)`` or a whole history of shape ``(n, 2)``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .errors import DivergenceError, InvalidInputError

STATE_DIM = 2
GOLF_GEAR_RATIO = 4.0


def _require(cond, message):
    if not cond:
        raise InvalidInputError(message)


@dataclass(frozen=True)
class PendulumParams:
    m: float
    l: float
    d: float
    g: float = 9.81

    def __post_init__(self):
        _require(all(math.isfinite(v) for v in asdict(self).values()),
                 "pendulum parameters must be finite")
        _require(self.m > 0 and self.l > 0 and self.g > 0 and self.d >= 0,
                 f"invalid pendulum parameters {self}")


@dataclass(frozen=True)
class GolfParams:
    m: float
    a: float
    J: float
    d: float
    r: float
    mu: float
    g: float = 9.81
    # slope of the smooth friction sign; a modelling choice, not a measured value
    gamma: float = 100.0

    def __post_init__(self):
        _require(all(math.isfinite(v) for v in asdict(self).values()),
                 "golf parameters must be finite")
        _require(min(self.m, self.a, self.J, self.r, self.g) > 0
                 and min(self.d, self.mu, self.gamma) >= 0,
                 f"invalid golf parameters {self}")


# reference parameter sets: true and corrupted pendulum, golf physics model
PENDULUM_TRUE = PendulumParams(m=50.0, l=0.045, d=2.1, g=9.81)
PENDULUM_PHYSICS = PendulumParams(m=50.0, l=0.05, d=2.0, g=9.81)
GOLF_PHYSICS = GolfParams(m=0.5241, a=0.4702, J=0.1445, d=0.0132, r=0.0245, mu=1.5136)


def _check_finite(x, u):
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(u))):
        raise InvalidInputError("non-finite state or input")


def pendulum_dynamics(x, u, t, p: PendulumParams) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    _require(x.shape[-1] == STATE_DIM, f"pendulum state must have dimension 2, got {x.shape}")
    _check_finite(x, u)
    phi, omega = x[..., 0], x[..., 1]
    inertia = p.m * p.l ** 2
    acc = (-p.m * p.g * p.l * np.sin(phi) - p.d * omega + u) / inertia
    return np.stack([omega, acc], axis=-1)


def golf_friction(phi, omega, p: GolfParams):
    """Friction torque M_F of the golf robot (smooth static/sliding model)."""
    return p.r * p.mu * np.tanh(p.gamma * omega) * np.abs(
        p.m * omega ** 2 * p.a + p.m * p.g * np.cos(phi))


def golf_dynamics(x, u, t, p: GolfParams) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    _require(x.shape[-1] == STATE_DIM, f"golf state must have dimension 2, got {x.shape}")
    _check_finite(x, u)
    phi, omega = x[..., 0], x[..., 1]
    torque = (-p.m * p.g * p.a * np.sin(phi) - p.d * omega
              - golf_friction(phi, omega, p) + GOLF_GEAR_RATIO * u)
    return np.stack([omega, torque / p.J], axis=-1)


@dataclass(frozen=True)
class OdeSystemSpec:
    """One benchmark system together with a parameter set."""

    system: str
    params: PendulumParams | GolfParams

    def __post_init__(self):
        expected = {"pendulum": PendulumParams, "golf": GolfParams}
        _require(self.system in expected, f"unknown system {self.system!r}")
        _require(isinstance(self.params, expected[self.system]),
                 f"{self.system} needs {expected[self.system].__name__}")

    @property
    def state_dim(self) -> int:
        return STATE_DIM

    @property
    def inertia(self) -> float:
        """Coefficient of phi_ddot * phi_dot in the energy balance."""
        p = self.params
        return p.m * p.l ** 2 if self.system == "pendulum" else p.J

    def dynamics(self, x, u, t=0.0) -> np.ndarray:
        if self.system == "pendulum":
            return pendulum_dynamics(x, u, t, self.params)
        return golf_dynamics(x, u, t, self.params)

    def energy_residual(self, x, xdot, u, t=0.0):
        return energy_residual(self, x, xdot, u, t)

    def to_dict(self) -> dict:
        return {"system": self.system, "params": asdict(self.params)}

    @classmethod
    def from_dict(cls, d) -> "OdeSystemSpec":
        system = d["system"]
        ptype = PendulumParams if system == "pendulum" else GolfParams
        try:
            params = ptype(**d["params"])
        except TypeError as exc:
            raise InvalidInputError(f"bad {system} parameters: {exc}") from None
        return cls(system, params)


def energy_residual(spec: OdeSystemSpec, x, xdot, u, t=0.0):
    """Instantaneous power-balance mismatch of a state/derivative pair.

    The angular velocity is read from the state and the acceleration from
    ``xdot[..., 1]``; the residual is therefore affine in the acceleration.
    Zero whenever ``xdot`` comes from ``spec.dynamics`` at the same point.
    """
    x = np.asarray(x, dtype=float)
    xdot = np.asarray(xdot, dtype=float)
    u = np.asarray(u, dtype=float)
    phi, omega = x[..., 0], x[..., 1]
    acc = xdot[..., 1]
    p = spec.params
    if spec.system == "pendulum":
        return (p.m * p.l ** 2 * acc * omega + p.m * p.g * p.l * omega * np.sin(phi)
                + p.d * omega ** 2 - u * omega)
    return (p.J * acc * omega + p.m * p.g * p.a * omega * np.sin(phi) + p.d * omega ** 2
            + golf_friction(phi, omega, p) * omega - GOLF_GEAR_RATIO * omega * u)


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    dt: float
    n: int

    def __post_init__(self):
        _require(self.dt > 0, "dt must be positive")
        _require(self.n >= 2, "a time grid needs at least two samples")

    @classmethod
    def from_duration(cls, duration: float, dt: float, t0: float = 0.0) -> "TimeGrid":
        return cls(t0, dt, int(round(duration / dt)) + 1)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n)

    @property
    def duration(self) -> float:
        return (self.n - 1) * self.dt


@dataclass
class Trajectory:
    grid: TimeGrid
    states: np.ndarray   # (n, state_dim)
    derivs: np.ndarray   # (n, state_dim)
    inputs: np.ndarray   # (n,)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.derivs = np.asarray(self.derivs, dtype=float)
        self.inputs = np.asarray(self.inputs, dtype=float)
        n = self.grid.n
        _require(self.states.ndim == 2 and self.states.shape[0] == n,
                 f"states must have shape (n={n}, dim), got {self.states.shape}")
        _require(self.derivs.shape == self.states.shape,
                 "derivs must be shape-aligned with states")
        _require(self.inputs.shape == (n,), f"inputs must have shape ({n},)")

    @property
    def times(self) -> np.ndarray:
        return self.grid.times


@dataclass(frozen=True)
class ExcitationSignal:
    """Control torque u(t).

    ``frequency`` is the sine frequency or chirp start frequency (Hz);
    chirps sweep linearly to ``frequency_end`` over ``sweep_time`` seconds.
    """

    kind: str = "zero"
    amplitude: float = 0.0
    frequency: float = 0.0
    frequency_end: float = 0.0
    phase: float = 0.0
    step_time: float = 0.0
    sweep_time: float = 1.0

    def __post_init__(self):
        _require(self.kind in ("sine", "step", "chirp", "zero"), f"unknown excitation {self.kind!r}")
        _require(math.isfinite(self.amplitude), "amplitude must be finite")
        _require(self.frequency >= 0 and self.frequency_end >= 0, "frequencies must be >= 0")
        if self.kind == "chirp":
            _require(self.frequency_end >= self.frequency, "chirp must sweep upwards")
            _require(self.sweep_time > 0, "chirp sweep_time must be positive")

    def __call__(self, t):
        return excitation_eval(self, t)

    def to_dict(self) -> dict:
        return asdict(self)


def excitation_eval(signal: ExcitationSignal, t):
    t = np.asarray(t, dtype=float)
    if signal.kind == "sine":
        out = signal.amplitude * np.sin(2 * np.pi * signal.frequency * t + signal.phase)
    elif signal.kind == "step":
        out = np.where(t >= signal.step_time, signal.amplitude, 0.0)
    elif signal.kind == "chirp":
        rate = (signal.frequency_end - signal.frequency) / signal.sweep_time
        out = signal.amplitude * np.sin(
            2 * np.pi * (signal.frequency * t + 0.5 * rate * t ** 2) + signal.phase)
    else:
        out = np.zeros_like(t)
    return float(out) if out.ndim == 0 else out


Dynamics = Callable[[np.ndarray, float, float], np.ndarray]


def rk4_step(f: Dynamics, x, u_of_t: Callable[[float], float], t: float, dt: float) -> np.ndarray:
    """One classical Runge-Kutta step with the input sampled at t, t+dt/2 and t+dt."""
    _require(dt > 0, "dt must be positive")
    x = np.asarray(x, dtype=float)
    half = t + 0.5 * dt
    u_mid = u_of_t(half)
    k1 = f(x, u_of_t(t), t)
    k2 = f(x + 0.5 * dt * k1, u_mid, half)
    k3 = f(x + 0.5 * dt * k2, u_mid, half)
    k4 = f(x + dt * k3, u_of_t(t + dt), t + dt)
    out = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise DivergenceError(f"integration diverged at t={t}", t=t)
    return out


def simulate(spec: OdeSystemSpec, x0, excitation: ExcitationSignal | Callable,
             grid: TimeGrid) -> Trajectory:
    x0 = np.asarray(x0, dtype=float)
    _require(x0.shape == (spec.state_dim,), f"x0 must have shape ({spec.state_dim},)")
    times = grid.times
    inputs = np.asarray(excitation(times), dtype=float) * np.ones(grid.n)
    states = np.empty((grid.n, spec.state_dim))
    states[0] = x0

    def f(x, u, t):
        try:
            return spec.dynamics(x, u, t)
        except InvalidInputError:
            raise DivergenceError(f"state became non-finite near t={t}", t=t) from None

    for k in range(grid.n - 1):
        states[k + 1] = rk4_step(f, states[k], excitation, times[k], grid.dt)
    derivs = spec.dynamics(states, inputs, times)
    return Trajectory(grid, states, derivs, inputs)


def numerical_differentiate(series, dt: float) -> np.ndarray:
    """Second-order central differences with second-order one-sided ends."""
    series = np.asarray(series, dtype=float)
    _require(series.ndim == 1 and series.size >= 3, "need at least three samples to differentiate")
    _require(dt > 0, "dt must be positive")
    return np.gradient(series, dt, edge_order=2)


def mechanical_energy(spec: OdeSystemSpec, x) -> np.ndarray:
    """Kinetic plus potential energy (zero at the hanging rest position)."""
    x = np.asarray(x, dtype=float)
    phi, omega = x[..., 0], x[..., 1]
    p = spec.params
    if spec.system == "pendulum":
        return 0.5 * p.m * p.l ** 2 * omega ** 2 + p.m * p.g * p.l * (1 - np.cos(phi))
    return 0.5 * p.J * omega ** 2 + p.m * p.g * p.a * (1 - np.cos(phi))
