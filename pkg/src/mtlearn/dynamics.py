"""Normalised first- and second-order interacting particle systems.

First order::

    dx_i/dt = sum_j phi(|x_j - x_i|) (x_j - x_i) / den_i

Second order::

    m_i d2x_i/dt2 = sum_j phi(|x_j - x_i|) (v_j - v_i) / den_i

with ``den_i = sum_j phi(|x_j - x_i|)``, the ``j = i`` term included or not
according to ``SystemSpec.include_self``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp

from .kernels import InteractionKernel


class SingularNormalizationError(ArithmeticError):
    def __init__(self, agent: int, value: float):
        self.agent = agent
        self.value = value
        super().__init__(
            f"normalisation denominator of agent {agent} is {value:.3g}, below floor"
        )


class IntegrationError(RuntimeError):
    def __init__(self, time: float, reason: str):
        self.time = time
        super().__init__(f"integration failed at t={time:.6g}: {reason}")


@dataclass(frozen=True)
class SystemSpec:
    order: int
    N: int
    d: int
    kernel: InteractionKernel
    masses: Optional[np.ndarray] = field(default=None, repr=False)
    include_self: bool = True
    eps: float = 1e-12

    def __post_init__(self):
        if self.order not in (1, 2):
            raise ValueError("order must be 1 or 2")
        if self.N < 2:
            raise ValueError("need at least two agents")
        if self.d < 1:
            raise ValueError("dimension must be positive")
        if not self.eps > 0:
            raise ValueError("denominator floor must be positive")
        if self.order == 2:
            m = np.ones(self.N) if self.masses is None else np.asarray(self.masses, float)
            m = np.broadcast_to(m, (self.N,)).copy()
            if np.any(m <= 0) or not np.all(np.isfinite(m)):
                raise ValueError("masses must be positive and finite")
            m.setflags(write=False)
            object.__setattr__(self, "masses", m)


@dataclass(frozen=True)
class State:
    positions: np.ndarray
    velocities: Optional[np.ndarray] = None


@dataclass(frozen=True)
class IntegratorConfig:
    rtol: float = 1e-5
    atol: float = 1e-6
    first_step: Optional[float] = None
    max_step: float = np.inf

    def __post_init__(self):
        if not 0 < self.rtol < 1:
            raise ValueError("rtol must lie in (0, 1)")
        if not self.atol > 0:
            raise ValueError("atol must be positive")


@dataclass(frozen=True)
class Trajectory:
    """States at the sample times; arrays are ``[L, N, d]``."""

    times: np.ndarray
    positions: np.ndarray
    velocities: Optional[np.ndarray] = None


def interaction_weights(spec: SystemSpec, x: np.ndarray) -> np.ndarray:
    """Row-normalised weight matrix ``phi(r_ij) / den_i``."""
    diff = x[None, :, :] - x[:, None, :]
    r = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    w = np.asarray(spec.kernel(r), dtype=float)
    if not spec.include_self:
        np.fill_diagonal(w, 0.0)
    den = w.sum(axis=1)
    bad = np.flatnonzero(~(den >= spec.eps))
    if bad.size:
        raise SingularNormalizationError(int(bad[0]), float(den[bad[0]]))
    return w / den[:, None]


def _relative_average(w: np.ndarray, y: np.ndarray) -> np.ndarray:
    # sum_j w_ij (y_j - y_i)
    return w @ y - w.sum(axis=1)[:, None] * y


def drift_first_order(spec: SystemSpec, positions: np.ndarray) -> np.ndarray:
    x = np.asarray(positions, dtype=float).reshape(spec.N, spec.d)
    return _relative_average(interaction_weights(spec, x), x)


def accel_second_order(spec: SystemSpec, positions, velocities) -> np.ndarray:
    x = np.asarray(positions, dtype=float).reshape(spec.N, spec.d)
    v = np.asarray(velocities, dtype=float).reshape(spec.N, spec.d)
    masses = spec.masses if spec.masses is not None else np.ones(spec.N)
    return _relative_average(interaction_weights(spec, x), v) / masses[:, None]


def integrate(
    spec: SystemSpec,
    initial: State,
    sample_times,
    config: IntegratorConfig = IntegratorConfig(),
) -> Trajectory:
    """Integrate with Dormand-Prince 5(4) and report states at ``sample_times``."""
    t = np.asarray(sample_times, dtype=float)
    if t.ndim != 1 or t.size < 1 or t[0] != 0.0 or np.any(np.diff(t) <= 0):
        raise ValueError("sample_times must be strictly increasing and start at 0")
    N, d = spec.N, spec.d
    x0 = np.asarray(initial.positions, dtype=float).reshape(N, d)
    if spec.order == 1:
        y0 = x0.ravel()

        def rhs(_, y):
            return drift_first_order(spec, y.reshape(N, d)).ravel()
    else:
        if initial.velocities is None:
            raise ValueError("second-order systems need initial velocities")
        v0 = np.asarray(initial.velocities, dtype=float).reshape(N, d)
        y0 = np.concatenate([x0.ravel(), v0.ravel()])

        def rhs(_, y):
            x, v = y[: N * d].reshape(N, d), y[N * d:].reshape(N, d)
            a = accel_second_order(spec, x, v)
            return np.concatenate([v.ravel(), a.ravel()])

    if not np.all(np.isfinite(y0)):
        raise IntegrationError(0.0, "non-finite initial state")

    def checked(tt, y):
        if not np.all(np.isfinite(y)):
            raise IntegrationError(tt, "non-finite state")
        return rhs(tt, y)

    if t.size == 1:
        ys = y0[:, None]
    else:
        kw = {"max_step": config.max_step}
        if config.first_step is not None:
            kw["first_step"] = config.first_step
        sol = solve_ivp(
            checked, (t[0], t[-1]), y0, method="RK45", t_eval=t,
            rtol=config.rtol, atol=config.atol, **kw,
        )
        if sol.status != 0:
            t_fail = float(sol.t[-1]) if sol.t.size else 0.0
            raise IntegrationError(t_fail, sol.message)
        ys = sol.y
    ys = ys.T
    if not np.all(np.isfinite(ys)):
        raise IntegrationError(float(t[-1]), "non-finite state")
    pos = ys[:, : N * d].reshape(-1, N, d)
    vel = ys[:, N * d:].reshape(-1, N, d) if spec.order == 2 else None
    return Trajectory(times=t, positions=pos, velocities=vel)


def sample_initial_conditions(low, high, N: int, seed, vel_low=None, vel_high=None):
    """Uniform i.i.d. draws on a box; returns ``State``.

    ``seed`` is anything ``numpy.random.default_rng`` accepts. Velocities are
    drawn after positions from the same stream when a velocity box is given.
    """
    low, high = np.atleast_1d(np.asarray(low, float)), np.atleast_1d(np.asarray(high, float))
    if low.shape != high.shape or not np.all(low < high):
        raise ValueError("initial-condition box must satisfy low < high componentwise")
    rng = np.random.default_rng(seed)
    x = rng.uniform(low, high, size=(N, low.size))
    v = None
    if vel_low is not None or vel_high is not None:
        vl = np.atleast_1d(np.asarray(vel_low, float))
        vh = np.atleast_1d(np.asarray(vel_high, float))
        if vl.shape != low.shape or vh.shape != low.shape or not np.all(vl < vh):
            raise ValueError("velocity box must satisfy low < high componentwise")
        v = rng.uniform(vl, vh, size=(N, low.size))
    return State(positions=x, velocities=v)


def sample_times(T: float, L: int) -> np.ndarray:
    """``L`` equidistant times on ``[0, T]`` including both endpoints."""
    if L < 1 or not T > 0:
        raise ValueError("need L >= 1 and T > 0")
    return np.linspace(0.0, T, L) if L > 1 else np.zeros(1)
