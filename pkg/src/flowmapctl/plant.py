"""Self-excited wake oscillator standing in for the flow solver.

A van der Pol-type oscillator with a bounded scalar control input. The
displacement q drives the observables: drag sits at c0 + c2*q^2, so it
fluctuates at twice the shedding frequency, and lift is proportional to
q. A single regime parameter r sets both the shedding frequency and the
strength of the self-excitation; controllers never see r.

Operations are pure value-to-value functions. A module-level counter
tracks how many sample-step advances have been performed so tests can
assert that controllers never touch the plant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numba import njit


class RegimeError(ValueError):
    """Regime parameter outside its valid range."""


class ControlBoundError(ValueError):
    """Control magnitude exceeds 1."""


class ConfigError(ValueError):
    """Inconsistent time-stepping configuration."""


class HistoryError(ValueError):
    """Requested history longer than the spinup provides."""


class QoiSample(NamedTuple):
    """One observation of the quantities of interest."""

    c_d: float
    c_l: float


@dataclass(frozen=True)
class PlantParams:
    """Plant constants. omega and eps are fixed functions of the regime r."""

    r: float
    c0: float
    c2: float
    kappa_l: float
    b: float
    delta_t_internal: float
    omega: float
    eps: float


@dataclass(frozen=True)
class PlantState:
    q: float
    p: float
    t: float


_advance_calls = 0


def advance_call_count() -> int:
    """Number of sample-step advances since the last reset."""
    return _advance_calls


def reset_advance_call_count() -> None:
    global _advance_calls
    _advance_calls = 0


def make_plant(
    r: float,
    *,
    c0: float = 1.0,
    c2: float = 0.15,
    kappa_l: float = 0.6,
    b: float = 0.4,
    delta_t_internal: float = 0.002,
) -> PlantParams:
    """Build the plant for regime r.

    Dynamics: dq/dt = p, dp/dt = eps*omega*(1-q^2)*p - omega^2*q + b*omega^2*u,
    with omega = 2*pi*(0.15 + 0.0002*r) and eps = 0.2 + r/1000. Observables:
    c_d = c0 + c2*q^2, c_l = kappa_l*q.
    """
    if not math.isfinite(r) or r <= 0.0:
        raise RegimeError(f"regime parameter must be positive and finite, got {r!r}")
    if delta_t_internal <= 0.0:
        raise ConfigError(f"internal substep must be positive, got {delta_t_internal!r}")
    if c2 < 0.0:
        raise ConfigError(f"drag-oscillation coupling c2 must be nonnegative, got {c2!r}")
    omega = 2.0 * math.pi * (0.15 + 2.0e-4 * r)
    eps = 0.2 + r / 1000.0
    return PlantParams(
        r=r,
        c0=c0,
        c2=c2,
        kappa_l=kappa_l,
        b=b,
        delta_t_internal=delta_t_internal,
        omega=omega,
        eps=eps,
    )


@njit(cache=True)
def _march(q, p, u, n_sub, h, omega, eps, b):
    """Classical RK4 over n_sub substeps of size h with u held constant."""
    f = omega * omega
    bf = b * f
    for _ in range(n_sub):
        k1q = p
        k1p = eps * omega * (1.0 - q * q) * p - f * q + bf * u
        q2 = q + 0.5 * h * k1q
        p2 = p + 0.5 * h * k1p
        k2q = p2
        k2p = eps * omega * (1.0 - q2 * q2) * p2 - f * q2 + bf * u
        q3 = q + 0.5 * h * k2q
        p3 = p + 0.5 * h * k2p
        k3q = p3
        k3p = eps * omega * (1.0 - q3 * q3) * p3 - f * q3 + bf * u
        q4 = q + h * k3q
        p4 = p + h * k3p
        k4q = p4
        k4p = eps * omega * (1.0 - q4 * q4) * p4 - f * q4 + bf * u
        q = q + (h / 6.0) * (k1q + 2.0 * k2q + 2.0 * k3q + k4q)
        p = p + (h / 6.0) * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
    return q, p


@njit(cache=True)
def _rollout_kernel(q0, p0, useq, n_sub, h, omega, eps, b):
    """March every control sequence in useq (n_seq, n_steps) from (q0, p0)."""
    n_seq, n_steps = useq.shape
    qs = np.empty((n_seq, n_steps))
    p_end = np.empty(n_seq)
    for i in range(n_seq):
        q = q0
        p = p0
        for k in range(n_steps):
            q, p = _march(q, p, useq[i, k], n_sub, h, omega, eps, b)
            qs[i, k] = q
        p_end[i] = p
    return qs, p_end


def _substeps(params: PlantParams, dt: float) -> int:
    ratio = dt / params.delta_t_internal
    n = round(ratio)
    if n < 1 or abs(ratio - n) > 1e-9 * max(1.0, abs(ratio)):
        raise ConfigError(
            f"sample step {dt} is not an integer multiple of the internal "
            f"substep {params.delta_t_internal}"
        )
    return n


def _grid_steps(duration: float, dt: float) -> int:
    ratio = duration / dt
    n = round(ratio)
    if n < 1 or abs(ratio - n) > 1e-9 * max(1.0, abs(ratio)):
        raise ConfigError(f"duration {duration} is not an integer multiple of the sample step {dt}")
    return n


def plant_step(params: PlantParams, state: PlantState, u: float, dt: float) -> PlantState:
    """Advance one sample step of size dt with the control held constant."""
    global _advance_calls
    if abs(u) > 1.0:
        raise ControlBoundError(f"control must lie in [-1, 1], got {u!r}")
    n_sub = _substeps(params, dt)
    q, p = _march(
        state.q, state.p, float(u), n_sub, params.delta_t_internal, params.omega, params.eps, params.b
    )
    _advance_calls += 1
    return PlantState(q=q, p=p, t=state.t + dt)


def observe(params: PlantParams, state: PlantState) -> QoiSample:
    """Drag and lift coefficients of the current state."""
    return QoiSample(c_d=params.c0 + params.c2 * state.q * state.q, c_l=params.kappa_l * state.q)


def rollout_observations(
    params: PlantParams, state: PlantState, controls: np.ndarray, dt: float
) -> tuple[np.ndarray, np.ndarray, list[PlantState]]:
    """Advance a batch of control sequences from a common starting state.

    controls has shape (n_seq, n_steps); entry [i, k] is held over the k-th
    sample step of sequence i. Returns c_d and c_l arrays of the same shape
    (observation after each step) and the per-sequence final states.
    """
    global _advance_calls
    u = np.ascontiguousarray(controls, dtype=np.float64)
    if u.ndim != 2:
        raise ConfigError(f"controls must be a 2-d array, got shape {u.shape}")
    if u.size and np.max(np.abs(u)) > 1.0:
        raise ControlBoundError("control sequence leaves [-1, 1]")
    n_sub = _substeps(params, dt)
    qs, p_end = _rollout_kernel(
        state.q, state.p, u, n_sub, params.delta_t_internal, params.omega, params.eps, params.b
    )
    _advance_calls += u.size
    c_d = params.c0 + params.c2 * qs * qs
    c_l = params.kappa_l * qs
    t_end = state.t + u.shape[1] * dt
    end_states = [
        PlantState(q=float(qs[i, -1]) if u.shape[1] else state.q,
                   p=float(p_end[i]) if u.shape[1] else state.p,
                   t=t_end)
        for i in range(u.shape[0])
    ]
    return c_d, c_l, end_states


def spinup(
    params: PlantParams,
    t_spin: float = 100.0,
    h0: int = 60,
    dt: float = 0.1,
    q0: float = 0.1,
    p0: float = 0.0,
) -> tuple[PlantState, list[QoiSample], list[float]]:
    """Run the uncontrolled plant from (q0, p0) until its developed state.

    Returns the state at t = t_spin together with the last h0 samples at
    spacing dt and the matching all-zero control history, enough to fill
    any controller window or cost-average buffer up to h0 samples.
    """
    if h0 < 1:
        raise HistoryError(f"history length must be at least 1, got {h0}")
    n_total = _grid_steps(t_spin, dt)
    if n_total < h0:
        raise HistoryError(
            f"spinup of {t_spin} time units provides {n_total} samples at dt={dt}, "
            f"fewer than the requested history of {h0}"
        )
    u = np.zeros((1, n_total))
    c_d, c_l, end_states = rollout_observations(
        params, PlantState(q=q0, p=p0, t=0.0), u, dt
    )
    end = PlantState(q=end_states[0].q, p=end_states[0].p, t=t_spin)
    history = [QoiSample(float(d), float(l)) for d, l in zip(c_d[0, -h0:], c_l[0, -h0:])]
    return end, history, [0.0] * h0
