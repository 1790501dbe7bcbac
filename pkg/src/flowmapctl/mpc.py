"""Receding-horizon control through the surrogate rollout.

At every step the planner minimizes the windowed cost evaluated at the
end of the prediction horizon: the trailing window there mixes the most
recent recorded observations with the horizon's predicted ones. The
optimizer is projected first-order (Adam-style steps clamped to the
control box), warm-started from the previous plan shifted by one step.
Gradients come from reverse accumulation through the surrogate rollout;
a plant-as-model variant (for ceiling experiments) uses batched finite
differences through the true dynamics instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .flowmap import (
    FlowMapModel,
    MemoryWindow,
    _backprop_rollout,
    _rollout_batch_cached,
    advance_window,
    window_from_history,
)
from .metrics import DEFAULT_OMEGA_L, DEFAULT_WINDOW_T, window_length
from .plant import PlantParams, PlantState, rollout_observations


@dataclass(frozen=True)
class MpcConfig:
    n_p: int = 20  # prediction horizon steps
    n_opt: int = 50  # optimizer iterations per plan
    step_size: float = 0.1
    warm_start: bool = True
    window_t: float = DEFAULT_WINDOW_T
    omega_l: float = DEFAULT_OMEGA_L


@dataclass
class MpcPlanContext:
    """Planner state: surrogate window, recorded cost window, previous plan."""

    window: MemoryWindow
    history: np.ndarray  # (window samples, 2), chronological
    prev_plan: np.ndarray | None = None
    last_initial_objective: float = math.nan
    last_objective: float = math.nan
    last_trace: list = field(default_factory=list)


def make_plan_context(
    v_hist: np.ndarray, u_hist: np.ndarray, n_m: int, window_t: float, dt: float
) -> MpcPlanContext:
    """Build the context from recorded history (newest last)."""
    w = window_length(window_t, dt)
    v = np.asarray(v_hist, dtype=np.float64)
    u = np.asarray(u_hist, dtype=np.float64)
    if len(v) < max(n_m + 1, w):
        raise ValueError(
            f"history of {len(v)} samples cannot fill memory {n_m} and a {w}-sample cost window"
        )
    window = window_from_history(v[-(n_m + 1) :], u[-n_m:] if n_m else u[:0])
    return MpcPlanContext(window=window, history=v[-w:].copy())


def advance_plan_context(ctx: MpcPlanContext, v_new, u_used: float) -> None:
    """Push the actually observed sample and the applied control."""
    ctx.window = advance_window(ctx.window, v_new, u_used)
    ctx.history = np.vstack([ctx.history[1:], np.asarray(v_new, dtype=np.float64)])


def _window_means(recorded: np.ndarray, pred_cd, pred_cl, w: int):
    """Mean drag/lift of the trailing w-sample window at the horizon end.

    pred_cd/pred_cl have shape (..., K); the window takes the last
    min(K, w) predictions plus enough recorded samples to fill up.
    """
    k = pred_cd.shape[-1]
    if k >= w:
        return pred_cd[..., k - w :].mean(axis=-1), pred_cl[..., k - w :].mean(axis=-1)
    n_rec = w - k
    cd = (recorded[-n_rec:, 0].sum() + pred_cd.sum(axis=-1)) / w
    cl = (recorded[-n_rec:, 1].sum() + pred_cl.sum(axis=-1)) / w
    return cd, cl


def terminal_objective(recorded: np.ndarray, pred_cd, pred_cl, w: int, omega_l: float):
    cd, cl = _window_means(recorded, pred_cd, pred_cl, w)
    return cd + omega_l * np.abs(cl)


def _minimize_projected(obj_grad, u0: np.ndarray, config: MpcConfig, ctx) -> np.ndarray:
    """Projected Adam descent on the control box; returns the best iterate seen."""
    u = np.clip(u0, -1.0, 1.0)
    j, g = obj_grad(u)
    trace = [(0, j)]
    best_u, best_j, j_init = u.copy(), j, j
    m = np.zeros_like(u)
    v = np.zeros_like(u)
    b1, b2, eps = 0.9, 0.999, 1e-8
    for it in range(1, config.n_opt + 1):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        mh = m / (1.0 - b1**it)
        vh = v / (1.0 - b2**it)
        u = np.clip(u - config.step_size * mh / (np.sqrt(vh) + eps), -1.0, 1.0)
        j, g = obj_grad(u)
        trace.append((it, j))
        if j < best_j:
            best_j = j
            best_u = u.copy()
    ctx.last_initial_objective = j_init
    ctx.last_objective = best_j
    ctx.last_trace = trace
    return best_u


def _initial_plan(ctx, config: MpcConfig) -> np.ndarray:
    if config.warm_start and ctx.prev_plan is not None and len(ctx.prev_plan) == config.n_p:
        return np.append(ctx.prev_plan[1:], ctx.prev_plan[-1])
    return np.zeros(config.n_p)


def mpc_plan(model: FlowMapModel, ctx: MpcPlanContext, config: MpcConfig = MpcConfig()) -> np.ndarray:
    """Optimize the next n_p controls through the surrogate. No plant access."""
    w = window_length(config.window_t, model.dt)
    if len(ctx.history) != w:
        raise ValueError(f"context history holds {len(ctx.history)} samples, expected {w}")
    n_m = model.n_m
    if ctx.window.n_m != n_m:
        raise ValueError(f"context window memory {ctx.window.n_m} != model memory {n_m}")
    k = config.n_p
    norm = model.norm
    vwin = norm.norm_v(ctx.window.v_hist)[None]
    past_u = np.asarray(norm.norm_u(ctx.window.u_hist), dtype=np.float64)
    std_v = norm.std[:2]
    n_included = min(k, w)
    g_template = np.zeros((k, 2))
    g_template[k - n_included :, 0] = 1.0 / w

    def obj_grad(u: np.ndarray):
        ctrl = np.concatenate([past_u, np.asarray(norm.norm_u(u))])[None]
        preds_n, caches = _rollout_batch_cached(model.mlp, n_m, vwin, ctrl, k)
        preds = preds_n[0] * std_v + norm.mean[:2]
        cd_mean, cl_mean = _window_means(ctx.history, preds[None, :, 0], preds[None, :, 1], w)
        j = float(cd_mean[0] + config.omega_l * abs(cl_mean[0]))
        g_raw = g_template.copy()
        g_raw[k - n_included :, 1] = config.omega_l * np.sign(cl_mean[0]) / w
        _, gu = _backprop_rollout(model.mlp, n_m, caches, (g_raw * std_v)[None])
        return j, gu[0, n_m:] / norm.std[2]

    return _minimize_projected(obj_grad, _initial_plan(ctx, config), config, ctx)


def mpc_act(model: FlowMapModel, ctx: MpcPlanContext, config: MpcConfig = MpcConfig()) -> float:
    """Plan and return the first control; the plan is kept for warm starting."""
    plan = mpc_plan(model, ctx, config)
    ctx.prev_plan = plan
    return float(plan[0])


@dataclass
class OracleContext:
    """Plan context for the plant-as-model ceiling experiment."""

    state: PlantState
    history: np.ndarray
    dt: float
    prev_plan: np.ndarray | None = None
    last_initial_objective: float = math.nan
    last_objective: float = math.nan
    last_trace: list = field(default_factory=list)


def make_oracle_context(
    state: PlantState, v_hist: np.ndarray, window_t: float, dt: float
) -> OracleContext:
    w = window_length(window_t, dt)
    v = np.asarray(v_hist, dtype=np.float64)
    if len(v) < w:
        raise ValueError(f"history of {len(v)} samples cannot fill a {w}-sample cost window")
    return OracleContext(state=state, history=v[-w:].copy(), dt=dt)


def advance_oracle_context(ctx: OracleContext, state: PlantState, v_new) -> None:
    ctx.state = state
    ctx.history = np.vstack([ctx.history[1:], np.asarray(v_new, dtype=np.float64)])


def oracle_plan(
    params: PlantParams, ctx: OracleContext, config: MpcConfig = MpcConfig()
) -> np.ndarray:
    """Plan directly through the plant (controllability ceiling, not deployable)."""
    w = window_length(config.window_t, ctx.dt)
    k = config.n_p
    h = 1e-4

    def obj_grad(u: np.ndarray):
        batch = np.tile(u, (k + 1, 1))
        steps = np.empty(k)
        for j in range(k):
            hj = h if u[j] + h <= 1.0 else -h
            batch[j + 1, j] += hj
            steps[j] = hj
        cd, cl, _ = rollout_observations(params, ctx.state, batch, ctx.dt)
        js = terminal_objective(ctx.history, cd, cl, w, config.omega_l)
        return float(js[0]), (js[1:] - js[0]) / steps

    return _minimize_projected(obj_grad, _initial_plan(ctx, config), config, ctx)


def oracle_act(
    params: PlantParams, ctx: OracleContext, config: MpcConfig = MpcConfig()
) -> float:
    plan = oracle_plan(params, ctx, config)
    ctx.prev_plan = plan
    return float(plan[0])
