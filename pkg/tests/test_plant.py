"""Plant contract tests, checked against an independent scipy integrator."""

import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from flowmapctl import plant
from flowmapctl.plant import (
    ConfigError,
    ControlBoundError,
    HistoryError,
    PlantState,
    RegimeError,
    make_plant,
    observe,
    plant_step,
    rollout_observations,
    spinup,
)

TWO_PI = 2.0 * math.pi


def reference_solution(r, u, t_eval, y0=(0.1, 0.0)):
    """Independent oracle: scipy adaptive RK at tight tolerance, constant u."""
    omega = TWO_PI * (0.15 + 2e-4 * r)
    eps = 0.2 + r / 1000.0

    def rhs(_t, y):
        q, p = y
        return [p, eps * omega * (1.0 - q * q) * p - omega * omega * q + 0.4 * omega * omega * u]

    sol = solve_ivp(
        rhs, (0.0, t_eval[-1]), list(y0), t_eval=t_eval, rtol=1e-11, atol=1e-13, max_step=0.05
    )
    return sol.y[0], sol.y[1]


def march(params, state, u, n_steps, dt=0.1):
    for _ in range(n_steps):
        state = plant_step(params, state, u, dt)
    return state


def test_make_plant_regime_formulas():
    p300 = make_plant(300.0)
    assert abs(p300.omega - TWO_PI * 0.21) < 1e-12
    assert abs(1.0 / (p300.omega / TWO_PI) - 4.7619) < 1e-3  # shedding period
    p100 = make_plant(100.0)
    assert abs(p100.eps - 0.3) < 1e-12
    assert p300.c0 == 1.0 and p300.c2 == 0.15 and p300.kappa_l == 0.6 and p300.b == 0.4
    assert p300.delta_t_internal == 0.002


@pytest.mark.parametrize("bad", [0.0, -10.0, float("nan"), float("inf")])
def test_make_plant_rejects_bad_regime(bad):
    with pytest.raises(RegimeError):
        make_plant(bad)


def test_observe_direct_substitution():
    p = make_plant(300.0)
    assert observe(p, PlantState(0.0, 0.3, 1.0)) == (1.0, 0.0)
    c_d, c_l = observe(p, PlantState(2.0, 0.0, 0.0))
    assert abs(c_d - 1.6) < 1e-15 and abs(c_l - 1.2) < 1e-15


def test_equilibrium_is_exact_fixed_point():
    p = make_plant(300.0)
    s = PlantState(0.0, 0.0, 0.0)
    for _ in range(100):
        s = plant_step(p, s, 0.0, 0.1)
    assert s.q == 0.0 and s.p == 0.0
    assert abs(s.t - 10.0) < 1e-9


def test_step_is_deterministic():
    p = make_plant(237.0)
    a = march(p, PlantState(0.1, 0.0, 0.0), 0.37, 500)
    b = march(p, PlantState(0.1, 0.0, 0.0), 0.37, 500)
    assert a == b


def test_control_bound_enforced():
    p = make_plant(300.0)
    with pytest.raises(ControlBoundError):
        plant_step(p, PlantState(0.0, 0.0, 0.0), 1.0001, 0.1)
    with pytest.raises(ControlBoundError):
        rollout_observations(p, PlantState(0.0, 0.0, 0.0), np.array([[0.0, -1.2]]), 0.1)


def test_non_integral_substep_rejected():
    p = make_plant(300.0, delta_t_internal=0.003)
    with pytest.raises(ConfigError):
        plant_step(p, PlantState(0.0, 0.0, 0.0), 0.0, 0.1)


def test_matches_reference_integrator():
    # Pointwise agreement with the scipy oracle under constant control.
    p = make_plant(300.0)
    s = march(p, PlantState(0.1, 0.0, 0.0), 0.5, 100)
    q_ref, p_ref = reference_solution(300.0, 0.5, np.array([0.0, 10.0]))
    assert abs(s.q - q_ref[-1]) < 1e-7
    assert abs(s.p - p_ref[-1]) < 1e-6


def test_substep_halving_converges():
    # Halving the internal substep moves the state at t=10 by less than 1e-6.
    coarse = make_plant(300.0)
    fine = make_plant(300.0, delta_t_internal=0.001)
    a = march(coarse, PlantState(0.1, 0.0, 0.0), 0.5, 100)
    b = march(fine, PlantState(0.1, 0.0, 0.0), 0.5, 100)
    assert abs(a.q - b.q) < 1e-6
    assert abs(a.p - b.p) < 1e-6


def test_limit_cycle_amplitude_and_mean_drag():
    # Developed state at r=300: |q| peaks near 2, so mean c_d is near 1.30.
    p = make_plant(300.0)
    state, _, _ = spinup(p)
    u = np.zeros((1, 2000))
    c_d, c_l, _ = rollout_observations(p, state, u, 0.1)
    q = c_l[0] / p.kappa_l
    assert abs(np.max(np.abs(q)) - 2.0) < 0.1
    assert abs(np.mean(c_d) - 1.30) < 0.01


def test_odd_symmetry_of_dynamics():
    # u(t) from (0.1, 0) and -u(t) from (-0.1, 0) give exactly negated q.
    p = make_plant(250.0)
    rng = np.random.default_rng(7)
    u = rng.uniform(-1.0, 1.0, 200)
    s_pos = PlantState(0.1, 0.0, 0.0)
    s_neg = PlantState(-0.1, 0.0, 0.0)
    for uk in u:
        s_pos = plant_step(p, s_pos, uk, 0.1)
        s_neg = plant_step(p, s_neg, -uk, 0.1)
        assert s_neg.q == -s_pos.q and s_neg.p == -s_pos.p


@pytest.mark.parametrize("r", [100.0, 1000.0])
def test_bounded_response(r):
    # |q| stays below 5 under any bounded control over t in [0, 500].
    p = make_plant(r)
    rng = np.random.default_rng(int(r))
    u = rng.uniform(-1.0, 1.0, (1, 5000))
    _, c_l, _ = rollout_observations(p, PlantState(0.1, 0.0, 0.0), u, 0.1)
    assert np.max(np.abs(c_l[0] / p.kappa_l)) < 5.0


def test_constant_control_shifts_center():
    # Long-run mean lift under u = 0.5 is bounded away from zero, same sign as b*u.
    p = make_plant(300.0)
    state, _, _ = spinup(p)
    u = np.full((1, 2000), 0.5)
    _, c_l, _ = rollout_observations(p, state, u, 0.1)
    assert np.mean(c_l[0]) > 0.05


def test_spinup_bookkeeping():
    p = make_plant(300.0)
    state, hist, controls = spinup(p, t_spin=100.0, h0=60, dt=0.1)
    assert abs(state.t - 100.0) < 1e-9
    assert len(hist) == 60 and len(controls) == 60
    assert abs(len(hist) * 0.1 - 6.0) < 1e-12  # spans 6.0 time units
    assert all(u == 0.0 for u in controls)
    peak = max(abs(s.c_l) for s in hist)
    assert abs(peak - 1.2) < 0.1
    # the recorded tail matches re-running the same steps
    c_d, c_l, _ = rollout_observations(p, PlantState(0.1, 0.0, 0.0), np.zeros((1, 1000)), 0.1)
    assert hist[-1].c_d == c_d[0, -1] and hist[0].c_l == c_l[0, -60]


def test_spinup_too_short_rejected():
    p = make_plant(300.0)
    with pytest.raises(HistoryError):
        spinup(p, t_spin=5.0, h0=60, dt=0.1)


def test_advance_call_counter():
    p = make_plant(300.0)
    plant.reset_advance_call_count()
    s = plant_step(p, PlantState(0.0, 0.0, 0.0), 0.0, 0.1)
    plant_step(p, s, 0.0, 0.1)
    rollout_observations(p, s, np.zeros((3, 7)), 0.1)
    assert plant.advance_call_count() == 2 + 21
    plant.reset_advance_call_count()
    assert plant.advance_call_count() == 0
