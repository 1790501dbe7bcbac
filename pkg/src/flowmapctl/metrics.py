"""Windowed cost metrics shared by the controllers and the harness."""

from __future__ import annotations

import numpy as np

#: Default trailing-average window (time units) and lift weight in the cost.
DEFAULT_WINDOW_T = 5.0
DEFAULT_OMEGA_L = 0.2


class GridError(ValueError):
    """Series defined on incompatible sample grids."""


def window_length(window_t: float, dt: float) -> int:
    """Number of samples in the trailing window; window_t/dt must be integral."""
    ratio = window_t / dt
    n = round(ratio)
    if n < 1 or abs(ratio - n) > 1e-9 * max(1.0, abs(ratio)):
        raise GridError(f"window {window_t} is not an integer multiple of the sample step {dt}")
    return n


def moving_average(series: np.ndarray, window_t: float, dt: float) -> np.ndarray:
    """Trailing moving average over window_t time units.

    Entry k averages the last min(k+1, window) samples, so early entries use
    the shorter history that exists; once the window is full, exactly the
    last window samples.
    """
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise GridError("series must be a nonempty 1-d array")
    w = window_length(window_t, dt)
    out = np.empty_like(x)
    for k in range(x.size):
        out[k] = np.mean(x[max(0, k - w + 1) : k + 1])
    return out


def cost_j(cd_window: np.ndarray, cl_window: np.ndarray, omega_l: float = DEFAULT_OMEGA_L) -> float:
    """Windowed cost: mean drag plus omega_l times |mean lift| over the window."""
    cd = np.asarray(cd_window, dtype=np.float64)
    cl = np.asarray(cl_window, dtype=np.float64)
    if cd.shape != cl.shape:
        raise GridError(f"drag and lift windows differ in shape: {cd.shape} vs {cl.shape}")
    return float(np.mean(cd) + omega_l * abs(np.mean(cl)))
