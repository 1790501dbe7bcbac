"""Memory-based flow-map surrogate for the drag/lift response to control.

The surrogate advances the pair (c_d, c_l) one sample step from the last
n_m + 1 observations and the matching controls. Inputs are standardized
per channel with statistics taken from the training data and stored with
the model, and the network input vector uses a fixed ordering: newest
first, observation block then control block.

Training minimizes a recurrent multi-step loss: from a recorded window
the model marches n_r steps on its own predictions, and the mean squared
error against the recorded continuation (in normalized units) is
backpropagated through the fed-back predictions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import Dataset, TrainingSegment
from .mlp import Adam, DimensionError, Mlp
from .plant import ControlBoundError, QoiSample

MODEL_FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    """Model file malformed or inconsistent with the dimension law."""


class TrainingDiverged(RuntimeError):
    """Loss became non-finite during training."""


def input_width(n_m: int) -> int:
    """Network input width for memory length n_m: one (c_d, c_l, u) triple per step."""
    return 3 * (n_m + 1)


@dataclass(frozen=True)
class Normalization:
    """Per-channel standardization for (c_d, c_l, u)."""

    mean: np.ndarray
    std: np.ndarray

    def norm_v(self, v: np.ndarray) -> np.ndarray:
        return (np.asarray(v, dtype=np.float64) - self.mean[:2]) / self.std[:2]

    def denorm_v(self, v: np.ndarray) -> np.ndarray:
        return np.asarray(v, dtype=np.float64) * self.std[:2] + self.mean[:2]

    def norm_u(self, u: np.ndarray | float) -> np.ndarray | float:
        return (u - self.mean[2]) / self.std[2]


def normalization_from_dataset(dataset: Dataset) -> Normalization:
    v = np.concatenate([t.v for t in dataset.trajectories], axis=0)
    u = np.concatenate([t.u for t in dataset.trajectories])
    mean = np.array([v[:, 0].mean(), v[:, 1].mean(), u.mean()])
    std = np.array([v[:, 0].std(), v[:, 1].std(), u.std()])
    std = np.maximum(std, 1e-12)
    return Normalization(mean=mean, std=std)


@dataclass(frozen=True)
class MemoryWindow:
    """The surrogate/controller state: recent observations and controls.

    v_hist has shape (n_m + 1, 2) and u_hist shape (n_m,), both ordered
    oldest to newest; u_hist[k] is the control that produced the step
    from v_hist[k] to v_hist[k + 1].
    """

    v_hist: np.ndarray
    u_hist: np.ndarray

    @property
    def n_m(self) -> int:
        return len(self.u_hist)


def window_from_history(v_hist: np.ndarray, u_hist: np.ndarray) -> MemoryWindow:
    v = np.array(v_hist, dtype=np.float64)
    u = np.array(u_hist, dtype=np.float64)
    if v.ndim != 2 or v.shape[1] != 2 or u.ndim != 1 or len(v) != len(u) + 1:
        raise DimensionError(
            f"window needs (n_m+1, 2) observations and n_m controls, got {v.shape} and {u.shape}"
        )
    if u.size and np.max(np.abs(u)) > 1.0:
        raise ControlBoundError("window controls leave [-1, 1]")
    return MemoryWindow(v_hist=v, u_hist=u)


def window_from_trajectory(traj, n_m: int, end: int) -> MemoryWindow:
    """Window whose newest observation is trajectory sample `end`."""
    if end < n_m or end > traj.n_step:
        raise DimensionError(f"sample {end} cannot anchor a window with memory {n_m}")
    return window_from_history(traj.v[end - n_m : end + 1], traj.u[end - n_m : end])


def advance_window(window: MemoryWindow, v_new, u_used: float) -> MemoryWindow:
    """Drop the oldest entries, append the new observation and the control used."""
    if abs(u_used) > 1.0:
        raise ControlBoundError(f"control must lie in [-1, 1], got {u_used!r}")
    v = np.vstack([window.v_hist, np.asarray(v_new, dtype=np.float64)])[1:]
    u = np.append(window.u_hist, u_used)[1:]
    return MemoryWindow(v_hist=v, u_hist=u)


@dataclass
class FlowMapModel:
    """Trained surrogate: network, memory length, sample step, input scaling."""

    mlp: Mlp
    n_m: int
    dt: float
    norm: Normalization

    def __post_init__(self):
        if self.mlp.n_in != input_width(self.n_m) or self.mlp.n_out != 2:
            raise ModelFormatError(
                f"network maps {self.mlp.n_in} -> {self.mlp.n_out}, expected "
                f"{input_width(self.n_m)} -> 2 for memory {self.n_m}"
            )


def _input_vector(model: FlowMapModel, window: MemoryWindow, u_n: float) -> np.ndarray:
    """Normalized [V_n..V_{n-n_m}, u_n..u_{n-n_m}] vector (newest first)."""
    v_n = model.norm.norm_v(window.v_hist)[::-1].ravel()
    u_all = np.append(window.u_hist, u_n)[::-1]
    return np.concatenate([v_n, model.norm.norm_u(u_all)])


def flowmap_step(model: FlowMapModel, window: MemoryWindow, u_n: float) -> QoiSample:
    """Predict the next observation under control u_n. Pure function."""
    if window.n_m != model.n_m:
        raise DimensionError(f"window memory {window.n_m} != model memory {model.n_m}")
    if abs(u_n) > 1.0:
        raise ControlBoundError(f"control must lie in [-1, 1], got {u_n!r}")
    y = model.mlp.forward(_input_vector(model, window, u_n))
    v = model.norm.denorm_v(y)
    return QoiSample(c_d=float(v[0]), c_l=float(v[1]))


def rollout(model: FlowMapModel, window: MemoryWindow, controls) -> list[QoiSample]:
    """March the surrogate, feeding each prediction back into the window."""
    out = []
    for u_n in np.asarray(controls, dtype=np.float64):
        v = flowmap_step(model, window, float(u_n))
        window = advance_window(window, v, float(u_n))
        out.append(v)
    return out


def multistep_loss(model: FlowMapModel, segment: TrainingSegment) -> float:
    """Mean squared multi-step error of the segment, in normalized units."""
    n_m = model.n_m
    if segment.v_window.shape != (n_m + 1, 2):
        raise DimensionError(
            f"segment window {segment.v_window.shape} incompatible with memory {n_m}"
        )
    n_r = len(segment.targets)
    if len(segment.controls) != n_m + n_r:
        raise DimensionError(
            f"segment has {len(segment.controls)} controls, expected {n_m + n_r}"
        )
    win = model.norm.norm_v(segment.v_window)
    ctrl = np.asarray(model.norm.norm_u(segment.controls), dtype=np.float64)
    targ = model.norm.norm_v(segment.targets)
    loss = 0.0
    for k in range(n_r):
        x = np.concatenate([win[::-1].ravel(), ctrl[k : k + n_m + 1][::-1]])
        y = model.mlp.forward(x)
        loss += float(np.sum((y - targ[k]) ** 2))
        win = np.vstack([win[1:], y])
    return loss / n_r


@dataclass(frozen=True)
class TrainConfig:
    n_r: int = 3
    epochs: int = 20000
    batch_size: int = 1024
    lr: float = 5e-4
    lr_decay: float = 0.9999
    n_b: int = 6
    seed: int = 0


def _rollout_batch_cached(mlp: Mlp, n_m: int, vwin: np.ndarray, ctrl: np.ndarray, n_r: int):
    """Normalized batched rollout; returns predictions (B, n_r, 2) and caches."""
    b = vwin.shape[0]
    win = vwin.copy()
    preds = np.empty((b, n_r, 2))
    caches = []
    for k in range(n_r):
        x = np.concatenate(
            [win[:, ::-1, :].reshape(b, -1), ctrl[:, k : k + n_m + 1][:, ::-1]], axis=1
        )
        y, cache = mlp.forward_cached(x)
        preds[:, k, :] = y
        caches.append(cache)
        win = np.concatenate([win[:, 1:, :], y[:, None, :]], axis=1)
    return preds, caches


def _backprop_rollout(
    mlp: Mlp, n_m: int, caches: list, g_preds: np.ndarray
) -> tuple[list[np.ndarray], np.ndarray]:
    """Reverse accumulation through the fed-back rollout.

    g_preds is (B, n_r, 2), the loss gradient on each prediction. Returns
    parameter grads (summed over steps) plus the gradient with respect to
    each normalized control slot (B, n_m + n_r).
    """
    b, n_r, _ = g_preds.shape
    nv = 2 * (n_m + 1)
    param_grads = [np.zeros_like(p) for p in mlp.params()]
    ctrl_grads = np.zeros((b, n_m + n_r))
    pending = [np.zeros((b, 2)) for _ in range(n_r)]
    for k in range(n_r - 1, -1, -1):
        g = g_preds[:, k, :] + pending[k]
        grads, g_in = mlp.backward(caches[k], g)
        for acc, gk in zip(param_grads, grads):
            acc += gk
        g_v = g_in[:, :nv].reshape(b, n_m + 1, 2)  # newest first
        g_u = g_in[:, nv:]  # newest first: slot s is u_{n_m + k - s}
        for s in range(n_m + 1):
            j = k - 1 - s  # prediction index feeding slot s of step k
            if 0 <= j < n_r:
                pending[j] += g_v[:, s, :]
            ctrl_grads[:, n_m + k - s] += g_u[:, s]
    return param_grads, ctrl_grads


def train_flowmap(
    dataset: Dataset, n_m: int, hidden: list[int], config: TrainConfig
) -> tuple[FlowMapModel, np.ndarray]:
    """Train the surrogate on the dataset; returns (model, per-update loss curve).

    Each epoch draws config.n_b fresh segment starts per trajectory,
    shuffles them, and consumes minibatches of config.batch_size (one
    optimizer update each; a trailing remainder is dropped). Deterministic
    for a fixed seed.
    """
    n_l = n_m + 1 + config.n_r
    if dataset.n_step < n_l:
        raise DimensionError(
            f"dataset trajectories of {dataset.n_step} steps are shorter than n_m+1+n_r = {n_l}"
        )
    norm = normalization_from_dataset(dataset)
    v_all = np.stack([norm.norm_v(t.v) for t in dataset.trajectories])
    u_all = np.stack([norm.norm_u(t.u) for t in dataset.trajectories])
    n_sim, n_step = u_all.shape

    rng = np.random.default_rng(config.seed)
    mlp = Mlp.init([input_width(n_m)] + list(hidden) + [2], rng)
    opt = Adam(mlp.params(), lr=config.lr, lr_decay=config.lr_decay)

    total = n_sim * config.n_b
    n_batches = max(1, total // config.batch_size)
    traj_idx_base = np.repeat(np.arange(n_sim), config.n_b)
    win_off = np.arange(n_m + 1)
    ctrl_off = np.arange(n_m + config.n_r)
    targ_off = n_m + 1 + np.arange(config.n_r)

    losses = []
    for _ in range(config.epochs):
        n0 = rng.integers(0, n_step - n_l + 1, size=total)
        perm = rng.permutation(total)
        for ib in range(n_batches):
            sel = perm[ib * config.batch_size : (ib + 1) * config.batch_size]
            ti = traj_idx_base[sel]
            s0 = n0[sel]
            vwin = v_all[ti[:, None], s0[:, None] + win_off]
            ctrl = u_all[ti[:, None], s0[:, None] + ctrl_off]
            targ = v_all[ti[:, None], s0[:, None] + targ_off]
            b = len(sel)

            preds, caches = _rollout_batch_cached(mlp, n_m, vwin, ctrl, config.n_r)
            err = preds - targ
            loss = float(np.sum(err * err)) / (config.n_r * b)
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"loss became {loss} at update {opt.t}; lower the learning rate"
                )
            losses.append(loss)
            grads, _ = _backprop_rollout(mlp, n_m, caches, (2.0 / (config.n_r * b)) * err)
            opt.step(mlp.params(), grads)

    model = FlowMapModel(mlp=mlp, n_m=n_m, dt=dataset.dt, norm=norm)
    return model, np.asarray(losses)


def save_model(model: FlowMapModel, path: str | Path) -> None:
    payload = {
        "format_version": MODEL_FORMAT_VERSION,
        "n_M": model.n_m,
        "dt": model.dt,
        "widths": model.mlp.widths,
        "activation": "tanh",
        "norm": {"mean": list(map(float, model.norm.mean)), "std": list(map(float, model.norm.std))},
        "layers": [
            {"W": [float(x) for x in w.ravel()], "b": [float(x) for x in b]}
            for w, b in zip(model.mlp.weights, model.mlp.biases)
        ],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_model(path: str | Path) -> FlowMapModel:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format_version") != MODEL_FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format version {payload.get('format_version')!r}")
    if payload.get("activation") != "tanh":
        raise ModelFormatError(f"unsupported activation {payload.get('activation')!r}")
    n_m = payload["n_M"]
    widths = payload["widths"]
    if widths[0] != input_width(n_m) or widths[-1] != 2:
        raise ModelFormatError(
            f"file declares widths {widths[0]} -> {widths[-1]}, expected "
            f"{input_width(n_m)} -> 2 for memory {n_m}"
        )
    mean = np.array(payload["norm"]["mean"], dtype=np.float64)
    std = np.array(payload["norm"]["std"], dtype=np.float64)
    if mean.shape != (3,) or std.shape != (3,) or np.any(std <= 0.0):
        raise ModelFormatError("normalization must provide 3 positive-scale channels")
    weights, biases = [], []
    for i, layer in enumerate(payload["layers"]):
        w = np.array(layer["W"], dtype=np.float64)
        if w.size != widths[i + 1] * widths[i]:
            raise ModelFormatError(f"layer {i}: {w.size} weights for {widths[i]}x{widths[i+1]}")
        weights.append(w.reshape(widths[i + 1], widths[i]))
        biases.append(np.array(layer["b"], dtype=np.float64))
    try:
        mlp = Mlp(widths, weights, biases)
    except DimensionError as exc:
        raise ModelFormatError(str(exc)) from exc
    return FlowMapModel(mlp=mlp, n_m=n_m, dt=payload["dt"], norm=Normalization(mean=mean, std=std))
