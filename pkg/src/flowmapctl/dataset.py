"""Randomized-excitation trajectories: generation, persistence, segment sampling.

A trajectory records the drag/lift response of the plant to a piecewise
constant random control signal, starting from the developed uncontrolled
state. Datasets are immutable once generated; every trajectory's seed is
derived from the master seed by its index, so generation order (or a
parallel fan-out) cannot change the result.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .plant import PlantParams, PlantState, make_plant, rollout_observations, spinup

FORMAT_VERSION = 1

#: Sampling grid used throughout: one control value per 0.1 time units.
DEFAULT_DT = 0.1
DEFAULT_T_SPIN = 100.0
DEFAULT_H0 = 60


class SegmentError(ValueError):
    """Trajectory too short for the requested training segment."""


class DatasetFormatError(ValueError):
    """On-disk dataset malformed or violating invariants."""


@dataclass(frozen=True)
class ExcitationSignal:
    """Piecewise constant i.i.d. uniform controls, one per sample step."""

    values: np.ndarray
    seed: int


@dataclass(frozen=True)
class Trajectory:
    """One excitation-response history.

    v has shape (n_step + 1, 2) holding (c_d, c_l) rows; u has shape (n_step,)
    where u[k] acted over the step from v[k] to v[k+1]. The regime is kept
    for provenance and reporting only; models never see it.
    """

    regime: float
    v: np.ndarray
    u: np.ndarray
    dt: float

    @property
    def n_step(self) -> int:
        return len(self.u)


@dataclass(frozen=True)
class DatasetConfig:
    n_sim: int = 200
    t_sim: float = 100.0
    dt: float = DEFAULT_DT
    regime_mode: str = "fixed"  # "fixed" or "uniform"
    regime: float = 300.0
    regime_low: float = 100.0
    regime_high: float = 500.0
    master_seed: int = 0
    t_spin: float = DEFAULT_T_SPIN


@dataclass
class Dataset:
    trajectories: list[Trajectory]
    dt: float
    t_sim: float
    regime_mode: str
    master_seed: int

    @property
    def n_sim(self) -> int:
        return len(self.trajectories)

    @property
    def n_step(self) -> int:
        return self.trajectories[0].n_step


@dataclass(frozen=True)
class TrainingSegment:
    """Slice of a trajectory for one recurrent-loss evaluation.

    v_window: (n_m + 1, 2) initial observations; controls: (n_m + n_r,)
    covering the window and the marched steps; targets: (n_r, 2).
    """

    v_window: np.ndarray
    controls: np.ndarray
    targets: np.ndarray


def random_excitation(n_step: int, seed: int) -> ExcitationSignal:
    """i.i.d. uniform controls on [-1, 1], reproducible from the seed."""
    if n_step < 1:
        raise ValueError(f"n_step must be at least 1, got {n_step}")
    rng = np.random.default_rng(seed)
    return ExcitationSignal(values=rng.uniform(-1.0, 1.0, n_step), seed=seed)


def generate_trajectory(
    params: PlantParams,
    signal: ExcitationSignal,
    t_sim: float,
    dt: float = DEFAULT_DT,
    t_spin: float = DEFAULT_T_SPIN,
) -> Trajectory:
    """Spin up, then record the response to the excitation signal.

    v[0] is the observation at the end of spinup and v[k+1] the observation
    after applying signal.values[k] for one sample step.
    """
    n_step = int(round(t_sim / dt))
    if abs(t_sim / dt - n_step) > 1e-9:
        raise ValueError(f"t_sim {t_sim} is not an integer multiple of dt {dt}")
    if len(signal.values) != n_step:
        raise ValueError(f"signal length {len(signal.values)} != t_sim/dt = {n_step}")
    state, hist, _ = spinup(params, t_spin=t_spin, h0=1, dt=dt)
    c_d, c_l, _ = rollout_observations(params, state, signal.values[None, :], dt)
    v = np.empty((n_step + 1, 2))
    v[0] = (hist[-1].c_d, hist[-1].c_l)
    v[1:, 0] = c_d[0]
    v[1:, 1] = c_l[0]
    return Trajectory(regime=params.r, v=v, u=signal.values.copy(), dt=dt)


def _trajectory_seed(master_seed: int, index: int) -> int:
    """Per-trajectory excitation seed, a pure function of (master, index)."""
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(index, 0))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _trajectory_regime(config: DatasetConfig, index: int) -> float:
    if config.regime_mode == "fixed":
        return config.regime
    if config.regime_mode == "uniform":
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=config.master_seed, spawn_key=(index, 1))
        )
        return float(rng.uniform(config.regime_low, config.regime_high))
    raise ValueError(f"unknown regime mode {config.regime_mode!r}")


def generate_dataset(config: DatasetConfig) -> Dataset:
    """Generate n_sim independent trajectories under the configured regime mode."""
    n_step = int(round(config.t_sim / config.dt))
    trajectories = []
    for j in range(config.n_sim):
        r = _trajectory_regime(config, j)
        params = make_plant(r)
        signal = random_excitation(n_step, _trajectory_seed(config.master_seed, j))
        trajectories.append(
            generate_trajectory(params, signal, config.t_sim, config.dt, config.t_spin)
        )
    return Dataset(
        trajectories=trajectories,
        dt=config.dt,
        t_sim=config.t_sim,
        regime_mode=config.regime_mode,
        master_seed=config.master_seed,
    )


def sample_segment(
    trajectory: Trajectory, n_m: int, n_r: int, rng: np.random.Generator
) -> TrainingSegment:
    """Draw one training segment with a uniformly random start index."""
    n_l = n_m + 1 + n_r
    if trajectory.n_step < n_l:
        raise SegmentError(
            f"trajectory with {trajectory.n_step} steps is shorter than the "
            f"segment length n_m+1+n_r = {n_l}"
        )
    n0 = int(rng.integers(0, trajectory.n_step - n_l + 1))
    return TrainingSegment(
        v_window=trajectory.v[n0 : n0 + n_m + 1].copy(),
        controls=trajectory.u[n0 : n0 + n_m + n_r].copy(),
        targets=trajectory.v[n0 + n_m + 1 : n0 + n_l].copy(),
    )


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_dataset(dataset: Dataset, path: str | Path) -> None:
    """Write manifest.json plus one CSV per trajectory under path."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format_version": FORMAT_VERSION,
        "dt": dataset.dt,
        "t_sim": dataset.t_sim,
        "n_step": dataset.n_step,
        "n_sim": dataset.n_sim,
        "regime_mode": dataset.regime_mode,
        "master_seed": dataset.master_seed,
        "regimes": [t.regime for t in dataset.trajectories],
    }
    with open(root / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    for j, traj in enumerate(dataset.trajectories):
        lines = ["step,t,c_d,c_l,u"]
        for k in range(traj.n_step + 1):
            u_field = _fmt(traj.u[k]) if k < traj.n_step else ""
            lines.append(
                f"{k},{_fmt(k * traj.dt)},{_fmt(traj.v[k, 0])},{_fmt(traj.v[k, 1])},{u_field}"
            )
        (root / f"traj_{j:05d}.csv").write_text("\n".join(lines) + "\n")


def read_dataset(path: str | Path) -> Dataset:
    """Read a dataset directory, enforcing the trajectory invariants."""
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise DatasetFormatError(f"missing manifest.json under {root}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise DatasetFormatError(
            f"unsupported dataset format version {manifest.get('format_version')!r}"
        )
    n_sim = manifest["n_sim"]
    n_step = manifest["n_step"]
    dt = manifest["dt"]
    regimes = manifest["regimes"]
    if len(regimes) != n_sim:
        raise DatasetFormatError(f"manifest lists {len(regimes)} regimes for n_sim={n_sim}")
    trajectories = []
    for j in range(n_sim):
        fpath = root / f"traj_{j:05d}.csv"
        if not fpath.exists():
            raise DatasetFormatError(f"missing trajectory file {fpath.name} (index {j})")
        v = np.empty((n_step + 1, 2))
        u = np.empty(n_step)
        with open(fpath) as fh:
            header = fh.readline().strip()
            if header != "step,t,c_d,c_l,u":
                raise DatasetFormatError(f"{fpath.name}: unexpected header {header!r}")
            k = -1
            for line_no, line in enumerate(fh, start=2):
                line = line.strip()
                if not line:
                    continue
                parts = line.split(",")
                if len(parts) != 5:
                    raise DatasetFormatError(
                        f"{fpath.name} (trajectory {j}), line {line_no}: expected 5 fields"
                    )
                try:
                    k = int(parts[0])
                    v[k, 0] = float(parts[2])
                    v[k, 1] = float(parts[3])
                    if parts[4] != "":
                        u[k] = float(parts[4])
                    elif k != n_step:
                        raise ValueError("control missing before the final row")
                except (ValueError, IndexError) as exc:
                    raise DatasetFormatError(
                        f"{fpath.name} (trajectory {j}), line {line_no}: {exc}"
                    ) from exc
            if k != n_step:
                raise DatasetFormatError(
                    f"{fpath.name} (trajectory {j}): truncated at row {k}, expected {n_step + 1} rows"
                )
        if np.max(np.abs(u)) > 1.0:
            raise DatasetFormatError(f"{fpath.name} (trajectory {j}): control outside [-1, 1]")
        if not np.all(np.isfinite(v)):
            raise DatasetFormatError(f"{fpath.name} (trajectory {j}): non-finite observation")
        trajectories.append(Trajectory(regime=regimes[j], v=v, u=u, dt=dt))
    return Dataset(
        trajectories=trajectories,
        dt=dt,
        t_sim=manifest["t_sim"],
        regime_mode=manifest["regime_mode"],
        master_seed=manifest["master_seed"],
    )
