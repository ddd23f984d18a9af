"""Coordinated-turn trajectory simulation, dataset assembly, and CSV ingest.

The ground-truth model alternates left and right turns at a constant rate
drawn once per trajectory, with zero tangential acceleration, so speed is
conserved exactly.  Positions follow the exact circular arc between samples.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CsvFormatError, EmptyDatasetError
from .statespace import SensorConfig, Tracklet, measure, wrap_angle

TRUTH_HEADER = ["t", "x", "y", "vx", "vy"]
MEAS_HEADER = ["t", "range", "bearing"]


@dataclass(frozen=True)
class GctConfig:
    """Alternating coordinated-turn generator settings.

    turn_rate_bounds are in deg/s; a rate is drawn uniformly once per
    trajectory and applied as +rate for half_period steps, then -rate, and
    so on, starting with a left (counterclockwise) turn.
    """

    n_steps: int = 100
    dt: float = 1.0
    half_period: int = 10
    turn_rate_bounds: tuple = (10.0, 15.0)
    start_box: tuple = ((2000.0, 2100.0), (2000.0, 2100.0))
    speed: float = 10.0

    def __post_init__(self):
        if self.n_steps <= 0:
            raise ValueError("n_steps must be positive")
        if self.half_period <= 0:
            raise ValueError("half_period must be positive")
        if not self.turn_rate_bounds[0] < self.turn_rate_bounds[1]:
            raise ValueError("turn_rate_bounds must be an increasing pair")
        if self.speed <= 0.0:
            raise ValueError("speed must be positive")


@dataclass
class Dataset:
    """A bag of tracklets sharing one sensor and sampling interval."""

    tracklets: list = field(default_factory=list)
    sensor: SensorConfig = field(default_factory=SensorConfig)
    role: str = "train"

    def __len__(self) -> int:
        return len(self.tracklets)

    @property
    def dt(self) -> float:
        return self.tracklets[0].dt if self.tracklets else float("nan")


def _tracklet_rngs(seed: int, n: int):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def generate_gct(cfg: GctConfig, rng: np.random.Generator) -> Tracklet:
    """Simulate one ground-truth trajectory; measurements left empty (NaN).

    Draw order (fixed for reproducibility): start x, start y, initial
    heading, turn rate.
    """
    x0 = rng.uniform(*cfg.start_box[0])
    y0 = rng.uniform(*cfg.start_box[1])
    heading0 = rng.uniform(0.0, 2.0 * np.pi)
    rate = np.deg2rad(rng.uniform(*cfg.turn_rate_bounds))

    truth = np.empty((cfg.n_steps, 4))
    heading = heading0
    pos = np.array([x0, y0])
    for k in range(cfg.n_steps):
        truth[k, :2] = pos
        truth[k, 2] = cfg.speed * np.cos(heading)
        truth[k, 3] = cfg.speed * np.sin(heading)
        omega = rate if (k // cfg.half_period) % 2 == 0 else -rate
        next_heading = heading + omega * cfg.dt
        # exact arc: integral of speed * (cos, sin) over one step
        radius = cfg.speed / omega
        pos = pos + radius * np.array(
            [np.sin(next_heading) - np.sin(heading), np.cos(heading) - np.cos(next_heading)]
        )
        heading = next_heading
    meas = np.full((cfg.n_steps, 2), np.nan)
    return Tracklet(dt=cfg.dt, truth=truth, meas=meas)


def simulate_measurements(truth: Tracklet, sensor: SensorConfig, rng: np.random.Generator) -> Tracklet:
    """Attach noisy range-bearing returns to a truth trajectory."""
    if len(truth) == 0:
        raise ValueError("empty tracklet")
    n = len(truth)
    meas = np.empty((n, 2))
    for k in range(n):
        r, a = measure(truth.truth[k, :2], sensor)
        meas[k, 0] = r + sensor.sigma_r * rng.standard_normal()
        meas[k, 1] = wrap_angle(a + sensor.sigma_a * rng.standard_normal())
    meas[:, 0] = np.abs(meas[:, 0])  # range stays non-negative
    return Tracklet(dt=truth.dt, truth=truth.truth.copy(), meas=meas)


def make_dataset(n_tracklets: int, cfg: GctConfig, sensor: SensorConfig, seed: int,
                 role: str = "train") -> Dataset:
    """n independent GCT tracklets with measurements; pure function of (cfg, seed).

    Each tracklet draws from its own RNG stream spawned from (seed, index),
    so any subset can be regenerated independently.
    """
    tracklets = []
    for rng in _tracklet_rngs(seed, n_tracklets):
        truth = generate_gct(cfg, rng)
        tracklets.append(simulate_measurements(truth, sensor, rng))
    return Dataset(tracklets=tracklets, sensor=sensor, role=role)


def read_trajectory_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Read an interchange trajectory CSV (t,x,y,vx,vy); returns (t, states)."""
    path = Path(path)
    times, states = [], []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != TRUTH_HEADER:
            raise CsvFormatError(f"{path.name} line 1: expected header {','.join(TRUTH_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise CsvFormatError(f"{path.name} line {lineno}: expected 5 fields, got {len(row)}")
            try:
                values = [float(v) for v in row]
            except ValueError as exc:
                raise CsvFormatError(f"{path.name} line {lineno}: {exc}") from exc
            times.append(values[0])
            states.append(values[1:])
    return np.asarray(times), np.asarray(states)


def ingest_csv(traj_path, sensor: SensorConfig, tracklet_len: int,
               rng_seed: int, dt: float | None = None, role: str = "train") -> Dataset:
    """Split an external trajectory into tracklets and synthesize measurements.

    Consecutive non-overlapping windows of tracklet_len rows; the remainder
    is discarded.  dt defaults to the spacing of the first two time stamps.
    """
    times, states = read_trajectory_csv(traj_path)
    n = len(states)
    if n < tracklet_len:
        raise EmptyDatasetError(
            f"{Path(traj_path).name}: {n} rows < tracklet length {tracklet_len}"
        )
    if dt is None:
        dt = float(times[1] - times[0]) if n > 1 else 1.0
    n_tracklets = n // tracklet_len
    tracklets = []
    rngs = _tracklet_rngs(rng_seed, n_tracklets)
    for i in range(n_tracklets):
        chunk = states[i * tracklet_len : (i + 1) * tracklet_len]
        truth = Tracklet(dt=dt, truth=chunk, meas=np.full((tracklet_len, 2), np.nan))
        tracklets.append(simulate_measurements(truth, sensor, rngs[i]))
    return Dataset(tracklets=tracklets, sensor=sensor, role=role)


def write_tracklet(directory, index: int, tracklet: Tracklet) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with (directory / f"truth_{index:04d}.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRUTH_HEADER)
        for t, row in enumerate(tracklet.truth):
            writer.writerow([t] + [f"{v:.17g}" for v in row])
    with (directory / f"meas_{index:04d}.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MEAS_HEADER)
        for t, row in enumerate(tracklet.meas):
            writer.writerow([t] + [f"{v:.17g}" for v in row])


def read_tracklet(directory, index: int, dt: float) -> Tracklet:
    directory = Path(directory)
    _, states = read_trajectory_csv(directory / f"truth_{index:04d}.csv")
    meas_path = directory / f"meas_{index:04d}.csv"
    meas = []
    with meas_path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != MEAS_HEADER:
            raise CsvFormatError(f"{meas_path.name} line 1: expected header {','.join(MEAS_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                meas.append([float(row[1]), float(row[2])])
            except (IndexError, ValueError) as exc:
                raise CsvFormatError(f"{meas_path.name} line {lineno}: {exc}") from exc
    return Tracklet(dt=dt, truth=states, meas=np.asarray(meas))


def save_dataset(directory, dataset: Dataset) -> None:
    for i, trk in enumerate(dataset.tracklets):
        write_tracklet(directory, i, trk)


def load_dataset(directory, sensor: SensorConfig, dt: float, role: str = "train") -> Dataset:
    directory = Path(directory)
    paths = sorted(directory.glob("truth_*.csv"))
    if not paths:
        raise EmptyDatasetError(f"no truth_*.csv files under {directory}")
    tracklets = [read_tracklet(directory, i, dt) for i in range(len(paths))]
    return Dataset(tracklets=tracklets, sensor=sensor, role=role)
