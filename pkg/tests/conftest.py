"""Shared fixtures: small experiment configs and a synthetic GPS-like CSV."""

import numpy as np
import pytest


def write_config(path, **overrides):
    """Small GCT experiment INI; overrides are (section, key) -> value."""
    base = {
        ("dataset", "n_steps"): "40",
        ("dataset", "n_train"): "6",
        ("dataset", "n_test"): "4",
        ("sensor", "sigma_r"): "1.5",
        ("sensor", "sigma_a"): "0.00523",
        ("ekf", "q"): "0.08",
        ("gp", "max_pairs"): "200",
        ("gp", "n_particles"): "100",
        ("imm", "steps"): "5",
        ("imm", "lr"): "5e-3",
        ("mkf", "hidden"): "8",
        ("mkf", "dense"): "8",
        ("mkf", "iterations"): "5",
    }
    base.update(overrides)
    sections = {}
    for (section, key), value in base.items():
        sections.setdefault(section, {})[key] = value
    lines = []
    for section, opts in sections.items():
        lines.append(f"[{section}]")
        for key, value in opts.items():
            lines.append(f"{key} = {value}")
        lines.append("")
    path.write_text("\n".join(lines))
    return path


@pytest.fixture
def tiny_config(tmp_path):
    return write_config(tmp_path / "exp.ini")


def synthesize_gps_csv(path, n_rows=4300, dt=0.1, speed=8.0, seed=99):
    """CV legs alternating with coordinated turns, GPS-like sampling.

    Returns the path; CSV is in the t,x,y,vx,vy interchange format.
    """
    rng = np.random.default_rng(seed)
    pos = np.array([0.0, 0.0])
    heading = rng.uniform(0, 2 * np.pi)
    rows = []
    t = 0
    while len(rows) < n_rows:
        straight = rng.integers(100, 300)
        for _ in range(straight):
            vel = speed * np.array([np.cos(heading), np.sin(heading)])
            rows.append((t * dt, pos[0], pos[1], vel[0], vel[1]))
            pos = pos + vel * dt
            t += 1
            if len(rows) >= n_rows:
                break
        if len(rows) >= n_rows:
            break
        turn_steps = rng.integers(50, 150)
        omega = rng.choice([-1.0, 1.0]) * rng.uniform(np.deg2rad(5), np.deg2rad(15))
        for _ in range(turn_steps):
            vel = speed * np.array([np.cos(heading), np.sin(heading)])
            rows.append((t * dt, pos[0], pos[1], vel[0], vel[1]))
            next_heading = heading + omega * dt
            pos = pos + (speed / omega) * np.array(
                [np.sin(next_heading) - np.sin(heading),
                 np.cos(heading) - np.cos(next_heading)]
            )
            heading = next_heading
            t += 1
            if len(rows) >= n_rows:
                break
    with open(path, "w") as fh:
        fh.write("t,x,y,vx,vy\n")
        for row in rows[:n_rows]:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
    return path


@pytest.fixture
def gps_csv(tmp_path):
    return synthesize_gps_csv(tmp_path / "gps.csv")
