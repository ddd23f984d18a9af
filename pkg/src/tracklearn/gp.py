"""Gaussian-process velocity model and the particle filter built on it.

Two independent GPs (one per Cartesian axis) map the previous velocity pair
to the next per-axis velocity.  A squared-exponential kernel is used; the
three hyperparameters are refined by log-marginal-likelihood ascent on the
autodiff tape.  Online, a sequential importance resampling filter draws
velocity particles from the GP posterior and weighs positions against the
range-bearing likelihood.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import cho_solve as _np_cho_solve
from scipy.linalg import solve_triangular
from scipy.spatial.distance import cdist

from . import autodiff as ad
from .autodiff import GradientOptimizer
from .errors import NumericsError, WeightCollapseError
from .statespace import (
    Measurement,
    SensorConfig,
    StateEstimate,
    measurement_noise_cartesian,
    polar_to_cartesian,
    wrap_angle,
)

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class GpHyper:
    sigma0_sq: float = 1.0  # signal variance
    length_sq: float = 1.0  # squared kernel length scale
    noise_sq: float = 0.01  # observation noise variance

    def __post_init__(self):
        if min(self.sigma0_sq, self.length_sq, self.noise_sq) <= 0.0:
            raise ValueError("GP hyperparameters must be positive")


def kernel(x, x_other, hyper: GpHyper) -> float:
    """Squared-exponential covariance between two input points."""
    diff = np.asarray(x, dtype=float) - np.asarray(x_other, dtype=float)
    return hyper.sigma0_sq * np.exp(-0.5 * float(diff @ diff) / hyper.length_sq)


def kernel_matrix(a: np.ndarray, b: np.ndarray, hyper: GpHyper) -> np.ndarray:
    sq = cdist(a, b, "sqeuclidean")
    return hyper.sigma0_sq * np.exp(-0.5 * sq / hyper.length_sq)


class GpModel:
    """One fitted per-axis GP: cached Cholesky factor and solve vector."""

    def __init__(self, inputs: np.ndarray, outputs: np.ndarray, hyper: GpHyper):
        self.inputs = np.asarray(inputs, dtype=float)
        self.outputs = np.asarray(outputs, dtype=float).reshape(-1)
        if self.inputs.ndim != 2 or self.inputs.shape[1] != 2:
            raise ValueError("GP inputs must be (N, 2) velocity pairs")
        if len(self.inputs) != len(self.outputs):
            raise ValueError("inputs and outputs must align")
        self.hyper = hyper
        gram = kernel_matrix(self.inputs, self.inputs, hyper)
        gram[np.diag_indices_from(gram)] += hyper.noise_sq
        try:
            self.chol = np.linalg.cholesky(gram)
        except np.linalg.LinAlgError as exc:
            raise NumericsError(
                "K + noise_sq*I is not positive definite; raise noise_sq "
                f"(jitter of {1e-8 * gram[0, 0]:.3g} would likely suffice): {exc}"
            ) from exc
        self.solve_vector = _np_cho_solve((self.chol, True), self.outputs)

    def __len__(self) -> int:
        return len(self.outputs)

    def predict(self, u) -> tuple[float, float]:
        mean, var = self.predict_batch(np.asarray(u, dtype=float).reshape(1, 2))
        return float(mean[0]), float(var[0])

    def predict_batch(self, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Zero-mean GP posterior at each query row; variance clipped to [0, k**]."""
        k_star = kernel_matrix(self.inputs, queries, self.hyper)  # (N, M)
        means = k_star.T @ self.solve_vector
        half = solve_triangular(self.chol, k_star, lower=True)
        variances = self.hyper.sigma0_sq - np.einsum("nm,nm->m", half, half)
        return means, np.clip(variances, 0.0, self.hyper.sigma0_sq)


def velocity_pairs(tracklets) -> tuple[np.ndarray, np.ndarray]:
    """Stack (previous velocity pair, next velocity) training rows from truth."""
    ins, outs = [], []
    for trk in tracklets:
        vel = trk.truth[:, 2:4]
        ins.append(vel[:-1])
        outs.append(vel[1:])
    return np.concatenate(ins), np.concatenate(outs)


def log_marginal_likelihood(inputs: np.ndarray, outputs: np.ndarray, hyper: GpHyper) -> float:
    gram = kernel_matrix(inputs, inputs, hyper)
    gram[np.diag_indices_from(gram)] += hyper.noise_sq
    low = np.linalg.cholesky(gram)
    alpha = _np_cho_solve((low, True), outputs)
    logdet = 2.0 * np.sum(np.log(np.diag(low)))
    return -0.5 * float(outputs @ alpha) - 0.5 * logdet - 0.5 * len(outputs) * LOG_2PI


def fit_hyper(inputs: np.ndarray, outputs: np.ndarray, hyper0: GpHyper,
              steps: int = 200, lr: float = 1e-2, max_points: int = 400,
              seed: int = 0) -> GpHyper:
    """Refine hyperparameters by LML ascent (Adam on the log-parameters).

    Falls back to hyper0 when the ascent fails to improve the objective or
    hits a numerical failure.
    """
    n = len(inputs)
    if n > max_points:
        keep = np.sort(np.random.default_rng(seed).choice(n, size=max_points, replace=False))
        inputs, outputs = inputs[keep], outputs[keep]
    sq = cdist(inputs, inputs, "sqeuclidean")
    y_col = outputs.reshape(-1, 1)
    n_pts = len(inputs)

    def negative_lml(rho: np.ndarray):
        tape = ad.make_tape()
        leaves = {"rho": ad.var(tape, rho.reshape(1, 3))}
        s0 = ad.exp(ad.item(leaves["rho"], 0, 0))
        l2 = ad.exp(ad.item(leaves["rho"], 0, 1))
        sv = ad.exp(ad.item(leaves["rho"], 0, 2))
        arg = ad.const(tape, -0.5 * sq) * (1.0 / l2)
        gram = s0 * ad.exp(arg) + ad.scale_template(sv, np.eye(n_pts))
        alpha = ad.cho_solve(gram, ad.const(tape, y_col))
        quad = ad.vsum(ad.const(tape, y_col) * alpha)
        loss = 0.5 * quad + 0.5 * ad.logdet(gram) + 0.5 * n_pts * LOG_2PI
        return loss, leaves

    rho = np.log([hyper0.sigma0_sq, hyper0.length_sq, hyper0.noise_sq])
    opt = GradientOptimizer(lr=lr, mode="adam")
    start_loss = None
    best_rho, best_loss = rho.copy(), np.inf
    try:
        for _ in range(steps):
            loss, leaves = negative_lml(rho)
            value = loss.scalar()
            if start_loss is None:
                start_loss = value
            if not np.isfinite(value):
                return hyper0
            if value < best_loss:
                best_loss, best_rho = value, rho.copy()
            ad.backward(loss)
            grads = {"rho": leaves["rho"].grad.reshape(-1)}
            rho = opt.step({"rho": rho}, grads)["rho"]
    except (NumericsError, ValueError):
        return hyper0
    if start_loss is None or best_loss >= start_loss:
        return hyper0
    s0, l2, sv = np.exp(best_rho)
    return GpHyper(sigma0_sq=float(s0), length_sq=float(l2), noise_sq=float(sv))


def gp_fit(tracklets, hyper0: GpHyper | None = None, max_pairs: int = 2000,
           optimize: bool = True, seed: int = 0) -> tuple[GpModel, GpModel]:
    """Fit the per-axis velocity GPs from training tracklets.

    Training pairs beyond max_pairs are subsampled uniformly (the cubic
    factorization cost is on the caller otherwise).
    """
    inputs, outputs = velocity_pairs(tracklets)
    if len(inputs) < 2:
        raise ValueError("need at least 2 training pairs")
    if len(inputs) > max_pairs:
        keep = np.sort(np.random.default_rng(seed).choice(len(inputs), size=max_pairs, replace=False))
        inputs, outputs = inputs[keep], outputs[keep]
    hyper0 = hyper0 or GpHyper()
    models = []
    for axis in range(2):
        hyper = (
            fit_hyper(inputs, outputs[:, axis], hyper0, seed=seed + axis)
            if optimize
            else hyper0
        )
        models.append(GpModel(inputs, outputs[:, axis], hyper))
    return models[0], models[1]


def gp_predict(models: tuple[GpModel, GpModel], u) -> tuple[np.ndarray, np.ndarray]:
    """Per-axis posterior (means, variances) at one velocity-pair input."""
    means, variances = zip(*(m.predict(u) for m in models))
    return np.array(means), np.array(variances)


# -- serialization (GPM1) ----------------------------------------------------


def save_gp(path, models: tuple[GpModel, GpModel], dt: float, sensor: SensorConfig) -> None:
    mx, my = models
    lines = ["GPM1"]
    lines.append(f"n_pairs {len(mx)}")
    lines.append(f"dt {dt:.17g}")
    lines.append(f"sensor {sensor.origin[0]:.17g} {sensor.origin[1]:.17g} "
                 f"{sensor.sigma_r:.17g} {sensor.sigma_a:.17g}")
    for tag, m in (("x", mx), ("y", my)):
        lines.append(f"hyper_{tag} {m.hyper.sigma0_sq:.17g} {m.hyper.length_sq:.17g} "
                     f"{m.hyper.noise_sq:.17g}")
    for row in mx.inputs:
        lines.append(f"u {row[0]:.17g} {row[1]:.17g}")
    for tag, m in (("x", mx), ("y", my)):
        for v, a in zip(m.outputs, m.solve_vector):
            lines.append(f"z_{tag} {v:.17g} {a:.17g}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_gp(path):
    """Returns (models, dt, sensor); the factorization is rebuilt on load."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != "GPM1":
        raise ValueError(f"{path}: not a GPM1 document")
    fields = {}
    inputs, z_x, z_y = [], [], []
    for line in lines[1:]:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "u":
            inputs.append([float(parts[1]), float(parts[2])])
        elif parts[0] == "z_x":
            z_x.append((float(parts[1]), float(parts[2])))
        elif parts[0] == "z_y":
            z_y.append((float(parts[1]), float(parts[2])))
        else:
            fields[parts[0]] = [float(v) for v in parts[1:]]
    inputs = np.asarray(inputs)
    sensor = SensorConfig(origin=fields["sensor"][:2], sigma_r=fields["sensor"][2],
                          sigma_a=fields["sensor"][3])
    models = []
    for tag, rows_ in (("x", z_x), ("y", z_y)):
        s0, l2, sv = fields[f"hyper_{tag}"]
        outputs = np.array([r[0] for r in rows_])
        model = GpModel(inputs, outputs, GpHyper(s0, l2, sv))
        stored_alpha = np.array([r[1] for r in rows_])
        if not np.allclose(model.solve_vector, stored_alpha, rtol=1e-8, atol=1e-10):
            raise ValueError(f"{path}: stored solve vector inconsistent with K and outputs")
        models.append(model)
    return (models[0], models[1]), fields["dt"][0], sensor


# -- SIR particle filter -----------------------------------------------------


@dataclass
class ParticleSet:
    positions: np.ndarray  # (M, 2) m
    velocities: np.ndarray  # (M, 2) m/s
    weights: np.ndarray  # (M,), sums to 1

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.velocities = np.asarray(self.velocities, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        m = len(self.weights)
        if m < 1:
            raise ValueError("need at least one particle")
        if self.positions.shape != (m, 2) or self.velocities.shape != (m, 2):
            raise ValueError("positions/velocities must be (M, 2)")
        if np.any(self.weights < 0.0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be non-negative and sum to 1")

    def __len__(self) -> int:
        return len(self.weights)

    @property
    def ess(self) -> float:
        return 1.0 / float(np.sum(self.weights**2))


def init_particles(est: StateEstimate, n_particles: int, rng: np.random.Generator) -> ParticleSet:
    positions = rng.multivariate_normal(est.position, est.cov[:2, :2], size=n_particles)
    velocities = rng.multivariate_normal(est.velocity, est.cov[2:, 2:], size=n_particles)
    weights = np.full(n_particles, 1.0 / n_particles)
    return ParticleSet(positions=positions, velocities=velocities, weights=weights)


def systematic_resample(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    m = len(weights)
    anchors = (np.arange(m) + rng.uniform()) / m
    return np.searchsorted(np.cumsum(weights), anchors).clip(max=m - 1)


def pf_propagate(ps: ParticleSet, models, sigma_p: float, dt: float,
                 rng: np.random.Generator) -> ParticleSet:
    """Draw per-particle velocities from the GP posterior, then move positions."""
    mx, my = models
    mean_x, var_x = mx.predict_batch(ps.velocities)
    mean_y, var_y = my.predict_batch(ps.velocities)
    new_vel = np.column_stack([
        mean_x + np.sqrt(var_x) * rng.standard_normal(len(ps)),
        mean_y + np.sqrt(var_y) * rng.standard_normal(len(ps)),
    ])
    new_pos = ps.positions + dt * new_vel + sigma_p * rng.standard_normal((len(ps), 2))
    return ParticleSet(positions=new_pos, velocities=new_vel, weights=ps.weights.copy())


def pf_reweight(ps: ParticleSet, z: Measurement, sensor: SensorConfig) -> ParticleSet:
    """Multiply weights by the range-bearing likelihood of z, then normalize."""
    delta = ps.positions - sensor.origin
    ranges = np.hypot(delta[:, 0], delta[:, 1])
    bearings = np.arctan2(delta[:, 1], delta[:, 0])
    log_lik = -0.5 * (
        ((z.range - ranges) / sensor.sigma_r) ** 2
        + (wrap_angle(z.bearing - bearings) / sensor.sigma_a) ** 2
    )
    if np.max(log_lik) < np.log(np.finfo(float).tiny):
        raise WeightCollapseError("all particle likelihoods underflowed to zero")
    with np.errstate(divide="ignore"):
        log_w = np.log(ps.weights) + log_lik
    peak = np.max(log_w)
    if not np.isfinite(peak):
        raise WeightCollapseError("all particle weights underflowed to zero")
    w = np.exp(log_w - peak)
    w /= w.sum()
    return ParticleSet(positions=ps.positions.copy(), velocities=ps.velocities.copy(), weights=w)


def pf_estimate(ps: ParticleSet, t: int = 0) -> StateEstimate:
    """Weighted mean of positions and velocities with weighted sample covariance."""
    state = np.hstack([ps.positions, ps.velocities])
    mean = ps.weights @ state
    centered = state - mean
    cov = (ps.weights[:, None] * centered).T @ centered
    return StateEstimate(mean=mean, cov=0.5 * (cov + cov.T), t=t)


def pf_resample(ps: ParticleSet, rng: np.random.Generator) -> ParticleSet:
    idx = systematic_resample(ps.weights, rng)
    m = len(ps)
    return ParticleSet(
        positions=ps.positions[idx],
        velocities=ps.velocities[idx],
        weights=np.full(m, 1.0 / m),
    )


def pf_reseed(ps: ParticleSet, z: Measurement, sensor: SensorConfig,
              rng: np.random.Generator) -> ParticleSet:
    """Recovery after weight collapse: positions re-drawn around the measurement."""
    cart = polar_to_cartesian(z, sensor)
    noise_cov = measurement_noise_cartesian(z, sensor)
    positions = rng.multivariate_normal(cart, noise_cov, size=len(ps))
    weights = np.full(len(ps), 1.0 / len(ps))
    return ParticleSet(positions=positions, velocities=ps.velocities.copy(), weights=weights)


def pf_step(ps: ParticleSet, z: Measurement, models, sensor: SensorConfig,
            sigma_p: float, rng: np.random.Generator, dt: float = 1.0,
            resample: str = "systematic", ess_fraction: float = 0.5):
    """One SIR cycle: propagate, reweight, estimate, resample.

    The estimate is computed from the normalized weights before resampling.
    resample='ess' only resamples when the effective sample size drops below
    ess_fraction * M.
    """
    ps = pf_propagate(ps, models, sigma_p, dt, rng)
    ps = pf_reweight(ps, z, sensor)
    est = pf_estimate(ps, t=z.t)
    if resample == "systematic" or (resample == "ess" and ps.ess < ess_fraction * len(ps)):
        ps = pf_resample(ps, rng)
    return ps, est
