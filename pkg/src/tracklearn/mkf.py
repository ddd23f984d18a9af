"""LSTM-driven Kalman filter: a recurrent network supplies the predicted
velocity and the Cholesky factor of its covariance, and a standard EKF
update closes the recursion against the range-bearing sensor.

The network is trained by full backpropagation through time on the tape,
with inputs and labels built purely from Cartesian-converted measurements
(finite-difference velocities), so no ground truth enters training.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import GradientOptimizer, Var, clip_by_global_norm
from .ekf import ekf_update, init_track
from .errors import NumericsError
from .statespace import (
    SensorConfig,
    StateEstimate,
    Tracklet,
    VEL_PROJECTION,
    polar_rows_to_cartesian,
)

LOG_2PI = np.log(2.0 * np.pi)

_E00 = np.array([[1.0, 0.0], [0.0, 0.0]])
_E11 = np.array([[0.0, 0.0], [0.0, 1.0]])
_E10 = np.array([[0.0, 0.0], [1.0, 0.0]])

WEIGHT_NAMES = ("wx", "wh", "b", "wd", "bd", "wo", "bo")


@dataclass
class MkfConfig:
    hidden: int = 32
    dense: int = 32
    q_reg: float = 1e-2  # diagonal regularization added to the predicted covariance
    loss: str = "nll"  # "nll" (Gaussian) or "literal" (L1 form)
    clip_norm: float = 10.0

    def __post_init__(self):
        if self.loss not in ("nll", "literal"):
            raise ValueError(f"unknown loss mode {self.loss!r}")


@dataclass
class LstmWeights:
    """All trainable tensors plus the fixed input scale (physical m/s per unit)."""

    wx: np.ndarray
    wh: np.ndarray
    b: np.ndarray
    wd: np.ndarray
    bd: np.ndarray
    wo: np.ndarray
    bo: np.ndarray
    input_scale: float = 1.0

    @property
    def hidden(self) -> int:
        return self.wh.shape[0]

    @property
    def dense(self) -> int:
        return self.wd.shape[1]

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in WEIGHT_NAMES}

    def with_dict(self, values: dict) -> "LstmWeights":
        return LstmWeights(**{name: values[name].copy() for name in WEIGHT_NAMES},
                           input_scale=self.input_scale)


@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden: int) -> "LstmState":
        return cls(h=np.zeros((1, hidden)), c=np.zeros((1, hidden)))


@dataclass
class NnPrediction:
    """Velocity mean and lower-triangular Cholesky factor of its covariance."""

    v_nn: np.ndarray
    c_nn: np.ndarray

    def __post_init__(self):
        if self.c_nn[0, 1] != 0.0 or self.c_nn[0, 0] <= 0.0 or self.c_nn[1, 1] <= 0.0:
            raise ValueError("c_nn must be lower-triangular with positive diagonal")


def init_weights(seed: int, d_in: int = 2, hidden: int = 32, dense: int = 32,
                 input_scale: float = 1.0) -> LstmWeights:
    """Uniform +-1/sqrt(fan_in) init; forget-gate bias starts at 1."""
    rng = np.random.default_rng(seed)

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    b = np.zeros((1, 4 * hidden))
    b[0, hidden : 2 * hidden] = 1.0
    return LstmWeights(
        wx=uniform((d_in, 4 * hidden), d_in),
        wh=uniform((hidden, 4 * hidden), hidden),
        b=b,
        wd=uniform((hidden, dense), hidden),
        bd=np.zeros((1, dense)),
        wo=uniform((dense, 5), dense),
        bo=np.zeros((1, 5)),
        input_scale=input_scale,
    )


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def lstm_step(w: LstmWeights, s: LstmState, x: np.ndarray) -> tuple[LstmState, NnPrediction]:
    """Plain-numpy forward pass of one cell; x is the scaled 2-vector input.

    Gate layout along the 4H axis is [input, forget, cell, output].
    """
    hid = w.hidden
    gates = x.reshape(1, -1) @ w.wx + s.h @ w.wh + w.b
    i = _sigmoid(gates[:, :hid])
    f = _sigmoid(gates[:, hid : 2 * hid])
    g = np.tanh(gates[:, 2 * hid : 3 * hid])
    o = _sigmoid(gates[:, 3 * hid :])
    c_new = f * s.c + i * g
    h_new = o * np.tanh(c_new)
    dense = np.tanh(h_new @ w.wd + w.bd)
    out = (dense @ w.wo + w.bo).ravel()
    chol = np.array([[np.exp(out[2]), 0.0], [out[4], np.exp(out[3])]])
    return LstmState(h=h_new, c=c_new), NnPrediction(v_nn=out[:2].copy(), c_nn=chol)


def _tape_weights(tape, w: LstmWeights) -> dict:
    return {name: ad.var(tape, getattr(w, name)) for name in WEIGHT_NAMES}


def _tape_lstm_step(wvars: dict, h: Var, c: Var, x: Var, hidden: int):
    gates = x @ wvars["wx"] + h @ wvars["wh"] + wvars["b"]
    i = ad.sigmoid(ad.cols(gates, 0, hidden))
    f = ad.sigmoid(ad.cols(gates, hidden, 2 * hidden))
    g = ad.tanh(ad.cols(gates, 2 * hidden, 3 * hidden))
    o = ad.sigmoid(ad.cols(gates, 3 * hidden, 4 * hidden))
    c_new = f * c + i * g
    h_new = o * ad.tanh(c_new)
    dense = ad.tanh(h_new @ wvars["wd"] + wvars["bd"])
    out = dense @ wvars["wo"] + wvars["bo"]
    v = ad.cols(out, 0, 2)
    chol = (
        ad.scale_template(ad.exp(ad.item(out, 0, 2)), _E00)
        + ad.scale_template(ad.exp(ad.item(out, 0, 3)), _E11)
        + ad.scale_template(ad.item(out, 0, 4), _E10)
    )
    return h_new, c_new, v, chol


def mkf_predict(prior: StateEstimate, s: LstmState, w: LstmWeights, dt: float,
                q_reg: np.ndarray | float = 1e-2):
    """One network prediction step from the posterior state.

    The network ingests the posterior velocity (scaled); position moves by
    dt * v_nn; the covariance grows by the velocity-projected network
    covariance plus the regularization term.
    Returns (predicted StateEstimate, new LstmState, NnPrediction).
    """
    s_new, nn = lstm_step(w, s, prior.velocity / w.input_scale)
    v_phys = nn.v_nn * w.input_scale
    c_phys = nn.c_nn * w.input_scale
    mean = np.concatenate([prior.position + dt * v_phys, v_phys])
    q_mat = np.eye(4) * q_reg if np.isscalar(q_reg) else np.asarray(q_reg)
    cov = prior.cov + VEL_PROJECTION.T @ (c_phys @ c_phys.T) @ VEL_PROJECTION + q_mat
    pred = StateEstimate(mean=mean, cov=0.5 * (cov + cov.T), t=prior.t + 1)
    return pred, s_new, NnPrediction(v_nn=v_phys, c_nn=c_phys)


def mkf_update(pred: StateEstimate, z, sensor: SensorConfig):
    """Measurement update; delegates to the shared EKF routine."""
    return ekf_update(pred, z, sensor)


def training_sequences(tracklet: Tracklet, sensor: SensorConfig, scale: float):
    """Inputs and labels from measurements only: scaled finite-difference
    velocities of the Cartesian-converted returns, shifted by one step."""
    cart = polar_rows_to_cartesian(tracklet.meas, sensor)
    fd_vel = np.diff(cart, axis=0) / tracklet.dt
    scaled = fd_vel / scale
    return scaled[:-1], scaled[1:]


def mkf_loss(wvars: dict, inputs: np.ndarray, labels: np.ndarray, hidden: int,
             mode: str = "nll") -> Var:
    """Sequence loss on the tape.

    nll: 0.5 r'(CC')^-1 r + log det C + log 2pi per step.
    literal: the L1 alternative |0.5 C r - diag(C)|_1 per step.
    """
    tape = next(iter(wvars.values())).tape
    h = ad.const(tape, np.zeros((1, hidden)))
    c = ad.const(tape, np.zeros((1, hidden)))
    total = None
    for x_row, y_row in zip(inputs, labels):
        h, c, v, chol = _tape_lstm_step(wvars, h, c, ad.const(tape, x_row.reshape(1, 2)), hidden)
        residual = ad.transpose(v) - ad.const(tape, y_row.reshape(2, 1))
        if mode == "nll":
            cov = chol @ chol.T
            solve = ad.cho_solve(cov, residual)
            quad = ad.vsum(residual * solve)
            log_det_chol = ad.log(ad.item(chol, 0, 0)) + ad.log(ad.item(chol, 1, 1))
            term = quad * 0.5 + log_det_chol + LOG_2PI
        else:
            inner = (chol @ residual) * 0.5 - ad.concat_rows(
                [ad.item(chol, 0, 0), ad.item(chol, 1, 1)]
            )
            term = ad.vsum(ad.absval(inner))
        total = term if total is None else total + term
    return total


def train_mkf(w0: LstmWeights, tracklets, sensor: SensorConfig, iterations: int,
              lr: float = 5e-4, seed: int = 0, cfg: MkfConfig = None,
              backend: str | None = None, log_every: int = 0):
    """BPTT over one sampled tracklet per iteration with Adam and global-norm
    gradient clipping.  Aborts on a non-finite loss, returning the last good
    weights.  Returns (weights, history) with history rows (iter, loss)."""
    cfg = cfg or MkfConfig()
    if not tracklets:
        raise ValueError("empty training set")
    rng = np.random.default_rng(seed)
    opt = GradientOptimizer(lr=lr, mode="adam")
    weights = w0
    history = []
    for it in range(iterations):
        trk = tracklets[int(rng.integers(len(tracklets)))]
        inputs, labels = training_sequences(trk, sensor, weights.input_scale)
        tape = ad.make_tape(backend)
        wvars = _tape_weights(tape, weights)
        try:
            loss = mkf_loss(wvars, inputs, labels, weights.hidden, cfg.loss)
            value = loss.scalar()
            if not np.isfinite(value):
                break
            ad.backward(loss)
        except NumericsError:
            break
        grads = {name: leaf.grad for name, leaf in wvars.items()}
        grads = clip_by_global_norm(grads, cfg.clip_norm)
        weights = weights.with_dict(opt.step(weights.to_dict(), grads))
        history.append((it, value))
        if log_every and it % log_every == 0:
            print(f"mkf iter {it}: loss {value:.4f}")
    return weights, history


def input_scale_from(tracklets, sensor: SensorConfig) -> float:
    """Pooled std of measurement-derived velocity components; 1.0 floor."""
    samples = []
    for trk in tracklets[:64]:
        cart = polar_rows_to_cartesian(trk.meas, sensor)
        samples.append(np.diff(cart, axis=0).ravel() / trk.dt)
    scale = float(np.std(np.concatenate(samples)))
    return max(scale, 1.0)


def run_mkf(tracklet: Tracklet, sensor: SensorConfig, w: LstmWeights,
            cfg: MkfConfig = None):
    """Filter one tracklet; returns (pred_means, post_means, post_covs, pred_covs).

    Mirrors the EKF runner: rows 0..1 hold the two-point initialization and
    the LSTM state starts at zero.
    """
    cfg = cfg or MkfConfig()
    n = len(tracklet)
    est = init_track(tracklet.measurement(0), tracklet.measurement(1), sensor, tracklet.dt)
    state = LstmState.zeros(w.hidden)
    pred_means = np.full((n, 4), np.nan)
    post_means = np.full((n, 4), np.nan)
    post_covs = np.full((n, 4, 4), np.nan)
    pred_means[:2] = est.mean
    post_means[:2] = est.mean
    post_covs[:2] = est.cov
    for t in range(2, n):
        pred, state, _ = mkf_predict(est, state, w, tracklet.dt, cfg.q_reg)
        est, _, _ = mkf_update(pred, tracklet.measurement(t), sensor)
        pred_means[t] = pred.mean
        post_means[t] = est.mean
        post_covs[t] = est.cov
    return pred_means, post_means, post_covs


# -- checkpoint container (MKF1) ----------------------------------------------


def save_mkf(path, w: LstmWeights, dt: float, sensor: SensorConfig) -> None:
    np.savez(
        path,
        format=np.array("MKF1"),
        input_scale=np.array(w.input_scale),
        dt=np.array(dt),
        sensor=np.array([sensor.origin[0], sensor.origin[1], sensor.sigma_r, sensor.sigma_a]),
        **w.to_dict(),
    )


def load_mkf(path):
    """Returns (weights, dt, sensor)."""
    with np.load(path, allow_pickle=False) as data:
        if str(data["format"]) != "MKF1":
            raise ValueError(f"{path}: not an MKF1 container")
        tensors = {name: data[name] for name in WEIGHT_NAMES}
        weights = LstmWeights(**tensors, input_scale=float(data["input_scale"]))
        sensor_vals = data["sensor"]
        sensor = SensorConfig(origin=sensor_vals[:2], sigma_r=float(sensor_vals[2]),
                              sigma_a=float(sensor_vals[3]))
        return weights, float(data["dt"]), sensor
