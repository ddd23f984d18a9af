"""Interacting multiple model filter with tape-differentiable recursion.

The full IMM cycle (mixing, mode-matched EKF filtering, probability update,
combination) is written once against the autodiff Var API: forward values
drive evaluation, and the same graph yields exact gradients of the
measurement negative log-likelihood for parameter training.

Constrained parameters are optimized through smooth bijections: transition
rows through a softmax, variances through exp.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import GradientOptimizer, Var
from .ekf import init_track
from .errors import NumericsError
from .statespace import SensorConfig, StateEstimate, Tracklet, wrap_angle

LOG_2PI = np.log(2.0 * np.pi)

MODE_CV = "cv"
MODE_CT = "ct"

# basis matrices for assembling the coordinated-turn transition from scalars
_T_POS = np.diag([1.0, 1.0, 0.0, 0.0])
_T_A = np.zeros((4, 4)); _T_A[0, 2] = 1.0; _T_A[1, 3] = 1.0
_T_B = np.zeros((4, 4)); _T_B[0, 3] = -1.0; _T_B[1, 2] = 1.0
_T_C = np.zeros((4, 4)); _T_C[2, 2] = 1.0; _T_C[3, 3] = 1.0
_T_S = np.zeros((4, 4)); _T_S[2, 3] = -1.0; _T_S[3, 2] = 1.0

_H00 = np.zeros((2, 4)); _H00[0, 0] = 1.0
_H01 = np.zeros((2, 4)); _H01[0, 1] = 1.0
_H10 = np.zeros((2, 4)); _H10[1, 0] = 1.0
_H11 = np.zeros((2, 4)); _H11[1, 1] = 1.0


def wna_template(dt: float) -> np.ndarray:
    q = np.zeros((4, 4))
    q[0, 0] = q[1, 1] = dt**3 / 3.0
    q[2, 2] = q[3, 3] = dt
    q[0, 2] = q[2, 0] = q[1, 3] = q[3, 1] = dt**2 / 2.0
    return q


@dataclass(frozen=True)
class ImmConfig:
    modes: tuple = (MODE_CV, MODE_CT)
    likelihood: str = "mixture"  # "mixture" (exact log-sum-exp) or "moment" (matched Gaussian)
    prob_floor: float = 1e-12
    train_r: bool = True

    def __post_init__(self):
        if not self.modes:
            raise ValueError("need at least one mode")
        if any(m not in (MODE_CV, MODE_CT) for m in self.modes):
            raise ValueError(f"unknown mode in {self.modes}")
        if self.likelihood not in ("mixture", "moment"):
            raise ValueError(f"unknown likelihood style {self.likelihood!r}")


@dataclass
class ImmParams:
    """Unconstrained IMM parameter block.

    trans_logits rows pass through a softmax to give the mode transition
    matrix; log_q and the measurement-noise log-stds map through exp.
    omega holds the turn rate (rad/s) for ct modes (ignored for cv).
    """

    modes: tuple
    trans_logits: np.ndarray
    log_q: np.ndarray
    omega: np.ndarray
    log_sigma_r: float
    log_sigma_a: float

    @property
    def n_modes(self) -> int:
        return len(self.modes)

    @property
    def transition_matrix(self) -> np.ndarray:
        z = self.trans_logits - self.trans_logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def to_dict(self, train_r: bool = True) -> dict:
        out = {
            "trans_logits": np.asarray(self.trans_logits, dtype=float),
            "log_q": np.asarray(self.log_q, dtype=float),
        }
        ct_idx = [k for k, m in enumerate(self.modes) if m == MODE_CT]
        if ct_idx:
            out["omega"] = np.asarray(self.omega, dtype=float)
        if train_r:
            out["log_r"] = np.array([self.log_sigma_r, self.log_sigma_a])
        return out

    def with_dict(self, values: dict) -> "ImmParams":
        new = replace(self)
        new.trans_logits = values["trans_logits"].copy()
        new.log_q = values["log_q"].copy()
        if "omega" in values:
            new.omega = values["omega"].copy()
        if "log_r" in values:
            new.log_sigma_r = float(values["log_r"][0])
            new.log_sigma_a = float(values["log_r"][1])
        return new


def default_params(sensor: SensorConfig, cfg: ImmConfig = ImmConfig(),
                   init_q: float = 1.0, init_omega: float = 0.1,
                   diag_prob: float = 0.95) -> ImmParams:
    m = len(cfg.modes)
    if m == 1:
        trans = np.zeros((1, 1))
    else:
        off = (1.0 - diag_prob) / (m - 1)
        trans = np.log(np.full((m, m), off) + np.eye(m) * (diag_prob - off))
    return ImmParams(
        modes=tuple(cfg.modes),
        trans_logits=trans,
        log_q=np.log(np.full(m, init_q)),
        omega=np.array([init_omega if mode == MODE_CT else 0.0 for mode in cfg.modes]),
        log_sigma_r=float(np.log(sensor.sigma_r)),
        log_sigma_a=float(np.log(sensor.sigma_a)),
    )


# -- tape construction ---------------------------------------------------------


def _softmax_rows(logits: Var) -> list:
    """Row-wise softmax of an (m, m) Var; returns nested scalar Vars."""
    m = logits.shape[0]
    rows = []
    for i in range(m):
        items = [ad.item(logits, i, j) for j in range(m)]
        peak = max(it.scalar() for it in items)
        exps = [ad.exp(it - peak) for it in items]
        total = exps[0]
        for e in exps[1:]:
            total = total + e
        rows.append([e / total for e in exps])
    return rows


def _transition_vars(tape, params: ImmParams, mode_idx: int, dt: float,
                     omega_var: Var | None):
    """(F, Q) Vars for one mode; ct builds the exact-arc transition from omega."""
    kind = params.modes[mode_idx]
    if kind == MODE_CV:
        f_mat = np.eye(4)
        f_mat[0, 2] = f_mat[1, 3] = dt
        return ad.const(tape, f_mat), None
    theta = omega_var * dt
    # near zero turn rate the ratios a = sin(th)/w, b = (1-cos(th))/w are
    # evaluated by series so the cv limit is exact and differentiable
    if abs(omega_var.scalar() * dt) < 1e-4:
        w_sq = omega_var * omega_var
        a = w_sq * (-dt**3 / 6.0) + dt
        b = omega_var * (dt**2 / 2.0) + (w_sq * omega_var) * (-dt**4 / 24.0)
    else:
        a = ad.sin(theta) / omega_var
        b = (1.0 - ad.cos(theta)) / omega_var
    f_var = (
        ad.const(tape, _T_POS)
        + ad.scale_template(a, _T_A)
        + ad.scale_template(b, _T_B)
        + ad.scale_template(ad.cos(theta), _T_C)
        + ad.scale_template(ad.sin(theta), _T_S)
    )
    return f_var, None


def _measure_vars(tape, x: Var, origin: np.ndarray):
    """(r, bearing, H) on tape for a 4x1 state column."""
    dx = ad.item(x, 0, 0) - float(origin[0])
    dy = ad.item(x, 1, 0) - float(origin[1])
    r_sq = dx * dx + dy * dy
    if r_sq.scalar() == 0.0:
        raise NumericsError("state coincides with the sensor origin")
    r = ad.sqrt(r_sq)
    bearing = ad.atan2(dy, dx)
    jac = (
        ad.scale_template(dx / r, _H00)
        + ad.scale_template(dy / r, _H01)
        + ad.scale_template(-(dy / r_sq), _H10)
        + ad.scale_template(dx / r_sq, _H11)
    )
    return r, bearing, jac


def _ekf_update_vars(tape, x: Var, p: Var, z_range: float, z_bearing: float,
                     r_var: Var, origin: np.ndarray):
    r, bearing, jac = _measure_vars(tape, x, origin)
    dr = -(r - z_range)
    raw = z_bearing - bearing.scalar()
    da = (-(bearing - z_bearing)) + (float(wrap_angle(raw)) - raw)
    nu = ad.concat_rows([dr, da])
    s = jac @ p @ jac.T + r_var
    k = ad.transpose(ad.cho_solve(s, jac @ p))
    x_post = x + k @ nu
    i_kh = ad.const(tape, np.eye(4)) - k @ jac
    p_post = i_kh @ p @ i_kh.T + k @ r_var @ k.T
    p_post = (p_post + p_post.T) * 0.5
    solve = ad.cho_solve(s, nu)
    quad = ad.vsum(nu * solve)
    loglik = (quad + ad.logdet(s) + 2.0 * LOG_2PI) * (-0.5)
    return x_post, p_post, nu, s, loglik


class ImmGraph:
    """One tape holding the IMM recursion over a measurement sequence."""

    def __init__(self, params: ImmParams, init: StateEstimate, dt: float,
                 origin: np.ndarray, cfg: ImmConfig, backend: str | None = None):
        self.cfg = cfg
        self.dt = dt
        self.origin = np.asarray(origin, dtype=float)
        self.tape = ad.make_tape(backend)
        tape = self.tape
        m = params.n_modes

        self.leaves = {"trans_logits": ad.var(tape, params.trans_logits),
                       "log_q": ad.var(tape, params.log_q.reshape(1, -1))}
        ct_present = any(k == MODE_CT for k in params.modes)
        if ct_present:
            self.leaves["omega"] = ad.var(tape, params.omega.reshape(1, -1))
        if cfg.train_r:
            self.leaves["log_r"] = ad.var(tape, [[params.log_sigma_r, params.log_sigma_a]])
            sr = ad.exp(ad.item(self.leaves["log_r"], 0, 0))
            sa = ad.exp(ad.item(self.leaves["log_r"], 0, 1))
        else:
            sr = ad.const(tape, np.exp(params.log_sigma_r))
            sa = ad.const(tape, np.exp(params.log_sigma_a))
        self.r_var = ad.scale_template(sr * sr, np.diag([1.0, 0.0])) + ad.scale_template(
            sa * sa, np.diag([0.0, 1.0])
        )

        self.p_rows = _softmax_rows(self.leaves["trans_logits"])
        self.f_vars, self.q_vars = [], []
        wna = wna_template(dt)
        for j in range(m):
            omega_var = ad.item(self.leaves["omega"], 0, j) if params.modes[j] == MODE_CT else None
            f_var, _ = _transition_vars(tape, params, j, dt, omega_var)
            q_scale = ad.exp(ad.item(self.leaves["log_q"], 0, j))
            self.f_vars.append(f_var)
            self.q_vars.append(ad.scale_template(q_scale, wna))

        self.modes_x = [ad.const(tape, init.mean.reshape(4, 1)) for _ in range(m)]
        self.modes_p = [ad.const(tape, init.cov) for _ in range(m)]
        self.mu = [ad.const(tape, 1.0 / m) for _ in range(m)]
        self.loss_terms = []
        self.step_index = 0

    # one full IMM cycle against measurement (z_range, z_bearing)
    def step(self, z_range: float, z_bearing: float):
        cfg, tape = self.cfg, self.tape
        m = len(self.modes_x)
        try:
            # -- mixing
            mu_pred = []
            for j in range(m):
                acc = self.p_rows[0][j] * self.mu[0]
                for i in range(1, m):
                    acc = acc + self.p_rows[i][j] * self.mu[i]
                mu_pred.append(acc)
            mixed_x, mixed_p = [], []
            for j in range(m):
                cond = [self.p_rows[i][j] * self.mu[i] / mu_pred[j] for i in range(m)]
                x0 = cond[0] * self.modes_x[0]
                for i in range(1, m):
                    x0 = x0 + cond[i] * self.modes_x[i]
                p0 = None
                for i in range(m):
                    diff = self.modes_x[i] - x0
                    term = self.modes_p[i] + diff @ diff.T
                    term = cond[i] * term
                    p0 = term if p0 is None else p0 + term
                mixed_x.append(x0)
                mixed_p.append(p0)

            # -- mode-matched prediction and update
            post_x, post_p, logliks, innovations, s_vars, pred_x = [], [], [], [], [], []
            for j in range(m):
                xp = self.f_vars[j] @ mixed_x[j]
                pp = self.f_vars[j] @ mixed_p[j] @ self.f_vars[j].T + self.q_vars[j]
                x_post, p_post, nu, s, loglik = _ekf_update_vars(
                    tape, xp, pp, z_range, z_bearing, self.r_var, self.origin
                )
                pred_x.append(xp)
                post_x.append(x_post)
                post_p.append(p_post)
                innovations.append(nu)
                s_vars.append(s)
                logliks.append(loglik)

            # -- predictive log-density of this measurement
            joint = [logliks[j] + ad.log(mu_pred[j]) for j in range(m)]
            log_norm = ad.logsumexp(joint)
            if cfg.likelihood == "mixture":
                self.loss_terms.append(-log_norm)
            else:
                nu_bar = mu_pred[0] * innovations[0]
                for j in range(1, m):
                    nu_bar = nu_bar + mu_pred[j] * innovations[j]
                s_bar = None
                for j in range(m):
                    d = innovations[j] - nu_bar
                    term = mu_pred[j] * (s_vars[j] + d @ d.T)
                    s_bar = term if s_bar is None else s_bar + term
                solve = ad.cho_solve(s_bar, nu_bar)
                quad = ad.vsum(nu_bar * solve)
                self.loss_terms.append((quad + ad.logdet(s_bar) + 2.0 * LOG_2PI) * 0.5)

            # -- mode probability update (normalized by construction)
            mu_post = [ad.exp(joint[j] - log_norm) for j in range(m)]
            if any(v.scalar() < cfg.prob_floor for v in mu_post):
                floored = [
                    v if v.scalar() >= cfg.prob_floor else ad.const(tape, cfg.prob_floor)
                    for v in mu_post
                ]
                total = floored[0]
                for v in floored[1:]:
                    total = total + v
                mu_post = [v / total for v in floored]

            # -- combination
            x_comb = mu_post[0] * post_x[0]
            for j in range(1, m):
                x_comb = x_comb + mu_post[j] * post_x[j]
            p_comb = None
            for j in range(m):
                diff = post_x[j] - x_comb
                term = mu_post[j] * (post_p[j] + diff @ diff.T)
                p_comb = term if p_comb is None else p_comb + term

            pred_comb = mu_pred[0] * pred_x[0]
            for j in range(1, m):
                pred_comb = pred_comb + mu_pred[j] * pred_x[j]
        except NumericsError as exc:
            raise NumericsError(f"IMM step {self.step_index}: {exc}") from exc

        self.modes_x, self.modes_p, self.mu = post_x, post_p, mu_post
        self.step_index += 1
        return pred_comb, x_comb, p_comb

    def loss(self) -> Var:
        total = self.loss_terms[0]
        for term in self.loss_terms[1:]:
            total = total + term
        return total


def imm_nll(params: ImmParams, tracklet: Tracklet, sensor: SensorConfig,
            cfg: ImmConfig = ImmConfig(), backend: str | None = None):
    """Measurement NLL of one tracklet on a fresh tape.

    Returns (loss Var, leaves dict) with the recursion initialized from the
    first two measurements; the loss sums steps 2..T-1.
    """
    if len(tracklet) < 3:
        raise ValueError("need at least 3 measurements")
    init = init_track(tracklet.measurement(0), tracklet.measurement(1), sensor, tracklet.dt)
    graph = ImmGraph(params, init, tracklet.dt, sensor.origin, cfg, backend)
    for t in range(2, len(tracklet)):
        graph.step(tracklet.meas[t, 0], tracklet.meas[t, 1])
    return graph.loss(), graph.leaves


def run_imm(params: ImmParams, tracklet: Tracklet, sensor: SensorConfig,
            cfg: ImmConfig = ImmConfig(), backend: str | None = None):
    """Filter one tracklet; returns (pred_means, post_means, post_covs, nll).

    Rows 0..1 carry the two-point initialization, filtering starts at t=2,
    matching the EKF runner.
    """
    n = len(tracklet)
    init = init_track(tracklet.measurement(0), tracklet.measurement(1), sensor, tracklet.dt)
    graph = ImmGraph(params, init, tracklet.dt, sensor.origin, cfg, backend)
    pred_means = np.full((n, 4), np.nan)
    post_means = np.full((n, 4), np.nan)
    post_covs = np.full((n, 4, 4), np.nan)
    pred_means[:2] = init.mean
    post_means[:2] = init.mean
    post_covs[:2] = init.cov
    for t in range(2, n):
        pred, post, cov = graph.step(tracklet.meas[t, 0], tracklet.meas[t, 1])
        pred_means[t] = pred.value.ravel()
        post_means[t] = post.value.ravel()
        post_covs[t] = cov.value
    return pred_means, post_means, post_covs, float(graph.loss().scalar())


def dataset_nll(params: ImmParams, tracklets, sensor: SensorConfig,
                cfg: ImmConfig = ImmConfig()) -> float:
    total = 0.0
    for trk in tracklets:
        total += run_imm(params, trk, sensor, cfg)[3]
    return total


def train_imm(params0: ImmParams, tracklets, sensor: SensorConfig, steps: int,
              lr: float = 5e-4, seed: int = 0, cfg: ImmConfig = ImmConfig(),
              backend: str | None = None, log_every: int = 0):
    """Minibatch NLL descent over tracklets (one tracklet per step).

    Deterministic given the seed.  Divergence (non-finite loss or a numerical
    failure inside the recursion) aborts and returns the last good parameters.
    Returns (params, history) with history rows (step, tracklet_nll).
    """
    if not tracklets:
        raise ValueError("empty training set")
    rng = np.random.default_rng(seed)
    opt = GradientOptimizer(lr=lr, mode="adam")
    params = params0
    history = []
    for step in range(steps):
        idx = int(rng.integers(len(tracklets)))
        try:
            loss, leaves = imm_nll(params, tracklets[idx], sensor, cfg, backend)
            value = loss.scalar()
            if not np.isfinite(value):
                break
            ad.backward(loss)
            grads = {}
            for name, leaf in leaves.items():
                g = leaf.grad
                grads[name] = g.reshape(getattr(params, name).shape) if name != "log_r" else g.ravel()
        except NumericsError:
            break
        history.append((step, value))
        updated = opt.step(params.to_dict(train_r=cfg.train_r), grads)
        params = params.with_dict(updated)
        if log_every and step % log_every == 0:
            print(f"imm step {step}: nll {value:.3f}")
    return params, history


# -- serialization (IMM1) ------------------------------------------------------


def save_imm(path, params: ImmParams, dt: float, sensor: SensorConfig) -> None:
    lines = ["IMM1"]
    lines.append("modes " + " ".join(params.modes))
    lines.append(f"dt {dt:.17g}")
    lines.append(f"sensor {sensor.origin[0]:.17g} {sensor.origin[1]:.17g} "
                 f"{sensor.sigma_r:.17g} {sensor.sigma_a:.17g}")
    for i, row in enumerate(params.trans_logits):
        lines.append(f"logits_{i} " + " ".join(f"{v:.17g}" for v in row))
    lines.append("log_q " + " ".join(f"{v:.17g}" for v in params.log_q))
    lines.append("omega " + " ".join(f"{v:.17g}" for v in params.omega))
    lines.append(f"log_sigma_r {params.log_sigma_r:.17g}")
    lines.append(f"log_sigma_a {params.log_sigma_a:.17g}")
    trans = params.transition_matrix
    lines.append("# derived transition probabilities:")
    for row in trans:
        lines.append("#   " + "  ".join(f"{v:.4f}" for v in row))
    lines.append("# derived process noise intensities: "
                 + "  ".join(f"{v:.4g}" for v in np.exp(params.log_q)))
    lines.append(f"# derived measurement stds: {np.exp(params.log_sigma_r):.4g} m, "
                 f"{np.exp(params.log_sigma_a):.4g} rad")
    Path(path).write_text("\n".join(lines) + "\n")


def load_imm(path):
    """Returns (params, dt, sensor)."""
    lines = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    if lines[0] != "IMM1":
        raise ValueError(f"{path}: not an IMM1 document")
    fields = {}
    for line in lines[1:]:
        parts = line.split()
        fields[parts[0]] = parts[1:]
    modes = tuple(fields["modes"])
    m = len(modes)
    logits = np.array([[float(v) for v in fields[f"logits_{i}"]] for i in range(m)])
    sensor_vals = [float(v) for v in fields["sensor"]]
    params = ImmParams(
        modes=modes,
        trans_logits=logits,
        log_q=np.array([float(v) for v in fields["log_q"]]),
        omega=np.array([float(v) for v in fields["omega"]]),
        log_sigma_r=float(fields["log_sigma_r"][0]),
        log_sigma_a=float(fields["log_sigma_a"][0]),
    )
    sensor = SensorConfig(origin=sensor_vals[:2], sigma_r=sensor_vals[2], sigma_a=sensor_vals[3])
    return params, float(fields["dt"][0]), sensor
