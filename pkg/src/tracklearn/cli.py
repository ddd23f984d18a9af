"""Command-line entry point: simulate, train, evaluate, report.

Every command writes a manifest.json holding the resolved configuration,
the seeds, and SHA-256 hashes of inputs and outputs, so a run can be
reproduced exactly from its output directory.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig
from .errors import ConfigError
from .evaluate import RunRecord, make_report
from .gp import GpHyper, gp_fit, load_gp, save_gp
from .imm import ImmConfig, default_params, load_imm, save_imm, train_imm
from .mkf import MkfConfig, init_weights, input_scale_from, load_mkf, save_mkf, train_mkf
from .runner import PfSettings, run_ekf_method, run_gp_method, run_imm_method, run_mkf_method
from .simulate import Dataset, ingest_csv, load_dataset, make_dataset, save_dataset
from .statespace import SensorConfig

METHODS = ("ekf", "gp", "imm", "mkf")


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _hash_tree(root: Path) -> dict:
    return {
        str(p.relative_to(root)): _sha256(p)
        for p in sorted(root.rglob("*"))
        if p.is_file() and p.name != "manifest.json"
    }


def _write_manifest(out_dir: Path, command: str, cfg: ExperimentConfig, seed: int,
                    inputs: dict, wallclock: float) -> None:
    manifest = {
        "tool": f"tracklearn {__version__}",
        "command": command,
        "seed": seed,
        "config": cfg.resolved(),
        "inputs": inputs,
        "outputs": _hash_tree(out_dir),
        "wallclock_s": round(wallclock, 3),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _load_manifest(directory: Path) -> dict:
    path = directory / "manifest.json"
    if not path.exists():
        raise ConfigError(f"{directory} has no manifest.json; not a tracklearn output directory")
    return json.loads(path.read_text())


def _sensor_of(cfg_dict: dict) -> SensorConfig:
    sec = cfg_dict["sensor"]
    return SensorConfig(
        origin=(float(sec["origin_x"]), float(sec["origin_y"])),
        sigma_r=float(sec["sigma_r"]),
        sigma_a=float(sec["sigma_a"]),
    )


def _check_sensor_match(a: SensorConfig, b: SensorConfig, what: str) -> None:
    same = (
        np.allclose(a.origin, b.origin, rtol=0, atol=1e-12)
        and abs(a.sigma_r - b.sigma_r) <= 1e-12 * max(1.0, a.sigma_r)
        and abs(a.sigma_a - b.sigma_a) <= 1e-12 * max(1.0, a.sigma_a)
    )
    if not same:
        raise ConfigError(f"sensor parameters of {what} do not match the dataset")


def _dataset_dir(cfg: ExperimentConfig, args) -> Path:
    path = getattr(args, "data", None) or cfg.text("dataset", "path")
    if not path:
        raise ConfigError("no dataset directory: set [dataset] path or pass --data")
    return Path(path)


def _load_split(cfg: ExperimentConfig, args, role: str) -> Dataset:
    root = _dataset_dir(cfg, args)
    manifest = _load_manifest(root)
    stored_sensor = _sensor_of(manifest["config"])
    _check_sensor_match(cfg.sensor(), stored_sensor, "the experiment config")
    dt = float(manifest["config"]["dataset"]["dt"])
    return load_dataset(root / role, stored_sensor, dt=dt, role=role)


# -- subcommands -----------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = time.time()
    sensor = cfg.sensor()
    kind = cfg.text("dataset", "kind")
    inputs = {}
    if kind == "gct":
        gct = cfg.gct()
        train = make_dataset(cfg.inum("dataset", "n_train"), gct, sensor, seed=args.seed)
        test = make_dataset(cfg.inum("dataset", "n_test"), gct, sensor, seed=args.seed + 1,
                            role="test")
    elif kind == "csv":
        csv_path = Path(cfg.text("dataset", "csv_path"))
        if not csv_path.exists():
            raise ConfigError(f"[dataset] csv_path {csv_path} does not exist")
        inputs[str(csv_path)] = _sha256(csv_path)
        whole = ingest_csv(csv_path, sensor, cfg.inum("dataset", "tracklet_len"),
                           rng_seed=args.seed, dt=cfg.fnum("dataset", "dt"))
        n_train = int(round(len(whole) * cfg.fnum("dataset", "train_fraction")))
        if n_train == 0 or n_train == len(whole):
            raise ConfigError("train_fraction leaves an empty split")
        train = Dataset(tracklets=whole.tracklets[:n_train], sensor=sensor, role="train")
        test = Dataset(tracklets=whole.tracklets[n_train:], sensor=sensor, role="test")
    else:
        raise ConfigError(f"unknown dataset kind {kind!r}")
    save_dataset(out / "train", train)
    save_dataset(out / "test", test)
    cfg.values["dataset"]["path"] = str(out)
    _write_manifest(out, "simulate", cfg, args.seed, inputs, time.time() - started)
    print(f"simulate: {len(train)} train / {len(test)} test tracklets -> {out}")
    return 0


def _train_gp(cfg: ExperimentConfig, train: Dataset, out: Path, seed: int):
    n_sub = cfg.inum("gp", "n_train_tracklets")
    tracklets = train.tracklets[:n_sub] if n_sub else train.tracklets
    hyper0 = GpHyper(
        sigma0_sq=cfg.fnum("gp", "sigma0_sq"),
        length_sq=cfg.fnum("gp", "length_sq"),
        noise_sq=cfg.fnum("gp", "noise_sq"),
    )
    models = gp_fit(tracklets, hyper0, max_pairs=cfg.inum("gp", "max_pairs"),
                    optimize=cfg.flag("gp", "optimize_hyper"), seed=seed)
    save_gp(out / "gp.gpm", models, dt=train.dt, sensor=train.sensor)
    return []


def _train_imm(cfg: ExperimentConfig, train: Dataset, out: Path, seed: int):
    imm_cfg = ImmConfig(
        modes=tuple(m.strip() for m in cfg.text("imm", "modes").split(",")),
        likelihood=cfg.text("imm", "likelihood"),
        train_r=cfg.flag("imm", "train_r"),
    )
    params0 = default_params(train.sensor, imm_cfg, init_q=cfg.fnum("imm", "init_q"),
                             init_omega=cfg.fnum("imm", "init_omega"))
    params, history = train_imm(params0, train.tracklets, train.sensor,
                                steps=cfg.inum("imm", "steps"), lr=cfg.fnum("imm", "lr"),
                                seed=seed, cfg=imm_cfg)
    save_imm(out / "imm.txt", params, dt=train.dt, sensor=train.sensor)
    return history


def _train_mkf(cfg: ExperimentConfig, train: Dataset, out: Path, seed: int):
    mkf_cfg = MkfConfig(
        hidden=cfg.inum("mkf", "hidden"),
        dense=cfg.inum("mkf", "dense"),
        q_reg=cfg.fnum("mkf", "q_reg"),
        loss=cfg.text("mkf", "loss"),
        clip_norm=cfg.fnum("mkf", "clip_norm"),
    )
    scale_text = cfg.text("mkf", "input_scale")
    scale = (
        input_scale_from(train.tracklets, train.sensor)
        if scale_text == "auto"
        else float(scale_text)
    )
    w0 = init_weights(seed=seed, hidden=mkf_cfg.hidden, dense=mkf_cfg.dense, input_scale=scale)
    weights, history = train_mkf(w0, train.tracklets, train.sensor,
                                 iterations=cfg.inum("mkf", "iterations"),
                                 lr=cfg.fnum("mkf", "lr"), seed=seed, cfg=mkf_cfg)
    save_mkf(out / "mkf.npz", weights, dt=train.dt, sensor=train.sensor)
    return history


def cmd_train(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    if args.method not in ("gp", "imm", "mkf"):
        raise ConfigError(f"--method must be gp, imm or mkf, got {args.method!r}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train = _load_split(cfg, args, "train")
    started = time.time()
    history = {"gp": _train_gp, "imm": _train_imm, "mkf": _train_mkf}[args.method](
        cfg, train, out, args.seed
    )
    wallclock = time.time() - started
    with (out / "loss_history.csv").open("w") as fh:
        fh.write("iter,loss\n")
        for step, loss in history:
            fh.write(f"{step},{loss:.17g}\n")
    data_root = _dataset_dir(cfg, args)
    inputs = {str(data_root): _load_manifest(data_root)["outputs"].get("manifest.json", "")
              or _sha256(data_root / "manifest.json")}
    _write_manifest(out, f"train --method {args.method}", cfg, args.seed, inputs, wallclock)
    print(f"train {args.method}: wallclock {wallclock:.1f} s -> {out}")
    return 0


def _save_records(out: Path, per_method: dict) -> None:
    arrays = {"methods": np.array(sorted(per_method))}
    for method, records in per_method.items():
        arrays[f"{method}_pred"] = np.stack([r.pred for r in records])
        arrays[f"{method}_post"] = np.stack([r.post for r in records])
        arrays[f"{method}_truth"] = np.stack([r.truth for r in records])
        arrays[f"{method}_meas"] = np.stack([r.meas_cart for r in records])
    np.savez(out / "records.npz", **arrays)


def load_records(directory) -> dict:
    per_method = {}
    with np.load(Path(directory) / "records.npz", allow_pickle=False) as data:
        for method in data["methods"]:
            method = str(method)
            per_method[method] = [
                RunRecord(pred=p, post=o, truth=t, meas_cart=m)
                for p, o, t, m in zip(
                    data[f"{method}_pred"], data[f"{method}_post"],
                    data[f"{method}_truth"], data[f"{method}_meas"],
                )
            ]
    return per_method


def cmd_evaluate(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    test = _load_split(cfg, args, "test")
    methods = [m.strip() for m in (args.method or "ekf,gp,imm,mkf").split(",")]
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}")
    started = time.time()
    inputs = {}
    per_method = {}
    failures = {}
    for method in methods:
        try:
            if method == "ekf":
                per_method["ekf"] = run_ekf_method(test, q=cfg.fnum("ekf", "q"))
                continue
            model_path = Path(cfg.text("models", method))
            if not str(model_path) or not model_path.exists():
                raise ConfigError(f"[models] {method} not set or missing: {model_path}")
            inputs[str(model_path)] = _sha256(model_path)
            if method == "gp":
                models, dt, sensor = load_gp(model_path)
                _check_sensor_match(test.sensor, sensor, f"model {model_path}")
                settings = PfSettings(
                    n_particles=cfg.inum("gp", "n_particles"),
                    sigma_p=cfg.fnum("gp", "sigma_p"),
                    resample=cfg.text("gp", "resample"),
                    ess_fraction=cfg.fnum("gp", "ess_fraction"),
                )
                per_method["gp"] = run_gp_method(test, models, settings, seed=args.seed)
            elif method == "imm":
                params, dt, sensor = load_imm(model_path)
                _check_sensor_match(test.sensor, sensor, f"model {model_path}")
                imm_cfg = ImmConfig(
                    modes=params.modes,
                    likelihood=cfg.text("imm", "likelihood"),
                    train_r=cfg.flag("imm", "train_r"),
                )
                per_method["imm"] = run_imm_method(test, params, imm_cfg)
            elif method == "mkf":
                weights, dt, sensor = load_mkf(model_path)
                _check_sensor_match(test.sensor, sensor, f"model {model_path}")
                mkf_cfg = MkfConfig(q_reg=cfg.fnum("mkf", "q_reg"), loss=cfg.text("mkf", "loss"))
                per_method["mkf"] = run_mkf_method(test, weights, mkf_cfg)
        except ConfigError:
            raise
        except Exception as exc:  # keep other methods alive, report at the end
            failures[method] = f"{type(exc).__name__}: {exc}"
    if per_method:
        _save_records(out, per_method)
        make_report(out, per_method)
    if failures:
        report = "\n".join(f"{m}: {msg}" for m, msg in sorted(failures.items()))
        (out / "failure_report.txt").write_text(report + "\n")
    _write_manifest(out, f"evaluate --method {','.join(methods)}", cfg, args.seed, inputs,
                    time.time() - started)
    print((out / "summary.txt").read_text() if per_method else "evaluate: nothing ran")
    if failures:
        print(f"evaluate: {len(failures)} method(s) failed, see failure_report.txt",
              file=sys.stderr)
        return 1
    return 0


def cmd_report(args) -> int:
    out = Path(args.out)
    per_method = load_records(out)
    make_report(out, per_method)
    print((out / "summary.txt").read_text())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tracklearn",
        description="Simulate, train, and benchmark learned motion models for "
                    "single-target tracking.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, need_config=True, need_seed=True):
        if need_config:
            p.add_argument("--config", required=True, help="experiment INI file")
        p.add_argument("--out", required=True, help="output directory")
        if need_seed:
            p.add_argument("--seed", type=int, required=True, help="RNG seed (mandatory)")
        p.add_argument("--data", help="dataset directory (overrides [dataset] path)")

    p_sim = sub.add_parser("simulate", help="generate a dataset directory")
    common(p_sim)
    p_sim.set_defaults(fn=cmd_simulate)

    p_train = sub.add_parser("train", help="train one method on a dataset")
    common(p_train)
    p_train.add_argument("--method", required=True, help="gp | imm | mkf")
    p_train.set_defaults(fn=cmd_train)

    p_eval = sub.add_parser("evaluate", help="run filters over the test set and score them")
    common(p_eval)
    p_eval.add_argument("--method", help="comma list among ekf,gp,imm,mkf (default: all)")
    p_eval.set_defaults(fn=cmd_evaluate)

    p_rep = sub.add_parser("report", help="regenerate report files from records.npz")
    p_rep.add_argument("--out", required=True, help="evaluation directory")
    p_rep.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
