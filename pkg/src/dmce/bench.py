"""Experiment drivers behind the command-line subcommands."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .baselines import LMMSEFilter, lasso_estimate, ls_estimate, sample_covariance, tune_lasso
from .channel import ClusterModel, SystemConfig, generate_dataset, read_dataset, write_dataset
from .config import ConfigError, ExperimentConfig
from .diffusion.checkpoint import load_checkpoint, save_checkpoint
from .diffusion.network import Architecture, DenoiserNetwork
from .diffusion.schedule import linear_schedule
from .diffusion.training import TrainConfig, train
from .measurement import Observation, build_measurement, make_pilots, observe
from .posterior import EstimatorConfig, estimate, nmse_db, tune_grad_scale
from .report import ResultRow, plot_results, read_csv, write_csv
from .sure import SureConfig, make_noisy_dataset, train_sure_dm

log = logging.getLogger(__name__)

METHODS = ("dm", "dm-enhanced", "dm-linear-score", "sure-dm", "ls", "lmmse", "lasso")
DM_METHODS = ("dm", "dm-enhanced", "dm-linear-score", "sure-dm")

# stream tags keep the seed sequences of different purposes disjoint
_PILOT, _NOISE, _VAL_NOISE, _DM, _SURE_NOISE = 11, 12, 13, 14, 15


def _stream(seed: int, *tags) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *tags]))


def _key(x: float) -> int:
    # grid values as integers for seeding (milli-units)
    return int(round(x * 1000)) & 0xFFFFFFFF


def system_config(cfg: ExperimentConfig) -> SystemConfig:
    return SystemConfig(n_tx=cfg.int("system.n_tx"), n_rx=cfg.int("system.n_rx"),
                        n_pilot=cfg.int("system.n_tx"), snr_db=cfg.float("system.snr_db"),
                        seed=cfg.seed)


def cluster_model(cfg: ExperimentConfig) -> ClusterModel:
    return ClusterModel(n_clusters=cfg.int("channel.n_clusters"),
                        paths_per_cluster=cfg.int("channel.paths_per_cluster"),
                        angle_spread_deg=cfg.float("channel.angle_spread_deg"))


def train_config(cfg: ExperimentConfig) -> TrainConfig:
    return TrainConfig(epochs=cfg.int("train.epochs"), batch_size=cfg.int("train.batch_size"),
                       learning_rate=cfg.float("train.learning_rate"), seed=cfg.seed)


def architecture(cfg: ExperimentConfig) -> Architecture:
    return Architecture(s_init=cfg.int("diffusion.s_init"), s_max=cfg.int("diffusion.s_max"))


def grad_scale_auto(cfg: ExperimentConfig) -> bool:
    return cfg.get("estimator.grad_scale").strip().lower() == "auto"


def estimator_config(cfg: ExperimentConfig) -> EstimatorConfig:
    # with grad_scale = auto the value here is a placeholder replaced per grid point
    scale = 1.0 if grad_scale_auto(cfg) else cfg.float("estimator.grad_scale")
    return EstimatorConfig(grad_scale=scale,
                           enhanced=cfg.bool("estimator.enhanced"),
                           enhance_rounds=cfg.int("estimator.enhance_rounds"),
                           enhance_window=cfg.float("estimator.enhance_window"))


def _load_data(cfg: ExperimentConfig, key: str) -> np.ndarray:
    path = cfg.path(key)
    if not path.exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    data, n_rx, n_tx = read_dataset(path)
    if (n_rx, n_tx) != (cfg.int("system.n_rx"), cfg.int("system.n_tx")):
        raise ConfigError(f"{path}: dataset is {n_rx}x{n_tx}, config expects "
                          f"{cfg.int('system.n_rx')}x{cfg.int('system.n_tx')}")
    return data


def _write_log(path: Path, history) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for i, loss in enumerate(history, 1):
            w.writerow([i, repr(float(loss))])


# --------------------------------------------------------------------- gen-data

def cmd_gen_data(cfg: ExperimentConfig) -> list[Path]:
    sys_cfg, cluster = system_config(cfg), cluster_model(cfg)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for split in ("train", "val", "test"):
        n = cfg.int(f"data.n_{split}")
        data = generate_dataset(sys_cfg, cluster, n, split=split, seed=cfg.seed)
        path = cfg.path(f"data.{split}")
        write_dataset(path, data, sys_cfg.n_rx, sys_cfg.n_tx)
        written.append(path)
    return written


# --------------------------------------------------------------------- training

def _noisy_training_set(cfg: ExperimentConfig, clean: np.ndarray, sigma_w_sq: float):
    # train and train-sure draw the same corruption, so a naive model sees the SURE-DM inputs
    match = linear_schedule(cfg.int("sure.match_t_max"))
    return make_noisy_dataset(clean, sigma_w_sq, match, _stream(cfg.seed, _SURE_NOISE))


def cmd_train(cfg: ExperimentConfig) -> Path:
    data = _load_data(cfg, "data.train")
    sigma_w_sq = cfg.float("train.noisy_sigma_w_sq")
    if sigma_w_sq < 0:
        raise ConfigError(f"train.noisy_sigma_w_sq must be nonnegative, got {sigma_w_sq}")
    if sigma_w_sq > 0:
        # naive reference: the noisy samples are treated as clean training data
        data = _noisy_training_set(cfg, data, sigma_w_sq).samples
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    t_max = cfg.int("diffusion.t_max")
    net = DenoiserNetwork(architecture(cfg), n_rx=cfg.int("system.n_rx"),
                          n_tx=cfg.int("system.n_tx"), rng=_stream(cfg.seed, 0))
    net, history = train(net, data, train_config(cfg), linear_schedule(t_max),
                         on_epoch=lambda e, l: log.info("epoch %d loss %.6f", e, l))
    path = cfg.path("model.checkpoint")
    save_checkpoint(path, net, t_max, role="dm")
    _write_log(cfg.out_dir / "train_log.csv", history)
    return path


def cmd_train_sure(cfg: ExperimentConfig) -> tuple[Path, Path]:
    clean = _load_data(cfg, "data.train")
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    t_max = cfg.int("diffusion.t_max")
    noisy = _noisy_training_set(cfg, clean, cfg.float("sure.sigma_w_sq"))
    match_t_max = cfg.int("sure.match_t_max")
    sure_cfg = SureConfig(mc_epsilon=cfg.float("sure.mc_epsilon"),
                          denoiser_epochs=cfg.int("sure.denoiser_epochs"),
                          dm_epochs=cfg.int("sure.dm_epochs"))
    res = train_sure_dm(noisy, linear_schedule(t_max), train_config(cfg), sure_cfg,
                        arch=architecture(cfg), n_rx=cfg.int("system.n_rx"), n_tx=cfg.int("system.n_tx"),
                        on_epoch=lambda s, e, l: log.info("%s epoch %d loss %.6f", s, e, l))
    den_path = cfg.out_dir / "sure_denoiser.ckpt"
    dm_path = cfg.path("model.sure_checkpoint")
    save_checkpoint(den_path, res.denoiser, match_t_max, role="sure-denoiser")
    save_checkpoint(dm_path, res.dm, t_max, role="sure-dm")
    _write_log(cfg.out_dir / "sure_denoiser_log.csv", res.denoiser_history)
    _write_log(cfg.out_dir / "sure_dm_log.csv", res.dm_history)
    return den_path, dm_path


# --------------------------------------------------------------------- sweep

def make_observation(model, h, snr_db: float, bits: int, rng) -> Observation:
    """Noisy observation of a batch; ``bits > 0`` quantizes with a step set from the batch power."""
    return observe(model, h, rng, snr_db=snr_db, bits=bits or None)


def _timed(fn, inputs, warmup: int):
    """Runs ``fn`` on every input; returns outputs and the median latency in ms (warm-up calls excluded)."""
    for i in range(min(warmup, len(inputs))):
        fn(i)
    outs, times = [], []
    for i in range(len(inputs)):
        t0 = time.perf_counter()
        outs.append(fn(i))
        times.append(time.perf_counter() - t0)
    return np.array(outs), float(np.median(times) * 1e3)


def _dm_runner(net, t_max, est_cfg, obs, model, seed):
    schedule = linear_schedule(t_max)

    def run(i):
        single = Observation(obs.y[i], obs.snr_db, obs.quantizer)
        return estimate(single, model, net, schedule, est_cfg, rng=_stream(seed, _DM, i))
    return run


def run_sweep(cfg: ExperimentConfig, methods=None) -> list[ResultRow]:
    methods = methods if methods is not None else cfg.list("sweep.methods")
    bad = sorted(set(methods) - set(METHODS))
    if bad:
        raise ConfigError(f"unknown methods: {', '.join(bad)}")
    snrs = cfg.list("sweep.snr_db", float)
    alphas = cfg.list("sweep.alpha", float)
    bit_grid = cfg.list("sweep.bits", int)
    warmup = cfg.int("sweep.warmup")
    n_tx, n_rx = cfg.int("system.n_tx"), cfg.int("system.n_rx")
    test = _load_data(cfg, "data.test")
    est_cfg = estimator_config(cfg)

    nets = {}
    if {"dm", "dm-enhanced", "dm-linear-score"} & set(methods):
        nets["dm"] = _load_model(cfg.path("model.checkpoint"), "dm", n_rx, n_tx)
    if "sure-dm" in methods:
        nets["sure-dm"] = _load_model(cfg.path("model.sure_checkpoint"), "sure-dm", n_rx, n_tx)
    c_h = sample_covariance(_load_data(cfg, "data.train")).c_h if "lmmse" in methods else None
    tune_dm = grad_scale_auto(cfg) and bool(set(DM_METHODS) & set(methods))
    val = _load_data(cfg, "data.val") if "lasso" in methods or tune_dm else None

    rows = []
    for alpha in alphas:
        n_pilot = max(1, int(round(alpha * n_tx)))
        pilot = make_pilots(cfg.get("sweep.pilots"), n_tx, n_pilot, rng=_stream(cfg.seed, _PILOT, _key(alpha)))
        base = build_measurement(pilot, n_rx)
        for snr in snrs:
            model = base.with_snr(snr)
            for bits in bit_grid:
                grid = (_key(snr), _key(alpha), bits)
                obs = make_observation(model, test, snr, bits, _stream(cfg.seed, _NOISE, *grid))
                for method in methods:
                    run = _method_runner(method, cfg, nets, est_cfg, obs, model, c_h, val, snr, bits, grid)
                    est, latency = _timed(run, obs.y, warmup)
                    rows.append(ResultRow(method, snr, alpha, bits, nmse_db(est, test), latency, len(test)))
                    log.info("%s snr=%g alpha=%g bits=%d nmse=%.2f dB", method, snr, alpha, bits, rows[-1].nmse_db)
    return sorted(rows, key=ResultRow.sort_key)


def _load_model(path: Path, role: str, n_rx: int, n_tx: int):
    if not path.exists():
        raise FileNotFoundError(f"model checkpoint not found: {path}")
    net, t_max, _ = load_checkpoint(path, expect_role=role)
    if (net.n_rx, net.n_tx) != (n_rx, n_tx):
        raise ConfigError(f"{path}: model is {net.n_rx}x{net.n_tx}, config expects {n_rx}x{n_tx}")
    return net, t_max


def _method_runner(method, cfg, nets, est_cfg, obs, model, c_h, val, snr, bits, grid):
    if method in DM_METHODS:
        net, t_max = nets["sure-dm" if method == "sure-dm" else "dm"]
        mcfg = est_cfg
        if method == "dm-enhanced":
            mcfg = replace(est_cfg, enhanced=True)
        elif method == "dm-linear-score":
            mcfg = replace(est_cfg, likelihood="svd")
        if grad_scale_auto(cfg):
            # gradient scale picked by validation NMSE at this grid point, per method
            val_obs = make_observation(model, val, snr, bits, _stream(cfg.seed, _VAL_NOISE, *grid))
            s, scores = tune_grad_scale(val_obs, val, model, net, linear_schedule(t_max), mcfg,
                                        cfg.list("estimator.grad_scale_grid", float),
                                        seed=cfg.seed)
            log.info("%s snr=%g bits=%d: grad_scale %g (validation %s)", method, snr, bits, s,
                     ", ".join(f"{k:g}:{v:.2f}" for k, v in scores.items()))
            mcfg = replace(mcfg, grad_scale=s)
        return _dm_runner(net, t_max, mcfg, obs, model, cfg.seed)
    if method == "ls":
        return lambda i: ls_estimate(obs.y[i], model)
    if method == "lmmse":
        filt = LMMSEFilter(model.a, c_h, model.noise_var)
        return lambda i: filt(obs.y[i])
    # lasso: penalty factor tuned on the validation split at this grid point
    val_obs = make_observation(model, val, snr, bits, _stream(cfg.seed, _VAL_NOISE, *grid))
    factor = tune_lasso(val_obs.y, val, model.a)
    L = float(model.s[0] ** 2)

    def run(i):
        y = obs.y[i]
        return lasso_estimate(y, model.a, factor * np.max(np.abs(y @ model.a)), lipschitz=L)
    return run


def cmd_sweep(cfg: ExperimentConfig) -> Path:
    rows = run_sweep(cfg)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    path = cfg.out_dir / "results.csv"
    write_csv(path, rows)
    return path


def cmd_plot(cfg: ExperimentConfig) -> list[Path]:
    path = cfg.path("plot.csv")
    rows = read_csv(path)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    return plot_results(rows, cfg.out_dir)
