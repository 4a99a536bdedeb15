"""Learning a diffusion prior from noisy channel realisations.

Stage one fits an MMSE denoiser, written in Tweedie form around a noise
predictor, by minimising Stein's unbiased risk estimate, so no clean data is
needed.  Stage two freezes that denoiser, cleans every training sample and
trains an ordinary diffusion model on the result.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .channel import image_to_vec, vec_to_image
from .diffusion.network import Architecture, DenoiserNetwork
from .diffusion.schedule import NoiseSchedule
from .diffusion.training import Adam, TrainConfig, TrainingDiverged, iterate_minibatches, train

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NoisyDataset:
    samples: np.ndarray   # normalised noisy channels, unit power
    sigma_w_sq: float
    alpha_bar_tw: float
    t_w: int


@dataclass(frozen=True)
class SureConfig:
    mc_epsilon: float = 1e-5
    denoiser_epochs: int = 100
    dm_epochs: int = 500

    def __post_init__(self):
        if not self.mc_epsilon > 0:
            raise ValueError("mc_epsilon must be positive")
        if self.denoiser_epochs < 1 or self.dm_epochs < 1:
            raise ValueError("epoch counts must be positive")


def noise_level(sigma_w_sq: float) -> float:
    """Diffusion level whose forward marginal matches the normalised noisy data."""
    if sigma_w_sq < 0:
        raise ValueError(f"sigma_w_sq must be nonnegative, got {sigma_w_sq}")
    return 1.0 / (1.0 + sigma_w_sq)


def make_noisy_dataset(clean: np.ndarray, sigma_w_sq: float, schedule: NoiseSchedule,
                       rng) -> NoisyDataset:
    """``h_bar = sqrt(ab) (h + w)`` with ``w ~ N(0, sigma_w_sq I)`` and ``ab = 1/(1 + sigma_w_sq)``."""
    ab = noise_level(sigma_w_sq)
    clean = np.asarray(clean, dtype=float)
    noisy = clean + np.sqrt(sigma_w_sq) * rng.standard_normal(clean.shape)
    return NoisyDataset(samples=np.sqrt(ab) * noisy, sigma_w_sq=float(sigma_w_sq),
                        alpha_bar_tw=ab, t_w=schedule.nearest_step(ab))


def tweedie_denoiser(net: Callable, h_bar, t_w: int, alpha_bar: float) -> np.ndarray:
    """MMSE estimate ``(h_bar - sqrt(1 - ab) eps(h_bar, t_w)) / sqrt(ab)``."""
    h_bar = np.asarray(h_bar, dtype=float)
    if alpha_bar >= 1.0:
        return h_bar.copy()
    return (h_bar - np.sqrt(1.0 - alpha_bar) * net(h_bar, t_w)) / np.sqrt(alpha_bar)


def mc_divergence(f: Callable, h_bar, eps: float, rng) -> np.ndarray:
    """Single-probe estimate ``v^T (f(h + eps v) - f(h)) / eps`` with ``v ~ N(0, I)``.

    A batch ``(B, N)`` gives one estimate per row.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    h_bar = np.asarray(h_bar, dtype=float)
    v = rng.standard_normal(h_bar.shape)
    diff = np.asarray(f(h_bar + eps * v)) - np.asarray(f(h_bar))
    return np.sum(v * diff, axis=-1) / eps


def divergence_weight(meta: NoisyDataset) -> float:
    """Weight on ``div_{h_bar} f``: ``2 sigma_w^2 sqrt(ab)``.

    The noise of variance ``sigma_w^2`` lives on ``h_tilde = h_bar / sqrt(ab)``,
    and ``div_{h_tilde} f = sqrt(ab) div_{h_bar} f``.
    """
    return 2.0 * meta.sigma_w_sq * np.sqrt(meta.alpha_bar_tw)


def sure_objective(f: Callable, h_bar, meta: NoisyDataset, eps: float, rng) -> np.ndarray:
    """Per-sample SURE ``||f(h_bar) - h_bar/sqrt(ab)||^2 + w div f`` for any denoiser ``f``.

    Its expectation is ``E||f(h_bar) - h||^2 + N sigma_w^2``.
    """
    h_bar = np.asarray(h_bar, dtype=float)
    f0 = np.asarray(f(h_bar))
    resid = f0 - h_bar / np.sqrt(meta.alpha_bar_tw)
    div = mc_divergence(f, h_bar, eps, rng)
    return np.sum(resid * resid, axis=-1) + divergence_weight(meta) * div


def sure_loss(net: DenoiserNetwork, batch, meta: NoisyDataset, cfg: SureConfig, rng,
              with_grads: bool = False):
    """Batch mean of :func:`sure_objective` for the Tweedie denoiser around ``net``.

    The divergence uses one probe per sample.  Both evaluations go through a
    single forward pass of size ``2B``, so the gradient flows through the probe
    difference as well.  Run ``net`` in float64: the probe step is far below
    float32 resolution.
    """
    h = np.asarray(batch, dtype=float)
    B, _ = h.shape
    ab, eps = meta.alpha_bar_tw, cfg.mc_epsilon
    c = np.sqrt(1.0 - ab)
    w = divergence_weight(meta)
    v = rng.standard_normal(h.shape)
    both = np.concatenate([h, h + eps * v])
    img = vec_to_image(both, net.n_rx, net.n_tx).astype(net.dtype)
    t = np.full(2 * B, meta.t_w)
    if with_grads:
        out, cache = net.forward(img, t, keep_cache=True)
    else:
        out = net.forward(img, t)
    e = image_to_vec(out).astype(float)
    f0 = (h - c * e[:B]) / np.sqrt(ab)
    f1 = (h + eps * v - c * e[B:]) / np.sqrt(ab)
    resid = f0 - h / np.sqrt(ab)
    div = np.sum(v * (f1 - f0), axis=1) / eps
    loss = float(np.mean(np.sum(resid * resid, axis=1) + w * div))
    if not np.isfinite(loss):
        raise TrainingDiverged(f"non-finite SURE loss {loss}")
    if not with_grads:
        return loss
    k = -c / np.sqrt(ab) / B
    g0 = k * (2.0 * resid - w * v / eps)
    g1 = k * (w * v / eps)
    dout = vec_to_image(np.concatenate([g0, g1]), net.n_rx, net.n_tx).astype(net.dtype)
    return loss, net.backward(cache, dout)


def train_sure_denoiser(net: DenoiserNetwork, noisy: NoisyDataset, train_cfg: TrainConfig,
                        sure_cfg: SureConfig,
                        on_epoch: Optional[Callable[[int, float], None]] = None):
    """Stage one: fits ``net`` (converted to float64) with the SURE loss; returns ``(net, history)``."""
    net = net.astype(np.float64)
    rng = np.random.default_rng(train_cfg.seed)
    opt = Adam.from_config(net.params, train_cfg)
    data = noisy.samples
    history = []
    for epoch in range(1, sure_cfg.denoiser_epochs + 1):
        total = 0.0
        for idx in iterate_minibatches(len(data), train_cfg.batch_size, rng):
            try:
                loss, grads = sure_loss(net, data[idx], noisy, sure_cfg, rng, with_grads=True)
            except TrainingDiverged as exc:
                raise TrainingDiverged(f"denoiser epoch {epoch}: {exc}") from None
            opt.update(net.params, grads)
            total += loss * len(idx)
        history.append(total / len(data))
        log.debug("sure epoch %d loss %.5f", epoch, history[-1])
        if on_epoch is not None:
            on_epoch(epoch, history[-1])
    return net, history


def denoise_dataset(net: DenoiserNetwork, noisy: NoisyDataset, batch_size: int = 512) -> np.ndarray:
    out = np.empty_like(noisy.samples)
    for start in range(0, len(out), batch_size):
        sl = slice(start, start + batch_size)
        out[sl] = tweedie_denoiser(net, noisy.samples[sl], noisy.t_w, noisy.alpha_bar_tw)
    return out


@dataclass
class SureResult:
    denoiser: DenoiserNetwork
    dm: DenoiserNetwork
    denoiser_history: list
    dm_history: list


def train_sure_dm(noisy: NoisyDataset, schedule: NoiseSchedule, train_cfg: TrainConfig,
                  sure_cfg: SureConfig, arch: Architecture | None = None, n_rx: int = 4,
                  n_tx: int = 16, on_epoch: Optional[Callable[[str, int, float], None]] = None
                  ) -> SureResult:
    """Both stages.  The two networks share the architecture but never share storage."""
    if len(noisy.samples) == 0:
        raise ValueError("noisy dataset is empty")
    rng = np.random.default_rng(train_cfg.seed)
    stage = (lambda name: (lambda e, l: on_epoch(name, e, l))) if on_epoch else (lambda name: None)
    theta1 = DenoiserNetwork(arch, n_rx=n_rx, n_tx=n_tx, rng=rng)
    theta1, hist1 = train_sure_denoiser(theta1, noisy, train_cfg, sure_cfg, stage("denoiser"))
    denoised = denoise_dataset(theta1, noisy)
    theta2 = DenoiserNetwork(arch, n_rx=n_rx, n_tx=n_tx, rng=rng)
    dm_cfg = TrainConfig(epochs=sure_cfg.dm_epochs, batch_size=train_cfg.batch_size,
                         learning_rate=train_cfg.learning_rate, beta1=train_cfg.beta1,
                         beta2=train_cfg.beta2, adam_eps=train_cfg.adam_eps, seed=train_cfg.seed + 1)
    theta2, hist2 = train(theta2, denoised, dm_cfg, schedule, stage("dm"))
    return SureResult(theta1.astype(np.float32), theta2, hist1, hist2)


def train_naive_dm(noisy: NoisyDataset, schedule: NoiseSchedule, train_cfg: TrainConfig,
                   arch: Architecture | None = None, n_rx: int = 4, n_tx: int = 16, on_epoch=None):
    """Reference: a diffusion model trained on the normalised noisy samples as if they were clean."""
    net = DenoiserNetwork(arch, n_rx=n_rx, n_tx=n_tx, rng=np.random.default_rng(train_cfg.seed))
    return train(net, noisy.samples, train_cfg, schedule, on_epoch)
