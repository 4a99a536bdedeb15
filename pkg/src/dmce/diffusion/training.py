from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ..channel import vec_to_image
from .network import DenoiserNetwork
from .schedule import NoiseSchedule, forward_sample

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 500
    batch_size: int = 128
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or not self.learning_rate > 0:
            raise ValueError("epochs, batch_size and learning_rate must be positive")


class Adam:
    def __init__(self, params: dict, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.step = 0

    @classmethod
    def from_config(cls, params, cfg: TrainConfig):
        return cls(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)

    def update(self, params: dict, grads: dict) -> None:
        self.step += 1
        c1 = 1.0 - self.beta1 ** self.step
        c2 = 1.0 - self.beta2 ** self.step
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            params[k] -= (self.lr / c1 * m / (np.sqrt(v / c2) + self.eps)).astype(params[k].dtype)


class TrainingDiverged(FloatingPointError):
    pass


def dm_loss(net: DenoiserNetwork, h0: np.ndarray, t: np.ndarray, eps: np.ndarray,
            schedule: NoiseSchedule, with_grads: bool = False):
    """Mean squared error between ``eps`` and ``eps_theta(h_t, t)``.

    Averaged over batch and coordinates.  Returns ``loss`` or ``(loss, grads)``.
    """
    h_t = forward_sample(schedule, h0, t, eps)
    img = vec_to_image(h_t, net.n_rx, net.n_tx)
    target = vec_to_image(eps, net.n_rx, net.n_tx)
    if not with_grads:
        out = net.forward(img, t)
        return float(np.mean((out - target) ** 2, dtype=np.float64))
    out, cache = net.forward(img, t, keep_cache=True)
    resid = out - target
    loss = float(np.mean(resid ** 2, dtype=np.float64))
    grads = net.backward(cache, (2.0 / resid.size) * resid)
    return loss, grads


def train_step(net: DenoiserNetwork, h0: np.ndarray, schedule: NoiseSchedule, rng,
               optimizer: Optional[Adam] = None) -> float:
    """One stochastic step: ``t ~ U{1..T}``, ``eps ~ N(0, I)`` per sample."""
    h0 = np.asarray(h0, dtype=net.dtype)
    t = rng.integers(1, schedule.t_max + 1, size=h0.shape[0])
    eps = rng.standard_normal(h0.shape).astype(net.dtype)
    loss, grads = dm_loss(net, h0, t, eps, schedule, with_grads=True)
    if not np.isfinite(loss):
        raise TrainingDiverged(f"non-finite loss {loss}")
    if optimizer is not None:
        optimizer.update(net.params, grads)
    return loss


def iterate_minibatches(n: int, batch_size: int, rng):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def train(net: DenoiserNetwork, dataset: np.ndarray, cfg: TrainConfig, schedule: NoiseSchedule,
          on_epoch: Optional[Callable[[int, float], None]] = None) -> tuple[DenoiserNetwork, list]:
    """Trains ``net`` in place on real channel vectors; returns it with per-epoch mean losses."""
    data = np.asarray(dataset, dtype=net.dtype)
    if data.ndim != 2 or len(data) == 0:
        raise ValueError("dataset must be a nonempty (D, N) array")
    rng = np.random.default_rng(cfg.seed)
    opt = Adam.from_config(net.params, cfg)
    history = []
    for epoch in range(1, cfg.epochs + 1):
        total, count = 0.0, 0
        for idx in iterate_minibatches(len(data), cfg.batch_size, rng):
            try:
                loss = train_step(net, data[idx], schedule, rng, opt)
            except TrainingDiverged as exc:
                raise TrainingDiverged(f"epoch {epoch}, step {opt.step + 1}: {exc}") from None
            total += loss * len(idx)
            count += len(idx)
        history.append(total / count)
        log.debug("epoch %d loss %.5f", epoch, history[-1])
        if on_epoch is not None:
            on_epoch(epoch, history[-1])
    return net, history


def reverse_sample(net, schedule: NoiseSchedule, rng, n_samples: int = 1,
                   dim: int | None = None) -> np.ndarray:
    """Ancestral sampling from ``h_T ~ N(0, I)`` down to ``h_0``.

    ``net`` is any callable ``(h, t) -> eps`` on vectors ``(B, N)``.  The
    perturbation at step ``t`` has standard deviation ``sqrt(beta_tilde_t)``.
    """
    if dim is None:
        dim = 2 * net.n_rx * net.n_tx
    h = rng.standard_normal((n_samples, dim))
    for t in range(schedule.t_max, 0, -1):
        a, ab, b = schedule.a(t), schedule.ab(t), schedule.b(t)
        eps = net(h, t)
        h = (h - b / np.sqrt(1.0 - ab) * eps) / np.sqrt(a)
        if t > 1:
            ab_prev = schedule.ab(t - 1)
            sigma = np.sqrt((1.0 - ab_prev) / (1.0 - ab) * b)
            h = h + sigma * rng.standard_normal(h.shape)
    return h
