"""Lightweight convolutional noise-prediction network with manual backprop.

Architecture: two 3x3 convolutions ramp the 2 input channels up to ``s_max``
(ReLU after the first), the time features scale and shift the feature maps,
then three 3x3 convolutions ramp back down to 2 channels (ReLU after the first
two).  A sinusoidal embedding of ``t`` goes through one dense layer whose
output splits into the per-channel scale ``t_s`` and bias ``t_b``.

Images are ``(B, 2, n_rx, n_tx)`` at the interface and NHWC internally.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..channel import image_to_vec, vec_to_image


def time_embedding(t, dim: int) -> np.ndarray:
    """Interleaved sinusoidal embedding ``[sin(w0 t), cos(w0 t), sin(w1 t), ...]``.

    Frequencies are ``10000 ** (-2 i / dim)``.  ``t`` scalar gives ``(dim,)``,
    an array of steps gives ``(len(t), dim)``.
    """
    if dim % 2:
        raise ValueError(f"embedding size must be even, got {dim}")
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ValueError("time step must be nonnegative")
    freqs = 10000.0 ** (-2.0 * np.arange(dim // 2) / dim)
    ang = np.multiply.outer(t_arr, freqs)
    out = np.empty(ang.shape[:-1] + (dim,))
    out[..., 0::2] = np.sin(ang)
    out[..., 1::2] = np.cos(ang)
    return out


def channel_ramp(s_max: int, in_channels: int = 2) -> tuple[int, ...]:
    """Feature-map channel counts, e.g. ``(2, 33, 64, 43, 22, 2)`` for ``s_max=64``."""
    up = np.linspace(in_channels, s_max, 3)
    down = np.linspace(s_max, in_channels, 4)
    return tuple(int(c) for c in np.concatenate([up, down[1:]]))


def conv3x3_forward(x, w, b):
    """Same-padded 3x3 convolution. ``x`` (B,H,W,C), ``w`` (3,3,C,K)."""
    B, H, W, C = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = np.concatenate([xp[:, i:i + H, j:j + W, :] for i in range(3) for j in range(3)],
                          axis=-1).reshape(B * H * W, 9 * C)
    out = cols @ w.reshape(9 * C, -1) + b
    return out.reshape(B, H, W, -1), cols


def conv3x3_backward(dout, cols, w, x_shape):
    B, H, W, C = x_shape
    K = w.shape[-1]
    d2 = dout.reshape(-1, K)
    dw = (cols.T @ d2).reshape(w.shape)
    db = d2.sum(axis=0)
    dcols = (d2 @ w.reshape(9 * C, K).T).reshape(B, H, W, 9, C)
    dxp = np.zeros((B, H + 2, W + 2, C), dtype=dout.dtype)
    k = 0
    for i in range(3):
        for j in range(3):
            dxp[:, i:i + H, j:j + W, :] += dcols[:, :, :, k, :]
            k += 1
    return dxp[:, 1:-1, 1:-1, :], dw, db


@dataclass
class Architecture:
    s_init: int = 12
    s_max: int = 64
    ramp: tuple[int, ...] = None

    def __post_init__(self):
        if self.ramp is None:
            self.ramp = channel_ramp(self.s_max)
        self.ramp = tuple(int(c) for c in self.ramp)
        if len(self.ramp) != 6 or self.ramp[0] != 2 or self.ramp[-1] != 2:
            raise ValueError(f"ramp must have 6 entries starting and ending at 2, got {self.ramp}")
        if self.ramp[2] != self.s_max:
            raise ValueError("the third ramp entry must equal s_max")
        if self.s_init % 2:
            raise ValueError(f"s_init must be even, got {self.s_init}")


N_CONV = 5
RELU_AFTER = (True, False, True, True, False)


class DenoiserNetwork:
    """Noise predictor ``eps_theta(h_t, t)`` for channels of shape ``(n_rx, n_tx)``.

    Parameters live in ``self.params`` (insertion order is the serialisation
    order): ``dense.w``, ``dense.b``, then ``conv{i}.w``, ``conv{i}.b`` for
    i = 1..5.  Conv kernels are stored ``(3, 3, c_in, c_out)``.
    """

    def __init__(self, arch: Architecture | None = None, n_rx: int = 4, n_tx: int = 16,
                 rng=None, dtype=np.float32):
        self.arch = arch or Architecture()
        self.n_rx = n_rx
        self.n_tx = n_tx
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(0) if rng is None else rng
        self.params = self._init_params(rng)

    def _init_params(self, rng):
        a = self.arch
        p = {}
        bound = 1.0 / np.sqrt(a.s_init)
        p["dense.w"] = rng.uniform(-bound, bound, (a.s_init, 2 * a.s_max))
        p["dense.b"] = np.zeros(2 * a.s_max)
        for i in range(N_CONV):
            cin, cout = a.ramp[i], a.ramp[i + 1]
            fan_in = 9 * cin
            gain = 6.0 if RELU_AFTER[i] else 3.0
            bound = np.sqrt(gain / fan_in)
            if i == N_CONV - 1:
                w = np.zeros((3, 3, cin, cout))
            else:
                w = rng.uniform(-bound, bound, (3, 3, cin, cout))
            p[f"conv{i + 1}.w"] = w
            p[f"conv{i + 1}.b"] = np.zeros(cout)
        return {k: v.astype(self.dtype) for k, v in p.items()}

    @property
    def n_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def astype(self, dtype) -> "DenoiserNetwork":
        net = DenoiserNetwork.__new__(DenoiserNetwork)
        net.arch, net.n_rx, net.n_tx = self.arch, self.n_rx, self.n_tx
        net.dtype = np.dtype(dtype)
        net.params = {k: v.astype(net.dtype) for k, v in self.params.items()}
        return net

    def copy(self) -> "DenoiserNetwork":
        return self.astype(self.dtype)

    def _time_features(self, t, batch):
        t_arr = np.broadcast_to(np.asarray(t), (batch,))
        emb = time_embedding(t_arr, self.arch.s_init).astype(self.dtype)
        feats = emb @ self.params["dense.w"] + self.params["dense.b"]
        return emb, feats

    def forward(self, x, t, keep_cache: bool = False):
        """Predicted noise for images ``x`` of shape ``(B, 2, H, W)``."""
        x = np.asarray(x)
        if x.ndim != 4 or x.shape[1] != 2:
            raise ValueError(f"expected input of shape (B, 2, H, W), got {x.shape}")
        p = self.params
        B = x.shape[0]
        s_max = self.arch.s_max
        emb, feats = self._time_features(t, B)
        ts, tb = feats[:, :s_max], feats[:, s_max:]

        h = np.ascontiguousarray(x.transpose(0, 2, 3, 1), dtype=self.dtype)
        cache = {"emb": emb, "ts": ts}
        for i in range(N_CONV):
            name = f"conv{i + 1}"
            cache[name + ".shape"] = h.shape
            z, cols = conv3x3_forward(h, p[name + ".w"], p[name + ".b"])
            cache[name + ".cols"] = cols
            if RELU_AFTER[i]:
                mask = z > 0
                cache[name + ".mask"] = mask
                z = z * mask
            if i == 1:
                cache["premod"] = z
                z = z * (1 + ts[:, None, None, :]) + tb[:, None, None, :]
            h = z
        out = h.transpose(0, 3, 1, 2)
        if keep_cache:
            return out, cache
        return out

    def backward(self, cache, dout) -> dict:
        """Gradients of ``sum(dout * forward(x, t))`` w.r.t. every parameter."""
        p = self.params
        s_max = self.arch.s_max
        grads = {}
        g = np.ascontiguousarray(np.asarray(dout).transpose(0, 2, 3, 1), dtype=self.dtype)
        for i in reversed(range(N_CONV)):
            name = f"conv{i + 1}"
            if i == 1:
                ts = cache["ts"]
                premod = cache["premod"]
                dts = np.einsum("bhwc,bhwc->bc", g, premod)
                dtb = g.sum(axis=(1, 2))
                g = g * (1 + ts[:, None, None, :])
                dfeats = np.concatenate([dts, dtb], axis=1)
                grads["dense.w"] = cache["emb"].T @ dfeats
                grads["dense.b"] = dfeats.sum(axis=0)
            if RELU_AFTER[i]:
                g = g * cache[name + ".mask"]
            g, dw, db = conv3x3_backward(g, cache[name + ".cols"], p[name + ".w"],
                                         cache[name + ".shape"])
            grads[name + ".w"] = dw
            grads[name + ".b"] = db
        return {k: grads[k] for k in p}

    def input_gradient(self, cache, dout) -> np.ndarray:
        """Gradient w.r.t. the input image (used for testing only)."""
        p = self.params
        g = np.asarray(dout).transpose(0, 2, 3, 1).astype(self.dtype)
        for i in reversed(range(N_CONV)):
            name = f"conv{i + 1}"
            if i == 1:
                g = g * (1 + cache["ts"][:, None, None, :])
            if RELU_AFTER[i]:
                g = g * cache[name + ".mask"]
            g, _, _ = conv3x3_backward(g, cache[name + ".cols"], p[name + ".w"],
                                       cache[name + ".shape"])
        return g.transpose(0, 3, 1, 2)

    def predict(self, h, t) -> np.ndarray:
        """Noise prediction on real channel vectors ``(N,)`` or ``(B, N)``."""
        h = np.asarray(h)
        single = h.ndim == 1
        img = vec_to_image(np.atleast_2d(h), self.n_rx, self.n_tx)
        out = image_to_vec(self.forward(img, t)).astype(np.float64)
        return out[0] if single else out

    __call__ = predict
