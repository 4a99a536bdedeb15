"""Synthetic MIMO channels and their spatial / angular / real-vector views.

Channels are generated with a clustered geometric sum-of-paths model for
half-wavelength ULAs at both ends.  The angular (virtual) representation uses
unitary DFT bases, ``H = A_R @ H_ad @ A_T^H``, and the real vector stacks the
column-major vectorisation as ``[Re; Im]``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DATASET_MAGIC = b"DMCE0001"
_HEADER = struct.Struct("<8sIIII")

# split tags used to derive disjoint RNG streams per dataset split
SPLITS = {"train": 0, "val": 1, "test": 2}


@dataclass(frozen=True)
class SystemConfig:
    n_tx: int = 16
    n_rx: int = 4
    n_pilot: int = 16
    snr_db: float = 20.0
    seed: int = 0

    def __post_init__(self):
        if self.n_tx < 1 or self.n_rx < 1 or self.n_pilot < 1:
            raise ValueError(
                f"antenna and pilot counts must be >= 1, got "
                f"n_tx={self.n_tx} n_rx={self.n_rx} n_pilot={self.n_pilot}")

    @property
    def pilot_density(self) -> float:
        return self.n_pilot / self.n_tx

    @property
    def dim(self) -> int:
        """Real dimension N = 2 N_r N_t of the channel vector."""
        return 2 * self.n_rx * self.n_tx


def _default_gains(n: int, decay: float = 1.0) -> tuple[float, ...]:
    w = np.exp(-decay * np.arange(n))
    return tuple(float(x) for x in w / w.sum())


@dataclass(frozen=True)
class ClusterModel:
    """Geometry of the clustered channel.

    Cluster centres are drawn uniformly in ``tx_sector_deg`` (transmitter) and
    ``rx_sector_deg`` (receiver); per-path offsets are Laplacian with standard
    deviation ``angle_spread_deg``.
    """

    n_clusters: int = 3
    paths_per_cluster: int = 10
    angle_spread_deg: float = 5.0
    gain_profile: tuple[float, ...] = field(default=None)
    tx_sector_deg: float = 120.0
    rx_sector_deg: float = 180.0

    def __post_init__(self):
        if self.n_clusters < 1 or self.paths_per_cluster < 1:
            raise ValueError("cluster and path counts must be >= 1")
        if self.angle_spread_deg < 0:
            raise ValueError("angle spread must be nonnegative")
        gains = self.gain_profile
        if gains is None:
            gains = _default_gains(self.n_clusters)
        gains = np.asarray(gains, dtype=float)
        if gains.shape != (self.n_clusters,) or np.any(gains < 0) or gains.sum() <= 0:
            raise ValueError("gain_profile needs one nonnegative weight per cluster")
        object.__setattr__(self, "gain_profile", tuple(float(g) for g in gains / gains.sum()))


@dataclass(frozen=True)
class ChannelSample:
    spatial: np.ndarray
    angular: np.ndarray
    real_vec: np.ndarray

    @classmethod
    def from_spatial(cls, H: np.ndarray) -> "ChannelSample":
        H_ad = to_angular(H)
        return cls(spatial=H, angular=H_ad, real_vec=vectorize_real(H_ad))


def dft_matrix(n: int) -> np.ndarray:
    """Unitary DFT matrix with entries ``exp(-2j*pi*k*l/n) / sqrt(n)``."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n) / np.sqrt(n)


def steering_vector(n: int, angle_rad) -> np.ndarray:
    """Unit-norm ULA response(s) for half-wavelength spacing.

    ``angle_rad`` may be an array; the result then has shape ``(n, len(angle))``.
    """
    angle = np.asarray(angle_rad, dtype=float)
    phase = -1j * np.pi * np.multiply.outer(np.arange(n), np.sin(angle))
    return np.exp(phase) / np.sqrt(n)


def to_angular(H: np.ndarray) -> np.ndarray:
    n_rx, n_tx = H.shape[-2:]
    return dft_matrix(n_rx).conj().T @ H @ dft_matrix(n_tx)


def from_angular(H_ad: np.ndarray) -> np.ndarray:
    n_rx, n_tx = H_ad.shape[-2:]
    return dft_matrix(n_rx) @ H_ad @ dft_matrix(n_tx).conj().T


def vectorize_real(X: np.ndarray) -> np.ndarray:
    """Column-major complex vectorisation stacked as ``[Re; Im]``.

    Accepts a single matrix or a stack ``(..., n_rx, n_tx)``.
    """
    X = np.asarray(X)
    v = np.swapaxes(X, -1, -2).reshape(*X.shape[:-2], -1)
    return np.concatenate([v.real, v.imag], axis=-1)


def devectorize_real(h: np.ndarray, n_rx: int, n_tx: int) -> np.ndarray:
    h = np.asarray(h)
    half = n_rx * n_tx
    if h.shape[-1] != 2 * half:
        raise ValueError(f"expected vectors of length {2 * half}, got {h.shape[-1]}")
    v = h[..., :half] + 1j * h[..., half:]
    return np.swapaxes(v.reshape(*h.shape[:-1], n_tx, n_rx), -1, -2)


def vec_to_image(h: np.ndarray, n_rx: int, n_tx: int) -> np.ndarray:
    """Real vectors ``(..., N)`` -> two-channel images ``(..., 2, n_rx, n_tx)``."""
    h = np.asarray(h)
    img = h.reshape(*h.shape[:-1], 2, n_tx, n_rx)
    return np.swapaxes(img, -1, -2)


def image_to_vec(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    return np.swapaxes(img, -1, -2).reshape(*img.shape[:-3], -1)


def _draw_angles(rng, centre, spread_rad, size):
    # Laplacian with standard deviation `spread_rad` has scale spread/sqrt(2)
    return centre + rng.laplace(0.0, spread_rad / np.sqrt(2.0), size=size)


def generate_channel(cfg: SystemConfig, cluster: ClusterModel, rng) -> ChannelSample:
    """One clustered channel realisation.

    Per-path gains are ``CN(0, w_c / paths_per_cluster)`` and the sum is scaled
    by ``sqrt(n_rx * n_tx)`` so that ``E|H_ij|^2 = 1`` exactly in expectation.
    """
    L = cluster.paths_per_cluster
    spread = np.deg2rad(cluster.angle_spread_deg)
    H = np.zeros((cfg.n_rx, cfg.n_tx), dtype=complex)
    for weight in cluster.gain_profile:
        tx_c = rng.uniform(-0.5, 0.5) * np.deg2rad(cluster.tx_sector_deg)
        rx_c = rng.uniform(-0.5, 0.5) * np.deg2rad(cluster.rx_sector_deg)
        phi = _draw_angles(rng, tx_c, spread, L)
        theta = _draw_angles(rng, rx_c, spread, L)
        g = (rng.standard_normal(L) + 1j * rng.standard_normal(L)) * np.sqrt(weight / (2 * L))
        a_rx = steering_vector(cfg.n_rx, theta)
        a_tx = steering_vector(cfg.n_tx, phi)
        H += (a_rx * g) @ a_tx.conj().T
    H *= np.sqrt(cfg.n_rx * cfg.n_tx)
    return ChannelSample.from_spatial(H)


def sample_rng(seed: int, index: int, split: str = "train") -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, SPLITS[split], index]))


def generate_dataset(cfg: SystemConfig, cluster: ClusterModel, n_samples: int,
                     split: str = "train", seed: int | None = None) -> np.ndarray:
    """Angular-domain real vectors, shape ``(n_samples, 2 n_rx n_tx)``.

    Sample ``i`` of split ``split`` uses its own RNG stream derived from
    ``(seed, split, i)``, so splits never share geometry draws.
    """
    seed = cfg.seed if seed is None else seed
    out = np.empty((n_samples, cfg.dim))
    for i in range(n_samples):
        out[i] = generate_channel(cfg, cluster, sample_rng(seed, i, split)).real_vec
    return out


def write_dataset(path, data: np.ndarray, n_rx: int, n_tx: int) -> None:
    data = np.asarray(data)
    if data.ndim != 2 or data.shape[1] != 2 * n_rx * n_tx:
        raise ValueError(f"dataset shape {data.shape} does not match n_rx={n_rx}, n_tx={n_tx}")
    path = Path(path)
    try:
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(DATASET_MAGIC, n_rx, n_tx, data.shape[0], 0))
            fh.write(np.ascontiguousarray(data, dtype="<f4").tobytes())
    except OSError as exc:
        raise OSError(f"cannot write dataset {path}: {exc.strerror}") from exc


def read_dataset(path) -> tuple[np.ndarray, int, int]:
    """Returns ``(data, n_rx, n_tx)`` with data as float64."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read dataset {path}: {exc.strerror}") from exc
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, n_rx, n_tx, n_samples, dtype = _HEADER.unpack_from(raw)
    if magic != DATASET_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if dtype != 0:
        raise ValueError(f"{path}: unsupported dtype code {dtype}")
    n = 2 * n_rx * n_tx
    payload = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size)
    if payload.size != n_samples * n:
        raise ValueError(f"{path}: header says {n_samples} samples, payload holds "
                         f"{payload.size / n:g}")
    return payload.reshape(n_samples, n).astype(np.float64), n_rx, n_tx
