"""Pilots, the real-valued measurement operator and the few-bit ADC model."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .channel import dft_matrix

QPSK = "qpsk"
ZADOFF_CHU = "zc"

# MSE-optimal uniform step for a zero-mean unit-variance Gaussian input,
# indexed by bit depth.  Produced once by `optimal_gaussian_step` and frozen.
GAUSSIAN_STEP_TABLE = {
    1: 1.5957691453,
    2: 0.9956866812,
    3: 0.5860194495,
    4: 0.3352006231,
    5: 0.1881387950,
    6: 0.1040630206,
    7: 0.0568676726,
    8: 0.0307623861,
}


@dataclass(frozen=True)
class PilotMatrix:
    symbols: np.ndarray  # (n_tx, n_pilot) complex
    kind: str

    @property
    def n_tx(self) -> int:
        return self.symbols.shape[0]

    @property
    def n_pilot(self) -> int:
        return self.symbols.shape[1]


def zadoff_chu(n: int, root: int = 1) -> np.ndarray:
    if np.gcd(root, n) != 1:
        raise ValueError(f"ZC root {root} is not coprime with length {n}")
    k = np.arange(n)
    if n % 2 == 0:
        return np.exp(-1j * np.pi * root * k * k / n)
    return np.exp(-1j * np.pi * root * k * (k + 1) / n)


def make_pilots(kind: str, n_tx: int, n_pilot: int, rng=None, root: int = 1) -> PilotMatrix:
    """Pilot matrix ``P`` of shape ``(n_tx, n_pilot)`` with unit-modulus entries.

    ``kind="qpsk"`` draws i.i.d. symbols from ``{(+-1 +- 1j)/sqrt(2)}``.
    ``kind="zc"`` uses cyclic shifts of a length-``n_tx`` Zadoff-Chu root
    sequence as columns; shifts are mutually orthogonal, so at most ``n_tx``
    pilots are available.
    """
    if n_pilot < 1:
        raise ValueError(f"n_pilot must be >= 1, got {n_pilot}")
    if kind == QPSK:
        if rng is None:
            raise ValueError("QPSK pilots need an rng")
        bits = rng.integers(0, 2, size=(2, n_tx, n_pilot))
        sym = ((2 * bits[0] - 1) + 1j * (2 * bits[1] - 1)) / np.sqrt(2)
    elif kind == ZADOFF_CHU:
        if n_pilot > n_tx:
            raise ValueError(f"ZC pilots support at most n_tx={n_tx} cyclic shifts, "
                             f"requested {n_pilot}")
        seq = zadoff_chu(n_tx, root)
        sym = np.stack([np.roll(seq, k) for k in range(n_pilot)], axis=1)
    else:
        raise ValueError(f"unknown pilot kind {kind!r}")
    return PilotMatrix(symbols=sym, kind=kind)


def complex_to_real_operator(A: np.ndarray) -> np.ndarray:
    """Real block form ``[[Re, -Im], [Im, Re]]`` matching ``[Re; Im]`` stacking."""
    return np.block([[A.real, -A.imag], [A.imag, A.real]])


def noise_variance(snr_db: float, n_tx: int) -> float:
    """Per-real-component noise variance from ``SNR = n_tx / (2 sigma^2)``."""
    return n_tx / (2.0 * 10.0 ** (snr_db / 10.0))


@dataclass(frozen=True)
class MeasurementModel:
    a: np.ndarray
    u: np.ndarray
    s: np.ndarray
    vt: np.ndarray
    noise_var: float
    pilot: PilotMatrix
    n_rx: int

    @property
    def n_tx(self) -> int:
        return self.pilot.n_tx

    @property
    def shape(self) -> tuple[int, int]:
        return self.a.shape

    @property
    def row_norms_sq(self) -> np.ndarray:
        return np.einsum("ij,ij->i", self.a, self.a)

    def with_noise(self, noise_var: float) -> "MeasurementModel":
        return replace(self, noise_var=float(noise_var))

    def with_snr(self, snr_db: float) -> "MeasurementModel":
        return self.with_noise(noise_variance(snr_db, self.n_tx))


def build_measurement(pilot: PilotMatrix, n_rx: int, noise_var: float = 0.0) -> MeasurementModel:
    """Angular-domain measurement operator with its thin SVD cached.

    The complex operator is ``(P^T kron I) (conj(A_T) kron A_R)``, which
    simplifies to ``(P^T conj(A_T)) kron A_R``.
    """
    A_T = dft_matrix(pilot.n_tx)
    A_R = dft_matrix(n_rx)
    A_c = np.kron(pilot.symbols.T @ A_T.conj(), A_R)
    A = complex_to_real_operator(A_c)
    u, s, vt = np.linalg.svd(A, full_matrices=False)
    return MeasurementModel(a=A, u=u, s=s, vt=vt, noise_var=float(noise_var),
                            pilot=pilot, n_rx=n_rx)


@dataclass(frozen=True)
class Quantizer:
    """Uniform mid-rise quantizer with ``2**bits`` cells of width ``step``."""

    bits: int
    step: float

    @property
    def levels(self) -> int:
        return 2 ** self.bits

    @property
    def codewords(self) -> np.ndarray:
        k = np.arange(1, self.levels + 1)
        return (2 * k - self.levels - 1) * self.step / 2

    @property
    def thresholds(self) -> tuple[np.ndarray, np.ndarray]:
        half = self.levels // 2
        j = np.arange(self.levels)
        low = (j - half) * self.step
        up = (j + 1 - half) * self.step
        low[0] = -np.inf
        up[-1] = np.inf
        return low, up

    def index(self, codewords) -> np.ndarray:
        """Cell index (0-based) of each codeword; raises on non-codewords."""
        c = np.asarray(codewords, dtype=float)
        pos = c / self.step + (self.levels - 1) / 2
        idx = np.rint(pos)
        bad = (np.abs(pos - idx) > 1e-6) | (idx < 0) | (idx > self.levels - 1) | ~np.isfinite(pos)
        if np.any(bad):
            first = c.reshape(-1)[np.argmax(bad.reshape(-1))]
            raise ValueError(f"{first!r} is not a codeword of the {self.bits}-bit quantizer "
                             f"with step {self.step:g}")
        return idx.astype(int)


def optimal_gaussian_step(bits: int) -> float:
    """MSE-optimal uniform step for ``N(0, 1)`` input (used to build the table)."""
    from scipy.optimize import minimize_scalar
    from scipy.stats import norm

    def mse(step):
        q = Quantizer(bits, step)
        low, up = q.thresholds
        r = q.codewords
        zphi = lambda x: np.where(np.isfinite(x), np.nan_to_num(x) * norm.pdf(x), 0.0)
        return np.sum((1 + r * r) * (norm.cdf(up) - norm.cdf(low))
                      + 2 * r * (norm.pdf(up) - norm.pdf(low))
                      - (zphi(up) - zphi(low)))

    res = minimize_scalar(mse, bounds=(1e-3, 3.0), method="bounded",
                          options={"xatol": 1e-12})
    return float(res.x)


def design_quantizer(bits: int, received_power: float) -> Quantizer:
    """Step ``sqrt(P_y / 2) * step_b`` for received power ``P_y`` per complex sample."""
    if bits not in GAUSSIAN_STEP_TABLE:
        raise ValueError(f"unsupported bit depth {bits}; supported 1..8")
    if not received_power > 0:
        raise ValueError(f"received power must be positive, got {received_power}")
    return Quantizer(bits, float(np.sqrt(received_power / 2.0) * GAUSSIAN_STEP_TABLE[bits]))


def received_power(y: np.ndarray) -> float:
    """Empirical power per complex received sample (automatic gain control)."""
    y = np.asarray(y, dtype=float)
    return float(2.0 * np.mean(y * y))


def quantize(q: Quantizer, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    # compare against the thresholds themselves so tiny inputs cannot round into the wrong cell
    inner = q.thresholds[1][:-1]
    return q.codewords[np.searchsorted(inner, y, side="right")]


def interval(q: Quantizer, codeword) -> tuple:
    """Threshold pair ``(low, up)`` of the cell producing ``codeword``."""
    j = q.index(codeword)
    low, up = q.thresholds
    if np.ndim(j) == 0:
        return float(low[j]), float(up[j])
    return low[j], up[j]


@dataclass(frozen=True)
class Observation:
    y: np.ndarray  # real (M,) or (B, M); codewords when quantized
    snr_db: Optional[float] = None
    quantizer: Optional[Quantizer] = None

    @property
    def quantized(self) -> bool:
        return self.quantizer is not None


def observe(model: MeasurementModel, h: np.ndarray, rng, snr_db: float | None = None,
            quantizer: Quantizer | None = None, bits: int | None = None) -> Observation:
    """``y = A h + n`` with ``n ~ N(0, noise_var I)``; optionally quantized.

    ``h`` may be a batch ``(B, N)``.  Passing ``bits`` instead of a ready
    ``quantizer`` designs one from the received power of this batch.
    """
    h = np.asarray(h, dtype=float)
    clean = h @ model.a.T
    if model.noise_var > 0:
        clean = clean + np.sqrt(model.noise_var) * rng.standard_normal(clean.shape)
    if quantizer is None and bits:
        quantizer = design_quantizer(bits, received_power(clean))
    if quantizer is not None:
        return Observation(quantize(quantizer, clean), snr_db, quantizer)
    return Observation(clean, snr_db, None)
