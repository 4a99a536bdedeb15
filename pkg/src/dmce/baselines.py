"""Classical channel estimators: least squares, LMMSE and l1-regularised LASSO."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .measurement import MeasurementModel


@dataclass(frozen=True)
class SampleCovariance:
    c_h: np.ndarray
    n_samples: int


def sample_covariance(data: np.ndarray) -> SampleCovariance:
    """``C_h = (1/D) sum h h^T`` (uncentred, as the channels are zero mean)."""
    data = np.asarray(data, dtype=float)
    c = data.T @ data / len(data)
    return SampleCovariance(c_h=0.5 * (c + c.T), n_samples=len(data))


def ls_estimate(y, model: MeasurementModel, rcond: float = 1e-10) -> np.ndarray:
    """Minimum-norm least squares ``A^+ y`` from the cached SVD."""
    s = model.s
    keep = s > rcond * s[0]
    inv = np.zeros_like(s)
    inv[keep] = 1.0 / s[keep]
    return (np.asarray(y) @ model.u * inv) @ model.vt


class LMMSEFilter:
    """Linear MMSE filter ``C A^T (A C A^T + noise_var I)^-1`` for one ``(A, noise_var)``."""

    def __init__(self, A: np.ndarray, c_h: np.ndarray, noise_var: float):
        if not noise_var > 0:
            raise ValueError("LMMSE needs a positive noise variance")
        A = np.asarray(A, dtype=float)
        ac = A @ c_h
        inner = ac @ A.T + noise_var * np.eye(A.shape[0])
        try:
            factor = scipy.linalg.cho_factor(inner)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError("LMMSE inner matrix is not positive definite") from exc
        # W = C A^T inner^-1, stored transposed for row-vector application
        self.w_t = scipy.linalg.cho_solve(factor, ac)

    def __call__(self, y) -> np.ndarray:
        return np.asarray(y) @ self.w_t


def lmmse_estimate(y, A, c_h, noise_var: float) -> np.ndarray:
    return LMMSEFilter(A, c_h, noise_var)(y)


def soft_threshold(x, thresh):
    return np.sign(x) * np.maximum(np.abs(x) - thresh, 0.0)


def lasso_objective(h, y, A, lam) -> np.ndarray:
    r = np.asarray(y) - np.asarray(h) @ A.T
    return 0.5 * np.sum(r * r, axis=-1) + lam * np.sum(np.abs(h), axis=-1)


def lasso_estimate(y, A, lam, iters: int = 500, tol: float = 1e-6,
                   lipschitz: float | None = None, monotone: bool = True,
                   history: list | None = None) -> np.ndarray:
    """``argmin 0.5 ||y - A h||^2 + lam ||h||_1`` by FISTA with step ``1/L``.

    ``y`` may be a batch; ``lam`` a scalar or per-row array.  The monotone
    variant (MFISTA) keeps the objective non-increasing.  Iteration stops at
    ``iters`` or when the relative change of every iterate drops below ``tol``.
    """
    A = np.asarray(A, dtype=float)
    y = np.asarray(y, dtype=float)
    single = y.ndim == 1
    y = np.atleast_2d(y)
    lam = np.broadcast_to(np.asarray(lam, dtype=float), (y.shape[0],))[:, None]
    if np.any(lam < 0):
        raise ValueError("lam must be nonnegative")
    L = lipschitz if lipschitz is not None else np.linalg.norm(A, 2) ** 2
    aty = y @ A
    ata = A.T @ A
    x = np.zeros((y.shape[0], A.shape[1]))
    z = x.copy()
    theta = 1.0
    obj = lasso_objective(x, y, A, lam[:, 0])
    if history is not None:
        history.append(obj.copy())
    for _ in range(iters):
        grad = z @ ata - aty
        cand = soft_threshold(z - grad / L, lam / L)
        cand_obj = lasso_objective(cand, y, A, lam[:, 0])
        if monotone:
            better = (cand_obj <= obj)[:, None]
            x_new = np.where(better, cand, x)
            obj = np.minimum(cand_obj, obj)
        else:
            x_new, obj = cand, cand_obj
        theta_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * theta * theta))
        z = x_new + (theta / theta_new) * (cand - x_new) + ((theta - 1.0) / theta_new) * (x_new - x)
        # judged on the proposal: a rejected monotone step leaves x unchanged without converging
        change = np.linalg.norm(cand - x, axis=1) / np.maximum(np.linalg.norm(cand, axis=1), 1e-12)
        x, theta = x_new, theta_new
        if history is not None:
            history.append(obj.copy())
        if np.all(change < tol):
            break
    return x[0] if single else x


def lasso_lambda_grid(y, A, n: int = 13) -> np.ndarray:
    """Candidate penalties ``{1e-3 .. 1} * ||A^T y||_inf`` (log spaced), per observation."""
    scale = np.max(np.abs(np.atleast_2d(y) @ A), axis=1)
    return np.multiply.outer(np.logspace(-3, 0, n), scale)


def tune_lasso(y_val, h_val, A, iters: int = 300) -> float:
    """Best relative penalty factor on a validation set (by NMSE)."""
    factors = np.logspace(-3, 0, 13)
    scale = np.max(np.abs(np.atleast_2d(y_val) @ A), axis=1)
    L = np.linalg.norm(A, 2) ** 2
    best, best_err = factors[0], np.inf
    for f in factors:
        est = lasso_estimate(y_val, A, f * scale, iters=iters, lipschitz=L)
        err = np.mean(np.sum((est - h_val) ** 2, axis=1) / np.sum(h_val ** 2, axis=1))
        if err < best_err:
            best, best_err = f, err
    return float(best)
