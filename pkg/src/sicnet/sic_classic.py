"""Model-based iterative soft interference cancellation.

Beliefs are arrays of shape (K, M), or (B, K, M) for a batch of received
vectors; every row is a probability vector over the constellation.
"""
from __future__ import annotations

import numpy as np

from .tensor_nn import softmax


class NumericError(ArithmeticError):
    pass


def uniform_beliefs(K: int, M: int, batch: int | None = None) -> np.ndarray:
    shape = (K, M) if batch is None else (batch, K, M)
    return np.full(shape, 1.0 / M)


def soft_symbol_stats(probs, constellation) -> tuple[np.ndarray, np.ndarray]:
    """Mean and variance of the symbol under ``probs`` (last axis = constellation)."""
    c = np.asarray(constellation, dtype=float)
    probs = np.asarray(probs, dtype=float)
    mean = probs @ c
    var = probs @ (c * c) - mean * mean
    return mean, np.maximum(var, 0.0)


def cancel_interference(y, H, beliefs, i: int, constellation=(-1.0, 1.0)) -> np.ndarray:
    """y minus the expected contribution of every user other than ``i``."""
    H = np.asarray(H, dtype=float)
    mean, _ = soft_symbol_stats(beliefs, constellation)
    total = mean @ H.T
    return np.asarray(y, dtype=float) - total + mean[..., i, None] * H[:, i]


def _loaded(C: np.ndarray, noise_var: float) -> np.ndarray:
    """Add 1e-9 * trace(C)/N to the diagonal where the noise floor is negligible
    (below 1e-6 of the average diagonal), leaving well-conditioned C untouched."""
    N = C.shape[-1]
    tr = np.maximum(np.trace(C, axis1=-2, axis2=-1) / N, 1e-6)
    load = np.where(noise_var <= 1e-6 * tr, 1e-9 * tr, 0.0)
    return C + load[..., None, None] * np.eye(N)


def interference_covariance(H, var, i: int, noise_var: float) -> np.ndarray:
    """sum_{k != i} h_k h_k^T var_k + noise_var * I, batched over leading axes of ``var``."""
    H = np.asarray(H, dtype=float)
    v = np.array(var, dtype=float, copy=True)
    v[..., i] = 0.0
    C = np.einsum("nk,...k,mk->...nm", H, v, H)
    return C + noise_var * np.eye(H.shape[0])


def soft_detect(z, H, var, i: int, noise_var: float, constellation=(-1.0, 1.0)) -> np.ndarray:
    """Posterior of user ``i``'s symbol from the Gaussian model of ``z`` (uniform prior)."""
    H = np.asarray(H, dtype=float)
    z = np.asarray(z, dtype=float)
    c = np.asarray(constellation, dtype=float)
    C = _loaded(interference_covariance(H, var, i, noise_var), noise_var)
    try:
        np.linalg.cholesky(C)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"interference covariance of user {i} is not positive definite") from exc
    h = H[:, i]
    rhs = np.stack([z, np.broadcast_to(h, z.shape)], axis=-1)
    sol = np.linalg.solve(C, rhs)
    hz = sol[..., 0] @ h
    hh = sol[..., 1] @ h
    # -0.5 (z - h a)^T C^-1 (z - h a) up to the a-independent term z^T C^-1 z
    logits = c * hz[..., None] - 0.5 * (c * c) * hh[..., None]
    return softmax(logits)


def sic_iteration(y, H, beliefs, noise_var: float, constellation=(-1.0, 1.0)) -> np.ndarray:
    """All users updated in parallel from the previous beliefs."""
    K = np.asarray(H).shape[1]
    _, var = soft_symbol_stats(beliefs, constellation)
    rows = []
    for i in range(K):
        z = cancel_interference(y, H, beliefs, i, constellation)
        rows.append(soft_detect(z, H, var, i, noise_var, constellation))
    return np.stack(rows, axis=-2)


def run_sic(y, H, noise_var: float, L: int, constellation=(-1.0, 1.0),
            return_trajectory: bool = False):
    if L < 1:
        raise ValueError("need at least one iteration")
    y = np.asarray(y, dtype=float)
    K, M = np.asarray(H).shape[1], len(constellation)
    beliefs = uniform_beliefs(K, M, None if y.ndim == 1 else y.shape[0])
    traj = [beliefs]
    for _ in range(L):
        beliefs = sic_iteration(y, H, beliefs, noise_var, constellation)
        traj.append(beliefs)
    return (beliefs, traj) if return_trajectory else beliefs


def hard_decision(beliefs) -> np.ndarray:
    """Argmax per user; ties go to the lowest index."""
    return np.argmax(np.asarray(beliefs), axis=-1)


def sic_detect(y, H, noise_var: float, L: int = 5, constellation=(-1.0, 1.0)) -> np.ndarray:
    return hard_decision(run_sic(y, H, noise_var, L, constellation))
