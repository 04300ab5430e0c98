"""Mini-batch Adam loop shared by the learned detectors."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor_nn import AdamState, adam_step

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 100
    batch: int = 64
    lr: float = 0.005
    seed: int = 0
    patience: int | None = None  # early stopping on validation loss; off when None


# loss_and_grad(arrays, idx) -> (mean loss over the batch, grads aligned with arrays)
LossGrad = Callable[[Sequence[np.ndarray], np.ndarray], tuple[float, list[np.ndarray]]]


def fit(arrays: list[np.ndarray], loss_and_grad: LossGrad, n: int, cfg: TrainConfig,
        val_loss: Callable[[Sequence[np.ndarray]], float] | None = None,
        tag: str = "") -> tuple[list[np.ndarray], dict]:
    """Run ``cfg.epochs`` shuffled passes over ``n`` samples.

    With ``val_loss`` the returned arrays are the epoch with the lowest
    validation loss; without it they are the final ones. Also returns a
    history dict with per-epoch ``loss`` and, if given, ``val_loss``.
    """
    rng = np.random.default_rng(cfg.seed)
    shapes = [a.shape for a in arrays]
    cuts = np.cumsum([a.size for a in arrays])[:-1]

    def unpack(flat):
        return [p.reshape(sh) for p, sh in zip(np.split(flat, cuts), shapes)]

    def pack(arrs):
        return np.concatenate([a.ravel() for a in arrs])

    flat = pack(arrays)
    state = AdamState.for_arrays([flat], lr=cfg.lr)
    history = {"loss": [], "val_loss": []}
    best, best_val, stale = flat, np.inf, 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total, seen = 0.0, 0
        for start in range(0, n, cfg.batch):
            idx = order[start:start + cfg.batch]
            loss, grads = loss_and_grad(unpack(flat), idx)
            if not np.isfinite(loss):
                raise TrainingError(f"{tag} non-finite loss at epoch {epoch}")
            (flat,), state = adam_step(state, [flat], [pack(grads)])
            total += loss * len(idx)
            seen += len(idx)
        history["loss"].append(total / seen)
        if val_loss is not None:
            v = float(val_loss(unpack(flat)))
            history["val_loss"].append(v)
            if v < best_val:
                best, best_val, stale = flat, v, 0
            else:
                stale += 1
            if cfg.patience is not None and stale >= cfg.patience:
                log.info("%s early stop at epoch %d", tag, epoch)
                break
        log.debug("%s epoch %d loss %.5f", tag, epoch, history["loss"][-1])
    if val_loss is not None:
        flat = best
    return unpack(flat), history
