"""DeepSIC: one independent MLP block per (iteration, user).

Block (l, k) maps ``[y, beliefs of the other users at l-1]`` to user k's
posterior at iteration l. Each other user contributes its first M-1
probabilities (the last one is implied). The K blocks of an iteration are
stored stacked so a whole column runs as one batched matmul; they share no
parameters.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .channel_sim import Dataset
from .sic_classic import hard_decision, uniform_beliefs
from .tensor_nn import (MlpParams, cross_entropy, cross_entropy_grad, init_mlp, mlp_backward,
                        mlp_forward, stack_mlps)
from .train import TrainConfig, fit


@dataclass
class DeepSicModel:
    columns: list[MlpParams]  # columns[l] stacks the K blocks of iteration l
    N: int
    K: int
    M: int

    def __post_init__(self):
        for l, col in enumerate(self.columns):
            if not col.stacked or col.weights[0].shape[0] != self.K:
                raise ValueError(f"iteration {l} must stack {self.K} blocks")
            if col.in_dim != self.input_dim or col.out_dim != self.M or col.out_activation != "softmax":
                raise ValueError(f"iteration {l} blocks do not map R^{self.input_dim} to a softmax over {self.M}")

    @property
    def L(self) -> int:
        return len(self.columns)

    @property
    def input_dim(self) -> int:
        return self.N + (self.K - 1) * (self.M - 1)

    @property
    def blocks(self) -> list[list[MlpParams]]:
        """blocks[l][k] as views into the stacked columns."""
        return [[col.member(k) for k in range(self.K)] for col in self.columns]

    def arrays(self) -> list[np.ndarray]:
        return [a for col in self.columns for a in col.arrays()]

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "DeepSicModel":
        cols, pos = [], 0
        for col in self.columns:
            n = 2 * len(col.weights)
            cols.append(col.with_arrays(arrays[pos:pos + n]))
            pos += n
        return DeepSicModel(cols, self.N, self.K, self.M)

    def n_params(self) -> int:
        return sum(col.n_params() for col in self.columns)

    def block_n_params(self) -> int:
        return self.columns[0].member(0).n_params()


def init_deepsic(N: int, K: int, M: int = 2, L: int = 5, hidden: Sequence[int] = (60,),
                 rng: np.random.Generator | int = 0) -> DeepSicModel:
    rng = np.random.default_rng(rng)
    dims = [N + (K - 1) * (M - 1), *hidden, M]
    cols = [stack_mlps([init_mlp(dims, rng, "softmax") for _ in range(K)]) for _ in range(L)]
    return DeepSicModel(cols, N, K, M)


def from_blocks(blocks: Sequence[Sequence[MlpParams]], N: int, K: int, M: int) -> DeepSicModel:
    return DeepSicModel([stack_mlps(col) for col in blocks], N, K, M)


def assemble_block_input(y, beliefs, k: int) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    beliefs = np.asarray(beliefs, dtype=float)
    K, M = beliefs.shape[-2:]
    parts = [y] + [beliefs[..., i, :M - 1] for i in range(K) if i != k]
    return np.concatenate(parts, axis=-1)


@lru_cache(maxsize=None)
def _selection(K: int, M: int) -> tuple[np.ndarray, np.ndarray]:
    """Gather indices (K, (K-1)(M-1)) into flattened beliefs[..., :M-1], and the
    matching scatter matrix used to route input gradients back."""
    sel = np.array([[i * (M - 1) + m for i in range(K) if i != k for m in range(M - 1)]
                    for k in range(K)], dtype=np.intp).reshape(K, (K - 1) * (M - 1))
    scatter = np.zeros((sel.size, K * (M - 1)))
    scatter[np.arange(sel.size), sel.ravel()] = 1.0
    return sel, scatter


def _column_input(y: np.ndarray, beliefs: np.ndarray) -> np.ndarray:
    B, K, M = beliefs.shape
    sel, _ = _selection(K, M)
    flat = beliefs[..., :M - 1].reshape(B, K * (M - 1))
    others = flat[:, sel].transpose(1, 0, 2)
    ys = np.broadcast_to(y, (K,) + y.shape)
    return np.concatenate([ys, others], axis=-1)


def _column_forward(col: MlpParams, y: np.ndarray, beliefs: np.ndarray):
    out, tape = mlp_forward(col, _column_input(y, beliefs))
    return out.transpose(1, 0, 2), tape


def deepsic_forward(model: DeepSicModel, y, return_tapes: bool = False):
    """Returns (final beliefs, trajectory of L+1 beliefs[, tapes per iteration])."""
    y = np.asarray(y, dtype=float)
    if y.shape[-1] != model.N:
        raise ValueError(f"expected received vectors of length {model.N}, got {y.shape[-1]}")
    single = y.ndim == 1
    yb = y[None] if single else y
    beliefs = uniform_beliefs(model.K, model.M, yb.shape[0])
    traj, tapes = [beliefs], []
    for col in model.columns:
        beliefs, t = _column_forward(col, yb, beliefs)
        traj.append(beliefs)
        tapes.append(t)
    if single:
        traj = [b[0] for b in traj]
    final = traj[-1]
    if return_tapes:
        return final, traj, tapes
    return final, traj


def deepsic_detect(model: DeepSicModel, y) -> np.ndarray:
    return hard_decision(deepsic_forward(model, y)[0])


def e2e_loss_and_grad(model: DeepSicModel, y: np.ndarray, s: np.ndarray):
    """Mean cross-entropy of the final beliefs and its gradient w.r.t. model.arrays()."""
    B = y.shape[0]
    K, M, N = model.K, model.M, model.N
    _, scatter = _selection(K, M)
    final, _, tapes = deepsic_forward(model, y, return_tapes=True)
    loss = float(np.mean(cross_entropy(final, s)))
    g_beliefs = cross_entropy_grad(final, s, scale=1.0 / (B * K))
    grads = [None] * model.L
    for l in range(model.L - 1, -1, -1):
        col = model.columns[l]
        gp, gx = mlp_backward(col, tapes[l], g_beliefs.transpose(1, 0, 2), input_grad=True)
        grads[l] = gp
        if l == 0:
            break
        g_others = gx[..., N:].transpose(1, 0, 2).reshape(B, -1)
        g_beliefs = np.zeros((B, K, M))
        g_beliefs[..., :M - 1] = (g_others @ scatter).reshape(B, K, M - 1)
    return loss, [a for gp in grads for a in gp.arrays()]


def mean_loss(model: DeepSicModel, ds: Dataset) -> float:
    return float(np.mean(cross_entropy(deepsic_forward(model, ds.y)[0], ds.s)))


def train_e2e(model: DeepSicModel, dataset: Dataset, cfg: TrainConfig,
              val: Dataset | None = None) -> tuple[DeepSicModel, dict]:
    """Backpropagate the final-iteration loss through all L columns."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")

    def loss_and_grad(arrays, idx):
        return e2e_loss_and_grad(model.with_arrays(arrays), dataset.y[idx], dataset.s[idx])

    vl = None if val is None else (lambda arrs: mean_loss(model.with_arrays(arrs), val))
    arrays, hist = fit(model.arrays(), loss_and_grad, len(dataset), cfg, vl, tag="deepsic-e2e")
    return model.with_arrays(arrays), hist


def train_sequential(model: DeepSicModel, dataset: Dataset, cfg: TrainConfig,
                     val: Dataset | None = None) -> tuple[DeepSicModel, dict]:
    """Train column 1, freeze it, feed its beliefs to column 2, and so on.

    ``cfg.epochs`` applies to each column.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    columns = list(model.columns)
    K, M = model.K, model.M
    prev = uniform_beliefs(K, M, len(dataset))
    prev_val = None if val is None else uniform_beliefs(K, M, len(val))
    history = {"loss": [], "val_loss": []}
    for l in range(model.L):
        col = columns[l]

        def loss_and_grad(arrays, idx, col=col, inputs=prev):
            c = col.with_arrays(arrays)
            out, tape = _column_forward(c, dataset.y[idx], inputs[idx])
            s = dataset.s[idx]
            g = cross_entropy_grad(out, s, scale=1.0 / (len(idx) * K))
            return float(np.mean(cross_entropy(out, s))), mlp_backward(c, tape, g.transpose(1, 0, 2)).arrays()

        def val_loss(arrays, col=col, pv=prev_val):
            out, _ = _column_forward(col.with_arrays(arrays), val.y, pv)
            return float(np.mean(cross_entropy(out, val.s)))
        vl = val_loss if val is not None else None

        col_cfg = TrainConfig(cfg.epochs, cfg.batch, cfg.lr, cfg.seed + l, cfg.patience)
        arrays, hist = fit(col.arrays(), loss_and_grad, len(dataset), col_cfg, vl,
                           tag=f"deepsic-seq[{l}]")
        columns[l] = col.with_arrays(arrays)
        history["loss"] += hist["loss"]
        history["val_loss"] += hist["val_loss"]
        prev, _ = _column_forward(columns[l], dataset.y, prev)
        if val is not None:
            prev_val, _ = _column_forward(columns[l], val.y, prev_val)
    return DeepSicModel(columns, model.N, model.K, model.M), history
