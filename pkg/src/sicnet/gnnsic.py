"""GNNSIC: SIC as message passing over a fully connected user graph.

One embedding MLP ``E``, one message MLP ``M`` and one update MLP ``U`` are
shared by every user and every iteration. Per iteration, all users read the
previous beliefs:

    u_i  = E([y, h_i, p_i])
    m_i  = mean_{k != i} softmax(M([u_i, u_k, e_ik]))
    p_i' = softmax(U([u_i, m_i]))

with edge feature ``e_ik = (h_i . h_k, noise_var)``.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Sequence

import numpy as np

from .channel_sim import Dataset
from .sic_classic import hard_decision, uniform_beliefs
from .tensor_nn import (MlpParams, cross_entropy, cross_entropy_grad, init_mlp, mlp_backward, mlp_forward,
                        relu, softmax, softmax_backward)
from .train import TrainConfig, fit

EDGE_DIM = 2


@dataclass
class GnnSicModel:
    embed: MlpParams
    message: MlpParams
    update: MlpParams
    a: int
    L: int
    edge_dim: int = EDGE_DIM

    def __post_init__(self):
        D = 2 * self.a
        M = self.update.out_dim
        if self.embed.out_dim != D or self.embed.out_activation != "relu":
            raise ValueError(f"embedding must end in a ReLU layer of width {D}")
        if self.message.in_dim != 2 * D + self.edge_dim or self.message.out_dim != M:
            raise ValueError(f"message MLP must map R^{2 * D + self.edge_dim} to R^{M}")
        if self.update.in_dim != D + M:
            raise ValueError(f"update MLP must take R^{D + M}")
        if self.message.out_activation != "softmax" or self.update.out_activation != "softmax":
            raise ValueError("message and update MLPs need softmax heads")
        if (self.embed.in_dim - M) % 2:
            raise ValueError("embedding input must be 2N + M")
        if self.L < 1:
            raise ValueError("need at least one iteration")

    @property
    def M(self) -> int:
        return self.update.out_dim

    @property
    def N(self) -> int:
        return (self.embed.in_dim - self.M) // 2

    def arrays(self) -> list[np.ndarray]:
        return self.embed.arrays() + self.message.arrays() + self.update.arrays()

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "GnnSicModel":
        ne, nm = 2 * len(self.embed.weights), 2 * len(self.message.weights)
        return replace(self,
                       embed=self.embed.with_arrays(arrays[:ne]),
                       message=self.message.with_arrays(arrays[ne:ne + nm]),
                       update=self.update.with_arrays(arrays[ne + nm:]))

    def n_params(self) -> int:
        return self.embed.n_params() + self.message.n_params() + self.update.n_params()


def init_gnnsic(N: int, M: int = 2, a: int | None = None, L: int = 5,
                hidden: Sequence[int] = (32, 32, 32), rng: np.random.Generator | int = 0) -> GnnSicModel:
    """``a`` defaults to 2N + M; ``hidden`` gives the hidden width of E, M and U (0 = none)."""
    rng = np.random.default_rng(rng)
    a = 2 * N + M if a is None else a
    D = 2 * a

    def dims(i, h, o):
        return [i, h, o] if h else [i, o]

    embed = init_mlp(dims(2 * N + M, hidden[0], D), rng, "relu")
    message = init_mlp(dims(2 * D + EDGE_DIM, hidden[1], M), rng, "softmax")
    update = init_mlp(dims(D + M, hidden[2], M), rng, "softmax")
    return GnnSicModel(embed, message, update, a, L)


def edge_feature(H, noise_var, i: int, k: int) -> np.ndarray:
    if i == k:
        raise ValueError("no self-loops in the interference graph")
    H = np.asarray(H, dtype=float)
    return np.array([H[:, i] @ H[:, k], float(noise_var)])


@lru_cache(maxsize=None)
def _pairs(K: int):
    """Ordered pairs (i, k), k != i, grouped by i with k ascending; plus scatter matrices."""
    I = np.array([i for i in range(K) for k in range(K) if k != i], dtype=np.intp)
    J = np.array([k for i in range(K) for k in range(K) if k != i], dtype=np.intp)
    SJ = np.zeros((K, len(J)))
    SJ[J, np.arange(len(J))] = 1.0
    return I, J, SJ


def _edges(H: np.ndarray, noise_var, B: int) -> np.ndarray:
    """(B, P, 2) edge features for all ordered pairs."""
    K = H.shape[-1]
    I, J, _ = _pairs(K)
    G = np.einsum("...ni,...nk->...ik", H, H)
    corr = np.broadcast_to(G[..., I, J], (B, len(I)))
    nv = np.broadcast_to(np.asarray(noise_var, dtype=float).reshape(-1, 1), (B, len(I)))
    return np.stack([corr, nv], axis=-1)


def _node_inputs(y: np.ndarray, H: np.ndarray, beliefs: np.ndarray) -> np.ndarray:
    B, K, _ = beliefs.shape
    N = y.shape[-1]
    ys = np.broadcast_to(y[:, None, :], (B, K, N))
    hs = np.broadcast_to(np.swapaxes(H, -1, -2), (B, K, N))
    return np.concatenate([ys, hs, beliefs], axis=-1)


def embed(model: GnnSicModel, y, h_i, p_i) -> np.ndarray:
    return mlp_forward(model.embed, np.concatenate([y, h_i, p_i], axis=-1))[0]


def message_aggregate(model: GnnSicModel, all_u, edges, i: int) -> np.ndarray:
    """Mean over neighbours k != i of softmax(M([u_i, u_k, e_ik])).

    ``all_u`` is (K, 2a); ``edges[k]`` is e_ik (row i is ignored).
    """
    all_u = np.asarray(all_u, dtype=float)
    K = all_u.shape[0]
    if K == 1:
        return np.full(model.M, 1.0 / model.M)
    msgs = [mlp_forward(model.message, np.concatenate([all_u[i], all_u[k], edges[k]]))[0]
            for k in range(K) if k != i]
    return np.mean(msgs, axis=0)


def gnn_update(model: GnnSicModel, u_i, m_i) -> np.ndarray:
    return mlp_forward(model.update, np.concatenate([u_i, m_i], axis=-1))[0]


def _message_forward(msg: MlpParams, u: np.ndarray, edges: np.ndarray):
    """Batched messages for every ordered pair, (B, K(K-1), M).

    The first layer acting on [u_i, u_k, e_ik] is split into per-node
    projections W_a u_i + W_b u_k + W_e e_ik, so its cost scales with K
    rather than K(K-1).
    """
    B, K, D = u.shape
    I, J, _ = _pairs(K)
    W1, b1 = msg.weights[0], msg.biases[0]
    pre = np.take(u @ W1[:, :D].T, I, axis=1) + np.take(u @ W1[:, D:2 * D].T, J, axis=1)
    pre += edges @ W1[:, 2 * D:].T + b1
    if len(msg.weights) == 1:
        out = softmax(pre)
        return out, (pre, out, None)
    tail = MlpParams(msg.weights[1:], msg.biases[1:], msg.out_activation)
    out, t_tail = mlp_forward(tail, relu(pre))
    return out, (pre, out, t_tail)


def _message_backward(msg: MlpParams, tape, u, edges, g_out):
    """Returns (gradient arrays of msg, d/du)."""
    pre, out, t_tail = tape
    B, K, D = u.shape
    I, J, SJ = _pairs(K)
    W1 = msg.weights[0]
    if t_tail is None:
        g_pre = softmax_backward(out, g_out)
        tail_grads = []
    else:
        tail = MlpParams(msg.weights[1:], msg.biases[1:], msg.out_activation)
        gt, g_h = mlp_backward(tail, t_tail, g_out, input_grad=True)
        g_pre = g_h * (pre > 0)
        tail_grads = gt.arrays()
    H = g_pre.shape[-1]
    g_a = g_pre.reshape(B, K, K - 1, H).sum(axis=2)
    g_b = SJ @ g_pre
    uf = u.reshape(-1, D)
    gW1 = np.concatenate([g_a.reshape(-1, H).T @ uf, g_b.reshape(-1, H).T @ uf,
                          g_pre.reshape(-1, H).T @ edges.reshape(-1, edges.shape[-1])], axis=1)
    gb1 = g_pre.sum(axis=(0, 1))
    g_u = g_a @ W1[:, :D] + g_b @ W1[:, D:2 * D]
    return [gW1, gb1] + tail_grads, g_u


def _iteration(model: GnnSicModel, y, H, edges, beliefs):
    B, K, M = beliefs.shape
    x = _node_inputs(y, H, beliefs)
    u, t_e = mlp_forward(model.embed, x)
    if K > 1:
        msgs, t_m = _message_forward(model.message, u, edges)
        m = msgs.reshape(B, K, K - 1, M).mean(axis=2)
    else:
        t_m = None
        m = np.full((B, K, M), 1.0 / M)
    p, t_u = mlp_forward(model.update, np.concatenate([u, m], axis=-1))
    return p, (t_e, t_m, t_u, u)


def _prepare(model: GnnSicModel, y, H, noise_var):
    y = np.asarray(y, dtype=float)
    H = np.asarray(H, dtype=float)
    if y.shape[-1] != model.N or H.shape[-2] != model.N:
        raise ValueError(f"model expects N={model.N} receive antennas")
    single = y.ndim == 1
    yb = y[None] if single else y
    return yb, H, _edges(H, noise_var, yb.shape[0]), single


def gnnsic_forward(model: GnnSicModel, y, H, noise_var, return_tapes: bool = False):
    """Returns (final beliefs, trajectory of L+1 beliefs[, tapes]).

    ``H`` is (N, K) or per-sample (B, N, K); ``noise_var`` a scalar or (B,).
    """
    yb, H, edges, single = _prepare(model, y, H, noise_var)
    K = H.shape[-1]
    beliefs = uniform_beliefs(K, model.M, yb.shape[0])
    traj, tapes = [beliefs], []
    for _ in range(model.L):
        beliefs, t = _iteration(model, yb, H, edges, beliefs)
        traj.append(beliefs)
        tapes.append(t)
    if single:
        traj = [b[0] for b in traj]
    if return_tapes:
        return traj[-1], traj, tapes
    return traj[-1], traj


def gnnsic_detect(model: GnnSicModel, y, H, noise_var, chunk: int = 4096) -> np.ndarray:
    """Hard decisions, computed ``chunk`` samples at a time to bound memory."""
    y = np.asarray(y, dtype=float)
    if y.ndim == 1 or len(y) <= chunk:
        return hard_decision(gnnsic_forward(model, y, H, noise_var)[0])
    H = np.asarray(H, dtype=float)
    nv = np.asarray(noise_var, dtype=float)
    parts = []
    for a in range(0, len(y), chunk):
        sl = slice(a, a + chunk)
        parts.append(hard_decision(gnnsic_forward(model, y[sl], H[sl] if H.ndim == 3 else H,
                                                  nv[sl] if nv.ndim else nv)[0]))
    return np.concatenate(parts)


def loss_and_grad(model: GnnSicModel, y, s, H, noise_var):
    """Mean cross-entropy over samples and users of the final beliefs, and its
    gradient w.r.t. model.arrays() accumulated over all shared iterations."""
    yb, Hm, edges, _ = _prepare(model, y, H, noise_var)
    B = yb.shape[0]
    final, _, tapes = gnnsic_forward(model, yb, Hm, noise_var, return_tapes=True)
    K, N = final.shape[1], model.N
    D = 2 * model.a
    loss = float(np.mean(cross_entropy(final, s)))
    g_p = cross_entropy_grad(final, s, scale=1.0 / (B * K))
    acc = [np.zeros_like(a) for a in model.arrays()]
    ne, nm = 2 * len(model.embed.weights), 2 * len(model.message.weights)
    for l in range(model.L - 1, -1, -1):
        t_e, t_m, t_u, u = tapes[l]
        gU, g_in = mlp_backward(model.update, t_u, g_p, input_grad=True)
        g_u = g_in[..., :D].copy()
        if K > 1:
            g_msg = np.repeat(g_in[..., D:] / (K - 1), K - 1, axis=1)
            gM, g_from_msg = _message_backward(model.message, t_m, u, edges, g_msg)
            g_u += g_from_msg
            for j, a in enumerate(gM):
                acc[ne + j] += a
        gE, g_x = mlp_backward(model.embed, t_e, g_u, input_grad=True)
        for j, a in enumerate(gE.arrays()):
            acc[j] += a
        for j, a in enumerate(gU.arrays()):
            acc[ne + nm + j] += a
        g_p = g_x[..., 2 * N:]
    return loss, acc


def mean_loss(model: GnnSicModel, ds: Dataset, H, noise_var) -> float:
    return float(np.mean(cross_entropy(gnnsic_forward(model, ds.y, H, noise_var)[0], ds.s)))


def gnnsic_train(model: GnnSicModel, dataset: Dataset, cfg: TrainConfig, H=None,
                 noise_var: float | None = None, val: Dataset | None = None) -> tuple[GnnSicModel, dict]:
    """End-to-end training; ``H``/``noise_var`` are the receiver's CSI (default: the dataset's)."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    H = dataset.spec.H if H is None else np.asarray(H, dtype=float)
    nv = dataset.spec.noise_var if noise_var is None else noise_var

    def lg(arrays, idx):
        h = H[idx] if H.ndim == 3 else H
        v = nv[idx] if np.ndim(nv) else nv
        return loss_and_grad(model.with_arrays(arrays), dataset.y[idx], dataset.s[idx], h, v)

    vl = None if val is None else (lambda arrs: mean_loss(model.with_arrays(arrs), val, H, nv))
    arrays, hist = fit(model.arrays(), lg, len(dataset), cfg, vl, tag="gnnsic")
    return model.with_arrays(arrays), hist
