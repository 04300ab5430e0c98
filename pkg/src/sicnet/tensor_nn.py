"""Dense MLP primitives with hand-written reverse mode.

Everything here works on float64 numpy arrays. Inputs may be a single
vector of shape ``(d,)`` or a batch of row vectors of shape ``(B, d)``;
gradients returned by :func:`mlp_backward` are summed over the batch.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

OUT_ACTIVATIONS = ("identity", "relu", "softmax")
PROB_FLOOR = 1e-12


class ShapeError(ValueError):
    pass


@dataclass
class MlpParams:
    """Weights ``W_n`` (rows x cols) and biases ``b_n`` of a dense MLP.

    Hidden layers always use ReLU; ``out_activation`` selects what the last
    layer applies.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    out_activation: str = "identity"

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("need one bias per weight matrix and at least one layer")
        if self.out_activation not in OUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {self.out_activation!r}")
        for n, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim not in (2, 3) or b.shape != W.shape[:-1]:
                raise ShapeError(f"layer {n}: weight {W.shape} and bias {b.shape} disagree")
            if n > 0 and W.shape[-1] != self.weights[n - 1].shape[-2]:
                raise ShapeError(
                    f"layer {n}: expects {W.shape[-1]} inputs but layer {n - 1} "
                    f"emits {self.weights[n - 1].shape[-2]}"
                )

    @property
    def stacked(self) -> bool:
        """True when every weight carries a leading group axis (G independent MLPs)."""
        return self.weights[0].ndim == 3

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[-1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[-2]

    @property
    def dims(self) -> list[int]:
        return [self.in_dim] + [W.shape[-2] for W in self.weights]

    def member(self, g: int) -> "MlpParams":
        """The g-th MLP of a stacked group, as views."""
        return MlpParams([W[g] for W in self.weights], [b[g] for b in self.biases], self.out_activation)

    def arrays(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "MlpParams":
        return MlpParams(list(arrays[0::2]), list(arrays[1::2]), self.out_activation)

    def n_params(self) -> int:
        return int(sum(a.size for a in self.arrays()))

    def copy(self) -> "MlpParams":
        return copy.deepcopy(self)


@dataclass
class Tape:
    inputs: list[np.ndarray]  # input to each layer, ([G,] B, cols)
    pre: list[np.ndarray]  # pre-activation of each layer, ([G,] B, rows)
    output: np.ndarray
    shape: tuple  # leading shape of the caller's x


def init_mlp(dims: Sequence[int], rng: np.random.Generator,
             out_activation: str = "identity") -> MlpParams:
    """Glorot-uniform weights, zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        s = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-s, s, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases, out_activation)


def zeros_like_mlp(params: MlpParams) -> MlpParams:
    return params.with_arrays([np.zeros_like(a) for a in params.arrays()])


def relu(x):
    return np.maximum(x, 0.0)


def softmax(v: np.ndarray) -> np.ndarray:
    """Softmax along the last axis, shifted by the max for overflow safety."""
    v = np.asarray(v, dtype=float)
    z = v - v.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(p: np.ndarray, grad_p: np.ndarray) -> np.ndarray:
    """Pull a gradient w.r.t. softmax outputs back to the logits."""
    return p * (grad_p - np.sum(p * grad_p, axis=-1, keepdims=True))


def cross_entropy(probs, label) -> float | np.ndarray:
    """-log(probs[label]) with probabilities clamped to [1e-12, 1].

    Works row-wise when ``probs`` is (..., M) and ``label`` an int array.
    """
    probs = np.asarray(probs, dtype=float)
    label = np.asarray(label)
    M = probs.shape[-1]
    if np.any(label < 0) or np.any(label >= M):
        raise IndexError(f"label out of range for {M} classes")
    picked = np.take_along_axis(probs, label[..., None].astype(np.intp), axis=-1)[..., 0]
    loss = -np.log(np.clip(picked, PROB_FLOOR, 1.0))
    return float(loss) if loss.ndim == 0 else loss


def cross_entropy_grad(probs: np.ndarray, labels: np.ndarray, scale: float = 1.0) -> np.ndarray:
    """d/dprobs of ``scale * sum(-log clamp(p[label]))``; zero where the clamp is active."""
    g = np.zeros_like(probs)
    lab = labels[..., None].astype(np.intp)
    picked = np.take_along_axis(probs, lab, axis=-1)
    active = picked > PROB_FLOOR
    np.put_along_axis(g, lab, np.where(active, -scale / np.maximum(picked, PROB_FLOOR), 0.0), axis=-1)
    return g


def stack_mlps(mlps: Sequence[MlpParams]) -> MlpParams:
    """Group same-shaped MLPs into one stacked MlpParams (copies)."""
    n = len(mlps[0].weights)
    return MlpParams([np.stack([p.weights[i] for p in mlps]) for i in range(n)],
                     [np.stack([p.biases[i] for p in mlps]) for i in range(n)],
                     mlps[0].out_activation)


def mlp_forward(params: MlpParams, x) -> tuple[np.ndarray, Tape]:
    """Forward pass. ``x`` is (..., d); for stacked params it is (G, B, d)."""
    x = np.asarray(x, dtype=float)
    if params.stacked:
        if x.ndim != 3 or x.shape[0] != params.weights[0].shape[0]:
            raise ShapeError(f"stacked MLP of {params.weights[0].shape[0]} needs (G, B, d) input, got {x.shape}")
        lead = x.shape[:-1]
        h = x
    else:
        lead = x.shape[:-1]
        h = x.reshape(-1, x.shape[-1])
    inputs, pre = [], []
    last = len(params.weights) - 1
    for n, (W, b) in enumerate(zip(params.weights, params.biases)):
        if h.shape[-1] != W.shape[-1]:
            raise ShapeError(f"layer {n}: got {h.shape[-1]} inputs, expected {W.shape[-1]}")
        inputs.append(h)
        a = h @ W.swapaxes(-1, -2) + b[..., None, :] if params.stacked else h @ W.T + b
        pre.append(a)
        if n < last or params.out_activation == "relu":
            h = relu(a)
        elif params.out_activation == "softmax":
            h = softmax(a)
        else:
            h = a
    out = h if params.stacked else h.reshape(lead + (h.shape[-1],))
    return out, Tape(inputs, pre, h, lead)


def mlp_backward(params: MlpParams, tape: Tape, grad_output, input_grad: bool = False):
    """Reverse-mode gradient of ``<grad_output, output>``.

    Returns an :class:`MlpParams` holding the gradients (summed over the
    batch); with ``input_grad=True`` also returns d/dx.
    """
    g = np.asarray(grad_output, dtype=float)
    if not params.stacked:
        g = g.reshape(-1, g.shape[-1])
    if len(tape.pre) != len(params.weights) or g.shape != tape.output.shape:
        raise ShapeError("tape does not belong to these parameters")
    last = len(params.weights) - 1
    gW = [None] * len(params.weights)
    gb = [None] * len(params.weights)
    for n in range(last, -1, -1):
        W = params.weights[n]
        a = tape.pre[n]
        if tape.inputs[n].shape[-1] != W.shape[-1] or a.shape[-1] != W.shape[-2]:
            raise ShapeError(f"layer {n}: tape shape mismatch")
        if n < last or params.out_activation == "relu":
            g = g * (a > 0)
        elif params.out_activation == "softmax":
            g = softmax_backward(tape.output, g)
        gW[n] = g.swapaxes(-1, -2) @ tape.inputs[n]
        gb[n] = g.sum(axis=-2)
        if n > 0 or input_grad:
            g = g @ W
    grads = MlpParams(gW, gb, params.out_activation)
    if input_grad:
        return grads, (g if params.stacked else g.reshape(tape.shape + (g.shape[-1],)))
    return grads


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    lr: float = 0.005
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_arrays(cls, arrays: Sequence[np.ndarray], lr: float = 0.005, **kw) -> "AdamState":
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], lr=lr, **kw)


def adam_step(state: AdamState, params: Sequence[np.ndarray],
              grads: Sequence[np.ndarray]) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update. Pure: inputs are not modified."""
    if not (len(params) == len(grads) == len(state.m)):
        raise ShapeError("parameter, gradient and moment lists differ in length")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"shape mismatch {p.shape} vs {g.shape} vs {m.shape}")
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        new_p.append(p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(new_m, new_v, t, state.lr, b1, b2, state.eps)


def finite_diff_grad(loss_fn: Callable, params, eps: float = 1e-6):
    """Central differences of ``loss_fn`` w.r.t. every parameter entry.

    ``params`` is an :class:`MlpParams`, a list of arrays, or a single array;
    the result has the same structure. Arrays keep their floating dtype, so an
    extended-precision ``loss_fn`` can be differenced in ``np.longdouble``.
    """
    if isinstance(params, MlpParams):
        arrays = params.arrays()
        rebuild = params.with_arrays
    elif isinstance(params, np.ndarray):
        arrays = [params]
        rebuild = lambda arrs: arrs[0]  # noqa: E731
    else:
        arrays = list(params)
        rebuild = list
    work = [np.array(a, dtype=np.result_type(a, np.float64), copy=True) for a in arrays]
    grads = [np.zeros_like(a) for a in work]
    for a, g in zip(work, grads):
        flat, gflat = a.reshape(-1), g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            up = loss_fn(rebuild(work))
            flat[j] = orig - eps
            down = loss_fn(rebuild(work))
            flat[j] = orig
            gflat[j] = (up - down) / (2 * eps)
    return rebuild(grads)


def max_rel_error(a: Sequence[np.ndarray], b: Sequence[np.ndarray], floor: float = 1e-8) -> float:
    """max |a-b| / max(|a|, |b|, floor) over all entries."""
    worst = 0.0
    for x, y in zip(a, b):
        denom = np.maximum(np.maximum(np.abs(x), np.abs(y)), floor)
        worst = max(worst, float(np.max(np.abs(x - y) / denom)))
    return worst


def frobenius_rho_inner(params: MlpParams) -> float:
    """Product norm: ||W_last||_F times, per hidden layer, the largest neuron (row) norm."""
    rho = float(np.linalg.norm(params.weights[-1]))
    for W in params.weights[:-1]:
        rho *= float(np.max(np.linalg.norm(W, axis=1)))
    return rho
