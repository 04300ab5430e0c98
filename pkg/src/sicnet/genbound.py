"""Norm-based generalization bounds for networks of MLPs.

A detector is described by an outer DAG of L iterations whose blocks are
inner MLPs of depth ``N_depth``. The complexity terms

    A = (N_depth + 1) L ln 2 + L ln M + sum_l ln d_out[l] + sum_{l,n} ln d_in[l][n]
    B = prod(d_out) * prod(d_in) * E0

feed a Rademacher bound ``K rho_in^L rho_out (1 + sqrt(2A)) sqrt(B) / T`` and
a margin-based gap bound. Logarithms are natural.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .tensor_nn import MlpParams, frobenius_rho_inner

SAMPLE_CAP = 10**15


@dataclass
class ArchDescriptor:
    K: int
    L: int
    N_depth: int
    M: int
    d_out: list[float]
    d_in: list[list[float]]
    rho_inner: float = 1.0
    rho_outer: float = 1.0
    E0: float = 1.0
    pred_products: float | None = None  # exact max path product; defaults to prod of degrees

    def __post_init__(self):
        if min(self.K, self.L, self.N_depth) < 1 or self.M < 2:
            raise ValueError("K, L, N_depth must be >= 1 and M >= 2")
        self.d_out = [float(d) for d in self.d_out]
        self.d_in = [[float(d) for d in row] for row in self.d_in]
        if len(self.d_out) != self.L:
            raise ValueError(f"need {self.L} outer degrees, got {len(self.d_out)}")
        if len(self.d_in) != self.L or any(len(r) != self.N_depth - 1 for r in self.d_in):
            raise ValueError(f"inner degree grid must be {self.L} x {self.N_depth - 1}")
        if any(d < 1 for d in self.d_out) or any(d < 1 for r in self.d_in for d in r):
            raise ValueError("degrees must be >= 1")
        if self.rho_inner <= 0 or self.rho_outer <= 0:
            raise ValueError("norm budgets must be positive")
        if self.E0 < 0:
            raise ValueError("input energy must be nonnegative")
        if self.pred_products is not None and self.pred_products < 1:
            raise ValueError("path products must be >= 1")

    @classmethod
    def uniform(cls, K: int, L: int, N_depth: int, M: int, d_out: float, d_in: float, **kw) -> "ArchDescriptor":
        """Same outer degree for every iteration and same inner degree for every layer."""
        return cls(K, L, N_depth, M, [d_out] * L, [[d_in] * (N_depth - 1) for _ in range(L)], **kw)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ArchDescriptor":
        return cls(**d)


@dataclass
class BoundQuery:
    T: int = 1
    gamma: float = 0.1
    delta: float = 0.05

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if self.gamma <= 0:
            raise ValueError("margin must be positive")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")


class BoundTerms(NamedTuple):
    A: float
    B: float
    rho: float


def complexity_A(desc: ArchDescriptor) -> float:
    return ((desc.N_depth + 1) * desc.L * math.log(2) + desc.L * math.log(desc.M)
            + sum(math.log(d) for d in desc.d_out)
            + sum(math.log(d) for row in desc.d_in for d in row))


def complexity_B(desc: ArchDescriptor) -> float:
    if desc.pred_products is not None:
        return desc.pred_products * desc.E0
    return math.prod(desc.d_out) * math.prod(d for row in desc.d_in for d in row) * desc.E0


def descriptor_rho(desc: ArchDescriptor, unit_outer: bool = False) -> float:
    """rho_in^L * rho_out, or rho_in^L when the outer coupling has unit norm."""
    rho = desc.rho_inner ** desc.L
    return rho if unit_outer else rho * desc.rho_outer


def terms(desc: ArchDescriptor, unit_outer: bool = False) -> BoundTerms:
    return BoundTerms(complexity_A(desc), complexity_B(desc), descriptor_rho(desc, unit_outer))


def rademacher_bound(desc: ArchDescriptor, T: int) -> float:
    if T < 1:
        raise ValueError("T must be >= 1")
    A, B = complexity_A(desc), complexity_B(desc)
    return desc.K * descriptor_rho(desc) / T * (1 + math.sqrt(2 * A)) * math.sqrt(B)


def gap_from_terms(t: BoundTerms, K: int, q: BoundQuery) -> float:
    A, B, rho = t
    first = 2 * math.sqrt(2) * K * (rho + 1) / (q.gamma * q.T) * (1 + math.sqrt(2 * A)) * math.sqrt(B)
    second = 3 * math.sqrt(math.log(2 * (rho + 2) ** 2 / q.delta) / (2 * q.T))
    return first + second


def generalization_gap_bound(desc: ArchDescriptor, q: BoundQuery, unit_outer: bool = False) -> float:
    """Uniform bound on (expected 0/1 risk) - (empirical margin error).

    ``unit_outer=True`` drops rho_outer from the norm product, which is valid
    when blocks interact only through feature concatenation.
    """
    return gap_from_terms(terms(desc, unit_outer), desc.K, q)


def deepsic_terms(d_out: float, d_in: float, L: int, N_depth: int, M: int, E0: float,
                  rho_inner: float = 1.0) -> BoundTerms:
    """Upper bounds on A and B for K*L unshared blocks with global degrees, and rho = rho_in^L."""
    A = L * math.log(2 ** (N_depth + 1) * M * d_out * d_in ** (N_depth - 1))
    B = d_out ** L * d_in ** (L * (N_depth - 1)) * E0
    return BoundTerms(A, B, rho_inner ** L)


def gnnsic_terms(d_out: float, d_in: float, N_depth: int, M: int, E0: float,
                 rho_inner: float = 1.0) -> BoundTerms:
    """Shared blocks: the outer DAG collapses to one layer whatever the iteration count."""
    return deepsic_terms(d_out, d_in, 1, N_depth, M, E0, rho_inner)


def _smallest_T(bound: Callable[[int], float], eps: float) -> int | None:
    if eps <= 0:
        raise ValueError("target gap must be positive")
    if bound(SAMPLE_CAP) > eps:
        return None
    lo, hi = 0, SAMPLE_CAP  # bound(lo) > eps (or lo == 0), bound(hi) <= eps
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if bound(mid) <= eps:
            hi = mid
        else:
            lo = mid
    return hi


def sample_complexity(target: ArchDescriptor | BoundTerms, eps: float, gamma: float = 0.1,
                      delta: float = 0.05, K: int | None = None, unit_outer: bool = False) -> int | None:
    """Smallest T with gap bound <= eps, or None if that needs more than ``SAMPLE_CAP`` samples.

    ``target`` is a descriptor, or precomputed :class:`BoundTerms` together with ``K``.
    """
    if isinstance(target, ArchDescriptor):
        t, K = terms(target, unit_outer), target.K
    else:
        if K is None:
            raise ValueError("K is required with precomputed terms")
        t = BoundTerms(*target)
    return _smallest_T(lambda T: gap_from_terms(t, K, BoundQuery(T, gamma, delta)), eps)


def margin_error(scores, labels, gamma: float) -> float:
    """Count of (sample, user) pairs whose true score does not beat every rival by more than
    ``gamma``, divided by the number of samples. ``scores`` is (T, K, M), ``labels`` (T, K)."""
    if gamma < 0:
        raise ValueError("margin must be nonnegative")
    f = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(np.intp)
    if f.ndim == 2:
        f, labels = f[:, None], labels[:, None]
    true = np.take_along_axis(f, labels[..., None], axis=-1)[..., 0]
    rivals = f.copy()
    np.put_along_axis(rivals, labels[..., None], -np.inf, axis=-1)
    violated = rivals.max(axis=-1) + gamma >= true
    return float(violated.sum()) / f.shape[0]


def mc_rademacher_lower(sampler: Callable[[np.random.Generator], Callable], X, n_weights: int,
                        n_signs: int, rng: np.random.Generator | int = 0) -> tuple[float, float]:
    """Monte-Carlo lower estimate of the empirical Rademacher complexity.

    ``sampler(rng)`` returns one member f of the class; ``f(X)`` gives (T, K, M)
    scores. The supremum is replaced by a max over ``n_weights`` draws, so the
    estimate is biased low. Weights and signs use independent substreams, so
    the first n draws of a larger run equal a run with ``n_weights = n``.
    Returns (estimate, standard error over sign draws).
    """
    X = np.asarray(X, dtype=float)
    T = X.shape[0]
    rng_w, rng_s = np.random.default_rng(rng).spawn(2)
    F = np.stack([np.asarray(sampler(rng_w)(X), dtype=float).reshape(T, -1) for _ in range(n_weights)])
    xi = rng_s.choice([-1.0, 1.0], size=(n_signs,) + F.shape[1:])
    corr = np.abs(np.einsum("std,wtd->sw", xi, F))
    best = corr.max(axis=1) / T
    se = float(best.std(ddof=1) / math.sqrt(n_signs)) if n_signs > 1 else float("nan")
    return float(best.mean()), se


def budget_mlp_sampler(dims: Sequence[int], rho_inner: float = 1.0, rho_outer: float = 1.0):
    """Sampler of bias-free ReLU MLPs on the boundary of the norm budget.

    Every hidden neuron's weight row has unit norm and the last layer has
    Frobenius norm ``rho_inner * rho_outer``; outputs are (T, 1, M) scores.
    """
    def sample(rng: np.random.Generator):
        Ws = [rng.standard_normal((o, i)) for i, o in zip(dims[:-1], dims[1:])]
        Ws = [W / np.linalg.norm(W, axis=1, keepdims=True) for W in Ws[:-1]] + \
             [Ws[-1] * (rho_inner * rho_outer / np.linalg.norm(Ws[-1]))]

        def f(X):
            h = X
            for W in Ws[:-1]:
                h = np.maximum(h @ W.T, 0.0)
            return (h @ Ws[-1].T)[:, None, :]
        f.weights = Ws
        return f
    return sample


def param_count(model) -> int:
    return int(model.n_params())


def measured_rho_inner(model) -> float:
    """Largest product norm over the model's MLP blocks (every block for DeepSIC,
    the shared E, M and U for GNNSIC)."""
    if hasattr(model, "columns"):
        blocks: list[MlpParams] = [b for col in model.blocks for b in col]
    elif isinstance(model, MlpParams):
        blocks = [model]
    else:
        blocks = [model.embed, model.message, model.update]
    return max(frobenius_rho_inner(b) for b in blocks)


@dataclass
class BoundReport:
    A: float
    B: float
    rho: float
    rademacher: float
    gap: float
    T_needed: int | None


def report(desc: ArchDescriptor, q: BoundQuery, eps: float = 0.1, unit_outer: bool = False) -> BoundReport:
    t = terms(desc, unit_outer)
    return BoundReport(t.A, t.B, t.rho, rademacher_bound(desc, q.T),
                       generalization_gap_bound(desc, q, unit_outer),
                       sample_complexity(desc, eps, q.gamma, q.delta, unit_outer=unit_outer))
