"""Channel models, CSI perturbation and labelled datasets.

Signals are real-valued. A symbol vector is carried around as integer
indices into the constellation; ``constellation[s]`` maps them to values.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

KINDS = ("linear", "quantized", "poisson")
BPSK = (-1.0, 1.0)


def pam_constellation(M: int) -> tuple[float, ...]:
    """Symmetric M-PAM points -(M-1), ..., M-1 in steps of 2 (BPSK for M=2)."""
    if M < 2:
        raise ValueError("M must be >= 2")
    return tuple(float(2 * m - (M - 1)) for m in range(M))


def default_channel_matrix(N: int, K: int) -> np.ndarray:
    """Exponential-decay profile H[n, k] = exp(-|n - k|)."""
    if N < 1 or K < 1:
        raise ValueError("N and K must be positive")
    n = np.arange(N)[:, None]
    k = np.arange(K)[None, :]
    return np.exp(-np.abs(n - k).astype(float))


def gaussian_channel_matrix(N: int, K: int, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal((N, K)) / np.sqrt(N)


def snr_to_noise_variance(snr_db: float) -> float:
    return 10.0 ** (-snr_db / 10.0)


def quantize(v, step: float = 1.0):
    """Mid-rise uniform quantizer."""
    return step * (np.floor(np.asarray(v) / step) + 0.5)


@dataclass
class ChannelSpec:
    kind: str = "linear"
    N: int = 6
    K: int = 6
    H: np.ndarray | None = None
    constellation: tuple = BPSK
    snr_db: float = 10.0
    quant_step: float = 1.0
    poisson_bias: float = 1.0
    csi_noise_var: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown channel kind {self.kind!r}")
        if self.H is None:
            self.H = default_channel_matrix(self.N, self.K)
        self.H = np.asarray(self.H, dtype=float)
        if self.H.shape != (self.N, self.K) or not np.all(np.isfinite(self.H)):
            raise ValueError(f"H must be a finite {self.N}x{self.K} matrix, got {self.H.shape}")
        self.constellation = tuple(float(c) for c in self.constellation)
        if len(self.constellation) < 2 or len(set(self.constellation)) != len(self.constellation):
            raise ValueError("constellation needs at least two distinct points")
        if self.quant_step <= 0:
            raise ValueError("quant_step must be positive")
        if self.poisson_bias < 0 or self.csi_noise_var < 0:
            raise ValueError("poisson_bias and csi_noise_var must be nonnegative")

    @property
    def M(self) -> int:
        return len(self.constellation)

    @property
    def noise_var(self) -> float:
        return snr_to_noise_variance(self.snr_db)

    def symbols(self, s) -> np.ndarray:
        return np.asarray(self.constellation)[np.asarray(s)]

    def at_snr(self, snr_db: float) -> "ChannelSpec":
        return replace(self, snr_db=float(snr_db))


def _on_off(spec: ChannelSpec, s) -> np.ndarray:
    """Map symbol values affinely onto [0, 1] for the intensity channel."""
    c = np.asarray(spec.constellation)
    lo, hi = c.min(), c.max()
    return (spec.symbols(s) - lo) / (hi - lo)


def transmit(spec: ChannelSpec, s, rng: np.random.Generator, H: np.ndarray | None = None) -> np.ndarray:
    """Channel output for index vector(s) ``s`` of shape (K,) or (T, K).

    ``H`` overrides ``spec.H``; it may be (N, K) or per-sample (T, N, K).
    """
    s = np.asarray(s)
    if np.any(s < 0) or np.any(s >= spec.M):
        raise ValueError("symbol index out of range")
    H = spec.H if H is None else np.asarray(H, dtype=float)
    if spec.kind == "poisson":
        x = _on_off(spec, s)
        rate = np.sqrt(10.0 ** (spec.snr_db / 10.0)) * _apply(H, x) + spec.poisson_bias
        if np.any(rate <= 0):
            raise ValueError("Poisson rate must be positive; raise poisson_bias")
        return rng.poisson(rate).astype(float)
    clean = _apply(H, spec.symbols(s))
    y = clean + np.sqrt(spec.noise_var) * rng.standard_normal(clean.shape)
    if spec.kind == "quantized":
        y = quantize(y, spec.quant_step)
    return y


def _apply(H, x):
    if H.ndim == 3:
        return np.einsum("tnk,tk->tn", H, x)
    return x @ H.T


def perturb_csi(H: np.ndarray, var: float, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """H + E with E ~ N(0, var) i.i.d.; ``size`` draws a stack of independent perturbations."""
    if var < 0:
        raise ValueError("variance must be nonnegative")
    H = np.asarray(H, dtype=float)
    if var == 0:
        return H.copy() if size is None else np.broadcast_to(H, (size,) + H.shape).copy()
    shape = H.shape if size is None else (size,) + H.shape
    return H + np.sqrt(var) * rng.standard_normal(shape)


@dataclass
class Dataset:
    y: np.ndarray  # (T, N)
    s: np.ndarray  # (T, K) int
    spec: ChannelSpec
    seed: int | None = None

    def __len__(self):
        return len(self.y)

    @property
    def input_energy(self) -> float:
        """Sum over samples of ||y_t||^2."""
        return float(np.sum(self.y**2))

    def subset(self, idx) -> "Dataset":
        return Dataset(self.y[idx], self.s[idx], self.spec, self.seed)


def generate_dataset(spec: ChannelSpec, T: int, rng: np.random.Generator | int,
                     perturb_per_sample: bool = False) -> Dataset:
    """T i.i.d. uniformly labelled samples.

    With ``perturb_per_sample`` each sample passes through its own
    ``H + E_t`` with ``E_t ~ N(0, spec.csi_noise_var)``.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    seed = None
    if not isinstance(rng, np.random.Generator):
        seed = int(rng)
        rng = np.random.default_rng(seed)
    s = rng.integers(0, spec.M, size=(T, spec.K))
    H = None
    if perturb_per_sample and spec.csi_noise_var > 0:
        H = perturb_csi(spec.H, spec.csi_noise_var, rng, size=T)
    y = transmit(spec, s, rng, H=H)
    return Dataset(y, s, spec, seed)


HEADER_FIELDS = ("N", "K", "M", "kind", "snr_db", "seed")


def save_dataset_csv(ds: Dataset, path) -> None:
    """Write ``N,K,M,kind,snr_db,seed`` then one row per sample: y_0..y_{N-1}, s_0..s_{K-1}."""
    spec = ds.spec
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HEADER_FIELDS)
        w.writerow([spec.N, spec.K, spec.M, spec.kind, repr(float(spec.snr_db)),
                    "" if ds.seed is None else ds.seed])
        w.writerow([f"y{n}" for n in range(spec.N)] + [f"s{k}" for k in range(spec.K)])
        for y, s in zip(ds.y, ds.s):
            w.writerow([repr(float(v)) for v in y] + [int(v) for v in s])


def load_dataset_csv(path, spec: ChannelSpec | None = None) -> Dataset:
    with open(Path(path), newline="") as fh:
        rows = list(csv.reader(fh))
    meta = dict(zip(rows[0], rows[1]))
    N, K, M = int(meta["N"]), int(meta["K"]), int(meta["M"])
    if spec is None:
        spec = ChannelSpec(kind=meta["kind"], N=N, K=K, snr_db=float(meta["snr_db"]),
                           constellation=pam_constellation(M))
    data = rows[3:]
    y = np.array([[float(v) for v in r[:N]] for r in data]).reshape(-1, N)
    s = np.array([[int(v) for v in r[N:N + K]] for r in data], dtype=np.int64).reshape(-1, K)
    seed = int(meta["seed"]) if meta["seed"] else None
    return Dataset(y, s, spec, seed)
