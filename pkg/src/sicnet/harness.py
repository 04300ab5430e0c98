"""Experiment pipeline: configuration, training, SER sweeps over SNR, and result files.

Randomness is keyed, not sequential: every dataset draws from
``SeedSequence(cfg.seed, spawn_key=...)`` with a key naming its role
(training set, CSI draw, test chunk at a given SNR, ...). Changing the SNR
grid or the chunk size therefore never shifts the data seen elsewhere.
"""
from __future__ import annotations

import csv
import hashlib
import itertools
import json
import logging
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .channel_sim import ChannelSpec, Dataset, default_channel_matrix, gaussian_channel_matrix, generate_dataset, perturb_csi
from .deepsic import deepsic_detect, init_deepsic, train_e2e, train_sequential
from .genbound import measured_rho_inner
from .gnnsic import GnnSicModel, gnnsic_detect, gnnsic_train, init_gnnsic
from .serialize import save_model
from .sic_classic import sic_detect
from .train import TrainConfig, TrainingError

log = logging.getLogger(__name__)

DETECTORS = ("sic", "deepsic_e2e", "deepsic_seq", "gnnsic", "map")
LEARNED = ("deepsic_e2e", "deepsic_seq", "gnnsic")
CSV_COLUMNS = ("snr_db", "detector", "ser", "errors", "symbols", "seed", "wall_ms")
MAP_CAPACITY = 2**20

# spawn-key roles
_TRAIN, _VAL, _CSI, _INIT, _CHANNEL, _TEST = range(6)

# detect(y, H_receiver, noise_var) -> (B, K) symbol indices
Detector = Callable[[np.ndarray, np.ndarray, float], np.ndarray]


class CapacityError(RuntimeError):
    pass


class ExperimentError(RuntimeError):
    pass


@dataclass
class SnrPoint:
    snr_db: float
    test_T: int

    def __post_init__(self):
        self.snr_db = float(self.snr_db)
        if int(self.test_T) != self.test_T or self.test_T < 1:
            raise ValueError(f"SNR point {self.snr_db} dB needs a positive integer test count")
        self.test_T = int(self.test_T)


def desk_grid(lo: float = 0, hi: float = 12, step: float = 2) -> list[SnrPoint]:
    """20k test samples up to 10 dB, 100k above."""
    snrs = np.arange(lo, hi + step / 2, step)
    return [SnrPoint(float(s), 20_000 if s <= 10 else 100_000) for s in snrs]


def _channel_to_dict(spec: ChannelSpec) -> dict:
    d = {f.name: getattr(spec, f.name) for f in fields(spec)}
    d["H"] = spec.H.tolist()
    d["constellation"] = list(spec.constellation)
    return d


@dataclass
class ExperimentConfig:
    channel: ChannelSpec = field(default_factory=ChannelSpec)  # snr_db here is the training SNR
    detector: str = "gnnsic"
    train_T: int = 48_000
    val_T: int = 0
    epochs: int = 100
    batch: int = 64
    lr: float = 0.005
    patience: int | None = None
    snr_grid: list[SnrPoint] = field(default_factory=desk_grid)
    seed: int = 0
    out: str = "results"
    L: int = 5
    deepsic_hidden: tuple[int, ...] = (60,)
    gnn_a: int | None = None
    gnn_hidden: tuple[int, ...] = (32, 32, 32)
    n_channels: int = 1  # >1 averages over random Gaussian channel draws
    record_wall_time: bool = True  # False writes 0 so result files are byte-stable
    eval_chunk: int = 20_000
    workers: int = 1

    def __post_init__(self):
        if isinstance(self.channel, dict):
            self.channel = ChannelSpec(**self.channel)
        self.snr_grid = [p if isinstance(p, SnrPoint) else
                         SnrPoint(**p) if isinstance(p, dict) else SnrPoint(*p) for p in self.snr_grid]
        self.deepsic_hidden = tuple(self.deepsic_hidden)
        self.gnn_hidden = tuple(self.gnn_hidden)
        if self.detector not in DETECTORS:
            raise ValueError(f"unknown detector {self.detector!r}; choose from {DETECTORS}")
        if self.detector in LEARNED and self.train_T < 1:
            raise ValueError("learned detectors need train_T >= 1")
        if min(self.epochs, self.batch, self.L, self.n_channels, self.eval_chunk, self.workers) < 1:
            raise ValueError("epochs, batch, L, n_channels, eval_chunk and workers must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["channel"] = _channel_to_dict(self.channel)
        d["snr_grid"] = [[p.snr_db, p.test_T] for p in self.snr_grid]
        d["deepsic_hidden"] = list(self.deepsic_hidden)
        d["gnn_hidden"] = list(self.gnn_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(self.epochs, self.batch, self.lr, seed, self.patience)


@dataclass
class SerRow:
    snr_db: float
    detector: str
    ser: float
    errors: int
    symbols: int
    seed: int
    wall_ms: float = 0.0

    def __post_init__(self):
        if self.symbols < 1 or not 0 <= self.errors <= self.symbols:
            raise ValueError(f"inconsistent counts: {self.errors} errors over {self.symbols} symbols")
        if self.ser != self.errors / self.symbols:
            raise ValueError("ser must equal errors / symbols")

    @classmethod
    def count(cls, snr_db, detector, errors, symbols, seed, wall_ms=0.0) -> "SerRow":
        return cls(float(snr_db), detector, errors / symbols, int(errors), int(symbols), int(seed), float(wall_ms))


def _seq(seed, *key) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy, spawn_key=tuple(seed.spawn_key) + tuple(key))
    return np.random.SeedSequence(int(seed), spawn_key=tuple(key))


def _rng(seed, *key) -> np.random.Generator:
    return np.random.default_rng(_seq(seed, *key))


def _int_seed(seed, *key) -> int:
    return int(_seq(seed, *key).generate_state(1)[0])


def _snr_key(snr_db: float) -> int:
    return int(round(snr_db * 1000)) % 2**32


def eval_seed(seed: int, snr_db: float, *scope) -> np.random.SeedSequence:
    """Substream for the test data at ``snr_db``; ``scope`` separates channel draws or user counts."""
    return _seq(seed, *scope, _TEST, _snr_key(snr_db))


# --- model-based baselines ---------------------------------------------------

def map_detect(y, H, noise_var: float | None = None, constellation=(-1.0, 1.0),
               chunk: int = 4096) -> np.ndarray:
    """Exhaustive ML search over all M^K symbol vectors (MAP under uniform priors).

    ``noise_var`` does not affect the decision under white Gaussian noise; it
    is accepted so the function fits the common detector signature. Ties go
    to the candidate whose index tuple comes first lexicographically.
    """
    H = np.asarray(H, dtype=float)
    y = np.asarray(y, dtype=float)
    c = np.asarray(constellation, dtype=float)
    K, M = H.shape[1], len(c)
    if M**K > MAP_CAPACITY:
        raise CapacityError(f"{M}^{K} candidates exceed the exhaustive-search limit {MAP_CAPACITY}")
    single = y.ndim == 1
    yb = np.atleast_2d(y)
    cands = np.array(list(itertools.product(range(M), repeat=K)), dtype=np.intp)
    best = np.full(len(yb), np.inf)
    arg = np.zeros(len(yb), dtype=np.intp)
    for start in range(0, len(cands), chunk):
        hs = c[cands[start:start + chunk]] @ H.T  # (C, N)
        # ||y - Hs||^2 minus the candidate-independent ||y||^2
        d = np.sum(hs * hs, axis=1) - 2.0 * (yb @ hs.T)
        j = np.argmin(d, axis=1)
        dj = d[np.arange(len(yb)), j]
        better = dj < best
        best[better] = dj[better]
        arg[better] = start + j[better]
    out = cands[arg]
    return out[0] if single else out


# --- evaluation -------------------------------------------------------------

def evaluate_ser(detector: Detector, spec: ChannelSpec, snr_db: float, test_T: int, seed,
                 csi: np.ndarray | None = None, name: str = "", chunk: int = 20_000,
                 workers: int = 1, record_wall_time: bool = True) -> SerRow:
    """SER of ``detector`` on ``test_T`` fresh samples through ``spec.H`` at ``snr_db``.

    ``csi`` is the channel matrix handed to the receiver (defaults to the true
    one). Test chunk c draws from the substream ``seed + (c,)``.
    """
    if test_T < 1:
        raise ValueError("test_T must be >= 1")
    sp = spec.at_snr(snr_db)
    csi = sp.H if csi is None else csi
    bounds = [(c, min(chunk, test_T - start)) for c, start in enumerate(range(0, test_T, chunk))]

    def errors_in(job):
        c, n = job
        ds = generate_dataset(sp, n, _rng(seed, c))
        return int(np.count_nonzero(np.asarray(detector(ds.y, csi, sp.noise_var)) != ds.s))

    t0 = time.perf_counter()
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            errs = list(pool.map(errors_in, bounds))
    else:
        errs = [errors_in(b) for b in bounds]
    wall = (time.perf_counter() - t0) * 1e3 if record_wall_time else 0.0
    entropy = seed.entropy if isinstance(seed, np.random.SeedSequence) else seed
    return SerRow.count(snr_db, name, sum(errs), test_T * sp.K, entropy, wall)


# --- result files ------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


class CsvWriter:
    """Writes the header immediately and flushes after every row."""

    def __init__(self, path):
        self.path = Path(path)
        self._fh = open(self.path, "w", newline="")
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(CSV_COLUMNS)
        self._fh.flush()

    def write(self, row: SerRow) -> None:
        self._w.writerow([_fmt(getattr(row, c)) for c in CSV_COLUMNS])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def emit_csv(rows: Sequence[SerRow], path) -> Path:
    with CsvWriter(path) as w:
        for r in rows:
            w.write(r)
    return Path(path)


def read_csv(path) -> list[SerRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        return [SerRow(float(r["snr_db"]), r["detector"], float(r["ser"]), int(r["errors"]),
                       int(r["symbols"]), int(r["seed"]), float(r["wall_ms"])) for r in reader]


def environment() -> dict:
    return {"python": platform.python_version(), "numpy": np.__version__,
            "platform": platform.platform(), "package": __version__}


def emit_manifest(manifest: dict, path) -> Path:
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return Path(path)


# --- training ----------------------------------------------------------------

@dataclass
class TrainedDetector:
    name: str
    detect: Detector
    csi: np.ndarray  # what the receiver is told about the channel
    model: object = None
    train_ms: float = 0.0
    history: dict = field(default_factory=dict)


def training_dataset(cfg: ExperimentConfig, spec: ChannelSpec, realization: int = 0) -> Dataset:
    """The training set a learned detector sees for this config, seed and channel draw."""
    return generate_dataset(spec, cfg.train_T, _rng(cfg.seed, realization, _TRAIN), perturb_per_sample=True)


def build_detector(cfg: ExperimentConfig, spec: ChannelSpec, realization: int = 0) -> TrainedDetector:
    """Train (if needed) one detector for ``spec`` at the training SNR.

    Under CSI uncertainty (``spec.csi_noise_var > 0``) model-based receivers
    get one perturbed estimate of H, while learned receivers are trained on
    samples that each pass through their own perturbed channel and are told
    the nominal H.
    """
    r, var = realization, spec.csi_noise_var
    c = spec.constellation
    if cfg.detector in ("sic", "map"):
        csi = perturb_csi(spec.H, var, _rng(cfg.seed, r, _CSI)) if var > 0 else spec.H
        if cfg.detector == "sic":
            return TrainedDetector("sic", lambda y, H, nv: sic_detect(y, H, nv, cfg.L, c), csi)
        return TrainedDetector("map", lambda y, H, nv: map_detect(y, H, nv, c), csi)

    train = training_dataset(cfg, spec, r)
    val = generate_dataset(spec, cfg.val_T, _rng(cfg.seed, r, _VAL)) if cfg.val_T > 0 else None
    tcfg = cfg.train_config(_int_seed(cfg.seed, r, _INIT, 1))
    init_seed = _int_seed(cfg.seed, r, _INIT, 0)
    t0 = time.perf_counter()
    try:
        if cfg.detector == "gnnsic":
            model = init_gnnsic(spec.N, spec.M, cfg.gnn_a, cfg.L, cfg.gnn_hidden, init_seed)
            model, hist = gnnsic_train(model, train, tcfg, H=spec.H, noise_var=spec.noise_var, val=val)
        else:
            model = init_deepsic(spec.N, spec.K, spec.M, cfg.L, cfg.deepsic_hidden, init_seed)
            trainer = train_e2e if cfg.detector == "deepsic_e2e" else train_sequential
            model, hist = trainer(model, train, tcfg, val)
    except TrainingError as exc:
        raise ExperimentError(f"training {cfg.detector} on channel draw {r}: {exc}") from exc
    train_ms = (time.perf_counter() - t0) * 1e3 if cfg.record_wall_time else 0.0
    if isinstance(model, GnnSicModel):
        detect = lambda y, H, nv, m=model: gnnsic_detect(m, y, H, nv)  # noqa: E731
    else:
        detect = lambda y, H, nv, m=model: deepsic_detect(m, y)  # noqa: E731
    return TrainedDetector(cfg.detector, detect, spec.H, model, train_ms, hist)


def _channel_for(cfg: ExperimentConfig, r: int) -> ChannelSpec:
    if cfg.n_channels == 1:
        return cfg.channel
    ch = cfg.channel
    return replace(ch, H=gaussian_channel_matrix(ch.N, ch.K, _rng(cfg.seed, r, _CHANNEL)))


@dataclass
class ExperimentResult:
    rows: list[SerRow]
    manifest: dict
    detectors: list[TrainedDetector]
    csv_path: Path | None = None


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> ExperimentResult:
    """Train at the training SNR, sweep the SNR grid, write ``ser.csv`` and ``manifest.json``.

    Rows are flushed as each SNR point finishes, so a failure mid-sweep leaves
    the completed points on disk.
    """
    out = Path(cfg.out)
    if write:
        out.mkdir(parents=True, exist_ok=True)
    specs = [_channel_for(cfg, r) for r in range(cfg.n_channels)]
    dets = [build_detector(cfg, sp, r) for r, sp in enumerate(specs)]
    if write:
        for r, d in enumerate(dets):
            if d.model is not None:
                save_model(d.model, out / ("model.npz" if cfg.n_channels == 1 else f"model_{r}.npz"))

    rows: list[SerRow] = []
    writer = CsvWriter(out / "ser.csv") if write else None
    try:
        for p in cfg.snr_grid:
            parts = [evaluate_ser(d.detect, sp, p.snr_db, p.test_T, eval_seed(cfg.seed, p.snr_db, r),
                                  d.csi, d.name, cfg.eval_chunk, cfg.workers, cfg.record_wall_time)
                     for r, (d, sp) in enumerate(zip(dets, specs))]
            row = SerRow.count(p.snr_db, cfg.detector, sum(x.errors for x in parts),
                               sum(x.symbols for x in parts), cfg.seed, sum(x.wall_ms for x in parts))
            rows.append(row)
            log.info("%s %.1f dB: SER %.3g", cfg.detector, p.snr_db, row.ser)
            if writer:
                writer.write(row)
    except Exception as exc:
        raise ExperimentError(f"{cfg.detector} sweep failed after {len(rows)} SNR points: {exc}") from exc
    finally:
        if writer:
            writer.close()

    models = [d.model for d in dets if d.model is not None]
    manifest = {
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "detector": cfg.detector,
        "param_count": int(models[0].n_params()) if models else 0,
        "rho_inner": [measured_rho_inner(m) for m in models],
        "train_wall_ms": [d.train_ms for d in dets],
        "eval_wall_ms": [r.wall_ms for r in rows],
        "environment": environment(),
    }
    if write:
        emit_manifest(manifest, out / "manifest.json")
    return ExperimentResult(rows, manifest, dets, out / "ser.csv" if write else None)


def user_generalization_eval(model: GnnSicModel, K_list: Sequence[int], N: int,
                             snr_grid: Sequence[SnrPoint], seed: int = 0, H: np.ndarray | None = None,
                             baselines: Sequence[str] = ("sic",), sic_L: int = 5,
                             constellation=(-1.0, 1.0), chunk: int = 20_000) -> list[SerRow]:
    """Evaluate one trained GNNSIC at several user counts without touching its parameters.

    The K-user channel is the first K columns of ``H`` (default: the
    exponential profile). Rows are named ``gnnsic@K<k>`` / ``sic@K<k>``.
    """
    if model.N != N:
        raise ValueError(f"model was built for N={model.N}, not N={N}")
    H_full = default_channel_matrix(N, max(K_list)) if H is None else np.asarray(H, dtype=float)
    if H_full.shape[0] != N or H_full.shape[1] < max(K_list):
        raise ValueError(f"H must be {N} x >= {max(K_list)}")
    grid = [p if isinstance(p, SnrPoint) else SnrPoint(*p) for p in snr_grid]
    dets: dict[str, Detector] = {"gnnsic": lambda y, Hr, nv: gnnsic_detect(model, y, Hr, nv)}
    for b in baselines:
        if b == "sic":
            dets["sic"] = lambda y, Hr, nv: sic_detect(y, Hr, nv, sic_L, constellation)
        elif b == "map":
            dets["map"] = lambda y, Hr, nv: map_detect(y, Hr, nv, constellation)
        else:
            raise ValueError(f"unsupported baseline {b!r}")
    rows = []
    for K in K_list:
        spec = ChannelSpec(N=N, K=K, H=H_full[:, :K], constellation=constellation)
        for p in grid:
            for name, det in dets.items():
                # same test data for every detector at a given (K, SNR)
                rows.append(evaluate_ser(det, spec, p.snr_db, p.test_T,
                                         eval_seed(seed, p.snr_db, K), None,
                                         f"{name}@K{K}", chunk))
    return rows
