"""Versioned ``.npz`` model files.

Each file holds the raw float64 arrays (``arr_0``, ``arr_1``, ...) in
``model.arrays()`` order plus a JSON header under ``meta`` describing the
architecture, so loading rebuilds an identical model bit for bit.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .deepsic import DeepSicModel
from .gnnsic import GnnSicModel
from .tensor_nn import MlpParams

FORMAT_VERSION = 1


class ModelFileError(ValueError):
    pass


def _mlp_meta(p: MlpParams) -> dict:
    return {"layers": len(p.weights), "out_activation": p.out_activation}


def save_model(model: DeepSicModel | GnnSicModel, path) -> Path:
    if isinstance(model, DeepSicModel):
        meta = {"kind": "deepsic", "N": model.N, "K": model.K, "M": model.M,
                "columns": [_mlp_meta(c) for c in model.columns]}
    elif isinstance(model, GnnSicModel):
        meta = {"kind": "gnnsic", "a": model.a, "L": model.L, "edge_dim": model.edge_dim,
                "embed": _mlp_meta(model.embed), "message": _mlp_meta(model.message),
                "update": _mlp_meta(model.update)}
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    meta["format_version"] = FORMAT_VERSION
    path = Path(path)
    with open(path, "wb") as fh:
        np.savez(fh, *model.arrays(), meta=np.array(json.dumps(meta, sort_keys=True)))
    return path


def _take_mlp(arrays: list, info: dict) -> MlpParams:
    n = 2 * info["layers"]
    chunk = [arrays.pop(0) for _ in range(n)]
    return MlpParams(chunk[0::2], chunk[1::2], info["out_activation"])


def load_model(path, L: int | None = None) -> DeepSicModel | GnnSicModel:
    """Load a model file. ``L`` overrides the iteration count of a GNNSIC model,
    which owns no per-iteration parameters."""
    with np.load(Path(path), allow_pickle=False) as z:
        try:
            meta = json.loads(str(z["meta"]))
        except KeyError as exc:
            raise ModelFileError(f"{path}: missing metadata") from exc
        if meta.get("format_version") != FORMAT_VERSION:
            raise ModelFileError(f"{path}: unsupported format version {meta.get('format_version')}")
        arrays = [z[f"arr_{i}"] for i in range(len(z.files) - 1)]
    if meta["kind"] == "deepsic":
        cols = [_take_mlp(arrays, c) for c in meta["columns"]]
        return DeepSicModel(cols, meta["N"], meta["K"], meta["M"])
    if meta["kind"] == "gnnsic":
        parts = [_take_mlp(arrays, meta[k]) for k in ("embed", "message", "update")]
        return GnnSicModel(*parts, a=meta["a"], L=meta["L"] if L is None else L, edge_dim=meta["edge_dim"])
    raise ModelFileError(f"{path}: unknown model kind {meta['kind']!r}")
