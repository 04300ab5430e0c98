"""Command-line entry point: ``sicnet <command> [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

from . import genbound
from .harness import (DETECTORS, ExperimentConfig, SnrPoint, build_detector, emit_csv, emit_manifest,
                      environment, evaluate_ser, run_experiment, eval_seed, user_generalization_eval)
from .serialize import load_model, save_model


def parse_snr_list(text: str) -> list[float]:
    """``"0,2,4"`` or ``"0:12:2"`` (inclusive)."""
    if ":" in text:
        lo, hi, step = (float(v) for v in text.split(":"))
        out, v = [], lo
        while v <= hi + 1e-9:
            out.append(round(v, 9))
            v += step
        return out
    return [float(v) for v in text.split(",") if v]


def snr_points(snrs: list[float], test_T: int | None) -> list[SnrPoint]:
    return [SnrPoint(s, test_T or (20_000 if s <= 10 else 100_000)) for s in snrs]


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if getattr(args, "config", None) else ExperimentConfig()
    over = {}
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        over["out"] = args.out
    if getattr(args, "detector", None) is not None:
        over["detector"] = args.detector
    if getattr(args, "snr", None) is not None:
        over["snr_grid"] = snr_points(parse_snr_list(args.snr), getattr(args, "test_T", None))
    return replace(cfg, **over) if over else cfg


def cmd_train(args) -> int:
    cfg = _config(args)
    if cfg.detector not in ("deepsic_e2e", "deepsic_seq", "gnnsic"):
        print(f"{cfg.detector} has nothing to train", file=sys.stderr)
        return 2
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    det = build_detector(cfg, cfg.channel)
    path = save_model(det.model, out / "model.npz")
    emit_manifest({"config": cfg.to_dict(), "config_hash": cfg.config_hash(), "param_count": det.model.n_params(),
                   "rho_inner": genbound.measured_rho_inner(det.model), "train_wall_ms": det.train_ms,
                   "final_loss": det.history["loss"][-1], "environment": environment()},
                  out / "train_manifest.json")
    print(path)
    return 0


def cmd_sweep(args) -> int:
    res = run_experiment(_config(args))
    for r in res.rows:
        print(f"{r.snr_db:g} dB  {r.detector:12s} SER {r.ser:.4g}  ({r.errors}/{r.symbols})")
    print(res.csv_path)
    return 0


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    spec = cfg.channel
    if args.model:
        model = load_model(args.model)
        from .deepsic import DeepSicModel, deepsic_detect
        from .gnnsic import gnnsic_detect
        if isinstance(model, DeepSicModel):
            detect, name = (lambda y, H, nv: deepsic_detect(model, y)), "deepsic"
        else:
            detect, name = (lambda y, H, nv: gnnsic_detect(model, y, H, nv)), "gnnsic"
        csi = spec.H
    else:
        det = build_detector(cfg, spec)
        detect, name, csi = det.detect, det.name, det.csi
    rows = [evaluate_ser(detect, spec, p.snr_db, p.test_T, eval_seed(cfg.seed, p.snr_db, 0),
                         csi, name, cfg.eval_chunk, cfg.workers, cfg.record_wall_time) for p in cfg.snr_grid]
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    print(emit_csv(rows, out / "evaluate.csv"))
    return 0


def cmd_bound(args) -> int:
    with open(args.descriptor) as fh:
        desc = genbound.ArchDescriptor.from_dict(json.load(fh))
    rep = genbound.report(desc, genbound.BoundQuery(args.T, args.gamma, args.delta), args.eps, args.unit_outer)
    row = asdict(rep)
    if args.json:
        print(json.dumps(row))
    else:
        print(",".join(row))
        print(",".join("" if v is None else format(v, ".17g") if isinstance(v, float) else str(v)
                       for v in row.values()))
    return 0


def cmd_param_count(args) -> int:
    if args.model:
        print(load_model(args.model).n_params())
        return 0
    from .deepsic import init_deepsic
    from .gnnsic import init_gnnsic
    if args.detector == "gnnsic":
        print(init_gnnsic(args.N, args.M, args.a, args.L).n_params())
    else:
        print(init_deepsic(args.N, args.K, args.M, args.L).n_params())
    return 0


def cmd_user_gen(args) -> int:
    model = load_model(args.model)
    rows = user_generalization_eval(model, [int(k) for k in args.K.split(",")], model.N,
                                    snr_points(parse_snr_list(args.snr), args.test_T), args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    print(emit_csv(rows, out / "user_gen.csv"))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sicnet", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, detector=True):
        sp.add_argument("--config", help="JSON experiment config")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--snr", help="SNR grid in dB: '0,4,8' or '0:12:2'")
        sp.add_argument("--test-T", type=int, help="test samples per SNR point")
        if detector:
            sp.add_argument("--detector", choices=DETECTORS)

    sp = sub.add_parser("train", help="train a learned detector and save model.npz")
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("sweep", help="train, sweep the SNR grid, write ser.csv and manifest.json")
    common(sp)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("evaluate", help="SER of a saved model (or a model-based detector)")
    common(sp)
    sp.add_argument("--model", help="model.npz written by 'train'")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("bound", help="generalization bound report for a JSON architecture descriptor")
    sp.add_argument("descriptor")
    sp.add_argument("--T", type=int, default=10_000)
    sp.add_argument("--gamma", type=float, default=0.1)
    sp.add_argument("--delta", type=float, default=0.05)
    sp.add_argument("--eps", type=float, default=0.1)
    sp.add_argument("--unit-outer", action="store_true", help="outer coupling has unit norm")
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=cmd_bound)

    sp = sub.add_parser("param-count", help="trainable parameters of a saved or freshly built model")
    sp.add_argument("--model")
    sp.add_argument("--detector", choices=("deepsic", "gnnsic"), default="gnnsic")
    sp.add_argument("--N", type=int, default=6)
    sp.add_argument("--K", type=int, default=6)
    sp.add_argument("--M", type=int, default=2)
    sp.add_argument("--L", type=int, default=5)
    sp.add_argument("--a", type=int)
    sp.set_defaults(func=cmd_param_count)

    sp = sub.add_parser("user-gen", help="evaluate one GNNSIC model file at several user counts")
    sp.add_argument("--model", required=True)
    sp.add_argument("--K", required=True, help="comma-separated user counts")
    sp.add_argument("--snr", default="0:12:2")
    sp.add_argument("--test-T", type=int)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default="results")
    sp.set_defaults(func=cmd_user_gen)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
