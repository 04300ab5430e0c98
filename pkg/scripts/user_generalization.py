"""Train GNNSIC once with K=N=8 users and evaluate it unchanged at smaller user counts.

    python scripts/user_generalization.py --K 2,4,6,8 --snr 0:6:2
"""
import argparse
from pathlib import Path

from sicnet.channel_sim import ChannelSpec
from sicnet.cli import snr_points, parse_snr_list
from sicnet.harness import ExperimentConfig, build_detector, emit_csv, user_generalization_eval
from sicnet.serialize import save_model


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--N", type=int, default=8)
    ap.add_argument("--K", default="2,4,6,8")
    ap.add_argument("--snr", default="0:6:2")
    ap.add_argument("--train-T", type=int, default=24_000)
    ap.add_argument("--val-T", type=int, default=6_000)
    ap.add_argument("--test-T", type=int, default=50_000)
    ap.add_argument("--out", default="results/user_gen")
    args = ap.parse_args()

    spec = ChannelSpec(N=args.N, K=args.N, snr_db=10)
    det = build_detector(ExperimentConfig(channel=spec, train_T=args.train_T, val_T=args.val_T), spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_model(det.model, out / "model.npz")
    rows = user_generalization_eval(det.model, [int(k) for k in args.K.split(",")], args.N,
                                    snr_points(parse_snr_list(args.snr), args.test_T))
    for r in rows:
        print(f"{r.detector:12s} {r.snr_db:5.1f} dB  SER {r.ser:.3e}")
    emit_csv(rows, out / "user_gen.csv")


if __name__ == "__main__":
    main()
