"""SER vs SNR for every detector on the 6x6 exponential channel (optionally with CSI errors).

    python scripts/snr_sweep.py --out results/snr_sweep [--csi 0.1] [--train-T 48000] [--epochs 100]

One sub-directory per detector holds ser.csv, manifest.json and (for learned
detectors) model.npz; a combined all.csv is written at the top level.
"""
import argparse
import logging
from dataclasses import replace
from pathlib import Path

from sicnet.channel_sim import ChannelSpec
from sicnet.harness import DETECTORS, ExperimentConfig, desk_grid, emit_csv, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results/snr_sweep")
    ap.add_argument("--N", type=int, default=6)
    ap.add_argument("--csi", type=float, default=0.0, help="CSI error variance")
    ap.add_argument("--train-T", type=int, default=48_000)
    ap.add_argument("--epochs", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--val-T", type=int, default=12_000, help="validation samples (best epoch is kept)")
    ap.add_argument("--detectors", default="sic,deepsic_e2e,deepsic_seq,gnnsic,map")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO)

    base = ExperimentConfig(channel=ChannelSpec(N=args.N, K=args.N, snr_db=10, csi_noise_var=args.csi),
                            train_T=args.train_T, val_T=args.val_T, epochs=args.epochs, seed=args.seed, snr_grid=desk_grid())
    rows = []
    for det in args.detectors.split(","):
        if det not in DETECTORS:
            raise SystemExit(f"unknown detector {det}")
        res = run_experiment(replace(base, detector=det, out=str(Path(args.out) / det)))
        rows += res.rows
        for r in res.rows:
            print(f"{det:12s} {r.snr_db:5.1f} dB  SER {r.ser:.3e}")
    emit_csv(rows, Path(args.out) / "all.csv")


if __name__ == "__main__":
    main()
