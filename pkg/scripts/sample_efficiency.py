"""SER at 10 dB against training-set size for GNNSIC and E2E DeepSIC (6x6, several seeds).

    python scripts/sample_efficiency.py --sizes 2000,5000,10000,20000,60000 --seeds 0,1,2
"""
import argparse
import csv
from pathlib import Path

from sicnet.channel_sim import ChannelSpec
from sicnet.harness import ExperimentConfig, SnrPoint, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="2000,5000,10000,20000,60000")
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--val-T", type=int, default=12_000)
    ap.add_argument("--test-T", type=int, default=50_000)
    ap.add_argument("--out", default="results/sample_efficiency.csv")
    args = ap.parse_args()

    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["detector", "train_T", "seed", "ser", "errors", "symbols"])
        for T in (int(v) for v in args.sizes.split(",")):
            for seed in (int(v) for v in args.seeds.split(",")):
                for det in ("gnnsic", "deepsic_e2e"):
                    cfg = ExperimentConfig(channel=ChannelSpec(N=6, K=6, snr_db=10), detector=det, train_T=T,
                                           val_T=args.val_T, seed=seed, snr_grid=[SnrPoint(10, args.test_T)])
                    r = run_experiment(cfg, write=False).rows[0]
                    w.writerow([det, T, seed, format(r.ser, ".17g"), r.errors, r.symbols])
                    fh.flush()
                    print(f"{det:12s} T={T:6d} seed={seed}  SER {r.ser:.3e}")


if __name__ == "__main__":
    main()
