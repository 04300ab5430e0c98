"""Sample complexity of DeepSIC vs GNNSIC from the norm-based gap bound (6x6 BPSK).

E0 is the input energy of the 48k-sample training set the harness generates
for the default 6x6 configuration.
"""
import argparse

from sicnet.channel_sim import ChannelSpec
from sicnet.genbound import deepsic_terms, gnnsic_terms, sample_complexity
from sicnet.harness import ExperimentConfig, training_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rho", type=float, default=1.5, help="inner norm budget")
    ap.add_argument("--gamma", type=float, default=0.1)
    ap.add_argument("--delta", type=float, default=0.05)
    ap.add_argument("--eps", type=float, default=0.1)
    args = ap.parse_args()

    spec = ChannelSpec(N=6, K=6, snr_db=10)
    E0 = training_dataset(ExperimentConfig(channel=spec), spec).input_energy
    rows = [("DeepSIC", 6, deepsic_terms(1, 30, 5, 2, 2, E0, args.rho)),
            ("GNNSIC", 1, gnnsic_terms(1, 28, 5, 2, E0, args.rho))]
    print(f"E0 = {E0:.6g}")
    print(f"{'':8s} {'K':>2s} {'A':>9s} {'B':>11s} {'rho':>7s} {'T(eps)':>10s}")
    for name, K, t in rows:
        T = sample_complexity(t, args.eps, args.gamma, args.delta, K=K)
        print(f"{name:8s} {K:2d} {t.A:9.3f} {t.B:11.4g} {t.rho:7.3f} {T if T is None else format(T, '10.3g')}")


if __name__ == "__main__":
    main()
