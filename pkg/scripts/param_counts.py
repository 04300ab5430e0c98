"""Trainable parameter counts for DeepSIC and GNNSIC at several system sizes."""
from sicnet.deepsic import init_deepsic
from sicnet.gnnsic import init_gnnsic

print(f"{'N=K':>4s} {'DeepSIC':>10s} {'GNNSIC':>8s}")
for n in (6, 32, 64):
    print(f"{n:4d} {init_deepsic(n, n).n_params():10,d} {init_gnnsic(n).n_params():8,d}")
