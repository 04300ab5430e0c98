"""Acceptance criteria 1-10 at their stated tolerances.

Each test records a one-line verdict that is printed in the terminal summary
under "acceptance criteria". The training-heavy criteria (3-6) are marked
``slow``; run them alone with ``pytest tests/test_acceptance.py``.
"""
import statistics
from dataclasses import replace

import numpy as np
import pytest

from oracles import deepsic_toy_gradient_error, gnnsic_toy_gradient_error, mlp_gradient_error
from sicnet.channel_sim import ChannelSpec, default_channel_matrix, generate_dataset
from sicnet.deepsic import init_deepsic
from sicnet.genbound import (ArchDescriptor, BoundQuery, budget_mlp_sampler, deepsic_terms, gap_from_terms,
                             gnnsic_terms, mc_rademacher_lower, rademacher_bound, sample_complexity)
from sicnet.gnnsic import gnnsic_forward, init_gnnsic
from sicnet.harness import (CSV_COLUMNS, ExperimentConfig, SnrPoint, eval_seed, evaluate_ser, map_detect,
                            run_experiment, training_dataset, user_generalization_eval)
from sicnet.sic_classic import sic_detect

SIX = ChannelSpec(N=6, K=6, snr_db=10)


def six_config(detector: str, **kw) -> ExperimentConfig:
    """6x6 exponential channel, BPSK, 48k samples at 10 dB (12k validation), 100 epochs, batch 64, lr 0.005."""
    return ExperimentConfig(channel=kw.pop("channel", SIX), detector=detector, train_T=48_000, val_T=12_000,
                            epochs=100, batch=64, lr=0.005, seed=0, record_wall_time=False, **kw)


def ser(det, spec, snr, T, seed=0, scope=()):
    return evaluate_ser(det.detect, spec, snr, T, eval_seed(seed, snr, *scope), det.csi, det.name,
                        record_wall_time=False)


@pytest.mark.criterion(1)
def test_gradient_correctness(criterion):
    worst_mlp = max(mlp_gradient_error(seed) for seed in range(100))
    deep, gnn = deepsic_toy_gradient_error(), gnnsic_toy_gradient_error()
    ok = worst_mlp <= 1e-5 and deep <= 1e-4 and gnn <= 1e-4 and criterion.elapsed < 60
    criterion.record(ok, f"100 MLPs max rel err {worst_mlp:.2e} (<=1e-5); unrolled DeepSIC {deep:.2e}, "
                         f"GNNSIC {gnn:.2e} (<=1e-4)")
    assert ok


@pytest.mark.criterion(2)
def test_classical_sic_sanity(criterion):
    rng = np.random.default_rng(0)
    s = rng.integers(0, 2, size=(500, 2))
    noiseless_errors = int(np.count_nonzero(sic_detect(np.array([-1.0, 1.0])[s], np.eye(2), 0.0, 1) != s))

    spec = ChannelSpec(N=2, K=2, snr_db=8)
    ds = generate_dataset(spec, 100_000, 21)
    ser_sic = float(np.mean(sic_detect(ds.y, spec.H, spec.noise_var, 5) != ds.s))
    ser_map = float(np.mean(map_detect(ds.y, spec.H) != ds.s))
    ok = noiseless_errors == 0 and 0 < ser_map and ser_sic <= 2 * ser_map and criterion.elapsed < 120
    criterion.record(ok, f"noiseless errors {noiseless_errors}/1000; 8 dB SIC {ser_sic:.3e} vs MAP {ser_map:.3e} "
                         f"(ratio {ser_sic / ser_map:.2f} <= 2)")
    assert ok


@pytest.mark.slow
@pytest.mark.criterion(3)
def test_gnnsic_tracks_deepsic_over_snr(criterion, models):
    gnn = models.get(six_config("gnnsic"))
    deep = models.get(six_config("deepsic_e2e"))
    grid = [SnrPoint(s, 20_000 if s <= 10 else 100_000) for s in (4, 6, 8, 10, 12)]
    ratios, at10 = {}, None
    for p in grid:
        g, d = ser(gnn, SIX, p.snr_db, p.test_T), ser(deep, SIX, p.snr_db, p.test_T)
        ratios[p.snr_db] = (g.ser, d.ser)
        if p.snr_db == 10:
            at10 = g.ser
    worst = max(g / d if d > 0 else (np.inf if g > 0 else 1.0) for g, d in ratios.values())
    ok = at10 <= 5e-3 and worst <= 1.5 and criterion.elapsed < 30 * 60
    pts = ", ".join(f"{s:g}dB {g:.2e}/{d:.2e}" for s, (g, d) in ratios.items())
    criterion.record(ok, f"GNNSIC@10dB {at10:.2e} (<=5e-3); max GNNSIC/DeepSIC {worst:.2f} (<=1.5); "
                         f"GNN/Deep: {pts}")
    assert ok


@pytest.mark.slow
@pytest.mark.criterion(4)
def test_sample_efficiency(criterion, models):
    small, large = {"gnn": [], "deep": []}, []
    for seed in (0, 1, 2):
        cfg = dict(train_T=10_000, seed=seed)
        g = models.get(replace(six_config("gnnsic"), **cfg))
        d = models.get(replace(six_config("deepsic_e2e"), **cfg))
        d60 = models.get(replace(six_config("deepsic_e2e"), train_T=60_000, seed=seed))
        small["gnn"].append(ser(g, SIX, 10, 50_000, seed).ser)
        small["deep"].append(ser(d, SIX, 10, 50_000, seed).ser)
        large.append(ser(d60, SIX, 10, 50_000, seed).ser)
    g10, d10, d60 = (statistics.median(v) for v in (small["gnn"], small["deep"], large))
    ok = g10 < d10 and d60 <= 1.5 * g10 and criterion.elapsed < 45 * 60
    criterion.record(ok, f"median SER@10dB: GNNSIC(10k) {g10:.2e} < DeepSIC(10k) {d10:.2e}; "
                         f"DeepSIC(60k) {d60:.2e} <= 1.5x GNNSIC(10k)")
    assert ok


@pytest.mark.slow
@pytest.mark.criterion(5)
def test_csi_robustness(criterion, models):
    noisy = replace(SIX, csi_noise_var=0.1)
    T = 50_000
    g0 = ser(models.get(six_config("gnnsic")), SIX, 10, T).ser
    g1 = ser(models.get(six_config("gnnsic", channel=noisy)), SIX, 10, T).ser
    s0 = ser(models.get(six_config("sic")), SIX, 10, T).ser
    # model-based SIC sees one perturbed estimate per draw; average over five draws
    s1 = statistics.mean(ser(models.get(six_config("sic", channel=noisy), r), SIX, 10, T).ser for r in range(5))
    rg, rs = g1 / g0, s1 / s0
    ok = g1 <= 5 * g0 and rs > rg
    criterion.record(ok, f"GNNSIC {g0:.2e} -> {g1:.2e} (x{rg:.2f} <= 5); SIC {s0:.2e} -> {s1:.2e} "
                         f"(x{rs:.2f} > x{rg:.2f})")
    assert ok


USER_GEN_GRID = [SnrPoint(s, 50_000) for s in (0, 2, 4, 6)]


@pytest.mark.slow
@pytest.mark.criterion(6)
def test_user_generalisation(criterion, models):
    eight = ChannelSpec(N=8, K=8, snr_db=10)
    det = models.get(replace(six_config("gnnsic", channel=eight), train_T=24_000, val_T=6_000))
    n_before = det.model.n_params()
    rows = {r.detector + f"@{r.snr_db:g}": r.ser
            for r in user_generalization_eval(det.model, [4, 8], 8, USER_GEN_GRID, seed=0)}
    fails = []
    for p in USER_GEN_GRID:
        s = f"{p.snr_db:g}"
        g4, g8, s4 = rows[f"gnnsic@K4@{s}"], rows[f"gnnsic@K8@{s}"], rows[f"sic@K4@{s}"]
        if not (g4 <= g8 and g4 <= 2 * s4):
            fails.append(s)
    ok = not fails and det.model.n_params() == n_before and criterion.elapsed < 20 * 60
    pts = ", ".join(f"{p.snr_db:g}dB K4 {rows[f'gnnsic@K4@{p.snr_db:g}']:.2e}/K8 {rows[f'gnnsic@K8@{p.snr_db:g}']:.2e}"
                    f"/SIC-K4 {rows[f'sic@K4@{p.snr_db:g}']:.2e}" for p in USER_GEN_GRID)
    criterion.record(ok, f"failing points: {fails or 'none'}; {pts}")
    assert ok


@pytest.mark.criterion(7)
def test_bound_structure(criterion):
    E0 = training_dataset(six_config("gnnsic"), SIX).input_energy
    q = BoundQuery(10_000, 0.1, 0.05)
    deep = [gap_from_terms(deepsic_terms(1, 30, L, 2, 2, E0, 1.5), 6, q) for L in range(1, 11)]
    flat = [gap_from_terms(gnnsic_terms(1, 30, 2, 2, E0, 1.5), 6, q) for _ in range(1, 11)]
    increasing = all(b > a for a, b in zip(deep, deep[1:]))
    constant = max(flat) - min(flat) <= 1e-12 * max(flat)
    identity = deepsic_terms(1, 30, 1, 2, 2, E0, 1.5) == gnnsic_terms(1, 30, 2, 2, E0, 1.5)

    T_deep = sample_complexity(deepsic_terms(1, 30, 5, 2, 2, E0, 1.5), 0.1, 0.1, 0.05, K=6)
    T_gnn = sample_complexity(gnnsic_terms(1, 28, 5, 2, E0, 1.5), 0.1, 0.1, 0.05, K=1)
    ratio = T_deep / T_gnn
    ok = increasing and constant and identity and ratio >= 100 and criterion.elapsed < 1
    criterion.record(ok, f"DeepSIC gap increasing in L: {increasing}; GNNSIC constant: {constant}; L=1 identity: "
                         f"{identity}; E0={E0:.6g}, T_DeepSIC={T_deep:.3g}, T_GNNSIC={T_gnn:.3g}, ratio {ratio:.1f}")
    assert ok


@pytest.mark.criterion(8)
def test_monte_carlo_below_analytic(criterion):
    T = 8
    X = np.random.default_rng(8).normal(size=(T, 2))
    est, se = mc_rademacher_lower(budget_mlp_sampler([2, 2, 2], 1.0, 1.0), X, 1000, 100, rng=0)
    bound = rademacher_bound(ArchDescriptor(1, 1, 2, 2, [1], [[2]], E0=float(np.sum(X**2))), T)
    ok = est <= bound + 2 * se and criterion.elapsed < 60
    criterion.record(ok, f"MC lower {est:.4f} +- {se:.4f} vs analytic {bound:.4f}")
    assert ok


@pytest.mark.criterion(9)
def test_parameter_count_structure(criterion):
    deep_ok = all(init_deepsic(N, K, 2, L).n_params() == K * L * init_deepsic(N, K, 2, L).block_n_params()
                  for N, K, L in [(6, 6, 5), (4, 2, 3), (8, 8, 1), (32, 32, 5)])
    table = [init_deepsic(n, n, 2, 5).n_params() for n in (6, 32, 64)]
    counts_L = {init_gnnsic(6, a=14, L=L).n_params() for L in range(1, 11)}
    m = init_gnnsic(6, a=14)
    H = default_channel_matrix(6, 6)
    y = np.zeros((2, 6))
    for K in (2, 4, 6):  # one parameter set serves every user count
        gnnsic_forward(m, y, H[:, :K], 0.1)
    ok = deep_ok and table == [25_260, 633_920, 2_496_640] and len(counts_L) == 1 and m.n_params() in counts_L
    criterion.record(ok, f"DeepSIC K*L*block exact: {deep_ok}; DeepSIC 6/32/64: {table}; GNNSIC 6x6 count "
                         f"{m.n_params()} for all L and K (reported 1,061 not reproducible: hidden widths unstated)")
    assert ok


@pytest.mark.criterion(10)
def test_determinism(criterion, tmp_path):
    def cfg(out, timing):
        return ExperimentConfig(channel=ChannelSpec(N=4, K=4, snr_db=10), detector="gnnsic", train_T=2000,
                                epochs=3, snr_grid=[SnrPoint(s, 5000) for s in (2, 6, 10)], seed=11,
                                out=str(tmp_path / out), record_wall_time=timing)

    a = run_experiment(cfg("a", False)).csv_path.read_bytes()
    b = run_experiment(cfg("b", False)).csv_path.read_bytes()
    wall = CSV_COLUMNS.index("wall_ms")

    def strip_timing(raw):
        return [ln.split(",")[:wall] for ln in raw.decode().splitlines()]

    c = run_experiment(cfg("c", True)).csv_path.read_bytes()
    d = run_experiment(cfg("d", True)).csv_path.read_bytes()
    ok = a == b and strip_timing(c) == strip_timing(d) and strip_timing(a) == strip_timing(c) and \
        criterion.elapsed < 300
    criterion.record(ok, f"bitwise-identical CSV (timing off): {a == b}; identical apart from wall_ms "
                         f"(timing on): {strip_timing(c) == strip_timing(d)}")
    assert ok
