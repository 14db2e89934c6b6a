"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line."""

import math
import time

import numpy as np
import pytest

from coopmimo import cli
from coopmimo.association import AssociationState, Scenario, associate
from coopmimo.config import SimConfig
from coopmimo.estimation import assign_pilots, lmmse_link_estimates, project_pilots, uplink_training_rx
from coopmimo.evaluation import draw_large_scale, fronthaul_params, pooled, run_monte_carlo
from coopmimo.fronthaul import FronthaulParams, enforce_fronthaul, fh_data_load, fh_weight_load, node_loads
from coopmimo.precoding import equal_stream_power, fpa_powers, jpzf_vector, precoder_complexity, pzf_local
from coopmimo.propagation import (
    LinkLargeScale,
    correlated_shadowing,
    draw_link_channels,
    los_probability_uma,
    los_probability_umi,
    pathloss_uma,
    pathloss_umi,
)

DESK = dict(n_center_cells=1, n_ring_cells=2, aps_per_cell=3, users_per_sector=3)


@pytest.fixture
def report(capsys):
    def _report(number, title, ok, detail=""):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} {detail}".rstrip())
        assert ok, f"criterion {number} failed: {detail}"

    return _report


def _cn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def _links(coeff, k_factor=0.0):
    coeff = np.asarray(coeff, dtype=float)
    z = np.zeros(coeff.shape)
    return LinkLargeScale(
        kind="ap", d2d=z, d3d=z, p_los=z, is_los=z.astype(bool), k_factor=np.full(coeff.shape, k_factor),
        pathloss_db=z, shadow_db=z, coeff=coeff, aod=np.full(coeff.shape, 0.25),
    )


def test_criterion_1_complexity(report):
    best = math.inf
    for _ in range(20):
        t0 = time.perf_counter()
        c = precoder_complexity(6, 3, 8, 32, 4, 16, 72)
        best = min(best, time.perf_counter() - t0)
    ok = c == {"central_mults": 746496, "local_mults": 25344} and best < 1e-3
    report(1, "complexity counts", ok, f"central={c['central_mults']} local={c['local_mults']} t={best * 1e6:.1f}us")


def test_criterion_2_fronthaul_arithmetic(report):
    joint = FronthaulParams(mode="joint")
    f_d = float(fh_data_load(1, joint))
    f_w = float(fh_weight_load(1, 8, joint))
    k = 40
    merged = np.zeros((k, 2), bool)
    merged[:, 0] = True
    res = enforce_fronthaul(
        AssociationState.from_merged(merged, 1), np.random.default_rng(0).random((k, 2)), joint, 8, 32, 1e-13
    )
    cap = int(res.assoc.a.sum())
    ok = abs(f_d - 275388235) <= 1 and abs(f_w - 647059) <= 1 and cap == 18
    report(2, "fronthaul arithmetic", ok, f"F_D={f_d:.1f} F_W={f_w:.1f} AP cap={cap}")


def test_criterion_3_zero_forcing(report):
    rng = np.random.default_rng(3)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        t, p = _cn(rng, 8), _cn(rng, 8, 4)
        w = pzf_local(t, p, 8)
        worst = max(worst, np.max(np.abs(p.conj().T @ w) / np.linalg.norm(p, axis=0)))
    for dim, r in ((144, 72), (12, 6)):
        for _ in range(100):
            u = _cn(rng, r + 5, dim) * rng.uniform(0.1, 3.0, (r + 5, 1))
            k = int(rng.integers(r + 5))
            w = jpzf_vector(u, k, r)
            others = [j for j in range(r + 5) if j != k]
            strongest = sorted(others, key=lambda j: -np.linalg.norm(u[j]))[:r]
            prot = u[strongest]
            worst = max(worst, np.max(np.abs(prot.conj() @ w) / np.linalg.norm(prot, axis=1)))
    elapsed = time.perf_counter() - t0
    report(3, "zero-forcing nulls", worst < 1e-9 and elapsed < 30, f"max|u^H w|={worst:.2e} t={elapsed:.2f}s")


def test_criterion_4_power_constraints(report):
    rng = np.random.default_rng(4)
    fpa_err, over, slack = 0.0, 0.0, 0.0
    for _ in range(100):
        served = rng.random((20, 8)) < 0.5
        served[0] = True
        p = 10 ** rng.uniform(0, 2, 8)
        eta = fpa_powers(served, 10 ** rng.uniform(-14, -6, (20, 8)), rng.uniform(-1, 1), p)
        fpa_err = max(fpa_err, np.max(np.abs(eta.sum(0) - p) / p))
    for _ in range(100):
        m, l, n_ap, n_bs, k = 5, 3, 8, 32, 10
        rows = n_ap * m + n_bs * l
        q = _cn(rng, rows, k) * (rng.random((rows, k)) < 0.5)
        p_ap, p_bs = 10 ** rng.uniform(0, 1, m), 10 ** rng.uniform(1, 2, l)
        eta, qa, qb = equal_stream_power(q, p_ap, p_bs, n_ap, n_bs)
        used = eta * np.concatenate([qa, qb])
        budget = np.concatenate([p_ap, p_bs])
        over = max(over, np.max((used - budget) / budget))
        slack = max(slack, np.min(np.abs(used[used > 0] - budget[used > 0]) / budget[used > 0]))
    ok = fpa_err < 1e-9 and over <= 1e-12 and slack < 1e-9
    report(4, "power constraints", ok, f"fpa_rel={fpa_err:.1e} over={over:.1e} binding_gap={slack:.1e}")


def test_criterion_5_estimation(report):
    links = _links([[2e-9]])
    book = assign_pilots([[0.0, 0.0]], 1)
    c, _ = draw_link_channels(links, 8, rng=5)
    y = project_pilots(uplink_training_rx(c, book, 9.6, 0.0), book)
    est, _ = lmmse_link_estimates(y, book, links, 8, 9.6, 0.0)
    rel = np.linalg.norm(est - c) / np.linalg.norm(c)

    rng = np.random.default_rng(55)
    links = _links([[1.0], [0.4]], k_factor=1.0)
    book = assign_pilots([[0.0, 0.0], [0.0, 5.0]], 1)
    mse_lmmse = mse_ls = 0.0
    for _ in range(1000):
        c, _ = draw_link_channels(links, 8, rng)
        y = project_pilots(uplink_training_rx(c, book, 1.0, 0.5, rng), book)
        est, _ = lmmse_link_estimates(y, book, links, 8, 1.0, 0.5)
        mse_lmmse += np.sum(np.abs(est[0] - c[0]) ** 2) / 1000
        mse_ls += np.sum(np.abs(y[0] - c[0]) ** 2) / 1000
    ok = rel < 1e-10 and mse_lmmse < mse_ls
    report(5, "LMMSE estimation", ok, f"noiseless_rel={rel:.1e} mse_lmmse={mse_lmmse:.3f} mse_ls={mse_ls:.3f}")


def test_criterion_6_propagation(report):
    d = np.linspace(0.0, 18.0, 50)
    los_one = bool(np.all(los_probability_uma(d) == 1) and np.all(los_probability_umi(d) == 1))
    d2 = np.linspace(10.0, 5000.0, 1000)
    order = all(
        np.all(fn(d2, np.hypot(d2, dh), 1.5, 3.5e9, False) >= fn(d2, np.hypot(d2, dh), 1.5, 3.5e9, True))
        for fn, dh in ((pathloss_uma, 23.5), (pathloss_umi, 8.5))
    )
    pl = pathloss_uma(100.0, 100.0, 1.5, 3.5e9, True)
    z = correlated_shadowing("bs", [[0.0, 0.0], [50.0, 0.0]], 100000, rng=6)
    cov = np.cov(z)[0, 1]
    target = 36.0 * math.exp(-1)
    ok = los_one and order and abs(pl - 82.88) <= 0.01 and abs(cov - target) / target < 0.05
    report(6, "propagation", ok, f"PL(100m)={pl:.3f}dB cov50={cov:.3f} (model {target:.3f})")


def test_criterion_7_ordering(report):
    cfg = SimConfig(**DESK, trials=200, master_seed=2024)
    variants = [("full", "mmse", -0.5), ("full", "pzf", -0.5), ("full", "mrt", -0.5), ("mc", "mmse", -0.5)]
    t0 = time.perf_counter()
    res = run_monte_carlo(cfg, variants)
    elapsed = time.perf_counter() - t0
    med = {p: float(np.median(pooled(res, scenario="full", precoder=p))) for p in ("mmse", "pzf", "mrt")}
    edge_full = float(np.median(pooled(res, scenario="full", precoder="mmse", user_class="cell_edge")))
    edge_mc = float(np.median(pooled(res, scenario="mc", precoder="mmse", user_class="cell_edge")))
    ok = med["mmse"] >= med["pzf"] >= med["mrt"] and edge_full >= edge_mc and elapsed < 300
    detail = (
        f"medians MMSE={med['mmse'] / 1e6:.1f} PZF={med['pzf'] / 1e6:.1f} MRT={med['mrt'] / 1e6:.1f} Mbit/s; "
        f"edge FULL={edge_full / 1e6:.1f} MC={edge_mc / 1e6:.1f} Mbit/s; t={elapsed:.0f}s"
    )
    report(7, "qualitative ordering", ok, detail)


def test_criterion_8_fronthaul_algorithm(report):
    base = SimConfig(**DESK, precoder="jpzf", fronthaul_enforce=True)
    n_ant = np.array([base.n_ant_ap] * base.n_ap + [base.n_ant_bs] * base.n_bs)
    worst_excess, fractions, idempotent = -math.inf, [], True
    for trial in range(20):
        _, ap, bs = draw_large_scale(base, trial)
        assoc = associate(Scenario.FULL, bs.coeff, ap.coeff, base.n_sel_ap, base.n_sel_bs)
        limit = base.f_limit
        params = fronthaul_params(base)
        loads = node_loads(assoc.merged, n_ant, params)
        while np.mean(loads > limit) < 0.3:
            limit *= 0.9
        fractions.append(float(np.mean(loads > limit)))
        params = fronthaul_params(base.replace(f_limit=limit))
        delta = np.concatenate([ap.coeff, bs.coeff], axis=1)
        res = enforce_fronthaul(assoc, delta, params, base.n_ant_ap, base.n_ant_bs, base.noise_var)
        worst_excess = max(worst_excess, float(np.max(node_loads(res.assoc.merged, n_ant, params) - limit)))
        again = enforce_fronthaul(res.assoc, delta, params, base.n_ant_ap, base.n_ant_bs, base.noise_var)
        idempotent &= again.iterations == 0 and np.array_equal(again.assoc.merged, res.assoc.merged)
    ok = worst_excess <= 0 and idempotent and min(fractions) >= 0.3
    report(8, "fronthaul pruning", ok, f"min violating={min(fractions):.2f} max(F-Fbar)={worst_excess:.3e}")


def test_criterion_9_determinism(report, tmp_path):
    cfg = tmp_path / "desk.yaml"
    cfg.write_text(
        "n_center_cells: 1\nn_ring_cells: 2\naps_per_cell: 3\nusers_per_sector: 3\ntrials: 5\nmaster_seed: 77\n"
        "fronthaul_enforce: true\nf_limit: 2.0e+9\n"
    )
    assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    manifest = tmp_path / "a" / "manifest.yaml"
    assert cli.main(["replay", str(manifest), "--out", str(tmp_path / "b")]) == 0
    assert cli.main(["replay", str(manifest), "--out", str(tmp_path / "c")]) == 0
    names = ("results.csv", "cdf_cell_inside.csv", "cdf_cell_edge.csv", "fh_trace.csv")
    same = all(
        (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes() == (tmp_path / "c" / n).read_bytes()
        for n in names
    )
    report(9, "determinism", same, "byte-identical CSVs across manifest replays")
