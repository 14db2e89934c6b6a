import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from coopmimo.exceptions import InvalidParameterError
from coopmimo.geometry import build_hex_layout, drop_users, place_aps
from coopmimo.propagation import (
    LinkLargeScale,
    PropagationParams,
    array_gain_bs,
    breakpoint_distance,
    compute_large_scale,
    correlated_shadowing,
    draw_link_channels,
    effective_environment_height_uma,
    los_probability_uma,
    los_probability_umi,
    pathloss_uma,
    pathloss_umi,
    rician_factor,
    shadowing_correlation,
    steering_vector,
)

FC = 3.5e9


def _links(coeff, k_factor, aod=0.3):
    shape = np.shape(coeff)
    z = np.zeros(shape)
    return LinkLargeScale(
        kind="ap", d2d=z, d3d=z, p_los=z, is_los=z.astype(bool), k_factor=np.broadcast_to(k_factor, shape),
        pathloss_db=z, shadow_db=z, coeff=np.asarray(coeff, dtype=float), aod=np.full(shape, aod),
    )


# -- LOS probability -------------------------------------------------------


@pytest.mark.parametrize("d", [0.0, 1.0, 10.0, 18.0])
def test_los_probability_is_one_up_to_18m(d):
    assert los_probability_uma(d) == 1.0
    assert los_probability_umi(d) == 1.0


def test_uma_los_probability_at_63m():
    expected = 18 / 63 + (45 / 63) * math.exp(-1)
    assert los_probability_uma(63.0, 1.5) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.5485, abs=1e-4)


def test_umi_los_probability_at_36m():
    assert los_probability_umi(36.0) == pytest.approx(0.5 + 0.5 * math.exp(-1), abs=1e-12)


def test_los_probability_vanishes_far_away():
    assert los_probability_uma(1e5) < 1e-3
    assert los_probability_umi(1e5) < 1e-3


@pytest.mark.parametrize("h", [1.0, 24.0])
def test_uma_los_rejects_heights_out_of_range(h):
    with pytest.raises(InvalidParameterError):
        los_probability_uma(100.0, h)


def test_uma_height_boost_above_13m():
    assert los_probability_uma(100.0, 20.0) > los_probability_uma(100.0, 1.5)


def test_los_probabilities_strictly_inside_unit_interval_beyond_18m():
    d = np.linspace(18.01, 2000.0, 500)
    for p in (los_probability_uma(d), los_probability_umi(d)):
        assert np.all((p > 0) & (p < 1))


def test_umi_los_probability_monotone():
    p = los_probability_umi(np.linspace(0, 2000, 2001))
    assert np.all(np.diff(p) <= 1e-15)


# -- Rician factor and breakpoint -----------------------------------------


def test_rician_factor_values():
    assert rician_factor(0.5) == pytest.approx(1.0)
    assert rician_factor(0.0) == 0.0
    assert math.isinf(rician_factor(1.0))


@pytest.mark.parametrize("h_tx,h_ue,expected", [(24.0, 0.5, 560.0), (9.0, 0.5, 210.0)])
def test_breakpoint_distance(h_tx, h_ue, expected):
    assert breakpoint_distance(h_tx, h_ue, FC) == pytest.approx(expected)


def test_breakpoint_linear_in_frequency():
    assert breakpoint_distance(24.0, 0.5, 2 * FC) == pytest.approx(2 * breakpoint_distance(24.0, 0.5, FC))


def test_breakpoint_rejects_non_positive_heights():
    with pytest.raises(InvalidParameterError):
        breakpoint_distance(0.0, 0.5, FC)


def test_environment_height_is_one_for_pedestrians():
    assert np.all(effective_environment_height_uma(np.linspace(10, 1000, 50), 1.5, rng=0) == 1.0)


def test_environment_height_candidates_below_user():
    h = effective_environment_height_uma(np.full(2000, 150.0), 22.0, rng=1)
    assert set(np.unique(h)) <= {1.0, 12.0, 15.0, 20.5}
    assert np.any(h > 1.0)


# -- path loss -------------------------------------------------------------


def test_uma_los_pathloss_at_100m():
    pl = pathloss_uma(100.0, 100.0, 1.5, FC, True)
    oracle = 28.0 + 22.0 * math.log10(100.0) + 20.0 * math.log10(3.5)
    assert pl == pytest.approx(oracle, abs=1e-9)
    assert pl == pytest.approx(82.88, abs=0.01)


def test_umi_los_pathloss_at_100m():
    pl = pathloss_umi(100.0, 100.0, 1.5, FC, True)
    assert pl == pytest.approx(32.4 + 42.0 + 20.0 * math.log10(3.5), abs=1e-9)
    assert pl == pytest.approx(85.28, abs=0.01)


def test_uma_far_branch_beyond_breakpoint():
    d2, h_bs, h_ue = 1000.0, 25.0, 1.5
    d3 = math.hypot(d2, h_bs - h_ue)
    d_bp = 4 * 24 * 0.5 * FC / 3e8
    oracle = 28 + 40 * math.log10(d3) + 20 * math.log10(3.5) - 9 * math.log10(d_bp**2 + (h_bs - h_ue) ** 2)
    assert pathloss_uma(d2, d3, h_ue, FC, True) == pytest.approx(oracle, abs=1e-9)


@pytest.mark.parametrize("fn,dh", [(pathloss_uma, 23.5), (pathloss_umi, 8.5)])
def test_nlos_never_below_los(fn, dh):
    d2 = np.linspace(10.0, 5000.0, 1000)
    d3 = np.hypot(d2, dh)
    assert np.all(fn(d2, d3, 1.5, FC, False) >= fn(d2, d3, 1.5, FC, True))


def test_umi_monotone_on_each_branch():
    d2 = np.linspace(10.0, 5000.0, 2000)
    d3 = np.hypot(d2, 8.5)
    for los in (True, False):
        pl = pathloss_umi(d2, d3, 1.5, FC, los)
        near = d2 <= 210.0
        assert np.all(np.diff(pl[near]) >= 0) and np.all(np.diff(pl[~near]) >= 0)


def test_distances_below_floor_are_clamped():
    assert pathloss_umi(1.0, 9.0, 1.5, FC, True) == pathloss_umi(10.0, math.hypot(10, 8.5), 1.5, FC, True)


# -- shadowing -------------------------------------------------------------


def test_shadowing_correlation_values():
    c = shadowing_correlation([[0, 0], [0, 0], [50, 0]], 50.0)
    assert c[0, 1] == 1.0
    assert c[0, 2] == pytest.approx(math.exp(-1))


def test_shadowing_covariance_monte_carlo():
    z = correlated_shadowing("bs", [[0.0, 0.0], [50.0, 0.0]], 100000, rng=7)
    emp = np.cov(z)
    assert emp[0, 1] == pytest.approx(36.0 * math.exp(-1), rel=0.05)
    assert emp[0, 0] == pytest.approx(36.0, rel=0.05)


def test_shadowing_independent_across_nodes():
    z = correlated_shadowing("ap", [[0.0, 0.0]], 100000, rng=8)
    r = np.corrcoef(z[0, :-1], z[0, 1:])[0, 1]
    assert abs(r) < 4 / math.sqrt(1e5)


def test_shadowing_marginal_is_gaussian():
    z = correlated_shadowing("ap", [[0.0, 0.0]], 100000, rng=9)[0]
    assert stats.kstest(z / 7.82, "norm").pvalue > 0.01


# -- antenna pattern and steering -----------------------------------------


def test_array_gain_shape():
    g_max = 10 ** 0.8
    assert array_gain_bs(0.0) == pytest.approx(g_max)
    assert array_gain_bs(0.4) == pytest.approx(array_gain_bs(-0.4))
    assert array_gain_bs(np.deg2rad(32.5)) == pytest.approx(g_max * 10 ** -0.3)
    for a in (np.pi / 2, -np.pi / 2, np.pi):
        assert array_gain_bs(a) == pytest.approx(g_max * 1e-3)


@settings(max_examples=100, deadline=None)
@given(st.floats(-np.pi, np.pi))
def test_array_gain_bounded_by_peak(a):
    assert 10 ** 0.8 * 1e-3 - 1e-15 <= array_gain_bs(a) <= 10 ** 0.8


def test_steering_vector_examples():
    assert np.allclose(steering_vector(0.0, 4), np.ones(4))
    assert np.allclose(steering_vector(np.pi / 2, 2), [1, -1])


@settings(max_examples=50, deadline=None)
@given(st.floats(-np.pi, np.pi), st.integers(1, 64))
def test_steering_vector_norm(a, n):
    assert np.linalg.norm(steering_vector(a, n)) ** 2 == pytest.approx(n)


# -- channels --------------------------------------------------------------


def test_rayleigh_channel_power_normalization():
    links = _links(np.full((10000, 1), 2e-9), 0.0)
    g, _ = draw_link_channels(links, 8, rng=1)
    p = np.sum(np.abs(g[:, 0]) ** 2, axis=1) / (8 * 2e-9)
    assert abs(p.mean() - 1.0) < 3 * p.std() / math.sqrt(len(p))


def test_pure_los_channel_is_deterministic_in_magnitude():
    links = _links(np.full((20, 1), 3e-8), np.inf, aod=0.7)
    g, _ = draw_link_channels(links, 8, rng=2)
    assert np.allclose(np.sum(np.abs(g[:, 0]) ** 2, axis=1), 8 * 3e-8)
    a = steering_vector(0.7, 8)
    cosines = np.abs(g[:, 0] @ a.conj()) / (np.linalg.norm(g[:, 0], axis=1) * np.linalg.norm(a))
    assert np.allclose(cosines, 1.0)


def test_unit_rician_factor_splits_power_in_half():
    links = _links(np.ones((20000, 1)), 1.0, aod=0.2)
    g, phase = draw_link_channels(links, 4, rng=3)
    los = np.sqrt(0.5) * np.exp(1j * phase[:, 0])[:, None] * steering_vector(0.2, 4)
    frac = np.sum(np.abs(los) ** 2, axis=1) / 4
    scatter = np.sum(np.abs(g[:, 0] - los) ** 2, axis=1) / 4
    assert frac.mean() == pytest.approx(0.5)
    assert abs(scatter.mean() - 0.5) < 3 * scatter.std() / math.sqrt(len(scatter))


def _layout(seed=0):
    lay = place_aps(build_hex_layout(500.0, 1, 2), "uniform", 3, seed)
    return drop_users(lay, 3, seed + 1)


def test_large_scale_composition():
    lay = _layout()
    ap, bs = compute_large_scale(lay, PropagationParams(), rng=4)
    assert ap.coeff.shape == (27, 9) and bs.coeff.shape == (27, 9)
    assert np.allclose(ap.coeff, 10 ** ((-ap.pathloss_db + ap.shadow_db) / 10))
    gain = array_gain_bs(bs.aod)
    assert np.allclose(bs.coeff, gain * 10 ** ((-bs.pathloss_db + bs.shadow_db) / 10))
    assert np.all(ap.coeff > 0) and np.all(bs.coeff > 0)
    assert np.all(ap.k_factor == 0) and np.all(bs.k_factor == 0)


def test_rician_mode_uses_los_probability():
    ap, bs = compute_large_scale(_layout(), PropagationParams(rician=True), rng=5)
    assert np.allclose(ap.k_factor[ap.p_los < 0.9], rician_factor(ap.p_los[ap.p_los < 0.9]))


def test_large_scale_reproducible():
    a = compute_large_scale(_layout(), PropagationParams(), rng=6)
    b = compute_large_scale(_layout(), PropagationParams(), rng=6)
    assert np.array_equal(a[0].coeff, b[0].coeff) and np.array_equal(a[1].coeff, b[1].coeff)
