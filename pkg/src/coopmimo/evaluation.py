"""Downlink SINR, spectral-efficiency bound, CDFs and the Monte Carlo driver."""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .association import Scenario, associate
from .config import SimConfig
from .estimation import EstimateSet, assign_pilots, lmmse_estimate
from .fronthaul import FronthaulParams, enforce_fronthaul
from .geometry import NetworkLayout, build_hex_layout, drop_users, place_aps
from .precoding import JOINT_PRECODERS, PrecoderPowerSet, design_joint, design_local
from .propagation import ChannelSet, LinkLargeScale, PropagationParams, compute_large_scale, draw_channels

log = logging.getLogger(__name__)

RESULT_FIELDS = ("trial", "user_id", "class", "scenario", "precoder", "alpha", "rate_bps", "sinr_db")


def noise_power_w(n0_dbm_hz, bandwidth, noise_figure_db):
    return 10.0 ** ((n0_dbm_hz + 10.0 * np.log10(bandwidth) + noise_figure_db - 30.0) / 10.0)


def stacked_channels(channels: ChannelSet):
    """True channels of every user over all node antennas, shape (K, N_AP*M + N_BS*L)."""
    k = channels.g.shape[0]
    return np.concatenate([channels.g.reshape(k, -1), channels.h.reshape(k, -1)], axis=1)


def dl_sinr(channels: ChannelSet, precoders: PrecoderPowerSet, noise_var):
    """Per-user downlink SINR evaluated on the true channels.

    With E = C^H V (C the stacked channels, V the power-scaled precoders),
    SINR_k = |E_kk|^2 / (sum_{j != k} |E_kj|^2 + noise_var).
    """
    e = stacked_channels(channels).conj() @ precoders.effective_matrix()
    p = np.abs(e) ** 2
    signal = np.diag(p).copy()
    interference = p.sum(axis=1) - signal
    return signal / (interference + noise_var)


def se_prefactor(tau_p, tau_c):
    """Fraction of the coherence block spent on downlink data, (tau_c - tau_p) / (2 tau_c)."""
    return (tau_c - tau_p) / 2.0 / tau_c


def se_upper_bound(sinr_samples, tau_p, tau_c):
    """SE per user from SINR samples shaped (trials, K) or (K,); the mean runs over trials."""
    s = np.asarray(sinr_samples, dtype=float)
    inst = np.log2(1.0 + s)
    return se_prefactor(tau_p, tau_c) * (inst.mean(axis=0) if s.ndim > 1 else inst)


def cdf(samples):
    """Empirical CDF as sorted values and fractions i/n."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    return x, np.arange(1, len(x) + 1) / len(x)


@dataclass(frozen=True, eq=False)
class TrialState:
    """Everything drawn at random for one trial, shared by all evaluated variants."""

    trial: int
    layout: NetworkLayout
    ap_links: LinkLargeScale
    bs_links: LinkLargeScale
    channels: ChannelSet
    estimates: EstimateSet


@dataclass(eq=False)
class TrialResult:
    trial: int
    seed: tuple
    scenario: str
    precoder: str
    alpha: float
    user_ids: np.ndarray
    classes: np.ndarray
    sinr: np.ndarray
    se: np.ndarray
    rate: np.ndarray
    fh_trace: list = field(default_factory=list)


def trial_seed(cfg: SimConfig, trial: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(cfg.master_seed, spawn_key=(trial,))


def draw_large_scale(cfg: SimConfig, trial: int):
    """Geometry and large-scale fading of one trial: ``(layout, ap_links, bs_links)``."""
    geo, large, _, _ = trial_seed(cfg, trial).spawn(4)
    if cfg.freeze_geometry:
        geo = trial_seed(cfg, 0).spawn(1)[0]
    geo_ap, geo_ue = geo.spawn(2)
    layout = build_hex_layout(cfg.isd, cfg.n_center_cells, cfg.n_ring_cells)
    layout = place_aps(layout, cfg.ap_mode, cfg.aps_per_cell, np.random.default_rng(geo_ap))
    layout = drop_users(layout, cfg.users_per_sector, np.random.default_rng(geo_ue))
    params = PropagationParams(fc=cfg.fc, rician=cfg.fading == "rician")
    ap_links, bs_links = compute_large_scale(layout, params, np.random.default_rng(large))
    return layout, ap_links, bs_links


def draw_trial(cfg: SimConfig, trial: int) -> TrialState:
    """Draw geometry, large-scale fading, channels and channel estimates of one trial."""
    _, _, small, training = trial_seed(cfg, trial).spawn(4)
    layout, ap_links, bs_links = draw_large_scale(cfg, trial)
    channels = draw_channels(ap_links, bs_links, cfg.n_ant_ap, cfg.n_ant_bs, np.random.default_rng(small))
    eta = cfg.training_energy
    if cfg.csi == "perfect":
        estimates = EstimateSet.perfect(channels, eta)
    else:
        pilots = assign_pilots(layout.ue_positions, cfg.tau_p)
        estimates = lmmse_estimate(
            channels, pilots, ap_links, bs_links, eta, cfg.noise_var, np.random.default_rng(training)
        )
    return TrialState(trial, layout, ap_links, bs_links, channels, estimates)


def fronthaul_params(cfg: SimConfig, precoder=None) -> FronthaulParams:
    mode = "joint" if (precoder or cfg.precoder) in JOINT_PRECODERS else "local"
    return FronthaulParams(
        m_qam=cfg.m_qam, n_rb=cfg.n_rb, n_sc_rb=cfg.n_sc_rb, n_sc_ofdm=cfg.n_sc_ofdm, tau_data=cfg.tau_data,
        tau_weight=cfg.tau_weight, n_q=cfg.n_q, n_cb_rb=cfg.n_cb_rb, eta_cpri=cfg.eta_cpri,
        f_limit=cfg.f_limit, mode=mode,
    )


def trial_association(ap_links, bs_links, cfg: SimConfig, scenario, precoder, enforce=None):
    """Association of one trial, pruned to the fronthaul limit if enabled.

    Returns ``(initial, final, trace)``.
    """
    assoc = associate(
        scenario, bs_links.coeff, ap_links.coeff, cfg.n_sel_ap, cfg.n_sel_bs, cfg.n_ant_ap, cfg.n_ant_bs
    )
    if not (cfg.fronthaul_enforce if enforce is None else enforce):
        return assoc, assoc, []
    delta = np.concatenate([ap_links.coeff, bs_links.coeff], axis=1)
    res = enforce_fronthaul(
        assoc, delta, fronthaul_params(cfg, precoder), cfg.n_ant_ap, cfg.n_ant_bs, cfg.noise_var
    )
    return assoc, res.assoc, res.trace


def evaluate_trial(state: TrialState, cfg: SimConfig, scenario=None, precoder=None, alpha=None) -> TrialResult:
    """Associate, design precoders and powers, and evaluate SINR and rate for one variant."""
    scenario = Scenario.parse(scenario or cfg.scenario)
    precoder = precoder or cfg.precoder
    alpha = cfg.alpha if alpha is None else alpha
    _, assoc, trace = trial_association(state.ap_links, state.bs_links, cfg, scenario, precoder)
    if precoder in JOINT_PRECODERS:
        pps = design_joint(state.estimates, assoc, cfg.r_jpzf, cfg.p_ap_w, cfg.p_bs_w, shrink=cfg.fronthaul_enforce)
    else:
        pps = design_local(
            precoder, state.estimates, assoc, state.ap_links.coeff, state.bs_links.coeff, alpha,
            cfg.p_ap_w, cfg.p_bs_w, cfg.n_pzf_ap, cfg.n_pzf_bs, cfg.noise_var,
        )
    sinr_all = dl_sinr(state.channels, pps, cfg.noise_var)
    users = np.flatnonzero(state.layout.evaluated_users())
    inside = state.layout.user_classes()[users]
    sinr = sinr_all[users]
    se = se_upper_bound(sinr, cfg.tau_p, cfg.tau_c)
    return TrialResult(
        trial=state.trial,
        seed=(cfg.master_seed, state.trial),
        scenario=scenario.value,
        precoder=precoder,
        alpha=float(alpha),
        user_ids=users,
        classes=np.where(inside, "cell_inside", "cell_edge"),
        sinr=sinr,
        se=se,
        rate=se * cfg.bandwidth,
        fh_trace=[(state.trial,) + row for row in trace],
    )


def _run_one(args):
    cfg, trial, variants = args
    state = draw_trial(cfg, trial)
    return [evaluate_trial(state, cfg, *v) for v in variants]


def run_monte_carlo(cfg: SimConfig, variants=None) -> list:
    """Run ``cfg.trials`` trials; each variant ``(scenario, precoder, alpha)`` reuses the trial's draws.

    Returns TrialResult objects ordered by trial, then variant.
    """
    if variants is None:
        variants = [(cfg.scenario, cfg.precoder, cfg.alpha)]
    # validates every variant before trial 0
    for scenario, precoder, _ in variants:
        cfg.replace(scenario=scenario, precoder=precoder)
    jobs = [(cfg, t, list(variants)) for t in range(cfg.trials)]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            chunks = list(pool.map(_run_one, jobs))
    else:
        chunks = [_run_one(j) for j in jobs]
    return [r for chunk in chunks for r in chunk]


def pooled(results, key="rate", user_class=None, scenario=None, precoder=None, alpha=None):
    """Concatenate per-(user, trial) samples matching the given tags."""
    out = []
    for r in results:
        if scenario is not None and r.scenario != Scenario.parse(scenario).value:
            continue
        if precoder is not None and r.precoder != precoder:
            continue
        if alpha is not None and r.alpha != alpha:
            continue
        v = getattr(r, key)
        out.append(v if user_class is None else v[r.classes == user_class])
    return np.concatenate(out) if out else np.zeros(0)


def _fmt(x):
    return repr(float(x))


def write_results_csv(results, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RESULT_FIELDS)
        for r in results:
            with np.errstate(divide="ignore"):
                sinr_db = 10.0 * np.log10(r.sinr)
            for u, c, rate, s in zip(r.user_ids, r.classes, r.rate, sinr_db):
                w.writerow((r.trial, int(u), c, r.scenario, r.precoder, _fmt(r.alpha), _fmt(rate), _fmt(s)))


def write_cdf_csv(results, user_class, path, group_by=("scenario", "precoder", "alpha")) -> None:
    """Plot-ready CDF of the rate for one user class, one curve per tag combination."""
    groups = {}
    for r in results:
        groups.setdefault(tuple(getattr(r, g) for g in group_by), []).append(r)
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(group_by + ("rate_bps", "cdf"))
        for tags, rs in groups.items():
            x, f = cdf(pooled(rs, user_class=user_class)) if rs else (np.zeros(0), np.zeros(0))
            if not len(x):
                continue
            for xi, fi in zip(x, f):
                w.writerow(tuple(_fmt(t) if isinstance(t, float) else t for t in tags) + (_fmt(xi), _fmt(fi)))
