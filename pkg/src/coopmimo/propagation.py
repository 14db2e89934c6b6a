"""Large-scale propagation (3GPP TR 38.901 UMa/UMi) and Rician small-scale channels.

BS links follow the urban-macro model with a sectorized Gaussian antenna
pattern; AP links follow the urban-micro model. All functions accept numpy
arrays and broadcast elementwise.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import InvalidParameterError
from .geometry import NetworkLayout

SPEED_OF_LIGHT = 3e8
MIN_DISTANCE_2D = 10.0
PURE_LOS_THRESHOLD = 1 - 1e-9

# (sigma_SF [dB], decorrelation distance [m])
SHADOWING = {"bs": (6.0, 50.0), "ap": (7.82, 13.0)}
SHADOWING_JITTER = 1e-10


def los_probability_uma(d2d, h_ue=1.5):
    """LOS probability towards a macro BS; 1 up to 18 m, height-dependent beyond."""
    h_ue = float(h_ue)
    if not 1.5 <= h_ue <= 23.0:
        raise InvalidParameterError(f"UMa LOS model needs 1.5 <= h_ue <= 23, got {h_ue}")
    d = np.asarray(d2d, dtype=float)
    c_h = 0.0 if h_ue <= 13.0 else ((h_ue - 13.0) / 10.0) ** 1.5
    with np.errstate(divide="ignore", invalid="ignore"):
        base = 18.0 / d + (1.0 - 18.0 / d) * np.exp(-d / 63.0)
        boost = 1.0 + 1.25 * c_h * (d / 100.0) ** 3 * np.exp(-d / 150.0)
        p = base * boost
    p = np.where(d <= 18.0, 1.0, np.clip(p, 0.0, 1.0))
    return p if p.ndim else float(p)


def los_probability_umi(d2d):
    d = np.asarray(d2d, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = 18.0 / d + (1.0 - 18.0 / d) * np.exp(-d / 36.0)
    p = np.where(d <= 18.0, 1.0, p)
    return p if p.ndim else float(p)


def rician_factor(p_los):
    """Linear Rician factor p/(1-p); ``inf`` marks a pure-LOS link."""
    p = np.asarray(p_los, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        k = np.where(p >= PURE_LOS_THRESHOLD, np.inf, p / (1.0 - p))
    return k if k.ndim else float(k)


def breakpoint_distance(h_tx_eff, h_ue_eff, fc):
    h_tx_eff = np.asarray(h_tx_eff, dtype=float)
    h_ue_eff = np.asarray(h_ue_eff, dtype=float)
    if np.any(h_tx_eff <= 0) or np.any(h_ue_eff <= 0):
        raise InvalidParameterError("effective antenna heights must be positive")
    d = 4.0 * h_tx_eff * h_ue_eff * fc / SPEED_OF_LIGHT
    return d if d.ndim else float(d)


def effective_environment_height_uma(d2d, h_ue, rng=None):
    """Draw the UMa effective environment height per link.

    With probability 1/(1+C) it is 1 m, otherwise uniform over {12, 15,
    h_ue - 1.5} restricted to heights below the user. For h_ue < 13 m the
    result is deterministically 1 m.
    """
    d = np.asarray(d2d, dtype=float)
    if h_ue < 13.0:
        return np.ones_like(d)
    g = np.where(d <= 18.0, 0.0, 1.25 * (d / 100.0) ** 3 * np.exp(-d / 50.0))
    c = ((h_ue - 13.0) / 10.0) ** 1.5 * g
    p_one = 1.0 / (1.0 + c)
    rng = np.random.default_rng(rng)
    options = np.array([h for h in (12.0, 15.0, h_ue - 1.5) if h < h_ue - 1e-9] or [1.0])
    pick = options[rng.integers(0, len(options), size=d.shape)]
    return np.where(rng.random(d.shape) < p_one, 1.0, pick)


def _floor_distances(d2d, d3d, dh):
    d2 = np.maximum(np.asarray(d2d, dtype=float), MIN_DISTANCE_2D)
    d3 = np.maximum(np.asarray(d3d, dtype=float), np.sqrt(MIN_DISTANCE_2D**2 + dh**2))
    return d2, d3


def pathloss_uma(d2d, d3d, h_ue, fc, los, rng=None, h_bs=25.0):
    """UMa path loss in dB. NLOS links take the max of the LOS and NLOS formulas."""
    d2, d3 = _floor_distances(d2d, d3d, h_bs - h_ue)
    f_ghz = fc / 1e9
    h_e = effective_environment_height_uma(d2, h_ue, rng)
    d_bp = breakpoint_distance(h_bs - h_e, h_ue - h_e, fc)
    near = 28.0 + 22.0 * np.log10(d3) + 20.0 * np.log10(f_ghz)
    far = (
        28.0
        + 40.0 * np.log10(d3)
        + 20.0 * np.log10(f_ghz)
        - 9.0 * np.log10(d_bp**2 + (h_bs - h_ue) ** 2)
    )
    pl_los = np.where(d2 <= d_bp, near, far)
    pl_nlos = 13.54 + 39.08 * np.log10(d3) + 20.0 * np.log10(f_ghz) - 0.6 * (h_ue - 1.5)
    pl = np.where(los, pl_los, np.maximum(pl_los, pl_nlos))
    return pl if pl.ndim else float(pl)


def pathloss_umi(d2d, d3d, h_ue, fc, los, h_ap=10.0):
    """UMi street-canyon path loss in dB, effective environment height fixed at 1 m."""
    d2, d3 = _floor_distances(d2d, d3d, h_ap - h_ue)
    f_ghz = fc / 1e9
    d_bp = breakpoint_distance(h_ap - 1.0, h_ue - 1.0, fc)
    near = 32.4 + 21.0 * np.log10(d3) + 20.0 * np.log10(f_ghz)
    far = (
        32.4
        + 40.0 * np.log10(d3)
        + 20.0 * np.log10(f_ghz)
        - 9.5 * np.log10(d_bp**2 + (h_ap - h_ue) ** 2)
    )
    pl_los = np.where(d2 <= d_bp, near, far)
    pl_nlos = 22.4 + 35.3 * np.log10(d3) + 21.3 * np.log10(f_ghz) - 0.3 * (h_ue - 1.5)
    pl = np.where(los, pl_los, np.maximum(pl_los, pl_nlos))
    return pl if pl.ndim else float(pl)


def shadowing_correlation(ue_positions, d_corr):
    """Exponential inter-user correlation matrix exp(-distance/d_corr)."""
    x = np.asarray(ue_positions, dtype=float)
    d = np.linalg.norm(x[:, None, :] - x[None, :, :], axis=-1)
    return np.exp(-d / d_corr)


def correlated_shadowing(node_kind, ue_positions, n_nodes, rng=None, sigma_db=None, d_corr=None):
    """Shadowing in dB, shape (n_users, n_nodes).

    Users seen from one node are correlated with exp(-distance/d_corr);
    distinct nodes are independent.
    """
    default_sigma, default_dcorr = SHADOWING[node_kind]
    sigma_db = default_sigma if sigma_db is None else sigma_db
    d_corr = default_dcorr if d_corr is None else d_corr
    rng = np.random.default_rng(rng)
    k = len(ue_positions)
    corr = shadowing_correlation(ue_positions, d_corr) + SHADOWING_JITTER * np.eye(k)
    chol = np.linalg.cholesky(corr)
    return sigma_db * chol @ rng.standard_normal((k, n_nodes))


def array_gain_bs(angle, g_max_db=8.0, hpbw_deg=65.0, edge_attenuation_db=30.0):
    """Linear sector gain for an azimuth offset from boresight.

    The attenuation is Gaussian in linear scale (parabolic in dB) with the
    -3 dB points at +-hpbw/2 and capped at ``edge_attenuation_db``; the back
    half-plane (|angle| >= pi/2) sits at the cap.
    """
    a = np.asarray(angle, dtype=float)
    half = np.deg2rad(hpbw_deg) / 2.0
    att = np.minimum(3.0 * (a / half) ** 2, edge_attenuation_db)
    att = np.where(np.abs(a) < np.pi / 2, att, edge_attenuation_db)
    g = 10.0 ** ((g_max_db - att) / 10.0)
    return g if g.ndim else float(g)


def steering_vector(angle, n_antennas):
    """Half-wavelength ULA response; broadcasts over ``angle`` into a trailing axis."""
    a = np.asarray(angle, dtype=float)
    return np.exp(1j * np.pi * np.arange(n_antennas) * np.sin(a)[..., None])


def wrap_angle(a):
    return np.mod(np.asarray(a) + np.pi, 2 * np.pi) - np.pi


@dataclass(frozen=True, eq=False)
class LinkLargeScale:
    """Large-scale description of all user-to-node links of one kind, arrays of shape (K, n_nodes)."""

    kind: str
    d2d: np.ndarray
    d3d: np.ndarray
    p_los: np.ndarray
    is_los: np.ndarray
    k_factor: np.ndarray
    pathloss_db: np.ndarray
    shadow_db: np.ndarray
    coeff: np.ndarray
    aod: np.ndarray

    @property
    def coeff_db(self):
        return 10.0 * np.log10(self.coeff)


@dataclass(frozen=True)
class PropagationParams:
    fc: float = 3.5e9
    rician: bool = False
    g_max_db: float = 8.0
    hpbw_deg: float = 65.0
    edge_attenuation_db: float = 30.0


def _distances(ue, nodes, dh):
    diff = ue[:, None, :] - nodes[None, :, :]
    d2 = np.linalg.norm(diff, axis=-1)
    return diff, d2, np.sqrt(d2**2 + dh**2)


def compute_large_scale(layout: NetworkLayout, params: PropagationParams, rng=None):
    """Draw LOS states and shadowing and evaluate every UE-AP and UE-BS link.

    Returns ``(ap_links, bs_links)``. In Rayleigh mode the Rician factors are
    zero but LOS states still select the path-loss formula.
    """
    rng = np.random.default_rng(rng)
    ue = layout.ue_positions
    h_ue = layout.h_ue
    k = layout.n_ue

    diff, d2, d3 = _distances(ue, layout.ap_positions, layout.h_ap - h_ue)
    p = los_probability_umi(d2) if layout.n_ap else np.zeros((k, 0))
    los = rng.random(p.shape) < p
    pl = pathloss_umi(d2, d3, h_ue, params.fc, los, h_ap=layout.h_ap) if layout.n_ap else np.zeros((k, 0))
    z = correlated_shadowing("ap", ue, layout.n_ap, rng)
    ap = LinkLargeScale(
        kind="ap",
        d2d=d2,
        d3d=d3,
        p_los=p,
        is_los=los,
        k_factor=rician_factor(p) if params.rician else np.zeros_like(p),
        pathloss_db=pl,
        shadow_db=z,
        coeff=10.0 ** ((-pl + z) / 10.0),
        aod=np.arctan2(diff[..., 1], diff[..., 0]),
    )

    diff, d2, d3 = _distances(ue, layout.bs_positions, layout.h_bs - h_ue)
    p = los_probability_uma(d2, h_ue)
    los = rng.random(p.shape) < p
    pl = pathloss_uma(d2, d3, h_ue, params.fc, los, rng=rng, h_bs=layout.h_bs)
    z = correlated_shadowing("bs", ue, layout.n_bs, rng)
    off = wrap_angle(np.arctan2(diff[..., 1], diff[..., 0]) - layout.sector_orientations[None, :])
    gain = array_gain_bs(off, params.g_max_db, params.hpbw_deg, params.edge_attenuation_db)
    bs = LinkLargeScale(
        kind="bs",
        d2d=d2,
        d3d=d3,
        p_los=p,
        is_los=los,
        k_factor=rician_factor(p) if params.rician else np.zeros_like(p),
        pathloss_db=pl,
        shadow_db=z,
        coeff=gain * 10.0 ** ((-pl + z) / 10.0),
        aod=off,
    )
    return ap, bs


def rician_weights(k_factor):
    """Power split (LOS, scattered) = (K/(K+1), 1/(K+1)), with K = inf giving (1, 0)."""
    k = np.asarray(k_factor, dtype=float)
    inf = np.isinf(k)
    safe = np.where(inf, 0.0, k)
    return np.where(inf, 1.0, safe / (safe + 1.0)), np.where(inf, 0.0, 1.0 / (safe + 1.0))


def prior_covariance(links: LinkLargeScale, n_antennas, user=None, node=None):
    """Channel covariance coeff/(K+1) * (K a a^H + I), shape (..., N, N)."""
    sel = (slice(None) if user is None else user, slice(None) if node is None else node)
    w_los, w_nlos = rician_weights(links.k_factor[sel])
    coeff = links.coeff[sel]
    a = steering_vector(links.aod[sel], n_antennas)
    eye = np.eye(n_antennas)
    return coeff[..., None, None] * (
        w_los[..., None, None] * a[..., :, None] * a[..., None, :].conj() + w_nlos[..., None, None] * eye
    )


def draw_link_channels(links: LinkLargeScale, n_antennas, rng=None):
    rng = np.random.default_rng(rng)
    shape = links.coeff.shape
    phase = rng.uniform(0.0, 2 * np.pi, size=shape)
    scatter = (rng.standard_normal(shape + (n_antennas,)) + 1j * rng.standard_normal(shape + (n_antennas,))) / np.sqrt(2)
    w_los, w_nlos = rician_weights(links.k_factor)
    a = steering_vector(links.aod, n_antennas)
    ch = np.sqrt(links.coeff)[..., None] * (
        np.sqrt(w_los)[..., None] * np.exp(1j * phase)[..., None] * a + np.sqrt(w_nlos)[..., None] * scatter
    )
    return ch, phase


@dataclass(frozen=True, eq=False)
class ChannelSet:
    """True channels: ``g`` (K, M, N_AP) towards APs and ``h`` (K, L, N_BS) towards BSs."""

    g: np.ndarray
    h: np.ndarray
    phase_ap: np.ndarray
    phase_bs: np.ndarray


def draw_channels(ap_links: LinkLargeScale, bs_links: LinkLargeScale, n_ant_ap, n_ant_bs, rng=None) -> ChannelSet:
    rng = np.random.default_rng(rng)
    g, ph_a = draw_link_channels(ap_links, n_ant_ap, rng)
    h, ph_b = draw_link_channels(bs_links, n_ant_bs, rng)
    return ChannelSet(g=g, h=h, phase_ap=ph_a, phase_bs=ph_b)


LARGE_SCALE_FIELDS = ("k", "node_id", "kind", "d2d", "p_los", "is_los", "PL_dB", "shadow_dB", "coeff_dB")


def write_large_scale_csv(links, path) -> None:
    """Dump one or more :class:`LinkLargeScale` tables to a single CSV."""
    if isinstance(links, LinkLargeScale):
        links = [links]
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LARGE_SCALE_FIELDS)
        for ls in links:
            coeff_db = ls.coeff_db
            for k, n in np.ndindex(ls.coeff.shape):
                w.writerow(
                    (k, n, ls.kind, f"{ls.d2d[k, n]:.6f}", f"{ls.p_los[k, n]:.6f}", int(ls.is_los[k, n]),
                     f"{ls.pathloss_db[k, n]:.6f}", f"{ls.shadow_db[k, n]:.6f}", f"{coeff_db[k, n]:.6f}")
                )
