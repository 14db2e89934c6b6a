"""Simulation configuration: defaults, validation and YAML round-trip."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, fields
from pathlib import Path

import yaml

from .association import Scenario
from .exceptions import ConfigError
from .geometry import SECTORS_PER_SITE
from .precoding import JOINT_PRECODERS, LOCAL_PRECODERS


def dbm_to_w(dbm):
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class SimConfig:
    # layout
    isd: float = 500.0
    n_center_cells: int = 3
    n_ring_cells: int = 9
    aps_per_cell: int = 9
    users_per_sector: int = 5
    ap_mode: str = "uniform"
    # radio
    n_ant_bs: int = 32
    n_ant_ap: int = 8
    p_bs_dbm: float = 46.0
    p_ap_dbm: float = 39.0
    pilot_power_dbm: float = 10.0 * math.log10(300.0)
    fc: float = 3.5e9
    bandwidth: float = 20e6
    n0_dbm_hz: float = -174.0
    noise_figure_db: float = 9.0
    fading: str = "rayleigh"
    csi: str = "imperfect"
    tau_c: int = 640
    tau_p: int = 32
    # association and precoding
    scenario: str = "full"
    precoder: str = "mmse"
    alpha: float = -0.5
    n_sel_bs: int = 3
    n_sel_ap: int = 6
    n_pzf_bs: int = 16
    n_pzf_ap: int = 4
    r_jpzf: int = 72
    # fronthaul
    fronthaul_enforce: bool = False
    m_qam: int = 256
    n_rb: int = 55
    n_sc: int = 1024
    n_sc_rb: int = 19
    n_sc_ofdm: int = 14
    tau_data: float = 0.5e-3
    tau_weight: float = 0.2e-3
    n_q: int = 8
    n_cb_rb: int = 64
    eta_cpri: float = 0.85
    f_limit: float = 5e9
    # Monte Carlo
    trials: int = 200
    master_seed: int = 0
    freeze_geometry: bool = False
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "scenario", Scenario.parse(self.scenario).value)
        object.__setattr__(self, "ap_mode", self.ap_mode.replace("-", "_"))
        validate(self)

    @property
    def n_sites(self) -> int:
        return self.n_center_cells + self.n_ring_cells

    @property
    def n_bs(self) -> int:
        return SECTORS_PER_SITE * self.n_sites

    @property
    def n_ap(self) -> int:
        return self.aps_per_cell * self.n_sites

    @property
    def n_ue(self) -> int:
        return self.users_per_sector * self.n_bs

    @property
    def p_bs_w(self) -> float:
        return dbm_to_w(self.p_bs_dbm)

    @property
    def p_ap_w(self) -> float:
        return dbm_to_w(self.p_ap_dbm)

    @property
    def pilot_power_w(self) -> float:
        return dbm_to_w(self.pilot_power_dbm)

    @property
    def training_energy(self) -> float:
        """Pilot power times pilot length, the eta used for training and MMSE design."""
        return self.tau_p * self.pilot_power_w

    @property
    def noise_var(self) -> float:
        return dbm_to_w(self.n0_dbm_hz + 10.0 * math.log10(self.bandwidth) + self.noise_figure_db)

    @property
    def fh_mode(self) -> str:
        return "joint" if self.precoder in JOINT_PRECODERS else "local"

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _check(cond, msg):
    if not cond:
        raise ConfigError(msg)


def validate(cfg: SimConfig) -> None:
    """Reject inconsistent settings with a message naming the broken constraint."""
    _check(cfg.n_pzf_ap < cfg.n_ant_ap, "n_pzf_ap < n_ant_ap violated")
    _check(cfg.n_pzf_bs < cfg.n_ant_bs, "n_pzf_bs < n_ant_bs violated")
    _check(cfg.tau_p <= cfg.tau_c, "tau_p <= tau_c violated")
    _check(cfg.tau_p >= 1, "tau_p >= 1 violated")
    n_ap_sel = cfg.n_sel_ap if cfg.n_ap else 0
    _check(
        cfg.r_jpzf <= cfg.n_ant_ap * n_ap_sel + cfg.n_ant_bs * cfg.n_sel_bs,
        "r_jpzf <= n_ant_ap*n_sel_ap + n_ant_bs*n_sel_bs violated",
    )
    _check(cfg.n_sel_ap <= cfg.n_ap or cfg.n_ap == 0, "n_sel_ap <= number of APs violated")
    _check(cfg.n_sel_bs <= cfg.n_bs, "n_sel_bs <= number of BSs violated")
    _check(cfg.precoder in LOCAL_PRECODERS + JOINT_PRECODERS, f"unknown precoder {cfg.precoder!r}")
    _check(
        cfg.precoder not in JOINT_PRECODERS or cfg.scenario == Scenario.FULL.value,
        "jpzf requires scenario full",
    )
    _check(cfg.ap_mode in ("uniform", "cell_edge"), f"unknown ap_mode {cfg.ap_mode!r}")
    _check(cfg.fading in ("rayleigh", "rician"), f"unknown fading {cfg.fading!r}")
    _check(cfg.csi in ("perfect", "imperfect"), f"unknown csi {cfg.csi!r}")
    _check(cfg.trials >= 0, "trials >= 0 violated")
    _check(cfg.workers >= 1, "workers >= 1 violated")
    _check(cfg.users_per_sector >= 1, "users_per_sector >= 1 violated")
    _check(cfg.n_center_cells >= 1, "n_center_cells >= 1 violated")
    _check(0 < cfg.eta_cpri <= 1, "0 < eta_cpri <= 1 violated")
    _check(cfg.f_limit > 0, "f_limit > 0 violated")


_FIELD_TYPES = {f.name: f.type for f in fields(SimConfig)}


def from_dict(data: dict | None) -> SimConfig:
    """Build a config from a plain mapping; unknown keys are an error."""
    data = dict(data or {})
    unknown = sorted(set(data) - set(_FIELD_TYPES))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    clean = {}
    for key, value in data.items():
        kind = _FIELD_TYPES[key]
        try:
            if kind == "int":
                if isinstance(value, bool) or float(value) != int(value):
                    raise ValueError
                value = int(value)
            elif kind == "float":
                value = float(value)
            elif kind == "bool":
                if not isinstance(value, bool):
                    raise ValueError
            else:
                value = str(value)
        except (TypeError, ValueError):
            raise ConfigError(f"bad value for {key}: {value!r}") from None
        clean[key] = value
    return SimConfig(**clean)


def parse_config(path) -> SimConfig:
    """Read a YAML config (or a run manifest, whose ``config`` section is used)."""
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    if "config" in data and isinstance(data["config"], dict):
        data = data["config"]
    return from_dict(data)


def emit_config(cfg: SimConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


def write_config(cfg: SimConfig, path) -> None:
    Path(path).write_text(emit_config(cfg))
