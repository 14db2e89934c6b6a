"""Downlink simulator for cooperating macro cells and a cell-free access-point layer."""

__version__ = "0.1.0"

from .association import AssociationState, Scenario, associate
from .config import SimConfig, emit_config, parse_config
from .evaluation import cdf, dl_sinr, pooled, run_monte_carlo, se_upper_bound
from .exceptions import ConfigError, InvalidParameterError, ZeroBeamformerError
from .fronthaul import FronthaulParams, enforce_fronthaul, fh_data_load, fh_weight_load, proxy_sinr
from .geometry import build_hex_layout, drop_users, place_aps
from .precoding import equal_stream_power, fpa_powers, jpzf, pzf_local, precoder_complexity

__all__ = [
    "AssociationState", "ConfigError", "FronthaulParams", "InvalidParameterError", "Scenario", "SimConfig",
    "ZeroBeamformerError", "associate", "build_hex_layout", "cdf", "dl_sinr", "drop_users", "emit_config",
    "enforce_fronthaul", "equal_stream_power", "fh_data_load", "fh_weight_load", "fpa_powers", "jpzf",
    "parse_config", "place_aps", "pooled", "precoder_complexity", "proxy_sinr", "pzf_local", "run_monte_carlo",
    "se_upper_bound",
]
