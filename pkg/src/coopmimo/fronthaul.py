"""Fronthaul (FH) load model and FH-constrained link pruning.

The load of node n is linear in the number of users it serves: every user
costs a data share and, with joint (CPU-side) precoding, a beamforming-weight
share proportional to the node's antenna count.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .association import AssociationState

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FronthaulParams:
    m_qam: int = 256
    n_rb: int = 55
    n_sc_rb: int = 19
    n_sc_ofdm: int = 14
    tau_data: float = 0.5e-3
    tau_weight: float = 0.2e-3
    n_q: int = 8
    n_cb_rb: int = 64
    eta_cpri: float = 0.85
    f_limit: float = 5e9
    mode: str = "local"

    def __post_init__(self):
        numbers = (self.m_qam, self.n_rb, self.n_sc_rb, self.n_sc_ofdm, self.tau_data,
                   self.tau_weight, self.n_q, self.n_cb_rb, self.eta_cpri, self.f_limit)
        if any(not v > 0 for v in numbers):
            raise ValueError("fronthaul parameters must be positive")
        if self.eta_cpri > 1:
            raise ValueError("eta_cpri must be <= 1")
        if self.mode not in ("local", "joint"):
            raise ValueError(f"mode must be 'local' or 'joint', got {self.mode!r}")


def fh_data_load(n_served, params: FronthaulParams):
    """Data-payload share in bit/s."""
    per_user = (
        math.log2(params.m_qam) * params.n_rb * (params.n_sc_rb / params.tau_data)
        * (params.n_sc_ofdm / params.eta_cpri)
    )
    return np.asarray(n_served) * per_user


def fh_weight_load(n_served, n_antennas, params: FronthaulParams):
    """Beamforming-weight share in bit/s; zero for local processing."""
    if params.mode == "local":
        return np.zeros_like(np.asarray(n_served), dtype=float) * np.asarray(n_antennas)
    per_user_antenna = (
        2 * (params.n_rb / params.n_cb_rb) * (1.0 / params.tau_weight) * (params.n_q / params.eta_cpri)
    )
    return np.asarray(n_served) * np.asarray(n_antennas) * per_user_antenna


def node_loads(merged, n_antennas, params: FronthaulParams):
    """Total load F_n of every node given the K x (M+L) association and per-node antenna counts."""
    n_served = np.asarray(merged, dtype=bool).sum(axis=0)
    return fh_data_load(n_served, params) + fh_weight_load(n_served, n_antennas, params)


def max_users_per_node(n_antennas, params: FronthaulParams, f_limit=None):
    """Largest user count a node can serve without exceeding the FH limit."""
    limit = params.f_limit if f_limit is None else f_limit
    per_user = fh_data_load(1, params) + fh_weight_load(1, n_antennas, params)
    return int(np.floor(limit / per_user))


def proxy_sinr(k, excluded_node, merged, delta, noise_var):
    """Large-scale SINR proxy of user ``k`` if node ``excluded_node`` stopped serving it."""
    return proxy_sinr_all(excluded_node, merged, delta, noise_var)[k]


def proxy_sinr_all(excluded_node, merged, delta, noise_var):
    """Vector of proxy SINRs for every user with ``excluded_node`` removed from all sums."""
    a = np.asarray(merged, dtype=float).copy()
    d = np.asarray(delta, dtype=float)
    a[:, excluded_node] = 0.0
    signal = np.sum(a * d, axis=1)
    count = a.sum(axis=0)
    interference = np.sum(d * (count[None, :] - a), axis=1)
    return signal / (interference + noise_var)


TRACE_FIELDS = ("iteration", "node_id", "F_n", "removed_user")


@dataclass
class FronthaulResult:
    assoc: AssociationState
    iterations: int
    trace: list = field(default_factory=list)
    disconnected: list = field(default_factory=list)


def enforce_fronthaul(assoc: AssociationState, delta, params: FronthaulParams, n_ant_ap, n_ant_bs,
                      noise_var, precoder_callback=None, f_limit=None) -> FronthaulResult:
    """Drop links until every node's FH load is within its limit.

    Each round, every violating node releases the served user with the
    largest proxy SINR (lowest index on ties); proxies are computed from the
    association at the start of the round. ``precoder_callback(assoc)`` runs
    at the top of every round. ``delta`` is the K x (M+L) large-scale
    coefficient matrix, APs first.
    """
    merged = assoc.merged.copy()
    m = assoc.a.shape[1]
    n_nodes = merged.shape[1]
    n_ant = np.array([n_ant_ap] * m + [n_ant_bs] * (n_nodes - m))
    limit = np.broadcast_to(np.asarray(params.f_limit if f_limit is None else f_limit, dtype=float), (n_nodes,))
    trace, disconnected = [], []
    iteration = 0
    while True:
        current = AssociationState.from_merged(merged, m, assoc.scenario)
        if precoder_callback is not None:
            precoder_callback(current)
        loads = node_loads(merged, n_ant, params)
        violating = np.flatnonzero(loads > limit)
        if not len(violating):
            return FronthaulResult(assoc=current, iterations=iteration, trace=trace, disconnected=disconnected)
        snapshot = merged.copy()
        for node in violating:
            served = np.flatnonzero(snapshot[:, node])
            s = proxy_sinr_all(node, snapshot, delta, noise_var)[served]
            user = int(served[np.argmax(s)])
            merged[user, node] = False
            if not merged[user].any():
                log.info("fronthaul pruning disconnected user %d", user)
                disconnected.append(user)
            trace.append((iteration, int(node), float(loads[node]), user))
        iteration += 1


def write_trace_csv(rows, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("trial",) + TRACE_FIELDS if rows and len(rows[0]) == 5 else TRACE_FIELDS)
        for r in rows:
            w.writerow(r)
