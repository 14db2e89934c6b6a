"""Large-scale-fading based user association for the four cooperation scenarios."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidParameterError


class Scenario(str, enum.Enum):
    MC = "mc"
    HET_NOCOOP = "het"
    HORIZONTAL = "horizontal"
    FULL = "full"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        aliases = {"het_nocoop": "het", "het-nocoop": "het", "mc_mmimo": "mc"}
        v = str(value).lower()
        return cls(aliases.get(v, v))


@dataclass(frozen=True, eq=False)
class AssociationState:
    """Binary serving matrices ``a`` (K x M, APs) and ``b`` (K x L, BSs)."""

    a: np.ndarray
    b: np.ndarray
    scenario: Scenario

    @property
    def merged(self) -> np.ndarray:
        """K x (M + L) view with APs first, then BSs."""
        return np.concatenate([self.a, self.b], axis=1)

    @classmethod
    def from_merged(cls, merged, n_ap_nodes, scenario=Scenario.FULL):
        merged = np.asarray(merged, dtype=bool)
        return cls(a=merged[:, :n_ap_nodes].copy(), b=merged[:, n_ap_nodes:].copy(), scenario=scenario)


def top_n(values, n):
    """Indices of the ``n`` largest entries per row, ties to the lower index."""
    order = np.argsort(-np.asarray(values, dtype=float), axis=1, kind="stable")
    return order[:, :n]


def _mask(shape, idx):
    m = np.zeros(shape, dtype=bool)
    if idx.size:
        np.put_along_axis(m, idx, True, axis=1)
    return m


def associate(scenario, rho, beta, n_ap=6, n_bs=3, n_ant_ap=8, n_ant_bs=32) -> AssociationState:
    """Build A and B from the UE-BS (``rho``, K x L) and UE-AP (``beta``, K x M) coefficients.

    HORIZONTAL puts a user on its ``n_ap`` strongest APs when
    ``n_ant_ap * sum(top beta) >= n_ant_bs * sum(top rho)`` and on its
    ``n_bs`` strongest BSs otherwise; HET_NOCOOP is the same rule with one
    node per side.
    """
    scenario = Scenario.parse(scenario)
    rho = np.asarray(rho, dtype=float)
    beta = np.asarray(beta, dtype=float)
    k, l = rho.shape
    m = beta.shape[1]

    if scenario is Scenario.MC:
        b = _mask((k, l), top_n(rho, 1))
        return AssociationState(a=np.zeros((k, m), dtype=bool), b=b, scenario=scenario)

    if scenario is Scenario.HET_NOCOOP:
        n_ap, n_bs = 1, 1
    if m == 0:
        n_ap = 0
    if n_ap > m or n_bs > l:
        raise InvalidParameterError(f"cannot pick {n_ap} of {m} APs and {n_bs} of {l} BSs")
    idx_a = top_n(beta, n_ap)
    idx_b = top_n(rho, n_bs)
    a = _mask((k, m), idx_a)
    b = _mask((k, l), idx_b)
    if scenario is Scenario.FULL:
        return AssociationState(a=a, b=b, scenario=scenario)

    ap_side = n_ant_ap * np.take_along_axis(beta, idx_a, 1).sum(1) >= n_ant_bs * np.take_along_axis(
        rho, idx_b, 1
    ).sum(1)
    return AssociationState(a=a & ap_side[:, None], b=b & ~ap_side[:, None], scenario=scenario)
