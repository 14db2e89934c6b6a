"""Hexagonal three-sector macro layout with cell-free access points and users.

Sites sit on a flat-topped hexagonal lattice with spacing ``isd``; site 0 is
at the origin. Each site hosts three 120-degree sectors, each treated as an
independent base station (BS). Cell ids are site indices, so BS ``l`` belongs
to cell ``l // 3``.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import InvalidParameterError

SECTORS_PER_SITE = 3
MIN_UE_RADIUS = 15.0
UE_RADIUS_FRACTION = 0.97
EDGE_AP_RADIUS_FRACTION = 0.8

CELL_INSIDE = "cell_inside"
CELL_EDGE = "cell_edge"

# neighbours of a flat-topped hex cell lie at 30 + 60*i degrees
_LATTICE_BASIS = np.array([[math.cos(math.pi / 6), math.sin(math.pi / 6)], [0.0, 1.0]])


def _frozen(a, dtype=float, width=None):
    arr = np.array(a, dtype=dtype)
    if width is not None:
        arr = arr.reshape(-1, width)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class NetworkLayout:
    """Positions of sites, sectors, access points and users.

    Arrays are read-only so a layout can be shared between Monte Carlo
    workers. Use :func:`place_aps` and :func:`drop_users` to derive new
    layouts.
    """

    site_positions: np.ndarray
    sector_orientations: np.ndarray
    isd: float
    evaluation_cell_ids: tuple
    ap_positions: np.ndarray = dataclasses.field(default_factory=lambda: _frozen([], width=2))
    ap_cells: np.ndarray = dataclasses.field(default_factory=lambda: _frozen([], dtype=int))
    ue_positions: np.ndarray = dataclasses.field(default_factory=lambda: _frozen([], width=2))
    ue_cells: np.ndarray = dataclasses.field(default_factory=lambda: _frozen([], dtype=int))
    h_bs: float = 25.0
    h_ap: float = 10.0
    h_ue: float = 1.5

    @property
    def n_sites(self) -> int:
        return len(self.site_positions)

    @property
    def n_bs(self) -> int:
        return len(self.sector_orientations)

    @property
    def n_ap(self) -> int:
        return len(self.ap_positions)

    @property
    def n_ue(self) -> int:
        return len(self.ue_positions)

    @property
    def bs_sites(self) -> np.ndarray:
        return np.arange(self.n_bs) // SECTORS_PER_SITE

    @property
    def bs_positions(self) -> np.ndarray:
        return self.site_positions[self.bs_sites]

    @property
    def ue_max_radius(self) -> float:
        return UE_RADIUS_FRACTION * self.isd / 2

    def evaluated_users(self) -> np.ndarray:
        """Boolean mask of users dropped in an evaluation cell."""
        return np.isin(self.ue_cells, np.asarray(self.evaluation_cell_ids, dtype=int))

    def user_classes(self) -> np.ndarray:
        """Vectorized :func:`classify_user` over all users (True = cell inside)."""
        if self.n_ue == 0:
            return np.zeros(0, dtype=bool)
        d = np.linalg.norm(self.ue_positions[:, None, :] - self.site_positions[None], axis=-1)
        return d.min(axis=1) < self.isd / 3


def _lattice(isd: float, radius: int) -> np.ndarray:
    idx = np.arange(-radius, radius + 1)
    i, j = np.meshgrid(idx, idx, indexing="ij")
    ij = np.stack([i.ravel(), j.ravel()], axis=1).astype(float)
    return isd * ij @ _LATTICE_BASIS


def _angle_key(p: np.ndarray, origin: np.ndarray) -> float:
    return float(np.mod(np.arctan2(p[1] - origin[1], p[0] - origin[0]), 2 * np.pi))


def _pick(candidates: list, key) -> int:
    return min(range(len(candidates)), key=lambda i: key(candidates[i]))


def build_hex_layout(isd: float, n_center_cells: int = 3, n_ring_cells: int = 9) -> NetworkLayout:
    """Build the site grid: a compact cluster of evaluated cells plus a guard ring.

    The evaluated cells are grown greedily from the origin (each new site is
    the lattice point closest to the centroid of those already chosen); the
    ring cells are the lattice points nearest to the cluster, adjacent ones
    first. ``(isd, 3, 9)`` gives three mutually adjacent cells enclosed by
    their nine neighbours.
    """
    if not isd > 0:
        raise InvalidParameterError(f"isd must be positive, got {isd}")
    if n_center_cells < 1:
        raise InvalidParameterError("n_center_cells must be >= 1")
    if n_ring_cells < 0:
        raise InvalidParameterError("n_ring_cells must be >= 0")

    radius = 2 + int(math.ceil(math.sqrt(n_center_cells + n_ring_cells)))
    pool = [p for p in _lattice(isd, radius)]
    chosen: list[np.ndarray] = []
    # keys are rounded so floating-point noise cannot break geometric ties
    while len(chosen) < n_center_cells:
        c = np.mean(chosen, axis=0) if chosen else np.zeros(2)
        i = _pick(pool, lambda p: (round(np.linalg.norm(p - c) / isd, 9), round(_angle_key(p, c), 9)))
        chosen.append(pool.pop(i))

    centroid = np.mean(chosen, axis=0)
    centers = np.array(chosen)
    ring: list[np.ndarray] = []
    while len(ring) < n_ring_cells:
        i = _pick(
            pool,
            lambda p: (
                round(np.min(np.linalg.norm(centers - p, axis=1)) / isd, 9),
                round(np.linalg.norm(p - centroid) / isd, 9),
                round(_angle_key(p, centroid), 9),
            ),
        )
        ring.append(pool.pop(i))

    sites = np.array(chosen + ring)
    # exact zeros for lattice points on the axes
    sites[np.abs(sites) < 1e-9 * isd] = 0.0
    orientations = np.tile(np.arange(SECTORS_PER_SITE) * 2 * np.pi / SECTORS_PER_SITE, len(sites))
    return NetworkLayout(
        site_positions=_frozen(sites, width=2),
        sector_orientations=_frozen(orientations),
        isd=float(isd),
        evaluation_cell_ids=tuple(range(n_center_cells)),
    )


def _uniform_annulus(rng, n, r_min, r_max, phi_lo=0.0, phi_hi=2 * np.pi):
    r = np.sqrt(rng.uniform(r_min**2, r_max**2, size=n))
    phi = rng.uniform(phi_lo, phi_hi, size=n)
    return np.stack([r * np.cos(phi), r * np.sin(phi)], axis=1)


def place_aps(layout: NetworkLayout, mode: str, per_cell: int, rng_seed=None) -> NetworkLayout:
    """Deploy ``per_cell`` access points in every cell.

    ``uniform``: i.i.d. uniform over the same annulus users are dropped in.
    ``cell_edge``: equally spaced on a circle of radius 0.8*isd/2 with a
    random rotation per cell.
    """
    if per_cell < 0:
        raise InvalidParameterError("per_cell must be >= 0")
    mode = mode.replace("-", "_")
    if mode not in ("uniform", "cell_edge"):
        raise InvalidParameterError(f"unknown AP placement mode {mode!r}")
    rng = np.random.default_rng(rng_seed)
    pos, cells = [], []
    for c, site in enumerate(layout.site_positions):
        if mode == "uniform":
            p = _uniform_annulus(rng, per_cell, MIN_UE_RADIUS, layout.ue_max_radius)
        else:
            r = EDGE_AP_RADIUS_FRACTION * layout.isd / 2
            phi = rng.uniform(0, 2 * np.pi) + 2 * np.pi * np.arange(per_cell) / max(per_cell, 1)
            p = r * np.stack([np.cos(phi), np.sin(phi)], axis=1)
        pos.append(site + p)
        cells.append(np.full(per_cell, c))
    return dataclasses.replace(
        layout,
        ap_positions=_frozen(np.concatenate(pos) if pos else [], width=2),
        ap_cells=_frozen(np.concatenate(cells) if cells else [], dtype=int),
    )


def drop_users(layout: NetworkLayout, users_per_sector: int, rng_seed=None) -> NetworkLayout:
    """Drop exactly ``users_per_sector`` users uniformly in each sector's wedge of the annulus."""
    if users_per_sector < 1:
        raise InvalidParameterError("users_per_sector must be >= 1")
    rng = np.random.default_rng(rng_seed)
    half = np.pi / SECTORS_PER_SITE
    pos, cells = [], []
    for l, boresight in enumerate(layout.sector_orientations):
        site = l // SECTORS_PER_SITE
        p = _uniform_annulus(
            rng, users_per_sector, MIN_UE_RADIUS, layout.ue_max_radius, boresight - half, boresight + half
        )
        pos.append(layout.site_positions[site] + p)
        cells.append(np.full(users_per_sector, site))
    return dataclasses.replace(
        layout,
        ue_positions=_frozen(np.concatenate(pos), width=2),
        ue_cells=_frozen(np.concatenate(cells), dtype=int),
    )


def classify_user(ue_position, layout: NetworkLayout) -> str:
    """Cell-inside iff the nearest macro site is strictly closer than isd/3."""
    d = np.linalg.norm(layout.site_positions - np.asarray(ue_position, dtype=float), axis=1)
    return CELL_INSIDE if d.min() < layout.isd / 3 else CELL_EDGE


# -- plain-text export -----------------------------------------------------

LAYOUT_FIELDS = ("entity_type", "id", "x", "y", "z", "cell_id")


def write_layout_csv(layout: NetworkLayout, path) -> None:
    """Write the layout as ``entity_type,id,x,y,z,cell_id`` rows.

    A leading ``layout`` row stores the inter-site distance in ``x`` and the
    number of evaluation cells in ``y``; evaluation cells are always the
    first sites.
    """
    rows = [("layout", 0, repr(layout.isd), len(layout.evaluation_cell_ids), 0.0, -1)]
    for i, (x, y) in enumerate(layout.site_positions):
        rows.append(("site", i, repr(float(x)), repr(float(y)), 0.0, i))
    for l, (x, y) in enumerate(layout.bs_positions):
        rows.append(("bs", l, repr(float(x)), repr(float(y)), layout.h_bs, l // SECTORS_PER_SITE))
    for m, (x, y) in enumerate(layout.ap_positions):
        rows.append(("ap", m, repr(float(x)), repr(float(y)), layout.h_ap, int(layout.ap_cells[m])))
    for k, (x, y) in enumerate(layout.ue_positions):
        rows.append(("ue", k, repr(float(x)), repr(float(y)), layout.h_ue, int(layout.ue_cells[k])))
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LAYOUT_FIELDS)
        w.writerows(rows)


def read_layout_csv(path) -> NetworkLayout:
    groups: dict[str, list] = {"layout": [], "site": [], "bs": [], "ap": [], "ue": []}
    with open(Path(path), newline="") as fh:
        for row in csv.DictReader(fh):
            groups[row["entity_type"]].append(row)
    meta = groups["layout"][0]
    sites = [(float(r["x"]), float(r["y"])) for r in sorted(groups["site"], key=lambda r: int(r["id"]))]
    aps = sorted(groups["ap"], key=lambda r: int(r["id"]))
    ues = sorted(groups["ue"], key=lambda r: int(r["id"]))
    heights = {}
    for kind, default in (("bs", 25.0), ("ap", 10.0), ("ue", 1.5)):
        heights[kind] = float(groups[kind][0]["z"]) if groups[kind] else default
    n_bs = len(groups["bs"])
    return NetworkLayout(
        site_positions=_frozen(sites, width=2),
        sector_orientations=_frozen(
            (np.arange(n_bs) % SECTORS_PER_SITE) * 2 * np.pi / SECTORS_PER_SITE
        ),
        isd=float(meta["x"]),
        evaluation_cell_ids=tuple(range(int(float(meta["y"])))),
        ap_positions=_frozen([(float(r["x"]), float(r["y"])) for r in aps], width=2),
        ap_cells=_frozen([int(r["cell_id"]) for r in aps], dtype=int),
        ue_positions=_frozen([(float(r["x"]), float(r["y"])) for r in ues], width=2),
        ue_cells=_frozen([int(r["cell_id"]) for r in ues], dtype=int),
        h_bs=heights["bs"],
        h_ap=heights["ap"],
        h_ue=heights["ue"],
    )
