"""Pilot assignment by k-means clustering, uplink training and LMMSE estimation."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import InvalidParameterError
from .propagation import ChannelSet, LinkLargeScale, prior_covariance

log = logging.getLogger(__name__)

KMEANS_MAX_ITER = 100
RIDGE = 1e-12


@dataclass(frozen=True, eq=False)
class PilotBook:
    """Orthonormal pilots (columns of ``sequences``) and the pilot index of every user."""

    tau_p: int
    sequences: np.ndarray
    assignment: np.ndarray
    clusters: np.ndarray

    @property
    def user_sequences(self) -> np.ndarray:
        """Pilot matrix with one column per user, shape (tau_p, K)."""
        return self.sequences[:, self.assignment]

    def overlap(self) -> np.ndarray:
        """|phi_i^H phi_k|^2 for every user pair, shape (K, K)."""
        phi = self.user_sequences
        return np.abs(phi.conj().T @ phi) ** 2


def _grid_centroids(points: np.ndarray, n: int) -> np.ndarray:
    lo, hi = points.min(axis=0), points.max(axis=0)
    w, h = np.maximum(hi - lo, 1e-9)
    cols = int(np.clip(round(math.sqrt(n * w / h)), 1, n))
    rows = math.ceil(n / cols)
    xs = lo[0] + (np.arange(cols) + 0.5) * (hi[0] - lo[0]) / cols
    ys = lo[1] + (np.arange(rows) + 0.5) * (hi[1] - lo[1]) / rows
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.ravel(), gy.ravel()], axis=1)[:n]


def kmeans(points, n_clusters, max_iter=KMEANS_MAX_ITER):
    """Lloyd iterations from a regular-grid start.

    Returns ``(labels, centroids)``. Stops when no label changes. An empty
    cluster is reseeded at the user farthest from its current centroid.
    """
    x = np.asarray(points, dtype=float)
    c = _grid_centroids(x, n_clusters)
    labels = None
    for _ in range(max_iter):
        d = np.linalg.norm(x[:, None, :] - c[None, :, :], axis=-1)
        new = np.argmin(d, axis=1)
        for e in range(n_clusters):
            if np.any(new == e):
                continue
            sizes = np.bincount(new, minlength=n_clusters)
            spread = np.where(sizes[new] > 1, d[np.arange(len(x)), new], -np.inf)
            u = int(np.argmax(spread))
            c[e] = x[u]
            new[u] = e
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        c = np.array([x[labels == j].mean(axis=0) for j in range(n_clusters)])
    return labels, c


def _rebalance(x, labels, centroids, capacity):
    labels = labels.copy()
    n = len(centroids)
    while True:
        sizes = np.bincount(labels, minlength=n)
        over = np.flatnonzero(sizes > capacity)
        if not len(over):
            return labels
        j = over[0]
        members = np.flatnonzero(labels == j)
        far = members[np.argmax(np.linalg.norm(x[members] - centroids[j], axis=1))]
        spare = np.flatnonzero(sizes < capacity)
        target = spare[np.argmin(np.linalg.norm(centroids[spare] - x[far], axis=1))]
        labels[far] = target


def assign_pilots(ue_positions, tau_p: int) -> PilotBook:
    """Cluster users into ceil(K/tau_p) groups and hand out pilots north to south.

    Inside every cluster the northernmost user gets pilot 0, the next one
    pilot 1, and so on (equal latitude: smaller x first). Co-pilot users
    therefore sit in different clusters.
    """
    x = np.asarray(ue_positions, dtype=float).reshape(-1, 2)
    k = len(x)
    if k < 1 or tau_p < 1:
        raise InvalidParameterError("need at least one user and one pilot")
    n_clusters = math.ceil(k / tau_p)
    labels, centroids = kmeans(x, n_clusters)
    labels = _rebalance(x, labels, centroids, tau_p)
    assignment = np.empty(k, dtype=int)
    for j in range(n_clusters):
        members = np.flatnonzero(labels == j)
        order = np.lexsort((x[members, 0], -x[members, 1]))
        assignment[members[order]] = np.arange(len(members))
    return PilotBook(tau_p=tau_p, sequences=np.eye(tau_p), assignment=assignment, clusters=labels)


def write_pilots_csv(book: PilotBook, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("user_id", "pilot_id", "cluster_id"))
        for k, (p, c) in enumerate(zip(book.assignment, book.clusters)):
            w.writerow((k, int(p), int(c)))


def uplink_training_rx(channels, pilots: PilotBook, eta, noise_var, rng=None):
    """Received training blocks Y_n = sum_i sqrt(eta_i) c_{i,n} phi_i^H + W_n.

    ``channels`` has shape (K, n_nodes, N); the result has shape
    (n_nodes, N, tau_p).
    """
    c = np.asarray(channels)
    eta = np.broadcast_to(np.asarray(eta, dtype=float), (c.shape[0],))
    phi_h = pilots.user_sequences.conj().T
    y = np.einsum("kna,kp->nap", c * np.sqrt(eta)[:, None, None], phi_h)
    if noise_var > 0:
        rng = np.random.default_rng(rng)
        shape = y.shape
        y = y + np.sqrt(noise_var / 2) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    return y


def project_pilots(y, pilots: PilotBook):
    """Sufficient statistics Y_n phi_k for every user, shape (K, n_nodes, N)."""
    return np.einsum("nap,pk->kna", y, pilots.user_sequences)


def _solve(b, rhs, noise_var):
    n = b.shape[-1]
    if noise_var <= 0:
        # B >= noise_var * I, so only the noiseless case can be singular
        bad = np.linalg.cond(b) > 1.0 / (n * np.finfo(float).eps)
        if np.any(bad):
            scale = np.maximum(np.abs(np.trace(b, axis1=-2, axis2=-1)) / n, np.finfo(float).tiny)
            log.warning("singular LMMSE matrix; solving with a %.0e relative ridge", RIDGE)
            b = b + np.where(bad, RIDGE * scale, 0.0)[..., None, None] * np.eye(n)
    return np.linalg.solve(b, rhs)


def lmmse_link_estimates(y_proj, pilots: PilotBook, links: LinkLargeScale, n_antennas, eta, noise_var):
    """LMMSE estimates and error covariances for all links of one node kind.

    Returns ``(estimates, error_cov)`` with shapes (K, n_nodes, N) and
    (K, n_nodes, N, N). The error covariance is G - eta_k G B^-1 G.
    """
    k, n_nodes = links.coeff.shape
    eta = np.broadcast_to(np.asarray(eta, dtype=float), (k,))
    overlap = pilots.overlap()
    est = np.zeros((k, n_nodes, n_antennas), dtype=complex)
    err = np.zeros((k, n_nodes, n_antennas, n_antennas), dtype=complex)
    eye = np.eye(n_antennas)
    for n in range(n_nodes):
        g = prior_covariance(links, n_antennas, node=n)
        b = np.einsum("i,ik,iab->kab", eta, overlap, g) + noise_var * eye
        x = _solve(b, np.concatenate([y_proj[:, n, :, None], g], axis=-1), noise_var)
        est[:, n] = np.sqrt(eta)[:, None] * np.einsum("kab,kb->ka", g, x[..., 0])
        est_cov = eta[:, None, None] * (g @ x[..., 1:])
        e = g - est_cov
        err[:, n] = (e + e.conj().swapaxes(-1, -2)) / 2
    return est, err


@dataclass(frozen=True, eq=False)
class EstimateSet:
    """Channel estimates with the matching estimation-error covariances."""

    g_hat: np.ndarray
    h_hat: np.ndarray
    err_ap: np.ndarray
    err_bs: np.ndarray
    eta: np.ndarray

    @classmethod
    def perfect(cls, channels: ChannelSet, eta=None):
        k, m, n_ap = channels.g.shape
        _, l, n_bs = channels.h.shape
        return cls(
            g_hat=channels.g,
            h_hat=channels.h,
            err_ap=np.zeros((k, m, n_ap, n_ap), dtype=complex),
            err_bs=np.zeros((k, l, n_bs, n_bs), dtype=complex),
            eta=np.zeros(k) if eta is None else np.broadcast_to(eta, (k,)).astype(float),
        )


def lmmse_estimate(channels: ChannelSet, pilots: PilotBook, ap_links, bs_links, eta, noise_var, rng=None):
    """Simulate uplink training at every AP and BS and return LMMSE estimates."""
    rng = np.random.default_rng(rng)
    k = channels.g.shape[0]
    eta = np.broadcast_to(np.asarray(eta, dtype=float), (k,)).copy()
    n_ap, n_bs = channels.g.shape[2], channels.h.shape[2]
    y_ap = project_pilots(uplink_training_rx(channels.g, pilots, eta, noise_var, rng), pilots)
    y_bs = project_pilots(uplink_training_rx(channels.h, pilots, eta, noise_var, rng), pilots)
    g_hat, err_ap = lmmse_link_estimates(y_ap, pilots, ap_links, n_ap, eta, noise_var)
    h_hat, err_bs = lmmse_link_estimates(y_bs, pilots, bs_links, n_bs, eta, noise_var)
    return EstimateSet(g_hat=g_hat, h_hat=h_hat, err_ap=err_ap, err_bs=err_bs, eta=eta)
