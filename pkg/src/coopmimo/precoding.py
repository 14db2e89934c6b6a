"""Downlink beamformers and power allocation.

Local processing: MRT, partial zero-forcing (PZF) and MMSE computed at each
AP/BS from its own estimates, with fractional power allocation (FPA).
Joint processing (FULL cooperation): centralized partial zero-forcing over
each user's stacked serving channel (JPZF), gathered into the matrix ``Q``
and scaled by a single equal-stream power.

Beamformers are applied as ``c^H w`` with ``c`` the true channel, so MRT is
``w = c_hat / ||c_hat||``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .association import AssociationState
from .exceptions import InvalidParameterError, ZeroBeamformerError

log = logging.getLogger(__name__)

ORTH_RTOL = 1e-10
DEGENERATE_RTOL = 1e-10

LOCAL_PRECODERS = ("mrt", "pzf", "mmse")
JOINT_PRECODERS = ("jpzf",)


def orth(mat, rtol=ORTH_RTOL):
    """Orthonormal basis of the column span via column-pivoted QR."""
    mat = np.asarray(mat)
    if mat.size == 0:
        return np.zeros((mat.shape[0], 0), dtype=complex)
    q, r, _ = scipy.linalg.qr(mat, mode="economic", pivoting=True)
    d = np.abs(np.diag(r))
    if d[0] == 0:
        return np.zeros((mat.shape[0], 0), dtype=q.dtype)
    rank = int(np.sum(d > rtol * d[0]))
    return q[:, :rank]


def mrt(estimate):
    v = np.asarray(estimate)
    nrm = np.linalg.norm(v)
    if nrm == 0:
        raise ZeroBeamformerError("cannot normalize a zero channel estimate")
    return v / nrm


def project_out(target, protected):
    """Project ``target`` onto the orthogonal complement of span(protected columns)."""
    basis = orth(protected)
    return target - basis @ (basis.conj().T @ target)


def pzf_local(target_estimate, protected_estimates, n_antennas=None):
    """Unit-norm local PZF beamformer nulling the protected users' estimated channels.

    ``protected_estimates`` is a sequence of vectors or an (N, P) matrix. If
    the target lies in the protected span, falls back to MRT.
    """
    t = np.asarray(target_estimate)
    n = len(t) if n_antennas is None else n_antennas
    p = np.asarray(protected_estimates)
    if p.size == 0:
        return mrt(t)
    if p.ndim == 1:
        p = p[:, None]
    elif p.shape[0] != n:
        p = p.T
    if p.shape[1] > n - 1:
        raise InvalidParameterError(f"cannot protect {p.shape[1]} users with {n} antennas")
    w = project_out(t, p)
    if np.linalg.norm(w) <= DEGENERATE_RTOL * np.linalg.norm(t):
        log.warning("PZF target lies in the protected span; using MRT")
        return mrt(t)
    return w / np.linalg.norm(w)


def mmse_node(estimates, err_cov, etas, noise_var):
    """MMSE beamformers for all users served by one node.

    ``estimates`` (S, N), ``err_cov`` (S, N, N) estimation-error covariances
    G - G_hat, ``etas`` (S,) uplink powers. Returns (S, N) unit-norm rows.
    """
    c = np.asarray(estimates)
    etas = np.asarray(etas, dtype=float)
    n = c.shape[1]
    mat = np.einsum("s,sa,sb->ab", etas, c, c.conj()) + np.einsum("s,sab->ab", etas, err_cov)
    mat = mat + noise_var * np.eye(n)
    w = np.linalg.solve(mat, c.T).T
    return w / np.linalg.norm(w, axis=1, keepdims=True)


def mmse_local(serving_estimates, stats_g, stats_ghat, etas, noise_var, target_index):
    """MMSE beamformer for one target among a node's served users.

    ``stats_g`` are channel covariances and ``stats_ghat`` the matching
    estimate covariances; their difference is the error covariance.
    """
    err = np.asarray(stats_g) - np.asarray(stats_ghat)
    return mmse_node(serving_estimates, err, etas, noise_var)[target_index]


def fpa_powers(served, coeffs, alpha, p_max):
    """Fractional power allocation eta_{k,n} = P_n c_{k,n}^-alpha / sum_j c_{j,n}^-alpha.

    ``served`` and ``coeffs`` are (K, n_nodes); ``p_max`` is scalar or per
    node. Nodes serving nobody get an all-zero column.
    """
    served = np.asarray(served, dtype=bool)
    c = np.asarray(coeffs, dtype=float)
    p_max = np.broadcast_to(np.asarray(p_max, dtype=float), (served.shape[1],))
    with np.errstate(divide="ignore"):
        # log domain: coefficients span many decades
        logw = np.where(served, -alpha * np.log(np.where(served, c, 1.0)), -np.inf)
    top = logw.max(axis=0, initial=-np.inf)
    top = np.where(np.isfinite(top), top, 0.0)
    w = np.exp(logw - top)
    total = w.sum(axis=0)
    return np.where(total > 0, p_max * w / np.where(total > 0, total, 1.0), 0.0)


def protected_users(served_users, coeffs_at_node, target, n_pzf):
    """The ``n_pzf`` co-served users other than ``target`` with the strongest coefficient."""
    others = [j for j in served_users if j != target]
    others.sort(key=lambda j: -coeffs_at_node[j])
    return others[:n_pzf]


def local_precoders(kind, estimates, err_cov, served, coeffs, n_pzf, eta_ul, noise_var):
    """Per-link local beamformers for every (user, node) with ``served`` set.

    Shapes: ``estimates`` (K, n_nodes, N), ``served``/``coeffs`` (K,
    n_nodes). Returns ``(w, ok)``: beamformers (K, n_nodes, N), zero on
    unserved links, and a mask of links whose beamformer could be formed.
    """
    k, n_nodes, n = estimates.shape
    w = np.zeros_like(estimates, dtype=complex)
    ok = np.zeros((k, n_nodes), dtype=bool)
    for node in range(n_nodes):
        users = np.flatnonzero(served[:, node])
        if not len(users):
            continue
        est = estimates[users, node]
        live = np.linalg.norm(est, axis=1) > 0
        users, est = users[live], est[live]
        if not len(users):
            continue
        if kind == "mmse":
            w[users, node] = mmse_node(est, err_cov[users, node], np.broadcast_to(eta_ul, (k,))[users], noise_var)
        elif kind == "mrt":
            w[users, node] = est / np.linalg.norm(est, axis=1, keepdims=True)
        elif kind == "pzf":
            col = coeffs[:, node]
            for i, u in enumerate(users):
                prot = protected_users(users.tolist(), col, u, n_pzf)
                w[u, node] = pzf_local(est[i], estimates[prot, node].T, n)
        else:
            raise InvalidParameterError(f"unknown local precoder {kind!r}")
        ok[users, node] = True
    return w, ok


# -- joint partial zero-forcing --------------------------------------------


def stacked_estimates(g_hat, h_hat, ap_set, bs_set):
    """Rows u_j = [g_hat_{j,m} for m in ap_set, h_hat_{j,l} for l in bs_set], shape (K, dim)."""
    k = g_hat.shape[0]
    parts = [g_hat[:, ap_set].reshape(k, -1), h_hat[:, bs_set].reshape(k, -1)]
    return np.concatenate(parts, axis=1)


def jpzf_vector(stacked, k, r_jpzf):
    """JPZF beamformer for user ``k`` from the stacked channels of all users (K, dim).

    Nulls the ``r_jpzf`` strongest other users (fewer if K-1 < r_jpzf) and
    rotates the result so u_k^H w is real and positive.
    """
    u = np.asarray(stacked)
    n_users, dim = u.shape
    if r_jpzf > dim:
        raise InvalidParameterError(f"stacked dimension {dim} cannot protect {r_jpzf} users")
    target = u[k]
    others = np.array([j for j in range(n_users) if j != k], dtype=int)
    r = min(r_jpzf, len(others))
    if r:
        norms = np.linalg.norm(u[others], axis=1)
        keep = others[np.argsort(-norms, kind="stable")[:r]]
        w = project_out(target, u[keep].T)
    else:
        w = target.copy()
    nrm = np.linalg.norm(w)
    if nrm <= DEGENERATE_RTOL * np.linalg.norm(target):
        log.warning("JPZF target lies in the protected span; using the matched filter")
        w = target
        nrm = np.linalg.norm(w)
    if nrm == 0:
        raise ZeroBeamformerError(f"user {k} has an all-zero stacked estimate")
    w = w / nrm
    phase = np.vdot(target, w)
    return w * (np.conj(phase) / abs(phase))


def jpzf(g_hat, h_hat, assoc: AssociationState, r_jpzf, shrink=False):
    """Stacked JPZF beamformers for every user, serving APs first then BSs.

    With ``shrink`` a user whose serving set became too small for
    ``r_jpzf`` nulls (after fronthaul pruning) protects dim-1 users instead
    of raising.
    """
    out = []
    for k in range(assoc.a.shape[0]):
        ap_set = np.flatnonzero(assoc.a[k])
        bs_set = np.flatnonzero(assoc.b[k])
        if not len(ap_set) and not len(bs_set):
            out.append(np.zeros(0, dtype=complex))
            continue
        u = stacked_estimates(g_hat, h_hat, ap_set, bs_set)
        r = min(r_jpzf, u.shape[1] - 1) if shrink else r_jpzf
        out.append(jpzf_vector(u, k, r))
    return out


def build_q(assoc: AssociationState, stacked_precoders, n_ant_ap, n_ant_bs):
    """Scatter each stacked beamformer into the (N_AP*M + N_BS*L) x K matrix Q."""
    k, m = assoc.a.shape
    l = assoc.b.shape[1]
    q = np.zeros((n_ant_ap * m + n_ant_bs * l, k), dtype=complex)
    for user in range(k):
        w = stacked_precoders[user]
        ind = 0
        for node in range(m):
            if assoc.a[user, node]:
                q[node * n_ant_ap:(node + 1) * n_ant_ap, user] = w[ind:ind + n_ant_ap]
                ind += n_ant_ap
        for node in range(l):
            if assoc.b[user, node]:
                start = n_ant_ap * m + node * n_ant_bs
                q[start:start + n_ant_bs, user] = w[ind:ind + n_ant_bs]
                ind += n_ant_bs
    return q


def node_blocks(q, n_ap_nodes, n_ant_ap, n_ant_bs):
    """Split Q rows into per-AP blocks (M, N_AP, K) and per-BS blocks (L, N_BS, K)."""
    split = n_ap_nodes * n_ant_ap
    k = q.shape[1]
    return q[:split].reshape(n_ap_nodes, n_ant_ap, k), q[split:].reshape(-1, n_ant_bs, k)


def equal_stream_power(q, p_max_ap, p_max_bs, n_ant_ap, n_ant_bs):
    """Largest common stream power meeting every per-node budget.

    ``p_max_ap`` must hold one budget per AP (it fixes M). Returns ``(eta,
    q_ap, q_bs)`` with q_ap/q_bs the per-node sums of squared Q entries;
    nodes carrying nothing do not constrain eta.
    """
    p_max_ap = np.atleast_1d(np.asarray(p_max_ap, dtype=float))
    n_ap_nodes = len(p_max_ap)
    blk_a, blk_b = node_blocks(q, n_ap_nodes, n_ant_ap, n_ant_bs)
    q_ap = np.sum(np.abs(blk_a) ** 2, axis=(1, 2))
    q_bs = np.sum(np.abs(blk_b) ** 2, axis=(1, 2))
    p_ap = np.broadcast_to(p_max_ap, q_ap.shape)
    p_bs = np.broadcast_to(np.asarray(p_max_bs, dtype=float), q_bs.shape)
    loads = np.concatenate([q_ap, q_bs])
    budgets = np.concatenate([p_ap, p_bs])
    active = loads > 0
    if not active.any():
        log.warning("equal_stream_power: no node transmits; returning eta = 0")
        return 0.0, q_ap, q_bs
    return float(np.min(budgets[active] / loads[active])), q_ap, q_bs


def precoder_complexity(n_ap, n_bs, n_ant_ap, n_ant_bs, n_pzf_ap, n_pzf_bs, r_jpzf):
    """Dominant complex-multiplication counts of centralized vs local PZF design.

    ``n_ap``/``n_bs`` are the numbers of serving APs/BSs per user.
    """
    dim = n_ant_ap * n_ap + n_ant_bs * n_bs
    central = r_jpzf**2 * dim
    local = n_bs * n_pzf_bs**2 * n_ant_bs + n_ap * n_pzf_ap**2 * n_ant_ap
    return {"central_mults": int(central), "local_mults": int(local)}


@dataclass(eq=False)
class PrecoderPowerSet:
    """Unit-norm beamformers and powers per (user, node).

    ``w_ap`` (K, M, N_AP), ``w_bs`` (K, L, N_BS), ``eta_ap`` (K, M),
    ``eta_bs`` (K, L). For JPZF, ``q`` and the common ``eta`` are kept too.
    """

    w_ap: np.ndarray
    w_bs: np.ndarray
    eta_ap: np.ndarray
    eta_bs: np.ndarray
    q: np.ndarray | None = None
    eta: float | None = None

    def effective_matrix(self):
        """Power-scaled precoders stacked over all nodes, shape (N_AP*M + N_BS*L, K)."""
        k = self.w_ap.shape[0]
        va = np.sqrt(self.eta_ap)[..., None] * self.w_ap
        vb = np.sqrt(self.eta_bs)[..., None] * self.w_bs
        return np.concatenate([va.reshape(k, -1), vb.reshape(k, -1)], axis=1).T

    @classmethod
    def from_q(cls, q, eta, n_ap_nodes, n_ant_ap, n_ant_bs):
        blk_a, blk_b = node_blocks(q, n_ap_nodes, n_ant_ap, n_ant_bs)

        def split(blk):
            seg = np.transpose(blk, (2, 0, 1))
            nrm = np.linalg.norm(seg, axis=-1)
            w = np.divide(seg, nrm[..., None], out=np.zeros_like(seg), where=nrm[..., None] > 0)
            return w, eta * nrm**2

        w_ap, eta_ap = split(blk_a)
        w_bs, eta_bs = split(blk_b)
        return cls(w_ap=w_ap, w_bs=w_bs, eta_ap=eta_ap, eta_bs=eta_bs, q=q, eta=eta)


def design_local(precoder, estimates, assoc: AssociationState, beta, rho, alpha, p_ap, p_bs,
                 n_pzf_ap, n_pzf_bs, noise_var):
    """Local beamformers at every AP and BS plus FPA powers."""
    w_ap, ok_ap = local_precoders(
        precoder, estimates.g_hat, estimates.err_ap, assoc.a, beta, n_pzf_ap, estimates.eta, noise_var
    )
    w_bs, ok_bs = local_precoders(
        precoder, estimates.h_hat, estimates.err_bs, assoc.b, rho, n_pzf_bs, estimates.eta, noise_var
    )
    eta_ap = fpa_powers(ok_ap, beta, alpha, p_ap)
    eta_bs = fpa_powers(ok_bs, rho, alpha, p_bs)
    return PrecoderPowerSet(w_ap=w_ap, w_bs=w_bs, eta_ap=eta_ap, eta_bs=eta_bs)


def design_joint(estimates, assoc: AssociationState, r_jpzf, p_ap, p_bs, shrink=False):
    """Centralized JPZF with the equal-stream power allocation."""
    n_ant_ap = estimates.g_hat.shape[2]
    n_ant_bs = estimates.h_hat.shape[2]
    m = assoc.a.shape[1]
    w = jpzf(estimates.g_hat, estimates.h_hat, assoc, r_jpzf, shrink=shrink)
    q = build_q(assoc, w, n_ant_ap, n_ant_bs)
    eta, _, _ = equal_stream_power(q, np.broadcast_to(p_ap, (m,)), p_bs, n_ant_ap, n_ant_bs)
    return PrecoderPowerSet.from_q(q, eta, m, n_ant_ap, n_ant_bs)
