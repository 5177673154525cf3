"""Trajectory and mask regularization losses with analytic gradients.

The pairwise losses share one k-nearest-neighbor structure frozen at the
first time step; distances there also fix the per-pair Gaussian weights.
All losses return (scalar, gradients...) and define the subgradient at
zero-norm arguments as 0.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import gaussians as gs
from .errors import ConfigurationError


@dataclass(frozen=True)
class NeighborTable:
    """Frozen kNN indices and pair weights; rebuild after densify/prune."""

    k: int
    indices: np.ndarray  # (N, k) int
    weights: np.ndarray  # (N, k), exp(-lambda_w * d0^2)
    lambda_w: float

    @property
    def count(self) -> int:
        return self.indices.shape[0]


def build_neighbors(positions_t0, k: int, lambda_w: float) -> NeighborTable:
    """Exact k-nearest neighbors by Euclidean distance, ties to lower index.

    Brute force in row chunks: exact and deterministic, adequate for the
    cloud sizes this engine trains.
    """
    pos = np.asarray(positions_t0, dtype=np.float64)
    n = pos.shape[0]
    if n < k + 1:
        raise ConfigurationError(f"need at least {k + 1} gaussians for k={k} neighbors")
    indices = np.empty((n, k), dtype=np.int64)
    d2_sel = np.empty((n, k))
    chunk = max(1, (1 << 22) // max(n, 1))
    for start in range(0, n, chunk):
        rows = pos[start:start + chunk]
        d2 = np.sum((rows[:, None, :] - pos[None, :, :]) ** 2, axis=2)
        d2[np.arange(rows.shape[0]), start + np.arange(rows.shape[0])] = np.inf
        order = np.argsort(d2, axis=1, kind="stable")[:, :k]
        indices[start:start + chunk] = order
        d2_sel[start:start + chunk] = np.take_along_axis(d2, order, axis=1)
    weights = np.exp(-lambda_w * d2_sel)
    return NeighborTable(k=k, indices=indices, weights=weights, lambda_w=lambda_w)


def _safe_unit(v, norms):
    out = np.zeros_like(v)
    np.divide(v, norms[..., None], out=out, where=norms[..., None] > 0)
    return out


def loss_norm(position_offsets):
    """Mean Euclidean norm of per-Gaussian position offsets."""
    off = np.asarray(position_offsets, dtype=np.float64)
    n = off.shape[0]
    if n == 0:
        return 0.0, np.zeros_like(off)
    norms = np.linalg.norm(off, axis=1)
    grad = _safe_unit(off, norms) / n
    return float(norms.mean()), grad


def _pair_offsets(positions, table: NeighborTable):
    pos = np.asarray(positions, dtype=np.float64)
    return pos[table.indices] - pos[:, None, :]  # (N, k, 3)


def _scatter_pairs(grad_pairs, table: NeighborTable, n):
    """Accumulate per-pair gradients d(mu_j - mu_i) onto per-Gaussian rows."""
    out = np.zeros((n, 3))
    np.add.at(out, table.indices.ravel(), grad_pairs.reshape(-1, 3))
    out -= grad_pairs.sum(axis=1)
    return out


def loss_diff(positions_t, positions_prev, table: NeighborTable):
    """Mean absolute change of neighbor distances between two time slices."""
    n = table.count
    off_t = _pair_offsets(positions_t, table)
    off_p = _pair_offsets(positions_prev, table)
    d_t = np.linalg.norm(off_t, axis=2)
    d_p = np.linalg.norm(off_p, axis=2)
    e = d_t - d_p
    total = n * table.k
    value = float(np.abs(e).sum() / total)
    s = np.sign(e) / total
    grad_t = _scatter_pairs(s[..., None] * _safe_unit(off_t, d_t), table, n)
    grad_p = _scatter_pairs(-s[..., None] * _safe_unit(off_p, d_p), table, n)
    return value, grad_t, grad_p


def loss_rigid(positions_t, positions_prev, rotations_t, rotations_prev,
               table: NeighborTable):
    """Local rigidity: neighbor offsets must follow each center's rotation change."""
    n = table.count
    q_t = gs.normalize_rows(rotations_t)
    q_p = gs.normalize_rows(rotations_prev)
    Q = gs.quat_to_rotmat(q_t)
    P = gs.quat_to_rotmat(q_p)
    A = P @ np.swapaxes(Q, 1, 2)  # R_prev R_t^-1 per center gaussian
    off_t = _pair_offsets(positions_t, table)
    off_p = _pair_offsets(positions_prev, table)
    rotated = np.einsum("nab,nkb->nka", A, off_t)
    r = off_p - rotated
    nrm = np.linalg.norm(r, axis=2)
    total = n * table.k
    value = float(np.sum(table.weights * nrm) / total)
    dr = (table.weights / total)[..., None] * _safe_unit(r, nrm)  # (N,k,3)
    grad_p = _scatter_pairs(dr, table, n)
    dr_t = -np.einsum("nba,nkb->nka", A, dr)
    grad_t = _scatter_pairs(dr_t, table, n)
    gA = -np.einsum("nka,nkb->nab", dr, off_t)
    gP = gA @ Q
    gQ = np.swapaxes(gA, 1, 2) @ P
    g_qp = gs.quat_to_rotmat_backward(q_p, gP)
    g_qt = gs.quat_to_rotmat_backward(q_t, gQ)
    grad_rot_t = gs.normalize_rows_backward(np.asarray(rotations_t, dtype=np.float64), g_qt)
    grad_rot_p = gs.normalize_rows_backward(np.asarray(rotations_prev, dtype=np.float64), g_qp)
    return value, grad_t, grad_p, grad_rot_t, grad_rot_p


def loss_rot(rotations_t, rotations_prev, table: NeighborTable):
    """Neighbors should share each Gaussian's delta rotation between slices."""
    n = table.count
    raw_t = np.asarray(rotations_t, dtype=np.float64)
    raw_p = np.asarray(rotations_prev, dtype=np.float64)
    q_t = gs.normalize_rows(raw_t)
    q_p = gs.normalize_rows(raw_p)
    conj_p = gs.quat_conjugate(q_p)
    delta = gs.quat_multiply(q_t, conj_p)  # (N, 4)
    diff = delta[table.indices] - delta[:, None, :]
    nrm = np.linalg.norm(diff, axis=2)
    total = n * table.k
    value = float(np.sum(table.weights * nrm) / total)
    dd = (table.weights / total)[..., None] * np.divide(
        diff, nrm[..., None], out=np.zeros_like(diff), where=nrm[..., None] > 0
    )
    g_delta = np.zeros((n, 4))
    np.add.at(g_delta, table.indices.ravel(), dd.reshape(-1, 4))
    g_delta -= dd.sum(axis=1)
    g_qt, g_conj = gs.quat_multiply_backward(q_t, conj_p, g_delta)
    g_qp = gs.quat_conjugate(g_conj)
    grad_t = gs.normalize_rows_backward(raw_t, g_qt)
    grad_p = gs.normalize_rows_backward(raw_p, g_qp)
    return value, grad_t, grad_p


def loss_mask(rendered_masks, gt_masks):
    """Penalize rendered attribute masks for spilling onto other control areas.

    Per pixel and attribute i: |(1 - M_i) - B_i| * B_i with B_i the summed
    ground truth of the other attributes; averaged over pixels.
    """
    M = np.asarray(rendered_masks, dtype=np.float64)
    G = np.asarray(gt_masks, dtype=np.float64)
    if M.shape != G.shape or M.ndim != 3:
        raise ConfigurationError(f"mask stacks must share shape, got {M.shape} vs {G.shape}")
    n_pix = M.shape[1] * M.shape[2]
    B = G.sum(axis=0, keepdims=True) - G  # sum over j != i
    inner = (1.0 - M) - B
    value = float(np.sum(np.abs(inner) * B) / n_pix)
    grad = -np.sign(inner) * B / n_pix
    return value, grad
