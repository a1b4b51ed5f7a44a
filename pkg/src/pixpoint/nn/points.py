"""Point-cloud encoder: per-point MLP, kNN max aggregation, post MLP.

The neighbourhood of a point always contains the point itself (distance
zero). Neighbour sets are canonical: ties in distance are broken by the
lower point index and each row of the index table is sorted ascending, so
the forward pass is exactly permutation-equivariant and the max-backward
routes gradient to the lowest-index maximizer.
"""

from __future__ import annotations

import numpy as np

from ..geometry import PointCloud
from .params import EncoderParams3D


def knn_indices(positions: np.ndarray, k: int) -> np.ndarray:
    """(N, k_eff) nearest-neighbour indices per point, k_eff = min(k, N).

    Euclidean distances on positions; rows sorted by ascending index.
    """
    n = positions.shape[0]
    k_eff = min(k, n)
    if k_eff == n:
        return np.tile(np.arange(n, dtype=np.int64), (n, 1))
    sq = (positions**2).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (positions @ positions.T)
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, 0.0)
    part = np.argpartition(d2, k_eff - 1, axis=1)[:, :k_eff]
    rows = np.arange(n)[:, None]
    kth = d2[rows, part].max(axis=1)
    ambiguous = np.flatnonzero((d2 <= kth[:, None]).sum(axis=1) > k_eff)
    nb = np.sort(part, axis=1).astype(np.int64)
    for i in ambiguous:
        cand = np.flatnonzero(d2[i] <= kth[i])
        order = np.lexsort((cand, d2[i, cand]))
        nb[i] = np.sort(cand[order[:k_eff]])
    return nb


def point_forward(params: EncoderParams3D, positions: np.ndarray, colors: np.ndarray):
    """Forward pass; returns (features (N,D), cache for backward)."""
    x = np.concatenate([positions, colors], axis=1)
    h1 = np.maximum(x @ params.w1.T + params.b1, 0.0)
    h2 = np.maximum(h1 @ params.w2.T + params.b2, 0.0)
    nb = knn_indices(positions, params.k)
    gathered = h2[nb]  # (N, k_eff, 32)
    agg = gathered.max(axis=1)
    arg = gathered.argmax(axis=1)  # first maximum = lowest neighbour index
    c = np.concatenate([h2, agg], axis=1)
    g1 = np.maximum(c @ params.v1.T + params.d1, 0.0)
    out = g1 @ params.v2.T + params.d2
    cache = {"x": x, "h1": h1, "h2": h2, "nb": nb, "arg": arg, "c": c, "g1": g1}
    return out, cache


def point_backward(params: EncoderParams3D, cache: dict, grad_out: np.ndarray) -> dict:
    x, h1, h2, nb, arg, c, g1 = (
        cache["x"],
        cache["h1"],
        cache["h2"],
        cache["nb"],
        cache["arg"],
        cache["c"],
        cache["g1"],
    )
    n, width = h2.shape

    grad_g1 = grad_out @ params.v2
    grad_g1 *= g1 > 0.0
    grad_v2 = grad_out.T @ g1
    grad_d2 = grad_out.sum(axis=0)
    grad_c = grad_g1 @ params.v1
    grad_v1 = grad_g1.T @ c
    grad_d1 = grad_g1.sum(axis=0)

    grad_h2 = grad_c[:, :width].copy()
    grad_agg = grad_c[:, width:]
    winner_rows = nb[np.arange(n)[:, None], arg]  # (N, 32) source row per channel
    cols = np.broadcast_to(np.arange(width), (n, width))
    np.add.at(grad_h2, (winner_rows.ravel(), cols.ravel()), grad_agg.ravel())

    grad_h2 *= h2 > 0.0
    grad_h1 = grad_h2 @ params.w2
    grad_w2 = grad_h2.T @ h1
    grad_b2 = grad_h2.sum(axis=0)
    grad_h1 *= h1 > 0.0
    grad_w1 = grad_h1.T @ x
    grad_b1 = grad_h1.sum(axis=0)
    return {
        "w1": grad_w1,
        "b1": grad_b1,
        "w2": grad_w2,
        "b2": grad_b2,
        "v1": grad_v1,
        "d1": grad_d1,
        "v2": grad_v2,
        "d2": grad_d2,
    }


def encode_points(params: EncoderParams3D, cloud: PointCloud) -> np.ndarray:
    """Per-point features (N, D); permuting input points permutes rows."""
    if len(cloud) < 1:
        raise ValueError("cloud must contain at least one point")
    out, _ = point_forward(params, cloud.positions, cloud.colors)
    return out
