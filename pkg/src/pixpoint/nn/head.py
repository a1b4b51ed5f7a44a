"""Projection head: linear map D -> M followed by L2 normalization.

Embeddings are plain (N, M) float64 arrays with unit rows; the loss layer
re-validates the norm invariant on its inputs.
"""

from __future__ import annotations

import numpy as np

from ..errors import DegenerateEmbedding
from .params import HeadParams

NORM_EPS = 1e-8  # normalization floor
NORM_ABORT = 1e-12  # below this the row is considered corrupt


def head_forward(head: HeadParams, features: np.ndarray):
    """features (N, D) -> (embeddings (N, M) unit rows, cache)."""
    if not np.all(np.isfinite(features)):
        raise ValueError("features contain non-finite values")
    y = features @ head.weight.T + head.bias
    norms = np.linalg.norm(y, axis=1)
    if norms.size and norms.min() < NORM_ABORT:
        bad = int(np.argmin(norms))
        raise DegenerateEmbedding(
            f"pre-normalization row {bad} has norm {norms[bad]:.3e} < {NORM_ABORT}"
        )
    denom = np.maximum(norms, NORM_EPS)
    z = y / denom[:, None]
    cache = {"features": features, "z": z, "denom": denom, "clamped": norms < NORM_EPS}
    return z, cache


def head_backward(head: HeadParams, cache: dict, grad_z: np.ndarray):
    """Returns (grad_features, {"weight": ..., "bias": ...})."""
    z, denom, clamped = cache["z"], cache["denom"], cache["clamped"]
    # d(y/||y||)/dy projects out the radial component; when the denominator
    # was clamped the map is y/eps, which is plain scaling
    radial = (grad_z * z).sum(axis=1, keepdims=True)
    grad_y = (grad_z - z * radial) / denom[:, None]
    if clamped.any():
        grad_y[clamped] = grad_z[clamped] / NORM_EPS
    grad_features = grad_y @ head.weight
    grads = {"weight": grad_y.T @ cache["features"], "bias": grad_y.sum(axis=0)}
    return grad_features, grads


def decode_normalize(head: HeadParams, features: np.ndarray) -> np.ndarray:
    """Unit-norm embeddings of a feature matrix (the spec'd public entry)."""
    z, _ = head_forward(head, features)
    return z
