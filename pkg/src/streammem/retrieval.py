"""Key-frame retrieval: pull the buffer frames nearest the heaviest clusters."""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from .model import FrameFeature, MemoryConfig, WarmupError
from .pooling import average_pool

__all__ = ["retrieve_key_features"]


def retrieve_key_features(
    buffer: Sequence[FrameFeature],
    temporal: np.ndarray,
    temporal_weights: np.ndarray,
    config: MemoryConfig,
    pooled_buffer: Sequence[FrameFeature] | None = None,
) -> list[FrameFeature]:
    """Return the buffer frames nearest the top-weight temporal centroids.

    Selects the min(n_ret, bank size) heaviest clusters (weight ties go to the
    lower cluster index), finds for each the buffer entry minimizing squared
    Euclidean distance after pooling to the centroid grid p_tem (distance ties
    go to the lower buffer index, i.e. the newer frame), and returns the
    matching full-resolution buffer entries by identity, ordered by descending
    cluster weight. The same frame may serve several clusters.

    pooled_buffer optionally supplies the buffer already pooled to p_tem, in
    buffer order, so steady-state callers avoid re-pooling every entry.
    """
    k = temporal.shape[0]
    if len(buffer) == 0 or k == 0:
        raise WarmupError("retrieval needs a non-empty buffer and temporal bank")
    if temporal_weights.shape[0] != k:
        raise ValueError(
            f"weights length {temporal_weights.shape[0]} != bank size {k}"
        )

    if pooled_buffer is None:
        pooled_buffer = [average_pool(f, config.p_tem) for f in buffer]
    elif len(pooled_buffer) != len(buffer):
        raise ValueError(
            f"pooled buffer length {len(pooled_buffer)} != buffer length {len(buffer)}"
        )
    candidates = np.stack([f.tokens.reshape(-1) for f in pooled_buffer])

    # Stable sort on negated weights: descending weight, ties to lower index.
    order = np.argsort(-temporal_weights, kind="stable")[: min(config.n_ret, k)]
    flat_centroids = temporal.reshape(k, -1)
    retrieved = []
    for c in order:
        d2 = np.sum((candidates - flat_centroids[c]) ** 2, axis=1)
        retrieved.append(buffer[int(np.argmin(d2))])
    return retrieved
