"""Exact average pooling of square token grids, and the FIFO feature buffer."""

from __future__ import annotations

from collections import deque

import numpy as np

from .model import FrameFeature, ShapeError

__all__ = ["average_pool", "buffer_push"]


def average_pool(feature: FrameFeature, target_grid: int) -> FrameFeature:
    """Pool a (P, P, D) grid down to (p, p, D) by exact block averaging.

    P must be an integer multiple of p; each output cell is the mean of a
    (P/p, P/p) block of input tokens. target_grid == grid_size is identity.
    """
    p_in = feature.grid_size
    if target_grid < 1:
        raise ShapeError(f"target grid must be positive, got {target_grid}")
    if p_in % target_grid != 0:
        raise ShapeError(
            f"pooling not exact: target grid {target_grid} does not divide input grid {p_in}"
        )
    if target_grid == p_in:
        return feature
    block = p_in // target_grid
    pooled = feature.tokens.reshape(
        target_grid, block, target_grid, block, feature.dim
    ).mean(axis=(1, 3))
    return FrameFeature(grid_size=target_grid, dim=feature.dim, tokens=pooled)


def buffer_push(
    buffer: deque, feature: FrameFeature, expected_grid: int | None = None
) -> FrameFeature | None:
    """Push a frame onto the newest-first FIFO buffer; return any evicted frame.

    The deque's maxlen is the buffer capacity. Eviction (oldest frame) happens
    exactly when the buffer is already full. When expected_grid is given the
    frame must already be pooled to that grid.
    """
    if expected_grid is not None and feature.grid_size != expected_grid:
        raise ShapeError(
            f"buffer expects grid {expected_grid}, got {feature.grid_size}"
        )
    evicted = None
    if buffer.maxlen is not None and len(buffer) == buffer.maxlen:
        evicted = buffer[-1]
    buffer.appendleft(feature)
    return evicted
