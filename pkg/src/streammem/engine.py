"""Single-writer memory engine with wait-free versioned snapshot reads.

Write path per frame, in order, each step seeing the previous step's output
for the same frame: FIFO buffer push, spatial view, temporal clustering,
abstract attention, key-frame retrieval. After all five the writer publishes
a fresh immutable snapshot by swapping one reference, so readers never
observe a half-written state and never block the writer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import AttentionParams, abstract_update
from .clustering import ClusterState, temporal_update
from .model import (
    BANK_ORDER,
    FrameFeature,
    MemoryConfig,
    MemorySnapshot,
    MemoryState,
    ShapeError,
    default_config,
    max_tokens,
    validate_config,
)
from .pooling import average_pool, buffer_push
from .retrieval import retrieve_key_features

__all__ = ["MemoryEngine", "QueryResult"]


@dataclass(frozen=True)
class QueryResult:
    """A timestamped read: the newest retained snapshot at or before the
    requested frame. ``stale`` flags that no retained version was old enough
    and the current snapshot was substituted."""

    question_id: str
    snapshot: MemorySnapshot
    stale: bool


class _Published:
    """One immutable (latest, ring) pair; the engine swaps whole instances."""

    __slots__ = ("latest", "ring")

    def __init__(self, latest: MemorySnapshot, ring: tuple):
        self.latest = latest
        self.ring = ring


def _empty_snapshot(dim: int) -> MemorySnapshot:
    return MemorySnapshot(
        version=0,
        timestamp_frame=0,
        tokens=np.zeros((0, dim)),
        bank_offsets=((0, 0), (0, 0), (0, 0), (0, 0)),
    )


class MemoryEngine:
    """Bounded-budget streaming memory over frame features.

    Exactly one writer may call ingest_frame; any number of threads may call
    read_snapshot / query_at concurrently at any time. Reads cost O(1) in the
    number of frames ever ingested: they return the already-built snapshot.
    """

    def __init__(
        self,
        config: MemoryConfig | None = None,
        params: AttentionParams | None = None,
        *,
        ring_depth: int = 8,
    ):
        if config is None:
            config = default_config()
        validate_config(config)
        if params is None:
            params = AttentionParams.seeded(
                config.dim, config.rng_seed, config.decay_alpha
            )
        if params.dim != config.dim:
            raise ShapeError(
                f"attention params dim {params.dim} != config dim {config.dim}"
            )
        if ring_depth < 1:
            raise ValueError(f"ring_depth must be positive, got {ring_depth}")
        self._config = config
        self._params = params
        self._ring_depth = ring_depth
        self._state = MemoryState.initial(config)
        self._pooled_tem: list[FrameFeature] = []  # buffer pooled to p_tem, same order
        self._last_cluster_state: ClusterState | None = None
        empty = _empty_snapshot(config.dim)
        self._published = _Published(empty, (empty,))

    @property
    def config(self) -> MemoryConfig:
        return self._config

    @property
    def params(self) -> AttentionParams:
        return self._params

    @property
    def frames_ingested(self) -> int:
        return self._state.frames_ingested

    @property
    def max_tokens(self) -> int:
        return max_tokens(self._config)

    @property
    def last_cluster_state(self) -> ClusterState | None:
        """Diagnostics from the most recent clustering run, if any ran."""
        return self._last_cluster_state

    @property
    def temporal_weights(self) -> np.ndarray:
        """Copy of the temporal cluster weights (writer-side view)."""
        return self._state.temporal_weights.copy()

    # -- write path -----------------------------------------------------------

    def ingest_frame(self, feature: FrameFeature) -> int:
        """Fold one frame into all four banks and publish a new version.

        Returns the committed version number. Invalid frames raise before any
        state changes; the previously published snapshot stays readable.
        """
        if not isinstance(feature, FrameFeature):
            raise ShapeError(f"expected FrameFeature, got {type(feature).__name__}")
        cfg = self._config
        if feature.dim != cfg.dim:
            raise ShapeError(f"frame dim {feature.dim} != config dim {cfg.dim}")
        validate_config(cfg, input_grid=feature.grid_size)
        state = self._state

        # All bank updates are computed into locals first; state mutation and
        # publication happen together at the end so a failure cannot leave a
        # half-applied frame behind.
        spa_frame = average_pool(feature, cfg.p_spa)
        tem_point = average_pool(feature, cfg.p_tem)
        new_temporal, new_weights, cluster_state = temporal_update(
            state.temporal, state.temporal_weights, tem_point.tokens, cfg
        )
        new_abstract = abstract_update(state.abstract, feature, self._params, cfg)

        # Buffer view as it will look after the push (Eq. order: retrieval
        # sees the new frame and this frame's refreshed clusters).
        keep = min(len(state.buffer), cfg.n_buff - 1)
        post_buffer = [spa_frame] + [state.buffer[i] for i in range(keep)]
        post_pooled = [average_pool(spa_frame, cfg.p_tem)] + self._pooled_tem[:keep]
        retrieved = retrieve_key_features(
            post_buffer, new_temporal, new_weights, cfg, pooled_buffer=post_pooled
        )

        t = state.frames_ingested + 1
        version = self._published.latest.version + 1
        snapshot = self._compose_snapshot(
            version, t, post_buffer[: cfg.n_spa], new_temporal, new_abstract, retrieved
        )

        buffer_push(state.buffer, spa_frame, expected_grid=cfg.p_spa)
        self._pooled_tem = post_pooled
        state.temporal = new_temporal
        state.temporal_weights = new_weights
        state.abstract = new_abstract
        state.retrieved = retrieved
        state.frames_ingested = t
        self._last_cluster_state = cluster_state

        ring = (self._published.ring + (snapshot,))[-self._ring_depth :]
        self._published = _Published(snapshot, ring)  # atomic swap: commit point
        return version

    def _compose_snapshot(
        self,
        version: int,
        timestamp_frame: int,
        spatial: list[FrameFeature],
        temporal: np.ndarray,
        abstract: np.ndarray,
        retrieved: list[FrameFeature],
    ) -> MemorySnapshot:
        cfg = self._config
        parts = {
            "spatial": [f.token_matrix for f in spatial],
            "temporal": [temporal.reshape(-1, cfg.dim)],
            "abstract": [abstract.reshape(-1, cfg.dim)],
            "retrieved": [f.token_matrix for f in retrieved],
        }
        offsets = []
        rows = []
        pos = 0
        for bank in BANK_ORDER:
            bank_rows = [m for m in parts[bank] if m.shape[0]]
            length = sum(m.shape[0] for m in bank_rows)
            offsets.append((pos, length))
            rows.extend(bank_rows)
            pos += length
        tokens = (
            np.concatenate(rows, axis=0) if rows else np.zeros((0, cfg.dim))
        )
        return MemorySnapshot(
            version=version,
            timestamp_frame=timestamp_frame,
            tokens=tokens,
            bank_offsets=tuple(offsets),
        )

    # -- read path ------------------------------------------------------------

    def read_snapshot(self) -> MemorySnapshot:
        """Latest committed snapshot; wait-free, cost independent of history."""
        return self._published.latest

    def query_at(self, question_id: str, frame_timestamp: int) -> QueryResult:
        """Newest retained snapshot with timestamp_frame <= frame_timestamp.

        The engine retains a short ring of recent versions. A timestamp older
        than everything retained yields the current snapshot with stale=True.
        """
        published = self._published  # one read: latest and ring stay consistent
        for snapshot in reversed(published.ring):
            if snapshot.timestamp_frame <= frame_timestamp:
                return QueryResult(question_id, snapshot, stale=False)
        return QueryResult(question_id, published.latest, stale=True)

    # -- accounting -----------------------------------------------------------

    def bank_token_counts(self) -> dict[str, int]:
        return self._state.bank_token_counts(self._config)

    def resident_token_count(self) -> int:
        """Bank tokens plus buffer tokens: the engine's full working set,
        constant in stream length once the buffer fills."""
        bank = sum(self.bank_token_counts().values())
        return bank + len(self._state.buffer) * self._config.p_spa**2
