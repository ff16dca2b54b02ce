"""Shared domain types: frame features, configuration, memory state, snapshots.

Everything here is a value type except :class:`MemoryState`, which is mutable
and confined to the single writer (see ``engine``).
"""

from __future__ import annotations

import struct
import zlib
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "ConfigError",
    "ShapeError",
    "WarmupError",
    "FrameFeature",
    "MemoryConfig",
    "MemoryState",
    "MemorySnapshot",
    "BANK_ORDER",
    "default_config",
    "max_tokens",
    "validate_config",
]


class ConfigError(ValueError):
    """A memory configuration violates one of its named constraints."""


class ShapeError(ValueError):
    """A feature's grid or token dimension does not match what was expected."""


class WarmupError(RuntimeError):
    """An operation was asked to run before the memory holds enough state."""


# Snapshot bank concatenation order. Fixed so outputs are bit-reproducible.
BANK_ORDER = ("spatial", "temporal", "abstract", "retrieved")


@dataclass(frozen=True, eq=False)
class FrameFeature:
    """One frame's square grid of feature tokens.

    ``tokens`` has shape (grid_size, grid_size, dim), float64, row-major and
    read-only. All values must be finite; non-finite frames are rejected at
    construction so they can never enter the engine. Instances compare by
    identity: the buffer and retrieved bank track frames as objects.
    """

    grid_size: int
    dim: int
    tokens: np.ndarray

    def __post_init__(self) -> None:
        p, d = self.grid_size, self.dim
        if p < 1 or d < 1:
            raise ShapeError(f"grid_size and dim must be positive, got ({p}, {d})")
        arr = np.array(self.tokens, dtype=np.float64, order="C", copy=True)
        if arr.shape != (p, p, d):
            raise ShapeError(f"tokens shape {arr.shape} != expected {(p, p, d)}")
        if not np.isfinite(arr).all():
            raise ValueError("tokens contain non-finite values")
        arr.setflags(write=False)
        object.__setattr__(self, "tokens", arr)

    @classmethod
    def from_array(cls, tokens: np.ndarray) -> "FrameFeature":
        tokens = np.asarray(tokens)
        if tokens.ndim != 3 or tokens.shape[0] != tokens.shape[1]:
            raise ShapeError(f"expected a (P, P, D) array, got shape {tokens.shape}")
        return cls(grid_size=tokens.shape[0], dim=tokens.shape[2], tokens=tokens)

    @property
    def token_matrix(self) -> np.ndarray:
        """Tokens flattened to (grid_size**2, dim), row-major."""
        return self.tokens.reshape(self.grid_size * self.grid_size, self.dim)


@dataclass(frozen=True)
class MemoryConfig:
    """Budget and shape hyperparameters for the memory engine.

    Construction never validates (so budget arithmetic can be probed with
    degenerate values); :func:`validate_config` enforces the invariants at the
    engine boundary.
    """

    p_spa: int = 8
    p_tem: int = 4
    p_abs: int = 1
    n_buff: int = 300
    n_spa: int = 1
    n_tem: int = 25
    n_abs: int = 25
    n_ret: int = 3
    dim: int = 1024  # stand-in encoder width; tests use smaller
    kmeans_max_iters: int = 10
    decay_alpha: float = 0.1
    rng_seed: int = 0
    kmeans_warm_start: bool = True  # False: seeded random init, for ablation

    def with_overrides(self, **kwargs) -> "MemoryConfig":
        return replace(self, **kwargs)


def default_config(**overrides) -> MemoryConfig:
    """The default configuration, optionally with field overrides."""
    return MemoryConfig(**overrides)


def max_tokens(config: MemoryConfig) -> int:
    """Total token budget: (n_spa+n_ret)*p_spa^2 + n_tem*p_tem^2 + n_abs*p_abs^2.

    Exact integer arithmetic; assumes a valid config but does not check one.
    """
    return (
        (config.n_spa + config.n_ret) * config.p_spa**2
        + config.n_tem * config.p_tem**2
        + config.n_abs * config.p_abs**2
    )


_POSITIVE_INT_FIELDS = (
    "p_spa",
    "p_tem",
    "p_abs",
    "n_buff",
    "n_spa",
    "n_tem",
    "n_abs",
    "n_ret",
    "dim",
    "kmeans_max_iters",
)


def validate_config(config: MemoryConfig, input_grid: int | None = None) -> None:
    """Check every config invariant, raising ConfigError naming the first violation.

    ``input_grid`` is the grid side of incoming frames; pass None to skip the
    divisibility checks (the engine re-checks them per frame).
    """
    for name in _POSITIVE_INT_FIELDS:
        value = getattr(config, name)
        if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value < 1:
            raise ConfigError(f"{name} must be a positive integer, got {value!r}")
    if config.n_spa > config.n_buff:
        raise ConfigError(
            f"spatial exceeds buffer: n_spa={config.n_spa} > n_buff={config.n_buff}"
        )
    if config.n_ret > config.n_tem:
        raise ConfigError(
            f"retrieval exceeds temporal: n_ret={config.n_ret} > n_tem={config.n_tem}"
        )
    if not (config.p_abs <= config.p_tem <= config.p_spa):
        raise ConfigError(
            "bank grid order violated: require p_abs <= p_tem <= p_spa, got "
            f"({config.p_abs}, {config.p_tem}, {config.p_spa})"
        )
    if input_grid is not None:
        if not isinstance(input_grid, (int, np.integer)) or input_grid < 1:
            raise ConfigError(f"input grid must be a positive integer, got {input_grid!r}")
        for name in ("p_spa", "p_tem", "p_abs"):
            p = getattr(config, name)
            if input_grid % p != 0:
                raise ConfigError(
                    f"pooling not exact: {name}={p} does not divide input grid {input_grid}"
                )
    alpha = config.decay_alpha
    if not isinstance(alpha, (int, float, np.floating)) or not np.isfinite(alpha):
        raise ConfigError(f"decay out of range: decay_alpha must be a finite real, got {alpha!r}")
    if not (0.0 < float(alpha) < 1.0):
        raise ConfigError(f"decay out of range: decay_alpha must lie in (0, 1), got {alpha}")


@dataclass
class MemoryState:
    """The engine's mutable state: feature buffer plus the four banks.

    Confined to the single writer; readers only ever see immutable
    :class:`MemorySnapshot` copies.
    """

    buffer: deque  # of FrameFeature at grid p_spa, newest first
    temporal: np.ndarray  # (k, p_tem, p_tem, dim) cluster centroids
    temporal_weights: np.ndarray  # (k,) frames merged into each centroid
    abstract: np.ndarray  # (n_abs, p_abs, p_abs, dim), zero-initialized
    retrieved: list = field(default_factory=list)  # FrameFeature, buffer members
    frames_ingested: int = 0

    @classmethod
    def initial(cls, config: MemoryConfig) -> "MemoryState":
        return cls(
            buffer=deque(maxlen=config.n_buff),
            temporal=np.zeros((0, config.p_tem, config.p_tem, config.dim)),
            temporal_weights=np.zeros(0),
            abstract=np.zeros((config.n_abs, config.p_abs, config.p_abs, config.dim)),
        )

    def spatial(self, n_spa: int) -> list:
        """View of the newest n_spa buffer entries (the spatial bank)."""
        return [self.buffer[i] for i in range(min(n_spa, len(self.buffer)))]

    def bank_token_counts(self, config: MemoryConfig) -> dict[str, int]:
        return {
            "spatial": len(self.spatial(config.n_spa)) * config.p_spa**2,
            "temporal": self.temporal.shape[0] * config.p_tem**2,
            "abstract": (config.n_abs * config.p_abs**2) if self.frames_ingested else 0,
            "retrieved": len(self.retrieved) * config.p_spa**2,
        }


def _checksum(version: int, timestamp_frame: int, offsets, tokens: np.ndarray) -> int:
    header = struct.pack("<qq", version, timestamp_frame)
    header += struct.pack("<8q", *(v for pair in offsets for v in pair))
    crc = zlib.crc32(header)
    return zlib.crc32(np.ascontiguousarray(tokens).tobytes(), crc)


@dataclass(frozen=True, eq=False)
class MemorySnapshot:
    """Immutable, versioned flattening of the four banks into one token sequence.

    ``tokens`` is (total, dim) float64, banks concatenated in BANK_ORDER;
    ``bank_offsets`` maps each bank name to its (start, length) in tokens.
    The checksum covers version, timestamp, offsets and token bytes and lets
    readers detect a torn publication (there should never be one).
    """

    version: int
    timestamp_frame: int
    tokens: np.ndarray
    bank_offsets: tuple  # ((start, length) per bank, in BANK_ORDER)
    checksum: int = 0

    def __post_init__(self) -> None:
        arr = np.asarray(self.tokens, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeError(f"snapshot tokens must be 2-D, got shape {arr.shape}")
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "tokens", arr)
        offsets = tuple(tuple(int(v) for v in pair) for pair in self.bank_offsets)
        if len(offsets) != 4:
            raise ShapeError("bank_offsets must hold four (start, length) pairs")
        pos = 0
        for start, length in offsets:
            if start != pos or length < 0:
                raise ShapeError(f"bank_offsets do not partition tokens: {offsets}")
            pos += length
        if pos != arr.shape[0]:
            raise ShapeError(
                f"bank_offsets cover {pos} tokens but snapshot holds {arr.shape[0]}"
            )
        object.__setattr__(self, "bank_offsets", offsets)
        object.__setattr__(
            self,
            "checksum",
            _checksum(self.version, self.timestamp_frame, offsets, arr),
        )

    @property
    def token_count(self) -> int:
        return self.tokens.shape[0]

    def bank(self, name: str) -> np.ndarray:
        """Token rows of one bank, by name from BANK_ORDER."""
        start, length = self.bank_offsets[BANK_ORDER.index(name)]
        return self.tokens[start : start + length]

    def verify_checksum(self) -> bool:
        return self.checksum == _checksum(
            self.version, self.timestamp_frame, self.bank_offsets, self.tokens
        )
