"""Desk-scale measurement harness: flat-latency check, budget sweeps, PCA export.

A "read" here fetches the current memory tokens and verifies their checksum,
so every read does work proportional to the token count it returns. For the
engine that count is capped by the budget, so read cost stays flat as frames
stream past; the keep-all baseline concatenates everything it stored, so its
reads and token counts grow linearly. The contrast is the point of the bench.
"""

from __future__ import annotations

import itertools
import statistics
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .engine import MemoryEngine
from .model import (
    BANK_ORDER,
    ConfigError,
    FrameFeature,
    MemoryConfig,
    MemorySnapshot,
    default_config,
    max_tokens,
    validate_config,
)
from .pooling import average_pool
from .streamio import synth_stream

__all__ = [
    "BenchRow",
    "BenchReport",
    "SweepCell",
    "SweepReport",
    "PcaExport",
    "bench_latency",
    "sweep_ablation",
    "export_memory_pca",
]


def _rss_mb() -> float:
    try:
        import resource

        return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024.0
    except Exception:
        return float("nan")


@dataclass(frozen=True)
class BenchRow:
    mode: str  # "engine" or "keep-all"
    frames: int
    queries: int
    median_read_ms: float
    p95_read_ms: float
    ingest_fps: float
    bank_tokens: int
    resident_tokens: int
    rss_mb: float


_BENCH_COLUMNS = (
    "mode",
    "frames",
    "queries",
    "median_read_ms",
    "p95_read_ms",
    "ingest_fps",
    "bank_tokens",
    "resident_tokens",
    "rss_mb",
)


@dataclass(frozen=True)
class BenchReport:
    """Latency/footprint rows plus the flatness verdict across frame counts."""

    rows: tuple

    def flatness_ratio(self, mode: str = "engine") -> float:
        """max median read latency / min median read latency across counts."""
        medians = [r.median_read_ms for r in self.rows if r.mode == mode]
        if not medians or min(medians) <= 0:
            return float("nan")
        return max(medians) / min(medians)

    def to_csv(self) -> str:
        lines = [",".join(_BENCH_COLUMNS)]
        for r in self.rows:
            lines.append(
                f"{r.mode},{r.frames},{r.queries},{r.median_read_ms:.6f},"
                f"{r.p95_read_ms:.6f},{r.ingest_fps:.1f},{r.bank_tokens},"
                f"{r.resident_tokens},{r.rss_mb:.1f}"
            )
        return "\n".join(lines) + "\n"


class _KeepAllBaseline:
    """No-compression reference: keeps every pooled frame, reads concatenate all.

    Mirrors the engine's interface shape far enough for the bench loop. Token
    count after t frames is exactly t * p_spa**2, i.e. linear growth.
    """

    def __init__(self, config: MemoryConfig):
        self._config = config
        self._frames: list[np.ndarray] = []

    def ingest_frame(self, feature: FrameFeature) -> int:
        pooled = average_pool(feature, self._config.p_spa)
        self._frames.append(pooled.token_matrix)
        return len(self._frames)

    def read_tokens(self) -> np.ndarray:
        if not self._frames:
            return np.zeros((0, self._config.dim))
        return np.concatenate(self._frames, axis=0)

    def bank_token_count(self) -> int:
        return len(self._frames) * self._config.p_spa**2

    def resident_token_count(self) -> int:
        return self.bank_token_count()


def _timed_engine_read(engine: MemoryEngine) -> float:
    t0 = time.perf_counter()
    snapshot = engine.read_snapshot()
    if not snapshot.verify_checksum():
        raise AssertionError(f"torn snapshot observed at version {snapshot.version}")
    return (time.perf_counter() - t0) * 1000.0


def _timed_baseline_read(baseline: _KeepAllBaseline) -> float:
    t0 = time.perf_counter()
    tokens = baseline.read_tokens()
    zlib.crc32(tokens.tobytes())
    return (time.perf_counter() - t0) * 1000.0


def bench_latency(
    config: MemoryConfig | None = None,
    frame_counts=(1000, 10000),
    queries_per_point: int = 32,
    *,
    seed: int = 0,
    n_scenes: int = 4,
    noise_rel: float = 0.05,
    keep_all: bool = False,
    reader_threads: int = 4,
) -> BenchReport:
    """Ingest a synthetic stream, pausing at each frame count to time reads.

    At each count, queries_per_point reads run on a small thread pool while
    wall times are recorded per read; the row keeps the median and 95th
    percentile. keep_all swaps the engine for the no-compression baseline.
    Timing columns vary run to run; every other column is seed-deterministic.
    """
    if config is None:
        config = default_config(dim=32)
    counts = sorted(set(int(c) for c in frame_counts))
    if not counts or counts[0] < 1:
        raise ValueError(f"frame_counts must be positive, got {frame_counts}")
    if queries_per_point < 1:
        raise ValueError(f"queries_per_point must be >= 1, got {queries_per_point}")

    stream = synth_stream(
        seed, counts[-1], min(n_scenes, counts[-1]), config.p_spa, config.dim,
        noise_rel=noise_rel,
    )
    if keep_all:
        sink = _KeepAllBaseline(config)
        timed_read = lambda: _timed_baseline_read(sink)
        mode = "keep-all"
    else:
        sink = MemoryEngine(config)
        timed_read = lambda: _timed_engine_read(sink)
        mode = "engine"

    rows = []
    done = 0
    frames = iter(stream)
    with ThreadPoolExecutor(max_workers=max(1, reader_threads)) as pool:
        for count in counts:
            segment = count - done
            t0 = time.perf_counter()
            while done < count:
                sink.ingest_frame(next(frames))
                done += 1
            ingest_s = time.perf_counter() - t0
            read_ms = list(
                pool.map(lambda _: timed_read(), range(queries_per_point))
            )
            if keep_all:
                bank = sink.bank_token_count()
            else:
                bank = sink.read_snapshot().token_count
            rows.append(
                BenchRow(
                    mode=mode,
                    frames=count,
                    queries=queries_per_point,
                    median_read_ms=statistics.median(read_ms),
                    p95_read_ms=float(np.percentile(read_ms, 95)),
                    ingest_fps=segment / ingest_s if ingest_s > 0 else float("inf"),
                    bank_tokens=bank,
                    resident_tokens=sink.resident_token_count(),
                    rss_mb=_rss_mb(),
                )
            )
    return BenchReport(rows=tuple(rows))


# -- budget/shape ablation sweep ----------------------------------------------


@dataclass(frozen=True)
class SweepCell:
    overrides: tuple  # sorted (field, value) pairs applied to the base config
    ok: bool
    reason: str  # empty when ok; first violated constraint otherwise
    budget: int  # max_tokens of the cell's config (0 when skipped)
    final_tokens: int  # snapshot tokens after the run (0 when skipped)
    invariants_ok: bool  # budget cap + weight conservation held every frame
    ingest_fps: float


@dataclass(frozen=True)
class SweepReport:
    rows: tuple

    def to_csv(self) -> str:
        lines = ["overrides,ok,reason,budget,final_tokens,invariants_ok,ingest_fps"]
        for r in self.rows:
            spec = ";".join(f"{k}={v}" for k, v in r.overrides)
            reason = r.reason.replace(",", ";")
            lines.append(
                f"{spec},{int(r.ok)},{reason},{r.budget},{r.final_tokens},"
                f"{int(r.invariants_ok)},{r.ingest_fps:.1f}"
            )
        return "\n".join(lines) + "\n"


def sweep_ablation(
    grid: dict,
    base_config: MemoryConfig | None = None,
    *,
    frames: int = 120,
    seed: int = 0,
    n_scenes: int = 3,
) -> SweepReport:
    """Run every config in the Cartesian product of the grid's value lists.

    grid maps MemoryConfig field names to candidate values, e.g.
    {"p_tem": [2, 4], "n_tem": [8, 25]}. Invalid cells are reported as
    skipped with the violated constraint named, never raised. Valid cells
    ingest a short synthetic stream while checking the budget cap and weight
    conservation after every frame.
    """
    if base_config is None:
        base_config = default_config(dim=16)
    valid_fields = set(MemoryConfig.__dataclass_fields__)
    for key in grid:
        if key not in valid_fields:
            raise ConfigError(f"unknown config field in grid: {key!r}")
    names = sorted(grid)
    rows = []
    for values in itertools.product(*(grid[n] for n in names)):
        overrides = tuple(zip(names, values))
        try:
            cfg = base_config.with_overrides(**dict(overrides))
            validate_config(cfg, input_grid=cfg.p_spa)
        except (ConfigError, TypeError) as err:
            rows.append(
                SweepCell(overrides, False, str(err), 0, 0, False, 0.0)
            )
            continue
        budget = max_tokens(cfg)
        stream = synth_stream(seed, frames, min(n_scenes, frames), cfg.p_spa, cfg.dim)
        engine = MemoryEngine(cfg)
        invariants_ok = True
        t0 = time.perf_counter()
        for t, frame in enumerate(stream, start=1):
            engine.ingest_frame(frame)
            snapshot = engine.read_snapshot()
            weights_sum = float(np.sum(engine.temporal_weights))
            if snapshot.token_count > budget or abs(weights_sum - t) > 1e-9 * max(t, 1):
                invariants_ok = False
        elapsed = time.perf_counter() - t0
        rows.append(
            SweepCell(
                overrides=overrides,
                ok=True,
                reason="",
                budget=budget,
                final_tokens=engine.read_snapshot().token_count,
                invariants_ok=invariants_ok,
                ingest_fps=frames / elapsed if elapsed > 0 else float("inf"),
            )
        )
    return SweepReport(rows=tuple(rows))


# -- 2-D PCA export of memory vs raw tokens ------------------------------------


@dataclass(frozen=True, eq=False)
class PcaExport:
    """Top-2 principal projection of memory tokens and raw tokens together.

    coords[i] pairs with labels[i] ("memory" or "raw") and banks[i] (bank name
    for memory rows, "raw" otherwise). degenerate is set when the combined
    tokens have rank < 2 (second axis carries no variance); coordinates are
    still emitted.
    """

    coords: np.ndarray
    labels: tuple
    banks: tuple
    degenerate: bool
    eigenvalues: tuple

    def to_csv(self) -> str:
        lines = []
        if self.degenerate:
            lines.append("# degenerate_axes=true")
        lines.append("x,y,label,bank")
        for (x, y), label, bank in zip(self.coords, self.labels, self.banks):
            lines.append(f"{float(x)!r},{float(y)!r},{label},{bank}")
        return "\n".join(lines) + "\n"


def export_memory_pca(
    snapshot: MemorySnapshot, raw_frames, *, tol: float = 1e-9
) -> PcaExport:
    """Project memory tokens and raw-frame tokens onto their shared top-2 PCA.

    raw_frames is an iterable of FrameFeature at any grid. The combined set
    (memory rows first, in bank order) is centered once; principal directions
    come from an eigen-decomposition of its covariance, ordered by decreasing
    eigenvalue, each direction's sign fixed so its largest-magnitude entry is
    positive. Needs at least 3 tokens total.
    """
    mem_tokens = snapshot.tokens
    banks: list[str] = []
    for name, (_, length) in zip(BANK_ORDER, snapshot.bank_offsets):
        banks.extend([name] * length)
    raw_rows = [f.token_matrix for f in raw_frames]
    raw = (
        np.concatenate(raw_rows, axis=0)
        if raw_rows
        else np.zeros((0, mem_tokens.shape[1]))
    )
    if raw.shape[0] and raw.shape[1] != mem_tokens.shape[1]:
        raise ValueError(
            f"raw token dim {raw.shape[1]} != memory token dim {mem_tokens.shape[1]}"
        )
    combined = np.concatenate([mem_tokens, raw], axis=0)
    n = combined.shape[0]
    if n < 3:
        raise ValueError(f"need at least 3 tokens for a 2-D projection, got {n}")
    labels = tuple(["memory"] * mem_tokens.shape[0] + ["raw"] * raw.shape[0])
    banks = tuple(banks + ["raw"] * raw.shape[0])

    centered = combined - combined.mean(axis=0, keepdims=True)
    cov = (centered.T @ centered) / (n - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = evals[order]
    evecs = evecs[:, order]
    d = cov.shape[0]
    top = np.zeros((d, 2))
    kept = min(2, d)
    top[:, :kept] = evecs[:, :kept]
    lam = [float(evals[i]) if i < d else 0.0 for i in range(2)]
    for j in range(kept):
        pivot = int(np.argmax(np.abs(top[:, j])))
        if top[pivot, j] < 0:
            top[:, j] = -top[:, j]
    degenerate = d < 2 or lam[1] <= tol * max(lam[0], 1.0)
    coords = centered @ top
    return PcaExport(
        coords=coords,
        labels=labels,
        banks=banks,
        degenerate=degenerate,
        eigenvalues=(lam[0], lam[1]),
    )
