"""Binary feature-stream format (FVS1) and a deterministic synthetic generator.

FVS1 layout, all little-endian:
    bytes 0-3   magic "FVS1"
    bytes 4-7   grid side P, u32
    bytes 8-11  token dim D, u32
    bytes 12-19 frame count, u64 (0 = unbounded / unknown, e.g. pipes)
    byte  20    dtype tag, u8 (0 = float32)
    then frames back to back, each P*P*D float32 values, row-major.

Files carry float32; the engine works in float64 (converted on read). The
synthetic generator quantizes to float32 before handing frames out, so frames
consumed directly and frames round-tripped through a file are bit-identical.
"""

from __future__ import annotations

import io
import struct
from collections.abc import Iterable, Iterator
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import FrameFeature

__all__ = [
    "StreamFormatError",
    "StreamHeader",
    "read_header",
    "open_stream",
    "read_stream",
    "write_stream",
    "SyntheticStream",
    "synth_stream",
]

MAGIC = b"FVS1"
_HEADER = struct.Struct("<4sIIQB")
DTYPE_F32 = 0


class StreamFormatError(ValueError):
    """The byte stream does not follow the FVS1 layout."""


@dataclass(frozen=True)
class StreamHeader:
    """Parsed FVS1 header; frame_count 0 means length unknown up front."""

    grid_side: int
    dim: int
    frame_count: int = 0
    dtype_tag: int = DTYPE_F32

    def __post_init__(self) -> None:
        if self.grid_side < 1 or self.dim < 1:
            raise StreamFormatError(
                f"grid_side and dim must be >= 1, got ({self.grid_side}, {self.dim})"
            )
        if self.frame_count < 0:
            raise StreamFormatError(f"negative frame count {self.frame_count}")
        if self.dtype_tag != DTYPE_F32:
            raise StreamFormatError(f"unknown dtype tag {self.dtype_tag}")

    @property
    def frame_bytes(self) -> int:
        return self.grid_side * self.grid_side * self.dim * 4

    def pack(self) -> bytes:
        return _HEADER.pack(MAGIC, self.grid_side, self.dim, self.frame_count, self.dtype_tag)


def _as_reader(source):
    """(file-like, should_close) from a path, '-' for stdin, or file-like."""
    if hasattr(source, "read"):
        return source, False
    if source == "-":
        import sys

        return sys.stdin.buffer, False
    return open(Path(source), "rb"), True


def read_header(source) -> StreamHeader:
    f, should_close = _as_reader(source)
    try:
        raw = f.read(_HEADER.size)
    finally:
        if should_close:
            f.close()
    if len(raw) < _HEADER.size:
        raise StreamFormatError(
            f"short read: header needs {_HEADER.size} bytes, got {len(raw)}"
        )
    magic, grid, dim, count, tag = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise StreamFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    return StreamHeader(grid_side=grid, dim=dim, frame_count=count, dtype_tag=tag)


def _iter_frames(f, header: StreamHeader, should_close: bool) -> Iterator[FrameFeature]:
    p, d = header.grid_side, header.dim
    per_frame = header.frame_bytes
    offset = _HEADER.size
    produced = 0
    try:
        while header.frame_count == 0 or produced < header.frame_count:
            chunk = f.read(per_frame)
            if not chunk and header.frame_count == 0:
                return
            if len(chunk) < per_frame:
                raise StreamFormatError(
                    f"truncated frame at byte offset {offset}: "
                    f"needed {per_frame} bytes, got {len(chunk)}"
                )
            tokens = np.frombuffer(chunk, dtype="<f4").astype(np.float64).reshape(p, p, d)
            if not np.isfinite(tokens).all():
                raise StreamFormatError(
                    f"non-finite values in frame starting at byte offset {offset}"
                )
            yield FrameFeature(grid_size=p, dim=d, tokens=tokens)
            offset += per_frame
            produced += 1
    finally:
        if should_close:
            f.close()


def open_stream(source) -> tuple[StreamHeader, Iterator[FrameFeature]]:
    """Parse the header now; return it plus a lazy frame iterator.

    source may be a path, '-' for standard input, or a binary file object.
    The iterator closes the file (when this call opened it) on exhaustion.
    """
    f, should_close = _as_reader(source)
    try:
        header = read_header(f)
    except Exception:
        if should_close:
            f.close()
        raise
    return header, _iter_frames(f, header, should_close)


def read_stream(source) -> Iterator[FrameFeature]:
    """Frames of an FVS1 stream, in order. See open_stream for sources."""
    _, frames = open_stream(source)
    return frames


def write_stream(
    dest,
    frames: Iterable[FrameFeature],
    *,
    grid_side: int | None = None,
    dim: int | None = None,
) -> int:
    """Write frames as FVS1; returns the number written.

    Shape fields default to the first frame's. The frame count is taken from
    len(frames) when available; otherwise 0 is written first and patched in
    afterwards when dest is seekable (pipes keep 0 = unbounded).
    """
    frames_iter = iter(frames)
    known = len(frames) if hasattr(frames, "__len__") else None
    first = None
    if grid_side is None or dim is None:
        first = next(frames_iter, None)
        if first is None:
            raise StreamFormatError("cannot infer header from an empty stream")
        grid_side, dim = first.grid_size, first.dim

    if hasattr(dest, "write"):
        f, should_close = dest, False
    elif dest == "-":
        import sys

        f, should_close = sys.stdout.buffer, False
    else:
        f, should_close = open(Path(dest), "wb"), True
    try:
        header_pos = f.tell() if f.seekable() else None
        f.write(StreamHeader(grid_side, dim, known or 0).pack())
        written = 0
        for frame in ([first] if first is not None else []):
            f.write(_frame_bytes(frame, grid_side, dim))
            written += 1
        for frame in frames_iter:
            f.write(_frame_bytes(frame, grid_side, dim))
            written += 1
        if known is None and header_pos is not None:
            end = f.tell()
            f.seek(header_pos)
            f.write(StreamHeader(grid_side, dim, written).pack())
            f.seek(end)
        return written
    finally:
        if should_close:
            f.close()


def _frame_bytes(frame: FrameFeature, grid_side: int, dim: int) -> bytes:
    if frame.grid_size != grid_side or frame.dim != dim:
        raise StreamFormatError(
            f"frame shape ({frame.grid_size}, {frame.dim}) does not match "
            f"header ({grid_side}, {dim})"
        )
    return np.ascontiguousarray(frame.tokens, dtype="<f4").tobytes()


# -- synthetic scene-structured streams ---------------------------------------


@dataclass(frozen=True, eq=False)
class SyntheticStream:
    """Deterministic scene-structured stream; iterable any number of times.

    Frames are grouped into contiguous scenes; each scene has a fixed anchor
    pattern and every frame is anchor plus small seeded noise, quantized to
    float32. Frame i is reproducible in isolation (frame(i)), so iteration,
    random access, and file round-trips all agree bit-exactly.
    """

    seed: int
    n_frames: int
    n_scenes: int
    grid_side: int
    dim: int
    noise_rel: float
    scene_ids: tuple
    anchors: np.ndarray  # (n_scenes, P, P, D) float64, f32-quantized values
    separation_ratio: float  # min anchor gap / intra-scene distance bound

    def __len__(self) -> int:
        return self.n_frames

    def __iter__(self) -> Iterator[FrameFeature]:
        for i in range(self.n_frames):
            yield self.frame(i)

    def frame(self, i: int) -> FrameFeature:
        if not 0 <= i < self.n_frames:
            raise IndexError(f"frame {i} out of range [0, {self.n_frames})")
        scene = self.scene_ids[i]
        anchor = self.anchors[scene]
        std = self.noise_rel * _rms(anchor)
        rng = np.random.default_rng([self.seed, 1, i])
        tokens = anchor + rng.normal(0.0, std, anchor.shape) if std > 0 else anchor
        tokens = tokens.astype(np.float32).astype(np.float64)
        return FrameFeature(grid_size=self.grid_side, dim=self.dim, tokens=tokens)

    def scene_spans(self) -> list[tuple[int, int, int]]:
        """(start, end, scene_id) per scene, end exclusive."""
        spans = []
        start = 0
        for i in range(1, self.n_frames + 1):
            if i == self.n_frames or self.scene_ids[i] != self.scene_ids[start]:
                spans.append((start, i, self.scene_ids[start]))
                start = i
        return spans

    @property
    def header(self) -> StreamHeader:
        return StreamHeader(self.grid_side, self.dim, self.n_frames)


def _rms(arr: np.ndarray) -> float:
    return float(np.sqrt(np.mean(arr**2)))


def synth_stream(
    seed: int,
    n_frames: int,
    n_scenes: int,
    grid_side: int,
    dim: int,
    *,
    noise_rel: float = 0.05,
) -> SyntheticStream:
    """Build a deterministic stream of n_frames across n_scenes contiguous scenes.

    Anchors are drawn standard normal and re-drawn (bounded, deterministic)
    until every pair of anchors is at least 5x farther apart than an upper
    bound on the distance between two frames of the same scene, so scene
    structure is unambiguous by construction. noise_rel scales per-token noise
    relative to the anchor's RMS value; 0 gives identical frames per scene.
    """
    if n_frames < 1:
        raise StreamFormatError(f"n_frames must be >= 1, got {n_frames}")
    if not 1 <= n_scenes <= n_frames:
        raise StreamFormatError(
            f"need 1 <= n_scenes <= n_frames, got {n_scenes} scenes, {n_frames} frames"
        )
    if grid_side < 1 or dim < 1:
        raise StreamFormatError(f"bad shape ({grid_side}, {dim})")
    if noise_rel < 0 or not np.isfinite(noise_rel):
        raise StreamFormatError(f"noise_rel must be finite and >= 0, got {noise_rel}")

    scene_ids = tuple(
        min(i * n_scenes // n_frames, n_scenes - 1) for i in range(n_frames)
    )

    n_elems = grid_side * grid_side * dim
    ratio = np.inf
    anchors = None
    for attempt in range(100):
        rng = np.random.default_rng([seed, 0, attempt])
        cand = rng.normal(0.0, 1.0, (n_scenes, grid_side, grid_side, dim))
        cand = cand.astype(np.float32).astype(np.float64)
        # Two same-scene frames differ by two independent noise draws; bound
        # that distance with a generous ~4-sigma tail on the noise norm.
        worst_rms = max(_rms(a) for a in cand)
        intra_bound = 2.0 * noise_rel * worst_rms * (np.sqrt(n_elems) + 4.0)
        if n_scenes == 1:
            ratio = np.inf
            anchors = cand
            break
        flat = cand.reshape(n_scenes, -1)
        gaps = [
            float(np.linalg.norm(flat[a] - flat[b]))
            for a in range(n_scenes)
            for b in range(a + 1, n_scenes)
        ]
        ratio = min(gaps) / intra_bound if intra_bound > 0 else np.inf
        anchors = cand
        if ratio >= 5.0:
            break
    if n_scenes > 1 and noise_rel > 0 and ratio < 5.0:
        raise StreamFormatError(
            f"could not separate {n_scenes} anchors by 5x the intra-scene "
            f"spread at shape ({grid_side}, {grid_side}, {dim}); "
            "increase dim or lower noise_rel"
        )
    anchors.setflags(write=False)
    return SyntheticStream(
        seed=seed,
        n_frames=n_frames,
        n_scenes=n_scenes,
        grid_side=grid_side,
        dim=dim,
        noise_rel=noise_rel,
        scene_ids=scene_ids,
        anchors=anchors,
        separation_ratio=float(ratio),
    )
