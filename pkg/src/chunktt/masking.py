"""Chunked streaming attention masks.

Frames are split into consecutive chunks of ``chunk_size`` frames.  A query
frame sees every frame of its own chunk plus ``left_chunks`` earlier chunks,
and nothing from later chunks.  Stacking layers widens the left context by
``left_chunks`` chunks per layer while the right edge stays at the end of the
query's chunk, so the lookahead (algorithmic latency) is one chunk.

Public functions use 1-based frame numbers (f1 ... fT); arrays are 0-based.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FRAME_MS = 40.0  # nominal frame shift used to quote latencies in milliseconds


@dataclass(frozen=True)
class ChunkMaskSpec:
    chunk_size: int
    left_chunks: int = 1
    num_layers: int = 1

    def __post_init__(self):
        if self.chunk_size < 1:
            raise ValueError(f"chunk_size must be >= 1, got {self.chunk_size}")
        if self.left_chunks < 0:
            raise ValueError(f"left_chunks must be >= 0, got {self.left_chunks}")
        if self.num_layers < 1:
            raise ValueError(f"num_layers must be >= 1, got {self.num_layers}")

    @property
    def latency_frames(self) -> int:
        return self.chunk_size

    def latency_ms(self, frame_ms: float = FRAME_MS) -> float:
        return self.chunk_size * frame_ms

    def is_offline_for(self, num_frames: int) -> bool:
        return self.chunk_size >= num_frames


def chunk_index(frame: int, chunk_size: int) -> int:
    """Chunk of a 1-based frame number (0-based chunk index)."""
    return (frame - 1) // chunk_size


def chunk_end(frame: int, chunk_size: int, num_frames: int | None = None) -> int:
    """Last 1-based frame of the chunk holding ``frame``, clamped to ``num_frames``."""
    end = (chunk_index(frame, chunk_size) + 1) * chunk_size
    return end if num_frames is None else min(end, num_frames)


def build_chunk_mask(num_frames: int, spec: ChunkMaskSpec) -> np.ndarray:
    """Boolean (T, T) mask; ``mask[q, k]`` is True iff query q may attend key k."""
    if num_frames < 1:
        raise ValueError("num_frames must be >= 1")
    c = np.arange(num_frames) // spec.chunk_size
    diff = c[:, None] - c[None, :]
    return (diff >= 0) & (diff <= spec.left_chunks)


def receptive_field(frame: int, layer: int, spec: ChunkMaskSpec, num_frames: int | None = None) -> tuple[int, int]:
    """Inclusive 1-based frame range that output ``frame`` of ``layer`` depends on."""
    if not 1 <= layer <= spec.num_layers:
        raise ValueError(f"layer must be in [1, {spec.num_layers}], got {layer}")
    c = chunk_index(frame, spec.chunk_size)
    first = max(0, c - layer * spec.left_chunks) * spec.chunk_size + 1
    last = chunk_end(frame, spec.chunk_size, num_frames)
    return first, last


def reachable_keys(num_frames: int, layer: int, spec: ChunkMaskSpec) -> np.ndarray:
    """Brute-force receptive fields: ``layer``-fold boolean composition of the mask.

    Row q of the result marks the input frames reachable from output frame q.
    """
    m = build_chunk_mask(num_frames, spec).astype(np.int64)
    reach = np.eye(num_frames, dtype=np.int64)
    for _ in range(layer):
        reach = (reach @ m > 0).astype(np.int64)
    return reach.astype(bool)


def packed_chunk_mask(lengths, spec: ChunkMaskSpec) -> np.ndarray:
    """Chunk mask for utterances packed end to end; no attention across utterances."""
    total = int(np.sum(lengths))
    out = np.zeros((total, total), dtype=bool)
    start = 0
    for n in lengths:
        out[start:start + n, start:start + n] = build_chunk_mask(n, spec)
        start += n
    return out
