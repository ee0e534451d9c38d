"""Layer-selective averaging and segment statistics over frame features.

Turns an externally extracted L x T x D hidden-state tensor into one fixed
length vector per video: average a contiguous layer range, split the frames
into a few contiguous segments, and concatenate per-segment and global
statistics.  The default configuration (3 segments, mean + std per segment,
one global mean) maps D=1024 inputs to 7 * 1024 = 7168 dimensions.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import ValidationError

SEGMENT_STATS = ("segment_mean", "segment_std")
GLOBAL_STATS = ("global_mean", "global_median")
KNOWN_STATS = SEGMENT_STATS + GLOBAL_STATS

DEFAULT_STATS = ("segment_mean", "segment_std", "global_mean")


@dataclass(frozen=True)
class FrameFeatureSequence:
    """Per-frame hidden states for one video, shaped layers x frames x dims."""

    video_id: str
    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3:
            raise ValidationError(f"feature tensor must be 3-d, got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise ValidationError(f"degenerate feature tensor shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError(f"non-finite values in features for {self.video_id!r}")
        object.__setattr__(self, "data", arr)

    @property
    def layers(self) -> int:
        return self.data.shape[0]

    @property
    def frames(self) -> int:
        return self.data.shape[1]

    @property
    def dims(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class AggregationConfig:
    """How to pool a frame-feature sequence into one vector.

    ``stats`` is an ordered list drawn from segment_mean, segment_std,
    global_mean and global_median; per-segment statistics are laid out
    segment-major, followed by the global blocks.
    """

    layer_lo: int = 6
    layer_hi: int = 12
    segments: int = 3
    stats: tuple[str, ...] = field(default=DEFAULT_STATS)

    def __post_init__(self) -> None:
        object.__setattr__(self, "stats", tuple(self.stats))
        if self.layer_lo < 0 or self.layer_hi < self.layer_lo:
            raise ValidationError(
                f"bad layer range [{self.layer_lo}, {self.layer_hi}]"
            )
        if self.segments < 1:
            raise ValidationError(f"segments must be >= 1, got {self.segments}")
        if not self.stats:
            raise ValidationError("stats list must not be empty")
        for stat in self.stats:
            if stat not in KNOWN_STATS:
                raise ValidationError(f"unknown statistic {stat!r}")

    @property
    def segment_stats(self) -> tuple[str, ...]:
        return tuple(s for s in self.stats if s in SEGMENT_STATS)

    @property
    def global_stats(self) -> tuple[str, ...]:
        return tuple(s for s in self.stats if s in GLOBAL_STATS)

    def output_dim(self, dims: int) -> int:
        return (self.segments * len(self.segment_stats) + len(self.global_stats)) * dims


def average_layers(seq: FrameFeatureSequence, lo: int, hi: int) -> np.ndarray:
    """Elementwise mean over the inclusive layer range, giving a T x D matrix."""
    if lo < 0 or hi < lo or hi >= seq.layers:
        raise ValidationError(
            f"layer range [{lo}, {hi}] out of bounds for {seq.layers} layers"
        )
    return seq.data[lo : hi + 1].mean(axis=0)


def _segment_bounds(n_frames: int, segments: int) -> list[tuple[int, int]]:
    # Even split; earlier segments absorb the remainder frames.
    base, rem = divmod(n_frames, segments)
    bounds = []
    start = 0
    for s in range(segments):
        size = base + (1 if s < rem else 0)
        bounds.append((start, start + size))
        start += size
    return bounds


def _stat_block(frames: np.ndarray, stat: str) -> np.ndarray:
    if stat in ("segment_mean", "global_mean"):
        return frames.mean(axis=0)
    if stat == "segment_std":
        # Population std; a length-1 segment has std 0 by definition.
        return frames.std(axis=0)
    if stat == "global_median":
        return np.median(frames, axis=0)
    raise ValidationError(f"unknown statistic {stat!r}")


def aggregate_temporal(frames: np.ndarray, cfg: AggregationConfig) -> np.ndarray:
    """Pool a T x D frame matrix into the configured fixed-length vector."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2:
        raise ValidationError(f"frame matrix must be 2-d, got shape {frames.shape}")
    n_frames = frames.shape[0]
    if n_frames < cfg.segments:
        raise ValidationError(
            f"need at least {cfg.segments} frames for {cfg.segments} segments, got {n_frames}"
        )
    blocks: list[np.ndarray] = []
    for start, stop in _segment_bounds(n_frames, cfg.segments):
        segment = frames[start:stop]
        for stat in cfg.stats:
            if stat in SEGMENT_STATS:
                blocks.append(_stat_block(segment, stat))
    for stat in cfg.stats:
        if stat in GLOBAL_STATS:
            blocks.append(_stat_block(frames, stat))
    return np.concatenate(blocks)


def aggregate_sequence(seq: FrameFeatureSequence, cfg: AggregationConfig) -> np.ndarray:
    """Layer-average then temporally pool one video's feature sequence."""
    return aggregate_temporal(average_layers(seq, cfg.layer_lo, cfg.layer_hi), cfg)


# ---------------------------------------------------------------------------
# Feature directory format
# ---------------------------------------------------------------------------

MANIFEST_HEADER = ["video_id", "actor_id", "path"]


def save_feature_file(seq: FrameFeatureSequence, directory: str | Path) -> Path:
    """Write one video's features as ``<video_id>.feat`` under a directory."""
    directory = Path(directory)
    path = directory / f"{seq.video_id}.feat"
    lines = [f"layers={seq.layers} frames={seq.frames} dims={seq.dims}"]
    flat = seq.data.reshape(seq.layers * seq.frames, seq.dims)
    for row in flat:
        lines.append(" ".join(repr(float(v)) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def load_feature_file(path: str | Path, video_id: str | None = None) -> FrameFeatureSequence:
    path = Path(path)
    vid = video_id if video_id is not None else path.stem
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        try:
            fields = dict(part.split("=", 1) for part in header.split())
            layers, frames, dims = (int(fields[k]) for k in ("layers", "frames", "dims"))
        except (KeyError, ValueError):
            raise ValidationError(f"{path}: bad feature header {header!r}") from None
        values = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            row = [float(v) for v in line.split()]
            if len(row) != dims:
                raise ValidationError(f"{path}:{lineno}: expected {dims} values")
            values.append(row)
    if len(values) != layers * frames:
        raise ValidationError(
            f"{path}: expected {layers * frames} rows, found {len(values)}"
        )
    data = np.array(values, dtype=np.float64).reshape(layers, frames, dims)
    return FrameFeatureSequence(vid, data)


def save_feature_manifest(
    entries: Sequence[tuple[str, str, str]], path: str | Path
) -> None:
    """Write the (video_id, actor_id, path) index of a feature directory."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        for video_id, actor_id, feat_path in entries:
            writer.writerow([video_id, actor_id, feat_path])


def load_feature_manifest(path: str | Path) -> list[tuple[str, str, str]]:
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != MANIFEST_HEADER:
            raise ValidationError(f"{path}: bad manifest header {header!r}")
        entries = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ValidationError(f"{path}:{lineno}: expected 3 fields")
            entries.append((row[0], row[1], row[2]))
        return entries
