"""Core domain types and file formats for the blended-emotion pipeline.

Everything downstream (soft labels, fusion, thresholding, evaluation) moves
data around as the types defined here: 6-dimensional probability vectors over
the fixed emotion vocabulary, blend annotations with a salience split, and
per-encoder prediction tables keyed by video id.

All types are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence


class ValidationError(ValueError):
    """Raised when input data violates a documented invariant."""


class Emotion(IntEnum):
    """The six basic emotions, in fixed alphabetical order.

    The integer value doubles as the index into every 6-dim probability
    vector, so anger is component 0 and fear is component 2.
    """

    ANGER = 0
    DISGUST = 1
    FEAR = 2
    HAPPINESS = 3
    SADNESS = 4
    SURPRISE = 5

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def from_name(cls, name: str) -> "Emotion":
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise ValidationError(f"unknown emotion name: {name!r}") from None


EMOTIONS: tuple[Emotion, ...] = tuple(Emotion)
N_EMOTIONS = len(EMOTIONS)

# Sum-to-one tolerances: strict for in-memory construction, looser for file
# ingest where formatting may have truncated digits.  Rows off by more than
# the renormalization tolerance are treated as corrupt.
SUM_TOLERANCE = 1e-6
RENORM_TOLERANCE = 1e-3


@dataclass(frozen=True)
class EmotionDistribution:
    """A probability vector over the six emotions.

    Values must be within [0, 1] and sum to 1 within ``SUM_TOLERANCE``.
    """

    values: tuple[float, ...]

    def __post_init__(self) -> None:
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", vals)
        if len(vals) != N_EMOTIONS:
            raise ValidationError(f"expected {N_EMOTIONS} probabilities, got {len(vals)}")
        for v in vals:
            if not math.isfinite(v):
                raise ValidationError(f"non-finite probability: {v!r}")
            if v < 0.0 or v > 1.0:
                raise ValidationError(f"probability out of [0, 1]: {v!r}")
        total = math.fsum(vals)
        if abs(total - 1.0) > SUM_TOLERANCE:
            raise ValidationError(f"probabilities sum to {total!r}, not 1")

    @classmethod
    def from_raw(cls, values: Sequence[float]) -> "EmotionDistribution":
        """Build from parsed file values, renormalizing small formatting drift.

        Rows whose sum is off by at most ``RENORM_TOLERANCE`` are rescaled
        with a warning; anything worse is rejected as corrupt data.
        """
        vals = [float(v) for v in values]
        if len(vals) != N_EMOTIONS:
            raise ValidationError(f"expected {N_EMOTIONS} probabilities, got {len(vals)}")
        for v in vals:
            if not math.isfinite(v):
                raise ValidationError(f"non-finite probability: {v!r}")
            if v < 0.0:
                raise ValidationError(f"negative probability: {v!r}")
        total = math.fsum(vals)
        if abs(total - 1.0) > RENORM_TOLERANCE:
            raise ValidationError(f"probability row sums to {total!r}, beyond repair tolerance")
        if abs(total - 1.0) > SUM_TOLERANCE:
            warnings.warn(
                f"renormalizing probability row with sum {total!r}",
                stacklevel=2,
            )
            vals = [v / total for v in vals]
        return cls(tuple(vals))

    def __getitem__(self, index: int) -> float:
        return self.values[index]

    def as_list(self) -> list[float]:
        return list(self.values)

    def argmax(self) -> Emotion:
        """Index of the largest entry, ties resolved toward the lower index."""
        best = 0
        for i in range(1, N_EMOTIONS):
            if self.values[i] > self.values[best]:
                best = i
        return Emotion(best)


@dataclass(frozen=True)
class BlendAnnotation:
    """A single or blended emotion label in canonical form.

    Canonical means: a lone emotion carries salience 100 and no secondary;
    a 70/30 blend stores the dominant emotion as primary; a 50/50 blend
    stores the lower-index emotion as primary.  Use
    :func:`canonicalize_annotation` to build one from raw annotation fields.
    """

    primary: Emotion
    secondary: Optional[Emotion] = None
    salience_primary: int = 100

    def __post_init__(self) -> None:
        if self.salience_primary not in (100, 70, 50):
            raise ValidationError(
                f"salience must be one of 100/70/50, got {self.salience_primary}"
            )
        if self.secondary is None:
            if self.salience_primary != 100:
                raise ValidationError("missing secondary emotion for a blend salience")
        else:
            if self.salience_primary == 100:
                raise ValidationError("secondary emotion given for salience 100")
            if self.primary == self.secondary:
                raise ValidationError("primary and secondary emotions must differ")
            if self.salience_primary == 50 and self.primary > self.secondary:
                raise ValidationError("50/50 blends must store the lower-index emotion first")

    @property
    def emotion_set(self) -> frozenset[Emotion]:
        if self.secondary is None:
            return frozenset((self.primary,))
        return frozenset((self.primary, self.secondary))

    def is_blend(self) -> bool:
        return self.secondary is not None


# Discrete pipeline outputs have exactly the shape and invariants of a
# canonical annotation, so predictions and ground truth compare directly.
DiscretePrediction = BlendAnnotation


def canonicalize_annotation(
    raw_primary: Emotion,
    raw_secondary: Optional[Emotion],
    raw_salience_primary: int,
) -> BlendAnnotation:
    """Normalize raw annotation fields into the canonical representation.

    Accepts the salience values 100, 70, 50 and 30; a 30/70 annotation is
    flipped so the dominant side is stored as primary, and a 50/50 blend is
    reordered so the lower-index emotion comes first.
    """
    salience = int(raw_salience_primary)
    if salience not in (100, 70, 50, 30):
        raise ValidationError(f"salience must be one of 100/70/50/30, got {salience}")
    if salience == 100:
        if raw_secondary is not None:
            raise ValidationError("salience 100 cannot carry a secondary emotion")
        return BlendAnnotation(raw_primary, None, 100)
    if raw_secondary is None:
        raise ValidationError(f"salience {salience} requires a secondary emotion")
    if raw_primary == raw_secondary:
        raise ValidationError("primary and secondary emotions must differ")
    if salience == 30:
        return BlendAnnotation(raw_secondary, raw_primary, 70)
    if salience == 50 and raw_primary > raw_secondary:
        return BlendAnnotation(raw_secondary, raw_primary, 50)
    return BlendAnnotation(raw_primary, raw_secondary, salience)


@dataclass(frozen=True)
class SampleRecord:
    """One clip in a dataset manifest, optionally with its ground truth."""

    video_id: str
    actor_id: str
    annotation: Optional[BlendAnnotation] = None


@dataclass(frozen=True)
class EncoderPredictionSet:
    """Per-encoder table of probability rows keyed by video id.

    ``rows`` maps each video to one or more per-clip distributions (several
    rows mean multi-clip outputs that get averaged at fusion time), and
    ``actors`` records the actor each video belongs to.  Treat both mappings
    as read-only after construction.
    """

    encoder_name: str
    rows: Mapping[str, tuple[EmotionDistribution, ...]]
    actors: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for video_id, clips in self.rows.items():
            if not clips:
                raise ValidationError(f"video {video_id!r} has no prediction rows")

    def video_ids(self) -> list[str]:
        return list(self.rows.keys())

    def distribution_for(self, video_id: str) -> EmotionDistribution:
        """Clip-averaged distribution for one video."""
        clips = self.rows.get(video_id)
        if clips is None:
            raise ValidationError(
                f"encoder {self.encoder_name!r} has no prediction for video {video_id!r}"
            )
        return average_clips(clips)


def average_clips(rows: Sequence[EmotionDistribution]) -> EmotionDistribution:
    """Elementwise mean of per-clip probability rows."""
    if not rows:
        raise ValidationError("cannot average an empty list of distributions")
    n = len(rows)
    summed = [0.0] * N_EMOTIONS
    for row in rows:
        for i, v in enumerate(row.values):
            summed[i] += v
    return EmotionDistribution(tuple(s / n for s in summed))


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

PREDICTIONS_HEADER = [
    "video_id",
    "actor_id",
    "p_anger",
    "p_disgust",
    "p_fear",
    "p_happiness",
    "p_sadness",
    "p_surprise",
]

LABELS_HEADER = ["video_id", "actor_id", "emotion_a", "emotion_b", "salience_a"]


def _format_float(x: float) -> str:
    # repr round-trips float64 exactly, which the serialization round-trip
    # guarantees depend on.
    return repr(float(x))


def _read_rows(path: Path, expected_header: list[str]) -> list[list[str]]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        if header != expected_header:
            raise ValidationError(
                f"{path}: bad header {header!r}, expected {expected_header!r}"
            )
        return [row for row in reader if row]


def load_predictions(path: str | Path, encoder_name: Optional[str] = None) -> EncoderPredictionSet:
    """Read one encoder's predictions file.

    Repeated video ids are collected as multi-clip rows in file order.
    """
    path = Path(path)
    name = encoder_name if encoder_name is not None else path.stem
    rows: dict[str, list[EmotionDistribution]] = {}
    actors: dict[str, str] = {}
    for lineno, row in enumerate(_read_rows(path, PREDICTIONS_HEADER), start=2):
        if len(row) != len(PREDICTIONS_HEADER):
            raise ValidationError(f"{path}:{lineno}: expected {len(PREDICTIONS_HEADER)} fields")
        video_id, actor_id = row[0], row[1]
        try:
            dist = EmotionDistribution.from_raw([float(v) for v in row[2:]])
        except ValueError as exc:
            raise ValidationError(f"{path}:{lineno}: {exc}") from None
        if video_id in actors and actors[video_id] != actor_id:
            raise ValidationError(
                f"{path}:{lineno}: video {video_id!r} listed under two actors"
            )
        actors[video_id] = actor_id
        rows.setdefault(video_id, []).append(dist)
    return EncoderPredictionSet(
        encoder_name=name,
        rows={vid: tuple(clips) for vid, clips in rows.items()},
        actors=actors,
    )


def save_predictions(preds: EncoderPredictionSet, path: str | Path) -> None:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PREDICTIONS_HEADER)
        for video_id, clips in preds.rows.items():
            actor_id = preds.actors.get(video_id, "")
            for clip in clips:
                writer.writerow(
                    [video_id, actor_id] + [_format_float(v) for v in clip.values]
                )


def load_labels(path: str | Path) -> list[SampleRecord]:
    """Read a ground-truth labels file into canonical annotated records."""
    path = Path(path)
    records: list[SampleRecord] = []
    seen: set[str] = set()
    for lineno, row in enumerate(_read_rows(path, LABELS_HEADER), start=2):
        if len(row) != len(LABELS_HEADER):
            raise ValidationError(f"{path}:{lineno}: expected {len(LABELS_HEADER)} fields")
        video_id, actor_id, emo_a, emo_b, salience = row
        if video_id in seen:
            raise ValidationError(f"{path}:{lineno}: duplicate video id {video_id!r}")
        seen.add(video_id)
        try:
            primary = Emotion.from_name(emo_a)
            secondary = Emotion.from_name(emo_b) if emo_b.strip() else None
            annotation = canonicalize_annotation(primary, secondary, int(salience))
        except (ValidationError, ValueError) as exc:
            raise ValidationError(f"{path}:{lineno}: {exc}") from None
        records.append(SampleRecord(video_id, actor_id, annotation))
    return records


def save_labels(records: Sequence[SampleRecord], path: str | Path) -> None:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LABELS_HEADER)
        for rec in records:
            ann = rec.annotation
            if ann is None:
                raise ValidationError(f"record {rec.video_id!r} has no annotation to save")
            writer.writerow(
                [
                    rec.video_id,
                    rec.actor_id,
                    ann.primary.label,
                    ann.secondary.label if ann.secondary is not None else "",
                    str(ann.salience_primary),
                ]
            )


def annotations_by_video(records: Iterable[SampleRecord]) -> dict[str, BlendAnnotation]:
    out: dict[str, BlendAnnotation] = {}
    for rec in records:
        if rec.annotation is None:
            raise ValidationError(f"record {rec.video_id!r} is unlabeled")
        out[rec.video_id] = rec.annotation
    return out


def actors_by_video(records: Iterable[SampleRecord]) -> dict[str, str]:
    return {rec.video_id: rec.actor_id for rec in records}
