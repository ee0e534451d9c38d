"""Presence/salience metrics, actor-disjoint folds, and cross-validation.

The challenge metric is Score = 0.5 * ACC_P + 0.5 * ACC_S, where ACC_P is
the fraction of clips whose predicted emotion set matches the ground-truth
set and ACC_S the fraction that also matches the salience split exactly
(including the 70/30 direction).  Folds are built per actor so that no
actor appears in both a training and a validation fold.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

from .core import (
    BlendAnnotation,
    DiscretePrediction,
    EncoderPredictionSet,
    SampleRecord,
    ValidationError,
    annotations_by_video,
)
from .postprocess import (
    PostprocessConfig,
    ThresholdPair,
    ThresholdSurface,
    search_thresholds,
    select_thresholds,
)


@dataclass(frozen=True)
class EvalResult:
    """Presence accuracy, salience accuracy and their combined score."""

    acc_p: float
    acc_s: float
    score: float
    n: int

    def __post_init__(self) -> None:
        if not 0.0 <= self.acc_s <= self.acc_p <= 1.0:
            raise ValidationError(
                f"accuracies out of order: acc_s={self.acc_s!r}, acc_p={self.acc_p!r}"
            )
        if self.score != 0.5 * (self.acc_p + self.acc_s):
            raise ValidationError(f"score {self.score!r} violates the combination formula")

    @classmethod
    def from_accuracies(cls, acc_p: float, acc_s: float, n: int) -> "EvalResult":
        return cls(acc_p, acc_s, 0.5 * (acc_p + acc_s), n)


def evaluate(
    preds: Mapping[str, DiscretePrediction],
    labels: Mapping[str, BlendAnnotation],
) -> EvalResult:
    """Score a set of discrete predictions against ground truth.

    Every labeled video must have a prediction; extra predictions are
    ignored.
    """
    if not labels:
        raise ValidationError("cannot evaluate against an empty label set")
    count_p = 0
    count_s = 0
    for video_id, truth in labels.items():
        pred = preds.get(video_id)
        if pred is None:
            raise ValidationError(f"missing prediction for labeled video {video_id!r}")
        if pred.emotion_set == truth.emotion_set:
            count_p += 1
            if (
                pred.primary == truth.primary
                and pred.secondary == truth.secondary
                and pred.salience_primary == truth.salience_primary
            ):
                count_s += 1
    n = len(labels)
    return EvalResult.from_accuracies(count_p / n, count_s / n, n)


@dataclass(frozen=True)
class FoldAssignment:
    """Actor-to-fold mapping; actor disjointness is structural."""

    folds: Mapping[str, int]
    k: int

    def __post_init__(self) -> None:
        if self.k < 2:
            raise ValidationError(f"need at least 2 folds, got {self.k}")
        bad = {a: f for a, f in self.folds.items() if not 0 <= f < self.k}
        if bad:
            raise ValidationError(f"fold indices out of range: {bad!r}")

    def fold_of(self, actor_id: str) -> int:
        try:
            return self.folds[actor_id]
        except KeyError:
            raise ValidationError(f"actor {actor_id!r} has no fold assignment") from None

    def fold_indices(self) -> list[int]:
        return sorted(set(self.folds.values()))

    def videos_by_fold(self, records: Sequence[SampleRecord]) -> dict[int, list[str]]:
        out: dict[int, list[str]] = {f: [] for f in self.fold_indices()}
        for rec in records:
            out[self.fold_of(rec.actor_id)].append(rec.video_id)
        return out

    def restrict(self, exclude_fold: int) -> "FoldAssignment":
        """Assignment covering only the actors outside one fold."""
        kept = {a: f for a, f in self.folds.items() if f != exclude_fold}
        if not kept:
            raise ValidationError("restriction would remove every actor")
        return FoldAssignment(kept, self.k)


def split_actors(records: Sequence[SampleRecord], k: int, seed: int = 0) -> FoldAssignment:
    """Greedy balanced actor-disjoint split.

    Actors are sorted by descending clip count (ties by actor id) and each
    is assigned to the currently lightest fold (ties by fold index).  The
    procedure is fully deterministic; the seed is accepted for interface
    stability but unused by this strategy.
    """
    del seed
    counts: dict[str, int] = {}
    for rec in records:
        counts[rec.actor_id] = counts.get(rec.actor_id, 0) + 1
    if k < 2:
        raise ValidationError(f"need at least 2 folds, got {k}")
    if k > len(counts):
        raise ValidationError(f"cannot make {k} folds from {len(counts)} actors")
    ordered = sorted(counts, key=lambda a: (-counts[a], a))
    loads = [0] * k
    assignment: dict[str, int] = {}
    for actor in ordered:
        fold = min(range(k), key=lambda f: (loads[f], f))
        assignment[actor] = fold
        loads[fold] += counts[actor]
    return FoldAssignment(assignment, k)


# ---------------------------------------------------------------------------
# Cross-validation driver
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CrossValConfig:
    """Pipeline settings for one cross-validation run."""

    weight_strategy: str = "coordinate_ascent"
    threshold_strategy: str = "per_fold_average"
    initial_thresholds: ThresholdPair = field(default_factory=lambda: ThresholdPair(0.1, 0.1))
    alpha_grid: tuple[float, ...] = ()
    beta_grid: tuple[float, ...] = ()
    neutral_index: Optional[int] = None
    renormalize_before_beta: bool = False
    exhaustive_step: float = 0.05
    joint_threshold_search: bool = False
    seed: int = 0
    threads: int = 1

    def postprocess_config(self, thresholds: ThresholdPair) -> PostprocessConfig:
        return PostprocessConfig(
            thresholds=thresholds,
            neutral_index=self.neutral_index,
            renormalize_before_beta=self.renormalize_before_beta,
        )

    def grids(self) -> tuple[tuple[float, ...], tuple[float, ...]]:
        from .postprocess import DEFAULT_GRID

        a = self.alpha_grid if self.alpha_grid else DEFAULT_GRID
        b = self.beta_grid if self.beta_grid else DEFAULT_GRID
        return a, b


@dataclass(frozen=True)
class FoldOutcome:
    fold: int
    result: EvalResult
    weights: Mapping[str, float]
    thresholds: ThresholdPair


@dataclass(frozen=True)
class CrossValReport:
    folds: tuple[FoldOutcome, ...]
    mean: EvalResult
    std: tuple[float, float, float]  # population std of (acc_p, acc_s, score)
    pooled: EvalResult


def _population_std(values: Sequence[float]) -> float:
    m = sum(values) / len(values)
    return math.sqrt(sum((v - m) ** 2 for v in values) / len(values))


def _evaluate_fold(
    preds: Sequence[EncoderPredictionSet],
    records: Sequence[SampleRecord],
    folds: FoldAssignment,
    fold: int,
    cfg: CrossValConfig,
) -> FoldOutcome:
    from .fusion import fuse, optimize_weights

    train_records = [r for r in records if folds.fold_of(r.actor_id) != fold]
    test_records = [r for r in records if folds.fold_of(r.actor_id) == fold]
    if not test_records:
        raise ValidationError(f"fold {fold} holds no labeled videos")
    if not train_records:
        raise ValidationError(f"fold {fold} would leave no training data")
    train_folds = folds.restrict(fold)

    weights, _ = optimize_weights(
        preds,
        train_records,
        train_folds,
        cfg.initial_thresholds,
        strategy=cfg.weight_strategy,
        seed=cfg.seed,
        neutral_index=cfg.neutral_index,
        renormalize_before_beta=cfg.renormalize_before_beta,
        exhaustive_step=cfg.exhaustive_step,
        joint_threshold_search=cfg.joint_threshold_search,
        alpha_grid=cfg.alpha_grid or None,
        beta_grid=cfg.beta_grid or None,
    )

    alpha_grid, beta_grid = cfg.grids()
    base_cfg = cfg.postprocess_config(cfg.initial_thresholds)
    surfaces: list[ThresholdSurface] = []
    by_fold = train_folds.videos_by_fold(train_records)
    truth = annotations_by_video(train_records)
    for g in sorted(f for f, vids in by_fold.items() if vids):
        fold_videos = by_fold[g]
        fused = {vid: fuse(preds, weights, vid) for vid in fold_videos}
        fold_truth = {vid: truth[vid] for vid in fold_videos}
        surfaces.append(
            search_thresholds(fused, fold_truth, alpha_grid, beta_grid, base_cfg)
        )
    thresholds = select_thresholds(surfaces, cfg.threshold_strategy)

    final_cfg = cfg.postprocess_config(thresholds)
    from .postprocess import discretize

    test_truth = annotations_by_video(test_records)
    test_preds = {
        vid: discretize(fuse(preds, weights, vid), final_cfg) for vid in test_truth
    }
    result = evaluate(test_preds, test_truth)
    return FoldOutcome(fold, result, dict(weights.weights), thresholds)


def cross_validate(
    preds: Sequence[EncoderPredictionSet],
    records: Sequence[SampleRecord],
    folds: FoldAssignment,
    cfg: CrossValConfig,
) -> CrossValReport:
    """Fit weights and thresholds on k-1 folds, evaluate on the held-out fold.

    Returns per-fold results, their mean and population std, and the pooled
    result over all held-out clips (a clip-weighted average of the folds).
    """
    fold_ids = folds.fold_indices()
    by_fold = folds.videos_by_fold(records)
    for f in fold_ids:
        if not by_fold.get(f):
            raise ValidationError(f"fold {f} holds no labeled videos")

    if cfg.threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            outcomes = list(
                pool.map(
                    lambda f: _evaluate_fold(preds, records, folds, f, cfg), fold_ids
                )
            )
    else:
        outcomes = [_evaluate_fold(preds, records, folds, f, cfg) for f in fold_ids]

    accs_p = [o.result.acc_p for o in outcomes]
    accs_s = [o.result.acc_s for o in outcomes]
    scores = [o.result.score for o in outcomes]
    total_n = sum(o.result.n for o in outcomes)
    mean = EvalResult.from_accuracies(
        sum(accs_p) / len(accs_p), sum(accs_s) / len(accs_s), total_n
    )
    std = (_population_std(accs_p), _population_std(accs_s), _population_std(scores))
    pooled_p = sum(o.result.acc_p * o.result.n for o in outcomes) / total_n
    pooled_s = sum(o.result.acc_s * o.result.n for o in outcomes) / total_n
    pooled = EvalResult.from_accuracies(pooled_p, pooled_s, total_n)
    return CrossValReport(tuple(outcomes), mean, std, pooled)


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

FOLDS_HEADER = ["actor_id", "fold"]
RESULTS_HEADER = ["fold", "acc_p", "acc_s", "score", "n"]


def save_folds(assignment: FoldAssignment, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(FOLDS_HEADER)
        for actor in sorted(assignment.folds):
            writer.writerow([actor, str(assignment.folds[actor])])


def load_folds(path: str | Path) -> FoldAssignment:
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != FOLDS_HEADER:
            raise ValidationError(f"{path}: bad folds header {header!r}")
        folds = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                folds[row[0]] = int(row[1])
            except (IndexError, ValueError):
                raise ValidationError(f"{path}:{lineno}: bad fold row {row!r}") from None
    if not folds:
        raise ValidationError(f"{path}: no fold assignments")
    return FoldAssignment(folds, max(folds.values()) + 1)


def save_results(report: CrossValReport, path: str | Path) -> None:
    """Write the per-fold results table with a trailing mean +/- std summary row."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULTS_HEADER)
        for o in report.folds:
            writer.writerow(
                [
                    str(o.fold),
                    repr(o.result.acc_p),
                    repr(o.result.acc_s),
                    repr(o.result.score),
                    str(o.result.n),
                ]
            )
        writer.writerow(
            [
                "summary",
                f"{report.mean.acc_p!r}±{report.std[0]!r}",
                f"{report.mean.acc_s!r}±{report.std[1]!r}",
                f"{report.mean.score!r}±{report.std[2]!r}",
                str(report.mean.n),
            ]
        )
