"""Weighted late fusion of encoder probabilities and weight optimization.

Fused output is the convex combination p_fused = sum_m w_m * p_m over the
encoders' clip-averaged probability vectors, with the weights constrained
to the probability simplex.  Weights are searched to maximize the mean
validation-fold score after full post-processing: a deterministic
coordinate-ascent move schedule by default, or a true exhaustive simplex
grid for up to three encoders.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .core import (
    EmotionDistribution,
    EncoderPredictionSet,
    SampleRecord,
    ValidationError,
    annotations_by_video,
)
from .evaluation import FoldAssignment
from .postprocess import (
    DEFAULT_GRID,
    PostprocessConfig,
    ThresholdPair,
    point_counts,
    search_thresholds,
)

WEIGHT_STRATEGIES = ("coordinate_ascent", "exhaustive")

SIMPLEX_TOLERANCE = 1e-9
# Published weight tables are rounded to 3 decimals; the loader accepts
# sums off by up to this much and renormalizes.
ROUNDING_TOLERANCE = 5e-3

COORDINATE_DELTAS = (0.10, 0.05, 0.02, 0.01)


def validate_simplex(weights: Mapping[str, float], tol: float) -> None:
    """Check non-negativity and sum-to-one within ``tol``."""
    if not weights:
        raise ValidationError("empty weight vector")
    for name, w in weights.items():
        if not math.isfinite(w) or w < 0.0:
            raise ValidationError(f"weight for {name!r} must be finite and >= 0, got {w!r}")
    total = math.fsum(weights.values())
    if abs(total - 1.0) > tol:
        raise ValidationError(f"weights sum to {total!r}, outside tolerance {tol}")


@dataclass(frozen=True)
class WeightVector:
    """Simplex-constrained encoder weights."""

    weights: Mapping[str, float]

    def __post_init__(self) -> None:
        validate_simplex(self.weights, SIMPLEX_TOLERANCE)
        object.__setattr__(self, "weights", dict(self.weights))

    @classmethod
    def uniform(cls, names: Sequence[str]) -> "WeightVector":
        if not names:
            raise ValidationError("need at least one encoder")
        w = 1.0 / len(names)
        vec = {name: w for name in names}
        # Absorb float residue into the first entry so the sum is exact.
        first = next(iter(sorted(vec)))
        vec[first] += 1.0 - math.fsum(vec.values())
        return cls(vec)

    def __getitem__(self, name: str) -> float:
        return self.weights[name]


def fuse(
    preds: Sequence[EncoderPredictionSet],
    w: WeightVector,
    video_id: str,
) -> EmotionDistribution:
    """Convex combination of the encoders' clip-averaged rows for one video."""
    by_name = {p.encoder_name: p for p in preds}
    acc = [0.0] * 6
    for name, weight in w.weights.items():
        if name not in by_name:
            raise ValidationError(f"no prediction set for encoder {name!r}")
        dist = by_name[name].distribution_for(video_id)
        for i, v in enumerate(dist.values):
            acc[i] += weight * v
    return EmotionDistribution(tuple(acc))


@dataclass(frozen=True)
class SearchLogEntry:
    step: int
    candidate_id: str
    objective: float
    weights: Mapping[str, float]


@dataclass(frozen=True)
class _ObjectiveContext:
    """Pre-stacked matrices and truth arrays for fast candidate evaluation."""

    names: tuple[str, ...]
    matrices: np.ndarray  # (encoders, videos, 6)
    fold_slices: tuple[tuple[int, ...], ...]
    fold_truths: tuple[tuple, ...]
    cfg: PostprocessConfig
    alpha_grid: tuple[float, ...]
    beta_grid: tuple[float, ...]
    joint: bool

    def evaluate(self, weights: np.ndarray) -> float:
        fused = np.tensordot(weights, self.matrices, axes=(0, 0))
        scores = []
        for idx, truths in zip(self.fold_slices, self.fold_truths):
            sub = fused[list(idx)]
            if self.joint:
                fused_map = {str(i): EmotionDistribution(tuple(row)) for i, row in zip(idx, sub)}
                truth_map = {str(i): t for i, t in zip(idx, truths)}
                surface = search_thresholds(
                    fused_map, truth_map, self.alpha_grid, self.beta_grid, self.cfg
                )
                scores.append(surface.best_score())
            else:
                cp, cs = point_counts(sub, truths, self.cfg)
                n = len(idx)
                scores.append(0.5 * (cp / n + cs / n))
        objective = sum(scores) / len(scores)
        if not math.isfinite(objective):
            raise ValidationError(f"objective is not finite: {objective!r}")
        return objective


def _build_context(
    preds: Sequence[EncoderPredictionSet],
    records: Sequence[SampleRecord],
    folds: FoldAssignment,
    thresholds: ThresholdPair,
    neutral_index: Optional[int],
    renormalize_before_beta: bool,
    alpha_grid: Optional[Sequence[float]],
    beta_grid: Optional[Sequence[float]],
    joint: bool,
) -> _ObjectiveContext:
    if not preds:
        raise ValidationError("need at least one encoder prediction set")
    names = tuple(sorted(p.encoder_name for p in preds))
    if len(set(names)) != len(names):
        raise ValidationError("duplicate encoder names in prediction sets")
    by_name = {p.encoder_name: p for p in preds}
    truth = annotations_by_video(records)
    video_ids = sorted(truth)
    matrices = np.empty((len(names), len(video_ids), 6), dtype=np.float64)
    for e, name in enumerate(names):
        pset = by_name[name]
        for v, vid in enumerate(video_ids):
            matrices[e, v] = pset.distribution_for(vid).values

    index_of = {vid: i for i, vid in enumerate(video_ids)}
    by_fold = folds.videos_by_fold(records)
    fold_slices = []
    fold_truths = []
    for f in sorted(by_fold):
        vids = by_fold[f]
        if not vids:
            raise ValidationError(f"fold {f} holds no labeled videos")
        fold_slices.append(tuple(index_of[v] for v in vids))
        fold_truths.append(tuple(truth[v] for v in vids))
    cfg = PostprocessConfig(
        thresholds=thresholds,
        neutral_index=neutral_index,
        renormalize_before_beta=renormalize_before_beta,
    )
    return _ObjectiveContext(
        names,
        matrices,
        tuple(fold_slices),
        tuple(fold_truths),
        cfg,
        tuple(alpha_grid) if alpha_grid else DEFAULT_GRID,
        tuple(beta_grid) if beta_grid else DEFAULT_GRID,
        joint,
    )


def _l1_to_uniform(weights: np.ndarray) -> float:
    return float(np.abs(weights - 1.0 / weights.size).sum())


def _simplex_grid(m: int, step: float) -> list[tuple[float, ...]]:
    """All weight vectors with coordinates that are multiples of ``step``."""
    units = round(1.0 / step)
    if abs(units * step - 1.0) > 1e-9:
        raise ValidationError(f"grid step {step!r} must divide 1 evenly")
    points: list[tuple[float, ...]] = []

    def rec(prefix: list[int], remaining: int, slots: int) -> None:
        if slots == 1:
            points.append(tuple((*prefix, remaining)))
            return
        for u in range(remaining + 1):
            rec([*prefix, u], remaining - u, slots - 1)

    rec([], units, m)
    return [tuple(u * step for u in pt) for pt in points]


def optimize_weights(
    preds: Sequence[EncoderPredictionSet],
    records: Sequence[SampleRecord],
    folds: FoldAssignment,
    thresholds: ThresholdPair,
    strategy: str = "coordinate_ascent",
    seed: int = 0,
    neutral_index: Optional[int] = None,
    renormalize_before_beta: bool = False,
    exhaustive_step: float = 0.05,
    joint_threshold_search: bool = False,
    alpha_grid: Optional[Sequence[float]] = None,
    beta_grid: Optional[Sequence[float]] = None,
) -> tuple[WeightVector, list[SearchLogEntry]]:
    """Search the weight simplex for the best mean validation-fold score.

    The objective fuses every labeled video, applies the full
    discretization at the given thresholds, and averages the fold scores.
    With ``joint_threshold_search`` the thresholds are instead re-optimized
    per fold for every candidate.  ``coordinate_ascent`` starts from
    uniform weights and repeatedly applies the best strictly improving
    mass move between two encoders, annealing the move size; ``exhaustive``
    scans a full simplex grid (at most three encoders).  Ties prefer the
    candidate closest (L1) to uniform.  Both strategies are deterministic;
    the seed is reserved for future randomized strategies.
    """
    del seed
    if strategy not in WEIGHT_STRATEGIES:
        raise ValidationError(f"unknown weight strategy {strategy!r}")
    ctx = _build_context(
        preds,
        records,
        folds,
        thresholds,
        neutral_index,
        renormalize_before_beta,
        alpha_grid,
        beta_grid,
        joint_threshold_search,
    )
    names = ctx.names
    m = len(names)
    log: list[SearchLogEntry] = []

    def log_candidate(step: int, cid: str, weights: np.ndarray, obj: float) -> None:
        log.append(SearchLogEntry(step, cid, obj, dict(zip(names, weights.tolist()))))

    if m == 1:
        only = np.array([1.0])
        obj = ctx.evaluate(only)
        log_candidate(0, "single", only, obj)
        return WeightVector({names[0]: 1.0}), log

    if strategy == "exhaustive":
        if m > 3:
            raise ValidationError("exhaustive strategy supports at most 3 encoders")
        candidates = [("uniform", np.full(m, 1.0 / m))]
        for i, pt in enumerate(_simplex_grid(m, exhaustive_step)):
            candidates.append((f"grid:{i}", np.asarray(pt)))
        best_w: Optional[np.ndarray] = None
        best_obj = -math.inf
        best_l1 = math.inf
        for step, (cid, w) in enumerate(candidates):
            obj = ctx.evaluate(w)
            log_candidate(step, cid, w, obj)
            l1 = _l1_to_uniform(w)
            if obj > best_obj or (obj == best_obj and l1 < best_l1):
                best_w, best_obj, best_l1 = w, obj, l1
        assert best_w is not None
        return WeightVector(dict(zip(names, best_w.tolist()))), log

    # coordinate ascent
    current = np.full(m, 1.0 / m)
    current_obj = ctx.evaluate(current)
    log_candidate(0, "uniform", current, current_obj)
    step = 1
    for delta in COORDINATE_DELTAS:
        improved = True
        while improved:
            improved = False
            best_move: Optional[tuple[np.ndarray, float, float, str]] = None
            for i in range(m):
                if current[i] < delta - SIMPLEX_TOLERANCE:
                    continue
                for j in range(m):
                    if i == j:
                        continue
                    cand = current.copy()
                    cand[i] -= delta
                    if cand[i] < 1e-12:
                        cand[i] = 0.0
                    cand[j] += delta
                    cid = f"move:{names[i]}->{names[j]}:{delta}"
                    obj = ctx.evaluate(cand)
                    log_candidate(step, cid, cand, obj)
                    step += 1
                    if obj <= current_obj:
                        continue
                    l1 = _l1_to_uniform(cand)
                    if best_move is None or obj > best_move[1] or (
                        obj == best_move[1] and l1 < best_move[2]
                    ):
                        best_move = (cand, obj, l1, cid)
            if best_move is not None:
                current, current_obj = best_move[0], best_move[1]
                improved = True
    return WeightVector(dict(zip(names, current.tolist()))), log


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

WEIGHTS_HEADER = ["encoder", "weight"]


def save_weights(w: WeightVector, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(WEIGHTS_HEADER)
        for name in sorted(w.weights):
            writer.writerow([name, f"{w.weights[name]:.6f}"])


def load_weights(path: str | Path, tol: float = ROUNDING_TOLERANCE) -> WeightVector:
    """Read a weights file, accepting rounded sums within ``tol`` and
    renormalizing to an exact simplex."""
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != WEIGHTS_HEADER:
            raise ValidationError(f"{path}: bad weights header {header!r}")
        weights = {row[0]: float(row[1]) for row in reader if row}
    validate_simplex(weights, tol)
    total = math.fsum(weights.values())
    scaled = {name: w / total for name, w in weights.items()}
    residue = 1.0 - math.fsum(scaled.values())
    first = next(iter(sorted(scaled)))
    scaled[first] += residue
    return WeightVector(scaled)


def save_search_log(entries: Sequence[SearchLogEntry], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "candidate_id", "objective"])
        for e in entries:
            writer.writerow([str(e.step), e.candidate_id, repr(e.objective)])
