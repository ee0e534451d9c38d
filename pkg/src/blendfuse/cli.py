"""Command-line surface wiring the pipeline stages into reproducible runs.

Subcommands: split, encode-labels, aggregate, train-mlp, fuse-evaluate,
sensitivity, synth, verify-identities.  Every run is deterministic under a
fixed config and seed: data outputs are byte-identical across reruns, and
wall-clock timestamps live only in the run_meta.json sidecar, which also
records the config hash each output was produced under.

Exit codes: 0 success, 2 bad input data, 3 configuration error, 4 internal
numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from . import core, features, fusion, labels as labels_mod, mlp, plots, postprocess, synth
from .core import SampleRecord, ValidationError
from .evaluation import (
    CrossValConfig,
    CrossValReport,
    FoldAssignment,
    cross_validate,
    load_folds,
    save_folds,
    save_results,
    split_actors,
)
from .mlp import NumericError
from .postprocess import PostprocessConfig, ThresholdPair, fold_beta_spread

EXIT_OK = 0
EXIT_DATA = 2
EXIT_CONFIG = 3
EXIT_NUMERIC = 4


class ConfigError(ValueError):
    """Bad run configuration: unknown keys, missing paths, invalid values."""


class _Parser(argparse.ArgumentParser):
    # Flag mistakes are configuration errors, not data errors.
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        raise ConfigError(message)


# Execution details that do not influence any computed content are not part
# of a run's identity.
_NON_SEMANTIC_KEYS = ("output_dir", "threads")


def _config_hash(resolved: dict[str, Any]) -> str:
    hashed = {k: v for k, v in resolved.items() if k not in _NON_SEMANTIC_KEYS}
    blob = json.dumps(hashed, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(path: Path, payload: dict[str, Any]) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _write_run_meta(out_dir: Path, command: str, resolved: dict[str, Any], outputs: Sequence[Path]) -> None:
    meta = {
        "command": command,
        "config_hash": _config_hash(resolved),
        "resolved_config": resolved,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
        "outputs": {str(p.relative_to(out_dir)): _sha256_file(p) for p in outputs},
    }
    _write_json(out_dir / "run_meta.json", meta)


def _out_dir(path_str: str) -> Path:
    out = Path(path_str)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_manifest_records(path: Path) -> list[SampleRecord]:
    """Accept either a labels file or a feature manifest as the clip list."""
    with open(path, encoding="utf-8", newline="") as fh:
        header = next(csv.reader(fh), None)
    if header == core.LABELS_HEADER:
        return core.load_labels(path)
    if header == features.MANIFEST_HEADER:
        return [
            SampleRecord(video_id, actor_id, None)
            for video_id, actor_id, _ in features.load_feature_manifest(path)
        ]
    raise ValidationError(f"{path}: unrecognized manifest header {header!r}")


def _parse_grid(value: Any, name: str) -> tuple[float, ...]:
    if isinstance(value, (list, tuple)):
        return tuple(float(v) for v in value)
    if isinstance(value, dict):
        unknown = set(value) - {"start", "stop", "step"}
        if unknown:
            raise ConfigError(f"unknown keys in {name}: {sorted(unknown)}")
        start, stop, step = (float(value[k]) for k in ("start", "stop", "step"))
        if step <= 0 or stop < start:
            raise ConfigError(f"bad grid spec for {name}: {value!r}")
        count = int(round((stop - start) / step)) + 1
        return tuple(round(start + i * step, 12) for i in range(count))
    raise ConfigError(f"{name} must be a list or a start/stop/step object")


# ---------------------------------------------------------------------------
# fuse-evaluate run configuration
# ---------------------------------------------------------------------------

_RUN_CONFIG_KEYS = {
    "predictions_dir": str,
    "labels_file": str,
    "folds_file": str,
    "feature_dir": str,
    "output_dir": str,
    "seed": int,
    "threads": int,
    "alpha_grid": object,
    "beta_grid": object,
    "fusion_strategy": str,
    "threshold_strategy": str,
    "neutral_index": object,
    "renormalize_before_beta": bool,
    "joint_threshold_search": bool,
    "initial_thresholds": object,
    "exhaustive_step": float,
    "emit_plots": bool,
}

_RUN_CONFIG_DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "threads": 1,
    "alpha_grid": list(postprocess.DEFAULT_GRID),
    "beta_grid": list(postprocess.DEFAULT_GRID),
    "fusion_strategy": "coordinate_ascent",
    "threshold_strategy": "per_fold_average",
    "neutral_index": None,
    "renormalize_before_beta": False,
    "joint_threshold_search": False,
    "initial_thresholds": [0.1, 0.1],
    "exhaustive_step": 0.05,
    "emit_plots": True,
}


def load_run_config(path: Path, overrides: dict[str, Any]) -> dict[str, Any]:
    """Parse, default, override and validate a fuse-evaluate run config."""
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("run config must be a JSON object")
    unknown = set(raw) - set(_RUN_CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    cfg = dict(_RUN_CONFIG_DEFAULTS)
    cfg.update(raw)
    for key, value in overrides.items():
        if value is not None:
            cfg[key] = value
    for key in ("predictions_dir", "labels_file", "folds_file", "output_dir"):
        if key not in cfg or cfg[key] is None:
            raise ConfigError(f"missing required config key {key!r}")
    for key in ("predictions_dir", "labels_file", "folds_file", "feature_dir"):
        if key in cfg and cfg[key] is not None and not Path(cfg[key]).exists():
            raise ConfigError(f"{key} does not exist: {cfg[key]!r}")
    if cfg["fusion_strategy"] not in fusion.WEIGHT_STRATEGIES:
        raise ConfigError(f"unknown fusion_strategy {cfg['fusion_strategy']!r}")
    if cfg["threshold_strategy"] not in postprocess.THRESHOLD_STRATEGIES:
        raise ConfigError(f"unknown threshold_strategy {cfg['threshold_strategy']!r}")
    if cfg["neutral_index"] is not None and cfg["neutral_index"] not in range(core.N_EMOTIONS):
        raise ConfigError(f"neutral_index out of range: {cfg['neutral_index']!r}")
    cfg["alpha_grid"] = list(_parse_grid(cfg["alpha_grid"], "alpha_grid"))
    cfg["beta_grid"] = list(_parse_grid(cfg["beta_grid"], "beta_grid"))
    init = cfg["initial_thresholds"]
    if not (isinstance(init, (list, tuple)) and len(init) == 2):
        raise ConfigError(f"initial_thresholds must be [alpha, beta]: {init!r}")
    cfg["initial_thresholds"] = [float(init[0]), float(init[1])]
    return cfg


def _load_prediction_sets(predictions_dir: Path) -> list[core.EncoderPredictionSet]:
    files = sorted(predictions_dir.glob("*.csv"))
    if not files:
        raise ValidationError(f"no prediction files under {predictions_dir}")
    return [core.load_predictions(f) for f in files]


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_split(args: argparse.Namespace) -> int:
    if args.k < 2:
        raise ConfigError(f"need at least 2 folds, got k={args.k}")
    records = _load_manifest_records(Path(args.manifest))
    assignment = split_actors(records, args.k, args.seed)
    out = _out_dir(args.out)
    folds_path = out / "folds.csv"
    save_folds(assignment, folds_path)
    resolved = {"command": "split", "manifest": str(args.manifest), "k": args.k, "seed": args.seed}
    _write_run_meta(out, "split", resolved, [folds_path])
    print(f"wrote {folds_path} ({assignment.k} folds, {len(assignment.folds)} actors)")
    return EXIT_OK


def cmd_encode_labels(args: argparse.Namespace) -> int:
    records = core.load_labels(Path(args.labels))
    out = _out_dir(args.out)
    path = out / "soft_labels.csv"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["video_id"] + [f"y_{e.label}" for e in core.EMOTIONS])
        for rec in records:
            soft = labels_mod.encode_soft_label(rec.annotation)
            writer.writerow([rec.video_id] + [repr(v) for v in soft.values])
    resolved = {"command": "encode-labels", "labels": str(args.labels)}
    _write_run_meta(out, "encode-labels", resolved, [path])
    print(f"wrote {path} ({len(records)} rows)")
    return EXIT_OK


def _aggregation_config(args: argparse.Namespace) -> features.AggregationConfig:
    stats = tuple(s.strip() for s in args.stats.split(",")) if args.stats else features.DEFAULT_STATS
    try:
        return features.AggregationConfig(
            layer_lo=args.layer_lo, layer_hi=args.layer_hi, segments=args.segments, stats=stats
        )
    except ValidationError as exc:
        raise ConfigError(str(exc)) from None


def _aggregate_directory(
    feature_dir: Path, cfg: features.AggregationConfig
) -> tuple[list[str], dict[str, str], dict[str, np.ndarray]]:
    manifest = features.load_feature_manifest(feature_dir / "manifest.csv")
    video_ids: list[str] = []
    actors: dict[str, str] = {}
    vectors: dict[str, np.ndarray] = {}
    for video_id, actor_id, rel_path in manifest:
        seq = features.load_feature_file(feature_dir / rel_path, video_id)
        vectors[video_id] = features.aggregate_sequence(seq, cfg)
        actors[video_id] = actor_id
        video_ids.append(video_id)
    return video_ids, actors, vectors


def cmd_aggregate(args: argparse.Namespace) -> int:
    cfg = _aggregation_config(args)
    video_ids, actors, vectors = _aggregate_directory(Path(args.features), cfg)
    out = _out_dir(args.out)
    path = out / "aggregated.csv"
    dim = len(next(iter(vectors.values()))) if vectors else 0
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["video_id", "actor_id"] + [f"f{i}" for i in range(dim)])
        for vid in video_ids:
            writer.writerow([vid, actors[vid]] + [repr(float(v)) for v in vectors[vid]])
    resolved = {
        "command": "aggregate",
        "features": str(args.features),
        "layer_lo": cfg.layer_lo,
        "layer_hi": cfg.layer_hi,
        "segments": cfg.segments,
        "stats": list(cfg.stats),
    }
    _write_run_meta(out, "aggregate", resolved, [path])
    print(f"wrote {path} ({len(video_ids)} videos, {dim} dims)")
    return EXIT_OK


def cmd_train_mlp(args: argparse.Namespace) -> int:
    agg_cfg = _aggregation_config(args)
    records = core.load_labels(Path(args.labels))
    assignment = load_folds(Path(args.folds))
    video_ids, _, vectors = _aggregate_directory(Path(args.features), agg_cfg)

    missing = [r.video_id for r in records if r.video_id not in vectors]
    if missing:
        raise ValidationError(f"missing features for labeled videos: {missing}")

    try:
        hidden = tuple(int(h) for h in args.hidden.split(","))
    except ValueError:
        raise ConfigError(f"--hidden must be comma-separated integers, got {args.hidden!r}") from None
    by_fold = assignment.videos_by_fold(records)
    for f, vids in by_fold.items():
        if not vids:
            raise ValidationError(f"fold {f} holds no labeled videos")
    record_of = {r.video_id: r for r in records}
    out = _out_dir(args.out)
    outputs: list[Path] = []
    merged_preds: dict[str, tuple[core.EmotionDistribution, ...]] = {}
    merged_actors: dict[str, str] = {}

    def arrays_for(vids: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
        x = np.stack([vectors[v] for v in vids])
        y = np.stack(
            [labels_mod.encode_soft_label(record_of[v].annotation).as_array() for v in vids]
        )
        return x, y

    for fold in assignment.fold_indices():
        held_out = by_fold[fold]
        train_folds = [f for f in assignment.fold_indices() if f != fold]
        # The lowest-index remaining fold gates early stopping; the rest train.
        val_fold = train_folds[0]
        train_vids = [v for f in train_folds[1:] for v in by_fold[f]]
        if not train_vids:  # k == 2 leaves one fold for both roles
            train_vids = list(by_fold[val_fold])
        cfg = mlp.MlpConfig(
            hidden_dims=hidden,
            dropout=args.dropout,
            lr=args.lr,
            max_epochs=args.epochs,
            patience=args.patience,
            batch_size=args.batch_size,
            seed=args.seed + fold,
        )
        result = mlp.train(arrays_for(train_vids), arrays_for(by_fold[val_fold]), cfg)

        ckpt = out / f"mlp_fold{fold}.npz"
        mlp.save_model(result.model, ckpt)
        log_path = out / f"mlp_fold{fold}_log.csv"
        mlp.save_train_log(result.log, log_path)

        probs = mlp.predict_proba(result.model, np.stack([vectors[v] for v in held_out]))
        probs = probs / probs.sum(axis=1, keepdims=True)
        fold_rows = {
            vid: (core.EmotionDistribution(tuple(float(x) for x in row)),)
            for vid, row in zip(held_out, probs)
        }
        fold_actors = {vid: record_of[vid].actor_id for vid in held_out}
        pred_path = out / f"mlp_fold{fold}.csv"
        core.save_predictions(
            core.EncoderPredictionSet("mlp", fold_rows, fold_actors), pred_path
        )
        merged_preds.update(fold_rows)
        merged_actors.update(fold_actors)
        outputs += [ckpt, log_path, pred_path]
        print(
            f"fold {fold}: best epoch {result.best_epoch}, val KL {result.best_val_loss:.6f}, "
            f"{len(held_out)} held-out predictions"
        )

    oof_rows = {vid: merged_preds[vid] for vid in sorted(merged_preds)}
    oof_path = out / "mlp_oof.csv"
    core.save_predictions(core.EncoderPredictionSet("mlp", oof_rows, merged_actors), oof_path)
    outputs.append(oof_path)
    resolved = {
        "command": "train-mlp",
        "features": str(args.features),
        "labels": str(args.labels),
        "folds": str(args.folds),
        "hidden": list(hidden),
        "dropout": args.dropout,
        "lr": args.lr,
        "epochs": args.epochs,
        "patience": args.patience,
        "batch_size": args.batch_size,
        "seed": args.seed,
        "layer_lo": agg_cfg.layer_lo,
        "layer_hi": agg_cfg.layer_hi,
        "segments": agg_cfg.segments,
        "stats": list(agg_cfg.stats),
    }
    _write_run_meta(out, "train-mlp", resolved, outputs)
    print(f"wrote {oof_path}")
    return EXIT_OK


def _per_fold_surfaces(
    preds: Sequence[core.EncoderPredictionSet],
    records: Sequence[SampleRecord],
    assignment: FoldAssignment,
    weights: fusion.WeightVector,
    alpha_grid: Sequence[float],
    beta_grid: Sequence[float],
    pp_cfg: PostprocessConfig,
) -> tuple[list[int], list[postprocess.ThresholdSurface]]:
    truth = core.annotations_by_video(records)
    by_fold = assignment.videos_by_fold(records)
    fold_ids = [f for f in sorted(by_fold) if by_fold[f]]
    surfaces = []
    for f in fold_ids:
        vids = by_fold[f]
        fused = {vid: fusion.fuse(preds, weights, vid) for vid in vids}
        fold_truth = {vid: truth[vid] for vid in vids}
        surfaces.append(
            postprocess.search_thresholds(fused, fold_truth, alpha_grid, beta_grid, pp_cfg)
        )
    return fold_ids, surfaces


def cmd_fuse_evaluate(args: argparse.Namespace) -> int:
    overrides = {"seed": args.seed, "threads": args.threads, "output_dir": args.out}
    cfg = load_run_config(Path(args.config), overrides)
    out = _out_dir(cfg["output_dir"])
    chash = _config_hash(cfg)

    preds = _load_prediction_sets(Path(cfg["predictions_dir"]))
    records = core.load_labels(Path(cfg["labels_file"]))
    assignment = load_folds(Path(cfg["folds_file"]))
    init = ThresholdPair(*cfg["initial_thresholds"])
    outputs: list[Path] = []

    weights, search_log = fusion.optimize_weights(
        preds,
        records,
        assignment,
        init,
        strategy=cfg["fusion_strategy"],
        seed=cfg["seed"],
        neutral_index=cfg["neutral_index"],
        renormalize_before_beta=cfg["renormalize_before_beta"],
        exhaustive_step=cfg["exhaustive_step"],
        joint_threshold_search=cfg["joint_threshold_search"],
        alpha_grid=cfg["alpha_grid"],
        beta_grid=cfg["beta_grid"],
    )
    weights_path = out / "weights.csv"
    fusion.save_weights(weights, weights_path)
    log_path = out / "weight_search_log.csv"
    fusion.save_search_log(search_log, log_path)
    outputs += [weights_path, log_path]

    pp_base = PostprocessConfig(
        thresholds=init,
        neutral_index=cfg["neutral_index"],
        renormalize_before_beta=cfg["renormalize_before_beta"],
    )
    fold_ids, surfaces = _per_fold_surfaces(
        preds, records, assignment, weights, cfg["alpha_grid"], cfg["beta_grid"], pp_base
    )
    chosen = postprocess.select_thresholds(surfaces, cfg["threshold_strategy"])
    pairs = [s.argmax_pair() for s in surfaces]
    report = {
        "config_hash": chash,
        "strategy": cfg["threshold_strategy"],
        "alpha": chosen.alpha,
        "beta": chosen.beta,
        "per_fold": [
            {"fold": f, "alpha": p.alpha, "beta": p.beta, "best_score": s.best_score()}
            for f, p, s in zip(fold_ids, pairs, surfaces)
        ],
        **fold_beta_spread(pairs),
    }
    thresholds_path = out / "thresholds.json"
    _write_json(thresholds_path, report)
    outputs.append(thresholds_path)

    cv_cfg = CrossValConfig(
        weight_strategy=cfg["fusion_strategy"],
        threshold_strategy=cfg["threshold_strategy"],
        initial_thresholds=init,
        alpha_grid=tuple(cfg["alpha_grid"]),
        beta_grid=tuple(cfg["beta_grid"]),
        neutral_index=cfg["neutral_index"],
        renormalize_before_beta=cfg["renormalize_before_beta"],
        exhaustive_step=cfg["exhaustive_step"],
        joint_threshold_search=cfg["joint_threshold_search"],
        seed=cfg["seed"],
        threads=cfg["threads"],
    )
    cv_report = cross_validate(preds, records, assignment, cv_cfg)
    results_path = out / "results.csv"
    save_results(cv_report, results_path)
    results_json = out / "results.json"
    _write_json(results_json, _report_payload(cv_report, chash))
    outputs += [results_path, results_json]

    if cfg["emit_plots"]:
        heat_path = out / "score_surface.svg"
        plots.surface_heatmap_svg(plots.surface_mean(surfaces), heat_path)
        bars_path = out / "fold_beta.svg"
        plots.fold_beta_bars_svg(pairs, bars_path)
        outputs += [heat_path, bars_path]

    _write_run_meta(out, "fuse-evaluate", cfg, outputs)
    print(
        f"weights={weights_path} thresholds=({chosen.alpha:.4f},{chosen.beta:.4f}) "
        f"mean score={cv_report.mean.score:.4f}"
    )
    return EXIT_OK


def _report_payload(report: CrossValReport, chash: str) -> dict[str, Any]:
    return {
        "config_hash": chash,
        "folds": [
            {
                "fold": o.fold,
                "acc_p": o.result.acc_p,
                "acc_s": o.result.acc_s,
                "score": o.result.score,
                "n": o.result.n,
                "weights": dict(o.weights),
                "alpha": o.thresholds.alpha,
                "beta": o.thresholds.beta,
            }
            for o in report.folds
        ],
        "mean": {
            "acc_p": report.mean.acc_p,
            "acc_s": report.mean.acc_s,
            "score": report.mean.score,
        },
        "std": {"acc_p": report.std[0], "acc_s": report.std[1], "score": report.std[2]},
        "pooled": {
            "acc_p": report.pooled.acc_p,
            "acc_s": report.pooled.acc_s,
            "score": report.pooled.score,
            "n": report.pooled.n,
        },
    }


def cmd_sensitivity(args: argparse.Namespace) -> int:
    pred_path = Path(args.predictions)
    if pred_path.is_dir():
        preds = _load_prediction_sets(pred_path)
    else:
        preds = [core.load_predictions(pred_path)]
    records = core.load_labels(Path(args.labels))
    assignment = load_folds(Path(args.folds))
    if args.weights:
        weights = fusion.load_weights(Path(args.weights))
    else:
        weights = fusion.WeightVector.uniform([p.encoder_name for p in preds])

    def parse_grid_flag(raw: Optional[str], name: str):
        if not raw:
            return postprocess.DEFAULT_GRID
        try:
            return _parse_grid(json.loads(raw), name)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"bad {name}: {exc}") from None

    alpha_grid = parse_grid_flag(args.alpha_grid, "alpha_grid")
    beta_grid = parse_grid_flag(args.beta_grid, "beta_grid")
    pp_cfg = PostprocessConfig(
        thresholds=ThresholdPair(0.0, 0.0), neutral_index=args.neutral_index
    )
    fold_ids, surfaces = _per_fold_surfaces(
        preds, records, assignment, weights, alpha_grid, beta_grid, pp_cfg
    )
    pairs = [s.argmax_pair() for s in surfaces]
    resolved = {
        "command": "sensitivity",
        "predictions": str(args.predictions),
        "labels": str(args.labels),
        "folds": str(args.folds),
        "weights": str(args.weights) if args.weights else None,
        "neutral_index": args.neutral_index,
    }
    report = {
        "config_hash": _config_hash(resolved),
        "per_fold": [
            {"fold": f, "alpha": p.alpha, "beta": p.beta, "best_score": s.best_score()}
            for f, p, s in zip(fold_ids, pairs, surfaces)
        ],
        **fold_beta_spread(pairs),
        "alpha_min": min(p.alpha for p in pairs),
        "alpha_max": max(p.alpha for p in pairs),
    }
    out = _out_dir(args.out)
    report_path = out / "sensitivity.json"
    _write_json(report_path, report)
    heat_path = out / "score_surface.svg"
    plots.surface_heatmap_svg(plots.surface_mean(surfaces), heat_path)
    bars_path = out / "fold_beta.svg"
    plots.fold_beta_bars_svg(pairs, bars_path)
    _write_run_meta(out, "sensitivity", resolved, [report_path, heat_path, bars_path])
    spread = fold_beta_spread(pairs)
    print(
        f"beta spread: min={spread['beta_min']:.2f} max={spread['beta_max']:.2f} "
        f"ratio={spread['beta_ratio'] if spread['beta_ratio'] is not None else 'inf'}"
    )
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    try:
        mix = tuple(float(v) for v in args.mix.split(","))
    except ValueError:
        raise ConfigError(f"--mix must be three comma-separated numbers, got {args.mix!r}") from None
    if len(mix) != 3:
        raise ConfigError(f"--mix needs three comma-separated values, got {args.mix!r}")
    try:
        cfg = synth.SynthConfig(
            n_actors=args.actors,
            clips_per_actor=args.clips,
            label_mix=mix,  # type: ignore[arg-type]
            actor_gap_range=(args.gap_lo, args.gap_hi),
            noise_sigma=args.noise_sigma,
            seed=args.seed,
        )
    except ValidationError as exc:
        raise ConfigError(str(exc)) from None
    dataset = synth.generate(cfg)
    out = _out_dir(args.out)
    labels_path = out / "labels.csv"
    core.save_labels(dataset.records, labels_path)
    pred_dir = out / "predictions"
    pred_dir.mkdir(exist_ok=True)
    pred_path = pred_dir / f"{cfg.encoder_name}.csv"
    core.save_predictions(dataset.predictions, pred_path)
    resolved = {
        "command": "synth",
        "actors": args.actors,
        "clips": args.clips,
        "mix": list(mix),
        "gap_lo": args.gap_lo,
        "gap_hi": args.gap_hi,
        "noise_sigma": args.noise_sigma,
        "seed": args.seed,
    }
    gaps_path = out / "actor_gaps.json"
    _write_json(gaps_path, {"config_hash": _config_hash(resolved), "gaps": dict(dataset.actor_gaps)})
    _write_run_meta(out, "synth", resolved, [labels_path, pred_path, gaps_path])
    print(f"wrote {labels_path} and {pred_path} ({len(dataset.records)} clips)")
    return EXIT_OK


def cmd_verify_identities(args: argparse.Namespace) -> int:
    ok = True
    if args.results:
        with open(args.results, encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["fold", "acc_p", "acc_s", "score", "n"]:
                raise ValidationError(f"{args.results}: bad results header {header!r}")
            for row in reader:
                if not row or row[0] == "summary":
                    continue
                acc_p, acc_s, score = float(row[1]), float(row[2]), float(row[3])
                diff = abs(0.5 * (acc_p + acc_s) - score)
                passed = diff <= args.tol
                ok &= passed
                print(
                    f"{'PASS' if passed else 'FAIL'} row {row[0]}: "
                    f"0.5*({acc_p}+{acc_s}) vs {score} (diff {diff:.6f})"
                )
    if args.weights:
        try:
            fusion.load_weights(Path(args.weights), tol=args.tol_simplex)
            print(f"PASS weights {args.weights}: simplex within {args.tol_simplex}")
        except ValidationError as exc:
            ok = False
            print(f"FAIL weights {args.weights}: {exc}")
    if not args.results and not args.weights:
        raise ConfigError("verify-identities needs --results and/or --weights")
    return EXIT_OK if ok else EXIT_DATA


# ---------------------------------------------------------------------------
# Parser wiring
# ---------------------------------------------------------------------------


def _add_aggregation_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--layer-lo", type=int, default=0)
    p.add_argument("--layer-hi", type=int, default=0)
    p.add_argument("--segments", type=int, default=3)
    p.add_argument("--stats", type=str, default="", help="comma-separated statistic names")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="blendfuse", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("split", help="actor-disjoint fold split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("encode-labels", help="soft-label encoding of a labels file")
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_encode_labels)

    p = sub.add_parser("aggregate", help="layer-average and pool a feature directory")
    p.add_argument("--features", required=True)
    _add_aggregation_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("train-mlp", help="per-fold classifier heads on features")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--folds", required=True)
    _add_aggregation_flags(p)
    p.add_argument("--hidden", type=str, default="1024,512")
    p.add_argument("--dropout", type=float, default=0.3)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--patience", type=int, default=80)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_mlp)

    p = sub.add_parser("fuse-evaluate", help="weight search, thresholds, cross-validation")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_fuse_evaluate)

    p = sub.add_parser("sensitivity", help="per-fold threshold search report")
    p.add_argument("--predictions", required=True, help="predictions file or directory")
    p.add_argument("--labels", required=True)
    p.add_argument("--folds", required=True)
    p.add_argument("--weights", default=None)
    p.add_argument("--alpha-grid", default=None, help="JSON list or start/stop/step object")
    p.add_argument("--beta-grid", default=None)
    p.add_argument("--neutral-index", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sensitivity)

    p = sub.add_parser("synth", help="deterministic synthetic dataset")
    p.add_argument("--actors", type=int, default=20)
    p.add_argument("--clips", type=int, default=40)
    p.add_argument("--mix", type=str, default="0.46,0.18,0.36")
    p.add_argument("--gap-lo", type=float, default=0.05)
    p.add_argument("--gap-hi", type=float, default=0.45)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("verify-identities", help="score and simplex identity checks")
    p.add_argument("--results", default=None)
    p.add_argument("--weights", default=None)
    p.add_argument("--tol", type=float, default=5e-4)
    p.add_argument("--tol-simplex", type=float, default=5e-3)
    p.set_defaults(func=cmd_verify_identities)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    raise SystemExit(main())
