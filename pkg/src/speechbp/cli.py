"""Batch pipeline driver behind the `bp` entry point.

Every subcommand reads and writes file artifacts under one working
directory, so a full experiment is synth -> extract -> select -> train ->
eval -> report with a single config.  Stages are deterministic given their
inputs and seed; rerunning a command over unchanged inputs rewrites
byte-identical outputs.

Exit codes: 0 success, 1 some recordings failed, 2 bad config or schema,
3 file system trouble, 4 not enough data, 5 training diverged, 6 nothing
usable in the input.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .audio_io import (EmptyClip, InvalidFrequency, MalformedRiff,
                       TruncatedData, UnsupportedEncoding, load_wav)
from .dataset import (ConstantColumn, DBP_RANGE, SBP_RANGE, Scaler,
                      TooFewExamples, apply_scaler, build_examples,
                      correlation_matrix, fit_scaler, label_hypertension,
                      mean_of_measurements, read_manifest, scaler_from_dict,
                      scaler_to_dict, split, synthesize_cohort,
                      write_manifest)
from .dsp import detect_voiced_regions, segment_regions
from .features import (BASE_SCHEMA, EXTENDED_SCHEMA, FeatureVector,
                       NoSegments, aggregate_recording, read_features_csv,
                       segment_features, write_features_csv)
from .model import EncoderConfig, init_params, load_params, save_params
from .relieff import (ClassTooSmall, cross_validated_selection,
                      write_selection_manifest, write_weights_report)
from .textcodec import (build_vocabulary, load_vocabulary, save_vocabulary,
                        serialize_features, tokenize)
from .training import (EmptyDataset, LabeledSequence, TrainConfig,
                       TrainingDiverged, ZeroVariance, confusion_matrix,
                       evaluate, predict_pressures, read_history_csv, train,
                       validation_split, write_confusion_json,
                       write_history_csv, write_metrics_json)

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DATA = 4
EXIT_DIVERGED = 5
EXIT_DEGENERATE = 6

WORKDIR_ENV = "BP_WORKDIR"
DEFAULT_WORKDIR = "runs"

# every key is optional in the JSON file; unknown keys are rejected
CONFIG_DEFAULTS = {
    "workdir": None,
    "seed": 0,
    "schema": BASE_SCHEMA,
    "decimals": 2,
    "cohort": {"n_female": 45, "n_male": 50},
    "selection": {"folds": 10, "k_grid": [3, 5, 10]},
    "split": {"test_fraction": 0.2, "val_fraction": 0.1},
    "encoder": {"hidden_dim": 64, "n_layers": 2, "n_heads": 4,
                "ff_dim": 256, "max_len": 512, "dropout_p": 0.1,
                "layernorm_epsilon": 1e-5},
    "training": {"epochs": 50, "batch_size": 32, "learning_rate": 2e-5,
                 "beta1": 0.9, "beta2": 0.999, "epsilon": 1e-8},
}


class ConfigError(ValueError):
    pass


class SchemaMismatch(ValueError):
    pass


class NoVoicedAudio(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    workdir: Path
    seed: int
    schema: str
    decimals: int
    cohort: dict
    selection: dict
    split: dict
    encoder: dict
    training: dict

    @property
    def manifest_path(self) -> Path:
        return self.workdir / "manifest.csv"

    @property
    def wav_dir(self) -> Path:
        return self.workdir / "wav"

    @property
    def features_csv(self) -> Path:
        return self.workdir / "features.csv"

    @property
    def features_json(self) -> Path:
        return self.workdir / "features.json"

    @property
    def weights_csv(self) -> Path:
        return self.workdir / "weights.csv"

    @property
    def selection_json(self) -> Path:
        return self.workdir / "selection.json"

    @property
    def model_dir(self) -> Path:
        return self.workdir / "model"

    @property
    def params_path(self) -> Path:
        return self.model_dir / "params.bin"

    @property
    def pipeline_path(self) -> Path:
        return self.model_dir / "pipeline.json"

    @property
    def vocab_path(self) -> Path:
        return self.model_dir / "vocab.json"

    @property
    def loss_curve_csv(self) -> Path:
        return self.workdir / "loss_curve.csv"

    @property
    def metrics_path(self) -> Path:
        return self.workdir / "metrics.json"

    @property
    def confusion_path(self) -> Path:
        return self.workdir / "confusion.json"

    @property
    def correlation_csv(self) -> Path:
        return self.workdir / "correlation.csv"

    @property
    def loss_curve_svg(self) -> Path:
        return self.workdir / "loss_curve.svg"

    @property
    def correlation_svg(self) -> Path:
        return self.workdir / "correlation.svg"


def _merge_section(defaults: dict, given: dict, where: str) -> dict:
    merged = dict(defaults)
    for key, value in given.items():
        if key not in defaults:
            raise ConfigError(f"unknown config key {where}{key!r}")
        if isinstance(defaults[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where}{key} must be an object")
            merged[key] = _merge_section(defaults[key], value,
                                         f"{where}{key}.")
        else:
            merged[key] = value
    return merged


def resolve_config(config_path, seed_override=None,
                   workdir_override=None) -> PipelineConfig:
    """Defaults, then the JSON file, then command-line overrides.

    The working directory resolves as flag > config > $BP_WORKDIR > the
    built-in default, and one global seed feeds every seeded stage.
    """
    given = {}
    if config_path is not None:
        try:
            text = Path(config_path).read_text()
        except OSError as err:
            raise ConfigError(f"cannot read config: {err}")
        try:
            given = json.loads(text)
        except json.JSONDecodeError as err:
            raise ConfigError(f"config is not valid JSON: {err}")
        if not isinstance(given, dict):
            raise ConfigError("config root must be a JSON object")
    merged = _merge_section(CONFIG_DEFAULTS, given, "")

    workdir = (workdir_override or merged["workdir"]
               or os.environ.get(WORKDIR_ENV) or DEFAULT_WORKDIR)
    seed = merged["seed"] if seed_override is None else seed_override
    if merged["schema"] not in (BASE_SCHEMA, EXTENDED_SCHEMA):
        raise ConfigError(f"unknown feature schema {merged['schema']!r}")
    if not 0 <= int(merged["decimals"]) <= 12:
        raise ConfigError("decimals must lie in [0, 12]")
    return PipelineConfig(
        workdir=Path(workdir), seed=int(seed), schema=merged["schema"],
        decimals=int(merged["decimals"]), cohort=merged["cohort"],
        selection=merged["selection"], split=merged["split"],
        encoder=merged["encoder"], training=merged["training"])


# --- shared plumbing --------------------------------------------------------

def _read_examples(cfg: PipelineConfig):
    """Labeled examples over the full extracted schema, manifest order.

    Participants whose extraction failed (no features row) are skipped so a
    partial corpus still trains and evaluates.
    """
    records = read_manifest(cfg.manifest_path)
    ids, names, X, fman = read_features_csv(cfg.features_csv,
                                            cfg.features_json)
    nseg = {r["id"]: r["n_segments"] for r in fman["recordings"]}
    by_id = dict(zip(ids, X))
    have = [r for r in records if r.id in by_id]
    if not have:
        raise TooFewExamples("no participant has both a manifest row and "
                             "a features row")
    vectors = {r.id: FeatureVector(names=tuple(names), values=by_id[r.id],
                                   n_segments=nseg[r.id],
                                   schema_id=fman["schema_id"])
               for r in have}
    return build_examples(have, vectors), tuple(names), fman


def _project(examples, kept):
    """Restrict every example's features to the kept columns, kept order."""
    names = examples[0].features.names
    missing = [k for k in kept if k not in names]
    if missing:
        raise SchemaMismatch(f"features {missing} expected by the model are "
                             f"absent from schema {names}")
    cols = [names.index(k) for k in kept]
    out = []
    for ex in examples:
        vec = FeatureVector(names=tuple(kept),
                            values=ex.features.values[cols],
                            n_segments=ex.features.n_segments,
                            schema_id=ex.features.schema_id)
        out.append(replace(ex, features=vec))
    return out


def _sequencize(examples, feature_scaler, vocab, max_len, decimals):
    """Scaled, serialized, tokenized sequences with their mmHg targets."""
    M = np.array([ex.features.values for ex in examples], dtype=np.float64)
    Z = apply_scaler(feature_scaler, M)
    out = []
    for ex, zrow in zip(examples, Z):
        vec = FeatureVector(names=ex.features.names, values=zrow,
                            n_segments=ex.features.n_segments,
                            schema_id=ex.features.schema_id)
        seq = tokenize(serialize_features(vec, decimals), vocab, max_len)
        out.append(LabeledSequence(ex.participant_id, seq,
                                   ex.sbp_target, ex.dbp_target))
    return out


@dataclass(frozen=True)
class ModelBundle:
    enc: EncoderConfig
    params: dict
    vocab: object
    kept: tuple
    decimals: int
    feature_scaler: Scaler
    target_scaler: Scaler
    pipeline: dict


def _load_model(cfg: PipelineConfig) -> ModelBundle:
    pipe = json.loads(cfg.pipeline_path.read_text())
    enc, params = load_params(cfg.params_path)
    vocab = load_vocabulary(cfg.vocab_path)
    return ModelBundle(
        enc=enc, params=params, vocab=vocab,
        kept=tuple(pipe["kept_features"]), decimals=int(pipe["decimals"]),
        feature_scaler=scaler_from_dict(pipe["feature_scaler"]),
        target_scaler=scaler_from_dict(pipe["target_scaler"]),
        pipeline=pipe)


def _clip_range(value: float, bounds) -> float:
    return float(min(max(value, bounds[0]), bounds[1]))


# --- subcommands ------------------------------------------------------------

def cmd_synth(cfg: PipelineConfig) -> int:
    cfg.wav_dir.mkdir(parents=True, exist_ok=True)
    records = synthesize_cohort(n_female=cfg.cohort["n_female"],
                                n_male=cfg.cohort["n_male"],
                                seed=cfg.seed, wav_dir=cfg.wav_dir)
    write_manifest(cfg.manifest_path, records)
    print(f"wrote {len(records)} participants under {cfg.workdir}")
    return EXIT_OK


def cmd_extract(cfg: PipelineConfig) -> int:
    records = read_manifest(cfg.manifest_path)
    ids, vectors, failures = [], [], []
    for record in records:
        try:
            segments = []
            if not record.wav_paths:
                raise NoVoicedAudio("manifest row lists no recordings")
            for path in record.wav_paths:
                clip = load_wav(path)
                segments.extend(segment_regions(
                    clip, detect_voiced_regions(clip)))
            vector = aggregate_recording(
                [segment_features(s) for s in segments], cfg.schema)
        except (ValueError, OSError) as err:
            failures.append((record.id, err))
            continue
        ids.append(record.id)
        vectors.append(vector)
    if vectors:
        write_features_csv(cfg.features_csv, cfg.features_json, ids, vectors,
                           parameters={"schema": cfg.schema})
    print(f"extracted features for {len(ids)} of {len(records)} recordings")
    for pid, err in failures:
        print(f"  failed {pid}: {err}", file=sys.stderr)
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_select(cfg: PipelineConfig) -> int:
    examples, names, _ = _read_examples(cfg)
    X = np.array([ex.features.values for ex in examples], dtype=np.float64)
    y = np.array([ex.hypertension for ex in examples], dtype=np.int64)
    result = cross_validated_selection(
        X, y, folds=cfg.selection["folds"],
        k_grid=cfg.selection["k_grid"], seed=cfg.seed, names=names)
    write_weights_report(cfg.weights_csv, result.weights, result.kept)
    write_selection_manifest(cfg.selection_json, result,
                             cfg.selection["folds"], cfg.seed)
    print(f"kept {len(result.kept)} of {len(names)} features "
          f"(k={result.chosen_k})")
    return EXIT_OK


def cmd_train(cfg: PipelineConfig) -> int:
    examples, _, fman = _read_examples(cfg)
    selection = json.loads(cfg.selection_json.read_text())
    kept = tuple(selection["kept"])
    reduced = _project(examples, kept)

    train_ex, test_ex = split(reduced, cfg.split["test_fraction"], cfg.seed)
    feature_scaler = fit_scaler(
        np.array([ex.features.values for ex in train_ex]), "standard",
        on_constant="center")
    target_scaler = fit_scaler(
        np.array([[ex.sbp_target, ex.dbp_target] for ex in train_ex]),
        "standard")

    vocab = build_vocabulary(kept)
    enc = EncoderConfig(vocab_size=len(vocab), seed=cfg.seed, **cfg.encoder)
    sequences = _sequencize(train_ex, feature_scaler, vocab, enc.max_len,
                            cfg.decimals)
    train_part, val_part = validation_split(sequences, cfg.seed,
                                            cfg.split["val_fraction"])
    train_cfg = TrainConfig(seed=cfg.seed, target_scaler=target_scaler,
                            **cfg.training)
    params, history = train(enc, init_params(enc), train_part, val_part,
                            train_cfg)

    cfg.model_dir.mkdir(parents=True, exist_ok=True)
    save_params(cfg.params_path, enc, params)
    save_vocabulary(cfg.vocab_path, vocab)
    pipeline = {
        "schema_id": fman["schema_id"],
        "decimals": cfg.decimals,
        "kept_features": list(kept),
        "feature_scaler": scaler_to_dict(feature_scaler),
        "target_scaler": scaler_to_dict(target_scaler),
        "seed": cfg.seed,
        "split": {
            "train": [s.participant_id for s in train_part],
            "val": [s.participant_id for s in val_part],
            "test": [ex.participant_id for ex in test_ex],
        },
    }
    cfg.pipeline_path.write_text(
        json.dumps(pipeline, indent=2, sort_keys=True) + "\n")
    write_history_csv(cfg.loss_curve_csv, history)
    print(f"epoch {len(history.train_loss)}: "
          f"train loss {history.train_loss[-1]:.6f}, "
          f"val loss {history.val_loss[-1]:.6f}")
    return EXIT_OK


def cmd_eval(cfg: PipelineConfig) -> int:
    model = _load_model(cfg)
    examples, _, _ = _read_examples(cfg)
    reduced = _project(examples, model.kept)
    by_id = {ex.participant_id: ex for ex in reduced}
    test_ids = model.pipeline["split"]["test"]
    missing = [i for i in test_ids if i not in by_id]
    if missing:
        raise TooFewExamples(f"test participants {missing} have no features")
    test_ex = [by_id[i] for i in test_ids]
    sequences = _sequencize(test_ex, model.feature_scaler, model.vocab,
                            model.enc.max_len, model.decimals)

    metrics = evaluate(model.enc, model.params, sequences,
                       model.target_scaler)
    preds = predict_pressures(model.enc, model.params,
                              [s.sequence for s in sequences],
                              model.target_scaler)
    truth = [label_hypertension(s.sbp, s.dbp) for s in sequences]
    counts = confusion_matrix(preds[:, 0], preds[:, 1], truth)
    write_metrics_json(cfg.metrics_path, metrics)
    write_confusion_json(cfg.confusion_path, counts)
    print(f"test n={metrics.n}  SBP mae {metrics.sbp_mae:.2f} "
          f"r2 {metrics.sbp_r2:.3f}  DBP mae {metrics.dbp_mae:.2f} "
          f"r2 {metrics.dbp_r2:.3f}")
    return EXIT_OK


def cmd_predict(cfg: PipelineConfig, wav=None, row=None) -> int:
    if (wav is None) == (row is None):
        raise ConfigError("predict needs exactly one of --wav or --row")
    model = _load_model(cfg)

    if wav is not None:
        clip = load_wav(wav)
        regions = detect_voiced_regions(clip)
        if not regions:
            raise NoVoicedAudio("no voiced audio in input")
        segments = segment_regions(clip, regions)
        vector = aggregate_recording([segment_features(s) for s in segments],
                                     model.pipeline["schema_id"])
        source = str(wav)
    else:
        examples, _, _ = _read_examples(cfg)
        match = [ex for ex in examples if ex.participant_id == row]
        if not match:
            raise ConfigError(f"participant {row!r} has no features row")
        vector = match[0].features
        source = str(row)

    names = vector.names
    missing = [k for k in model.kept if k not in names]
    if missing:
        raise SchemaMismatch(f"input features lack {missing}")
    cols = [names.index(k) for k in model.kept]
    values = apply_scaler(model.feature_scaler, vector.values[cols])[0]
    vec = FeatureVector(names=model.kept, values=values,
                        n_segments=vector.n_segments,
                        schema_id=vector.schema_id)
    seq = tokenize(serialize_features(vec, model.decimals), model.vocab,
                   model.enc.max_len)
    sbp, dbp = predict_pressures(model.enc, model.params, [seq],
                                 model.target_scaler)[0]
    label = label_hypertension(_clip_range(sbp, SBP_RANGE),
                               _clip_range(dbp, DBP_RANGE))
    print(json.dumps({"input": source, "sbp_mmhg": float(sbp),
                      "dbp_mmhg": float(dbp), "hypertensive": label}))
    return EXIT_OK


def cmd_report(cfg: PipelineConfig) -> int:
    examples, names, _ = _read_examples(cfg)
    if len(examples) < 3:
        raise TooFewExamples("correlation needs at least 3 participants")
    columns = {name: [ex.features.values[j] for ex in examples]
               for j, name in enumerate(names)}
    columns["SBP"] = [ex.sbp_target for ex in examples]
    columns["DBP"] = [ex.dbp_target for ex in examples]
    corr_names, matrix = correlation_matrix(columns)

    with open(cfg.correlation_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["feature"] + corr_names)
        for name, rowvals in zip(corr_names, matrix):
            writer.writerow([name] + [f"{v:.17g}" for v in rowvals])
    _write_heatmap_svg(cfg.correlation_svg, corr_names, matrix)
    made = [cfg.correlation_csv.name, cfg.correlation_svg.name]

    if cfg.loss_curve_csv.exists():
        history = read_history_csv(cfg.loss_curve_csv)
        _write_line_chart_svg(cfg.loss_curve_svg, history)
        made.append(cfg.loss_curve_svg.name)
    print("wrote " + ", ".join(made))
    return EXIT_OK


# --- SVG emission -----------------------------------------------------------

CHART_W, CHART_H = 640, 400
CHART_MARGIN = 54


def _chart_scale(values, lo_px, hi_px):
    lo, hi = min(values), max(values)
    if hi == lo:
        # degenerate span: park everything mid-scale
        hi = lo + 1.0
    span = hi - lo

    def place(v):
        return lo_px + (hi_px - lo_px) * ((v - lo) / span)

    return place, lo, hi


def _write_line_chart_svg(path, history) -> None:
    """Train and validation loss per epoch as a static line chart."""
    n = len(history.train_loss)
    epochs = list(range(1, n + 1))
    finite = [v for v in history.train_loss + history.val_loss
              if math.isfinite(v)]
    x_of, _, _ = _chart_scale([1, max(n, 2)], CHART_MARGIN,
                              CHART_W - CHART_MARGIN // 2)
    y_of, lo, hi = _chart_scale(finite, CHART_H - CHART_MARGIN,
                                CHART_MARGIN // 2)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{CHART_W}" '
             f'height="{CHART_H}" viewBox="0 0 {CHART_W} {CHART_H}">',
             f'<rect width="{CHART_W}" height="{CHART_H}" fill="white"/>']
    axis_y = CHART_H - CHART_MARGIN
    parts.append(f'<line x1="{CHART_MARGIN}" y1="{axis_y}" '
                 f'x2="{CHART_W - CHART_MARGIN // 2}" y2="{axis_y}" '
                 'stroke="black"/>')
    parts.append(f'<line x1="{CHART_MARGIN}" y1="{CHART_MARGIN // 2}" '
                 f'x2="{CHART_MARGIN}" y2="{axis_y}" stroke="black"/>')
    for tick in range(5):
        value = lo + (hi - lo) * tick / 4.0
        y = y_of(value)
        parts.append(f'<line x1="{CHART_MARGIN - 4}" y1="{y:.2f}" '
                     f'x2="{CHART_MARGIN}" y2="{y:.2f}" stroke="black"/>')
        parts.append(f'<text x="{CHART_MARGIN - 8}" y="{y + 4:.2f}" '
                     'text-anchor="end" font-family="monospace" '
                     f'font-size="11">{value:.3g}</text>')
    step = max(1, n // 8)
    for epoch in list(range(1, n + 1, step)) + [n]:
        x = x_of(epoch)
        parts.append(f'<text x="{x:.2f}" y="{axis_y + 16}" '
                     'text-anchor="middle" font-family="monospace" '
                     f'font-size="11">{epoch}</text>')
    for series, color, label, offset in (
            (history.train_loss, "#1f77b4", "train", 0),
            (history.val_loss, "#d62728", "val", 16)):
        points = " ".join(f"{x_of(e):.2f},{y_of(v):.2f}"
                          for e, v in zip(epochs, series)
                          if math.isfinite(v))
        if points:
            parts.append(f'<polyline points="{points}" fill="none" '
                         f'stroke="{color}" stroke-width="1.5"/>')
        y = CHART_MARGIN // 2 + 10 + offset
        parts.append(f'<line x1="{CHART_W - 130}" y1="{y}" '
                     f'x2="{CHART_W - 104}" y2="{y}" stroke="{color}" '
                     'stroke-width="1.5"/>')
        parts.append(f'<text x="{CHART_W - 98}" y="{y + 4}" '
                     'font-family="monospace" '
                     f'font-size="11">{label}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def _diverging_rgb(r: float) -> str:
    """White at 0, saturated red at +1, saturated blue at -1."""
    r = min(max(r, -1.0), 1.0)
    if r >= 0.0:
        level = int(round(255 * (1.0 - r)))
        return f"rgb(255,{level},{level})"
    level = int(round(255 * (1.0 + r)))
    return f"rgb({level},{level},255)"


def _write_heatmap_svg(path, names, matrix) -> None:
    """Correlation grid with labeled rows and columns."""
    cell = 22
    left, top = 120, 120
    n = len(names)
    width = left + cell * n + 10
    height = top + cell * n + 10
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
             f'height="{height}" viewBox="0 0 {width} {height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>']
    for i, name in enumerate(names):
        y = top + cell * i + cell // 2 + 4
        parts.append(f'<text x="{left - 6}" y="{y}" text-anchor="end" '
                     f'font-family="monospace" font-size="10">{name}</text>')
        x = left + cell * i + cell // 2
        parts.append(f'<text x="{x}" y="{top - 6}" text-anchor="start" '
                     f'font-family="monospace" font-size="10" '
                     f'transform="rotate(-60 {x} {top - 6})">{name}</text>')
    for i in range(n):
        for j in range(n):
            x = left + cell * j
            y = top + cell * i
            color = _diverging_rgb(matrix[i][j])
            parts.append(f'<rect x="{x}" y="{y}" width="{cell}" '
                         f'height="{cell}" fill="{color}" stroke="#ccc" '
                         'stroke-width="0.5">'
                         f'<title>{names[i]} / {names[j]}: '
                         f'{matrix[i][j]:.3f}</title></rect>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


# --- argument handling ------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bp",
        description="Blood pressure estimation from speech: synthesis, "
                    "feature extraction, selection, training, and reports.")
    sub = parser.add_subparsers(dest="command", required=True)
    commands = (
        ("synth", "synthesize a labeled cohort of WAV recordings"),
        ("extract", "extract acoustic features for every recording"),
        ("select", "rank features with ReliefF and pick the keepers"),
        ("train", "train the regression model on selected features"),
        ("eval", "score the trained model on the held-out split"),
        ("predict", "predict SBP/DBP for one WAV file or feature row"),
        ("report", "emit correlation tables and SVG charts"),
    )
    for name, help_text in commands:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None,
                       help="JSON config; missing keys take defaults")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config's global seed")
        p.add_argument("--workdir", default=None,
                       help=f"artifact directory (falls back to config, "
                            f"then ${WORKDIR_ENV})")
        if name == "predict":
            p.add_argument("--wav", default=None,
                           help="WAV file to run the full pipeline on")
            p.add_argument("--row", default=None,
                           help="participant id to look up in features.csv")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args.config, args.seed, args.workdir)
        if args.command == "synth":
            return cmd_synth(cfg)
        if args.command == "extract":
            return cmd_extract(cfg)
        if args.command == "select":
            return cmd_select(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg)
        if args.command == "predict":
            return cmd_predict(cfg, wav=args.wav, row=args.row)
        return cmd_report(cfg)
    except TrainingDiverged as err:
        return _fail(EXIT_DIVERGED, err)
    except (ClassTooSmall, TooFewExamples, EmptyDataset, ZeroVariance,
            ConstantColumn) as err:
        return _fail(EXIT_DATA, err)
    except (NoVoicedAudio, NoSegments) as err:
        return _fail(EXIT_DEGENERATE, err)
    except (MalformedRiff, UnsupportedEncoding, TruncatedData, EmptyClip,
            InvalidFrequency) as err:
        return _fail(EXIT_IO, err)
    except OSError as err:
        return _fail(EXIT_IO, err)
    except (ValueError, KeyError) as err:
        return _fail(EXIT_CONFIG, err)


def _fail(code: int, err) -> int:
    print(f"error: {err}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
