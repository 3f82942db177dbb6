"""Command-line entry point: ``signfusion <subcommand>``.

Subcommands: synth, extract, train, evaluate, ablate, report. Runs are driven
by a flat JSON config; ``--set key=value`` (value parsed as JSON when
possible) and the shortcut flags override config keys.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import kernels
from .backbone import load_backbone_weights
from .dataset import SplitSpec, generate_synthetic, load_dataset, split_manifest, stratified_split
from .errors import ConfigError, LabelTableMismatch, SignFusionError
from .evaluation import (ablate, evaluate_predictions, format_report, read_report_json, write_ablation_csv,
                         write_confusion_csv, write_metrics_csv, write_report_json)
from .leap_features import ANGLE_COLUMNS, derive_angles_matrix, read_frames_csv, write_frames_csv
from .network import FusionModel, ModelShape, TrainConfig, fit, load_checkpoint, predict_proba, save_checkpoint
from .pipeline import fit_scaler, prepare_arrays
from .preprocessing import AugmentParams, MinMaxScaler, impute_nan

log = logging.getLogger("signfusion")

CHECKPOINT = "checkpoint.model"
SCALER = "scaler.json"
HISTORY = "history.csv"
REPORT_TXT = "report.txt"
REPORT_JSON = "report.json"
CONFUSION = "confusion.csv"
METRICS = "metrics.csv"
ABLATION = "ablation.csv"
MANIFEST = "manifest.json"

DEFAULTS = {
    "corpus_root": None,
    "output_dir": None,
    "seed": None,
    "split_seed": None,
    "train_frac": 0.70,
    "val_frac": 0.15,
    "test_frac": 0.15,
    "epochs": 75,
    "learning_rate": 1e-3,
    "rms_decay": 0.9,
    "rms_epsilon": 1e-7,
    "batch_size": 8,
    "dropout_rate": 0.2,
    "l2_lambda": 0.01,
    "modality": "fusion",
    "augment": True,
    "rotation_max_deg": 15.0,
    "zoom_low": 0.9,
    "zoom_high": 1.1,
    "contrast_low": 0.8,
    "contrast_high": 1.2,
    "image_size": 224,
    "representative_frame": 36,
    "leap_units": [512, 256, 128],
    "head_units": [256, 128],
    "backbone_channels": [8, 16, 32],
    "backbone_dim": 128,
    "backbone_pooling": "flatten",
    "backbone_weights": None,
    "freeze_backbone": None,
    "report_formats": ["json", "csv", "text"],
}


# --- config ------------------------------------------------------------------

def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(path=None, overrides=()):
    cfg = dict(DEFAULTS)
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                user = json.load(fh)
        except FileNotFoundError:
            raise ConfigError("config", f"file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"invalid JSON: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigError("config", "top level must be a JSON object")
        cfg.update(user)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(item, "override must look like key=value")
        key, value = item.split("=", 1)
        cfg[key.strip()] = _parse_value(value)
    return validate_config(cfg)


def validate_config(cfg):
    for key in cfg:
        if key not in DEFAULTS:
            raise ConfigError(key, "unknown configuration key")
    for key in ("corpus_root", "output_dir"):
        if not cfg[key]:
            raise ConfigError(key, "is required")
    if not Path(cfg["corpus_root"]).is_dir():
        raise ConfigError("corpus_root", f"directory does not exist: {cfg['corpus_root']}")
    if cfg["seed"] is None:
        raise ConfigError("seed", "is required (all randomness is seeded explicitly)")
    if cfg["split_seed"] is None:
        cfg["split_seed"] = cfg["seed"]
    if cfg["backbone_weights"] is not None and not Path(cfg["backbone_weights"]).is_file():
        raise ConfigError("backbone_weights", f"file does not exist: {cfg['backbone_weights']}")
    bad = set(cfg["report_formats"]) - {"json", "csv", "text"}
    if bad:
        raise ConfigError("report_formats", f"unknown formats {sorted(bad)}")
    for key in ("split", "train"):
        try:
            split_spec(cfg) if key == "split" else train_config(cfg)
        except (ValueError, TypeError) as exc:
            raise ConfigError(_guess_key(str(exc), cfg), str(exc)) from None
    return cfg


def _guess_key(message, cfg):
    for key in cfg:
        if key in message:
            return key
    return "config"


def split_spec(cfg):
    return SplitSpec(cfg["train_frac"], cfg["val_frac"], cfg["test_frac"], int(cfg["split_seed"]))


def train_config(cfg):
    aug = None
    if cfg["augment"]:
        aug = AugmentParams(float(cfg["rotation_max_deg"]), (cfg["zoom_low"], cfg["zoom_high"]),
                            (cfg["contrast_low"], cfg["contrast_high"]), int(cfg["seed"]))
    return TrainConfig(int(cfg["epochs"]), float(cfg["learning_rate"]), float(cfg["rms_decay"]),
                       float(cfg["rms_epsilon"]), int(cfg["batch_size"]), float(cfg["dropout_rate"]),
                       float(cfg["l2_lambda"]), int(cfg["seed"]), aug, cfg["modality"])


def model_shape(cfg, samples, n_classes):
    frozen = cfg["freeze_backbone"]
    if frozen is None:
        frozen = cfg["backbone_weights"] is not None
    s = samples[0]
    return ModelShape(
        n_frames=s.frames.shape[0], n_features=s.frames.shape[1], image_size=int(cfg["image_size"]),
        n_classes=n_classes, leap_units=tuple(cfg["leap_units"]), head_units=tuple(cfg["head_units"]),
        backbone={"channels": list(cfg["backbone_channels"]), "out_dim": int(cfg["backbone_dim"]),
                  "pooling": cfg["backbone_pooling"], "frozen": bool(frozen)},
    )


def new_model(cfg, shape, tc):
    model = FusionModel(shape, tc.dropout_rate, tc.l2_lambda, seed=tc.seed)
    if cfg["backbone_weights"] is not None:
        load_backbone_weights(model, cfg["backbone_weights"], freeze=shape.backbone["frozen"])
    return model


# --- hashing / manifests ----------------------------------------------------

def git_blob_hash(data: bytes) -> str:
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def tree_hash(root) -> str:
    """Content hash over every file under ``root`` (relative path + blob hash)."""
    root = Path(root)
    h = hashlib.sha1()
    for p in sorted(q for q in root.rglob("*") if q.is_file()):
        h.update(p.relative_to(root).as_posix().encode("utf-8") + b"\0")
        h.update(git_blob_hash(p.read_bytes()).encode("ascii") + b"\n")
    return h.hexdigest()


def file_hash(path):
    return git_blob_hash(Path(path).read_bytes())


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, ensure_ascii=False, indent=2, sort_keys=True)
        fh.write("\n")


def _load(cfg):
    return load_dataset(cfg["corpus_root"], image_size=int(cfg["image_size"]),
                        representative_frame=int(cfg["representative_frame"]))


def _epoch_logger(prefix=""):
    def _log(rec):
        log.info("%sepoch %d  loss %.4f  acc %.3f  val_loss %.4f  val_acc %.3f", prefix, rec.epoch,
                 rec.train_loss, rec.train_accuracy, rec.val_loss, rec.val_accuracy)
    return _log


# --- subcommands -------------------------------------------------------------

def cmd_synth(args):
    labels, samples = generate_synthetic(args.out, args.classes, args.reps, args.mode, args.seed,
                                         noise=args.noise, image_size=args.image_size,
                                         image_noise=args.image_noise)
    manifest_path = Path(args.out) / MANIFEST
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    summary = {"root": str(args.out), "classes": len(labels), "repetitions": args.reps,
               "samples": len(samples), "mode": args.mode, "leap_parts": manifest["leap_parts"],
               "image_parts": manifest["image_parts"], "manifest_hash": file_hash(manifest_path)}
    print(json.dumps(summary, ensure_ascii=False))
    return 0


def cmd_extract(args):
    frames, stamps = read_frames_csv(args.input, with_timestamps=True)
    n_nan = int(np.isnan(frames).sum())
    if args.impute:
        frames = impute_nan(frames)
    derived = derive_angles_matrix(frames)
    cols = list(ANGLE_COLUMNS)
    with np.errstate(invalid="ignore"):
        drift = np.abs(derived[:, cols] - frames[:, cols])
    max_drift = float(np.nanmax(drift)) if drift.size and not np.all(np.isnan(drift)) else 0.0
    out = args.out or args.input
    write_frames_csv(out, derived, stamps)
    print(json.dumps({"input": str(args.input), "output": str(out), "rows": int(frames.shape[0]),
                      "nan_values": n_nan, "imputed": bool(args.impute), "max_angle_change": max_drift}))
    return 0


def cmd_train(args):
    cfg = load_config(args.config, _overrides(args))
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    labels, samples = _load(cfg)
    if not samples:
        raise ConfigError("corpus_root", "corpus holds no samples")
    split = split_spec(cfg)
    tc = train_config(cfg)
    train, val, test = stratified_split(samples, split, labels)
    scaler = fit_scaler(train)
    model = new_model(cfg, model_shape(cfg, samples, len(labels)), tc)
    model, history = fit(model, prepare_arrays(train, scaler), prepare_arrays(val, scaler), tc,
                         log=_epoch_logger())
    scaler.save(out / SCALER)
    history.to_csv(out / HISTORY)
    save_checkpoint(out / CHECKPOINT, model, labels, tc,
                    scaler_ref={"path": SCALER, "hash": file_hash(out / SCALER)},
                    extra={"split": {"train_frac": split.train_frac, "val_frac": split.val_frac,
                                     "test_frac": split.test_frac, "seed": split.seed},
                           "representative_frame": int(cfg["representative_frame"])})
    X, imgs, y = prepare_arrays(test, scaler)
    test_acc = float((predict_proba(model, X, imgs, tc.modality).argmax(axis=1) == y).mean())
    manifest = {
        "command": "train",
        "config": cfg,
        "backend": kernels.BACKEND,
        "inputs": {"corpus": tree_hash(cfg["corpus_root"]),
                   **({"config": file_hash(args.config)} if args.config else {})},
        "outputs": {name: file_hash(out / name) for name in (CHECKPOINT, SCALER, HISTORY)},
        "split": split_manifest(train, val, test),
        "final_epoch": vars(history[-1]),
        "test_accuracy": test_acc,
    }
    write_json(out / MANIFEST, manifest)
    print(json.dumps({"output_dir": str(out), "epochs": len(history), "final": vars(history[-1]),
                      "test_accuracy": test_acc}))
    return 0


def cmd_evaluate(args):
    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        raise ConfigError("checkpoint", f"file does not exist: {ckpt}")
    model, meta = load_checkpoint(ckpt)
    scaler_path = Path(args.scaler) if args.scaler else ckpt.parent / (meta.get("scaler") or {}).get("path", SCALER)
    scaler = MinMaxScaler.load(scaler_path)
    rep = meta.get("representative_frame", 36)
    labels, samples = load_dataset(args.corpus, image_size=model.shape.image_size, representative_frame=rep)
    if list(labels) != meta["labels"]:
        raise LabelTableMismatch(f"checkpoint has {len(meta['labels'])} labels {meta['labels'][:3]}..., "
                                 f"corpus has {len(labels)} {list(labels)[:3]}...")
    sm = meta.get("split") or {}
    seed = args.split_seed if args.split_seed is not None else sm.get("seed", 0)
    split = SplitSpec(sm.get("train_frac", 0.7), sm.get("val_frac", 0.15), sm.get("test_frac", 0.15), seed)
    _, _, test = stratified_split(samples, split, labels)
    modality = (meta.get("train_config") or {}).get("modality", "fusion")
    X, imgs, y = prepare_arrays(test, scaler)
    pred = predict_proba(model, X, imgs, modality).argmax(axis=1)
    report = evaluate_predictions(y, pred, labels)
    out = Path(args.output_dir) if args.output_dir else ckpt.parent
    out.mkdir(parents=True, exist_ok=True)
    formats = set(args.formats.split(",")) if args.formats else {"json", "csv", "text"}
    written = []
    if "text" in formats:
        (out / REPORT_TXT).write_text(format_report(report, labels), encoding="utf-8")
        written.append(REPORT_TXT)
    if "json" in formats:
        write_report_json(out / REPORT_JSON, report, labels)
        written.append(REPORT_JSON)
    if "csv" in formats:
        write_confusion_csv(out / CONFUSION, report.confusion, labels)
        write_metrics_csv(out / METRICS, report)
        written += [CONFUSION, METRICS]
    print(format_report(report, labels), end="")
    print(json.dumps({"accuracy": report.accuracy, "written": written}))
    return 0


def cmd_ablate(args):
    cfg = load_config(args.config, _overrides(args))
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    labels, samples = _load(cfg)
    if not samples:
        raise ConfigError("corpus_root", "corpus holds no samples")
    tc = train_config(cfg)
    shape = model_shape(cfg, samples, len(labels))
    if cfg["backbone_weights"] is not None:
        raise ConfigError("backbone_weights", "ablate trains from scratch; external weights are not supported here")
    result = ablate(labels, samples, split_spec(cfg), tc, shape=shape,
                    log=lambda m, r: _epoch_logger(f"[{m}] ")(r))
    write_ablation_csv(out / ABLATION, result.accuracy)
    outputs = {ABLATION: file_hash(out / ABLATION)}
    for modality, run in result.runs.items():
        name = f"checkpoint_{modality}.model"
        save_checkpoint(out / name, run.model, labels, replace(tc, modality=modality),
                        scaler_ref={"path": SCALER}, extra={"split": {"seed": int(cfg["split_seed"])}})
        outputs[name] = file_hash(out / name)
    next(iter(result.runs.values())).scaler.save(out / SCALER)
    write_json(out / MANIFEST, {"command": "ablate", "config": cfg, "backend": kernels.BACKEND,
                                "inputs": {"corpus": tree_hash(cfg["corpus_root"])}, "outputs": outputs,
                                "split": result.split, "accuracy": result.accuracy})
    print(json.dumps(result.accuracy))
    return 0


def cmd_report(args):
    report = read_report_json(args.report_json)
    text = format_report(report)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def _overrides(args):
    items = list(args.set or [])
    for flag in ("corpus_root", "output_dir", "seed", "epochs", "modality"):
        v = getattr(args, flag, None)
        if v is not None:
            items.append(f"{flag}={json.dumps(v)}")
    return items


def build_parser():
    ap = argparse.ArgumentParser(prog="signfusion", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a deterministic synthetic corpus")
    p.add_argument("--classes", type=int, default=18)
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--mode", choices=("joint", "split_signal"), default="joint")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--noise", type=float, default=2.0, help="leap position noise std (mm)")
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--image-noise", type=float, default=20.0, help="pixel noise std (0-255 scale)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", help="validate a frames CSV and re-derive the angle features")
    p.add_argument("input", type=Path)
    p.add_argument("--out", type=Path)
    p.add_argument("--impute", action="store_true", help="replace NaN with 0 before deriving")
    p.set_defaults(func=cmd_extract)

    for name, func, help_ in (("train", cmd_train, "train a model from a run config"),
                              ("ablate", cmd_ablate, "train leap-only, image-only and fusion models")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", type=Path)
        p.add_argument("--set", action="append", metavar="KEY=VALUE")
        p.add_argument("--corpus-root", dest="corpus_root")
        p.add_argument("--output-dir", dest="output_dir")
        p.add_argument("--seed", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--modality", choices=("fusion", "leap_only", "image_only"))
        p.set_defaults(func=func)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on the test split of a corpus")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--split-seed", type=int)
    p.add_argument("--scaler", type=Path)
    p.add_argument("--output-dir", type=Path)
    p.add_argument("--formats", help="comma list of json,csv,text")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="re-format an existing report.json")
    p.add_argument("report_json", type=Path)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: config key {exc.key!r}: {exc}", file=sys.stderr)
        return 2
    except (SignFusionError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
