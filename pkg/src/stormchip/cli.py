"""Command-line surface wiring the pipeline end to end.

Subcommands: crop, split, train, eval, annotate, inspect, gradcheck.
Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
check failure.  Options may come from a key=value config file
(--config); command-line flags override file values, and every run logs
the fully resolved configuration to stderr.  Unknown config keys are
rejected.
"""

import argparse
import math
import os
import sys
import time

import numpy as np

from .augment import AugmentConfig
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint, write_annotations
from .gradcheck import run_suite
from .metrics import (UndefinedAUCError, accuracy_at, evaluate, misclassification_export,
                      write_misclassifications, write_report, write_roc_csv)
from .net import (Network, ShapeError, build_damage_cnn, build_lr_head, build_vgg16_like,
                  extract_features, forward, export_activation_maps, predict_probs)
from .optim import OptimizerConfig, TrainConfig, fit, initialize_network, write_history_csv
from .ops import resize_bilinear
from .pipeline import (DataError, QualityThresholds, SplitSpec, build_manifest, load_chip_png,
                       make_splits, read_buildings_csv, read_exclusion_file, read_manifest,
                       rows_for_split, write_manifest)


class ConfigError(Exception):
    """Bad option, bad config key, or inconsistent settings."""


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# Every key a run config file may set, with its parser.
CONFIG_SCHEMA = {
    "batch_size": int, "epochs": int, "seed": int,
    "optimizer": str, "learning_rate": float, "l2_lambda": float,
    "rmsprop_decay": float, "adam_beta1": float, "adam_beta2": float, "epsilon": float,
    "dropout_variant": str, "activation_variant": str, "leaky_alpha": float,
    "augment_enabled": _bool, "rotation_deg_max": float, "horizontal_flip": _bool,
    "shift_frac_max": float, "shear_frac_max": float, "zoom_frac_max": float,
    "window_px": int, "input_size": int, "model": str, "threshold": float,
    "black_pixel": float, "cloud_luma": float, "cloud_sat": float,
    "max_black_fraction": float, "max_cloud_score": float,
    "train_per_class": int, "val_per_class": int, "test_balanced_per_class": int,
    "test_unbalanced_pos": int, "test_unbalanced_neg": int, "split_seed": int,
}


def default_config():
    opt = OptimizerConfig()
    train = TrainConfig()
    aug = AugmentConfig()
    split = SplitSpec()
    quality = QualityThresholds()
    return {
        "batch_size": train.batch_size, "epochs": train.epochs, "seed": train.seed,
        "optimizer": opt.kind, "learning_rate": opt.learning_rate, "l2_lambda": opt.l2_lambda,
        "rmsprop_decay": opt.rmsprop_decay, "adam_beta1": opt.adam_beta1,
        "adam_beta2": opt.adam_beta2, "epsilon": None,
        "dropout_variant": train.dropout_variant, "activation_variant": train.activation_variant,
        "leaky_alpha": 0.1,
        "augment_enabled": aug.enabled, "rotation_deg_max": aug.rotation_deg_max,
        "horizontal_flip": aug.horizontal_flip, "shift_frac_max": aug.shift_frac_max,
        "shear_frac_max": aug.shear_frac_max, "zoom_frac_max": aug.zoom_frac_max,
        "window_px": 128, "input_size": 150, "model": "cnn", "threshold": 0.5,
        "black_pixel": quality.black_pixel, "cloud_luma": quality.cloud_luma,
        "cloud_sat": quality.cloud_sat, "max_black_fraction": quality.max_black_fraction,
        "max_cloud_score": quality.max_cloud_score,
        "train_per_class": split.train_per_class, "val_per_class": split.val_per_class,
        "test_balanced_per_class": split.test_balanced_per_class,
        "test_unbalanced_pos": split.test_unbalanced_pos,
        "test_unbalanced_neg": split.test_unbalanced_neg, "split_seed": split.seed,
    }


def parse_config_file(path):
    values = {}
    try:
        with open(path) as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                key, sep, value = line.partition("=")
                key, value = key.strip(), value.strip()
                if not sep or not key:
                    raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
                if key not in CONFIG_SCHEMA:
                    raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
                try:
                    values[key] = CONFIG_SCHEMA[key](value)
                except ValueError as exc:
                    raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return values


def resolve_config(args, overrides=None):
    """defaults <- config file <- CLI flags, logged to stderr."""
    cfg = default_config()
    if getattr(args, "config", None):
        cfg.update(parse_config_file(args.config))
    for key, value in (overrides or {}).items():
        if value is not None:
            cfg[key] = value
    for key in sorted(cfg):
        print(f"config {key}={cfg[key]}", file=sys.stderr)
    return cfg


def _train_config(cfg):
    optimizer = OptimizerConfig(kind=cfg["optimizer"], learning_rate=cfg["learning_rate"],
                                rmsprop_decay=cfg["rmsprop_decay"],
                                adam_beta1=cfg["adam_beta1"], adam_beta2=cfg["adam_beta2"],
                                epsilon=cfg["epsilon"], l2_lambda=cfg["l2_lambda"])
    augmentation = AugmentConfig(rotation_deg_max=cfg["rotation_deg_max"],
                                 horizontal_flip=cfg["horizontal_flip"],
                                 shift_frac_max=cfg["shift_frac_max"],
                                 shear_frac_max=cfg["shear_frac_max"],
                                 zoom_frac_max=cfg["zoom_frac_max"],
                                 enabled=cfg["augment_enabled"])
    return TrainConfig(batch_size=cfg["batch_size"], epochs=cfg["epochs"], seed=cfg["seed"],
                       augmentation=augmentation, optimizer=optimizer,
                       dropout_variant=cfg["dropout_variant"],
                       activation_variant=cfg["activation_variant"])


def _quality(cfg):
    return QualityThresholds(black_pixel=cfg["black_pixel"], cloud_luma=cfg["cloud_luma"],
                             cloud_sat=cfg["cloud_sat"],
                             max_black_fraction=cfg["max_black_fraction"],
                             max_cloud_score=cfg["max_cloud_score"])


def _split_spec(cfg):
    return SplitSpec(train_per_class=cfg["train_per_class"], val_per_class=cfg["val_per_class"],
                     test_balanced_per_class=cfg["test_balanced_per_class"],
                     test_unbalanced_pos=cfg["test_unbalanced_pos"],
                     test_unbalanced_neg=cfg["test_unbalanced_neg"], seed=cfg["split_seed"])


def _load_split_arrays(records, manifest_dir, split_name, input_size):
    rows = rows_for_split(records, split_name)
    if not rows:
        raise DataError(f"split {split_name!r} has no rows")
    chips = []
    labels = []
    for row in rows:
        chip = load_chip_png(os.path.join(manifest_dir, row.chip_path))
        if chip.shape[1:] != (input_size, input_size):
            chip = resize_bilinear(chip, input_size, input_size)
        chips.append(chip)
        labels.append(1.0 if row.label == "damaged" else 0.0)
    return np.stack(chips), np.asarray(labels, dtype=np.float32), rows


def cmd_crop(args):
    cfg = resolve_config(args, {"window_px": args.window})
    buildings = read_buildings_csv(args.buildings, require_label=True)
    excluded = read_exclusion_file(args.exclusions) if args.exclusions else None
    os.makedirs(args.out, exist_ok=True)
    records = build_manifest(args.strips, buildings, cfg["window_px"], args.out,
                             thresholds=_quality(cfg), operator_excluded=excluded)
    kept = sum(1 for r in records if not r.excluded)
    print(f"crop: {kept}/{len(records)} usable chips -> {os.path.join(args.out, 'manifest.csv')}",
          file=sys.stderr)
    return 0


def cmd_split(args):
    cfg = resolve_config(args, {"split_seed": args.seed})
    records = read_manifest(args.manifest)
    records = make_splits(records, _split_spec(cfg))
    write_manifest(records, args.out)
    print(f"split: wrote {args.out}", file=sys.stderr)
    return 0


def _build_model(cfg, input_size):
    activation = cfg["activation_variant"]
    alpha = cfg["leaky_alpha"]
    if cfg["model"] == "cnn":
        net = build_damage_cnn(dropout=cfg["dropout_variant"], activation=activation, alpha=alpha)
        if input_size != 150:
            net = Network(net.layers, (3, input_size, input_size))
        return net
    if cfg["model"] == "vgg":
        return build_vgg16_like((3, input_size, input_size), dropout=cfg["dropout_variant"],
                                activation=activation, alpha=alpha)
    raise ConfigError(f"unknown model {cfg['model']!r}")


def _train_lr(args, cfg, records, manifest_dir):
    """Logistic regression over frozen conv-stack features."""
    input_size = cfg["input_size"]
    if args.features_ckpt:
        extractor = load_checkpoint(args.features_ckpt)
        input_size = extractor.input_shape[-1]
    else:
        extractor = build_damage_cnn(dropout="none", activation=cfg["activation_variant"],
                                     alpha=cfg["leaky_alpha"])
        if input_size != 150:
            extractor = Network(extractor.layers, (3, input_size, input_size))
        initialize_network(extractor, np.random.default_rng(cfg["seed"]))
    x_train, y_train, _ = _load_split_arrays(records, manifest_dir, "train", input_size)
    x_val, y_val, _ = _load_split_arrays(records, manifest_dir, "val", input_size)
    f_train = extract_features(extractor, x_train)
    f_val = extract_features(extractor, x_val)
    head = build_lr_head(f_train.shape[1])
    initialize_network(head, np.random.default_rng(cfg["seed"]))
    train_cfg = _train_config(cfg)
    # Features are fixed vectors; geometric augmentation does not apply.
    train_cfg.augmentation.enabled = False
    head, history = fit(head, (f_train, y_train), (f_val, y_val), train_cfg)

    flat_end = next(i for i, s in enumerate(extractor.layers) if s.kind == "flatten") + 1
    full = Network(extractor.layers[:flat_end] + head.layers, extractor.input_shape)
    full.set_params(extractor.params[:flat_end] + head.params)
    return full, history, len(y_train)


def cmd_train(args):
    overrides = {"epochs": args.epochs, "batch_size": args.batch_size, "seed": args.seed,
                 "optimizer": args.optimizer, "learning_rate": args.lr, "model": args.model}
    cfg = resolve_config(args, overrides)
    records = read_manifest(args.manifest)
    manifest_dir = os.path.dirname(os.path.abspath(args.manifest))

    start = time.perf_counter()
    if cfg["model"] == "lr":
        net, history, n_train = _train_lr(args, cfg, records, manifest_dir)
    else:
        input_size = cfg["input_size"]
        x_train, y_train, _ = _load_split_arrays(records, manifest_dir, "train", input_size)
        x_val, y_val, _ = _load_split_arrays(records, manifest_dir, "val", input_size)
        net = _build_model(cfg, input_size)
        initialize_network(net, np.random.default_rng(cfg["seed"]))
        net, history = fit(net, (x_train, y_train), (x_val, y_val), _train_config(cfg))
        n_train = len(y_train)
    elapsed = time.perf_counter() - start

    steps = cfg["epochs"] * math.ceil(n_train / cfg["batch_size"])
    print(f"train: {steps} steps in {elapsed:.1f}s ({elapsed / max(steps, 1):.3f}s/step)",
          file=sys.stderr)
    save_checkpoint(net, args.out)
    if net.best_params is not None:
        last = net.copy_params()
        net.set_params(net.best_params)
        save_checkpoint(net, args.out + ".best")
        net.set_params(last)
        print(f"train: best validation epoch {net.best_epoch} -> {args.out}.best", file=sys.stderr)
    write_history_csv(history, args.out + ".history.csv")
    final = history[-1]
    print(f"train: epoch {final.epoch} train_acc {final.train_acc:.4f} "
          f"val_acc {final.val_acc:.4f}", file=sys.stderr)
    return 0


def cmd_eval(args):
    cfg = resolve_config(args, {"threshold": args.threshold})
    net = load_checkpoint(args.ckpt)
    records = read_manifest(args.manifest)
    manifest_dir = os.path.dirname(os.path.abspath(args.manifest))
    x, y, rows = _load_split_arrays(records, manifest_dir, args.split, net.input_shape[-1])
    probs = predict_probs(net, x).ravel()
    threshold = cfg["threshold"]
    try:
        report = evaluate(probs, y, threshold)
    except UndefinedAUCError:
        report = accuracy_at(probs, y, threshold)
    print(f"accuracy {report.accuracy:.4f}")
    if report.auc is not None:
        print(f"auc {report.auc:.4f}")
    else:
        print("auc undefined (single-class split)")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_report(report, os.path.join(args.out, "report.txt"))
        if report.roc_points is not None:
            write_roc_csv(report.roc_points, os.path.join(args.out, "roc.csv"))
        missed = misclassification_export(rows, probs, threshold)
        write_misclassifications(missed, os.path.join(args.out, "misclassified.csv"))
    return 0


def cmd_annotate(args):
    cfg = resolve_config(args, {"window_px": args.window, "threshold": args.threshold})
    net = load_checkpoint(args.ckpt)
    buildings = read_buildings_csv(args.buildings, require_label=False)
    input_size = net.input_shape[-1]

    from .pipeline import WindowError, crop_window, find_strips, load_raster

    chips = {}
    for strip_id, image_path, sidecar_path, _ in find_strips(args.strips):
        pending = [b for b in buildings if b.id not in chips]
        if not pending:
            break
        raster, gt = load_raster(image_path, sidecar_path)
        for b in pending:
            try:
                chip = crop_window(raster, gt, b, cfg["window_px"])
            except WindowError:
                continue
            chips[b.id] = resize_bilinear(chip, input_size, input_size)
    annotated = [b for b in buildings if b.id in chips]
    skipped = len(buildings) - len(annotated)
    if skipped:
        print(f"annotate: no usable window for {skipped} building(s)", file=sys.stderr)
    if not annotated:
        raise DataError("no building could be cropped from the given strips")
    probs = predict_probs(net, np.stack([chips[b.id] for b in annotated])).ravel()
    write_annotations(annotated, probs, cfg["threshold"], args.out)
    print(f"annotate: wrote {len(annotated)} rows -> {args.out}", file=sys.stderr)
    return 0


def cmd_inspect(args):
    net = load_checkpoint(args.ckpt)
    chip = load_chip_png(args.chip)
    size = net.input_shape[-1]
    if chip.shape[1:] != (size, size):
        chip = resize_bilinear(chip, size, size)
    _, acts = forward(net, chip[None], mode="eval")
    try:
        layer_numbers = [int(tok) for tok in args.layers.split(",") if tok.strip()]
    except ValueError as exc:
        raise ConfigError(f"--layers expects comma-separated integers: {exc}") from exc
    os.makedirs(args.out, exist_ok=True)
    written = 0
    for number in layer_numbers:  # 1-based over the layer list
        if not 1 <= number <= len(net.layers):
            raise ConfigError(f"layer {number} out of range 1..{len(net.layers)}")
        try:
            paths = export_activation_maps(acts, number - 1, args.out, layer_label=number)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        written += len(paths)
    print(f"inspect: wrote {written} maps -> {args.out}", file=sys.stderr)
    return 0


def cmd_gradcheck(args):
    results = run_suite(seeds=args.seeds, seed_base=args.seed, tol=args.tol)
    failures = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.kind} seed={r.seed} max_rel_err={r.max_rel_error:.3e} {status}")
        failures += 0 if r.passed else 1
    print(f"gradcheck: {len(results) - failures}/{len(results)} checks passed")
    return 4 if failures else 0


def build_parser():
    parser = argparse.ArgumentParser(prog="stormchip",
                                     description="Building-damage annotation pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("crop", help="crop labeled chips from raster strips")
    p.add_argument("--strips", required=True, help="directory of raster+sidecar strips")
    p.add_argument("--buildings", required=True, help="csv of id,lon,lat,label")
    p.add_argument("--window", type=int, default=None, help="window size in pixels")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--exclusions", default=None, help="operator exclusion file")
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_crop)

    p = sub.add_parser("split", help="assign train/val/test splits in a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="path for the manifest with splits")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train a model on the manifest's train/val splits")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--model", choices=("cnn", "vgg", "lr"), default=None)
    p.add_argument("--features-ckpt", default=None,
                   help="feature extractor checkpoint for --model lr")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--optimizer", choices=("adam", "rmsprop"), default=None)
    p.add_argument("--lr", type=float, default=None, dest="lr")
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", required=True,
                   choices=("train", "val", "test_balanced", "test_unbalanced"))
    p.add_argument("--out", default=None, help="directory for report/roc/misclassified files")
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("annotate", help="annotate building coordinates from raw strips")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--buildings", required=True, help="csv of id,lon,lat")
    p.add_argument("--strips", required=True)
    p.add_argument("--out", required=True, help="annotation csv path")
    p.add_argument("--window", type=int, default=None)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("inspect", help="export activation maps for chosen layers")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--chip", required=True, help="chip png to push through the network")
    p.add_argument("--layers", required=True, help="comma-separated 1-based layer numbers")
    p.add_argument("--out", required=True, help="directory for the map PNGs")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("gradcheck", help="run the finite-difference gradient suite")
    p.add_argument("--seed", type=int, default=0, help="base seed")
    p.add_argument("--seeds", type=int, default=20, help="seeds per layer kind")
    p.add_argument("--tol", type=float, default=1e-5)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DataError, CheckpointError, ShapeError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
