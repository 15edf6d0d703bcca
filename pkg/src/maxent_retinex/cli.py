"""Command-line entry point: ``maxent-retinex <command> ...``."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .core import ImageIOError, list_images, load_image, save_image
from .metrics import aggregate, evaluate_pairs, format_table, he_baseline, to_csv, to_json
from .network import forward, load_checkpoint
from .training import (CheckpointWriter, IngestionError, TrainConfig, dataset_from_paths,
                       ingest_dataset, repeated_stability_run, spread, train)

log = logging.getLogger("maxent_retinex")

# flag name -> TrainConfig field
TRAIN_FLAGS = {"epochs": "epochs", "batch": "batch_size", "patch": "patch_size",
               "lr": "learning_rate", "seed": "seed", "eval_every": "eval_every",
               "he_scope": "he_scope", "final_relu": "final_relu"}


class CommandError(Exception):
    pass


def _fail(msg: str, code: int = 1) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return code


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def resolve_config(args, mode: str) -> TrainConfig:
    """defaults < --config file < explicit flags."""
    values = {"mode": mode}
    if getattr(args, "config", None):
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CommandError(f"cannot read config {args.config}: {exc}")
        known = {f.name for f in fields(TrainConfig)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise CommandError(f"unknown config keys: {unknown}")
        values.update(data)
        values["mode"] = mode
    for flag, key in TRAIN_FLAGS.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[key] = v
    try:
        return TrainConfig(**values)
    except (TypeError, ValueError) as exc:
        raise CommandError(str(exc))


def _write_jsonl_line(path: Path, obj):
    with path.open("a") as fh:
        fh.write(json.dumps(obj, sort_keys=True) + "\n")


def _load_test_set(low_dir, ref_dir):
    ds = ingest_dataset(low_dir, ref_dir)
    return ds.low_images(), (ds.ref_images() if ref_dir else None), ds.names()


def cmd_train(args) -> int:
    if not args.low_dir and not args.single_image:
        return _fail("train needs --low-dir or --single-image", 2)
    if args.low_dir and args.single_image:
        return _fail("--low-dir and --single-image are mutually exclusive", 2)
    mode = "single-image" if args.single_image else "dataset"
    try:
        config = resolve_config(args, mode)
        if args.single_image:
            dataset = dataset_from_paths([Path(args.single_image)])
        else:
            dataset = ingest_dataset(args.low_dir, args.ref_dir)
        test_set = None
        if args.test_low_dir:
            test_set = _load_test_set(args.test_low_dir, args.test_ref_dir)
        elif dataset.has_references:
            test_set = (dataset.low_images(), dataset.ref_images(), dataset.names())
    except (CommandError, IngestionError, ImageIOError, ValueError) as exc:
        return _fail(str(exc))

    out = Path(args.out)
    ckpt_dir = out / "checkpoints"
    out.mkdir(parents=True, exist_ok=True)
    model = None
    if args.resume:
        try:
            model = load_checkpoint(args.resume, learning_rate=config.learning_rate)
        except (OSError, ValueError) as exc:
            return _fail(f"cannot resume: {exc}")
    else:
        for name in ("train_log.jsonl", "timing.jsonl", "eval_curves.jsonl"):
            (out / name).unlink(missing_ok=True)

    manifest = {
        "tool": "maxent-retinex",
        "version": __version__,
        "command": "train",
        "config": config.to_dict(),
        "resume_from": str(args.resume) if args.resume else None,
        "dataset": {
            "mode": mode,
            "images": [{"name": e.name, "sha256": sha256_file(e.low_path)} for e in dataset.entries],
            "references": [{"name": e.ref_path.name, "sha256": sha256_file(e.ref_path)}
                           for e in dataset.entries if e.ref_path is not None],
        },
        "layout": {"checkpoints": "checkpoints/epoch_NNNNN.pt", "train_log": "train_log.jsonl",
                   "timing": "timing.jsonl", "eval_curves": "eval_curves.jsonl",
                   "figures": "figures/"},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    def eval_hook(record):
        m = record.metrics.to_dict()
        m.pop("wall_time_s")
        m.pop("name")
        _write_jsonl_line(out / "eval_curves.jsonl", {"epoch": record.epoch, **m})

    writer = CheckpointWriter(ckpt_dir, config.eval_every, config.epochs,
                              test_set=test_set, eval_hook=eval_hook)

    def on_epoch(model_, record):
        writer(model_, record)
        _write_jsonl_line(out / "train_log.jsonl", record.to_dict(include_timing=False))
        _write_jsonl_line(out / "timing.jsonl", {"epoch": record.epoch, "seconds": record.seconds})
        if args.verbose:
            print(f"epoch {record.epoch:5d}  loss {record.loss:.6f}  ({record.seconds:.2f}s)")

    try:
        model, _ = train(dataset, config, model=model, on_epoch=on_epoch)
    except Exception as exc:  # noqa: BLE001 - report and exit non-zero
        return _fail(f"training failed: {exc}")

    if args.plot:
        _plot_training(out)
    print(f"trained {model.epoch} epochs; checkpoints in {ckpt_dir}")
    return 0


def _read_jsonl(path: Path) -> list:
    if not path.exists():
        return []
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


def _plot_training(out: Path):
    from . import plotting

    records = _read_jsonl(out / "train_log.jsonl")
    if records:
        plotting.plot_loss_curve(records, out / "figures" / "loss.png")
        plotting.plot_loss_components(records, out / "figures" / "loss_components.png")
    curves = _read_jsonl(out / "eval_curves.jsonl")
    if curves:
        plotting.plot_metric_curves([{"epoch": c["epoch"], "metrics": c} for c in curves],
                                    out / "figures" / "metric_curves.png")


def _gather_inputs(path: Path):
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.is_file())
        return files
    if path.is_file():
        return [path]
    raise CommandError(f"{path}: no such file or directory")


def cmd_enhance(args) -> int:
    try:
        model = load_checkpoint(args.model)
    except (OSError, ValueError) as exc:
        return _fail(f"cannot load model: {exc}")
    try:
        inputs = _gather_inputs(Path(args.inp))
    except CommandError as exc:
        return _fail(str(exc))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    skipped = []
    for path in inputs:
        try:
            img = load_image(path)
        except ImageIOError as exc:
            skipped.append((path, str(exc)))
            continue
        t0 = time.perf_counter()
        dec = forward(model, img)
        enhanced = np.clip(dec.reflectance, 0.0, 1.0)
        dt = time.perf_counter() - t0
        save_image(enhanced, out / f"{path.stem}.png")
        if args.save_decomposition:
            save_image(np.clip(dec.reflectance, 0, 1), out / f"{path.stem}_reflectance.png")
            save_image(np.clip(dec.illumination, 0, 1), out / f"{path.stem}_illumination.png")
        print(f"{path.name}\t{dt:.4f}s")
    for path, why in skipped:
        print(f"skipped {path}: {why}", file=sys.stderr)
    if not inputs:
        return _fail("no input images")
    return 1 if skipped else 0


def _pair(dir_a: Path, dir_b: Path):
    a = {p.name: p for p in list_images(dir_a)}
    b = {p.name: p for p in list_images(dir_b)}
    unmatched = sorted(set(a) ^ set(b))
    if unmatched:
        raise CommandError(f"unpaired files between {dir_a} and {dir_b}: {unmatched}")
    return [a[k] for k in sorted(a)], [b[k] for k in sorted(a)]


def write_report(out: Path, mean, rows, include_time: bool, plot: bool):
    out.mkdir(parents=True, exist_ok=True)
    table = format_table([*rows, mean], include_time=include_time)
    (out / "report.txt").write_text(table)
    (out / "report.csv").write_text(to_csv([*rows, mean]))
    (out / "report.json").write_text(to_json(mean, rows))
    if plot:
        from . import plotting
        plotting.plot_metric_bars(mean, out / "figures" / "mean_metrics.png")
    return table


def cmd_evaluate(args) -> int:
    try:
        enh_paths, low_paths = _pair(Path(args.enhanced), Path(args.low))
        ref_paths = None
        if args.ref:
            _, ref_paths = _pair(Path(args.enhanced), Path(args.ref))
        if not enh_paths:
            raise CommandError("no images to evaluate")
        enh = [load_image(p) for p in enh_paths]
        low = [load_image(p) for p in low_paths]
        ref = [load_image(p) for p in ref_paths] if ref_paths else None
        mean, rows = evaluate_pairs(enh, low, ref, names=[p.name for p in enh_paths])
    except (CommandError, ImageIOError, ValueError) as exc:
        return _fail(str(exc))
    print(write_report(Path(args.out), mean, rows, include_time=False, plot=args.plot), end="")
    return 0


def cmd_baseline(args) -> int:
    src = Path(args.inp)
    try:
        inputs = _gather_inputs(src)
    except CommandError as exc:
        return _fail(str(exc))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    skipped = []
    for path in inputs:
        try:
            img = load_image(path)
        except ImageIOError as exc:
            skipped.append((path, str(exc)))
            continue
        t0 = time.perf_counter()
        result = he_baseline(img)
        dt = time.perf_counter() - t0
        save_image(result, out / f"{path.stem}.png")
        print(f"{path.name}\t{dt:.4f}s")
    for path, why in skipped:
        print(f"skipped {path}: {why}", file=sys.stderr)
    if len(inputs) == len(skipped):
        return _fail(f"{src}: no readable images")
    return 1 if skipped else 0


def cmd_stability(args) -> int:
    try:
        config = resolve_config(args, "dataset")
        dataset = ingest_dataset(args.low_dir)
        lows, refs, _ = _load_test_set(args.test_low_dir, args.test_ref_dir)
        reports = repeated_stability_run(dataset, config, args.runs, lows, refs)
    except (CommandError, IngestionError, ImageIOError, ValueError) as exc:
        return _fail(str(exc))
    out = Path(args.out)
    table = write_report(out, aggregate(reports, "mean"), reports, include_time=True, plot=False)
    (out / "spread.json").write_text(json.dumps(spread(reports), indent=2, sort_keys=True) + "\n")
    if args.plot:
        from . import plotting
        plotting.plot_stability(reports, out / "figures" / "stability.png")
    print(table, end="")
    return 0


def _add_train_flags(p):
    p.add_argument("--config", help="JSON file with TrainConfig fields")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--patch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--eval-every", type=int)
    p.add_argument("--he-scope", choices=("full-image", "per-patch"))
    p.add_argument("--final-relu", action="store_true", default=None,
                   help="keep the ReLU between the last conv and the sigmoid")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="maxent-retinex",
                                     description="Self-supervised max-entropy Retinex enhancement")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the decomposition network on low-light images")
    p.add_argument("--low-dir")
    p.add_argument("--ref-dir", help="references, used only for evaluation snapshots")
    p.add_argument("--single-image", help="train on crops of this one image")
    p.add_argument("--test-low-dir")
    p.add_argument("--test-ref-dir")
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--plot", action="store_true", help="render figures into OUT/figures")
    p.add_argument("-v", "--verbose", action="store_true")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("enhance", help="enhance images with a trained checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--save-decomposition", action="store_true")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("evaluate", help="score enhanced images")
    p.add_argument("--enhanced", required=True)
    p.add_argument("--low", required=True)
    p.add_argument("--ref")
    p.add_argument("--out", required=True)
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("baseline-he", help="per-channel histogram equalization baseline")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("stability", help="repeat training with fresh seeds and compare")
    p.add_argument("--low-dir", required=True)
    p.add_argument("--test-low-dir", required=True)
    p.add_argument("--test-ref-dir")
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--out", required=True)
    p.add_argument("--plot", action="store_true")
    _add_train_flags(p)
    p.set_defaults(func=cmd_stability)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
