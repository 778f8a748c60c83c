"""Command-line entry points: synth | pretrain | finetune | eval | report.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime error.
Every run directory receives the resolved ``config.json`` it was run with.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence


from .checkpoint import apply_optimizer, apply_params, load_checkpoint, save_checkpoint
from .config import MODALITIES, RunConfig, desk_run, paper_run
from .dataset_io import SyntheticSpec, generate_synthetic_dataset
from .errors import (
    AllNaN,
    ConfigError,
    EmptySplit,
    EviMAEError,
    InvalidParam,
    IoError,
    ManifestMismatch,
    MissingFile,
    ParseError,
    TooFewFrames,
    UnknownDevice,
)
from .imu_pipeline import NormStats
from .train_eval import (
    MetricsReport,
    evaluate,
    finetune,
    labeled_subset,
    make_optimizer,
    new_model,
    prepare_dataset,
    pretrain,
    protocol_device_missing,
    protocol_low_light,
    resolve_present,
)
from .train_eval.data import dataset_devices, fit_stats

log = logging.getLogger("evimae")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4
_CONFIG_ERRORS = (ConfigError, InvalidParam, UnknownDevice)
_DATA_ERRORS = (MissingFile, ParseError, ManifestMismatch, IoError, EmptySplit, TooFewFrames, AllNaN)

PROTOCOLS = ("standard", "device-missing", "low-light", "cross-dataset")
PRETRAIN_CKPT, FINETUNE_CKPT = "pretrain.ckpt", "finetune.ckpt"


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, _CONFIG_ERRORS):
        return EXIT_CONFIG
    if isinstance(exc, _DATA_ERRORS):
        return EXIT_DATA
    return EXIT_RUNTIME


# -- config resolution -------------------------------------------------------


def resolve_config(args) -> RunConfig:
    """Preset (or --config file) with command-line overrides applied."""
    if args.config:
        cfg = RunConfig.load(args.config)
    else:
        cfg = paper_run() if args.device_scale == "paper" else desk_run()
    if getattr(args, "data", None):
        cfg.data_dir = str(args.data)
    if getattr(args, "finetune_data", None):
        cfg.finetune_data_dir = str(args.finetune_data)
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.modality is not None:
        over["modality"] = args.modality
    if getattr(args, "no_graph", False):
        over["use_graph"] = False
    if over:
        cfg.pretrain = dataclasses.replace(cfg.pretrain, **over)
        cfg.finetune = dataclasses.replace(cfg.finetune, **over)
    if getattr(args, "epochs", None) is not None:
        which = "pretrain" if args.command == "pretrain" else "finetune"
        setattr(cfg, which, dataclasses.replace(getattr(cfg, which), epochs=args.epochs))
    if getattr(args, "missing_devices", None):
        cfg.finetune = dataclasses.replace(cfg.finetune, missing_devices=_split_list(args.missing_devices))
    if getattr(args, "labeled_fraction", None) is not None:
        cfg.protocol = dataclasses.replace(cfg.protocol, labeled_fraction=args.labeled_fraction)
    cfg.pretrain.validate()
    cfg.finetune.validate()
    if not cfg.data_dir:
        raise ConfigError("no dataset given: pass --data or set data_dir in the config")
    return cfg


def _split_list(text: str) -> list:
    return [t.strip() for t in text.split(",") if t.strip()]


def _out_dir(args) -> Path:
    if not args.out:
        raise ConfigError("--out is required")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def _write_stats(out: Path, cfg: RunConfig, ds) -> None:
    """Standalone copy of the preprocessing parameters for audits."""
    _write_json(out / "preprocess_stats.json", {"stft": dataclasses.asdict(cfg.stft), "norm": ds.stats.to_dict()})


def _meta(cfg: RunConfig, tc, ds, pretrained: bool, kind: str) -> dict:
    return {
        "config": cfg.to_dict(),
        "stats": ds.stats.to_dict(),
        "kind": kind,
        "modality": tc.modality,
        "use_graph": tc.use_graph,
        "pretrained": pretrained,
        "device_ids": list(ds.device_ids),
        "classes": list(ds.classes),
    }


def _model_from_checkpoint(ck, num_classes: Optional[int] = None, strict: bool = True):
    """Rebuild the model a checkpoint was written from."""
    ex = ck.extra
    if "modality" not in ex or "device_ids" not in ex:
        raise ConfigError("checkpoint lacks run metadata (modality/device_ids)")
    cfg = RunConfig.from_dict(ck.config)
    model = new_model(cfg, len(ex["device_ids"]), ex["modality"], ex["use_graph"], 0, num_classes=num_classes)
    if strict:
        apply_params(model, ck)
    else:
        apply_params(model, ck, strict=False, exclude=("head.",))
    return cfg, model


# -- commands ----------------------------------------------------------------


def cmd_synth(args) -> int:
    spec_path = Path(args.spec)
    if not spec_path.is_file():
        raise ConfigError(f"synthetic spec not found: {spec_path}")
    try:
        spec = SyntheticSpec.from_dict(json.loads(spec_path.read_text(encoding="utf-8")))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{spec_path}: invalid JSON ({exc})") from exc
    if args.seed is not None:
        spec.seed = args.seed
    out = _out_dir(args)
    generate_synthetic_dataset(spec, out)
    n = spec.num_classes * spec.clips_per_class
    print(f"wrote {n} clips to {out}")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    cfg = resolve_config(args)
    out = _out_dir(args)
    tc = cfg.pretrain
    cfg.save(out / "config.json")
    ds = prepare_dataset(cfg.data_dir, cfg, modality=tc.modality, splits=("pretrain", "train"))
    data = ds.get("pretrain", "train")
    _write_stats(out, cfg, ds)
    model = new_model(cfg, len(ds.device_ids), tc.modality, tc.use_graph, tc.seed)
    optimizer = make_optimizer(model, tc)
    start = 0
    ckpt_path = out / PRETRAIN_CKPT
    if args.resume:
        ck = load_checkpoint(args.resume)
        apply_params(model, ck)
        apply_optimizer(optimizer, ck)
        start = ck.step
        log.info("resuming from step %d", start)
    meta = _meta(cfg, tc, ds, False, "pretrain")
    spe = -(-len(data) // tc.batch_size)
    reports = pretrain(
        model,
        data,
        tc,
        optimizer=optimizer,
        log_path=out / "pretrain_log.csv",
        start_step=start,
        max_steps=args.max_steps,
        ckpt_path=ckpt_path,
        ckpt_every=spe,
        ckpt_meta=meta,
    )
    if reports:
        log.info("total loss %.4f -> %.4f over %d steps", reports[0].total, reports[-1].total, len(reports))
    print(ckpt_path)
    return EXIT_OK


def cmd_finetune(args) -> int:
    cfg = resolve_config(args)
    out = _out_dir(args)
    tc = cfg.finetune
    root = cfg.finetune_data_dir or cfg.data_dir
    cfg.save(out / "config.json")
    devices = dataset_devices(root)
    # unknown device names fail here, before anything heavy runs
    present = resolve_present(devices, tc.missing_devices)
    ck = None if args.init == "scratch" else load_checkpoint(args.init)
    if ck is not None and ck.extra.get("device_ids") not in (None, list(devices)):
        raise ConfigError(f"checkpoint devices {ck.extra['device_ids']} differ from dataset devices {devices}")
    stats = None
    if ck is not None and ck.stats and root == cfg.data_dir:
        stats = NormStats.from_dict(ck.stats)
    elif tc.modality != "video" and root != cfg.data_dir:
        stats = fit_stats(root, cfg, devices, split="train")
    ds = prepare_dataset(root, cfg, modality=tc.modality, splits=("train", "val", "test"), stats=stats)
    _write_stats(out, cfg, ds)
    C = len(ds.classes)
    model = new_model(cfg, len(devices), tc.modality, tc.use_graph, tc.seed, num_classes=C)
    if ck is not None:
        apply_params(model, ck, strict=False, exclude=("head.",))
    train = ds.get("train")
    if cfg.protocol.labeled_fraction < 1.0:
        train = labeled_subset(train, cfg.protocol.labeled_fraction, tc.seed, C)
    rows = []

    def on_epoch(rep, m):
        rows.append([rep.epoch, rep.loss, rep.train_accuracy, rep.lr, None if m is None else m.top1_accuracy, None if m is None else m.macro_map])

    _, best = finetune(model, train, tc, C, val=ds.splits.get("val"), present=present, keep_best=True, on_epoch=on_epoch)
    with open(out / "finetune_log.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss", "train_accuracy", "lr", "val_accuracy", "val_map"])
        w.writerows(rows)
    test = ds.splits.get("test")
    report = evaluate(model, test, C, present) if test is not None else best
    if report is None:
        raise EmptySplit("no val or test clips to report metrics on")
    meta = _meta(cfg, tc, ds, ck is not None, "finetune")
    meta["missing_devices"] = list(tc.missing_devices)
    save_checkpoint(out / FINETUNE_CKPT, model, config=meta.pop("config"), stats=meta.pop("stats"), epoch=tc.epochs, extra=meta)
    _write_metrics(out / "metrics.json", report, meta)
    print(out / FINETUNE_CKPT)
    return EXIT_OK


def _write_metrics(path: Path, report: MetricsReport, meta: dict, **more) -> None:
    d = report.to_dict()
    d["run"] = {k: meta[k] for k in ("modality", "use_graph", "pretrained") if k in meta}
    d["run"].update(more)
    _write_json(path, d)


def _write_sweep(path: Path, rows: Sequence[tuple]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["condition", "metric", "value"])
        w.writerows(rows)


def cmd_eval(args) -> int:
    if args.protocol not in PROTOCOLS:
        raise ConfigError(f"unknown protocol '{args.protocol}'")
    ck = load_checkpoint(args.checkpoint)
    out = _out_dir(args)
    ex = ck.extra
    cfg = RunConfig.from_dict(ck.config) if ck.config else desk_run()
    if args.data:
        cfg.data_dir = str(args.data)
    if getattr(args, "finetune_data", None):
        cfg.finetune_data_dir = str(args.finetune_data)
    if args.seed is not None:
        cfg.finetune = dataclasses.replace(cfg.finetune, seed=args.seed)
    cfg.save(out / "config.json")
    stats = NormStats.from_dict(ck.stats) if ck.stats else None
    modality = ex.get("modality", cfg.finetune.modality)
    meta = {"modality": modality, "use_graph": ex.get("use_graph", True), "pretrained": ex.get("pretrained", False)}

    if args.protocol == "standard":
        ds = prepare_dataset(cfg.finetune_data_dir or cfg.data_dir, cfg, modality=modality, splits=(args.split,), stats=stats)
        _, model = _model_from_checkpoint(ck, num_classes=len(ds.classes))
        present = resolve_present(ds.device_ids, ex.get("missing_devices", []))
        rep = evaluate(model, ds.get(args.split), len(ds.classes), present)
        _write_metrics(out / "metrics.json", rep, meta, protocol="standard")
        _write_sweep(out / "sweep.csv", [("standard", "accuracy", rep.top1_accuracy), ("standard", "map", rep.macro_map)])
        print(json.dumps({"accuracy": rep.top1_accuracy, "map": rep.macro_map}))
        return EXIT_OK

    if args.protocol == "low-light":
        ds = prepare_dataset(cfg.finetune_data_dir or cfg.data_dir, cfg, modality=modality, splits=(args.split,), stats=stats)
        _, model = _model_from_checkpoint(ck, num_classes=len(ds.classes))
        p = cfg.protocol
        levels = [float(v) for v in _split_list(args.light_levels)] if args.light_levels else p.light_levels
        present = resolve_present(ds.device_ids, ex.get("missing_devices", []))
        sweep = protocol_low_light(model, ds, cfg, levels, p.shot_strength, p.read_sigma, cfg.finetune.seed, args.split, present)
        rows = [(f"light={lv:g}", "accuracy", m.top1_accuracy) for lv, m in sweep]
        _write_sweep(out / "sweep.csv", rows)
        _write_json(out / "metrics.json", {f"{lv:g}": m.to_dict() for lv, m in sweep})
        for r in rows:
            print(*r, sep=",")
        return EXIT_OK

    if args.protocol == "device-missing":
        missing = _split_list(args.missing_devices) if args.missing_devices else cfg.protocol.missing_devices
        ds = prepare_dataset(cfg.data_dir, cfg, modality=modality, splits=("train", "test"), stats=stats)
        C = len(ds.classes)

        def factory():
            _, m = _model_from_checkpoint(ck, num_classes=C, strict=False)
            return m

        tc = dataclasses.replace(cfg.finetune, modality=modality, use_graph=meta["use_graph"])
        res = protocol_device_missing(factory, ds, missing, tc)
        rows = [
            ("all-devices", "accuracy", res.full.top1_accuracy),
            ("missing=" + "+".join(missing), "accuracy", res.missing.top1_accuracy),
            ("drop", "absolute", res.absolute_drop),
            ("drop", "relative", res.relative_drop),
        ]
        _write_sweep(out / "sweep.csv", rows)
        _write_json(
            out / "metrics.json",
            {"full": res.full.to_dict(), "missing": res.missing.to_dict(), "absolute_drop": res.absolute_drop, "relative_drop": res.relative_drop},
        )
        for r in rows:
            print(*r, sep=",")
        return EXIT_OK

    # cross-dataset: encoder weights from the checkpoint (dataset A), finetune/evaluate on dataset B
    root_b = cfg.finetune_data_dir
    if not root_b:
        raise ConfigError("cross-dataset evaluation needs --finetune-data (dataset B)")
    dev_b = dataset_devices(root_b)
    if ex.get("device_ids") is not None and list(ex["device_ids"]) != list(dev_b):
        raise ConfigError(f"device sets differ between checkpoint ({ex['device_ids']}) and finetuning dataset ({dev_b})")
    stats_b = NormStats.identity() if modality == "video" else fit_stats(root_b, cfg, dev_b, split="train")
    ds = prepare_dataset(root_b, cfg, modality=modality, splits=("train", "val", "test"), stats=stats_b)
    tc = dataclasses.replace(cfg.finetune, modality=modality, use_graph=meta["use_graph"])
    _, model = _model_from_checkpoint(ck, num_classes=len(ds.classes), strict=False)
    finetune(model, ds.get("train"), tc, len(ds.classes))
    rep = evaluate(model, ds.get("test"), len(ds.classes))
    _write_metrics(out / "metrics.json", rep, meta, protocol="cross-dataset")
    _write_sweep(out / "sweep.csv", [("cross-dataset", "accuracy", rep.top1_accuracy), ("cross-dataset", "map", rep.macro_map)])
    print(json.dumps({"accuracy": rep.top1_accuracy, "map": rep.macro_map}))
    return EXIT_OK


REPORT_HEADER = "| Run | Modality | Pretrain | Graph | Accuracy | mAP |\n|---|---|---|---|---|---|"


def _mark(flag) -> str:
    return "✓" if flag else "✗"


def report_table(run_dirs: Sequence) -> str:
    """Markdown table with one row per run directory; unreadable runs are marked invalid."""
    lines = [REPORT_HEADER]
    for d in run_dirs:
        d = Path(d)
        try:
            m = json.loads((d / "metrics.json").read_text(encoding="utf-8"))
            rep = MetricsReport.from_dict(m)
            run = m.get("run", {})
            lines.append(
                f"| {d.name} | {run.get('modality', '?')} | {_mark(run.get('pretrained'))} | {_mark(run.get('use_graph'))} "
                f"| {100 * rep.top1_accuracy:.2f} | {100 * rep.macro_map:.2f} |"
            )
        except (OSError, ValueError, KeyError, TypeError) as exc:
            log.warning("%s: %s", d, exc)
            lines.append(f"| {d.name} | invalid | | | | |")
    return "\n".join(lines) + "\n"


def cmd_report(args) -> int:
    table = report_table(args.runs)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(table, encoding="utf-8")
    print(table, end="")
    return EXIT_OK


# -- argument parsing ----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="RunConfig JSON file (default: preset chosen by --device-scale)")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", help="output directory (report: output markdown file)")
    common.add_argument("--modality", choices=MODALITIES, default=None)
    common.add_argument("--device-scale", choices=("desk", "paper"), default="desk")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="evimae", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic video+IMU dataset")
    p.add_argument("spec", help="SyntheticSpec JSON file")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pretrain", parents=[common], help="masked reconstruction pretraining")
    p.add_argument("--data", help="dataset root (overrides data_dir)")
    p.add_argument("--no-graph", action="store_true", help="disable the IMU graph branch")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", parents=[common], help="supervised finetuning + evaluation")
    p.add_argument("--data", help="dataset root (overrides data_dir)")
    p.add_argument("--finetune-data", help="finetune on another dataset root")
    p.add_argument("--init", default="scratch", help="pretrained checkpoint or 'scratch'")
    p.add_argument("--missing-devices", default="", help="comma-separated device ids removed during finetuning")
    p.add_argument("--labeled-fraction", type=float, default=None)
    p.add_argument("--no-graph", action="store_true")
    p.add_argument("--epochs", type=int, default=None)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint under a protocol")
    p.add_argument("checkpoint")
    p.add_argument("--protocol", default="standard", choices=PROTOCOLS)
    p.add_argument("--data", help="dataset root (overrides data_dir)")
    p.add_argument("--finetune-data", help="dataset B for the cross-dataset protocol")
    p.add_argument("--split", default="test")
    p.add_argument("--light-levels", default="", help="comma-separated light levels in (0, 1]")
    p.add_argument("--missing-devices", default="")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", parents=[common], help="markdown table comparing finetuned runs")
    p.add_argument("runs", nargs="*", help="run directories holding metrics.json")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except EviMAEError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code(exc)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - the exit code contract covers every failure
        log.debug("unhandled", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
