"""Experiment helpers and the robustness protocols (device missing, low light, cross dataset)."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import torch

from ..errors import ConfigError, InvalidParam
from ..masking import derive_seed
from ..model import EviMAE, build_model
from .data import LightSetting, PreparedDataset, PreparedSet, labeled_subset, prepare_clips, prepare_dataset, resolve_present
from .loop import evaluate, finetune, pretrain
from .metrics import MetricsReport


def new_model(run_cfg, n_devices: int, modality: str, use_graph: bool, seed: int, num_classes: Optional[int] = None) -> EviMAE:
    """Freshly initialized model; initialization depends only on ``seed``."""
    torch.manual_seed(derive_seed(seed, 0xB0))
    return build_model(run_cfg, modality=modality, use_graph=use_graph, num_classes=num_classes, n_devices=n_devices)


def run_pretraining(data: PreparedSet, run_cfg, n_devices: int, modality: str, use_graph: bool, seed: int, log_path=None) -> dict:
    """Pretrain a fresh model; returns its state dict."""
    cfg = dataclasses.replace(run_cfg.pretrain, modality=modality, use_graph=use_graph, seed=seed).validate()
    model = new_model(run_cfg, n_devices, modality, use_graph, seed)
    pretrain(model, data, cfg, log_path=log_path)
    return model.state_dict()


def finetune_model(
    ds: PreparedDataset,
    run_cfg,
    modality: str,
    use_graph: bool,
    seed: int,
    state: Optional[dict] = None,
    labeled_fraction: float = 1.0,
    present=None,
    train_split: str = "train",
    val_split: Optional[str] = None,
    train: Optional[PreparedSet] = None,
) -> EviMAE:
    """Build a classifier (optionally from pretrained weights) and finetune it on the labeled split."""
    C = len(ds.classes)
    model = new_model(run_cfg, len(ds.device_ids), modality, use_graph, seed, num_classes=C)
    if state is not None:
        own = model.state_dict()
        model.load_state_dict({k: v for k, v in state.items() if k in own and not k.startswith("head.") and v.shape == own[k].shape}, strict=False)
    cfg = dataclasses.replace(run_cfg.finetune, modality=modality, use_graph=use_graph, seed=seed).validate()
    if train is None:
        train = ds.get(train_split)
        if labeled_fraction < 1.0:
            train = labeled_subset(train, labeled_fraction, seed, C)
    val = ds.splits.get(val_split) if val_split else None
    finetune(model, train, cfg, C, val=val, present=present, keep_best=val is not None)
    return model


@dataclass
class DeviceMissingResult:
    full: MetricsReport
    missing: MetricsReport
    absolute_drop: float
    relative_drop: float


def protocol_device_missing(
    model_factory: Callable[[], EviMAE],
    ds: PreparedDataset,
    missing: Sequence[str],
    finetune_cfg,
    train_split: str = "train",
    test_split: str = "test",
) -> DeviceMissingResult:
    """Finetune + evaluate twice from the same starting weights: all devices vs. ``missing`` removed.

    ``model_factory`` must return identically initialized models (e.g. a
    pretrained checkpoint plus a seeded head) on every call.
    """
    present = resolve_present(ds.device_ids, list(missing))
    C = len(ds.classes)
    train, test = ds.get(train_split), ds.get(test_split)
    reports = []
    for flags in (None, present):
        model = model_factory()
        finetune(model, train, finetune_cfg, C, present=flags)
        reports.append(evaluate(model, test, C, present=flags))
    full, miss = reports
    drop = full.top1_accuracy - miss.top1_accuracy
    rel = drop / full.top1_accuracy if full.top1_accuracy > 0 else 0.0
    return DeviceMissingResult(full, miss, drop, rel)


def protocol_low_light(
    model: EviMAE,
    ds: PreparedDataset,
    run_cfg,
    light_levels: Sequence[float],
    shot_strength: float = 0.0,
    read_sigma: float = 0.0,
    seed: int = 0,
    split: str = "test",
    present=None,
) -> list:
    """Evaluate a finetuned model on degraded test videos; returns [(level, MetricsReport)]."""
    for lv in light_levels:
        if not 0.0 < lv <= 1.0:
            raise InvalidParam(f"light level must lie in (0, 1], got {lv}")
    base = ds.get(split)
    C = len(ds.classes)
    out = []
    for lv in light_levels:
        data = base
        if model.modality in ("video", "both"):
            light = LightSetting(lv, shot_strength, read_sigma, seed)
            vid = prepare_clips(ds.root, base.clip_ids, run_cfg, ds.stats, ds.device_ids, ds.classes, "video", light)
            data = PreparedSet(base.clip_ids, base.imu, vid.video, base.labels)
        out.append((lv, evaluate(model, data, C, present)))
    return out


def protocol_cross_dataset(
    pretrain_root,
    finetune_root,
    run_cfg,
    modality: str = "both",
    use_graph: bool = True,
    seed: int = 0,
    labeled_fraction: float = 1.0,
    pretrained: bool = True,
    pretrain_ds: Optional[PreparedDataset] = None,
    finetune_ds: Optional[PreparedDataset] = None,
) -> MetricsReport:
    """Pretrain on dataset A, finetune and evaluate on dataset B.

    B's preprocessing statistics are refitted on its own train split.
    Prepared datasets may be passed in to avoid reloading.
    """
    from .data import dataset_devices, fit_stats

    dev_a, dev_b = dataset_devices(pretrain_root), dataset_devices(finetune_root)
    if dev_a != dev_b:
        raise ConfigError(f"device sets differ between pretraining ({dev_a}) and finetuning ({dev_b}) datasets")
    state = None
    if pretrained:
        a = pretrain_ds or prepare_dataset(pretrain_root, run_cfg, splits=("pretrain", "train"))
        state = run_pretraining(a.get("pretrain", "train"), run_cfg, len(dev_a), modality, use_graph, seed)
    b = finetune_ds
    if b is None:
        stats_b = fit_stats(finetune_root, run_cfg, dev_b, split="train")
        b = prepare_dataset(finetune_root, run_cfg, splits=("train", "val", "test"), stats=stats_b)
    model = finetune_model(b, run_cfg, modality, use_graph, seed, state, labeled_fraction)
    return evaluate(model, b.get("test"), len(b.classes))
