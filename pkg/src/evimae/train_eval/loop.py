"""Optimizer/schedule, pretraining and finetuning loops, evaluation."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from ..checkpoint import save_checkpoint
from ..errors import EmptySplit, ShapeError
from ..masking import derive_seed, imu_mask, node_mask, tube_mask
from ..objectives import LossReport
from .data import PreparedSet
from .metrics import MetricsReport, metrics_from_scores

LOG_HEADER = ["step", "l_mse_video", "l_mse_imu", "l_cos", "l_con", "total", "lr"]
ADAM_BETAS = (0.9, 0.999)

# stream tags so each mask family draws from its own seed stream
_IMU_STREAM, _VIDEO_STREAM, _GRAPH_STREAM, _ORDER_STREAM = 1, 2, 3, 4


def lr_at(epoch: int, base_lr: float, factor: float, every: int) -> float:
    """Step decay: ``base_lr * factor ** floor(epoch / every)``."""
    return base_lr * factor ** (epoch // every)


def make_optimizer(model, cfg) -> torch.optim.Adam:
    """Adam with one group for the network and, when a head exists in finetuning, a second head group."""
    if cfg.phase == "finetune" and model.head is not None:
        groups = [
            {"params": model.encoder_parameters(), "lr": cfg.base_lr},
            {"params": list(model.head.parameters()), "lr": cfg.base_lr * cfg.head_lr_multiplier},
        ]
    else:
        groups = [{"params": [p for p in model.parameters() if p.requires_grad], "lr": cfg.base_lr}]
    return torch.optim.Adam(groups, betas=ADAM_BETAS)


def set_epoch_lr(optimizer, cfg, epoch: int) -> float:
    lr = lr_at(epoch, cfg.base_lr, cfg.lr_decay_factor, cfg.lr_decay_every_epochs)
    for i, g in enumerate(optimizer.param_groups):
        g["lr"] = lr * (cfg.head_lr_multiplier if i == 1 else 1.0)
    return lr


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng(derive_seed(seed, _ORDER_STREAM, epoch)).permutation(n)


def steps_per_epoch(n: int, batch_size: int) -> int:
    return math.ceil(n / batch_size)


def make_plans(model, cfg, batch: int, step: int):
    """Per-sample IMU, video and graph mask plans for one pretraining step."""
    ig, vg = model.imu_geom, model.video_geom
    imu = [
        imu_mask(ig.n_devices, ig.time_cells, ig.freq_cells, cfg.mask_style, cfg.mask_ratio_imu, derive_seed(cfg.seed, _IMU_STREAM, step, b))
        for b in range(batch)
    ]
    video = [tube_mask(vg.spatial_cells, vg.time_cells, cfg.mask_ratio_video, derive_seed(cfg.seed, _VIDEO_STREAM, step, b)) for b in range(batch)]
    graph = [node_mask(ig.n_devices, cfg.mask_ratio_graph, derive_seed(cfg.seed, _GRAPH_STREAM, step, b)) for b in range(batch)]
    return imu, video, graph


def _tensors(data: PreparedSet, idx):
    imu = None if data.imu is None else torch.from_numpy(data.imu[idx])
    video = None if data.video is None else torch.from_numpy(data.video[idx])
    return imu, video


def pretrain_step(model, optimizer, imu, video, cfg, step: int) -> LossReport:
    """One optimizer update on a batch of preprocessed clips."""
    model.train()
    ref = imu if imu is not None else video
    imu_plans, video_plans, graph_plans = make_plans(model, cfg, ref.shape[0], step)
    out = model.pretrain_forward(imu, video, imu_plans, video_plans, graph_plans, cfg.weights, cfg.masked_only_mse, cfg.modality)
    optimizer.zero_grad(set_to_none=True)
    out.loss.backward()
    optimizer.step()
    return out.report


def pretrain_loss(model, imu, video, cfg, step: int) -> LossReport:
    """Loss of the batch at ``step`` without updating anything."""
    ref = imu if imu is not None else video
    imu_plans, video_plans, graph_plans = make_plans(model, cfg, ref.shape[0], step)
    with torch.no_grad():
        return model.pretrain_forward(imu, video, imu_plans, video_plans, graph_plans, cfg.weights, cfg.masked_only_mse, cfg.modality).report


def pretrain(
    model,
    data: PreparedSet,
    cfg,
    optimizer=None,
    log_path=None,
    start_step: int = 0,
    max_steps: Optional[int] = None,
    ckpt_path=None,
    ckpt_every: int = 0,
    ckpt_meta: Optional[dict] = None,
) -> list:
    """Run pretraining from ``start_step`` to ``cfg.epochs`` epochs (or ``max_steps`` total).

    Batch order and mask plans depend only on (seed, epoch, step), so a run
    resumed from a checkpoint replays the exact same sequence.
    """
    if len(data) == 0:
        raise EmptySplit("no pretraining clips")
    torch.manual_seed(derive_seed(cfg.seed, 0))
    optimizer = optimizer or make_optimizer(model, cfg)
    spe = steps_per_epoch(len(data), cfg.batch_size)
    total = spe * cfg.epochs if max_steps is None else max_steps
    reports = []
    writer = fh = None
    if log_path is not None:
        log_path = Path(log_path)
        fresh = start_step == 0 or not log_path.exists()
        fh = open(log_path, "w" if fresh else "a", newline="")
        writer = csv.writer(fh)
        if fresh:
            writer.writerow(LOG_HEADER)
    try:
        step = start_step
        while step < total:
            epoch, pos = divmod(step, spe)
            lr = set_epoch_lr(optimizer, cfg, epoch)
            order = epoch_order(len(data), cfg.seed, epoch)
            idx = order[pos * cfg.batch_size : (pos + 1) * cfg.batch_size]
            imu, video = _tensors(data, idx)
            rep = pretrain_step(model, optimizer, imu, video, cfg, step)
            reports.append(rep)
            if writer is not None:
                writer.writerow([step] + [repr(v) for v in rep.as_row()] + [repr(lr)])
            step += 1
            if ckpt_path is not None and ckpt_every and step % ckpt_every == 0:
                _save(ckpt_path, model, optimizer, cfg, ckpt_meta, step, spe)
        if ckpt_path is not None:
            _save(ckpt_path, model, optimizer, cfg, ckpt_meta, step, spe)
    finally:
        if fh is not None:
            fh.close()
    return reports


def _save(path, model, optimizer, cfg, meta, step, spe):
    meta = meta or {}
    save_checkpoint(
        path,
        model,
        optimizer,
        config=meta.get("config", {}),
        stats=meta.get("stats", {}),
        epoch=step // spe,
        step=step,
        rng={"seed": cfg.seed, "step": step},
        extra={k: v for k, v in meta.items() if k not in ("config", "stats")},
    )


@dataclass
class EpochReport:
    epoch: int
    loss: float
    train_accuracy: float
    lr: float


def finetune_epoch(model, optimizer, data: PreparedSet, cfg, epoch: int, present: Optional[Sequence[bool]] = None) -> EpochReport:
    """One pass of cross-entropy training over labeled clips."""
    if len(data) == 0:
        raise EmptySplit("no labeled clips to finetune on")
    model.train()
    lr = set_epoch_lr(optimizer, cfg, epoch)
    order = epoch_order(len(data), cfg.seed, epoch)
    total, correct = 0.0, 0
    for s in range(steps_per_epoch(len(data), cfg.batch_size)):
        idx = order[s * cfg.batch_size : (s + 1) * cfg.batch_size]
        imu, video = _tensors(data, idx)
        y = torch.from_numpy(data.labels[idx])
        logits = model(imu, video, present)
        loss = F.cross_entropy(logits, y)
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()
        total += float(loss.detach()) * len(idx)
        correct += int((logits.argmax(1) == y).sum())
    return EpochReport(epoch, total / len(data), correct / len(data), lr)


@torch.no_grad()
def predict_scores(model, data: PreparedSet, present=None, batch_size: int = 64) -> np.ndarray:
    model.eval()
    out = []
    for s in range(0, len(data), batch_size):
        idx = np.arange(s, min(s + batch_size, len(data)))
        imu, video = _tensors(data, idx)
        out.append(torch.softmax(model(imu, video, present), dim=-1).numpy())
    return np.concatenate(out).astype(np.float64)


def evaluate(model, data: PreparedSet, num_classes: int, present=None) -> MetricsReport:
    if len(data) == 0:
        raise EmptySplit("cannot evaluate an empty split")
    if (data.labels < 0).any():
        raise ShapeError("evaluation split contains unlabeled clips")
    return metrics_from_scores(predict_scores(model, data, present), data.labels, num_classes)


def finetune(
    model,
    train: PreparedSet,
    cfg,
    num_classes: int,
    val: Optional[PreparedSet] = None,
    present=None,
    keep_best: bool = False,
    on_epoch=None,
):
    """Finetune for ``cfg.epochs``; returns (history, best val MetricsReport or None).

    With ``keep_best`` and a validation set the parameters of the best
    validation epoch (accuracy, then mAP) are restored at the end.
    """
    torch.manual_seed(derive_seed(cfg.seed, 1))
    optimizer = make_optimizer(model, cfg)
    history, best, best_state = [], None, None
    for epoch in range(cfg.epochs):
        rep = finetune_epoch(model, optimizer, train, cfg, epoch, present)
        history.append(rep)
        if val is not None and len(val):
            m = evaluate(model, val, num_classes, present)
            if best is None or (m.top1_accuracy, m.macro_map) > (best.top1_accuracy, best.macro_map):
                best = m
                if keep_best:
                    best_state = {k: v.clone() for k, v in model.state_dict().items()}
            if on_epoch is not None:
                on_epoch(rep, m)
        elif on_epoch is not None:
            on_epoch(rep, None)
    if keep_best and best_state is not None:
        model.load_state_dict(best_state)
    return history, best
