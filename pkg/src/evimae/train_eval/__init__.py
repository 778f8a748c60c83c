"""Pretraining, finetuning, evaluation and robustness protocols."""

from .data import LightSetting, PreparedDataset, PreparedSet, labeled_subset, prepare_clips, prepare_dataset, resolve_present
from .loop import (
    LOG_HEADER,
    evaluate,
    finetune,
    finetune_epoch,
    lr_at,
    make_optimizer,
    make_plans,
    pretrain,
    pretrain_loss,
    pretrain_step,
)
from .metrics import MetricsReport, average_precision, metrics_from_scores
from .protocols import (
    DeviceMissingResult,
    finetune_model,
    new_model,
    protocol_cross_dataset,
    protocol_device_missing,
    protocol_low_light,
    run_pretraining,
)
