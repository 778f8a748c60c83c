"""Classification metrics: top-1 accuracy, one-vs-rest AP (all-points interpolation), macro mAP."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import EmptySplit, ShapeError


@dataclass
class MetricsReport:
    top1_accuracy: float
    macro_map: float
    per_class_ap: list  # NaN for classes without positives
    confusion: list  # rows = true class, cols = predicted
    n: int

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_class_ap"] = [None if (isinstance(v, float) and math.isnan(v)) else v for v in self.per_class_ap]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        ap = [float("nan") if v is None else float(v) for v in d["per_class_ap"]]
        return cls(float(d["top1_accuracy"]), float(d["macro_map"]), ap, d["confusion"], int(d["n"]))


def average_precision(scores: np.ndarray, positive: np.ndarray) -> float:
    """Area under the all-points interpolated precision-recall curve.

    Thresholds run over the distinct scores in descending order (tied scores
    enter together). Returns NaN when there are no positives.
    """
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    n_pos = int(positive.sum())
    if n_pos == 0:
        return float("nan")
    order = np.argsort(-scores, kind="stable")
    s, p = scores[order], positive[order]
    tp = np.cumsum(p)
    fp = np.cumsum(~p)
    # keep the last index of every tie group
    last = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    precision = tp[last] / (tp[last] + fp[last])
    recall = tp[last] / n_pos
    # interpolated precision: running max from the right
    interp = np.maximum.accumulate(precision[::-1])[::-1]
    prev = np.r_[0.0, recall[:-1]]
    return float(np.sum((recall - prev) * interp))


def metrics_from_scores(scores: np.ndarray, labels: np.ndarray, num_classes: int) -> MetricsReport:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) == 0:
        raise EmptySplit("cannot evaluate an empty split")
    if scores.shape != (len(labels), num_classes):
        raise ShapeError(f"scores shape {scores.shape} != ({len(labels)}, {num_classes})")
    pred = scores.argmax(axis=1)
    acc = float(np.mean(pred == labels))
    ap = [average_precision(scores[:, c], labels == c) for c in range(num_classes)]
    valid = [a for a in ap if not math.isnan(a)]
    conf = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(conf, (labels, pred), 1)
    return MetricsReport(acc, float(np.mean(valid)) if valid else float("nan"), ap, conf.tolist(), len(labels))
