"""Pretraining losses: masked pixel MSE, masked-node cosine error, symmetric InfoNCE."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import torch
import torch.nn.functional as F

from .errors import EmptyMask, InvalidParam, ShapeError, ZeroNorm

NORM_EPS = 1e-12


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta: float = 10.0
    gamma: float = 0.01
    tau: float = 0.05

    def __post_init__(self):
        if self.tau <= 0:
            raise InvalidParam(f"temperature must be positive, got {self.tau}")

    def to_dict(self):
        return asdict(self)


@dataclass
class LossReport:
    l_mse_video: float
    l_mse_imu: float
    l_cos: float
    l_con: float
    total: float

    FIELDS = ("l_mse_video", "l_mse_imu", "l_cos", "l_con", "total")

    def as_row(self) -> list:
        return [getattr(self, f) for f in self.FIELDS]


def pixel_mse(pred: Optional[torch.Tensor], target: Optional[torch.Tensor], masked: Optional[torch.Tensor] = None, masked_only: bool = True):
    """Per-element MSE between (B, P, d) patch tensors.

    With ``masked_only`` the average runs over patches flagged in the (B, P)
    boolean ``masked``; a mask with no masked patch contributes zero.
    """
    if pred is None or target is None:
        return torch.zeros(())
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {tuple(pred.shape)} vs target {tuple(target.shape)}")
    err = (pred - target) ** 2
    if not masked_only or masked is None:
        return err.mean()
    if masked.shape != pred.shape[:-1]:
        raise ShapeError(f"mask {tuple(masked.shape)} does not match patches {tuple(pred.shape[:-1])}")
    w = masked.to(err.dtype).unsqueeze(-1)
    n = w.sum() * err.shape[-1]
    if n == 0:
        return err.sum() * 0.0
    return (err * w).sum() / n


def graph_cosine_loss(f_hat: torch.Tensor, f: torch.Tensor, masked: torch.Tensor) -> torch.Tensor:
    """Mean of ``1 - cos(f_hat_v, f_v)`` over masked nodes.

    Accepts (N, F) features with an (N,) mask or batched (B, N, F) with (B, N);
    the batched average runs over every masked node in the batch.
    """
    if f_hat.shape != f.shape:
        raise ShapeError(f"reconstruction {tuple(f_hat.shape)} vs target {tuple(f.shape)}")
    if masked.shape != f.shape[:-1]:
        raise ShapeError(f"mask {tuple(masked.shape)} does not match nodes {tuple(f.shape[:-1])}")
    masked = masked.to(torch.bool)
    if not masked.any():
        raise EmptyMask("cosine loss needs at least one masked node")
    a, b = f_hat[masked], f[masked]
    na, nb = a.norm(dim=-1), b.norm(dim=-1)
    if (na < NORM_EPS).any() or (nb < NORM_EPS).any():
        raise ZeroNorm("a compared node feature has (near) zero norm")
    cos = (a * b).sum(-1) / (na * nb)
    return (1.0 - cos).mean()


def contrastive_from_similarity(sim: torch.Tensor, tau: float) -> torch.Tensor:
    """Symmetric InfoNCE for an (N_b, N_b) similarity matrix with ``sim[k, j] = s(f_v^k, f_i^j)``."""
    if sim.dim() != 2 or sim.shape[0] != sim.shape[1]:
        raise ShapeError(f"similarity matrix must be square, got {tuple(sim.shape)}")
    logits = sim / tau
    target = torch.arange(sim.shape[0], device=sim.device)
    return 0.5 * (F.cross_entropy(logits, target) + F.cross_entropy(logits.t(), target))


def contrastive_loss(f_v: torch.Tensor, f_i: torch.Tensor, tau: float, normalize: bool = True) -> torch.Tensor:
    if f_v.dim() != 2 or f_v.shape != f_i.shape:
        raise ShapeError(f"pooled features must share a (batch, dim) shape, got {tuple(f_v.shape)} / {tuple(f_i.shape)}")
    if f_v.shape[0] < 1:
        raise ShapeError("contrastive loss needs a non-empty batch")
    if normalize:
        f_v, f_i = F.normalize(f_v, dim=-1), F.normalize(f_i, dim=-1)
    return contrastive_from_similarity(f_v @ f_i.t(), tau)


def _f(x) -> float:
    return float(x.detach()) if isinstance(x, torch.Tensor) else float(x)


def total_loss(l_mse_video, l_mse_imu, l_cos, l_con, weights: LossWeights):
    """Weighted sum ``alpha*(video + imu) + beta*cos + gamma*con``.

    Returns ``(total, report)``; ``total`` keeps the autograd graph when the
    parts are tensors.
    """
    total = weights.alpha * (l_mse_video + l_mse_imu) + weights.beta * l_cos + weights.gamma * l_con
    report = LossReport(_f(l_mse_video), _f(l_mse_imu), _f(l_cos), _f(l_con), _f(total))
    return total, report
