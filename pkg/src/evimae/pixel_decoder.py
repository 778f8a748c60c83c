"""Mask-token re-insertion, shared transformer decoder and per-modality pixel heads."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
import torch.nn as nn

from .encoders import IMU, VIDEO, TokenBatch, TransformerStack, sincos_2d, sincos_3d
from .errors import ShapeError
from .imu_pipeline import unpatchify_imu
from .masking import MaskPlan
from .video_pipeline import tubelet_unpatchify


@dataclass(frozen=True)
class ImuGeometry:
    n_devices: int
    time_cells: int
    freq_cells: int
    patch: int = 16
    channels: int = 3

    @property
    def tokens_per_device(self) -> int:
        return self.time_cells * self.freq_cells

    @property
    def num_tokens(self) -> int:
        return self.n_devices * self.tokens_per_device

    @property
    def patch_dim(self) -> int:
        return self.patch * self.patch * self.channels


@dataclass(frozen=True)
class VideoGeometry:
    time_cells: int
    h_cells: int
    w_cells: int
    tubelet: int = 2
    patch: int = 16
    channels: int = 3

    @property
    def spatial_cells(self) -> int:
        return self.h_cells * self.w_cells

    @property
    def num_tokens(self) -> int:
        return self.time_cells * self.spatial_cells

    @property
    def patch_dim(self) -> int:
        return self.tubelet * self.patch * self.patch * self.channels


@dataclass
class DecoderInput:
    sequence: torch.Tensor  # (B, L, decoder_dim): IMU block then video block
    imu_len: int
    video_len: int
    num_mask_tokens: int  # per sample


@dataclass
class ReconstructionPair:
    imu_pixels: Optional[torch.Tensor]  # (B, P_imu, imu patch dim)
    video_pixels: Optional[torch.Tensor]  # (B, P_v, video patch dim)

    def imu_images(self, geom: ImuGeometry, sample: int = 0) -> np.ndarray:
        x = self.imu_pixels[sample].detach().cpu().numpy()
        return unpatchify_imu(x, geom.n_devices, geom.time_cells, geom.freq_cells, geom.patch, geom.channels)

    def video_frames(self, geom: VideoGeometry, sample: int = 0) -> np.ndarray:
        x = self.video_pixels[sample].detach().cpu().numpy()
        return tubelet_unpatchify(x, geom.time_cells, geom.h_cells, geom.w_cells, geom.tubelet, geom.patch, geom.channels)


def _check_indices(idx: torch.Tensor, total: int, name: str):
    if idx.numel() == 0:
        return
    if idx.min() < 0 or idx.max() >= total:
        raise IndexError(f"{name} token index out of range [0, {total})")
    s, _ = torch.sort(idx, dim=1)
    if (s[:, 1:] == s[:, :-1]).any():
        raise IndexError(f"duplicate {name} token index")


def _check_plans(idx: torch.Tensor, plans, name: str):
    if plans is None:
        return
    if isinstance(plans, MaskPlan):
        plans = [plans] * idx.shape[0]
    for b, plan in enumerate(plans):
        if sorted(idx[b].tolist()) != list(plan.visible_indices):
            raise IndexError(f"{name} tokens of sample {b} do not match the visible set of its mask plan")


class PixelDecoder(nn.Module):
    def __init__(
        self,
        enc_dim: int,
        dec_dim: int,
        depth: int,
        heads: int,
        imu: Optional[ImuGeometry],
        video: Optional[VideoGeometry],
        mlp_ratio: float = 4.0,
    ):
        super().__init__()
        self.imu_geom, self.video_geom = imu, video
        self.decoder_embed = nn.Linear(enc_dim, dec_dim)
        self.mask_token = nn.Parameter(torch.zeros(dec_dim))
        if imu is not None:
            pos = sincos_2d(dec_dim, imu.time_cells, imu.freq_cells)
            self.register_buffer("pos_imu", torch.from_numpy(pos).float(), persistent=False)
            self.device_embed = nn.Parameter(torch.zeros(imu.n_devices, dec_dim))
            self.type_imu = nn.Parameter(torch.zeros(dec_dim))
            self.head_imu = nn.Linear(dec_dim, imu.patch_dim)
        if video is not None:
            pos = sincos_3d(dec_dim, video.time_cells, video.h_cells, video.w_cells)
            self.register_buffer("pos_video", torch.from_numpy(pos).float(), persistent=False)
            self.type_video = nn.Parameter(torch.zeros(dec_dim))
            self.head_video = nn.Linear(dec_dim, video.patch_dim)
        self.trunk = TransformerStack(depth, dec_dim, heads, mlp_ratio)
        nn.init.normal_(self.mask_token, std=0.02)

    def _block(self, enc: TokenBatch, total: int) -> torch.Tensor:
        """Projected tokens scattered into a full-length block of mask tokens."""
        x = self.decoder_embed(enc.embeddings)
        B, _, D = x.shape
        full = self.mask_token.to(x.dtype).expand(B, total, D)
        idx = enc.indices.unsqueeze(-1).expand(-1, -1, D)
        return full.scatter(1, idx, x)

    def assemble(self, encoded: TokenBatch, imu_plans=None, video_plans=None, modalities=None) -> DecoderInput:
        """Full ``[e_imu, e_v]`` sequence with decoder-side position and type terms added.

        ``modalities`` defaults to the tags present in ``encoded``; a listed
        modality with no visible tokens becomes an all-mask-token block.
        """
        if modalities is None:
            modalities = [m for m in (IMU, VIDEO) if (encoded.modality == m).any()]
        B = encoded.embeddings.shape[0]
        blocks, imu_len, video_len, visible = [], 0, 0, 0
        if IMU in modalities:
            g = self.imu_geom
            if g is None:
                raise ShapeError("decoder has no IMU geometry")
            enc = encoded.select(IMU)
            _check_indices(enc.indices, g.num_tokens, "IMU")
            _check_plans(enc.indices, imu_plans, "IMU")
            block = self._block(enc, g.num_tokens)
            all_idx = torch.arange(g.num_tokens)
            dev = torch.div(all_idx, g.tokens_per_device, rounding_mode="floor")
            block = block + (self.pos_imu.to(block.dtype)[all_idx % g.tokens_per_device] + self.device_embed[dev] + self.type_imu)
            blocks.append(block)
            imu_len, visible = g.num_tokens, visible + enc.num_tokens
        if VIDEO in modalities:
            g = self.video_geom
            if g is None:
                raise ShapeError("decoder has no video geometry")
            enc = encoded.select(VIDEO)
            _check_indices(enc.indices, g.num_tokens, "video")
            _check_plans(enc.indices, video_plans, "video")
            block = self._block(enc, g.num_tokens)
            block = block + self.pos_video.to(block.dtype) + self.type_video
            blocks.append(block)
            video_len, visible = g.num_tokens, visible + enc.num_tokens
        if not blocks:
            raise ShapeError("nothing to decode")
        seq = torch.cat(blocks, dim=1)
        assert seq.shape[:2] == (B, imu_len + video_len)
        return DecoderInput(seq, imu_len, video_len, imu_len + video_len - visible)

    def decode(self, inp: DecoderInput) -> ReconstructionPair:
        out = self.trunk(inp.sequence)
        if out.shape != inp.sequence.shape:
            raise ShapeError("decoder trunk changed the sequence shape")
        imu = self.head_imu(out[:, : inp.imu_len]) if inp.imu_len else None
        video = self.head_video(out[:, inp.imu_len :]) if inp.video_len else None
        return ReconstructionPair(imu, video)

    def forward(self, encoded: TokenBatch, imu_plans=None, video_plans=None, modalities=None) -> ReconstructionPair:
        return self.decode(self.assemble(encoded, imu_plans, video_plans, modalities))
