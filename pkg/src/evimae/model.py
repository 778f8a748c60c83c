"""Dual-branch model: pixel reconstruction, graph reconstruction, and the finetuning classifier."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn

from .encoders import (
    IMU,
    VIDEO,
    EncoderConfig,
    ImuEmbedding,
    ModalityEncoder,
    TokenBatch,
    VideoEmbedding,
    encode_unified,
    init_weights,
    pool,
)
from .errors import ShapeError
from .imu_graph import GinConfig, GraphMAE, fully_connected, plan_mask
from .masking import MaskPlan, batch_visible
from .objectives import LossWeights, contrastive_loss, graph_cosine_loss, pixel_mse, total_loss
from .pixel_decoder import ImuGeometry, PixelDecoder, ReconstructionPair, VideoGeometry


@dataclass
class PretrainOutput:
    loss: torch.Tensor
    report: object  # LossReport
    recon: ReconstructionPair
    f_hat: Optional[torch.Tensor] = None
    f_d: Optional[torch.Tensor] = None


def _uses(modality: str, which: str) -> bool:
    return modality == "both" or modality == which


def _gather(x: torch.Tensor, idx: torch.Tensor) -> torch.Tensor:
    """x: (B, P, d), idx: (B, n) -> (B, n, d)."""
    return torch.gather(x, 1, idx.unsqueeze(-1).expand(-1, -1, x.shape[-1]))


class EviMAE(nn.Module):
    def __init__(
        self,
        imu_geom: ImuGeometry,
        video_geom: VideoGeometry,
        enc: EncoderConfig = EncoderConfig(),
        gin: GinConfig = GinConfig(),
        decoder_dim: Optional[int] = None,
        decoder_depth: int = 2,
        decoder_heads: int = 4,
        modality: str = "both",
        use_graph: bool = True,
        num_classes: Optional[int] = None,
    ):
        super().__init__()
        self.imu_geom, self.video_geom = imu_geom, video_geom
        self.enc_cfg = enc
        self.modality = modality
        self.use_graph = use_graph
        D = enc.embed_dim
        self.imu_embed = ImuEmbedding(imu_geom.patch_dim, D, imu_geom.n_devices, imu_geom.time_cells, imu_geom.freq_cells)
        self.video_embed = VideoEmbedding(video_geom.patch_dim, D, video_geom.time_cells, video_geom.h_cells, video_geom.w_cells)
        self.imu_encoder = ModalityEncoder(enc.depth_imu, D, enc.heads, enc.mlp_ratio)
        self.video_encoder = ModalityEncoder(enc.depth_video, D, enc.heads, enc.mlp_ratio)
        self.unified_encoder = ModalityEncoder(enc.unified_depth, D, enc.heads, enc.mlp_ratio)
        self.decoder = PixelDecoder(D, decoder_dim or D // 2, decoder_depth, decoder_heads, imu_geom, video_geom, enc.mlp_ratio)
        # node features are pooled encoder tokens, so the graph width equals the encoder width
        self.graph = GraphMAE(D, gin, n_nodes=imu_geom.n_devices)
        self.register_buffer("adjacency", fully_connected(imu_geom.n_devices), persistent=False)
        # post-pooling norms for the classifier input, one per feature part; the
        # graph encoder output is unnormalized and can carry a large shared offset
        self.fc_norm = nn.LayerNorm(D)
        self.fc_norm_graph = nn.LayerNorm(D)
        self.head = None
        init_weights(self)
        for p in (self.imu_embed.device_embed, self.imu_embed.type_embed, self.video_embed.type_embed):
            nn.init.normal_(p, std=0.02)
        for p in (self.decoder.device_embed, self.decoder.type_imu, self.decoder.type_video, self.decoder.mask_token):
            nn.init.normal_(p, std=0.02)
        if num_classes is not None:
            self.attach_head(num_classes)

    # -- finetuning head ---------------------------------------------------

    @property
    def graph_active(self) -> bool:
        return self.use_graph and _uses(self.modality, "imu")

    @property
    def feature_dim(self) -> int:
        D = self.enc_cfg.embed_dim
        return D + (D if self.graph_active else 0)

    def attach_head(self, num_classes: int):
        self.head = nn.Linear(self.feature_dim, num_classes)
        nn.init.trunc_normal_(self.head.weight, std=0.02)
        nn.init.zeros_(self.head.bias)
        return self.head

    def encoder_parameters(self):
        return [p for n, p in self.named_parameters() if not n.startswith("head.")]

    # -- shared pieces -----------------------------------------------------

    def _imu_tokens(self, patches: torch.Tensor, idx: torch.Tensor) -> TokenBatch:
        return self.imu_encoder(self.imu_embed(_gather(patches, idx), idx))

    def _video_tokens(self, patches: torch.Tensor, idx: torch.Tensor) -> TokenBatch:
        return self.video_encoder(self.video_embed(_gather(patches, idx), idx))

    def device_features(self, tokens: TokenBatch, present: Optional[Sequence[bool]] = None) -> torch.Tensor:
        """Per-device mean of encoded IMU tokens -> (B, N, D); absent devices get zero rows."""
        N = self.imu_geom.n_devices
        if present is None or all(present):
            return pool(tokens, "per_device", N)
        B, _, D = tokens.embeddings.shape
        out = tokens.embeddings.new_zeros(B, N, D)
        keep = [d for d in range(N) if present[d]]
        if keep:
            remap = torch.full((N,), -1, dtype=torch.long)
            remap[keep] = torch.arange(len(keep))
            sub = TokenBatch(tokens.embeddings, tokens.modality, tokens.indices, remap[tokens.device_index])
            out[:, keep] = pool(sub, "per_device", len(keep))
        return out

    def _all_imu_index(self, B: int, present: Optional[Sequence[bool]] = None) -> torch.Tensor:
        g = self.imu_geom
        idx = torch.arange(g.num_tokens)
        if present is not None:
            keep = torch.tensor([bool(present[d]) for d in range(g.n_devices)])
            idx = idx[keep[torch.div(idx, g.tokens_per_device, rounding_mode="floor")]]
        return idx.unsqueeze(0).expand(B, -1)

    # -- pretraining -------------------------------------------------------

    def pretrain_forward(
        self,
        imu_patches: Optional[torch.Tensor],
        video_patches: Optional[torch.Tensor],
        imu_plans: Optional[Sequence[MaskPlan]],
        video_plans: Optional[Sequence[MaskPlan]],
        graph_plans: Optional[Sequence[MaskPlan]],
        weights: LossWeights = LossWeights(),
        masked_only: bool = True,
        modality: Optional[str] = None,
    ) -> PretrainOutput:
        modality = modality or self.modality
        use_imu, use_video = _uses(modality, "imu"), _uses(modality, "video")
        f_i = f_v = None
        mods = []
        if use_imu:
            vis = torch.from_numpy(batch_visible(imu_plans))
            f_i = self._imu_tokens(imu_patches, vis)
            mods.append(IMU)
        if use_video:
            vis = torch.from_numpy(batch_visible(video_plans))
            f_v = self._video_tokens(video_patches, vis)
            mods.append(VIDEO)
        unified = encode_unified(self.unified_encoder, f_i, f_v)
        recon = self.decoder(unified, imu_plans if use_imu else None, video_plans if use_video else None, mods)

        zero = unified.embeddings.new_zeros(())
        l_i = l_v = l_cos = l_con = zero
        if use_imu:
            m = torch.from_numpy(np.stack([p.boolean() for p in imu_plans]))
            l_i = pixel_mse(recon.imu_pixels, imu_patches, m, masked_only)
        if use_video:
            m = torch.from_numpy(np.stack([p.boolean() for p in video_plans]))
            l_v = pixel_mse(recon.video_pixels, video_patches, m, masked_only)

        f_hat = f_d = None
        if use_imu and self.use_graph and weights.beta != 0:
            B = imu_patches.shape[0]
            full = self._imu_tokens(imu_patches, self._all_imu_index(B))
            f_d = self.device_features(full)
            mask = plan_mask(graph_plans, self.imu_geom.n_devices)
            f_dc = self.graph.mask_nodes(f_d, mask)
            f_g = self.graph.encode(self.adjacency, f_dc)
            f_hat = self.graph.decode(self.adjacency, self.graph.remask(f_g, mask))
            if mask.any():
                # the target is a stop-gradient copy so the encoder cannot shrink it to chase the decoder
                l_cos = graph_cosine_loss(f_hat, f_d.detach(), mask)

        if use_imu and use_video and weights.gamma != 0:
            l_con = contrastive_loss(pool(f_v, "all"), pool(f_i, "all"), weights.tau)

        loss, report = total_loss(l_v, l_i, l_cos, l_con, weights)
        return PretrainOutput(loss, report, recon, f_hat, f_d)

    # -- finetuning / inference -------------------------------------------

    def features(
        self,
        imu_patches: Optional[torch.Tensor],
        video_patches: Optional[torch.Tensor],
        present: Optional[Sequence[bool]] = None,
    ) -> torch.Tensor:
        """Unmasked forward: normalized mean of unified tokens, concatenated with the normalized mean of graph-encoder nodes."""
        use_imu, use_video = _uses(self.modality, "imu"), _uses(self.modality, "video")
        ref = imu_patches if use_imu else video_patches
        B = ref.shape[0]
        f_i = f_v = None
        if use_imu:
            f_i = self._imu_tokens(imu_patches, self._all_imu_index(B, present))
        if use_video:
            f_v = self._video_tokens(video_patches, self.video_embed_index(B))
        unified = encode_unified(self.unified_encoder, f_i, f_v)
        if unified.num_tokens:
            feats = [self.fc_norm(pool(unified, "all"))]
        else:
            feats = [unified.embeddings.new_zeros(B, self.enc_cfg.embed_dim)]
        if self.graph_active:
            f_d = self.device_features(f_i, present)
            if present is not None and not all(present):
                missing = torch.tensor([not p for p in present]).expand(B, -1)
                f_d = self.graph.mask_nodes(f_d, missing)
            f_g = self.graph.encode(self.adjacency, f_d)
            feats.append(self.fc_norm_graph(f_g.mean(dim=1)))
        out = torch.cat(feats, dim=-1)
        if out.shape != (B, self.feature_dim):
            raise ShapeError(f"feature shape {tuple(out.shape)} != {(B, self.feature_dim)}")
        return out

    def video_embed_index(self, B: int) -> torch.Tensor:
        return torch.arange(self.video_geom.num_tokens).unsqueeze(0).expand(B, -1)

    def forward(self, imu_patches=None, video_patches=None, present=None) -> torch.Tensor:
        if self.head is None:
            raise ShapeError("no classifier head attached")
        return self.head(self.features(imu_patches, video_patches, present))


def build_model(run_cfg, modality: str = "both", use_graph: bool = True, num_classes: Optional[int] = None, n_devices: int = 4) -> EviMAE:
    """Construct an EviMAE whose token grids follow a RunConfig's STFT/video settings."""
    imu_geom, video_geom = geometries(run_cfg, n_devices)
    m = run_cfg.model
    return EviMAE(
        imu_geom,
        video_geom,
        m.encoder,
        m.gin,
        m.dec_dim,
        m.decoder_depth,
        m.decoder_heads,
        modality=modality,
        use_graph=use_graph,
        num_classes=num_classes,
    )


def geometries(run_cfg, n_devices: int):
    s, v, p = run_cfg.stft, run_cfg.video, run_cfg.model.imu_patch
    if s.n_frames % p or s.n_bins % p:
        raise ShapeError(f"spectrogram {s.n_frames}x{s.n_bins} not divisible by patch {p}")
    if v.t_v % v.tubelet or v.height % v.patch or v.width % v.patch:
        raise ShapeError("video size not divisible by tubelet/patch")
    imu = ImuGeometry(n_devices, s.n_frames // p, s.n_bins // p, p)
    video = VideoGeometry(v.t_v // v.tubelet, v.height // v.patch, v.width // v.patch, v.tubelet, v.patch)
    return imu, video
