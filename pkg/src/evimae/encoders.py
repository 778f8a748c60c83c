"""Token embeddings and the IMU / video / modality-unified transformer encoders."""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from typing import Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import EmptyGroup, ShapeError

IMU, VIDEO = 0, 1


@dataclass(frozen=True)
class EncoderConfig:
    embed_dim: int = 64
    depth_video: int = 2
    depth_imu: int = 2
    heads: int = 4
    mlp_ratio: float = 4.0
    unified_depth: int = 1

    def __post_init__(self):
        if self.embed_dim % self.heads:
            raise ShapeError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if self.unified_depth < 1:
            raise ShapeError("unified_depth must be >= 1")

    def to_dict(self):
        return asdict(self)



# ---------------------------------------------------------------------------
# fixed sinusoidal positions


def sincos_1d(dim: int, pos: np.ndarray) -> np.ndarray:
    if dim % 2:
        raise ShapeError("sin-cos embedding width must be even")
    omega = 1.0 / 10000 ** (np.arange(dim // 2, dtype=np.float64) / (dim / 2.0))
    out = np.asarray(pos, dtype=np.float64).reshape(-1)[:, None] * omega[None, :]
    return np.concatenate([np.sin(out), np.cos(out)], axis=1)


def sincos_2d(dim: int, rows: int, cols: int) -> np.ndarray:
    """(rows*cols, dim) table, row-major; first half encodes the row, second the column."""
    if dim % 4:
        raise ShapeError("2-D sin-cos width must be divisible by 4")
    r, c = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    return np.concatenate([sincos_1d(dim // 2, r), sincos_1d(dim // 2, c)], axis=1)


def sincos_3d(dim: int, t: int, h: int, w: int) -> np.ndarray:
    """Factorized (t, h, w) table; h and w get equal even shares, t the remainder."""
    d_hw = 2 * (dim // 6)
    d_t = dim - 2 * d_hw
    if d_t % 2 or d_hw == 0:
        raise ShapeError(f"cannot factor width {dim} into three even parts")
    tt, hh, ww = np.meshgrid(np.arange(t), np.arange(h), np.arange(w), indexing="ij")
    return np.concatenate([sincos_1d(d_t, tt), sincos_1d(d_hw, hh), sincos_1d(d_hw, ww)], axis=1)


# ---------------------------------------------------------------------------
# transformer blocks


class Attention(nn.Module):
    def __init__(self, dim, heads):
        super().__init__()
        self.heads = heads
        self.scale = (dim // heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x):
        B, N, C = x.shape
        qkv = self.qkv(x).reshape(B, N, 3, self.heads, C // self.heads).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        attn = (q @ k.transpose(-2, -1)) * self.scale
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(B, N, C)
        return self.proj(out)


class Mlp(nn.Module):
    def __init__(self, dim, hidden):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


class Block(nn.Module):
    """Pre-norm transformer layer."""

    def __init__(self, dim, heads, mlp_ratio=4.0):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, int(dim * mlp_ratio))

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        x = x + self.mlp(self.norm2(x))
        return x


class TransformerStack(nn.Module):
    def __init__(self, depth, dim, heads, mlp_ratio=4.0):
        super().__init__()
        self.blocks = nn.ModuleList([Block(dim, heads, mlp_ratio) for _ in range(depth)])
        self.norm = nn.LayerNorm(dim)

    def forward(self, x):
        if x.dim() != 3:
            raise ShapeError(f"expected (batch, tokens, dim), got {tuple(x.shape)}")
        shape = x.shape
        for blk in self.blocks:
            x = blk(x)
        x = self.norm(x)
        assert x.shape == shape
        return x


def init_weights(module: nn.Module):
    for m in module.modules():
        if isinstance(m, nn.Linear):
            nn.init.xavier_uniform_(m.weight)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.LayerNorm):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


# ---------------------------------------------------------------------------
# token batches and embeddings


@dataclass
class TokenBatch:
    embeddings: torch.Tensor  # (B, n, D)
    modality: torch.Tensor  # (n,) IMU / VIDEO tag per token
    indices: torch.Tensor  # (B, n) original index within the modality's token grid
    device_index: torch.Tensor  # (B, n); -1 for video tokens

    @property
    def num_tokens(self) -> int:
        return self.embeddings.shape[1]

    def with_embeddings(self, emb: torch.Tensor) -> "TokenBatch":
        if emb.shape != self.embeddings.shape:
            raise ShapeError(f"encoder changed shape {tuple(self.embeddings.shape)} -> {tuple(emb.shape)}")
        return replace(self, embeddings=emb)

    def select(self, modality: int) -> "TokenBatch":
        keep = self.modality == modality
        return TokenBatch(self.embeddings[:, keep], self.modality[keep], self.indices[:, keep], self.device_index[:, keep])


def _check_patches(patches, indices, patch_dim):
    if patches.dim() != 3 or patches.shape[-1] != patch_dim:
        raise ShapeError(f"expected (B, n, {patch_dim}) patches, got {tuple(patches.shape)}")
    if indices.shape != patches.shape[:2]:
        raise ShapeError(f"indices shape {tuple(indices.shape)} does not match patches {tuple(patches.shape[:2])}")


class ImuEmbedding(nn.Module):
    """Linear patch projection + 2-D (time, freq) sin-cos position + device embedding + IMU type embedding."""

    def __init__(self, patch_dim, dim, n_devices, time_cells, freq_cells):
        super().__init__()
        self.patch_dim = patch_dim
        self.n_devices, self.time_cells, self.freq_cells = n_devices, time_cells, freq_cells
        self.proj = nn.Linear(patch_dim, dim)
        self.register_buffer("pos", torch.from_numpy(sincos_2d(dim, time_cells, freq_cells)).float(), persistent=False)
        self.device_embed = nn.Parameter(torch.zeros(n_devices, dim))
        self.type_embed = nn.Parameter(torch.zeros(dim))

    @property
    def tokens_per_device(self) -> int:
        return self.time_cells * self.freq_cells

    @property
    def num_tokens(self) -> int:
        return self.n_devices * self.tokens_per_device

    def additive(self, indices: torch.Tensor) -> torch.Tensor:
        """Everything added on top of the projection, per token: p_imu + device + m_imu."""
        dev = torch.div(indices, self.tokens_per_device, rounding_mode="floor")
        local = indices % self.tokens_per_device
        return self.pos.to(self.type_embed.dtype)[local] + self.device_embed[dev] + self.type_embed

    def forward(self, patches: torch.Tensor, indices: torch.Tensor) -> TokenBatch:
        _check_patches(patches, indices, self.patch_dim)
        if indices.numel() and (indices.min() < 0 or indices.max() >= self.num_tokens):
            raise ShapeError("IMU token index out of range")
        emb = self.proj(patches) + self.additive(indices)
        n = patches.shape[1]
        dev = torch.div(indices, self.tokens_per_device, rounding_mode="floor")
        return TokenBatch(emb, torch.full((n,), IMU, dtype=torch.long), indices, dev)


class VideoEmbedding(nn.Module):
    """Linear tubelet projection + factorized 3-D sin-cos position + video type embedding."""

    def __init__(self, patch_dim, dim, time_cells, h_cells, w_cells):
        super().__init__()
        self.patch_dim = patch_dim
        self.grid = (time_cells, h_cells, w_cells)
        self.proj = nn.Linear(patch_dim, dim)
        self.register_buffer("pos", torch.from_numpy(sincos_3d(dim, time_cells, h_cells, w_cells)).float(), persistent=False)
        self.type_embed = nn.Parameter(torch.zeros(dim))

    @property
    def num_tokens(self) -> int:
        t, h, w = self.grid
        return t * h * w

    def additive(self, indices: torch.Tensor) -> torch.Tensor:
        return self.pos.to(self.type_embed.dtype)[indices] + self.type_embed

    def forward(self, patches: torch.Tensor, indices: torch.Tensor) -> TokenBatch:
        _check_patches(patches, indices, self.patch_dim)
        if indices.numel() and (indices.min() < 0 or indices.max() >= self.num_tokens):
            raise ShapeError("video token index out of range")
        emb = self.proj(patches) + self.additive(indices)
        n = patches.shape[1]
        return TokenBatch(emb, torch.full((n,), VIDEO, dtype=torch.long), indices, torch.full_like(indices, -1))


class ModalityEncoder(nn.Module):
    """A transformer stack applied to one TokenBatch; shape-preserving."""

    def __init__(self, depth, dim, heads, mlp_ratio=4.0):
        super().__init__()
        self.stack = TransformerStack(depth, dim, heads, mlp_ratio)

    def forward(self, tokens: TokenBatch) -> TokenBatch:
        return tokens.with_embeddings(self.stack(tokens.embeddings))


def concat_tokens(first: Optional[TokenBatch], second: Optional[TokenBatch]) -> TokenBatch:
    parts = [t for t in (first, second) if t is not None]
    if not parts:
        raise ShapeError("nothing to concatenate")
    if len(parts) == 1:
        return parts[0]
    a, b = parts
    if a.embeddings.shape[-1] != b.embeddings.shape[-1] or a.embeddings.shape[0] != b.embeddings.shape[0]:
        raise ShapeError("IMU and video tokens must share batch size and width")
    return TokenBatch(
        torch.cat([a.embeddings, b.embeddings], dim=1),
        torch.cat([a.modality, b.modality]),
        torch.cat([a.indices, b.indices], dim=1),
        torch.cat([a.device_index, b.device_index], dim=1),
    )


def encode_unified(encoder: ModalityEncoder, f_i: Optional[TokenBatch], f_v: Optional[TokenBatch]) -> TokenBatch:
    """Concatenate IMU tokens then video tokens and run the unified encoder; either side may be absent."""
    joint = concat_tokens(f_i, f_v)
    out = encoder(joint)
    expected = (f_i.num_tokens if f_i is not None else 0) + (f_v.num_tokens if f_v is not None else 0)
    assert out.num_tokens == expected
    return out


def pool(tokens: TokenBatch, group: str = "all", n_devices: Optional[int] = None):
    """Mean over a token subset.

    ``all`` -> (B, D); ``per_device`` -> (B, n_devices, D) over IMU tokens;
    ``per_modality`` -> dict tag -> (B, D) for the modalities present.
    """
    emb = tokens.embeddings
    if group == "all":
        if tokens.num_tokens == 0:
            raise EmptyGroup("cannot pool an empty token set")
        return emb.mean(dim=1)
    if group == "per_modality":
        out = {}
        for tag in (IMU, VIDEO):
            keep = tokens.modality == tag
            if keep.any():
                out[tag] = emb[:, keep].mean(dim=1)
        if not out:
            raise EmptyGroup("cannot pool an empty token set")
        return out
    if group == "per_device":
        if n_devices is None:
            raise ShapeError("per_device pooling needs n_devices")
        imu = tokens.modality == IMU
        dev = tokens.device_index[:, imu]  # (B, n)
        x = emb[:, imu]
        onehot = F.one_hot(dev.clamp(min=0), n_devices).to(x.dtype)  # (B, n, N)
        counts = onehot.sum(dim=1)  # (B, N)
        if (counts == 0).any():
            raise EmptyGroup("a device has no tokens to pool")
        return torch.einsum("bnk,bnd->bkd", onehot, x) / counts.unsqueeze(-1)
    raise ShapeError(f"unknown pooling group '{group}'")
