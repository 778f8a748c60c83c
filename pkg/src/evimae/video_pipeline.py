"""Frames -> tubelet token grid for the video encoder."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ShapeError, TooFewFrames


@dataclass
class VideoTensor:
    frames: np.ndarray  # (T_v, H, W, 3) float32 in [0, 1]
    clip_id: Optional[str] = None
    indices: Optional[np.ndarray] = None


@dataclass
class VideoPatchGrid:
    patches: np.ndarray  # (P_v, tubelet*p*p*3)
    grid_pos: np.ndarray  # (P_v, 3) -> (t_idx, h_idx, w_idx)
    time_cells: int
    h_cells: int
    w_cells: int
    tubelet: int
    patch: int

    @property
    def num_patches(self) -> int:
        return len(self.patches)


def frame_indices(frame_count: int, t_v: int) -> np.ndarray:
    """``t_v`` indices evenly spread over [0, frame_count-1], rounded to nearest."""
    if t_v < 1:
        raise ShapeError("t_v must be >= 1")
    if frame_count < t_v:
        raise TooFewFrames(f"clip has {frame_count} frames, need at least {t_v}")
    if t_v == 1:
        return np.zeros(1, dtype=np.int64)
    return np.rint(np.arange(t_v) * (frame_count - 1) / (t_v - 1)).astype(np.int64)


def sample_frames(clip, t_v: int) -> VideoTensor:
    """Temporally down-sample a RawClip (or a raw uint8 frame array) and scale to [0, 1]."""
    frames = clip.frames if hasattr(clip, "frames") else np.asarray(clip)
    clip_id = clip.manifest.clip_id if hasattr(clip, "manifest") else None
    idx = frame_indices(len(frames), t_v)
    return VideoTensor(frames[idx].astype(np.float32) / 255.0, clip_id, idx)


def resize_center_crop(frames, h: int, w: int) -> VideoTensor:
    """Bilinear resize so the shorter side equals ``max(h, w)``, then center-crop to ``h x w``."""
    clip_id = None
    if isinstance(frames, VideoTensor):
        clip_id, frames = frames.clip_id, frames.frames
    arr = np.asarray(frames)
    squeeze = arr.ndim == 3
    if squeeze:
        arr = arr[None]
    T, H, W, C = arr.shape
    target = max(h, w)
    scale = target / min(H, W)
    nh, nw = max(h, int(round(H * scale))), max(w, int(round(W * scale)))
    if (nh, nw) != (H, W):
        x = torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float64)).permute(0, 3, 1, 2)
        x = F.interpolate(x, size=(nh, nw), mode="bilinear", align_corners=False)
        arr = x.permute(0, 2, 3, 1).numpy()
    top, left = (nh - h) // 2, (nw - w) // 2
    out = arr[:, top : top + h, left : left + w].astype(np.float32)
    return VideoTensor(out[0] if squeeze else out, clip_id)


def tubelet_patchify(video, tubelet: int = 2, patch: int = 16) -> VideoPatchGrid:
    """Non-overlapping ``tubelet x patch x patch x 3`` tokens in row-major (t, h, w) order."""
    frames = video.frames if isinstance(video, VideoTensor) else np.asarray(video)
    if frames.ndim != 4:
        raise ShapeError(f"expected (T, H, W, C) frames, got {frames.shape}")
    T, H, W, C = frames.shape
    if T % tubelet or H % patch or W % patch:
        raise ShapeError(f"video {T}x{H}x{W} not divisible by tubelet {tubelet} / patch {patch}")
    nt, nh, nw = T // tubelet, H // patch, W // patch
    x = frames.reshape(nt, tubelet, nh, patch, nw, patch, C).transpose(0, 2, 4, 1, 3, 5, 6)
    patches = x.reshape(nt * nh * nw, tubelet * patch * patch * C)
    tt, hh, ww = np.meshgrid(np.arange(nt), np.arange(nh), np.arange(nw), indexing="ij")
    pos = np.stack([tt.ravel(), hh.ravel(), ww.ravel()], axis=1)
    return VideoPatchGrid(patches, pos, nt, nh, nw, tubelet, patch)


def tubelet_unpatchify(patches, time_cells: int, h_cells: int, w_cells: int, tubelet: int = 2, patch: int = 16, channels: int = 3):
    patches = np.asarray(patches)
    expected = (time_cells * h_cells * w_cells, tubelet * patch * patch * channels)
    if patches.shape != expected:
        raise ShapeError(f"patches shape {patches.shape} != {expected}")
    x = patches.reshape(time_cells, h_cells, w_cells, tubelet, patch, patch, channels).transpose(0, 3, 1, 4, 2, 5, 6)
    return x.reshape(time_cells * tubelet, h_cells * patch, w_cells * patch, channels)


def preprocess_video(frames_u8: np.ndarray, t_v: int, h: int, w: int, tubelet: int = 2, patch: int = 16) -> VideoPatchGrid:
    vt = sample_frames(frames_u8, t_v)
    vt = resize_center_crop(vt, h, w)
    grid = tubelet_patchify(vt, tubelet, patch)
    grid.patches = grid.patches.astype(np.float32)
    return grid
