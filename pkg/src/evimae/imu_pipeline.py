"""Raw acceleration -> spectrogram patch grid: clean, resample, normalize, STFT, patchify."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.signal import get_window

from .errors import AllNaN, InvalidParam, ShapeError

STD_FLOOR = 1e-6


@dataclass
class ImuSeries:
    device_id: str
    values: np.ndarray  # (L, 3)
    sample_rate_hz: float

    @property
    def duration_s(self) -> float:
        return len(self.values) / self.sample_rate_hz


@dataclass(frozen=True)
class StftParams:
    target_samples: int = 160
    window: str = "hann"
    window_len: int = 16
    hop: int = 1
    fft_len: int = 254
    log_offset: float = 1e-6
    n_bins: int = 128

    @property
    def n_frames(self) -> int:
        return (self.target_samples - 1) // self.hop + 1

    def validate(self):
        if self.window_len < 2 or self.hop < 1 or self.target_samples < 2:
            raise ShapeError(f"invalid STFT parameters {self}")
        if self.window_len > self.fft_len:
            raise ShapeError(f"window_len {self.window_len} exceeds fft_len {self.fft_len}")
        if self.fft_len // 2 + 1 < self.n_bins:
            raise ShapeError(f"fft_len {self.fft_len} yields {self.fft_len // 2 + 1} bins, need {self.n_bins}")
        if self.log_offset <= 0:
            raise ShapeError("log_offset must be positive")

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


# desk scale keeps the STFT recipe but shrinks the image to 64 x 32 (4 x 2 patches per device)
DESK_STFT = StftParams(target_samples=64, fft_len=62, n_bins=32)


@dataclass
class Spectrogram:
    device_id: str
    data: np.ndarray  # (T_imu, M_imu, 3)
    params: StftParams


@dataclass
class ImuPatchGrid:
    patches: np.ndarray  # (P_imu, p*p*3)
    device_index: np.ndarray  # (P_imu,)
    grid_pos: np.ndarray  # (P_imu, 2) -> (time_idx, freq_idx)
    n_devices: int
    time_cells: int
    freq_cells: int
    patch: int

    @property
    def num_patches(self) -> int:
        return len(self.patches)


@dataclass
class NormStats:
    """Dataset-level per-axis statistics fitted on the pretraining split."""

    mean: np.ndarray  # (3,)
    std: np.ndarray  # (3,)
    # global scalar standardization of the log spectrogram fed to the network
    spec_mean: float = 0.0
    spec_std: float = 1.0

    def to_dict(self):
        return {
            "mean": [float(v) for v in self.mean],
            "std": [float(v) for v in self.std],
            "spec_mean": float(self.spec_mean),
            "spec_std": float(self.spec_std),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            np.asarray(d["mean"], dtype=np.float64),
            np.asarray(d["std"], dtype=np.float64),
            float(d.get("spec_mean", 0.0)),
            float(d.get("spec_std", 1.0)),
        )

    @classmethod
    def identity(cls):
        return cls(np.zeros(3), np.ones(3))


def clean(series: ImuSeries) -> ImuSeries:
    """Fill NaNs by linear interpolation; leading/trailing gaps take the nearest finite value."""
    vals = np.array(series.values, dtype=np.float64, copy=True)
    if vals.ndim != 2 or vals.shape[1] != 3:
        raise ShapeError(f"expected (L, 3) values, got {vals.shape}")
    idx = np.arange(len(vals))
    for a in range(3):
        col = vals[:, a]
        finite = np.isfinite(col)
        if not finite.any():
            raise AllNaN(f"device '{series.device_id}' axis {a} has no finite value")
        if not finite.all():
            # np.interp clamps to the end values outside the finite range
            vals[:, a] = np.interp(idx, idx[finite], col[finite])
    return ImuSeries(series.device_id, vals, series.sample_rate_hz)


def resample(series: ImuSeries, target_samples: int) -> ImuSeries:
    """Linear interpolation onto ``target_samples`` points spanning the original time range."""
    if target_samples < 2:
        raise InvalidParam(f"target_samples must be >= 2, got {target_samples}")
    vals = np.asarray(series.values, dtype=np.float64)
    n = len(vals)
    if n < 2:
        raise InvalidParam("series needs at least 2 samples")
    t_old = np.arange(n) / series.sample_rate_hz
    t_new = np.linspace(t_old[0], t_old[-1], target_samples)
    out = np.stack([np.interp(t_new, t_old, vals[:, a]) for a in range(3)], axis=1)
    return ImuSeries(series.device_id, out, target_samples / series.duration_s)


def fit_norm_stats(series: Sequence[ImuSeries]) -> NormStats:
    if not series:
        raise InvalidParam("cannot fit normalization statistics on an empty set")
    allv = np.concatenate([np.asarray(s.values, dtype=np.float64) for s in series], axis=0)
    return NormStats(allv.mean(axis=0), np.maximum(allv.std(axis=0), STD_FLOOR))


def normalize(series: ImuSeries, stats: NormStats) -> ImuSeries:
    """Per-axis ``(v - mean) / max(std, 1e-6)`` with dataset-level statistics."""
    std = np.maximum(np.asarray(stats.std, dtype=np.float64), STD_FLOOR)
    out = (np.asarray(series.values, dtype=np.float64) - np.asarray(stats.mean)) / std
    return ImuSeries(series.device_id, out, series.sample_rate_hz)


def _frames(signal: np.ndarray, params: StftParams) -> np.ndarray:
    """Reflect-padded, windowed frames of a 1-D signal, shape (n_frames, window_len)."""
    wl = params.window_len
    left, right = wl // 2, wl - 1 - wl // 2
    padded = np.pad(signal, (left, right), mode="reflect")
    starts = np.arange(params.n_frames) * params.hop
    frames = padded[starts[:, None] + np.arange(wl)[None, :]]
    return frames * get_window(params.window, wl, fftbins=True)[None, :]


def stft_magnitude(signal: np.ndarray, params: StftParams) -> np.ndarray:
    """Magnitude of the first ``n_bins`` non-negative frequency bins, shape (n_frames, n_bins)."""
    params.validate()
    signal = np.asarray(signal, dtype=np.float64)
    if signal.shape != (params.target_samples,):
        raise ShapeError(f"signal length {signal.shape} != target_samples {params.target_samples}")
    spec = np.fft.rfft(_frames(signal, params), n=params.fft_len, axis=1)
    return np.abs(spec[:, : params.n_bins])


def stft_spectrogram(series: ImuSeries, params: StftParams) -> Spectrogram:
    vals = np.asarray(series.values)
    if vals.shape != (params.target_samples, 3):
        raise ShapeError(f"series shape {vals.shape} != ({params.target_samples}, 3)")
    mags = np.stack([stft_magnitude(vals[:, a], params) for a in range(3)], axis=-1)
    data = np.log(params.log_offset + mags)
    if data.shape != (params.n_frames, params.n_bins, 3):
        raise ShapeError(f"spectrogram shape {data.shape} unexpected")
    return Spectrogram(series.device_id, data, params)


def patchify_imu(specs: Sequence[Spectrogram], patch: int = 16) -> ImuPatchGrid:
    """Cut per-device spectrograms into ``patch x patch x 3`` tokens.

    Token order is row-major over (device, time cell, freq cell); each token is
    flattened in (time-in-patch, freq-in-patch, axis) order.
    """
    if not specs:
        raise ShapeError("no spectrograms given")
    shape = specs[0].data.shape
    if any(s.data.shape != shape for s in specs):
        raise ShapeError("all spectrograms must share one shape")
    T, M, C = shape
    if T % patch or M % patch:
        raise ShapeError(f"spectrogram {T}x{M} not divisible by patch {patch}")
    nt, nf = T // patch, M // patch
    x = np.stack([s.data for s in specs])  # (N, T, M, C)
    n = len(specs)
    x = x.reshape(n, nt, patch, nf, patch, C).transpose(0, 1, 3, 2, 4, 5)
    patches = x.reshape(n * nt * nf, patch * patch * C)
    dev = np.repeat(np.arange(n), nt * nf)
    tpos = np.tile(np.repeat(np.arange(nt), nf), n)
    fpos = np.tile(np.arange(nf), n * nt)
    grid = ImuPatchGrid(patches, dev, np.stack([tpos, fpos], axis=1), n, nt, nf, patch)
    assert grid.num_patches == n * nt * nf
    return grid


def unpatchify_imu(patches: np.ndarray, n_devices: int, time_cells: int, freq_cells: int, patch: int = 16, channels: int = 3):
    """Inverse of :func:`patchify_imu`; returns (N, T, M, C)."""
    patches = np.asarray(patches)
    expected = (n_devices * time_cells * freq_cells, patch * patch * channels)
    if patches.shape != expected:
        raise ShapeError(f"patches shape {patches.shape} != {expected}")
    x = patches.reshape(n_devices, time_cells, freq_cells, patch, patch, channels).transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(n_devices, time_cells * patch, freq_cells * patch, channels)


def device_series(clip, device_id: str) -> ImuSeries:
    dev = next(d for d in clip.manifest.devices if d.device_id == device_id)
    return ImuSeries(device_id, clip.imu[device_id], dev.sample_rate_hz)


def resampled_clean_series(clip, device_ids: Sequence[str], params: StftParams) -> list[ImuSeries]:
    return [resample(clean(device_series(clip, d)), params.target_samples) for d in device_ids]


def clip_spectrograms(clip, device_ids: Sequence[str], params: StftParams, stats: NormStats) -> list[Spectrogram]:
    return [stft_spectrogram(normalize(s, stats), params) for s in resampled_clean_series(clip, device_ids, params)]


def fit_dataset_stats(clips, device_ids: Sequence[str], params: StftParams) -> NormStats:
    """Fit per-axis and spectrogram statistics on a (pretraining) set of clips."""
    clips = list(clips)
    series = [s for c in clips for s in resampled_clean_series(c, device_ids, params)]
    stats = fit_norm_stats(series)
    logs = np.stack([stft_spectrogram(normalize(s, stats), params).data for s in series])
    stats.spec_mean = float(logs.mean())
    stats.spec_std = float(max(logs.std(), STD_FLOOR))
    return stats


def preprocess_imu(clip, device_ids: Sequence[str], params: StftParams, stats: NormStats, patch: int = 16) -> ImuPatchGrid:
    """Full pipeline for one clip; patches are standardized by the fitted spectrogram stats."""
    grid = patchify_imu(clip_spectrograms(clip, device_ids, params, stats), patch)
    grid.patches = ((grid.patches - stats.spec_mean) / stats.spec_std).astype(np.float32)
    return grid


def save_preprocess_stats(path, params: StftParams, stats: NormStats, device_ids: Optional[Sequence[str]] = None):
    payload = {"stft": asdict(params), "norm": stats.to_dict()}
    if device_ids is not None:
        payload["device_ids"] = list(device_ids)
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def load_preprocess_stats(path):
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    return StftParams.from_dict(d["stft"]), NormStats.from_dict(d["norm"]), d.get("device_ids")
