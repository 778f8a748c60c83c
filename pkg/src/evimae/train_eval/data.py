"""Clip loading + preprocessing into in-memory token arrays."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..dataset_io import clip_dir, degrade_low_light, load_classes, load_clip, load_splits, read_manifest, workers_from_env
from ..errors import ConfigError, EmptySplit, UnknownDevice
from ..imu_pipeline import NormStats, fit_dataset_stats, preprocess_imu
from ..masking import derive_seed
from ..video_pipeline import preprocess_video


@dataclass
class LightSetting:
    level: float = 1.0
    shot_strength: float = 0.0
    read_sigma: float = 0.0
    seed: int = 0


@dataclass
class PreparedSet:
    clip_ids: list
    imu: Optional[np.ndarray]  # (n, P_imu, d_imu) float32
    video: Optional[np.ndarray]  # (n, P_v, d_v) float32
    labels: np.ndarray  # (n,) int64; -1 when unlabeled

    def __len__(self):
        return len(self.clip_ids)

    def subset(self, idx) -> "PreparedSet":
        idx = np.asarray(idx, dtype=np.int64)
        return PreparedSet(
            [self.clip_ids[i] for i in idx],
            None if self.imu is None else self.imu[idx],
            None if self.video is None else self.video[idx],
            self.labels[idx],
        )

    @staticmethod
    def concat(sets: Sequence["PreparedSet"]) -> "PreparedSet":
        sets = [s for s in sets if len(s)]
        if not sets:
            raise EmptySplit("nothing to concatenate")
        cat = lambda xs: None if xs[0] is None else np.concatenate(xs)  # noqa: E731
        return PreparedSet(
            [c for s in sets for c in s.clip_ids],
            cat([s.imu for s in sets]),
            cat([s.video for s in sets]),
            np.concatenate([s.labels for s in sets]),
        )


@dataclass
class PreparedDataset:
    root: Path
    device_ids: list
    classes: list
    stats: NormStats
    splits: dict = field(default_factory=dict)  # split name -> PreparedSet

    def get(self, *names: str) -> PreparedSet:
        sets = [self.splits[n] for n in names if n in self.splits]
        if not sets:
            raise EmptySplit(f"no clips in split(s) {names}")
        return sets[0] if len(sets) == 1 else PreparedSet.concat(sets)


def dataset_devices(root) -> list:
    """Device ids of the first clip in the dataset (all clips must share them)."""
    splits = load_splits(root)
    for ids in splits.values():
        if ids:
            return read_manifest(clip_dir(root, ids[0])).device_ids
    raise EmptySplit(f"dataset {root} has no clips")


def resolve_present(device_ids: Sequence[str], missing: Sequence[str]) -> Optional[list]:
    """Per-device presence flags; ``None`` when nothing is missing."""
    unknown = [d for d in missing if d not in device_ids]
    if unknown:
        raise UnknownDevice(f"unknown device(s) {unknown}; available: {list(device_ids)}")
    if not missing:
        return None
    return [d not in set(missing) for d in device_ids]


def fit_stats(root, run_cfg, device_ids: Sequence[str], split: str = "pretrain") -> NormStats:
    splits = load_splits(root)
    ids = splits.get(split) or splits.get("train") or []
    if not ids:
        raise EmptySplit(f"no clips to fit normalization statistics on in {root}")
    clips = (load_clip(clip_dir(root, c), load_video=False) for c in ids)
    return fit_dataset_stats(clips, device_ids, run_cfg.stft)


def _prepare_one(root, clip_id, run_cfg, stats, device_ids, class_index, use_imu, use_video, light: Optional[LightSetting], k):
    clip = load_clip(clip_dir(root, clip_id), load_video=use_video, load_imu=use_imu)
    missing = [d for d in device_ids if use_imu and d not in clip.imu]
    if missing:
        raise ConfigError(f"clip {clip_id} lacks device(s) {missing}")
    imu = video = None
    if use_imu:
        imu = preprocess_imu(clip, device_ids, run_cfg.stft, stats, run_cfg.model.imu_patch).patches
    if use_video:
        frames = clip.frames
        # level 1.0 is the undegraded reference
        if light is not None and light.level < 1.0:
            frames = degrade_low_light(frames, light.level, light.shot_strength, light.read_sigma, derive_seed(light.seed, k))
        v = run_cfg.video
        video = preprocess_video(frames, v.t_v, v.height, v.width, v.tubelet, v.patch).patches
    label = clip.manifest.label
    y = class_index.get(label, -1) if label is not None else -1
    return imu, video, y


def prepare_clips(
    root,
    clip_ids: Sequence[str],
    run_cfg,
    stats: NormStats,
    device_ids: Sequence[str],
    classes: Sequence[str],
    modality: str = "both",
    light: Optional[LightSetting] = None,
) -> PreparedSet:
    use_imu = modality in ("imu", "both")
    use_video = modality in ("video", "both")
    class_index = {c: i for i, c in enumerate(classes)}
    args = [(root, c, run_cfg, stats, device_ids, class_index, use_imu, use_video, light, k) for k, c in enumerate(clip_ids)]
    workers = workers_from_env()
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            out = list(ex.map(lambda a: _prepare_one(*a), args))
    else:
        out = [_prepare_one(*a) for a in args]
    imu = np.stack([o[0] for o in out]).astype(np.float32) if use_imu and out else None
    video = np.stack([o[1] for o in out]).astype(np.float32) if use_video and out else None
    labels = np.asarray([o[2] for o in out], dtype=np.int64)
    return PreparedSet(list(clip_ids), imu, video, labels)


def prepare_dataset(
    root,
    run_cfg,
    modality: str = "both",
    splits: Sequence[str] = ("pretrain", "train", "val", "test"),
    stats: Optional[NormStats] = None,
) -> PreparedDataset:
    """Load and preprocess the requested splits; IMU stats are fitted on the pretraining split unless given."""
    root = Path(root)
    device_ids = dataset_devices(root)
    classes = load_classes(root)
    if stats is None:
        # video-only runs never open the IMU files
        stats = NormStats.identity() if modality == "video" else fit_stats(root, run_cfg, device_ids)
    ds = PreparedDataset(root, device_ids, classes, stats)
    all_splits = load_splits(root)
    for name in splits:
        ids = all_splits.get(name, [])
        if ids:
            ds.splits[name] = prepare_clips(root, ids, run_cfg, stats, device_ids, classes, modality)
    return ds


def labeled_subset(data: PreparedSet, fraction: float, seed: int, num_classes: int) -> PreparedSet:
    """Class-stratified random subset keeping ``fraction`` of each class (at least one clip per class)."""
    if not 0 < fraction <= 1:
        raise ConfigError(f"labeled fraction must lie in (0, 1], got {fraction}")
    rng = np.random.default_rng(derive_seed(seed, 0x1AB))
    keep = []
    for c in range(num_classes):
        idx = np.flatnonzero(data.labels == c)
        if len(idx) == 0:
            continue
        k = max(1, int(round(fraction * len(idx))))
        keep.extend(rng.permutation(idx)[:k].tolist())
    return data.subset(sorted(keep))
