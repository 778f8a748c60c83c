"""Canonical on-disk clip format, loading/validation, synthetic data and low-light degradation.

A clip directory holds::

    manifest.json            ClipManifest fields, snake_case
    frames/frame_000000.png  one RGB PNG per frame
    imu_<device_id>.csv      header "timestamp_s,ax,ay,az"

A dataset root holds ``splits.json`` (split name -> clip ids) and one
sub-directory per clip under ``clips/``.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
from PIL import Image

from .errors import InvalidParam, IoError, ManifestMismatch, MissingFile, ParseError

SPLITS = ("pretrain", "train", "val", "test")
AXES = ("x", "y", "z")
CSV_HEADER = ["timestamp_s", "ax", "ay", "az"]
DEFAULT_DEVICES = ("left_wrist", "right_wrist", "left_ankle", "right_ankle")
GAMMA = 2.2


@dataclass(frozen=True)
class DeviceSpec:
    device_id: str
    sample_rate_hz: float
    axes: tuple = AXES

    def to_dict(self):
        return {"device_id": self.device_id, "sample_rate_hz": self.sample_rate_hz, "axes": list(self.axes)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["device_id"], float(d["sample_rate_hz"]), tuple(d.get("axes", AXES)))


@dataclass
class ClipManifest:
    clip_id: str
    duration_s: float
    video_fps: float
    frame_count: int
    frame_size: tuple  # (height, width)
    devices: list
    label: Optional[str] = None
    split: str = "pretrain"

    @property
    def device_ids(self) -> list[str]:
        return [d.device_id for d in self.devices]

    def expected_imu_rows(self, device: DeviceSpec) -> float:
        return self.duration_s * device.sample_rate_hz

    def to_dict(self) -> dict:
        return {
            "clip_id": self.clip_id,
            "duration_s": self.duration_s,
            "video_fps": self.video_fps,
            "frame_count": self.frame_count,
            "frame_size": [int(self.frame_size[0]), int(self.frame_size[1])],
            "devices": [d.to_dict() for d in self.devices],
            "label": self.label,
            "split": self.split,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClipManifest":
        expected = {"clip_id", "duration_s", "video_fps", "frame_count", "frame_size", "devices", "label", "split"}
        missing = expected - set(d)
        if missing - {"label"}:
            raise ParseError(f"manifest missing keys: {sorted(missing)}")
        try:
            return cls(
                clip_id=str(d["clip_id"]),
                duration_s=float(d["duration_s"]),
                video_fps=float(d["video_fps"]),
                frame_count=int(d["frame_count"]),
                frame_size=(int(d["frame_size"][0]), int(d["frame_size"][1])),
                devices=[DeviceSpec.from_dict(x) for x in d["devices"]],
                label=d.get("label"),
                split=str(d["split"]),
            )
        except (TypeError, KeyError, IndexError, ValueError) as exc:
            raise ParseError(f"malformed manifest: {exc}") from exc


@dataclass
class RawClip:
    manifest: ClipManifest
    frames: np.ndarray  # (frame_count, H, W, 3) uint8
    imu: dict  # device_id -> (L, 3) float64, NaN allowed
    imu_timestamps: dict = field(default_factory=dict)  # device_id -> (L,) float64


@dataclass
class ValidationIssue:
    kind: str
    message: str


@dataclass
class ValidationReport:
    issues: list = field(default_factory=list)

    def add(self, kind: str, message: str):
        self.issues.append(ValidationIssue(kind, message))

    @property
    def ok(self) -> bool:
        return not self.issues

    def __len__(self):
        return len(self.issues)

    def __iter__(self):
        return iter(self.issues)


# ---------------------------------------------------------------------------
# reading / writing


def frame_path(clip_dir: Path, index: int) -> Path:
    return Path(clip_dir) / "frames" / f"frame_{index:06d}.png"


def imu_path(clip_dir: Path, device_id: str) -> Path:
    return Path(clip_dir) / f"imu_{device_id}.csv"


def read_manifest(clip_dir) -> ClipManifest:
    path = Path(clip_dir) / "manifest.json"
    if not path.is_file():
        raise MissingFile(f"missing manifest: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return ClipManifest.from_dict(data)


def read_imu_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Parse one device CSV into (timestamps, values) sorted by timestamp.

    ``nan`` entries are kept as NaN; cleaning happens downstream.
    """
    path = Path(path)
    rows = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != CSV_HEADER:
            raise ParseError(f"{path}: expected header {','.join(CSV_HEADER)}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise ParseError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
    arr = np.asarray(rows, dtype=np.float64).reshape(-1, 4)
    if np.isnan(arr[:, 0]).any():
        raise ParseError(f"{path}: NaN timestamp")
    order = np.argsort(arr[:, 0], kind="stable")
    arr = arr[order]
    return arr[:, 0].copy(), arr[:, 1:].copy()


def write_imu_csv(path, timestamps: np.ndarray, values: np.ndarray):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(CSV_HEADER) + "\n")
        for t, (x, y, z) in zip(timestamps, values):
            fh.write(f"{t:.9g},{x:.9g},{y:.9g},{z:.9g}\n")


def _read_png(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def load_clip(path, load_video: bool = True, load_imu: bool = True) -> RawClip:
    """Load one clip directory.

    ``load_video=False`` skips the frames entirely (the directory may then
    lack ``frames/``), which is how IMU-only runs work without video files.
    """
    clip_dir = Path(path)
    manifest = read_manifest(clip_dir)
    h, w = manifest.frame_size

    if load_video:
        frames_dir = clip_dir / "frames"
        if not frames_dir.is_dir():
            raise MissingFile(f"{clip_dir}: missing frames/ directory")
        on_disk = sorted(frames_dir.glob("frame_*.png"))
        if len(on_disk) != manifest.frame_count:
            raise ManifestMismatch(
                f"{manifest.clip_id}: manifest frame_count {manifest.frame_count}, {len(on_disk)} PNG files on disk"
            )
        frames = np.empty((manifest.frame_count, h, w, 3), dtype=np.uint8)
        for i in range(manifest.frame_count):
            fp = frame_path(clip_dir, i)
            if not fp.is_file():
                raise MissingFile(f"{manifest.clip_id}: missing frame {fp.name}")
            img = _read_png(fp)
            if img.shape != (h, w, 3):
                raise ManifestMismatch(f"{manifest.clip_id}: {fp.name} has shape {img.shape}, expected {(h, w, 3)}")
            frames[i] = img
    else:
        frames = np.zeros((0, h, w, 3), dtype=np.uint8)

    imu, stamps = {}, {}
    if load_imu:
        for dev in manifest.devices:
            p = imu_path(clip_dir, dev.device_id)
            if not p.is_file():
                raise MissingFile(f"{manifest.clip_id}: missing IMU file for device '{dev.device_id}' ({p.name})")
            ts, vals = read_imu_csv(p)
            expected = manifest.expected_imu_rows(dev)
            if abs(len(vals) - expected) > 1:
                raise ManifestMismatch(
                    f"{manifest.clip_id}: device '{dev.device_id}' has {len(vals)} rows, expected ~{expected:g}"
                )
            imu[dev.device_id] = vals
            stamps[dev.device_id] = ts
    return RawClip(manifest=manifest, frames=frames, imu=imu, imu_timestamps=stamps)


def write_clip(clip: RawClip, path) -> Path:
    """Write a clip in the canonical format. Inverse of :func:`load_clip`."""
    clip_dir = Path(path)
    try:
        (clip_dir / "frames").mkdir(parents=True, exist_ok=True)
        (clip_dir / "manifest.json").write_text(
            json.dumps(clip.manifest.to_dict(), indent=2) + "\n", encoding="utf-8"
        )
        for i, frame in enumerate(clip.frames):
            Image.fromarray(np.asarray(frame, dtype=np.uint8), mode="RGB").save(frame_path(clip_dir, i), optimize=False)
        for dev in clip.manifest.devices:
            vals = clip.imu[dev.device_id]
            ts = clip.imu_timestamps.get(dev.device_id)
            if ts is None:
                ts = np.arange(len(vals)) / dev.sample_rate_hz
            write_imu_csv(imu_path(clip_dir, dev.device_id), ts, vals)
    except OSError as exc:
        raise IoError(f"failed writing clip to {clip_dir}: {exc}") from exc
    return clip_dir


def validate_manifest(manifest: ClipManifest, root) -> ValidationReport:
    """List every violated invariant of ``manifest`` against the files under ``root``.

    Never raises; an empty report means :func:`load_clip` will succeed.
    """
    report = ValidationReport()
    root = Path(root)

    expected_frames = round(manifest.duration_s * manifest.video_fps)
    if manifest.frame_count != expected_frames:
        report.add(
            "frame_count",
            f"frame_count {manifest.frame_count} != round(duration_s*video_fps) = {expected_frames}",
        )
    if manifest.video_fps <= 0:
        report.add("video_fps", f"video_fps must be positive, got {manifest.video_fps}")
    if manifest.split not in SPLITS:
        report.add("split", f"unknown split '{manifest.split}'")
    elif manifest.split != "pretrain" and manifest.label is None:
        report.add("label", f"split '{manifest.split}' requires a label")

    seen = set()
    for dev in manifest.devices:
        if dev.device_id in seen:
            report.add("device_unique", f"duplicate device_id '{dev.device_id}'")
        seen.add(dev.device_id)
        if not dev.sample_rate_hz > 0:
            report.add("sample_rate", f"device '{dev.device_id}' sample_rate_hz must be > 0")
        if tuple(dev.axes) != AXES:
            report.add("axes", f"device '{dev.device_id}' axes must be {list(AXES)}, got {list(dev.axes)}")

    frames_dir = root / "frames"
    if not frames_dir.is_dir():
        report.add("missing_file", f"missing frames/ directory under {root}")
    else:
        on_disk = sorted(frames_dir.glob("frame_*.png"))
        if len(on_disk) != manifest.frame_count:
            report.add("frame_files", f"manifest frame_count {manifest.frame_count}, {len(on_disk)} PNG files on disk")
        else:
            h, w = manifest.frame_size
            for i in range(manifest.frame_count):
                fp = frame_path(root, i)
                if not fp.is_file():
                    report.add("missing_file", f"missing {fp.name}")
                    continue
                try:
                    with Image.open(fp) as im:
                        size = (im.height, im.width)
                except OSError as exc:
                    report.add("frame_decode", f"{fp.name}: {exc}")
                    continue
                if size != (h, w):
                    report.add("frame_size", f"{fp.name} is {size}, expected {(h, w)}")

    for dev in manifest.devices:
        p = imu_path(root, dev.device_id)
        if not p.is_file():
            report.add("missing_file", f"missing IMU file for device '{dev.device_id}'")
            continue
        try:
            _, vals = read_imu_csv(p)
        except ParseError as exc:
            report.add("parse", str(exc))
            continue
        if dev.sample_rate_hz > 0 and abs(len(vals) - manifest.expected_imu_rows(dev)) > 1:
            report.add("imu_rows", f"device '{dev.device_id}' has {len(vals)} rows")
    return report


# ---------------------------------------------------------------------------
# dataset-level helpers


def clip_dir(root, clip_id: str) -> Path:
    return Path(root) / "clips" / clip_id


def load_splits(root) -> dict:
    path = Path(root) / "splits.json"
    if not path.is_file():
        raise MissingFile(f"missing splits.json under {root}")
    data = json.loads(path.read_text(encoding="utf-8"))
    return {k: list(v) for k, v in data.items()}


def load_classes(root) -> list[str]:
    """Class names in index order; from ``classes.json`` or derived from labels."""
    path = Path(root) / "classes.json"
    if path.is_file():
        return list(json.loads(path.read_text(encoding="utf-8")))
    labels = set()
    for ids in load_splits(root).values():
        for cid in ids:
            m = read_manifest(clip_dir(root, cid))
            if m.label is not None:
                labels.add(m.label)
    return sorted(labels)


def iter_split(root, splits: Iterable[str], **load_kwargs):
    table = load_splits(root)
    for split in splits:
        for cid in table.get(split, []):
            yield load_clip(clip_dir(root, cid), **load_kwargs)


# ---------------------------------------------------------------------------
# synthetic data


def _default_devices():
    return [DeviceSpec(d, 50.0) for d in DEFAULT_DEVICES]


@dataclass
class SyntheticSpec:
    num_classes: int = 4
    clips_per_class: int = 10
    duration_s: float = 2.0
    video_fps: float = 15.0
    frame_size: tuple = (64, 64)
    devices: list = field(default_factory=_default_devices)
    correlation_strength: float = 1.0
    noise_level: float = 0.0
    seed: int = 0
    # frequencies are multiples of 1/duration so each class sits on an exact FFT bin;
    # they start well above 0 Hz so the gravity offset does not leak onto them
    base_frequency_hz: float = 3.0
    frequency_step_hz: float = 1.0
    split_fractions: dict = field(
        default_factory=lambda: {"pretrain": 0.5, "train": 0.25, "val": 0.05, "test": 0.2}
    )

    def validate(self):
        if self.num_classes < 2:
            raise InvalidParam("num_classes must be >= 2")
        if self.clips_per_class < 1:
            raise InvalidParam("clips_per_class must be >= 1")
        if not 0.0 <= self.correlation_strength <= 1.0:
            raise InvalidParam("correlation_strength must lie in [0, 1]")
        if self.noise_level < 0:
            raise InvalidParam("noise_level must be non-negative")
        if self.duration_s <= 0 or self.video_fps <= 0:
            raise InvalidParam("duration_s and video_fps must be positive")
        ids = [d.device_id for d in self.devices]
        if len(set(ids)) != len(ids) or not ids:
            raise InvalidParam("device ids must be unique and non-empty")
        if set(self.split_fractions) - set(SPLITS):
            raise InvalidParam(f"unknown split in split_fractions: {sorted(self.split_fractions)}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["devices"] = [dv.to_dict() for dv in self.devices]
        d["frame_size"] = list(self.frame_size)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise InvalidParam(f"unknown SyntheticSpec keys: {sorted(unknown)}")
        d = dict(d)
        if "devices" in d:
            d["devices"] = [DeviceSpec.from_dict(x) if isinstance(x, dict) else DeviceSpec(str(x), 50.0) for x in d["devices"]]
        if "frame_size" in d:
            d["frame_size"] = tuple(int(v) for v in d["frame_size"])
        return cls(**d)


@dataclass(frozen=True)
class ClassLayout:
    """Ground-truth generative parameters of one synthetic class."""

    index: int
    name: str
    frequency_hz: float
    direction_rad: float
    active_devices: tuple  # device indices carrying the class oscillation


def class_layouts(spec: SyntheticSpec) -> list[ClassLayout]:
    n_dev = len(spec.devices)
    out = []
    for c in range(spec.num_classes):
        active = [c % n_dev]
        if c >= n_dev and n_dev > 1:
            active.append((c + 1 + c // n_dev) % n_dev)
        out.append(
            ClassLayout(
                index=c,
                name=f"class_{c:02d}",
                frequency_hz=spec.base_frequency_hz + spec.frequency_step_hz * c,
                direction_rad=math.pi * c / spec.num_classes,
                active_devices=tuple(sorted(set(active))),
            )
        )
    return out


def oscillation_axis(device_index: int) -> int:
    """Axis along which a device's class oscillation is injected."""
    return device_index % 3


def _split_assignment(spec: SyntheticSpec, rng: np.random.Generator) -> list[str]:
    """Split name for each of the ``clips_per_class`` slots of one class."""
    n = spec.clips_per_class
    names = [s for s in SPLITS if s in spec.split_fractions]
    total = sum(spec.split_fractions[s] for s in names)
    counts = {s: int(math.floor(n * spec.split_fractions[s] / total)) for s in names}
    leftover = n - sum(counts.values())
    # remainder goes to the largest fractions first
    for s in sorted(names, key=lambda s: -spec.split_fractions[s])[: max(leftover, 0)]:
        counts[s] += 1
    slots = [s for s in names for _ in range(counts[s])]
    return [slots[i] for i in rng.permutation(len(slots))]


def _render_clip(spec: SyntheticSpec, layout: ClassLayout, rng: np.random.Generator):
    """Generate (frames, imu, timestamps, trajectory) for one clip."""
    H, W = spec.frame_size
    n_frames = int(round(spec.duration_s * spec.video_fps))
    omega = 2 * math.pi * layout.frequency_hz
    phase = rng.uniform(0, 2 * math.pi)
    amplitude = rng.uniform(1.5, 3.0)

    # independent distractor motion used for the uncoupled share of the video trajectory
    grid = [k / spec.duration_s for k in range(1, int(3.0 * spec.duration_s) + 1)]
    grid = [f for f in grid if abs(f - layout.frequency_hz) > 1e-9 and f < spec.video_fps / 2]
    f_ind = grid[rng.integers(len(grid))] if grid else layout.frequency_hz
    phase_ind = rng.uniform(0, 2 * math.pi)

    imu, stamps = {}, {}
    for k, dev in enumerate(spec.devices):
        n = int(round(spec.duration_s * dev.sample_rate_hz))
        t = np.arange(n) / dev.sample_rate_hz
        g = rng.normal(size=3)
        g = 9.81 * g / np.linalg.norm(g)
        vals = np.tile(g, (n, 1))
        if k in layout.active_devices:
            vals[:, oscillation_axis(k)] += amplitude * np.sin(omega * t + phase)
        if spec.noise_level > 0:
            vals = vals + rng.normal(scale=2.0 * spec.noise_level, size=vals.shape)
        imu[dev.device_id] = vals
        stamps[dev.device_id] = t

    rho = spec.correlation_strength
    t_v = np.arange(n_frames) / spec.video_fps
    traj = rho * np.sin(omega * t_v + phase) + math.sqrt(max(0.0, 1 - rho * rho)) * np.sin(
        2 * math.pi * f_ind * t_v + phase_ind
    )
    reach = 0.3 * min(H, W)
    cy = H / 2 + rng.uniform(-0.06, 0.06) * H
    cx = W / 2 + rng.uniform(-0.06, 0.06) * W
    dy, dx = math.sin(layout.direction_rad), math.cos(layout.direction_rad)
    sigma = rng.uniform(0.09, 0.12) * min(H, W)
    background = rng.uniform(20, 60)
    color = rng.uniform(180, 255, size=3)

    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    frames = np.empty((n_frames, H, W, 3), dtype=np.uint8)
    for i in range(n_frames):
        py = cy + reach * traj[i] * dy
        px = cx + reach * traj[i] * dx
        blob = np.exp(-((yy - py) ** 2 + (xx - px) ** 2) / (2 * sigma * sigma))
        img = background + blob[..., None] * (color - background)
        if spec.noise_level > 0:
            img = img + rng.normal(scale=40.0 * spec.noise_level, size=img.shape)
        frames[i] = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return frames, imu, stamps, traj


def generate_synthetic_dataset(spec: SyntheticSpec, out_dir) -> Path:
    """Write a labelled synthetic video+IMU dataset in the canonical format.

    Every class is a (frequency, motion direction, active devices) triple. The
    blob trajectory is ``rho*sin(w t + phi) + sqrt(1-rho^2)*sin(w' t + phi')``
    where ``phi`` is the IMU phase and ``w'`` an independent distractor
    frequency, so ``rho = correlation_strength`` sets the coupling. Pretrain
    clips are written unlabeled; ground truth for every clip goes to
    ``synthetic_meta.json``. Each clip draws from its own seed stream, so
    output is independent of generation order.
    """
    spec.validate()
    root = Path(out_dir)
    layouts = class_layouts(spec)
    split_rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0xC1A55]))
    assignment = [_split_assignment(spec, split_rng) for _ in layouts]

    splits = {s: [] for s in SPLITS if s in spec.split_fractions}
    meta = {}
    try:
        root.mkdir(parents=True, exist_ok=True)
        idx = 0
        for layout in layouts:
            for j in range(spec.clips_per_class):
                clip_id = f"clip_{idx:05d}"
                rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 1, idx]))
                frames, imu, stamps, _ = _render_clip(spec, layout, rng)
                split = assignment[layout.index][j]
                manifest = ClipManifest(
                    clip_id=clip_id,
                    duration_s=spec.duration_s,
                    video_fps=spec.video_fps,
                    frame_count=len(frames),
                    frame_size=tuple(spec.frame_size),
                    devices=list(spec.devices),
                    label=None if split == "pretrain" else layout.name,
                    split=split,
                )
                write_clip(RawClip(manifest, frames, imu, stamps), clip_dir(root, clip_id))
                splits[split].append(clip_id)
                meta[clip_id] = {
                    "class_index": layout.index,
                    "class_name": layout.name,
                    "frequency_hz": layout.frequency_hz,
                    "active_devices": [spec.devices[k].device_id for k in layout.active_devices],
                    "split": split,
                }
                idx += 1
        (root / "splits.json").write_text(json.dumps(splits, indent=2) + "\n", encoding="utf-8")
        (root / "classes.json").write_text(json.dumps([l.name for l in layouts]) + "\n", encoding="utf-8")
        (root / "synthetic_meta.json").write_text(
            json.dumps({"spec": spec.to_dict(), "clips": meta}, indent=2) + "\n", encoding="utf-8"
        )
    except OSError as exc:
        raise IoError(f"failed writing synthetic dataset to {root}: {exc}") from exc
    return root


def load_synthetic_meta(root) -> dict:
    path = Path(root) / "synthetic_meta.json"
    if not path.is_file():
        raise MissingFile(f"{path} not found (not a synthetic dataset?)")
    return json.loads(path.read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# low-light degradation


def to_linear(frames: np.ndarray) -> np.ndarray:
    return (np.asarray(frames, dtype=np.float64) / 255.0) ** GAMMA


def from_linear(linear: np.ndarray) -> np.ndarray:
    out = np.clip(linear, 0.0, 1.0) ** (1.0 / GAMMA)
    return np.rint(out * 255.0).astype(np.uint8)


def degrade_low_light(frames, light_level: float, shot_strength: float = 0.0, read_sigma: float = 0.0, seed: int = 0):
    """Simulate a darker exposure of 8-bit RGB frames.

    Linearize (gamma 2.2), scale by ``light_level``, add signal-dependent shot
    noise (Gaussian, variance ``shot_strength * value``) and read noise (std
    ``read_sigma``), clamp, re-apply gamma and quantize.
    """
    if not (0.0 < light_level <= 1.0):
        raise InvalidParam(f"light_level must lie in (0, 1], got {light_level}")
    if shot_strength < 0 or read_sigma < 0:
        raise InvalidParam("noise parameters must be non-negative")
    frames = np.asarray(frames)
    if frames.dtype != np.uint8 or frames.shape[-1] != 3:
        raise InvalidParam("frames must be uint8 RGB with a trailing channel axis of 3")
    lin = to_linear(frames) * light_level
    if shot_strength > 0 or read_sigma > 0:
        rng = np.random.default_rng(seed)
        noise = rng.standard_normal(lin.shape) * np.sqrt(shot_strength * lin)
        noise += rng.standard_normal(lin.shape) * read_sigma
        lin = lin + noise
    return from_linear(lin)


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    mse = np.mean((np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) ** 2)
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(255.0**2 / mse)


def workers_from_env(default: int = 1) -> int:
    """Loader parallelism cap from ``EVIMAE_NUM_WORKERS``."""
    try:
        return max(1, int(os.environ.get("EVIMAE_NUM_WORKERS", default)))
    except ValueError:
        return default
