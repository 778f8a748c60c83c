import numpy as np
import pytest
import torch

from evimae.dataset_io import ClipManifest, DeviceSpec, RawClip, SyntheticSpec, generate_synthetic_dataset, write_clip


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)
    np.random.seed(0)


def make_clip(clip_id="c0", duration=2.0, fps=60.0, size=(8, 10), devices=None, rate=50.0, seed=0, label="a", split="train"):
    rng = np.random.default_rng(seed)
    devices = devices or ["left_wrist", "right_wrist", "left_ankle", "right_ankle"]
    n_frames = int(round(duration * fps))
    m = ClipManifest(clip_id, duration, fps, n_frames, tuple(size), [DeviceSpec(d, rate) for d in devices], label, split)
    frames = rng.integers(0, 256, size=(n_frames, size[0], size[1], 3), dtype=np.uint8)
    n = int(round(duration * rate))
    imu = {d: rng.normal(size=(n, 3)) for d in devices}
    stamps = {d: np.arange(n) / rate for d in devices}
    return RawClip(m, frames, imu, stamps)


@pytest.fixture
def clip_factory():
    return make_clip


@pytest.fixture
def written_clip(tmp_path):
    clip = make_clip()
    path = write_clip(clip, tmp_path / "c0")
    return clip, path


@pytest.fixture(scope="session")
def small_synthetic(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    spec = SyntheticSpec(num_classes=4, clips_per_class=6, noise_level=0.0, seed=3)
    generate_synthetic_dataset(spec, root)
    return root, spec
