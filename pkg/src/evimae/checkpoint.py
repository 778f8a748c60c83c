"""Single-file checkpoint archive: JSON header + named raw float32 arrays."""

from __future__ import annotations

import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .errors import ConfigError, IoError, MissingFile

FORMAT = "evimae-checkpoint"
VERSION = 1


@dataclass
class Checkpoint:
    header: dict
    params: dict  # name -> np.ndarray (float32)
    optimizer: Optional[dict] = None  # torch optimizer state_dict with tensors
    extra: dict = field(default_factory=dict)

    @property
    def config(self) -> dict:
        return self.header.get("config", {})

    @property
    def stats(self) -> dict:
        return self.header.get("stats", {})

    @property
    def epoch(self) -> int:
        return int(self.header.get("epoch", 0))

    @property
    def step(self) -> int:
        return int(self.header.get("step", 0))


def _raw(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f4").tobytes(order="C")


def save_checkpoint(
    path,
    model: torch.nn.Module,
    optimizer: Optional[torch.optim.Optimizer] = None,
    config: Optional[dict] = None,
    stats: Optional[dict] = None,
    epoch: int = 0,
    step: int = 0,
    rng: Optional[dict] = None,
    extra: Optional[dict] = None,
) -> Path:
    """Write model (and optionally optimizer) state to one zip archive.

    Every tensor is stored as row-major little-endian float32 under
    ``arrays/<name>``; the header lists name, shape and dtype of each.
    """
    path = Path(path)
    entries, blobs = [], {}
    for name, t in model.state_dict().items():
        arr = t.detach().cpu().numpy()
        key = f"arrays/param/{name}"
        entries.append({"name": name, "shape": list(arr.shape), "dtype": str(arr.dtype), "file": key})
        blobs[key] = _raw(arr)
    optim_header = None
    if optimizer is not None:
        sd = optimizer.state_dict()
        state_idx = []
        for pid, st in sd["state"].items():
            keys = []
            for k, v in st.items():
                arr = v.detach().cpu().numpy() if torch.is_tensor(v) else np.asarray(v, dtype=np.float32)
                key = f"arrays/optim/{pid}/{k}"
                blobs[key] = _raw(arr)
                keys.append({"key": k, "shape": list(arr.shape), "tensor": bool(torch.is_tensor(v)), "file": key})
            state_idx.append({"id": int(pid), "entries": keys})
        optim_header = {"type": type(optimizer).__name__, "param_groups": sd["param_groups"], "state": state_idx}
    header = {
        "format": FORMAT,
        "version": VERSION,
        "config": config or {},
        "stats": stats or {},
        "epoch": int(epoch),
        "step": int(step),
        "rng": rng or {},
        "params": entries,
        "optimizer": optim_header,
        "extra": extra or {},
    }
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_STORED) as zf:
            zf.writestr("header.json", json.dumps(header, indent=2))
            for key, data in blobs.items():
                zf.writestr(key, data)
        tmp.replace(path)
    except OSError as exc:
        raise IoError(f"cannot write checkpoint {path}: {exc}") from exc
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"checkpoint not found: {path}")
    try:
        with zipfile.ZipFile(path) as zf:
            header = json.loads(zf.read("header.json"))
            if header.get("format") != FORMAT:
                raise ConfigError(f"{path} is not an evimae checkpoint")
            if header.get("version") != VERSION:
                raise ConfigError(f"unsupported checkpoint version {header.get('version')}")

            def arr(key, shape):
                return np.frombuffer(zf.read(key), dtype="<f4").reshape(shape).copy()

            params = {e["name"]: arr(e["file"], e["shape"]) for e in header["params"]}
            optim = None
            oh = header.get("optimizer")
            if oh:
                state = {}
                for s in oh["state"]:
                    st = {}
                    for e in s["entries"]:
                        a = arr(e["file"], e["shape"])
                        st[e["key"]] = torch.from_numpy(a) if e["tensor"] else float(a)
                    state[s["id"]] = st
                optim = {"state": state, "param_groups": oh["param_groups"]}
    except (zipfile.BadZipFile, KeyError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise IoError(f"corrupt checkpoint {path}: {exc}") from exc
    return Checkpoint(header, params, optim, header.get("extra", {}))


def apply_params(model: torch.nn.Module, ckpt: Checkpoint, strict: bool = True, exclude: tuple = ()) -> list:
    """Copy stored arrays into ``model``; returns the names that were not loaded."""
    own = model.state_dict()
    skipped = []
    new = {}
    for name, t in own.items():
        if any(name.startswith(p) for p in exclude) or name not in ckpt.params:
            skipped.append(name)
            continue
        a = ckpt.params[name]
        if tuple(a.shape) != tuple(t.shape):
            if strict:
                raise ConfigError(f"shape mismatch for {name}: {a.shape} vs {tuple(t.shape)}")
            skipped.append(name)
            continue
        new[name] = torch.from_numpy(a).to(t.dtype)
    if strict and skipped:
        raise ConfigError(f"checkpoint lacks parameters: {skipped[:5]}")
    model.load_state_dict(new, strict=False)
    return skipped


def apply_optimizer(optimizer: torch.optim.Optimizer, ckpt: Checkpoint):
    if ckpt.optimizer is None:
        raise ConfigError("checkpoint has no optimizer state")
    optimizer.load_state_dict(ckpt.optimizer)

