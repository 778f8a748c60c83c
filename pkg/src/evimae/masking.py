"""Seedable mask plans: random (IMU), structured time/freq (IMU ablation), tube (video), node (graph).

Plans are index sets, so the same machinery masks patches and graph nodes.
Counts use Python's ``round`` (ties to even).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidParam, ShapeError

STRATEGIES = ("random", "time", "freq", "time_freq", "tube", "node")


@dataclass(frozen=True)
class MaskPlan:
    total: int
    masked_indices: tuple
    ratio_requested: float
    seed: int
    strategy: str

    def __post_init__(self):
        idx = tuple(sorted(int(i) for i in self.masked_indices))
        if len(set(idx)) != len(idx) or (idx and (idx[0] < 0 or idx[-1] >= self.total)):
            raise InvalidParam("masked indices must be unique and within [0, total)")
        if self.strategy not in STRATEGIES:
            raise InvalidParam(f"unknown strategy '{self.strategy}'")
        object.__setattr__(self, "masked_indices", idx)

    @property
    def visible_indices(self) -> tuple:
        masked = set(self.masked_indices)
        return tuple(i for i in range(self.total) if i not in masked)

    @property
    def num_masked(self) -> int:
        return len(self.masked_indices)

    @property
    def num_visible(self) -> int:
        return self.total - len(self.masked_indices)

    @property
    def achieved_ratio(self) -> float:
        return self.num_masked / self.total if self.total else 0.0

    def boolean(self) -> np.ndarray:
        m = np.zeros(self.total, dtype=bool)
        m[list(self.masked_indices)] = True
        return m

    def to_json(self) -> str:
        return json.dumps(
            {
                "total": self.total,
                "masked_indices": list(self.masked_indices),
                "ratio_requested": self.ratio_requested,
                "seed": self.seed,
                "strategy": self.strategy,
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "MaskPlan":
        d = json.loads(text)
        return cls(d["total"], tuple(d["masked_indices"]), d["ratio_requested"], d["seed"], d["strategy"])


def _check(total: int, ratio: float):
    if total < 0:
        raise InvalidParam(f"total must be non-negative, got {total}")
    if not 0.0 <= ratio <= 1.0:
        raise InvalidParam(f"mask ratio must lie in [0, 1], got {ratio}")


def _rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


def random_mask(total: int, ratio: float, seed: int) -> MaskPlan:
    _check(total, ratio)
    k = round(ratio * total)
    chosen = _rng(seed).permutation(total)[:k]
    return MaskPlan(total, tuple(chosen), ratio, seed, "random")


def _time_freq_counts(time_cells: int, freq_cells: int, ratio: float) -> tuple[int, int]:
    """Row/column counts whose union is closest to ``ratio``; ties prefer balanced shares."""
    best = None
    for nt in range(time_cells + 1):
        for nf in range(freq_cells + 1):
            achieved = 1 - (1 - nt / time_cells) * (1 - nf / freq_cells)
            key = (abs(achieved - ratio), abs(nt / time_cells - nf / freq_cells), nt + nf)
            if best is None or key < best[0]:
                best = (key, nt, nf)
    return best[1], best[2]


def structured_mask(time_cells: int, freq_cells: int, mode: str, ratio: float, seed: int) -> MaskPlan:
    """Mask whole time columns, frequency rows, or the union of both on one device grid.

    Cell ``(t, f)`` has index ``t * freq_cells + f`` (the patchify order).
    """
    if time_cells < 1 or freq_cells < 1:
        raise InvalidParam("grid dimensions must be positive")
    _check(time_cells * freq_cells, ratio)
    rng = _rng(seed)
    if mode == "time":
        nt, nf = round(ratio * time_cells), 0
    elif mode == "freq":
        nt, nf = 0, round(ratio * freq_cells)
    elif mode == "time_freq":
        nt, nf = _time_freq_counts(time_cells, freq_cells, ratio)
    else:
        raise InvalidParam(f"unknown structured mode '{mode}'")
    cols = rng.permutation(time_cells)[:nt]
    rows = rng.permutation(freq_cells)[:nf]
    grid = np.zeros((time_cells, freq_cells), dtype=bool)
    grid[cols, :] = True
    grid[:, rows] = True
    return MaskPlan(time_cells * freq_cells, tuple(np.flatnonzero(grid.ravel())), ratio, seed, mode)


def tube_mask(spatial_cells: int, temporal_cells: int, ratio: float, seed: int) -> MaskPlan:
    """Same spatial positions masked in every temporal slice; token index = t * spatial_cells + s."""
    if spatial_cells < 1 or temporal_cells < 1:
        raise InvalidParam("cell counts must be positive")
    _check(spatial_cells, ratio)
    k = round(ratio * spatial_cells)
    spatial = _rng(seed).permutation(spatial_cells)[:k]
    idx = (np.arange(temporal_cells)[:, None] * spatial_cells + spatial[None, :]).ravel()
    return MaskPlan(spatial_cells * temporal_cells, tuple(idx), ratio, seed, "tube")


def node_mask(n_nodes: int, ratio: float, seed: int) -> MaskPlan:
    _check(n_nodes, ratio)
    k = round(ratio * n_nodes)
    chosen = _rng(seed).permutation(n_nodes)[:k]
    return MaskPlan(n_nodes, tuple(chosen), ratio, seed, "node")


def imu_mask(n_devices: int, time_cells: int, freq_cells: int, style: str, ratio: float, seed: int) -> MaskPlan:
    """Mask over all IMU tokens of a clip.

    ``random`` draws over the whole token set; structured styles draw an
    independent plan per device grid.
    """
    per_device = time_cells * freq_cells
    total = n_devices * per_device
    if style == "random":
        return random_mask(total, ratio, seed)
    seeds = np.random.SeedSequence(seed).spawn(n_devices)
    idx = []
    for d, ss in enumerate(seeds):
        sub = structured_mask(time_cells, freq_cells, style, ratio, int(ss.generate_state(1)[0]))
        idx.extend(d * per_device + i for i in sub.masked_indices)
    return MaskPlan(total, tuple(idx), ratio, seed, style)


def apply_mask(tokens, plan: MaskPlan):
    """Keep the visible tokens (first axis) in original order.

    Returns ``(visible_tokens, visible_indices)``; the indices let the decoder
    re-insert tokens at their original slots.
    """
    if len(tokens) != plan.total:
        raise ShapeError(f"token count {len(tokens)} != plan total {plan.total}")
    vis = np.asarray(plan.visible_indices, dtype=np.int64)
    return tokens[vis], vis


def derive_seed(*parts: int) -> int:
    """Stable 63-bit seed from integer parts (e.g. run seed, step, sample)."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1, dtype=np.uint64)[0] >> 1)


def batch_visible(plans: Sequence[MaskPlan]) -> np.ndarray:
    """Stack visible indices of equal-count plans into a (B, n_visible) array."""
    counts = {p.num_visible for p in plans}
    if len(counts) > 1:
        raise ShapeError(f"plans have unequal visible counts {sorted(counts)}")
    return np.asarray([p.visible_indices for p in plans], dtype=np.int64).reshape(len(plans), -1)
