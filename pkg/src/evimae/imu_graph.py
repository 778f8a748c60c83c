"""IMU feature graph over wearable devices and its masked GIN autoencoder."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import InvalidParam, ShapeError
from .masking import MaskPlan, node_mask


@dataclass
class ImuGraph:
    nodes: list  # device ids
    adjacency: torch.Tensor  # (N, N)
    features: torch.Tensor  # (N, F) or (B, N, F)
    # canonical device slot of each node; None means nodes are in canonical order
    node_index: Optional[torch.Tensor] = None

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)


@dataclass(frozen=True)
class GinConfig:
    layers: int = 2
    hidden_dim: int = 64
    learn_eps: bool = True
    # on a complete graph (1 + eps) h_v + sum_{u != v} h_u = eps h_v + sum_u h_u,
    # so eps = 0 erases node identity; start from 1 and let it learn
    eps_init: float = 1.0

    def __post_init__(self):
        if self.layers < 1:
            raise ShapeError("GIN needs at least one layer")

    def to_dict(self):
        return asdict(self)


def fully_connected(n: int, dtype=torch.float32) -> torch.Tensor:
    """All-ones adjacency without self-loops."""
    return torch.ones(n, n, dtype=dtype) - torch.eye(n, dtype=dtype)


def build_graph(features: torch.Tensor, device_ids: Sequence[str], node_index=None) -> ImuGraph:
    """Attach per-device feature rows (last two dims ``N x F``) to a fully connected graph."""
    if features.dim() not in (2, 3) or features.shape[-2] != len(device_ids):
        raise ShapeError(f"expected {len(device_ids)} feature rows, got shape {tuple(features.shape)}")
    if node_index is not None:
        node_index = torch.as_tensor(node_index, dtype=torch.long)
        if node_index.shape != (len(device_ids),):
            raise ShapeError("node_index needs one entry per node")
    return ImuGraph(list(device_ids), fully_connected(len(device_ids), features.dtype), features, node_index)


class GinLayer(nn.Module):
    """h'_v = MLP((1 + eps) h_v + sum_{u in N(v)} h_u)."""

    def __init__(self, in_dim, hidden_dim, out_dim, learn_eps=True, eps_init=0.0):
        super().__init__()
        self.in_dim = in_dim
        eps = torch.tensor(float(eps_init))
        if learn_eps:
            self.eps = nn.Parameter(eps)
        else:
            self.register_buffer("eps", eps)
        self.fc1 = nn.Linear(in_dim, hidden_dim)
        self.fc2 = nn.Linear(hidden_dim, out_dim)

    def forward(self, adj: torch.Tensor, h: torch.Tensor) -> torch.Tensor:
        n = h.shape[-2]
        if adj.shape != (n, n) or h.shape[-1] != self.in_dim:
            raise ShapeError(f"adjacency {tuple(adj.shape)} / features {tuple(h.shape)} inconsistent")
        agg = (1 + self.eps) * h + torch.matmul(adj.to(h.dtype), h)
        return self.fc2(F.gelu(self.fc1(agg)))


class GinStack(nn.Module):
    """GIN layers with a GELU between consecutive layers; output width ``out_dim``."""

    def __init__(self, in_dim, out_dim, cfg: GinConfig):
        super().__init__()
        dims = [in_dim] + [cfg.hidden_dim] * (cfg.layers - 1) + [out_dim]
        self.layers = nn.ModuleList(
            [GinLayer(dims[i], cfg.hidden_dim, dims[i + 1], cfg.learn_eps, cfg.eps_init) for i in range(cfg.layers)]
        )

    def forward(self, adj, h):
        for i, layer in enumerate(self.layers):
            if i:
                h = F.gelu(h)
            h = layer(adj, h)
        return h


def _mask_rows(features: torch.Tensor, masked: torch.Tensor, token: torch.Tensor) -> torch.Tensor:
    """Replace rows flagged in ``masked`` (shape (N,) or (B, N), bool) by ``token``."""
    if masked.shape != features.shape[-2:-1] and masked.shape != features.shape[:-1]:
        raise ShapeError(f"mask shape {tuple(masked.shape)} does not fit features {tuple(features.shape)}")
    m = masked.to(features.device).unsqueeze(-1)
    return torch.where(m, token.to(features.dtype).expand_as(features), features)


def plan_mask(plans, n_nodes: int, batch: Optional[int] = None) -> torch.Tensor:
    """Boolean node mask from one MaskPlan or a list of per-sample plans."""
    if isinstance(plans, MaskPlan):
        if plans.total != n_nodes:
            raise ShapeError(f"plan total {plans.total} != {n_nodes} nodes")
        m = torch.from_numpy(plans.boolean())
        return m if batch is None else m.expand(batch, n_nodes)
    out = []
    for p in plans:
        if p.total != n_nodes:
            raise ShapeError(f"plan total {p.total} != {n_nodes} nodes")
        out.append(torch.from_numpy(p.boolean()))
    return torch.stack(out)


@dataclass
class CorruptedGraph:
    base: ImuGraph  # features hold f_dc
    mask: torch.Tensor  # bool, (N,) or (B, N)
    plans: object  # MaskPlan or list of MaskPlan


class GraphMAE(nn.Module):
    """Masked node-feature autoencoder: corrupt -> GIN encode -> remask -> GIN decode.

    On a fully connected graph every masked node sees the same neighbourhood
    sum and holds the same mask token, so GIN alone maps them all to one
    output. With ``n_nodes`` set, a learned per-device node embedding is added
    to the encoder and decoder inputs (looked up by canonical device slot, so
    permuting devices permutes it along) and masked devices become separable.
    """

    def __init__(self, feature_dim: int, cfg: GinConfig = GinConfig(), n_nodes: Optional[int] = None):
        super().__init__()
        self.feature_dim = feature_dim
        self.cfg = cfg
        self.enc_mask_token = nn.Parameter(torch.zeros(feature_dim))
        self.dec_mask_token = nn.Parameter(torch.zeros(feature_dim))
        self.encoder = GinStack(feature_dim, feature_dim, cfg)
        self.decoder = GinStack(feature_dim, feature_dim, cfg)
        nn.init.normal_(self.enc_mask_token, std=0.02)
        nn.init.normal_(self.dec_mask_token, std=0.02)
        self.node_embed = None
        if n_nodes is not None:
            self.node_embed = nn.Parameter(torch.zeros(n_nodes, feature_dim))
            nn.init.normal_(self.node_embed, std=0.02)

    def _with_identity(self, h: torch.Tensor, node_index) -> torch.Tensor:
        if self.node_embed is None:
            return h
        n = h.shape[-2]
        idx = torch.arange(n) if node_index is None else node_index
        if n > self.node_embed.shape[0]:
            raise ShapeError(f"{n} nodes but only {self.node_embed.shape[0]} node embeddings")
        return h + self.node_embed[idx].to(h.dtype)

    def corrupt(self, graph: ImuGraph, ratio: float = 0.5, seed: int = 0, plans=None) -> CorruptedGraph:
        """Mask a ``ratio`` share of nodes with the encoder token (or apply the given plan(s))."""
        if plans is None:
            if not 0.0 <= ratio <= 1.0:
                raise InvalidParam(f"graph mask ratio must lie in [0, 1], got {ratio}")
            plans = node_mask(graph.n_nodes, ratio, seed)
        batch = graph.features.shape[0] if graph.features.dim() == 3 else None
        mask = plan_mask(plans, graph.n_nodes, batch)
        f_dc = self.mask_nodes(graph.features, mask)
        return CorruptedGraph(ImuGraph(graph.nodes, graph.adjacency, f_dc, graph.node_index), mask, plans)

    def mask_nodes(self, features: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        return _mask_rows(features, mask, self.enc_mask_token)

    def remask(self, f_g: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        return _mask_rows(f_g, mask, self.dec_mask_token)

    def encode(self, adj: torch.Tensor, f_dc: torch.Tensor, node_index=None) -> torch.Tensor:
        out = self.encoder(adj, self._with_identity(f_dc, node_index))
        assert out.shape == f_dc.shape
        return out

    def decode(self, adj: torch.Tensor, f_g: torch.Tensor, node_index=None) -> torch.Tensor:
        out = self.decoder(adj, self._with_identity(f_g, node_index))
        assert out.shape == f_g.shape
        return out

    def forward(self, graph: ImuGraph, ratio: float = 0.5, seed: int = 0, plans=None):
        """Returns (f_hat, mask, f_g)."""
        cg = self.corrupt(graph, ratio, seed, plans)
        f_g = self.encode(graph.adjacency, cg.base.features, graph.node_index)
        f_hat = self.decode(graph.adjacency, self.remask(f_g, cg.mask), graph.node_index)
        return f_hat, cg.mask, f_g
