"""Node- and edge-level correlation attention over the top-K similarity graph.

Node embeddings are learned; the neighbor sets are refreshed from them once
per epoch, while the similarity values used as edge features stay
differentiable so the embeddings keep receiving gradient.
"""

from __future__ import annotations

import torch
from torch import Tensor, nn

from .errors import DegenerateGraphError
from .graphs import CorrelationGraph, build_correlation_graph
from .torchutil import leaky, per_variable_history, uniform_param


class CorrelationRepresentation(nn.Module):
    """Two attention families over the correlation graph, concatenated.

    ``aggregate_self=True`` reproduces the literal printed aggregation in
    which each node re-weights its own features (a no-op given normalized
    weights); the default aggregates neighbor features. ``zero_edge=True``
    zeroes the edge half of the output (the "no edge features" ablation).
    """

    def __init__(
        self,
        n_sensors: int,
        window: int,
        dim: int,
        embed_dim: int,
        edge_dim: int = 1,
        *,
        aggregate_self: bool = False,
        zero_edge: bool = False,
        dtype: torch.dtype = torch.float32,
    ) -> None:
        super().__init__()
        if n_sensors < 2:
            raise DegenerateGraphError("correlation attention needs at least 2 sensors")
        self.n_sensors = n_sensors
        self.window = window
        self.dim = dim
        self.embed_dim = embed_dim
        self.edge_dim = edge_dim
        self.aggregate_self = aggregate_self
        self.zero_edge = zero_edge

        n, w, m, l, g = n_sensors, window, dim, embed_dim, edge_dim
        self.embeddings = nn.Parameter(0.1 * torch.randn(n, l, dtype=dtype))
        self.w_node = uniform_param(l, w * m, fan_in=w * m, dtype=dtype)
        self.w_edge = uniform_param(l, g, fan_in=g, dtype=dtype)
        self.attn_node = uniform_param(2 * l, fan_in=2 * l, dtype=dtype)
        self.attn_edge = uniform_param(2 * l, fan_in=2 * l, dtype=dtype)

    @property
    def dtype(self) -> torch.dtype:
        return self.w_node.dtype

    def refresh_graph(self, k: int) -> CorrelationGraph:
        """Recompute neighbor sets from the current embeddings (detached)."""
        emb = self.embeddings.detach().cpu().double().numpy()
        return build_correlation_graph(emb, k)

    def edge_features(self) -> Tensor:
        """Differentiable cosine similarities as (N, N, g) edge features."""
        normed = self.embeddings / self.embeddings.norm(dim=1, keepdim=True).clamp_min(1e-12)
        sim = normed @ normed.T
        return sim[:, :, None].expand(-1, -1, self.edge_dim)

    def attention(
        self, history: Tensor, graph: CorrelationGraph
    ) -> tuple[Tensor, Tensor]:
        """Row-stochastic (N, N) node and edge attention over the neighborhoods.

        Entries outside the union-symmetrized neighborhood are exactly zero.
        """
        mask = torch.as_tensor(graph.adjacency_mask())
        if not bool(mask.any(dim=1).all()):
            raise DegenerateGraphError("a node has an empty neighborhood")
        node_proj = per_variable_history(history) @ self.w_node.T  # (N, l)
        edge_proj = torch.einsum("ijg,lg->ijl", self.edge_features(), self.w_edge)

        l = self.embed_dim
        self_part = node_proj @ self.attn_node[:l]  # (N,)
        nbr_part = node_proj @ self.attn_node[l:]  # (N,)
        node_logits = leaky(self_part[:, None] + nbr_part[None, :])
        edge_logits = leaky(
            (node_proj @ self.attn_edge[:l])[:, None] + edge_proj @ self.attn_edge[l:]
        )

        neg_inf = torch.finfo(node_logits.dtype).min
        keep = mask.to(node_logits.dtype)
        node_logits = torch.where(mask, node_logits, neg_inf)
        edge_logits = torch.where(mask, edge_logits, neg_inf)
        alpha_node = torch.softmax(node_logits, dim=1) * keep
        alpha_edge = torch.softmax(edge_logits, dim=1) * keep
        return alpha_node, alpha_edge

    def aggregate(
        self, history: Tensor, alpha_node: Tensor, alpha_edge: Tensor
    ) -> Tensor:
        """Concatenate node- and edge-level aggregates into (N, 2l)."""
        node_proj = per_variable_history(history) @ self.w_node.T
        if self.aggregate_self:
            d_node = leaky(alpha_node.sum(dim=1, keepdim=True) * node_proj)
        else:
            d_node = leaky(alpha_node @ node_proj)
        edge_proj = torch.einsum("ijg,lg->ijl", self.edge_features(), self.w_edge)
        d_edge = leaky(torch.einsum("ij,ijl->il", alpha_edge, edge_proj))
        if self.zero_edge:
            d_edge = torch.zeros_like(d_edge)
        return torch.cat([d_node, d_edge], dim=1)

    def forward(self, history: Tensor, graph: CorrelationGraph) -> Tensor:
        alpha_node, alpha_edge = self.attention(history, graph)
        return self.aggregate(history, alpha_node, alpha_edge)
