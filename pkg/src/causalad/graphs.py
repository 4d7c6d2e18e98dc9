"""The three subgraph structures plus an independent lag-regression oracle.

The correlation graph links sensors by cosine similarity of learned
embeddings; the causal graph holds thresholded time-lagged attention edges
(acyclic by construction, every edge points forward in time); the temporal
graph is the complete graph over the window positions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .errors import (
    AttentionNormalizationError,
    ConditioningError,
    DegenerateEmbeddingError,
)
from .data import TimeSeriesMatrix

LagNode = tuple[int, int]  # (sensor index, timestamp)


@dataclass
class CorrelationGraph:
    """Top-K similarity neighborhoods over the sensor set."""

    similarity: np.ndarray  # (N, N), symmetric, unit diagonal
    neighbor_sets: list[list[int]]  # per node, descending similarity, <= K entries
    k: int
    edge_features: np.ndarray | None = None  # (N, N, g); defaults to similarity

    def __post_init__(self) -> None:
        if self.edge_features is None:
            self.edge_features = self.similarity[:, :, None]

    @property
    def n_nodes(self) -> int:
        return self.similarity.shape[0]

    def undirected_neighbors(self, i: int) -> list[int]:
        """Union-symmetrized neighborhood used for message passing."""
        mutual = set(self.neighbor_sets[i])
        mutual.update(j for j in range(self.n_nodes) if i in self.neighbor_sets[j])
        return sorted(mutual)

    def adjacency_mask(self) -> np.ndarray:
        """Boolean (N, N) mask of the union-symmetrized neighborhoods."""
        n = self.n_nodes
        mask = np.zeros((n, n), dtype=bool)
        for i, nbrs in enumerate(self.neighbor_sets):
            mask[i, nbrs] = True
        return mask | mask.T


@dataclass
class CausalEdge:
    cause: LagNode  # (j, t') with t' < t
    effect: LagNode  # (i, t)
    weight: float


@dataclass
class CausalGraph:
    """Thresholded time-lagged edges for one window; a DAG by construction."""

    edges: list[CausalEdge]
    theta: float
    t: int
    parent_sets: dict[LagNode, set[LagNode]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.parent_sets:
            for e in self.edges:
                self.parent_sets.setdefault(e.effect, set()).add(e.cause)

    def to_json(self) -> str:
        payload = {
            "theta": self.theta,
            "edges": [
                {"cause": list(e.cause), "effect": list(e.effect), "weight": e.weight}
                for e in self.edges
            ],
        }
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text: str, t: int | None = None) -> "CausalGraph":
        payload = json.loads(text)
        edges = [
            CausalEdge(tuple(e["cause"]), tuple(e["effect"]), float(e["weight"]))
            for e in payload["edges"]
        ]
        if t is None:
            t = edges[0].effect[1] if edges else 0
        return cls(edges=edges, theta=float(payload["theta"]), t=t)


@dataclass
class TemporalGraph:
    """Complete graph over the window positions t-window .. t-1."""

    t: int
    window: int

    @property
    def node_timestamps(self) -> list[int]:
        return list(range(self.t - self.window, self.t))

    @property
    def edge_index(self) -> np.ndarray:
        """(2, window**2) dense pair index; attention supplies the weights."""
        idx = np.arange(self.window)
        src, dst = np.meshgrid(idx, idx, indexing="ij")
        return np.stack([src.ravel(), dst.ravel()])


# ---------------------------------------------------------------------------
# Correlation graph construction
# ---------------------------------------------------------------------------

def node_embedding_similarity(embeddings: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarity of the N embedding rows."""
    emb = np.asarray(embeddings, dtype=np.float64)
    norms = np.linalg.norm(emb, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise DegenerateEmbeddingError(
            f"node {zero[0]} has a zero-norm embedding; cosine is undefined"
        )
    sim = (emb @ emb.T) / np.outer(norms, norms)
    sim = np.clip(sim, -1.0, 1.0)
    # Enforce exact symmetry and unit diagonal against rounding.
    sim = 0.5 * (sim + sim.T)
    np.fill_diagonal(sim, 1.0)
    return sim


def topk_neighbors(similarity: np.ndarray, k: int) -> list[list[int]]:
    """Per node, the K most similar other nodes; ties broken by lower index."""
    if k < 1:
        raise ValueError("k must be >= 1")
    n = similarity.shape[0]
    out: list[list[int]] = []
    for i in range(n):
        others = [j for j in range(n) if j != i]
        # Stable sort on (-similarity) keeps the lower index first on ties.
        others.sort(key=lambda j: -similarity[i, j])
        out.append(others[: min(k, n - 1)])
    return out


def build_correlation_graph(embeddings: np.ndarray, k: int) -> CorrelationGraph:
    sim = node_embedding_similarity(embeddings)
    return CorrelationGraph(similarity=sim, neighbor_sets=topk_neighbors(sim, k), k=k)


# ---------------------------------------------------------------------------
# Causal graph finalization
# ---------------------------------------------------------------------------

def finalize_causal_graph(
    attention: np.ndarray, theta: float, t: int
) -> CausalGraph:
    """Keep attention entries >= theta as lagged edges into time ``t``.

    ``attention`` has shape (N effect, N cause, window); the last axis indexes
    window positions oldest-first, so position p maps to source time
    ``t - window + p``.
    """
    att = np.asarray(attention, dtype=np.float64)
    if att.ndim != 3:
        raise ValueError(f"attention must be (N, N, window), got {att.shape}")
    if (att < 0).any():
        raise AttentionNormalizationError("attention has negative entries")
    row_sums = att.sum(axis=(1, 2))
    if np.abs(row_sums - 1.0).max() > 1e-4:
        raise AttentionNormalizationError(
            f"attention rows must sum to 1 (max deviation {np.abs(row_sums - 1).max():.2e})"
        )
    n_effect, n_cause, window = att.shape
    edges: list[CausalEdge] = []
    keep = np.argwhere(att >= theta)
    for i, j, p in keep:
        t_src = t - window + int(p)
        edges.append(
            CausalEdge(cause=(int(j), t_src), effect=(int(i), t), weight=float(att[i, j, p]))
        )
    return CausalGraph(edges=edges, theta=theta, t=t)


def topological_order(graph: CausalGraph) -> list[LagNode] | None:
    """Kahn's algorithm over the unrolled node set; None if a cycle exists."""
    nodes: set[LagNode] = set()
    succ: dict[LagNode, list[LagNode]] = {}
    indeg: dict[LagNode, int] = {}
    for e in graph.edges:
        nodes.add(e.cause)
        nodes.add(e.effect)
        succ.setdefault(e.cause, []).append(e.effect)
        indeg[e.effect] = indeg.get(e.effect, 0) + 1
    ready = sorted(n for n in nodes if indeg.get(n, 0) == 0)
    order: list[LagNode] = []
    while ready:
        node = ready.pop()
        order.append(node)
        for nxt in succ.get(node, []):
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                ready.append(nxt)
    return order if len(order) == len(nodes) else None


# ---------------------------------------------------------------------------
# Lag-regression oracle
# ---------------------------------------------------------------------------

def _ols_rss(design: np.ndarray, y: np.ndarray) -> float:
    """Residual sum of squares; falls back to a tiny ridge if singular."""
    try:
        coef, residuals, rank, _ = np.linalg.lstsq(design, y, rcond=None)
        if rank < design.shape[1]:
            raise np.linalg.LinAlgError("rank deficient")
    except np.linalg.LinAlgError:
        gram = design.T @ design + 1e-6 * np.eye(design.shape[1])
        try:
            coef = np.linalg.solve(gram, design.T @ y)
        except np.linalg.LinAlgError as exc:
            raise ConditioningError(
                "design matrix singular even with ridge 1e-6"
            ) from exc
    resid = y - design @ coef
    return float(resid @ resid)


def granger_oracle(
    x: TimeSeriesMatrix | np.ndarray,
    max_lag: int,
    significance: float = 0.01,
) -> set[tuple[int, int, int]]:
    """Pairwise lagged F-tests; returns {(cause j, effect i, best lag)}.

    For each ordered pair (j, i), an autoregression of sensor i on its own
    ``max_lag`` past values is compared against one augmented with j's past
    values. The edge is reported when the variance reduction is significant,
    with the lag taken from j's largest-magnitude coefficient. Validation
    tool only; the model discovers causality through attention.
    """
    if not 0 < significance < 1:
        raise ValueError("significance must lie in (0, 1)")
    values = x.values if isinstance(x, TimeSeriesMatrix) else np.asarray(x, dtype=np.float64)
    if values.ndim == 3:
        values = values.mean(axis=2)  # collapse m for the scalar regression
    n, t_total = values.shape
    if t_total <= 10 * max_lag * n:
        raise ValueError(
            f"need T > 10 * max_lag * N = {10 * max_lag * n}, got T={t_total}"
        )
    rows = t_total - max_lag
    ones = np.ones((rows, 1))
    lag_mat = {
        i: np.column_stack([values[i, max_lag - lag : t_total - lag] for lag in range(1, max_lag + 1)])
        for i in range(n)
    }
    edges: set[tuple[int, int, int]] = set()
    for i in range(n):
        y = values[i, max_lag:]
        restricted = np.hstack([ones, lag_mat[i]])
        rss_r = _ols_rss(restricted, y)
        df_extra = max_lag
        for j in range(n):
            if j == i:
                continue
            design = np.hstack([restricted, lag_mat[j]])
            rss_u = _ols_rss(design, y)
            df_resid = rows - design.shape[1]
            if df_resid <= 0 or rss_u <= 0:
                continue
            f_stat = ((rss_r - rss_u) / df_extra) / (rss_u / df_resid)
            if f_stat <= 0:
                continue
            p_value = float(stats.f.sf(f_stat, df_extra, df_resid))
            if p_value < significance:
                gram = design.T @ design + 1e-12 * np.eye(design.shape[1])
                coef = np.linalg.solve(gram, design.T @ y)
                j_coefs = coef[1 + max_lag :]
                best_lag = int(np.argmax(np.abs(j_coefs))) + 1
                edges.add((j, i, best_lag))
    return edges


def save_causal_graph(graph: CausalGraph, path: str | Path) -> None:
    Path(path).write_text(graph.to_json() + "\n")
