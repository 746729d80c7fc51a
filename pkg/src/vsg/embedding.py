"""Turn a scene graph into network-ready matrices.

Nodes become binary class/attribute indicator vectors compressed by PCA;
edges combine typed semantic relationships with geometric proximity: every
ordered pair of objects closer than a threshold tau gets a directed edge, and
each edge row carries a relationship multi-hot block followed by the 3-D
relative position of target minus source.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .core_graph import ObjectNode, SceneGraph, Taxonomy
from .errors import ConfigError, DimensionError

# Singular values below this fraction of the largest are treated as zero rank.
_RANK_TOL = 1e-12

TAU_PERCENTILES = {"p25": 25.0, "p50": 50.0, "p75": 75.0, "p100": 100.0}


def encode_binary(node: ObjectNode, tax: Taxonomy) -> np.ndarray:
    """Binary vector [class one-hot | attribute multi-hot], length |O|+|A|."""
    out = np.zeros(tax.num_classes + tax.num_attributes, dtype=np.float64)
    out[node.class_index] = 1.0
    for a in node.attribute_indices:
        out[tax.num_classes + a] = 1.0
    return out


def encode_nodes(g: SceneGraph, tax: Taxonomy) -> np.ndarray:
    """Stack encode_binary over all nodes, (N, |O|+|A|), in node order."""
    if g.num_nodes == 0:
        return np.zeros((0, tax.num_classes + tax.num_attributes))
    return np.stack([encode_binary(n, tax) for n in g.nodes])


@dataclass(frozen=True)
class PcaModel:
    """Mean-centered linear projection onto the top principal components.

    rank is the effective rank of the fitted data; rows of components beyond
    it are zero and rank < d_v marks a rank-deficient fit.
    """

    mean: np.ndarray
    components: np.ndarray  # (d_v, D), orthonormal rows up to rank
    explained_variance_ratio: np.ndarray  # (d_v,), non-increasing
    d_v: int
    rank: int

    @property
    def rank_deficient(self) -> bool:
        return self.rank < self.d_v

    @property
    def input_dim(self) -> int:
        return self.mean.shape[0]


def fit_pca(vectors: Sequence[np.ndarray] | np.ndarray, d_v: int) -> PcaModel:
    """Fit a PCA projection to d_v dimensions via SVD of the centered data.

    Components are sign-canonicalized (largest-magnitude entry positive) so
    repeated fits on identical data are bit-identical.
    """
    data = np.asarray(vectors, dtype=np.float64)
    if data.ndim != 2:
        raise DimensionError(f"expected a 2-D stack of vectors, got shape {data.shape}")
    n, dim = data.shape
    if d_v < 1 or d_v > dim:
        raise DimensionError(f"d_v={d_v} must be in [1, {dim}]")
    if n < d_v:
        raise DimensionError(f"need at least d_v={d_v} vectors, got {n}")

    mean = data.mean(axis=0)
    centered = data - mean
    # Rows of vt are the principal directions; s**2 / n are the variances.
    _, s, vt = np.linalg.svd(centered, full_matrices=True)
    variances = np.zeros(dim)
    variances[: s.shape[0]] = s**2
    total = variances.sum()

    rank = int(np.sum(s > _RANK_TOL * max(s[0] if s.size else 0.0, 1.0)))
    components = np.zeros((d_v, dim))
    keep = min(d_v, rank, vt.shape[0])
    components[:keep] = vt[:keep]
    # Canonical sign: the entry with the largest magnitude is positive.
    for row in range(keep):
        pivot = int(np.argmax(np.abs(components[row])))
        if components[row, pivot] < 0:
            components[row] = -components[row]

    if total > 0:
        ratio = variances[:d_v] / total
    else:
        ratio = np.zeros(d_v)
    ratio = ratio.copy()
    ratio[keep:] = 0.0
    return PcaModel(
        mean=mean,
        components=components,
        explained_variance_ratio=ratio,
        d_v=d_v,
        rank=min(rank, d_v),
    )


def transform_pca(m: PcaModel, v: np.ndarray) -> np.ndarray:
    """Project one vector (D,) or a stack (N, D) into the PCA space."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != m.input_dim:
        raise DimensionError(
            f"vector length {v.shape[-1]} does not match PCA input dim {m.input_dim}"
        )
    return (v - m.mean) @ m.components.T


def inverse_transform_pca(m: PcaModel, y: np.ndarray) -> np.ndarray:
    """Map PCA coordinates back to the original space (best rank-d_v guess)."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape[-1] != m.d_v:
        raise DimensionError(f"coordinate length {y.shape[-1]} does not match d_v {m.d_v}")
    return y @ m.components + m.mean


@dataclass(frozen=True)
class EdgeConfig:
    """Geometric edge threshold tau (meters) and semantic-edge switch."""

    tau: float = 0.0
    include_semantic_edges: bool = True

    def __post_init__(self):
        if not self.tau >= 0.0:
            raise ConfigError(f"tau must be >= 0, got {self.tau}")


@dataclass(frozen=True)
class EmbeddedGraph:
    """Matrices a model consumes: node features, edge indices, edge features.

    Edge row k connects node edge_index[k, 0] (source) to edge_index[k, 1]
    (target); its features are [relation multi-hot | position of target minus
    position of source]. node_ids maps feature rows back to object ids.
    """

    node_features: np.ndarray  # (N_v, d_v)
    edge_index: np.ndarray  # (N_e, 2) int64
    edge_features: np.ndarray  # (N_e, |R| + 3)
    node_ids: tuple[str, ...]

    @property
    def num_nodes(self) -> int:
        return self.node_features.shape[0]

    @property
    def num_edges(self) -> int:
        return self.edge_index.shape[0]


def build_edges(
    g: SceneGraph, tax: Taxonomy, cfg: EdgeConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Edge index and feature matrices for one graph.

    A directed edge (i, j) exists for every ordered node pair strictly closer
    than tau, plus every semantic edge when enabled. A pair that qualifies
    both ways yields a single row whose relation block is the union of its
    relation bits. Rows are emitted in (source, target) index order.
    """
    n = g.num_nodes
    num_rel = tax.num_relationships
    relations: dict[tuple[int, int], set[int]] = {}

    if g.num_nodes and cfg.tau > 0:
        pos = g.positions()
        delta = pos[None, :, :] - pos[:, None, :]  # delta[i, j] = pos_j - pos_i
        dist = np.linalg.norm(delta, axis=2)
        close = dist < cfg.tau
        np.fill_diagonal(close, False)
        for i, j in zip(*np.nonzero(close)):
            relations[(int(i), int(j))] = set()

    if cfg.include_semantic_edges:
        for edge in g.semantic_edges:
            key = (g.node_index(edge.source_id), g.node_index(edge.target_id))
            relations.setdefault(key, set()).add(edge.relation_index)

    keys = sorted(relations)
    edge_index = np.zeros((len(keys), 2), dtype=np.int64)
    edge_features = np.zeros((len(keys), num_rel + 3), dtype=np.float64)
    for row, (i, j) in enumerate(keys):
        edge_index[row] = (i, j)
        for r in relations[(i, j)]:
            edge_features[row, r] = 1.0
        pi = np.array(g.nodes[i].position)
        pj = np.array(g.nodes[j].position)
        edge_features[row, num_rel:] = pj - pi
    return edge_index, edge_features


def embed(g: SceneGraph, tax: Taxonomy, pca: PcaModel, cfg: EdgeConfig) -> EmbeddedGraph:
    """Assemble the full embedded graph for one scan. Pure and deterministic."""
    raw = encode_nodes(g, tax)
    if g.num_nodes:
        node_features = transform_pca(pca, raw)
    else:
        node_features = np.zeros((0, pca.d_v))
    edge_index, edge_features = build_edges(g, tax, cfg)
    return EmbeddedGraph(
        node_features=node_features,
        edge_index=edge_index,
        edge_features=edge_features,
        node_ids=g.node_ids,
    )


def pairwise_distance_percentile(graphs: Iterable[SceneGraph], percentile: float) -> float:
    """Percentile of all pairwise intra-scene object distances.

    This is how the named tau presets (p25/p50/p75/p100) are computed over a
    training set.
    """
    distances: list[np.ndarray] = []
    for g in graphs:
        if g.num_nodes < 2:
            continue
        pos = g.positions()
        delta = pos[None, :, :] - pos[:, None, :]
        dist = np.linalg.norm(delta, axis=2)
        iu = np.triu_indices(g.num_nodes, k=1)
        distances.append(dist[iu])
    if not distances:
        raise ConfigError("no graph with at least two nodes; tau percentile undefined")
    pooled = np.concatenate(distances)
    return float(np.percentile(pooled, percentile))


def resolve_tau(tau_spec: float | str, training_graphs: Iterable[SceneGraph]) -> float:
    """Accept either an explicit tau in meters or a percentile preset name."""
    if isinstance(tau_spec, str):
        if tau_spec not in TAU_PERCENTILES:
            raise ConfigError(
                f"unknown tau preset {tau_spec!r}; expected one of {sorted(TAU_PERCENTILES)}"
            )
        return pairwise_distance_percentile(training_graphs, TAU_PERCENTILES[tau_spec])
    tau = float(tau_spec)
    if tau < 0:
        raise ConfigError(f"tau must be >= 0, got {tau}")
    return tau
