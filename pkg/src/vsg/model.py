"""Graph network predicting per-object change probabilities.

The core layer rule is

    out_i = f(z_i) + sum over incoming edges (j -> i) of z_j * h(q_ji)

where f and h are small MLPs, q_ji is the edge feature vector, and * is an
elementwise product (h emits one gate per feature channel, or a single scalar
gate when configured). Two such layers with ReLU and dropout between them
feed a linear head with three independent sigmoid outputs: the probabilities
of position, state, and instance change for each object.

A checkpoint bundles the parameters with the PCA model, edge config, and
taxonomy name used at train time, so a loaded model embeds scenes exactly as
it was trained to.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .core_graph import SceneGraph, Taxonomy, taxonomy_from_dict, taxonomy_to_dict
from .embedding import EdgeConfig, EmbeddedGraph, PcaModel, embed
from .errors import CheckpointError, DimensionError, GraphError, ParseError, UsageError
from .nn_core import Mlp, ParamStore, dropout, dropout_backward, relu, sigmoid

CHECKPOINT_VERSION = 1

KIND_DELTAVSG = "deltavsg"
KIND_MLP_BASELINE = "mlp_baseline"


class MpConv:
    """One message-passing convolution layer; preserves the feature width."""

    def __init__(
        self,
        dim: int,
        edge_dim: int,
        hidden_dim: int,
        store: ParamStore,
        prefix: str,
        rng: np.random.Generator,
        scalar_gate: bool = False,
    ):
        self.dim = dim
        self.edge_dim = edge_dim
        self.scalar_gate = scalar_gate
        gate_dim = 1 if scalar_gate else dim
        self.f = Mlp([dim, hidden_dim, dim], store, f"{prefix}.f", rng)
        self.h = Mlp([edge_dim, hidden_dim, gate_dim], store, f"{prefix}.h", rng)

    def forward(
        self, z: np.ndarray, edge_index: np.ndarray, edge_features: np.ndarray
    ) -> tuple[np.ndarray, tuple]:
        n = z.shape[0]
        if z.shape[1] != self.dim:
            raise DimensionError(f"node width {z.shape[1]} != layer dim {self.dim}")
        if edge_index.size and (edge_index.min() < 0 or edge_index.max() >= n):
            raise GraphError(f"edge index out of range for {n} nodes")
        out, f_cache = self.f.forward(z)
        out = np.array(out, copy=True)
        if edge_index.shape[0]:
            if edge_features.shape[1] != self.edge_dim:
                raise DimensionError(
                    f"edge feature width {edge_features.shape[1]} != {self.edge_dim}"
                )
            src = edge_index[:, 0]
            tgt = edge_index[:, 1]
            gates, h_cache = self.h.forward(edge_features)
            messages = z[src] * gates  # broadcasts when the gate is scalar
            np.add.at(out, tgt, messages)
        else:
            gates, h_cache = None, None
        cache = (z, edge_index, f_cache, h_cache, gates)
        return out, cache

    def backward(self, cache: tuple, dout: np.ndarray) -> np.ndarray:
        z, edge_index, f_cache, h_cache, gates = cache
        dz = self.f.backward(f_cache, dout)
        dz = np.array(dz, copy=True)
        if edge_index.shape[0]:
            src = edge_index[:, 0]
            tgt = edge_index[:, 1]
            dmsg = dout[tgt]
            dgates = dmsg * z[src]
            if self.scalar_gate:
                dgates = dgates.sum(axis=1, keepdims=True)
            np.add.at(dz, src, dmsg * gates)
            self.h.backward(h_cache, dgates)
        return dz


@dataclass(frozen=True)
class ModelConfig:
    """Architecture knobs; tau may be meters or a percentile preset name."""

    kind: str = KIND_DELTAVSG
    d_v: int = 16
    hidden_dim: int = 64
    scalar_gate: bool = False
    tau: float | str = "p75"
    include_semantic_edges: bool = True


class _VariabilityModel:
    """Shared surface of the graph model and the per-node MLP baseline."""

    kind: str

    def __init__(
        self,
        taxonomy_name: str,
        num_relationships: int,
        pca: PcaModel,
        edge_config: EdgeConfig,
        hidden_dim: int,
        dropout_rate: float,
        seed: int,
    ):
        self.taxonomy_name = taxonomy_name
        self.num_relationships = num_relationships
        self.pca = pca
        self.edge_config = edge_config
        self.d_v = pca.d_v
        self.hidden_dim = hidden_dim
        self.dropout_rate = dropout_rate
        self.store = ParamStore(rng_seed=seed)

    def _check_graph(self, eg: EmbeddedGraph) -> None:
        if eg.node_features.shape[1] != self.d_v and eg.num_nodes:
            raise DimensionError(
                f"node features have width {eg.node_features.shape[1]}, model expects {self.d_v}"
            )
        if eg.num_edges and eg.edge_features.shape[1] != self.num_relationships + 3:
            raise DimensionError(
                f"edge features have width {eg.edge_features.shape[1]}, "
                f"model expects {self.num_relationships + 3}"
            )

    def embed_scene(self, g: SceneGraph, tax: Taxonomy) -> EmbeddedGraph:
        if g.taxonomy_name != self.taxonomy_name or tax.name != self.taxonomy_name:
            raise CheckpointError(
                f"model was trained on taxonomy {self.taxonomy_name!r} but got "
                f"graph/taxonomy {g.taxonomy_name!r}/{tax.name!r}"
            )
        return embed(g, tax, self.pca, self.edge_config)

    def predict_probabilities(
        self, g: SceneGraph, tax: Taxonomy
    ) -> dict[str, tuple[float, float, float]]:
        """Per-object (p_position, p_state, p_instance), eval mode."""
        eg = self.embed_scene(g, tax)
        probs, _ = self.forward(eg, mode="eval")
        return {
            oid: (float(p[0]), float(p[1]), float(p[2]))
            for oid, p in zip(eg.node_ids, probs)
        }

    def forward(self, eg, mode="eval", rng=None):  # pragma: no cover - interface
        raise NotImplementedError

    def backward(self, cache, dprobs):  # pragma: no cover - interface
        raise NotImplementedError


class DeltaVsgModel(_VariabilityModel):
    """Two message-passing layers, ReLU + dropout between, 3-sigmoid head."""

    kind = KIND_DELTAVSG

    def __init__(
        self,
        taxonomy_name: str,
        num_relationships: int,
        pca: PcaModel,
        edge_config: EdgeConfig,
        hidden_dim: int = 64,
        dropout_rate: float = 0.2,
        scalar_gate: bool = False,
        seed: int = 0,
    ):
        super().__init__(
            taxonomy_name, num_relationships, pca, edge_config, hidden_dim, dropout_rate, seed
        )
        self.scalar_gate = scalar_gate
        rng = np.random.default_rng(seed)
        edge_dim = num_relationships + 3
        self.conv1 = MpConv(self.d_v, edge_dim, hidden_dim, self.store, "conv1", rng, scalar_gate)
        self.conv2 = MpConv(self.d_v, edge_dim, hidden_dim, self.store, "conv2", rng, scalar_gate)
        self.head = Mlp([self.d_v, 3], self.store, "head", rng)

    def forward(
        self, eg: EmbeddedGraph, mode: str = "eval", rng: np.random.Generator | None = None
    ) -> tuple[np.ndarray, tuple]:
        """Per-node probabilities (N, 3) plus a cache for backward."""
        self._check_graph(eg)
        z0 = eg.node_features
        a1, c1 = self.conv1.forward(z0, eg.edge_index, eg.edge_features)
        r1 = relu(a1)
        d1, mask = dropout(r1, self.dropout_rate, mode, rng)
        a2, c2 = self.conv2.forward(d1, eg.edge_index, eg.edge_features)
        logits, ch = self.head.forward(a2)
        probs = sigmoid(logits)
        cache = (mode, c1, a1, mask, c2, ch, probs)
        return probs, cache

    def backward(self, cache: tuple, dprobs: np.ndarray) -> None:
        """Accumulate exact parameter gradients from dLoss/dProbabilities."""
        mode, c1, a1, mask, c2, ch, probs = cache
        if mode != "train":
            raise UsageError("backward requires a cache from a train-mode forward")
        dlogits = dprobs * probs * (1.0 - probs)
        da2 = self.head.backward(ch, dlogits)
        dd1 = self.conv2.backward(c2, da2)
        dr1 = dropout_backward(dd1, mask, self.dropout_rate)
        da1 = dr1 * (a1 > 0)
        self.conv1.backward(c1, da1)

    def hyperparameters(self) -> dict:
        return {
            "d_v": self.d_v,
            "hidden_dim": self.hidden_dim,
            "dropout_rate": self.dropout_rate,
            "scalar_gate": self.scalar_gate,
            "num_relationships": self.num_relationships,
            "rng_seed": self.store.rng_seed,
        }


class MlpBaseline(_VariabilityModel):
    """Per-node MLP on node features only; edges are ignored entirely."""

    kind = KIND_MLP_BASELINE

    def __init__(
        self,
        taxonomy_name: str,
        num_relationships: int,
        pca: PcaModel,
        edge_config: EdgeConfig,
        hidden_dim: int = 64,
        dropout_rate: float = 0.0,
        seed: int = 0,
    ):
        super().__init__(
            taxonomy_name, num_relationships, pca, edge_config, hidden_dim, dropout_rate, seed
        )
        rng = np.random.default_rng(seed)
        self.net = Mlp([self.d_v, hidden_dim, hidden_dim, 3], self.store, "net", rng)

    def forward(
        self, eg: EmbeddedGraph, mode: str = "eval", rng: np.random.Generator | None = None
    ) -> tuple[np.ndarray, tuple]:
        self._check_graph(eg)
        logits, c = self.net.forward(eg.node_features)
        probs = sigmoid(logits)
        return probs, (mode, c, probs)

    def backward(self, cache: tuple, dprobs: np.ndarray) -> None:
        mode, c, probs = cache
        if mode != "train":
            raise UsageError("backward requires a cache from a train-mode forward")
        dlogits = dprobs * probs * (1.0 - probs)
        self.net.backward(c, dlogits)

    def hyperparameters(self) -> dict:
        return {
            "d_v": self.d_v,
            "hidden_dim": self.hidden_dim,
            "dropout_rate": self.dropout_rate,
            "num_relationships": self.num_relationships,
            "rng_seed": self.store.rng_seed,
        }


def build_model(
    cfg: ModelConfig,
    taxonomy_name: str,
    num_relationships: int,
    pca: PcaModel,
    edge_config: EdgeConfig,
    dropout_rate: float,
    seed: int,
) -> _VariabilityModel:
    if cfg.kind == KIND_DELTAVSG:
        return DeltaVsgModel(
            taxonomy_name,
            num_relationships,
            pca,
            edge_config,
            hidden_dim=cfg.hidden_dim,
            dropout_rate=dropout_rate,
            scalar_gate=cfg.scalar_gate,
            seed=seed,
        )
    if cfg.kind == KIND_MLP_BASELINE:
        return MlpBaseline(
            taxonomy_name,
            num_relationships,
            pca,
            edge_config,
            hidden_dim=cfg.hidden_dim,
            dropout_rate=dropout_rate,
            seed=seed,
        )
    raise CheckpointError(f"unknown model kind {cfg.kind!r}")


# ---------------------------------------------------------------------------
# Checkpoints: one canonical JSON file; floats survive the round trip exactly,
# so save(load(path)) reproduces the file byte for byte.
# ---------------------------------------------------------------------------


def _pca_to_dict(pca: PcaModel) -> dict:
    return {
        "mean": pca.mean.tolist(),
        "components": pca.components.tolist(),
        "explained_variance_ratio": pca.explained_variance_ratio.tolist(),
        "d_v": pca.d_v,
        "rank": pca.rank,
    }


def _pca_from_dict(d: dict) -> PcaModel:
    return PcaModel(
        mean=np.array(d["mean"], dtype=np.float64),
        components=np.array(d["components"], dtype=np.float64),
        explained_variance_ratio=np.array(d["explained_variance_ratio"], dtype=np.float64),
        d_v=int(d["d_v"]),
        rank=int(d["rank"]),
    )


def checkpoint_to_json(model: _VariabilityModel, taxonomy: Taxonomy) -> str:
    if taxonomy.name != model.taxonomy_name:
        raise CheckpointError(
            f"taxonomy {taxonomy.name!r} does not match the model's {model.taxonomy_name!r}"
        )
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "model_kind": model.kind,
        "taxonomy_name": model.taxonomy_name,
        "taxonomy": taxonomy_to_dict(taxonomy),
        "pca": _pca_to_dict(model.pca),
        "edge_config": {
            "tau": model.edge_config.tau,
            "include_semantic_edges": model.edge_config.include_semantic_edges,
        },
        "hyperparameters": model.hyperparameters(),
        "parameters": {n: model.store[n].value.tolist() for n in model.store.names()},
    }
    return json.dumps(payload) + "\n"


def save_checkpoint(model: _VariabilityModel, taxonomy: Taxonomy, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(checkpoint_to_json(model, taxonomy))


def load_checkpoint(path) -> tuple[_VariabilityModel, Taxonomy]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise CheckpointError(f"{path}: unreadable or truncated checkpoint ({e})") from e
    if not isinstance(data, dict) or data.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version "
            f"{data.get('format_version') if isinstance(data, dict) else None!r}"
        )
    try:
        kind = data["model_kind"]
        hp = data["hyperparameters"]
        taxonomy = taxonomy_from_dict(data["taxonomy"], source=str(path))
        if taxonomy.name != data["taxonomy_name"]:
            raise CheckpointError(
                f"{path}: taxonomy payload {taxonomy.name!r} does not match "
                f"taxonomy_name {data['taxonomy_name']!r}"
            )
        pca = _pca_from_dict(data["pca"])
        edge_config = EdgeConfig(
            tau=float(data["edge_config"]["tau"]),
            include_semantic_edges=bool(data["edge_config"]["include_semantic_edges"]),
        )
        common = dict(
            taxonomy_name=data["taxonomy_name"],
            num_relationships=int(hp["num_relationships"]),
            pca=pca,
            edge_config=edge_config,
            hidden_dim=int(hp["hidden_dim"]),
            dropout_rate=float(hp["dropout_rate"]),
            seed=int(hp["rng_seed"]),
        )
        if kind == KIND_DELTAVSG:
            model = DeltaVsgModel(scalar_gate=bool(hp["scalar_gate"]), **common)
        elif kind == KIND_MLP_BASELINE:
            model = MlpBaseline(**common)
        else:
            raise CheckpointError(f"{path}: unknown model kind {kind!r}")
        params = data["parameters"]
        for name in model.store.names():
            if name not in params:
                raise CheckpointError(f"{path}: checkpoint is missing parameter {name!r}")
            stored = np.array(params[name], dtype=np.float64)
            if stored.shape != model.store[name].value.shape:
                raise CheckpointError(
                    f"{path}: parameter {name!r} has shape {stored.shape}, "
                    f"expected {model.store[name].value.shape}"
                )
            model.store[name].value[...] = stored
    except (KeyError, TypeError, ValueError, ParseError) as e:
        raise CheckpointError(f"{path}: malformed checkpoint ({e!r})") from e
    return model, taxonomy
