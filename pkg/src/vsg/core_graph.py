"""Scene-graph data model, taxonomies, and versioned JSON serialization.

A scene graph is a set of object nodes (semantic class, attribute set, world
position) plus directed typed relationship edges between them. Taxonomies pin
the canonical ordering of class / attribute / relationship names, so files
store names while the in-memory model works with indices.

All types are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    MappingError,
    ObjectLookupError,
    ParseError,
    TaxonomyError,
)

FORMAT_VERSION = 1

ATTRIBUTE_KINDS = ("static", "state", "affordance")


def _check_unique(names: Sequence[str], what: str) -> None:
    seen = set()
    for n in names:
        if n in seen:
            raise TaxonomyError(f"duplicate {what} name: {n!r}")
        seen.add(n)


@dataclass(frozen=True)
class Taxonomy:
    """Canonical ordering of class, attribute, and relationship names.

    Each attribute carries a kind: "static" (color, material), "state"
    (open/closed, on/off; the only kind that can trigger state variability),
    or "affordance" (sittable, openable).
    """

    name: str
    classes: tuple[str, ...]
    attributes: tuple[tuple[str, str], ...]  # (name, kind)
    relationships: tuple[str, ...]

    def __post_init__(self):
        if not self.classes or not self.attributes or not self.relationships:
            raise TaxonomyError(
                f"taxonomy {self.name!r}: classes, attributes and relationships "
                "must all be non-empty"
            )
        _check_unique(self.classes, "class")
        _check_unique([a[0] for a in self.attributes], "attribute")
        _check_unique(self.relationships, "relationship")
        for attr_name, kind in self.attributes:
            if kind not in ATTRIBUTE_KINDS:
                raise TaxonomyError(
                    f"attribute {attr_name!r} has unknown kind {kind!r}; "
                    f"expected one of {ATTRIBUTE_KINDS}"
                )
        if not any(kind == "state" for _, kind in self.attributes):
            raise TaxonomyError(
                f"taxonomy {self.name!r} has no state-kind attribute; "
                "state variability would be undefined"
            )
        object.__setattr__(self, "_class_index", {c: i for i, c in enumerate(self.classes)})
        object.__setattr__(
            self, "_attribute_index", {a: i for i, (a, _) in enumerate(self.attributes)}
        )
        object.__setattr__(
            self, "_relationship_index", {r: i for i, r in enumerate(self.relationships)}
        )
        object.__setattr__(
            self,
            "_state_indices",
            frozenset(i for i, (_, kind) in enumerate(self.attributes) if kind == "state"),
        )

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @property
    def num_attributes(self) -> int:
        return len(self.attributes)

    @property
    def num_relationships(self) -> int:
        return len(self.relationships)

    @property
    def state_attribute_indices(self) -> frozenset[int]:
        return self._state_indices  # type: ignore[attr-defined]

    def class_index(self, name: str) -> int:
        try:
            return self._class_index[name]  # type: ignore[attr-defined]
        except KeyError:
            raise TaxonomyError(f"unknown class {name!r} in taxonomy {self.name!r}") from None

    def attribute_index(self, name: str) -> int:
        try:
            return self._attribute_index[name]  # type: ignore[attr-defined]
        except KeyError:
            raise TaxonomyError(f"unknown attribute {name!r} in taxonomy {self.name!r}") from None

    def relationship_index(self, name: str) -> int:
        try:
            return self._relationship_index[name]  # type: ignore[attr-defined]
        except KeyError:
            raise TaxonomyError(
                f"unknown relationship {name!r} in taxonomy {self.name!r}"
            ) from None


@dataclass(frozen=True)
class ObjectNode:
    """One object instance: class, attribute set, and world-frame position.

    The id is stable across scans of the same environment; matching between
    scans is done purely on id equality.
    """

    id: str
    class_index: int
    attribute_indices: tuple[int, ...]
    position: tuple[float, float, float]

    def __post_init__(self):
        attrs = tuple(sorted(set(self.attribute_indices)))
        object.__setattr__(self, "attribute_indices", attrs)
        pos = tuple(float(c) for c in self.position)
        if len(pos) != 3 or not all(math.isfinite(c) for c in pos):
            raise ParseError(f"node {self.id!r}: position must be 3 finite components, got {self.position!r}")
        object.__setattr__(self, "position", pos)


@dataclass(frozen=True)
class SemanticEdge:
    """Directed typed relationship edge between two object ids."""

    source_id: str
    target_id: str
    relation_index: int

    def __post_init__(self):
        if self.source_id == self.target_id:
            raise ParseError(f"self-edge on node {self.source_id!r} is not allowed")


@dataclass(frozen=True)
class SceneGraph:
    """One scan of one environment: nodes plus semantic edges.

    Timestamps are scan ordinals, not wall-clock. Node order is significant
    and preserved by serialization.
    """

    environment_id: str
    scan_id: str
    timestamp: int
    taxonomy_name: str
    nodes: tuple[ObjectNode, ...] = ()
    semantic_edges: tuple[SemanticEdge, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "semantic_edges", tuple(self.semantic_edges))
        by_id: dict[str, ObjectNode] = {}
        for node in self.nodes:
            if node.id in by_id:
                raise ParseError(
                    f"scan {self.scan_id!r}: duplicate node id {node.id!r}"
                )
            by_id[node.id] = node
        for edge in self.semantic_edges:
            for endpoint in (edge.source_id, edge.target_id):
                if endpoint not in by_id:
                    raise ParseError(
                        f"scan {self.scan_id!r}: edge endpoint {endpoint!r} "
                        "does not resolve to a node"
                    )
        object.__setattr__(self, "_by_id", by_id)
        object.__setattr__(self, "_index_of", {n.id: i for i, n in enumerate(self.nodes)})

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def num_edges(self) -> int:
        return len(self.semantic_edges)

    @property
    def node_ids(self) -> tuple[str, ...]:
        return tuple(n.id for n in self.nodes)

    def has_node(self, object_id: str) -> bool:
        return object_id in self._by_id  # type: ignore[attr-defined]

    def node(self, object_id: str) -> ObjectNode:
        try:
            return self._by_id[object_id]  # type: ignore[attr-defined]
        except KeyError:
            raise ObjectLookupError(
                f"unknown object id {object_id!r} in scan {self.scan_id!r}"
            ) from None

    def node_index(self, object_id: str) -> int:
        try:
            return self._index_of[object_id]  # type: ignore[attr-defined]
        except KeyError:
            raise ObjectLookupError(
                f"unknown object id {object_id!r} in scan {self.scan_id!r}"
            ) from None

    def positions(self) -> np.ndarray:
        """Node positions as an (N, 3) float array, in node order."""
        if not self.nodes:
            return np.zeros((0, 3))
        return np.array([n.position for n in self.nodes], dtype=np.float64)


def relative_position(g: SceneGraph, i: str, j: str) -> np.ndarray:
    """Position of object j minus position of object i, as a 3-vector."""
    pi = g.node(i).position
    pj = g.node(j).position
    return np.array(pj, dtype=np.float64) - np.array(pi, dtype=np.float64)


def map_taxonomy(g: SceneGraph, mapping: Mapping[int, int], target: Taxonomy) -> SceneGraph:
    """Remap node class indices into a coarser (or equal) class taxonomy.

    Attributes, positions, and edges are untouched; the target taxonomy is
    expected to share the attribute and relationship lists of the source.
    """
    new_nodes = []
    for node in g.nodes:
        if node.class_index not in mapping:
            raise MappingError(
                f"mapping has no entry for class index {node.class_index} "
                f"(node {node.id!r})"
            )
        new_index = mapping[node.class_index]
        if not 0 <= new_index < target.num_classes:
            raise MappingError(
                f"mapped class index {new_index} out of range for taxonomy "
                f"{target.name!r} ({target.num_classes} classes)"
            )
        for a in node.attribute_indices:
            if a >= target.num_attributes:
                raise MappingError(
                    f"attribute index {a} of node {node.id!r} out of range for "
                    f"taxonomy {target.name!r}"
                )
        new_nodes.append(
            ObjectNode(
                id=node.id,
                class_index=new_index,
                attribute_indices=node.attribute_indices,
                position=node.position,
            )
        )
    return SceneGraph(
        environment_id=g.environment_id,
        scan_id=g.scan_id,
        timestamp=g.timestamp,
        taxonomy_name=target.name,
        nodes=tuple(new_nodes),
        semantic_edges=g.semantic_edges,
    )


# ---------------------------------------------------------------------------
# Serialization. Files carry names, not indices; the writer emits a canonical
# key order and sorted attribute lists so that save(load(f)) is byte-identical
# for canonically written files.
# ---------------------------------------------------------------------------


def taxonomy_to_dict(tax: Taxonomy) -> dict:
    return {
        "name": tax.name,
        "classes": list(tax.classes),
        "attributes": [{"name": n, "kind": k} for n, k in tax.attributes],
        "relationships": list(tax.relationships),
    }


def taxonomy_from_dict(data: dict, source: str = "<dict>") -> Taxonomy:
    try:
        return Taxonomy(
            name=str(data["name"]),
            classes=tuple(str(c) for c in data["classes"]),
            attributes=tuple((str(a["name"]), str(a["kind"])) for a in data["attributes"]),
            relationships=tuple(str(r) for r in data["relationships"]),
        )
    except (KeyError, TypeError) as e:
        raise ParseError(f"{source}: malformed taxonomy file ({e!r})") from e


def save_taxonomy(tax: Taxonomy, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(taxonomy_to_dict(tax), f, indent=2)
        f.write("\n")


def load_taxonomy(path) -> Taxonomy:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from e
    return taxonomy_from_dict(data, source=str(path))


def scene_graph_to_dict(g: SceneGraph, tax: Taxonomy) -> dict:
    if g.taxonomy_name != tax.name:
        raise TaxonomyError(
            f"graph uses taxonomy {g.taxonomy_name!r} but {tax.name!r} was supplied"
        )
    nodes = []
    for node in g.nodes:
        nodes.append(
            {
                "id": node.id,
                "class": tax.classes[node.class_index],
                "attributes": [tax.attributes[i][0] for i in node.attribute_indices],
                "position": list(node.position),
            }
        )
    edges = []
    for edge in g.semantic_edges:
        edges.append(
            {
                "source": edge.source_id,
                "target": edge.target_id,
                "relation": tax.relationships[edge.relation_index],
            }
        )
    return {
        "format_version": FORMAT_VERSION,
        "environment_id": g.environment_id,
        "scan_id": g.scan_id,
        "timestamp": g.timestamp,
        "taxonomy": tax.name,
        "nodes": nodes,
        "edges": edges,
    }


def scene_graph_from_dict(data: dict, tax: Taxonomy, source: str = "<dict>") -> SceneGraph:
    if not isinstance(data, dict):
        raise ParseError(f"{source}: expected a JSON object at top level")
    version = data.get("format_version")
    if version != FORMAT_VERSION:
        raise ParseError(
            f"{source}: unsupported format_version {version!r} (expected {FORMAT_VERSION})"
        )
    tax_name = data.get("taxonomy")
    if tax_name != tax.name:
        raise TaxonomyError(
            f"{source}: file uses taxonomy {tax_name!r} but {tax.name!r} was supplied"
        )
    nodes = []
    for k, raw in enumerate(data.get("nodes", [])):
        try:
            node = ObjectNode(
                id=str(raw["id"]),
                class_index=tax.class_index(raw["class"]),
                attribute_indices=tuple(tax.attribute_index(a) for a in raw["attributes"]),
                position=tuple(raw["position"]),
            )
        except KeyError as e:
            raise ParseError(f"{source}: node {k}: missing field {e.args[0]!r}") from e
        except (TypeError, ValueError) as e:
            raise ParseError(f"{source}: node {k}: {e}") from e
        nodes.append(node)
    edges = []
    for k, raw in enumerate(data.get("edges", [])):
        try:
            edge = SemanticEdge(
                source_id=str(raw["source"]),
                target_id=str(raw["target"]),
                relation_index=tax.relationship_index(raw["relation"]),
            )
        except KeyError as e:
            raise ParseError(f"{source}: edge {k}: missing field {e.args[0]!r}") from e
        edges.append(edge)
    try:
        return SceneGraph(
            environment_id=str(data["environment_id"]),
            scan_id=str(data["scan_id"]),
            timestamp=int(data["timestamp"]),
            taxonomy_name=tax.name,
            nodes=tuple(nodes),
            semantic_edges=tuple(edges),
        )
    except KeyError as e:
        raise ParseError(f"{source}: missing field {e.args[0]!r}") from e


def scene_graph_to_json(g: SceneGraph, tax: Taxonomy) -> str:
    return json.dumps(scene_graph_to_dict(g, tax), indent=2) + "\n"


def save_scene_graph(g: SceneGraph, tax: Taxonomy, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(scene_graph_to_json(g, tax))


def load_scene_graph(path, tax: Taxonomy) -> SceneGraph:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from e
    return scene_graph_from_dict(data, tax, source=str(path))
