"""Supervised samples from scan pairs, plus data sources.

A sample is one ordered pair of scans of the same environment: the earlier
scan is the input graph, and each of its nodes gets three binary labels by
comparison with the later scan:

    position  y_P = 1  iff the object moved at least epsilon meters,
    state     y_S = 1  iff its state-kind attribute set changed,
    instance  y_I = 1  iff it is absent from the later scan.

Vanished objects carry no position/state supervision (their masks are zero),
and nodes without state-kind attributes carry no state supervision. Objects
appearing in the later scan produce no rows at all; the input graph defines
the node set.

Three data sources are provided: a synthetic changing-scene generator whose
oracle change log makes labels exactly checkable, a dataset directory format
(one JSON scene graph per scan plus a manifest with scan order and an
environment-level split), and an ingestion adapter for graph exports laid
out in the 3RScan/3DSSG style.
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .core_graph import (
    ObjectNode,
    SceneGraph,
    SemanticEdge,
    Taxonomy,
    load_scene_graph,
    load_taxonomy,
    save_scene_graph,
    save_taxonomy,
)
from .errors import ConfigError, GeneratorError, PairingError, ParseError

logger = logging.getLogger(__name__)

MANIFEST_VERSION = 1

VARIABILITY_NAMES = ("position", "state", "instance")

SPLIT_NAMES = ("train", "val", "test")


@dataclass(frozen=True)
class LabelConfig:
    """Labeling knobs.

    epsilon is the minimum displacement (meters) that counts as a position
    change. When require_state_attributes is set, nodes without state-kind
    attributes get no state supervision (mask_state = 0).
    """

    epsilon: float = 0.1
    require_state_attributes: bool = True

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be > 0, got {self.epsilon!r}")


@dataclass(frozen=True)
class VariabilityLabel:
    y_position: int
    y_state: int
    y_instance: int
    mask_position: int
    mask_state: int

    def __post_init__(self):
        if self.y_instance and (self.mask_position or self.mask_state):
            raise ConfigError("vanished object must have position/state masks zeroed")


@dataclass(frozen=True)
class Sample:
    """One (current scan, labels) pair; pair_id records (from, to) scan ids."""

    input: SceneGraph
    labels: dict[str, VariabilityLabel]
    pair_id: tuple[str, str]

    def __post_init__(self):
        if set(self.labels) != set(self.input.node_ids):
            raise ConfigError(
                f"sample {self.pair_id}: labels must cover exactly the input nodes"
            )

    @property
    def environment_id(self) -> str:
        return self.input.environment_id


def _state_attribute_set(node: ObjectNode, tax: Taxonomy) -> frozenset[int]:
    state = tax.state_attribute_indices
    return frozenset(i for i in node.attribute_indices if i in state)


def compute_labels(
    current: SceneGraph,
    future: SceneGraph,
    tax: Taxonomy,
    cfg: LabelConfig = LabelConfig(),
) -> dict[str, VariabilityLabel]:
    """Labels for every node of `current` by comparison with `future`.

    Objects are matched purely by id. Ids present only in `future` yield no
    rows.
    """
    if current.environment_id != future.environment_id:
        raise PairingError(
            f"cannot pair scans of different environments: "
            f"{current.environment_id!r} vs {future.environment_id!r}"
        )
    if current.taxonomy_name != future.taxonomy_name:
        raise PairingError(
            f"cannot pair scans with different taxonomies: "
            f"{current.taxonomy_name!r} vs {future.taxonomy_name!r}"
        )
    labels: dict[str, VariabilityLabel] = {}
    for node in current.nodes:
        has_state = bool(_state_attribute_set(node, tax)) or not cfg.require_state_attributes
        if not future.has_node(node.id):
            labels[node.id] = VariabilityLabel(0, 0, 1, 0, 0)
            continue
        counterpart = future.node(node.id)
        delta = np.array(counterpart.position) - np.array(node.position)
        y_p = int(float(np.linalg.norm(delta)) >= cfg.epsilon)
        y_s = int(
            _state_attribute_set(node, tax) != _state_attribute_set(counterpart, tax)
        )
        labels[node.id] = VariabilityLabel(y_p, y_s if has_state else 0, 0, 1, int(has_state))
    return labels


def augment_pairs(scans: list[SceneGraph]) -> list[tuple[SceneGraph, SceneGraph]]:
    """All ordered pairs (i, j), i != j; exactly n(n-1) of them."""
    if len(scans) < 2:
        env = scans[0].environment_id if scans else "<empty>"
        logger.warning("environment %s has %d scan(s); need 2+, skipping", env, len(scans))
        return []
    return [(a, b) for a in scans for b in scans if a.scan_id != b.scan_id]


def make_samples(
    scans: list[SceneGraph], tax: Taxonomy, cfg: LabelConfig = LabelConfig()
) -> list[Sample]:
    return [
        Sample(cur, compute_labels(cur, fut, tax, cfg), (cur.scan_id, fut.scan_id))
        for cur, fut in augment_pairs(scans)
    ]


def label_matrices(sample: Sample) -> tuple[np.ndarray, np.ndarray]:
    """(labels, masks), each (N, 3) in node order; instance is never masked."""
    n = sample.input.num_nodes
    y = np.zeros((n, 3), dtype=np.float64)
    m = np.zeros((n, 3), dtype=np.float64)
    for i, oid in enumerate(sample.input.node_ids):
        lab = sample.labels[oid]
        y[i] = (lab.y_position, lab.y_state, lab.y_instance)
        m[i] = (lab.mask_position, lab.mask_state, 1.0)
    return y, m


@dataclass(frozen=True)
class LabelStats:
    """Per-variability unmasked counts and positive rates over a sample set."""

    unmasked: tuple[int, int, int]
    positives: tuple[int, int, int]

    @property
    def positive_rates(self) -> tuple[float, float, float]:
        return tuple(
            p / u if u else 0.0 for p, u in zip(self.positives, self.unmasked)
        )


def label_statistics(samples: list[Sample]) -> LabelStats:
    unmasked = np.zeros(3, dtype=np.int64)
    positives = np.zeros(3, dtype=np.int64)
    for s in samples:
        y, m = label_matrices(s)
        unmasked += m.sum(axis=0).astype(np.int64)
        positives += (y * m).sum(axis=0).astype(np.int64)
    return LabelStats(tuple(int(x) for x in unmasked), tuple(int(x) for x in positives))


def importance_sample(samples: list[Sample], stats: LabelStats | None = None) -> np.ndarray:
    """Per-sample draw weights, normalized to sum 1.

    Each unmasked label element is weighted by the inverse frequency of its
    class (1/rate for positives, 1/(1-rate) for negatives, per variability
    type); a sample's weight is the mean over its unmasked elements. On a
    balanced set every element weighs the same, so the weights are uniform.
    """
    if not samples:
        raise ConfigError("importance_sample needs at least one sample")
    if stats is None:
        stats = label_statistics(samples)
    rates = np.array(stats.positive_rates, dtype=np.float64)
    if not rates.any():
        logger.warning("no positive labels in any sample; using uniform weights")
    pos_w = np.where(rates > 0, 1.0 / np.where(rates > 0, rates, 1.0), 1.0)
    neg_w = np.where(rates < 1, 1.0 / np.where(rates < 1, 1.0 - rates, 1.0), 1.0)
    weights = np.empty(len(samples), dtype=np.float64)
    for k, s in enumerate(samples):
        y, m = label_matrices(s)
        element_w = np.where(y > 0, pos_w, neg_w) * m
        total_mask = m.sum()
        weights[k] = element_w.sum() / total_mask if total_mask else 1.0
    return weights / weights.sum()


# ---------------------------------------------------------------------------
# Synthetic changing-scene generator
# ---------------------------------------------------------------------------

_STATE_PAIRS = (("open", "closed"), ("on", "off"))

_SUPPORT_CLASSES = ("table", "shelf", "cabinet")

_STRUCTURE_CLASSES = ("wall", "floor")


@dataclass(frozen=True)
class ClassPropensity:
    """Per-class change probabilities applied at each scan transition.

    move_near applies when the object is within support_radius of a support
    surface (table/shelf/cabinet), move_far otherwise; that context lives in
    the graph geometry, not in the object's own encoding.
    """

    move_near: float = 0.0
    move_far: float = 0.0
    toggle: float = 0.0
    vanish: float = 0.0

    def __post_init__(self):
        for name in ("move_near", "move_far", "toggle", "vanish"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"propensity {name} must be in [0, 1], got {v!r}")


@dataclass(frozen=True)
class ClassSpec:
    """Static makeup of one object class in the synthetic world."""

    static_attributes: tuple[str, ...] = ()
    affordances: tuple[str, ...] = ()
    state_pair: tuple[str, str] | None = None
    propensity: ClassPropensity = ClassPropensity()
    is_support: bool = False
    is_structure: bool = False


def _default_class_specs() -> dict[str, ClassSpec]:
    return {
        "wall": ClassSpec(is_structure=True),
        "floor": ClassSpec(is_structure=True),
        "door": ClassSpec(
            affordances=("openable",),
            state_pair=("open", "closed"),
            propensity=ClassPropensity(toggle=0.45),
            is_structure=True,
        ),
        "table": ClassSpec(
            static_attributes=("wooden",),
            propensity=ClassPropensity(move_near=0.02, move_far=0.02),
            is_support=True,
        ),
        "shelf": ClassSpec(static_attributes=("wooden",), is_support=True),
        "cabinet": ClassSpec(
            static_attributes=("wooden",),
            affordances=("openable",),
            state_pair=("open", "closed"),
            propensity=ClassPropensity(toggle=0.35),
            is_support=True,
        ),
        "chair": ClassSpec(
            static_attributes=("fabric",),
            affordances=("sittable", "movable"),
            propensity=ClassPropensity(move_near=0.5, move_far=0.35),
        ),
        "lamp": ClassSpec(
            static_attributes=("metal",),
            affordances=("switchable",),
            state_pair=("on", "off"),
            propensity=ClassPropensity(move_near=0.05, move_far=0.02, toggle=0.5),
        ),
        "laptop": ClassSpec(
            static_attributes=("metal",),
            affordances=("switchable", "graspable", "movable"),
            state_pair=("on", "off"),
            propensity=ClassPropensity(move_near=0.55, move_far=0.1, toggle=0.5, vanish=0.08),
        ),
        "cup": ClassSpec(
            static_attributes=("plastic",),
            affordances=("graspable", "movable"),
            propensity=ClassPropensity(move_near=0.7, move_far=0.08, vanish=0.12),
        ),
        "book": ClassSpec(
            affordances=("graspable", "movable"),
            propensity=ClassPropensity(move_near=0.6, move_far=0.06, vanish=0.1),
        ),
        "plant": ClassSpec(
            affordances=("movable",),
            propensity=ClassPropensity(move_near=0.15, move_far=0.05, vanish=0.03),
        ),
        "box": ClassSpec(
            affordances=("openable", "movable", "graspable"),
            state_pair=("open", "closed"),
            propensity=ClassPropensity(move_near=0.5, move_far=0.1, toggle=0.3, vanish=0.08),
        ),
    }


def default_taxonomy() -> Taxonomy:
    """The synthetic world's taxonomy: 13 classes, 13 attributes, 5 relations."""
    specs = _default_class_specs()
    attributes = (
        [("wooden", "static"), ("metal", "static"), ("plastic", "static"), ("fabric", "static")]
        + [(n, "state") for pair in _STATE_PAIRS for n in pair]
        + [
            ("movable", "affordance"),
            ("openable", "affordance"),
            ("switchable", "affordance"),
            ("sittable", "affordance"),
            ("graspable", "affordance"),
        ]
    )
    return Taxonomy(
        name="synthetic-rooms",
        classes=tuple(sorted(specs)),
        attributes=tuple(attributes),
        relationships=("standing_on", "next_to", "attached_to", "part_of", "leaning_against"),
    )


@dataclass(frozen=True)
class GeneratorConfig:
    """Knobs of the synthetic world; see default_taxonomy for its contents."""

    num_environments: int = 10
    scans_per_environment: int = 3
    room_size: tuple[float, float, float] = (8.0, 8.0, 3.0)
    objects_min: int = 12
    objects_max: int = 18
    support_radius: float = 1.0
    next_to_radius: float = 0.8
    min_spacing: float = 0.35
    move_distance: tuple[float, float] = (0.25, 0.9)
    jitter_fraction: float = 0.4  # unmoved objects wiggle below this * epsilon
    appear_prob: float = 0.15
    epsilon: float = 0.1
    seed: int = 0
    split_fractions: tuple[float, float, float] = (0.7, 0.15, 0.15)
    propensity_overrides: dict[str, ClassPropensity] = field(default_factory=dict)

    def __post_init__(self):
        if self.num_environments < 1 or self.scans_per_environment < 2:
            raise ConfigError("need at least 1 environment and 2 scans per environment")
        if self.objects_min < 4 or self.objects_max < self.objects_min:
            raise ConfigError("objects_min must be >= 4 and <= objects_max")
        if self.move_distance[0] < 2 * self.epsilon:
            raise ConfigError(
                "minimum move distance must be at least 2 * epsilon so moves and "
                "jitter are separable"
            )
        if not 0 <= self.jitter_fraction < 1:
            raise ConfigError("jitter_fraction must be in [0, 1)")
        if abs(sum(self.split_fractions) - 1.0) > 1e-9 or min(self.split_fractions) < 0:
            raise ConfigError("split fractions must be non-negative and sum to 1")


def generator_config_to_dict(cfg: GeneratorConfig) -> dict:
    d = {
        "num_environments": cfg.num_environments,
        "scans_per_environment": cfg.scans_per_environment,
        "room_size": list(cfg.room_size),
        "objects_min": cfg.objects_min,
        "objects_max": cfg.objects_max,
        "support_radius": cfg.support_radius,
        "next_to_radius": cfg.next_to_radius,
        "min_spacing": cfg.min_spacing,
        "move_distance": list(cfg.move_distance),
        "jitter_fraction": cfg.jitter_fraction,
        "appear_prob": cfg.appear_prob,
        "epsilon": cfg.epsilon,
        "seed": cfg.seed,
        "split_fractions": list(cfg.split_fractions),
        "propensity_overrides": {
            c: {
                "move_near": p.move_near,
                "move_far": p.move_far,
                "toggle": p.toggle,
                "vanish": p.vanish,
            }
            for c, p in sorted(cfg.propensity_overrides.items())
        },
    }
    return d


def generator_config_from_dict(data: dict) -> GeneratorConfig:
    if not isinstance(data, dict):
        raise ConfigError("generator config must be a JSON object")
    kwargs = dict(data)
    try:
        for key in ("room_size", "move_distance", "split_fractions"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        overrides = kwargs.pop("propensity_overrides", {})
        kwargs["propensity_overrides"] = {
            c: ClassPropensity(**p) for c, p in overrides.items()
        }
        return GeneratorConfig(**kwargs)
    except TypeError as e:
        raise ConfigError(f"bad generator config: {e}") from e


@dataclass(frozen=True)
class TransitionLog:
    """Oracle record of one scan transition, keyed by object id.

    moved maps id to the applied displacement norm (always >= epsilon);
    jittered objects (sub-epsilon wiggle) are deliberately absent from it.
    """

    moved: dict[str, float]
    toggled: frozenset[str]
    vanished: frozenset[str]
    appeared: frozenset[str]


def _propensity(cfg: GeneratorConfig, specs: dict[str, ClassSpec], cls: str) -> ClassPropensity:
    return cfg.propensity_overrides.get(cls, specs[cls].propensity)


def _place(
    rng: np.random.Generator,
    cfg: GeneratorConfig,
    taken: list[np.ndarray],
    z: float,
    near: np.ndarray | None = None,
) -> np.ndarray:
    """Random in-room position respecting min spacing; near biases placement."""
    rx, ry, _ = cfg.room_size
    for _ in range(200):
        if near is None:
            p = np.array([rng.uniform(0.3, rx - 0.3), rng.uniform(0.3, ry - 0.3), z])
        else:
            offset = rng.uniform(-0.6 * cfg.support_radius, 0.6 * cfg.support_radius, size=2)
            p = np.array(
                [
                    float(np.clip(near[0] + offset[0], 0.3, rx - 0.3)),
                    float(np.clip(near[1] + offset[1], 0.3, ry - 0.3)),
                    z,
                ]
            )
        if all(np.linalg.norm(p[:2] - q[:2]) >= cfg.min_spacing for q in taken):
            taken.append(p)
            return p
    raise GeneratorError(
        f"could not place an object with spacing {cfg.min_spacing} in a "
        f"{rx} x {ry} room; too many objects for the space"
    )


def _attribute_indices(tax: Taxonomy, spec: ClassSpec, state_value: str | None) -> tuple[int, ...]:
    names = list(spec.static_attributes) + list(spec.affordances)
    if state_value is not None:
        names.append(state_value)
    return tuple(sorted(tax.attribute_index(n) for n in names))


def _semantic_edges(
    nodes: list[ObjectNode], tax: Taxonomy, specs: dict[str, ClassSpec], cfg: GeneratorConfig
) -> tuple[SemanticEdge, ...]:
    """Edges recomputed from geometry: standing_on, next_to, attached_to."""
    standing_on = tax.relationship_index("standing_on")
    next_to = tax.relationship_index("next_to")
    attached_to = tax.relationship_index("attached_to")
    by_class = {n.id: tax.classes[n.class_index] for n in nodes}
    supports = [n for n in nodes if specs[by_class[n.id]].is_support]
    walls = [n for n in nodes if by_class[n.id] == "wall"]
    edges: list[SemanticEdge] = []
    for n in nodes:
        cls = by_class[n.id]
        spec = specs[cls]
        if cls == "door" and walls:
            nearest = min(
                walls,
                key=lambda w: (np.linalg.norm(np.array(n.position) - np.array(w.position)), w.id),
            )
            edges.append(SemanticEdge(n.id, nearest.id, attached_to))
        if spec.is_support or spec.is_structure or not supports:
            continue
        dists = [
            (float(np.linalg.norm(np.array(n.position)[:2] - np.array(s.position)[:2])), s.id)
            for s in supports
        ]
        d, sid = min(dists)
        if d < cfg.support_radius:
            edges.append(SemanticEdge(n.id, sid, standing_on))
    movable = [n for n in nodes if not specs[by_class[n.id]].is_structure]
    for a in movable:
        for b in movable:
            if a.id >= b.id:
                continue
            d = float(np.linalg.norm(np.array(a.position)[:2] - np.array(b.position)[:2]))
            if d < cfg.next_to_radius:
                edges.append(SemanticEdge(a.id, b.id, next_to))
    return tuple(edges)


def _initial_scene(
    tax: Taxonomy, specs: dict[str, ClassSpec], cfg: GeneratorConfig, rng: np.random.Generator
) -> tuple[list[ObjectNode], int]:
    rx, ry, rz = cfg.room_size
    taken: list[np.ndarray] = []
    nodes: list[ObjectNode] = []
    counter = 0

    def add(cls: str, position, state_value: str | None) -> None:
        nonlocal counter
        spec = specs[cls]
        nodes.append(
            ObjectNode(
                id=f"obj{counter:03d}",
                class_index=tax.class_index(cls),
                attribute_indices=_attribute_indices(tax, spec, state_value),
                position=tuple(float(x) for x in position),
            )
        )
        counter += 1

    def initial_state(cls: str) -> str | None:
        pair = specs[cls].state_pair
        if pair is None:
            return None
        return pair[int(rng.random() < 0.5)]

    # Fixed structure: four walls, a floor, a door on one wall.
    add("floor", (rx / 2, ry / 2, 0.0), None)
    for wx, wy in ((rx / 2, 0.0), (rx / 2, ry), (0.0, ry / 2), (rx, ry / 2)):
        add("wall", (wx, wy, rz / 2), None)
    add("door", (rx / 2 + 0.5, 0.0, 1.0), initial_state("door"))

    total = int(rng.integers(cfg.objects_min, cfg.objects_max + 1))
    budget = max(total - len(nodes), 4)
    num_supports = max(2, budget // 5)
    support_positions: list[np.ndarray] = []
    for _ in range(num_supports):
        cls = str(rng.choice(_SUPPORT_CLASSES))
        p = _place(rng, cfg, taken, z=0.75)
        support_positions.append(p)
        add(cls, p, initial_state(cls))

    movable_classes = ("chair", "lamp", "laptop", "cup", "book", "plant", "box")
    for _ in range(budget - num_supports):
        cls = str(rng.choice(movable_classes))
        near = None
        if specs[cls].propensity.move_near > specs[cls].propensity.move_far:
            # Split placement so both contexts appear in the data.
            if rng.random() < 0.55 and support_positions:
                near = support_positions[int(rng.integers(len(support_positions)))]
        z = 0.8 if near is not None else 0.0
        try:
            position = _place(rng, cfg, taken, z=z, near=near)
        except GeneratorError:
            if near is None:
                raise
            # A full support surface must not abort the environment; give up
            # on the near bias and place on the open floor instead.
            position = _place(rng, cfg, taken, z=0.0)
        add(cls, position, initial_state(cls))
    return nodes, counter


def _transition(
    nodes: list[ObjectNode],
    counter: int,
    tax: Taxonomy,
    specs: dict[str, ClassSpec],
    cfg: GeneratorConfig,
    rng: np.random.Generator,
) -> tuple[list[ObjectNode], int, TransitionLog]:
    rx, ry, _ = cfg.room_size
    support_xy = [
        np.array(n.position)[:2]
        for n in nodes
        if specs[tax.classes[n.class_index]].is_support
    ]
    moved: dict[str, float] = {}
    toggled: set[str] = set()
    vanished: set[str] = set()
    appeared: set[str] = set()
    out: list[ObjectNode] = []

    def near_support(n: ObjectNode) -> bool:
        xy = np.array(n.position)[:2]
        return any(np.linalg.norm(xy - s) < cfg.support_radius for s in support_xy)

    for n in nodes:
        cls = tax.classes[n.class_index]
        spec = specs[cls]
        prop = _propensity(cfg, specs, cls)
        if rng.random() < prop.vanish:
            vanished.add(n.id)
            continue
        position = np.array(n.position, dtype=np.float64)
        move_p = prop.move_near if near_support(n) else prop.move_far
        if rng.random() < move_p:
            for _ in range(100):
                angle = rng.uniform(0.0, 2.0 * math.pi)
                dist = rng.uniform(*cfg.move_distance)
                candidate = position + np.array(
                    [dist * math.cos(angle), dist * math.sin(angle), 0.0]
                )
                if 0.0 <= candidate[0] <= rx and 0.0 <= candidate[1] <= ry:
                    moved[n.id] = float(np.linalg.norm(candidate - position))
                    position = candidate
                    break
        elif not spec.is_structure and cfg.jitter_fraction > 0:
            angle = rng.uniform(0.0, 2.0 * math.pi)
            dist = rng.uniform(0.0, cfg.jitter_fraction * cfg.epsilon)
            wiggle = position + np.array([dist * math.cos(angle), dist * math.sin(angle), 0.0])
            if 0.0 <= wiggle[0] <= rx and 0.0 <= wiggle[1] <= ry:
                position = wiggle
        attributes = n.attribute_indices
        if spec.state_pair is not None and rng.random() < prop.toggle:
            a, b = (tax.attribute_index(x) for x in spec.state_pair)
            current = set(attributes)
            current.symmetric_difference_update((a, b))
            attributes = tuple(sorted(current))
            toggled.add(n.id)
        out.append(
            ObjectNode(
                id=n.id,
                class_index=n.class_index,
                attribute_indices=attributes,
                position=tuple(float(x) for x in position),
            )
        )

    taken = [np.array(n.position) for n in out]
    appear_classes = ("cup", "book", "box")
    for _ in range(2):
        if rng.random() < cfg.appear_prob:
            cls = str(rng.choice(appear_classes))
            try:
                p = _place(rng, cfg, taken, z=0.0)
            except GeneratorError:
                break
            oid = f"obj{counter:03d}"
            counter += 1
            out.append(
                ObjectNode(
                    id=oid,
                    class_index=tax.class_index(cls),
                    attribute_indices=_attribute_indices(
                        tax, specs[cls], specs[cls].state_pair and specs[cls].state_pair[1]
                    ),
                    position=tuple(float(x) for x in p),
                )
            )
            appeared.add(oid)
    log = TransitionLog(
        moved=moved,
        toggled=frozenset(toggled),
        vanished=frozenset(vanished),
        appeared=frozenset(appeared),
    )
    return out, counter, log


def generate_environment(
    cfg: GeneratorConfig, env_index: int, tax: Taxonomy | None = None
) -> tuple[list[SceneGraph], list[TransitionLog]]:
    """One environment's scan sequence plus the oracle log per transition.

    Deterministic in (cfg.seed, env_index); environments are independent.
    """
    tax = tax or default_taxonomy()
    specs = _default_class_specs()
    rng = np.random.default_rng([cfg.seed, env_index])
    env_id = f"env{env_index:03d}"
    nodes, counter = _initial_scene(tax, specs, cfg, rng)
    scans: list[SceneGraph] = []
    logs: list[TransitionLog] = []
    for t in range(cfg.scans_per_environment):
        scans.append(
            SceneGraph(
                environment_id=env_id,
                scan_id=f"scan{t:02d}",
                timestamp=t,
                taxonomy_name=tax.name,
                nodes=tuple(nodes),
                semantic_edges=_semantic_edges(nodes, tax, specs, cfg),
            )
        )
        if t < cfg.scans_per_environment - 1:
            nodes, counter, log = _transition(nodes, counter, tax, specs, cfg, rng)
            logs.append(log)
    return scans, logs


def labels_from_log(
    scan: SceneGraph, log: TransitionLog, tax: Taxonomy, epsilon: float
) -> dict[str, VariabilityLabel]:
    """Oracle labels for one consecutive transition, straight from the log."""
    labels: dict[str, VariabilityLabel] = {}
    for oid in scan.node_ids:
        if oid in log.vanished:
            labels[oid] = VariabilityLabel(0, 0, 1, 0, 0)
            continue
        y_p = int(oid in log.moved and log.moved[oid] >= epsilon)
        y_s = int(oid in log.toggled)
        has_state = bool(_state_attribute_set(scan.node(oid), tax))
        labels[oid] = VariabilityLabel(y_p, y_s, 0, 1, int(has_state))
    return labels


@dataclass(frozen=True)
class GeneratedDataset:
    taxonomy: Taxonomy
    environments: dict[str, list[SceneGraph]]  # insertion-ordered by env id
    logs: dict[str, list[TransitionLog]]
    splits: dict[str, str]  # environment id -> train/val/test


def _assign_splits(env_ids: list[str], fractions: tuple[float, float, float], seed: int) -> dict[str, str]:
    rng = np.random.default_rng([seed, 10_007])
    order = list(env_ids)
    rng.shuffle(order)
    n = len(order)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    n_train = min(n_train, n)
    n_val = min(n_val, n - n_train)
    splits = {}
    for i, env in enumerate(order):
        if i < n_train:
            splits[env] = "train"
        elif i < n_train + n_val:
            splits[env] = "val"
        else:
            splits[env] = "test"
    # Tiny datasets still need a train split; steal from the largest bucket.
    if n and not any(s == "train" for s in splits.values()):
        splits[order[0]] = "train"
    return {env: splits[env] for env in env_ids}


def generate_dataset(cfg: GeneratorConfig) -> GeneratedDataset:
    tax = default_taxonomy()
    environments: dict[str, list[SceneGraph]] = {}
    logs: dict[str, list[TransitionLog]] = {}
    for e in range(cfg.num_environments):
        scans, env_logs = generate_environment(cfg, e, tax)
        environments[scans[0].environment_id] = scans
        logs[scans[0].environment_id] = env_logs
    splits = _assign_splits(list(environments), cfg.split_fractions, cfg.seed)
    return GeneratedDataset(tax, environments, logs, splits)


# ---------------------------------------------------------------------------
# Dataset directory format
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DatasetBundle:
    """A loaded dataset directory: taxonomy, per-environment scans, splits."""

    taxonomy: Taxonomy
    environments: dict[str, list[SceneGraph]]
    splits: dict[str, str]

    def environment_ids(self, split: str | None = None) -> list[str]:
        if split is None:
            return list(self.environments)
        if split not in SPLIT_NAMES:
            raise ConfigError(f"unknown split {split!r}; expected one of {SPLIT_NAMES}")
        return [e for e in self.environments if self.splits.get(e) == split]

    def samples(self, split: str | None = None, cfg: LabelConfig = LabelConfig()) -> list[Sample]:
        out: list[Sample] = []
        for env in self.environment_ids(split):
            out.extend(make_samples(self.environments[env], self.taxonomy, cfg))
        return out


def write_dataset(
    root,
    taxonomy: Taxonomy,
    environments: dict[str, list[SceneGraph]],
    splits: dict[str, str],
) -> None:
    """Write `<root>/<env>/<scan>.json` files plus taxonomy and manifest."""
    os.makedirs(root, exist_ok=True)
    save_taxonomy(taxonomy, os.path.join(root, "taxonomy.json"))
    manifest = {
        "format_version": MANIFEST_VERSION,
        "taxonomy_file": "taxonomy.json",
        "environments": [],
    }
    for env_id in environments:
        scans = environments[env_id]
        env_dir = os.path.join(root, env_id)
        os.makedirs(env_dir, exist_ok=True)
        for scan in scans:
            save_scene_graph(scan, taxonomy, os.path.join(env_dir, f"{scan.scan_id}.json"))
        manifest["environments"].append(
            {
                "environment_id": env_id,
                "split": splits.get(env_id, "train"),
                "scans": [s.scan_id for s in scans],
            }
        )
    with open(os.path.join(root, "manifest.json"), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)
        f.write("\n")


def load_dataset(root) -> DatasetBundle:
    manifest_path = os.path.join(root, "manifest.json")
    if not os.path.isfile(manifest_path):
        raise ParseError(f"{manifest_path}: no manifest found; not a dataset directory")
    with open(manifest_path, "r", encoding="utf-8") as f:
        try:
            manifest = json.load(f)
        except json.JSONDecodeError as e:
            raise ParseError(f"{manifest_path}: invalid JSON at line {e.lineno}: {e.msg}") from e
    if manifest.get("format_version") != MANIFEST_VERSION:
        raise ParseError(
            f"{manifest_path}: unsupported manifest version {manifest.get('format_version')!r}"
        )
    taxonomy = load_taxonomy(os.path.join(root, manifest.get("taxonomy_file", "taxonomy.json")))
    environments: dict[str, list[SceneGraph]] = {}
    splits: dict[str, str] = {}
    for entry in manifest.get("environments", []):
        env_id = entry["environment_id"]
        split = entry.get("split", "train")
        if split not in SPLIT_NAMES:
            raise ParseError(f"{manifest_path}: environment {env_id!r} has bad split {split!r}")
        scans = [
            load_scene_graph(os.path.join(root, env_id, f"{scan_id}.json"), taxonomy)
            for scan_id in entry["scans"]
        ]
        environments[env_id] = scans
        splits[env_id] = split
    return DatasetBundle(taxonomy, environments, splits)


# ---------------------------------------------------------------------------
# 3RScan/3DSSG-style layout ingestion
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IngestReport:
    environments: int
    scans: int
    samples: int
    skipped_environments: tuple[str, ...]
    stats: LabelStats


_KIND_MAP = {"state": "state", "dynamic": "state", "affordance": "affordance"}


def _read_scan_objects(scan_dir: str) -> list[dict]:
    path = os.path.join(scan_dir, "objects.json")
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    objects = data.get("objects")
    if not isinstance(objects, list):
        raise ParseError(f"{path}: expected an 'objects' list")
    for obj in objects:
        if "position" not in obj:
            raise ParseError(
                f"{path}: object {obj.get('id')!r} has no position; this adapter "
                "consumes layout exports that include per-object positions"
            )
    return objects


def _object_attributes(obj: dict) -> list[tuple[str, str]]:
    attrs = obj.get("attributes", [])
    if isinstance(attrs, dict):
        return [
            (str(name), _KIND_MAP.get(kind, "static"))
            for kind, names in sorted(attrs.items())
            for name in names
        ]
    return [(str(name), "static") for name in attrs]


def ingest_3rscan_layout(root) -> tuple[list[Sample], Taxonomy, IngestReport]:
    """Ingest a directory laid out in the 3RScan/3DSSG export style.

    Expected layout:
      <root>/3RScan.json            list of {"reference": <scan>, "scans": [...]}
      <root>/<scan>/objects.json    {"objects": [{"id", "label", "attributes",
                                     "position"}, ...]}
      <root>/<scan>/relationships.json  optional {"relationships":
                                     [[source_id, target_id, name], ...]}

    Environments missing their mapping entry or any scan payload are skipped
    with a warning. The taxonomy is built from the union of observed labels,
    attributes, and relationship names.
    """
    index_path = os.path.join(root, "3RScan.json")
    if not os.path.isfile(index_path):
        logger.warning("%s: no 3RScan.json index; returning empty dataset", root)
        empty = LabelStats((0, 0, 0), (0, 0, 0))
        placeholder = Taxonomy(
            "3rscan", ("object",), (("present", "state"),), ("near",)
        )
        return [], placeholder, IngestReport(0, 0, 0, (), empty)
    with open(index_path, "r", encoding="utf-8") as f:
        index = json.load(f)
    if not isinstance(index, list):
        raise ParseError(f"{index_path}: expected a JSON list of environments")

    scan_lists: dict[str, list[str]] = {}
    skipped: list[str] = []
    for k, entry in enumerate(index):
        ref = entry.get("reference")
        if not ref or not isinstance(entry.get("scans"), list):
            logger.warning("%s: entry %d has no reference mapping; skipping", index_path, k)
            skipped.append(str(ref or f"<entry {k}>"))
            continue
        scan_ids = [ref] + [s.get("reference") for s in entry["scans"] if s.get("reference")]
        scan_lists[ref] = scan_ids

    # First pass: collect the vocabulary.
    classes: set[str] = set()
    attributes: dict[str, str] = {}
    relations: set[str] = set()
    payloads: dict[str, tuple[list[dict], list]] = {}
    usable: dict[str, list[str]] = {}
    for env_id, scan_ids in sorted(scan_lists.items()):
        entries = []
        try:
            for scan_id in scan_ids:
                scan_dir = os.path.join(root, scan_id)
                objects = _read_scan_objects(scan_dir)
                rel_path = os.path.join(scan_dir, "relationships.json")
                rels = []
                if os.path.isfile(rel_path):
                    with open(rel_path, "r", encoding="utf-8") as f:
                        rels = json.load(f).get("relationships", [])
                entries.append((scan_id, objects, rels))
        except (OSError, ParseError, json.JSONDecodeError) as e:
            logger.warning("environment %s: %s; skipping", env_id, e)
            skipped.append(env_id)
            continue
        usable[env_id] = scan_ids
        for scan_id, objects, rels in entries:
            payloads[scan_id] = (objects, rels)
            for obj in objects:
                classes.add(str(obj.get("label", "object")))
                for name, kind in _object_attributes(obj):
                    attributes.setdefault(name, kind)
            for rel in rels:
                relations.add(str(rel[2]))

    if not usable:
        empty = LabelStats((0, 0, 0), (0, 0, 0))
        placeholder = Taxonomy("3rscan", ("object",), (("present", "state"),), ("near",))
        return [], placeholder, IngestReport(0, 0, 0, tuple(skipped), empty)

    if not any(kind == "state" for kind in attributes.values()):
        attributes["unobserved_state"] = "state"  # placeholder; never assigned
    if not relations:
        relations.add("near")
    taxonomy = Taxonomy(
        name="3rscan",
        classes=tuple(sorted(classes)) or ("object",),
        attributes=tuple(sorted(attributes.items())),
        relationships=tuple(sorted(relations)),
    )

    samples: list[Sample] = []
    total_scans = 0
    for env_id, scan_ids in sorted(usable.items()):
        scans = []
        for t, scan_id in enumerate(scan_ids):
            objects, rels = payloads[scan_id]
            nodes = tuple(
                ObjectNode(
                    id=str(obj["id"]),
                    class_index=taxonomy.class_index(str(obj.get("label", "object"))),
                    attribute_indices=tuple(
                        sorted(
                            {taxonomy.attribute_index(n) for n, _ in _object_attributes(obj)}
                        )
                    ),
                    position=tuple(float(x) for x in obj["position"]),
                )
                for obj in objects
            )
            ids = {n.id for n in nodes}
            edges = tuple(
                SemanticEdge(str(r[0]), str(r[1]), taxonomy.relationship_index(str(r[2])))
                for r in rels
                if str(r[0]) in ids and str(r[1]) in ids and str(r[0]) != str(r[1])
            )
            scans.append(
                SceneGraph(
                    environment_id=env_id,
                    scan_id=scan_id,
                    timestamp=t,
                    taxonomy_name=taxonomy.name,
                    nodes=nodes,
                    semantic_edges=edges,
                )
            )
        total_scans += len(scans)
        samples.extend(make_samples(scans, taxonomy))

    stats = label_statistics(samples) if samples else LabelStats((0, 0, 0), (0, 0, 0))
    report = IngestReport(
        environments=len(usable),
        scans=total_scans,
        samples=len(samples),
        skipped_environments=tuple(skipped),
        stats=stats,
    )
    return samples, taxonomy, report
