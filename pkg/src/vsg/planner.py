"""Active change detection: plan a route that finds n changed objects fast.

A robot holds the previous map of a scene and must visit objects until it
has confirmed n changes against the realized scene. Detection at a visit is
binary and noiseless: an object counts as changed when any of its three
variability labels (position, state, instance) is 1 between the two scans.
Vanished objects are still route targets at their previous-map positions;
visiting the empty spot detects the change.

Two planners are compared. Coverage tours all previous-map objects along a
TSP route. The variability-guided planner first tours the n+3 objects with
the highest predicted change probability (score = max of the three), and
falls back to a Coverage tour over the unvisited remainder, from wherever it
stopped, if that was not enough. Motion is point-to-point Euclidean.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .core_graph import SceneGraph, Taxonomy
from .dataset import LabelConfig, compute_labels
from .errors import ConfigError, EvaluationError

logger = logging.getLogger(__name__)

COVERAGE = "coverage"
VSG_PLANNER = "vsg"

EXACT_TSP_LIMIT = 15


def route_length(points: np.ndarray, start: np.ndarray, order: list[int]) -> float:
    """Total length of the open path start -> points[order[0]] -> ..."""
    pos = np.asarray(start, dtype=np.float64)
    total = 0.0
    for k in order:
        nxt = points[k]
        total += float(np.linalg.norm(nxt - pos))
        pos = nxt
    return total


def held_karp(points: np.ndarray, start: np.ndarray) -> list[int]:
    """Exact open-path TSP from a fixed start, dynamic programming over subsets.

    Ties are broken by taking the lowest point index at every argmin (each
    predecessor choice and the final endpoint), so the result is deterministic:
    between equal-length routes the one ending at the lower index wins.
    """
    n = len(points)
    if n == 0:
        return []
    pts = np.asarray(points, dtype=np.float64)
    d_start = np.linalg.norm(pts - np.asarray(start, dtype=np.float64), axis=1)
    dist = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
    full = 1 << n
    cost = np.full((full, n), np.inf)
    parent = np.full((full, n), -1, dtype=np.int64)
    for j in range(n):
        cost[1 << j, j] = d_start[j]
    for mask in range(1, full):
        members = [j for j in range(n) if mask & (1 << j)]
        if len(members) < 2:
            continue
        for j in members:
            prev_mask = mask ^ (1 << j)
            # cost[prev_mask, i] is inf unless i is in prev_mask, so no
            # extra masking is needed beyond excluding j itself.
            candidates = cost[prev_mask] + dist[:, j]
            candidates[j] = np.inf
            best = int(np.argmin(candidates))  # argmin takes the lowest index on ties
            cost[mask, j] = candidates[best]
            parent[mask, j] = best
    mask = full - 1
    last = int(np.argmin(cost[mask]))
    order = [last]
    while parent[mask, last] >= 0:
        prev = int(parent[mask, last])
        mask ^= 1 << last
        order.append(prev)
        last = prev
    order.reverse()
    return order


def nearest_neighbor(points: np.ndarray, start: np.ndarray) -> list[int]:
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    remaining = list(range(n))
    pos = np.asarray(start, dtype=np.float64)
    order: list[int] = []
    while remaining:
        d = np.linalg.norm(pts[remaining] - pos, axis=1)
        pick = remaining[int(np.argmin(d))]
        order.append(pick)
        remaining.remove(pick)
        pos = pts[pick]
    return order


def _extended_distances(pts: np.ndarray, start: np.ndarray) -> np.ndarray:
    """Pairwise distance matrix with the start appended as virtual index n."""
    stacked = np.vstack([pts, start[None, :]])
    diff = stacked[:, None, :] - stacked[None, :, :]
    return np.sqrt((diff * diff).sum(axis=2))


def _matrix_route_length(dist: np.ndarray, order: list[int]) -> float:
    if not order:
        return 0.0
    s = dist.shape[0] - 1
    total = dist[s, order[0]]
    for a, b in zip(order, order[1:]):
        total += dist[a, b]
    return float(total)


def _two_opt(dist: np.ndarray, order: list[int]) -> list[int]:
    n = len(order)
    s = dist.shape[0] - 1
    improved = True
    while improved:
        improved = False
        for i in range(n - 1):
            prev = s if i == 0 else order[i - 1]
            for j in range(i + 1, n):
                # Reverse order[i..j]; legs change at both segment boundaries,
                # except past the tail where the route just ends.
                delta = dist[prev, order[j]] - dist[prev, order[i]]
                if j + 1 < n:
                    nxt = order[j + 1]
                    delta += dist[order[i], nxt] - dist[order[j], nxt]
                if delta < -1e-12:
                    order[i : j + 1] = order[i : j + 1][::-1]
                    improved = True
    return order


def _or_opt(dist: np.ndarray, order: list[int]) -> tuple[list[int], bool]:
    """One first-improvement pass relocating a run of 1-3 points."""
    n = len(order)
    s = dist.shape[0] - 1
    for seg in (1, 2, 3):
        if seg > n - 1:
            break
        for i in range(n - seg + 1):
            j = i + seg - 1
            prev = s if i == 0 else order[i - 1]
            gain = dist[prev, order[i]]
            if j + 1 < n:
                nxt = order[j + 1]
                gain += dist[order[j], nxt] - dist[prev, nxt]
            rest = order[:i] + order[j + 1 :]
            segment = order[i : j + 1]
            for k in range(len(rest) + 1):
                a = s if k == 0 else rest[k - 1]
                b = rest[k] if k < len(rest) else None
                for piece in (segment, segment[::-1]):
                    cost = dist[a, piece[0]]
                    if b is not None:
                        cost += dist[piece[-1], b] - dist[a, b]
                    if cost < gain - 1e-12:
                        return rest[:k] + piece + rest[k:], True
    return order, False


def _local_search(dist: np.ndarray, order: list[int]) -> list[int]:
    """Alternate 2-opt and Or-opt until neither move set improves."""
    improved = True
    while improved:
        order = _two_opt(dist, list(order))
        order, improved = _or_opt(dist, order)
    return order


def _forced_nearest_neighbor(dist: np.ndarray, first: int) -> list[int]:
    n = dist.shape[0] - 1
    remaining = list(range(n))
    remaining.remove(first)
    order = [first]
    while remaining:
        pick = remaining[int(np.argmin(dist[order[-1], remaining]))]
        order.append(pick)
        remaining.remove(pick)
    return order


def _double_bridge(order: list[int], rng: np.random.Generator) -> list[int]:
    cuts = rng.choice(np.arange(1, len(order)), size=3, replace=False)
    a, b, c = sorted(int(x) for x in cuts)
    return order[:a] + order[b:c] + order[a:b] + order[c:]


def two_opt(points: np.ndarray, start: np.ndarray, order: list[int]) -> list[int]:
    """First-improvement 2-opt on an open path; every accepted reversal
    strictly shortens the route, so termination is guaranteed."""
    pts = np.asarray(points, dtype=np.float64)
    order = list(order)
    if len(order) < 2:
        return order
    dist = _extended_distances(pts, np.asarray(start, dtype=np.float64))
    return _two_opt(dist, order)


_DOUBLE_BRIDGE_KICKS = 10


def heuristic_tsp(points: np.ndarray, start) -> list[int]:
    """Multi-start local search for the open-path TSP.

    Nearest-neighbor construction is run once per forced first point and each
    route is polished to a joint local optimum of 2-opt (segment reversal)
    and Or-opt (relocating runs of 1-3 points, either orientation). The best
    route then gets a fixed number of double-bridge restarts. Acceptance is
    strict improvement everywhere and the kick sequence is seeded, so the
    result is deterministic in the inputs.
    """
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    if n <= 1:
        return list(range(n))
    dist = _extended_distances(pts, np.asarray(start, dtype=np.float64))
    best: list[int] = []
    best_len = np.inf
    for first in range(n):
        order = _local_search(dist, _forced_nearest_neighbor(dist, first))
        length = _matrix_route_length(dist, order)
        if length < best_len - 1e-12:
            best, best_len = order, length
    if n >= 4:  # a double bridge needs three distinct interior cuts
        rng = np.random.default_rng(0)
        current, current_len = list(best), best_len
        for _ in range(_DOUBLE_BRIDGE_KICKS):
            cand = _local_search(dist, _double_bridge(current, rng))
            length = _matrix_route_length(dist, cand)
            if length < current_len - 1e-12:
                current, current_len = list(cand), length
            if length < best_len - 1e-12:
                best, best_len = list(cand), length
    return best


def solve_tsp(points: np.ndarray, start, exact_threshold: int = EXACT_TSP_LIMIT) -> list[int]:
    """Visit order over all points, starting from `start` (not a point)."""
    pts = np.asarray(points, dtype=np.float64)
    if len(pts) == 0:
        return []
    if len(pts) <= exact_threshold:
        return held_karp(pts, start)
    return heuristic_tsp(pts, start)


# ---------------------------------------------------------------------------
# Episodes and planners
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Episode:
    """One change-detection task: previous map, realized scene, target n."""

    previous_map: SceneGraph
    realized_scene: SceneGraph
    n: int
    start_position: tuple[float, float, float] | None = None
    label_cfg: LabelConfig = LabelConfig()

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError(f"episode needs n >= 1, got {self.n}")
        if self.previous_map.num_nodes == 0:
            raise ConfigError("episode needs a non-empty previous map")

    def start(self) -> np.ndarray:
        if self.start_position is not None:
            return np.asarray(self.start_position, dtype=np.float64)
        return self.previous_map.positions().mean(axis=0)


@dataclass(frozen=True)
class EpisodeResult:
    planner: str
    visit_order: tuple[str, ...]  # the visited prefix, in visit order
    distance_traveled: float
    changes_found: int
    fallback_used: bool
    infeasible: bool


def changed_object_ids(ep: Episode, tax: Taxonomy) -> frozenset[str]:
    labels = compute_labels(ep.previous_map, ep.realized_scene, tax, ep.label_cfg)
    return frozenset(
        oid for oid, lab in labels.items() if lab.y_position or lab.y_state or lab.y_instance
    )


def _walk(
    ep: Episode,
    route_ids: list[str],
    changed: frozenset[str],
    start: np.ndarray,
    already_found: int = 0,
) -> tuple[list[str], float, int, np.ndarray]:
    """Walk the route until n changes are found; returns the visited prefix,
    the distance actually traveled, the running change count, and the final
    position."""
    pos = np.asarray(start, dtype=np.float64)
    found = already_found
    visited: list[str] = []
    distance = 0.0
    for oid in route_ids:
        target = np.asarray(ep.previous_map.node(oid).position, dtype=np.float64)
        distance += float(np.linalg.norm(target - pos))
        pos = target
        visited.append(oid)
        if oid in changed:
            found += 1
            if found >= ep.n:
                break
    return visited, distance, found, pos


def run_coverage(ep: Episode, tax: Taxonomy) -> EpisodeResult:
    """TSP tour over every previous-map object, walked until n changes."""
    changed = changed_object_ids(ep, tax)
    ids = list(ep.previous_map.node_ids)
    start = ep.start()
    order = solve_tsp(ep.previous_map.positions(), start)
    route = [ids[k] for k in order]
    visited, distance, found, _ = _walk(ep, route, changed, start)
    return EpisodeResult(
        planner=COVERAGE,
        visit_order=tuple(visited),
        distance_traveled=distance,
        changes_found=found,
        fallback_used=False,
        infeasible=found < ep.n,
    )


def run_vsg_planner(ep: Episode, model, tax: Taxonomy) -> EpisodeResult:
    """Tour the n+3 most change-prone objects first, Coverage as fallback.

    `model` is anything with predict_probabilities(graph, taxonomy); scores
    are the max of the three returned probabilities, ties broken toward the
    lower object id.
    """
    changed = changed_object_ids(ep, tax)
    probabilities = model.predict_probabilities(ep.previous_map, tax)
    scores = {oid: max(p) for oid, p in probabilities.items()}
    ranked = sorted(scores, key=lambda oid: (-scores[oid], oid))
    top = set(ranked[: ep.n + 3])

    ids = list(ep.previous_map.node_ids)
    positions = ep.previous_map.positions()
    index_of = {oid: k for k, oid in enumerate(ids)}
    start = ep.start()

    phase1_ids = [oid for oid in ids if oid in top]
    phase1_points = positions[[index_of[oid] for oid in phase1_ids]]
    order = solve_tsp(phase1_points, start)
    route1 = [phase1_ids[k] for k in order]
    visited, distance, found, pos = _walk(ep, route1, changed, start)

    fallback = False
    if found < ep.n:
        remaining = [oid for oid in ids if oid not in set(visited)]
        if remaining:
            fallback = True
            rem_points = positions[[index_of[oid] for oid in remaining]]
            order2 = solve_tsp(rem_points, pos)
            route2 = [remaining[k] for k in order2]
            visited2, dist2, found, _ = _walk(ep, route2, changed, pos, already_found=found)
            visited.extend(visited2)
            distance += dist2
    return EpisodeResult(
        planner=VSG_PLANNER,
        visit_order=tuple(visited),
        distance_traveled=distance,
        changes_found=found,
        fallback_used=fallback,
        infeasible=found < ep.n,
    )


class OracleScorer:
    """Stands in for a model: probability 1 on the true changes, 0 elsewhere."""

    def __init__(self, realized_scene: SceneGraph, label_cfg: LabelConfig = LabelConfig()):
        self.realized_scene = realized_scene
        self.label_cfg = label_cfg

    def predict_probabilities(self, g: SceneGraph, tax: Taxonomy):
        labels = compute_labels(g, self.realized_scene, tax, self.label_cfg)
        return {
            oid: (float(lab.y_position), float(lab.y_state), float(lab.y_instance))
            for oid, lab in labels.items()
        }


# ---------------------------------------------------------------------------
# Benchmark
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BenchmarkRow:
    n: int
    planner: str
    mean_distance: float
    std_distance: float
    win_fraction: float  # fraction of episodes strictly shorter than the rival
    speedup: float  # mean relative distance reduction vs Coverage


@dataclass(frozen=True)
class BenchmarkSummary:
    rows: tuple[BenchmarkRow, ...]
    feasible_episodes: int
    infeasible_episodes: int


def run_benchmark(episodes: list[Episode], model, tax: Taxonomy) -> BenchmarkSummary:
    """Run both planners on every episode and summarize per n.

    Episodes where even the full Coverage tour cannot find n changes are
    excluded from the statistics. The speedup column is relative to the
    Coverage baseline, so Coverage's own rows carry 0.
    """
    by_n: dict[int, list[tuple[float, float]]] = {}
    infeasible = 0
    for ep in episodes:
        cov = run_coverage(ep, tax)
        if cov.infeasible:
            infeasible += 1
            continue
        vsg = run_vsg_planner(ep, model, tax)
        by_n.setdefault(ep.n, []).append((cov.distance_traveled, vsg.distance_traveled))
    if not by_n:
        raise EvaluationError("no feasible episodes: every realized scene had too few changes")
    rows: list[BenchmarkRow] = []
    for n in sorted(by_n):
        pairs = np.array(by_n[n], dtype=np.float64)
        cov_d, vsg_d = pairs[:, 0], pairs[:, 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            rel = np.where(cov_d > 0, (cov_d - vsg_d) / cov_d, 0.0)
        rows.append(
            BenchmarkRow(
                n=n,
                planner=COVERAGE,
                mean_distance=float(cov_d.mean()),
                std_distance=float(cov_d.std()),
                win_fraction=float((cov_d < vsg_d).mean()),
                speedup=0.0,
            )
        )
        rows.append(
            BenchmarkRow(
                n=n,
                planner=VSG_PLANNER,
                mean_distance=float(vsg_d.mean()),
                std_distance=float(vsg_d.std()),
                win_fraction=float((vsg_d < cov_d).mean()),
                speedup=float(rel.mean()),
            )
        )
    total = sum(len(v) for v in by_n.values())
    return BenchmarkSummary(tuple(rows), feasible_episodes=total, infeasible_episodes=infeasible)


def write_benchmark_csv(summary: BenchmarkSummary, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["n", "planner", "mean_distance", "std_distance", "win_fraction", "speedup"])
        for r in summary.rows:
            writer.writerow([r.n, r.planner, r.mean_distance, r.std_distance, r.win_fraction, r.speedup])


def make_episodes(
    environments: dict[str, list[SceneGraph]],
    n_values: list[int],
    label_cfg: LabelConfig = LabelConfig(),
) -> list[Episode]:
    """Episodes from every consecutive scan pair of every environment, one
    per requested n."""
    episodes = []
    for env_id in environments:
        scans = environments[env_id]
        for t in range(len(scans) - 1):
            for n in n_values:
                episodes.append(
                    Episode(
                        previous_map=scans[t],
                        realized_scene=scans[t + 1],
                        n=n,
                        label_cfg=label_cfg,
                    )
                )
    return episodes
