"""Incremental MST updates: add-and-delete vertex insertion and resampling deltas."""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import asdict, dataclass

import numpy as np

from .errors import BridgeError, InvalidParameterError
from .geometry import Box, Configuration, sample_poisson
from .mst import SpanningTree, WeightedGraph, _tree_from_edges, kruskal_mst, mst_weight


@dataclass(frozen=True)
class InsertionStep:
    """One add-and-delete step.

    ``y`` is the largest weight on the tree path from the new vertex to
    ``p_k`` before the edge ``{v, p_k}`` is added (for ``k = 1`` there is no
    such path and ``y = d(v, p_1)``).
    """

    k: int
    added_edge: tuple[int, int, float]
    deleted_edge: tuple[int, int, float] | None
    y: float
    tree_weight: float


@dataclass(frozen=True)
class InsertionTrace:
    steps: tuple[InsertionStep, ...]

    def to_rows(self) -> list[dict]:
        return [asdict(s) for s in self.steps]

    def to_json(self) -> str:
        return json.dumps(self.to_rows())


@dataclass(frozen=True)
class DeltaReport:
    """Change in MST weight when one block is resampled: ``delta = before - after``."""

    delta: float
    block_id: int
    full_weight_before: float
    full_weight_after: float

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def _edge_key(a: int, b: int, w: float):
    return (w, min(a, b), max(a, b))


def _tree_path(adj: dict, src: int, dst: int) -> list[tuple[int, int]]:
    prev = {src: None}
    queue = deque([src])
    while queue:
        x = queue.popleft()
        if x == dst:
            break
        for y in adj[x]:
            if y not in prev:
                prev[y] = x
                queue.append(y)
    if dst not in prev:
        return []
    path, x = [], dst
    while prev[x] is not None:
        path.append((prev[x], x))
        x = prev[x]
    return path


def insert_vertex_add_delete(base_tree: SpanningTree, points, v, neighbors, order: str = "distance"):
    """Insert point ``v`` into an MST of ``points`` using only edges ``{v, p}`` for ``p`` in ``neighbors``.

    Each edge ``{v, p_k}`` is added in turn; when it closes a cycle the
    heaviest cycle edge (ties by ``(w, u, v)``) is deleted. The new vertex gets
    index ``len(points)``. With ``order="distance"`` the neighbours are
    processed nearest first, otherwise in the given order.

    Returns the final tree and the per-step trace.
    """
    pts = points.points if isinstance(points, Configuration) else np.asarray(points, dtype=float)
    n = len(pts)
    if base_tree.vertex_count != n:
        raise InvalidParameterError("base_tree must span exactly the given points")
    nbrs = [int(p) for p in neighbors]
    if any(p < 0 or p >= n for p in nbrs) or len(set(nbrs)) != len(nbrs):
        raise InvalidParameterError("neighbors must be distinct indices of points in the base set")
    v = np.asarray(v, dtype=float).reshape(-1)
    dist = {p: float(np.sqrt(np.sum((pts[p] - v) ** 2))) for p in nbrs}
    if order == "distance":
        nbrs.sort(key=lambda p: (dist[p], p))
    elif order != "given":
        raise InvalidParameterError(f"unknown order {order!r}")

    new = n
    adj: dict[int, dict[int, float]] = {i: {} for i in range(n + 1)}
    for a, b, w in base_tree.edges():
        adj[a][b] = w
        adj[b][a] = w
    weight = base_tree.total_weight
    steps = []
    for k, p in enumerate(nbrs, start=1):
        d = dist[p]
        path = _tree_path(adj, new, p)
        if not path:
            y = d if k == 1 else math.inf
            adj[new][p] = d
            adj[p][new] = d
            weight += d
            deleted = None
        else:
            y = max(adj[a][b] for a, b in path)
            cycle = [(a, b, adj[a][b]) for a, b in path] + [(new, p, d)]
            a, b, w = max(cycle, key=lambda e: _edge_key(*e))
            deleted = (min(a, b), max(a, b), w)
            if (a, b) != (new, p):
                del adj[a][b]
                del adj[b][a]
                adj[new][p] = d
                adj[p][new] = d
                weight += d - w
        steps.append(InsertionStep(k, (new, p, d), deleted, float(y), float(weight)))

    edges = [(a, b, w) for a in adj for b, w in adj[a].items() if a < b]
    arr = np.array(edges, dtype=float).reshape(-1, 3)
    tree = _tree_from_edges(n + 1, arr[:, 0].astype(np.int64), arr[:, 1].astype(np.int64), arr[:, 2])
    return tree, InsertionTrace(tuple(steps))


def edge_removal_delta(g: WeightedGraph, e) -> tuple[float, float]:
    """``(M(g) - M(g - e), Y)`` where ``Y`` is the minimax value between the
    endpoints of ``e`` in ``g - e``; the delta equals ``w(e) - max(w(e), Y)``.

    ``e`` is an edge index or an endpoint pair. Raises ``BridgeError`` when
    removing ``e`` separates its endpoints.
    """
    idx = g.edge_index(*e) if isinstance(e, tuple) else int(e)
    a, b, w = int(g.u[idx]), int(g.v[idx]), float(g.w[idx])
    t = kruskal_mst(g.without_edge(idx))
    if not t.same_component(a, b):
        raise BridgeError(f"edge {{{a}, {b}}} is a bridge")
    y = float(t.path_max_index.query([a], [b])[0])
    return w - max(w, y), y


def resample_block(c: Configuration, block: Box, resample_seed: int, intensity: float = 1.0,
                   replacement: Configuration | np.ndarray | None = None) -> Configuration:
    """``c`` with its points in ``block`` replaced by an independent Poisson draw (or ``replacement``)."""
    if not c.domain.contains_box(block):
        raise InvalidParameterError("block must lie inside the configuration domain")
    if replacement is None:
        replacement = sample_poisson(block, intensity, resample_seed)
    return c.replace_block(block, replacement)


def block_delta(c: Configuration, block: Box, resample_seed: int, intensity: float = 1.0,
                block_id: int = 0, replacement=None) -> DeltaReport:
    """``M(X) - M(X^j)`` for the block resampled with ``resample_seed``."""
    after_cfg = resample_block(c, block, resample_seed, intensity, replacement)
    before = mst_weight(c)
    after = mst_weight(after_cfg)
    return DeltaReport(before - after, block_id, before, after)


def local_delta(c: Configuration, center, radius: float, block: Box, resample_seed: int,
                intensity: float = 1.0, block_id: int = 0, replacement=None) -> DeltaReport:
    """Same as :func:`block_delta` with both MSTs restricted to ``B(center, radius)``.

    The resampled points are identical to those used by :func:`block_delta`
    for the same seed, so the two reports are directly comparable.
    """
    window = Box(center, radius)
    if not window.contains_box(block):
        raise InvalidParameterError("block must lie inside B(center, radius)")
    after_cfg = resample_block(c, block, resample_seed, intensity, replacement)
    before = mst_weight(c.points[window.contains(c.points)]) if len(c) else 0.0
    kept = after_cfg.points[window.contains(after_cfg.points)] if len(after_cfg) else after_cfg.points
    after = mst_weight(kept)
    return DeltaReport(before - after, block_id, before, after)
