"""Weighted graphs, Kruskal spanning forests, Euclidean MSTs and minimax queries."""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from . import _kernels as K
from .errors import InvalidParameterError, NoPathError
from .geometry import Configuration

# starting neighbour counts for the knn candidate graph, by dimension
KNN_START = {1: 2, 2: 8, 3: 14}


def _int_array(x) -> np.ndarray:
    a = np.ascontiguousarray(np.asarray(x, dtype=np.int64).reshape(-1))
    a.setflags(write=False)
    return a


def _float_array(x) -> np.ndarray:
    a = np.ascontiguousarray(np.asarray(x, dtype=float).reshape(-1))
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class WeightedGraph:
    """Undirected graph on vertices ``0..vertex_count-1`` with nonnegative weights.

    Edges are stored with ``u < v``. ``labels`` optionally maps each vertex to
    a coordinate row (Euclidean point or lattice site).
    """

    vertex_count: int
    u: np.ndarray
    v: np.ndarray
    w: np.ndarray
    labels: np.ndarray | None = None
    validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        u, v, w = (np.asarray(self.u, dtype=np.int64).reshape(-1),
                   np.asarray(self.v, dtype=np.int64).reshape(-1),
                   np.asarray(self.w, dtype=float).reshape(-1))
        if not (u.size == v.size == w.size):
            raise InvalidParameterError("u, v, w must have equal length")
        n = int(self.vertex_count)
        if self.validate:
            if n < 0:
                raise InvalidParameterError("vertex_count must be >= 0")
            if u.size:
                if np.any(u == v):
                    raise InvalidParameterError("self-loops are not allowed")
                if min(u.min(), v.min()) < 0 or max(u.max(), v.max()) >= n:
                    raise InvalidParameterError("edge endpoint out of range")
                if not np.all(np.isfinite(w)) or np.any(w < 0):
                    raise InvalidParameterError("weights must be finite and >= 0")
        lo, hi = np.minimum(u, v), np.maximum(u, v)
        object.__setattr__(self, "vertex_count", n)
        object.__setattr__(self, "u", _int_array(lo))
        object.__setattr__(self, "v", _int_array(hi))
        object.__setattr__(self, "w", _float_array(w))
        if self.labels is not None:
            lab = np.array(self.labels, copy=True)
            lab.setflags(write=False)
            object.__setattr__(self, "labels", lab)

    @classmethod
    def from_edges(cls, vertex_count: int, edges, labels=None) -> "WeightedGraph":
        """Build from an iterable of ``(u, v, w)`` triples."""
        arr = np.asarray(list(edges), dtype=float).reshape(-1, 3)
        return cls(vertex_count, arr[:, 0].astype(np.int64), arr[:, 1].astype(np.int64), arr[:, 2], labels)

    @property
    def edge_count(self) -> int:
        return int(self.u.size)

    def edges(self) -> list[tuple[int, int, float]]:
        return list(zip(self.u.tolist(), self.v.tolist(), self.w.tolist()))

    def edge_index(self, a: int, b: int) -> int:
        lo, hi = min(a, b), max(a, b)
        hits = np.flatnonzero((self.u == lo) & (self.v == hi))
        if hits.size == 0:
            raise InvalidParameterError(f"no edge {{{a}, {b}}}")
        return int(hits[0])

    def without_edge(self, index: int) -> "WeightedGraph":
        keep = np.ones(self.edge_count, bool)
        keep[index] = False
        return WeightedGraph(self.vertex_count, self.u[keep], self.v[keep], self.w[keep],
                             self.labels, validate=False)

    def with_weights(self, w) -> "WeightedGraph":
        return WeightedGraph(self.vertex_count, self.u, self.v, w, self.labels)

    def kruskal_order(self) -> np.ndarray:
        """Edge indices sorted by ``(w, u, v)``."""
        return np.lexsort((self.v, self.u, self.w))

    def to_text(self) -> str:
        return _edges_text(self.vertex_count, self.u, self.v, self.w)

    @classmethod
    def from_text(cls, text: str) -> "WeightedGraph":
        n, u, v, w = _parse_edges_text(text)
        return cls(n, u, v, w)


def _edges_text(n, u, v, w) -> str:
    buf = io.StringIO()
    buf.write(f"{n} {len(u)}\n")
    for a, b, x in zip(u.tolist(), v.tolist(), w.tolist()):
        buf.write(f"{a} {b} {x:.17g}\n")
    return buf.getvalue()


def _parse_edges_text(text: str):
    lines = text.strip().splitlines()
    n, m = (int(x) for x in lines[0].split()[:2])
    rows = [ln.split() for ln in lines[1:1 + m]]
    u = np.array([int(r[0]) for r in rows], dtype=np.int64)
    v = np.array([int(r[1]) for r in rows], dtype=np.int64)
    w = np.array([float(r[2]) for r in rows], dtype=float)
    return n, u, v, w


class PathMaxIndex:
    """Binary-lifting tables answering max-edge-on-path queries in O(log n)."""

    def __init__(self, n: int, u: np.ndarray, v: np.ndarray, w: np.ndarray):
        self.up, self.mx, self.depth, self.component = K.tree_lifting(
            n, np.ascontiguousarray(u), np.ascontiguousarray(v), np.ascontiguousarray(w))

    def query(self, a, b) -> np.ndarray:
        a = np.atleast_1d(np.asarray(a, dtype=np.int64))
        b = np.atleast_1d(np.asarray(b, dtype=np.int64))
        if np.any(self.component[a] != self.component[b]):
            raise NoPathError("vertices lie in different tree components")
        return K.path_max_many(self.up, self.mx, self.depth, a, b)


@dataclass(frozen=True, eq=False)
class SpanningTree:
    """A minimum spanning forest: chosen edges, total weight and component count."""

    vertex_count: int
    u: np.ndarray
    v: np.ndarray
    w: np.ndarray
    total_weight: float
    n_components: int

    @property
    def is_spanning(self) -> bool:
        """False when the source graph was disconnected (result is a forest)."""
        return self.n_components <= 1

    @property
    def edge_count(self) -> int:
        return int(self.u.size)

    def edges(self) -> list[tuple[int, int, float]]:
        return list(zip(self.u.tolist(), self.v.tolist(), self.w.tolist()))

    def edge_set(self) -> frozenset[tuple[int, int]]:
        return frozenset(zip(self.u.tolist(), self.v.tolist()))

    def recomputed_weight(self) -> float:
        return math.fsum(self.w.tolist())

    def degrees(self) -> np.ndarray:
        return np.bincount(np.concatenate([self.u, self.v]), minlength=self.vertex_count)

    @cached_property
    def path_max_index(self) -> PathMaxIndex:
        return PathMaxIndex(self.vertex_count, self.u, self.v, self.w)

    def same_component(self, a: int, b: int) -> bool:
        comp = self.path_max_index.component
        return bool(comp[a] == comp[b])

    def to_text(self) -> str:
        return _edges_text(self.vertex_count, self.u, self.v, self.w)

    @classmethod
    def from_text(cls, text: str) -> "SpanningTree":
        n, u, v, w = _parse_edges_text(text)
        return _tree_from_edges(n, u, v, w)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())


def _tree_from_edges(n, u, v, w) -> SpanningTree:
    lo, hi = np.minimum(u, v), np.maximum(u, v)
    return SpanningTree(int(n), _int_array(lo), _int_array(hi), _float_array(w),
                        math.fsum(np.asarray(w, float).tolist()), int(n) - int(len(u)))


def kruskal_mst(g: WeightedGraph) -> SpanningTree:
    """Minimum spanning forest by Kruskal's algorithm.

    Ties are broken by the lexicographic key ``(w, u, v)`` so the output is
    deterministic. For a disconnected graph the result is a forest with
    ``n_components > 1``.
    """
    n = g.vertex_count
    if n == 0:
        return _tree_from_edges(0, np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0))
    order = g.kruskal_order()
    chosen, _ = K.kruskal_select(n, g.u, g.v, order)
    sel = order[chosen[order]]
    return _tree_from_edges(n, g.u[sel], g.v[sel], g.w[sel])


def complete_graph(c: Configuration | np.ndarray) -> WeightedGraph:
    """Complete graph on the points with Euclidean edge lengths."""
    pts = c.points if isinstance(c, Configuration) else np.asarray(c, dtype=float)
    n = len(pts)
    iu, iv = np.triu_indices(n, k=1)
    w = np.sqrt(np.sum((pts[iu] - pts[iv]) ** 2, axis=1))
    return WeightedGraph(n, iu, iv, w, labels=pts, validate=False)


def knn_graph(pts: np.ndarray, k: int, tree: cKDTree | None = None) -> WeightedGraph:
    """Symmetrized k-nearest-neighbour graph with Euclidean weights."""
    n = len(pts)
    k = min(k, n - 1)
    tree = tree if tree is not None else cKDTree(pts)
    _, idx = tree.query(pts, k=k + 1)
    idx = np.asarray(idx).reshape(n, k + 1)
    a = np.repeat(np.arange(n), k)
    b = idx[:, 1:].reshape(-1)
    # a point can be its own neighbour only with exact duplicates; drop defensively
    ok = a != b
    a, b = a[ok], b[ok]
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    key = np.unique(lo * n + hi)
    lo, hi = key // n, key % n
    w = np.sqrt(np.sum((pts[lo] - pts[hi]) ** 2, axis=1))
    return WeightedGraph(n, lo, hi, w, labels=pts, validate=False)


def _knn_tree_is_exact(pts, tree_kd, cand: WeightedGraph, t: SpanningTree) -> bool:
    n = len(pts)
    if t.edge_count == 0:
        return True
    bottleneck = float(t.w.max())
    pairs = tree_kd.query_pairs(bottleneck, output_type="ndarray")
    if len(pairs) == 0:
        return True
    lo, hi = np.minimum(pairs[:, 0], pairs[:, 1]), np.maximum(pairs[:, 0], pairs[:, 1])
    missing = ~np.isin(lo * n + hi, cand.u * n + cand.v)
    if not missing.any():
        return True
    lo, hi = lo[missing], hi[missing]
    d = np.sqrt(np.sum((pts[lo] - pts[hi]) ** 2, axis=1))
    pm = t.path_max_index.query(lo, hi)
    # ties count as failures so escalation ends on the complete graph
    return bool(np.all(d > pm))


def euclidean_mst(c: Configuration | np.ndarray, strategy: str = "knn", k: int | None = None) -> SpanningTree:
    """Euclidean minimum spanning tree of a point set.

    ``strategy="complete"`` runs Kruskal on all pairs. ``strategy="knn"`` runs
    Kruskal on a k-nearest-neighbour candidate graph and checks the result
    against every shorter-than-bottleneck pair it left out (cycle property);
    on failure or disconnection ``k`` doubles, ending at the complete graph.
    """
    pts = c.points if isinstance(c, Configuration) else np.asarray(c, dtype=float)
    n = len(pts)
    if n <= 1:
        return _tree_from_edges(n, np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0))
    if strategy == "complete":
        return kruskal_mst(complete_graph(pts))
    if strategy != "knn":
        raise InvalidParameterError(f"unknown strategy {strategy!r}")
    d = pts.shape[1]
    k = KNN_START.get(d, 2 * d * d) if k is None else int(k)
    if k < 1:
        raise InvalidParameterError("knn strategy requires k >= 1")
    tree_kd = cKDTree(pts)
    while k < n - 1:
        cand = knn_graph(pts, k, tree_kd)
        t = kruskal_mst(cand)
        if t.is_spanning and _knn_tree_is_exact(pts, tree_kd, cand, t):
            return t
        k *= 2
    return kruskal_mst(complete_graph(pts))


def mst_weight(c: Configuration | np.ndarray) -> float:
    """Total Euclidean MST weight ``M(c)``."""
    return euclidean_mst(c).total_weight


def minimax_value(t: SpanningTree, u: int, v: int) -> float:
    """Maximum edge weight on the tree path from ``u`` to ``v``."""
    if u == v:
        return 0.0
    return float(t.path_max_index.query([u], [v])[0])


def max_degree(t: SpanningTree) -> int:
    """Largest vertex degree in the tree."""
    if t.edge_count == 0:
        return 0
    return int(t.degrees().max())
