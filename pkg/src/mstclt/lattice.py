"""Nearest-neighbour lattice boxes ``[-n, n]^d`` with i.i.d. edge weights."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from ._random import make_rng
from .errors import InvalidParameterError
from .geometry import Box
from .mst import WeightedGraph

_HALF_ULP = 2.0 ** -54


@dataclass(frozen=True)
class WeightLaw:
    """Edge-weight distribution, sampled by inverse-CDF from uniforms.

    name: ``uniform01``, ``exponential`` (``rate``), ``two_point`` (weight
    ``b`` with probability ``q``, else ``a``) or ``table`` (``values`` with
    ``probs``).
    """

    name: str
    params: tuple = ()

    def __post_init__(self):
        p = tuple(float(x) if not isinstance(x, tuple) else x for x in self.params)
        object.__setattr__(self, "params", p)
        if self.name == "uniform01":
            if p:
                raise InvalidParameterError("uniform01 takes no parameters")
        elif self.name == "exponential":
            if len(p) != 1 or not (math.isfinite(p[0]) and p[0] > 0):
                raise InvalidParameterError("exponential needs a finite rate > 0")
        elif self.name == "two_point":
            if len(p) != 3:
                raise InvalidParameterError("two_point needs (a, b, q)")
            a, b, q = p
            if not (math.isfinite(a) and math.isfinite(b) and 0 <= a <= b and 0 <= q <= 1):
                raise InvalidParameterError("two_point needs 0 <= a <= b finite and q in [0, 1]")
        elif self.name == "table":
            if len(p) != 2:
                raise InvalidParameterError("table needs (values, probs)")
            vals, probs = np.asarray(p[0], float), np.asarray(p[1], float)
            if (vals.size == 0 or vals.size != probs.size or np.any(vals < 0)
                    or not np.all(np.isfinite(vals)) or np.any(probs < 0)
                    or abs(probs.sum() - 1.0) > 1e-9 or np.any(np.diff(vals) <= 0)):
                raise InvalidParameterError("table needs increasing values >= 0 and probs summing to 1")
        else:
            raise InvalidParameterError(f"unknown weight law {self.name!r}")

    @classmethod
    def uniform01(cls) -> "WeightLaw":
        return cls("uniform01")

    @classmethod
    def exponential(cls, rate: float) -> "WeightLaw":
        return cls("exponential", (rate,))

    @classmethod
    def two_point(cls, a: float, b: float, q: float) -> "WeightLaw":
        return cls("two_point", (a, b, q))

    @classmethod
    def table(cls, values, probs) -> "WeightLaw":
        return cls("table", (tuple(float(x) for x in values), tuple(float(x) for x in probs)))

    @classmethod
    def from_dict(cls, spec: dict) -> "WeightLaw":
        spec = dict(spec)
        name = spec.pop("name", None)
        try:
            if name == "uniform01":
                law = cls.uniform01()
            elif name == "exponential":
                law = cls.exponential(spec.pop("rate"))
            elif name == "two_point":
                law = cls.two_point(spec.pop("a"), spec.pop("b"), spec.pop("q"))
            elif name == "table":
                law = cls.table(spec.pop("values"), spec.pop("probs"))
            else:
                raise InvalidParameterError(f"unknown weight law {name!r}")
        except KeyError as exc:
            raise InvalidParameterError(f"weight law {name!r} missing parameter {exc}") from None
        if spec:
            raise InvalidParameterError(f"unknown weight law keys: {sorted(spec)}")
        return law

    def to_dict(self) -> dict:
        if self.name == "exponential":
            return {"name": self.name, "rate": self.params[0]}
        if self.name == "two_point":
            a, b, q = self.params
            return {"name": self.name, "a": a, "b": b, "q": q}
        if self.name == "table":
            return {"name": self.name, "values": list(self.params[0]), "probs": list(self.params[1])}
        return {"name": self.name}

    def quantile(self, u):
        """Generalized inverse CDF ``inf{x : F(x) >= u}``."""
        u = np.asarray(u, dtype=float)
        if self.name == "uniform01":
            return u.copy()
        if self.name == "exponential":
            with np.errstate(divide="ignore"):
                return -np.log1p(-u) / self.params[0]
        if self.name == "two_point":
            a, b, q = self.params
            return np.where(u <= 1.0 - q, a, b)
        vals, probs = np.asarray(self.params[0]), np.asarray(self.params[1])
        cum = np.cumsum(probs)
        cum[-1] = 1.0
        return vals[np.minimum(np.searchsorted(cum, u, side="left"), vals.size - 1)]

    def threshold(self, p: float) -> float:
        """Weight cut-off for level ``p``: an edge is open iff its weight <= this."""
        if not 0 <= p <= 1:
            raise InvalidParameterError(f"p must be in [0, 1], got {p}")
        if p == 0:
            return -math.inf
        return float(self.quantile(p))

    @property
    def is_degenerate(self) -> bool:
        if self.name == "two_point":
            a, b, q = self.params
            return a == b or q in (0.0, 1.0)
        if self.name == "table":
            return sum(1 for x in self.params[1] if x > 0) <= 1
        return False


def draw_uniforms(seed: int, size, *keys: int) -> np.ndarray:
    """Uniforms strictly inside (0, 1) from the ``(seed, *keys)`` stream."""
    return make_rng(seed, *keys).random(size) + _HALF_ULP


@lru_cache(maxsize=64)
def lattice_structure(n: int, d: int):
    """Vertex coordinates and the ``(u, v)``-sorted nearest-neighbour edge list of ``[-n, n]^d``."""
    side = 2 * n + 1
    grids = np.meshgrid(*[np.arange(-n, n + 1)] * d, indexing="ij")
    coords = np.stack([g.reshape(-1) for g in grids], axis=1).astype(np.int64)
    idx = np.arange(side ** d).reshape((side,) * d)
    us, vs = [], []
    for axis in range(d):
        lo = [slice(None)] * d
        hi = [slice(None)] * d
        lo[axis] = slice(0, side - 1)
        hi[axis] = slice(1, side)
        us.append(idx[tuple(lo)].reshape(-1))
        vs.append(idx[tuple(hi)].reshape(-1))
    u = np.concatenate(us)
    v = np.concatenate(vs)
    order = np.lexsort((v, u))
    u, v = u[order], v[order]
    for a in (coords, u, v):
        a.setflags(write=False)
    return coords, u, v


@dataclass(frozen=True, eq=False)
class LatticeBox:
    """The box ``[-n, n]^d`` of ``Z^d`` with one weight per nearest-neighbour edge.

    ``uniforms`` holds ``F(X_e)`` for every edge (the coupling used for
    open/closed thresholds); ``graph.w`` holds the weights themselves.
    """

    n: int
    d: int
    law: WeightLaw
    uniforms: np.ndarray
    graph: WeightedGraph = field(repr=False)

    @property
    def coords(self) -> np.ndarray:
        return self.graph.labels

    @property
    def weights(self) -> np.ndarray:
        return self.graph.w

    @property
    def vertex_count(self) -> int:
        return self.graph.vertex_count

    @property
    def edge_count(self) -> int:
        return self.graph.edge_count

    def vertex_index(self, x) -> int:
        x = np.asarray(x, dtype=np.int64).reshape(-1)
        if x.size != self.d or np.any(np.abs(x) > self.n):
            raise InvalidParameterError(f"vertex {x.tolist()} is outside [-{self.n}, {self.n}]^{self.d}")
        return int(np.ravel_multi_index(tuple(x + self.n), (2 * self.n + 1,) * self.d))

    def edge_index(self, x, y) -> int:
        return self.graph.edge_index(self.vertex_index(x), self.vertex_index(y))

    def with_uniforms(self, uniforms) -> "LatticeBox":
        return _assemble(self.n, self.d, self.law, np.asarray(uniforms, dtype=float))

    def redraw_edge(self, e: int, seed: int) -> "LatticeBox":
        """Fresh independent draw for edge ``e`` only."""
        uni = np.array(self.uniforms, copy=True)
        uni[e] = draw_uniforms(seed, 1, 1, e)[0]
        return self.with_uniforms(uni)

    def vertices_in(self, box: Box) -> np.ndarray:
        return box.contains(self.coords)

    def subgraph(self, box: Box) -> tuple[WeightedGraph, np.ndarray]:
        """Induced weighted subgraph on the vertices inside ``box``.

        Returns the graph and the original vertex ids of its vertices.
        """
        keep = self.vertices_in(box)
        ids = np.flatnonzero(keep)
        remap = np.full(self.vertex_count, -1, np.int64)
        remap[ids] = np.arange(ids.size)
        g = self.graph
        em = keep[g.u] & keep[g.v]
        sub = WeightedGraph(ids.size, remap[g.u[em]], remap[g.v[em]], g.w[em], self.coords[ids], validate=False)
        return sub, ids


def _assemble(n: int, d: int, law: WeightLaw, uniforms: np.ndarray) -> LatticeBox:
    coords, u, v = lattice_structure(n, d)
    w = law.quantile(uniforms)
    g = WeightedGraph(coords.shape[0], u, v, w, labels=coords, validate=False)
    uni = np.array(uniforms, copy=True)
    uni.setflags(write=False)
    return LatticeBox(n, d, law, uni, g)


def build_lattice_box(n: int, d: int, weight_law: WeightLaw | None = None, seed: int = 0) -> LatticeBox:
    """Lattice box with i.i.d. weights drawn from ``weight_law`` (default uniform on [0, 1])."""
    if n < 1 or d < 2:
        raise InvalidParameterError("need n >= 1 and d >= 2")
    law = weight_law if weight_law is not None else WeightLaw.uniform01()
    _, u, _ = lattice_structure(n, d)
    return _assemble(n, d, law, draw_uniforms(seed, u.size))


def lattice_weight_matrix(n: int, d: int, law: WeightLaw, seeds) -> np.ndarray:
    """One row of edge weights per seed, identical to ``build_lattice_box(n, d, law, seed).weights``."""
    _, u, _ = lattice_structure(n, d)
    out = np.empty((len(seeds), u.size))
    for i, s in enumerate(seeds):
        out[i] = law.quantile(draw_uniforms(s, u.size))
    return out
