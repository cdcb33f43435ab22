"""Continuum and lattice percolation: cluster labeling, arm events, walls.

Continuum clusters at level ``r`` join points at Euclidean distance at most
``2r`` (overlapping closed balls of radius ``r``). Lattice clusters at level
``p`` use the edges whose weight is at most the law's ``p``-quantile, which
couples all levels on one weight sample.
"""
from __future__ import annotations

import csv
import enum
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from numba import njit

from . import _kernels as K
from ._random import derive_seed
from .errors import InvalidParameterError
from .geometry import Box, Configuration, sample_poisson
from .lattice import LatticeBox, WeightLaw, draw_uniforms, lattice_structure

WILSON_Z = 1.959963984540054


@dataclass(frozen=True)
class InnerSet:
    """A box, optionally dilated by ``dilation`` and united with closed balls.

    Covers the inner sets used by arm events: ``B(a)``, ``B(a)^(t)`` and
    ``B(a)^(t) ∪ S(z1, r) ∪ S(z2, r)``.
    """

    box: Box
    dilation: float = 0.0
    balls: tuple = ()

    def distance(self, points) -> np.ndarray:
        d = np.maximum(self.box.distance(points) - self.dilation, 0.0)
        pts = np.asarray(points, dtype=float).reshape(-1, self.box.dimension)
        for center, radius in self.balls:
            db = np.sqrt(np.sum((pts - np.asarray(center, float)) ** 2, axis=1)) - radius
            d = np.minimum(d, np.maximum(db, 0.0))
        return d

    def contains(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, self.box.dimension)
        inside = self.box.distance(pts) <= self.dilation
        for center, radius in self.balls:
            inside |= np.sum((pts - np.asarray(center, float)) ** 2, axis=1) <= radius * radius
        return inside


SetLike = Union[Box, InnerSet]


@dataclass(frozen=True)
class Region:
    """Points inside every box of ``inside`` and outside every set of ``outside``."""

    inside: tuple = ()
    outside: tuple = ()

    def mask(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        m = np.ones(len(pts), bool)
        for b in self.inside:
            m &= b.contains(pts)
        for s in self.outside:
            m &= ~s.contains(pts)
        return m


@dataclass(frozen=True, eq=False)
class ClusterLabeling:
    """``labels[i]`` is the cluster id of item ``i``, or -1 if ``i`` is outside the region."""

    labels: np.ndarray
    kind: str
    parameter: float

    @property
    def n_clusters(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size and self.labels.max() >= 0 else 0

    def clusters(self) -> list[np.ndarray]:
        order = np.argsort(self.labels, kind="stable")
        lab = self.labels[order]
        start = np.searchsorted(lab, 0)
        bounds = np.flatnonzero(np.diff(lab[start:])) + 1
        return [g for g in np.split(order[start:], bounds) if g.size]

    def partition(self) -> set[frozenset[int]]:
        return {frozenset(g.tolist()) for g in self.clusters()}


def _cluster_points(pts: np.ndarray, r: float) -> np.ndarray:
    if len(pts) == 0:
        return np.empty(0, np.int64)
    a, b = K.grid_pairs(np.ascontiguousarray(pts, dtype=float), 2.0 * r)
    return K.labels_from_pairs(len(pts), a, b, np.ones(len(pts), np.bool_))


def continuum_clusters(c: Configuration | np.ndarray, region: Region | None, r: float) -> ClusterLabeling:
    """``r``-clusters of the points lying in ``region`` (all points if ``None``)."""
    if not r > 0:
        raise InvalidParameterError("r must be > 0")
    pts = c.points if isinstance(c, Configuration) else np.asarray(c, dtype=float)
    mask = region.mask(pts) if region is not None else np.ones(len(pts), bool)
    labels = np.full(len(pts), -1, np.int64)
    labels[mask] = _cluster_points(pts[mask], r)
    return ClusterLabeling(labels, "continuum", float(r))


@dataclass(frozen=True)
class ArmQuery:
    """``inner --k--> outer`` at level ``r``.

    ``variant="touch"`` requires each cluster to meet ``inner^(r)``,
    ``variant="reach"`` only ``inner^(2r)``. Every cluster must also meet the
    inner shell ``outer_(2r)``. Clusters are formed from points of
    ``outer \\ inner`` (intersected with ``ambient`` when given).
    """

    inner: SetLike
    outer: Box
    r: float
    k: int = 2
    variant: str = "touch"
    ambient: Box | None = None

    def __post_init__(self):
        if self.k < 1:
            raise InvalidParameterError("k must be >= 1")
        if not self.r > 0:
            raise InvalidParameterError("r must be > 0")
        if self.variant not in ("touch", "reach"):
            raise InvalidParameterError(f"unknown variant {self.variant!r}")
        inner_box = self.inner if isinstance(self.inner, Box) else self.inner.box
        if not self.outer.contains_box(inner_box):
            raise InvalidParameterError("inner set must lie inside the outer box")


def arm_count(c: Configuration | np.ndarray, q: ArmQuery) -> int:
    """Number of disjoint clusters realizing the arm event ``q``."""
    pts = c.points if isinstance(c, Configuration) else np.asarray(c, dtype=float)
    if len(pts) == 0:
        return 0
    inside = (q.ambient,) if q.ambient is not None else ()
    region = Region((q.outer,) + inside, (q.inner,))
    mask = region.mask(pts)
    sub = pts[mask]
    if len(sub) == 0:
        return 0
    labels = _cluster_points(sub, q.r)
    reach = q.r if q.variant == "touch" else 2.0 * q.r
    near_inner = q.inner.distance(sub) <= reach
    near_outer = q.outer.in_inner_shell(sub, 2.0 * q.r)
    nl = int(labels.max()) + 1
    hit_in = np.zeros(nl, bool)
    hit_out = np.zeros(nl, bool)
    hit_in[labels[near_inner]] = True
    hit_out[labels[near_outer]] = True
    return int(np.sum(hit_in & hit_out))


def arm_event(c: Configuration | np.ndarray, q: ArmQuery) -> bool:
    """True iff at least ``q.k`` disjoint ``r``-clusters realize the arm event."""
    return arm_count(c, q) >= q.k


# ---------------------------------------------------------------- lattice


@dataclass(frozen=True)
class LatticeRegion:
    """Subgraph of a lattice box.

    Keeps the edges with both endpoints in ``within`` and ``ambient`` (when
    set), drops the edges with both endpoints in ``minus_box`` (the ``Q2 - Q1``
    construction, whose vertex set is then the endpoints of kept edges) and
    drops the edge indices in ``minus_edges``.
    """

    within: Box | None = None
    minus_box: Box | None = None
    minus_edges: tuple = ()
    ambient: Box | None = None

    def masks(self, b: LatticeBox) -> tuple[np.ndarray, np.ndarray]:
        coords = b.coords
        vmask = np.ones(b.vertex_count, bool)
        for box in (self.within, self.ambient):
            if box is not None:
                vmask &= box.contains(coords)
        g = b.graph
        emask = vmask[g.u] & vmask[g.v]
        if self.minus_box is not None:
            inq = self.minus_box.contains(coords)
            emask &= ~(inq[g.u] & inq[g.v])
            vmask = np.zeros(b.vertex_count, bool)
            vmask[g.u[emask]] = True
            vmask[g.v[emask]] = True
        if self.minus_edges:
            emask[list(self.minus_edges)] = False
        return vmask, emask


def open_edges(b: LatticeBox, p: float) -> np.ndarray:
    """Edges open at level ``p``: weight at most the law's ``p``-quantile."""
    return b.weights <= b.law.threshold(p)


def lattice_clusters(b: LatticeBox, p: float, region: LatticeRegion | None = None,
                     open_predicate=None) -> ClusterLabeling:
    """``p``-clusters of the open subgraph restricted to ``region``.

    ``open_predicate(weights, p)`` overrides the default quantile threshold.
    """
    region = region if region is not None else LatticeRegion()
    vmask, emask = region.masks(b)
    is_open = open_predicate(b.weights, p) if open_predicate is not None else open_edges(b, p)
    sel = emask & np.asarray(is_open, bool)
    labels = K.labels_from_pairs(b.vertex_count, b.graph.u[sel], b.graph.v[sel], vmask)
    return ClusterLabeling(labels, "lattice", float(p))


def lattice_boundary(coords: np.ndarray, box: Box) -> np.ndarray:
    """Vertices of the lattice cube ``box`` that have a neighbour outside it."""
    linf = np.max(np.abs(coords - box.center), axis=1)
    return linf == box.half_width


def _check_lattice_box(b: LatticeBox, box: Box):
    if box.dimension != b.d or not Box.centered(b.n, b.d).contains_box(box):
        raise InvalidParameterError(f"{box!r} is not inside the lattice box [-{b.n}, {b.n}]^{b.d}")


def lattice_two_arm(b: LatticeBox, site, outer: Box, p: float, ambient: Box | None = None,
                    remove_edge: bool = True, k: int = 2) -> bool:
    """Two-arm event at level ``p`` from an edge or from a small cube.

    ``site`` is either a pair of adjacent vertices ``(x, y)`` or a ``Box``
    (typically ``B(x, 1)``). For an edge: the clusters of ``x`` and ``y`` in
    ``outer`` (minus the edge when ``remove_edge``) are different and both
    meet the boundary of ``outer``. For a cube ``Q1``: at least ``k`` disjoint
    clusters of ``outer - Q1`` meet both boundaries. ``ambient`` restricts
    everything to ``outer ∩ ambient`` ("in Q3").
    """
    _check_lattice_box(b, outer)
    coords = b.coords
    on_outer = lattice_boundary(coords, outer)
    if isinstance(site, Box):
        if not outer.contains_box(site):
            raise InvalidParameterError("site must lie inside the outer box")
        region = LatticeRegion(within=outer, minus_box=site, ambient=ambient)
        lab = lattice_clusters(b, p, region).labels
        on_inner = lattice_boundary(coords, site)
        nl = int(lab.max()) + 1 if lab.size and lab.max() >= 0 else 0
        if nl == 0:
            return False
        hit_in = np.zeros(nl, bool)
        hit_out = np.zeros(nl, bool)
        hit_in[lab[on_inner & (lab >= 0)]] = True
        hit_out[lab[on_outer & (lab >= 0)]] = True
        return int(np.sum(hit_in & hit_out)) >= k
    x, y = site
    if not (outer.contains(np.asarray(x, float))[0] and outer.contains(np.asarray(y, float))[0]):
        raise InvalidParameterError("site must lie inside the outer box")
    e = b.edge_index(x, y)
    region = LatticeRegion(within=outer, minus_edges=(e,) if remove_edge else (), ambient=ambient)
    lab = lattice_clusters(b, p, region).labels
    lx, ly = lab[b.vertex_index(x)], lab[b.vertex_index(y)]
    if lx < 0 or ly < 0 or lx == ly:
        return False
    return bool(np.any(on_outer & (lab == lx)) and np.any(on_outer & (lab == ly)))


# ------------------------------------------------------- trifurcation, walls


def is_trifurcation_box(c: Configuration | np.ndarray, K_box: Box, M_box: Box, r: float) -> bool:
    """Whether ``K_box`` is a trifurcation box in ``M_box`` at level ``r``.

    Some ``r``-cluster of the points in ``M_box`` meets ``K_box`` and its
    points outside ``K_box`` split into at least three ``r``-clusters of
    ``M_box - K_box`` that each reach the inner shell ``M_(2r)``.
    """
    if not M_box.contains_box(K_box):
        raise InvalidParameterError("K must lie inside M")
    pts = c.points if isinstance(c, Configuration) else np.asarray(c, dtype=float)
    pts = pts[M_box.contains(pts)] if len(pts) else pts
    if len(pts) == 0:
        return False
    labels = _cluster_points(pts, r)
    in_k = K_box.contains(pts)
    shell = M_box.in_inner_shell(pts, 2.0 * r)
    for lab in np.unique(labels[in_k]):
        members = (labels == lab) & ~in_k
        if members.sum() < 3:
            continue
        sub_lab = _cluster_points(pts[members], r)
        reaching = np.unique(sub_lab[shell[members]])
        if reaching.size >= 3:
            return True
    return False


class WallStatus(enum.Enum):
    PRESENT = "true"
    ABSENT = "false"
    INCONCLUSIVE = "inconclusive"


def _surface_samples(box: Box, spacing: float, clip: Box | None = None) -> np.ndarray:
    """Grid on the surface of ``box`` (clipped to ``clip``) with the given spacing per face axis."""
    d = box.dimension
    c, h = box.center, box.half_width
    lo_c = clip.lo if clip is not None else np.full(d, -np.inf)
    hi_c = clip.hi if clip is not None else np.full(d, np.inf)
    out = []
    for axis in range(d):
        for sign in (-1.0, 1.0):
            plane = c[axis] + sign * h
            if not (lo_c[axis] <= plane <= hi_c[axis]):
                continue
            axes = []
            empty = False
            for j in range(d):
                if j == axis:
                    axes.append(np.array([plane]))
                    continue
                lo, hi = max(c[j] - h, lo_c[j]), min(c[j] + h, hi_c[j])
                if lo > hi:
                    empty = True
                    break
                m = int(math.ceil((hi - lo) / spacing)) + 1
                axes.append(np.linspace(lo, hi, m))
            if empty:
                continue
            grid = np.meshgrid(*axes, indexing="ij")
            out.append(np.stack([g.reshape(-1) for g in grid], axis=1))
    if not out:
        return np.empty((0, d))
    return np.unique(np.vstack(out), axis=0)


@njit(cache=True, nogil=True)
def _wall_scan(s1, s2, cand, mesh):
    # 0 present, 1 absent, 2 inconclusive
    status = 0
    d = s1.shape[1]
    for i in range(s1.shape[0]):
        for j in range(s2.shape[0]):
            dd = 0.0
            for k in range(d):
                t = s1[i, k] - s2[j, k]
                dd += t * t
            dist = np.sqrt(dd)
            rt = 0.75 * dist - 2.0 * mesh
            rf = 0.75 * dist + 2.0 * mesh
            rt2 = rt * rt if rt > 0 else -1.0
            rf2 = rf * rf
            found_t = False
            found_f = False
            for z in range(cand.shape[0]):
                d1 = 0.0
                d2 = 0.0
                for k in range(d):
                    a = cand[z, k] - s1[i, k]
                    b = cand[z, k] - s2[j, k]
                    d1 += a * a
                    d2 += b * b
                if d1 <= rf2 and d2 <= rf2:
                    found_f = True
                    if d1 <= rt2 and d2 <= rt2:
                        found_t = True
                        break
            if not found_f:
                return 1
            if not found_t:
                status = 2
    return status


def has_wall(c: Configuration | np.ndarray, x, a: float, b: float, K_box: Box, mesh: float) -> WallStatus:
    """Decide whether the points contain a ``K``-wall around ``B(x, a)`` in ``B(x, b)``.

    Both boundaries are sampled with spacing at most ``mesh``. ``PRESENT`` is
    reported only if every sampled lens (radius shrunk by ``2 mesh``) holds a
    point, which implies the wall for every continuum pair; ``ABSENT`` only if
    some sampled pair fails with the radius enlarged by ``2 mesh``, which is a
    genuine counterexample. Anything else is ``INCONCLUSIVE``.
    """
    if not (b > a > 0) or not mesh > 0:
        raise InvalidParameterError("need b > a > 0 and mesh > 0")
    x = np.asarray(x, dtype=float).reshape(-1)
    inner, outer = Box(x, a), Box(x, b)
    if not K_box.contains_box(inner):
        raise InvalidParameterError("K must contain B(x, a)")
    d = x.size
    spacing = mesh * min(1.0, 1.6 / math.sqrt(d - 1)) if d > 1 else mesh
    s1 = _surface_samples(inner, spacing)
    s2 = _surface_samples(outer, spacing, clip=K_box)
    if len(s2) == 0:
        raise InvalidParameterError("K must meet the boundary of B(x, b)")
    pts = c.points if isinstance(c, Configuration) else np.asarray(c, dtype=float).reshape(-1, d)
    keep = K_box.contains(pts) & outer.contains(pts) & ~inner.contains(pts) if len(pts) else np.zeros(0, bool)
    cand = np.ascontiguousarray(pts[keep], dtype=float).reshape(-1, d)
    code = _wall_scan(s1, s2, cand, float(mesh))
    return (WallStatus.PRESENT, WallStatus.ABSENT, WallStatus.INCONCLUSIVE)[code]


# ------------------------------------------------------------- estimation


@dataclass(frozen=True)
class ArmStudy:
    """Template for arm-probability estimation over an ``(n, param)`` grid.

    Continuum (``model="continuum"``): Poisson points of rate ``intensity`` in
    ``B(n)``, query ``B(inner) --k--> B(n)`` at level ``r = param``.
    Lattice (``model="lattice"``): weights from ``law`` on ``[-n, n]^d``, the
    two-arm event at level ``p = param`` from the edge ``{0, e_1}``
    (``site="edge"``) or from ``B(0, 1)`` (``site="box"``); ``k = 1`` with
    ``site="box"`` is the one-arm crossing event.
    """

    model: str
    sizes: tuple
    params: tuple
    d: int = 2
    k: int = 2
    variant: str = "reach"
    inner: float = 1.0
    intensity: float = 1.0
    site: str = "edge"
    law: WeightLaw = field(default_factory=WeightLaw.uniform01)

    def __post_init__(self):
        if self.model not in ("continuum", "lattice"):
            raise InvalidParameterError(f"unknown model {self.model!r}")
        if not self.sizes or not self.params:
            raise InvalidParameterError("sizes and params must be non-empty")
        if self.site not in ("edge", "box"):
            raise InvalidParameterError(f"unknown site {self.site!r}")
        if self.model == "lattice" and self.site == "edge" and self.k != 2:
            raise InvalidParameterError("edge sites only support k = 2")


@dataclass(frozen=True)
class ArmRow:
    n: float
    param: float
    replicates: int
    successes: int
    phat: float
    ci_lo: float
    ci_hi: float

    @property
    def stderr(self) -> float:
        return math.sqrt(self.phat * (1.0 - self.phat) / self.replicates)


def wilson_interval(successes: int, trials: int, z: float = WILSON_Z) -> tuple[float, float]:
    if trials <= 0:
        return 0.0, 1.0
    ph = successes / trials
    den = 1.0 + z * z / trials
    mid = (ph + z * z / (2 * trials)) / den
    half = z * math.sqrt(ph * (1 - ph) / trials + z * z / (4 * trials * trials)) / den
    return max(0.0, mid - half), min(1.0, mid + half)


def _continuum_replicate(study: ArmStudy, n, seed: int) -> list[bool]:
    domain = Box.centered(n, study.d)
    cfg = sample_poisson(domain, study.intensity, seed)
    inner = Box.centered(study.inner, study.d)
    return [arm_event(cfg, ArmQuery(inner, domain, r, study.k, study.variant)) for r in study.params]


def _lattice_replicate(study: ArmStudy, n, seed: int) -> list[bool]:
    n = int(n)
    d = study.d
    _, u, _ = lattice_structure(n, d)
    from .lattice import _assemble

    b = _assemble(n, d, study.law, draw_uniforms(seed, u.size))
    outer = Box.centered(n, d)
    if study.site == "edge":
        e1 = np.zeros(d, np.int64)
        e1[0] = 1
        site = (np.zeros(d, np.int64), e1)
    else:
        site = Box.centered(1, d)
    return [lattice_two_arm(b, site, outer, p, k=study.k) for p in study.params]


def estimate_arm_probability(study: ArmStudy, replicates: int, seed: int, threads: int = 1) -> list[ArmRow]:
    """Monte Carlo arm probabilities with Wilson 95% intervals, sorted by ``(n, param)``.

    Replicate ``i`` at size index ``j`` uses the seed derived from
    ``(seed, j, i)`` and is shared by every parameter value, so results do
    not depend on ``threads``.
    """
    if replicates < 1:
        raise InvalidParameterError("replicates must be >= 1")
    work = _continuum_replicate if study.model == "continuum" else _lattice_replicate
    rows = []
    for j, n in enumerate(study.sizes):
        seeds = [derive_seed(seed, j, i) for i in range(replicates)]
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                outcomes = list(pool.map(lambda s: work(study, n, s), seeds))
        else:
            outcomes = [work(study, n, s) for s in seeds]
        hits = np.asarray(outcomes, dtype=bool).reshape(replicates, len(study.params)).sum(axis=0)
        for param, s in zip(study.params, hits.tolist()):
            lo, hi = wilson_interval(s, replicates)
            rows.append(ArmRow(float(n), float(param), replicates, int(s), s / replicates, lo, hi))
    rows.sort(key=lambda r: (r.n, r.param))
    return rows


ARM_COLUMNS = ("n", "param", "replicates", "successes", "phat", "ci_lo", "ci_hi")


def arm_rows_to_csv(rows: Sequence[ArmRow]) -> str:
    """CSV with columns ``n,param,replicates,successes,phat,ci_lo,ci_hi``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ARM_COLUMNS)
    for r in rows:
        w.writerow([f"{r.n:.10f}", f"{r.param:.10f}", r.replicates, r.successes,
                    f"{r.phat:.10f}", f"{r.ci_lo:.10f}", f"{r.ci_hi:.10f}"])
    return buf.getvalue()
