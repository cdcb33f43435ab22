"""Points, L-infinity boxes, Euclidean distances and Poisson sampling.

Boxes follow the convention ``B(x, r) = x + [-r, r]^d`` (closed). All
distances are Euclidean. A configuration is an immutable ``(N, d)`` array of
distinct points together with the box they were drawn in.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from ._random import make_rng
from .errors import InvalidParameterError

MAX_POINTS = 2**31


def _as_points(p, d: int | None = None) -> np.ndarray:
    arr = np.asarray(p, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if d is not None and arr.shape[-1] != d:
        raise InvalidParameterError(f"expected dimension {d}, got {arr.shape[-1]}")
    return arr


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Box:
    """Closed cube ``center + [-half_width, half_width]^d``."""

    center: np.ndarray
    half_width: float

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(-1)
        if c.size < 1 or not np.all(np.isfinite(c)):
            raise InvalidParameterError("box center must be a finite vector")
        hw = float(self.half_width)
        if not (hw > 0 and math.isfinite(hw)):
            raise InvalidParameterError(f"half_width must be positive, got {self.half_width}")
        object.__setattr__(self, "center", _readonly(c))
        object.__setattr__(self, "half_width", hw)

    @classmethod
    def centered(cls, half_width: float, d: int) -> "Box":
        """``B(half_width)`` around the origin in ``d`` dimensions."""
        return cls(np.zeros(d), half_width)

    def __eq__(self, other):
        if not isinstance(other, Box):
            return NotImplemented
        return self.half_width == other.half_width and np.array_equal(self.center, other.center)

    def __hash__(self):
        return hash((self.half_width, tuple(self.center.tolist())))

    def __repr__(self):
        return f"Box(center={self.center.tolist()}, half_width={self.half_width})"

    @property
    def dimension(self) -> int:
        return self.center.size

    @property
    def lo(self) -> np.ndarray:
        return self.center - self.half_width

    @property
    def hi(self) -> np.ndarray:
        return self.center + self.half_width

    @property
    def volume(self) -> float:
        return (2.0 * self.half_width) ** self.dimension

    def contains(self, points) -> np.ndarray:
        """Vectorized closed-box membership."""
        pts = _as_points(points, self.dimension)
        return np.all(np.abs(pts - self.center) <= self.half_width, axis=1)

    def contains_box(self, other: "Box") -> bool:
        return bool(np.all(other.lo >= self.lo) and np.all(other.hi <= self.hi))

    def distance(self, points) -> np.ndarray:
        """Euclidean distance from each point to the box (0 inside)."""
        pts = _as_points(points, self.dimension)
        gap = np.maximum(np.abs(pts - self.center) - self.half_width, 0.0)
        return np.sqrt(np.sum(gap * gap, axis=1))

    def boundary_distance(self, points) -> np.ndarray:
        """Euclidean distance to the box surface, for any point."""
        pts = _as_points(points, self.dimension)
        linf = np.max(np.abs(pts - self.center), axis=1)
        inside = linf <= self.half_width
        return np.where(inside, self.half_width - linf, self.distance(pts))

    def in_inner_shell(self, points, r: float) -> np.ndarray:
        """Membership in ``A_(r)``: inside the box and within ``r`` of its surface."""
        pts = _as_points(points, self.dimension)
        linf = np.max(np.abs(pts - self.center), axis=1)
        return (linf <= self.half_width) & (self.half_width - linf <= r)


@dataclass(frozen=True, eq=False)
class Configuration:
    """A finite set of distinct points lying in ``domain``."""

    points: np.ndarray
    domain: Box
    _checked: bool = field(default=False, repr=False, compare=False)

    def __post_init__(self):
        d = self.domain.dimension
        pts = np.asarray(self.points, dtype=float)
        if pts.size == 0:
            pts = np.empty((0, d))
        pts = pts.reshape(-1, d) if pts.ndim == 1 else pts
        if pts.ndim != 2 or pts.shape[1] != d:
            raise InvalidParameterError(f"points must have shape (N, {d})")
        if not self._checked:
            if not np.all(np.isfinite(pts)):
                raise InvalidParameterError("point coordinates must be finite")
            if len(pts) and not np.all(self.domain.contains(pts)):
                raise InvalidParameterError("every point must lie in the domain")
            if len(np.unique(pts, axis=0)) != len(pts):
                raise InvalidParameterError("configuration contains duplicate points")
        object.__setattr__(self, "points", _readonly(pts))
        object.__setattr__(self, "_checked", True)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def dimension(self) -> int:
        return self.domain.dimension

    def __eq__(self, other):
        if not isinstance(other, Configuration):
            return NotImplemented
        return self.domain == other.domain and np.array_equal(self.points, other.points)

    __hash__ = None

    def restrict(self, box: Box) -> "Configuration":
        """Points inside ``box``; the result lives in ``box``."""
        keep = box.contains(self.points) if len(self) else np.zeros(0, bool)
        return Configuration(self.points[keep], box, _checked=True)

    def without(self, box: Box) -> "Configuration":
        """Points outside the closed ``box``, same domain."""
        keep = ~box.contains(self.points) if len(self) else np.zeros(0, bool)
        return Configuration(self.points[keep], self.domain, _checked=True)

    def replace_block(self, block: Box, replacement: "Configuration | np.ndarray") -> "Configuration":
        """Swap the points inside ``block`` for ``replacement``."""
        new = replacement.points if isinstance(replacement, Configuration) else _as_points(replacement, self.dimension)
        if len(new) and not np.all(block.contains(new)):
            raise InvalidParameterError("replacement points must lie in the block")
        kept = self.without(block).points
        return Configuration(np.vstack([kept, new]), self.domain)

    def to_text(self) -> str:
        """Header ``d count half_width c_1..c_d``, then one row per point."""
        buf = io.StringIO()
        head = [str(self.dimension), str(len(self)), repr(self.domain.half_width)]
        head += [repr(float(c)) for c in self.domain.center]
        buf.write(" ".join(head) + "\n")
        for row in self.points:
            buf.write(" ".join(f"{x:.17g}" for x in row) + "\n")
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "Configuration":
        lines = text.strip().splitlines()
        head = lines[0].split()
        d, count = int(head[0]), int(head[1])
        hw = float(head[2])
        center = [float(x) for x in head[3:3 + d]]
        rows = [[float(x) for x in ln.split()] for ln in lines[1:1 + count]]
        pts = np.array(rows, dtype=float).reshape(count, d)
        return cls(pts, Box(center, hw))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path: str | Path) -> "Configuration":
        return cls.from_text(Path(path).read_text())


def sample_poisson(domain: Box, intensity: float, seed: int) -> Configuration:
    """Homogeneous Poisson process of rate ``intensity`` restricted to ``domain``.

    Output depends only on ``(domain, intensity, seed)``.
    """
    lam = float(intensity)
    if not math.isfinite(lam) or lam < 0:
        raise InvalidParameterError(f"intensity must be finite and >= 0, got {intensity}")
    mean = lam * domain.volume
    if mean > MAX_POINTS:
        raise InvalidParameterError(f"expected point count {mean:.3g} exceeds 2^31")
    rng = make_rng(seed)
    count = int(rng.poisson(mean)) if mean > 0 else 0
    d = domain.dimension
    pts = domain.lo + 2.0 * domain.half_width * rng.random((count, d))
    # exact duplicates have probability zero but would break the invariants
    while count and len(np.unique(pts, axis=0)) != count:
        _, first = np.unique(pts, axis=0, return_index=True)
        dup = np.setdiff1d(np.arange(count), first)
        pts[dup] = domain.lo + 2.0 * domain.half_width * rng.random((len(dup), d))
    return Configuration(pts, domain, _checked=True)


def dist_to_box(p, b: Box) -> float:
    """Euclidean distance from point ``p`` to the closed box ``b``."""
    return float(b.distance(p)[0])


def distance_to_set(points, A: Union[Box, Configuration]) -> np.ndarray:
    """Euclidean distance from each of ``points`` to a box or a finite point set."""
    if isinstance(A, Box):
        return A.distance(points)
    pts = _as_points(points, A.dimension)
    if len(A) == 0:
        return np.full(len(pts), np.inf)
    from scipy.spatial import cKDTree

    dist, _ = cKDTree(A.points).query(pts, k=1)
    return np.asarray(dist, dtype=float)


def in_dilation(p, A: Union[Box, Configuration], r: float) -> bool:
    """True iff ``d(p, A) <= r``, i.e. ``p`` lies in the closed dilation ``A^(r)``."""
    if r < 0:
        raise InvalidParameterError("r must be >= 0")
    return bool(distance_to_set(p, A)[0] <= r)


def in_inner_shell(p, A: Box, r: float) -> bool:
    """True iff ``p`` is in ``A`` and within ``r`` of its boundary."""
    if r < 0:
        raise InvalidParameterError("r must be >= 0")
    return bool(A.in_inner_shell(p, r)[0])
