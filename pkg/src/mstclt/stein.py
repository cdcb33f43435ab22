"""Chatterjee's T statistic, the resulting Wasserstein bound, and distances to N(0, 1)."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import comb, ndtr, ndtri

from . import _kernels as K
from ._random import derive_seed, make_rng
from .errors import DegenerateFunctionalError, InvalidParameterError
from .geometry import Box, sample_poisson
from .lattice import WeightLaw, draw_uniforms, lattice_structure
from .mst import mst_weight

EXACT_MAX_BLOCKS = 12
N_BATCHES = 32
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class ResamplingModel:
    """``f`` of ``n_blocks`` independent blocks with a base draw ``X`` and a fresh draw ``X'``.

    ``evaluate(mask)`` returns ``f(X^A)`` where ``A = {i : mask[i]}`` takes
    blocks from ``X'``. Subclasses implement ``evaluate_batch`` over a 2-D
    boolean array; implementations must not mutate shared state.
    """

    n_blocks: int

    def evaluate_batch(self, masks: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def evaluate(self, mask=None) -> float:
        m = np.zeros(self.n_blocks, bool) if mask is None else np.asarray(mask, bool)
        return float(self.evaluate_batch(m.reshape(1, -1))[0])


class ArrayModel(ResamplingModel):
    """Blocks given as arrays ``x``, ``x_prime`` (block index first); ``f`` maps a block array to a real."""

    def __init__(self, f: Callable[[np.ndarray], float], x, x_prime):
        self.f = f
        self.x = np.asarray(x, dtype=float)
        self.x_prime = np.asarray(x_prime, dtype=float)
        if self.x.shape != self.x_prime.shape or self.x.ndim == 0:
            raise InvalidParameterError("x and x_prime must have the same non-scalar shape")
        self.n_blocks = self.x.shape[0]

    def evaluate_batch(self, masks):
        shape = (-1,) + (1,) * (self.x.ndim - 1)
        return np.array([self.f(np.where(m.reshape(shape), self.x_prime, self.x)) for m in masks], dtype=float)


class LatticeMSTModel(ResamplingModel):
    """MST weight of ``[-n, n]^d`` with one block per edge."""

    def __init__(self, n: int, d: int, law: WeightLaw, base_seed: int, fresh_seed: int):
        _, self.u, self.v = lattice_structure(n, d)
        self.vertex_count = (2 * n + 1) ** d
        self.n_blocks = self.u.size
        self.w = law.quantile(draw_uniforms(base_seed, self.n_blocks))
        self.w_prime = law.quantile(draw_uniforms(fresh_seed, self.n_blocks))

    def evaluate_batch(self, masks):
        W = np.where(np.asarray(masks, bool), self.w_prime, self.w)
        return K.mst_weight_batch(self.vertex_count, self.u, self.v, np.ascontiguousarray(W))


def poisson_blocks(n: float, d: int, k: int | None = None) -> list[Box]:
    """Cells ``2 s j + B(s)`` for ``j`` in ``{-k..k}^d`` with ``s = n / (2k + 1)`` tiling ``B(n)``.

    The default ``k = floor((n - 1) / 2)`` gives ``1 <= s <= 2`` for ``n >= 1``.
    """
    if k is None:
        k = max(int(math.floor((n - 1) / 2)), 0)
    s = n / (2 * k + 1)
    if not 1.0 <= s <= 2.0:
        raise InvalidParameterError(f"block side {2 * s} outside [2, 4] (s = {s})")
    grid = np.stack(np.meshgrid(*[np.arange(-k, k + 1)] * d, indexing="ij"), axis=-1).reshape(-1, d)
    return [Box(2 * s * j, s) for j in grid]


class PoissonBlockModel(ResamplingModel):
    """Euclidean MST weight of a Poisson process on ``B(n)``, one block per cell of :func:`poisson_blocks`."""

    def __init__(self, n: float, d: int, intensity: float, base_seed: int, fresh_seed: int, k: int | None = None):
        self.blocks = poisson_blocks(n, d, k)
        self.n_blocks = len(self.blocks)
        self.d = d
        self.x = [sample_poisson(b, intensity, derive_seed(base_seed, j)).points for j, b in enumerate(self.blocks)]
        self.x_prime = [sample_poisson(b, intensity, derive_seed(fresh_seed, j)).points
                        for j, b in enumerate(self.blocks)]

    def evaluate_batch(self, masks):
        out = np.empty(len(masks))
        for i, m in enumerate(np.asarray(masks, bool)):
            parts = [self.x_prime[j] if m[j] else self.x[j] for j in range(self.n_blocks)]
            out[i] = mst_weight(np.vstack(parts).reshape(-1, self.d))
        return out


def _subset_masks(n: int) -> np.ndarray:
    ids = np.arange(1 << n)
    return ((ids[:, None] >> np.arange(n)) & 1).astype(bool)


def exact_T(model: ResamplingModel) -> tuple[float, np.ndarray]:
    """Exact ``T`` for the model's ``(X, X')`` by enumerating all subsets.

    Returns ``(T, delta)`` with ``delta[j] = f(X) - f(X^{j})``.
    """
    n = model.n_blocks
    if n == 0:
        raise InvalidParameterError("model has no blocks")
    if n > 20:
        raise InvalidParameterError("exact enumeration is limited to 20 blocks")
    vals = np.asarray(model.evaluate_batch(_subset_masks(n)), dtype=float)
    ids = np.arange(1 << n)
    bits = 1 << np.arange(n)
    delta = vals[0] - vals[bits]
    size = np.array([bin(i).count("1") for i in range(1 << n)])
    with np.errstate(divide="ignore"):
        weight = 1.0 / (comb(n, size) * (n - size))
    total = 0.0
    for j in range(n):
        free = (ids & bits[j]) == 0
        a = ids[free]
        dj_a = vals[a] - vals[a | bits[j]]
        total += delta[j] * float(np.sum(weight[a] * dj_a))
    return 0.5 * total, delta


def sample_T(model: ResamplingModel, inner_reps: int, seed) -> np.ndarray:
    """``inner_reps`` unbiased single-draw estimates ``(n/2) Δ_J f(X) Δ_J f(X^A)`` of ``T``.

    ``m`` is uniform on ``{0..n-1}``, ``A`` a uniform ``m``-subset and ``J``
    uniform outside ``A``.
    """
    n = model.n_blocks
    if n == 0:
        raise InvalidParameterError("model has no blocks")
    if inner_reps < 1:
        raise InvalidParameterError("inner_reps must be >= 1")
    rng = make_rng(seed)
    masks = np.zeros((3 * inner_reps + 1, n), bool)
    for r in range(inner_reps):
        m = int(rng.integers(0, n))
        perm = rng.permutation(n)
        a, j = perm[:m], perm[m]
        masks[3 * r + 1, j] = True
        masks[3 * r + 2, a] = True
        masks[3 * r + 3, a] = True
        masks[3 * r + 3, j] = True
    vals = np.asarray(model.evaluate_batch(masks), dtype=float)
    f0 = vals[0]
    fj, fa, faj = vals[1::3], vals[2::3], vals[3::3]
    return 0.5 * n * (f0 - fj) * (fa - faj)


def batch_se(values, statistic=np.mean, n_batches: int = N_BATCHES) -> float:
    """Standard error of ``statistic`` from ``n_batches`` contiguous batches.

    Uses the delete-one-batch jackknife, which reduces to the batch-means
    standard error when ``statistic`` is the mean of equal batches and stays
    stable for ratios such as the bound.
    """
    x = np.asarray(values, dtype=float)
    b = min(n_batches, x.shape[0] // 2)
    if b < 2:
        return math.nan
    chunks = np.array_split(np.arange(x.shape[0]), b)
    loo = np.array([statistic(np.delete(x, idx, axis=0)) for idx in chunks])
    return float(math.sqrt((b - 1) / b * np.sum((loo - loo.mean()) ** 2)))


@dataclass(frozen=True)
class SteinEstimate:
    """Monte Carlo estimate of the Wasserstein bound ``sqrt(Var T) / σ² + n E|Δ_J f|³ / (2 σ³)``.

    ``t_var`` is ``Var(T)`` over outer draws, an upper bound for ``Var(E(T|W))``.
    """

    t_mean: float
    t_var: float
    sigma2_hat: float
    third_moment: float
    bound_value: float
    replicates: int
    se_t_mean: float
    se_t_var: float
    se_sigma2_hat: float
    se_third_moment: float
    se_bound_value: float
    exact: bool
    t_samples: np.ndarray = field(repr=False, compare=False)
    f_values: np.ndarray = field(repr=False, compare=False)

    def identity_gap(self) -> tuple[float, float]:
        """``mean(T) - σ̂²`` with a paired batch-means standard error."""
        f = self.f_values
        N = f.size
        g = self.t_samples - (f - f.mean()) ** 2 * N / (N - 1)
        return float(g.mean()), batch_se(g)

    def to_dict(self) -> dict:
        keys = ("t_mean", "t_var", "sigma2_hat", "third_moment", "bound_value", "replicates",
                "se_t_mean", "se_t_var", "se_sigma2_hat", "se_third_moment", "se_bound_value", "exact")
        out = {k: getattr(self, k) for k in keys}
        out["t_var_is_upper_bound_for"] = "Var(E(T|W))"
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _bound(t_var, sigma2, third):
    return math.sqrt(max(t_var, 0.0)) / sigma2 + third / (2.0 * sigma2 ** 1.5)


def stein_bound(factory: Callable[[int, int], ResamplingModel], outer_reps: int, inner_reps: int,
                seed: int) -> SteinEstimate:
    """Estimate the Wasserstein bound for ``f`` over ``outer_reps`` independent ``(X, X')`` pairs.

    ``factory(base_seed, fresh_seed)`` builds the model for one pair. With
    at most 12 blocks ``T`` and the third-moment term are computed exactly
    per pair; otherwise each uses ``inner_reps`` random draws.
    """
    if outer_reps < 2:
        raise InvalidParameterError("outer_reps must be >= 2")
    if inner_reps < 1:
        raise InvalidParameterError("inner_reps must be >= 1")
    T = np.empty(outer_reps)
    F = np.empty(outer_reps)
    third = np.empty(outer_reps)
    exact = None
    for o in range(outer_reps):
        model = factory(derive_seed(seed, 0, o), derive_seed(seed, 1, o))
        n = model.n_blocks
        if n == 0:
            raise InvalidParameterError("model has no blocks")
        if exact is None:
            exact = n <= EXACT_MAX_BLOCKS
        if exact:
            T[o], delta = exact_T(model)
            F[o] = model.evaluate()
            third[o] = float(np.sum(np.abs(delta) ** 3))
        else:
            T[o] = float(np.mean(sample_T(model, inner_reps, derive_seed(seed, 2, o))))
            rng = make_rng(seed, 3, o)
            js = rng.integers(0, n, size=inner_reps)
            masks = np.zeros((inner_reps + 1, n), bool)
            masks[np.arange(1, inner_reps + 1), js] = True
            vals = model.evaluate_batch(masks)
            F[o] = vals[0]
            third[o] = n * float(np.mean(np.abs(vals[0] - vals[1:]) ** 3))
    sigma2 = float(np.var(F, ddof=1))
    if not sigma2 > 0:
        raise DegenerateFunctionalError("sample variance of f is zero")
    t_var = float(np.var(T, ddof=1))
    third_m = float(np.mean(third))
    bound = _bound(t_var, sigma2, third_m)

    def var1(x):
        return np.var(x, ddof=1)

    packed = np.stack([T, F, third], axis=1)

    def bound_stat(chunk):
        s2 = np.var(chunk[:, 1], ddof=1)
        return _bound(np.var(chunk[:, 0], ddof=1), s2, np.mean(chunk[:, 2])) if s2 > 0 else np.nan

    return SteinEstimate(
        t_mean=float(T.mean()), t_var=t_var, sigma2_hat=sigma2, third_moment=third_m, bound_value=bound,
        replicates=outer_reps, se_t_mean=batch_se(T), se_t_var=batch_se(T, var1),
        se_sigma2_hat=batch_se(F, var1), se_third_moment=batch_se(third), se_bound_value=batch_se(packed, bound_stat),
        exact=bool(exact), t_samples=T, f_values=F)


# ----------------------------------------------------------- distances


def kolmogorov_distance(sample) -> float:
    """``sup_x |F̂(x) - Φ(x)|`` evaluated at both one-sided limits of every jump."""
    x = np.sort(np.asarray(sample, dtype=float).reshape(-1))
    if x.size == 0:
        raise InvalidParameterError("sample must be non-empty")
    N = x.size
    cdf = ndtr(x)
    i = np.arange(1, N + 1)
    return float(max(np.max(i / N - cdf), np.max(cdf - (i - 1) / N)))


def _G(x):
    # antiderivative of Φ
    return x * ndtr(x) + np.exp(-0.5 * x * x) * _INV_SQRT_2PI


def wasserstein_distance(sample) -> float:
    """``∫ |F̂(x) - Φ(x)| dx`` by exact piecewise integration."""
    x = np.sort(np.asarray(sample, dtype=float).reshape(-1))
    if x.size == 0:
        raise InvalidParameterError("sample must be non-empty")
    N = x.size
    left = float(_G(x[0]))
    xr = x[-1]
    right = float(np.exp(-0.5 * xr * xr) * _INV_SQRT_2PI - xr * ndtr(-xr))
    if N == 1:
        return left + right
    a, b = x[:-1], x[1:]
    c = np.arange(1, N) / N
    t = np.clip(ndtri(c), a, b)
    Ga, Gb, Gt = _G(a), _G(b), _G(t)
    below = c * (t - a) - (Gt - Ga)
    above = (Gb - Gt) - c * (b - t)
    return left + right + float(np.sum(below + above))


def dkw_slack(size: int, alpha: float = 0.01) -> float:
    """Slack ``2 sqrt(ln(2/alpha) / (2 size))`` for the empirical check of ``D <= 2 sqrt(W)``."""
    return 2.0 * math.sqrt(math.log(2.0 / alpha) / (2.0 * size))


@dataclass(frozen=True)
class DistanceReport:
    kolmogorov: float
    wasserstein: float
    sample_size: int

    @classmethod
    def of(cls, sample) -> "DistanceReport":
        x = np.asarray(sample, dtype=float).reshape(-1)
        return cls(kolmogorov_distance(x), wasserstein_distance(x), int(x.size))

    @property
    def metric_relation_holds(self) -> bool:
        return self.kolmogorov <= 2.0 * math.sqrt(self.wasserstein) + dkw_slack(self.sample_size)

    def to_json(self) -> str:
        return json.dumps({"kolmogorov": self.kolmogorov, "wasserstein": self.wasserstein,
                           "sample_size": self.sample_size}, sort_keys=True)


# ------------------------------------------------- variance decomposition


@dataclass(frozen=True)
class VarianceDecomposition:
    lhs: float
    lhs_se: float
    rhs: float
    rhs_se: float
    terms: tuple

    @property
    def holds(self) -> bool:
        """``lhs >= rhs`` up to three combined standard errors."""
        return self.lhs >= self.rhs - 3.0 * math.hypot(self.lhs_se, self.rhs_se)


def variance_decomposition_check(f: Callable[[np.ndarray], float], draw: Callable[[np.random.Generator], np.ndarray],
                                 sets, reps: int, seed: int, inner_reps: int = 16) -> VarianceDecomposition:
    """Nested Monte Carlo for ``Var f`` and ``Σ_i Var E(f | blocks in A_i)``.

    ``draw(rng)`` returns all blocks (block index first). For each of
    ``reps`` outer draws and each set ``A_i``, the conditional mean is
    estimated from ``inner_reps`` redraws of the blocks outside ``A_i``; the
    inner-sampling noise is removed from the variance of those means.
    """
    sets = [sorted(set(int(i) for i in s)) for s in sets]
    flat = [i for s in sets for i in s]
    if len(flat) != len(set(flat)):
        raise InvalidParameterError("index sets must be pairwise disjoint")
    if reps < 4 or inner_reps < 2:
        raise InvalidParameterError("need reps >= 4 and inner_reps >= 2")
    rng = make_rng(seed)
    base_vals = np.empty(reps)
    means = np.empty((len(sets), reps))
    within = np.empty((len(sets), reps))
    for r in range(reps):
        x = np.asarray(draw(rng), dtype=float)
        base_vals[r] = f(x)
        for i, s in enumerate(sets):
            vals = np.empty(inner_reps)
            for q in range(inner_reps):
                y = np.asarray(draw(rng), dtype=float)
                y[s] = x[s]
                vals[q] = f(y)
            means[i, r] = vals.mean()
            within[i, r] = vals.var(ddof=1)

    def term(chunk_means, chunk_within):
        return np.var(chunk_means, ddof=1) - np.mean(chunk_within) / inner_reps

    terms = tuple(float(term(means[i], within[i])) for i in range(len(sets)))
    lhs = float(np.var(base_vals, ddof=1))
    packed = np.concatenate([means, within], axis=0).T
    k = len(sets)

    def rhs_stat(chunk):
        return sum(term(chunk[:, i], chunk[:, k + i]) for i in range(k))

    return VarianceDecomposition(lhs, batch_se(base_vals, lambda c: np.var(c, ddof=1)),
                                 float(sum(terms)), batch_se(packed, rhs_stat), terms)
