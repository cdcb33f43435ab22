import json
import math

import numpy as np
import pytest

from mstclt._random import make_rng
from mstclt.errors import DegenerateFunctionalError, InvalidParameterError
from mstclt.lattice import WeightLaw
from mstclt.stein import (ArrayModel, DistanceReport, LatticeMSTModel, PoissonBlockModel, batch_se, dkw_slack,
                          exact_T, kolmogorov_distance, poisson_blocks, sample_T, stein_bound,
                          variance_decomposition_check, wasserstein_distance)
from oracles import naive_kolmogorov, quad_wasserstein


def _linear_factory(n):
    def factory(base, fresh):
        return ArrayModel(np.sum, make_rng(base).standard_normal(n), make_rng(fresh).standard_normal(n))
    return factory


def test_constant_f_gives_zero_T():
    m = ArrayModel(lambda x: 3.0, np.zeros(5), np.ones(5))
    assert np.all(sample_T(m, 50, 1) == 0.0)
    assert exact_T(m)[0] == 0.0
    with pytest.raises(DegenerateFunctionalError):
        stein_bound(lambda b, f: ArrayModel(lambda x: 3.0, np.zeros(5), np.ones(5)), 10, 5, 0)


def test_sample_T_validation():
    with pytest.raises(InvalidParameterError):
        sample_T(ArrayModel(np.sum, np.zeros(0), np.zeros(0)), 5, 1)
    with pytest.raises(InvalidParameterError):
        sample_T(ArrayModel(np.sum, np.zeros(3), np.zeros(3)), 0, 1)
    with pytest.raises(InvalidParameterError):
        stein_bound(_linear_factory(3), 1, 5, 0)


def test_linear_f_T_sample_is_closed_form():
    # Δ_J f(X) = Δ_J f(X^A) = X_J - X'_J for linear f
    x, xp = np.arange(6.0), np.arange(6.0)[::-1] * 0.5
    m = ArrayModel(np.sum, x, xp)
    T, delta = exact_T(m)
    np.testing.assert_allclose(delta, x - xp)
    assert T == pytest.approx(0.5 * np.sum((x - xp) ** 2), rel=1e-12)


def test_linear_f_mean_T_equals_n():
    n, reps = 10, 4000
    vals = np.array([sample_T(_linear_factory(n)(2 * i, 2 * i + 1), 1, i).mean() for i in range(reps)])
    se = vals.std(ddof=1) / math.sqrt(reps)
    assert abs(vals.mean() - n) < 3 * se


def test_sample_T_unbiased_for_exact_T_lattice():
    m = LatticeMSTModel(1, 2, WeightLaw.uniform01(), 5, 6)
    T, _ = exact_T(m)
    s = sample_T(m, 20000, 7)
    assert abs(s.mean() - T) < 3 * s.std(ddof=1) / math.sqrt(s.size)


def test_exact_T_matches_definition_small():
    # direct sum over (A, j) pairs for a nonlinear f
    rng = np.random.default_rng(0)
    x, xp = rng.random(4), rng.random(4)
    f = lambda z: float(np.max(z) * np.sum(z ** 2))
    m = ArrayModel(f, x, xp)
    n = 4

    def fA(A):
        z = x.copy()
        z[list(A)] = xp[list(A)]
        return f(z)

    import itertools

    total = 0.0
    for size in range(n):
        for A in itertools.combinations(range(n), size):
            for j in set(range(n)) - set(A):
                dj = fA(()) - fA((j,))
                djA = fA(A) - fA(A + (j,))
                total += dj * djA / (math.comb(n, size) * (n - size))
    assert exact_T(m)[0] == pytest.approx(0.5 * total, rel=1e-12)


def test_linear_bound_decreases_in_n():
    vals = [stein_bound(_linear_factory(n), 200, 64, 1).bound_value for n in (16, 64, 256)]
    assert vals[0] > vals[1] > vals[2]


def test_lattice_n5_bound_regression():
    est = stein_bound(lambda b, f: LatticeMSTModel(5, 2, WeightLaw.uniform01(), b, f), 100, 64, 3)
    assert np.isfinite(est.bound_value) and est.bound_value > 0
    assert not est.exact
    d = json.loads(est.to_json())
    for key in ("t_mean", "t_var", "sigma2_hat", "bound_value", "se_t_mean", "se_bound_value"):
        assert key in d
    assert est.t_var >= 0


def test_stein_bound_is_deterministic():
    f = lambda b, s: LatticeMSTModel(2, 2, WeightLaw.uniform01(), b, s)
    assert stein_bound(f, 20, 8, 5).to_json() == stein_bound(f, 20, 8, 5).to_json()


def test_poisson_blocks_tile_the_box():
    for n in (1, 2, 3, 4, 5, 6, 7.5):
        blocks = poisson_blocks(n, 2)
        s = blocks[0].half_width
        assert 1.0 <= s <= 2.0
        assert sum(b.volume for b in blocks) == pytest.approx((2 * n) ** 2)
    with pytest.raises(InvalidParameterError):
        poisson_blocks(10, 2, k=0)
    m = PoissonBlockModel(3, 2, 1.0, 1, 2)
    assert m.n_blocks == 9
    assert m.evaluate() > 0


def test_kolmogorov_examples():
    assert kolmogorov_distance([0.0]) == 0.5
    assert kolmogorov_distance(np.random.default_rng(0).standard_normal(10 ** 5)) < 0.01
    assert kolmogorov_distance(np.random.default_rng(0).standard_normal(100) + 10) > 0.99
    with pytest.raises(InvalidParameterError):
        kolmogorov_distance([])


def test_kolmogorov_matches_naive():
    rng = np.random.default_rng(4)
    for _ in range(30):
        x = rng.standard_normal(int(rng.integers(1, 201))) * rng.uniform(0.5, 2)
        if rng.random() < 0.3:
            x = np.round(x, 1)  # ties
        assert kolmogorov_distance(x) == pytest.approx(naive_kolmogorov(x), abs=1e-12)


def test_wasserstein_examples():
    assert wasserstein_distance([0.0]) == pytest.approx(math.sqrt(2 / math.pi), abs=1e-15)
    small = wasserstein_distance(np.random.default_rng(1).standard_normal(100))
    big = wasserstein_distance(np.random.default_rng(1).standard_normal(10 ** 5))
    assert big < small
    assert big < 0.01


def test_wasserstein_matches_quadrature():
    rng = np.random.default_rng(6)
    for _ in range(30):
        x = rng.standard_normal(int(rng.integers(1, 51))) * rng.uniform(0.3, 3) + rng.uniform(-2, 2)
        assert wasserstein_distance(x) == pytest.approx(quad_wasserstein(x), abs=1e-9)


def test_metric_relation():
    rng = np.random.default_rng(2)
    for size in (10, 100, 1000):
        for shift in (0.0, 0.5):
            rep = DistanceReport.of(rng.standard_normal(size) + shift)
            assert rep.metric_relation_holds
    assert dkw_slack(100) == pytest.approx(2 * math.sqrt(math.log(200) / 200))


def test_batch_se_matches_batch_means_for_mean():
    x = np.random.default_rng(0).random(320)
    expected = np.std([c.mean() for c in np.array_split(x, 32)], ddof=1) / math.sqrt(32)
    assert batch_se(x) == pytest.approx(expected, rel=1e-12)
    assert math.isnan(batch_se(x[:3]))


def test_variance_decomposition_examples():
    draw = lambda rng: rng.standard_normal(2)
    add = variance_decomposition_check(lambda x: x[0] + x[1], draw, [[0], [1]], 600, 1)
    assert abs(add.lhs - 2.0) < 3 * add.lhs_se
    assert abs(add.rhs - 2.0) < 3 * add.rhs_se
    prod = variance_decomposition_check(lambda x: x[0] * x[1], draw, [[0], [1]], 600, 2)
    assert abs(prod.rhs) < 3 * prod.rhs_se + 0.02
    assert prod.holds
    with pytest.raises(InvalidParameterError):
        variance_decomposition_check(lambda x: x[0], draw, [[0, 1], [1]], 10, 1)


def test_variance_decomposition_lattice_groupings():
    from mstclt._kernels import mst_weight_one
    from mstclt.lattice import lattice_structure

    _, u, v = lattice_structure(2, 2)
    m = u.size
    f = lambda w: mst_weight_one(25, u, v, w)
    draw = lambda rng: rng.random(m)
    rng = np.random.default_rng(3)
    for g in range(20):
        perm = rng.permutation(m)
        k = int(rng.integers(2, 5))
        sets = [perm[i::k][: m // (2 * k)] for i in range(k)]
        res = variance_decomposition_check(f, draw, sets, 64, 100 + g, inner_reps=8)
        assert res.holds, res
