import json
import math

import numpy as np
import pytest

from mstclt.errors import DegenerateFunctionalError, InvalidParameterError
from mstclt.lab import (LONG_COLUMNS, ExperimentConfig, fit_decay, run_arm_decay, run_clt, run_experiment,
                        run_stein_bound, run_variance_scaling, sample_mst_weights)
from mstclt.lattice import WeightLaw
from mstclt.percolation import ArmRow
from mstclt.stein import LatticeMSTModel, exact_T


def cfg(**kw):
    return ExperimentConfig.from_dict(kw)


def _rows(csv_text):
    lines = csv_text.strip().splitlines()
    head = lines[0].split(",")
    return head, [dict(zip(head, ln.split(","))) for ln in lines[1:]]


@pytest.mark.parametrize("raw", [
    {"kind": "clt_lattice", "sizes": [2], "replicates": 10, "bogus": 1},
    {"kind": "nope", "sizes": [2], "replicates": 10},
    {"kind": "clt_lattice", "sizes": [], "replicates": 10},
    {"kind": "clt_lattice", "sizes": [2.5], "replicates": 10},
    {"kind": "clt_lattice", "sizes": [2], "replicates": 0},
    {"kind": "clt_lattice", "sizes": [2], "replicates": 1},
    {"kind": "variance_scaling", "sizes": [2], "replicates": 1},
    {"kind": "clt_lattice", "sizes": [2], "replicates": 10, "seed": -1},
    {"kind": "clt_lattice", "sizes": [65], "replicates": 10},
    {"kind": "clt_poisson", "sizes": [33], "replicates": 10},
    {"kind": "clt_lattice", "sizes": [2], "replicates": 10 ** 4 + 1},
    {"kind": "stein_bound", "model": "poisson", "sizes": [10], "replicates": 10, "blocks_k": 1},
    {"kind": "arm_decay", "sizes": [4], "replicates": 10},
    {"kind": "arm_decay", "sizes": [4], "replicates": 10, "params": [0.5], "k": 0},
])
def test_invalid_configs(raw):
    with pytest.raises(InvalidParameterError):
        ExperimentConfig.from_dict(raw)


def test_allow_large_and_seed_override():
    raw = {"kind": "clt_lattice", "sizes": [65], "replicates": 10}
    c = ExperimentConfig.from_dict(raw, seed=7, allow_large=True)
    assert c.seed == 7 and c.sizes == (65,)
    assert c.hash != ExperimentConfig.from_dict(raw, seed=8, allow_large=True).hash


def test_defaults_fill_in():
    c = cfg(kind="stein_bound", sizes=[2], replicates=5)
    assert c.options["outer_reps"] == 200 and c.d == 2 and c.seed == 0


def test_clt_lattice_schema_and_values():
    res = run_clt(cfg(kind="clt_lattice", sizes=[2, 3], replicates=200, bootstrap=20, seed=3))
    head, rows = _rows(res.csv_text)
    assert tuple(head) == LONG_COLUMNS
    assert [r["statistic"] for r in rows[:4]] == ["mean", "variance", "kolmogorov", "wasserstein"]
    for r in rows:
        assert int(r["replicates"]) == 200
        assert float(r["stderr"]) >= 0
        assert float(r["ci_lo"]) <= float(r["value"]) <= float(r["ci_hi"]) or r["statistic"] in ("kolmogorov",
                                                                                                   "wasserstein")
    s = res.summary()
    assert set(s) >= {"config_hash", "code_version", "rows", "elapsed_seconds", "seed"}


def test_clt_lattice_n10_kolmogorov_regression():
    res = run_clt(cfg(kind="clt_lattice", sizes=[10], replicates=2000, bootstrap=50, seed=1))
    k = next(r for r in res.rows if r["statistic"] == "kolmogorov")
    assert k["value"] < 0.15


def test_clt_poisson_distances_positive():
    res = run_clt(cfg(kind="clt_poisson", sizes=[5, 10], replicates=300, bootstrap=20, seed=2))
    for r in res.rows:
        if r["statistic"] in ("kolmogorov", "wasserstein"):
            assert 0 < r["value"] < math.inf


def test_clt_degenerate_law():
    c = cfg(kind="clt_lattice", sizes=[2], replicates=20, law={"name": "two_point", "a": 0.0, "b": 1.0, "q": 1.0})
    with pytest.raises(DegenerateFunctionalError):
        run_clt(c)


def test_sample_weights_match_direct_mst():
    from mstclt.lattice import build_lattice_box
    from mstclt.mst import kruskal_mst
    from mstclt._random import derive_seed
    from mstclt.lab import EXPERIMENT_ID

    c = cfg(kind="clt_lattice", sizes=[3], replicates=5, seed=11)
    m = sample_mst_weights(c, 3, 0, 5)
    for i in range(5):
        b = build_lattice_box(3, 2, seed=derive_seed(11, EXPERIMENT_ID["clt_lattice"], 0, i))
        assert m[i] == pytest.approx(kruskal_mst(b.graph).total_weight, rel=1e-12)


def test_variance_scaling_rows():
    res = run_variance_scaling(cfg(kind="variance_scaling", sizes=[2, 4], replicates=200, seed=1))
    var = {r["n"]: r["value"] for r in res.rows if r["statistic"] == "variance"}
    norm = {r["n"]: r["value"] for r in res.rows if r["statistic"] == "normalized_variance"}
    for n in (2, 4):
        assert norm[n] == pytest.approx(var[n] / (2 * n + 1) ** 2)
    pois = run_variance_scaling(cfg(kind="variance_scaling", model="poisson", sizes=[3, 5], replicates=100))
    for r in pois.rows:
        assert 0 < r["value"] < math.inf


def test_fit_decay_recovers_power_law_and_undefined_case():
    rows = [ArmRow(n, 0.5, 10 ** 6, int(10 ** 6 * 0.8 * n ** -1.5), 0, 0, 0) for n in (4, 8, 16, 32)]
    rows = [ArmRow(r.n, r.param, r.replicates, r.successes, r.successes / r.replicates, 0, 0) for r in rows]
    f = fit_decay(rows, 0.5)
    assert f.defined and f.beta_hat == pytest.approx(1.5, abs=1e-3)
    zero = [ArmRow(n, 0.5, 100, 0, 0.0, 0, 0) for n in (4, 8)]
    assert not fit_decay(zero, 0.5).defined


def test_arm_decay_saturated():
    c = cfg(kind="arm_decay", sizes=[2, 4, 8], replicates=20, params=[1.0], k=1, variant="touch", site="box")
    res = run_arm_decay(c)
    assert all(r["phat"] == 1.0 for r in res.rows)
    fit = res.extra["fits"][0]
    assert fit["defined"] and abs(fit["beta_hat"]) < 1e-9


def test_arm_decay_all_zero_emits_rows():
    c = cfg(kind="arm_decay", sizes=[4, 8], replicates=10, params=[0.0])
    res = run_arm_decay(c)
    assert len(res.rows) == 2 and all(r["phat"] == 0.0 for r in res.rows)
    assert not res.extra["fits"][0]["defined"]


def test_stein_exact_vs_mc_2x2_lattice():
    # n=1 lattice box: 3×3 vertices, 12 edges, exact enumeration
    m = LatticeMSTModel(1, 2, WeightLaw.uniform01(), 21, 22)
    assert m.n_blocks == 12
    T, _ = exact_T(m)
    from mstclt.stein import sample_T

    s = sample_T(m, 20000, 5)
    assert abs(s.mean() - T) < 3 * s.std(ddof=1) / math.sqrt(s.size)


def test_run_stein_bound_outputs():
    res = run_stein_bound(cfg(kind="stein_bound", sizes=[1, 2], replicates=200, outer_reps=40, inner_reps=16,
                              bootstrap=20))
    stats = {(r["n"], r["statistic"]) for r in res.rows}
    for n in (1, 2):
        for s in ("t_mean", "t_var", "bound_value", "kolmogorov", "wasserstein"):
            assert (n, s) in stats
    assert all(c["bound_ok"] for c in res.extra["checks"])
    assert res.extra["estimates"][0]["exact"] is True
    json.dumps(res.summary())


def test_stein_bound_poisson_and_degenerate():
    res = run_stein_bound(cfg(kind="stein_bound", model="poisson", sizes=[2], replicates=50, outer_reps=10,
                              inner_reps=4, bootstrap=10))
    assert np.isfinite(res.extra["estimates"][0]["bound_value"])
    bad = cfg(kind="stein_bound", sizes=[1], replicates=20, outer_reps=5, inner_reps=2,
              law={"name": "two_point", "a": 0.0, "b": 1.0, "q": 1.0})
    with pytest.raises(DegenerateFunctionalError):
        run_stein_bound(bad)


def test_threads_do_not_change_results(tmp_path):
    c = cfg(kind="clt_poisson", sizes=[3], replicates=300, bootstrap=10, seed=9)
    a = run_experiment(c, threads=1)
    b = run_experiment(c, threads=3)
    assert a.csv_text == b.csv_text
    p1, j1 = a.write(tmp_path / "x")
    assert p1.read_text() == a.csv_text
    assert json.loads(j1.read_text())["config_hash"] == c.hash
