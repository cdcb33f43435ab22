import itertools
import math
from collections import deque

import numpy as np
import pytest

from mstclt.errors import InvalidParameterError
from mstclt.geometry import Box, dist_to_box, sample_poisson
from mstclt.lattice import WeightLaw, build_lattice_box
from mstclt.percolation import (ArmQuery, ArmStudy, InnerSet, LatticeRegion, Region, WallStatus,
                                arm_event, arm_rows_to_csv, continuum_clusters, estimate_arm_probability,
                                has_wall, is_trifurcation_box, lattice_clusters, lattice_two_arm, wilson_interval)
from oracles import bfs_lattice_clusters, partition_of, raster_clusters


def _bfs_point_clusters(pts, r):
    n = len(pts)
    lab = [-1] * n
    nxt = 0
    for s in range(n):
        if lab[s] >= 0:
            continue
        lab[s] = nxt
        q = deque([s])
        while q:
            i = q.popleft()
            for j in range(n):
                if lab[j] < 0 and math.dist(pts[i], pts[j]) <= 2 * r:
                    lab[j] = nxt
                    q.append(j)
        nxt += 1
    return lab


def test_tangent_points_join():
    pts = np.array([[0.0, 0.0], [1.0, 0.0]])
    assert continuum_clusters(pts, None, 0.5).n_clusters == 1
    assert continuum_clusters(pts, None, 0.5 - 1e-9).n_clusters == 2


def test_region_restriction():
    pts = np.array([[0.0, 0.0], [0.9, 0.0], [1.8, 0.0]])
    region = Region(inside=(Box.centered(1.0, 2),))
    lab = continuum_clusters(pts, region, 0.5)
    assert lab.labels.tolist() == [0, 0, -1]


def _points_off_threshold(rng, m, r, band):
    # the raster oracle cannot resolve gaps within a few pixels of 2r
    pts = []
    while len(pts) < m:
        p = rng.uniform(1.5, 8.5, size=2)
        if all(abs(math.dist(p, q) - 2 * r) >= band for q in pts):
            pts.append(p)
    return np.array(pts)


def test_continuum_matches_flood_fill():
    rng = np.random.default_rng(3)
    r, h = 1.0, 1.0 / 50
    for _ in range(25):
        pts = _points_off_threshold(rng, 30, r, 4 * h)
        lab = continuum_clusters(pts, None, r)
        assert lab.partition() == partition_of(raster_clusters(pts, r, 0.0, 10.0, h))


def test_arm_empty_configuration():
    q = ArmQuery(Box.centered(1.0, 2), Box.centered(5.0, 2), 0.5, k=1)
    assert not arm_event(np.empty((0, 2)), q)


def test_arm_chain_witness():
    xs = np.arange(1.4, 5.01, 0.8)
    pts = np.stack([xs, np.zeros_like(xs)], axis=1)
    q = ArmQuery(Box.centered(1.0, 2), Box.centered(5.0, 2), 0.5, k=1, variant="touch")
    assert arm_event(pts, q)
    # break the chain
    assert not arm_event(np.delete(pts, 2, axis=0), q)


def _arm_oracle(pts, inner, outer, r, k, variant):
    keep = [p for p in pts if outer.contains(p)[0] and not inner.contains(p)[0]]
    if not keep:
        return False
    lab = _bfs_point_clusters(keep, r)
    reach = r if variant == "touch" else 2 * r
    good = 0
    for c in set(lab):
        members = [p for p, l in zip(keep, lab) if l == c]
        near_in = any(dist_to_box(p, inner) <= reach for p in members)
        linf = [np.max(np.abs(p - outer.center)) for p in members]
        near_out = any(outer.half_width - x <= 2 * r for x in linf)
        good += near_in and near_out
    return good >= k


def test_arm_event_matches_bruteforce():
    rng = np.random.default_rng(9)
    inner, outer = Box.centered(1.0, 2), Box.centered(3.0, 2)
    for _ in range(300):
        m = int(rng.integers(0, 41))
        pts = rng.uniform(-3, 3, size=(m, 2))
        r = float(rng.uniform(0.2, 0.8))
        for variant in ("touch", "reach"):
            q = ArmQuery(inner, outer, r, 2, variant)
            assert arm_event(pts, q) == _arm_oracle(pts, inner, outer, r, 2, variant)


def test_arm_monotone_in_r_and_reach_implies_touch_of_dilation():
    rng = np.random.default_rng(1)
    inner, outer = Box.centered(1.0, 2), Box.centered(6.0, 2)
    for i in range(200):
        c = sample_poisson(outer, 1.0, i)
        prev = False
        for r in np.linspace(0.3, 0.8, 6):
            now = arm_event(c, ArmQuery(inner, outer, r, 1, "touch"))
            assert now or not prev
            prev = now
        r = float(rng.uniform(0.3, 0.7))
        if arm_event(c, ArmQuery(inner, outer, r, 1, "reach")):
            touch = arm_event(c, ArmQuery(inner, outer, r, 1, "touch"))
            touch_dil = arm_event(c, ArmQuery(InnerSet(inner, r), outer, r, 1, "touch"))
            assert touch or touch_dil


def test_inner_set_with_balls():
    s = InnerSet(Box.centered(1.0, 2), 0.5, balls=(((3.0, 0.0), 0.5),))
    assert s.contains([[1.4, 0.0], [3.2, 0.2]]).tolist() == [True, True]
    assert s.distance([[2.0, 0.0]])[0] == pytest.approx(0.5)


def test_ambient_restricts_clusters():
    xs = np.arange(1.4, 5.01, 0.8)
    pts = np.stack([xs, np.full_like(xs, 0.5)], axis=1)
    inner, outer = Box.centered(1.0, 2), Box.centered(5.0, 2)
    q = ArmQuery(inner, outer, 0.5, 1, "touch", ambient=Box([0.0, 3.0], 2.4))
    assert not arm_event(pts, q)


def test_arm_query_validation():
    with pytest.raises(InvalidParameterError):
        ArmQuery(Box.centered(3.0, 2), Box.centered(1.0, 2), 0.5)
    with pytest.raises(InvalidParameterError):
        ArmQuery(Box.centered(1.0, 2), Box.centered(3.0, 2), 0.5, k=0)
    with pytest.raises(InvalidParameterError):
        ArmQuery(Box.centered(1.0, 2), Box.centered(3.0, 2), 0.5, variant="both")


def test_lattice_extremes():
    b = build_lattice_box(3, 2, seed=1)
    assert lattice_clusters(b, 1.0).n_clusters == 1
    assert lattice_clusters(b, 0.0).n_clusters == b.vertex_count


def _open_pairs(b, p, skip=()):
    thr = b.law.threshold(p)
    out = []
    for e in range(b.edge_count):
        if e in skip or not b.weights[e] <= thr:
            continue
        out.append((tuple(b.coords[b.graph.u[e]].tolist()), tuple(b.coords[b.graph.v[e]].tolist())))
    return out


def test_lattice_matches_bfs_5x5():
    for s in range(50):
        b = build_lattice_box(2, 2, seed=s)
        lab = lattice_clusters(b, 0.5).labels
        ref = bfs_lattice_clusters(2, 2, _open_pairs(b, 0.5))
        assert partition_of(lab) == partition_of([ref[tuple(x)] for x in b.coords.tolist()])


def test_lattice_monotone_in_p():
    for s in range(30):
        b = build_lattice_box(4, 2, WeightLaw.exponential(1.0), seed=s)
        prev = None
        for p in np.linspace(0.1, 0.9, 9):
            part = partition_of(lattice_clusters(b, p).labels)
            if prev is not None:
                # every earlier cluster sits inside a later one
                assert all(any(c <= d for d in part) for c in prev)
            prev = part


def test_lattice_minus_box_region():
    b = build_lattice_box(3, 2, seed=2)
    q1 = Box.centered(1.0, 2)
    lab = lattice_clusters(b, 1.0, LatticeRegion(minus_box=q1)).labels
    center = b.vertex_index([0, 0])
    assert lab[center] == -1
    assert lab[b.vertex_index([1, 1])] >= 0


def _two_arm_oracle(b, n, p):
    x, y = (0, 0), (1, 0)
    e = b.edge_index(x, y)
    lab = bfs_lattice_clusters(n, 2, _open_pairs(b, p, skip=(e,)))
    if lab[x] == lab[y]:
        return False
    boundary = [s for s in itertools.product(range(-n, n + 1), repeat=2) if max(map(abs, s)) == n]
    hit = {lab[s] for s in boundary}
    return lab[x] in hit and lab[y] in hit


def test_two_arm_matches_bfs_n3():
    outer = Box.centered(3.0, 2)
    for s in range(1000):
        b = build_lattice_box(3, 2, seed=s)
        assert lattice_two_arm(b, ((0, 0), (1, 0)), outer, 0.5) == _two_arm_oracle(b, 3, 0.5)


def test_two_arm_extremes_and_errors():
    b = build_lattice_box(3, 2, seed=4)
    outer = Box.centered(3.0, 2)
    assert not lattice_two_arm(b, ((0, 0), (1, 0)), outer, 0.0)
    assert not lattice_two_arm(b, ((0, 0), (1, 0)), outer, 1.0)
    assert not lattice_two_arm(b, Box.centered(1.0, 2), outer, 0.0)
    assert lattice_two_arm(b, Box.centered(1.0, 2), outer, 1.0, k=1)
    with pytest.raises(InvalidParameterError):
        lattice_two_arm(b, ((3, 0), (4, 0)), outer, 0.5)
    with pytest.raises(InvalidParameterError):
        lattice_two_arm(b, ((0, 0), (1, 0)), Box.centered(4.0, 2), 0.5)


def test_two_arm_box_site_counts_disjoint_arms():
    # open only the two horizontal half-lines leaving B(0, 1)
    n = 4
    b = build_lattice_box(n, 2, seed=0)
    w = np.ones(b.edge_count)
    for x in range(1, n):
        w[b.edge_index((x, 0), (x + 1, 0))] = 0.0
        w[b.edge_index((-x - 1, 0), (-x, 0))] = 0.0
    b2 = b.with_uniforms(np.where(w == 0.0, 0.1, 0.9))
    outer = Box.centered(float(n), 2)
    assert lattice_two_arm(b2, Box.centered(1.0, 2), outer, 0.5)
    assert not lattice_two_arm(b2, Box.centered(1.0, 2), outer, 0.5, k=3)


def _y_shape(arms=3):
    pts = [[0.0, 0.0]]
    for k in range(arms):
        ang = 2 * math.pi * k / 3 + 0.3
        for t in np.arange(0.8, 6.01, 0.8):
            pts.append([t * math.cos(ang), t * math.sin(ang)])
    return np.array(pts)


def test_trifurcation_examples():
    K, M = Box.centered(1.0, 2), Box.centered(5.0, 2)
    assert not is_trifurcation_box(np.empty((0, 2)), K, M, 0.5)
    assert is_trifurcation_box(_y_shape(3), K, M, 0.5)
    assert not is_trifurcation_box(_y_shape(2), K, M, 0.5)
    with pytest.raises(InvalidParameterError):
        is_trifurcation_box(_y_shape(3), M, K, 0.5)


def test_wall_examples():
    K = Box.centered(6.0, 2)
    g = np.stack(np.meshgrid(np.arange(-4, 4.01, 0.1), np.arange(-4, 4.01, 0.1)), -1).reshape(-1, 2)
    annulus = g[(np.max(np.abs(g), axis=1) > 1.0)]
    assert has_wall(annulus, [0.0, 0.0], 1.0, 4.0, K, 0.1) is WallStatus.PRESENT
    assert has_wall(np.empty((0, 2)), [0.0, 0.0], 1.0, 4.0, K, 0.1) is WallStatus.ABSENT
    with pytest.raises(InvalidParameterError):
        has_wall(annulus, [0.0, 0.0], 4.0, 1.0, K, 0.1)
    with pytest.raises(InvalidParameterError):
        has_wall(annulus, [5.5, 0.0], 1.0, 4.0, K, 0.1)
    with pytest.raises(InvalidParameterError):
        has_wall(annulus, [0.0, 0.0], 1.0, 20.0, Box.centered(2.0, 2), 0.1)


def test_wall_with_clipped_outer_boundary():
    # K cuts through B(x, b): only the part of its boundary inside K matters
    K = Box([0.0, 0.0], 3.0)
    c = sample_poisson(K, 4.0, 1)
    status = has_wall(c, [2.0, 0.0], 0.5, 2.5, K, 0.2)
    assert status in set(WallStatus)


def test_estimator_rows_and_csv():
    st = ArmStudy("continuum", (3.0, 2.0), (0.4, 0.6), variant="reach", inner=1.0)
    rows = estimate_arm_probability(st, 20, 3)
    assert [(r.n, r.param) for r in rows] == [(2.0, 0.4), (2.0, 0.6), (3.0, 0.4), (3.0, 0.6)]
    text = arm_rows_to_csv(rows)
    assert text.splitlines()[0] == "n,param,replicates,successes,phat,ci_lo,ci_hi"
    assert rows == estimate_arm_probability(st, 20, 3, threads=3)


def test_estimator_almost_surely_false_query():
    # the inner box touches the outer boundary, so no point fits between them
    st = ArmStudy("continuum", (2.0,), (0.5,), k=2, inner=2.0)
    with pytest.raises(InvalidParameterError):
        estimate_arm_probability(st, 0, 1)
    rows = estimate_arm_probability(st, 30, 1)
    assert rows[0].phat == 0.0


def test_wilson_interval():
    lo, hi = wilson_interval(0, 10)
    assert lo == 0.0 and 0.2 < hi < 0.35
    lo, hi = wilson_interval(50, 100)
    assert lo == pytest.approx(1 - hi)
