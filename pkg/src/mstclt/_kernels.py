"""Compiled inner loops. Callers own validation; these assume clean input."""
from __future__ import annotations

import numpy as np
from numba import njit

_JIT = dict(cache=True, nogil=True)


@njit(**_JIT)
def uf_find(parent, x):
    while parent[x] != x:
        parent[x] = parent[parent[x]]
        x = parent[x]
    return x


@njit(**_JIT)
def uf_union(parent, size, a, b):
    ra = uf_find(parent, a)
    rb = uf_find(parent, b)
    if ra == rb:
        return False
    if size[ra] < size[rb]:
        ra, rb = rb, ra
    parent[rb] = ra
    size[ra] += size[rb]
    return True


@njit(**_JIT)
def kruskal_select(n, u, v, order):
    """Scan edges in ``order``; return the chosen mask and component count."""
    parent = np.arange(n)
    size = np.ones(n, np.int64)
    chosen = np.zeros(u.size, np.bool_)
    comps = n
    for idx in order:
        if uf_union(parent, size, u[idx], v[idx]):
            chosen[idx] = True
            comps -= 1
            if comps == 1:
                break
    return chosen, comps


@njit(**_JIT)
def neumaier_sum(x):
    s = 0.0
    c = 0.0
    for xi in x:
        t = s + xi
        if abs(s) >= abs(xi):
            c += (s - t) + xi
        else:
            c += (xi - t) + s
        s = t
    return s + c


@njit(**_JIT)
def mst_weight_one(n, u, v, w):
    """MST (forest) weight for one weight vector; edges pre-sorted by (u, v)."""
    order = np.argsort(w, kind="mergesort")
    parent = np.arange(n)
    size = np.ones(n, np.int64)
    picked = np.empty(max(n - 1, 0))
    k = 0
    for idx in order:
        if uf_union(parent, size, u[idx], v[idx]):
            picked[k] = w[idx]
            k += 1
            if k == n - 1:
                break
    return neumaier_sum(picked[:k])


@njit(**_JIT)
def mst_weight_batch(n, u, v, W):
    """Row-wise MST weights of the weight matrix ``W`` (replicates x edges)."""
    out = np.empty(W.shape[0])
    for r in range(W.shape[0]):
        out[r] = mst_weight_one(n, u, v, W[r])
    return out


@njit(**_JIT)
def labels_from_pairs(n, a, b, active):
    """Connected-component labels 0..k-1 (first-appearance order) of vertices
    joined by pairs ``(a[i], b[i])``; vertices with ``active`` False get -1."""
    parent = np.arange(n)
    size = np.ones(n, np.int64)
    for i in range(a.size):
        uf_union(parent, size, a[i], b[i])
    labels = np.full(n, -1, np.int64)
    root_label = np.full(n, -1, np.int64)
    nxt = 0
    for x in range(n):
        if not active[x]:
            continue
        r = uf_find(parent, x)
        if root_label[r] < 0:
            root_label[r] = nxt
            nxt += 1
        labels[x] = root_label[r]
    return labels


@njit(**_JIT)
def _neighbor_offsets(d):
    total = 3 ** d
    off = np.empty((total, d), np.int64)
    for t in range(total):
        q = t
        for k in range(d):
            off[t, k] = q % 3 - 1
            q //= 3
    return off


@njit(**_JIT)
def grid_pairs(points, radius):
    """All pairs ``i < j`` with ``|p_i - p_j| <= radius`` via a cell grid of side ``radius``."""
    n, d = points.shape
    if n < 2:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    lo = np.empty(d)
    dims = np.empty(d, np.int64)
    for k in range(d):
        lo[k] = points[:, k].min()
        dims[k] = int((points[:, k].max() - lo[k]) / radius) + 1
    cell = np.empty((n, d), np.int64)
    key = np.empty(n, np.int64)
    for i in range(n):
        kk = 0
        for k in range(d):
            c = int((points[i, k] - lo[k]) / radius)
            if c >= dims[k]:
                c = dims[k] - 1
            cell[i, k] = c
            kk = kk * dims[k] + c
        key[i] = kk
    order = np.argsort(key, kind="mergesort")
    skey = key[order]
    offs = _neighbor_offsets(d)
    r2 = radius * radius
    cap = 16 * n + 16
    ia = np.empty(cap, np.int64)
    ib = np.empty(cap, np.int64)
    m = 0
    for i in range(n):
        for t in range(offs.shape[0]):
            kk = 0
            ok = True
            for k in range(d):
                c = cell[i, k] + offs[t, k]
                if c < 0 or c >= dims[k]:
                    ok = False
                    break
                kk = kk * dims[k] + c
            if not ok:
                continue
            s = np.searchsorted(skey, kk)
            while s < n and skey[s] == kk:
                j = order[s]
                s += 1
                if j <= i:
                    continue
                dd = 0.0
                for k in range(d):
                    diff = points[i, k] - points[j, k]
                    dd += diff * diff
                if dd <= r2:
                    if m == cap:
                        cap *= 2
                        na = np.empty(cap, np.int64)
                        nb = np.empty(cap, np.int64)
                        na[:m] = ia[:m]
                        nb[:m] = ib[:m]
                        ia = na
                        ib = nb
                    ia[m] = i
                    ib[m] = j
                    m += 1
    return ia[:m].copy(), ib[:m].copy()


@njit(**_JIT)
def tree_lifting(n, tu, tv, tw):
    """Root every tree component and build binary-lifting ancestor/max tables."""
    deg = np.zeros(n + 1, np.int64)
    for i in range(tu.size):
        deg[tu[i] + 1] += 1
        deg[tv[i] + 1] += 1
    for i in range(n):
        deg[i + 1] += deg[i]
    adj = np.empty(2 * tu.size, np.int64)
    adjw = np.empty(2 * tu.size)
    fill = deg[:-1].copy()
    for i in range(tu.size):
        a, b = tu[i], tv[i]
        adj[fill[a]] = b
        adjw[fill[a]] = tw[i]
        fill[a] += 1
        adj[fill[b]] = a
        adjw[fill[b]] = tw[i]
        fill[b] += 1
    parent = np.full(n, -1, np.int64)
    pw = np.zeros(n)
    depth = np.zeros(n, np.int64)
    comp = np.full(n, -1, np.int64)
    stack = np.empty(n, np.int64)
    ncomp = 0
    for root in range(n):
        if comp[root] >= 0:
            continue
        comp[root] = ncomp
        parent[root] = root
        top = 0
        stack[0] = root
        top = 1
        while top > 0:
            top -= 1
            x = stack[top]
            for e in range(deg[x], deg[x + 1]):
                y = adj[e]
                if comp[y] < 0:
                    comp[y] = ncomp
                    parent[y] = x
                    pw[y] = adjw[e]
                    depth[y] = depth[x] + 1
                    stack[top] = y
                    top += 1
        ncomp += 1
    levels = 1
    while (1 << levels) < max(n, 2):
        levels += 1
    up = np.empty((levels, n), np.int64)
    mx = np.empty((levels, n))
    up[0] = parent
    mx[0] = pw
    for j in range(1, levels):
        for x in range(n):
            mid = up[j - 1, x]
            up[j, x] = up[j - 1, mid]
            mx[j, x] = max(mx[j - 1, x], mx[j - 1, mid])
    return up, mx, depth, comp


@njit(**_JIT)
def path_max_many(up, mx, depth, qa, qb):
    """Max edge weight on the tree path for each query pair (same component assumed)."""
    out = np.empty(qa.size)
    levels = up.shape[0]
    for q in range(qa.size):
        a, b = qa[q], qb[q]
        best = 0.0
        if depth[a] < depth[b]:
            a, b = b, a
        diff = depth[a] - depth[b]
        j = 0
        while diff > 0:
            if diff & 1:
                best = max(best, mx[j, a])
                a = up[j, a]
            diff >>= 1
            j += 1
        if a != b:
            for j in range(levels - 1, -1, -1):
                if up[j, a] != up[j, b]:
                    best = max(best, mx[j, a], mx[j, b])
                    a = up[j, a]
                    b = up[j, b]
            best = max(best, mx[0, a], mx[0, b])
        out[q] = best
    return out
