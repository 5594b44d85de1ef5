"""Independent reference implementations used by the tests.

Deliberately naive: loops, dense matrices and exact fractions, sharing no
code with the package beyond plain data types.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np


def naive_conv(f, w, b, dilation, causal):
    """Nested-loop temporal convolution; f is (T, Cin), w is (k, Cin, Cout)."""
    f = np.asarray(f, dtype=float)
    T, c_in = f.shape
    k, _, c_out = w.shape
    out = np.zeros((T, c_out))
    for t in range(T):
        for i in range(k):
            src = t - dilation * i if causal else t + dilation * (i - (k - 1) // 2)
            if 0 <= src < T:
                for a in range(c_in):
                    for c in range(c_out):
                        out[t, c] += w[i, a, c] * f[src, a]
        out[t] += b
    return out


def floyd_warshall(num_nodes, edges):
    inf = float("inf")
    d = [[0 if i == j else inf for j in range(num_nodes)] for i in range(num_nodes)]
    for i, j in edges:
        d[i][j] = d[j][i] = 1
    for m in range(num_nodes):
        for i in range(num_nodes):
            for j in range(num_nodes):
                if d[i][m] + d[m][j] < d[i][j]:
                    d[i][j] = d[i][m] + d[m][j]
    return d


def partition_from_distances(num_nodes, edges, dist):
    """Re-derive the self/closer/farther 0-1 matrices pair by pair."""
    nbrs = {i: {i} for i in range(num_nodes)}
    for i, j in edges:
        nbrs[i].add(j)
        nbrs[j].add(i)
    out = np.zeros((3, num_nodes, num_nodes))
    for i in range(num_nodes):
        for j in nbrs[i]:
            if i == j:
                out[0, i, j] = 1
            elif dist[j] <= dist[i]:
                out[1, i, j] = 1
            else:
                out[2, i, j] = 1
    return out


def degree_normalize(a):
    """Row degrees on the left, column degrees on the right, via explicit diagonal matrices."""
    rows, cols = a.sum(axis=1), a.sum(axis=0)
    left = np.diag([r ** -0.5 if r > 0 else 0.0 for r in rows])
    right = np.diag([c ** -0.5 if c > 0 else 0.0 for c in cols])
    return left @ a @ right


def runs(labels):
    """(label, start, end) runs by scanning."""
    out = []
    for t, v in enumerate(labels):
        v = int(v)
        if out and out[-1][0] == v and out[-1][2] == t:
            out[-1][2] = t + 1
        else:
            out.append([v, t, t + 1])
    return [tuple(r) for r in out]


def _mask(seg, T):
    m = np.zeros(T, dtype=bool)
    m[seg[1]:seg[2]] = True
    return m


def greedy_counts(pred, gt, tau):
    """Greedy matching evaluated on per-sample masks with exact rational IoU."""
    T = len(gt)
    ps, gs = runs(pred), runs(gt)
    gmasks = [_mask(g, T) for g in gs]
    thr = Fraction(str(tau))
    used = set()
    tp = 0
    for p in ps:
        pm = _mask(p, T)
        scored = []
        for k, (g, gm) in enumerate(zip(gs, gmasks)):
            if k in used or g[0] != p[0]:
                continue
            scored.append((Fraction(int((pm & gm).sum()), int((pm | gm).sum())), -g[1], k))
        if scored:
            score, _, k = max(scored)
            if score >= thr:
                used.add(k)
                tp += 1
    return tp, len(ps) - tp, len(gs) - tp


def optimal_tp(pred, gt, tau):
    """Largest number of one-to-one same-class pairs with IoU >= tau (augmenting paths)."""
    ps, gs = runs(pred), runs(gt)
    thr = Fraction(str(tau))

    def ok(p, g):
        if p[0] != g[0]:
            return False
        inter = max(0, min(p[2], g[2]) - max(p[1], g[1]))
        union = max(p[2], g[2]) - min(p[1], g[1])
        return Fraction(inter, union) >= thr

    adj = [[k for k, g in enumerate(gs) if ok(p, g)] for p in ps]
    owner = {}

    def augment(i, seen):
        for k in adj[i]:
            if k in seen:
                continue
            seen.add(k)
            if k not in owner or augment(owner[k], seen):
                owner[k] = i
                return True
        return False

    return sum(augment(i, set()) for i in range(len(ps)))


def f1_from_counts(tp, fp, fn):
    d = tp + 0.5 * (fp + fn)
    return 1.0 if d == 0 else tp / d


def random_labels(rng, T, L, run_max=None):
    """I.i.d. labels, or runs of random length up to ``run_max``."""
    if run_max is None:
        return rng.integers(0, L, size=T)
    out = []
    while len(out) < T:
        out += [int(rng.integers(L))] * int(rng.integers(1, run_max + 1))
    return np.array(out[:T])
