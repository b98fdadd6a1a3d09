"""Independent reference computations used by several test modules."""

import itertools
from functools import lru_cache

import numpy as np
from scipy.sparse import lil_matrix
from scipy.sparse.csgraph import shortest_path


@lru_cache(maxsize=None)
def monotone_paths(n, m):
    """Every path from (0, 0) to (n-1, m-1) with unit steps right, down or diagonal."""
    out = []

    def walk(i, j, acc):
        if (i, j) == (n - 1, m - 1):
            out.append(tuple(acc))
            return
        for di, dj in ((1, 1), (1, 0), (0, 1)):
            a, b = i + di, j + dj
            if a < n and b < m:
                acc.append((a, b))
                walk(a, b, acc)
                acc.pop()

    walk(0, 0, [(0, 0)])
    return out


@lru_cache(maxsize=None)
def _path_index(n, m):
    paths = monotone_paths(n, m)
    width = n + m - 1
    idx = np.full((len(paths), width), n * m, dtype=np.int64)
    for r, p in enumerate(paths):
        idx[r, :len(p)] = [i * m + j for i, j in p]
    lengths = np.array([len(p) for p in paths])
    return idx, lengths


def brute_force_dtw(cost):
    """Minimum total cost and minimum mean cost over all monotone paths."""
    n, m = cost.shape
    idx, lengths = _path_index(n, m)
    flat = np.append(cost.ravel(), 0.0)
    totals = flat[idx].sum(axis=1)
    best = int(np.argmin(totals))
    return totals[best], totals[best] / lengths[best]


def all_strings(alphabet, max_len):
    return [s for k in range(max_len + 1) for s in itertools.product(alphabet, repeat=k)]


def edit_distance_table(alphabet="abc", max_len=6):
    """All-pairs Levenshtein distances by shortest paths in the single-edit graph.

    An optimal edit script between strings of length <= max_len never needs a
    longer intermediate string, so the graph restricted to those strings is exact.
    """
    strings = all_strings(alphabet, max_len)
    index = {s: i for i, s in enumerate(strings)}
    g = lil_matrix((len(strings), len(strings)), dtype=np.int8)
    for s, i in index.items():
        for p in range(len(s)):
            g[i, index[s[:p] + s[p + 1:]]] = 1
            for c in alphabet:
                if c != s[p]:
                    g[i, index[s[:p] + (c,) + s[p + 1:]]] = 1
        if len(s) < max_len:
            for p in range(len(s) + 1):
                for c in alphabet:
                    g[i, index[s[:p] + (c,) + s[p:]]] = 1
    dist = shortest_path(g.tocsr(), method="D", unweighted=True, directed=False)
    return strings, dist.astype(np.int64)


def kendall_pairs(xs, ys):
    c = d = tx = ty = 0
    for i, j in itertools.combinations(range(len(xs)), 2):
        a, b = np.sign(xs[j] - xs[i]), np.sign(ys[j] - ys[i])
        if a == 0 and b == 0:
            continue
        if a == 0:
            tx += 1
        elif b == 0:
            ty += 1
        elif a == b:
            c += 1
        else:
            d += 1
    return c, d, tx, ty
