"""Compiled double/triple loops over grid node pairs and triples.

All inputs are flattened to 2-d (nodes, components) float64 arrays by the
callers; norms are Frobenius.
"""

import numba
import numpy as np


@numba.njit(cache=True)
def sup_ratio_increments(t, v, exponent):
    n = t.shape[0]
    d = v.shape[1]
    best = 0.0
    bi, bj = 0, n - 1
    for i in range(n - 1):
        for j in range(i + 1, n):
            acc = 0.0
            for c in range(d):
                diff = v[j, c] - v[i, c]
                acc += diff * diff
            r = np.sqrt(acc) / (t[j] - t[i]) ** exponent
            if r > best:
                best = r
                bi, bj = i, j
    return best, bi, bj


@numba.njit(cache=True)
def sup_ratio_table(t, table, exponent):
    # table[i, j, :] holds the two-index value for the pair s = t_i <= t = t_j
    n = t.shape[0]
    d = table.shape[2]
    best = 0.0
    bi, bj = 0, n - 1
    for i in range(n - 1):
        for j in range(i + 1, n):
            acc = 0.0
            for c in range(d):
                acc += table[i, j, c] * table[i, j, c]
            r = np.sqrt(acc) / (t[j] - t[i]) ** exponent
            if r > best:
                best = r
                bi, bj = i, j
    return best, bi, bj


@numba.njit(cache=True)
def sup_ratio_remainder(t, z, zp, x, exponent):
    """sup |z_ts - zp_s x_ts| / |t-s|^exponent; zp has shape (n, d, l)."""
    n = t.shape[0]
    d = z.shape[1]
    ell = x.shape[1]
    best = 0.0
    bi, bj = 0, n - 1
    dx = np.empty(ell)
    for i in range(n - 1):
        for j in range(i + 1, n):
            for k in range(ell):
                dx[k] = x[j, k] - x[i, k]
            acc = 0.0
            for c in range(d):
                r = z[j, c] - z[i, c]
                for k in range(ell):
                    r -= zp[i, c, k] * dx[k]
                acc += r * r
            ratio = np.sqrt(acc) / (t[j] - t[i]) ** exponent
            if ratio > best:
                best = ratio
                bi, bj = i, j
    return best, bi, bj


@numba.njit(cache=True)
def chen_defect_table(x, area):
    """max over s < u < t of |A_ts - A_tu - A_us - X_us (x) X_tu|.

    area[i, j] is the level-two value over [t_i, t_j] for i <= j.  The defect
    is linear in the table, so it is evaluated on the deviation E of the table
    from the Chen-consistent table generated by its first row:
    defect(s, u, t) = E_st - E_su - E_ut.  Pairs (s, u) whose bound
    |E_su| + max|E_s.| + max|E_u.| cannot beat the current best are skipped.
    """
    n = x.shape[0]
    ell = x.shape[1]
    E = np.zeros((n, n, ell, ell))
    En = np.zeros((n, n))
    R = np.zeros(n)
    for s in range(n):
        for t in range(s + 1, n):
            acc = 0.0
            for a in range(ell):
                x0s = x[s, a] - x[0, a]
                for b in range(ell):
                    m = area[0, t, a, b] - area[0, s, a, b] - x0s * (x[t, b] - x[s, b])
                    e = area[s, t, a, b] - m
                    E[s, t, a, b] = e
                    acc += e * e
            En[s, t] = np.sqrt(acc)
            if En[s, t] > R[s]:
                R[s] = En[s, t]
    best = 0.0
    for s in range(n):
        for u in range(s + 1, n - 1):
            if En[s, u] + R[s] + R[u] <= best:
                continue
            for t in range(u + 1, n):
                acc = 0.0
                for a in range(ell):
                    for b in range(ell):
                        r = E[s, t, a, b] - E[s, u, a, b] - E[u, t, a, b]
                        acc += r * r
                r = np.sqrt(acc)
                if r > best:
                    best = r
    return best


@numba.njit(cache=True)
def geometric_defect_table(x, area):
    """max over s < t of |Sym(A_ts) - X_ts (x) X_ts / 2|."""
    n = x.shape[0]
    ell = x.shape[1]
    best = 0.0
    for s in range(n):
        for t in range(s + 1, n):
            acc = 0.0
            for a in range(ell):
                for b in range(ell):
                    r = (0.5 * (area[s, t, a, b] + area[s, t, b, a])
                         - 0.5 * (x[t, a] - x[s, a]) * (x[t, b] - x[s, b]))
                    acc += r * r
            if acc > best:
                best = acc
    return np.sqrt(best)
