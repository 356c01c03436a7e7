"""Compiled inner loops. All randomness arrives as pre-drawn arrays."""

import numpy as np
from numba import njit

_OPTS = dict(nogil=True, cache=True)


@njit(**_OPTS)
def _fill_counts(row, counts):
    for i in range(row.shape[0]):
        counts[row[i]] = 0
    for i in range(row.shape[0]):
        counts[row[i]] += 1


@njit(**_OPTS)
def _clear(row, counts):
    for i in range(row.shape[0]):
        counts[row[i]] = 0


@njit(**_OPTS)
def _singles(row, counts):
    s = 0
    for i in range(row.shape[0]):
        if counts[row[i]] == 1:
            s += 1
    return s


@njit(**_OPTS)
def y_from_urns(x, m):
    """Non-isolated count for each row of a (batch, n) urn-index matrix."""
    b, n = x.shape
    counts = np.zeros(m, dtype=np.int64)
    out = np.empty(b, dtype=np.int64)
    for r in range(b):
        row = x[r]
        _fill_counts(row, counts)
        out[r] = n - _singles(row, counts)
    return out


@njit(**_OPTS)
def _pick_other(u, n, skip):
    j = int(u * (n - 1))
    if j > n - 2:
        j = n - 2
    if j >= skip:
        j += 1
    return j


@njit(**_OPTS)
def _pick(u, n):
    i = int(u * n)
    return n - 1 if i > n - 1 else i


@njit(**_OPTS)
def _is_single(c):
    return 1 if c == 1 else 0


@njit(**_OPTS)
def _singles_change(counts, a, x0, c):
    """Change in singleton urns after moving a ball a->x0 and (if c >= 0) c->x0."""
    urns = (a, x0, c)
    change = 0
    for k in range(3):
        v = urns[k]
        if v < 0:
            continue
        dup = False
        for q in range(k):
            if urns[q] == v:
                dup = True
        if dup:
            continue
        delta = 0
        if v == a:
            delta -= 1
        if v == x0:
            delta += 1 if c < 0 else 2
        if c >= 0 and v == c:
            delta -= 1
        change += _is_single(counts[v] + delta) - _is_single(counts[v])
    return change


@njit(**_OPTS)
def couple_uniform_kernel(x, u, pi, m, out_y, out_ysb, out_i, out_n, out_b, out_j):
    """Uniform-case coupling; ``u[r] = (u_I, u_B, u_J)``.

    ``x`` has one row per draw, or a single row reused for every draw.
    """
    draws = u.shape[0]
    n = x.shape[1]
    counts = np.zeros(m, dtype=np.int64)
    last = -1
    y = 0
    for r in range(draws):
        xr = r if x.shape[0] > 1 else 0
        row = x[xr]
        if xr != last:
            _fill_counts(row, counts)
            y = n - _singles(row, counts)
            last = xr
        i = _pick(u[r, 0], n)
        mi = counts[row[i]] - 1
        b = u[r, 1] < pi[mi]
        j = _pick_other(u[r, 2], n, i)
        ysb = y
        if b:
            src = row[j]
            dst = row[i]
            if src != dst:
                before = _is_single(counts[src]) + _is_single(counts[dst])
                after = _is_single(counts[src] - 1) + _is_single(counts[dst] + 1)
                ysb = y - (after - before)
        out_y[r] = y
        out_ysb[r] = ysb
        out_i[r] = i
        out_n[r] = mi
        out_b[r] = b
        out_j[r] = j


@njit(**_OPTS)
def couple_general_kernel(x, u, hat_cdf, pi, group, m, out_y, out_ysb, out_i, out_x0, out_n, out_b, out_j):
    """General coupling; ``u[r] = (u_I, u_X0, u_B, u_J)``.

    ``pi[group[x], k]`` is the import probability for urn ``x`` at co-occupancy ``k``.
    """
    draws = u.shape[0]
    n = x.shape[1]
    counts = np.zeros(m, dtype=np.int64)
    last = -1
    y = 0
    for r in range(draws):
        xr = r if x.shape[0] > 1 else 0
        row = x[xr]
        if xr != last:
            # urns outside the row are read below, so keep them at zero
            if last >= 0:
                _clear(x[last], counts)
            _fill_counts(row, counts)
            y = n - _singles(row, counts)
            last = xr
        i = _pick(u[r, 0], n)
        x0 = np.searchsorted(hat_cdf, u[r, 1], side="right")
        if x0 > m - 1:
            x0 = m - 1
        a = row[i]
        nn = counts[x0] + (1 if a != x0 else 0) - 1
        b = u[r, 2] < pi[group[x0], nn]
        j = -1
        c = -1
        if b:
            j = _pick_other(u[r, 3], n, i)
            c = row[j]
        ysb = y - _singles_change(counts, a, x0, c)
        out_y[r] = y
        out_ysb[r] = ysb
        out_i[r] = i
        out_x0[r] = x0
        out_n[r] = nn
        out_b[r] = b
        out_j[r] = j


@njit(**_OPTS)
def cond_increment_uniform_kernel(x, pi, m, out):
    """Closed-form ``E[Y'' - Y | X]`` for the uniform coupler, one value per row."""
    b, n = x.shape
    counts = np.zeros(m, dtype=np.int64)
    for r in range(b):
        row = x[r]
        _fill_counts(row, counts)
        sv = 0.0
        st = 0.0
        svt = 0.0
        svtau = 0.0
        for i in range(n):
            mi = counts[row[i]] - 1
            v = pi[mi]
            t = 1.0 if mi == 0 else (-1.0 if mi == 1 else 0.0)
            tau = 1.0 if mi == 0 else (1.0 / (n - 1) if mi == 1 else 0.0)
            sv += v
            st += t
            svt += v * t
            svtau += v * tau
        out[r] = svtau / n + (sv * st - svt) / (n * (n - 1.0))


@njit(**_OPTS)
def cond_increment_general_kernel(x, hat, group, h4, h5, h7, h0, h6, s5_empty, m, out):
    """Closed-form ``E[Y'' - Y | X]`` for the general coupler.

    ``h4/h5/h7`` are indexed ``[group[x], k]``; ``s5_empty`` is
    ``sum_x hat_x h5(0, x)`` (empty urns contribute to that sum only).
    """
    b, n = x.shape
    counts = np.zeros(m, dtype=np.int64)
    seen = np.zeros(m, dtype=np.bool_)
    for r in range(b):
        row = x[r]
        _fill_counts(row, counts)
        for i in range(n):
            seen[row[i]] = False
        s5 = s5_empty
        s4 = 0.0
        s7 = 0.0
        sh0 = 0.0
        sh6 = 0.0
        for i in range(n):
            xi = row[i]
            k = counts[xi]
            sh0 += h0[k - 1]
            sh6 += h6[k - 1]
            if not seen[xi]:
                seen[xi] = True
                g = group[xi]
                s5 += hat[xi] * (h5[g, k] - h5[g, 0])
                s4 += hat[xi] * h4[g, k]
                s7 += hat[xi] * h7[g, k]
        out[r] = 2.0 + s5 * sh6 / n + s7 - s4 * sh0 / n - 2.0 * sh0 / n
