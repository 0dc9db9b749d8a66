"""Compiled event loops (direct-method Gillespie on integer counts).

Both kernels draw exactly one exponential and one uniform per event, in
the same order, so the free and reflected variants consume identical random
streams until the first suppressed jump.
"""
from __future__ import annotations

import numpy as np
from numba import njit

FREE = 0        # leaving A is an error
UNBOUNDED = 1   # no state constraint (test networks only)
SIMPLEX = 2     # reflect at the faces of A
MASK = 3        # reflect at a 2-d lattice mask of the closed domain

ERR_NONE = -1


@njit(cache=True, inline="always")
def _rates(x, N, coef, zexp, sexp, out):
    d = x.shape[0]
    tot = 0.0
    rest = N
    for i in range(d):
        rest -= x[i]
    s = rest / N
    for j in range(coef.shape[0]):
        r = coef[j]
        for i in range(d):
            e = zexp[j, i]
            if e > 0:
                zi = x[i] / N
                for _ in range(e):
                    r *= zi
        for _ in range(sexp[j]):
            r *= s
        if r < 0.0:
            r = 0.0
        out[j] = r
        tot += r
    return tot


@njit(cache=True, inline="always")
def _admissible(x, h, N, mode, mask):
    """1 if x + h is admissible, 0 if it must be suppressed, -1 if it is a
    violation of A in free mode."""
    d = x.shape[0]
    if mode == UNBOUNDED:
        return 1
    tot = 0
    for i in range(d):
        c = x[i] + h[i]
        if c < 0:
            return -1 if mode == FREE else 0
        tot += c
    if tot > N:
        return -1 if mode == FREE else 0
    if mode == MASK:
        return 1 if mask[x[0] + h[0], x[1] + h[1]] else 0
    return 1


@njit(cache=True, inline="always")
def _n_blocked(x, jumps, N, mode, mask):
    n = 0
    if mode == FREE or mode == UNBOUNDED:
        return 0
    for j in range(jumps.shape[0]):
        if _admissible(x, jumps[j], N, mode, mask) == 0:
            n += 1
    return n


@njit(cache=True, inline="always")
def _pick(rates, tot, u):
    target = u * tot
    acc = 0.0
    k = rates.shape[0]
    last = 0
    for j in range(k):
        if rates[j] > 0.0:
            last = j
            acc += rates[j]
            if target < acc:
                return j
    return last


@njit(cache=True, nogil=True)
def path_kernel(rng, x0, N, T, jumps, coef, zexp, sexp, mode, mask, capacity):
    """Full event record: times, transition index, applied flag, state after."""
    d = x0.shape[0]
    k = coef.shape[0]
    x = x0.copy()
    rates = np.empty(k)
    times = np.empty(capacity)
    js = np.empty(capacity, np.int64)
    applied = np.empty(capacity, np.bool_)
    states = np.empty((capacity, d), np.int64)
    n = 0
    t = 0.0
    err = ERR_NONE
    while True:
        tot = _rates(x, N, coef, zexp, sexp, rates)
        if tot <= 0.0:
            break
        t += rng.exponential() / (N * tot)
        if t > T:
            break
        j = _pick(rates, tot, rng.random())
        ok = _admissible(x, jumps[j], N, mode, mask)
        if ok < 0:
            err = j
            break
        if n == times.shape[0]:
            cap = 2 * times.shape[0] + 16
            t2 = np.empty(cap)
            t2[:n] = times[:n]
            j2 = np.empty(cap, np.int64)
            j2[:n] = js[:n]
            a2 = np.empty(cap, np.bool_)
            a2[:n] = applied[:n]
            s2 = np.empty((cap, d), np.int64)
            s2[:n] = states[:n]
            times, js, applied, states = t2, j2, a2, s2
        if ok == 1:
            for i in range(d):
                x[i] += jumps[j, i]
        times[n] = t
        js[n] = j
        applied[n] = ok == 1
        states[n] = x
        n += 1
    return times[:n], js[:n], applied[:n], states[:n], err


@njit(cache=True, inline="always")
def _dist_to(x, N, ref_z, p, w):
    # |x/N - ((1-w) ref_z[p] + w ref_z[p+1])|
    d = x.shape[0]
    acc = 0.0
    for i in range(d):
        y = ref_z[p, i]
        if w != 0.0:
            y = (1.0 - w) * y + w * ref_z[p + 1, i]
        diff = x[i] / N - y
        acc += diff * diff
    return np.sqrt(acc)


@njit(cache=True, inline="always")
def _interval_sup(x, N, ref_t, ref_z, p, t0, t1):
    """sup over [t0, t1] of |x/N - Y(t)| for piecewise-linear Y; returns
    (sup, new pointer) where the pointer indexes the segment containing t1."""
    m = ref_t.shape[0]
    best = 0.0
    # value at t0
    while p < m - 2 and ref_t[p + 1] <= t0:
        p += 1
    span = ref_t[p + 1] - ref_t[p]
    w = (t0 - ref_t[p]) / span if span > 0 else 0.0
    w = min(max(w, 0.0), 1.0)
    v = _dist_to(x, N, ref_z, p, w)
    if v > best:
        best = v
    # interior breakpoints
    while p < m - 2 and ref_t[p + 1] <= t1:
        p += 1
        v = _dist_to(x, N, ref_z, p, 0.0)
        if v > best:
            best = v
    span = ref_t[p + 1] - ref_t[p]
    w = (t1 - ref_t[p]) / span if span > 0 else 0.0
    w = min(max(w, 0.0), 1.0)
    v = _dist_to(x, N, ref_z, p, w)
    if v > best:
        best = v
    return best, p


@njit(cache=True, nogil=True)
def summary_kernel(rng, x0, N, T, jumps, coef, zexp, sexp, mode, mask,
                   ref_t, ref_z, threshold, n_slices):
    """One replicate, summarised without storing the path.

    Returns (sup_dist, exited, occupation, n_events, n_suppressed, err,
    final, slice_counts, slice_suppressed, slice_osc, grid_states).

    sup_dist: sup_t |Z(t) - Y(t)| for the reference Y (stops early once it
    reaches ``threshold``, flagged by ``exited``).  occupation: integral of
    the number of blocked transitions.  Slices split [0, T] into
    ``n_slices`` equal parts: stream counts (applied or not), whether any
    suppression happened, coordinate-wise oscillation, and the state at
    each slice boundary.
    """
    d = x0.shape[0]
    k = coef.shape[0]
    x = x0.copy()
    rates = np.empty(k)
    use_ref = ref_t.shape[0] >= 2
    counts = np.zeros((n_slices, k), np.int64)
    supp = np.zeros(n_slices, np.bool_)
    osc = np.zeros((n_slices, d))
    grid = np.empty((n_slices + 1, d), np.int64)
    lo = np.empty(d, np.int64)
    hi = np.empty(d, np.int64)
    for i in range(d):
        lo[i] = x[i]
        hi[i] = x[i]
    grid[0] = x
    width = T / n_slices
    cur = 0
    sup = 0.0
    exited = False
    occ = 0.0
    n_ev = 0
    n_sup = 0
    err = ERR_NONE
    p = 0
    t = 0.0
    blocked = _n_blocked(x, jumps, N, mode, mask)
    while True:
        tot = _rates(x, N, coef, zexp, sexp, rates)
        if tot > 0.0:
            t_next = t + rng.exponential() / (N * tot)
        else:
            t_next = np.inf
        t_end = min(t_next, T)
        occ += blocked * (t_end - t)
        if use_ref:
            v, p = _interval_sup(x, N, ref_t, ref_z, p, t, t_end)
            if v > sup:
                sup = v
            if sup >= threshold:
                exited = True
                break
        # close slices that end before the next event
        while cur < n_slices and (cur + 1) * width < t_next:
            for i in range(d):
                osc[cur, i] = (hi[i] - lo[i]) / N
                lo[i] = x[i]
                hi[i] = x[i]
            cur += 1
            grid[cur] = x
        if t_next > T:
            break
        t = t_next
        j = _pick(rates, tot, rng.random())
        ok = _admissible(x, jumps[j], N, mode, mask)
        if ok < 0:
            err = j
            break
        n_ev += 1
        sl = min(cur, n_slices - 1)
        counts[sl, j] += 1
        if ok == 1:
            for i in range(d):
                x[i] += jumps[j, i]
                if x[i] < lo[i]:
                    lo[i] = x[i]
                if x[i] > hi[i]:
                    hi[i] = x[i]
            blocked = _n_blocked(x, jumps, N, mode, mask)
        else:
            n_sup += 1
            supp[sl] = True
    while cur < n_slices:
        for i in range(d):
            osc[cur, i] = (hi[i] - lo[i]) / N
            lo[i] = x[i]
            hi[i] = x[i]
        cur += 1
        grid[cur] = x
    return sup, exited, occ, n_ev, n_sup, err, x, counts, supp, osc, grid
