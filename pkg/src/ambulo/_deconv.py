"""Compiled kernels for Bateman-IRF convolution and nonnegative sparse deconvolution,
plus the linear-time window helpers shared by the rolling features.

The sampled Bateman kernel is a difference of two geometric sequences, so
convolving with it is a second-order recursive filter::

    y[n] = g0 * x[n-1] + a1 * y[n-1] - a2 * y[n-2]

which makes both the forward operator K and its adjoint K^T linear time.
"""

from __future__ import annotations

import numba as nb
import numpy as np


@nb.njit(cache=True)
def irf_forward(x, out, g0, a1, a2):
    y1 = 0.0
    y2 = 0.0
    xp = 0.0
    for i in range(x.size):
        y = g0 * xp + a1 * y1 - a2 * y2
        out[i] = y
        y2 = y1
        y1 = y
        xp = x[i]


@nb.njit(cache=True)
def irf_adjoint(x, out, g0, a1, a2):
    y1 = 0.0
    y2 = 0.0
    xp = 0.0
    for i in range(x.size - 1, -1, -1):
        y = g0 * xp + a1 * y1 - a2 * y2
        out[i] = y
        y2 = y1
        y1 = y
        xp = x[i]


@nb.njit(cache=True)
def _prox_step(src, grad, lam, inv_l, out):
    s = 0.0
    for i in range(src.size):
        v = src[i] - (2.0 * grad[i] + lam) * inv_l
        if v < 0.0:
            v = 0.0
        out[i] = v
        s += v
    return s


@nb.njit(cache=True)
def _objective(kx, r, lam_sum):
    f = lam_sum
    for i in range(r.size):
        e = kx[i] - r[i]
        f += e * e
    return f


@nb.njit(cache=True)
def solve_nonneg_l1(r, lam, g0, a1, a2, max_iter, tol):
    """Minimize ||K d - r||^2 + lam * sum(d) subject to d >= 0.

    Accelerated projected gradient with function-value restart: whenever the
    momentum step would raise the objective, the iterate is replaced by a plain
    projected-gradient step from the current point, so the objective sequence
    is nonincreasing. Step 1/L with L = 2 is valid because the kernel is
    nonnegative with unit DC gain (||K|| <= 1).

    Returns (d, objective, iterations, converged).
    """
    n = r.size
    inv_l = 0.5
    x = np.zeros(n)
    xp = np.zeros(n)
    kx = np.zeros(n)
    kxp = np.zeros(n)
    y = np.zeros(n)
    res = np.zeros(n)
    g = np.zeros(n)
    xn = np.zeros(n)
    kxn = np.zeros(n)
    f = 0.0
    for i in range(n):
        f += r[i] * r[i]
    if f == 0.0:
        return x, 0.0, 0, True
    t = 1.0
    it = 0
    converged = False
    while it < max_iter:
        it += 1
        tn = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        beta = (t - 1.0) / tn
        for i in range(n):
            y[i] = x[i] + beta * (x[i] - xp[i])
            res[i] = kx[i] + beta * (kx[i] - kxp[i]) - r[i]
        irf_adjoint(res, g, g0, a1, a2)
        s = _prox_step(y, g, lam, inv_l, xn)
        irf_forward(xn, kxn, g0, a1, a2)
        fn = _objective(kxn, r, lam * s)
        if fn > f:
            tn = 1.0
            for i in range(n):
                res[i] = kx[i] - r[i]
            irf_adjoint(res, g, g0, a1, a2)
            s = _prox_step(x, g, lam, inv_l, xn)
            irf_forward(xn, kxn, g0, a1, a2)
            fn = _objective(kxn, r, lam * s)
            if fn > f:
                # no descent possible at machine precision
                converged = True
                break
        rel = abs(f - fn) / max(abs(f), 1e-300)
        for i in range(n):
            xp[i] = x[i]
            kxp[i] = kx[i]
            x[i] = xn[i]
            kx[i] = kxn[i]
        f = fn
        t = tn
        if rel < tol:
            converged = True
            break
    return x, f, it, converged


@nb.njit(cache=True)
def region_amplitudes(driver, starts, ends, tail, g0, a1, a2):
    """Peak of the IRF response to each isolated driver region.

    ``starts``/``ends`` are inclusive sample indices. The response is followed
    ``tail`` samples past the region end. Returns (amplitude, peak_index).
    """
    m = starts.size
    amp = np.zeros(m)
    peak = np.zeros(m, dtype=np.int64)
    n = driver.size
    for k in range(m):
        s = starts[k]
        e = ends[k]
        stop = min(n, e + 1 + tail)
        y1 = 0.0
        y2 = 0.0
        xp = 0.0
        best = -1.0
        bi = s
        for i in range(s, stop):
            y = g0 * xp + a1 * y1 - a2 * y2
            if y > best:
                best = y
                bi = i
            y2 = y1
            y1 = y
            xp = driver[i] if i <= e else 0.0
        amp[k] = best
        peak[k] = bi
    return amp, peak


@nb.njit(cache=True)
def rolling_rmssd_pass(t, ibi, first_end, step_ms, n_ends, win_ms, min_pairs):
    """One pass over window ends ``first_end + k * step_ms`` and the beats.

    Pair j (beats j and j+1) is in the window (end - win_ms, end] when both
    beats are. The squared differences are kept as a compensated running sum
    that gains pairs on the right and drops them on the left. Returns the
    ends, RMSSD and pair counts of windows with at least ``min_pairs`` pairs.
    """
    out_t = np.empty(n_ends, dtype=np.int64)
    out_v = np.empty(n_ends)
    out_n = np.empty(n_ends, dtype=np.int64)
    n = t.size
    lo = 0  # first beat strictly after end - win
    hi = 0  # one past the last beat at or before end
    a = 0  # pairs [a, b) are in the running sum
    b = 0
    s = 0.0
    c = 0.0
    m = 0
    for k in range(n_ends):
        end = first_end + k * step_ms
        while hi < n and t[hi] <= end:
            hi += 1
        while lo < n and t[lo] <= end - win_ms:
            lo += 1
        top = max(hi - 1, lo)  # pairs [lo, top) belong to this window
        if b < lo:
            # the window jumped past everything summed so far
            a = lo
            b = lo
            s = 0.0
            c = 0.0
        while b < top:
            d = ibi[b + 1] - ibi[b]
            x = d * d
            tt = s + x
            if abs(s) >= abs(x):
                c += (s - tt) + x
            else:
                c += (x - tt) + s
            s = tt
            b += 1
        while a < lo:
            d = ibi[a + 1] - ibi[a]
            x = -(d * d)
            tt = s + x
            if abs(s) >= abs(x):
                c += (s - tt) + x
            else:
                c += (x - tt) + s
            s = tt
            a += 1
        pairs = b - a
        if pairs >= min_pairs:
            total = s + c
            out_t[m] = end
            out_v[m] = np.sqrt(total / pairs) if total > 0.0 else 0.0
            out_n[m] = pairs
            m += 1
    return out_t[:m].copy(), out_v[:m].copy(), out_n[:m].copy()


@nb.njit(cache=True)
def _neumaier(s, c, x):
    t = s + x
    if abs(s) >= abs(x):
        c += (s - t) + x
    else:
        c += (x - t) + s
    return t, c


@nb.njit(cache=True)
def eda_feature_pass(t, d, tonic, first_end, step_ms, n_ends, win_ms, ev_t, ev_amp, ev_csum):
    """One pass over window ends ``first_end + k * step_ms`` within one segment.

    Keeps compensated running sums of the driver, its square, the trapezoid
    pair areas over the closed window and the tonic level, each gaining samples
    on the right and dropping them on the left. Returns per-window sd, ISCR,
    event count, max and summed event amplitude, and mean tonic level.
    """
    n = t.size
    sd = np.empty(n_ends)
    iscr = np.empty(n_ends)
    mean_scl = np.empty(n_ends)
    n_scr = np.empty(n_ends, dtype=np.int64)
    sum_amp = np.empty(n_ends)
    max_amp = np.empty(n_ends)
    lo = 0  # first sample strictly after end - win
    lo_c = 0  # first sample at or after end - win
    hi = 0  # one past the last sample at or before end
    a1 = 0
    b1 = 0
    a2 = 0
    b2 = 0
    s1 = 0.0
    c1 = 0.0
    s2 = 0.0
    c2 = 0.0
    si = 0.0
    ci = 0.0
    st = 0.0
    ct = 0.0
    last_change = 0  # newest j <= hi - 1 with d[j] != d[j - 1]
    elo = 0
    ehi = 0
    ne = ev_t.size
    for k in range(n_ends):
        end = first_end + k * step_ms
        start = end - win_ms
        while hi < n and t[hi] <= end:
            if hi > 0 and d[hi] != d[hi - 1]:
                last_change = hi
            hi += 1
        while lo < n and t[lo] <= start:
            lo += 1
        while lo_c < n and t[lo_c] < start:
            lo_c += 1
        while b1 < hi:
            x = d[b1]
            s1, c1 = _neumaier(s1, c1, x)
            s2, c2 = _neumaier(s2, c2, x * x)
            st, ct = _neumaier(st, ct, tonic[b1])
            b1 += 1
        while a1 < lo:
            x = d[a1]
            s1, c1 = _neumaier(s1, c1, -x)
            s2, c2 = _neumaier(s2, c2, -(x * x))
            st, ct = _neumaier(st, ct, -tonic[a1])
            a1 += 1
        while b2 < hi - 1:
            x = (t[b2 + 1] - t[b2]) / 1000.0 * 0.5 * (d[b2 + 1] + d[b2])
            si, ci = _neumaier(si, ci, x)
            b2 += 1
        while a2 < lo_c:
            x = (t[a2 + 1] - t[a2]) / 1000.0 * 0.5 * (d[a2 + 1] + d[a2])
            si, ci = _neumaier(si, ci, -x)
            a2 += 1
        cnt = hi - lo
        if cnt > 1 and last_change > lo:
            v1 = s1 + c1
            var = ((s2 + c2) - v1 * v1 / cnt) / (cnt - 1)
            sd[k] = np.sqrt(var) if var > 0.0 else 0.0
        else:
            # exact zero for windows holding a single repeated value
            sd[k] = 0.0
        iscr[k] = si + ci
        mean_scl[k] = (st + ct) / cnt
        while ehi < ne and ev_t[ehi] <= end:
            ehi += 1
        while elo < ne and ev_t[elo] <= start:
            elo += 1
        n_scr[k] = ehi - elo
        sum_amp[k] = ev_csum[ehi] - ev_csum[elo]
        m = 0.0
        for j in range(elo, ehi):
            if ev_amp[j] > m:
                m = ev_amp[j]
        max_amp[k] = m
    return sd, iscr, n_scr, max_amp, sum_amp, mean_scl
