"""JIT-compiled inner loop of the thinning simulator.

The driver walks a pre-drawn block of candidate events.  Candidate k
carries an arrival time, a flat (vertex, channel) index drawn
proportionally to the per-channel rate bounds, and a uniform mark u.
The candidate fires for the empirical process when

    u * bound(i, c) < q_c(phi_i(tau-)) * [state_i == from-state]

and, in coupled mode, *the same mark* decides the auxiliary process
against q_c evaluated on the interpolated mean-field neighborhood.
Sharing marks realizes the symmetric-difference coupling: the two
processes make different decisions with probability |q - q_hat| / bound.

Everything lives in flat arrays so the loop compiles; the pure-Python
fallback (when numba is unavailable) runs the identical code, just
slowly.
"""

from __future__ import annotations

import math

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]):
            return args[0]

        def wrap(f):
            return f

        return wrap


STATUS_DONE = 0          # reached t_end
STATUS_EXHAUSTED = 1     # candidate block consumed before t_end
STATUS_BAD_RATE = 3      # negative / non-finite rate or certified bound violated


@njit(cache=True, nogil=True)
def thinning_block(
    times,
    chan_flat,
    marks,
    t_end,
    # channel table
    n_ch,
    ch_from,
    ch_to,
    ch_kind,
    ch_q0,
    coef_indptr,
    coef_col,
    coef_val,
    lam_flat,
    # empirical process
    state_xi,
    phi_flat,
    D,
    S,
    # order-1 incremental updates (CSC columns of the weight matrix)
    g_indptr,
    g_rows,
    g_vals,
    # higher-order incremental updates
    hi_indptr,
    hi_edge,
    hi_stride,
    e_head,
    e_w,
    e_off,
    e_tupidx,
    # auxiliary process driven by interpolated mean-field neighborhoods
    coupled,
    state_hat,
    kt,
    kv,
    kd,
    zcursor,
    # outputs
    ev_t,
    ev_i,
    ev_f,
    ev_s,
    hv_t,
    hv_i,
    hv_f,
    hv_s,
    dis_time,
):
    n_ev = 0
    n_hv = 0
    nk = len(kt)
    for k in range(len(times)):
        tau = times[k]
        if tau >= t_end:
            return k, n_ev, n_hv, t_end, zcursor, STATUS_DONE
        f = chan_flat[k]
        i = f // n_ch
        c = f - i * n_ch
        sf = ch_from[c]
        st = ch_to[c]
        lam = lam_flat[f]
        thresh = marks[k] * lam

        acc_xi = False
        if state_xi[i] == sf:
            base = i * D
            s = 0.0
            for p in range(coef_indptr[c], coef_indptr[c + 1]):
                s += coef_val[p] * phi_flat[base + coef_col[p]]
            q = ch_q0[c] + s if ch_kind[c] == 0 else ch_q0[c] * math.exp(s)
            if not (q >= 0.0) or q > lam * (1.0 + 1e-9) or not math.isfinite(q):
                return k, n_ev, n_hv, tau, zcursor, STATUS_BAD_RATE
            if thresh < q:
                acc_xi = True

        acc_hat = False
        if coupled and state_hat[i] == sf:
            while zcursor + 2 < nk and kt[zcursor + 1] < tau:
                zcursor += 1
            hstep = kt[zcursor + 1] - kt[zcursor]
            th = (tau - kt[zcursor]) / hstep
            if th < 0.0:
                th = 0.0
            elif th > 1.0:
                th = 1.0
            th2 = th * th
            th3 = th2 * th
            c00 = 2 * th3 - 3 * th2 + 1
            c10 = (th3 - 2 * th2 + th) * hstep
            c01 = -2 * th3 + 3 * th2
            c11 = (th3 - th2) * hstep
            base = i * D
            s = 0.0
            for p in range(coef_indptr[c], coef_indptr[c + 1]):
                col = base + coef_col[p]
                zval = (
                    c00 * kv[zcursor, col]
                    + c10 * kd[zcursor, col]
                    + c01 * kv[zcursor + 1, col]
                    + c11 * kd[zcursor + 1, col]
                )
                s += coef_val[p] * zval
            qh = ch_q0[c] + s if ch_kind[c] == 0 else ch_q0[c] * math.exp(s)
            if not (qh >= -1e-12) or not math.isfinite(qh):
                return k, n_ev, n_hv, tau, zcursor, STATUS_BAD_RATE
            if thresh < qh:
                acc_hat = True

        if acc_xi:
            ev_t[n_ev] = tau
            ev_i[n_ev] = i
            ev_f[n_ev] = sf
            ev_s[n_ev] = st
            n_ev += 1
            state_xi[i] = st
            for p in range(g_indptr[i], g_indptr[i + 1]):
                r = g_rows[p]
                w = g_vals[p]
                rb = r * D
                phi_flat[rb + sf] -= w
                phi_flat[rb + st] += w
            diff = st - sf
            for p in range(hi_indptr[i], hi_indptr[i + 1]):
                e = hi_edge[p]
                old = e_tupidx[e]
                new = old + diff * hi_stride[p]
                b = e_head[e] * D + e_off[e]
                w = e_w[e]
                phi_flat[b + old] -= w
                phi_flat[b + new] += w
                e_tupidx[e] = new

        if acc_hat:
            hv_t[n_hv] = tau
            hv_i[n_hv] = i
            hv_f[n_hv] = sf
            hv_s[n_hv] = st
            n_hv += 1
            state_hat[i] = st

        if coupled and (acc_xi or acc_hat):
            if dis_time[i] == np.inf and state_xi[i] != state_hat[i]:
                dis_time[i] = tau

    last_t = times[len(times) - 1] if len(times) else t_end
    return len(times), n_ev, n_hv, last_t, zcursor, STATUS_EXHAUSTED
