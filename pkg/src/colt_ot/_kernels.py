"""Compiled inner loops.

Everything here works on raw float64 arrays and writes into caller-owned
buffers. The public wrappers in :mod:`colt_ot.colt`, :mod:`colt_ot.block`
and :mod:`colt_ot.solvers` do validation and allocation.

Indexing is 0-based throughout. For a lower part ``(g, r)`` the dense entry
is ``m[i, j] = g[j] * prod(r[j:i])`` for ``j <= i``; for an upper part
``(gp, rp)`` it is ``m[i, j] = gp[j - 1] * prod(rp[i:j - 1])`` for ``i < j``.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def lcmv(g, r, y, out):
    n = y.shape[0]
    acc = g[0] * y[0]
    out[0] = acc
    for i in range(1, n):
        acc = r[i - 1] * acc + g[i] * y[i]
        out[i] = acc


@njit(cache=True)
def ucmv(gp, rp, y, out):
    n = y.shape[0]
    out[n - 1] = 0.0
    if n < 2:
        return
    acc = gp[n - 2] * y[n - 1]
    out[n - 2] = acc
    for i in range(n - 3, -1, -1):
        acc = rp[i] * acc + gp[i] * y[i + 1]
        out[i] = acc


@njit(cache=True)
def cmv(g, r, gp, rp, y, out):
    """out = (L + U) y, fused so only one output buffer is needed."""
    n = y.shape[0]
    acc = g[0] * y[0]
    out[0] = acc
    for i in range(1, n):
        acc = r[i - 1] * acc + g[i] * y[i]
        out[i] = acc
    if n < 2:
        return
    acc = gp[n - 2] * y[n - 1]
    out[n - 2] += acc
    for i in range(n - 3, -1, -1):
        acc = rp[i] * acc + gp[i] * y[i + 1]
        out[i] += acc


@njit(cache=True)
def row_costs(g, r, gp, rp, h, out):
    """Per-row sums of ``C * M`` with ``C[i, j] = h * |i - j|``.

    ``p`` carries the weighted lower-row cost and ``pw`` the plain lower row
    sum times ``h``; ``q``/``qw`` are the same for the strictly upper part.
    """
    n = g.shape[0]
    p = 0.0
    pw = h * g[0]
    out[0] = 0.0
    for i in range(1, n):
        p = r[i - 1] * (p + pw)
        pw = r[i - 1] * pw + h * g[i]
        out[i] = p
    if n < 2:
        return
    q = h * gp[n - 2]
    qw = q
    out[n - 2] += q
    for i in range(n - 3, -1, -1):
        q = rp[i] * (q + qw) + h * gp[i]
        qw = rp[i] * qw + h * gp[i]
        out[i] += q


@njit(cache=True)
def w1_colt(g, r, gp, rp, h):
    out = np.empty(g.shape[0])
    row_costs(g, r, gp, rp, h, out)
    return out.sum()


# ---------------------------------------------------------------------------
# block matrices: diagonal blocks stacked row-wise, shape (m, n) / (m, n-1) ...


@njit(cache=True)
def block_cmv(g, r, gp, rp, bl, bu, x, out, work):
    """Block recursion; ``work`` is an (m, n) scratch buffer."""
    m, n = g.shape
    for k in range(m):
        cmv(g[k], r[k], gp[k], rp[k], x[k * n:(k + 1) * n], work[k])
    for i in range(n):
        out[i] = work[0, i]
    for k in range(1, m):
        base = k * n
        prev = base - n
        for i in range(n):
            out[base + i] = bl[k - 1, i] * out[prev + i] + work[k, i]
    # upper: q_{k-1} = bu[k-1] * (q_k + A_kk x_k), q_{m-1} = 0
    q = np.zeros(n)
    for k in range(m - 1, 0, -1):
        base = (k - 1) * n
        for i in range(n):
            q[i] = bu[k - 1, i] * (q[i] + work[k, i])
            out[base + i] += q[i]


@njit(cache=True)
def block_w1(g, r, gp, rp, bl, bu, h1, h2):
    m, n = g.shape
    cost = np.empty((m, n))
    mass = np.empty((m, n))
    ones = np.ones(n)
    for k in range(m):
        row_costs(g[k], r[k], gp[k], rp[k], h1, cost[k])
        cmv(g[k], r[k], gp[k], rp[k], ones, mass[k])
    total = 0.0
    # lower blocks (including the diagonal)
    pc = np.zeros(n)
    ps = np.zeros(n)
    pt = np.zeros(n)
    for k in range(m):
        for i in range(n):
            if k == 0:
                pc[i] = cost[0, i]
                ps[i] = mass[0, i]
                pt[i] = 0.0
            else:
                rl = bl[k - 1, i]
                pt[i] = rl * (pt[i] + ps[i])
                pc[i] = rl * pc[i] + cost[k, i]
                ps[i] = rl * ps[i] + mass[k, i]
            total += pc[i] + h2 * pt[i]
    # strictly upper blocks
    qc = np.zeros(n)
    qs = np.zeros(n)
    qt = np.zeros(n)
    for k in range(m - 2, -1, -1):
        for i in range(n):
            ru = bu[k, i]
            qt[i] = ru * (qt[i] + qs[i] + mass[k + 1, i])
            qc[i] = ru * (qc[i] + cost[k + 1, i])
            qs[i] = ru * (qs[i] + mass[k + 1, i])
            total += qc[i] + h2 * qt[i]
    return total


# ---------------------------------------------------------------------------
# solver steps

# Ratios of far-off-support plan entries decay geometrically with the outer
# step and would underflow to 0 after a few hundred steps. They are floored
# at the smallest normal double so every ratio stays nonzero.
TINY = np.finfo(np.float64).tiny


@njit(cache=True)
def _floor(x):
    return x if x > TINY else TINY


@njit(cache=True)
def scaling_sweeps(u, v, phi, psi, q, qt, n_sweeps, rowsum, colsum):
    """Alternate psi <- v / (Q^T phi), phi <- u / (Q psi).

    ``q`` and ``qt`` are 4-tuples (g, r, gp, rp) for Q and its transpose.
    Returns False if a zero or non-finite denominator appears. On success
    ``rowsum``/``colsum`` hold the marginals of diag(phi) Q diag(psi).
    """
    n = u.shape[0]
    buf = np.empty(n)
    for _ in range(n_sweeps):
        cmv(qt[0], qt[1], qt[2], qt[3], phi, buf)
        for i in range(n):
            d = buf[i]
            if not (d > 0.0) or not np.isfinite(d):
                return False
            psi[i] = v[i] / d
        cmv(q[0], q[1], q[2], q[3], psi, buf)
        for i in range(n):
            d = buf[i]
            if not (d > 0.0) or not np.isfinite(d):
                return False
            phi[i] = u[i] / d
    cmv(q[0], q[1], q[2], q[3], psi, buf)
    for i in range(n):
        rowsum[i] = phi[i] * buf[i]
    cmv(qt[0], qt[1], qt[2], qt[3], phi, buf)
    for i in range(n):
        colsum[i] = psi[i] * buf[i]
    return True


@njit(cache=True)
def proximal_update(phi, psi, lam, g, al, gp, au, bl, gpp, bu, plan):
    """Form the plan diag(phi) Q diag(psi) and the next Q = K(lam) * plan.

    All arrays are updated in place. ``plan`` is the 4-tuple receiving the
    plan's lower/upper representation.
    """
    n = phi.shape[0]
    pg, pr, pgp, prp = plan
    for i in range(n):
        pg[i] = phi[i] * psi[i] * g[i]
        g[i] = pg[i]
    for i in range(n - 1):
        pr[i] = _floor(al[i] * phi[i + 1] / phi[i])
        al[i] = _floor(lam * pr[i])
        bl[i] = _floor(lam * bl[i] * psi[i + 1] / psi[i])
        pgp[i] = gp[i] * phi[i] * psi[i + 1]
        gp[i] = lam * pgp[i]
        gpp[i] = lam * gpp[i] * phi[i + 1] * psi[i]
    for i in range(n - 2):
        prp[i] = _floor(au[i] * phi[i] / phi[i + 1])
        au[i] = _floor(lam * prp[i])
        bu[i] = _floor(lam * bu[i] * psi[i] / psi[i + 1])


@njit(cache=True)
def block_scaling_sweeps(u, v, phi, psi, q, qt, n_sweeps, rowsum, colsum):
    """Two-dimensional analogue of :func:`scaling_sweeps`.

    ``q``/``qt`` are 6-tuples (g, r, gp, rp, bl, bu) of stacked arrays.
    """
    m, n = q[0].shape
    total = m * n
    buf = np.empty(total)
    work = np.empty((m, n))
    for _ in range(n_sweeps):
        block_cmv(qt[0], qt[1], qt[2], qt[3], qt[4], qt[5], phi, buf, work)
        for i in range(total):
            d = buf[i]
            if not (d > 0.0) or not np.isfinite(d):
                return False
            psi[i] = v[i] / d
        block_cmv(q[0], q[1], q[2], q[3], q[4], q[5], psi, buf, work)
        for i in range(total):
            d = buf[i]
            if not (d > 0.0) or not np.isfinite(d):
                return False
            phi[i] = u[i] / d
    block_cmv(q[0], q[1], q[2], q[3], q[4], q[5], psi, buf, work)
    for i in range(total):
        rowsum[i] = phi[i] * buf[i]
    block_cmv(qt[0], qt[1], qt[2], qt[3], qt[4], qt[5], phi, buf, work)
    for i in range(total):
        colsum[i] = psi[i] * buf[i]
    return True


@njit(cache=True)
def block_proximal_update(phi, psi, lam1, lam2, q, qt, plan):
    """Block version of :func:`proximal_update`.

    ``q`` = (g, al, gp, au, AL, AU), ``qt`` = (gpp, bl, bu, BL, BU) (the
    transpose shares the diagonal ``g``), ``plan`` = (g, r, gp, rp, RL, RU).
    """
    g, al, gp, au, AL, AU = q
    gpp, bl, bu, BL, BU = qt
    pg, pr, pgp, prp, PL, PU = plan
    m, n = g.shape
    for k in range(m):
        f = phi[k * n:(k + 1) * n]
        s = psi[k * n:(k + 1) * n]
        proximal_update(f, s, lam1, g[k], al[k], gp[k], au[k], bl[k],
                        gpp[k], bu[k], (pg[k], pr[k], pgp[k], prp[k]))
    for k in range(m - 1):
        a = k * n
        b = a + n
        for i in range(n):
            fr = phi[b + i] / phi[a + i]
            sr = psi[b + i] / psi[a + i]
            PL[k, i] = _floor(AL[k, i] * fr)
            AL[k, i] = _floor(lam2 * PL[k, i])
            PU[k, i] = _floor(AU[k, i] / fr)
            AU[k, i] = _floor(lam2 * PU[k, i])
            BL[k, i] = _floor(lam2 * BL[k, i] * sr)
            BU[k, i] = _floor(lam2 * BU[k, i] / sr)
