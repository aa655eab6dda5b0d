"""Inner loops of the two ADMM solvers.

Each kernel exists twice: a loop version compiled with numba and a vectorized
numpy version. ``admm_sweep``, ``weber_sweep`` and ``network_objective`` are
bound to one of them according to :mod:`compnet._accel`. Both versions update
their arguments in place and return the same residuals; they agree to
rounding, not bitwise.

Edge layout: pairs ``(ei[e], ej[e])`` with ``ei > ej`` and positive weight
``wt[e]``. ``a_i[e]``/``s_i[e]`` are the copy and scaled dual owned by
``ei[e]`` for that pair, ``a_j[e]``/``s_j[e]`` those owned by ``ej[e]``.
Pairs with zero weight are not stored: their dual stays at zero and their
copy equals the owner's previous ``w`` row, so sample ``i`` only needs the
count ``idle[i]`` of such pairs. ``acc[i]`` carries ``sum (a - s)`` over the
stored pairs owned by ``i``; the sweep reads it and refreshes it.
"""

import math

import numpy as np

from ._accel import USE_NUMBA, njit

THETA_EPS = 1e-12
WEBER_EPS = 1e-12


# ---------------------------------------------------------------- multi-task ADMM


def rank2_factors(z, diag, psi):
    """Per-row 2 x 2 factors for solving ``(diag I + U D U^T) w = rhs``.

    ``U = [z_i, 1]`` and ``D = diag(2, psi)``; then
    ``w = (rhs - U G U^T rhs / diag) / diag`` with ``G = (I + D U^T U / diag)^-1 D``
    (Woodbury). ``psi = 0`` drops the all-ones direction.
    """
    n, p = z.shape
    dmat = np.diag([2.0, psi])
    gmat = np.empty((n, 2, 2))
    for i in range(n):
        u = np.stack([z[i], np.ones(p)], axis=1)
        gmat[i] = np.linalg.solve(np.eye(2) + dmat @ (u.T @ u) / diag, dmat)
    return gmat


def pair_accumulate(n, ei, ej, a_i, a_j, s_i, s_j):
    acc = np.zeros((n, a_i.shape[1]))
    np.add.at(acc, ei, a_i - s_i)
    np.add.at(acc, ej, a_j - s_j)
    return acc


def _sweep_loops(z, y, gmat, diag, ei, ej, wt, idle, w, a_i, a_j, s_i, s_j, b, t, u, acc,
                 lam1, lam2, rho, phi, psi, zero_sum):
    n, p = w.shape
    n_edges = ei.shape[0]

    w_old = w.copy()
    rhs = np.empty(p)
    for i in range(n):
        qz = 0.0
        q1 = 0.0
        for k in range(p):
            val = 2.0 * y[i] * z[i, k] + rho * (acc[i, k] + idle[i] * w_old[i, k])
            val += phi * b[i, k] - t[i, k]
            if zero_sum:
                val -= u[i]
            rhs[k] = val
            qz += z[i, k] * val
            q1 += val
        gz = gmat[i, 0, 0] * qz + gmat[i, 0, 1] * q1
        g1 = gmat[i, 1, 0] * qz + gmat[i, 1, 1] * q1
        for k in range(p):
            w[i, k] = (rhs[k] - (gz * z[i, k] + g1) / diag) / diag

    acc[:, :] = 0.0
    vi = np.empty(p)
    vj = np.empty(p)
    res_pair = 0.0
    for e in range(n_edges):
        i = ei[e]
        j = ej[e]
        nrm2 = 0.0
        for k in range(p):
            vi[k] = w[i, k] + s_i[e, k]
            vj[k] = w[j, k] + s_j[e, k]
            d = vi[k] - vj[k]
            nrm2 += d * d
        nrm = math.sqrt(nrm2)
        pen = lam1 * wt[e]
        if pen == 0.0:
            theta = 1.0
        elif nrm < THETA_EPS:
            theta = 0.5
        else:
            theta = max(1.0 - pen / (rho * nrm), 0.5)
        ri2 = 0.0
        rj2 = 0.0
        for k in range(p):
            ai = theta * vi[k] + (1.0 - theta) * vj[k]
            aj = (1.0 - theta) * vi[k] + theta * vj[k]
            a_i[e, k] = ai
            a_j[e, k] = aj
            di = w[i, k] - ai
            dj = w[j, k] - aj
            si = s_i[e, k] + rho * di
            sj = s_j[e, k] + rho * dj
            s_i[e, k] = si
            s_j[e, k] = sj
            acc[i, k] += ai - si
            acc[j, k] += aj - sj
            ri2 += di * di
            rj2 += dj * dj
        res_pair = max(res_pair, math.sqrt(ri2), math.sqrt(rj2))

    thr = lam2 / phi
    res_b = 0.0
    res_sum = 0.0
    res_dw = 0.0
    for i in range(n):
        rb2 = 0.0
        dw2 = 0.0
        row = 0.0
        for k in range(p):
            x = w[i, k] + t[i, k] / phi
            mag = abs(x) - thr
            if mag > 0.0:
                b[i, k] = mag if x > 0.0 else -mag
            else:
                b[i, k] = 0.0
            d = w[i, k] - b[i, k]
            t[i, k] += phi * d
            rb2 += d * d
            row += w[i, k]
            dd = w[i, k] - w_old[i, k]
            dw2 += dd * dd
        if zero_sum:
            u[i] += psi * row
            res_sum = max(res_sum, abs(row))
        res_b = max(res_b, math.sqrt(rb2))
        res_dw = max(res_dw, math.sqrt(dw2))
    return res_pair, res_b, res_sum, res_dw


def _sweep_numpy(z, y, gmat, diag, ei, ej, wt, idle, w, a_i, a_j, s_i, s_j, b, t, u, acc,
                 lam1, lam2, rho, phi, psi, zero_sum):
    w_old = w.copy()
    rhs = 2.0 * y[:, None] * z + rho * (acc + idle[:, None] * w_old) + phi * b - t
    if zero_sum:
        rhs = rhs - u[:, None]
    q = np.stack([(z * rhs).sum(1), rhs.sum(1)], axis=1)
    g = np.einsum("iab,ib->ia", gmat, q)
    w[:] = (rhs - (g[:, :1] * z + g[:, 1:]) / diag) / diag

    vi = w[ei] + s_i
    vj = w[ej] + s_j
    nrm = np.sqrt(np.einsum("ek,ek->e", vi - vj, vi - vj))
    pen = lam1 * wt
    with np.errstate(divide="ignore", invalid="ignore"):
        theta = np.maximum(1.0 - pen / (rho * nrm), 0.5)
    theta = np.where(nrm < THETA_EPS, 0.5, theta)
    theta = np.where(pen == 0.0, 1.0, theta)[:, None]
    a_i[:] = theta * vi + (1.0 - theta) * vj
    a_j[:] = (1.0 - theta) * vi + theta * vj
    di = w[ei] - a_i
    dj = w[ej] - a_j
    s_i += rho * di
    s_j += rho * dj
    acc[:] = pair_accumulate(w.shape[0], ei, ej, a_i, a_j, s_i, s_j)
    res_pair = 0.0
    if len(ei):
        res_pair = max(np.sqrt((di * di).sum(1)).max(), np.sqrt((dj * dj).sum(1)).max())

    x = w + t / phi
    b[:] = np.sign(x) * np.maximum(np.abs(x) - lam2 / phi, 0.0)
    b[b == 0.0] = 0.0  # no negative zeros, to match the loop kernel
    d = w - b
    t += phi * d
    row = w.sum(axis=1)
    res_sum = 0.0
    if zero_sum:
        u += psi * row
        res_sum = np.abs(row).max()
    res_b = np.sqrt((d * d).sum(1)).max()
    res_dw = np.sqrt(((w - w_old) ** 2).sum(1)).max()
    return float(res_pair), float(res_b), float(res_sum), float(res_dw)


def _objective_loops(z, y, w, ei, ej, wt, lam1, lam2):
    n, p = w.shape
    total = 0.0
    for i in range(n):
        fit = 0.0
        l1 = 0.0
        for k in range(p):
            fit += z[i, k] * w[i, k]
            l1 += abs(w[i, k])
        total += (y[i] - fit) ** 2 + lam2 * l1
    for e in range(ei.shape[0]):
        d2 = 0.0
        for k in range(p):
            d = w[ei[e], k] - w[ej[e], k]
            d2 += d * d
        total += lam1 * wt[e] * math.sqrt(d2)
    return total


def _objective_numpy(z, y, w, ei, ej, wt, lam1, lam2):
    resid = y - np.einsum("ik,ik->i", z, w)
    diff = w[ei] - w[ej]
    net = (wt * np.sqrt((diff * diff).sum(1))).sum()
    return float((resid ** 2).sum() + lam1 * net + lam2 * np.abs(w).sum())


# ---------------------------------------------------------------- Weber ADMM


def _weber_loops(anchors, wts, n_idle, w, m, u, u_idle, v, mu, eta):
    """One Weber ADMM iteration; returns (v, res_consensus, res_sum, res_dw).

    Zero-weight anchors share one multiplier ``u_idle`` (their prox is the
    identity, so they all evolve identically).
    """
    k_pos, p = anchors.shape
    n_tot = k_pos + n_idle
    w_old = w.copy()
    rhs = np.zeros(p)
    for i in range(k_pos):
        nrm2 = 0.0
        for k in range(p):
            d = w[k] - u[i, k] / mu - anchors[i, k]
            nrm2 += d * d
        nrm = math.sqrt(nrm2)
        rad = wts[i] / mu
        if nrm < WEBER_EPS or nrm <= rad:
            for k in range(p):
                m[i, k] = anchors[i, k]
        else:
            scale = rad / nrm
            for k in range(p):
                x = w[k] - u[i, k] / mu
                m[i, k] = x - scale * (x - anchors[i, k])
        for k in range(p):
            rhs[k] += mu * m[i, k] + u[i, k]
    m_idle = np.empty(p)
    for k in range(p):
        m_idle[k] = w[k] - u_idle[k] / mu
        rhs[k] += n_idle * (mu * m_idle[k] + u_idle[k]) - v

    total = 0.0
    for k in range(p):
        total += rhs[k]
    coef = eta / (mu * n_tot + eta * p)
    row = 0.0
    for k in range(p):
        w[k] = (rhs[k] - coef * total) / (mu * n_tot)
        row += w[k]

    res_c = 0.0
    for i in range(k_pos):
        r2 = 0.0
        for k in range(p):
            d = m[i, k] - w[k]
            u[i, k] += mu * d
            r2 += d * d
        res_c = max(res_c, math.sqrt(r2))
    if n_idle > 0:
        r2 = 0.0
        for k in range(p):
            d = m_idle[k] - w[k]
            u_idle[k] += mu * d
            r2 += d * d
        res_c = max(res_c, math.sqrt(r2))
    v += eta * row
    dw2 = 0.0
    for k in range(p):
        dd = w[k] - w_old[k]
        dw2 += dd * dd
    return v, res_c, abs(row), math.sqrt(dw2)


def _weber_numpy(anchors, wts, n_idle, w, m, u, u_idle, v, mu, eta):
    k_pos, p = anchors.shape
    n_tot = k_pos + n_idle
    w_old = w.copy()
    x = w[None, :] - u / mu
    d = x - anchors
    nrm = np.sqrt((d * d).sum(1))
    rad = wts / mu
    shrink = (nrm < WEBER_EPS) | (nrm <= rad)
    with np.errstate(divide="ignore", invalid="ignore"):
        moved = x - (rad / nrm)[:, None] * d
    m[:] = np.where(shrink[:, None], anchors, moved)
    m_idle = w - u_idle / mu
    rhs = (mu * m + u).sum(0) + n_idle * (mu * m_idle + u_idle) - v
    w[:] = (rhs - eta / (mu * n_tot + eta * p) * rhs.sum()) / (mu * n_tot)
    dc = m - w[None, :]
    u += mu * dc
    res_c = np.sqrt((dc * dc).sum(1)).max() if k_pos else 0.0
    if n_idle > 0:
        di = m_idle - w
        u_idle += mu * di
        res_c = max(res_c, np.sqrt(di @ di))
    row = w.sum()
    v += eta * row
    return v, float(res_c), float(abs(row)), float(np.sqrt(((w - w_old) ** 2).sum()))


admm_sweep_numba = njit(_sweep_loops)
objective_numba = njit(_objective_loops)
weber_sweep_numba = njit(_weber_loops)


@njit
def weber_solve_numba(anchors, wts, n_idle, w, m, u, u_idle, mu, eta, max_iters, tol, zero_sum):
    """Weber iterations until ``tol``; returns ``(iterations, converged, finite)``."""
    v = 0.0
    it = 0
    for it in range(1, max_iters + 1):
        v, res_c, res_sum, res_dw = weber_sweep_numba(anchors, wts, n_idle, w, m, u, u_idle,
                                                      v, mu, eta)
        if not math.isfinite(res_c + res_dw + v):
            return it, False, False
        if max(res_c, res_dw) <= tol and (res_sum <= tol or not zero_sum):
            return it, True, True
    return it, False, True


def weber_solve_numpy(anchors, wts, n_idle, w, m, u, u_idle, mu, eta, max_iters, tol, zero_sum):
    v = 0.0
    it = 0
    for it in range(1, max_iters + 1):
        v, res_c, res_sum, res_dw = _weber_numpy(anchors, wts, n_idle, w, m, u, u_idle,
                                                 v, mu, eta)
        if not math.isfinite(res_c + res_dw + v):
            return it, False, False
        if max(res_c, res_dw) <= tol and (res_sum <= tol or not zero_sum):
            return it, True, True
    return it, False, True


if USE_NUMBA:
    admm_sweep = admm_sweep_numba
    network_objective = objective_numba
    weber_sweep = weber_sweep_numba
    weber_solve = weber_solve_numba
else:
    admm_sweep = _sweep_numpy
    network_objective = _objective_numpy
    weber_sweep = _weber_numpy
    weber_solve = weber_solve_numpy

admm_sweep_numpy = _sweep_numpy
objective_numpy = _objective_numpy
weber_sweep_numpy = _weber_numpy
