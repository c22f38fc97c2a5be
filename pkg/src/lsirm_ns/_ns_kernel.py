"""Compiled birth-death-move chain for the Neyman-Scott fit.

All randomness arrives as pre-drawn uniform and normal arrays so a run is a
pure function of its inputs.
"""

import math

import numba
import numpy as np


@numba.njit(cache=True)
def phi(x):
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


@numba.njit(cache=True)
def mass(cx, cy, omega, x0, x1, y0, y1):
    return (phi((x1 - cx) / omega) - phi((x0 - cx) / omega)) * (phi((y1 - cy) / omega) - phi((y0 - cy) / omega))


@numba.njit(cache=True)
def fill_vec(out, cx, cy, pts, omega):
    """Log Gaussian kernel of every point around (cx, cy)."""
    c = -math.log(2.0 * math.pi) - 2.0 * math.log(omega)
    inv = 0.5 / (omega * omega)
    for j in range(pts.shape[0]):
        dx = pts[j, 0] - cx
        dy = pts[j, 1] - cy
        out[j] = c - (dx * dx + dy * dy) * inv


@numba.njit(cache=True)
def point_term(lk, m, skip, extra, use_extra, j):
    # log sum_i k_ij over rows < m except ``skip``, plus optional extra row
    mx = -np.inf
    for i in range(m):
        if i != skip and lk[i, j] > mx:
            mx = lk[i, j]
    if use_extra and extra[j] > mx:
        mx = extra[j]
    if mx == -np.inf:
        return -np.inf
    s = 0.0
    for i in range(m):
        if i != skip:
            s += math.exp(lk[i, j] - mx)
    if use_extra:
        s += math.exp(extra[j] - mx)
    return mx + math.log(s)


@numba.njit(cache=True)
def loglik(lk, masses, m, skip, extra, extra_mass, use_extra, alpha, area, n_pts):
    tm = 0.0
    for i in range(m):
        if i != skip:
            tm += masses[i]
    if use_extra:
        tm += extra_mass
    total = area - alpha * tm
    la = math.log(alpha)
    for j in range(n_pts):
        total += la + point_term(lk, m, skip, extra, use_extra, j)
    return total


@numba.njit(cache=True)
def run(pts, dom, centers0, alpha0, omega0, bounds, steps, probs, n_iter, burn_in, ru, rn):
    x0, x1, y0, y1 = dom[0], dom[1], dom[2], dom[3]
    area = (x1 - x0) * (y1 - y0)
    n_pts = pts.shape[0]
    a_lo, a_hi, o_lo, o_hi = bounds[0], bounds[1], bounds[2], bounds[3]
    move_sd, alpha_sd, omega_sd = steps[0], steps[1], steps[2]
    p_birth, p_death = probs[0], probs[1]

    cap = max(16, 2 * centers0.shape[0])
    cen = np.empty((cap, 2))
    lk = np.empty((cap, n_pts))
    masses = np.empty(cap)
    m = centers0.shape[0]
    alpha, omega = alpha0, omega0
    for i in range(m):
        cen[i, 0] = centers0[i, 0]
        cen[i, 1] = centers0[i, 1]
        fill_vec(lk[i], cen[i, 0], cen[i, 1], pts, omega)
        masses[i] = mass(cen[i, 0], cen[i, 1], omega, x0, x1, y0, y1)
    extra = np.empty(n_pts)
    dummy = np.empty(n_pts)
    ll = loglik(lk, masses, m, -1, dummy, 0.0, False, alpha, area, n_pts)
    kappa_area = n_pts / alpha
    lprior = m * math.log(kappa_area / area) - kappa_area
    init_lp = ll + lprior

    # best post-burn-in state seen at each center count
    mcap = max(16, 2 * m)
    best_lp = np.full(mcap, -np.inf)
    best_st = np.empty((mcap, 3))
    best_c = np.empty((mcap, mcap, 2))
    m_trace = np.empty(n_iter, dtype=np.int64)
    acc = np.zeros(6, dtype=np.int64)  # births, deaths, moves accepted; then proposed counts
    log_area = math.log(area)

    for it in range(n_iter):
        u = ru[it, 0]
        log_kappa = math.log(n_pts / (alpha * area))
        if u < p_birth:
            acc[3] += 1
            cx = x0 + (x1 - x0) * ru[it, 1]
            cy = y0 + (y1 - y0) * ru[it, 2]
            fill_vec(extra, cx, cy, pts, omega)
            em = mass(cx, cy, omega, x0, x1, y0, y1)
            ll_p = loglik(lk, masses, m, -1, extra, em, True, alpha, area, n_pts)
            log_r = ll_p - ll + log_kappa + math.log(p_death) + log_area - math.log(p_birth) - math.log(m + 1.0)
            if math.log(ru[it, 4]) < log_r:
                if m == cap:
                    cap2 = 2 * cap
                    cen2 = np.empty((cap2, 2))
                    lk2 = np.empty((cap2, n_pts))
                    ms2 = np.empty(cap2)
                    cen2[:cap] = cen
                    lk2[:cap] = lk
                    ms2[:cap] = masses
                    cen, lk, masses, cap = cen2, lk2, ms2, cap2
                cen[m, 0] = cx
                cen[m, 1] = cy
                lk[m, :] = extra
                masses[m] = em
                m += 1
                ll = ll_p
                acc[0] += 1
        elif u < p_birth + p_death:
            if m > 1:
                acc[4] += 1
                r = min(int(ru[it, 3] * m), m - 1)
                ll_p = loglik(lk, masses, m, r, dummy, 0.0, False, alpha, area, n_pts)
                log_r = ll_p - ll - log_kappa + math.log(p_birth) + math.log(m * 1.0) - math.log(p_death) - log_area
                if math.log(ru[it, 4]) < log_r:
                    # keep order: shift later rows down
                    for i in range(r, m - 1):
                        cen[i, 0] = cen[i + 1, 0]
                        cen[i, 1] = cen[i + 1, 1]
                        lk[i, :] = lk[i + 1, :]
                        masses[i] = masses[i + 1]
                    m -= 1
                    ll = ll_p
                    acc[1] += 1
        else:
            acc[5] += 1
            r = min(int(ru[it, 3] * m), m - 1)
            cx = cen[r, 0] + move_sd * rn[it, 0]
            cy = cen[r, 1] + move_sd * rn[it, 1]
            if x0 <= cx <= x1 and y0 <= cy <= y1:
                fill_vec(extra, cx, cy, pts, omega)
                em = mass(cx, cy, omega, x0, x1, y0, y1)
                ll_p = loglik(lk, masses, m, r, extra, em, True, alpha, area, n_pts)
                if math.log(ru[it, 4]) < ll_p - ll:
                    cen[r, 0] = cx
                    cen[r, 1] = cy
                    lk[r, :] = extra
                    masses[r] = em
                    ll = ll_p
                    acc[2] += 1

        # alpha: the likelihood and the parent prior both depend on it
        a_p = alpha + alpha_sd * rn[it, 2]
        if a_lo <= a_p <= a_hi:
            tm = 0.0
            for i in range(m):
                tm += masses[i]
            ll_p = ll + alpha * tm - a_p * tm + n_pts * (math.log(a_p) - math.log(alpha))
            lp_cur = m * math.log(n_pts / (alpha * area)) - n_pts / alpha
            lp_new = m * math.log(n_pts / (a_p * area)) - n_pts / a_p
            if math.log(ru[it, 5]) < ll_p + lp_new - ll - lp_cur:
                alpha = a_p
                ll = ll_p

        # omega: every kernel row changes
        o_p = omega + omega_sd * rn[it, 3]
        if o_lo <= o_p <= o_hi:
            lk_p = np.empty((cap, n_pts))
            ms_p = np.empty(cap)
            for i in range(m):
                fill_vec(lk_p[i], cen[i, 0], cen[i, 1], pts, o_p)
                ms_p[i] = mass(cen[i, 0], cen[i, 1], o_p, x0, x1, y0, y1)
            ll_p = loglik(lk_p, ms_p, m, -1, dummy, 0.0, False, alpha, area, n_pts)
            if math.log(ru[it, 6]) < ll_p - ll:
                omega = o_p
                lk = lk_p
                masses = ms_p
                ll = ll_p

        m_trace[it] = m
        if it >= burn_in:
            lp = ll + m * math.log(n_pts / (alpha * area)) - n_pts / alpha
            if m >= mcap:
                mcap2 = 2 * m
                lp2 = np.full(mcap2, -np.inf)
                st2 = np.empty((mcap2, 3))
                bc2 = np.empty((mcap2, mcap2, 2))
                lp2[:mcap] = best_lp
                st2[:mcap] = best_st
                bc2[:mcap, :mcap] = best_c
                best_lp, best_st, best_c, mcap = lp2, st2, bc2, mcap2
            if lp > best_lp[m]:
                best_lp[m] = lp
                best_st[m, 0] = ll
                best_st[m, 1] = alpha
                best_st[m, 2] = omega
                for i in range(m):
                    best_c[m, i, 0] = cen[i, 0]
                    best_c[m, i, 1] = cen[i, 1]
    return best_lp, best_st, best_c, m_trace, acc, init_lp
