"""Compiled inner loops for the master-equation integrator.

The density matrix is carried as nine reals per trajectory,
``(p1, p2, p3, Re r12, Im r12, Re r13, Im r13, Re r23, Im r23)``, stored
structure-of-arrays as shape ``(9, B)`` so the member loop vectorizes.
Per-member arithmetic is identical regardless of batch size.
"""

import numba
import numpy as np

N_REAL = 9


@numba.njit(inline="always")
def _deriv(p1, p2, p3, ar, ai, br, bi, cr, ci, d1, d2, m, p, G, g, gs, lk):
    # m = Omega_minus/2 couples level 1, p = Omega_plus/2 couples level 2
    dp1 = -2.0 * m * bi + G * p3
    dp2 = -2.0 * p * ci + G * p3
    dp3 = 2.0 * (m * bi + p * ci) - (2.0 * G + lk) * p3
    dd = d1 - d2
    ur = dd * ar + m * cr - p * br
    ui = dd * ai - m * ci - p * bi
    dar = ui - gs * ar
    dai = -ur - gs * ai
    ur = d1 * br + m * (p3 - p1) - p * ar
    ui = d1 * bi - p * ai
    dbr = ui - g * br
    dbi = -ur - g * bi
    ur = d2 * cr + p * (p3 - p2) - m * ar
    ui = d2 * ci + m * ai
    dcr = ui - g * cr
    dci = -ur - g * ci
    return dp1, dp2, dp3, dar, dai, dbr, dbi, dcr, dci


@numba.njit(cache=True, nogil=True)
def rk4_steps(S, plus, minus, h, d1, d2, G, g, gs, lk):
    """Advance every column of ``S`` by ``len(plus) // 3`` RK4 steps.

    ``plus``/``minus`` hold the full Rabi frequencies as (start, midpoint,
    end) triples per step, each sampled from inside the step so a field
    edge on a step boundary is seen from the correct side.
    """
    n = plus.shape[0] // 3
    B = S.shape[1]
    hh = 0.5 * h
    w = h / 6.0
    P1 = S[0]
    P2 = S[1]
    P3 = S[2]
    AR = S[3]
    AI = S[4]
    BR = S[5]
    BI = S[6]
    CR = S[7]
    CI = S[8]
    for s in range(n):
        p_a = 0.5 * plus[3 * s]
        p_b = 0.5 * plus[3 * s + 1]
        p_c = 0.5 * plus[3 * s + 2]
        m_a = 0.5 * minus[3 * s]
        m_b = 0.5 * minus[3 * s + 1]
        m_c = 0.5 * minus[3 * s + 2]
        for b in range(B):
            p1 = P1[b]
            p2 = P2[b]
            p3 = P3[b]
            ar = AR[b]
            ai = AI[b]
            br = BR[b]
            bi = BI[b]
            cr = CR[b]
            ci = CI[b]
            D1 = d1[b]
            D2 = d2[b]
            Gb = G[b]
            gb = g[b]
            gsb = gs[b]
            lkb = lk[b]
            k1 = _deriv(p1, p2, p3, ar, ai, br, bi, cr, ci,
                        D1, D2, m_a, p_a, Gb, gb, gsb, lkb)
            k2 = _deriv(p1 + hh * k1[0], p2 + hh * k1[1], p3 + hh * k1[2],
                        ar + hh * k1[3], ai + hh * k1[4], br + hh * k1[5],
                        bi + hh * k1[6], cr + hh * k1[7], ci + hh * k1[8],
                        D1, D2, m_b, p_b, Gb, gb, gsb, lkb)
            k3 = _deriv(p1 + hh * k2[0], p2 + hh * k2[1], p3 + hh * k2[2],
                        ar + hh * k2[3], ai + hh * k2[4], br + hh * k2[5],
                        bi + hh * k2[6], cr + hh * k2[7], ci + hh * k2[8],
                        D1, D2, m_b, p_b, Gb, gb, gsb, lkb)
            k4 = _deriv(p1 + h * k3[0], p2 + h * k3[1], p3 + h * k3[2],
                        ar + h * k3[3], ai + h * k3[4], br + h * k3[5],
                        bi + h * k3[6], cr + h * k3[7], ci + h * k3[8],
                        D1, D2, m_c, p_c, Gb, gb, gsb, lkb)
            P1[b] = p1 + w * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
            P2[b] = p2 + w * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
            P3[b] = p3 + w * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])
            AR[b] = ar + w * (k1[3] + 2.0 * k2[3] + 2.0 * k3[3] + k4[3])
            AI[b] = ai + w * (k1[4] + 2.0 * k2[4] + 2.0 * k3[4] + k4[4])
            BR[b] = br + w * (k1[5] + 2.0 * k2[5] + 2.0 * k3[5] + k4[5])
            BI[b] = bi + w * (k1[6] + 2.0 * k2[6] + 2.0 * k3[6] + k4[6])
            CR[b] = cr + w * (k1[7] + 2.0 * k2[7] + 2.0 * k3[7] + k4[7])
            CI[b] = ci + w * (k1[8] + 2.0 * k2[8] + 2.0 * k3[8] + k4[8])


@numba.njit(cache=True, nogil=True)
def real_generators(omega_plus, omega_minus, d1, d2, G, g, gs, lk):
    """Return the ``(B, 9, 9)`` real generators for constant fields."""
    B = d1.shape[0]
    out = np.zeros((B, N_REAL, N_REAL))
    p = 0.5 * omega_plus
    m = 0.5 * omega_minus
    for b in range(B):
        for k in range(N_REAL):
            e = np.zeros(N_REAL)
            e[k] = 1.0
            col = _deriv(e[0], e[1], e[2], e[3], e[4], e[5], e[6], e[7], e[8],
                         d1[b], d2[b], m, p, G[b], g[b], gs[b], lk[b])
            for i in range(N_REAL):
                out[b, i, k] = col[i]
    return out
