"""Extended-precision pi-model branch and shunt flows in polar real arithmetic."""
from __future__ import annotations

import mpmath as mp

mp.mp.dps = 40


def polar(v, th):
    return mp.mpf(v) * mp.cos(th), mp.mpf(v) * mp.sin(th)


def end_power(v1, th1, v2, th2, g, b, gs, bs):
    """Power leaving terminal 1 of a pi-section: series g+jb, terminal shunt gs+jbs.

    P = (g+gs) v1^2 - v1 v2 (g cos d + b sin d), Q = -(b+bs) v1^2 - v1 v2 (g sin d - b cos d)
    with d = th1 - th2.
    """
    v1, v2, d = mp.mpf(v1), mp.mpf(v2), mp.mpf(th1) - mp.mpf(th2)
    p = (g + gs) * v1 ** 2 - v1 * v2 * (g * mp.cos(d) + b * mp.sin(d))
    q = -(b + bs) * v1 ** 2 - v1 * v2 * (g * mp.sin(d) - b * mp.cos(d))
    return complex(p), complex(0, q)


def branch(y_sr, y_fr, y_to, tau, phi, v_fr, th_fr, v_to, th_to):
    """(s_fr, s_to) with the ideal transformer (tau, phi) on the from side."""
    g, b = mp.mpf(y_sr.real), mp.mpf(y_sr.imag)
    vf, tf = mp.mpf(v_fr) / mp.mpf(tau), mp.mpf(th_fr) - mp.mpf(phi)
    pf, qf = end_power(vf, tf, v_to, th_to, g, b, mp.mpf(y_fr.real), mp.mpf(y_fr.imag))
    pt, qt = end_power(v_to, th_to, vf, tf, g, b, mp.mpf(y_to.real), mp.mpf(y_to.imag))
    return pf + qf, pt + qt


def s_value(w, w2, y, y2):
    v1, th1 = abs(w), mp.atan2(w.imag, w.real)
    v2, th2 = abs(w2), mp.atan2(w2.imag, w2.real)
    p, q = end_power(v1, th1, v2, th2, mp.mpf(y.real), mp.mpf(y.imag), mp.mpf(y2.real), mp.mpf(y2.imag))
    return p + q


def shunt(y, u, v):
    g, b = mp.mpf(y.real), mp.mpf(y.imag)
    return complex(u * g * mp.mpf(v) ** 2, -u * b * mp.mpf(v) ** 2)


def voltage(v, th):
    re, im = polar(v, th)
    return complex(re, im)
