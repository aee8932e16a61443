"""Exhaustive check of minimum up/down time rules by run lengths."""
from __future__ import annotations

import itertools


def starts(durations):
    out = [0.0]
    for d in durations:
        out.append(out[-1] + d)
    return out


def run_length_ok(seq, u0, durations, min_up, min_dn) -> bool:
    """True iff every completed in-horizon on/off run before a switch lasts long enough.

    A switch at t takes effect at the start of t; runs that began before the
    horizon are unconstrained.
    """
    st = starts(durations)
    last_switch = None
    prev = u0
    for t, x in enumerate(seq):
        if x != prev:
            if last_switch is not None:
                length = st[t] - st[last_switch]
                need = min_up if prev == 1 else min_dn
                if length < need - 1e-9:
                    return False
            last_switch = t
        prev = x
    return True


def window_ok(seq, u0, t_up, t_dn) -> bool:
    su = [max(0, x - p) for x, p in zip(seq, (u0,) + tuple(seq[:-1]))]
    sd = [max(0, p - x) for x, p in zip(seq, (u0,) + tuple(seq[:-1]))]
    for t in range(len(seq)):
        if su[t] + sum(sd[tp] for tp in t_dn[t]) > 1:
            return False
        if sd[t] + sum(su[tp] for tp in t_up[t]) > 1:
            return False
    return True


def all_sequences(T):
    return itertools.product((0, 1), repeat=T)
