"""Dense DC power flow through the Laplacian pseudo-inverse, slack spread evenly."""
from __future__ import annotations

import numpy as np


def flows(n, edges, injection, p_sl):
    """``edges``: list of (from, to, b, phi).  Returns branch flows in edge order."""
    L = np.zeros((n, n))
    rhs = np.asarray(injection, dtype=float) - p_sl / n
    rhs = rhs.copy()
    for i, k, b, phi in edges:
        L[i, i] += b
        L[k, k] += b
        L[i, k] -= b
        L[k, i] -= b
        rhs[i] += b * phi
        rhs[k] -= b * phi
    th = np.linalg.pinv(L) @ rhs
    return np.array([b * (th[i] - th[k] - phi) for i, k, b, phi in edges])
