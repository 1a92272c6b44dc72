"""Quadrature kernel backend selection.

The compiled extension is preferred when importable; the NumPy fallback is
always available. Set OSCIDAMP_PURE_PYTHON=1 to force the fallback (used by
the benchmark and by backend-parity tests).
"""

import os
from functools import lru_cache

import numpy as np

from . import _pure

if os.environ.get("OSCIDAMP_PURE_PYTHON"):
    _ext = None
else:
    try:
        from . import _torus as _ext
    except ImportError:
        _ext = None

BACKEND = "compiled" if _ext is not None else "pure"


@lru_cache(maxsize=16)
def _gauss_rule(order):
    x, w = np.polynomial.legendre.leggauss(order)
    return np.ascontiguousarray(x), np.ascontiguousarray(w)


def trap_eval(a0, aq, n):
    """Tensor trapezoid mean; returns (H, dH_da0, dS, dH_daq)."""
    aq = np.asarray(aq, dtype=float)
    if _ext is not None and aq.shape[0] == 1:
        return _ext.trap_q1(a0, aq[0], n)
    if _ext is not None and aq.shape[0] == 2:
        return _ext.trap_q2(a0, aq[0], aq[1], n)
    return _pure.trap_eval(a0, aq, n)


def trap_eval_pair(a0, aq, n):
    """Evaluations at n/2 and n nodes per dim (one fused pass when compiled)."""
    aq = np.asarray(aq, dtype=float)
    if _ext is not None and aq.shape[0] == 1:
        return _ext.trap_q1_pair(a0, aq[0], n)
    return trap_eval(a0, aq, n // 2), trap_eval(a0, aq, n)


def legendre_eval(a0, aq, order):
    """Kink-split composite Gauss-Legendre mean; q = len(aq) in {1, 2}."""
    aq = np.asarray(aq, dtype=float)
    ref_x, ref_w = _gauss_rule(order)
    if _ext is not None and aq.shape[0] == 1:
        return _ext.legendre_q1(a0, aq[0], ref_x, ref_w)
    if _ext is not None and aq.shape[0] == 2:
        return _ext.legendre_q2(a0, aq[0], aq[1], ref_x, ref_w)
    return _pure.legendre_eval(a0, aq, order, ref_x, ref_w)
