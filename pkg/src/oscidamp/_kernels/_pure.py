"""NumPy reference implementation of the torus-average quadrature kernels.

Both backends evaluate the same quantity: with one amplitude ``a0`` (the
largest) integrated out in closed form, the remaining mean over the torus is

    H = mean_{theta in [0,2pi)^q}  phi_a0( sum_j aq[j] * sin(theta_j) )

where ``phi_a(s) = mean_t |a sin t + s|`` has the closed form

    phi_a(s) = (2/pi) * (s*asin(s/a) + sqrt(a^2 - s^2))   for |s| <= a
             = |s|                                         otherwise,

together with the partial derivatives needed for the support-function
gradient:

    d phi / d s = (2/pi) * asin(clip(s/a, -1, 1))
    d phi / d a = (2/pi) * sqrt(max(0, 1 - (s/a)^2))

Each kernel returns ``(H, dH_da0, dS, dH_daq)`` where ``dS`` is the mean of
``d phi / d s`` (the sensitivity to a constant offset, used by the recursive
high-dimensional fallback) and ``dH_daq[j]`` is the derivative in ``aq[j]``.
"""

import numpy as np

_TWO_OVER_PI = 2.0 / np.pi

# keep full 2-d broadcasts below ~128 MB
_MAX_BROADCAST = 16_000_000


def _phi_terms(a0, s):
    """Vectorized phi, d phi/d a0 and d phi/d s at offset array ``s``."""
    t = np.clip(s / a0, -1.0, 1.0)
    asin_t = np.arcsin(t)
    sq = np.sqrt(np.maximum(0.0, 1.0 - t * t))
    phi = _TWO_OVER_PI * (s * asin_t + a0 * sq)
    return phi, _TWO_OVER_PI * sq, _TWO_OVER_PI * asin_t


def trap_eval(a0, aq, n, offset=0.0):
    """Tensor-product periodic-trapezoid evaluation over q = len(aq) dims."""
    aq = np.asarray(aq, dtype=float)
    q = aq.shape[0]
    if q == 0:
        phi, da0, ds = _phi_terms(a0, np.asarray(offset))
        return float(phi), float(da0), float(ds), np.zeros(0)
    sin_t = np.sin(2.0 * np.pi * np.arange(n) / n)
    if q == 1:
        s = offset + aq[0] * sin_t
        phi, da0, ds = _phi_terms(a0, s)
        return (
            float(phi.mean()),
            float(da0.mean()),
            float(ds.mean()),
            np.array([float((ds * sin_t).mean())]),
        )
    if q == 2 and n * n <= _MAX_BROADCAST:
        s = offset + aq[0] * sin_t[:, None] + aq[1] * sin_t[None, :]
        phi, da0, ds = _phi_terms(a0, s)
        d1 = (ds * sin_t[:, None]).mean()
        d2 = (ds * sin_t[None, :]).mean()
        return float(phi.mean()), float(da0.mean()), float(ds.mean()), np.array([d1, d2])
    # generic: peel the first dimension and recurse
    H = 0.0
    dA0 = 0.0
    dS = 0.0
    dq = np.zeros(q)
    for k in range(n):
        h, d0, dsk, drest = trap_eval(a0, aq[1:], n, offset + aq[0] * sin_t[k])
        H += h
        dA0 += d0
        dS += dsk
        dq[0] += dsk * sin_t[k]
        dq[1:] += drest
    return H / n, dA0 / n, dS / n, dq / n


def _piece_rule(breaks, ref_x, ref_w):
    """Concatenate Gauss-Legendre rules mapped onto consecutive intervals.

    ``breaks`` must be an increasing array covering [0, 2pi]; the returned
    weights are normalized so they sum to 1 (mean over the circle). Each
    piece is mapped through theta = mid + half*sin(pi/2 * xi), whose
    quadratic endpoint clustering restores spectral convergence for the
    square-root kinks the integrand carries at piece boundaries.
    """
    half_pi = 0.5 * np.pi
    u = np.sin(half_pi * ref_x)
    du = half_pi * np.cos(half_pi * ref_x)
    nodes = []
    weights = []
    for lo, hi in zip(breaks[:-1], breaks[1:]):
        half = 0.5 * (hi - lo)
        if half <= 0.0:
            continue
        nodes.append(0.5 * (hi + lo) + half * u)
        weights.append(ref_w * du * (half / (2.0 * np.pi)))
    return np.concatenate(nodes), np.concatenate(weights)


def _angle_breaks(values):
    """All angles in [0, 2pi] where sin(theta) equals one of ``values``."""
    pts = [0.0, 2.0 * np.pi]
    for r in values:
        if abs(r) <= 1.0:
            t = np.arcsin(r)
            for cand in (t % (2.0 * np.pi), (np.pi - t) % (2.0 * np.pi)):
                pts.append(cand)
    return np.unique(np.asarray(pts))


def legendre_eval(a0, aq, order, ref_x, ref_w):
    """Kink-split composite Gauss-Legendre evaluation, q = len(aq) in {1, 2}.

    The integrand is piecewise analytic; splitting the circle where the
    argument of phi crosses +-a0 (and, for q = 2, where the inner breakpoint
    pattern changes) restores spectral convergence in the per-piece order.
    """
    aq = np.asarray(aq, dtype=float)
    q = aq.shape[0]
    if q == 1:
        a1 = aq[0]
        br = _angle_breaks([v / a1 for v in (a0, -a0)]) if a1 > 0 else np.array([0.0, 2 * np.pi])
        th, w = _piece_rule(br, ref_x, ref_w)
        s = a1 * np.sin(th)
        phi, da0, ds = _phi_terms(a0, s)
        return (
            float(w @ phi),
            float(w @ da0),
            float(w @ ds),
            np.array([float(w @ (ds * np.sin(th)))]),
        )
    if q != 2:
        raise ValueError("legendre_eval supports q in {1, 2}")
    a1, a2 = aq
    outer_vals = [(a0 - a2) / a1, (a0 + a2) / a1, (-a0 + a2) / a1, (-a0 - a2) / a1]
    th1, w1 = _piece_rule(_angle_breaks(outer_vals), ref_x, ref_w)
    sin1 = np.sin(th1)
    H = dA0 = dS = d1 = d2 = 0.0
    for c, wt, s1 in zip(a1 * sin1, w1, sin1):
        br = _angle_breaks([(a0 - c) / a2, (-a0 - c) / a2])
        th2, w2 = _piece_rule(br, ref_x, ref_w)
        s = c + a2 * np.sin(th2)
        phi, da0, ds = _phi_terms(a0, s)
        H += wt * (w2 @ phi)
        dA0 += wt * (w2 @ da0)
        mean_ds = w2 @ ds
        dS += wt * mean_ds
        d1 += wt * mean_ds * s1
        d2 += wt * (w2 @ (ds * np.sin(th2)))
    return float(H), float(dA0), float(dS), np.array([d1, d2])
