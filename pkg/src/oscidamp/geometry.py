"""Reachable-set geometry: support function, gauge norm, momentum solve.

For a bank of oscillators the long-time-average support value of a covector
``p`` is a mean over the frequency torus,

    H(p) = mean_{theta in [0,2pi)^d} | sum_j a_j(p) sin(theta_j) |,

where ``a_j(p) = hypot(p_{2j}/w_j, p_{2j+1})`` is the response amplitude of
block ``j``. One torus dimension (the largest amplitude) is integrated out in
closed form, leaving a (d-1)-dimensional quadrature evaluated by the kernel
backends. ``H`` is positively homogeneous of degree one and convex; these
identities hold exactly for the discretized functional as well, which is what
makes the momentum solve and all Euler-relation diagnostics consistent to
solver precision.

The gauge ``rho(x) = max { <p, x> : H(p) <= 1 }`` measures how long the bank
needs to be damped from ``x``; its gradient is the momentum covector, solved
from ``x = T * grad H(p)``, ``H(p) = 1`` by a damped Newton iteration with a
projected-ascent fallback.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import (
    DegenerateDirection,
    QuadratureNotConverged,
    SolverNotConverged,
    ZeroCovector,
    ZeroState,
)
from .model import OscillatorSystem

TWO_OVER_PI = 2.0 / np.pi
DEGENERATE_TOL = 1e-12

_TRAP_CAPS = {1: 1 << 21, 2: 1 << 13}
_LEG_CAP = 2048


@dataclass(frozen=True)
class QuadratureSpec:
    """Quadrature descriptor for the torus average.

    scheme:
        "trapezoid" (tensor-product periodic trapezoid), "legendre"
        (kink-split composite Gauss-Legendre) or "auto": trapezoid for one
        quadrature dimension, legendre for two or more, where the kinked
        integrand defeats the trapezoid rule's convergence.
    nodes / gl_order:
        starting resolution; both schemes refine by doubling until two
        successive values agree within ``tol`` (and gradients within
        ``grad_tol``), else QuadratureNotConverged.
    """

    scheme: str = "auto"
    nodes: int = 64
    gl_order: int = 32
    tol: float = 1e-9
    grad_tol: float = 1e-8
    auto_refine: bool = True


@dataclass(frozen=True)
class Momentum:
    """Momentum covector with H(p) = 1 and gauge value T = <p, x> = rho(x)."""

    p: np.ndarray
    T: float
    residual: float
    iterations: int


def _commensurable(freqs, max_coeff=64, tol=1e-9):
    """Detect an integer relation sum_j m_j w_j = 0 with |m_j| <= max_coeff."""
    d = len(freqs)
    if d == 1:
        return False
    w = np.asarray(freqs, dtype=float)
    if d <= 3:
        rng = np.arange(-max_coeff, max_coeff + 1)
        grids = np.meshgrid(*([rng] * d), indexing="ij")
        m = np.stack([g.ravel() for g in grids], axis=1)
        nz = np.any(m != 0, axis=1)
        return bool(np.any(np.abs(m[nz].astype(float) @ w) < tol))
    # beyond three frequencies, check pairs only
    for i in range(d):
        for j in range(i + 1, d):
            if _commensurable([freqs[i], freqs[j]], max_coeff, tol):
                return True
    return False


class SupportFunction:
    """Support value H(p) of the asymptotic reachable body and its gradient.

    Instances are read-only after construction and every evaluation is a pure
    function of (p, quadrature descriptor), so concurrent use is safe.
    """

    def __init__(self, system: OscillatorSystem, quadrature: QuadratureSpec | None = None):
        self.system = system
        self.quadrature = quadrature or QuadratureSpec()
        w = np.asarray(system.frequencies, dtype=float)
        self._inv_w = 1.0 / w
        self._inv_w2 = self._inv_w**2
        self.commensurable = _commensurable(system.frequencies)

    # -- amplitude decomposition ---------------------------------------

    def amplitudes(self, p):
        """Per-block response amplitudes a_j(p) >= 0."""
        p = np.asarray(p, dtype=float).reshape(-1, 2)
        return np.hypot(p[:, 0] * self._inv_w, p[:, 1])

    def _amplitude_jacobian(self, p, a):
        """Rows da_j/dp restricted to block j: (p1/w^2, p2)/a_j."""
        p = np.asarray(p, dtype=float).reshape(-1, 2)
        out = np.zeros_like(p)
        ok = a > 0
        out[ok, 0] = p[ok, 0] * self._inv_w2[ok] / a[ok]
        out[ok, 1] = p[ok, 1] / a[ok]
        return out

    # -- torus mean ------------------------------------------------------

    def _kernel_once(self, scheme, a0, aq, level):
        if scheme == "trapezoid":
            return _kernels.trap_eval(a0, aq, level)
        return _kernels.legendre_eval(a0, aq, level)

    def _refined(self, scheme, a0, aq):
        """Evaluate with doubling refinement until successive values settle.

        The ladder starts from the descriptor's base resolution on every
        call, so the result is a pure function of the amplitudes and the
        descriptor (no evaluation-order dependence).

        For the trapezoid rule the nodes are amplitude-independent, so the
        reported gradient is the exact gradient of the discrete value and a
        gradient agreement check is added. The split-Legendre rule moves its
        nodes with the amplitudes; its gradient is smooth and consistent but
        carries the O(quadrature error) drift of the rule, so only the value
        is refined there.
        """
        spec = self.quadrature
        q = len(aq)
        if scheme == "trapezoid":
            base, cap = spec.nodes, _TRAP_CAPS.get(q, 1 << 10)
        else:
            base, cap = spec.gl_order, _LEG_CAP
        if not spec.auto_refine:
            h, d0, _, dq = self._kernel_once(scheme, a0, aq, base)
            return h, d0, dq
        check_grad = scheme == "trapezoid"
        level = base
        cache: dict = {}
        while True:
            if scheme == "trapezoid":
                (h, d0, _, dq), (h2, d02, _, dq2) = _kernels.trap_eval_pair(
                    a0, aq, level
                )
            else:
                for lv in (level // 2, level):
                    if lv not in cache:
                        cache[lv] = self._kernel_once(scheme, a0, aq, lv)
                h, d0, _, dq = cache[level // 2]
                h2, d02, _, dq2 = cache[level]
            ok = abs(h2 - h) <= spec.tol and (
                not check_grad
                or max(abs(d02 - d0), np.max(np.abs(dq2 - dq), initial=0.0))
                <= spec.grad_tol
            )
            if ok:
                return h2, d02, dq2
            level *= 2
            if level > cap:
                raise QuadratureNotConverged(
                    f"{scheme} rule exceeded {cap} per-dim resolution "
                    f"(q={q}, amplitudes={np.round(aq, 6)})"
                )

    def _evaluate(self, p, need_gradient):
        p = np.asarray(p, dtype=float).reshape(-1)
        if p.shape[0] != self.system.dim:
            raise ZeroCovector(
                f"covector has length {p.shape[0]}, expected {self.system.dim}"
            )
        if not np.all(np.isfinite(p)):
            raise ZeroCovector("covector must be finite")
        a = self.amplitudes(p)
        scale = float(a.max(initial=0.0))
        if scale == 0.0:
            if need_gradient:
                raise ZeroCovector("gradient undefined at p = 0")
            return 0.0, None, False
        ahat = a / scale
        keep = np.flatnonzero(ahat > DEGENERATE_TOL)
        degenerate = keep.size < a.size
        if degenerate:
            warnings.warn(
                "support evaluation on a degenerate direction: "
                f"{a.size - keep.size} block amplitude(s) below 1e-12 of max",
                DegenerateDirection,
                stacklevel=3,
            )
        order = keep[np.argsort(ahat[keep])[::-1]]
        layer, quad = order[0], order[1:]
        q = quad.size
        scheme = self.quadrature.scheme
        if scheme == "auto":
            scheme = "trapezoid" if q <= 1 else "legendre"
        if q == 0:
            hhat, d_layer, dq = TWO_OVER_PI * ahat[layer], TWO_OVER_PI, np.zeros(0)
        else:
            hhat, d_layer, dq = self._refined(scheme, ahat[layer], ahat[quad], )
        value = scale * hhat
        if not need_gradient:
            return value, None, degenerate
        da = np.zeros(a.size)
        da[layer] = d_layer
        da[quad] = dq
        grad = (da[:, None] * self._amplitude_jacobian(p, a)).reshape(-1)
        return value, grad, degenerate

    def value(self, p) -> float:
        """H(p) >= 0; zero only at p = 0."""
        return self._evaluate(p, need_gradient=False)[0]

    def gradient(self, p) -> np.ndarray:
        """grad H(p), homogeneous of degree zero; Euler: <p, grad> = H(p)."""
        return self._evaluate(p, need_gradient=True)[1]

    def value_and_gradient(self, p):
        v, g, _ = self._evaluate(p, need_gradient=True)
        return v, g

    def time_average(self, p, horizon=1.0e4, dt=5.0e-3) -> float:
        """Finite-horizon time average of |<exp(tA)B, p>| (ergodic oracle)."""
        p = np.asarray(p, dtype=float).reshape(-1, 2)
        w = np.asarray(self.system.frequencies)
        t = np.arange(0.0, horizon + dt / 2, dt)
        sig = np.zeros_like(t)
        for j, wj in enumerate(w):
            sig += p[j, 0] * np.sin(wj * t) / wj + p[j, 1] * np.cos(wj * t)
        return float(np.trapezoid(np.abs(sig), t) / (t[-1] - t[0]))


class GaugeNorm:
    """Gauge rho(x) of the asymptotic reachable body, with momentum solve."""

    def __init__(
        self,
        support: SupportFunction,
        tol: float = 1e-8,
        target: float = 5e-13,
        max_iterations: int = 200,
    ):
        self.support = support
        self.system = support.system
        self.tol = tol
        self.target = target
        self.max_iterations = max_iterations

    # -- momentum solve ---------------------------------------------------

    def _fd_hessian(self, p, g, step=1e-6):
        """Forward-difference Hessian of H at p (g = grad H(p) already known)."""
        n = p.size
        cols = np.empty((n, n))
        for i in range(n):
            e = np.zeros(n)
            e[i] = step
            cols[:, i] = (self.support.gradient(p + e) - g) / step
        return 0.5 * (cols + cols.T)

    def _solve_unit(self, xu, warm=None, hess0=None):
        """Solve x = T grad H(p), H(p) = 1 for unit-norm xu.

        Damped Newton on F(p) = x/<p,x> - grad H(p) (whose root carries
        H(p) = 1 automatically via the Euler relation). The Newton matrix is
        assembled per iteration from the exact rank-one part and a model of
        the support Hessian, maintained by Broyden updates between
        finite-difference refreshes (and reusable across solves via
        ``hess0``). A projected-ascent fallback maximizing <p, x> on
        {H = 1} rescues failed steps.
        """
        sf = self.support
        # gradient and normalized iterate from one evaluation: both H's
        # gradient (degree 0) and the projection p/H(p) are scale-free
        p = None
        if warm is not None:
            warm = np.asarray(warm, dtype=float).reshape(-1)
            if warm.size == xu.size and np.all(np.isfinite(warm)):
                hw, g = sf.value_and_gradient(warm)
                if hw > 0.0:
                    p = warm / hw
        if p is None:
            hx, g = sf.value_and_gradient(xu)
            p = xu / hx
        best_p, best_T, best_r = p, float(p @ xu), np.inf
        rank1 = np.outer(xu, xu)
        hess = hess0 if hess0 is not None and hess0.shape == (xu.size, xu.size) else None
        hess_fresh = False
        p_prev = None
        g_prev = None
        iterations = 0
        for it in range(self.max_iterations):
            iterations = it
            T = float(p @ xu)
            if T <= 0.0:
                # wrong hemisphere: restart from the default initializer
                p = xu / sf.value(xu)
                g = sf.gradient(p)
                hess = None
                p_prev = None
                T = float(p @ xu)
            resid = float(np.linalg.norm(xu - T * g))
            if resid < best_r:
                best_p, best_T, best_r = p, T, resid
            if resid <= self.target:
                break
            if hess is None:
                hess = self._fd_hessian(p, g)
                hess_fresh = True
            elif p_prev is not None:
                # secant update of the Hessian model: dg ~ hess @ dp
                dp = p - p_prev
                dg = g - g_prev
                denom = float(dp @ dp)
                if denom > 0.0:
                    hess = hess + np.outer(dg - hess @ dp, dp) / denom
            p_prev, g_prev = p, g
            F = xu / T - g
            jac = -rank1 / T**2 - hess
            try:
                step = np.linalg.solve(jac, -F)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(jac, -F, rcond=None)[0]
            accepted = False
            alpha = 1.0
            while alpha >= 1.0 / 4096:
                cand = p + alpha * step
                try:
                    hc, gc = sf.value_and_gradient(cand)
                except ZeroCovector:
                    alpha *= 0.5
                    continue
                if hc > 1e-300:
                    cn = cand / hc
                    Tc = float(cn @ xu)
                    rc = float(np.linalg.norm(xu - Tc * gc))
                    if rc < resid:
                        p, g = cn, gc
                        accepted = True
                        break
                alpha *= 0.5
            if accepted:
                hess_fresh = False
                continue
            if not hess_fresh:
                # stale secant model: refresh and retry from the same point
                hess = None
                p_prev = None
                continue
            # projected ascent on <p, x> over {H = 1}
            d = xu - (g @ xu) / (g @ g) * g
            beta = 1.0
            T0 = float(p @ xu)
            while beta >= 1.0 / 4096:
                cand = p + beta * d
                hc, gc = sf.value_and_gradient(cand)
                cn = cand / hc
                if float(cn @ xu) > T0:
                    p, g = cn, gc
                    accepted = True
                    break
                beta *= 0.5
            hess = None
            p_prev = None
            if not accepted:
                break
        if best_r > self.tol:
            raise SolverNotConverged(
                f"momentum residual {best_r:.3e} > {self.tol:.1e} "
                f"after {iterations + 1} iterations"
            )
        return best_p, best_T, best_r, iterations, hess

    def solve(self, x, warm=None) -> Momentum:
        """Momentum (p, T) with H(p) = 1, x = T grad H(p), T = <p, x> = rho(x)."""
        x = np.asarray(x, dtype=float).reshape(-1)
        nx = float(np.linalg.norm(x))
        if nx < 1e-8:
            raise ZeroState(f"state norm {nx:.3e} below the 1e-8 degeneracy floor")
        p, T, r, its, _ = self._solve_unit(x / nx, warm)
        return Momentum(p=p, T=nx * T, residual=r, iterations=its)

    def tracker(self) -> "MomentumTracker":
        """Warm-started solver context for sequential states (trajectories)."""
        return MomentumTracker(self)

    # -- gauge and derivatives ---------------------------------------------

    def value(self, x) -> float:
        """rho(x) = max { <p, x> : H(p) <= 1 }; rho(0) = 0.

        Positive homogeneity is used to rescale the solve to the unit sphere,
        so arbitrarily small nonzero states are handled.
        """
        x = np.asarray(x, dtype=float).reshape(-1)
        nx = float(np.linalg.norm(x))
        if nx == 0.0:
            return 0.0
        return nx * self._solve_unit(x / nx)[1]

    def gradient(self, x, warm=None) -> np.ndarray:
        """grad rho(x) = p: the eikonal identity H(grad rho) = 1 holds."""
        return self.solve(x, warm).p

    def hessian_apply(self, x, v) -> np.ndarray:
        """(d^2 rho / dx^2)(x) @ v by central differences of the gradient.

        Homogeneous of degree -1 in x and annihilates x itself.
        """
        x = np.asarray(x, dtype=float).reshape(-1)
        v = np.asarray(v, dtype=float).reshape(-1)
        nv = float(np.linalg.norm(v))
        if nv == 0.0:
            return np.zeros_like(x)
        h = 1e-5 * float(np.linalg.norm(x))
        vhat = v / nv
        gp = self.gradient(x + h * vhat)
        gm = self.gradient(x - h * vhat)
        return (gp - gm) * (nv / (2.0 * h))


def rotate_momentum(system: OscillatorSystem, p, dt: float) -> np.ndarray:
    """Exact adjoint free flow p -> exp(-dt A^T) p (blockwise rotation).

    The momentum of a freely drifting state co-rotates this way, and the
    per-block amplitudes a_j are exactly invariant under it, which is what
    makes the gauge invariant under free motion at the discrete level too.
    """
    p = np.asarray(p, dtype=float).reshape(-1, 2).copy()
    for j, w in enumerate(system.frequencies):
        c, s = np.cos(w * dt), np.sin(w * dt)
        p1, p2 = p[j, 0].copy(), p[j, 1].copy()
        p[j, 0] = c * p1 + w * s * p2
        p[j, 1] = -s / w * p1 + c * p2
    return p.reshape(-1)


class MomentumTracker:
    """Warm-started momentum solves along a trajectory.

    Keeps the last momentum covector and the Broyden-maintained support
    Hessian model between solves; since the momentum is continuous along
    closed-loop trajectories, successive solves typically converge in one or
    two iterations without a finite-difference refresh.
    """

    def __init__(self, gauge: GaugeNorm):
        self.gauge = gauge
        self.p = None
        self._hess = None

    def solve(self, x) -> Momentum:
        x = np.asarray(x, dtype=float).reshape(-1)
        nx = float(np.linalg.norm(x))
        if nx < 1e-8:
            raise ZeroState(f"state norm {nx:.3e} below the 1e-8 degeneracy floor")
        p, T, r, its, hess = self.gauge._solve_unit(x / nx, self.p, self._hess)
        self.p = p
        self._hess = hess
        return Momentum(p=p, T=nx * T, residual=r, iterations=its)


# -- module-level operation wrappers -----------------------------------------


def support(sf: SupportFunction, p) -> float:
    return sf.value(p)


def support_gradient(sf: SupportFunction, p) -> np.ndarray:
    return sf.gradient(p)


def gauge(g: GaugeNorm, x) -> float:
    return g.value(x)


def solve_momentum(g: GaugeNorm, x, warm=None) -> Momentum:
    return g.solve(x, warm)


def gauge_gradient(g: GaugeNorm, x) -> np.ndarray:
    return g.gradient(x)


def gauge_hessian_apply(g: GaugeNorm, x, v) -> np.ndarray:
    return g.hessian_apply(x, v)
