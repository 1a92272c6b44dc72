"""Observability machinery: chain canonical forms, recovery error estimates.

The damping analysis treats the momentum evolution p' = -A^T p + (curvature)
B u as a perturbed observed system z' = Az + f, y = Cz. For observable
pairs, the L1 size of z over a unit-length window is controlled by the L1
sizes of the observation y and the perturbation f; this module provides

* reduction of an observable pair to the integrator-chain canonical form by
  a state change delta and output injection gamma,
* the map z -> (y, f) = (Cz, z' - Az) on sampled signals,
* the n-th order differential relation tying y to f in chain coordinates,
* randomized empirical lower bounds for the best constant in the recovery
  estimate, and
* L1 Kolmogorov-type ratios bounding intermediate derivatives.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import (
    GridTooCoarse,
    IllConditionedTransform,
    NotObservable,
)
from .model import ObservablePair, check_observability, matrix_rank_svd

MIN_SAMPLES_PER_UNIT = 16


# -- sampled signals ---------------------------------------------------------


@dataclass(frozen=True)
class SampledSignal:
    """Vector signal on a uniform grid spanning an integer-length interval."""

    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if grid.ndim != 1 or grid.size < 2:
            raise GridTooCoarse("grid must hold at least two samples")
        steps = np.diff(grid)
        if np.any(steps <= 0) or np.ptp(steps) > 1e-9 * steps[0]:
            raise ValueError("grid must be uniform and increasing")
        length = grid[-1] - grid[0]
        if abs(length - round(length)) > 1e-9 or round(length) < 1:
            raise ValueError(
                f"interval length {length} is not a positive integer"
            )
        if values.shape[0] != grid.size:
            raise ValueError("values and grid lengths differ")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)

    @property
    def dt(self) -> float:
        return float(self.grid[1] - self.grid[0])

    @property
    def samples_per_unit(self) -> float:
        return 1.0 / self.dt


def sampled_derivative(values, dt):
    """Fourth-order first derivative on a uniform grid, one-sided at the ends.

    values may be (n,) or (n, m).
    """
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    if n < 5:
        raise GridTooCoarse("need at least 5 samples for 4th-order stencils")
    out = np.empty_like(values)
    v = values
    out[2:-2] = (v[:-4] - 8 * v[1:-3] + 8 * v[3:-1] - v[4:]) / (12 * dt)
    out[0] = (-25 * v[0] + 48 * v[1] - 36 * v[2] + 16 * v[3] - 3 * v[4]) / (12 * dt)
    out[1] = (-3 * v[0] - 10 * v[1] + 18 * v[2] - 6 * v[3] + v[4]) / (12 * dt)
    out[-2] = (3 * v[-1] + 10 * v[-2] - 18 * v[-3] + 6 * v[-4] - v[-5]) / (12 * dt)
    out[-1] = (25 * v[-1] - 48 * v[-2] + 36 * v[-3] - 16 * v[-4] + 3 * v[-5]) / (12 * dt)
    return out


def _l1(grid, values):
    """Composite trapezoid of the pointwise (vector) magnitude."""
    values = np.asarray(values, dtype=float)
    mag = np.abs(values) if values.ndim == 1 else np.linalg.norm(values, axis=1)
    return float(np.trapezoid(mag, np.asarray(grid, dtype=float)))


# -- canonical form ----------------------------------------------------------


@dataclass(frozen=True)
class BrunovskyForm:
    """Chain canonical data: A_can = delta (A + gamma C) delta^-1, and
    C_can = C delta^-1 selects the head of each chain block."""

    delta: np.ndarray
    gamma: np.ndarray
    a_can: np.ndarray
    c_can: np.ndarray
    block_sizes: tuple
    certificate: float


def chain_pair(n: int) -> ObservablePair:
    """The length-n integrator chain observed at its head."""
    a = np.zeros((n, n))
    for k in range(n - 1):
        a[k, k + 1] = 1.0
    c = np.zeros((1, n))
    c[0, 0] = 1.0
    return ObservablePair(A=a, C=c, observable=True)


def _chain_matrices(block_sizes):
    n = sum(block_sizes)
    a = np.zeros((n, n))
    c = np.zeros((len(block_sizes), n))
    pos = 0
    for j, size in enumerate(block_sizes):
        for k in range(size - 1):
            a[pos + k, pos + k + 1] = 1.0
        c[j, pos] = 1.0
        pos += size
    return a, c


def canonical_residual(form: BrunovskyForm, pair: ObservablePair) -> float:
    """Entrywise error of the canonical-form identities (the certificate)."""
    a = np.asarray(pair.A, dtype=float)
    c = np.atleast_2d(np.asarray(pair.C, dtype=float))
    inv = np.linalg.inv(form.delta)
    lhs_a = form.delta @ (a + form.gamma @ c) @ inv
    lhs_c = c @ inv
    return float(
        max(np.max(np.abs(lhs_a - form.a_can)), np.max(np.abs(lhs_c - form.c_can)))
    )


def brunovsky_reduce(pair: ObservablePair) -> BrunovskyForm:
    """Reduce an observable pair to integrator-chain form.

    Scalar observation (m = 1): gamma places all observer poles at zero
    (dual Ackermann), making A + gamma C nilpotent; the observability matrix
    of the closed pair is then an exact chain-coordinate change. Multi-output
    pairs are handled by greedy observability indices with head-column output
    injection; this covers direct sums of scalar chains, and pairs whose
    cross-chain coupling survives the injection are rejected with
    IllConditionedTransform.
    """
    a = np.asarray(pair.A, dtype=float)
    c = np.atleast_2d(np.asarray(pair.C, dtype=float))
    n = a.shape[0]
    m = c.shape[0]
    if not check_observability(ObservablePair(A=a, C=c, observable=False)):
        raise NotObservable("pair fails the observability rank test")
    if m == 1:
        obs = np.vstack([c @ np.linalg.matrix_power(a, k) for k in range(n)])
        e_n = np.zeros(n)
        e_n[-1] = 1.0
        gamma = (-np.linalg.matrix_power(a, n) @ np.linalg.solve(obs, e_n)).reshape(n, 1)
        closed = a + gamma @ c
        delta = np.vstack([c @ np.linalg.matrix_power(closed, k) for k in range(n)])
        block_sizes = (n,)
    else:
        delta, gamma, block_sizes = _multi_output_reduction(a, c)
    if np.linalg.cond(delta) > 1e12:
        raise IllConditionedTransform(
            f"coordinate change condition number {np.linalg.cond(delta):.3e} > 1e12"
        )
    a_can, c_can = _chain_matrices(block_sizes)
    form = BrunovskyForm(
        delta=delta,
        gamma=gamma,
        a_can=a_can,
        c_can=c_can,
        block_sizes=tuple(block_sizes),
        certificate=0.0,
    )
    cert = canonical_residual(form, pair)
    form = BrunovskyForm(
        delta=delta,
        gamma=gamma,
        a_can=a_can,
        c_can=c_can,
        block_sizes=tuple(block_sizes),
        certificate=cert,
    )
    if cert > 1e-6:
        raise IllConditionedTransform(
            f"canonical-form certificate {cert:.3e} failed (cross-chain "
            "coupling not removable by head-column output injection)"
        )
    return form


def _multi_output_reduction(a, c):
    """Greedy observability indices + head-column output injection."""
    n = a.shape[0]
    m = c.shape[0]
    selected = []
    owners = []
    alive = [True] * m
    powers = [c[i] for i in range(m)]
    basis = np.zeros((0, n))
    k = 0
    while len(selected) < n and any(alive) and k < n:
        for i in range(m):
            if not alive[i]:
                continue
            row = powers[i]
            trial = np.vstack([basis, row])
            if matrix_rank_svd(trial) > basis.shape[0]:
                basis = trial
                selected.append((i, k, row))
                powers[i] = row @ a
            else:
                alive[i] = False
            if len(selected) == n:
                break
        k += 1
    if len(selected) < n:
        raise NotObservable("greedy row selection exhausted before rank n")
    block_sizes = []
    rows = []
    heads = []
    bottoms = []
    pos = 0
    for i in range(m):
        chain = [row for (j, _, row) in selected if j == i]
        if not chain:
            continue
        block_sizes.append(len(chain))
        heads.append(pos)
        rows.extend(chain)
        bottoms.append(pos + len(chain) - 1)
        pos += len(chain)
    delta = np.vstack(rows)
    inv = np.linalg.inv(delta)
    at = delta @ a @ inv
    # inject on head columns at bottom rows only (other rows are exact shifts)
    g = np.zeros((n, len(heads)))
    for bi in bottoms:
        for j, hj in enumerate(heads):
            g[bi, j] = -at[bi, hj]
    gamma = inv @ g
    return delta, gamma, tuple(block_sizes)


# -- observation map and relations -------------------------------------------


def phi_map(pair: ObservablePair, z: SampledSignal):
    """Map a sampled state curve to (y, f) = (Cz, z' - Az).

    The derivative uses 4th-order stencils; the grid must carry at least 16
    samples per unit time.
    """
    if z.samples_per_unit < MIN_SAMPLES_PER_UNIT:
        raise GridTooCoarse(
            f"{z.samples_per_unit:.1f} samples/unit < {MIN_SAMPLES_PER_UNIT}"
        )
    a = np.asarray(pair.A, dtype=float)
    c = np.atleast_2d(np.asarray(pair.C, dtype=float))
    values = z.values if z.values.ndim == 2 else z.values[:, None]
    y = values @ c.T
    if y.shape[1] == 1:
        y = y[:, 0]
    f = sampled_derivative(values, z.dt) - values @ a.T
    return SampledSignal(z.grid, y), SampledSignal(z.grid, f)


def observation_relation_residual(n: int, y: SampledSignal, f: SampledSignal) -> float:
    """Max-norm residual of d^n y/dt^n = sum_{k=0}^{n-1} d^k f_{n-k}/dt^k.

    Chain-form consistency check: y is the chain head, f the n perturbation
    components. The maximum is taken over the interior samples where every
    repeated stencil was centered (a 2n-sample layer at each boundary uses
    one-sided differences whose error constants would mask the identity).
    """
    if np.asarray(y.values).ndim != 1:
        raise ValueError("y must be scalar in chain form")
    fv = np.asarray(f.values, dtype=float)
    if fv.ndim == 1:
        fv = fv[:, None]
    if fv.shape[1] != n:
        raise ValueError(f"f has {fv.shape[1]} components, expected {n}")
    if y.samples_per_unit < MIN_SAMPLES_PER_UNIT * n:
        raise GridTooCoarse(
            f"{y.samples_per_unit:.1f} samples/unit is too coarse for order {n}"
        )
    dt = y.dt
    lhs = y.values
    for _ in range(n):
        lhs = sampled_derivative(lhs, dt)
    rhs = np.zeros_like(lhs)
    for k in range(n):
        term = fv[:, n - k - 1]
        for _ in range(k):
            term = sampled_derivative(term, dt)
        rhs = rhs + term
    margin = 2 * n
    if lhs.shape[0] <= 2 * margin + 1:
        raise GridTooCoarse("grid too short for the interior residual window")
    return float(np.max(np.abs(lhs - rhs)[margin:-margin]))


# -- empirical a priori constant ----------------------------------------------


@dataclass(frozen=True)
class EstimateConfig:
    samples: int = 1000
    seed: int = 0
    interval_start: float = 0.0
    interval_length: int = 1
    grid_per_unit: int = 256
    f_mass: float = 0.0
    trig_degree: int = 8


@dataclass(frozen=True)
class EstimateReport:
    c_lower: float
    samples: int
    seed: int
    interval_start: float
    interval_length: int
    f_mass: float
    worst_case: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "c_lower": self.c_lower,
            "samples": self.samples,
            "seed": self.seed,
            "interval_start": self.interval_start,
            "interval_length": self.interval_length,
            "f_mass": self.f_mass,
            "worst_case": self.worst_case,
        }


def _trig_values(coeffs, s, length):
    """Trig polynomials per component: [c0, a_1..a_K, b_1..b_K] encodes
    c0 + sum_k a_k cos(2 pi k s/L) + b_k sin(2 pi k s/L).

    coeffs (batch, dim, 2K+1) -> values (batch, len(s), dim).
    """
    coeffs = np.asarray(coeffs, dtype=float)
    deg = (coeffs.shape[-1] - 1) // 2
    base = 2.0 * np.pi * np.arange(1, deg + 1) / length
    cos = np.cos(np.outer(s, base))
    sin = np.sin(np.outer(s, base))
    c0 = coeffs[:, :, 0]
    ac = coeffs[:, :, 1 : deg + 1]
    bs = coeffs[:, :, deg + 1 :]
    vals = (
        c0[:, None, :]
        + np.einsum("bdk,tk->btd", ac, cos)
        + np.einsum("bdk,tk->btd", bs, sin)
    )
    return vals


def estimate_apriori_constant(
    pair: ObservablePair, config: EstimateConfig | None = None
) -> EstimateReport:
    """Empirical lower bound for the best constant c in the recovery estimate

        int |z| dt <= c ( int |Cz| dt + int |f| dt )

    over an integer-length interval. Random unit initial states and random
    trigonometric perturbations (degree <= trig_degree, rescaled to the
    prescribed L1 mass) are propagated through z' = Az + f; the maximal
    ratio over the sample set is returned with the maximizer recorded.
    """
    config = config or EstimateConfig()
    if config.interval_length < 1 or config.interval_length != int(config.interval_length):
        raise ValueError("interval_length must be a positive integer")
    if not check_observability(pair):
        raise NotObservable("estimate requires an observable pair")
    a = np.asarray(pair.A, dtype=float)
    c = np.atleast_2d(np.asarray(pair.C, dtype=float))
    n = a.shape[0]
    length = int(config.interval_length)
    rng = np.random.default_rng(config.seed)

    z0 = rng.normal(size=(config.samples, n))
    z0 /= np.linalg.norm(z0, axis=1, keepdims=True)

    n_grid = config.grid_per_unit * length + 1
    s = np.linspace(0.0, length, n_grid)
    grid = config.interval_start + s
    s_q = _quarter_grid(s)

    deg = config.trig_degree
    if config.f_mass > 0.0:
        coeffs = rng.uniform(-1.0, 1.0, size=(config.samples, n, 2 * deg + 1))
        f_fine = _trig_values(coeffs, s_q, length)
        f_vals = f_fine[:, ::4]
        mass = np.trapezoid(np.linalg.norm(f_vals, axis=2), s, axis=1)
        scale = config.f_mass / np.where(mass > 0, mass, 1.0)
        coeffs *= scale[:, None, None]
        f_fine *= scale[:, None, None]
        f_vals = f_fine[:, ::4]
    else:
        coeffs = None
        f_fine = np.zeros((config.samples, s_q.size, n))
        f_vals = f_fine[:, ::4]

    z = _integrate_batch(a, z0, f_fine, s)

    num = np.trapezoid(np.linalg.norm(z, axis=2), s, axis=1)
    y = np.einsum("mn,btn->btm", c, z)
    den_y = np.trapezoid(np.linalg.norm(y, axis=2), s, axis=1)
    den_f = np.trapezoid(np.linalg.norm(f_vals, axis=2), s, axis=1)
    ratios = num / (den_y + den_f)
    worst = int(np.argmax(ratios))
    worst_case = {
        "ratio": float(ratios[worst]),
        "z0": [float(v) for v in z0[worst]],
        "f_coeffs": None
        if coeffs is None
        else [[float(v) for v in row] for row in coeffs[worst]],
    }
    return EstimateReport(
        c_lower=float(ratios[worst]),
        samples=int(config.samples),
        seed=int(config.seed),
        interval_start=float(config.interval_start),
        interval_length=length,
        f_mass=float(config.f_mass),
        worst_case=worst_case,
    )


def _quarter_grid(s):
    """Uniform refinement of the grid s by 4 (for RK4 substep stages)."""
    n = (s.size - 1) * 4
    return s[0] + (s[-1] - s[0]) * np.arange(n + 1) / n


def _integrate_batch(a, z0, f_quarter, s):
    """RK4 on z' = A z + f(t) for a batch: z0 (b, n).

    ``f_quarter`` holds the forcing sampled on the 4x refined grid
    (shape (b, 4*(len(s)-1)+1, n)), so every RK4 stage sees exact forcing
    values. Two substeps per grid interval; returns z on s, (b, len(s), n).
    """
    b, n = z0.shape
    out = np.empty((b, s.size, n))
    out[:, 0] = z0
    z = z0
    at = a.T
    for k in range(s.size - 1):
        dt = s[k + 1] - s[k]
        base = 4 * k
        z = _rk4_step(
            at, z, f_quarter[:, base], f_quarter[:, base + 1],
            f_quarter[:, base + 2], 0.5 * dt,
        )
        z = _rk4_step(
            at, z, f_quarter[:, base + 2], f_quarter[:, base + 3],
            f_quarter[:, base + 4], 0.5 * dt,
        )
        out[:, k + 1] = z
    return out


def _rk4_step(at, z, f_lo, f_mid, f_hi, dt):
    k1 = z @ at + f_lo
    k2 = (z + 0.5 * dt * k1) @ at + f_mid
    k3 = (z + 0.5 * dt * k2) @ at + f_mid
    k4 = (z + dt * k3) @ at + f_hi
    return z + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def reconstruct_state(pair: ObservablePair, y: SampledSignal, f: SampledSignal):
    """Least-squares recovery of the state curve from (y, f) samples.

    Solves for the initial state minimizing the observation misfit given the
    forced response of f, and returns (z_samples, sigma_min) where sigma_min
    is the smallest singular value of the observation operator; it is
    positive exactly when the pair is observable, which is what forces
    z ~ 0 whenever (y, f) ~ 0.
    """
    a = np.asarray(pair.A, dtype=float)
    c = np.atleast_2d(np.asarray(pair.C, dtype=float))
    n = a.shape[0]
    grid = y.grid
    fv = np.asarray(f.values, dtype=float)
    if fv.ndim == 1:
        fv = fv[:, None]
    # forcing known at samples only: fill the RK4 stage grid by linear
    # interpolation (second-order in the forcing; exact for f = 0)
    s0 = grid - grid[0]
    s_q = _quarter_grid(s0)
    f_fine = np.stack([np.interp(s_q, s0, fv[:, j]) for j in range(fv.shape[1])], axis=1)
    zf = _integrate_batch(a, np.zeros((1, n)), f_fine[None, :, :], s0)[0]
    dt = grid[1] - grid[0]
    e = scipy.linalg.expm(a * dt)
    phi = np.empty((grid.size, n, n))
    phi[0] = np.eye(n)
    for k in range(1, grid.size):
        phi[k] = e @ phi[k - 1]
    design = np.concatenate([c @ phi[k] for k in range(grid.size)], axis=0)
    yv = np.asarray(y.values, dtype=float)
    if yv.ndim == 1:
        yv = yv[:, None]
    rhs = (yv - zf @ c.T).reshape(-1)
    z0, *_ = np.linalg.lstsq(design, rhs, rcond=None)
    sigma_min = float(np.linalg.svd(design, compute_uv=False)[-1])
    z = np.einsum("tnm,m->tn", phi, z0) + zf
    return z, sigma_min


# -- Kolmogorov-type ratio -----------------------------------------------------


def kolmogorov_ratio(y: SampledSignal, n: int) -> float:
    """LHS/RHS of the L1 interpolation inequality on the sampled interval:

        int |y'|  vs  (int |y^(n)|)^(1/n) * (int |y|)^((n-1)/n).

    Returns 0.0 when the signal is flat (0/0 by convention) and math.inf
    when the n-th derivative vanishes while y' does not (the inequality as
    stated has no finite normalization there).
    """
    if n < 2:
        raise ValueError("order n must be >= 2")
    yv = np.asarray(y.values, dtype=float)
    if yv.ndim != 1:
        raise ValueError("y must be scalar")
    if y.samples_per_unit < MIN_SAMPLES_PER_UNIT * n:
        raise GridTooCoarse(
            f"{y.samples_per_unit:.1f} samples/unit is too coarse for order {n}"
        )
    dt = y.dt
    scale = float(np.max(np.abs(yv)))
    if scale == 0.0:
        return 0.0
    d1 = sampled_derivative(yv, dt)
    dn = yv
    for _ in range(n):
        dn = sampled_derivative(dn, dt)
    lhs = _l1(y.grid, d1)
    int_y = _l1(y.grid, yv)
    int_dn = _l1(y.grid, dn)
    # numerical-noise floors for "exactly zero" derivatives
    floor_1 = 1e3 * np.finfo(float).eps * scale / dt
    floor_n = 1e3 * np.finfo(float).eps * scale / dt**n
    if lhs <= floor_1:
        return 0.0
    if int_dn <= floor_n:
        return float("inf")
    return float(lhs / (int_dn ** (1.0 / n) * int_y ** ((n - 1.0) / n)))
