"""Bang-bang damping feedback and switching-aware trajectory simulation.

The feedback law is u(x) = -sign <B, p(x)> with p the gauge gradient: along
closed-loop trajectories the gauge obeys rho' = -|<grad rho, B>| <= 0, so the
distance-to-rest measure decays monotonically. The simulator integrates with
a classical fixed-step RK4 scheme between control switches, locates every
control change to 1e-10 in time, and records momentum-based diagnostics at
every sample.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import BelowCutoff, StepTooLarge
from .geometry import GaugeNorm, Momentum, rotate_momentum
from .model import OscillatorSystem, flow_matrix

DEAD_ZONE = 1e-9
MAX_DEAD_ZONE = 1e-4
EVENT_TIME_TOL = 1e-10
MAX_FLIPS_PER_STEP = 10
MAX_STEP_HALVINGS = 8


def default_cutoff(system: OscillatorSystem) -> float:
    """Near-origin cutoff 10 * max(1, max_j w_j); inside this ball the
    asymptotic feedback has no decay guarantee and the simulator stops."""
    return 10.0 * max(1.0, max(system.frequencies))


def _dz_sign(sigma: float, dead_zone: float = DEAD_ZONE) -> int:
    if abs(sigma) < dead_zone:
        return 0
    return 1 if sigma > 0 else -1


def feedback_control(g: GaugeNorm, x, rho_cutoff: float | None = None) -> int:
    """u(x) = -sign <B, p(x)> in {-1, 0, +1}, with a 1e-9 dead zone on the
    observation <B, p>.

    Raises BelowCutoff when rho(x) is under the near-origin cutoff; the
    caller must stop or switch policy there.
    """
    cutoff = default_cutoff(g.system) if rho_cutoff is None else rho_cutoff
    m = g.solve(x)
    if m.T < cutoff:
        raise BelowCutoff(f"rho(x) = {m.T:.6g} < cutoff {cutoff:.6g}")
    return -_dz_sign(float(g.system.B @ m.p))


@dataclass
class Trajectory:
    """Closed-loop run: samples at every nominal step and every switch.

    ``controls[k]`` is the control applied on [times[k], times[k+1]).
    ``observations`` holds <B, p> and ``eikonal_residuals`` |H(p) - 1| per
    sample. Gauges are nonincreasing along feedback runs up to integration
    tolerance.
    """

    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    gauges: np.ndarray
    momenta: np.ndarray
    observations: np.ndarray
    eikonal_residuals: np.ndarray
    switch_times: np.ndarray
    cutoff_reached: bool
    step: float

    def __len__(self) -> int:
        return int(self.times.size)


@dataclass(frozen=True)
class DecayReport:
    rho_start: float
    rho_end: float
    elapsed: float
    mean_speed: float
    cutoff_reached: bool


def decay_report(traj: Trajectory) -> DecayReport:
    """Summarize gauge decay: mean_speed = (rho_0 - rho_T) / T >= 0."""
    if len(traj) < 2 or traj.times[-1] <= traj.times[0]:
        raise ValueError("decay report requires a trajectory of positive duration")
    rho0 = float(traj.gauges[0])
    rho1 = float(traj.gauges[-1])
    elapsed = float(traj.times[-1] - traj.times[0])
    return DecayReport(
        rho_start=rho0,
        rho_end=rho1,
        elapsed=elapsed,
        mean_speed=(rho0 - rho1) / elapsed,
        cutoff_reached=traj.cutoff_reached,
    )


class _Stepper:
    """Constant-control propagation: exact rotations for u = 0, RK4 else."""

    def __init__(self, system: OscillatorSystem):
        self.system = system
        self._flows: dict = {}

    def advance(self, x, u, dt):
        if dt == 0.0:
            return x
        if u == 0:
            if dt not in self._flows:
                self._flows[dt] = flow_matrix(self.system, dt)
            return self._flows[dt] @ x
        A, B = self.system.A, self.system.B
        bu = B * float(u)
        k1 = A @ x + bu
        k2 = A @ (x + 0.5 * dt * k1) + bu
        k3 = A @ (x + 0.5 * dt * k2) + bu
        k4 = A @ (x + dt * k3) + bu
        return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


class _Recorder:
    def __init__(self, system):
        self.system = system
        self.times: list = []
        self.states: list = []
        self.controls: list = []
        self.gauges: list = []
        self.momenta: list = []
        self.obs: list = []
        self.eik: list = []

    def add(self, t, x, u, m: Momentum, eik):
        self.times.append(float(t))
        self.states.append(np.array(x))
        self.controls.append(float(u))
        self.gauges.append(float(m.T))
        self.momenta.append(np.array(m.p))
        self.obs.append(float(self.system.B @ m.p))
        self.eik.append(float(eik))

    def truncate(self, n):
        for lst in (self.times, self.states, self.controls, self.gauges,
                    self.momenta, self.obs, self.eik):
            del lst[n:]

    def __len__(self):
        return len(self.times)


def simulate(
    system: OscillatorSystem,
    g: GaugeNorm,
    x0,
    *,
    step: float,
    max_time: float | None = None,
    target_gauge: float | None = None,
    rho_cutoff: float | None = None,
    control_override: float | None = None,
) -> Trajectory:
    """Integrate x' = A x + B u(x) with switching-aware fixed-step RK4.

    The control is held constant across each step; every change of the
    feedback value is located to 1e-10 in time and restarts the integrator
    there, so the classical order is preserved. Samples comprise all nominal
    grid points plus all switch instants.

    Chatter guard: more than 10 control flips inside one nominal step first
    widen the dead zone locally (up to 1e-3) - on attractive stretches of
    the switching surface the exact closed loop slides, and the widened band
    realizes the sliding segment as a bounded-rate hysteresis zigzag with
    u in {-1, 0, +1} and the gauge still nonincreasing. The band relaxes
    back to 1e-9 on event-free steps. If chatter persists at the widest
    band the step is halved, and after 8 halvings StepTooLarge is raised.

    At least one stopping rule (``max_time`` or ``target_gauge``) is
    required; the first one reached wins. Reaching the near-origin cutoff
    ends the run with ``cutoff_reached`` set. ``control_override`` replaces
    the feedback by a constant control (0 gives free motion, integrated by
    exact rotations).
    """
    if max_time is None and target_gauge is None:
        raise ValueError("a stopping rule is required: max_time or target_gauge")
    if step <= 0.0:
        raise ValueError("step must be positive")
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    cutoff = default_cutoff(system) if rho_cutoff is None else float(rho_cutoff)

    tracker = g.tracker()
    stepper = _Stepper(system)
    rec = _Recorder(system)
    sf = g.support
    B = system.B
    # bound on the drift of <B, p> not captured by the free co-rotation
    # predictor: |Hess rho| = O(1/rho), scaled generously by the frequencies
    hess_margin = 20.0 * max(1.0, max(system.frequencies))

    def probe(x):
        m = tracker.solve(x)
        return m, float(B @ m.p)

    def eik_of(m):
        return abs(sf.value(m.p) - 1.0)

    m, sigma = probe(x0)
    if m.T <= cutoff:
        raise BelowCutoff(f"rho(x0) = {m.T:.6g} is not above the cutoff {cutoff:.6g}")

    override = control_override is not None
    u = float(np.clip(control_override, -1.0, 1.0)) if override else float(-_dz_sign(sigma))

    t = 0.0
    x = x0
    rec.add(t, x, u, m, eik_of(m))
    switch_times: list = []
    cutoff_reached = False
    h = float(step)
    halvings = 0
    clean_streak = 0
    dz = DEAD_ZONE

    def first_change(xa, ua, p_a, rho_a, dt, dz):
        """First control switch in (0, dt] from state xa under held ua.

        The switching rule is a relay with hysteresis of half-width dz: the
        value u = -1 persists until sigma <= -dz (then u -> +1), u = +1
        until sigma >= +dz (then u -> -1), and u = 0 until |sigma| >= dz.
        Each control value thus persists until the observation reaches the
        far band boundary, which keeps the switching rate bounded on
        attractive (sliding) stretches of the surface while differing from
        the pointwise dead-zone law only on band-width slivers.

        Returns ("none", m_end, sigma_end) when no switch occurs over the
        window, else ("event", tau, x_tau, m_tau, u_new). The midpoint check
        uses the exact free co-rotation of p as a predictor and only solves
        when the prediction is within its error margin of a boundary.
        """

        def sigma_at(dtau):
            return float(B @ tracker.solve(stepper.advance(xa, ua, dtau)).p)

        def fires(s):
            if ua == -1:
                return s <= -dz
            if ua == 1:
                return s >= dz
            return abs(s) >= dz

        hit = None
        s_hit = None
        m_end = s_end = None
        for frac in (0.5, 1.0):
            dtau = frac * dt
            if frac < 1.0:
                margin = hess_margin * dtau / max(rho_a, 1.0)
                s_pred = float(B @ rotate_momentum(system, p_a, dtau))
                # distance from the prediction to the nearest firing boundary
                if ua != 0:
                    gap = s_pred + ua * dz
                else:
                    gap = dz - abs(s_pred)
                if gap > margin:
                    continue
                s_here = sigma_at(dtau)
            else:
                m_end = tracker.solve(stepper.advance(xa, ua, dtau))
                s_end = float(B @ m_end.p)
                s_here = s_end
            if fires(s_here):
                hit = dtau
                s_hit = s_here
                break
        if hit is None:
            return ("none", m_end, s_end)
        # the boundary being crossed: -dz for ua = -1, +dz for ua = +1, and
        # whichever side was reached for ua = 0
        boundary = -dz if ua == -1 else dz if ua == 1 else np.sign(s_hit) * dz
        tau = None
        try:
            tau = brentq(
                lambda dtau: sigma_at(dtau) - boundary, 0.0, hit, xtol=EVENT_TIME_TOL
            )
        except ValueError:
            lo, hi = 0.0, hit
            while hi - lo > EVENT_TIME_TOL:
                mid = 0.5 * (lo + hi)
                if fires(sigma_at(mid)):
                    hi = mid
                else:
                    lo = mid
            tau = hi
        x_tau = stepper.advance(xa, ua, tau)
        m_tau = tracker.solve(x_tau)
        u_new = -1 if boundary > 0 else 1
        return ("event", tau, x_tau, m_tau, u_new)

    while True:
        if max_time is not None and t >= max_time - 1e-12:
            break
        dt_window = h if max_time is None else min(h, max_time - t)
        window_state = (t, x, u, m, sigma)
        rec_mark, sw_mark = len(rec), len(switch_times)
        flips = 0
        retry = False
        remaining = dt_window
        while remaining > EVENT_TIME_TOL:
            if override:
                x = stepper.advance(x, u, remaining)
                t += remaining
                m, sigma = probe(x)
                remaining = 0.0
                break
            res = first_change(x, u, m.p, m.T, remaining, dz)
            if res[0] == "none":
                _, m_end, s_end = res
                x = stepper.advance(x, u, remaining)
                t += remaining
                m, sigma = m_end, s_end
                remaining = 0.0
            else:
                _, tau, x_tau, m_tau, u_new = res
                t += tau
                remaining -= tau
                x, m = x_tau, m_tau
                sigma = float(B @ m.p)
                switch_times.append(t)
                rec.add(t, x, u_new, m, eik_of(m))
                u = u_new
                flips += 1
                if flips > MAX_FLIPS_PER_STEP:
                    # sliding stretch of the switching surface: widen the
                    # hysteresis band before resorting to step halving; the
                    # flip spacing just observed estimates the surface slope,
                    # so the retry can jump close to the minimal band that
                    # bounds the rate (keeping the per-leg gauge wiggle,
                    # which scales as band^2 / slope, far below tolerance)
                    if dz < MAX_DEAD_ZONE:
                        gaps = np.diff(switch_times[sw_mark:])
                        dz_new = 4.0 * dz
                        if gaps.size:
                            g_med = float(np.median(gaps))
                            if g_med > 0.0:
                                dz_new = max(dz_new, dz * h / (10.0 * g_med))
                        dz = min(dz_new, MAX_DEAD_ZONE)
                    elif halvings < MAX_STEP_HALVINGS:
                        halvings += 1
                        h *= 0.5
                    else:
                        raise StepTooLarge(
                            f"more than {MAX_FLIPS_PER_STEP} control flips per "
                            f"step persist after {MAX_STEP_HALVINGS} halvings "
                            f"at hysteresis band {dz:g}"
                        )
                    t, x, u, m, sigma = window_state
                    rec.truncate(rec_mark)
                    del switch_times[sw_mark:]
                    retry = True
                    break
        if retry:
            clean_streak = 0
            continue
        if flips == 0:
            # relax the chatter mitigations once the surface is left behind
            clean_streak += 1
            if dz > DEAD_ZONE:
                dz = max(DEAD_ZONE, dz / 4.0)
            if clean_streak >= 8 and halvings > 0:
                halvings -= 1
                h = min(float(step), 2.0 * h)
                clean_streak = 0
        else:
            clean_streak = 0
        if not rec.times or t - rec.times[-1] > 1e-12:
            rec.add(t, x, u, m, eik_of(m))
        if target_gauge is not None and m.T <= target_gauge:
            _refine_target_crossing(rec, stepper, tracker, sf, float(target_gauge))
            break
        if m.T <= cutoff:
            cutoff_reached = True
            break

    return Trajectory(
        times=np.asarray(rec.times),
        states=np.asarray(rec.states),
        controls=np.asarray(rec.controls, dtype=float),
        gauges=np.asarray(rec.gauges),
        momenta=np.asarray(rec.momenta),
        observations=np.asarray(rec.obs),
        eikonal_residuals=np.asarray(rec.eik),
        switch_times=np.asarray(switch_times),
        cutoff_reached=cutoff_reached,
        step=float(step),
    )


def _refine_target_crossing(rec, stepper, tracker, sf, target):
    """Replace the final sample by the located crossing of rho = target."""
    if len(rec) < 2:
        return
    t_prev = rec.times[-2]
    x_prev = rec.states[-2]
    u_prev = rec.controls[-2]
    span = rec.times[-1] - t_prev
    if span <= EVENT_TIME_TOL:
        return

    def excess(dtau):
        return tracker.solve(stepper.advance(x_prev, u_prev, dtau)).T - target

    if excess(0.0) <= 0.0:
        return
    tau = brentq(excess, 0.0, span, xtol=1e-9)
    x_c = stepper.advance(x_prev, u_prev, tau)
    m_c = tracker.solve(x_c)
    rec.truncate(len(rec) - 1)
    rec.add(t_prev + tau, x_c, u_prev, m_c, abs(sf.value(m_c.p) - 1.0))


def _nonuniform_derivative(times, values):
    """Second-order first derivative on a non-uniform grid; NaN at endpoints.

    values may be (n,) or (n, m); the derivative matches the shape.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    out = np.full_like(values, np.nan)
    h1 = (times[1:-1] - times[:-2])[:, None] if values.ndim == 2 else times[1:-1] - times[:-2]
    h2 = (times[2:] - times[1:-1])[:, None] if values.ndim == 2 else times[2:] - times[1:-1]
    out[1:-1] = (
        -h2 / (h1 * (h1 + h2)) * values[:-2]
        + (h2 - h1) / (h1 * h2) * values[1:-1]
        + h1 / (h2 * (h1 + h2)) * values[2:]
    )
    return out


def polar_residual(traj: Trajectory, g: GaugeNorm) -> np.ndarray:
    """Per-sample residual of the radial law rho' = -|<grad rho, B>|.

    Returns |d rho/dt + |<B, p>|| at interior samples of feedback runs; NaN
    at the endpoints and wherever the applied control is 0 (the law as
    stated holds on controlled segments). Residual spikes are expected
    within one step of switch times, where the one-sided derivative spans
    the discontinuity.
    """
    if len(traj) < 3:
        raise ValueError("polar residual needs at least 3 samples")
    drho = _nonuniform_derivative(traj.times, traj.gauges)
    res = np.abs(drho + np.abs(traj.observations))
    res[traj.controls == 0.0] = np.nan
    return res


def adjoint_residual(traj: Trajectory, g: GaugeNorm, system: OscillatorSystem) -> np.ndarray:
    """Per-sample residual of p' = -A^T p + (d^2 rho/dx^2) B u.

    The momentum history is differentiated numerically; the curvature term
    uses central differences of the gauge gradient. NaN at endpoints.
    """
    if len(traj) < 3:
        raise ValueError("adjoint residual needs at least 3 samples")
    dp = _nonuniform_derivative(traj.times, traj.momenta)
    res = np.full(len(traj), np.nan)
    At = system.A.T
    for k in range(1, len(traj) - 1):
        u = traj.controls[k]
        term = dp[k] + At @ traj.momenta[k]
        if u != 0.0:
            term = term - u * g.hessian_apply(traj.states[k], system.B)
        res[k] = float(np.linalg.norm(term))
    return res


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """CSV export: header t,x1..xN,u,rho,obs,eik_res; floats as %.16e."""
    n = traj.states.shape[1]
    header = "t," + ",".join(f"x{i + 1}" for i in range(n)) + ",u,rho,obs,eik_res"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for k in range(len(traj)):
            row = [traj.times[k], *traj.states[k], traj.controls[k],
                   traj.gauges[k], traj.observations[k], traj.eikonal_residuals[k]]
            fh.write(",".join(f"{v:.16e}" for v in row) + "\n")
