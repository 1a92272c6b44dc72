import warnings

import numpy as np
import pytest

from oscidamp.errors import (
    DegenerateDirection,
    QuadratureNotConverged,
    SolverNotConverged,
    ZeroCovector,
    ZeroState,
)
from oscidamp.geometry import (
    GaugeNorm,
    QuadratureSpec,
    SupportFunction,
    rotate_momentum,
)
from oscidamp.model import build_oscillator_system, flow_matrix

TWO_OVER_PI = 2.0 / np.pi


@pytest.fixture(scope="module")
def osc1():
    s = build_oscillator_system([1.0])
    sf = SupportFunction(s)
    return s, sf, GaugeNorm(sf)


@pytest.fixture(scope="module")
def osc2():
    s = build_oscillator_system([1.0, np.sqrt(2)])
    sf = SupportFunction(s)
    return s, sf, GaugeNorm(sf)


@pytest.fixture(scope="module")
def osc3():
    s = build_oscillator_system([1.0, np.sqrt(2), np.sqrt(3)])
    sf = SupportFunction(s)
    return s, sf, GaugeNorm(sf)


class TestSupport:
    def test_disk_oracle_omega_1(self, osc1):
        _, sf, _ = osc1
        # time average of |sin| is 2/pi; unit response amplitude
        assert abs(sf.value([1.0, 0.0]) - TWO_OVER_PI) < 1e-12

    def test_zero_covector(self, osc1):
        _, sf, _ = osc1
        assert sf.value([0.0, 0.0]) == 0.0
        with pytest.raises(ZeroCovector):
            sf.gradient([0.0, 0.0])

    def test_amplitude_scaling_omega_2(self):
        sf = SupportFunction(build_oscillator_system([2.0]))
        # response amplitude |p1|/w = 1/2
        assert abs(sf.value([1.0, 0.0]) - 1.0 / np.pi) < 1e-12

    def test_ellipse_oracle_random(self):
        # d = 1: H(p) = (2/pi) * hypot(p1/w, p2) for any frequency
        rng = np.random.default_rng(0)
        for w in (0.5, 1.0, 3.0):
            sf = SupportFunction(build_oscillator_system([w]))
            for _ in range(25):
                p = rng.normal(size=2) * rng.uniform(0.1, 10)
                oracle = TWO_OVER_PI * np.hypot(p[0] / w, p[1])
                assert abs(sf.value(p) - oracle) <= 1e-12 * oracle

    def test_gradient_symmetry(self, osc1):
        _, sf, _ = osc1
        np.testing.assert_allclose(
            sf.gradient([0.0, 1.0]), [0.0, TWO_OVER_PI], atol=1e-12
        )
        # degree-0 homogeneity
        np.testing.assert_allclose(
            sf.gradient([3.0, 0.0]), [TWO_OVER_PI, 0.0], atol=1e-12
        )

    def test_euler_identity(self, osc2):
        _, sf, _ = osc2
        rng = np.random.default_rng(1)
        for _ in range(50):
            p = rng.normal(size=4)
            h, g = sf.value_and_gradient(p)
            assert abs(p @ g - h) <= 1e-8 * max(1.0, h)

    def test_homogeneity(self, osc2):
        _, sf, _ = osc2
        rng = np.random.default_rng(2)
        for _ in range(100):
            p = rng.normal(size=4)
            lam = rng.uniform(0.01, 100.0)
            h = sf.value(p)
            assert abs(sf.value(lam * p) - lam * h) <= 1e-10 * lam * h

    def test_convexity_midpoint(self, osc2):
        _, sf, _ = osc2
        rng = np.random.default_rng(3)
        for _ in range(1000):
            p, q = rng.normal(size=4), rng.normal(size=4)
            mid = sf.value(0.5 * (p + q))
            assert mid <= 0.5 * (sf.value(p) + sf.value(q)) + 1e-8

    def test_degenerate_direction_flagged(self, osc2):
        _, sf, _ = osc2
        with warnings.catch_warnings(record=True) as rec:
            warnings.simplefilter("always")
            g = sf.gradient([0.0, 1.0, 0.0, 0.0])
        assert any(issubclass(w.category, DegenerateDirection) for w in rec)
        # reduced integrand: the vanished block contributes a zero gradient
        np.testing.assert_allclose(g, [0.0, TWO_OVER_PI, 0.0, 0.0], atol=1e-12)

    def test_quadrature_not_converged_on_capped_tie(self):
        # three equal amplitudes defeat the tensor-trapezoid rule within its
        # node cap (the kinked integrand converges only at second order)
        s = build_oscillator_system([1.0, np.sqrt(2), np.sqrt(3)])
        sf = SupportFunction(s, QuadratureSpec(scheme="trapezoid"))
        p = np.zeros(6)
        p[1] = p[3] = p[5] = 1.0
        with pytest.raises(QuadratureNotConverged):
            sf.value(p)

    def test_schemes_cross_validate_d3(self, osc3):
        _, sf, _ = osc3
        sf_trap = SupportFunction(
            sf.system, QuadratureSpec(scheme="trapezoid", nodes=512, auto_refine=False)
        )
        rng = np.random.default_rng(4)
        for _ in range(5):
            p = rng.normal(size=6)
            assert abs(sf.value(p) - sf_trap.value(p)) < 1e-5

    def test_commensurability_flag(self):
        assert SupportFunction(build_oscillator_system([1.0, 2.0])).commensurable
        assert not SupportFunction(
            build_oscillator_system([1.0, np.sqrt(2)])
        ).commensurable

    def test_time_average_cross_validation(self, osc2):
        _, sf, _ = osc2
        rng = np.random.default_rng(5)
        for _ in range(3):
            p = rng.normal(size=4)
            p /= np.linalg.norm(p)
            assert abs(sf.value(p) - sf.time_average(p, horizon=2.0e3)) < 2e-3


class TestGauge:
    def test_disk_gauge(self, osc1):
        _, _, g = osc1
        assert abs(g.value([1.0, 0.0]) - np.pi / 2) < 1e-10
        assert g.value([0.0, 0.0]) == 0.0

    def test_ellipse_gauge_oracle(self):
        # dual of H: rho(x) = (pi/2) * hypot(w x1, x2)
        rng = np.random.default_rng(6)
        for w in (0.5, 2.0):
            g = GaugeNorm(SupportFunction(build_oscillator_system([w])))
            for _ in range(20):
                x = rng.normal(size=2) * rng.uniform(0.5, 20)
                oracle = 0.5 * np.pi * np.hypot(w * x[0], x[1])
                assert abs(g.value(x) - oracle) <= 1e-6 * oracle

    def test_momentum_examples(self, osc1):
        _, _, g = osc1
        m = g.solve([1.0, 0.0])
        np.testing.assert_allclose(m.p, [np.pi / 2, 0.0], atol=1e-10)
        assert abs(m.T - np.pi / 2) < 1e-10
        m = g.solve([0.0, -2.0])
        np.testing.assert_allclose(m.p, [0.0, -np.pi / 2], atol=1e-10)
        assert abs(m.T - np.pi) < 1e-10

    def test_momentum_zero_state(self, osc1):
        _, _, g = osc1
        with pytest.raises(ZeroState):
            g.solve(np.zeros(2))
        with pytest.raises(ZeroState):
            g.solve([1e-9, 0.0])

    def test_momentum_residual_and_euler(self, osc2):
        _, sf, g = osc2
        rng = np.random.default_rng(7)
        for _ in range(20):
            x = rng.normal(size=4) * rng.uniform(0.5, 50)
            m = g.solve(x)
            assert np.linalg.norm(x - m.T * sf.gradient(m.p)) <= 1e-8 * np.linalg.norm(x)
            assert abs(m.p @ x - m.T) <= 1e-9 * m.T
            assert abs(sf.value(m.p) - 1.0) <= 1e-10

    def test_momentum_brute_force_oracle_degenerate_direction(self, osc2):
        # x = e2: independent maximization of <p, x> over a dense sample of
        # the unit support sphere must approach T from below
        _, sf, g = osc2
        x = np.array([0.0, 1.0, 0.0, 0.0])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateDirection)
            m = g.solve(x)
            rng = np.random.default_rng(8)
            best = 0.0
            for _ in range(200):
                v = rng.normal(size=(500, 4))
                hv = np.array([sf.value(row) for row in v])
                best = max(best, np.max((v @ x) / hv))
        assert best <= m.T + 1e-9
        assert best >= m.T - 5e-3
        assert abs(m.T - np.pi / 2) < 1e-9  # block-2 amplitude vanishes

    def test_gauge_flow_invariance(self, osc2):
        s, _, g = osc2
        rng = np.random.default_rng(9)
        for _ in range(20):
            x = rng.normal(size=4) * 5
            t = rng.uniform(0.0, 10.0)
            rho = g.value(x)
            assert abs(g.value(flow_matrix(s, t) @ x) - rho) <= 1e-8 * rho

    def test_warm_start(self, osc2):
        _, _, g = osc2
        x = np.array([3.0, 1.0, -2.0, 0.5])
        m0 = g.solve(x)
        m1 = g.solve(x * 1.01, warm=m0.p)
        assert m1.iterations <= m0.iterations
        assert m1.residual <= 1e-8

    def test_tracker_matches_cold_solves(self, osc2):
        _, _, g = osc2
        tr = g.tracker()
        rng = np.random.default_rng(10)
        x = rng.normal(size=4) * 10
        for k in range(5):
            xk = x + 0.05 * k
            np.testing.assert_allclose(tr.solve(xk).p, g.solve(xk).p, atol=1e-9)


class TestGradientsAndHessian:
    def test_gauge_gradient_d1(self, osc1):
        _, _, g = osc1
        np.testing.assert_allclose(g.gradient([1.0, 0.0]), [np.pi / 2, 0.0], atol=1e-10)
        # degree-0: gradient unchanged under scaling
        np.testing.assert_allclose(
            g.gradient([5.0, 0.0]), g.gradient([1.0, 0.0]), atol=1e-10
        )

    def test_gauge_gradient_finite_differences(self, osc2):
        # pinned quadrature rule keeps the discretization identical across
        # the stencil, isolating the gradient identity itself
        s, _, _ = osc2
        sf = SupportFunction(s, QuadratureSpec(nodes=512, auto_refine=False))
        g = GaugeNorm(sf, target=1e-14)
        rng = np.random.default_rng(11)
        for _ in range(5):
            x = rng.normal(size=4) * 3
            grad = g.gradient(x)
            fd = np.empty(4)
            h = 1e-6 * np.linalg.norm(x)
            for i in range(4):
                e = np.zeros(4)
                e[i] = h
                fd[i] = (g.value(x + e) - g.value(x - e)) / (2 * h)
            assert np.linalg.norm(fd - grad) <= 1e-5 * np.linalg.norm(grad)

    def test_eikonal_identity(self, osc3):
        _, sf, g = osc3
        rng = np.random.default_rng(12)
        for _ in range(10):
            x = rng.normal(size=6) * rng.uniform(1, 30)
            assert abs(sf.value(g.gradient(x)) - 1.0) <= 1e-6

    def test_hessian_example(self, osc1):
        # Hessian of (pi/2)|x| at (1, 0) is (pi/2) diag(0, 1)
        _, _, g = osc1
        hv = g.hessian_apply([1.0, 0.0], [0.0, 1.0])
        np.testing.assert_allclose(hv, [0.0, np.pi / 2], atol=1e-6)

    def test_hessian_degree_minus_one(self, osc2):
        _, _, g = osc2
        x = np.array([2.0, -1.0, 0.5, 1.5])
        v = np.array([0.3, 1.0, -0.2, 0.4])
        h1 = g.hessian_apply(x, v)
        h2 = g.hessian_apply(2.0 * x, v)
        np.testing.assert_allclose(h2, 0.5 * h1, rtol=1e-4, atol=1e-9)

    def test_hessian_annihilates_state(self, osc2):
        _, _, g = osc2
        rng = np.random.default_rng(13)
        for _ in range(5):
            x = rng.normal(size=4) * 2
            v = rng.normal(size=4)
            hv = g.hessian_apply(x, v)
            assert abs(x @ hv) <= 1e-6 * np.linalg.norm(v)

    def test_rotate_momentum_is_adjoint_flow(self, osc2):
        import scipy.linalg

        s, _, _ = osc2
        rng = np.random.default_rng(14)
        p = rng.normal(size=4)
        t = 0.83
        expected = scipy.linalg.expm(-t * s.A.T) @ p
        np.testing.assert_allclose(rotate_momentum(s, p, t), expected, atol=1e-12)
