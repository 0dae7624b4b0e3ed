import math

import pytest
from scipy import special

from caputo_ms import BasePoint, DrivingSystem, FracParams, dist
from caputo_ms.driving import assumption2_bound, assumption2_sup

TWO_PI = 2 * math.pi


class TestFlow:
    def test_identity_at_zero(self):
        sys = DrivingSystem(omega=1.3)
        p = BasePoint(0.7)
        assert sys.flow(0.0, p).angle == p.angle

    def test_full_rotation(self):
        sys = DrivingSystem(omega=1.0)
        assert sys.flow(TWO_PI, BasePoint(0.3)).angle == pytest.approx(0.3, abs=1e-12)

    def test_arithmetic(self):
        sys = DrivingSystem(omega=0.5)
        assert sys.flow(1.0, BasePoint(0.0)).angle == pytest.approx(0.5)

    def test_group_law_random_triples(self, rng):
        sys = DrivingSystem(omega=0.9)
        for _ in range(50):
            s, t = rng.uniform(-20, 20, size=2)
            p = BasePoint(rng.uniform(0, TWO_PI))
            left = sys.flow(t, sys.flow(s, p)).angle
            right = sys.flow(t + s, p).angle
            diff = abs(left - right)
            assert min(diff, TWO_PI - diff) < 1e-9

    def test_invertibility(self, rng):
        sys = DrivingSystem(omega=2.1)
        p = BasePoint(1.1)
        back = sys.flow(-3.7, sys.flow(3.7, p))
        assert back.angle == pytest.approx(p.angle, abs=1e-12)


class TestMetric:
    def test_identity(self):
        p = BasePoint(1.0)
        assert dist(p, p) == 0.0

    def test_antipodal(self):
        assert dist(BasePoint(0.0), BasePoint(math.pi)) == pytest.approx(math.pi)

    def test_wraparound(self):
        assert dist(BasePoint(0.1), BasePoint(TWO_PI - 0.1)) == pytest.approx(0.2)

    def test_metric_axioms_sampled(self, rng):
        pts = [BasePoint(a) for a in rng.uniform(0, TWO_PI, size=12)]
        for p in pts:
            for q in pts:
                d = dist(p, q)
                assert d == pytest.approx(dist(q, p))
                assert d <= math.pi + 1e-12
                for r in pts:
                    assert d <= dist(p, r) + dist(r, q) + 1e-12

    def test_flow_is_isometry(self, rng):
        sys = DrivingSystem(omega=1.7)
        for _ in range(25):
            p = BasePoint(rng.uniform(0, TWO_PI))
            q = BasePoint(rng.uniform(0, TWO_PI))
            t = rng.uniform(-10, 10)
            assert dist(sys.flow(t, p), sys.flow(t, q)) == pytest.approx(
                dist(p, q), abs=1e-12
            )


class TestOrbitIntegral:
    def test_constant_norm_reduces_to_kernel_mass(self):
        sys = DrivingSystem(omega=1.0, embed_norm=1.0)
        p = FracParams(alpha=0.75, varrho=2.0)
        val = assumption2_bound(sys, p, 3.0, BasePoint(0.2))
        oracle = p.varrho ** (-p.alpha) * special.gammainc(p.alpha, p.varrho * 3.0)
        assert val == pytest.approx(oracle, rel=1e-10)

    def test_vanishes_at_zero(self):
        sys = DrivingSystem(omega=1.0)
        assert assumption2_bound(sys, FracParams(0.75, 1.0), 0.0, BasePoint(0)) == 0.0

    def test_long_window_gamma_oracle(self):
        sys = DrivingSystem(omega=1.0)
        p = FracParams(alpha=0.75, varrho=1.0)
        val = assumption2_bound(sys, p, 10.0, BasePoint(0))
        assert val == pytest.approx(special.gammainc(0.75, 10.0), rel=1e-9)

    def test_bounded_by_sup(self, rng):
        sys = DrivingSystem(omega=2.0, embed_norm=1.0)
        p = FracParams(alpha=0.6, varrho=1.5)
        sup = assumption2_sup(sys, p)
        for t in (0.1, 1.0, 5.0, 40.0):
            assert assumption2_bound(sys, p, t, BasePoint(rng.uniform(0, TWO_PI))) <= sup * (
                1 + 1e-12
            )
