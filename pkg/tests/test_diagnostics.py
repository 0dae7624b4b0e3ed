import math

import numpy as np
import pytest

from caputo_ms import (
    BasePoint,
    ConfigError,
    FracParams,
    NoiseParams,
    TimeGrid,
    bound_constants,
    check_shift_bound,
    check_moment_bound,
    cocycle_test,
    constant_field,
    convolution_variance,
    estimate_moments,
    exp_decay_state,
    linear_decay_field,
    omega_limit_proxy,
    rho_metric,
    time_modulus,
    theta_equilipschitz,
    weighted_norm,
    zero_field,
)
from caputo_ms.diagnostics import absorbing_scan


class TestEstimateMoments:
    def test_noise_off_zero_field_exact(self, fp, sysd, origin, small_grid):
        npar = NoiseParams(0.7, 1.0)
        ser = estimate_moments(
            fp, npar, zero_field(), [2.0], origin, sysd, small_grid, 10, 1, noise_on=False
        )
        expect = 4.0 * np.exp(-2 * fp.varrho * small_grid.times)
        assert np.max(np.abs(ser.msq - expect)) <= 1e-14
        assert np.all(ser.se == 0)

    def test_noise_on_zero_field_matches_quadrature(self, fp, npar, sysd, origin, small_grid):
        reps = 6000
        ser = estimate_moments(
            fp, npar, zero_field(), [1.0], origin, sysd, small_grid, reps, 3
        )
        for t in (0.5, 1.0):
            k = small_grid.index(t)
            expect = convolution_variance(fp, npar, t) + np.exp(-2 * fp.varrho * t)
            assert abs(ser.msq[k] - expect) <= 3 * ser.se[k]

    def test_vector_state_noise_scales_with_dimension(self, fp, npar, sysd, origin, small_grid):
        # coordinates carry independent noise copies: msq ~ d * scalar variance
        ser = estimate_moments(
            fp, npar, zero_field(2), [1.0, 0.5], origin, sysd, small_grid, 4000, 19
        )
        k = small_grid.index(1.0)
        expect = 2.0 * convolution_variance(fp, npar, 1.0) + 1.25 * math.exp(
            -2 * fp.varrho * 1.0
        )
        assert abs(ser.msq[k] - expect) <= 3 * ser.se[k]

    def test_se_halves_when_reps_quadruple(self, fp, npar, field, sysd, origin, small_grid):
        s1 = estimate_moments(fp, npar, field, [1.0], origin, sysd, small_grid, 1000, 5)
        s4 = estimate_moments(fp, npar, field, [1.0], origin, sysd, small_grid, 4000, 5)
        ratio = np.median(s1.se[1:] / s4.se[1:])
        assert 1.7 <= ratio <= 2.3

    def test_deterministic_across_workers(self, fp, npar, field, sysd, origin, small_grid):
        a = estimate_moments(fp, npar, field, [1.0], origin, sysd, small_grid, 300, 9, workers=1)
        b = estimate_moments(fp, npar, field, [1.0], origin, sysd, small_grid, 300, 9, workers=3)
        assert np.array_equal(a.msq, b.msq)
        assert np.array_equal(a.se, b.se)


class TestMomentBound:
    def test_zero_field_constants_reduce(self, fp, npar, sysd):
        cons = bound_constants(fp, npar, zero_field(), sysd, 1.0)
        assert cons["L"] == 0.0 and cons["g00_sq"] == 0.0 and cons["q"] == 0.0
        h = npar.hurst
        noise_term = (
            3
            * (h - 0.5) ** 2
            * math.gamma(h - 0.5)
            * math.gamma(2 - 2 * h)
            / math.gamma(1.5 - h)
            * cons["kernel_pair_memory"]
            / math.gamma(fp.alpha) ** 2
        )
        assert cons["M2"] == pytest.approx(noise_term, rel=1e-12)

    def test_rhs_at_time_zero_dominates(self, fp, npar, field, sysd, origin):
        grid = TimeGrid(horizon=0.5, dt=1.0 / 64.0)
        rep = check_moment_bound(fp, npar, field, [1.0], origin, sysd, grid, 400, 11)
        assert rep.rhs[0] >= 3.0 * rep.lhs[0]

    def test_linear_field_dominated(self, fp, npar, field, sysd, origin, small_grid):
        rep = check_moment_bound(fp, npar, field, [1.0], origin, sysd, small_grid, 2000, 42)
        assert rep.overall
        assert np.all(rep.lhs <= rep.rhs + 3 * rep.se)

    def test_inapplicable_when_series_diverges(self, npar, sysd, origin, small_grid):
        p = FracParams(0.75, 1.0)
        strong = linear_decay_field(2.0)  # L = 4, q = 24 * 2^0.75 > 1
        rep = check_moment_bound(p, npar, strong, [1.0], origin, sysd, small_grid, 100, 1)
        assert rep.inapplicable and rep.overall

    def test_constants_reproducible(self, fp, npar, field, sysd):
        a = bound_constants(fp, npar, field, sysd, 1.0)
        b = bound_constants(fp, npar, field, sysd, 1.0)
        assert a == b


class TestAbsorbing:
    def test_inside_ball_zero_field_absorbed_immediately(self, fp, npar, sysd, small_grid):
        cons = bound_constants(fp, npar, zero_field(), sysd, 1.0)
        r_small = math.sqrt(0.25 * cons["R_star_sq"])
        rep = absorbing_scan(
            fp, npar, zero_field(), sysd, [r_small], [BasePoint(0.0)], small_grid, 2000, 2
        )
        key = next(iter(rep.details["t_hat"]))
        assert rep.details["t_hat"][key] == 0.0

    def test_big_start_absorbed_and_p_uniform(self, fp, npar, field, sysd, small_grid):
        cons = bound_constants(fp, npar, field, sysd, 1.0)
        radius = math.sqrt(40 * cons["R_star_sq"])
        p0s = [BasePoint(a) for a in (0.0, 2.0, 4.0)]
        rep = absorbing_scan(fp, npar, field, sysd, [radius], p0s, small_grid, 1500, 4)
        assert rep.overall
        hats = list(rep.details["t_hat"].values())
        assert all(h is not None for h in hats)
        # the field ignores the base point, so entry times agree exactly
        assert max(hats) - min(hats) == 0.0

    def test_faster_decay_absorbs_sooner(self, npar, field, sysd, small_grid):
        slow = FracParams(0.75, 2.0)
        fast = FracParams(0.75, 6.0)
        out = {}
        for tag, p in (("slow", slow), ("fast", fast)):
            cons = bound_constants(p, npar, field, sysd, 1.0)
            radius = math.sqrt(100 * cons["R_star_sq"])
            rep = absorbing_scan(
                p, npar, field, sysd, [radius], [BasePoint(0.0)], small_grid, 1500, 4
            )
            out[tag] = next(iter(rep.details["t_hat"].values()))
        assert out["fast"] <= out["slow"]


class TestTimeModulus:
    def test_offsets_validated(self, fp, npar, field, sysd, origin, small_grid):
        with pytest.raises(ConfigError):
            time_modulus(
                fp, npar, field, [1.0], origin, sysd, small_grid, 0.5, [0.125, 0.25], 100, 1
            )

    def test_deterministic_power_slope(self, sysd, origin):
        # x0 = 0, constant field, t0 = 0: difference is c * mass(theta), slope 2 alpha
        p = FracParams(0.75, 1.0)
        npar = NoiseParams(0.7, 1.0)
        grid = TimeGrid(horizon=0.5, dt=1.0 / 256.0)
        thetas = [2.0**-k for k in range(3, 9)]
        rep = time_modulus(
            p,
            npar,
            constant_field(1.0),
            [0.0],
            origin,
            sysd,
            grid,
            0.0,
            thetas,
            10,
            1,
            noise_on=False,
        )
        assert rep.details["slope"] >= 2 * p.alpha - 0.1
        assert rep.details["slope"] <= 2 * p.alpha + 0.05

    def test_coupled_noise_slope_near_prediction(self, fp, npar, field, sysd, origin):
        grid = TimeGrid(horizon=2.125, dt=1.0 / 256.0)
        thetas = [2.0**-k for k in range(3, 9)]
        rep = time_modulus(
            fp, npar, field, [1.0], origin, sysd, grid, 2.0, thetas, 3000, 42
        )
        assert rep.constants["predicted_exponent"] == pytest.approx(0.9)
        assert abs(rep.details["slope"] - 0.9) <= 0.15


class TestShiftBound:
    def test_zero_field_dominated(self, fp, npar, sysd, origin, small_grid):
        rep = check_shift_bound(
            fp, npar, zero_field(), [[1.0]], [origin], sysd, small_grid, 0.5,
            [0.0, 0.125, 0.25], 2000, 7,
        )
        assert rep.overall

    def test_offset_zero_bound_is_twice_radius(self, fp, npar, field, sysd, origin, small_grid):
        rep = check_shift_bound(
            fp, npar, field, [[1.0]], [origin], sysd, small_grid, 0.5,
            [0.0, 0.25], 500, 7,
        )
        cons = rep.constants
        assert rep.rhs[0] == pytest.approx(2 * cons["R_star_sq"], rel=1e-12)
        assert rep.lhs[0] <= cons["R_star_sq"]

    def test_linear_field_offset_set_satisfied(self, fp, npar, field, sysd, origin):
        # baseline field, post-absorption shift, the standard offset set
        grid = TimeGrid(horizon=3.0, dt=1.0 / 64.0)
        rep = check_shift_bound(
            fp, npar, field, [[1.0]], [origin], sysd, grid, 1.0,
            [0.25, 0.5, 1.0, 2.0], 2000, 21,
        )
        assert rep.overall


class TestEquiLipschitz:
    def test_closed_form_when_deterministic(self, fp, sysd, origin):
        # zero field, no noise: difference is the forcing decay increment
        grid = TimeGrid(horizon=4.0, dt=1.0 / 64.0)
        state = exp_decay_state(fp, [1.0], grid, base=origin)
        from caputo_ms import cocycle_apply

        t, theta, delta = 2.0, 1.0, 0.25
        vals = cocycle_apply(fp, zero_field(), state, sysd, t, [theta, theta + delta])
        diff_sq = float((vals[0, 0] - vals[1, 0]) ** 2)
        expect = (
            math.exp(-fp.varrho * (t + theta)) - math.exp(-fp.varrho * (t + theta + delta))
        ) ** 2
        assert diff_sq == pytest.approx(expect, rel=1e-12)

    def test_delta_validation(self, fp, npar, field, sysd, origin, small_grid):
        with pytest.raises(ConfigError):
            theta_equilipschitz(
                fp, npar, field, [[1.0]], [origin], sysd, small_grid, 0.25, 0.25,
                [0.125], 100, 1,
            )

    def test_slope_at_least_declared_exponent(self, fp, npar, field, sysd, origin):
        grid = TimeGrid(horizon=3.25, dt=1.0 / 256.0)
        deltas = [2.0**-k for k in range(3, 9)]
        rep = theta_equilipschitz(
            fp, npar, field, [[1.0]], [origin], sysd, grid, 2.0, 1.0, deltas, 2000, 42
        )
        slope = next(iter(rep.details["slopes"].values()))
        assert slope >= min(2.0, 2 * fp.alpha) - 0.15
        assert rep.overall


class TestCocycleIdentity:
    def test_trivial_shifts_are_exact(self, fp, npar, field, sysd, origin):
        grid = TimeGrid(horizon=2.0, dt=1.0 / 64.0)
        state = exp_decay_state(fp, [1.0], grid, base=origin)
        for tau, sigma in ((0.0, 0.5), (0.5, 0.0)):
            rep = cocycle_test(
                fp, npar, field, sysd, state, tau, sigma, [0.0, 0.5], 200, 3
            )
            assert np.max(np.abs(rep.lhs - rep.rhs)) <= 1e-12 * max(1.0, rep.lhs.max())

    def test_zero_field_second_moments_agree(self, fp, npar, sysd, origin):
        grid = TimeGrid(horizon=2.0, dt=1.0 / 64.0)
        state = exp_decay_state(fp, [1.0], grid, base=origin)
        rep = cocycle_test(
            fp, npar, zero_field(), sysd, state, 0.5, 0.5, [0.0, 0.5, 1.0], 4000, 11
        )
        assert rep.overall

    def test_linear_field_second_moments_agree(self, fp, npar, field, sysd, origin):
        grid = TimeGrid(horizon=2.0, dt=1.0 / 64.0)
        state = exp_decay_state(fp, [1.0], grid, base=origin)
        rep = cocycle_test(
            fp, npar, field, sysd, state, 0.5, 0.5, [0.0, 0.5, 1.0], 4000, 11
        )
        assert rep.overall


class TestWeightedNorm:
    def test_zero_function(self):
        grid = TimeGrid(horizon=8.0, dt=1.0 / 8.0)
        wn = weighted_norm(grid, np.zeros(grid.n + 1), 0.75, 8)
        assert wn.value == 0.0

    def test_constant_function_arithmetic_oracle(self):
        # c^2 (1 + sum_{N<=20} 2^-N N^-1.5) by direct 20-term arithmetic
        grid = TimeGrid(horizon=20.0, dt=1.0 / 20.0)
        c = 1.7
        wn = weighted_norm(grid, np.full(grid.n + 1, c**2), 0.75, 20)
        oracle = c**2 * (1 + sum(2.0**-N * N**-1.5 for N in range(1, 21)))
        assert wn.value == pytest.approx(oracle, rel=1e-12)

    def test_truncation_within_tail_bound(self):
        grid = TimeGrid(horizon=30.0, dt=1.0 / 30.0)
        msq = np.full(grid.n + 1, 2.0)
        w20 = weighted_norm(grid, msq, 0.75, 20)
        w30 = weighted_norm(grid, msq, 0.75, 30)
        assert abs(w30.value - w20.value) <= w20.tail_bound

    def test_grid_coverage_required(self):
        from caputo_ms import DomainError

        grid = TimeGrid(horizon=4.0, dt=1.0 / 8.0)
        with pytest.raises(DomainError):
            weighted_norm(grid, np.zeros(grid.n + 1), 0.75, 10)

    def test_metric_bounds(self):
        grid = TimeGrid(horizon=8.0, dt=1.0 / 8.0)
        zero = rho_metric(grid, np.zeros(grid.n + 1), nmax=8)
        assert zero == 0.0
        huge = rho_metric(grid, np.full(grid.n + 1, 1e9), nmax=8)
        assert huge <= 1.0


class TestOmegaProxy:
    def test_zero_field_contained_and_flat(self, fp, npar, sysd, origin):
        grid = TimeGrid(horizon=4.0, dt=1.0 / 64.0)
        rep = omega_limit_proxy(
            fp, npar, zero_field(), sysd, [[1.0]], [origin], grid,
            [2.0, 2.5, 3.0], 2000, 13,
        )
        assert rep.overall
        # cloud collapses to the stationary convolution-variance level
        tag = next(iter(rep.details["fingerprints"]))
        msqs = [v["msq"] for v in rep.details["fingerprints"][tag].values()]
        level = convolution_variance(fp, npar, 2.0)
        assert all(abs(m - level) <= 0.15 * level for m in msqs)

    def test_linear_field_contained(self, fp, npar, field, sysd, origin):
        grid = TimeGrid(horizon=4.0, dt=1.0 / 64.0)
        rep = omega_limit_proxy(
            fp, npar, field, sysd, [[1.0]], [origin], grid, [2.0, 2.5, 3.0], 1500, 17
        )
        assert rep.overall
        assert rep.details["monotone"]
