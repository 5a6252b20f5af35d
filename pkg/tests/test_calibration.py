import json
import math
import time

import numpy as np
import pytest
from scipy import integrate, optimize
from scipy.stats import foldnorm

from abcgbi import calibration
from abcgbi.calibration import (MATCH_RATIO, calibrate_w, estimate_delta0, g_epsilon, g_prime, g_second,
                                implied_abc_epsilon, match_exponential_to_uniform, minimize_mean,
                                select_delta_thomas)
from abcgbi.exceptions import CalibrationError
from abcgbi.loss import GaussianDiscrepancyField
from abcgbi.model import ParameterBox, RngStream


def l1_quadrature(h, eps):
    """∫_0^∞ |1{r<=ε}/ε - e^{-r/h}/h| dr by adaptive quadrature."""
    f = lambda r: abs((1.0 / eps if r <= eps else 0.0) - math.exp(-r / h) / h)
    pts = [eps]
    if h < eps:
        pts.append(h * math.log(eps / h))  # where the two kernels cross
    inner, _ = integrate.quad(f, 0, eps, points=sorted(p for p in pts if 0 < p < eps) or None,
                              epsabs=1e-13, epsrel=1e-12, limit=200)
    return inner + math.exp(-eps / h)


def field_of(mean_fn, var=0.1):
    return GaussianDiscrepancyField(mean_fn, lambda t: np.full(np.shape(t)[:-1], var) if np.ndim(t) > 1 else var)


class TestRoot:
    def test_ratio_in_range(self):
        assert 0.585 <= MATCH_RATIO <= 0.595
        assert abs(g_prime(MATCH_RATIO)) < 1e-12

    def test_against_brentq(self):
        ref = optimize.brentq(lambda a: a * a * math.log(a) + math.exp(-1 / a), 0.4, 0.99, xtol=1e-15)
        assert MATCH_RATIO == pytest.approx(ref, abs=1e-10)

    def test_bracket(self):
        assert g_prime(0.4) < 0
        assert g_prime(1.0) == pytest.approx(2 / math.e, rel=1e-15)

    def test_convex_on_unit_interval(self):
        for a in np.linspace(0.01, 0.99, 100):
            assert g_second(a) > 0

    def test_second_derivative_numerically(self):
        for a in (0.2, 0.59, 0.9):
            fd = (g_prime(a + 1e-6) - g_prime(a - 1e-6)) / 2e-6
            assert g_second(a) == pytest.approx(fd, rel=1e-6)

    def test_match_at_one(self):
        r = match_exponential_to_uniform(1.0)
        assert r.h == MATCH_RATIO and r.ratio_a == MATCH_RATIO
        assert r.iterations == calibration._MATCH_ITERS > 0

    def test_scale_equivariance(self):
        for eps in (0.1, 1.0, 3.7):
            assert match_exponential_to_uniform(2 * eps).h == 2 * match_exponential_to_uniform(eps).h

    def test_quadrature_minimiser_agrees(self):
        res = optimize.minimize_scalar(lambda h: l1_quadrature(h, 1.0), bounds=(0.3, 0.9), method="bounded",
                                       options={"xatol": 1e-10})
        assert res.x == pytest.approx(MATCH_RATIO, abs=1e-4)

    def test_fast(self):
        t = time.perf_counter()
        calibration._bisect_root()
        assert time.perf_counter() - t < 1.0

    def test_bad_eps(self):
        with pytest.raises(ValueError):
            match_exponential_to_uniform(0.0)


class TestObjective:
    def test_branch_continuity(self):
        assert g_epsilon(1.0, 1.0) == pytest.approx(2 * math.exp(-1), rel=1e-15)
        assert g_epsilon(1.0 - 1e-12, 1.0) == pytest.approx(2 * math.exp(-1), rel=1e-9)

    def test_quadrature_at_059(self):
        assert g_epsilon(0.59, 1.0) == pytest.approx(l1_quadrature(0.59, 1.0), abs=1e-6)

    def test_small_h_limit(self):
        assert g_epsilon(1e-6, 1.0) == pytest.approx(2.0, abs=1e-4)

    def test_large_h_branch(self):
        assert g_epsilon(4.0, 1.0) == pytest.approx(l1_quadrature(4.0, 1.0), abs=1e-8)

    def test_random_eps_match_quadrature(self):
        gen = np.random.default_rng(7)
        for eps in gen.uniform(0.05, 20, 10):
            r = match_exponential_to_uniform(eps)
            assert r.objective_value == pytest.approx(l1_quadrature(r.h, eps), abs=1e-6)

    def test_local_minimality(self):
        for eps in (0.3, 1.0, 5.0):
            h = match_exponential_to_uniform(eps).h
            assert g_epsilon(h, eps) <= g_epsilon(h * 1.01, eps)
            assert g_epsilon(h, eps) <= g_epsilon(h * 0.99, eps)

    def test_invalid(self):
        with pytest.raises(ValueError):
            g_epsilon(-1.0, 1.0)


class TestDelta0:
    def test_paper_arithmetic(self):
        assert estimate_delta0((1.1, 0.11)) == pytest.approx(0.8844, abs=1e-12)

    def test_zero_sd(self):
        assert estimate_delta0((0.7, 0.0)) == 0.7

    def test_quantile_overrides_z(self):
        assert estimate_delta0((1.0, 0.1), quantile=0.05) == pytest.approx(1.0 - 0.1 * 1.6448536269514722)

    def test_nonnegative_flag(self):
        assert estimate_delta0((0.1, 0.5)) == 0.0
        assert estimate_delta0((0.1, 0.5), nonnegative=False) == pytest.approx(0.1 - 0.98)

    def test_bad_quantile(self):
        with pytest.raises(ValueError):
            estimate_delta0((1.0, 0.1), quantile=0.7)

    def test_empirical_example1(self, ex1):
        n, q = 1_000_000, 0.025
        got = estimate_delta0(ex1, [3.0], quantile=q, empirical=True, n=n, rng=RngStream(50))
        s = math.sqrt(0.61)
        c = 0.0  # x_o - θ* vanishes at θ* = 3
        ref = foldnorm.ppf(q, c / s, scale=s)
        se = math.sqrt(q * (1 - q) / n) / foldnorm.pdf(ref, c / s, scale=s)
        assert abs(got - ref) < 3 * se

    def test_field_source(self, ex1_field):
        m, v = ex1_field.mean([3.0]), ex1_field.var([3.0])
        assert estimate_delta0(ex1_field, [3.0], nonnegative=False) == pytest.approx(m - 1.96 * math.sqrt(v))


class TestCalibrateW:
    def test_paper_numbers(self):
        r = calibrate_w((1.1, 0.11), 1.0)
        assert r.delta0 == pytest.approx(0.8844, abs=1e-12)
        assert r.epsilon_std == pytest.approx(0.1156, abs=1e-12)
        assert r.h == pytest.approx(0.0682, abs=1e-4)
        assert r.w == pytest.approx(14.66, abs=0.01)
        assert 13 <= r.w <= 16
        assert r.w == 1.0 / r.h

    def test_eps_at_one_sd_below_mean(self):
        for sd in (0.05, 0.11, 1.0):
            r = calibrate_w((1.1 + 3 * sd, sd), 1.1 + 2 * sd)
            assert r.w * sd == pytest.approx(1 / (MATCH_RATIO * 0.96), rel=1e-9)
            assert r.w * sd == pytest.approx(1.77, abs=0.01)

    def test_eps_at_mean(self):
        for sd in (0.05, 0.11, 1.0):
            r = calibrate_w((2.0 + 2 * sd, sd), 2.0 + 2 * sd)
            assert r.w * sd == pytest.approx(0.9, rel=0.05)

    def test_monotone_in_eps(self):
        ws = [calibrate_w((1.1, 0.11), e).w for e in np.linspace(0.9, 3.0, 30)]
        assert all(a > b for a, b in zip(ws, ws[1:]))

    def test_threshold_below_minimum(self):
        with pytest.raises(CalibrationError, match="threshold below minimal discrepancy"):
            calibrate_w((1.1, 0.11), 0.8)

    def test_field_locates_theta_star(self, ex1_field, box10):
        r = calibrate_w(ex1_field, 2.0, box=box10)
        scan = np.linspace(0, 10, 20_001)[:, None]
        # the heteroscedastic variance pulls the minimiser of E(Δ) slightly below x_o = 3
        assert r.theta_star[0] == pytest.approx(scan[np.argmin(ex1_field.mean(scan)), 0], abs=0.005)
        assert r.m_star == pytest.approx(float(np.min(ex1_field.mean(scan))), abs=1e-6)

    def test_report_serialisation(self):
        r = calibrate_w((1.1, 0.11), 1.0)
        doc = json.loads(r.to_json())
        assert set(doc) == {"theta_star", "m_star", "sd_star", "delta0", "epsilon", "epsilon_std",
                            "ratio_a", "h", "w"}
        assert "w = 1/h" in r.table()

    def test_round_trip_through_implied_epsilon(self):
        for eps in (0.95, 1.0, 2.5):
            r = calibrate_w((1.1, 0.11), eps)
            assert implied_abc_epsilon(r.h, r.delta0) == pytest.approx(eps, abs=1e-9)


class TestThomas:
    def test_max_rule(self):
        box = ParameterBox([0.0], [1.0])
        assert select_delta_thomas(field_of(lambda t: 1.1 + np.sum(np.asarray(t) ** 2, axis=-1)),
                                   [0.9, 2.0], box) == pytest.approx(1.1)

    def test_negative_surrogate_mean(self):
        box = ParameterBox([0.0], [1.0])
        assert select_delta_thomas(field_of(lambda t: -0.2 + 0 * np.sum(t, axis=-1)), [0.3, 0.8], box) == 0.3

    def test_example1_refined_scan(self, ex1_field, box10):
        d = select_delta_thomas(ex1_field, [0.0], box10, resolution=2001)
        scan = np.linspace(0, 10, 20_001)[:, None]
        assert abs(d - float(np.min(ex1_field.mean(scan)))) < 1e-3

    def test_empty_record(self, ex1_field, box10):
        with pytest.raises(ValueError):
            select_delta_thomas(ex1_field, [], box10)

    def test_high_dim_coordinate_descent(self):
        box = ParameterBox([-1.0] * 4, [1.0] * 4)
        f = field_of(lambda t: 0.5 + np.sum((np.asarray(t) - 0.3) ** 2, axis=-1))
        t, m = minimize_mean(f, box)
        assert m == pytest.approx(0.5, abs=1e-8)
        assert np.allclose(t, 0.3, atol=1e-4)


class TestImpliedEpsilon:
    def test_examples(self):
        assert implied_abc_epsilon(0.6) == pytest.approx(1.0168, abs=1e-4)
        assert implied_abc_epsilon(1.0, 1.0) == pytest.approx(2.6946, abs=1e-4)

    def test_positive_delta(self):
        with pytest.raises(ValueError):
            implied_abc_epsilon(0.0)
