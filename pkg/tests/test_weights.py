import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from abcgbi.exceptions import ConfigurationError, DomainError
from abcgbi.weights import (EXP, IDENTITY, LOG, WeightFunction, affine, eval_log_weight,
                            log_weight_normalizer, transform_weight, weight_from_config)

bandwidths = st.floats(min_value=1e-3, max_value=1e3)
radii = st.floats(min_value=-50, max_value=50, allow_nan=False)


class TestEvalLog:
    def test_uniform_onesided_indicator(self):
        w = WeightFunction("uniform_onesided", 0.2)
        assert eval_log_weight(w, 0.1) == pytest.approx(math.log(5.0))
        assert eval_log_weight(w, 0.3) == -math.inf
        # one-sided: negative discrepancies are inside
        assert eval_log_weight(w, -4.0) == pytest.approx(math.log(5.0))

    def test_uniform_symmetric_boundary_inclusive(self):
        w = WeightFunction("uniform_symmetric", 0.5)
        assert eval_log_weight(w, 0.5) == pytest.approx(math.log(2.0))
        assert eval_log_weight(w, -0.6) == -math.inf

    def test_power_law_at_e(self):
        assert eval_log_weight(WeightFunction("power_law", 0.5), math.e) == pytest.approx(-2.0)

    @pytest.mark.parametrize("r", [0.0, -1.0])
    def test_power_law_domain(self, r):
        with pytest.raises(DomainError):
            eval_log_weight(WeightFunction("power_law", 0.5), r)

    def test_exponential_onesided_density_form(self):
        w = WeightFunction("exponential_onesided", 2.0)
        assert eval_log_weight(w, 3.0) == pytest.approx(-math.log(2.0) - 1.5)

    def test_gaussian_is_normal_logpdf(self):
        from scipy.stats import norm

        w = WeightFunction("gaussian", 0.7, m_h=0.3)
        r = np.linspace(-2, 2, 9)
        assert np.allclose(eval_log_weight(w, r), norm.logpdf(r, 0.3, 0.7), rtol=0, atol=1e-13)

    def test_log_gaussian_integrates_to_one(self):
        w = WeightFunction("log_gaussian", 1.0, m_h=0.0)
        val, _ = integrate.quad(lambda r: math.exp(eval_log_weight(w, r)), 0, math.inf,
                                epsabs=1e-12, epsrel=1e-12, limit=200)
        assert val == pytest.approx(1.0, abs=1e-8)

    def test_log_gaussian_shape(self):
        w = WeightFunction("log_gaussian", 0.5, m_h=0.4)
        assert eval_log_weight(w, 1e-300) < -1e5  # weight → 0 at 0⁺
        r = np.linspace(0.01, 5, 200_001)
        r_star = r[np.argmax(eval_log_weight(w, r))]
        assert r_star == pytest.approx(math.exp(0.4), abs=1e-4)
        assert eval_log_weight(w, 0.0) == -math.inf

    def test_array_in_array_out(self):
        out = eval_log_weight(WeightFunction("exponential_symmetric", 1.0), [0.0, 1.0])
        assert isinstance(out, np.ndarray) and out.shape == (2,)

    def test_nonfinite_input_rejected(self):
        with pytest.raises(DomainError):
            eval_log_weight(WeightFunction("gaussian", 1.0), math.inf)

    @pytest.mark.parametrize("h", [0.0, -1.0, math.inf])
    def test_bad_bandwidth(self, h):
        with pytest.raises(ValueError):
            WeightFunction("gaussian", h)


class TestSymmetry:
    @settings(max_examples=200, deadline=None)
    @given(h=bandwidths, r=radii, family=st.sampled_from(["uniform_symmetric", "exponential_symmetric", "gaussian"]))
    def test_symmetric_families(self, h, r, family):
        w = WeightFunction(family, h)
        assert eval_log_weight(w, r) == eval_log_weight(w, -r)


class TestTransforms:
    def test_exponential_through_log_is_power_law(self):
        h = 0.4
        w = transform_weight(WeightFunction("exponential_onesided", h), LOG)
        pl = WeightFunction("power_law", h)
        r = np.linspace(0.05, 20, 50)
        diff = eval_log_weight(w, r) - eval_log_weight(pl, r)
        assert np.ptp(diff) < 1e-12
        assert diff[0] == pytest.approx(-math.log(h))

    def test_gaussian_through_log_is_log_gaussian(self):
        m, s = 0.2, 0.6
        w = transform_weight(WeightFunction("gaussian", s, m_h=m), LOG)
        lg = WeightFunction("log_gaussian", s, m_h=m)
        r = np.linspace(0.05, 10, 50)
        diff = eval_log_weight(w, r) - eval_log_weight(lg, r)
        assert np.ptp(diff) < 1e-12

    def test_identity_transform_unchanged(self):
        gen = np.random.default_rng(0)
        r = gen.uniform(0.01, 5, 20)
        for fam in ("uniform_onesided", "exponential_onesided", "gaussian", "power_law", "log_gaussian"):
            w = WeightFunction(fam, 0.7)
            assert np.array_equal(eval_log_weight(transform_weight(w, IDENTITY), r), eval_log_weight(w, r))

    @settings(max_examples=50, deadline=None)
    @given(h=st.floats(0.05, 5), m=st.floats(-1, 1),
           family=st.sampled_from(["exponential_onesided", "gaussian", "log_gaussian", "exponential_symmetric"]))
    def test_round_trip(self, h, m, family):
        w = WeightFunction(family, h, m_h=m)
        back = transform_weight(transform_weight(w, LOG), EXP)
        r = np.random.default_rng(1).uniform(0.01, 10, 100)
        # log-weights reach ~1e3 in magnitude, so 1e-12 is applied relative to the value
        assert np.allclose(eval_log_weight(back, r), eval_log_weight(w, r), rtol=1e-12, atol=1e-12)

    def test_inverse_outside_domain_raises(self):
        w = transform_weight(WeightFunction("gaussian", 1.0), LOG)
        with pytest.raises(DomainError):
            eval_log_weight(w, -1.0)

    @settings(max_examples=200, deadline=None)
    @given(d=st.floats(1e-6, 1e3), h=st.floats(1e-6, 1e3))
    def test_uniform_threshold_identity(self, d, h):
        # 1{Δ <= h} == 1{g(Δ) <= g(h)} for strictly increasing g
        for g in (np.log, np.sqrt, lambda x: x**3 + 2 * x):
            assert (d <= h) == (g(d) <= g(h))

    def test_affine_must_increase(self):
        with pytest.raises(ValueError):
            affine(-1.0)


class TestNormalizer:
    @pytest.mark.parametrize("h", [0.01, 1.0, 30.0])
    def test_uniform_symmetric(self, h):
        assert log_weight_normalizer(WeightFunction("uniform_symmetric", h)) == 0.0

    @pytest.mark.parametrize("h", [0.1, 2.0])
    def test_power_law_not_integrable(self, h):
        w = WeightFunction("power_law", h)
        assert log_weight_normalizer(w) == math.inf
        assert not w.is_density

    def test_log_gaussian_normalized(self):
        assert log_weight_normalizer(WeightFunction("log_gaussian", 0.8, m_h=0.5)) == 0.0

    def test_transformed_numeric(self):
        # gaussian through log has total mass e^{m + s²/2} on r > 0
        w = transform_weight(WeightFunction("gaussian", 0.5, m_h=0.1), LOG)
        assert log_weight_normalizer(w) == pytest.approx(0.1 + 0.125, abs=1e-7)

    def test_symmetric_families_half_line(self):
        for fam in ("uniform_symmetric", "exponential_symmetric"):
            w = WeightFunction(fam, 0.3)
            val = sum(integrate.quad(lambda r: math.exp(eval_log_weight(w, r)), a, b,
                                     epsabs=1e-13, epsrel=1e-12)[0] for a, b in ((0, 0.3), (0.3, math.inf)))
            assert val == pytest.approx(1.0, abs=1e-8)


class TestConfig:
    def test_alias(self):
        w = weight_from_config({"family": "exponential-onesided", "h": 0.2})
        assert w.family == "exponential_onesided" and w.h == 0.2

    def test_unknown_family_names_field(self):
        with pytest.raises(ConfigurationError, match="weight.family"):
            weight_from_config({"family": "triangle", "h": 1})

    def test_missing_h(self):
        with pytest.raises(ConfigurationError, match="weight.h"):
            weight_from_config({"family": "gaussian"})

    def test_log_transform_option(self):
        w = weight_from_config({"family": "gaussian", "h": 1.0, "transform": "log"})
        assert w.transforms and w.transforms[0].name == "log"
