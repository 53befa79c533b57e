import math
import statistics

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from posebench.lowess import LowessConfig, lowess


def textbook_lowess(xs, ys, frac, iterations, evals):
    """Straight transcription of the classic robust LOWESS recipe on Python lists:
    tricube neighbourhood weights, weighted normal equations solved by Cramer's
    rule, bisquare robustness weights from 6 * median absolute residual."""
    n = len(xs)
    r = math.ceil(frac * n - 1e-9)

    def fit_at(x0, rob):
        dists = sorted(abs(x - x0) for x in xs)
        h = dists[r - 1]
        w = []
        for x, rb in zip(xs, rob):
            d = abs(x - x0)
            k = (1 - (d / h) ** 3) ** 3 if h > 0 and d < h else (1.0 if h == 0 and d == 0 else 0.0)
            w.append(k * rb)
        s0 = math.fsum(w)
        s1 = math.fsum(wi * x for wi, x in zip(w, xs))
        s2 = math.fsum(wi * x * x for wi, x in zip(w, xs))
        t0 = math.fsum(wi * y for wi, y in zip(w, ys))
        t1 = math.fsum(wi * x * y for wi, x, y in zip(w, xs, ys))
        det = s0 * s2 - s1 * s1
        if abs(det) <= 1e-14 * max(1.0, s0 * s2):
            return t0 / s0
        a = (t0 * s2 - s1 * t1) / det
        b = (s0 * t1 - s1 * t0) / det
        return a + b * x0

    rob = [1.0] * n
    for _ in range(iterations):
        res = [y - fit_at(x, rob) for x, y in zip(xs, ys)]
        s = statistics.median(abs(e) for e in res)
        if s <= 1e-12 * max(1.0, max(abs(y) for y in ys)):
            break
        rob = [(1 - min(1.0, abs(e / (6 * s))) ** 2) ** 2 for e in res]
    return [fit_at(x0, rob) for x0 in evals]


def noisy_quadratic():
    rng = np.random.default_rng(2024)
    x = np.sort(rng.uniform(0, 5, 20))
    y = 0.4 * x**2 - x + 1 + rng.normal(0, 0.3, 20)
    y[7] += 3.0  # one outlier so the robust passes matter
    return x, y


class TestLowess:
    def test_constant(self):
        x = np.linspace(0, 1, 15)
        np.testing.assert_allclose(lowess(x, np.full(15, 3.3)), 3.3, rtol=1e-14)

    @pytest.mark.parametrize("frac", [0.15, 0.3, 0.7, 1.0])
    def test_exact_line(self, frac):
        x = np.linspace(-3, 7, 20)
        fitted = lowess(x, 2 * x, LowessConfig(frac=frac, iterations=0))
        assert np.max(np.abs(fitted - 2 * x)) <= 1e-9

    @pytest.mark.parametrize("iterations", [0, 1, 2, 4])
    @pytest.mark.parametrize("frac", [0.3, 0.5, 0.8])
    def test_matches_textbook(self, iterations, frac):
        x, y = noisy_quadratic()
        evals = np.linspace(-0.5, 5.5, 23)
        ours = lowess(x, y, LowessConfig(frac, iterations), evals)
        ref = textbook_lowess(list(x), list(y), frac, iterations, list(evals))
        assert np.max(np.abs(ours - np.array(ref))) <= 1e-6

    def test_default_config(self):
        c = LowessConfig()
        assert (c.frac, c.iterations, c.degree) == (0.3, 2, 1)

    def test_robust_pass_downweights_outlier(self):
        x, y = noisy_quadratic()
        plain = lowess(x, y, LowessConfig(0.5, 0))
        robust = lowess(x, y, LowessConfig(0.5, 3))
        truth = 0.4 * x**2 - x + 1
        assert abs(robust[7] - truth[7]) < abs(plain[7] - truth[7])

    def test_all_x_equal_falls_back_to_mean(self):
        y = np.array([1.0, 2.0, 6.0])
        np.testing.assert_allclose(lowess(np.zeros(3), y, LowessConfig(1.0, 0)), 3.0)

    @settings(max_examples=50)
    @given(st.floats(-10, 10).filter(lambda a: abs(a) > 1e-3), st.floats(-100, 100))
    def test_affine_equivariance(self, a, b):
        x, y = noisy_quadratic()
        cfg = LowessConfig(0.4, 0)
        np.testing.assert_allclose(lowess(x, a * y + b, cfg), a * lowess(x, y, cfg) + b, atol=1e-9)

    @pytest.mark.parametrize("kwargs", [{"frac": 0}, {"frac": 1.2}, {"iterations": -1}, {"degree": 2}])
    def test_config_validation(self, kwargs):
        with pytest.raises(ValueError):
            LowessConfig(**kwargs)

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            lowess([1, 2], [1, 2])
        with pytest.raises(ValueError):
            lowess(np.arange(5.0), np.arange(5.0), LowessConfig(frac=0.2))
