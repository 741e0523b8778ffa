import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from moebma.datagen import (
    Dataset,
    GeneratorSpec,
    correlated_vc_dimension,
    gen_classification,
    gen_regression,
    generate,
    poly_eval,
    standardize,
)
from moebma.numerics import make_rng


class TestPolyEval:
    def test_linear(self):
        assert poly_eval([2, 3], 1.0) == 5.0

    def test_quadratic_at_zero(self):
        assert poly_eval([2, 3, -1], 0.0) == -1.0

    def test_zero_polynomial(self):
        assert poly_eval([0], 123.4) == 0.0

    @given(st.lists(st.floats(-5, 5), min_size=1, max_size=7), st.floats(-3, 3))
    def test_matches_numpy_polyval(self, coeffs, x):
        assert poly_eval(coeffs, x) == pytest.approx(np.polyval(coeffs, x), rel=1e-9, abs=1e-9)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            poly_eval([], 1.0)


class TestStandardize:
    def test_population_std(self):
        z, (mu, sd) = standardize([1.0, 2.0, 3.0])
        assert mu == 2.0
        assert sd == pytest.approx(np.sqrt(2 / 3))
        assert abs(z.mean()) < 1e-15

    def test_constant_column(self):
        with pytest.raises(ValueError, match="degenerate column"):
            standardize([4.0, 4.0, 4.0])

    def test_given_stats(self):
        x = np.array([0.0, 5.0])
        z, stats = standardize(x, (1.0, 2.0))
        np.testing.assert_array_equal(z, (x - 1.0) / 2.0)
        assert stats == (1.0, 2.0)


class TestRegression:
    def test_recipe_polynomials(self):
        _, _, s1 = gen_regression(1, 100, 10, seed=0)
        _, _, s2 = gen_regression(2, 100, 10, seed=0)
        assert poly_eval(s1.coeffs, 1.0) == 5.0
        assert poly_eval(s2.coeffs, 0.0) == -1.0
        assert s1.interval == (-2.0, 1.0)

    def test_train_feature_standardized(self):
        train, _, _ = gen_regression(3, seed=1)
        assert abs(train.X[:, 1].mean()) < 0.02
        assert abs(train.X[:, 1].std() - 1) < 0.02
        assert (train.X[:, 0] == 1.0).all()

    def test_default_sizes(self):
        train, test, _ = gen_regression(2)
        assert (len(train), len(test)) == (10000, 2000)

    def test_degree_range(self):
        for bad in (0, 6):
            with pytest.raises(ValueError):
                gen_regression(bad, 10, 10)

    def test_regeneration_bit_identical(self):
        a = gen_regression(4, 500, 100, seed=9)
        b = gen_regression(4, 500, 100, seed=9)
        assert np.array_equal(a[0].X, b[0].X) and np.array_equal(a[1].y, b[1].y)
        assert a[2] == b[2]

    def test_test_split_uses_train_stats(self):
        train, test, spec = gen_regression(2, 1000, 500, seed=3)
        rng = make_rng(3)
        x = rng.uniform(-2.0, 1.0, 1500)
        np.testing.assert_allclose(test.X[:, 1], (x[1000:] - spec.means[0]) / spec.stds[0])

    def test_conditional_noise_variance(self):
        train, _, spec = gen_regression(3, seed=2)
        resid = train.y - spec.mean_function(train.X)
        assert abs(resid.var() / 0.01 - 1) < 0.15
        Xf, yf = spec.sample(10000, make_rng(99))
        assert abs((yf - spec.mean_function(Xf)).var() / 0.01 - 1) < 0.15


class TestClassification:
    def test_labels_from_raw_threshold(self):
        train, _, spec = gen_classification(3, 2000, 10, seed=4)
        x1 = train.X[:, 1] * spec.stds[0] + spec.means[0]
        x2 = train.X[:, 2] * spec.stds[1] + spec.means[1]
        curve = poly_eval(spec.coeffs, x1)
        # where the noise draw is clearly positive the label must be 1
        above = x2 - curve > 1e-9 * (1 + np.abs(curve))
        below = curve - x2 > 1e-9 * (1 + np.abs(curve))
        assert (train.y[above] == 1).all()
        assert (train.y[below] == 0).all()

    @pytest.mark.parametrize("degree", range(1, 9))
    def test_balanced_over_seeds(self, degree):
        frac = np.mean([gen_classification(degree, 2000, 10, seed=s)[0].y.mean() for s in range(10)])
        assert 0.35 < frac < 0.65

    def test_correlated_vc_dimension(self):
        assert correlated_vc_dimension(3) == 10
        assert gen_classification(3, 50, 10)[2].correlated_vc_dimension == 10

    def test_interval_and_coeff_count(self):
        _, _, spec = gen_classification(5, 100, 10, seed=0)
        assert spec.interval == (-3.0, 3.0)
        assert len(spec.coeffs) == 6

    def test_degree_range(self):
        with pytest.raises(ValueError):
            gen_classification(9, 10, 10)

    @settings(max_examples=10, deadline=None)
    @given(st.integers(1, 8), st.integers(0, 1000))
    def test_labels_binary_and_finite(self, degree, seed):
        train, test, _ = gen_classification(degree, 200, 50, seed)
        assert set(np.unique(train.y)) <= {0.0, 1.0}
        assert np.isfinite(test.X).all()


class TestDatasetAndSpec:
    def test_identity_column_enforced(self):
        with pytest.raises(ValueError, match="identity"):
            Dataset(np.zeros((2, 2)), np.zeros(2))

    def test_non_finite_rejected(self):
        X = np.ones((2, 2))
        X[0, 1] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            Dataset(X, np.zeros(2))

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            Dataset(np.ones((3, 1)), np.zeros(2))

    def test_coeff_count_checked(self):
        with pytest.raises(ValueError, match="coefficients"):
            GeneratorSpec("regression", 2, (1.0, 2.0), (0.0, 1.0), 0.1)

    def test_generate_dispatch(self):
        with pytest.raises(ValueError):
            generate("ranking", 1)
        assert generate("classification", 2, 20, 5)[2].kind == "classification"
