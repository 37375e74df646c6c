import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import expit

from missknock.models import (
    MISSING_CODE,
    DiscreteModel,
    HmmModel,
    LatentFactorModel,
    MaskedSample,
    MissingnessSpec,
    MvnModel,
    ResponseModel,
    generate_mcar_mask,
    generate_mcar_masks,
    make_ar1_covariance,
    make_paper_hmm,
    response_probability,
    simulate_response,
    swap,
)
from missknock.rng import ChoiceTape


class TestAr1Covariance:
    def test_rho_zero_is_identity(self):
        np.testing.assert_array_equal(make_ar1_covariance(3, 0.0), np.eye(3))

    def test_rho_half(self):
        expected = [[1, 0.5, 0.25], [0.5, 1, 0.5], [0.25, 0.5, 1]]
        np.testing.assert_allclose(make_ar1_covariance(3, 0.5), expected)

    def test_positive_definite_by_eigenvalues(self):
        cov = make_ar1_covariance(5, 0.8)
        # the smallest eigenvalue from scipy's independent LAPACK driver
        from scipy.linalg import eigh

        assert eigh(cov, eigvals_only=True)[0] > 0

    @pytest.mark.parametrize("rho", [round(0.1 * i, 1) for i in range(9)])
    def test_cholesky_up_to_1000(self, rho):
        np.linalg.cholesky(make_ar1_covariance(1000, rho))

    @pytest.mark.parametrize("rho", [1.0, -0.1, 1.5])
    def test_rejects_rho_outside_unit_interval(self, rho):
        with pytest.raises(ValueError):
            make_ar1_covariance(3, rho)

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            make_ar1_covariance(0, 0.3)


class TestBenchmarkHmm:
    def test_stay_probability(self):
        assert make_paper_hmm(5).transition_at(1)[4, 4] == 0.9

    def test_wraparound_emission(self):
        assert make_paper_hmm(5).emission_at(0)[8, 0] == pytest.approx(0.175)

    def test_rows_stochastic(self):
        m = make_paper_hmm(5)
        np.testing.assert_allclose(m.transition.sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(m.emission.sum(axis=1), 1.0, atol=1e-12)

    def test_initial_point_mass_on_state_one(self):
        init = make_paper_hmm(5).initial
        assert init[1] == 1.0 and init.sum() == 1.0

    def test_emission_off_diagonal(self):
        e = make_paper_hmm(2).emission
        assert e[3, 6] == pytest.approx(0.65 / 7)
        assert np.count_nonzero(np.isclose(e[3], 0.175)) == 2


class TestModelValidation:
    def test_mvn_rejects_asymmetric(self):
        with pytest.raises(ValueError):
            MvnModel(np.zeros(2), [[1.0, 0.5], [0.4, 1.0]])

    def test_mvn_rejects_indefinite(self):
        with pytest.raises(ValueError):
            MvnModel(np.zeros(2), [[1.0, 2.0], [2.0, 1.0]])

    def test_mvn_arrays_read_only(self):
        m = MvnModel(np.zeros(2), np.eye(2))
        with pytest.raises(ValueError):
            m.covariance[0, 0] = 3.0

    def test_hmm_rejects_non_stochastic(self):
        with pytest.raises(ValueError):
            HmmModel([0.5, 0.5], [[0.5, 0.6], [0.5, 0.5]], np.eye(2), 3)

    def test_hmm_per_step_tables(self):
        rng = np.random.default_rng(0)
        trans = rng.dirichlet([1, 1], size=(2, 2))
        emis = rng.dirichlet([1, 1, 1], size=(3, 2))
        m = HmmModel([0.3, 0.7], trans, emis, 3)
        np.testing.assert_array_equal(m.transition_at(2), trans[1])
        np.testing.assert_array_equal(m.emission_at(2), emis[2])
        assert m.num_symbols == 3

    def test_latent_emission_shape_checked(self):
        with pytest.raises(ValueError):
            LatentFactorModel(np.full((2, 2), 0.25), (np.full((2, 3), 0.5),))

    def test_discrete_rejects_unnormalized(self):
        with pytest.raises(ValueError):
            DiscreteModel(np.ones((2, 2)))

    def test_hmm_sample_shapes_and_support(self, rng):
        z, x = make_paper_hmm(20).sample(50, rng)
        assert z.shape == x.shape == (50, 20)
        assert np.all(z[:, 0] == 1)
        assert x.min() >= 0 and x.max() <= 8


class TestMaskedSample:
    def test_sentinel_must_match_mask(self):
        with pytest.raises(ValueError):
            MaskedSample(np.array([1.0, np.nan]), np.array([False, False]))
        with pytest.raises(ValueError):
            MaskedSample(np.array([1, MISSING_CODE]), np.array([True, False]))

    def test_from_complete_hides_values(self):
        s = MaskedSample.from_complete(np.array([1.5, 2.5, 3.5]), [False, True, False])
        assert np.isnan(s.values[1])
        np.testing.assert_array_equal(s.missing, [1])
        np.testing.assert_array_equal(s.observed, [0, 2])
        np.testing.assert_array_equal(s.observed_values, [1.5, 3.5])

    def test_categorical_sentinel(self):
        s = MaskedSample.from_complete(np.array([2, 0, 1]), [True, False, False])
        assert s.values[0] == MISSING_CODE


class TestResponse:
    def test_zero_coefficients_give_half(self):
        model = ResponseModel.from_support(4, (), 1.0)
        assert response_probability(np.ones(4), model) == 0.5

    def test_large_signal_saturates(self):
        model = ResponseModel.from_support(2, (0,), 1.0)
        assert response_probability(np.array([50.0, 0.0]), model) == pytest.approx(1.0)

    def test_single_feature_probability(self):
        model = ResponseModel.from_support(4, (1,), 1.0)
        x = np.array([0.0, 1.0, 0.0, 0.0])
        assert response_probability(x, model) == pytest.approx(1 / (1 + np.exp(-1.0)))

    def test_coefficients_match_support(self):
        model = ResponseModel.from_support(6, (4, 1), 0.3)
        np.testing.assert_array_equal(model.coefficients, [0, 0.3, 0, 0, 0.3, 0])
        assert model.support == (1, 4)

    def test_shift_applied_before_product(self):
        model = ResponseModel.from_support(2, (0, 1), 0.5)
        x = np.array([[4.0, 5.0]])
        assert response_probability(x, model, shift=4.0)[0] == pytest.approx(expit(0.5))

    def test_simulated_rate(self, rng):
        model = ResponseModel.from_support(1, (0,), 1.0)
        x = np.ones((40_000, 1))
        y = simulate_response(x, model, rng)
        p = expit(1.0)
        assert abs(y.mean() - p) < 4 * np.sqrt(p * (1 - p) / y.size)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            response_probability(np.ones(3), ResponseModel.from_support(4, (0,), 1.0))


class TestMcarMask:
    def test_p0_zero(self, rng):
        spec = MissingnessSpec(0.0, "all")
        assert not generate_mcar_masks(100, 8, spec, (0, 1), rng).any()

    def test_p0_one_all(self, rng):
        spec = MissingnessSpec(1.0, "all")
        assert generate_mcar_mask(8, spec, (0,), rng).all()

    def test_rate_on_true_features(self, rng):
        support = (1, 4, 7)
        masks = generate_mcar_masks(100_000, 10, MissingnessSpec(0.3, "true-features"), support, rng)
        rate = masks[:, list(support)].mean()
        se = np.sqrt(0.3 * 0.7 / (100_000 * 3))
        assert abs(rate - 0.3) < 3 * se
        off = np.delete(masks, list(support), axis=1)
        assert not off.any()

    def test_null_features_never_touch_support(self, rng):
        masks = generate_mcar_masks(500, 6, MissingnessSpec(0.9, "null-features"), (2, 3), rng)
        assert not masks[:, [2, 3]].any()
        assert masks[:, [0, 1, 4, 5]].any()

    def test_exact_law_on_tape(self):
        from missknock.oracle import enumerate_pipeline_joint

        spec = MissingnessSpec(0.25, "true-features")
        law = enumerate_pipeline_joint(generate_mcar_mask, 3, spec, (0, 2))
        assert law[(True, False, True)] == pytest.approx(0.25**2)
        assert law[(False, False, False)] == pytest.approx(0.75**2)
        assert sum(law.probs.values()) == pytest.approx(1.0)

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            MissingnessSpec(1.5)
        with pytest.raises(ValueError):
            MissingnessSpec(0.2, "some")


class TestSwap:
    def test_empty_set(self):
        a, b = swap([1, 2, 3], [4, 5, 6], ())
        np.testing.assert_array_equal(a, [1, 2, 3])
        np.testing.assert_array_equal(b, [4, 5, 6])

    def test_definition_example(self):
        a, b = swap([1, 2, 3], [4, 5, 6], {1})
        np.testing.assert_array_equal(a, [1, 5, 3])
        np.testing.assert_array_equal(b, [4, 2, 6])

    def test_matrix_columns(self):
        x = np.arange(6).reshape(2, 3)
        a, b = swap(x, -x, [2])
        np.testing.assert_array_equal(a[:, 2], -x[:, 2])
        np.testing.assert_array_equal(b[:, 2], x[:, 2])

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            swap([1, 2], [3, 4], [2])

    @given(
        st.integers(1, 12).flatmap(
            lambda p: st.tuples(
                st.lists(st.floats(-1e6, 1e6), min_size=p, max_size=p),
                st.lists(st.floats(-1e6, 1e6), min_size=p, max_size=p),
                st.sets(st.integers(0, p - 1)),
            )
        )
    )
    def test_involution_and_complement_fixed(self, case):
        x, xt, S = case
        a, b = swap(x, xt, S)
        back = swap(a, b, S)
        np.testing.assert_array_equal(back[0], x)
        np.testing.assert_array_equal(back[1], xt)
        rest = [j for j in range(len(x)) if j not in S]
        np.testing.assert_array_equal(a[rest], np.asarray(x)[rest])
        np.testing.assert_array_equal(b[rest], np.asarray(xt)[rest])
