import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from missknock import discrete, oracle
from missknock.errors import ZeroEvidence
from missknock.models import DiscreteModel, MaskedSample, random_discrete_model


def test_conditional_table_by_bayes_rule():
    table = np.array([[0.1, 0.2, 0.1], [0.3, 0.1, 0.2]])
    model = DiscreteModel(table)
    cond = discrete.conditional_table(model, MaskedSample(np.array([1, -1]), [False, True]))
    np.testing.assert_allclose(cond, np.array([0.3, 0.1, 0.2]) / 0.6)


def test_conditional_zero_evidence():
    model = DiscreteModel(np.array([[0.5, 0.0], [0.5, 0.0]]))
    with pytest.raises(ZeroEvidence):
        discrete.conditional_table(model, MaskedSample(np.array([-1, 1]), [True, False]))


def test_imputation_law_is_conditional():
    model = random_discrete_model(np.random.default_rng(2), (2, 3, 2))
    sample = MaskedSample(np.array([-1, 2, -1]), [True, False, True])
    law = oracle.enumerate_pipeline_joint(discrete.impute_posterior, model, sample)
    ref = model.table[:, 2, :] / model.table[:, 2, :].sum()
    for (a, b, c), pr in law.probs.items():
        assert b == 2
        assert pr == pytest.approx(ref[a, c], abs=1e-14)


def test_univariate_marginal():
    model = random_discrete_model(np.random.default_rng(3), (2, 3))
    np.testing.assert_allclose(discrete.univariate_marginal(model, 1), model.table.sum(axis=0))


def test_marginal_model():
    model = random_discrete_model(np.random.default_rng(4), (2, 3, 4))
    np.testing.assert_allclose(model.marginal([0, 2]).table, model.table.sum(axis=1))


@settings(max_examples=15)
@given(st.integers(0, 2**32 - 1), st.sampled_from([(2, 2), (2, 3), (3, 2, 2), (2, 2, 2)]))
def test_scip_pairs_exchangeable(seed, shape):
    model = random_discrete_model(np.random.default_rng(seed), shape)
    sampler = discrete.ScipKnockoffSampler(model)
    law_x = oracle.model_law(model)
    joint = {}
    for x, px in law_x.probs.items():
        for xt, pt in oracle.enumerate_pipeline_joint(sampler, np.array(x)).probs.items():
            joint[(x, xt)] = joint.get((x, xt), 0.0) + px * pt
    assert oracle.check_pairwise_exchangeable(oracle.JointTable(joint), len(shape)) <= 1e-10


def test_scip_knockoff_law_has_model_marginal():
    model = random_discrete_model(np.random.default_rng(5), (2, 3))
    sampler = discrete.ScipKnockoffSampler(model)
    law = {}
    for x, px in oracle.model_law(model).probs.items():
        for xt, pt in oracle.enumerate_pipeline_joint(sampler, np.array(x)).probs.items():
            law[xt] = law.get(xt, 0.0) + px * pt
    assert oracle.total_variation(oracle.JointTable(law), oracle.model_law(model)) <= 1e-12


def test_scip_dimension_check(rng):
    sampler = discrete.ScipKnockoffSampler(random_discrete_model(rng, (2, 2)))
    with pytest.raises(ValueError):
        sampler(np.array([0, 1, 0]), rng)
