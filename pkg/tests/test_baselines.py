import numpy as np
import pytest
import statsmodels.api as sm

from mbbda.baselines import mbs_test, merge_by_subject, mom_dispersion, nb_glm_two_group, pis_test
from mbbda.data import from_arrays
from mbbda.errors import DegenerateDesignError
from mbbda.preprocess import size_factors


def test_glm_matches_statsmodels():
    rng = np.random.default_rng(8)
    group = np.repeat([0, 1], 6)
    offset = np.log(rng.uniform(0.5, 2, size=12))
    y = np.vstack([rng.negative_binomial(3, 3 / (3 + mu), size=12)
                   for mu in (5, 20, 50, 3, 100)]).astype(float)
    y[:, 0] += 1
    alpha = np.array([0.3, 0.1, 0.5, 0.8, 0.05])
    b0, b1, se, ok = nb_glm_two_group(y, offset, group, alpha)
    assert ok.all()
    x = sm.add_constant(group.astype(float))
    for i in range(5):
        fam = sm.families.NegativeBinomial(alpha=alpha[i])
        ref = sm.GLM(y[i], x, family=fam, offset=offset).fit(tol=1e-12, maxiter=200)
        assert b0[i] == pytest.approx(ref.params[0], abs=1e-6)
        assert b1[i] == pytest.approx(ref.params[1], abs=1e-6)
        assert se[i] == pytest.approx(ref.bse[1], abs=1e-6)


def test_mom_dispersion_recovers_truth():
    rng = np.random.default_rng(4)
    alpha = 0.5
    y = rng.negative_binomial(1 / alpha, (1 / alpha) / (1 / alpha + 40), size=(1, 20000)).astype(float)
    est = mom_dispersion(y, np.ones(20000), np.repeat([0, 1], 10000))
    assert est[0] == pytest.approx(alpha, rel=0.05)


def ratio_panel():
    # subject means (2, 2) vs (8, 8); the mirrored taxon keeps the size factors equal
    counts = np.array([[2, 2, 2, 2, 8, 8, 8, 8], [8, 8, 8, 8, 2, 2, 2, 2]])
    subjects = ["a", "a", "b", "b", "c", "c", "d", "d"]
    return from_arrays(counts, subjects, [0, 1] * 4, [0, 0, 0, 0, 1, 1, 1, 1])


def test_mbs_log2_fold_change():
    ds = ratio_panel()
    assert np.ptp(size_factors(ds.counts).delta) == 0
    res = mbs_test(ds)
    assert res.lfc[0] == pytest.approx(2.0, abs=1e-8)
    assert res.lfc[1] == pytest.approx(-2.0, abs=1e-8)


def test_identical_groups():
    rng = np.random.default_rng(1)
    half = rng.integers(1, 30, size=(3, 6))
    counts = np.concatenate([half, half], axis=1)
    subjects = np.repeat(np.arange(6), 2)
    ds = from_arrays(counts, subjects, np.tile([0, 1], 6), np.repeat([0, 1], 6))
    for res in (mbs_test(ds), pis_test(ds)):
        np.testing.assert_allclose(res.lfc, 0.0, atol=1e-8)
        assert np.all(res.p > 0.99)


def test_single_observation_per_subject_makes_methods_agree():
    rng = np.random.default_rng(2)
    counts = rng.integers(0, 40, size=(5, 10))
    counts[:, 0] += 1
    ds = from_arrays(counts, np.arange(10), np.zeros(10, int), np.repeat([0, 1], 5))
    a, b = mbs_test(ds), pis_test(ds)
    np.testing.assert_array_equal(a.to_frame().to_numpy(), b.to_frame().to_numpy())


def test_duplicated_samples_shrink_se():
    rng = np.random.default_rng(3)
    counts = rng.negative_binomial(4, 4 / (4 + 30), size=(6, 12)) + 1
    group = np.repeat([0, 1], 6)
    ds = from_arrays(counts, np.arange(12), np.zeros(12, int), group)
    dup = from_arrays(np.concatenate([counts, counts], axis=1), np.tile(np.arange(12), 2),
                      np.repeat([0, 1], 12), np.tile(group, 2))
    offset = np.log(size_factors(ds.counts).delta)
    alpha = mom_dispersion(counts.astype(float), np.exp(offset), group)
    _, b1, se1, _ = nb_glm_two_group(counts, offset, group, alpha)
    _, b2, se2, _ = nb_glm_two_group(np.tile(counts, 2), np.tile(offset, 2), np.tile(group, 2), alpha)
    np.testing.assert_allclose(b1, b2, atol=1e-10)
    np.testing.assert_allclose(se1 / se2, np.sqrt(2), rtol=1e-8)
    # end to end the dispersion is re-estimated, so the match is approximate
    a, b = pis_test(ds), pis_test(dup)
    np.testing.assert_allclose(a.lfc, b.lfc, atol=0.01)
    np.testing.assert_allclose(a.se / b.se, np.sqrt(2), rtol=0.1)


def test_merge_rounds_half_up():
    counts = np.array([[1, 2, 3, 3]])
    ds = from_arrays(counts, ["a", "a", "b", "b"], [0, 1, 0, 1], [0, 0, 1, 1])
    assert merge_by_subject(ds).counts.tolist() == [[2, 3]]


def test_degenerate_designs():
    ds = ratio_panel()
    few = from_arrays(ds.counts[:, :6], ["a", "a", "b", "b", "c", "c"], [0, 1] * 3, [0, 0, 0, 0, 1, 1])
    with pytest.raises(DegenerateDesignError):
        mbs_test(few)
