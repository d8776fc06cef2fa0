import numpy as np
import pytest

from mbbda.errors import ValidationError
from mbbda.simulate import (SimConfig, gen_panel, gen_series, gen_setting, load_nb_params,
                            rates_at, read_config_file, roc_curve)


def acf1(x):
    d = x - x.mean()
    return d[:-1] @ d[1:] / (d @ d)


def test_inar1_lag_one_autocorrelation_and_mean():
    x = gen_series("order1", None, (10.0, 0.0), 5000, np.random.default_rng(0))
    assert 0.75 < acf1(x.astype(float)) < 0.85
    assert x.mean() == pytest.approx(10.0 / (1 - 0.8), rel=0.05)


def test_inar2_mean():
    x = gen_series("order2", None, (4.0, 0.1), 20000, np.random.default_rng(1))
    assert x.mean() == pytest.approx(4.0 / (1 - 0.8), rel=0.05)


def test_zero_coefficients_give_iid_counts():
    x = gen_series("order1", (0.0, 0.0), (6.0, 0.0), 5000, np.random.default_rng(2)).astype(float)
    assert abs(acf1(x)) < 0.05
    assert x.var() == pytest.approx(6.0, rel=0.1)


def test_rounded_ar_generator():
    out = gen_panel((0.5, 0.0), np.full((3, 2), 5.0), np.zeros((3, 2)), 7,
                    np.random.default_rng(3), "rounded-ar", shape=(3, 2))
    assert out.shape == (3, 2, 7)
    assert out.min() >= 0


def test_non_stationary_rejected():
    with pytest.raises(ValidationError):
        gen_series("order1", (0.6, 0.5), (1.0, 0.0), 10, np.random.default_rng(0))
    with pytest.raises(ValidationError):
        SimConfig(ar_coefs=(1.0, 0.0))


def test_setting_shapes():
    ds, truth = gen_setting(SimConfig.preset("Z", seed=1))
    assert (ds.m, ds.N, ds.n_subjects) == (50, 200, 20)
    assert truth.sum() == 25
    ds, truth = gen_setting(SimConfig.preset("ZL", seed=1))
    assert (ds.m, ds.N, ds.n_subjects) == (100, 300, 20)
    assert truth.sum() == 20
    assert ds.group_labels == ("control", "treated")
    assert ds.q.tolist() == [15] * 20


def test_determinism_and_run_streams():
    cfg = SimConfig.preset("Z", seed=5)
    a, ta = gen_setting(cfg, 3)
    b, tb = gen_setting(cfg, 3)
    c, _ = gen_setting(cfg, 4)
    np.testing.assert_array_equal(a.counts, b.counts)
    np.testing.assert_array_equal(ta, tb)
    assert not np.array_equal(a.counts, c.counts)


def test_fold_changes_shift_treated_means():
    cfg = SimConfig.preset("Z", seed=9, da_fold=4.0, da_direction="up", n_per_group=40)
    ds, truth = gen_setting(cfg)
    g = ds.column_group
    ratio = ds.counts[:, g == 1].mean(axis=1) / np.maximum(ds.counts[:, g == 0].mean(axis=1), 1e-9)
    assert np.median(ratio[truth]) > 2.5
    assert np.median(ratio[~truth]) == pytest.approx(1.0, abs=0.3)


def test_unit_fold_is_null():
    cfg = SimConfig.preset("Z", seed=4, da_fold=1.0)
    ds, truth = gen_setting(cfg)
    cfg0 = SimConfig.preset("Z", seed=4, frac_da=0.0)
    ds0, truth0 = gen_setting(cfg0)
    assert truth.sum() == 25 and truth0.sum() == 0
    assert ds.counts.shape == ds0.counts.shape


def test_bundled_params():
    params = load_nb_params()
    assert {"nb_mean", "nb_dispersion"} <= set(params.columns)
    assert len(params) >= 100
    assert (params["nb_mean"] > 0).all() and (params["nb_dispersion"] >= 0).all()


def test_config_file_roundtrip(tmp_path):
    path = tmp_path / "sim.ini"
    path.write_text("setting = ZL\nq = 12\nda_fold = 2.5\nar_coefs = 0.4, 0.2\n")
    cfg = SimConfig.from_mapping(read_config_file(path), seed=3)
    assert (cfg.m, cfg.q, cfg.da_fold, cfg.seed) == (100, 12, 2.5, 3)
    assert cfg.coefs_for("control") == (0.4, 0.2)
    with pytest.raises(ValidationError):
        SimConfig.from_mapping({"bogus": "1"})
    with pytest.raises(ValidationError):
        SimConfig.preset("Q")


def test_mixed_dependence_uses_both_orders():
    cfg = SimConfig(dep_order="mixed")
    assert cfg.coefs_for("control") == (0.8, 0.0)
    assert cfg.coefs_for("treated") == (0.3, 0.5)


def test_rates_at():
    truth = np.array([True, True, False, False, False])
    p = np.array([0.01, 0.2, 0.03, 0.5, 0.9])
    assert rates_at(p, truth, 0.05) == (pytest.approx(1 / 3), 0.5)
    fpr, tpr = rates_at(p, np.zeros(5, bool), 0.05)
    assert np.isnan(tpr) and fpr == pytest.approx(0.4)


def test_roc_curve_endpoints_and_monotone():
    rng = np.random.default_rng(0)
    truth = rng.random((4, 30)) < 0.4
    p = np.where(truth, rng.random((4, 30)) * 0.3, rng.random((4, 30)))
    roc = roc_curve(p, truth)
    assert roc.at(1.0) == (1.0, 1.0)
    assert np.all(np.diff(roc.fpr) >= 0) and np.all(np.diff(roc.tpr) >= 0)
    p[p == 0] = 1e-3
    assert roc_curve(p, truth).at(0.0) == (0.0, 0.0)


def test_roc_curve_averages_runs():
    truth = np.array([[True, False], [True, False]])
    p = np.array([[0.01, 0.01], [0.9, 0.9]])
    roc = roc_curve(p, truth)
    assert roc.at(0.05) == (0.5, 0.5)
    with pytest.raises(ValidationError):
        roc_curve(p, np.array([True, False, True]))
