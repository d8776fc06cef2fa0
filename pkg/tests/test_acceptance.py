"""Exit criteria, one test per criterion at reduced simulation scale.

Each test records a PASS/FAIL line that is printed in the terminal summary.
"""
import itertools
import time
import warnings
from collections import Counter

import numpy as np
import pytest
from scipy import stats
from statsmodels.stats.multitest import multipletests

from mbbda import rng as rngmod
from mbbda.benchmark import SELECTION_PRESETS, run_benchmark
from mbbda.blocksize import mse_profile, scale_up
from mbbda.cli import main
from mbbda.data import from_arrays
from mbbda.diagnostics import pac_profile, pivot_check, suggest_initial_block
from mbbda.estimator import EstimatorOptions
from mbbda.inference import bh_adjust
from mbbda.mbb import BootstrapDistribution, bootstrap_distribution, p_values
from mbbda.pipeline import FitConfig, select_block
from mbbda.preprocess import size_factors, transform
from mbbda.simulate import SimConfig, gen_setting, rates_at

pytestmark = [pytest.mark.acceptance]

SEED = 20240601
R, RR = 100, 25
N_RUNS = 20


@pytest.fixture(scope="module")
def setting_z_bench():
    cfg = SimConfig.preset("Z", seed=SEED, dep_order="order1", runs=N_RUNS)
    return run_benchmark(cfg, R=R, RR=RR, **SELECTION_PRESETS["Z"])


# 1 -------------------------------------------------------------------------------------

def _oracle_beta(counts, group):
    g = np.exp(np.log(counts).mean(axis=1))
    delta = np.median(counts / g[:, None], axis=0)
    a = np.arcsinh(counts / delta)
    return a[:, group == 1].mean(axis=1) - a[:, group == 0].mean(axis=1)


def test_c1_blocking_oracle(report):
    counts = np.array([[5, 9, 2, 11, 4, 30], [7, 3, 8, 2, 6, 1], [10, 12, 9, 40, 35, 38]], float)
    group = np.array([0, 0, 0, 1, 1, 1])
    ds = from_arrays(counts.astype(int), ["a"] * 3 + ["b"] * 3, [0, 1, 2] * 2, group)
    exact = Counter()
    for s1, s2, t1, t2 in itertools.product(range(2), repeat=4):
        cols = [s1, s1 + 1, s2, 3 + t1, 4 + t1, 3 + t2]
        exact[tuple(np.round(_oracle_beta(counts[:, cols], group), 9))] += 1 / 16
    start = time.perf_counter()
    dist = bootstrap_distribution(ds, 2, 10_000, 2, seed=SEED,
                                  options=EstimatorOptions(shrinkage=False))
    elapsed = time.perf_counter() - start
    emp = Counter(tuple(np.round(col, 9)) for col in dist.beta_star.T)
    tv = 0.5 * sum(abs(emp.get(k, 0) / 10_000 - exact.get(k, 0)) for k in set(emp) | set(exact))
    ok = tv < 0.05 and elapsed < 60
    report(1, ok, f"TV={tv:.4f} (< .05), runtime {elapsed:.1f}s (< 60s)")
    assert ok


# 2 -------------------------------------------------------------------------------------

def test_c2_selection_arithmetic(report, setting_z):
    ds, _ = setting_z
    ds = ds.select_taxa(list(range(6)))
    seed, cands, omega, l_I, r, rr = 17, [2, 3, 4], 6, 5, 30, 6
    prof = mse_profile(ds, l_I, cands, omega, r, rr, seed=seed)
    full = bootstrap_distribution(ds, l_I, r, rr, rngmod.child_key(seed, 0))
    k = full.beta_hat / full.se_obs
    want = np.zeros((ds.m, len(cands)))
    windows = int(ds.q.min()) - omega + 1
    for j in range(windows):
        sub = ds.select_windows([(j, j + omega)] * ds.n_subjects)
        for c, l_c in enumerate(cands):
            d = bootstrap_distribution(sub, l_c, r, rr, rngmod.child_key(seed, rngmod.SUBSAMPLE, j, l_c))
            for i in range(ds.m):
                psi_full = np.count_nonzero(np.abs(full.t_star[i]) >= abs(k[i])) / r
                psi_sub = np.count_nonzero(np.abs(d.t_star[i]) >= abs(k[i])) / r
                want[i, c] += (psi_full - psi_sub) ** 2 / windows
    err = float(np.max(np.abs(prof.mse_matrix - want)))
    count_mode = scale_up(3, 10, 6)
    prop_mode = scale_up(2, 10, 0.7)
    ok = err <= 1e-12 and count_mode == 3 and prop_mode == 2
    report(2, ok, f"max |MSE - oracle| = {err:.1e}; scale_up count {count_mode}, proportion {prop_mode}")
    assert ok


# 3 -------------------------------------------------------------------------------------

def test_c3_p_values_and_bh(report):
    rng = np.random.default_rng(SEED)
    t_star = rng.standard_t(5, size=(40, 199))
    t_obs = rng.normal(scale=2, size=40)
    z = np.zeros(40)
    dist = BootstrapDistribution(z, np.zeros_like(t_star), t_star, z + 1, np.ones_like(t_star), 0,
                                 2, 199, 2, z + 1)
    want = [(1 + np.sum(np.abs(t_star[i]) >= abs(t_obs[i]))) / 200 for i in range(40)]
    p_exact = bool(np.array_equal(p_values(t_obs, dist), want))
    hand = bh_adjust(np.array([0.01, 0.02, 0.03]))
    hand_ok = bool(np.allclose(hand, 0.03, rtol=0, atol=1e-15))
    worst = 0.0
    for _ in range(100):
        p = rng.random(rng.integers(2, 60)) ** 2
        worst = max(worst, float(np.max(np.abs(bh_adjust(p) - multipletests(p, method="fdr_bh")[1]))))
    ok = p_exact and hand_ok and worst <= 1e-12
    report(3, ok, f"p exact {p_exact}; BH hand example {hand_ok}; max diff vs reference {worst:.1e}")
    assert ok


# 4 and 5 -------------------------------------------------------------------------------

def _mode(values):
    counts = Counter(values)
    top = max(counts.values())
    return min(v for v, c in counts.items() if c == top)


@pytest.mark.slow
def test_c4_block_size_setting_z(report, setting_z_bench):
    sizes = setting_z_bench.block_sizes[:10]
    mode = _mode(sizes)
    ok = mode in (3, 4)
    report(4, ok, f"selected sizes {sizes}, mode {mode} (want 3 or 4)")
    assert ok


def _selected_sizes(setting, runs):
    cfg = SimConfig.preset(setting, seed=SEED, dep_order="order1")
    sizes = []
    for run in range(runs):
        ds, _ = gen_setting(cfg, run)
        fc = FitConfig(auto_block=True, outer_reps=R, inner_reps=RR,
                       seed=rngmod.child_key(SEED, rngmod.BENCH, run), **SELECTION_PRESETS[setting])
        sizes.append(select_block(ds, fc)[0])
    return sizes


@pytest.mark.slow
def test_c5_block_size_grows_with_q(report, setting_z_bench):
    z = setting_z_bench.block_sizes[:10]
    zl = _selected_sizes("ZL", 10)
    ok = float(np.median(zl)) > float(np.median(z))
    report(5, ok, f"median ZL {np.median(zl)} {zl} vs Z {np.median(z)}")
    assert ok


# 6 and 7 -------------------------------------------------------------------------------

def _run_rates(bench, method, cutoff=0.05):
    return np.array([rates_at(bench.p_adj[method][r], bench.truth[r], cutoff)
                     for r in range(bench.truth.shape[0])])


def _margin(a, b):
    """Mean of ``a - b`` over runs and twice its standard error."""
    d = np.asarray(a) - np.asarray(b)
    return float(d.mean()), float(2 * d.std(ddof=1) / np.sqrt(len(d)))


@pytest.mark.slow
def test_c6_method_ordering(report, setting_z_bench):
    mbb, mbs, pis = (_run_rates(setting_z_bench, m) for m in ("mbb", "mbs", "pis"))
    fpr_gap, fpr_se2 = _margin(pis[:, 0], mbb[:, 0])
    tpr_gap, tpr_se2 = _margin(mbb[:, 1], mbs[:, 1])
    fpr_ok = fpr_gap > fpr_se2
    tpr_ok = tpr_gap > tpr_se2
    report(6, fpr_ok and tpr_ok,
           f"FPR PIS-MBB {fpr_gap:.3f} vs 2SE {fpr_se2:.3f} ({'ok' if fpr_ok else 'no'}); "
           f"TPR MBB-MBS {tpr_gap:.3f} vs 2SE {tpr_se2:.3f} ({'ok' if tpr_ok else 'no'}); "
           f"mean (FPR, TPR) MBB {mbb.mean(0).round(3).tolist()} MBS {mbs.mean(0).round(3).tolist()} "
           f"PIS {pis.mean(0).round(3).tolist()}")
    assert fpr_ok and tpr_ok


@pytest.mark.slow
def test_c7_null_calibration(report):
    cfg = SimConfig.preset("Z", seed=SEED + 1, dep_order="order1", da_fold=1.0, runs=N_RUNS)
    bench = run_benchmark(cfg, methods=("mbb",), R=R, RR=RR, **SELECTION_PRESETS["Z"])
    frac = (bench.p_adj["mbb"] <= 0.05).mean(axis=1)
    ok = float(frac.mean()) < 0.10
    report(7, ok, f"mean fraction with p_adj <= .05: {frac.mean():.4f} (< .10)")
    assert ok


# 8 -------------------------------------------------------------------------------------

@pytest.mark.slow
def test_c8_pivotality(report):
    cfg = SimConfig.preset("Z", seed=SEED + 2, dep_order="order1")
    d_t, d_beta = [], []
    for run in range(N_RUNS):
        ds, _ = gen_setting(cfg, run)
        check = pivot_check(ds, 2.0, l=3, R=R, RR=RR, seed=rngmod.child_key(SEED, rngmod.PIVOT, run))
        d_t.append(float(np.mean(check.ks_t - check.ks_t_baseline)))
        d_beta.append(float(np.mean(check.ks_beta - check.ks_beta_baseline)))
    p_t = stats.wilcoxon(d_t, alternative="greater").pvalue
    p_beta = stats.wilcoxon(d_beta, alternative="greater").pvalue
    ok = p_t >= 0.05 and p_beta < 0.05
    report(8, ok, f"T: KS excess {np.mean(d_t):+.4f}, p={p_t:.3g} (want >= .05); "
                  f"beta: KS excess {np.mean(d_beta):+.4f}, p={p_beta:.3g} (want < .05)")
    assert ok


# 9 -------------------------------------------------------------------------------------

COMMANDS = {
    "simulate": (["--setting", "Z", "--m", "15", "--n-per-group", "4", "--q", "8"],
                 ["counts.tsv", "meta.tsv", "truth.csv"]),
    "fit": (["--block-size", "3", "--outer-reps", "30", "--inner-reps", "6"], ["results.csv"]),
    "blocksize": (["--initial-block", "4", "--omega", "5", "--outer-reps", "20", "--inner-reps", "4"],
                  ["blocksize.csv"]),
    "diagnose": (["--top", "4", "--qq", "--outer-reps", "20", "--inner-reps", "4"],
                 ["pac.csv", "lagpairs.csv", "qq.csv", "ks.csv"]),
    "bench": (["--setting", "Z", "--m", "12", "--n-per-group", "3", "--q", "6", "--runs", "2",
               "--block-size", "2", "--outer-reps", "20", "--inner-reps", "4"],
              ["roc.csv", "padj.csv", "blocksizes.csv"]),
}


@pytest.mark.slow
def test_c9_determinism(report, tmp_path):
    sim = tmp_path / "input"
    assert main(["simulate", *COMMANDS["simulate"][0], "--seed", "1", "--out", str(sim)]) == 0
    io = ["--counts", str(sim / "counts.tsv"), "--meta", str(sim / "meta.tsv")]
    bad = []
    for name, (args, outputs) in COMMANDS.items():
        extra = [] if name in ("simulate", "bench") else io
        digests = set()
        for threads in (1, 4, 8, 1):
            out = tmp_path / f"{name}-{threads}-{len(digests)}"
            code = main([name, *extra, *args, "--seed", "42", "--threads", str(threads),
                         "--out", str(out)])
            assert code == 0, name
            digests.add(tuple((out / f).read_bytes() for f in outputs))
        if len(digests) != 1:
            bad.append(name)
    ok = not bad
    report(9, ok, f"byte-identical outputs at threads 1/4/8 for {sorted(COMMANDS)}"
                  + (f"; differing: {bad}" if bad else ""))
    assert ok


# 10 ------------------------------------------------------------------------------------

def test_c10_pac_initial_block(report):
    cfg = SimConfig.preset("Z", seed=SEED + 3, dep_order="order1")
    picks = []
    for run in range(10):
        ds, _ = gen_setting(cfg, run)
        tm = transform(ds.counts, size_factors(ds.counts).delta)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            picks.append(suggest_initial_block(pac_profile(ds, tm, 6)))
    fives = picks.count(5)
    rest_ok = all(p in (4, 5, 6) for p in picks)
    ok = fives >= 7 and rest_ok
    report(10, ok, f"suggested initial blocks {picks}: {fives} of 10 equal 5 (want >= 7, rest in 4..6)")
    assert ok

