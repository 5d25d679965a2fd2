import json

import numpy as np
import pytest
from scipy import stats as sps

from mlreact.data import FirmYearSeries
from mlreact.errors import CoverageError, DataError, ParameterError
from mlreact.overreact import (
    LR_GRID,
    analyst_beta_replication,
    compare_forecasters,
    decompose_errors,
    oracle_beta,
    overreaction_test,
    rank_correlation,
    replicate,
    summarize,
)
from mlreact.regress import fe_regression
from mlreact.synth import SynthParams


def series(firms, years, values):
    return FirmYearSeries(np.asarray(firms, dtype=str), np.asarray(years, dtype=np.int64),
                          np.asarray(values, dtype=float))


def planted_panel(rng, n_firms=40, n_years=10, beta=-0.5):
    f, t = np.meshgrid(np.arange(n_firms), np.arange(2000, 2000 + n_years), indexing="ij")
    f, t = np.char.add("f", f.ravel().astype(str)), t.ravel()
    news = rng.normal(size=len(f))
    err_next = beta * news + rng.normal(size=len(f)) * 0.5 + 0.3 * (t - 2000)
    return series(f, t + 1, err_next), series(f, t, news)


def test_overreaction_matches_direct_regression():
    rng = np.random.default_rng(0)
    err, news = planted_panel(rng)
    res = overreaction_test(err, news, forecaster="x")
    fit = fe_regression(err.value, news.value, news.firm_id, news.year)
    assert res.beta == pytest.approx(fit.coefficients[0], rel=1e-12)
    assert res.t_stat == pytest.approx(fit.t_stats()[0], rel=1e-12)
    assert res.beta == pytest.approx(-0.5, abs=0.08)
    assert res.n_obs == 400 and res.fe == {"firm": True, "year": True}


def test_jackknife_formula():
    rng = np.random.default_rng(1)
    err, news = planted_panel(rng, n_years=9)
    raw = overreaction_test(err, news)
    jk = overreaction_test(err, news, bias_correction="jackknife")
    early = news.year <= 2003
    halves = [
        fe_regression(err.value[m], news.value[m], news.firm_id[m], news.year[m], cluster=None).coefficients[0]
        for m in (early, ~early)
    ]
    assert jk.beta_raw == raw.beta
    assert jk.beta == pytest.approx(2 * raw.beta - 0.5 * sum(halves), rel=1e-12)
    assert jk.t_stat == pytest.approx(jk.beta / raw.se)
    with pytest.raises(ParameterError):
        overreaction_test(err, news, bias_correction="bootstrap")


def test_sign_flip_scale_and_constant_invariance():
    rng = np.random.default_rng(2)
    err, news = planted_panel(rng)
    base = overreaction_test(err, news)
    flip = overreaction_test(err.map(lambda v: -v), news)
    assert flip.beta == pytest.approx(-base.beta, rel=1e-10)
    scaled = overreaction_test(err.map(lambda v: 3 * v), news)
    assert scaled.beta == pytest.approx(3 * base.beta, rel=1e-10)
    assert scaled.t_stat == pytest.approx(base.t_stat, rel=1e-9)
    shifted = overreaction_test(err, news.map(lambda v: v + 5.0))
    assert shifted.beta == pytest.approx(base.beta, rel=1e-9)
    firm_level = {f: k for k, f in enumerate(np.unique(news.firm_id))}
    fshift = news.map(lambda v: v + np.array([firm_level[f] for f in news.firm_id], dtype=float))
    assert overreaction_test(err, fshift).beta == pytest.approx(base.beta, rel=1e-9)


def test_alignment_and_coverage():
    err = series(["a", "b"], [2001, 2001], [1.0, 2.0])
    news = series(["a", "b"], [2000, 2000], [0.5, 0.1])
    with pytest.raises(CoverageError):
        overreaction_test(err, news)


def test_compare_forecasters_common_sample_and_wald():
    rng = np.random.default_rng(3)
    err, news = planted_panel(rng)
    other = err.map(lambda v: v * 0.1 + rng.normal(size=len(v)))
    keep = np.arange(len(other)) % 7 != 0
    other = FirmYearSeries(other.firm_id[keep], other.year[keep], other.value[keep])
    table = compare_forecasters({"a": err, "b": other}, "a", news)
    assert table.n_common == keep.sum()
    assert table.dropped == {"a": int((~keep).sum()), "b": 0}
    assert table.results["a"].wald_vs_baseline.chi2 == 0.0
    w = table.results["b"].wald_vs_baseline
    assert w.p_value < 0.01
    # symmetric when the baseline is swapped
    t2 = compare_forecasters({"a": err, "b": other}, "b", news)
    assert t2.results["a"].wald_vs_baseline.chi2 == pytest.approx(w.chi2, rel=1e-12)
    csv_lines = table.to_csv().splitlines()
    assert [l.split(",")[0] for l in csv_lines] == ["row", "beta (t)", "chi2 [p]", "N", "adj R2", "firm FE", "year FE"]
    d = json.loads(table.to_json())
    assert d["results"]["b"]["n_obs"] == table.n_common
    assert "beta" in table.format()
    with pytest.raises(ParameterError):
        compare_forecasters({"a": err}, "z", news)


def test_scaled_forecaster_has_identical_wald():
    # multiplying a forecaster's errors by c scales beta and se together,
    # so its chi2 against a fixed baseline moves, but its t does not
    rng = np.random.default_rng(4)
    err, news = planted_panel(rng)
    other = err.map(lambda v: v + rng.normal(size=len(v)))
    t1 = compare_forecasters({"a": err, "b": other}, "a", news)
    t2 = compare_forecasters({"a": err, "b": other.map(lambda v: 2 * v)}, "a", news)
    assert t2.results["b"].t_stat == pytest.approx(t1.results["b"].t_stat, rel=1e-9)


def balanced_errors(rng, loadings, n_years=30, noise=0.3):
    m = rng.normal(size=n_years)
    firms, years, vals = [], [], []
    for i, b in enumerate(loadings):
        for t in range(n_years):
            firms.append(f"f{i:04d}")
            years.append(2000 + t)
            vals.append(b * m[t] + noise * rng.normal())
    return series(firms, years, vals)


def test_decomposition_identity_and_mean_loading():
    rng = np.random.default_rng(5)
    e = balanced_errors(rng, rng.uniform(0, 2, size=20), n_years=12)
    d = decompose_errors(e)
    assert np.allclose(d.market_component + d.firm_component, d.total, atol=1e-12, rtol=0)
    # on a balanced panel the loadings average to one exactly
    assert d.summary()["mean_beta_im"] == pytest.approx(1.0, abs=1e-10)
    assert d.metadata["intercept_assigned_to"] == "firm"
    assert d.to_csv().count("\n") == len(e) + 1


def test_decomposition_recovers_planted_loading():
    rng = np.random.default_rng(6)
    loads = np.ones(500)
    loads[0] = 2.0
    d = decompose_errors(balanced_errors(rng, loads))
    assert d.loadings["f0000"] == pytest.approx(2.0, abs=0.15)


def test_decomposition_degenerate_firm():
    firms = ["a", "a", "a", "b", "b", "b", "c", "c", "c", "c"]
    years = [1, 2, 3, 1, 2, 3, 1, 2, 3, 4]
    vals = [1.0, 0.0, 2.0, 1.0, 2.0, 0.0, 1.0, 1.0, 1.0, 5.0]
    d = decompose_errors(series(firms, years, vals))
    # r_m is 1 in years 1..3, so firms a and b cannot be split
    assert set(d.degenerate) == {"a", "b"}
    assert d.loadings["a"] == 0.0
    m = d.firm_id == "a"
    assert np.array_equal(d.firm_component[m], d.total[m])
    with pytest.raises(DataError):
        decompose_errors(series(["a", "a"], [1, 2], [0.0, 1.0]))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_rank_correlation_matches_scipy(seed):
    rng = np.random.default_rng(seed)
    x = rng.integers(0, 5, size=30).astype(float)
    y = x + rng.integers(0, 3, size=30)
    rho, p = rank_correlation(x, y)
    assert rho == pytest.approx(sps.spearmanr(x, y).statistic, abs=1e-12)
    assert 0 <= p <= 1
    assert rank_correlation([1, 2, 3, 4, 5], [5, 4, 3, 2, 1])[0] == pytest.approx(-1.0)


def test_summary_and_replicate():
    s = summarize([1.0, 2.0, 3.0, 4.0])
    assert (s.mean, s.n) == (2.5, 4)
    assert s.sd == pytest.approx(np.std([1, 2, 3, 4], ddof=1))
    assert s.mc_se == pytest.approx(s.sd / 2)
    out = replicate(lambda k: k * k, [3, 1, 2], threads=2)
    assert out == [(1, 1), (2, 4), (3, 9)]
    with pytest.raises(ParameterError):
        summarize([1.0])


def test_oracle_and_rational_replication():
    assert oracle_beta() == pytest.approx(-0.622348, abs=5e-7)
    assert oracle_beta(theta=0.0) == 0.0
    res = analyst_beta_replication(0, SynthParams(n_firms=200), theta=0.0)
    assert abs(res.beta) < 0.1
    assert LR_GRID[0] == 0.01 and LR_GRID[-1] == 0.5
