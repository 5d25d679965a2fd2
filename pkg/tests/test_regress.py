import math

import numpy as np
import pytest

from mlreact.errors import (
    AlignmentError,
    ConvergenceError,
    DegenerateTestError,
    FitError,
    ShapeError,
    SingularityError,
)
from mlreact.regress import (
    diebold_mariano,
    fe_regression,
    mse,
    newey_west_var_of_mean,
    ols,
    oos_r2,
    sur_wald,
    two_way_within,
)


def unbalanced_panel(rng, n_firms=30, n_years=12, k=2, drop=0.25):
    f, t = np.meshgrid(np.arange(n_firms), np.arange(n_years), indexing="ij")
    f, t = f.ravel(), t.ravel()
    keep = rng.random(len(f)) > drop
    f, t = f[keep], t[keep]
    a = rng.normal(size=n_firms)[f]
    g = rng.normal(size=n_years)[t]
    X = rng.normal(size=(len(f), k)) + 0.5 * a[:, None]
    y = X @ np.arange(1.0, k + 1) + a + g + rng.normal(size=len(f))
    return y, X, f, t


def dummies(ids, drop_first):
    u, c = np.unique(ids, return_inverse=True)
    D = np.eye(len(u))[c]
    return D[:, 1:] if drop_first else D


def test_three_point_ols():
    fit = ols([[0.0], [1.0], [2.0]], [1.0, 2.0, 4.0], add_intercept=True)
    assert fit.coefficients == pytest.approx([5 / 6, 1.5], abs=1e-12)
    assert fit.names == ("const", "x0")


def test_ols_matches_normal_equations():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(50, 3))
    y = rng.normal(size=50)
    fit = ols(X, y, add_intercept=True)
    Xc = np.column_stack([np.ones(50), X])
    b = np.linalg.solve(Xc.T @ Xc, Xc.T @ y)
    assert np.allclose(fit.coefficients, b, atol=1e-12)
    s2 = np.sum((y - Xc @ b) ** 2) / (50 - 4)
    assert np.allclose(fit.vcov_plain, s2 * np.linalg.inv(Xc.T @ Xc), atol=1e-12)


@pytest.mark.parametrize("fe", ["both", "firm", "year"])
def test_fe_matches_dummy_variable_regression(fe):
    rng = np.random.default_rng(1)
    y, X, f, t = unbalanced_panel(rng)
    fit = fe_regression(y, X, f, t, fe=fe)
    parts = [X]
    if fe in ("both", "firm"):
        parts.append(dummies(f, drop_first=False))
    if fe in ("both", "year"):
        parts.append(dummies(t, drop_first=fe == "both"))
    if fe == "year":
        pass
    D = np.column_stack(parts)
    b, *_ = np.linalg.lstsq(D, y, rcond=None)
    assert np.allclose(fit.coefficients, b[:2], atol=1e-8)
    resid = y - D @ b
    assert np.allclose(fit.residuals, resid, atol=1e-8)
    # plain covariance uses the full dummy-variable residual df
    df = len(y) - D.shape[1]
    assert fit.df_resid == df
    inv = np.linalg.inv(D.T @ D)
    assert np.allclose(fit.vcov_plain, resid @ resid / df * inv[:2, :2], rtol=1e-6)
    # cluster sandwich on the slope block agrees with the dummy-variable one
    G = len(np.unique(f))
    scores = np.zeros((G, D.shape[1]))
    np.add.at(scores, f, D * resid[:, None])
    sand = (inv @ scores.T @ scores @ inv)[:2, :2]
    n = len(y)
    k_eff = D.shape[1] - ((G - 1) if fe in ("both", "firm") else 0)
    factor = G / (G - 1) * (n - 1) / (n - k_eff)
    assert np.allclose(fit.vcov_clustered, factor * sand, rtol=1e-6)
    assert fit.fe_absorbed == {"firm": fe in ("both", "firm"), "year": fe in ("both", "year")}


def test_balanced_two_way_closed_form():
    rng = np.random.default_rng(2)
    v = rng.normal(size=(6, 5))
    f, t = np.meshgrid(np.arange(6), np.arange(5), indexing="ij")
    w = two_way_within(v.ravel(), f.ravel(), t.ravel())
    expect = v - v.mean(1, keepdims=True) - v.mean(0, keepdims=True) + v.mean()
    assert np.allclose(w, expect.ravel(), atol=1e-12)


def test_within_reports_non_convergence():
    rng = np.random.default_rng(3)
    y, X, f, t = unbalanced_panel(rng, drop=0.5)
    with pytest.raises(ConvergenceError) as info:
        two_way_within(y, f, t, max_iter=1)
    assert len(info.value.trace) == 1


def test_singleton_clusters_give_hc1():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(40, 2))
    y = X @ [1.0, -1.0] + rng.normal(size=40) * (1 + np.abs(X[:, 0]))
    fit = ols(X, y, cluster_ids=np.arange(40), add_intercept=True)
    Xc = fit.design
    inv = np.linalg.inv(Xc.T @ Xc)
    hc0 = inv @ (Xc.T * fit.residuals ** 2) @ Xc @ inv
    assert np.allclose(fit.vcov_clustered, 40 / (40 - 3) * hc0, rtol=1e-10)


def test_scale_equivariance():
    rng = np.random.default_rng(5)
    y, X, f, t = unbalanced_panel(rng)
    base = fe_regression(y, X, f, t)
    sy = fe_regression(7.0 * y, X, f, t)
    sx = fe_regression(y, X * [3.0, 0.5], f, t)
    assert np.allclose(sy.coefficients, 7 * base.coefficients, rtol=1e-9)
    assert np.allclose(sx.coefficients, base.coefficients / [3.0, 0.5], rtol=1e-9)
    assert np.allclose(sy.t_stats(), base.t_stats(), rtol=1e-8)
    assert np.allclose(sx.t_stats(), base.t_stats(), rtol=1e-8)


def test_singular_design_names_column():
    X = np.column_stack([np.arange(10.0), 2 * np.arange(10.0)])
    with pytest.raises(SingularityError) as info:
        ols(X, np.arange(10.0), names=("a", "b"))
    assert "b" in str(info.value)
    # a regressor constant within firms is absorbed by firm effects
    f = np.repeat(np.arange(5), 4)
    t = np.tile(np.arange(4), 5)
    with pytest.raises(SingularityError):
        fe_regression(np.random.default_rng(0).normal(size=20), f.astype(float), f, t, names=("firm_const",))


def test_fit_errors():
    with pytest.raises(FitError):
        ols(np.ones((2, 2)), [1.0, 2.0])
    with pytest.raises(ShapeError):
        ols(np.ones((3, 1)), [1.0, 2.0])
    with pytest.raises(FitError):
        ols(np.arange(4.0), np.arange(4.0), cluster_ids=[1, 1, 1, 1])


def test_json_export():
    fit = ols([[0.0], [1.0], [2.0], [4.0]], [1.0, 2.0, 4.0, 3.0], add_intercept=True)
    d = fit.to_dict()
    assert d["coefficients"][d["names"].index("x0")] == pytest.approx(fit.coef("x0"))
    assert '"n_obs": 4' in fit.to_json()


def stacked_sur_var(X, ua, ub, codes, factor, xtx_inv):
    """Var(b_a - b_b) from the full two-equation cluster sandwich."""
    k = X.shape[1]
    G = codes.max() + 1
    s = np.zeros((G, 2 * k))
    np.add.at(s, codes, np.hstack([X * ua[:, None], X * ub[:, None]]))
    bread = np.kron(np.eye(2), xtx_inv)
    V = factor * bread @ s.T @ s @ bread
    C = np.hstack([np.eye(k), -np.eye(k)])
    return C @ V @ C.T


def test_sur_wald_matches_stacked_system():
    rng = np.random.default_rng(6)
    y, X, f, t = unbalanced_panel(rng)
    yb = 0.3 * y + X[:, 0] * 0.2 + rng.normal(size=len(y))
    a = fe_regression(y, X, f, t)
    b = fe_regression(yb, X, f, t)
    w = sur_wald(a, b)
    V = stacked_sur_var(a.design, a.residuals, b.residuals, a.cluster_codes, a.cluster_factor, a.xtx_inv)
    diff = a.coefficients[0] - b.coefficients[0]
    assert w.chi2 == pytest.approx(diff ** 2 / V[0, 0], rel=1e-9)
    assert sur_wald(b, a).chi2 == pytest.approx(w.chi2, rel=1e-12)
    assert w.df == 1


def test_sur_identical_equations_and_misalignment():
    rng = np.random.default_rng(7)
    y, X, f, t = unbalanced_panel(rng)
    a = fe_regression(y, X, f, t)
    w = sur_wald(a, a)
    assert (w.chi2, w.p_value) == (0.0, 1.0)
    other = fe_regression(y[:-1], X[:-1], f[:-1], t[:-1])
    with pytest.raises(AlignmentError):
        sur_wald(a, other)


def test_sur_size_and_power():
    rng = np.random.default_rng(8)
    rej_null = rej_alt = 0
    reps = 300
    for _ in range(reps):
        n_f, n_t = 40, 6
        f = np.repeat(np.arange(n_f), n_t)
        t = np.tile(np.arange(n_t), n_f)
        x = rng.normal(size=n_f * n_t)
        common = rng.normal(size=n_f * n_t)
        ya = 0.5 * x + common + rng.normal(size=len(x))
        yb = 0.5 * x + common + rng.normal(size=len(x))
        yc = 0.9 * x + common + rng.normal(size=len(x))
        fa = fe_regression(ya, x, f, t)
        rej_null += sur_wald(fa, fe_regression(yb, x, f, t)).p_value < 0.05
        rej_alt += sur_wald(fa, fe_regression(yc, x, f, t)).p_value < 0.05
    assert 0.02 <= rej_null / reps <= 0.10
    assert rej_alt / reps > 0.9


def test_diebold_mariano_basic():
    rng = np.random.default_rng(9)
    ea = rng.normal(scale=0.5, size=(20, 30))
    eb = rng.normal(scale=1.0, size=(20, 30))
    out = diebold_mariano(ea, eb)
    assert out["lags"] == 2
    assert out["dm_stat"] > 2 and out["p_value"] < 0.05
    flip = diebold_mariano(eb, ea)
    assert flip["dm_stat"] == pytest.approx(-out["dm_stat"])
    assert diebold_mariano(ea[:8], eb[:8])["lags"] == 2
    assert diebold_mariano(ea[:7].tolist() + [ea[7]], eb[:8])["lags"] == 2
    with pytest.raises(ShapeError):
        diebold_mariano(ea[:7], eb[:7])
    with pytest.raises(DegenerateTestError):
        diebold_mariano(ea, ea)


def test_newey_west_hand_computed():
    d = np.array([1.0, -1.0, 2.0, 0.0, 3.0])
    u = d - d.mean()
    g0 = u @ u / 5
    g1 = u[1:] @ u[:-1] / 5
    assert newey_west_var_of_mean(d, 0) == pytest.approx(g0 / 5)
    assert newey_west_var_of_mean(d, 1) == pytest.approx((g0 + 2 * 0.5 * g1) / 5)


def test_diebold_mariano_size():
    rng = np.random.default_rng(10)
    hits = 0
    reps = 400
    for _ in range(reps):
        ea = rng.normal(size=(30, 10))
        eb = rng.normal(size=(30, 10))
        hits += diebold_mariano(ea, eb)["p_value"] < 0.05
    assert hits / reps < 0.12


def test_forecast_metrics():
    a = np.array([1.0, 2.0, 3.0])
    assert mse(a, a + 1) == 1.0
    assert oos_r2(a, a, [0.0, 0.0, 0.0]) == 1.0
    assert oos_r2(a, [0.0, 1.0, 2.0], [0.0, 1.0, 2.0]) == 0.0
    with pytest.raises(DegenerateTestError):
        oos_r2(a, a + 1, a)
    with pytest.raises(ShapeError):
        mse([], [])
    assert math.isclose(oos_r2([1.0, 3.0], [1.0, 2.0], [0.0, 0.0]), 1 - 1 / 10)


def test_design_independent_of_dependent_variable():
    rng = np.random.default_rng(11)
    y, X, f, t = unbalanced_panel(rng, drop=0.4)
    a = fe_regression(y, X, f, t)
    b = fe_regression(1e3 * rng.normal(size=len(y)), X, f, t)
    assert np.array_equal(a.design, b.design)
