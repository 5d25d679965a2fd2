from dataclasses import replace

import mpmath
import numpy as np
import pytest

from mlreact.equilibrium import (
    BRANCH_INACTION,
    ConstantRule,
    EquilibriumParams,
    EquilibriumState,
    StepRule,
    closed_form_no_cost,
    curve_csv,
    default_A_grid,
    equity_issuance,
    expected_price,
    investor_demand,
    market_price,
    overreaction_sensitivity,
    posterior_belief,
    price_signal_precision,
    run_numerical_example,
    sample_A_path,
)
from mlreact.errors import ConfigError, DomainError, ParameterError

P0 = EquilibriumParams()


def mp_issuance(p, A, eps, xbar_prev, lam, phi1_sign):
    """High-precision issuance on a given branch, written from the model's
    first-order condition independently of the library."""
    mpmath.mp.dps = 60
    A, eps, xp, lam = (mpmath.mpf(v) for v in (A, eps, xbar_prev, lam))
    rz, rx, re, al = (mpmath.mpf(v) for v in (p.rho_z, p.rho_x, p.rho_eta, p.alpha))
    r, mu = mpmath.mpf(p.r), mpmath.mpf(p.mu_z)
    rp = re ** 2 * rx / (al ** 2 * A ** 2)
    rho = rz + re + rp
    f = mpmath.mpf(p.f_tilde_rule(float(A)))
    gamma = rho * mu + re * (1 - lam) * (p.theta * p.delta * eps + f)
    num = A / (rho * r) * gamma - phi1_sign * mpmath.mpf(p.phi1) + mpmath.mpf(p.phi2) * xp
    den = 2 * al * A ** 2 / (rho * r) + mpmath.mpf(p.phi2)
    return num / den


def test_price_signal_precision_examples():
    assert price_signal_precision(P0, 1.0) == pytest.approx(3091.36, rel=1e-14)
    assert price_signal_precision(P0, 2.0) == pytest.approx(3091.36 / 4, rel=1e-14)
    assert price_signal_precision(replace(P0, rho_x=0.0), 1.0) == 0.0
    with pytest.raises(DomainError):
        price_signal_precision(P0, 0.0)


def test_posterior_belief():
    m, rho = posterior_belief(P0, 15.0, 15.0, 15.0, 1.0)
    assert m == pytest.approx(15.0) and rho == pytest.approx(81.16 + 2.78 + 3091.36)
    # a dominant private signal wins only when prices carry no information;
    # otherwise rho_p grows with rho_eta^2 and the price signal wins
    m, _ = posterior_belief(replace(P0, rho_eta=1e12, rho_x=0.0), 15.0, 3.0, 40.0, 1.0)
    assert m == pytest.approx(3.0, abs=1e-6)
    m, _ = posterior_belief(replace(P0, rho_eta=1e12), 15.0, 3.0, 40.0, 1.0)
    assert m == pytest.approx(40.0, abs=1e-6)
    # convex combination: equal inputs are a fixed point for any precisions
    rng = np.random.default_rng(0)
    for _ in range(20):
        v = rng.normal() * 10
        m, _ = posterior_belief(P0, v, v, v, rng.uniform(0.5, 2))
        assert m == pytest.approx(v, abs=1e-12)


def test_investor_demand():
    rho = 100.0
    assert investor_demand(P0, 2.02, rho, 2.0, 1.0) == pytest.approx(0.0, abs=1e-12)
    d1 = investor_demand(P0, 3.0, rho, 2.0, 1.2)
    d2 = investor_demand(P0, 4.0, rho, 2.0, 1.2)
    assert d2 - d1 == pytest.approx(rho / (P0.alpha * 1.2))
    half = investor_demand(replace(P0, alpha=0.2), 3.0, rho, 2.0, 1.2)
    assert half == pytest.approx(d1 / 2)


def test_closed_form_without_costs():
    p = replace(P0, phi1=0.0, phi2=0.0)
    for A in (0.9, 0.97, 1.0, 1.03, 1.1):
        for lam in (0.0, 0.5, 0.9):
            q = replace(p, lam=lam)
            s = EquilibriumState(A, 10.0, 1000.0)
            x = equity_issuance(q, s).xbar
            rp = 2.78 ** 2 * 4 / (0.01 * A * A)
            f = 500.0 if A > 1 else 100.0
            expect = ((81.16 + 2.78 + rp) * 15 + 2.78 * (1 - lam) * (0.991 * 0.785 * 10 + f)) / (0.2 * A)
            assert x == pytest.approx(expect, rel=1e-10)
            assert closed_form_no_cost(q, s) == pytest.approx(expect, rel=1e-10)


def test_issuance_matches_high_precision_oracle():
    s = EquilibriumState(1.0, 10.0, 1000.0)
    out = equity_issuance(P0, s)
    assert out.branch == "up" and out.phi1_tilde == P0.phi1
    assert out.xbar == pytest.approx(float(mp_issuance(P0, 1.0, 10.0, 1000.0, 0.0, 1)), rel=1e-12)
    assert out.rho_total == out.rho_p + P0.rho_z + P0.rho_eta


def test_rational_or_tech_analysts_do_not_react():
    q = replace(P0, lam=1.0, f_tilde_rule=ConstantRule(0.0))
    a = equity_issuance(q, EquilibriumState(1.0, -20.0, 1000.0))
    b = equity_issuance(q, EquilibriumState(1.0, 20.0, 1000.0))
    assert a.xbar == b.xbar and a.d_xbar_d_eps == 0.0
    assert overreaction_sensitivity(replace(P0, theta=0.0), EquilibriumState(1.0, 10.0, 1000.0)) == (0.0, -0.0)


def random_params(rng):
    while True:
        p = EquilibriumParams(
            rho_z=rng.uniform(1, 100), rho_x=rng.uniform(0.5, 10), rho_eta=rng.uniform(0.5, 10),
            alpha=rng.uniform(0.02, 1), mu_z=rng.uniform(1, 30), phi1=rng.uniform(0, 0.3),
            phi2=rng.uniform(1e-4, 1e-2), r=rng.uniform(1.0, 1.1), delta=rng.uniform(0.1, 0.99),
            theta=rng.uniform(0.1, 2.0), lam=rng.uniform(0, 0.9),
            f_tilde_rule=StepRule(rng.uniform(50, 500), rng.uniform(0, 50)),
        )
        s = EquilibriumState(rng.uniform(0.9, 1.1), rng.uniform(-20, 20), rng.uniform(0, 2000))
        out = equity_issuance(p, s)
        # keep draws comfortably inside one branch so differences stay on it
        if out.branch != BRANCH_INACTION and abs(out.xbar - s.xbar_prev) > 1.0:
            return p, s, out


def test_sensitivity_signs_and_finite_differences_random_draws():
    rng = np.random.default_rng(42)
    h = mpmath.mpf("1e-4")
    for _ in range(100):
        p, s, out = random_params(rng)
        d1, d2 = overreaction_sensitivity(p, s)
        assert d2 < 0
        sign = 1 if out.branch == "up" else -1
        g = lambda e, l: mp_issuance(p, s.A, e, s.xbar_prev, l, sign)
        e0, l0 = mpmath.mpf(s.eps_prev), mpmath.mpf(p.lam)
        fd1 = (g(e0 + h, l0) - g(e0 - h, l0)) / (2 * h)
        fd2 = (g(e0 + h, l0 + h) - g(e0 + h, l0 - h) - g(e0 - h, l0 + h) + g(e0 - h, l0 - h)) / (4 * h * h)
        assert d1 == pytest.approx(float(fd1), rel=1e-6)
        assert d2 == pytest.approx(float(fd2), rel=1e-6)
        # sensitivity falls as the tech share rises
        q = replace(p, lam=min(1.0, p.lam + 0.05))
        assert equity_issuance(q, s).d_xbar_d_eps < out.d_xbar_d_eps or q.lam == p.lam


def test_branch_consistency_random_states():
    rng = np.random.default_rng(7)
    for _ in range(300):
        p = replace(P0, phi1=rng.uniform(0, 5), phi2=rng.uniform(1e-5, 1e-2), lam=rng.uniform(0, 1))
        s = EquilibriumState(rng.uniform(0.9, 1.1), rng.uniform(-50, 50), rng.uniform(0, 60000))
        out = equity_issuance(p, s)
        if out.branch == "up":
            assert out.xbar > s.xbar_prev and out.phi1_tilde == p.phi1
        elif out.branch == "down":
            assert out.xbar < s.xbar_prev and out.phi1_tilde == -p.phi1
        else:
            assert out.xbar == s.xbar_prev


def test_inaction_and_fixed_cost():
    s = EquilibriumState(1.0, 10.0, 1000.0)
    big = replace(P0, phi1=1e6)
    out = equity_issuance(big, s)
    assert out.branch == BRANCH_INACTION and out.xbar == 1000.0
    with pytest.raises(DomainError):
        overreaction_sensitivity(big, s)
    # at the optimum the net gain is finite; a fixed cost above it blocks issuance
    near = EquilibriumState(1.0, 10.0, 32990.0)
    assert equity_issuance(P0, near).branch == "up"
    assert equity_issuance(replace(P0, phi0=1e9), near).branch == BRANCH_INACTION


def test_no_cost_issuance_decreasing_in_A():
    p = replace(P0, phi1=0.0, phi2=0.0, f_tilde_rule=ConstantRule(300.0))
    A = np.linspace(0.05, 5.0, 2000)
    x = [equity_issuance(p, EquilibriumState(a, 10.0, 1000.0)).xbar for a in A]
    assert np.all(np.diff(x) < 0)


def test_issuance_non_decreasing_in_f_tilde():
    s = EquilibriumState(1.05, 10.0, 1000.0)
    xs = []
    for f in (0.0, 50.0, 100.0, 400.0):
        q = replace(P0, phi1=0.0, phi2=0.0, lam=0.3, f_tilde_rule=ConstantRule(f))
        xs.append(equity_issuance(q, s).xbar)
    assert np.all(np.diff(xs) > 0)
    assert (xs[1] - xs[0]) / 50 == pytest.approx(2.78 * 0.7 / (2 * 0.1 * 1.05), rel=1e-9)


def test_market_price_properties():
    s = EquilibriumState(1.0, 10.0, 1000.0)
    q = replace(P0, lam=1.0, f_tilde_rule=ConstantRule(0.0))
    rho = 81.16 + 2.78 + 3091.36
    p = market_price(q, s, 500.0, 15.0, 0.0)
    assert p * q.r == pytest.approx(1 / rho * rho * 15 - 0.1 * 500 / rho, rel=1e-12)
    slope = market_price(P0, s, 501.0, 15.0, 0.3) - market_price(P0, s, 500.0, 15.0, 0.3)
    assert slope == pytest.approx(-0.1 / rho / 1.01, rel=1e-8)
    assert market_price(replace(P0, theta=1.2), s, 500.0, 15.0, 0.0) > market_price(P0, s, 500.0, 15.0, 0.0)
    assert expected_price(P0, s, 500.0) == pytest.approx(market_price(P0, s, 500.0, 15.0, 0.0))


def test_params_json_and_validation():
    d = P0.to_dict()
    assert d["lambda"] == 0.0 and d["rho_z"] == 81.16 and d["phi2"] == 0.0004
    assert EquilibriumParams.from_json(P0.to_json()) == P0
    with pytest.raises(ConfigError):
        EquilibriumParams.from_dict({"rho_zz": 1.0})
    with pytest.raises(ParameterError):
        EquilibriumParams(lam=1.5)
    with pytest.raises(ParameterError):
        EquilibriumParams(rho_eta=0.0)
    with pytest.raises(ParameterError):
        EquilibriumParams(f_tilde_rule=StepRule(high=50.0, low=100.0))
    with pytest.raises(DomainError):
        EquilibriumState(0.0, 0.0, 0.0)


def test_grid_and_example_runner():
    g = default_A_grid()
    assert len(g) == 41 and g[0] == 0.9 and g[-1] == 1.1 and 1.0 in g
    rows = run_numerical_example(A_grid=[1.02], lambdas=[0.9])
    direct = equity_issuance(replace(P0, lam=0.9), EquilibriumState(1.02, 10.0, 1000.0))
    assert rows[0].xbar == direct.xbar
    assert curve_csv(rows).splitlines()[0] == "lambda,A,xbar,branch,d_xbar_d_eps"
    with pytest.raises(ParameterError):
        run_numerical_example(A_grid=[])


def test_A_path_sampler():
    a = sample_A_path(P0, 200, seed=3)
    assert np.array_equal(a, sample_A_path(P0, 200, seed=3))
    assert (a > 0).all() and np.std(np.log(a)) < 0.2
