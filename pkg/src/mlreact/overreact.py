"""Overreaction regressions, forecaster comparisons, sweeps and error decomposition."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
import csv
import io
import json
import math

import numpy as np

from .data import FirmYearSeries, align
from .errors import AlignmentError, CoverageError, DataError, ParameterError
from .gbrt import GbrtHyperParams
from .harness import ForecasterSpec, revision_magnitude, run_rolling_forecasts, with_analyst_feature
from .regress import fe_regression, ols, sur_wald
from .stats import two_sided_normal_p
from .synth import (
    SynthParams,
    analytic_overreaction_beta,
    generate_analyst_forecasts,
    generate_synthetic_panel,
    shock_proxy,
)

LR_GRID = (0.01, 0.03, 0.04, 0.1, 0.15, 0.2, 0.25, 0.3, 0.5)


@dataclass(frozen=True, eq=False)
class OverreactionResult:
    beta: float
    t_stat: float
    n_obs: int
    adj_r2: float
    fe: dict
    forecaster: str
    fit: object
    wald_vs_baseline: object = None
    beta_raw: float | None = None
    bias_correction: str | None = None

    @property
    def se(self):
        return float(self.fit.se()[0])

    def to_dict(self):
        d = {
            "forecaster": self.forecaster,
            "beta": self.beta,
            "t_stat": self.t_stat,
            "se": self.se,
            "n_obs": self.n_obs,
            "adj_r2": self.adj_r2,
            "fe": dict(self.fe),
            "bias_correction": self.bias_correction,
        }
        if self.beta_raw is not None:
            d["beta_raw"] = self.beta_raw
        if self.wald_vs_baseline is not None:
            d["chi2"] = self.wald_vs_baseline.chi2
            d["p_value"] = self.wald_vs_baseline.p_value
        return d


def _aligned(errors, predictor):
    """Pair error of fiscal year t+1 with the predictor dated t."""
    e = errors.shift_years(-1)
    firms, years, (ev, pv) = align(e, predictor)
    return firms, years, ev, pv


def _check_panel(firms, years):
    if len(np.unique(firms)) < 2 or len(np.unique(years)) < 2:
        raise CoverageError("need at least two firms and two years of aligned observations")


def _split_years(years):
    u = np.unique(years)
    half = len(u) // 2
    return years <= u[half - 1], years > u[half - 1]


def overreaction_test(errors, predictor, fe="both", bias_correction=None, forecaster="",
                      cluster="firm"):
    """FE regression of the next-year forecast error on the date-t predictor.

    ``errors`` is keyed by target fiscal year, ``predictor`` by its own date.
    ``bias_correction="jackknife"`` replaces the point estimate by the
    split-panel jackknife 2*b - (b_early + b_late)/2 over the two halves of
    the year range, which removes the O(1/T) bias of within estimators on
    short panels with a predetermined regressor; the t-statistic keeps the
    full-sample clustered standard error.
    """
    if bias_correction not in (None, "jackknife"):
        raise ParameterError(f"unknown bias correction {bias_correction!r}")
    firms, years, ev, pv = _aligned(errors, predictor)
    _check_panel(firms, years)
    fit = fe_regression(ev, pv, firms, years, fe=fe, cluster=cluster, names=("predictor",))
    b = float(fit.coefficients[0])
    beta = b
    if bias_correction == "jackknife":
        halves = []
        for m in _split_years(years):
            _check_panel(firms[m], years[m])
            halves.append(float(fe_regression(ev[m], pv[m], firms[m], years[m], fe=fe,
                                              cluster=None).coefficients[0]))
        beta = 2.0 * b - 0.5 * (halves[0] + halves[1])
    se = float(fit.se()[0])
    return OverreactionResult(
        beta=beta,
        t_stat=beta / se if se > 0 else math.copysign(float("inf"), beta),
        n_obs=fit.n_obs,
        adj_r2=fit.adj_r2,
        fe=fit.fe_absorbed,
        forecaster=forecaster,
        fit=fit,
        beta_raw=b,
        bias_correction=bias_correction,
    )


@dataclass(frozen=True, eq=False)
class ComparisonTable:
    results: dict
    baseline: str
    n_common: int
    dropped: dict

    def rows(self):
        return [self.results[k] for k in self.results]

    def to_dict(self):
        return {
            "baseline": self.baseline,
            "n_common": self.n_common,
            "dropped": dict(self.dropped),
            "results": {k: r.to_dict() for k, r in self.results.items()},
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def to_csv(self):
        """Rows are statistics, columns are forecasters (coefficient (t), chi2 [p])."""
        names = list(self.results)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["row"] + names)
        w.writerow(["beta (t)"] + [f"{r.beta:.6f} ({r.t_stat:.3f})" for r in self.rows()])
        w.writerow(["chi2 [p]"] + [
            "" if r.wald_vs_baseline is None
            else f"{r.wald_vs_baseline.chi2:.6f} [{r.wald_vs_baseline.p_value:.4f}]"
            for r in self.rows()
        ])
        w.writerow(["N"] + [str(r.n_obs) for r in self.rows()])
        w.writerow(["adj R2"] + [f"{r.adj_r2:.6f}" for r in self.rows()])
        w.writerow(["firm FE"] + ["yes" if r.fe["firm"] else "no" for r in self.rows()])
        w.writerow(["year FE"] + ["yes" if r.fe["year"] else "no" for r in self.rows()])
        return buf.getvalue()

    def format(self):
        lines = []
        width = max(12, max(len(n) for n in self.results) + 2)
        lines.append("".ljust(12) + "".join(n.rjust(width) for n in self.results))
        lines.append("beta".ljust(12) + "".join(f"{r.beta:{width}.4f}" for r in self.rows()))
        lines.append("(t)".ljust(12) + "".join(f"({r.t_stat:.2f})".rjust(width) for r in self.rows()))
        lines.append("chi2".ljust(12) + "".join(
            ("" if r.wald_vs_baseline is None else f"{r.wald_vs_baseline.chi2:.3f}").rjust(width)
            for r in self.rows()))
        lines.append("[p]".ljust(12) + "".join(
            ("" if r.wald_vs_baseline is None else f"[{r.wald_vs_baseline.p_value:.3f}]").rjust(width)
            for r in self.rows()))
        lines.append("N".ljust(12) + "".join(f"{r.n_obs:{width}d}" for r in self.rows()))
        return "\n".join(lines)


def compare_forecasters(error_panels, baseline, predictor, fe="both", bias_correction=None):
    """One FE regression per forecaster on common firm-years, each Wald-tested
    against the baseline's slope with the SUR cross-equation covariance.

    ``bias_correction="jackknife"`` reports split-panel jackknife slopes (see
    ``overreaction_test``); the Wald statistics always use the uncorrected
    fits, whose joint covariance is known.
    """
    if bias_correction not in (None, "jackknife"):
        raise ParameterError(f"unknown bias correction {bias_correction!r}")
    if baseline not in error_panels:
        raise ParameterError(f"baseline {baseline!r} not among forecasters")
    names = list(error_panels)
    shifted = {k: error_panels[k].shift_years(-1) for k in names}
    common = set(predictor.as_dict())
    for s in shifted.values():
        common &= set(s.as_dict())
    if not common:
        raise AlignmentError("forecasters share no firm-years with the predictor")
    dropped = {k: len(shifted[k]) - len(common) for k in names}
    keys = sorted(common)
    firms = np.asarray([k[0] for k in keys])
    years = np.asarray([k[1] for k in keys], dtype=np.int64)
    _check_panel(firms, years)
    pdict = predictor.as_dict()
    pv = np.asarray([pdict[k] for k in keys])
    fits, betas = {}, {}
    halves = _split_years(years) if bias_correction == "jackknife" else ()
    for m in halves:
        _check_panel(firms[m], years[m])
    for k in names:
        d = shifted[k].as_dict()
        ev = np.asarray([d[key] for key in keys])
        fits[k] = fe_regression(ev, pv, firms, years, fe=fe, names=("predictor",))
        b = float(fits[k].coefficients[0])
        if halves:
            hb = [float(fe_regression(ev[m], pv[m], firms[m], years[m], fe=fe,
                                      cluster=None).coefficients[0]) for m in halves]
            b = 2.0 * b - 0.5 * (hb[0] + hb[1])
        betas[k] = b
    results = {}
    for k in names:
        f = fits[k]
        se = float(f.se()[0])
        b = betas[k]
        results[k] = OverreactionResult(
            beta=b, t_stat=b / se if se > 0 else float("inf"), n_obs=f.n_obs, adj_r2=f.adj_r2,
            fe=f.fe_absorbed, forecaster=k, fit=f,
            wald_vs_baseline=sur_wald(f, fits[baseline], 0),
            beta_raw=float(f.coefficients[0]), bias_correction=bias_correction,
        )
    return ComparisonTable(results, baseline, len(keys), dropped)


@dataclass(frozen=True, eq=False)
class ErrorDecomposition:
    firm_id: np.ndarray
    year: np.ndarray
    total: np.ndarray
    market_component: np.ndarray
    firm_component: np.ndarray
    market_return: dict
    loadings: dict
    intercepts: dict
    degenerate: tuple
    metadata: dict = field(default_factory=lambda: {"intercept_assigned_to": "firm"})

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["firm_id", "fiscal_year", "error", "market_mean", "beta_im", "market_component",
                    "firm_component", "degenerate"])
        deg = set(self.degenerate)
        for f, y, e, m, c in zip(self.firm_id, self.year, self.total, self.market_component,
                                 self.firm_component):
            w.writerow([f, int(y), repr(float(e)), repr(self.market_return[int(y)]),
                        repr(self.loadings[f]), repr(float(m)), repr(float(c)), int(f in deg)])
        return buf.getvalue()

    def summary(self):
        var_t = float(np.var(self.total))
        return {
            "n_obs": int(len(self.total)),
            "n_firms": len(self.loadings),
            "mean_beta_im": math.fsum(self.loadings.values()) / len(self.loadings),
            "market_share_of_variance": float(np.var(self.market_component)) / var_t if var_t > 0 else float("nan"),
            "n_degenerate": len(self.degenerate),
            "intercept_assigned_to": self.metadata["intercept_assigned_to"],
        }


def decompose_errors(errors, min_years=3):
    """Split forecast errors into market and firm-specific parts.

    r_m,t is the equal-weighted mean error of year t.  Each firm's errors
    are regressed on r_m over its own years; the market part is
    beta_im * r_m,t and the firm part is everything else (the firm's
    intercept included).  Firms whose r_m is constant over their years get
    beta_im = 0 and are flagged.
    """
    firms = errors.firm_id
    years = errors.year
    e = np.asarray(errors.value, dtype=float)
    if len(e) == 0:
        raise CoverageError("no errors to decompose")
    r_m = {}
    for y in np.unique(years):
        r_m[int(y)] = math.fsum(e[years == y]) / int(np.sum(years == y))
    rm = np.asarray([r_m[int(y)] for y in years])
    market = np.empty_like(e)
    loadings, intercepts, degenerate = {}, {}, []
    for f in np.unique(firms):
        m = firms == f
        f = str(f)
        if m.sum() < min_years:
            raise DataError(f"firm {f} has {int(m.sum())} < {min_years} years")
        x = rm[m]
        scale = max(1.0, float(np.max(np.abs(x))))
        if float(np.ptp(x)) <= 1e-12 * scale:
            b, a = 0.0, math.fsum(e[m]) / int(m.sum())
            degenerate.append(f)
        else:
            fit = ols(x, e[m], add_intercept=True)
            a, b = float(fit.coefficients[0]), float(fit.coefficients[1])
        loadings[f] = b
        intercepts[f] = a
        market[m] = b * x
    return ErrorDecomposition(
        firm_id=np.asarray(firms),
        year=np.asarray(years),
        total=e,
        market_component=market,
        firm_component=e - market,
        market_return=r_m,
        loadings=loadings,
        intercepts=intercepts,
        degenerate=tuple(degenerate),
    )


# -- Monte Carlo -----------------------------------------------------------------

@dataclass(frozen=True)
class McSummary:
    mean: float
    sd: float
    mc_se: float
    n: int

    def to_dict(self):
        return {"mean": self.mean, "sd": self.sd, "mc_se": self.mc_se, "n": self.n}


def summarize(values):
    """Mean, sample SD and Monte-Carlo SE (sd / sqrt(n)) with compensated sums."""
    v = [float(x) for x in values]
    n = len(v)
    if n < 2:
        raise ParameterError("need at least two replications")
    mean = math.fsum(v) / n
    sd = math.sqrt(math.fsum((x - mean) ** 2 for x in v) / (n - 1))
    return McSummary(mean, sd, sd / math.sqrt(n), n)


def replicate(fn, seeds, threads=1):
    """Run ``fn(seed)`` for each seed; results come back sorted by seed."""
    seeds = sorted(int(s) for s in seeds)
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            out = list(ex.map(fn, seeds))
    else:
        out = [fn(s) for s in seeds]
    return list(zip(seeds, out))


def rank_correlation(x, y):
    """Spearman rank correlation with average ranks for ties; the p-value
    uses the Fisher z approximation (var 1.06/(n-3))."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(x)
    if n < 4 or len(y) != n:
        raise ParameterError("need at least 4 paired observations")

    def ranks(v):
        o = np.argsort(v, kind="stable")
        r = np.empty(n)
        sv = v[o]
        i = 0
        while i < n:
            j = i
            while j + 1 < n and sv[j + 1] == sv[i]:
                j += 1
            r[o[i:j + 1]] = 0.5 * (i + j) + 1.0
            i = j + 1
        return r

    rx, ry = ranks(x), ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    den = math.sqrt(float(rx @ rx) * float(ry @ ry))
    rho = float(rx @ ry) / den if den > 0 else 0.0
    rho_c = min(max(rho, -1 + 1e-15), 1 - 1e-15)
    z = math.atanh(rho_c) * math.sqrt((n - 3) / 1.06)
    return rho, two_sided_normal_p(z)


# -- synthetic experiments -----------------------------------------------------

def analyst_beta_replication(seed, params=None, theta=None, bias_correction="jackknife"):
    """One replication: simulate, issue analyst forecasts, run the FE test on news."""
    params = replace(params or SynthParams(), seed=int(seed))
    theta = params.theta if theta is None else theta
    panel = generate_synthetic_panel(params)
    fp = generate_analyst_forecasts(panel, theta, params.delta, params.f_spec)
    res = overreaction_test(fp.errors("analyst"), shock_proxy(panel), bias_correction=bias_correction)
    return res


def oracle_beta(params=None, theta=None):
    """Closed-form slope on the news proxy: -theta*delta*var(eps)/var(news)."""
    params = params or SynthParams()
    theta = params.theta if theta is None else theta
    return analytic_overreaction_beta(theta, params.delta, params.var_eps, params.var_news)


@dataclass(frozen=True, eq=False)
class ForecastExperiment:
    """Analyst and GBRT forecasts on one synthetic panel with shared seeds."""

    seed: int
    betas: dict
    revisions: dict
    table: ComparisonTable


def forecast_experiment(seed, params=None, gammas=(0.1,), include_analyst_feature=True,
                        hyper=None, horizons=None, threads=1, bias_correction="jackknife"):
    """The standard configuration: default synthetic panel, analyst forecasts
    from the diagnostic rule, and GBRT (optionally one per learning rate)
    trained on the public features plus the analyst forecast."""
    from .harness import HORIZONS

    params = replace(params or SynthParams(), seed=int(seed))
    hyper = hyper or GbrtHyperParams()
    panel = generate_synthetic_panel(params)
    analyst = generate_analyst_forecasts(panel, params.theta, params.delta, params.f_spec)
    train_panel = with_analyst_feature(panel, analyst) if include_analyst_feature else panel
    errors = {"analyst": analyst.errors("analyst")}
    revisions = {}
    for g in gammas:
        name = f"gbrt_{g:g}"
        spec = ForecasterSpec("gbrt", replace(hyper, learning_rate=g), label=name)
        res = run_rolling_forecasts(train_panel, spec, horizons or HORIZONS, threads=threads)
        errors[name] = res.forecasts.errors(name)
        revisions[name] = revision_magnitude(res.forecasts, name)
    table = compare_forecasters(errors, "analyst", shock_proxy(panel), bias_correction=bias_correction)
    betas = {k: r.beta for k, r in table.results.items()}
    return ForecastExperiment(int(seed), betas, revisions, table)


def learning_rate_sweep(panel, gammas=LR_GRID, predictor=None, analyst=None, hyper=None,
                        threads=1, baseline=None, bias_correction=None):
    """Fit GBRT at each learning rate on one panel.

    Returns the comparison table over rates plus the mean absolute monthly
    revision per rate."""
    hyper = hyper or GbrtHyperParams()
    predictor = predictor if predictor is not None else shock_proxy(panel)
    train_panel = with_analyst_feature(panel, analyst) if analyst is not None else panel
    errors, revisions = {}, {}
    for g in gammas:
        name = f"gbrt_{g:g}"
        spec = ForecasterSpec("gbrt", replace(hyper, learning_rate=g), label=name)
        res = run_rolling_forecasts(train_panel, spec, threads=threads)
        errors[name] = res.forecasts.errors(name)
        revisions[name] = revision_magnitude(res.forecasts, name)
    base = baseline or f"gbrt_{hyper.learning_rate:g}"
    if base not in errors:
        base = next(iter(errors))
    return compare_forecasters(errors, base, predictor, bias_correction=bias_correction), revisions
