"""Least squares, two-way fixed effects, SUR Wald tests and forecast metrics."""

from dataclasses import dataclass, field
import json
import math

import numpy as np

from .errors import (
    AlignmentError,
    ConvergenceError,
    DegenerateTestError,
    FitError,
    ShapeError,
    SingularityError,
)
from .stats import chi2_sf, two_sided_normal_p

RANK_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class RegressionFit:
    coefficients: np.ndarray
    residuals: np.ndarray
    vcov_plain: np.ndarray
    vcov_clustered: np.ndarray | None
    n_obs: int
    n_params: int
    r2: float
    adj_r2: float
    names: tuple = ()
    fe_absorbed: dict = field(default_factory=lambda: {"firm": False, "year": False})
    df_resid: int = 0
    n_clusters: int | None = None
    # design pieces kept for cross-equation (SUR) covariances
    design: np.ndarray = field(default=None, repr=False)
    xtx_inv: np.ndarray = field(default=None, repr=False)
    cluster_codes: np.ndarray | None = field(default=None, repr=False)
    cluster_factor: float | None = field(default=None, repr=False)

    @property
    def vcov(self):
        return self.vcov_clustered if self.vcov_clustered is not None else self.vcov_plain

    def se(self, clustered=True):
        v = self.vcov_clustered if (clustered and self.vcov_clustered is not None) else self.vcov_plain
        return np.sqrt(np.clip(np.diag(v), 0.0, None))

    def t_stats(self, clustered=True):
        se = self.se(clustered)
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.coefficients / se

    def coef(self, name):
        return float(self.coefficients[self.names.index(name)])

    def to_dict(self):
        se = self.se()
        return {
            "names": list(self.names),
            "coefficients": self.coefficients.tolist(),
            "se": se.tolist(),
            "t_stats": self.t_stats().tolist(),
            "clustered": self.vcov_clustered is not None,
            "n_obs": self.n_obs,
            "n_params": self.n_params,
            "r2": self.r2,
            "adj_r2": self.adj_r2,
            "fe": dict(self.fe_absorbed),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass(frozen=True)
class WaldResult:
    chi2: float
    p_value: float
    df: int = 1


def _codes(ids):
    _, inv = np.unique(np.asarray(ids), return_inverse=True)
    return inv.ravel()


def ols(X, y, cluster_ids=None, names=None, add_intercept=False, absorbed_df=0, nested_df=0,
        tss=None, fe=None):
    """OLS through a QR decomposition.

    ``absorbed_df`` counts parameters removed before the call (e.g. fixed
    effects swept out by demeaning); ``nested_df`` is the part of those
    nested within clusters, which the cluster-robust correction
    G/(G-1) * (N-1)/(N-K) does not count.  ``tss`` overrides the total sum of
    squares used for R^2 (pass the raw dependent's TSS after demeaning).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if names is None:
        names = tuple(f"x{j}" for j in range(X.shape[1]))
    names = tuple(names)
    if add_intercept:
        X = np.hstack([np.ones((X.shape[0], 1)), X])
        names = ("const",) + names
    n, k = X.shape
    if len(y) != n:
        raise ShapeError(f"{n} design rows but {len(y)} observations")
    if len(names) != k:
        raise ShapeError("names length does not match design columns")
    if n == 0:
        raise FitError("empty regression")
    df_resid = n - k - absorbed_df
    if df_resid <= 0:
        raise FitError(f"need more observations than parameters (n={n}, k={k + absorbed_df})")

    Q, R = np.linalg.qr(X)
    col_norm = np.linalg.norm(X, axis=0)
    diag = np.abs(np.diag(R))
    for j in range(k):
        if not diag[j] > RANK_TOL * max(col_norm[j], 1e-300) or col_norm[j] == 0:
            raise SingularityError(f"design is rank deficient at column {names[j]!r}", column=names[j])
    coef = np.linalg.solve(R, Q.T @ y)
    r_inv = np.linalg.solve(R, np.eye(k))
    xtx_inv = r_inv @ r_inv.T
    resid = y - X @ coef
    rss = float(resid @ resid)
    s2 = rss / df_resid
    vcov_plain = s2 * xtx_inv

    vcov_cl = None
    n_clusters = None
    codes = None
    factor = None
    if cluster_ids is not None:
        codes = _codes(cluster_ids)
        if len(codes) != n:
            raise ShapeError("cluster_ids length mismatch")
        n_clusters = int(codes.max()) + 1
        if n_clusters < 2:
            raise FitError("need at least two clusters")
        k_eff = k + absorbed_df - nested_df
        factor = n_clusters / (n_clusters - 1) * (n - 1) / (n - k_eff)
        vcov_cl = factor * _sandwich(X, resid, codes, n_clusters, xtx_inv)

    if tss is None:
        tss = float(np.sum((y - y.mean()) ** 2)) if (add_intercept or fe) else float(y @ y)
    r2 = 1.0 - rss / tss if tss > 0 else float("nan")
    adj = 1.0 - (1.0 - r2) * (n - 1) / df_resid if tss > 0 else float("nan")
    return RegressionFit(
        coefficients=coef,
        residuals=resid,
        vcov_plain=_sym(vcov_plain),
        vcov_clustered=None if vcov_cl is None else _sym(vcov_cl),
        n_obs=n,
        n_params=k,
        r2=r2,
        adj_r2=adj,
        names=names,
        fe_absorbed=dict(fe or {"firm": False, "year": False}),
        df_resid=df_resid,
        n_clusters=n_clusters,
        design=X,
        xtx_inv=xtx_inv,
        cluster_codes=codes,
        cluster_factor=factor,
    )


def _sym(v):
    return 0.5 * (v + v.T)


def _sandwich(X, u, codes, G, xtx_inv):
    scores = np.zeros((G, X.shape[1]))
    np.add.at(scores, codes, X * u[:, None])
    meat = scores.T @ scores
    return xtx_inv @ meat @ xtx_inv


def within(values, *groupings, tol=1e-10, max_iter=100):
    """Sweep out several sets of group means by alternating projections.

    Iterates until the largest mean removed in a full sweep falls below
    ``tol`` (scaled by the data magnitude when that exceeds 1).
    """
    v = np.array(values, dtype=float, copy=True)
    squeeze = v.ndim == 1
    if squeeze:
        v = v.reshape(-1, 1)
    codes = [_codes(g) for g in groupings]
    for c in codes:
        if len(c) != v.shape[0]:
            raise ShapeError("group ids must align with values")
    counts = [np.bincount(c).astype(float) for c in codes]
    scale = max(1.0, float(np.max(np.abs(v))) if v.size else 1.0)
    trace = []
    for _ in range(max_iter):
        change = 0.0
        for c, cnt in zip(codes, counts):
            sums = np.zeros((len(cnt), v.shape[1]))
            np.add.at(sums, c, v)
            means = sums / cnt[:, None]
            v -= means[c]
            change = max(change, float(np.max(np.abs(means))) if means.size else 0.0)
        trace.append(change)
        if change < tol * scale:
            return v.ravel() if squeeze else v
    raise ConvergenceError(f"demeaning did not converge in {max_iter} iterations", trace)


def two_way_within(values, firm_ids, year_ids, tol=1e-10, max_iter=100):
    """Remove firm and year means (alternating firm, then year)."""
    return within(values, firm_ids, year_ids, tol=tol, max_iter=max_iter)


def fe_regression(y, X, firm_ids, year_ids, fe="both", cluster="firm", names=None):
    """OLS of y on X with absorbed firm and/or year effects.

    Standard errors are clustered by firm unless ``cluster`` is None.
    Degrees of freedom count every absorbed effect for the plain covariance;
    firm effects are treated as nested in firm clusters.
    """
    y = np.asarray(y, dtype=float).ravel()
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    firm_ids = np.asarray(firm_ids)
    year_ids = np.asarray(year_ids)
    n_f = len(np.unique(firm_ids))
    n_y = len(np.unique(year_ids))
    groups = []
    if fe in ("both", "firm"):
        groups.append(firm_ids)
    if fe in ("both", "year"):
        groups.append(year_ids)
    if fe not in ("both", "firm", "year", "none"):
        raise ValueError(f"unknown fe option {fe!r}")
    tss = float(np.sum((y - y.mean()) ** 2))
    flags = {"firm": fe in ("both", "firm"), "year": fe in ("both", "year")}
    clusters = firm_ids if cluster == "firm" else (year_ids if cluster == "year" else None)
    if not groups:
        return ols(X, y, cluster_ids=clusters, names=names, add_intercept=True, tss=tss, fe=flags)
    # demean the design on its own so that it does not depend on y; fits
    # sharing regressors then share the exact same design (needed by sur_wald)
    Xw = within(X, *groups)
    yw = within(y, *groups)
    absorbed = {"both": n_f + n_y - 1, "firm": n_f, "year": n_y}[fe]
    nested = (n_f - 1) if (flags["firm"] and cluster == "firm") else 0
    return ols(Xw, yw, cluster_ids=clusters, names=names, absorbed_df=absorbed,
               nested_df=nested, tss=tss, fe=flags)


def sur_wald(fit_a, fit_b, coef_index=0):
    """Wald test of equal coefficients across two equations on one design.

    With identical regressors SUR coincides with equation-by-equation OLS,
    so the cross-equation covariance of (b_a - b_b) is the sandwich built
    from the residual difference u_a - u_b: firm-clustered when both fits
    are clustered, otherwise homoskedastic with the fits' residual df.
    """
    if fit_a.n_obs != fit_b.n_obs or not np.array_equal(fit_a.design, fit_b.design):
        raise AlignmentError("SUR comparison needs fits on the same observations and regressors")
    if isinstance(coef_index, str):
        coef_index = fit_a.names.index(coef_index)
    d = fit_a.residuals - fit_b.residuals
    diff = float(fit_a.coefficients[coef_index] - fit_b.coefficients[coef_index])
    clustered = fit_a.cluster_codes is not None and fit_b.cluster_codes is not None
    if clustered:
        if not np.array_equal(fit_a.cluster_codes, fit_b.cluster_codes):
            raise AlignmentError("fits use different clusters")
        v = fit_a.cluster_factor * _sandwich(
            fit_a.design, d, fit_a.cluster_codes, fit_a.n_clusters, fit_a.xtx_inv
        )
    else:
        v = float(d @ d) / fit_a.df_resid * fit_a.xtx_inv
    var = float(v[coef_index, coef_index])
    ref = max(fit_a.se(clustered)[coef_index], fit_b.se(clustered)[coef_index], 1e-300)
    if abs(diff) <= 1e-10 * ref:
        return WaldResult(0.0, 1.0, 1)
    if var <= 0:
        return WaldResult(float("inf"), 0.0, 1)
    chi2 = diff * diff / var
    return WaldResult(chi2, chi2_sf(chi2, 1), 1)


def _period_means(errors):
    if isinstance(errors, np.ndarray) and errors.ndim <= 2:
        e = np.asarray(errors, dtype=float)
        return (e ** 2).mean(axis=1) if e.ndim == 2 else e ** 2
    return np.asarray([np.mean(np.asarray(p, dtype=float) ** 2) for p in errors])


def newey_west_var_of_mean(d, lags):
    d = np.asarray(d, dtype=float)
    T = len(d)
    u = d - d.mean()
    s = float(u @ u) / T
    for l in range(1, lags + 1):
        w = 1.0 - l / (lags + 1.0)
        s += 2.0 * w * float(u[l:] @ u[:-l]) / T
    return s / T


def diebold_mariano(errors_a, errors_b, lags=None):
    """Diebold-Mariano test on per-period cross-sectional squared-error gaps.

    ``errors_*`` are per-period forecast errors: a (T, n) array, a sequence
    of T arrays, or a length-T vector (one error per period).
    d_t = mean_i(e_b^2) - mean_i(e_a^2); DM = mean(d) / NW-se(mean(d)) with
    Bartlett weights and floor(T^(1/3)) lags.  A positive DM favours a.
    Returns ``{"dm_stat", "p_value", "lags", "mean_diff"}``.
    """
    la = _period_means(errors_a)
    lb = _period_means(errors_b)
    if len(la) != len(lb):
        raise ShapeError("error series must cover the same periods")
    T = len(la)
    if T < 8:
        raise ShapeError("need at least 8 periods")
    d = lb - la
    if np.all(d == 0):
        raise DegenerateTestError("identical forecasts: all loss differences are zero")
    if lags is None:
        lags = int(math.floor(T ** (1.0 / 3.0) + 1e-12))
    dbar = float(np.mean(d))
    var = newey_west_var_of_mean(d, lags)
    if var <= 0:
        stat = math.copysign(float("inf"), dbar) if dbar != 0 else 0.0
    else:
        stat = dbar / math.sqrt(var)
    return {"dm_stat": stat, "p_value": two_sided_normal_p(stat), "lags": lags, "mean_diff": dbar}


def mse(actuals, forecasts):
    a = np.asarray(actuals, dtype=float).ravel()
    f = np.asarray(forecasts, dtype=float).ravel()
    if a.size == 0:
        raise ShapeError("empty input")
    if a.shape != f.shape:
        raise ShapeError("actuals and forecasts must align")
    return float(np.mean((a - f) ** 2))


def oos_r2(actuals, forecasts, naive):
    """1 - SSE(forecast) / SSE(naive); ``naive`` is normally the lagged actual."""
    a = np.asarray(actuals, dtype=float).ravel()
    f = np.asarray(forecasts, dtype=float).ravel()
    b = np.asarray(naive, dtype=float).ravel()
    if a.size == 0:
        raise ShapeError("empty input")
    if not (a.shape == f.shape == b.shape):
        raise ShapeError("actuals, forecasts and naive must align")
    den = float(np.sum((a - b) ** 2))
    if den == 0:
        raise DegenerateTestError("naive forecast is perfect; R^2_OOS undefined")
    return 1.0 - float(np.sum((f - a) ** 2)) / den
