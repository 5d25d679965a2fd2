"""Rolling-window forecasting: training samples, yearly refits, audits and metrics.

Calendar convention: in calendar year ``y`` a forecast with horizon ``h``
(12..23 months) is made in month ``24 - h`` and targets fiscal year ``y + 1``
(fiscal years end in December).  Training pairs use feature rows dated
``tau`` in the window ``[y - W, y - 1]`` and the outcome of fiscal year
``tau + 1`` as label, kept only if that label was public by the end of
``y - 1``.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import math

import numpy as np

from .data import FY_END_MONTH, FirmYearSeries, ForecastPanel, made_at, realized_from_panel
from .errors import (
    CoverageError,
    LookaheadError,
    MlreactError,
    ParameterError,
    PartitionError,
    ShapeError,
)
from .gbrt import GbrtHyperParams, fit_gbrt, predict as gbrt_predict
from .regress import oos_r2

HORIZONS = tuple(range(12, 24))
ANALYST_FEATURE = "analyst"


def month_index(year, month):
    return int(year) * 12 + int(month) - 1


def label_index(fiscal_year):
    return month_index(fiscal_year, FY_END_MONTH)


@dataclass(frozen=True)
class ForecasterSpec:
    """What to fit: ``gbrt``, ``linear`` (OLS with intercept), ``constant``
    (training mean) or ``analyst`` (pass-through of existing forecasts)."""

    kind: str = "gbrt"
    hyper: GbrtHyperParams = field(default_factory=GbrtHyperParams)
    features: tuple | None = None
    label: str | None = None

    def __post_init__(self):
        if self.kind not in ("gbrt", "linear", "constant", "analyst"):
            raise ParameterError(f"unknown forecaster kind {self.kind!r}")

    @property
    def name(self):
        return self.label or self.kind

    def to_dict(self):
        d = {"kind": self.kind, "features": None if self.features is None else list(self.features)}
        if self.kind == "gbrt":
            d["hyper"] = self.hyper.to_dict()
        return d


@dataclass(frozen=True)
class TrainingSample:
    X: np.ndarray
    y: np.ndarray
    firm_id: np.ndarray
    feature_year: np.ndarray
    label_year: np.ndarray
    feature_names: tuple
    target_year: int
    horizon: int

    @property
    def n(self):
        return len(self.y)

    def pairs(self):
        return [(str(f), int(t), int(l)) for f, t, l in zip(self.firm_id, self.feature_year, self.label_year)]


def _feature_columns(panel, names):
    if names is None:
        return tuple(panel.feature_names), panel.features
    missing = [n for n in names if n not in panel.feature_names]
    if missing:
        raise ShapeError(f"unknown features {missing}")
    idx = [panel.feature_names.index(n) for n in names]
    return tuple(names), panel.features[:, idx]


def build_training_sample(panel, target_year, horizon, window_years=5, features=None,
                          realized=None):
    """Training pairs available when forecasting in calendar year ``target_year``."""
    if not 12 <= horizon <= 23:
        raise ParameterError(f"horizon {horizon} outside 12..23")
    if window_years < 1:
        raise ParameterError("window_years must be >= 1")
    y = int(target_year)
    years = panel.years
    if len(years) == 0 or years.min() > y - window_years or years.max() < y - 1:
        raise CoverageError(f"panel does not span [{y - window_years}, {y - 1}]")
    names, F = _feature_columns(panel, features)
    if realized is None:
        realized = realized_from_panel(panel)
    month = 24 - horizon
    rows = np.flatnonzero(
        (panel.month == month)
        & (panel.fiscal_year >= y - window_years)
        & (panel.fiscal_year <= y - 1)
    )
    keep, labels = [], []
    for r in rows:
        tau = int(panel.fiscal_year[r])
        label_fy = tau + 1
        if label_index(label_fy) > month_index(y - 1, 12):
            continue
        v = realized.get((str(panel.firm_id[r]), label_fy))
        if v is None:
            continue
        keep.append(r)
        labels.append(v)
    if not keep:
        raise CoverageError(f"no training pairs for year {y}, horizon {horizon}")
    keep = np.asarray(keep)
    return TrainingSample(
        X=F[keep],
        y=np.asarray(labels, dtype=float),
        firm_id=panel.firm_id[keep],
        feature_year=panel.fiscal_year[keep],
        label_year=panel.fiscal_year[keep] + 1,
        feature_names=names,
        target_year=y,
        horizon=horizon,
    )


@dataclass(frozen=True)
class FitLog:
    """Which labels a (year, horizon) model saw; input to the look-ahead audit."""

    year: int
    horizon: int
    n_train: int
    label_dates: tuple  # month indices of the training labels' fiscal-year ends
    feature_dates: tuple  # month indices of the training feature rows


@dataclass(frozen=True, eq=False)
class RollingResult:
    forecasts: ForecastPanel
    fit_logs: tuple
    spec: ForecasterSpec


class _Model:
    def __init__(self, spec, sample):
        self.kind = spec.kind
        if spec.kind == "gbrt":
            self.m = fit_gbrt(sample.X, sample.y, spec.hyper, feature_names=sample.feature_names)
        elif spec.kind == "linear":
            A = np.hstack([np.ones((sample.n, 1)), sample.X])
            self.m, *_ = np.linalg.lstsq(A, sample.y, rcond=None)
        else:
            self.m = math.fsum(sample.y) / sample.n

    def predict(self, X):
        if self.kind == "gbrt":
            return gbrt_predict(self.m, X)
        if self.kind == "linear":
            return self.m[0] + X @ self.m[1:]
        return np.full(X.shape[0], self.m)


def fit_forecaster(spec, sample):
    return _Model(spec, sample)


def forecast_years(panel, window_years=5):
    """Calendar years with a full window behind them and a realized target."""
    years = panel.years
    if len(years) == 0:
        return []
    return [int(y) for y in range(int(years.min()) + window_years, int(years.max()))]


def _one_fit(panel, spec, year, h, window_years, realized):
    try:
        sample = build_training_sample(panel, year, h, window_years, spec.features, realized)
        model = fit_forecaster(spec, sample)
    except MlreactError as exc:
        raise type(exc)(f"year {year}, horizon {h}: {exc}") from exc
    names, F = _feature_columns(panel, spec.features)
    month = 24 - h
    rows = np.flatnonzero((panel.month == month) & (panel.fiscal_year == year))
    preds = model.predict(F[rows]) if len(rows) else np.empty(0)
    recs = []
    for r, v in zip(rows, preds):
        my, mm = made_at(year + 1, h)
        recs.append((str(panel.firm_id[r]), year + 1, h, my, mm, spec.name, float(v)))
    log = FitLog(
        year=year,
        horizon=h,
        n_train=sample.n,
        label_dates=tuple(label_index(l) for l in sample.label_year),
        feature_dates=tuple(month_index(t, month) for t in sample.feature_year),
    )
    return recs, log


def run_rolling_forecasts(panel, spec, horizons=HORIZONS, window_years=5, analyst=None,
                          years=None, threads=1, audit=True):
    """Refit one model per (year, horizon) and forecast the next fiscal year.

    ``analyst`` supplies the forecasts used by the pass-through spec.  Fits
    are independent and may run on ``threads`` workers; results are keyed
    and sorted so output does not depend on scheduling.
    """
    realized = realized_from_panel(panel)
    if spec.kind == "analyst":
        if analyst is None:
            raise ParameterError("analyst pass-through needs analyst forecasts")
        fp = analyst.relabel(spec.name)
        return RollingResult(ForecastPanel.from_records(list(fp.records()), realized).sorted(), (), spec)
    years = forecast_years(panel, window_years) if years is None else list(years)
    if not years:
        raise CoverageError(f"panel is too short for a {window_years}-year training window")
    jobs = [(y, h) for y in years for h in horizons]
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            out = list(ex.map(lambda j: _one_fit(panel, spec, j[0], j[1], window_years, realized), jobs))
    else:
        out = [_one_fit(panel, spec, y, h, window_years, realized) for y, h in jobs]
    recs = [r for rs, _ in out for r in rs]
    logs = tuple(sorted((lg for _, lg in out), key=lambda l: (l.year, l.horizon)))
    result = RollingResult(ForecastPanel.from_records(recs, realized).sorted(), logs, spec)
    if audit:
        audit_no_lookahead(result)
    return result


def audit_no_lookahead(result):
    """Fail if any model saw a label or feature dated in or after its forecast year."""
    bad = []
    for lg in result.fit_logs:
        cutoff = month_index(lg.year, 1)
        if lg.label_dates and max(lg.label_dates) >= cutoff:
            bad.append((lg.year, lg.horizon, "label", max(lg.label_dates) - cutoff + 1))
        if lg.feature_dates and max(lg.feature_dates) >= cutoff:
            bad.append((lg.year, lg.horizon, "feature", max(lg.feature_dates) - cutoff + 1))
    fp = result.forecasts
    by_year = {(lg.year, lg.horizon) for lg in result.fit_logs}
    for fy, h, my in zip(fp.fiscal_year, fp.horizon, fp.made_year):
        if (int(my), int(h)) not in by_year:
            bad.append((int(my), int(h), "forecast without fit log", 0))
            break
    if bad:
        y, h, what, months = bad[0]
        raise LookaheadError(
            f"{len(bad)} look-ahead violation(s); first: year {y}, horizon {h}, {what} "
            f"{months} month(s) past the cutoff"
        )
    return True


def with_analyst_feature(panel, analyst, name=ANALYST_FEATURE):
    """Add the analyst forecast made in each row's month as a feature column.

    Rows with no analyst forecast get NaN; they are never used by the
    rolling protocol as long as analyst coverage spans the forecast years.
    """
    lookup = {
        (str(f), int(y), int(m)): float(v)
        for f, y, m, v in zip(analyst.firm_id, analyst.made_year, analyst.made_month, analyst.value)
    }
    vals = np.array([
        lookup.get((str(f), int(y), int(m)), np.nan)
        for f, y, m in zip(panel.firm_id, panel.fiscal_year, panel.month)
    ])
    return panel.with_feature(name, vals)


def yearly_mse_ratio(fp, forecaster_a, forecaster_b):
    """Per target year MSE_a / MSE_b over firm-years both forecasters cover."""
    ea = fp.errors(forecaster_a).as_dict()
    eb = fp.errors(forecaster_b).as_dict()
    keys = sorted(set(ea) & set(eb), key=lambda k: (k[1], k[0]))
    if not keys:
        raise CoverageError("forecasters share no firm-years")
    out = []
    for year in sorted({k[1] for k in keys}):
        ks = [k for k in keys if k[1] == year]
        a = math.fsum(ea[k] ** 2 for k in ks)
        b = math.fsum(eb[k] ** 2 for k in ks)
        out.append((year, a / b if b > 0 else float("inf")))
    return out


def revision_magnitude(fp, forecaster):
    """Mean absolute month-to-month revision of a forecaster's forecasts.

    Revisions are taken within each firm's sequence of monthly forecasts
    ordered by issue date (the one-month step from h to h-1, and from one
    target year's h=12 to the next target's h=23).
    """
    sub = fp.only(forecaster).sorted()
    seqs = {}
    for f, my, mm, v in zip(sub.firm_id, sub.made_year, sub.made_month, sub.value):
        seqs.setdefault(str(f), []).append((month_index(my, mm), float(v)))
    diffs = []
    for f in sorted(seqs):
        s = sorted(seqs[f])
        for (t0, v0), (t1, v1) in zip(s, s[1:]):
            if t1 - t0 == 1:
                diffs.append(abs(v1 - v0))
    if not diffs:
        raise CoverageError("no consecutive monthly forecasts")
    return math.fsum(diffs) / len(diffs)


def stratified_folds(strata, k, seed=0):
    """Fold label per observation: shuffle within each stratum, deal round-robin.

    Each fold's share of every stratum is within one observation of the
    global share.
    """
    strata = np.asarray(strata)
    if k < 2:
        raise PartitionError("k must be >= 2")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    fold = np.empty(len(strata), dtype=np.int64)
    offset = 0
    for s in np.unique(strata):
        idx = np.flatnonzero(strata == s)
        if len(idx) < k:
            raise PartitionError(f"stratum {s!r} has {len(idx)} < k={k} observations")
        perm = rng.permutation(idx)
        fold[perm] = (np.arange(len(perm)) + offset) % k
        offset = (offset + len(perm)) % k
    return fold


def kfold_stratified_cv(panel, spec, k=10, horizon=12, seed=0, return_folds=False):
    """Mean out-of-sample R^2 over a year-stratified k-fold split.

    The sample is every firm-year with a realized next-year outcome, using
    the feature row at month ``24 - h``; the naive benchmark is the current
    outcome (the lagged actual of the target).
    """
    if spec.kind == "analyst":
        raise ParameterError("cross-validation needs a fitted forecaster")
    realized = realized_from_panel(panel)
    names, F = _feature_columns(panel, spec.features)
    rows = np.flatnonzero(panel.month == 24 - horizon)
    keep = [r for r in rows if (str(panel.firm_id[r]), int(panel.fiscal_year[r]) + 1) in realized]
    if not keep:
        raise CoverageError("no firm-years with a realized target")
    keep = np.asarray(keep)
    X = F[keep]
    y = np.array([realized[(str(panel.firm_id[r]), int(panel.fiscal_year[r]) + 1)] for r in keep])
    naive = np.array([realized[(str(panel.firm_id[r]), int(panel.fiscal_year[r]))] for r in keep])
    fold = stratified_folds(panel.fiscal_year[keep], k, seed)
    scores = []
    for j in range(k):
        test = fold == j
        sample = TrainingSample(X[~test], y[~test], panel.firm_id[keep][~test],
                                panel.fiscal_year[keep][~test], panel.fiscal_year[keep][~test] + 1,
                                names, -1, horizon)
        model = fit_forecaster(spec, sample)
        scores.append(oos_r2(y[test], model.predict(X[test]), naive[test]))
    mean = math.fsum(scores) / k
    return (mean, scores, fold) if return_folds else mean


def _errors_by_year(fp, names):
    errs = {n: fp.errors(n).as_dict() for n in names}
    common = set.intersection(*(set(e) for e in errs.values()))
    if not common:
        raise CoverageError("forecasters share no firm-years")
    years = sorted({k[1] for k in common})
    per = {n: [np.asarray([errs[n][k] for k in sorted(common) if k[1] == y]) for y in years]
           for n in names}
    return years, sorted(common), errs, per


def evaluate_forecasts(fp, names=None):
    """MSE and out-of-sample R^2 (naive = last realized outcome) per
    forecaster on common firm-years, plus pairwise Diebold-Mariano tests
    on per-year mean squared errors."""
    from .regress import diebold_mariano, mse
    from .errors import DegenerateTestError

    names = list(names or fp.forecasters)
    years, keys, errs, per = _errors_by_year(fp, names)
    naive_keys = [k for k in keys if (k[0], k[1] - 1) in fp.realized]
    actual = np.asarray([fp.realized[k] for k in naive_keys])
    lagged = np.asarray([fp.realized[(k[0], k[1] - 1)] for k in naive_keys])
    rows = {}
    for n in names:
        e = np.asarray([errs[n][k] for k in keys])
        f_naive = np.asarray([fp.realized[k] - errs[n][k] for k in naive_keys])
        rows[n] = {
            "n_obs": len(keys),
            "mse": mse(e, np.zeros_like(e)),
            "oos_r2": oos_r2(actual, f_naive, lagged) if naive_keys else float("nan"),
        }
    dm = {}
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            try:
                dm[f"{a} vs {b}"] = diebold_mariano(per[a], per[b])
            except (DegenerateTestError, ShapeError):
                # identical forecasts, or fewer than 8 evaluation years
                dm[f"{a} vs {b}"] = None
    return {"forecasters": rows, "diebold_mariano": dm, "years": [int(y) for y in years]}
