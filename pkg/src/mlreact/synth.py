"""Synthetic earnings panels and diagnostic-expectations analyst forecasts.

Outcomes follow an AR(1) with a firm-covariate component,

    x[t+1] = delta * x[t] + f(z[t]) + eps[t+1],

and an analyst of overreaction ``theta`` forecasts

    F_t x[t+1] = delta_hat * x[t] + f_hat(z[t]) + theta * delta_hat * eps[t].

Random numbers come from numpy's PCG64 seeded through ``SeedSequence``.
Firm ``i`` draws from its own child stream ``SeedSequence(seed,
spawn_key=(i,))``, so adding firms leaves existing firms' draws untouched,
and analyst private signals use ``spawn_key=(i, 1, salt)``.
"""

from dataclasses import asdict, dataclass, field
import json
import math

import numpy as np

from .data import ForecastPanel, FirmYearSeries, PanelDataset, made_at, realized_from_panel
from .errors import DomainError, OracleUnavailableError, ParameterError

BURN_IN_YEARS = 2
FIRST_FISCAL_YEAR = 1990
INVESTMENT_SLOPE = 1.0
INVESTMENT_NOISE = 0.05
HORIZONS = tuple(range(12, 24))


@dataclass(frozen=True)
class FSpec:
    """Firm component ``f(z)``: ``zero``, ``linear`` (coef*z) or ``step``
    (coef * 1[z >= threshold])."""

    kind: str = "linear"
    coef: float = 0.5
    threshold: float = 0.0

    def __post_init__(self):
        if self.kind not in ("zero", "linear", "step"):
            raise ParameterError(f"unknown f_spec kind {self.kind!r}")

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(z)
        if self.kind == "linear":
            return self.coef * z
        return np.where(z >= self.threshold, self.coef, 0.0)

    def moments(self, sigma_z):
        """Mean and variance of f(z) for z ~ N(0, sigma_z^2)."""
        if self.kind == "zero":
            return 0.0, 0.0
        if self.kind == "linear":
            return 0.0, self.coef ** 2 * sigma_z ** 2
        p = 0.5 * math.erfc(self.threshold / (sigma_z * math.sqrt(2.0))) if sigma_z > 0 else float(self.threshold <= 0)
        return self.coef * p, self.coef ** 2 * p * (1 - p)

    @classmethod
    def coerce(cls, spec):
        if spec is None:
            return cls("zero", 0.0)
        if isinstance(spec, cls):
            return spec
        if isinstance(spec, str):
            return cls(spec)
        return cls(**spec)


@dataclass(frozen=True)
class SynthParams:
    n_firms: int = 50
    n_years: int = 20
    delta: float = 0.785
    theta: float = 0.991
    theta_tech: float = 0.3
    sigma_eps: float = 1.0
    f_spec: FSpec = field(default_factory=FSpec)
    sigma_z: float = 1.0
    n_features_noise: int = 3
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "f_spec", FSpec.coerce(self.f_spec))
        if int(self.n_firms) != self.n_firms or self.n_firms < 2:
            raise ParameterError("n_firms must be an integer >= 2")
        if int(self.n_years) != self.n_years or self.n_years < 3:
            raise ParameterError("n_years must be an integer >= 3")
        if not abs(self.delta) < 1:
            raise ParameterError("|delta| must be < 1")
        if not self.sigma_eps > 0:
            raise ParameterError("sigma_eps must be > 0")
        if self.theta < 0 or self.theta_tech < 0:
            raise ParameterError("theta and theta_tech must be >= 0")
        if self.sigma_z < 0:
            raise ParameterError("sigma_z must be >= 0")
        if int(self.n_features_noise) != self.n_features_noise or self.n_features_noise < 0:
            raise ParameterError("n_features_noise must be a non-negative integer")

    def to_dict(self):
        d = asdict(self)
        d["f_spec"] = asdict(self.f_spec)
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ParameterError(f"unknown SynthParams fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    # analytic moments -------------------------------------------------------

    @property
    def var_eps(self):
        return self.sigma_eps ** 2

    @property
    def var_x(self):
        _, vf = self.f_spec.moments(self.sigma_z)
        return (self.var_eps + vf) / (1 - self.delta ** 2)

    @property
    def var_news(self):
        """Variance of date-t news x[t] - delta*x[t-1] = f(z[t-1]) + eps[t]."""
        return self.var_eps + self.f_spec.moments(self.sigma_z)[1]


def firm_ids(n_firms):
    width = max(4, len(str(n_firms - 1)))
    return [f"F{i:0{width}d}" for i in range(n_firms)]


def firm_rng(seed, i, *salt):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i,) + tuple(salt)))


def _logistic(v):
    return 1.0 / (1.0 + np.exp(-v))


def simulate_firm(params, i):
    """Latent annual paths for one firm, burn-in included.

    Returns arrays over years 0..B+n_years-1: x, eps, z.
    """
    rng = firm_rng(params.seed, i)
    n_total = BURN_IN_YEARS + params.n_years
    mf, vf = params.f_spec.moments(params.sigma_z)
    sd0 = math.sqrt((params.var_eps + vf) / (1 - params.delta ** 2))
    x = np.empty(n_total)
    x[0] = mf / (1 - params.delta) + sd0 * rng.standard_normal()
    z = params.sigma_z * rng.standard_normal(n_total)
    eps = params.sigma_eps * rng.standard_normal(n_total)
    eps[0] = np.nan  # x[0] comes from the stationary law, not a shock
    fz = params.f_spec(z)
    for t in range(1, n_total):
        x[t] = params.delta * x[t - 1] + fz[t - 1] + eps[t]
    inv_noise = INVESTMENT_NOISE * rng.standard_normal(n_total)
    feat_noise = rng.standard_normal((n_total, 12, params.n_features_noise))
    return x, eps, z, inv_noise, feat_noise


def generate_synthetic_panel(params):
    """Monthly panel; each fiscal-year outcome is repeated over its 12 months.

    Features per row: ``x`` (current annual outcome), ``x_lag``, ``z`` and
    ``noise_k`` columns redrawn every month.  Investment is a logistic
    transform of the year's news plus small noise, clipped at zero.
    """
    if not isinstance(params, SynthParams):
        raise ParameterError("expected SynthParams")
    B = BURN_IN_YEARS
    ids = firm_ids(params.n_firms)
    names = ("x", "x_lag", "z") + tuple(f"noise_{k}" for k in range(params.n_features_noise))
    cols = {k: [] for k in ("firm", "fy", "month", "x", "inv", "eps", "z", "feat")}
    months = np.arange(1, 13)
    for i, fid in enumerate(ids):
        x, eps, z, inv_noise, feat_noise = simulate_firm(params, i)
        for t in range(B, B + params.n_years):
            news = x[t] - params.delta * x[t - 1]
            inv = max(_logistic(INVESTMENT_SLOPE * news) + inv_noise[t], 0.0)
            fy = FIRST_FISCAL_YEAR + (t - B)
            base = np.array([x[t], x[t - 1], z[t]])
            feats = np.hstack([np.tile(base, (12, 1)), feat_noise[t]])
            cols["firm"].extend([fid] * 12)
            cols["fy"].extend([fy] * 12)
            cols["month"].extend(months.tolist())
            cols["x"].extend([x[t]] * 12)
            cols["inv"].extend([inv] * 12)
            cols["eps"].extend([eps[t]] * 12)
            cols["z"].extend([z[t]] * 12)
            cols["feat"].append(feats)
    return PanelDataset(
        firm_id=np.asarray(cols["firm"], dtype=str),
        fiscal_year=np.asarray(cols["fy"], dtype=np.int64),
        month=np.asarray(cols["month"], dtype=np.int64),
        outcome=np.asarray(cols["x"], dtype=float),
        investment=np.asarray(cols["inv"], dtype=float),
        latent_eps=np.asarray(cols["eps"], dtype=float),
        latent_z=np.asarray(cols["z"], dtype=float),
        features=np.vstack(cols["feat"]),
        feature_names=names,
        provenance=params,
    )


def _annual_latents(panel):
    if not panel.has_latents:
        raise OracleUnavailableError("panel has no latent shocks (not synthetic?)")
    a = panel.annual()
    return a


def generate_analyst_forecasts(panel, theta, delta_hat, f_hat_spec, *, forecaster="analyst",
                               private_signal=0.0, private_noise=1.0, seed=None):
    """Diagnostic-expectations forecasts of next year's outcome.

    One value per firm-year, issued identically in each of the 12 months of
    year t for fiscal year t+1.  ``private_signal`` > 0 adds
    ``private_signal * (eps[t+1] + noise)`` so analysts know something the
    public features do not.
    """
    if theta < 0:
        raise ParameterError("theta must be >= 0")
    a = _annual_latents(panel)
    f_hat = FSpec.coerce(f_hat_spec)
    if seed is None:
        seed = panel.provenance.seed if isinstance(panel.provenance, SynthParams) else 0
    realized = realized_from_panel(panel)
    next_eps = {(str(f), int(y)): e for f, y, e in zip(a.firm_id, a.fiscal_year, a.latent_eps)}
    firm_index = {f: k for k, f in enumerate(np.unique(a.firm_id).tolist())}
    rngs = {}
    recs = []
    for fid, fy, x, eps, z in zip(a.firm_id.tolist(), a.fiscal_year.tolist(), a.outcome,
                                  a.latent_eps, a.latent_z):
        target = fy + 1
        if (fid, target) not in realized:
            continue
        value = delta_hat * x + float(f_hat(z)) + theta * delta_hat * eps
        if private_signal:
            rng = rngs.setdefault(fid, firm_rng(seed, firm_index[fid], 1, _salt(forecaster)))
            value += private_signal * (next_eps[(fid, target)] + private_noise * rng.standard_normal())
        for h in HORIZONS:
            my, mm = made_at(target, h)
            recs.append((fid, target, h, my, mm, forecaster, float(value)))
    return ForecastPanel.from_records(recs, realized)


def _salt(name):
    return sum(ord(c) * 31 ** k for k, c in enumerate(name)) % (2 ** 31)


def analytic_overreaction_beta(theta, delta, var_eps, var_y):
    """Slope of next-year forecast error on date-t news: -theta*delta*var_eps/var_y."""
    if not var_y > 0:
        raise DomainError("var_y must be > 0")
    return -theta * delta * var_eps / var_y


def shock_proxy(panel, kind="news", delta=None):
    """Date-t news per firm-year, keyed by t.

    ``news``: x[t] - delta*x[t-1] (= f(z[t-1]) + eps[t]); ``latent_eps``: the
    recorded shock; ``investment``: the panel's investment column.
    """
    a = panel.annual()
    if kind == "investment":
        return FirmYearSeries(a.firm_id, a.fiscal_year, a.investment.copy())
    if kind == "latent_eps":
        _annual_latents(panel)
        return FirmYearSeries(a.firm_id, a.fiscal_year, a.latent_eps.copy())
    if kind != "news":
        raise ParameterError(f"unknown proxy kind {kind!r}")
    if delta is None:
        if not isinstance(panel.provenance, SynthParams):
            raise ParameterError("delta required for non-synthetic panels")
        delta = panel.provenance.delta
    x = a.feature("x")
    xl = a.feature("x_lag")
    return FirmYearSeries(a.firm_id, a.fiscal_year, x - delta * xl)


def mse_decomposition(panel, theta, delta_hat, f_hat_spec):
    """Sample forecast MSE and its four variance components from latents.

    Components: (delta-delta_hat)^2 E[x^2], E[(f-f_hat)^2],
    theta^2 delta_hat^2 E[eps_t^2], E[eps_{t+1}^2].
    """
    a = _annual_latents(panel)
    params = panel.provenance
    if not isinstance(params, SynthParams):
        raise OracleUnavailableError("true delta and f are needed")
    f_hat = FSpec.coerce(f_hat_spec)
    fp = generate_analyst_forecasts(panel, theta, delta_hat, f_hat)
    err = fp.errors("analyst").as_dict()
    rows = {(str(f), int(y)): (x, e, z) for f, y, x, e, z in
            zip(a.firm_id, a.fiscal_year, a.outcome, a.latent_eps, a.latent_z)}
    xs, eps_t, eps_next, fdiff, errs = [], [], [], [], []
    for (fid, target), e in sorted(err.items()):
        x, et, z = rows[(fid, target - 1)]
        xs.append(x)
        eps_t.append(et)
        eps_next.append(rows[(fid, target)][1])
        fdiff.append(float(params.f_spec(z) - f_hat(z)))
        errs.append(e)
    xs, eps_t, eps_next, fdiff, errs = map(np.asarray, (xs, eps_t, eps_next, fdiff, errs))
    terms = {
        "persistence": (params.delta - delta_hat) ** 2 * np.mean(xs ** 2),
        "firm_component": np.mean(fdiff ** 2),
        "overreaction": theta ** 2 * delta_hat ** 2 * np.mean(eps_t ** 2),
        "innovation": np.mean(eps_next ** 2),
    }
    return float(np.mean(errs ** 2)), {k: float(v) for k, v in terms.items()}
