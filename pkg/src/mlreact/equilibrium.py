"""Repeated static equity-issuance model with diagnostic and unbiased analysts.

A single firm issues ``xbar`` shares of a claim on ``A * z``.  Investors
hold a normal prior on ``z``, see one analyst signal each (a share
``lambda`` of signals is unbiased; the rest carry a bias
``theta*delta*eps_prev + f_tilde(A)``) and learn from the price.  The
firm picks issuance against quadratic-plus-linear adjustment costs.
"""

from dataclasses import asdict, dataclass, field, replace
import csv
import io
import json
import math

import numpy as np

from .errors import ConfigError, DomainError, ParameterError

BRANCH_UP = "up"
BRANCH_DOWN = "down"
BRANCH_INACTION = "inaction"


@dataclass(frozen=True)
class StepRule:
    """f_tilde = high if A > mu_A else low."""

    high: float = 500.0
    low: float = 100.0
    mu_A: float = 1.0

    def __call__(self, A):
        return self.high if A > self.mu_A else self.low

    def to_dict(self):
        return {"kind": "step", "high": self.high, "low": self.low, "mu_A": self.mu_A}


@dataclass(frozen=True)
class ConstantRule:
    value: float = 0.0
    mu_A: float = 1.0

    def __call__(self, A):
        return self.value

    def to_dict(self):
        return {"kind": "constant", "value": self.value, "mu_A": self.mu_A}


def rule_from_dict(d):
    d = dict(d)
    kind = d.pop("kind", "step")
    cls = {"step": StepRule, "constant": ConstantRule}.get(kind)
    if cls is None:
        raise ConfigError(f"unknown f_tilde rule {kind!r}")
    allowed = set(cls.__dataclass_fields__)
    extra = set(d) - allowed
    if extra:
        raise ConfigError(f"unknown f_tilde_rule keys {sorted(extra)}")
    return cls(**{k: float(v) for k, v in d.items()})


def default_A_grid(lo=0.9, hi=1.1, step=0.005):
    n = int(round((hi - lo) / step))
    return tuple(round(lo + k * step, 10) for k in range(n + 1))


def check_f_tilde_rule(rule, grid):
    """|f_tilde| must be non-decreasing in A - mu_A and no larger for
    A <= mu_A than for A > mu_A."""
    grid = sorted(grid)
    vals = [abs(rule(a)) for a in grid]
    if any(b < a for a, b in zip(vals, vals[1:])):
        return False
    lo = [v for a, v in zip(grid, vals) if a <= rule.mu_A]
    hi = [v for a, v in zip(grid, vals) if a > rule.mu_A]
    return not (lo and hi and max(lo) > min(hi))


_JSON_NAMES = {"lam": "lambda"}


@dataclass(frozen=True)
class EquilibriumParams:
    """Defaults are the numerical-example calibration."""

    rho_z: float = 81.16
    rho_x: float = 4.0
    rho_eta: float = 2.78
    alpha: float = 0.1
    mu_z: float = 15.0
    phi0: float = 0.0
    phi1: float = 0.091
    phi2: float = 0.0004
    r: float = 1.01
    delta: float = 0.785
    theta: float = 0.991
    lam: float = 0.0
    delta_A: float = 0.9
    sigma_A: float = 0.02
    f_tilde_rule: object = field(default_factory=StepRule)
    check_grid: tuple = field(default_factory=default_A_grid)

    def __post_init__(self):
        if not (self.rho_z > 0 and self.rho_eta > 0):
            raise ParameterError("rho_z and rho_eta must be > 0")
        if self.rho_x < 0:
            raise ParameterError("rho_x must be >= 0")
        if not self.alpha > 0:
            raise ParameterError("alpha must be > 0")
        if not self.r > 0:
            raise ParameterError("r must be > 0")
        if min(self.phi0, self.phi1, self.phi2) < 0:
            raise ParameterError("issuance cost parameters must be >= 0")
        if not 0.0 <= self.lam <= 1.0:
            raise ParameterError("lambda must lie in [0, 1]")
        if self.sigma_A < 0:
            raise ParameterError("sigma_A must be >= 0")
        if not check_f_tilde_rule(self.f_tilde_rule, self.check_grid):
            raise ParameterError("f_tilde rule must have |f_tilde| non-decreasing in A - mu_A and smaller for A <= mu_A on the evaluation grid")

    def to_dict(self):
        d = {}
        for k in self.__dataclass_fields__:
            if k == "check_grid":
                continue
            v = getattr(self, k)
            d[_JSON_NAMES.get(k, k)] = v.to_dict() if k == "f_tilde_rule" else v
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d):
        inv = {v: k for k, v in _JSON_NAMES.items()}
        kwargs = {}
        allowed = set(cls.__dataclass_fields__) - {"check_grid"}
        for k, v in d.items():
            name = inv.get(k, k)
            if name not in allowed:
                raise ConfigError(f"unknown equilibrium parameter {k!r}")
            kwargs[name] = rule_from_dict(v) if name == "f_tilde_rule" else float(v)
        return cls(**kwargs)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class EquilibriumState:
    A: float
    eps_prev: float
    xbar_prev: float

    def __post_init__(self):
        if not self.A > 0:
            raise DomainError("A must be > 0")
        if self.xbar_prev < 0:
            raise DomainError("xbar_prev must be >= 0")


@dataclass(frozen=True)
class EquilibriumOutcome:
    rho_p: float
    rho_total: float
    gamma_term: float
    xbar: float
    branch: str
    phi1_tilde: float
    d_xbar_d_eps: float
    expected_price: float
    f_tilde: float

    def to_dict(self):
        return asdict(self)


def price_signal_precision(p, A):
    """rho_p = rho_eta^2 * rho_x / (alpha^2 * A^2)."""
    if not A > 0:
        raise DomainError("A must be > 0")
    return p.rho_eta ** 2 * p.rho_x / (p.alpha ** 2 * A ** 2)


def posterior_belief(p, prior_mean, signal, price_signal, A):
    rho_p = price_signal_precision(p, A)
    rho = p.rho_z + p.rho_eta + rho_p
    w = (p.rho_z / rho, p.rho_eta / rho, rho_p / rho)
    mean = w[0] * prior_mean + w[1] * signal + w[2] * price_signal
    return mean, rho


def investor_demand(p, mu_j, rho_t, price, A):
    """q = (A * rho^-1 * rho * mu - p*r) / (alpha * A^2 * rho^-1)."""
    if not A > 0:
        raise DomainError("A must be > 0")
    inv = 1.0 / rho_t
    return (A * mu_j - price * p.r) / (p.alpha * A * A * inv)


def _pieces(p, s, prior_mean=None, lam=None):
    A = s.A
    mu = p.mu_z if prior_mean is None else prior_mean
    lam = p.lam if lam is None else lam
    rho_p = price_signal_precision(p, A)
    rho = p.rho_z + p.rho_eta + rho_p
    f = p.f_tilde_rule(A)
    bias = p.theta * p.delta * s.eps_prev + f
    gamma = p.rho_z * mu + p.rho_eta * (1.0 - lam) * bias
    k = A / (rho * p.r)  # A * rho^-1 / r
    numer_core = (p.rho_z + p.rho_eta + rho_p) * mu + p.rho_eta * (1.0 - lam) * bias
    denom = 2.0 * p.alpha * A * A / (rho * p.r) + p.phi2
    return rho_p, rho, f, gamma, k, numer_core, denom, mu


def expected_price(p, s, xbar, prior_mean=None):
    """E[p] before noise supply and z are drawn (x_t = 0, z = prior mean)."""
    rho_p, rho, _, gamma, k, _, _, mu = _pieces(p, s, prior_mean)
    return k * (gamma - p.alpha * s.A * xbar + (p.rho_eta + rho_p) * mu)


def _net_revenue(p, s, xbar, prior_mean):
    d = xbar - s.xbar_prev
    cost = (p.phi0 if d != 0 else 0.0) + p.phi1 * abs(d) + 0.5 * p.phi2 * d * d
    return xbar * expected_price(p, s, xbar, prior_mean) - cost


def equity_issuance(p, s, prior_mean=None):
    """Optimal issuance.

    The linear cost's sign depends on the direction of adjustment, so the
    first-order condition is solved for both signs; a branch is kept when
    its solution moves in the assumed direction.  If neither does, issuance
    stays at ``xbar_prev``.  A positive fixed cost ``phi0`` also forces
    inaction unless moving gains more than ``phi0``.
    """
    rho_p, rho, f, gamma, k, numer_core, denom, mu = _pieces(p, s, prior_mean)
    base = k * numer_core + p.phi2 * s.xbar_prev
    x_up = (base - p.phi1) / denom
    x_down = (base + p.phi1) / denom
    cands = []
    if x_up - s.xbar_prev > 0:
        cands.append((BRANCH_UP, p.phi1, x_up))
    if x_down - s.xbar_prev < 0:
        cands.append((BRANCH_DOWN, -p.phi1, x_down))
    if len(cands) == 2:  # cannot happen with phi1 >= 0; keep the cheaper move
        cands.sort(key=lambda c: p.phi1 * abs(c[2] - s.xbar_prev) + 0.5 * p.phi2 * (c[2] - s.xbar_prev) ** 2)
    if cands:
        branch, phi1_t, xbar = cands[0]
        if p.phi0 > 0 and not (
            _net_revenue(p, s, xbar, mu) - _net_revenue(p, s, s.xbar_prev, mu) > 0
        ):
            cands = []
    if not cands:
        branch, phi1_t, xbar = BRANCH_INACTION, 0.0, float(s.xbar_prev)
        dx = 0.0
    else:
        dx = k * p.rho_eta * (1.0 - p.lam) * p.theta * p.delta / denom
    return EquilibriumOutcome(
        rho_p=rho_p,
        rho_total=rho,
        gamma_term=gamma,
        xbar=float(xbar),
        branch=branch,
        phi1_tilde=phi1_t,
        d_xbar_d_eps=dx,
        expected_price=expected_price(p, s, xbar, mu),
        f_tilde=f,
    )


def overreaction_sensitivity(p, s, prior_mean=None):
    """(d xbar / d eps_prev, d^2 xbar / d eps_prev d lambda) on an interior branch."""
    out = equity_issuance(p, s, prior_mean)
    if out.branch == BRANCH_INACTION:
        raise DomainError("sensitivities are undefined at the inaction boundary")
    _, _, _, _, k, _, denom, _ = _pieces(p, s, prior_mean)
    d1 = k * p.rho_eta * (1.0 - p.lam) * p.theta * p.delta / denom
    d2 = -k * p.rho_eta * p.theta * p.delta / denom
    return d1, d2


def closed_form_no_cost(p, s, prior_mean=None):
    """Issuance without adjustment costs: numerator / (2 alpha A)."""
    _, _, _, _, _, numer_core, _, _ = _pieces(p, s, prior_mean)
    return numer_core / (2.0 * p.alpha * s.A)


def market_price(p, s, xbar, z_realized, noise_supply, prior_mean=None):
    """Equilibrium price given issuance, the true z and the noise supply.

    The price signal is z + e with e = -A*alpha/rho_eta * x.
    """
    rho_p, rho, _, gamma, k, _, _, _ = _pieces(p, s, prior_mean)
    e = -s.A * p.alpha / p.rho_eta * noise_supply
    return k * (gamma - p.alpha * s.A * xbar + (p.rho_eta + rho_p) * (z_realized + e))


def sample_A_path(p, n, seed=0, log_A0=0.0):
    """log A_t = delta_A log A_{t-1} + N(0, sigma_A^2)."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    shocks = p.sigma_A * rng.standard_normal(n)
    out = np.empty(n)
    la = log_A0
    for t in range(n):
        la = p.delta_A * la + shocks[t]
        out[t] = math.exp(la)
    return out


@dataclass(frozen=True)
class CurveRow:
    lam: float
    A: float
    xbar: float
    branch: str
    d_xbar_d_eps: float


def run_numerical_example(p=None, A_grid=None, lambdas=(0.0, 0.9), eps_prev=10.0, xbar_prev=1000.0):
    """Issuance over an A grid for each lambda, sorted by (lambda, A)."""
    p = p or EquilibriumParams()
    A_grid = default_A_grid() if A_grid is None else tuple(A_grid)
    if not A_grid or not lambdas:
        raise ParameterError("grids must be non-empty")
    rows = []
    for lam in sorted(lambdas):
        q = replace(p, lam=float(lam))
        for A in sorted(A_grid):
            out = equity_issuance(q, EquilibriumState(float(A), eps_prev, xbar_prev))
            rows.append(CurveRow(float(lam), float(A), out.xbar, out.branch, out.d_xbar_d_eps))
    return rows


def curve_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["lambda", "A", "xbar", "branch", "d_xbar_d_eps"])
    for r in rows:
        w.writerow([repr(r.lam), repr(r.A), repr(r.xbar), r.branch, repr(r.d_xbar_d_eps)])
    return buf.getvalue()


def curve_shape(rows, mu_A=1.0):
    """Shape diagnostics per lambda: monotonicity on each side of mu_A and
    the jump across it; plus whether higher lambda lies strictly below."""
    by_lam = {}
    for r in rows:
        by_lam.setdefault(r.lam, []).append(r)
    report = {}
    for lam, rs in sorted(by_lam.items()):
        rs = sorted(rs, key=lambda r: r.A)
        lo = [r.xbar for r in rs if r.A <= mu_A]
        hi = [r.xbar for r in rs if r.A > mu_A]
        steps_lo = np.diff(lo) if len(lo) > 1 else np.empty(0)
        steps_hi = np.diff(hi) if len(hi) > 1 else np.empty(0)
        jump = hi[0] - lo[-1] if lo and hi else float("nan")
        report[lam] = {
            "decreasing_below": bool(np.all(steps_lo < 0)),
            "decreasing_above": bool(np.all(steps_hi < 0)),
            "max_step_below": float(steps_lo.max()) if steps_lo.size else float("nan"),
            "max_step_above": float(steps_hi.max()) if steps_hi.size else float("nan"),
            "jump": float(jump),
            "xbar_min": min(r.xbar for r in rs),
            "xbar_max": max(r.xbar for r in rs),
        }
    lams = sorted(by_lam)
    below = True
    for a, b in zip(lams, lams[1:]):
        xa = {r.A: r.xbar for r in by_lam[a]}
        xb = {r.A: r.xbar for r in by_lam[b]}
        below &= all(xb[A] < xa[A] for A in xa if A in xb)
    return report, below
