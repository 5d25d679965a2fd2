"""Panel containers and their CSV formats.

Everything is stored column-wise in numpy arrays; the per-row record types
(``PanelObservation``, ``ForecastRecord``) are produced on demand.
"""

from dataclasses import dataclass, field, replace
import csv
import io
import math
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from .errors import AlignmentError, DataError, ShapeError

FORECASTERS = ("analyst", "gbrt", "linear")
FY_END_MONTH = 12


class PanelObservation(NamedTuple):
    firm_id: str
    fiscal_year: int
    month: int
    outcome: float
    investment: float
    features: tuple
    latent_eps: Optional[float] = None
    latent_z: Optional[float] = None


def _fmt(v):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return repr(float(v))


def _parse(s):
    return float("nan") if s == "" else float(s)


@dataclass(frozen=True, eq=False)
class PanelDataset:
    """Long-format firm x fiscal-year x month panel, sorted by that key."""

    firm_id: np.ndarray
    fiscal_year: np.ndarray
    month: np.ndarray
    outcome: np.ndarray
    investment: np.ndarray
    latent_eps: np.ndarray
    latent_z: np.ndarray
    features: np.ndarray
    feature_names: tuple
    provenance: object = None

    def __post_init__(self):
        n = len(self.firm_id)
        for name in ("fiscal_year", "month", "outcome", "investment", "latent_eps", "latent_z"):
            if len(getattr(self, name)) != n:
                raise ShapeError(f"column {name} has length {len(getattr(self, name))}, expected {n}")
        if self.features.shape != (n, len(self.feature_names)):
            raise ShapeError(
                f"features shape {self.features.shape} does not match "
                f"{n} rows x {len(self.feature_names)} names"
            )
        if n and not np.isfinite(self.outcome).all():
            raise DataError("outcome has missing values")
        if n and ((self.month < 1) | (self.month > 12)).any():
            raise DataError("month outside 1..12")
        key = np.lexsort((self.month, self.fiscal_year, self.firm_id))
        if not np.array_equal(key, np.arange(n)):
            raise DataError("panel rows must be sorted by (firm_id, fiscal_year, month)")
        if n > 1:
            same = (
                (self.firm_id[1:] == self.firm_id[:-1])
                & (self.fiscal_year[1:] == self.fiscal_year[:-1])
                & (self.month[1:] == self.month[:-1])
            )
            if same.any():
                raise DataError("duplicate (firm_id, fiscal_year, month) rows")

    @property
    def n_obs(self):
        return len(self.firm_id)

    @property
    def has_latents(self):
        return bool(self.n_obs) and np.isfinite(self.latent_eps).all()

    @property
    def firms(self):
        return np.unique(self.firm_id)

    @property
    def years(self):
        return np.unique(self.fiscal_year)

    def observations(self):
        for i in range(self.n_obs):
            eps = self.latent_eps[i]
            z = self.latent_z[i]
            yield PanelObservation(
                str(self.firm_id[i]),
                int(self.fiscal_year[i]),
                int(self.month[i]),
                float(self.outcome[i]),
                float(self.investment[i]),
                tuple(float(v) for v in self.features[i]),
                None if math.isnan(eps) else float(eps),
                None if math.isnan(z) else float(z),
            )

    def feature(self, name):
        return self.features[:, self.feature_names.index(name)]

    def select(self, mask):
        mask = np.asarray(mask)
        return replace(
            self,
            firm_id=self.firm_id[mask],
            fiscal_year=self.fiscal_year[mask],
            month=self.month[mask],
            outcome=self.outcome[mask],
            investment=self.investment[mask],
            latent_eps=self.latent_eps[mask],
            latent_z=self.latent_z[mask],
            features=self.features[mask],
        )

    def with_feature(self, name, values):
        values = np.asarray(values, dtype=float).reshape(-1, 1)
        if name in self.feature_names:
            raise ShapeError(f"feature {name!r} already present")
        return replace(
            self,
            features=np.hstack([self.features, values]),
            feature_names=self.feature_names + (name,),
        )

    def without_features(self, names):
        keep = [i for i, n in enumerate(self.feature_names) if n not in set(names)]
        return replace(
            self,
            features=self.features[:, keep],
            feature_names=tuple(self.feature_names[i] for i in keep),
        )

    def annual(self, month=FY_END_MONTH):
        """One row per firm-year (the given month)."""
        return self.select(self.month == month)

    def annual_series(self, column, month=FY_END_MONTH):
        a = self.annual(month)
        values = a.feature(column) if column in a.feature_names else getattr(a, column)
        return FirmYearSeries(a.firm_id, a.fiscal_year, np.asarray(values, dtype=float))

    # -- CSV ---------------------------------------------------------------

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(
            ["firm_id", "fiscal_year", "month", "outcome", "investment", "latent_eps", "latent_z"]
            + [f"feat_{j}" for j in range(len(self.feature_names))]
        )
        for i in range(self.n_obs):
            w.writerow(
                [self.firm_id[i], int(self.fiscal_year[i]), int(self.month[i]),
                 _fmt(self.outcome[i]), _fmt(self.investment[i]),
                 _fmt(self.latent_eps[i]), _fmt(self.latent_z[i])]
                + [_fmt(v) for v in self.features[i]]
            )
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    @classmethod
    def from_csv(cls, path_or_text, feature_names=None):
        p = Path(path_or_text) if not str(path_or_text).lstrip().startswith("firm_id") else None
        text = p.read_text(encoding="utf-8") if p is not None else str(path_or_text)
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], rows[1:]
        fixed = ["firm_id", "fiscal_year", "month", "outcome", "investment", "latent_eps", "latent_z"]
        if header[:7] != fixed:
            raise DataError(f"unexpected panel header {header[:7]}")
        k = len(header) - 7
        names = tuple(feature_names) if feature_names else tuple(header[7:])
        if len(names) != k:
            raise ShapeError("feature_names length does not match CSV columns")
        cols = list(zip(*body)) if body else [()] * len(header)
        return cls(
            firm_id=np.asarray(cols[0], dtype=str),
            fiscal_year=np.asarray(cols[1], dtype=np.int64),
            month=np.asarray(cols[2], dtype=np.int64),
            outcome=np.asarray([_parse(s) for s in cols[3]], dtype=float),
            investment=np.asarray([_parse(s) for s in cols[4]], dtype=float),
            latent_eps=np.asarray([_parse(s) for s in cols[5]], dtype=float),
            latent_z=np.asarray([_parse(s) for s in cols[6]], dtype=float),
            features=np.asarray([[_parse(s) for s in r[7:]] for r in body], dtype=float).reshape(len(body), k),
            feature_names=names,
            provenance=str(p) if p is not None else "csv",
        )


@dataclass(frozen=True, eq=False)
class FirmYearSeries:
    """One value per (firm, year); the year convention is the caller's."""

    firm_id: np.ndarray
    year: np.ndarray
    value: np.ndarray

    def __post_init__(self):
        if not (len(self.firm_id) == len(self.year) == len(self.value)):
            raise ShapeError("firm_id, year and value must have equal length")

    def __len__(self):
        return len(self.value)

    def as_dict(self):
        return {(str(f), int(y)): float(v) for f, y, v in zip(self.firm_id, self.year, self.value)}

    @classmethod
    def from_dict(cls, d):
        keys = sorted(d)
        return cls(
            np.asarray([k[0] for k in keys], dtype=str),
            np.asarray([k[1] for k in keys], dtype=np.int64),
            np.asarray([d[k] for k in keys], dtype=float),
        )

    def map(self, fn):
        return FirmYearSeries(self.firm_id, self.year, fn(self.value))

    def shift_years(self, k):
        return FirmYearSeries(self.firm_id, self.year + k, self.value)


def align(*series):
    """Intersect several FirmYearSeries on (firm, year).

    Returns ``(firm_id, year, [values...])`` sorted by key.
    """
    if not series:
        raise AlignmentError("nothing to align")
    dicts = [s.as_dict() for s in series]
    common = set(dicts[0])
    for d in dicts[1:]:
        common &= set(d)
    keys = sorted(common)
    firms = np.asarray([k[0] for k in keys], dtype=str)
    years = np.asarray([k[1] for k in keys], dtype=np.int64)
    return firms, years, [np.asarray([d[k] for k in keys], dtype=float) for d in dicts]


class ForecastRecord(NamedTuple):
    firm_id: str
    fiscal_year: int
    horizon_months: int
    made_year: int
    made_month: int
    forecaster: str
    value: float


def made_at(fiscal_year, horizon, fy_end_month=FY_END_MONTH):
    """(year, month) at which a forecast with this horizon is issued."""
    idx = fiscal_year * 12 + (fy_end_month - 1) - horizon
    return idx // 12, idx % 12 + 1


@dataclass(frozen=True, eq=False)
class ForecastPanel:
    """Monthly forecast records plus realized outcomes.

    ``consensus`` averages each firm-year's monthly records per forecaster.
    With one synthetic analyst per type the cross-analyst median is the
    identity, so the consensus is the plain 12-month mean; real-data
    adapters would take the per-month median before this step.
    """

    firm_id: np.ndarray
    fiscal_year: np.ndarray
    horizon: np.ndarray
    made_year: np.ndarray
    made_month: np.ndarray
    forecaster: np.ndarray
    value: np.ndarray
    realized: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.value)
        for name in ("firm_id", "fiscal_year", "horizon", "made_year", "made_month", "forecaster"):
            if len(getattr(self, name)) != n:
                raise ShapeError(f"column {name} length mismatch")
        if n:
            end = self.fiscal_year * 12 + FY_END_MONTH - 1
            start = self.made_year * 12 + self.made_month - 1
            if not np.array_equal(end - start, self.horizon):
                raise DataError("forecast_made_at + horizon must equal the fiscal-year-end month")

    @classmethod
    def from_records(cls, records, realized=None):
        records = list(records)
        cols = list(zip(*records)) if records else [()] * 7
        return cls(
            firm_id=np.asarray(cols[0], dtype=str),
            fiscal_year=np.asarray(cols[1], dtype=np.int64),
            horizon=np.asarray(cols[2], dtype=np.int64),
            made_year=np.asarray(cols[3], dtype=np.int64),
            made_month=np.asarray(cols[4], dtype=np.int64),
            forecaster=np.asarray(cols[5], dtype=str),
            value=np.asarray(cols[6], dtype=float),
            realized=dict(realized or {}),
        )

    @property
    def n_records(self):
        return len(self.value)

    def records(self):
        for i in range(self.n_records):
            yield ForecastRecord(
                str(self.firm_id[i]), int(self.fiscal_year[i]), int(self.horizon[i]),
                int(self.made_year[i]), int(self.made_month[i]), str(self.forecaster[i]),
                float(self.value[i]),
            )

    @property
    def forecasters(self):
        return tuple(sorted(set(self.forecaster.tolist())))

    def select(self, mask):
        return replace(
            self,
            firm_id=self.firm_id[mask], fiscal_year=self.fiscal_year[mask],
            horizon=self.horizon[mask], made_year=self.made_year[mask],
            made_month=self.made_month[mask], forecaster=self.forecaster[mask],
            value=self.value[mask],
        )

    def only(self, forecaster):
        return self.select(self.forecaster == forecaster)

    def relabel(self, forecaster):
        return replace(self, forecaster=np.full(self.n_records, forecaster, dtype=object).astype(str))

    def scaled(self, c):
        return replace(self, value=self.value * c)

    def merge(self, *others):
        parts = (self,) + others
        realized = {}
        for p in parts:
            realized.update(p.realized)
        merged = ForecastPanel(
            firm_id=np.concatenate([p.firm_id for p in parts]),
            fiscal_year=np.concatenate([p.fiscal_year for p in parts]),
            horizon=np.concatenate([p.horizon for p in parts]),
            made_year=np.concatenate([p.made_year for p in parts]),
            made_month=np.concatenate([p.made_month for p in parts]),
            forecaster=np.concatenate([p.forecaster for p in parts]),
            value=np.concatenate([p.value for p in parts]),
            realized=realized,
        )
        return merged.sorted()

    def sorted(self):
        o = np.lexsort((self.horizon, self.forecaster, self.fiscal_year, self.firm_id))
        return self.select(o)

    def consensus(self, forecaster=None):
        """{(firm_id, fiscal_year, forecaster): mean of monthly records}."""
        fp = self if forecaster is None else self.only(forecaster)
        out = {}
        if not fp.n_records:
            return out
        o = np.lexsort((fp.horizon, fp.forecaster, fp.fiscal_year, fp.firm_id))
        keys = list(zip(fp.firm_id[o].tolist(), fp.fiscal_year[o].tolist(), fp.forecaster[o].tolist()))
        vals = fp.value[o]
        start = 0
        for i in range(1, len(keys) + 1):
            if i == len(keys) or keys[i] != keys[start]:
                out[keys[start]] = math.fsum(vals[start:i]) / (i - start)
                start = i
        return out

    def errors(self, forecaster):
        """Forecast error realized - consensus, keyed by target fiscal year."""
        d = {}
        for (firm, fy, _), c in self.consensus(forecaster).items():
            r = self.realized.get((firm, fy))
            if r is not None:
                d[(firm, fy)] = r - c
        return FirmYearSeries.from_dict(d)

    def consensus_series(self, forecaster):
        return FirmYearSeries.from_dict({(f, y): v for (f, y, _), v in self.consensus(forecaster).items()})

    # -- CSV ---------------------------------------------------------------

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["firm_id", "fiscal_year", "horizon_months", "made_year", "made_month", "forecaster", "value"])
        for r in self.sorted().records():
            w.writerow([r.firm_id, r.fiscal_year, r.horizon_months, r.made_year, r.made_month,
                        r.forecaster, repr(r.value)])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    def consensus_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["firm_id", "fiscal_year", "forecaster", "consensus", "realized", "error"])
        for (firm, fy, name), c in sorted(self.consensus().items()):
            r = self.realized.get((firm, fy))
            w.writerow([firm, fy, name, repr(c), _fmt(r), "" if r is None else repr(r - c)])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    @classmethod
    def from_csv(cls, path_or_text, realized=None):
        s = str(path_or_text)
        text = s if s.lstrip().startswith("firm_id") else Path(s).read_text(encoding="utf-8")
        rows = list(csv.reader(io.StringIO(text)))
        if rows[0] != ["firm_id", "fiscal_year", "horizon_months", "made_year", "made_month", "forecaster", "value"]:
            raise DataError(f"unexpected forecast header {rows[0]}")
        recs = [ForecastRecord(r[0], int(r[1]), int(r[2]), int(r[3]), int(r[4]), r[5], float(r[6]))
                for r in rows[1:]]
        return cls.from_records(recs, realized)


def realized_from_panel(panel, month=FY_END_MONTH):
    a = panel.annual(month)
    return {(str(f), int(y)): float(v) for f, y, v in zip(a.firm_id, a.fiscal_year, a.outcome)}
