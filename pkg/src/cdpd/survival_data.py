"""Censored samples, Kaplan-Meier product-limit weights and the joint
(covariate, lifetime) distribution estimator they induce.

The weights computed here drive every downstream estimator: a censored
record carries zero weight, and the mass it would have carried is pushed
onto the uncensored records above it by the product-limit construction.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np


class DataError(ValueError):
    """Invalid or malformed input data."""


@dataclass(frozen=True)
class CensoredSample:
    """Right-censored regression sample (Z, delta, X).

    z[i] is the observed time min(Y_i, C_i), delta[i] is 1 when the event
    was observed and 0 when censored, x[i] is the covariate row.
    """

    z: np.ndarray
    delta: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        delta = np.asarray(self.delta, dtype=float)
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        if x.shape[0] != z.shape[0] and x.shape[1] == z.shape[0]:
            x = x.T
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "x", x)
        if z.ndim != 1 or z.size < 1:
            raise DataError("need at least one observation")
        if not np.all(np.isfinite(z)) or np.any(z < 0):
            raise DataError("observed times must be finite and nonnegative")
        if delta.shape != z.shape or not np.all(np.isin(delta, (0.0, 1.0))):
            raise DataError("censoring indicators must be 0 or 1, one per time")
        if x.shape != (z.size, x.shape[1]) or x.shape[1] < 1:
            raise DataError("covariate matrix must have one row per observation")
        if not np.all(np.isfinite(x)):
            raise DataError("covariates must be finite")

    @property
    def n(self) -> int:
        return self.z.size

    @property
    def p(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True)
class SortedSample:
    """Sample reordered by increasing observed time with concomitants.

    Ties in z are broken deterministically: uncensored before censored,
    then by original index, so the product-limit formulas below are
    well defined in the presence of ties.
    """

    order: np.ndarray
    z_sorted: np.ndarray
    delta_concomitant: np.ndarray
    x_concomitant: np.ndarray

    @property
    def n(self) -> int:
        return self.z_sorted.size

    @property
    def p(self) -> int:
        return self.x_concomitant.shape[1]


@dataclass(frozen=True)
class KmWeights:
    """Product-limit jump weights aligned to the sorted order."""

    w: np.ndarray
    total: float = field(init=False)

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "total", float(w.sum()))
        if np.any(w < 0):
            raise DataError("weights must be nonnegative")
        if self.total > 1 + 1e-12:
            raise DataError("weights must sum to at most one")


def sort_sample(sample: CensoredSample) -> SortedSample:
    """Order a sample by observed time, events before censorings at ties."""
    idx = np.arange(sample.n)
    order = np.lexsort((idx, 1 - sample.delta, sample.z))
    return SortedSample(
        order=order,
        z_sorted=sample.z[order],
        delta_concomitant=sample.delta[order],
        x_concomitant=sample.x[order],
    )


def km_weights(s: SortedSample) -> KmWeights:
    """Kaplan-Meier jump weights of the joint distribution estimator.

    In sorted order (1-based i),

        w_i = delta_i / (n - i + 1) * prod_{j<i} ((n - j) / (n - j + 1))**delta_j.

    Censored records get weight zero; with no censoring every weight is 1/n.
    """
    n = s.n
    i = np.arange(1, n + 1)
    # prefix product over j < i in log space to avoid underflow at large n;
    # the j = n factor (n - j = 0) never enters a prefix
    log_prefix = np.concatenate(
        ([0.0], np.cumsum(s.delta_concomitant[:-1] * np.log((n - i[:-1]) / (n - i[:-1] + 1.0))))
    )
    w = s.delta_concomitant / (n - i + 1.0) * np.exp(log_prefix)
    return KmWeights(w=w)


def stute_cdf(s: SortedSample, w: KmWeights, x0, y0: float) -> float:
    """Joint distribution estimate: sum of weights with X <= x0 and Z <= y0."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    keep = (s.z_sorted <= y0) & np.all(s.x_concomitant <= x0, axis=1)
    return float(w.w[keep].sum())


class StepSurvival:
    """Right-continuous nonincreasing product-limit survival curve."""

    def __init__(self, times: np.ndarray, values: np.ndarray):
        self.times = times
        self.values = values

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="right")
        out = np.where(idx == 0, 1.0, self.values[np.maximum(idx - 1, 0)])
        return out if out.ndim else float(out)


def marginal_km_survival(s: SortedSample, which: str = "event") -> StepSurvival:
    """Kaplan-Meier survival curve of the event or the censoring time.

    For ``which="censoring"`` the roles of event and censoring are swapped
    (delta replaced by 1 - delta).
    """
    if which not in ("event", "censoring"):
        raise ValueError("which must be 'event' or 'censoring'")
    d = s.delta_concomitant if which == "event" else 1.0 - s.delta_concomitant
    n = s.n
    i = np.arange(1, n + 1)
    surv = np.cumprod(1.0 - d / (n - i + 1.0))
    return StepSurvival(times=s.z_sorted.copy(), values=surv)


def load_csv(
    path,
    time_col: str,
    status_col: str,
    covariate_cols: list[str],
    intercept: bool = False,
) -> CensoredSample:
    """Read a censored sample from a headered CSV file.

    Rows with missing or malformed cells are rejected with an error naming
    the (1-based, header excluded) row. Status must be encoded 1=event,
    0=censored; times must be positive.
    """
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{path}: empty file")
        needed = [time_col, status_col, *covariate_cols]
        missing = [c for c in needed if c not in reader.fieldnames]
        if missing:
            raise DataError(f"{path}: missing columns {missing}")
        z, delta, rows = [], [], []
        for lineno, rec in enumerate(reader, start=1):
            cells = [rec.get(c, "") for c in needed]
            if any(c is None or str(c).strip() in ("", "NA", "NaN", "nan") for c in cells):
                raise DataError(f"{path}: row {lineno}: missing value")
            try:
                vals = [float(c) for c in cells]
            except ValueError as exc:
                raise DataError(f"{path}: row {lineno}: malformed numeric cell ({exc})") from None
            t, st, cov = vals[0], vals[1], vals[2:]
            if st not in (0.0, 1.0):
                raise DataError(f"{path}: row {lineno}: status must be 0 or 1, got {st!r}")
            if not t > 0:
                raise DataError(f"{path}: row {lineno}: time must be positive, got {t!r}")
            z.append(t)
            delta.append(st)
            rows.append(cov)
    if not z:
        raise DataError(f"{path}: no data rows")
    x = np.asarray(rows, dtype=float)
    if intercept:
        x = np.column_stack([np.ones(len(z)), x])
    return CensoredSample(z=np.asarray(z), delta=np.asarray(delta), x=x)
