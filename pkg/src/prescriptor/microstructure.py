"""Microstructural state-variable estimators from witness-sample data.

Curvature traces are cross-sectional edge-curvature samples kappa(s) taken at
perimeter sites; the channel-I statistic is the second curvature moment

    mu2 = (1/L) * integral_0^L kappa(s)^2 ds

evaluated by the trapezoid rule with kappa held constant between the end
samples and the perimeter ends. Those trapezoid weights are the same as
giving each site the arclength half-way to its neighbours, so the rule is
exact for piecewise-constant curvature whose breakpoints fall midway between
sites.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .csvio import read_columns
from .errors import DimensionError
from .units import DimVector, Quantity, q_exp

__all__ = [
    "CurvatureTrace",
    "HeightProfile",
    "LossTangentModel",
    "SplitRow",
    "SplitSeries",
    "DiscriminationReport",
    "site_weights",
    "mu2",
    "curvature_moments",
    "mu2_bootstrap",
    "rms_roughness",
    "tan_delta_eff",
    "discriminate",
    "read_curvature_csv",
    "read_profile_csv",
    "read_split_series_csv",
]

PER_M2 = DimVector.of(m=-2)
METRE = DimVector.of(m=1)
AREA = DimVector.of(m=2)
SECOND = DimVector.of(s=1)


def _strictly_increasing(s: np.ndarray, what: str):
    if np.any(np.diff(s) <= 0):
        raise ValueError(f"{what}: arclength s must be strictly increasing")


@dataclass(frozen=True)
class CurvatureTrace:
    s: np.ndarray
    kappa: np.ndarray
    L: float

    def __post_init__(self):
        s = np.asarray(self.s, dtype=float)
        k = np.asarray(self.kappa, dtype=float)
        if s.shape != k.shape or s.ndim != 1:
            raise ValueError("s and kappa must be 1-D arrays of equal length")
        if s.size < 2:
            raise ValueError("curvature trace needs at least 2 samples")
        _strictly_increasing(s, "curvature trace")
        if s[0] < 0 or s[-1] > self.L:
            raise ValueError(f"samples must lie in [0, L={self.L}]")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "kappa", k)

    @classmethod
    def uniform_sites(cls, kappa: Sequence[float], L: float = 1.0) -> CurvatureTrace:
        """Sites at the centres of equal arclength cells spanning [0, L]."""
        n = len(kappa)
        s = (np.arange(n) + 0.5) * (L / n)
        return cls(s, np.asarray(kappa, dtype=float), L)


@dataclass(frozen=True)
class HeightProfile:
    s: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.s, dtype=float)
        h = np.asarray(self.h, dtype=float)
        if s.shape != h.shape or s.ndim != 1:
            raise ValueError("s and h must be 1-D arrays of equal length")
        if s.size >= 2:
            _strictly_increasing(s, "height profile")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "h", h)


def site_weights(s: np.ndarray, start: float, stop: float) -> np.ndarray:
    """Trapezoid weights on ``s`` with constant extension to [start, stop]."""
    s = np.asarray(s, dtype=float)
    mids = 0.5 * (s[1:] + s[:-1])
    edges = np.concatenate(([start], mids, [stop]))
    return np.diff(edges)


def _weighted_mean(values: np.ndarray, weights: np.ndarray) -> float:
    return math.fsum(values * weights) / math.fsum(weights)


def mu2(trace: CurvatureTrace) -> Quantity:
    """Second curvature moment (sigma left at 0; see :func:`mu2_bootstrap`)."""
    w = site_weights(trace.s, 0.0, trace.L)
    return Quantity(math.fsum(w * trace.kappa**2) / trace.L, 0.0, PER_M2)


def curvature_moments(trace: CurvatureTrace, orders: Sequence[int] = (1, 2, 3, 4)) -> dict[int, Quantity]:
    """Arclength-weighted moments <kappa^n>; only n=2 enters any verdict."""
    w = site_weights(trace.s, 0.0, trace.L)
    return {n: Quantity(math.fsum(w * trace.kappa**n) / trace.L, 0.0, DimVector.of(m=-n)) for n in orders}


def mu2_bootstrap(trace: CurvatureTrace, n_resamples: int = 1000, seed: int = 0) -> Quantity:
    """mu2 with sigma from a site-level bootstrap.

    Sites are resampled with replacement together with their arclength
    weights; sigma is the sample standard deviation of the resampled
    statistic. Deterministic for a given ``seed``.
    """
    if n_resamples < 100:
        raise ValueError("n_resamples must be >= 100")
    n = trace.s.size
    if n < 2:
        raise ValueError("bootstrap needs at least 2 sites")
    point = mu2(trace)
    w = site_weights(trace.s, 0.0, trace.L)
    k2 = trace.kappa**2
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, n, size=(n_resamples, n))
    reps = (w[idx] * k2[idx]).sum(axis=1) / w[idx].sum(axis=1)
    return Quantity(point.value, float(np.std(reps, ddof=1)), PER_M2)


def rms_roughness(profile: HeightProfile) -> Quantity:
    """Arclength-weighted RMS of height about its weighted mean."""
    if profile.s.size < 2:
        raise ValueError("height profile needs at least 2 samples")
    w = site_weights(profile.s, profile.s[0], profile.s[-1])
    mean_h = _weighted_mean(profile.h, w)
    var = _weighted_mean((profile.h - mean_h) ** 2, w)
    return Quantity(math.sqrt(var), 0.0, METRE)


# ---------------------------------------------------------------------------
# loss tangent


@dataclass(frozen=True)
class LossTangentModel:
    form: str
    tan_delta0: Quantity
    coeff: Quantity

    def __post_init__(self):
        if self.form not in ("linear", "exponential"):
            raise ValueError(f"form must be 'linear' or 'exponential', got {self.form!r}")
        if not self.tan_delta0.dim.is_dimensionless or not self.tan_delta0.value > 0:
            raise ValueError("tan_delta0 must be a positive dimensionless Quantity")
        if self.coeff.dim != AREA:
            raise DimensionError(f"coefficient must carry m^2, got [{self.coeff.dim}]")


def tan_delta_eff(model: LossTangentModel, mu2_value: Quantity) -> Quantity:
    """Effective loss tangent: linear ``t0 (1 + a mu2)`` or exponential ``t0 exp(b mu2)``."""
    if mu2_value.dim != PER_M2:
        raise DimensionError(f"mu2 must carry m^-2, got [{mu2_value.dim}]")
    if mu2_value.value < 0:
        raise ValueError("mu2 must be non-negative")
    x = model.coeff * mu2_value
    if model.form == "linear":
        return model.tan_delta0 * (x + 1)
    return model.tan_delta0 * q_exp(x)


# ---------------------------------------------------------------------------
# model discrimination


@dataclass(frozen=True)
class SplitRow:
    mu2: Quantity
    r_rms: Quantity
    T1: Quantity
    mu1: Optional[Quantity] = None


@dataclass(frozen=True)
class SplitSeries:
    rows: tuple

    def __post_init__(self):
        rows = tuple(self.rows)
        if len(rows) < 4:
            raise ValueError("split series needs at least 4 rows")
        for r in rows:
            if r.mu2.dim != PER_M2 or r.r_rms.dim != METRE or r.T1.dim != SECOND:
                raise DimensionError("split rows need mu2 [m^-2], r_rms [m], T1 [s]")
        m = np.array([float(r.mu2.value) for r in rows])
        if len(np.unique(m)) < 4:
            warnings.warn("fewer than 4 distinct mu2 values in split series", stacklevel=3)
        if m.min() <= 0 or m.max() / m.min() < 3:
            warnings.warn("mu2 values span less than a factor of 3", stacklevel=3)
        object.__setattr__(self, "rows", rows)


@dataclass(frozen=True)
class DiscriminationReport:
    r2_mu2: float
    r2_rms: float
    r2_mu1: Optional[float]
    delta_r2: float
    ci: tuple
    confidence: float
    verdict: str
    target: str = "1/T1"

    def lines(self) -> list[str]:
        out = [
            f"regression target: {self.target} (rates add linearly across channels)",
            f"R^2(1/T1, mu2)   = {self.r2_mu2:.6f}",
            f"R^2(1/T1, R_RMS) = {self.r2_rms:.6f}",
        ]
        if self.r2_mu1 is not None:
            out.append(f"R^2(1/T1, mu1)   = {self.r2_mu1:.6f} (reported only)")
        out.append(f"delta R^2 = {self.delta_r2:.6f}, {self.confidence:.0%} CI [{self.ci[0]:.6f}, {self.ci[1]:.6f}]")
        out.append(f"verdict: {self.verdict}")
        return out


def _r2(x: np.ndarray, y: np.ndarray) -> float:
    """Coefficient of determination of an OLS fit y ~ a + b x."""
    X = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0:
        return 0.0
    return max(0.0, 1.0 - float(np.sum(resid**2)) / ss_tot)


def _degenerate(x: np.ndarray) -> bool:
    span = np.ptp(x)
    return span == 0 or span <= 1e-12 * np.max(np.abs(x))


def discriminate(series: SplitSeries, confidence: float = 0.95, n_resamples: int = 2000,
                 seed: int = 0) -> DiscriminationReport:
    """Compare R^2 of 1/T1 against mu2 and against R_RMS.

    The verdict uses a percentile bootstrap over rows of
    ``R^2(mu2) - R^2(R_RMS)``: SUPPORTED when the lower bound is above 0,
    FALSIFIED when the upper bound is at or below 0, INDETERMINATE otherwise.
    Resamples with fewer than three distinct rows are redrawn.
    """
    if not 0 < confidence < 1:
        raise ValueError("confidence must lie in (0, 1)")
    rows = series.rows
    y = np.array([1.0 / float(r.T1.value) for r in rows])
    x_mu2 = np.array([float(r.mu2.value) for r in rows])
    x_rms = np.array([float(r.r_rms.value) for r in rows])
    for name, x in (("mu2", x_mu2), ("R_RMS", x_rms)):
        if _degenerate(x):
            raise np.linalg.LinAlgError(f"regressor {name} is constant; R^2 undefined")
    r2_mu2, r2_rms = _r2(x_mu2, y), _r2(x_rms, y)
    r2_mu1 = None
    if all(r.mu1 is not None for r in rows):
        x_mu1 = np.array([float(r.mu1.value) for r in rows])
        r2_mu1 = None if _degenerate(x_mu1) else _r2(x_mu1, y)

    rng = np.random.default_rng(seed)
    n = len(rows)
    deltas = np.empty(n_resamples)
    i = attempts = 0
    while i < n_resamples:
        attempts += 1
        if attempts > 50 * n_resamples:
            raise RuntimeError("bootstrap keeps drawing degenerate resamples")
        idx = rng.integers(0, n, size=n)
        if len(np.unique(idx)) < 3:
            continue
        xm, xr, yy = x_mu2[idx], x_rms[idx], y[idx]
        if _degenerate(xm) or _degenerate(xr):
            continue
        deltas[i] = _r2(xm, yy) - _r2(xr, yy)
        i += 1
    alpha = 1.0 - confidence
    lo, hi = np.quantile(deltas, [alpha / 2, 1 - alpha / 2])
    if lo > 0:
        verdict = "SUPPORTED"
    elif hi <= 0:
        verdict = "FALSIFIED"
    else:
        verdict = "INDETERMINATE"
    return DiscriminationReport(r2_mu2, r2_rms, r2_mu1, r2_mu2 - r2_rms, (float(lo), float(hi)),
                                confidence, verdict)


# ---------------------------------------------------------------------------
# ingestion


def read_curvature_csv(source, L: Optional[float] = None) -> CurvatureTrace:
    cols = read_columns(source, ["s_m", "kappa_per_m"])
    s = cols["s_m"]
    return CurvatureTrace(s, cols["kappa_per_m"], float(s[-1]) if L is None else L)


def read_profile_csv(source) -> HeightProfile:
    cols = read_columns(source, ["s_m", "h_m"])
    return HeightProfile(cols["s_m"], cols["h_m"])


def read_split_series_csv(source) -> SplitSeries:
    header = ["mu2_per_m2", "mu2_sigma", "rrms_m", "rrms_sigma", "T1_s", "T1_sigma"]
    c = read_columns(source, header)
    rows = [
        SplitRow(
            Quantity(float(c["mu2_per_m2"][i]), float(c["mu2_sigma"][i]), PER_M2),
            Quantity(float(c["rrms_m"][i]), float(c["rrms_sigma"][i]), METRE),
            Quantity(float(c["T1_s"][i]), float(c["T1_sigma"][i]), SECOND),
        )
        for i in range(len(c["T1_s"]))
    ]
    return SplitSeries(tuple(rows))

