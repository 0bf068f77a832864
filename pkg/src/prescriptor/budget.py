"""Inverse design: coherence budgets, back-calculated rho limits and geometric sensitivities.

A target T1 fixes the total allowable rate ``1/T1``. Allocation fractions
split it across channels (exactly, with ``Fraction`` arithmetic) and each
channel's allowance is turned into an upper bound on its state variable,
``rho_limit = O_allowance / (C * G)``.

Channels whose observable is a dimensionless ``Q^-1`` (I, III, V) bridge from
rate to observable through the mode angular frequency, ``Q^-1 = Gamma/omega``.
Channel II's observable is a flux-noise amplitude with no rate bridge, so its
observable allowance must be stated directly.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from statistics import NormalDist
from typing import Mapping, Optional

import numpy as np

from .channels import CHANNELS, CLOSURE_TABLE, check_closure, get_channel, resolve_channels
from .csvio import read_columns, write_table
from .errors import DimensionError, SchemaError
from .units import DimVector, Quantity, format_dim, parse_amount, parse_quantity, parse_unit, q

__all__ = [
    "PRESETS",
    "budget_channel",
    "DEAD_BAND",
    "ChannelCoupling",
    "BudgetSpec",
    "BudgetResult",
    "FeasibilityRow",
    "FeasibilityReport",
    "SensitivitySweep",
    "SensitivityResult",
    "ConflictMatrix",
    "total_rate",
    "allowances",
    "rho_limit",
    "plan",
    "feasibility",
    "sensitivity",
    "conflict_matrix",
    "load_budget",
    "budget_csv",
    "read_measured_csv",
    "read_sweeps_csv",
    "sensitivity_csv",
]

RATE = DimVector.of(s=-1)
TIME = DimVector.of(s=1)

# Illustrative allocation for a 1 ms transmon; V-Phonon carries the phonon plus residual margin.
PRESETS: Mapping[str, Mapping[str, Fraction]] = {
    "paper-b1": {
        "I-TLS": Fraction(2, 5),
        "II-Spin": Fraction(1, 5),
        "III-Seam": Fraction(1, 5),
        "IVb-QPEnv": Fraction(1, 10),
        "V-Phonon": Fraction(1, 10),
    },
}

DEAD_BAND = 1e-3


def budget_channel(name: str) -> str:
    """Channel id for budgeting; a bare IV/QP means the n_qp-limited half."""
    ids = resolve_channels(name)
    return "IVb-QPEnv" if len(ids) > 1 else ids[0]


def total_rate(t1_target: Quantity) -> Quantity:
    """Total allowable loss rate ``1/T1_target``."""
    if t1_target.dim != TIME:
        raise DimensionError(f"T1 target must be a time, got [{format_dim(t1_target.dim)}]")
    if not t1_target.value > 0:
        raise ValueError("T1 target must be positive")
    return t1_target.reciprocal()


@dataclass(frozen=True)
class ChannelCoupling:
    """Prefactor and coupling functional for one channel, with optional bridges."""

    c: Quantity
    g: Quantity
    omega: Optional[Quantity] = None
    observable_allowance: Optional[Quantity] = None


@dataclass(frozen=True)
class BudgetSpec:
    t1_target: Quantity
    allocations: Mapping[str, Fraction]
    couplings: Mapping[str, ChannelCoupling] = field(default_factory=dict)
    omega: Optional[Quantity] = None

    def __post_init__(self):
        allocs = {}
        for name, frac in self.allocations.items():
            cid = budget_channel(name)
            if cid in allocs:
                raise ValueError(f"channel {cid} allocated twice")
            frac = Fraction(frac) if not isinstance(frac, float) else Fraction(str(frac))
            if not frac > 0:
                raise ValueError(f"allocation for {cid} must be positive")
            allocs[cid] = frac
        if not allocs:
            raise ValueError("at least one channel allocation is required")
        if sum(allocs.values()) > 1:
            raise ValueError(f"allocation fractions sum to {float(sum(allocs.values()))} > 1")
        couplings = {budget_channel(k): v for k, v in self.couplings.items()}
        object.__setattr__(self, "allocations", allocs)
        object.__setattr__(self, "couplings", couplings)
        total_rate(self.t1_target)

    @classmethod
    def from_preset(cls, name: str, t1_target: Quantity, **kw) -> BudgetSpec:
        try:
            allocs = PRESETS[name]
        except KeyError:
            raise ValueError(f"unknown preset {name!r}; known: {', '.join(PRESETS)}") from None
        return cls(t1_target, dict(allocs), **kw)

    @property
    def margin_fraction(self) -> Fraction:
        return 1 - sum(self.allocations.values())


def allowances(spec: BudgetSpec) -> dict[str, Quantity]:
    """Per-channel rate allowance, fraction times the total rate."""
    gamma = total_rate(spec.t1_target)
    return {cid: gamma * frac for cid, frac in spec.allocations.items()}


def _observable_allowance(cid: str, allowance: Quantity, omega: Optional[Quantity],
                          observable_allowance: Optional[Quantity]) -> Quantity:
    o_dim = CLOSURE_TABLE[cid].o
    if observable_allowance is not None:
        if observable_allowance.dim != o_dim:
            raise DimensionError(f"{cid}: observable allowance carries [{format_dim(observable_allowance.dim)}], "
                                 f"expected [{format_dim(o_dim)}]")
        return observable_allowance
    if allowance.dim != RATE:
        raise DimensionError(f"allowance must be a rate, got [{format_dim(allowance.dim)}]")
    if o_dim == RATE:
        return allowance
    if cid == "II-Spin":
        raise ValueError("II-Spin needs an explicit flux-noise observable allowance")
    if omega is None:
        raise ValueError(f"{cid} has a dimensionless observable: mode angular frequency omega is required")
    if omega.dim != RATE or not omega.value > 0:
        raise DimensionError("omega must be a positive angular frequency [s^-1]")
    return allowance / omega


def rho_limit(channel: str, allowance: Quantity, c: Quantity, g: Quantity, omega: Optional[Quantity] = None,
              observable_allowance: Optional[Quantity] = None) -> Quantity:
    """Upper bound on the channel's state variable: ``O_allowance / (C * G)``.

    ``allowance`` is a rate; it is mapped to the channel observable directly
    (rate observables), via ``omega`` (``Q^-1`` observables) or replaced by
    ``observable_allowance`` when given.
    """
    cid = budget_channel(channel)
    rep = check_closure(cid)
    if not rep.passed:
        raise DimensionError(f"{cid}: dimensional closure fails")
    dims = rep.dims
    if c.dim != dims.c or g.dim != dims.g:
        raise DimensionError(f"{cid}: C [{format_dim(c.dim)}] and G [{format_dim(g.dim)}] do not match "
                             f"[{format_dim(dims.c)}], [{format_dim(dims.g)}]")
    if not float(c.value) * float(g.value) > 0:
        raise ValueError(f"{cid}: coupling C*G must be positive")
    obs = _observable_allowance(cid, allowance, omega, observable_allowance)
    limit = obs / (c * g)
    if limit.dim != dims.rho:
        raise DimensionError(f"{cid}: limit carries [{format_dim(limit.dim)}], expected [{format_dim(dims.rho)}]")
    return limit


@dataclass(frozen=True)
class BudgetResult:
    gamma_total: Quantity
    allowances: Mapping[str, Quantity]
    rho_limits: Mapping[str, Optional[Quantity]]
    margins: Mapping[str, Fraction]
    margin_fraction: Fraction
    margin_rate: Quantity
    notes: Mapping[str, str] = field(default_factory=dict)

    def lines(self) -> list[str]:
        out = [f"Gamma_total = {_fmt_exact(self.gamma_total.value)} s^-1"
               + (f" ± {self.gamma_total.sigma:.3g}" if self.gamma_total.sigma else "")]
        for cid, a in self.allowances.items():
            lim = self.rho_limits.get(cid)
            lim_s = f"{float(lim.value):.6g} {format_dim(lim.dim)}" if lim is not None else \
                f"n/a ({self.notes.get(cid, 'no coupling given')})"
            out.append(f"  {cid:11s} {_fmt_exact(a.value):>12s} s^-1 ({float(self.margins[cid]):.0%})  "
                       f"rho_limit {lim_s}")
        out.append(f"  {'margin':11s} {_fmt_exact(self.margin_rate.value):>12s} s^-1 "
                   f"({float(self.margin_fraction):.0%})")
        return out


def _fmt_exact(v) -> str:
    if isinstance(v, Fraction):
        return str(v.numerator) if v.denominator == 1 else repr(float(v))
    if isinstance(v, int):
        return str(v)
    return f"{float(v):.6g}"


def plan(spec: BudgetSpec) -> BudgetResult:
    """Allowances for every allocated channel and limits where couplings are known.

    ``margins`` holds each channel's share of the total rate.
    """
    gamma = total_rate(spec.t1_target)
    allow = allowances(spec)
    limits: dict[str, Optional[Quantity]] = {}
    notes = {}
    for cid, a in allow.items():
        cp = spec.couplings.get(cid)
        if cp is None:
            limits[cid] = None
            notes[cid] = "G TBD"
            continue
        limits[cid] = rho_limit(cid, a, cp.c, cp.g, cp.omega or spec.omega, cp.observable_allowance)
    margin_rate = gamma * spec.margin_fraction
    return BudgetResult(gamma, allow, limits, dict(spec.allocations), spec.margin_fraction, margin_rate, notes)


# ---------------------------------------------------------------------------
# go / no-go


@dataclass(frozen=True)
class FeasibilityRow:
    channel: str
    status: str
    measured: Optional[Quantity]
    limit: Optional[Quantity]
    upper: Optional[float]
    utilization: Optional[float]
    note: str = ""


@dataclass(frozen=True)
class FeasibilityReport:
    rows: tuple
    binding: Optional[str]
    k: float
    confidence: float

    @property
    def decision(self) -> str:
        statuses = {r.status for r in self.rows}
        if "NO-GO" in statuses:
            return "NO-GO"
        return "GO" if statuses == {"PASS"} else "INCOMPLETE"

    def lines(self) -> list[str]:
        out = [f"one-sided k = {self.k:.4f} at confidence {self.confidence:g}"]
        for r in self.rows:
            extra = f" utilization {r.utilization:.3g}" if r.utilization is not None else ""
            out.append(f"  {r.channel:11s} {r.status:8s}{extra}" + (f"  {r.note}" if r.note else ""))
        out.append(f"binding channel: {self.binding or 'none'}")
        out.append(f"decision: {self.decision}")
        return out


def feasibility(result: BudgetResult, measured: Mapping[str, Quantity], confidence: float = 0.95,
                diminishing: float = 0.1) -> FeasibilityReport:
    """PASS iff ``measured + k*sigma <= limit``, k the one-sided normal quantile.

    Channels without a limit or without a measurement are UNKNOWN. The
    binding channel is the one with the highest utilization ``upper/limit``;
    channels below ``diminishing`` times their limit get a note that further
    reduction there buys little.
    """
    if not 0 < confidence < 1:
        raise ValueError("confidence must lie in (0, 1)")
    k = NormalDist().inv_cdf(confidence)
    meas = {budget_channel(name): v for name, v in measured.items()}
    rows = []
    for cid, limit in result.rho_limits.items():
        m = meas.get(cid)
        if limit is None or m is None:
            why = "no limit" if limit is None else "no measurement"
            rows.append(FeasibilityRow(cid, "UNKNOWN", m, limit, None, None, why))
            continue
        if m.dim != limit.dim:
            raise DimensionError(f"{cid}: measured [{format_dim(m.dim)}] vs limit [{format_dim(limit.dim)}]")
        upper = float(m.value) + k * m.sigma
        lim = float(limit.value)
        util = upper / lim
        note = "diminishing returns: limited elsewhere" if upper < diminishing * lim else ""
        rows.append(FeasibilityRow(cid, "PASS" if upper <= lim else "NO-GO", m, limit, upper, util, note))
    rated = [r for r in rows if r.utilization is not None]
    binding = max(rated, key=lambda r: r.utilization).channel if rated else None
    return FeasibilityReport(tuple(rows), binding, k, confidence)


# ---------------------------------------------------------------------------
# geometric sensitivity


@dataclass(frozen=True)
class SensitivitySweep:
    parameter: str
    p: np.ndarray
    g: tuple
    p_unit: str = "1"

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        g = tuple(x if isinstance(x, Quantity) else Quantity(float(x)) for x in self.g)
        if p.ndim != 1 or len(p) != len(g):
            raise ValueError("p and g must be 1-D and of equal length")
        if len(p) < 2:
            raise ValueError("sensitivity sweep needs at least 2 samples")
        if len(np.unique(p)) != len(p):
            raise ValueError(f"duplicate {self.parameter} values in sweep")
        d = np.diff(p)
        if not (np.all(d > 0) or np.all(d < 0)):
            raise ValueError(f"{self.parameter} values must be strictly monotone")
        if any(x.dim != g[0].dim for x in g):
            raise DimensionError("sweep G values carry different dimensions")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "g", g)

    @property
    def g_values(self) -> np.ndarray:
        return np.array([float(x.value) for x in self.g])


@dataclass(frozen=True)
class SensitivityResult:
    parameter: str
    p: np.ndarray
    slopes: np.ndarray
    dim: DimVector

    @property
    def max_abs_slope(self) -> Quantity:
        i = int(np.argmax(np.abs(self.slopes)))
        return Quantity(float(self.slopes[i]), 0.0, self.dim)

    @property
    def argmax(self) -> float:
        return float(self.p[int(np.argmax(np.abs(self.slopes)))])


def sensitivity(sweep: SensitivitySweep) -> SensitivityResult:
    """dG/dp by central differences inside the sweep and one-sided at its ends."""
    p, g = sweep.p, sweep.g_values
    slopes = np.empty_like(g)
    slopes[0] = (g[1] - g[0]) / (p[1] - p[0])
    slopes[-1] = (g[-1] - g[-2]) / (p[-1] - p[-2])
    if len(p) > 2:
        slopes[1:-1] = (g[2:] - g[:-2]) / (p[2:] - p[:-2])
    p_dim = parse_unit(sweep.p_unit)[1]
    return SensitivityResult(sweep.parameter, p, slopes, sweep.g[0].dim - p_dim)


def _sign(sweep: SensitivitySweep, dead_band: float) -> str:
    g = sweep.g_values
    scale = float(np.mean(np.abs(g)))
    if scale == 0:
        return "0"
    rel = (g[-1] - g[0]) / scale
    # orient by increasing p
    if sweep.p[-1] < sweep.p[0]:
        rel = -rel
    if abs(rel) < dead_band:
        return "0"
    return "+" if rel > 0 else "-"


@dataclass(frozen=True)
class ConflictMatrix:
    parameters: tuple
    channels: tuple
    signs: Mapping[tuple, str]
    labels: Mapping[str, str]

    def lines(self) -> list[str]:
        head = f"{'parameter':24s}" + "".join(f"{get_channel(c).label:>6s}" for c in self.channels) + "  net effect"
        out = [head]
        for p in self.parameters:
            cells = "".join(f"{self.signs.get((p, c), '.'):>6s}" for c in self.channels)
            out.append(f"{p:24s}{cells}  {self.labels[p]}")
        return out


def _label(signs: Mapping[str, str]) -> str:
    order = list(CHANNELS)
    up = [c for c in order if signs.get(c) == "+"]
    down = [c for c in order if signs.get(c) == "-"]
    lab = lambda cs: [get_channel(c).label for c in cs]  # noqa: E731
    if up and down:
        return f"Trade-off ({' vs '.join(lab([c for c in order if c in up or c in down]))})"
    if down:
        return "Favorable"
    if up:
        return f"Unfavorable for {'/'.join(lab(up))}"
    return "Favorable/neutral"


def conflict_matrix(sweeps: Mapping[tuple, SensitivitySweep], dead_band: float = DEAD_BAND) -> ConflictMatrix:
    """Sign of the change in each channel's G per design parameter.

    ``+`` means G grows with the parameter (more loss), ``-`` that it shrinks;
    changes below ``dead_band`` relative to the mean |G| count as 0. A
    parameter that raises one channel's G while lowering another's is a
    trade-off.
    """
    if not sweeps:
        raise ValueError("conflict matrix needs at least one sweep")
    signs = {}
    params: list[str] = []
    chans = set()
    for (channel, parameter), sweep in sweeps.items():
        cid = budget_channel(channel)
        signs[(parameter, cid)] = _sign(sweep, dead_band)
        chans.add(cid)
        if parameter not in params:
            params.append(parameter)
    channels = tuple(c for c in CHANNELS if c in chans)
    labels = {p: _label({c: signs[(p, c)] for c in channels if (p, c) in signs}) for p in params}
    return ConflictMatrix(tuple(params), channels, signs, labels)


# ---------------------------------------------------------------------------
# file formats


def _read_q(text: str) -> Quantity:
    return parse_quantity(text) if len(text.split()) == 3 else parse_amount(text)


def _parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    return cp


def load_budget(source, t1: Optional[str] = None, preset: Optional[str] = None) -> BudgetSpec:
    """Read a budget file (path or text); ``t1``/``preset`` override the file.

    Sections: ``[budget] t1=.. omega=.. preset=..``, ``[allocations]``,
    ``[c]``, ``[g]``, ``[omega]`` and ``[observable]`` keyed by channel.
    """
    cp = _parser()
    where = "<text>"
    if source is not None:
        if isinstance(source, Path) or "\n" not in str(source):
            where = str(source)
            source = Path(source).read_text(encoding="utf-8")
        try:
            cp.read_string(source, source=where)
        except configparser.Error as exc:
            raise SchemaError(f"{where}: {exc}") from None
    b = cp["budget"] if cp.has_section("budget") else {}
    t1 = t1 or b.get("t1")
    preset = preset or b.get("preset")
    if t1 is None:
        raise SchemaError(f"{where}: no t1 target given")
    try:
        t1_q = parse_amount(t1)
        omega = _read_q(b["omega"]) if "omega" in b else None
        allocs = {k: Fraction(v.strip()) for k, v in cp.items("allocations")} if cp.has_section("allocations") else {}
        sec = lambda name: dict(cp.items(name)) if cp.has_section(name) else {}  # noqa: E731
        cs, gs, oms, obs = sec("c"), sec("g"), sec("omega"), sec("observable")
        couplings = {}
        for ch in set(cs) | set(gs):
            if ch not in cs or ch not in gs:
                raise SchemaError(f"{where}: channel {ch} needs both [c] and [g] entries")
            couplings[ch] = ChannelCoupling(_read_q(cs[ch]), _read_q(gs[ch]),
                                            _read_q(oms[ch]) if ch in oms else None,
                                            _read_q(obs[ch]) if ch in obs else None)
    except (ValueError, ZeroDivisionError) as exc:
        if isinstance(exc, SchemaError):
            raise
        raise SchemaError(f"{where}: {exc}") from None
    if preset:
        if allocs:
            raise SchemaError(f"{where}: give either a preset or [allocations], not both")
        return BudgetSpec.from_preset(preset, t1_q, couplings=couplings, omega=omega)
    if not allocs:
        raise SchemaError(f"{where}: allocations must be stated explicitly (or name a preset)")
    return BudgetSpec(t1_q, allocs, couplings, omega)


def budget_csv(result: BudgetResult) -> str:
    header = ["channel", "allowance_per_s", "rho_limit", "limit_unit", "margin"]
    units = ["", "s^-1", "limit_unit", "", "1"]
    rows = []
    for cid, a in result.allowances.items():
        lim = result.rho_limits.get(cid)
        rows.append((cid, _fmt_exact(a.value), None if lim is None else float(lim.value),
                     "" if lim is None else format_dim(lim.dim), float(result.margins[cid])))
    rows.append(("margin", _fmt_exact(result.margin_rate.value), None, "", float(result.margin_fraction)))
    return write_table(header, units, rows)


def read_measured_csv(source) -> dict[str, Quantity]:
    """``channel,value,sigma,unit`` rows of measured state variables."""
    cols = read_columns(source, ["channel", "value", "sigma", "unit"], text_columns=("channel", "unit"))
    out = {}
    for ch, v, s, u in zip(cols["channel"], cols["value"], cols["sigma"], cols["unit"]):
        cid = budget_channel(ch)
        if cid in out:
            raise SchemaError(f"duplicate measurement for {cid}")
        out[cid] = q(float(v), float(s), u)
    return out


def read_sweeps_csv(source) -> dict[tuple, SensitivitySweep]:
    """``channel,parameter,p,g,unit`` rows grouped into one sweep per (channel, parameter)."""
    cols = read_columns(source, ["channel", "parameter", "p", "g", "unit"],
                        text_columns=("channel", "parameter", "unit"))
    groups: dict[tuple, list] = {}
    for ch, par, p, g, u in zip(cols["channel"], cols["parameter"], cols["p"], cols["g"], cols["unit"]):
        groups.setdefault((budget_channel(ch), par), []).append((float(p), q(float(g), 0.0, u)))
    return {key: SensitivitySweep(key[1], [r[0] for r in rows], [r[1] for r in rows])
            for key, rows in groups.items()}


def sensitivity_csv(results: Mapping[tuple, SensitivityResult]) -> str:
    header = ["channel", "parameter", "p", "slope", "slope_unit"]
    units = ["", "", "p_unit", "slope_unit", ""]
    rows = [(cid, r.parameter, float(p), float(s), format_dim(r.dim))
            for (cid, _), r in results.items() for p, s in zip(r.p, r.slopes)]
    return write_table(header, units, rows)
