"""Pre-committed 2x2 decoupling protocol.

Rows ``a``/``b`` are materials treatments (state variable rho), columns
``A``/``B`` are geometries (coupling functional G). Predictions
``O_mn = C * rho_m * G_n`` are sealed with a content hash before any
measurement may be attached; the row and column ratio tests then check that
materials changes move the observable by rho alone and geometry changes by
G alone.

Ratios are taken second level over first (``b/a``, ``B/A``) and a residual is
``measured_ratio / predicted_ratio - 1``.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from statistics import NormalDist
from typing import Mapping, Optional

import numpy as np

from .channels import CLOSURE_TABLE, get_channel
from .csvio import read_columns, write_table
from .errors import DimensionError, ProtocolViolation, SchemaError
from .units import Quantity, format_dim, parse_quantity, q

__all__ = [
    "ROWS",
    "COLUMNS",
    "CELLS",
    "SIGMA_FLOOR",
    "Cell",
    "TwoByTwoDesign",
    "RatioResidual",
    "AxisTest",
    "Verdict",
    "predict",
    "seal_hash",
    "attach_measurements",
    "row_ratio_test",
    "column_ratio_test",
    "verdict",
    "mc_residual_sigma",
    "load_design",
    "dump_design",
    "read_measurements_csv",
    "verdict_csv",
]

ROWS = ("a", "b")
COLUMNS = ("A", "B")
CELLS = tuple(m + n for m in ROWS for n in COLUMNS)

# Lower bound on a residual's sigma so noise-free inputs still give a finite z.
SIGMA_FLOOR = 1e-12


@dataclass(frozen=True)
class Cell:
    rho: Quantity
    g: Quantity
    o_meas: Optional[Quantity] = None


@dataclass(frozen=True)
class TwoByTwoDesign:
    """A 2x2 design; sealed once ``predictions`` and ``seal`` are set."""

    rho: Mapping[str, Quantity]
    g: Mapping[str, Quantity]
    c: Quantity = field(default_factory=lambda: Quantity(1))
    epsilon: float = 0.1
    confidence: float = 0.95
    channel: Optional[str] = None
    predictions: Optional[Mapping[str, Quantity]] = None
    committed_at: Optional[str] = None
    seal: Optional[str] = None
    measurements: Optional[Mapping[str, Quantity]] = None

    def __post_init__(self):
        if set(self.rho) != set(ROWS):
            raise ValueError(f"rho needs exactly rows {ROWS}, got {sorted(self.rho)}")
        if set(self.g) != set(COLUMNS):
            raise ValueError(f"g needs exactly columns {COLUMNS}, got {sorted(self.g)}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.confidence < 1:
            raise ValueError("confidence must lie in (0, 1)")
        for name, vals in (("rho", self.rho), ("g", self.g)):
            first = next(iter(vals.values()))
            for k, v in vals.items():
                if not v.value > 0:
                    raise ValueError(f"{name}[{k}] must be positive")
                if v.dim != first.dim:
                    raise DimensionError(f"{name} entries carry different dimensions")
        if self.channel is not None:
            cid = get_channel(self.channel).id
            object.__setattr__(self, "channel", cid)
            dims = CLOSURE_TABLE[cid]
            for name, got, want in (("rho", self.rho["a"].dim, dims.rho), ("G", self.g["A"].dim, dims.g),
                                    ("C", self.c.dim, dims.c)):
                if got != want:
                    raise DimensionError(f"{cid}: {name} carries [{format_dim(got)}], expected [{format_dim(want)}]")

    @property
    def sealed(self) -> bool:
        return self.predictions is not None and self.seal is not None

    @property
    def observable_dim(self):
        return self.c.dim + self.rho["a"].dim + self.g["A"].dim

    def cells(self) -> dict[str, Cell]:
        meas = self.measurements or {}
        return {m + n: Cell(self.rho[m], self.g[n], meas.get(m + n)) for m in ROWS for n in COLUMNS}


def _qrec(x: Quantity) -> list:
    return [repr(float(x.value)), repr(float(x.sigma)), format_dim(x.dim)]


def seal_hash(design: TwoByTwoDesign) -> str:
    """sha256 over the canonical prediction record (inputs, predictions, time)."""
    if design.predictions is None:
        raise ProtocolViolation("design has no predictions to seal")
    record = {
        "channel": design.channel,
        "epsilon": repr(float(design.epsilon)),
        "confidence": repr(float(design.confidence)),
        "c": _qrec(design.c),
        "rho": {k: _qrec(design.rho[k]) for k in ROWS},
        "g": {k: _qrec(design.g[k]) for k in COLUMNS},
        "predictions": {k: _qrec(design.predictions[k]) for k in CELLS},
        "committed_at": design.committed_at,
    }
    blob = json.dumps(record, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def predict(design: TwoByTwoDesign, committed_at: Optional[str] = None) -> TwoByTwoDesign:
    """Freeze the four predictions ``C rho_m G_n`` and seal the design.

    Returns the sealed copy; its ``predictions`` hold the four Quantities.
    """
    if design.measurements:
        raise ProtocolViolation("measurements were entered before predictions were frozen")
    preds = {m + n: design.c * design.rho[m] * design.g[n] for m in ROWS for n in COLUMNS}
    stamp = committed_at or datetime.now(timezone.utc).isoformat(timespec="seconds")
    sealed = replace(design, predictions=preds, committed_at=stamp, seal=None)
    return replace(sealed, seal=seal_hash(sealed))


def _check_seal(design: TwoByTwoDesign):
    if not design.sealed:
        raise ProtocolViolation("design is not sealed: run predict before entering measurements")
    if seal_hash(design) != design.seal:
        raise ProtocolViolation("design content changed after sealing (hash mismatch)")


def attach_measurements(design: TwoByTwoDesign, measurements: Mapping[str, Quantity]) -> TwoByTwoDesign:
    _check_seal(design)
    if set(measurements) != set(CELLS):
        raise ValueError(f"measurements need exactly cells {CELLS}, got {sorted(measurements)}")
    for k, v in measurements.items():
        if v.dim != design.observable_dim:
            raise DimensionError(f"measurement {k} carries [{format_dim(v.dim)}], "
                                 f"predictions carry [{format_dim(design.observable_dim)}]")
    return replace(design, measurements=dict(measurements))


@dataclass(frozen=True)
class RatioResidual:
    axis: str
    fixed: str
    measured_ratio: float
    predicted_ratio: float
    residual: float
    sigma: float
    z: float
    magnitude_ok: bool
    stat_ok: bool
    low_power: bool

    @property
    def passed(self) -> bool:
        return self.magnitude_ok and self.stat_ok

    @property
    def decisive_fail(self) -> bool:
        # a magnitude miss only counts when the interval is narrow enough to resolve epsilon
        return not self.stat_ok or (not self.magnitude_ok and not self.low_power)


@dataclass(frozen=True)
class AxisTest:
    axis: str
    residuals: tuple
    epsilon: float
    z_crit: float

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.residuals)

    @property
    def falsified(self) -> bool:
        return any(r.decisive_fail for r in self.residuals)


def _ratio_residual(axis, fixed, o_num, o_den, p_num, p_den, epsilon, z_crit) -> RatioResidual:
    on, od, pn, pd = (float(x.value) for x in (o_num, o_den, p_num, p_den))
    if od == 0 or pd == 0 or pn == 0:
        raise ZeroDivisionError(f"{axis} ratio for {fixed}: zero denominator")
    measured = on / od
    predicted = pn / pd
    x = measured / predicted
    # x = o_num * p_den / (o_den * p_num), independent first-order terms
    var = (o_num.sigma / od / predicted) ** 2 + (x * o_den.sigma / od) ** 2 \
        + (x * p_num.sigma / pn) ** 2 + (x * p_den.sigma / pd) ** 2
    r = x - 1.0
    sigma = max(math.sqrt(var), SIGMA_FLOOR)
    z = abs(r) / sigma
    return RatioResidual(axis, fixed, measured, predicted, r, sigma, z,
                         abs(r) <= epsilon, z <= z_crit, z_crit * sigma > epsilon)


def _z_crit(confidence: float) -> float:
    return NormalDist().inv_cdf(0.5 + confidence / 2)


def _measured(design: TwoByTwoDesign) -> Mapping[str, Quantity]:
    if not design.measurements or set(design.measurements) != set(CELLS):
        raise ValueError("all four measurements must be present")
    return design.measurements


def row_ratio_test(design: TwoByTwoDesign) -> AxisTest:
    """Within each geometry, O_b/O_a must equal rho_b/rho_a."""
    o = _measured(design)
    zc = _z_crit(design.confidence)
    res = tuple(_ratio_residual("row", n, o["b" + n], o["a" + n], design.rho["b"], design.rho["a"],
                                design.epsilon, zc) for n in COLUMNS)
    return AxisTest("row", res, design.epsilon, zc)


def column_ratio_test(design: TwoByTwoDesign) -> AxisTest:
    """Within each material, O_B/O_A must equal G_B/G_A."""
    o = _measured(design)
    zc = _z_crit(design.confidence)
    res = tuple(_ratio_residual("column", m, o[m + "B"], o[m + "A"], design.g["B"], design.g["A"],
                                design.epsilon, zc) for m in ROWS)
    return AxisTest("column", res, design.epsilon, zc)


@dataclass(frozen=True)
class Verdict:
    status: str
    axis: Optional[str]
    row: AxisTest
    column: AxisTest

    @property
    def label(self) -> str:
        return f"{self.status}({self.axis})" if self.axis else self.status

    @property
    def row_residuals(self) -> tuple:
        return tuple(r.residual for r in self.row.residuals)

    @property
    def column_residuals(self) -> tuple:
        return tuple(r.residual for r in self.column.residuals)

    @property
    def z_scores(self) -> tuple:
        return tuple(r.z for r in self.row.residuals + self.column.residuals)

    def lines(self) -> list[str]:
        out = []
        for test in (self.row, self.column):
            for r in test.residuals:
                note = "pass" if r.passed else "fail"
                if r.low_power:
                    note += ", low power"
                out.append(f"{r.axis:6s} [{r.fixed}] ratio {r.measured_ratio:.6g} vs {r.predicted_ratio:.6g}: "
                           f"residual {r.residual:+.6g} ± {r.sigma:.3g}, z = {r.z:.3g} ({note})")
        out.append(f"epsilon = {self.row.epsilon:g}, z_crit = {self.row.z_crit:.4f}")
        out.append(f"verdict: {self.label}")
        return out


def verdict(design: TwoByTwoDesign) -> Verdict:
    """Supported only if both axes pass; a decisive failure on either axis falsifies."""
    _check_seal(design)
    row, col = row_ratio_test(design), column_ratio_test(design)
    bad = [t.axis for t in (row, col) if t.falsified]
    if bad:
        return Verdict("Falsified", "both" if len(bad) == 2 else bad[0], row, col)
    if row.passed and col.passed:
        return Verdict("Supported", None, row, col)
    return Verdict("Indeterminate", None, row, col)


def mc_residual_sigma(design: TwoByTwoDesign, axis: str, n: int = 20000, seed: int = 0) -> np.ndarray:
    """Monte-Carlo standard deviation of the two residuals on ``axis``.

    Each input is drawn from an independent normal; used to cross-check the
    first-order propagation.
    """
    o = _measured(design)
    rng = np.random.default_rng(seed)

    def draw(x: Quantity):
        return float(x.value) + float(x.sigma) * rng.standard_normal(n)

    out = []
    if axis == "row":
        pairs = [(o["b" + k], o["a" + k], design.rho["b"], design.rho["a"]) for k in COLUMNS]
    elif axis == "column":
        pairs = [(o[k + "B"], o[k + "A"], design.g["B"], design.g["A"]) for k in ROWS]
    else:
        raise ValueError("axis must be 'row' or 'column'")
    for on, od, pn, pd in pairs:
        r = (draw(on) / draw(od)) / (draw(pn) / draw(pd)) - 1.0
        out.append(float(np.std(r, ddof=1)))
    return np.array(out)


# ---------------------------------------------------------------------------
# file formats


def _fmt_q(x: Quantity) -> str:
    return f"{float(x.value)!r} {float(x.sigma)!r} {format_dim(x.dim)}"


def _parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keep 'a' and 'A' distinct
    return cp


def _section_quantities(cp, name: str, where: str) -> dict[str, Quantity]:
    if not cp.has_section(name):
        return {}
    out = {}
    for k, v in cp.items(name):
        try:
            out[k] = parse_quantity(v)
        except ValueError as exc:
            raise SchemaError(f"{where}: [{name}] {k}: {exc}") from None
    return out


def load_design(source) -> TwoByTwoDesign:
    """Read a design file (path or text)."""
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source):
        text, where = Path(source).read_text(encoding="utf-8"), str(source)
    else:
        text, where = source, "<text>"
    cp = _parser()
    try:
        cp.read_string(text, source=where)
    except configparser.Error as exc:
        raise SchemaError(f"{where}: {exc}") from None
    if not cp.has_section("design"):
        raise SchemaError(f"{where}: missing [design] section")
    d = cp["design"]
    try:
        c = parse_quantity(d["c"]) if "c" in d else Quantity(1)
        epsilon = float(d.get("epsilon", "0.1"))
        confidence = float(d.get("confidence", "0.95"))
    except ValueError as exc:
        raise SchemaError(f"{where}: [design] {exc}") from None
    channel = d.get("channel") or None
    preds = _section_quantities(cp, "predictions", where) or None
    meas = _section_quantities(cp, "measurements", where) or None
    seal = cp.get("seal", "hash", fallback=None)
    committed = cp.get("seal", "committed_at", fallback=None)
    return TwoByTwoDesign(_section_quantities(cp, "rho", where), _section_quantities(cp, "g", where), c,
                          epsilon, confidence, channel, preds, committed, seal, meas)


def dump_design(design: TwoByTwoDesign) -> str:
    lines = ["[design]"]
    if design.channel:
        lines.append(f"channel = {design.channel}")
    lines += [f"epsilon = {design.epsilon!r}", f"confidence = {design.confidence!r}", f"c = {_fmt_q(design.c)}", ""]
    lines += ["[rho]"] + [f"{k} = {_fmt_q(design.rho[k])}" for k in ROWS] + [""]
    lines += ["[g]"] + [f"{k} = {_fmt_q(design.g[k])}" for k in COLUMNS] + [""]
    if design.predictions:
        lines += ["[predictions]"] + [f"{k} = {_fmt_q(design.predictions[k])}" for k in CELLS] + [""]
    if design.seal:
        lines += ["[seal]", f"committed_at = {design.committed_at}", f"hash = {design.seal}", ""]
    if design.measurements:
        lines += ["[measurements]"] + [f"{k} = {_fmt_q(design.measurements[k])}" for k in CELLS] + [""]
    return "\n".join(lines)


def read_measurements_csv(source) -> dict[str, Quantity]:
    """``cell,value,sigma,unit`` rows, one per cell."""
    cols = read_columns(source, ["cell", "value", "sigma", "unit"], text_columns=("cell", "unit"))
    out = {}
    for cell, v, s, u in zip(cols["cell"], cols["value"], cols["sigma"], cols["unit"]):
        if cell not in CELLS:
            raise SchemaError(f"unknown cell {cell!r}; expected one of {CELLS}")
        if cell in out:
            raise SchemaError(f"duplicate cell {cell!r}")
        out[cell] = q(float(v), float(s), u)
    return out


def verdict_csv(v: Verdict) -> str:
    header = ["axis", "fixed", "measured_ratio", "predicted_ratio", "residual", "sigma_residual", "z",
              "passed", "low_power"]
    units = ["", "", "1", "1", "1", "1", "1", "", ""]
    rows = [(r.axis, r.fixed, r.measured_ratio, r.predicted_ratio, r.residual, r.sigma, r.z,
             str(r.passed).lower(), str(r.low_power).lower())
            for r in v.row.residuals + v.column.residuals]
    rows.append(("verdict", v.label, None, None, None, None, None, "", ""))
    return write_table(header, units, rows)
