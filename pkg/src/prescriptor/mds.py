"""Minimum-dataset files: parse, grade and canonically serialize.

A dataset has three sections, one per reporting category::

    # comments start with '#'
    [rho]
    I-TLS.mu2 = 3.1e12 2.0e11 m^-2 | method=FIB-SEM | witness=coupon W3
    [g]
    I-TLS.G_I = 2.0e-4 1.0e-6 m^2 | mode_volume=... | boundary=... | solver=...
    [o]
    II-Spin.A_Phi = 1.2e-12 1e-13 1 | protocol=echo | convention=one-sided

A record key is ``<channel>.<name>``; the value part is ``value sigma unit``
where sigma may be ``-`` (not reported). Metadata are ``key=value`` fields
after ``|``. Units are resolved against the unit registry; unknown units are
errors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

from .channels import CHANNELS, CLOSURE_TABLE, resolve_channels
from .errors import PrescriptorError, UnitParseError
from .units import Quantity, format_dim, parse_unit, q

__all__ = [
    "SECTIONS",
    "PROTOCOLS",
    "CONVENTIONS",
    "GRADES",
    "STATISTICS",
    "register_statistic",
    "MdsError",
    "MdsParseError",
    "Record",
    "MdsDocument",
    "Deficiency",
    "ValidationReport",
    "parse",
    "parse_lenient",
    "validate",
    "serialize",
]

SECTIONS = ("rho", "g", "o")
SECTION_TITLES = {
    "rho": "Microstructural State Variables",
    "g": "Geometry Coupling Functionals",
    "o": "Device-Level Observables",
}
PROTOCOLS = ("ramsey", "echo", "t1-window", "parity-monitor")
CONVENTIONS = ("one-sided", "two-sided")
GRADES = ("invalid", "trend", "quantitative")

# Admissible state-variable statistics per channel; extend with register_statistic.
STATISTICS: dict[str, set] = {
    "I-TLS": {"mu2"},
    "II-Spin": {"rho_spin"},
    "III-Seam": {"r_seam"},
    "IVa-QPTrap": {"n_qp"},
    "IVb-QPEnv": {"n_qp"},
    "V-Phonon": {"Z_ph"},
}

_DEPHASING = {"T_phi", "Tphi", "Gamma_phi"}
_FLUX_NOISE = {"A_Phi", "S_Phi"}
_REQUIRED_META = {
    "rho": ("method", "witness"),
    "g": ("mode_volume", "boundary", "solver"),
    "o": ("protocol",),
}


def register_statistic(channel: str, name: str) -> None:
    for cid in resolve_channels(channel):
        STATISTICS.setdefault(cid, set()).add(name)


@dataclass(frozen=True)
class MdsError:
    line: int
    col: int
    message: str

    def __str__(self) -> str:
        return f"{self.line}:{self.col}: {self.message}"


class MdsParseError(PrescriptorError, ValueError):
    def __init__(self, errors: list[MdsError]):
        self.errors = list(errors)
        super().__init__("\n".join(str(e) for e in self.errors))


@dataclass(frozen=True)
class Record:
    section: str
    channel: str
    name: str
    value: float
    sigma: Optional[float]
    unit: str
    meta: tuple = ()
    line: int = field(default=0, compare=False)

    @property
    def key(self) -> str:
        return f"{self.channel}.{self.name}"

    @property
    def quantity(self) -> Quantity:
        return q(self.value, self.sigma or 0.0, self.unit)

    def get(self, key: str, default: str = "") -> str:
        return dict(self.meta).get(key, default)

    def text(self) -> str:
        sigma = "-" if self.sigma is None else repr(self.sigma)
        parts = [f"{self.key} = {self.value!r} {sigma} {self.unit}"]
        parts += [f"{k}={v}" for k, v in self.meta]
        return " | ".join(parts)


# Section-specific names, kept as aliases of the shared record type.
StateVariableRecord = CouplingRecord = ObservableRecord = Record


def _order(r: Record):
    return (list(CHANNELS).index(r.channel), r.name)


@dataclass(frozen=True)
class MdsDocument:
    rho: tuple = ()
    g: tuple = ()
    o: tuple = ()
    present: frozenset = frozenset(SECTIONS)

    def section(self, name: str) -> tuple:
        return getattr(self, name)

    def records(self):
        for s in SECTIONS:
            yield from self.section(s)

    def channels(self) -> list[str]:
        seen = {r.channel for r in self.records()}
        return [c for c in CHANNELS if c in seen]

    def canonical(self) -> MdsDocument:
        return MdsDocument(*(tuple(sorted(self.section(s), key=_order)) for s in SECTIONS), self.present)

    def __eq__(self, other):
        if not isinstance(other, MdsDocument):
            return NotImplemented
        a, b = self.canonical(), other.canonical()
        return (a.rho, a.g, a.o) == (b.rho, b.g, b.o)

    def __hash__(self):
        c = self.canonical()
        return hash((c.rho, c.g, c.o))


# ---------------------------------------------------------------------------
# parsing


def _parse_float(tok: str) -> float:
    x = float(tok)
    if not math.isfinite(x):
        raise ValueError("non-finite number")
    return x


def _parse_record(section: str, line: str, lineno: int, errors: list[MdsError]) -> Optional[Record]:
    indent = len(line) - len(line.lstrip())
    fields = line.split("|")
    head = fields[0]
    if "=" not in head:
        errors.append(MdsError(lineno, indent + 1, "expected 'key = value sigma unit'"))
        return None
    key, rhs = head.split("=", 1)
    key = key.strip()
    rhs_col = len(head) - len(head.split("=", 1)[1]) + 1
    if "." not in key:
        errors.append(MdsError(lineno, indent + 1, f"record key {key!r} must be '<channel>.<name>'"))
        return None
    ch_text, name = key.split(".", 1)
    ok = True
    try:
        ids = resolve_channels(ch_text)
        if len(ids) != 1:
            raise KeyError(ch_text)
        channel = ids[0]
    except KeyError:
        errors.append(MdsError(lineno, indent + 1, f"unknown channel {ch_text!r}"))
        ok = False
        channel = ch_text
    if not name or not name.replace("_", "").isalnum():
        errors.append(MdsError(lineno, indent + len(ch_text) + 2, f"invalid record name {name!r}"))
        ok = False
    toks = rhs.split()
    col = rhs_col + len(rhs) - len(rhs.lstrip())
    value = sigma = None
    unit = ""
    if len(toks) < 3:
        what = "missing units" if len(toks) == 2 else "expected 'value sigma unit'"
        errors.append(MdsError(lineno, col, f"{what} in {key}"))
        ok = False
    elif len(toks) > 3:
        errors.append(MdsError(lineno, col, f"unexpected text after unit in {key}: {' '.join(toks[3:])!r}"))
        ok = False
    else:
        try:
            value = _parse_float(toks[0])
        except ValueError:
            errors.append(MdsError(lineno, col, f"value {toks[0]!r} is not a number"))
            ok = False
        if toks[1] != "-":
            try:
                sigma = _parse_float(toks[1])
                if sigma < 0:
                    raise ValueError
            except ValueError:
                errors.append(MdsError(lineno, col, f"sigma {toks[1]!r} is not a non-negative number or '-'"))
                ok = False
        unit = toks[2]
        try:
            parse_unit(unit)
        except UnitParseError as exc:
            errors.append(MdsError(lineno, col, f"{exc} in {key}"))
            ok = False
    meta = {}
    pos = len(head) + 1
    for f in fields[1:]:
        fcol = pos + len(f) - len(f.lstrip()) + 1
        pos += len(f) + 1
        if "=" not in f:
            errors.append(MdsError(lineno, fcol, f"metadata {f.strip()!r} must be key=value"))
            ok = False
            continue
        k, v = (x.strip() for x in f.split("=", 1))
        if not k:
            errors.append(MdsError(lineno, fcol, "empty metadata key"))
            ok = False
        elif k in meta:
            errors.append(MdsError(lineno, fcol, f"duplicate metadata key {k!r}"))
            ok = False
        else:
            meta[k] = v
    if not ok:
        return None
    return Record(section, channel, name, value, sigma, unit, tuple(sorted(meta.items())), lineno)


def parse_lenient(text: str) -> tuple[MdsDocument, list[MdsError]]:
    """Parse everything parseable; returns the document and every located error."""
    errors: list[MdsError] = []
    sections: dict[str, list[Record]] = {}
    keys: dict[tuple, int] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip()
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if stripped.startswith("["):
            col = line.index("[") + 1
            if not stripped.endswith("]"):
                errors.append(MdsError(lineno, col, f"malformed section header {stripped!r}"))
                current = None
                continue
            name = stripped[1:-1].strip()
            if name not in SECTIONS:
                errors.append(MdsError(lineno, col, f"unknown section [{name}]; expected one of {list(SECTIONS)}"))
                current = None
            elif name in sections:
                errors.append(MdsError(lineno, col, f"duplicate section [{name}]"))
                current = name
            else:
                sections[name] = []
                current = name
            continue
        if current is None:
            errors.append(MdsError(lineno, 1, "record outside a known section"))
            continue
        rec = _parse_record(current, line, lineno, errors)
        if rec is None:
            continue
        k = (current, rec.key)
        if k in keys:
            errors.append(MdsError(lineno, len(line) - len(line.lstrip()) + 1,
                                   f"duplicate record key {rec.key} (first on line {keys[k]})"))
            continue
        keys[k] = lineno
        sections[current].append(rec)
    doc = MdsDocument(*(tuple(sections.get(s, ())) for s in SECTIONS), frozenset(sections))
    return doc, errors


def parse(text: str) -> MdsDocument:
    """Parse a dataset, raising :class:`MdsParseError` listing every syntax error."""
    doc, errors = parse_lenient(text)
    if errors:
        raise MdsParseError(errors)
    return doc


def serialize(doc: MdsDocument) -> str:
    """Canonical text: fixed section order, records by channel then name, sorted metadata."""
    c = doc.canonical()
    blocks = []
    for s in SECTIONS:
        recs = c.section(s)
        if not recs and s not in doc.present:
            continue
        blocks.append("\n".join([f"[{s}]"] + [r.text() for r in recs]))
    return "\n\n".join(blocks) + "\n"


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Deficiency:
    line: int
    col: int
    grade: str
    channel: Optional[str]
    message: str

    def __str__(self) -> str:
        where = f" [{self.channel}]" if self.channel else ""
        return f"{self.line}:{self.col}: {self.grade}{where}: {self.message}"


@dataclass(frozen=True)
class ValidationReport:
    grade: str
    channel_grades: dict
    deficiencies: tuple
    strictness: str

    @property
    def passed(self) -> bool:
        return GRADES.index(self.grade) >= GRADES.index(self.strictness)

    def lines(self) -> list[str]:
        out = [f"grade: {self.grade} (required: {self.strictness}) -> {'PASS' if self.passed else 'FAIL'}"]
        out += [f"  {c}: {g}" for c, g in self.channel_grades.items()]
        out += [f"  {d}" for d in self.deficiencies]
        return out


def _record_deficiencies(r: Record) -> list[tuple[str, str, int]]:
    """(grade cap, message, column) for one record."""
    out = []
    if r.sigma is None:
        out.append(("trend", f"{r.key}: sigma not reported", 1))
    for key in _REQUIRED_META[r.section]:
        if not r.get(key):
            out.append(("trend", f"{r.key}: '{key}' is required for third-party reproduction", 1))
    if r.section == "rho":
        if r.name not in STATISTICS.get(r.channel, ()):
            out.append(("trend", f"{r.key}: statistic {r.name!r} is not registered for {r.channel}", 1))
        elif parse_unit(r.unit)[1] != CLOSURE_TABLE[r.channel].rho:
            out.append(("invalid", f"{r.key}: units [{r.unit}] do not match the state variable "
                                   f"[{format_dim(CLOSURE_TABLE[r.channel].rho)}]", 1))
    if r.section == "o":
        proto = r.get("protocol")
        if proto and proto not in PROTOCOLS:
            out.append(("invalid", f"{r.key}: protocol {proto!r} is not one of {', '.join(PROTOCOLS)}", 1))
        if r.name in _DEPHASING and proto not in ("ramsey", "echo"):
            out.append(("invalid", f"{r.key}: dephasing data must state whether acquired via Ramsey or echo "
                                   "(protocol=ramsey|echo)", 1))
        if r.name in _FLUX_NOISE and r.get("convention") not in CONVENTIONS:
            out.append(("invalid", f"{r.key}: flux-noise amplitude needs a spectral convention tag "
                                   f"(convention={'|'.join(CONVENTIONS)})", 1))
        if r.channel.startswith("IV") and r.get("parity") != "stable" and proto != "parity-monitor":
            out.append(("trend", f"{r.key}: parity stability confirmation absent "
                                 "(parity=stable or protocol=parity-monitor)", 1))
    return out


def _cap(a: str, b: str) -> str:
    return a if GRADES.index(a) < GRADES.index(b) else b


def validate(doc: MdsDocument, strictness: str = "quantitative") -> ValidationReport:
    """Grade a dataset as invalid, trend or quantitative, listing every deficiency.

    Quantitative needs sigmas everywhere, witness provenance, solver and
    boundary descriptions, protocol context, and for quasiparticle channels a
    parity-stability confirmation. Deficiencies tied to one channel cap that
    channel's grade; the overall grade is the lowest of all.
    """
    if strictness not in GRADES[1:]:
        raise ValueError(f"strictness must be 'trend' or 'quantitative', got {strictness!r}")
    defs: list[Deficiency] = []
    overall = "quantitative"
    for s in SECTIONS:
        if not doc.section(s):
            state = "absent" if s not in doc.present else "empty"
            defs.append(Deficiency(1, 1, "invalid", None, f"{SECTION_TITLES[s]} {state} (section [{s}])"))
            overall = "invalid"
    grades = {c: "quantitative" for c in doc.channels()}
    for r in doc.records():
        for grade, msg, col in _record_deficiencies(r):
            defs.append(Deficiency(r.line, col, grade, r.channel, msg))
            grades[r.channel] = _cap(grades[r.channel], grade)
    for c in grades:
        missing = [s for s in SECTIONS if not any(r.channel == c for r in doc.section(s))]
        if missing:
            first = min(r.line for r in doc.records() if r.channel == c)
            defs.append(Deficiency(first, 1, "trend", c, f"no {', '.join(f'[{m}]' for m in missing)} record "
                                                       "for this channel"))
            grades[c] = _cap(grades[c], "trend")
    for g in grades.values():
        overall = _cap(overall, g)
    defs.sort(key=lambda d: (d.line, d.col, d.message))
    return ValidationReport(overall, grades, tuple(defs), strictness)
