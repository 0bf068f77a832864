"""Dimension-checked scalar quantities with first-order uncertainty.

Every state variable, coupling functional, prefactor and observable in the
package travels as a :class:`Quantity`: a value in SI base units, a standard
uncertainty, and a :class:`DimVector` of rational exponents over the seven SI
base dimensions.

Uncertainties combine linearly (first order) and inputs are treated as
uncorrelated. Values may be ``int``/``Fraction`` and stay exact through
``*``, ``/``, ``+`` and ``-`` as long as every operand is exact, which the
budget module relies on.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Rational, Real
from typing import Union

import scipy.constants as _sc

from .errors import DimensionError, UnitParseError

__all__ = [
    "BASE_SYMBOLS",
    "DimVector",
    "Quantity",
    "Constants",
    "CONSTANTS",
    "DIMENSIONLESS",
    "parse_unit",
    "parse_quantity",
    "parse_amount",
    "format_dim",
    "q",
    "q_mul",
    "q_exp",
    "t2_decompose",
]

Number = Union[int, float, Fraction]

BASE_SYMBOLS = ("m", "kg", "s", "A", "K", "mol", "cd")


def _frac(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, str):
        return Fraction(x)
    raise TypeError(f"dimension exponent must be rational, got {type(x).__name__}")


@dataclass(frozen=True)
class DimVector:
    """Exponents over (length, mass, time, current, temperature, amount, luminosity)."""

    exponents: tuple = (0, 0, 0, 0, 0, 0, 0)

    def __post_init__(self):
        exps = tuple(_frac(e) for e in self.exponents)
        if len(exps) != 7:
            raise ValueError("DimVector needs exactly 7 exponents")
        object.__setattr__(self, "exponents", exps)

    @classmethod
    def of(cls, **powers) -> DimVector:
        """Build from keyword exponents, e.g. ``DimVector.of(m=-2)``."""
        exps = [Fraction(0)] * 7
        for sym, p in powers.items():
            if sym not in BASE_SYMBOLS:
                raise KeyError(f"unknown base symbol {sym!r}")
            exps[BASE_SYMBOLS.index(sym)] = _frac(p)
        return cls(tuple(exps))

    def __add__(self, other: DimVector) -> DimVector:
        return DimVector(tuple(a + b for a, b in zip(self.exponents, other.exponents)))

    def __sub__(self, other: DimVector) -> DimVector:
        return DimVector(tuple(a - b for a, b in zip(self.exponents, other.exponents)))

    def __neg__(self) -> DimVector:
        return DimVector(tuple(-a for a in self.exponents))

    def scale(self, k) -> DimVector:
        k = _frac(k)
        return DimVector(tuple(a * k for a in self.exponents))

    @property
    def is_dimensionless(self) -> bool:
        return all(e == 0 for e in self.exponents)

    def __str__(self) -> str:
        return format_dim(self)


DIMENSIONLESS = DimVector()


def _fmt_exp(e: Fraction) -> str:
    if e.denominator == 1:
        return str(e.numerator)
    return f"({e.numerator}/{e.denominator})"


def format_dim(dim: DimVector) -> str:
    """SI base-unit string such as ``kg*m^2*s^-2``; ``1`` when dimensionless."""
    # display order puts mass first, the way units are usually written
    order = (1, 0, 2, 3, 4, 5, 6)
    parts = []
    for i in order:
        e = dim.exponents[i]
        if e == 0:
            continue
        sym = BASE_SYMBOLS[i]
        parts.append(sym if e == 1 else f"{sym}^{_fmt_exp(e)}")
    return "*".join(parts) if parts else "1"


# ---------------------------------------------------------------------------
# unit registry


def _d(**kw) -> DimVector:
    return DimVector.of(**kw)


_PHI0 = _sc.physical_constants["mag. flux quantum"][0]

# symbol -> (scale to SI, dimension); scale values are exact where possible
_UNITS: dict[str, tuple[Number, DimVector]] = {
    "1": (1, DIMENSIONLESS),
    "rad": (1, DIMENSIONLESS),
    "m": (1, _d(m=1)),
    "g": (Fraction(1, 1000), _d(kg=1)),
    "s": (1, _d(s=1)),
    "min": (60, _d(s=1)),
    "h": (3600, _d(s=1)),
    "A": (1, _d(A=1)),
    "K": (1, _d(K=1)),
    "mol": (1, _d(mol=1)),
    "cd": (1, _d(cd=1)),
    "Hz": (1, _d(s=-1)),
    "N": (1, _d(kg=1, m=1, s=-2)),
    "Pa": (1, _d(kg=1, m=-1, s=-2)),
    "J": (1, _d(kg=1, m=2, s=-2)),
    "W": (1, _d(kg=1, m=2, s=-3)),
    "C": (1, _d(A=1, s=1)),
    "V": (1, _d(kg=1, m=2, s=-3, A=-1)),
    "F": (1, _d(kg=-1, m=-2, s=4, A=2)),
    "Ohm": (1, _d(kg=1, m=2, s=-3, A=-2)),
    "S": (1, _d(kg=-1, m=-2, s=3, A=2)),
    "Wb": (1, _d(kg=1, m=2, s=-2, A=-1)),
    "T": (1, _d(kg=1, s=-2, A=-1)),
    "H": (1, _d(kg=1, m=2, s=-2, A=-2)),
    "eV": (_sc.e, _d(kg=1, m=2, s=-2)),
    "Phi0": (_PHI0, _d(kg=1, m=2, s=-2, A=-1)),
}
_ALIASES = {"Ω": "Ohm", "ohm": "Ohm", "Φ0": "Phi0", "Φ₀": "Phi0", "sec": "s"}
# "kg" carries its own prefix; everything else may take one
_UNITS["kg"] = (1, _d(kg=1))
_NO_PREFIX = {"1", "kg", "min", "h", "rad"}

_PREFIXES: dict[str, Number] = {
    "T": 10**12,
    "G": 10**9,
    "M": 10**6,
    "k": 10**3,
    "c": Fraction(1, 10**2),
    "m": Fraction(1, 10**3),
    "u": Fraction(1, 10**6),
    "µ": Fraction(1, 10**6),
    "μ": Fraction(1, 10**6),
    "n": Fraction(1, 10**9),
    "p": Fraction(1, 10**12),
    "f": Fraction(1, 10**15),
}

_FACTOR_RE = re.compile(r"^(?P<sym>[A-Za-zΩΦ₀µμ0-9]+?)(?:\^(?P<exp>-?\d+|\(-?\d+/\d+\)))?$")


def _resolve_symbol(sym: str) -> tuple[Number, DimVector]:
    sym = _ALIASES.get(sym, sym)
    if sym in _UNITS:
        return _UNITS[sym]
    for pre, mult in _PREFIXES.items():
        if sym.startswith(pre):
            rest = _ALIASES.get(sym[len(pre):], sym[len(pre):])
            if rest in _UNITS and rest not in _NO_PREFIX:
                scale, dim = _UNITS[rest]
                return mult * scale, dim
    raise UnitParseError(f"unknown unit {sym!r}")


def parse_unit(text: str) -> tuple[Number, DimVector]:
    """Resolve a unit expression to ``(scale_to_SI, DimVector)``.

    Factors are joined by ``*`` and ``/``; a ``/`` inverts only the factor
    that follows it. Exponents are integers or parenthesised fractions::

        parse_unit("T^2*A^-2*m^2")
        parse_unit("m^3/s")
        parse_unit("us")
    """
    text = text.strip()
    if not text:
        raise UnitParseError("empty unit")
    scale: Number = 1
    dim = DIMENSIONLESS
    # operators inside a parenthesised exponent are part of the exponent
    tokens = re.split(r"([*/])(?![^(]*\))", text.replace(" ", ""))
    sign = 1
    expect_factor = True
    for tok in tokens:
        if tok in ("*", "/"):
            if expect_factor:
                raise UnitParseError(f"dangling operator in unit {text!r}")
            sign = -1 if tok == "/" else 1
            expect_factor = True
            continue
        if not tok:
            raise UnitParseError(f"malformed unit {text!r}")
        m = _FACTOR_RE.match(tok)
        if m is None:
            raise UnitParseError(f"malformed unit factor {tok!r}")
        exp = Fraction(m.group("exp").strip("()")) if m.group("exp") else Fraction(1)
        exp *= sign
        s, d = _resolve_symbol(m.group("sym"))
        if exp.denominator == 1:
            scale = scale * Fraction(s) ** int(exp) if isinstance(s, (int, Fraction)) else scale * s ** float(exp)
        else:
            scale = scale * float(s) ** float(exp)
        dim = dim + d.scale(exp)
        sign = 1
        expect_factor = False
    if expect_factor:
        raise UnitParseError(f"dangling operator in unit {text!r}")
    if isinstance(scale, Fraction) and scale.denominator == 1:
        scale = scale.numerator
    return scale, dim


# ---------------------------------------------------------------------------
# quantities


def _is_exact(x) -> bool:
    return isinstance(x, Rational)


@dataclass(frozen=True)
class Quantity:
    """A value in SI base units with standard uncertainty and dimension."""

    value: Number
    sigma: float = 0.0
    dim: DimVector = field(default=DIMENSIONLESS)

    def __post_init__(self):
        if not isinstance(self.value, Real):
            raise TypeError("Quantity value must be real")
        if not (self.sigma >= 0):
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")

    # arithmetic -------------------------------------------------------
    def __mul__(self, other):
        if isinstance(other, Quantity):
            return q_mul(self, other)
        if isinstance(other, Real):
            return Quantity(self.value * other, self.sigma * abs(float(other)), self.dim)
        return NotImplemented

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Quantity):
            return q_mul(self, other.reciprocal())
        if isinstance(other, Real):
            if other == 0:
                raise ZeroDivisionError("division of Quantity by zero")
            val = self.value / other if _is_exact(self.value) and _is_exact(other) else float(self.value) / float(other)
            return Quantity(val, self.sigma / abs(float(other)), self.dim)
        return NotImplemented

    def __rtruediv__(self, other):
        if isinstance(other, Real):
            return self.reciprocal() * other
        return NotImplemented

    def reciprocal(self) -> Quantity:
        if self.value == 0:
            raise ZeroDivisionError("reciprocal of zero Quantity")
        val = 1 / Fraction(self.value) if _is_exact(self.value) else 1.0 / float(self.value)
        sigma = self.sigma / float(self.value) ** 2
        return Quantity(val, sigma, -self.dim)

    def _check_same(self, other: Quantity, op: str):
        if not isinstance(other, Quantity):
            raise TypeError(f"cannot {op} Quantity and {type(other).__name__}")
        if other.dim != self.dim:
            raise DimensionError(f"cannot {op} [{self.dim}] and [{other.dim}]")

    def __add__(self, other):
        if isinstance(other, Real) and self.dim.is_dimensionless:
            other = Quantity(other)
        self._check_same(other, "add")
        return Quantity(self.value + other.value, math.hypot(self.sigma, other.sigma), self.dim)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Real) and self.dim.is_dimensionless:
            other = Quantity(other)
        self._check_same(other, "subtract")
        return Quantity(self.value - other.value, math.hypot(self.sigma, other.sigma), self.dim)

    def __rsub__(self, other):
        return (-self) + other

    def __neg__(self) -> Quantity:
        return Quantity(-self.value, self.sigma, self.dim)

    def __pow__(self, k) -> Quantity:
        k = _frac(k)
        if k.denominator == 1 and _is_exact(self.value) and (k >= 0 or self.value != 0):
            val = Fraction(self.value) ** int(k)
        else:
            val = float(self.value) ** float(k)
        if self.value == 0:
            sigma = 0.0 if k > 1 else (self.sigma if k == 1 else math.inf)
        else:
            sigma = abs(float(k) * float(val) / float(self.value)) * self.sigma
        return Quantity(val, sigma, self.dim.scale(k))

    # helpers ----------------------------------------------------------
    @property
    def rel_sigma(self) -> float:
        return self.sigma / abs(float(self.value)) if self.value else math.inf

    def to(self, unit: str) -> tuple[float, float]:
        """Value and sigma expressed in ``unit`` (which must match dimension)."""
        scale, dim = parse_unit(unit)
        if dim != self.dim:
            raise DimensionError(f"cannot express [{self.dim}] in {unit!r}")
        return float(self.value) / float(scale), self.sigma / float(scale)

    def __float__(self) -> float:
        return float(self.value)

    def __str__(self) -> str:
        return f"{float(self.value):.6g} ± {self.sigma:.2g} [{self.dim}]"


def q(value, sigma=0.0, unit: str = "1") -> Quantity:
    """Build a Quantity from a value and sigma given in ``unit``.

    >>> float(q(50, 5, "us").value)
    5e-05
    """
    scale, dim = parse_unit(unit)
    if scale == 1:
        return Quantity(value, float(sigma), dim)
    if _is_exact(value) and _is_exact(scale):
        val = Fraction(value) * scale
    else:
        val = float(value) * float(scale)
    return Quantity(val, float(sigma) * float(scale), dim)


def parse_quantity(text: str) -> Quantity:
    """Parse ``"<value> <sigma> <unit>"``; the unit may contain no spaces."""
    parts = text.split()
    if len(parts) != 3:
        raise UnitParseError(f"expected '<value> <sigma> <unit>', got {text!r}")
    return q(float(parts[0]), float(parts[1]), parts[2])


_AMOUNT_RE = re.compile(
    r"^\s*(?P<v>[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)"
    r"(?:\s*(?:±|\+/-|\s)\s*(?P<s>(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?))?"
    r"\s*(?P<u>[^\s\d.+-][^\s]*)?\s*$"
)


def parse_amount(text: str) -> Quantity:
    """Parse ``"1ms"``, ``"50 us"`` or ``"50 ± 5 us"`` keeping the value exact.

    The value is read as a decimal ``Fraction`` so that, for example,
    ``1/parse_amount("1ms")`` is exactly 1000 s^-1.
    """
    m = _AMOUNT_RE.match(text)
    if m is None:
        raise UnitParseError(f"cannot read an amount from {text!r}")
    value = Fraction(m.group("v"))
    sigma = float(m.group("s")) if m.group("s") else 0.0
    out = q(value, sigma, m.group("u") or "1")
    if isinstance(out.value, Fraction) and out.value.denominator == 1:
        out = Quantity(out.value.numerator, out.sigma, out.dim)
    return out


def q_mul(a: Quantity, b: Quantity) -> Quantity:
    """Product with first-order uncorrelated propagation.

    sigma^2 = (sigma_a * b)^2 + (sigma_b * a)^2
    """
    if _is_exact(a.value) and _is_exact(b.value):
        val = a.value * b.value
    else:
        val = float(a.value) * float(b.value)
    sigma = math.hypot(a.sigma * float(b.value), b.sigma * float(a.value))
    return Quantity(val, sigma, a.dim + b.dim)


def q_exp(x: Quantity) -> Quantity:
    if not x.dim.is_dimensionless:
        raise DimensionError(f"exp() needs a dimensionless argument, got [{x.dim}]")
    v = math.exp(float(x.value))
    return Quantity(v, v * x.sigma, DIMENSIONLESS)


# ---------------------------------------------------------------------------
# constants


@dataclass(frozen=True)
class Constants:
    mu_B: Quantity
    Phi0: Quantity
    mu0: Quantity


CONSTANTS = Constants(
    mu_B=q(_sc.physical_constants["Bohr magneton"][0], 0.0, "J/T"),
    Phi0=q(_PHI0, 0.0, "Wb"),
    mu0=q(_sc.mu_0, 0.0, "T*m/A"),
)


# ---------------------------------------------------------------------------


_TIME = DimVector.of(s=1)


def t2_decompose(t1: Quantity, tphi: Quantity) -> Quantity:
    """Total coherence time from relaxation and pure dephasing.

    1/T2 = 1/(2 T1) + 1/Tphi, uncertainties propagated to first order.
    """
    for name, t in (("T1", t1), ("Tphi", tphi)):
        if t.dim != _TIME:
            raise DimensionError(f"{name} must be a time, got [{t.dim}]")
        if not t.value > 0:
            raise ValueError(f"{name} must be positive, got {t.value}")
    rate = (t1 * 2).reciprocal() + tphi.reciprocal()
    return rate.reciprocal()
