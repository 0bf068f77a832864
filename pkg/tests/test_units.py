from __future__ import annotations

import math
from fractions import Fraction

import pytest
import scipy.constants as sc
from hypothesis import given
from hypothesis import strategies as st

from prescriptor.errors import DimensionError, UnitParseError
from prescriptor.units import (
    CONSTANTS,
    DIMENSIONLESS,
    DimVector,
    Quantity,
    format_dim,
    parse_amount,
    parse_quantity,
    parse_unit,
    q,
    t2_decompose,
)

exps = st.fractions(min_value=-4, max_value=4, max_denominator=3)
dims = st.builds(lambda *e: DimVector(tuple(e)), *([exps] * 7))


@pytest.mark.parametrize(
    "unit, scale, dim",
    [
        ("us", 1e-6, DimVector.of(s=1)),
        ("m^3/s", 1, DimVector.of(m=3, s=-1)),
        ("T^2*A^-2*m^2", 1, DimVector.of(kg=2, m=2, s=-4, A=-4)),
        ("Ohm*m", 1, DimVector.of(kg=1, m=3, s=-3, A=-2)),
        ("S/m", 1, DimVector.of(kg=-1, m=-3, s=3, A=2)),
        ("Wb", 1, DimVector.of(kg=1, m=2, s=-2, A=-1)),
        ("J/T", 1, DimVector.of(m=2, A=1)),
        ("cm^-3", 1e6, DimVector.of(m=-3)),
        ("GHz", 1e9, DimVector.of(s=-1)),
        ("m^(1/2)", 1, DimVector.of(m=Fraction(1, 2))),
        ("1", 1, DIMENSIONLESS),
    ],
)
def test_parse_unit(unit, scale, dim):
    got_scale, got_dim = parse_unit(unit)
    assert float(got_scale) == pytest.approx(scale, rel=1e-15)
    assert got_dim == dim


@pytest.mark.parametrize("bad", ["furlong", "m^", "*m", "m/", "", "m^(1/0)x"])
def test_parse_unit_rejects(bad):
    with pytest.raises(UnitParseError):
        parse_unit(bad)


def test_electron_volt_scale():
    scale, dim = parse_unit("meV")
    assert float(scale) == pytest.approx(1e-3 * sc.e)
    assert dim == DimVector.of(kg=1, m=2, s=-2)


def test_format_dim_orders_mass_first():
    assert format_dim(DimVector.of(m=2, kg=2, s=-4, A=-4)) == "kg^2*m^2*s^-4*A^-4"
    assert format_dim(DIMENSIONLESS) == "1"
    assert format_dim(DimVector.of(m=Fraction(-1, 2))) == "m^(-1/2)"


@given(dims)
def test_format_dim_round_trips(d):
    assert parse_unit(format_dim(d))[1] == d


@given(dims, dims, dims)
def test_dim_group_laws(a, b, c):
    assert (a + b) + c == a + (b + c)
    assert a + b == b + a
    assert a - a == DIMENSIONLESS
    assert a.scale(2) == a + a


def test_product_sigma_first_order():
    # (2 +- 0.1)(3 +- 0.2): sigma^2 = (0.1*3)^2 + (0.2*2)^2 = 0.25
    p = q(2, 0.1, "m^-2") * q(3, 0.2, "m^2")
    assert p.value == 6
    assert p.sigma == pytest.approx(0.5)
    assert p.dim == DIMENSIONLESS


def test_add_requires_same_dimension():
    with pytest.raises(DimensionError):
        q(1, 0, "m") + q(1, 0, "s")
    assert (q(1, 0.3, "m") + q(2, 0.4, "m")).sigma == pytest.approx(0.5)


def test_exact_values_stay_exact():
    t = parse_amount("1ms")
    assert t.value == Fraction(1, 1000)
    assert t.reciprocal().value == 1000
    assert isinstance((Quantity(Fraction(2, 5)) * Quantity(1000)).value, Fraction)


@pytest.mark.parametrize(
    "text, value, sigma, unit",
    [("1ms", 1e-3, 0.0, "s"), ("50 ± 5 us", 5e-5, 5e-6, "s"), ("50 5 us", 5e-5, 5e-6, "s"), ("7 s^-1", 7, 0, "s^-1")],
)
def test_parse_amount(text, value, sigma, unit):
    a = parse_amount(text)
    assert float(a.value) == pytest.approx(value)
    assert a.sigma == pytest.approx(sigma)
    assert a.dim == parse_unit(unit)[1]


def test_parse_quantity_and_to():
    x = parse_quantity("50 5 us")
    v, s = x.to("ms")
    assert (v, s) == pytest.approx((0.05, 0.005))
    with pytest.raises(DimensionError):
        x.to("m")


@given(st.floats(1e-6, 1e6), st.floats(0, 1e3), st.sampled_from(["um", "mm", "km", "nm"]))
def test_unit_conversion_round_trip(v, s, unit):
    x = q(v, s, unit)
    back = x.to(unit)
    assert back[0] == pytest.approx(v, rel=1e-12)
    assert back[1] == pytest.approx(s, rel=1e-12, abs=1e-300)


@given(st.floats(0.1, 10), st.floats(0.1, 10), st.floats(0, 0.5), st.floats(0, 0.5))
def test_division_inverts_multiplication(a, b, sa, sb):
    x, y = Quantity(a, sa), Quantity(b, sb)
    assert float(((x * y) / y).value) == pytest.approx(a, rel=1e-12)
    assert (x * y).sigma == pytest.approx((y * x).sigma)


def test_constants_are_codata_and_exact():
    assert float(CONSTANTS.mu_B.value) == sc.physical_constants["Bohr magneton"][0]
    assert float(CONSTANTS.Phi0.value) == pytest.approx(sc.h / (2 * sc.e), rel=1e-15)
    assert float(CONSTANTS.mu0.value) == sc.mu_0
    assert all(c.sigma == 0 for c in (CONSTANTS.mu_B, CONSTANTS.Phi0, CONSTANTS.mu0))
    assert CONSTANTS.mu_B.dim == DimVector.of(m=2, A=1)
    assert CONSTANTS.Phi0.dim == parse_unit("Wb")[1]


def test_t2_equal_times():
    # 1/T2 = 1/2 + 1 -> T2 = 2/3 s
    t2 = t2_decompose(q(1.0, 0, "s"), q(1.0, 0, "s"))
    assert float(t2.value) == pytest.approx(2 / 3)


@given(st.floats(1e-6, 1e-2), st.floats(1e-6, 1e-2), st.floats(0, 0.1), st.floats(0, 0.1))
def test_t2_matches_rate_sum_and_propagation(t1, tphi, r1, r2):
    t2 = t2_decompose(q(t1, r1 * t1, "s"), q(tphi, r2 * tphi, "s"))
    expect = 1 / (1 / (2 * t1) + 1 / tphi)
    assert float(t2.value) == pytest.approx(expect, rel=1e-12)
    # dT2/dT1 = T2^2/(2 T1^2), dT2/dTphi = T2^2/Tphi^2
    sig = math.hypot(expect**2 / (2 * t1**2) * r1 * t1, expect**2 / tphi**2 * r2 * tphi)
    assert t2.sigma == pytest.approx(sig, rel=1e-9, abs=1e-300)
    assert t2.value <= min(2 * t1, tphi)


@pytest.mark.parametrize("t1, tphi", [(q(1, 0, "m"), q(1, 0, "s")), (q(-1, 0, "s"), q(1, 0, "s"))])
def test_t2_rejects_bad_inputs(t1, tphi):
    with pytest.raises(ValueError):
        t2_decompose(t1, tphi)


def test_negative_sigma_rejected():
    with pytest.raises(ValueError):
        Quantity(1.0, -0.1)
