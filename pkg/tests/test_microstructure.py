from __future__ import annotations

import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from prescriptor.errors import DimensionError, SchemaError
from prescriptor.microstructure import (
    CurvatureTrace,
    HeightProfile,
    LossTangentModel,
    SplitRow,
    SplitSeries,
    curvature_moments,
    discriminate,
    mu2,
    mu2_bootstrap,
    read_curvature_csv,
    read_split_series_csv,
    rms_roughness,
    site_weights,
    tan_delta_eff,
)
from prescriptor.units import q

positive = st.floats(1e-3, 1e3, allow_nan=False)


def test_constant_curvature_is_exact():
    tr = CurvatureTrace.uniform_sites([2e6] * 37, L=1e-3)
    assert mu2(tr).value == pytest.approx(4e12, rel=1e-15)


def test_piecewise_constant_with_midpoint_breaks():
    # kappa = 1 on [0, L/2), 3 on [L/2, L]; sites at L/4 and 3L/4 -> (1 + 9)/2
    tr = CurvatureTrace(np.array([0.25, 0.75]), np.array([1.0, 3.0]), 1.0)
    assert mu2(tr).value == pytest.approx(5.0, rel=1e-15)


def test_irregular_sites_match_hand_weights():
    s = np.array([0.1, 0.3, 0.9])
    # cells [0, 0.2], [0.2, 0.6], [0.6, 1.0]
    tr = CurvatureTrace(s, np.array([1.0, 2.0, 4.0]), 1.0)
    assert mu2(tr).value == pytest.approx(0.2 * 1 + 0.4 * 4 + 0.4 * 16)


@given(st.lists(positive, min_size=2, max_size=40), st.floats(0.1, 10))
def test_site_weights_partition_the_perimeter(kappa, L):
    tr = CurvatureTrace.uniform_sites(kappa, L)
    w = site_weights(tr.s, 0.0, L)
    assert w.sum() == pytest.approx(L, rel=1e-12)
    assert np.all(w > 0)


@given(st.lists(positive, min_size=2, max_size=40), st.floats(0.1, 10))
def test_mu2_scales_quadratically(kappa, c):
    tr = CurvatureTrace.uniform_sites(kappa)
    scaled = CurvatureTrace.uniform_sites([c * k for k in kappa])
    assert mu2(scaled).value == pytest.approx(c**2 * mu2(tr).value, rel=1e-12)


@given(st.lists(positive, min_size=2, max_size=40))
def test_mu2_bounded_by_extremes(kappa):
    v = mu2(CurvatureTrace.uniform_sites(kappa)).value
    k2 = np.square(kappa)
    assert k2.min() * (1 - 1e-12) <= v <= k2.max() * (1 + 1e-12)


def test_moments_include_second_order():
    tr = CurvatureTrace.uniform_sites([1.0, 3.0])
    m = curvature_moments(tr)
    assert m[1].value == pytest.approx(2.0)
    assert m[2].value == pytest.approx(mu2(tr).value)


@pytest.mark.parametrize(
    "s, kappa, L",
    [([0.5], [1.0], 1.0), ([0.2, 0.1], [1, 1], 1.0), ([0.2, 1.2], [1, 1], 1.0), ([0.1, 0.2], [1], 1.0)],
)
def test_trace_validation(s, kappa, L):
    with pytest.raises(ValueError):
        CurvatureTrace(np.array(s, float), np.array(kappa, float), L)


def test_bootstrap_is_seeded(fixtures):
    tr = read_curvature_csv(fixtures / "stats" / "curvature_heavytail.csv", L=1e-3)
    a, b = mu2_bootstrap(tr, 500, seed=3), mu2_bootstrap(tr, 500, seed=3)
    assert a == b
    assert mu2_bootstrap(tr, 500, seed=4).sigma != a.sigma
    assert a.value == mu2(tr).value


def test_bootstrap_sigma_matches_standard_error():
    # for equal weights the bootstrap sd approaches sd(kappa^2)/sqrt(n)
    rng = np.random.default_rng(7)
    k = rng.lognormal(0, 0.3, 400)
    tr = CurvatureTrace.uniform_sites(k)
    est = mu2_bootstrap(tr, 4000, seed=1)
    se = np.std(k**2, ddof=0) / np.sqrt(len(k))
    assert est.sigma == pytest.approx(se, rel=0.05)


def test_bootstrap_needs_enough_resamples():
    with pytest.raises(ValueError):
        mu2_bootstrap(CurvatureTrace.uniform_sites([1.0, 2.0]), 50)


def test_rms_of_sinusoid():
    s = np.linspace(0, 1e-6, 101)
    h = 1e-9 * np.sin(2 * np.pi * s / 1e-7) + 5e-9
    r = rms_roughness(HeightProfile(s, h))
    assert r.value == pytest.approx(1e-9 / np.sqrt(2), rel=1e-12)


def test_rms_flat_is_zero():
    assert rms_roughness(HeightProfile(np.arange(5.0), np.full(5, 3.0))).value == pytest.approx(0, abs=1e-15)


def test_loss_tangent_forms():
    mu = q(1e12, 0, "m^-2")
    lin = LossTangentModel("linear", q(1e-3), q(2e-13, 0, "m^2"))
    exp = LossTangentModel("exponential", q(1e-3), q(1e-12, 0, "m^2"))
    assert tan_delta_eff(lin, mu).value == pytest.approx(1.2e-3)
    assert tan_delta_eff(exp, mu).value == pytest.approx(1e-3 * np.e)
    assert tan_delta_eff(lin, q(0, 0, "m^-2")).value == pytest.approx(1e-3)


def test_loss_tangent_dimension_checks():
    with pytest.raises(DimensionError):
        LossTangentModel("linear", q(1e-3), q(1, 0, "m"))
    with pytest.raises(DimensionError):
        tan_delta_eff(LossTangentModel("linear", q(1e-3), q(1, 0, "m^2")), q(1, 0, "m^-1"))
    with pytest.raises(ValueError):
        LossTangentModel("quadratic", q(1e-3), q(1, 0, "m^2"))


def _series(mu, rr, rate):
    rows = [SplitRow(q(m, 0.05 * m, "m^-2"), q(r, 0.05 * r, "m"), q(1 / g, 0, "s")) for m, r, g in zip(mu, rr, rate)]
    return SplitSeries(tuple(rows))


def test_discriminate_fixtures(fixtures):
    sup = discriminate(read_split_series_csv(fixtures / "stats" / "split_mu2.csv"))
    assert sup.verdict == "SUPPORTED"
    assert sup.r2_mu2 == pytest.approx(1.0, abs=1e-12)
    fal = discriminate(read_split_series_csv(fixtures / "stats" / "split_rrms.csv"))
    assert fal.verdict == "FALSIFIED"
    assert fal.r2_rms == pytest.approx(1.0, abs=1e-12)


def test_discriminate_indeterminate_when_predictors_collinear():
    rng = np.random.default_rng(11)
    mu = np.linspace(1e11, 1e12, 12)
    rr = 1e-20 * mu * (1 + 0.01 * rng.standard_normal(12))
    rate = 1000 + 1e-9 * mu * (1 + 0.2 * rng.standard_normal(12))
    rep = discriminate(_series(mu, rr, rate), n_resamples=1000)
    assert rep.verdict == "INDETERMINATE"
    assert rep.ci[0] <= 0 < rep.ci[1]


def test_discriminate_is_seeded():
    mu = np.linspace(1e11, 1e12, 8)
    rr = np.array([3, 1, 4, 1.5, 5, 9, 2, 6]) * 1e-9
    rate = 1000 + 1e-9 * mu
    a = discriminate(_series(mu, rr, rate), seed=5, n_resamples=300)
    b = discriminate(_series(mu, rr, rate), seed=5, n_resamples=300)
    assert a == b


def test_discriminate_constant_regressor():
    with pytest.raises(np.linalg.LinAlgError):
        discriminate(_series([1e11, 2e11, 4e11, 9e11], [1e-9] * 4, [1, 2, 3, 4]))


def test_split_series_warnings_and_errors():
    with pytest.raises(ValueError):
        _series([1, 2, 3], [1, 2, 3], [1, 2, 3])
    with pytest.warns(UserWarning, match="factor of 3"):
        _series([1.0, 1.2, 1.4, 1.6], [1, 2, 3, 4], [1, 2, 3, 4])
    with pytest.warns(UserWarning, match="distinct"):
        _series([1.0, 1.0, 5.0, 5.0], [1, 2, 3, 4], [1, 2, 3, 4])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        _series([1.0, 2.0, 4.0, 8.0], [1, 2, 3, 4], [1, 2, 3, 4])


def test_split_series_wrong_header():
    with pytest.raises(SchemaError, match="expected header"):
        read_split_series_csv("mu2,T1\n1,2\n")
