from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from prescriptor.errors import DimensionError
from prescriptor.lab import (
    DefectSet,
    GridDefectField,
    KernelField,
    cell_rng,
    compare,
    dilution_sweep,
    factorized,
    golden_rule_sum,
    kernel_observable,
    poisson_defects,
    separability_deltas,
    sweep_csv,
    synthesize_defects,
)
from prescriptor.units import CONSTANTS, Quantity, q

shapes = st.tuples(st.integers(1, 6), st.integers(1, 6))


def _kernel(shape, seed=0):
    rng = np.random.default_rng(seed)
    return KernelField(rng.random(shape), (0.5, 2.0), (1.0, -1.0))


def test_uniform_field_gives_rho_times_integral():
    k = KernelField.edge_exponential((10, 10), (1.0, 1.0), 2.0)
    d = GridDefectField.like(k, 0.3)
    assert kernel_observable(d, k).value == pytest.approx(0.3 * k.integral(), rel=1e-15)


def test_defects_where_kernel_vanishes():
    K = np.zeros((4, 4))
    K[0, 0] = 1.0
    k = KernelField(K, (1, 1), (0, 0))
    d = np.zeros((4, 4))
    d[2:, 2:] = 5.0
    assert kernel_observable(GridDefectField(d, (1, 1), (0, 0)), k).value == 0.0


def test_cluster_on_hotspot_beats_uniform():
    # kernel hotspot at one corner; two clusters of equal total defect content
    K = np.ones((6, 6))
    K[0, 0] = K[0, 1] = 10.0
    k = KernelField(K, (1, 1), (0, 0))
    d = np.zeros((6, 6))
    d[0, 0] = d[0, 1] = 9.0
    d[5, 5] = d[5, 4] = 9.0
    clustered = kernel_observable(GridDefectField(d, (1, 1), (0, 0)), k).value
    uniform = kernel_observable(GridDefectField.like(k, d.mean()), k).value
    # clustered: 9*10*2 + 9*2 = 198; uniform: 1 * (34 + 20) = 54
    assert clustered == pytest.approx(198.0)
    assert uniform == pytest.approx(54.0)
    assert clustered > uniform


def test_grid_mismatch_rejected():
    k = KernelField.uniform((3, 3), (1, 1))
    with pytest.raises(ValueError, match="different grids"):
        kernel_observable(GridDefectField(np.ones((3, 3)), (1, 2), (0, 0)), k)


@given(shapes, st.floats(0.01, 10), st.floats(0.01, 10), st.integers(0, 2**16))
def test_bilinear(shape, a, b, seed):
    rng = np.random.default_rng(seed)
    k1, k2 = _kernel(shape, seed), _kernel(shape, seed + 1)
    d1 = GridDefectField(rng.random(shape), k1.spacing, k1.origin)
    d2 = GridDefectField(rng.random(shape), k1.spacing, k1.origin)
    dsum = GridDefectField(a * d1.d + b * d2.d, k1.spacing, k1.origin)
    lhs = kernel_observable(dsum, k1).value
    rhs = a * kernel_observable(d1, k1).value + b * kernel_observable(d2, k1).value
    assert lhs == pytest.approx(rhs, rel=1e-12)
    ksum = KernelField(a * k1.K + b * k2.K, k1.spacing, k1.origin)
    lhs = kernel_observable(d1, ksum).value
    rhs = a * kernel_observable(d1, k1).value + b * kernel_observable(d1, k2).value
    assert lhs == pytest.approx(rhs, rel=1e-12)


@given(shapes, st.integers(0, 2**16))
def test_golden_sum_equals_grid_quadrature_at_centroids(shape, seed):
    k = _kernel(shape, seed)
    d = GridDefectField(np.random.default_rng(seed).random(shape), k.spacing, k.origin)
    assert golden_rule_sum(d.as_defects(), k).value == pytest.approx(kernel_observable(d, k).value, rel=1e-13)


def test_single_and_repeated_defects():
    k = KernelField(np.array([[1.0, 4.0], [2.0, 3.0]]), (1, 1), (0, 0))
    one = DefectSet(np.array([[0.5, 1.5]]), np.array([2.5]))
    assert golden_rule_sum(one, k).value == pytest.approx(2.5 * 4.0)
    many = DefectSet(np.repeat(one.positions, 7, axis=0), np.full(7, 2.5))
    assert golden_rule_sum(many, k).value == pytest.approx(7 * 2.5 * 4.0)


def test_defect_outside_domain():
    k = KernelField.uniform((2, 2), (1, 1))
    with pytest.raises(ValueError, match="outside"):
        golden_rule_sum(DefectSet(np.array([[2.5, 0.5]]), np.array([1.0])), k)
    # the far boundary belongs to the last cell
    assert golden_rule_sum(DefectSet(np.array([[2.0, 2.0]]), np.array([1.0])), k).value == 1.0


def test_poisson_deviation_scales_as_inverse_sqrt_n():
    # rel. deviation of the golden sum from rho*G has sd sqrt(int K^2)/(sqrt(lambda) int K)
    k = KernelField.edge_exponential((20, 20), (1.0, 1.0), 3.0)
    V = k.domain_volume
    K2 = float(np.sum(k.K**2) * k.cell_volume)
    G = k.integral()
    for n_target in (1000, 4000):
        lam = n_target / V
        devs = []
        for seed in range(300):
            d = poisson_defects(k, lam, np.random.default_rng(seed))
            devs.append(golden_rule_sum(d, k).value / (lam * G) - 1)
        expect = np.sqrt(K2 / lam) / G
        assert np.std(devs) == pytest.approx(expect, rel=0.12)


def test_factorized_zero_and_propagation():
    assert factorized(Quantity(0.0), Quantity(5.0)).value == 0
    f = factorized(q(2, 0.2, "m^-2"), q(3, 0.3, "m^2"), q(1e-3))
    assert f.value == pytest.approx(6e-3)
    assert f.sigma == pytest.approx(6e-3 * np.sqrt(0.02))


def test_factorized_spin_channel_counts_flux_quanta():
    mu_b, phi0 = CONSTANTS.mu_B, CONSTANTS.Phi0
    rho = q(5e17, 0, "m^-2")
    g = q(3.2e-30, 0, "T^2*A^-2*m^2")
    c = mu_b * mu_b / (phi0 * phi0)
    a_phi = factorized(rho, g, c, channel="II")
    assert a_phi.dim.is_dimensionless
    flux2 = rho * g * mu_b * mu_b
    assert flux2.dim == (phi0 * phi0).dim
    assert a_phi.value == pytest.approx(float(flux2.value) / float(phi0.value) ** 2)


def test_factorized_rejects_wrong_dimensions():
    with pytest.raises(DimensionError):
        factorized(q(1, 0, "m^-3"), q(1, 0, "m^2"), channel="I")


@given(shapes, st.floats(1e-3, 1e3), st.integers(0, 2**16))
def test_uniform_field_factorizes_exactly(shape, rho, seed):
    k = _kernel(shape, seed)
    exact = kernel_observable(GridDefectField.like(k, rho), k)
    fact = factorized(Quantity(rho), Quantity(k.integral()))
    assert abs(exact.value - fact.value) <= 1e-12 * abs(exact.value)


@pytest.mark.parametrize(
    "rho, g, dr, dg",
    [([2.0, 2.0], [1.0, 1.0], 0.0, 0.0), ([2.0, 2.1], [1.0, 1.0], 0.05, 0.0), ([1.0, 0.8, 1.1], [4.0, 5.0], 0.2, 0.25)],
)
def test_separability_deltas(rho, g, dr, dg):
    out = separability_deltas(rho, g)
    assert (out.delta_rho, out.delta_g) == pytest.approx((dr, dg))


def test_separability_flag_boundary():
    t = 0.1
    at = 1.0 + t
    above = np.nextafter(at, 2.0)
    below = np.nextafter(at, 0.0)
    assert separability_deltas([1.0, 1.0], [1.0, below], t).flag_g is False
    assert separability_deltas([1.0, 1.0], [1.0, above], t).flag_g is True
    assert separability_deltas([1.0, above], [1.0, 1.0], t).flag_rho is True


def test_separability_errors():
    with pytest.raises(ZeroDivisionError):
        separability_deltas([0.0, 1.0], [1.0, 1.0])
    with pytest.raises(ValueError):
        separability_deltas([1.0], [1.0, 1.0])
    with pytest.raises(DimensionError):
        separability_deltas([q(1, 0, "m"), q(1, 0, "s")], [1.0, 1.0])


def test_sweep_single_cell_wraps_golden_sum():
    k = KernelField.edge_exponential((12, 12), (1, 1), 2.0)
    (row,) = dilution_sweep([0.5], [0.3], k, [9])
    defects = synthesize_defects(k, 0.5, 0.3, 9)
    assert row.o_exact == golden_rule_sum(defects, k).value
    assert row.n_defects == len(defects)


def test_sweep_order_independent_and_parallel_identical():
    k = KernelField.edge_exponential((10, 10), (1, 1), 2.0)
    a = dilution_sweep([0.2, 1.0], [0.0, 0.5], k, [0, 1])
    b = dilution_sweep([1.0, 0.2], [0.5, 0.0], k, [1, 0])
    assert sorted(a, key=lambda r: (r.density, r.correlation, r.seed)) == \
        sorted(b, key=lambda r: (r.density, r.correlation, r.seed))
    assert dilution_sweep([0.2, 1.0], [0.0, 0.5], k, [0, 1], workers=2) == a


def test_sweep_rel_error_falls_with_density():
    k = KernelField.edge_exponential((32, 32), (1, 1), 2.0)
    rows = dilution_sweep([0.05, 0.2, 1.0, 5.0], [0.0], k, [0, 1, 2, 3, 4])
    n = np.array([r.n_defects for r in rows], float)
    err = np.array([r.rel_error for r in rows])
    assert np.polyfit(n, err, 1)[0] < 0
    assert np.polyfit(np.log(n), np.log(err), 1)[0] < 0


def test_maximal_clustering_limit():
    k = KernelField.edge_exponential((16, 16), (1, 1), 2.0)
    limit = k.K.max() / k.mean() - 1
    for row in dilution_sweep([2.0], [1.0], k, [0, 1, 2], estimated_rho=True):
        assert row.o_exact / row.o_factorized - 1 == pytest.approx(limit, rel=1e-12)
        # relative to o_exact the same limit reads 1 - <K>/K_max
        assert row.rel_error == pytest.approx(1 - k.mean() / k.K.max(), rel=1e-12)
    true_rho = dilution_sweep([20.0], [1.0], k, [0, 1, 2, 3])
    excess = [r.o_exact / r.o_factorized - 1 for r in true_rho]
    assert np.mean(excess) == pytest.approx(limit, rel=0.1)


def test_compare_reports_both_errors():
    k = KernelField.uniform((4, 4), (1, 1), value=2.0)
    rep = compare(GridDefectField.like(k, 3.0), k)
    assert rep.rel_error == 0.0 and rep.excess == 0.0
    assert rep.delta_residual.value == 0.0


def test_cell_rng_depends_only_on_cell_values():
    a = cell_rng(3, 0.5, 0.25).random(4)
    assert np.array_equal(a, cell_rng(3, 0.5, 0.25).random(4))
    assert not np.array_equal(a, cell_rng(3, 0.5, 0.26).random(4))
    with pytest.raises(ValueError):
        cell_rng(-1, 0.5, 0.0)


def test_sweep_errors_and_csv():
    k = KernelField.uniform((4, 4), (1, 1))
    with pytest.raises(ValueError):
        dilution_sweep([], [0.0], k, [0])
    with pytest.raises(ValueError):
        dilution_sweep([1.0], [0.0], k, [])
    text = sweep_csv(dilution_sweep([1.0], [0.0], k, [0]))
    lines = text.splitlines()
    assert lines[0] == "density,correlation,seed,o_exact,o_factorized,rel_error"
    assert len(lines) == 3
