"""Monte-Carlo laboratory for the factorization of defect-kernel observables.

The exact observable sums a defect field against a coupling kernel; the
factorized observable replaces the field by its mean density. The lab
synthesizes dilute (homogeneous Poisson) and correlated (Neyman-Scott)
defect populations on a gridded kernel and measures how far the two drift
apart. Physical rate prefactors are folded into defect weights, so every
quantity here is dimensionless.
"""

from __future__ import annotations

import math
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .channels import CLOSURE_TABLE, check_closure, get_channel
from .csvio import write_table
from .errors import DimensionError
from .units import DIMENSIONLESS, Quantity

__all__ = [
    "KernelField",
    "GridDefectField",
    "DefectSet",
    "SeparabilityReport",
    "SeparabilityDeltas",
    "SweepRow",
    "kernel_observable",
    "golden_rule_sum",
    "factorized",
    "compare",
    "separability_deltas",
    "cell_rng",
    "poisson_defects",
    "neyman_scott_defects",
    "synthesize_defects",
    "dilution_sweep",
    "sweep_csv",
]


@dataclass(frozen=True)
class KernelField:
    """Coupling kernel on a regular rectilinear grid of cells."""

    K: np.ndarray
    spacing: tuple
    origin: tuple
    family: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        K = np.asarray(self.K, dtype=float)
        spacing = tuple(float(h) for h in self.spacing)
        origin = tuple(float(o) for o in self.origin)
        if len(spacing) != K.ndim or len(origin) != K.ndim:
            raise ValueError("spacing and origin must match the kernel dimensionality")
        if any(h <= 0 for h in spacing):
            raise ValueError("grid spacing must be positive")
        if np.any(K < 0):
            raise ValueError("kernel weights must be non-negative")
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @classmethod
    def uniform(cls, shape, spacing, origin=None, value: float = 1.0) -> KernelField:
        origin = origin if origin is not None else (0.0,) * len(shape)
        return cls(np.full(shape, float(value)), spacing, origin, "uniform", {"value": value})

    @classmethod
    def edge_exponential(cls, shape, spacing, decay_length: float, origin=None) -> KernelField:
        """K = exp(-d/decay_length), d = distance from cell centre to the nearest face."""
        if decay_length <= 0:
            raise ValueError("decay length must be positive")
        origin = origin if origin is not None else (0.0,) * len(shape)
        proto = cls(np.zeros(shape), spacing, origin)
        lo, hi = proto.bounds
        centers = proto.centers.reshape(*shape, len(shape))
        dist = np.minimum(centers - lo, hi - centers).min(axis=-1)
        return cls(np.exp(-dist / decay_length), spacing, origin, "edge-exponential",
                   {"decay_length": decay_length})

    @property
    def shape(self) -> tuple:
        return self.K.shape

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.asarray(self.origin)
        return lo, lo + np.asarray(self.spacing) * np.asarray(self.shape)

    @property
    def domain_volume(self) -> float:
        return self.cell_volume * self.K.size

    @property
    def centers(self) -> np.ndarray:
        """Cell centres in C order, shape (N, ndim)."""
        axes = [o + (np.arange(n) + 0.5) * h for o, h, n in zip(self.origin, self.spacing, self.shape)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def integral(self) -> float:
        """sum K * cell volume (the factorized coupling functional)."""
        return math.fsum(self.K.ravel() * self.cell_volume)

    def mean(self) -> float:
        return self.integral() / self.domain_volume

    def argmax_center(self) -> np.ndarray:
        return self.centers[int(np.argmax(self.K.ravel()))]

    def value_at(self, positions: np.ndarray) -> np.ndarray:
        pos = np.atleast_2d(np.asarray(positions, dtype=float))
        lo, hi = self.bounds
        if pos.shape[1] != self.K.ndim:
            raise ValueError("position dimensionality does not match the kernel")
        outside = np.any((pos < lo) | (pos > hi), axis=1)
        if outside.any():
            i = int(np.nonzero(outside)[0][0])
            raise ValueError(f"defect {i} at {pos[i].tolist()} lies outside the kernel domain")
        idx = np.floor((pos - lo) / np.asarray(self.spacing)).astype(int)
        idx = np.minimum(idx, np.asarray(self.shape) - 1)
        return self.K[tuple(idx.T)]

    def same_grid(self, other) -> bool:
        return (self.shape == other.shape and self.spacing == other.spacing
                and self.origin == other.origin)


@dataclass(frozen=True)
class GridDefectField:
    """Local defect density on the same cells as a kernel."""

    d: np.ndarray
    spacing: tuple
    origin: tuple

    def __post_init__(self):
        d = np.asarray(self.d, dtype=float)
        if np.any(d < 0):
            raise ValueError("defect density must be non-negative")
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "spacing", tuple(float(h) for h in self.spacing))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))

    @property
    def shape(self) -> tuple:
        return self.d.shape

    @classmethod
    def like(cls, kernel: KernelField, d) -> GridDefectField:
        return cls(np.broadcast_to(np.asarray(d, dtype=float), kernel.shape).copy(), kernel.spacing, kernel.origin)

    def mean(self) -> float:
        return float(np.mean(self.d))

    def as_defects(self) -> DefectSet:
        """Discrete defects at cell centres with weight d * cell volume."""
        proto = KernelField(np.zeros(self.shape), self.spacing, self.origin)
        return DefectSet(proto.centers, self.d.ravel() * proto.cell_volume)


@dataclass(frozen=True)
class DefectSet:
    """Discrete defects with per-defect coupling weights (prefactors folded in)."""

    positions: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).ravel()
        pos = np.asarray(self.positions, dtype=float).reshape(len(w), -1) if len(w) else np.zeros((0, 0))
        if np.any(w < 0):
            raise ValueError("defect weights must be non-negative")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return len(self.weights)


DefectField = Union[GridDefectField, DefectSet]


def kernel_observable(d: GridDefectField, k: KernelField) -> Quantity:
    """Midpoint quadrature of the defect-kernel overlap, sum d K dV."""
    if not k.same_grid(d):
        raise ValueError("defect field and kernel are defined on different grids")
    return Quantity(math.fsum((d.d * k.K).ravel() * k.cell_volume), 0.0, DIMENSIONLESS)


def golden_rule_sum(defects: DefectSet, k: KernelField) -> Quantity:
    """Sum over defects of weight times the kernel at the defect's cell."""
    if len(defects) == 0:
        return Quantity(0.0)
    return Quantity(math.fsum(defects.weights * k.value_at(defects.positions)), 0.0, DIMENSIONLESS)


def factorized(rho: Quantity, g: Quantity, c: Optional[Quantity] = None, channel: Optional[str] = None) -> Quantity:
    """Leading-order observable C * rho * G with propagated sigma.

    When ``channel`` is given the operand dimensions must match the
    channel's registered closure dimensions.
    """
    if c is None:
        c = Quantity(1)
    if channel is not None:
        cid = get_channel(channel).id
        dims = CLOSURE_TABLE[cid]
        for name, got, want in (("rho", rho.dim, dims.rho), ("G", g.dim, dims.g), ("C", c.dim, dims.c)):
            if got != want:
                raise DimensionError(f"{cid}: {name} carries [{got}], expected [{want}]")
        if not check_closure(cid).passed:
            raise DimensionError(f"{cid}: dimensional closure fails")
    return c * rho * g


@dataclass(frozen=True)
class SeparabilityReport:
    o_exact: Quantity
    o_factorized: Quantity
    delta_residual: Quantity
    rel_error: float
    excess: float
    n_defects: Optional[int] = None


def _report(o_exact: Quantity, o_fact: Quantity, n=None) -> SeparabilityReport:
    ex, fa = float(o_exact.value), float(o_fact.value)
    rel = abs(ex - fa) / abs(ex) if ex != 0 else math.nan
    excess = ex / fa - 1.0 if fa != 0 else math.nan
    return SeparabilityReport(o_exact, o_fact, o_exact - o_fact, rel, excess, n)


def compare(defects: DefectField, kernel: KernelField, rho: Optional[float] = None) -> SeparabilityReport:
    """Exact vs factorized observable for one defect realisation.

    ``rho`` is the mean defect density used in the factorized form; when
    omitted it is estimated from the realisation itself.
    """
    if isinstance(defects, GridDefectField):
        exact = kernel_observable(defects, kernel)
        rho_est = defects.mean()
        n = None
    else:
        exact = golden_rule_sum(defects, kernel)
        rho_est = math.fsum(defects.weights) / kernel.domain_volume
        n = len(defects)
    rho_q = Quantity(rho_est if rho is None else rho)
    return _report(exact, factorized(rho_q, Quantity(kernel.integral())), n)


@dataclass(frozen=True)
class SeparabilityDeltas:
    delta_rho: float
    delta_g: float
    flag_rho: bool
    flag_g: bool
    threshold: float

    @property
    def controlled(self) -> bool:
        return not (self.flag_rho or self.flag_g)


def _max_frac_dev(values: Sequence, what: str) -> float:
    if len(values) < 2:
        raise ValueError(f"{what} needs at least 2 entries")
    vals = list(values)
    if all(isinstance(v, Quantity) for v in vals):
        if any(v.dim != vals[0].dim for v in vals):
            raise DimensionError(f"{what} entries carry different dimensions")
        vals = [float(v.value) for v in vals]
    base = float(vals[0])
    if base == 0:
        raise ZeroDivisionError(f"{what} baseline is zero")
    return max(abs(float(v) - base) / abs(base) for v in vals[1:])


def separability_deltas(rho_by_geometry: Sequence, g_by_chemistry: Sequence, threshold: float = 0.1) -> SeparabilityDeltas:
    """Largest fractional shift of rho across geometries and of G across chemistries.

    The first entry of each list is the baseline; a flag is raised when a
    shift exceeds ``threshold`` strictly.
    """
    dr = _max_frac_dev(rho_by_geometry, "rho_by_geometry")
    dg = _max_frac_dev(g_by_chemistry, "g_by_chemistry")
    return SeparabilityDeltas(dr, dg, dr > threshold, dg > threshold, threshold)


# ---------------------------------------------------------------------------
# defect synthesis


def _words(x: float) -> list[int]:
    return list(struct.unpack("<II", struct.pack("<d", float(x))))


def cell_rng(seed: int, density: float, correlation: float) -> np.random.Generator:
    """Generator keyed only on the cell's (seed, density, correlation) values."""
    if seed < 0:
        raise ValueError("seed must be non-negative")
    return np.random.default_rng(np.random.SeedSequence([int(seed), *_words(density), *_words(correlation)]))


def poisson_defects(kernel: KernelField, intensity: float, rng: np.random.Generator, weight: float = 1.0) -> DefectSet:
    """Homogeneous Poisson defects with ``intensity`` per unit volume."""
    lo, hi = kernel.bounds
    n = rng.poisson(intensity * kernel.domain_volume)
    pos = lo + rng.random((n, len(lo))) * (hi - lo)
    return DefectSet(pos, np.full(n, float(weight)))


def neyman_scott_defects(kernel: KernelField, intensity: float, correlation: float, rng: np.random.Generator,
                         weight: float = 1.0, cluster_size: float = 10.0, cluster_scale: float = 0.05) -> DefectSet:
    """Clustered defects with the same mean intensity as the Poisson case.

    Parents arrive at ``intensity / cluster_size``; each parent sits on the
    kernel maximum with probability ``correlation`` and is uniform otherwise.
    Daughters (Poisson, mean ``cluster_size``) scatter with a Gaussian of
    width ``(1 - correlation) * cluster_scale * min side`` and wrap
    periodically into the domain. ``correlation = 1`` piles every defect
    onto the kernel maximum.
    """
    if not 0 <= correlation <= 1:
        raise ValueError("correlation must lie in [0, 1]")
    lo, hi = kernel.bounds
    side = hi - lo
    n_par = rng.poisson(intensity * kernel.domain_volume / cluster_size)
    at_hot = rng.random(n_par) < correlation
    parents = lo + rng.random((n_par, len(lo))) * side
    parents[at_hot] = kernel.argmax_center()
    counts = rng.poisson(cluster_size, size=n_par)
    centers = np.repeat(parents, counts, axis=0)
    width = (1.0 - correlation) * cluster_scale * float(side.min())
    pos = centers + rng.normal(0.0, 1.0, centers.shape) * width
    pos = lo + np.mod(pos - lo, side)
    return DefectSet(pos, np.full(len(pos), float(weight)))


def synthesize_defects(kernel: KernelField, density: float, correlation: float, seed: int,
                       weight: float = 1.0, cluster_size: float = 10.0, cluster_scale: float = 0.05) -> DefectSet:
    rng = cell_rng(seed, density, correlation)
    if correlation == 0:
        return poisson_defects(kernel, density, rng, weight)
    return neyman_scott_defects(kernel, density, correlation, rng, weight, cluster_size, cluster_scale)


@dataclass(frozen=True)
class SweepRow:
    density: float
    correlation: float
    seed: int
    n_defects: int
    o_exact: float
    o_factorized: float
    rel_error: float


def _run_cell(args) -> SweepRow:
    kernel, density, corr, seed, weight, estimated, cluster_size, cluster_scale = args
    defects = synthesize_defects(kernel, density, corr, seed, weight, cluster_size, cluster_scale)
    rho = None if estimated else density * weight
    rep = compare(defects, kernel, rho)
    return SweepRow(density, corr, seed, len(defects), float(rep.o_exact.value),
                    float(rep.o_factorized.value), rep.rel_error)


def dilution_sweep(density_levels: Sequence[float], correlation_levels: Sequence[float], kernel: KernelField,
                   seeds: Sequence[int], weight: float = 1.0, estimated_rho: bool = False,
                   cluster_size: float = 10.0, cluster_scale: float = 0.05,
                   workers: Optional[int] = None) -> list[SweepRow]:
    """Factorization error over a (density x correlation x seed) grid.

    The factorized observable uses the true mean density ``density * weight``
    unless ``estimated_rho`` is set. Each cell seeds its own generator from
    its values, so results do not depend on evaluation order or ``workers``.
    """
    if not density_levels or not correlation_levels or not seeds:
        raise ValueError("sweep needs at least one density, correlation and seed")
    if any(d <= 0 for d in density_levels):
        raise ValueError("densities must be positive")
    jobs = [(kernel, float(d), float(c), int(s), weight, estimated_rho, cluster_size, cluster_scale)
            for d in density_levels for c in correlation_levels for s in seeds]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_cell, jobs))
    return [_run_cell(j) for j in jobs]


def sweep_csv(rows: Sequence[SweepRow]) -> str:
    header = ["density", "correlation", "seed", "o_exact", "o_factorized", "rel_error"]
    units = ["1/volume", "1", "1", "1", "1", "1"]
    return write_table(header, units, ((r.density, r.correlation, str(r.seed), r.o_exact, r.o_factorized,
                                        r.rel_error) for r in rows))
