"""Geometry coupling functionals from ingested field and geometry samples.

Electric-field channels work on pre-computed field grids. The flux-noise
coupling uses the free-space field of the SQUID loop, so it is evaluated
directly with the closed-form Biot-Savart field of straight segments instead
of an external magnetostatic solve.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .csvio import read_columns, read_scalars
from .errors import DimensionError, SingularityError
from .units import CONSTANTS, DIMENSIONLESS, DimVector, Quantity

__all__ = [
    "DEFAULT_CLEARANCE",
    "LoopPolyline",
    "SurfacePatchGrid",
    "FieldGrid",
    "SeamTrace",
    "biot_savart",
    "g_phi",
    "y_seam",
    "q_inv_dielectric",
    "participation",
    "g_one",
    "read_loop_csv",
    "read_surface_csv",
    "read_field_grid_csv",
    "read_seam_csv",
]

DEFAULT_CLEARANCE = 1e-9  # m

MU0 = float(CONSTANTS.mu0.value)
G_PHI_DIM = DimVector.of(kg=2, m=2, s=-4, A=-4)  # T^2 A^-2 m^2
SIEMENS_PER_M = DimVector.of(kg=-1, m=-3, s=3, A=2)
AREA = DimVector.of(m=2)


@dataclass(frozen=True)
class LoopPolyline:
    vertices: np.ndarray
    closed: bool = True

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError("loop vertices must be an (n, 3) array")
        if self.closed and len(v) < 3:
            raise ValueError("a closed loop needs at least 3 vertices")
        if len(v) < 2:
            raise ValueError("a polyline needs at least 2 vertices")
        a, b = self._ends(v)
        if np.any(np.all(a == b, axis=1)):
            raise ValueError("consecutive loop vertices must be distinct")
        object.__setattr__(self, "vertices", v)

    def _ends(self, v):
        if self.closed:
            return v, np.roll(v, -1, axis=0)
        return v[:-1], v[1:]

    @property
    def segments(self) -> tuple[np.ndarray, np.ndarray]:
        return self._ends(self.vertices)

    def reversed(self) -> LoopPolyline:
        return LoopPolyline(self.vertices[::-1].copy(), self.closed)

    @classmethod
    def regular_polygon(cls, n: int, radius: float, center=(0.0, 0.0, 0.0)) -> LoopPolyline:
        """Counter-clockwise n-gon in the z = center[2] plane."""
        t = 2 * np.pi * np.arange(n) / n
        c = np.asarray(center, dtype=float)
        v = np.column_stack([radius * np.cos(t), radius * np.sin(t), np.zeros(n)]) + c
        return cls(v, closed=True)


@dataclass(frozen=True)
class SurfacePatchGrid:
    centroids: np.ndarray
    areas: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.centroids, dtype=float)
        a = np.asarray(self.areas, dtype=float)
        if c.ndim != 2 or c.shape[1] != 3 or a.shape != (len(c),):
            raise ValueError("patches need (n, 3) centroids and n areas")
        if np.any(a <= 0):
            raise ValueError("patch areas must be positive")
        object.__setattr__(self, "centroids", c)
        object.__setattr__(self, "areas", a)


@dataclass(frozen=True)
class FieldGrid:
    eps: np.ndarray
    e2: np.ndarray
    tan_delta: np.ndarray
    volume: np.ndarray
    region: np.ndarray

    def __post_init__(self):
        arrs = {k: np.asarray(getattr(self, k), dtype=float) for k in ("eps", "e2", "tan_delta", "volume")}
        region = np.asarray(self.region, dtype=object)
        n = len(region)
        if any(a.shape != (n,) for a in arrs.values()):
            raise ValueError("field grid columns must have equal length")
        if n == 0:
            raise ValueError("field grid is empty")
        for k in ("eps", "e2", "volume"):
            if np.any(arrs[k] <= 0):
                raise ValueError(f"{k} must be positive in every cell")
        if np.any(arrs["tan_delta"] < 0):
            raise ValueError("tan_delta must be non-negative")
        for k, a in arrs.items():
            object.__setattr__(self, k, a)
        object.__setattr__(self, "region", region)

    @property
    def energy(self) -> np.ndarray:
        """Per-cell eps*|E|^2*volume (twice the stored electric energy)."""
        return self.eps * self.e2 * self.volume

    @property
    def regions(self) -> list[str]:
        return sorted(set(self.region.tolist()))


@dataclass(frozen=True)
class SeamTrace:
    s: np.ndarray
    js: np.ndarray
    omega: float
    u_stored: float

    def __post_init__(self):
        s = np.asarray(self.s, dtype=float)
        js = np.asarray(self.js, dtype=float)
        if s.shape != js.shape or s.ndim != 1:
            raise ValueError("s and J_s must be 1-D arrays of equal length")
        if s.size >= 2 and np.any(np.diff(s) <= 0):
            raise ValueError("seam arclength must be strictly increasing")
        if not (self.omega > 0 and self.u_stored > 0):
            raise ValueError("omega and U_stored must be positive")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "js", js)


# ---------------------------------------------------------------------------
# magnetostatics


def _segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance from each point in ``p`` (P,3) to each segment (S,3) -> (P,S)."""
    ab = b - a
    ap = p[:, None, :] - a[None, :, :]
    t = np.clip(np.einsum("psk,sk->ps", ap, ab) / np.einsum("sk,sk->s", ab, ab), 0.0, 1.0)
    closest = a[None, :, :] + t[..., None] * ab[None, :, :]
    return np.linalg.norm(p[:, None, :] - closest, axis=2)


def _field_chunk(a, b, points, clearance, offset):
    dist = _segment_distance(points, a, b)
    bad = np.nonzero(dist.min(axis=1) < clearance)[0]
    if bad.size:
        i = int(bad[0])
        err = SingularityError(f"point {offset + i} at {points[i].tolist()} is within {clearance:g} m of the loop")
        err.index = offset + i
        raise err
    r1 = a[None, :, :] - points[:, None, :]
    r2 = b[None, :, :] - points[:, None, :]
    n1 = np.linalg.norm(r1, axis=2)
    n2 = np.linalg.norm(r2, axis=2)
    cross = np.cross(r1, r2)
    denom = n1 * n2 * (n1 * n2 + np.einsum("psk,psk->ps", r1, r2))
    # collinear points outside a segment give cross == 0 and denom > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        factor = np.where(denom > 0, (n1 + n2) / denom, 0.0)
    return (cross * factor[..., None]).sum(axis=1)


def _field_per_current(loop: LoopPolyline, points: np.ndarray, clearance: float) -> np.ndarray:
    """B/I at each of ``points`` (P,3), in T/A."""
    a, b = loop.segments
    step = max(1, 200_000 // len(a))
    out = np.empty((len(points), 3))
    for start in range(0, len(points), step):
        out[start:start + step] = _field_chunk(a, b, points[start:start + step], clearance, start)
    return MU0 / (4 * np.pi) * out


def biot_savart(loop: LoopPolyline, point, clearance: float = DEFAULT_CLEARANCE) -> np.ndarray:
    """Magnetic field per unit loop current (T/A) at ``point``.

    Sums the exact finite-segment field of every straight segment. Accepts a
    single point (3,) or an array of points (P, 3).
    """
    p = np.asarray(point, dtype=float)
    single = p.ndim == 1
    pts = p.reshape(-1, 3)
    out = _field_per_current(loop, pts, clearance)
    return out[0] if single else out


def _patch_sum(loop, centroids, areas, clearance) -> float:
    try:
        bfield = _field_per_current(loop, centroids, clearance)
    except SingularityError as exc:
        err = SingularityError(f"patch {exc.index} at {centroids[exc.index].tolist()} "
                               f"is within {clearance:g} m of the loop")
        err.index = exc.index
        raise err from None
    return math.fsum(np.einsum("pk,pk->p", bfield, bfield) * areas)


def _coarsen(centroids: np.ndarray, areas: np.ndarray):
    """Merge consecutive patch pairs into area-weighted super-patches."""
    n = len(areas) // 2 * 2
    a = areas[:n].reshape(-1, 2)
    c = centroids[:n].reshape(-1, 2, 3)
    merged_a = a.sum(axis=1)
    merged_c = (c * a[..., None]).sum(axis=1) / merged_a[:, None]
    if n < len(areas):
        merged_a = np.append(merged_a, areas[-1])
        merged_c = np.vstack([merged_c, centroids[-1:]])
    return merged_c, merged_a


def g_phi(loop: LoopPolyline, surface: SurfacePatchGrid, clearance: float = DEFAULT_CLEARANCE) -> Quantity:
    """Surface integral of |B/I|^2 over the spin-hosting surface, T^2 A^-2 m^2.

    Midpoint quadrature over the patches. Sigma is a Richardson estimate
    ``|G_fine - G_coarse| / 3`` where the coarse sum merges consecutive patch
    pairs, so patches should be listed in spatially adjacent order.
    """
    fine = _patch_sum(loop, surface.centroids, surface.areas, clearance)
    sigma = 0.0
    if len(surface.areas) >= 4:
        cc, ca = _coarsen(surface.centroids, surface.areas)
        coarse = _patch_sum(loop, cc, ca, clearance)
        sigma = abs(fine - coarse) / 3.0
    return Quantity(fine, sigma, G_PHI_DIM)


# ---------------------------------------------------------------------------
# seam and dielectric participation


def _trapezoid(y: np.ndarray, x: np.ndarray) -> float:
    return math.fsum(0.5 * (y[1:] + y[:-1]) * np.diff(x))


def y_seam(trace: SeamTrace) -> Quantity:
    """Seam participation (1/(2 omega U)) * integral |J_s|^2 ds, in S/m."""
    if trace.s.size < 2:
        raise ValueError("seam trace has zero length")
    integral = _trapezoid(trace.js**2, trace.s)
    return Quantity(integral / (2.0 * trace.omega * trace.u_stored), 0.0, SIEMENS_PER_M)


def q_inv_dielectric(grid: FieldGrid) -> Quantity:
    """Energy-weighted loss tangent sum(eps E^2 tand dV) / sum(eps E^2 dV)."""
    w = grid.energy
    den = math.fsum(w)
    if den == 0:
        raise ZeroDivisionError("field grid carries no electric energy")
    return Quantity(math.fsum(w * grid.tan_delta) / den, 0.0, DIMENSIONLESS)


def participation(grid: FieldGrid, region: str) -> Quantity:
    """Fraction of electric energy stored in cells tagged ``region``."""
    mask = grid.region == region
    if not mask.any():
        raise KeyError(f"region {region!r} not present in field grid (have {grid.regions})")
    w = grid.energy
    return Quantity(math.fsum(w[mask]) / math.fsum(w), 0.0, DIMENSIONLESS)


def g_one(grid: FieldGrid, edge_region: str, alpha: Quantity) -> Quantity:
    """Channel-I coupling G_I = p_edge * alpha (m^2).

    With C_I = tan(delta_0) the edge-region loss tan(d0) p_edge (1 + alpha mu2)
    splits into a baseline plus C_I * mu2 * G_I.
    """
    if alpha.dim != AREA:
        raise DimensionError(f"alpha must carry m^2, got [{alpha.dim}]")
    if not alpha.value > 0:
        raise ValueError("alpha must be positive")
    return participation(grid, edge_region) * alpha


# ---------------------------------------------------------------------------
# ingestion


def read_loop_csv(source, closed: bool = True) -> LoopPolyline:
    c = read_columns(source, ["x_m", "y_m", "z_m"])
    return LoopPolyline(np.column_stack([c["x_m"], c["y_m"], c["z_m"]]), closed)


def read_surface_csv(source) -> SurfacePatchGrid:
    c = read_columns(source, ["x_m", "y_m", "z_m", "area_m2"])
    return SurfacePatchGrid(np.column_stack([c["x_m"], c["y_m"], c["z_m"]]), c["area_m2"])


def read_field_grid_csv(source) -> FieldGrid:
    header = ["eps_F_per_m", "e2_V2_per_m2", "tan_delta", "vol_m3", "region"]
    c = read_columns(source, header, text_columns=["region"])
    return FieldGrid(c["eps_F_per_m"], c["e2_V2_per_m2"], c["tan_delta"], c["vol_m3"], c["region"])


def read_seam_csv(source, omega: Optional[float] = None, u_stored: Optional[float] = None,
                  sidecar=None) -> SeamTrace:
    """Seam samples plus ``omega_rad_s`` and ``U_J`` from arguments or a sidecar file."""
    c = read_columns(source, ["s_m", "Js_A_per_m"])
    if sidecar is not None:
        sc = read_scalars(sidecar)
        omega = sc["omega_rad_s"] if omega is None else omega
        u_stored = sc["U_J"] if u_stored is None else u_stored
    if omega is None or u_stored is None:
        raise ValueError("seam trace needs omega_rad_s and U_J")
    return SeamTrace(c["s_m"], c["Js_A_per_m"], float(omega), float(u_stored))
