"""Loss-channel registry and dimensional closure checks.

Each channel maps a state variable rho and coupling functional G through a
prefactor C onto a device-level observable O. A channel *closes* when

    dim(C) + dim(rho) + dim(G) - dim(O) == 0

exactly, with rational exponents.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping

from .errors import UnknownChannel
from .units import CONSTANTS, DIMENSIONLESS, DimVector, format_dim, parse_unit

__all__ = [
    "ChannelMeta",
    "ChannelDims",
    "ClosureReport",
    "CHANNELS",
    "CLOSURE_TABLE",
    "get_channel",
    "resolve_channels",
    "check_closure",
    "closure_chain",
]


@dataclass(frozen=True)
class ChannelMeta:
    id: str
    label: str
    primary_observable: str
    markovian: str
    caveat: str
    state_variable: str
    coupling: str
    observable: str


def _dim(unit: str) -> DimVector:
    return parse_unit(unit)[1]


@dataclass(frozen=True)
class ChannelDims:
    """Canonical dimensions of (rho, G, C, O) for one channel."""

    rho: DimVector
    g: DimVector
    c: DimVector
    o: DimVector
    units: Mapping[str, str] = field(default_factory=dict)

    @classmethod
    def from_units(cls, rho: str, g: str, c: str, o: str) -> ChannelDims:
        return cls(_dim(rho), _dim(g), _dim(c), _dim(o), {"rho": rho, "g": g, "c": c, "o": o})

    def perturbed(self, part: str, axis: int, delta: int) -> ChannelDims:
        """Copy with one exponent of ``part`` shifted by ``delta``."""
        vec = list(getattr(self, part).exponents)
        vec[axis] += delta
        kw = {k: getattr(self, k) for k in ("rho", "g", "c", "o")}
        kw[part] = DimVector(tuple(vec))
        return ChannelDims(**kw, units=self.units)


_CHANNEL_LIST = [
    ChannelMeta(
        "I-TLS", "I", "T1^-1", "Often", "Slow dielectric fluctuations.",
        "mu2 (second curvature moment)", "G_I (edge participation length)", "Q^-1",
    ),
    ChannelMeta(
        "II-Spin", "II", "Tphi^-1", "No", "Echo vs. Ramsey differ.",
        "rho_spin (surface spin density)", "G_Phi (loop-field surface integral)",
        "A_Phi in units of Phi0^2",
    ),
    ChannelMeta(
        "III-Seam", "III", "T1^-1", "Often", "Primarily relaxation.",
        "r_seam (seam resistivity)", "Y_seam (seam current participation)", "Q^-1_seam",
    ),
    ChannelMeta(
        "IVa-QPTrap", "IVa", "T1^-1", "Approx.", "Parity dynamics.",
        "n_qp (quasiparticle density, held fixed)", "C_qp*G_trap (trap capture factor)", "Gamma_qp",
    ),
    ChannelMeta(
        "IVb-QPEnv", "IVb", "T1^-1", "Approx.", "Parity dynamics.",
        "n_qp (quasiparticle density)", "C_qp*G_trap (trap capture factor, held fixed)", "Gamma_qp",
    ),
    ChannelMeta(
        "V-Phonon", "V", "T1^-1", "Unknown", "Hypothesis-level.",
        "Z_ph (acoustic state variable)", "G_ph (EM-acoustic overlap)", "Q^-1",
    ),
]

CHANNELS: Mapping[str, ChannelMeta] = MappingProxyType({c.id: c for c in _CHANNEL_LIST})

# C_II = mu_B^2 / Phi0^2 carries J^2 T^-2 Wb^-2, so A_Phi comes out as a
# pure number counting Phi0^2.
# For IV the capture prefactor is folded into G (jointly m^3/s), C is 1.
_QP = ChannelDims.from_units("m^-3", "m^3/s", "1", "s^-1")
CLOSURE_TABLE: Mapping[str, ChannelDims] = MappingProxyType({
    "I-TLS": ChannelDims.from_units("m^-2", "m^2", "1", "1"),
    "II-Spin": ChannelDims.from_units("m^-2", "T^2*A^-2*m^2", "J^2*T^-2*Wb^-2", "1"),
    "III-Seam": ChannelDims.from_units("Ohm*m", "S/m", "1", "1"),
    "IVa-QPTrap": _QP,
    "IVb-QPEnv": _QP,
    "V-Phonon": ChannelDims.from_units("1", "1", "1", "1"),
})

_ALIASES = {
    "I": ("I-TLS",), "TLS": ("I-TLS",),
    "II": ("II-Spin",), "SPIN": ("II-Spin",),
    "III": ("III-Seam",), "SEAM": ("III-Seam",),
    "IV": ("IVa-QPTrap", "IVb-QPEnv"), "QP": ("IVa-QPTrap", "IVb-QPEnv"),
    "IVA": ("IVa-QPTrap",), "IVB": ("IVb-QPEnv",),
    "V": ("V-Phonon",), "PHONON": ("V-Phonon",),
}


def resolve_channels(name: str) -> tuple[str, ...]:
    """Channel ids matching a full id or a short alias (``"IV"`` gives both halves)."""
    if name in CHANNELS:
        return (name,)
    for cid in CHANNELS:
        if cid.upper() == name.upper():
            return (cid,)
    try:
        return _ALIASES[name.upper()]
    except KeyError:
        raise UnknownChannel(f"unknown channel {name!r}") from None


def get_channel(name: str) -> ChannelMeta:
    ids = resolve_channels(name)
    if len(ids) != 1:
        raise UnknownChannel(f"channel alias {name!r} is ambiguous: {', '.join(ids)}")
    return CHANNELS[ids[0]]


@dataclass(frozen=True)
class ClosureReport:
    channel: str
    passed: bool
    residual: DimVector
    dims: ChannelDims

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{self.channel}: {status} (residual [{format_dim(self.residual)}])"


def check_closure(channel: ChannelMeta | str, table: Mapping[str, ChannelDims] = CLOSURE_TABLE) -> ClosureReport:
    cid = channel.id if isinstance(channel, ChannelMeta) else channel
    if cid not in table and cid not in CHANNELS:
        cid = get_channel(cid).id
    if cid not in table:
        raise UnknownChannel(f"no closure dimensions registered for channel {cid!r}")
    dims = table[cid]
    residual = dims.c + dims.rho + dims.g - dims.o
    return ClosureReport(cid, residual == DIMENSIONLESS, residual, dims)


def closure_chain(channel: ChannelMeta | str, table: Mapping[str, ChannelDims] = CLOSURE_TABLE) -> list[str]:
    """Human-readable product chain for ``units check``."""
    rep = check_closure(channel, table)
    d = rep.dims
    u = d.units
    lines = [
        f"channel {rep.channel}",
        f"  rho [{u.get('rho', '?')}] = [{format_dim(d.rho)}]",
        f"  G   [{u.get('g', '?')}] = [{format_dim(d.g)}]",
        f"  C   [{u.get('c', '?')}] = [{format_dim(d.c)}]",
        f"  rho*G       = [{format_dim(d.rho + d.g)}]",
    ]
    if rep.channel == "II-Spin":
        mu_b2 = CONSTANTS.mu_B.dim.scale(2)
        wb = CONSTANTS.Phi0.dim
        lines.append(f"  rho*G*mu_B^2 = [{format_dim(d.rho + d.g + mu_b2)}] = Wb^2"
                     if d.rho + d.g + mu_b2 == wb.scale(2)
                     else f"  rho*G*mu_B^2 = [{format_dim(d.rho + d.g + mu_b2)}]")
        lines.append("  / Phi0^2    -> count of Phi0^2")
    lines.append(f"  C*rho*G     = [{format_dim(d.c + d.rho + d.g)}]")
    lines.append(f"  O   [{u.get('o', '?')}] = [{format_dim(d.o)}]")
    lines.append(f"  residual    = [{format_dim(rep.residual)}] -> {'PASS' if rep.passed else 'FAIL'}")
    return lines
