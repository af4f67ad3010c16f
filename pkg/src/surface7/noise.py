"""Layered noise models 0-5 built from a device-parameter table.

Level k contains every error source of the levels below it:

0. no noise
1. amplitude and phase damping during idling and around gates
2. extra pure dephasing from flux noise while a transmon is fluxed (CZ, parking)
3. residual excitation at initialization and readout assignment errors
4. residual-ZZ phase errors dressing each CZ
5. CZ leakage |11> <-> |02> (qutrit sites)
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Mapping

import numpy as np

from .engine import KrausChannel, PovmElement, cz, povm_from_assignment
from .surface_code import ANCILLAS, SITES

log = logging.getLogger(__name__)

T_CZ_NS = 60.0

HIGH = ("D1", "D2")
MID = ANCILLAS
LOW = ("D3", "D4")
COUPLINGS = (
    ("A1", "D1"), ("A1", "D3"),
    ("A2", "D1"), ("A2", "D2"), ("A2", "D3"), ("A2", "D4"),
    ("A3", "D2"), ("A3", "D4"),
)
NEIGHBORS = {s: tuple(sorted({b for a, b in COUPLINGS if a == s} | {a for a, b in COUPLINGS if b == s})) for s in SITES}

# the A1-D3 gate uses the |11>-|20> avoided crossing, so D3 receives the leaked excitation
_LEAK_EXCEPTIONS = {frozenset(("A1", "D3")): "D3"}


def _group(site: str) -> int:
    return 2 if site in HIGH else 1 if site in MID else 0


def fluxed_site(a: str, b: str) -> str:
    """The transmon pulsed down in frequency to perform a CZ (the higher-frequency one)."""
    if _group(a) == _group(b):
        raise ValueError(f"{a} and {b} are in the same frequency group")
    return a if _group(a) > _group(b) else b


def leaking_site(a: str, b: str) -> str:
    """The transmon that receives the |2> excitation in a leaky CZ."""
    return _LEAK_EXCEPTIONS.get(frozenset((a, b)), fluxed_site(a, b))


def leaking_sites() -> tuple[str, ...]:
    leak = {leaking_site(a, b) for a, b in COUPLINGS}
    return tuple(s for s in SITES if s in leak)


def park_spectators(a: str, b: str) -> tuple[str, ...]:
    """Middle-frequency neighbors of the high-frequency partner, other than the CZ ancilla."""
    high = [s for s in (a, b) if s in HIGH]
    if not high:
        return ()
    other = b if high[0] == a else a
    return tuple(s for s in NEIGHBORS[high[0]] if s in MID and s != other)


# -- device table -----------------------------------------------------------


@dataclass(frozen=True)
class TransmonParams:
    freq_ghz: float
    anharmonicity_mhz: float | None
    readout_freq_ghz: float
    t1_us: float
    t2_star_us: float
    t2_echo_us: float
    readout_fidelity_pct: float


def symmetric_assignment(readout_fidelity_pct: float, leaked_declared: tuple[float, float, float] = (0.0, 1.0, 0.0)) -> np.ndarray:
    """3x3 assignment matrix P(i|j) with P(1|0) = P(0|1) = 1 - F_RO."""
    eps = 1.0 - readout_fidelity_pct / 100.0
    a = np.zeros((3, 3))
    a[:2, :2] = [[1 - eps, eps], [eps, 1 - eps]]
    a[:, 2] = leaked_declared
    return a


@dataclass(frozen=True)
class DeviceParams:
    transmons: Mapping[str, TransmonParams]
    residual_excitation: Mapping[str, float]
    assignment: Mapping[str, np.ndarray]
    flux_noise_sqrt_a_uphi0: float = 3.0
    flux_sensitivity: Mapping[str, Mapping[str, float]] = field(default_factory=dict)
    zz_coupling_khz: Mapping[str, Mapping[str, float]] = field(default_factory=dict)
    default_anharmonicity_mhz: float = -300.0

    def __post_init__(self):
        for name, t in self.transmons.items():
            if t.t1_us <= 0 or t.t2_echo_us <= 0:
                raise ValueError(f"{name}: coherence times must be positive")
            if t.t2_echo_us > 2 * t.t1_us:
                # published tables can carry T2 > 2 T1 from drift; pure dephasing clamps to zero
                log.info("%s: T2=%.1f us exceeds 2*T1=%.1f us", name, t.t2_echo_us, 2 * t.t1_us)
        for name, p in self.residual_excitation.items():
            if not 0 <= p <= 1:
                raise ValueError(f"{name}: residual excitation {p} not a probability")
        for name, a in self.assignment.items():
            a = np.asarray(a)
            if np.any(a < 0) or np.any(a > 1) or np.max(np.abs(a.sum(axis=0) - 1)) > 1e-10:
                raise ValueError(f"{name}: assignment matrix columns must sum to 1")

    @classmethod
    def from_dict(cls, doc: Mapping) -> "DeviceParams":
        transmons = {k: TransmonParams(**v) for k, v in doc["transmons"].items()}
        missing = set(SITES) - set(transmons)
        if missing:
            raise ValueError(f"device table lacks transmons {sorted(missing)}")
        pe = dict(doc.get("residual_excitation", {}))
        pe = {s: float(pe.get(s, 0.0)) for s in SITES}
        assign = {}
        for s in SITES:
            given = doc.get("assignment", {}).get(s)
            assign[s] = np.asarray(given, dtype=float) if given is not None else symmetric_assignment(transmons[s].readout_fidelity_pct)
        flux = {s: {"cz": 0.0, "park": 0.0} | dict(doc.get("flux_sensitivity_ghz_per_phi0", {}).get(s, {})) for s in SITES}
        return cls(
            transmons=transmons,
            residual_excitation=pe,
            assignment=assign,
            flux_noise_sqrt_a_uphi0=float(doc.get("flux_noise_sqrt_a_uphi0", 3.0)),
            flux_sensitivity=flux,
            zz_coupling_khz={k: dict(v) for k, v in doc.get("zz_coupling_khz", {}).items()},
            default_anharmonicity_mhz=float(doc.get("default_anharmonicity_mhz", -300.0)),
        )

    @classmethod
    def from_json(cls, path: str | Path) -> "DeviceParams":
        return cls.from_dict(json.loads(Path(path).read_text()))

    @classmethod
    def table_s1(cls) -> "DeviceParams":
        """The bundled seven-transmon table."""
        text = resources.files("surface7").joinpath("data/device_table_s1.json").read_text()
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        return {
            "schema": "surface7.device/1",
            "transmons": {k: vars(v).copy() for k, v in self.transmons.items()},
            "residual_excitation": dict(self.residual_excitation),
            "assignment": {k: np.asarray(v).tolist() for k, v in self.assignment.items()},
            "flux_noise_sqrt_a_uphi0": self.flux_noise_sqrt_a_uphi0,
            "flux_sensitivity_ghz_per_phi0": {k: dict(v) for k, v in self.flux_sensitivity.items()},
            "zz_coupling_khz": {k: dict(v) for k, v in self.zz_coupling_khz.items()},
            "default_anharmonicity_mhz": self.default_anharmonicity_mhz,
        }

    def anharmonicity(self, site: str) -> float:
        a = self.transmons[site].anharmonicity_mhz
        return self.default_anharmonicity_mhz if a is None else float(a)

    def t_phi_max_us(self, site: str) -> float:
        """Sweetspot pure-dephasing time, 1/T_phi = 1/T2 - 1/(2 T1); inf when nonpositive."""
        t = self.transmons[site]
        rate = 1.0 / t.t2_echo_us - 1.0 / (2.0 * t.t1_us)
        return math.inf if rate <= 0 else 1.0 / rate

    def with_flux_profile(self, profile: Mapping[str, Mapping[str, float]]) -> "DeviceParams":
        return replace(self, flux_sensitivity={s: dict(profile.get(s, {"cz": 0.0, "park": 0.0})) for s in SITES})

    def with_uniform(self, **kw) -> "DeviceParams":
        """Copy with every transmon's fields overridden (e.g. t1_us=30, t2_echo_us=60)."""
        return replace(self, transmons={k: replace(v, **kw) for k, v in self.transmons.items()})

    def with_spam(self, readout_error: float | None = None, residual_excitation: float | None = None) -> "DeviceParams":
        """Copy with symmetric readout error P(1|0) = P(0|1) and/or uniform residual excitation."""
        out = self
        if readout_error is not None:
            out = replace(out, assignment={s: symmetric_assignment(100.0 * (1 - readout_error)) for s in SITES})
        if residual_excitation is not None:
            out = replace(out, residual_excitation=dict.fromkeys(SITES, float(residual_excitation)))
        return out


def flux_sensitivity(freq_max_ghz: float, freq_target_ghz: float) -> float:
    """|d omega/d Phi| / 2pi in GHz/Phi0 for a symmetric transmon, omega = omega_max sqrt|cos(pi Phi)|."""
    ratio = freq_target_ghz / freq_max_ghz
    if not 0 < ratio <= 1:
        raise ValueError("target frequency must lie below the sweetspot")
    c = ratio ** 2
    s = math.sqrt(max(0.0, 1 - c * c))
    return freq_max_ghz * math.pi * s / (2 * ratio)


def interaction_frequency(device: DeviceParams, a: str, b: str) -> float:
    """Frequency the fluxed transmon is pulsed to for the CZ between a and b."""
    f = fluxed_site(a, b)
    o = b if f == a else a
    leak = leaking_site(a, b)
    if leak == f:
        # |11> meets |02>: omega_f + alpha_f = omega_o
        return device.transmons[o].freq_ghz - device.anharmonicity(f) / 1000.0
    # |11> meets |20>: omega_f = omega_o + alpha_o
    return device.transmons[o].freq_ghz + device.anharmonicity(o) / 1000.0


def example_flux_profile(device: DeviceParams, park_detuning_ghz: float = 0.3) -> dict[str, dict[str, float]]:
    """Flux sensitivities derived from the sweetspot frequencies and CZ operating points.

    Transmons fluxed in several CZs take the mean sensitivity; parked transmons
    are assumed detuned by `park_detuning_ghz` below their sweetspot.
    """
    cz_vals: dict[str, list[float]] = {s: [] for s in SITES}
    for a, b in COUPLINGS:
        f = fluxed_site(a, b)
        cz_vals[f].append(flux_sensitivity(device.transmons[f].freq_ghz, interaction_frequency(device, a, b)))
    out = {}
    for s in SITES:
        fmax = device.transmons[s].freq_ghz
        park = flux_sensitivity(fmax, fmax - park_detuning_ghz) if s in MID else 0.0
        out[s] = {"cz": float(np.mean(cz_vals[s])) if cz_vals[s] else 0.0, "park": park}
    return out


# -- channels ---------------------------------------------------------------


def pure_dephasing_rate(sqrt_a_uphi0: float, d_phi_ghz_per_phi0: float, t_phi_max_us: float = math.inf) -> float:
    """1/T_phi in 1/s: 2 pi sqrt(ln 2) sqrt(A) D_phi + 1/T_phi^max."""
    if sqrt_a_uphi0 < 0 or d_phi_ghz_per_phi0 < 0:
        raise ValueError("flux-noise parameters must be nonnegative")
    base = 0.0 if math.isinf(t_phi_max_us) else 1e6 / t_phi_max_us
    return 2 * math.pi * math.sqrt(math.log(2)) * sqrt_a_uphi0 * 1e-6 * d_phi_ghz_per_phi0 * 1e9 + base


@lru_cache(maxsize=4096)
def damping_superop(t1_us: float, t_phi_us: float, duration_ns: float, dim: int = 2) -> np.ndarray:
    """Superoperator of combined amplitude and phase damping over `duration_ns`.

    Level 2 relaxes to 1 at twice the 1->0 rate; coherence between levels m and n
    decays as exp(-(m-n)^2 t/T_phi).
    """
    if t1_us <= 0 or t_phi_us <= 0:
        raise ValueError("T1 and T_phi must be positive")
    if duration_ns < 0:
        raise ValueError("duration must be nonnegative")
    t = duration_ns * 1e-3
    kraus = _amplitude_damping_kraus(t1_us, t, dim)
    s = sum(np.kron(k, k.conj()) for k in kraus)
    if not math.isinf(t_phi_us):
        lv = np.arange(dim)
        coh = np.exp(-((lv[:, None] - lv[None, :]) ** 2) * t / t_phi_us)
        s = coh.reshape(-1)[:, None] * s
    s.flags.writeable = False
    return s


def _amplitude_damping_kraus(t1_us: float, t_us: float, dim: int) -> list[np.ndarray]:
    g1 = -math.expm1(-t_us / t1_us)
    ks = []
    k0 = np.zeros((dim, dim), dtype=complex)
    k0[0, 0] = 1.0
    k0[1, 1] = math.sqrt(1 - g1)
    k1 = np.zeros((dim, dim), dtype=complex)
    k1[0, 1] = math.sqrt(g1)
    ks = [k0, k1]
    if dim == 3:
        g2 = -math.expm1(-2 * t_us / t1_us)
        k0[2, 2] = math.sqrt(1 - g2)
        k2 = np.zeros((3, 3), dtype=complex)
        k2[1, 2] = math.sqrt(g2)
        ks.append(k2)
    return ks


def idle_channel(t1_us: float, t_phi_us: float, duration_ns: float, dim: int = 2, site=0) -> KrausChannel:
    """Amplitude-phase damping for an idle period as a Kraus channel."""
    return KrausChannel.from_superoperator(damping_superop(float(t1_us), float(t_phi_us), float(duration_ns), dim), (site,))


def offsweetspot_dephasing(sqrt_a_uphi0: float, d_phi: float, t_phi_max_us: float, duration_ns: float, dim: int = 2, site=0) -> KrausChannel:
    """Pure dephasing at the flux-noise enhanced rate (no relaxation)."""
    rate = pure_dephasing_rate(sqrt_a_uphi0, d_phi, t_phi_max_us)
    t_phi = math.inf if rate == 0 else 1e6 / rate
    return KrausChannel.from_superoperator(damping_superop(math.inf, t_phi, float(duration_ns), dim), (site,))


def spam_layer(p_e: Mapping[str, float], assignment: Mapping[str, np.ndarray], dims: Mapping[str, int] | None = None):
    """Initial single-site states with excited population p_e, and per-site POVM sets."""
    dims = dims or {}
    init = {}
    povms = {}
    for s, p in p_e.items():
        d = dims.get(s, 2)
        rho = np.zeros((d, d), dtype=complex)
        rho[0, 0], rho[1, 1] = 1 - p, p
        init[s] = rho
    for s, a in assignment.items():
        d = dims.get(s, 2)
        povms[s] = site_povm(a, d)
    return init, povms


def site_povm(assignment: np.ndarray, dim: int) -> tuple[PovmElement, ...]:
    a = np.asarray(assignment, dtype=float)
    if a.shape[0] == 3 and dim == 2:
        # qubit site: outcomes 0/1 from the computational block only
        a = a[:2, :2]
    elif a.shape[0] == 2 and dim == 3:
        a = np.hstack([np.vstack([a, np.zeros((1, 2))]), [[0.0], [1.0], [0.0]]])
    return povm_from_assignment(a)


def dressed_cz(phi01: float = 0.0, phi10: float = 0.0, phi11: float = math.pi) -> np.ndarray:
    """diag(1, e^{i phi01}, e^{i phi10}, e^{i phi11}) on |q_a q_b>."""
    for p in (phi01, phi10, phi11):
        if not 0 <= p < 2 * math.pi + 1e-12:
            raise ValueError("CZ phases must lie in [0, 2 pi)")
    return np.diag(np.exp(1j * np.array([0.0, phi01, phi10, phi11])))


def zz_crosstalk_layer(phase_table: Mapping[tuple[str, str], tuple[float, float, float]]) -> dict[tuple[str, str], np.ndarray]:
    """Per-CZ dressed diagonal unitaries from a table (phi01, phi10, phi11)."""
    return {pair: dressed_cz(*phases) for pair, phases in phase_table.items()}


def zz_phase_table(device: DeviceParams, exposure_ns: float = T_CZ_NS) -> dict[tuple[str, str], tuple[float, float, float]]:
    """Conditional-phase error 2 pi zeta t per CZ from the residual ZZ matrix."""
    table = {}
    for a, b in COUPLINGS:
        zeta = 0.5 * (device.zz_coupling_khz.get(a, {}).get(b, 0.0) + device.zz_coupling_khz.get(b, {}).get(a, 0.0))
        err = 2 * math.pi * zeta * 1e3 * exposure_ns * 1e-9
        table[(a, b)] = (0.0, 0.0, (math.pi + err) % (2 * math.pi))
    return table


def leakage_layer(l1: float, pair: tuple[str, str] = ("A2", "D1"), dims: tuple[int, int] = (3, 3), phases=(0.0, 0.0, math.pi)) -> np.ndarray:
    """Qutrit CZ with a coherent partial swap |11> <-> |2 0> (leaking site excited).

    The swap angle is 2 arcsin(sqrt(4 L1)) with zero exchange phase; states with a
    leaked transmon otherwise pick up no conditional phase.
    """
    if not 0 <= l1 <= 0.25:
        raise ValueError(f"L1={l1} outside [0, 0.25]")
    a, b = pair
    da, db = dims
    u = np.eye(da * db, dtype=complex)
    ph = np.exp(1j * np.array([0.0, *phases]))
    for (i, j), p in zip([(0, 0), (0, 1), (1, 0), (1, 1)], ph):
        u[i * db + j, i * db + j] = p
    if l1 == 0:
        return u
    leak = leaking_site(a, b)
    if (leak == a and da < 3) or (leak == b and db < 3):
        raise ValueError(f"leaking site {leak} needs three levels")
    src = 1 * db + 1
    dst = 2 * db + 0 if leak == a else 0 * db + 2
    half = math.asin(math.sqrt(4 * l1))
    rot = np.eye(da * db, dtype=complex)
    rot[src, src] = rot[dst, dst] = math.cos(half)
    rot[dst, src] = math.sin(half)
    rot[src, dst] = -math.sin(half)
    return rot @ u


# -- noise model ------------------------------------------------------------

COMPONENTS = ("decoherence", "flux", "spam", "crosstalk", "leakage")


@dataclass(frozen=True)
class NoiseModel:
    level: int = 0
    device: DeviceParams | None = None
    l1: float = 0.0
    cz_phases: Mapping[tuple[str, str], tuple[float, float, float]] | None = None
    force_qutrits: bool = False
    components: frozenset[str] | None = None

    def __post_init__(self):
        if self.level not in range(6):
            raise ValueError(f"noise level {self.level} not in 0..5")
        if not 0 <= self.l1 <= 0.25:
            raise ValueError(f"L1={self.l1} outside [0, 0.25]")
        if self.components is not None:
            comps = frozenset(self.components)
            unknown = comps - set(COMPONENTS)
            if unknown:
                raise ValueError(f"unknown noise components {sorted(unknown)}")
            object.__setattr__(self, "components", comps)
        if (self.level >= 1 or self.components) and self.device is None:
            object.__setattr__(self, "device", DeviceParams.table_s1())

    @classmethod
    def ideal(cls) -> "NoiseModel":
        return cls(0)

    @classmethod
    def only(cls, *components: str, device: DeviceParams | None = None, l1: float = 0.0) -> "NoiseModel":
        """A model with just the named components (e.g. ``NoiseModel.only("spam")``)."""
        return cls(0, device, l1, components=frozenset(components))

    def _on(self, name: str) -> bool:
        if self.components is not None:
            return name in self.components
        return self.level >= COMPONENTS.index(name) + 1

    @property
    def decoherence(self) -> bool:
        return self._on("decoherence")

    @property
    def flux_noise(self) -> bool:
        return self._on("flux")

    @property
    def spam(self) -> bool:
        return self._on("spam")

    @property
    def crosstalk(self) -> bool:
        return self._on("crosstalk")

    @property
    def leakage(self) -> bool:
        return self._on("leakage")

    def site_dim(self, site: str) -> int:
        return 3 if (self.leakage or self.force_qutrits) and site in leaking_sites() else 2

    def dims(self, labels=SITES) -> tuple[int, ...]:
        return tuple(self.site_dim(s) for s in labels)

    def t_phi_us(self, site: str, fluxed: str | None = None) -> float:
        """Pure-dephasing time; `fluxed` is None, "cz" or "park"."""
        tmax = self.device.t_phi_max_us(site)
        if fluxed is None or not self.flux_noise:
            return tmax
        d_phi = self.device.flux_sensitivity.get(site, {}).get(fluxed, 0.0)
        rate = pure_dephasing_rate(self.device.flux_noise_sqrt_a_uphi0, d_phi, tmax)
        return math.inf if rate == 0 else 1e6 / rate

    def idle_superop(self, site: str, duration_ns: float, fluxed: str | None = None) -> np.ndarray | None:
        if not self.decoherence or duration_ns <= 0:
            return None
        t1 = self.device.transmons[site].t1_us
        return damping_superop(float(t1), float(self.t_phi_us(site, fluxed)), round(float(duration_ns), 9), self.site_dim(site))

    def phase_table(self):
        if self.cz_phases is not None:
            return self.cz_phases
        return zz_phase_table(self.device)

    def cz_unitary(self, a: str, b: str) -> np.ndarray:
        """Two-site unitary for the CZ on (a, b) in the current level."""
        da, db = self.site_dim(a), self.site_dim(b)
        phases = (0.0, 0.0, math.pi)
        if self.crosstalk:
            table = self.phase_table()
            if (a, b) in table:
                phases = table[(a, b)]
            elif (b, a) in table:
                p01, p10, p11 = table[(b, a)]
                phases = (p10, p01, p11)
        if self.leakage or self.force_qutrits:
            return leakage_layer(self.l1 if self.leakage else 0.0, (a, b), (da, db), phases)
        if phases == (0.0, 0.0, math.pi) and da == db == 2:
            return cz()
        return leakage_layer(0.0, (a, b), (da, db), phases)

    def initial_site_state(self, site: str) -> np.ndarray:
        d = self.site_dim(site)
        rho = np.zeros((d, d), dtype=complex)
        pe = self.device.residual_excitation.get(site, 0.0) if self.spam else 0.0
        rho[0, 0], rho[1, 1] = 1 - pe, pe
        return rho

    def assignment(self, site: str) -> np.ndarray:
        """Assignment matrix P(i|j) for the site's dimension (outcomes 0, 1[, 2])."""
        d = self.site_dim(site)
        if self.spam:
            a = np.asarray(self.device.assignment[site], dtype=float)
        else:
            a = symmetric_assignment(100.0)
        a3 = a if a.shape == (3, 3) else np.hstack([np.vstack([a, [[0, 0]]]), [[0], [1], [0]]])
        return a3[:, :d] if d == 2 else a3

    def povm(self, site: str) -> tuple[PovmElement, ...]:
        return site_povm(self.assignment(site), self.site_dim(site))

    def describe(self) -> dict:
        out = {"level": self.level, "l1": self.l1}
        if self.components is not None:
            out["components"] = sorted(self.components)
        return out
