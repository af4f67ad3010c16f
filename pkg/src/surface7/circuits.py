"""Timed circuits: preparation, stabilizer cycles, logical measurements and gates.

All times are in nanoseconds.  Single-qubit rotations take 20 ns, CZ gates and
parking pulses 60 ns and readout 540 ns.  Gates act instantaneously at the
midpoint of their window; measurements act at the start of the readout window.

Circuit dump format, one instruction per line::

    t_start_ns duration_ns kind sites [key=value ...]
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .engine import rotation
from .noise import park_spectators
from .surface_code import ANCILLAS, DATA, SITES

T_1Q_NS = 20.0
T_CZ_NS = 60.0
T_PARK_NS = 60.0
T_RO_NS = 540.0
CYCLE_NS = {"pipelined": 840.0, "parallel": 1000.0}
SCHEMES = tuple(CYCLE_NS)

_DURATIONS = {"rot": T_1Q_NS, "cz": T_CZ_NS, "park": T_PARK_NS, "measure": T_RO_NS}
KINDS = ("rot", "cz", "park", "measure", "idle")

HALF_PI = math.pi / 2


@dataclass(frozen=True)
class TimedInstruction:
    """One scheduled operation.

    Attributes:
        kind: "rot", "cz", "park", "measure" or "idle".
        sites: target transmons; a CZ lists (ancilla, data).
        start_ns: start of the window.
        duration_ns: window length.
        params: (theta, phi) for rotations.
        tag: free label, used to name measurement records.
        postselect: for measurements, the outcome kept by post-selection.
    """

    kind: str
    sites: tuple[str, ...]
    start_ns: float
    duration_ns: float | None = None
    params: tuple[float, ...] = ()
    tag: str = ""
    postselect: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown instruction kind {self.kind!r}")
        object.__setattr__(self, "sites", tuple(self.sites))
        dur = _DURATIONS.get(self.kind) if self.duration_ns is None else float(self.duration_ns)
        if dur is None or dur < 0:
            raise ValueError(f"{self.kind} needs a nonnegative duration")
        if self.kind in _DURATIONS and abs(dur - _DURATIONS[self.kind]) > 1e-9:
            raise ValueError(f"{self.kind} lasts {_DURATIONS[self.kind]} ns, got {dur}")
        object.__setattr__(self, "duration_ns", dur)
        object.__setattr__(self, "start_ns", float(self.start_ns))
        n_sites = {"rot": 1, "cz": 2, "park": 1, "measure": 1}.get(self.kind)
        if n_sites is not None and len(self.sites) != n_sites:
            raise ValueError(f"{self.kind} acts on {n_sites} site(s)")
        if self.kind == "rot" and len(self.params) != 2:
            raise ValueError("rotation needs (theta, phi)")

    @property
    def end_ns(self) -> float:
        return self.start_ns + self.duration_ns

    @property
    def event_ns(self) -> float | None:
        """Time at which the operation acts on the state (None for park/idle)."""
        if self.kind in ("rot", "cz"):
            return self.start_ns + self.duration_ns / 2
        if self.kind == "measure":
            return self.start_ns
        return None

    def shifted(self, dt: float) -> "TimedInstruction":
        return replace(self, start_ns=self.start_ns + dt)

    def unitary(self) -> np.ndarray:
        if self.kind != "rot":
            raise ValueError("only rotations carry a fixed single-site unitary")
        return rotation(*self.params)

    def dump(self) -> str:
        parts = [f"{self.start_ns:g}", f"{self.duration_ns:g}", self.kind, ",".join(self.sites)]
        if self.kind == "rot":
            parts += [f"theta={self.params[0]:.6f}", f"phi={self.params[1]:.6f}"]
        if self.tag:
            parts.append(f"tag={self.tag}")
        if self.postselect is not None:
            parts.append(f"keep={self.postselect}")
        return " ".join(parts)

    @classmethod
    def parse(cls, line: str) -> "TimedInstruction":
        tok = line.split()
        start, dur, kind, sites = float(tok[0]), float(tok[1]), tok[2], tuple(tok[3].split(","))
        kv = dict(t.split("=", 1) for t in tok[4:])
        params = (float(kv["theta"]), float(kv["phi"])) if kind == "rot" else ()
        keep = int(kv["keep"]) if "keep" in kv else None
        return cls(kind, sites, start, dur, params, kv.get("tag", ""), keep)


def _overlaps(instrs: Sequence[TimedInstruction], period: float | None = None) -> list[tuple[TimedInstruction, TimedInstruction]]:
    by_site: dict[str, list[TimedInstruction]] = {}
    for ins in instrs:
        if ins.kind == "idle":
            continue
        for s in ins.sites:
            by_site.setdefault(s, []).append(ins)
    clashes = []
    shifts = (0.0,) if period is None else (0.0, period)
    for items in by_site.values():
        for a, b in itertools.combinations(items, 2):
            for sh in shifts:
                for x, y in ((a, b), (b, a)) if sh else ((a, b),):
                    lo, hi = x.start_ns, x.end_ns
                    lo2, hi2 = y.start_ns + sh, y.end_ns + sh
                    if min(hi, hi2) - max(lo, lo2) > 1e-9:
                        clashes.append((x, y))
        if period is not None:
            # an instruction spilling past the period must not hit its own image
            for a in items:
                if a.duration_ns > period:
                    clashes.append((a, a))
    return clashes


@dataclass(frozen=True)
class TimedCircuit:
    """Ordered timed instructions.

    `duration_ns` is the time at which the next circuit may start.  Readout
    windows may run past it (pipelined cycles), provided the successor does not
    touch those sites before the window closes.
    """

    instructions: tuple[TimedInstruction, ...]
    duration_ns: float
    labels: tuple[str, ...] = SITES
    name: str = ""

    def __post_init__(self):
        order = {k: i for i, k in enumerate(KINDS)}
        ins = tuple(sorted(self.instructions, key=lambda i: (i.start_ns, order[i.kind], i.sites)))
        object.__setattr__(self, "instructions", ins)
        unknown = {s for i in ins for s in i.sites} - set(self.labels)
        if unknown:
            raise ValueError(f"instructions reference unknown sites {sorted(unknown)}")
        clash = _overlaps(ins)
        if clash:
            a, b = clash[0]
            raise ValueError(f"overlapping instructions on a shared site: [{a.dump()}] and [{b.dump()}]")

    def __len__(self) -> int:
        return len(self.instructions)

    @property
    def end_ns(self) -> float:
        return max([self.duration_ns] + [i.end_ns for i in self.instructions])

    def shifted(self, dt: float) -> "TimedCircuit":
        return TimedCircuit(tuple(i.shifted(dt) for i in self.instructions), self.duration_ns + dt, self.labels, self.name)

    def then(self, other: "TimedCircuit") -> "TimedCircuit":
        """Sequential composition with `other` starting at this circuit's duration."""
        moved = [i.shifted(self.duration_ns) for i in other.instructions]
        return TimedCircuit(self.instructions + tuple(moved), self.duration_ns + other.duration_ns, self.labels, self.name)

    def retagged(self, suffix: str) -> "TimedCircuit":
        ins = tuple(replace(i, tag=f"{i.tag}@{suffix}") if i.tag else i for i in self.instructions)
        return replace(self, instructions=ins)

    def busy(self, site: str) -> list[tuple[float, float]]:
        return [(i.start_ns, i.end_ns) for i in self.instructions if site in i.sites and i.kind != "idle"]

    def dump(self) -> str:
        head = f"# {self.name} duration_ns={self.duration_ns:g}" if self.name else f"# duration_ns={self.duration_ns:g}"
        return "\n".join([head] + [i.dump() for i in self.instructions]) + "\n"

    @classmethod
    def parse(cls, text: str) -> "TimedCircuit":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        head = lines[0].split()
        dur = float(next(t for t in head if t.startswith("duration_ns=")).split("=")[1])
        name = head[1] if len(head) > 2 else ""
        return cls(tuple(TimedInstruction.parse(ln) for ln in lines[1:]), dur, SITES, name)


def _rot(site: str, t: float, theta: float, phi: float) -> TimedInstruction:
    return TimedInstruction("rot", (site,), t, params=(float(theta), float(phi)))


def _ry(site: str, t: float, theta: float) -> TimedInstruction:
    return _rot(site, t, theta, HALF_PI)


def _meas(site: str, t: float, keep: int | None = 0) -> TimedInstruction:
    return TimedInstruction("measure", (site,), t, tag=site, postselect=keep)


def _cz(anc: str, data: str, t: float) -> TimedInstruction:
    return TimedInstruction("cz", (anc, data), t)


def assign_parking(instrs: Sequence[TimedInstruction], period: float | None = None) -> list[TimedInstruction]:
    """Add 60 ns parking pulses on free middle-frequency spectators of each CZ.

    A spectator that is busy (including readout windows spilling in from the
    previous period when `period` is given) is left alone.
    """
    out = [i for i in instrs if i.kind != "park"]
    busy = {}
    for i in out:
        for s in i.sites:
            busy.setdefault(s, []).append((i.start_ns, i.end_ns))
    shifts = (0.0,) if period is None else (-period, 0.0, period)
    added = set()
    for i in list(out):
        if i.kind != "cz":
            continue
        for spec in park_spectators(*i.sites):
            lo, hi = i.start_ns, i.start_ns + T_PARK_NS
            free = all(min(hi, b + sh) - max(lo, a + sh) <= 1e-9 for a, b in busy.get(spec, []) for sh in shifts)
            if free and (spec, lo) not in added:
                added.add((spec, lo))
                out.append(TimedInstruction("park", (spec,), lo))
    return out


# -- state preparation ------------------------------------------------------


@dataclass(frozen=True)
class PrepAngles:
    theta: float
    phi: float = 0.0

    def __post_init__(self):
        if not -1e-12 <= self.theta <= math.pi + 1e-12:
            raise ValueError(f"theta={self.theta} outside [0, pi]")
        if not -1e-12 <= self.phi < 2 * math.pi:
            raise ValueError(f"phi={self.phi} outside [0, 2 pi)")

    @property
    def logical_vector(self) -> np.ndarray:
        """Projected logical state (C^2 |0_L> + e^{i phi} S^2 |1_L>), normalized."""
        c2, s2 = math.cos(self.theta / 2) ** 2, math.sin(self.theta / 2) ** 2
        v = np.array([c2, s2 * np.exp(1j * self.phi)])
        return v / np.linalg.norm(v)

    @property
    def success_probability(self) -> float:
        """Noiseless probability of a trivial first syndrome, (C^4 + S^4)/2."""
        c2, s2 = math.cos(self.theta / 2) ** 2, math.sin(self.theta / 2) ** 2
        return (c2 * c2 + s2 * s2) / 2


CARDINAL_PREP = {
    "0": PrepAngles(0.0, 0.0),
    "1": PrepAngles(math.pi, 0.0),
    "+": PrepAngles(HALF_PI, 0.0),
    "-": PrepAngles(HALF_PI, math.pi),
    "+i": PrepAngles(HALF_PI, HALF_PI),
    "-i": PrepAngles(HALF_PI, 3 * HALF_PI),
}

# fault-tolerant preparations of |+_L> and |-_L> from X-basis product states
FT_PREP = {
    "+": {"D1": 1, "D2": 1, "D3": 1, "D4": 1},
    "-": {"D1": 1, "D2": 1, "D3": -1, "D4": -1},
}


def build_prep(theta: float | PrepAngles, phi: float = 0.0) -> TimedCircuit:
    """R_y^theta on D1 and R_{phi+pi/2}^theta on D3, from |0000>."""
    a = theta if isinstance(theta, PrepAngles) else PrepAngles(float(theta), float(phi) % (2 * math.pi))
    ins = (_ry("D1", 0.0, a.theta), _rot("D3", 0.0, a.theta, a.phi + HALF_PI))
    return TimedCircuit(ins, T_1Q_NS, name=f"prep(theta={a.theta:.6f},phi={a.phi:.6f})")


def build_prep_ft(label: str) -> TimedCircuit:
    """Product-state preparation |++++> (label "+") or |++--> (label "-")."""
    signs = FT_PREP[label]
    ins = tuple(_ry(q, 0.0, s * HALF_PI) for q, s in signs.items())
    return TimedCircuit(ins, T_1Q_NS, name=f"prep_ft({label})")


# -- stabilizer cycles ------------------------------------------------------

X_CHECK_ORDER = ("D1", "D2", "D3", "D4")
Z_CHECKS = {"A1": ("D1", "D3"), "A3": ("D2", "D4")}


def _x_block(t0: float) -> tuple[list[TimedInstruction], float]:
    ins = [_ry("A2", t0, HALF_PI)] + [_ry(q, t0, -HALF_PI) for q in DATA]
    t = t0 + T_1Q_NS
    for q in X_CHECK_ORDER:
        ins.append(_cz("A2", q, t))
        t += T_CZ_NS
    ins += [_ry("A2", t, -HALF_PI)] + [_ry(q, t, HALF_PI) for q in DATA]
    return ins, t + T_1Q_NS


def _z_block(t0: float) -> tuple[list[TimedInstruction], float]:
    ins = [_ry(a, t0, HALF_PI) for a in Z_CHECKS]
    t = t0 + T_1Q_NS
    for k in range(2):
        ins += [_cz(a, qs[k], t) for a, qs in Z_CHECKS.items()]
        t += T_CZ_NS
    ins += [_ry(a, t, -HALF_PI) for a in Z_CHECKS]
    return ins, t + T_1Q_NS


def _echo(t0: float, phases: Sequence[float]) -> list[TimedInstruction]:
    return [_rot(q, t0, math.pi, p) for q, p in zip(DATA, phases)]


def build_cycle(scheme: str = "pipelined", echo_phases: Sequence[float] = (0.0, 0.0, 0.0, 0.0), parking: bool = True) -> TimedCircuit:
    """One error-detection cycle.

    Pipelined (840 ns): the X check runs while A1/A3 read out from the previous
    cycle, then the Z checks run while A2 reads out.  Parallel (1000 ns): Z then
    X coherent blocks, then all three ancillas read out together.  Each cycle
    applies one refocusing pi pulse to every data qubit during a readout window.
    """
    if scheme not in CYCLE_NS:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    if len(echo_phases) != 4:
        raise ValueError("one echo axis per data qubit")
    period = CYCLE_NS[scheme]
    if scheme == "pipelined":
        x_ins, t_x = _x_block(0.0)
        z_ins, t_z = _z_block(t_x)
        ins = x_ins + z_ins + [_meas("A2", t_x)] + [_meas(a, t_z) for a in ("A1", "A3")]
        ins += _echo(630.0, echo_phases)
    else:
        z_ins, t_z = _z_block(0.0)
        x_ins, t_x = _x_block(t_z)
        t_ro = t_x + T_1Q_NS
        ins = z_ins + x_ins + [_meas(a, t_ro) for a in ANCILLAS]
        ins += _echo(720.0, echo_phases)
    if parking:
        ins = assign_parking(ins, period)
    clash = _overlaps(ins, period)
    if clash:
        raise AssertionError(f"cycle does not tile: {clash[0][0].dump()} / {clash[0][1].dump()}")
    return TimedCircuit(tuple(ins), period, name=f"cycle({scheme})")


def build_check(check: str, data_rotations: bool = True) -> TimedCircuit:
    """A single parity-check block followed by its ancilla readout.

    `check` is "Z13", "Z24" or "X1234"; "Z1234" is the X-check block without the
    data basis changes, i.e. a Z-parity check of all four data qubits.
    """
    if check in ("X1234", "Z1234"):
        ins, t = _x_block(0.0)
        if check == "Z1234" or not data_rotations:
            ins = [i for i in ins if not (i.kind == "rot" and i.sites[0] in DATA)]
        anc = "A2"
    elif check in ("Z13", "Z24"):
        anc = "A1" if check == "Z13" else "A3"
        qs = Z_CHECKS[anc]
        ins = [_ry(anc, 0.0, HALF_PI), _cz(anc, qs[0], T_1Q_NS), _cz(anc, qs[1], T_1Q_NS + T_CZ_NS), _ry(anc, T_1Q_NS + 2 * T_CZ_NS, -HALF_PI)]
        t = 2 * T_1Q_NS + 2 * T_CZ_NS
    else:
        raise ValueError(f"unknown check {check!r}")
    ins = list(ins) + [_meas(anc, t, keep=None)]
    return TimedCircuit(tuple(ins), t + T_RO_NS, name=f"check({check})")


CHECK_SITES = {"Z13": ("A1", "D1", "D3"), "Z24": ("A3", "D2", "D4"), "Z1234": ("A2",) + DATA, "X1234": ("A2",) + DATA}


# -- destructive logical measurement ----------------------------------------

_BASIS_ROT = {"Z": None, "X": (-HALF_PI, HALF_PI), "Y": (HALF_PI, 0.0)}


@dataclass(frozen=True)
class MeasurementAssembly:
    """Simultaneous single-qubit readout of all data qubits.

    Attributes:
        basis: logical observable, "Z", "X" or "Y".
        data_bases: measurement basis per data qubit.
        value_sites: data qubits whose outcome product is the logical value.
        checks: data-qubit groups whose outcome products must be +1.
    """

    basis: str
    data_bases: Mapping[str, str]
    value_sites: tuple[str, ...]
    checks: tuple[tuple[str, ...], ...]

    def rotations(self) -> dict[str, tuple[float, float]]:
        """Pre-rotation (theta, phi) that maps each basis onto Z."""
        return {q: _BASIS_ROT[b] for q, b in self.data_bases.items() if _BASIS_ROT[b] is not None}

    def circuit(self) -> TimedCircuit:
        ins = [_rot(q, 0.0, *r) for q, r in self.rotations().items()]
        ins += [_meas(q, T_1Q_NS, keep=None) for q in DATA]
        return TimedCircuit(tuple(ins), T_1Q_NS + T_RO_NS, name=f"measure({self.basis}_L)")

    def classify(self, bits: Mapping[str, int]) -> tuple[int, bool]:
        """(logical value +-1, accepted) for data outcomes 0/1 (2 is always rejected)."""
        if any(bits[q] not in (0, 1) for q in DATA):
            return 0, False
        ok = all(sum(bits[q] for q in grp) % 2 == 0 for grp in self.checks)
        value = 1 - 2 * (sum(bits[q] for q in self.value_sites) % 2)
        return value, ok

    def outcome_table(self) -> np.ndarray:
        """(16, 2) array: logical value and acceptance for every 4-bit outcome string."""
        rows = []
        for bits in itertools.product((0, 1), repeat=4):
            v, ok = self.classify(dict(zip(DATA, bits)))
            rows.append((v, int(ok)))
        return np.array(rows)


def build_logical_measurement(basis: str) -> MeasurementAssembly:
    b = basis.upper().removesuffix("_L")
    if b == "Z":
        return MeasurementAssembly("Z", dict.fromkeys(DATA, "Z"), ("D1", "D2"), (("D1", "D3"), ("D2", "D4")))
    if b == "X":
        return MeasurementAssembly("X", dict.fromkeys(DATA, "X"), ("D1", "D3"), (DATA,))
    if b == "Y":
        # Y1 Z2 X3, with D4 read in Z so Z2 Z4 still flags bit flips on D2 and D4
        return MeasurementAssembly("Y", {"D1": "Y", "D2": "Z", "D3": "X", "D4": "Z"}, ("D1", "D2", "D3"), (("D2", "D4"),))
    raise ValueError(f"unknown logical basis {basis!r}")


# -- logical gates ----------------------------------------------------------

_S2 = 1 / math.sqrt(2)
_H = np.array([[1, 1], [1, -1]]) * _S2


def _phase(theta: float) -> np.ndarray:
    return np.diag([1.0, np.exp(1j * theta)])


@dataclass(frozen=True)
class LogicalGate:
    """A logical gate circuit with its ideal logical action.

    For gate-by-measurement circuits `postselect` names the ancilla and the
    outcome kept; `success_probability` is the noiseless rate of that outcome.
    """

    name: str
    circuit: TimedCircuit
    ideal: np.ndarray
    success_probability: float = 1.0
    postselect: Mapping[str, int] = field(default_factory=dict)


_GATE_ALIASES = {
    "Z": "Z", "ZL": "Z", "Z_L": "Z",
    "X": "X", "XL": "X", "X_L": "X",
    "T": "T", "TL": "T", "T_L": "T",
    "X90": "X90", "XL90": "X90", "X_L^PI/2": "X90", "X_L90": "X90",
    "ZTHETA": "Ztheta", "Z_THETA": "Ztheta", "Z_L^THETA": "Ztheta",
    "XTHETA": "Xtheta", "X_THETA": "Xtheta", "X_L^THETA": "Xtheta",
}
GATES = ("Z", "X", "T", "X90", "Ztheta", "Xtheta")


def _by_measurement(axis: str, theta: float) -> TimedCircuit:
    """Gate teleportation through A2 prepared in |A_theta> = (|0> + e^{i theta}|1>)/sqrt(2)."""
    partners = ("D1", "D2") if axis == "Z" else ("D1", "D3")
    ins = [_rot("A2", 0.0, HALF_PI, theta + HALF_PI), _ry("A2", T_1Q_NS, -HALF_PI)]
    if axis == "X":
        ins += [_ry(q, T_1Q_NS, -HALF_PI) for q in partners]
    t = 2 * T_1Q_NS
    for q in partners:
        ins.append(_cz("A2", q, t))
        t += T_CZ_NS
    ins.append(_ry("A2", t, HALF_PI))
    if axis == "X":
        ins += [_ry(q, t, HALF_PI) for q in partners]
    t += T_1Q_NS
    ins.append(_meas("A2", t, keep=0))
    return TimedCircuit(tuple(ins), t + T_RO_NS, name=f"{axis}_L^theta({theta:.6f})")


def build_logical_gate(gate: str, theta: float | None = None) -> LogicalGate:
    """Circuit and ideal logical unitary for a supported gate.

    Transversal: Z_L = R_x^pi R_y^pi on D1 and D2; X_L = R_x^pi on D1 and D3.
    Rotations Z_L^theta = diag(1, e^{i theta}) and X_L^theta = H Z_L^theta H run
    through A2 and keep only the A2 outcome 0 branch (probability 1/2).
    """
    key = _GATE_ALIASES.get(gate.upper().replace(" ", ""), gate)
    if key == "Z":
        ins = [_ry(q, 0.0, math.pi) for q in ("D1", "D2")] + [_rot(q, T_1Q_NS, math.pi, 0.0) for q in ("D1", "D2")]
        return LogicalGate("Z", TimedCircuit(tuple(ins), 2 * T_1Q_NS, name="Z_L"), np.diag([1.0, -1.0]).astype(complex))
    if key == "X":
        ins = [_rot(q, 0.0, math.pi, 0.0) for q in ("D1", "D3")]
        return LogicalGate("X", TimedCircuit(tuple(ins), T_1Q_NS, name="X_L"), np.array([[0, 1], [1, 0]], dtype=complex))
    if key in ("T", "Ztheta"):
        th = math.pi / 4 if key == "T" else theta
        if th is None:
            raise ValueError("rotation gate needs theta")
        return LogicalGate(key if key == "T" else f"Z({th:.6f})", _by_measurement("Z", th), _phase(th), 0.5, {"A2": 0})
    if key in ("X90", "Xtheta"):
        th = HALF_PI if key == "X90" else theta
        if th is None:
            raise ValueError("rotation gate needs theta")
        return LogicalGate(key if key == "X90" else f"X({th:.6f})", _by_measurement("X", th), _H @ _phase(th) @ _H, 0.5, {"A2": 0})
    raise ValueError(f"unsupported gate {gate!r}; expected one of {GATES}")
