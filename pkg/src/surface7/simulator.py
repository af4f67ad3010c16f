"""Execution of timed circuits under a noise model.

Decoherence acts continuously on every site.  Each site keeps the time up to
which its idle channel has been applied; the pending channel is applied only
when an instruction touches the site or a snapshot is taken.  Amplitude and
phase damping over adjacent intervals compose into a single damping channel,
so lazy flushing is exact.

Evolution is branch-deterministic: a post-selected measurement multiplies the
running probability by the probability of the kept outcome and conditions the
state on it.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .circuits import (
    CARDINAL_PREP,
    CYCLE_NS,
    T_RO_NS,
    MeasurementAssembly,
    PrepAngles,
    TimedCircuit,
    TimedInstruction,
    build_cycle,
    build_logical_measurement,
    build_prep,
    build_prep_ft,
)
from .engine import (
    DensityMatrix,
    QuditRegister,
    diag_scale_on,
    embed_unitary,
    partial_trace,
    product_state,
    project_levels,
    rotation,
    superop_on,
    unitary_on,
)
from .errors import BranchUnderflowError
from .noise import NoiseModel, damping_superop, fluxed_site
from .surface_code import DATA, SITES, project_to_codespace

UNDERFLOW = 1e-300


@dataclass
class MeasurementLog:
    time_ns: float
    site: str
    tag: str
    probability: float


@dataclass
class RunResult:
    state: DensityMatrix | None
    probability: float
    measurements: list[MeasurementLog]
    snapshots: list[tuple[float, DensityMatrix, float]]
    underflow: bool = False


class Simulator:
    """Runs TimedCircuits on the seven-transmon register.

    Args:
        noise: noise model; determines site dimensions.
        labels: register sites, in tensor-factor order.
    """

    def __init__(self, noise: NoiseModel | None = None, labels: Sequence[str] = SITES):
        self.noise = noise or NoiseModel.ideal()
        self.labels = tuple(labels)
        self.dims = self.noise.dims(self.labels)
        self.register = QuditRegister(self.dims, self.labels)
        self._axis = {s: i for i, s in enumerate(self.labels)}
        self._povm = {s: self.noise.povm(s) for s in self.labels}

    def initial_state(self) -> DensityMatrix:
        """All transmons in |0>, mixed with |1> by the residual excitation under SPAM noise."""
        if self.noise.device is not None:
            return product_state(self.register, [self.noise.initial_site_state(s) for s in self.labels])
        return product_state(self.register, [np.diag([1.0] + [0.0] * (d - 1)).astype(complex) for d in self.dims])

    def _flux_windows(self, circuit: TimedCircuit) -> dict[str, list[tuple[float, float, str]]]:
        win: dict[str, list[tuple[float, float, str]]] = {s: [] for s in self.labels}
        if not self.noise.flux_noise:
            return win
        for ins in circuit.instructions:
            if ins.kind == "cz":
                win[fluxed_site(*ins.sites)].append((ins.start_ns, ins.end_ns, "cz"))
            elif ins.kind == "park":
                win[ins.sites[0]].append((ins.start_ns, ins.end_ns, "park"))
        return win

    def _idle_superop(self, site: str, a: float, b: float, windows) -> np.ndarray | None:
        if not self.noise.decoherence or b - a <= 1e-9:
            return None
        rate0 = 1.0 / self.noise.t_phi_us(site)
        exponent = (b - a) * 1e-3 * rate0
        for lo, hi, kind in windows:
            ov = min(b, hi) - max(a, lo)
            if ov > 0:
                exponent += ov * 1e-3 * (1.0 / self.noise.t_phi_us(site, kind) - rate0)
        t_phi = math.inf if exponent <= 0 else (b - a) * 1e-3 / exponent
        t1 = self.noise.device.transmons[site].t1_us
        return damping_superop(float(t1), float(t_phi), round(b - a, 9), self.noise.site_dim(site))

    def run(
        self,
        circuit: TimedCircuit,
        state: DensityMatrix | None = None,
        snapshots: Sequence[float] = (),
        hook: Callable[[int, TimedInstruction, np.ndarray, tuple], np.ndarray] | None = None,
        until: float | None = None,
    ) -> RunResult:
        """Execute `circuit`; returns the conditioned state and branch probability.

        `hook(index, instruction, matrix, dims)` is called after each acting
        instruction and may return a modified (possibly unnormalized) matrix; the
        running probability absorbs any trace change.
        """
        state = state or self.initial_state()
        if state.register.dims != self.dims:
            raise ValueError("state register does not match the simulator")
        m = state.matrix.copy()
        dims = self.dims
        windows = self._flux_windows(circuit)
        clock = {s: 0.0 for s in self.labels}
        prob = 1.0
        logs: list[MeasurementLog] = []
        snaps: list[tuple[float, DensityMatrix, float]] = []

        def flush(site: str, t: float):
            nonlocal m
            s = self._idle_superop(site, clock[site], t, windows[site])
            if s is not None:
                m = superop_on(m, dims, s, [self._axis[site]])
            clock[site] = max(clock[site], t)

        events = [(ins.event_ns, 0, k) for k, ins in enumerate(circuit.instructions) if ins.event_ns is not None]
        events += [(t, 1, j) for j, t in enumerate(snapshots)]
        events.sort()
        for t, typ, k in events:
            if typ == 1:
                for s in self.labels:
                    flush(s, t)
                snaps.append((t, DensityMatrix(self.register, m.copy()), prob))
                continue
            ins = circuit.instructions[k]
            for s in ins.sites:
                flush(s, t)
            axes = [self._axis[s] for s in ins.sites]
            if ins.kind == "rot":
                u = embed_unitary(rotation(*ins.params), dims[axes[0]])
                m = unitary_on(m, dims, u, axes)
            elif ins.kind == "cz":
                m = unitary_on(m, dims, self.noise.cz_unitary(*ins.sites), axes)
            elif ins.kind == "measure":
                povm = self._povm[ins.sites[0]]
                if ins.postselect is None:
                    m = sum(diag_scale_on(m, dims, e.diag, axes[0]) for e in povm)
                else:
                    el = next(e for e in povm if e.outcome == ins.postselect)
                    m = diag_scale_on(m, dims, el.diag, axes[0])
                    p = float(np.real(np.trace(m)))
                    logs.append(MeasurementLog(t, ins.sites[0], ins.tag, max(p, 0.0)))
                    if p <= UNDERFLOW:
                        return RunResult(None, 0.0, logs, snaps, underflow=True)
                    m /= p
                    prob *= p
            if hook is not None:
                m = hook(k, ins, m, dims)
                tr = float(np.real(np.trace(m)))
                if tr <= UNDERFLOW:
                    return RunResult(None, 0.0, logs, snaps, underflow=True)
                if abs(tr - 1) > 1e-14:
                    m /= tr
                    prob *= tr
        end = circuit.duration_ns if until is None else until
        for s in self.labels:
            flush(s, max(end, clock[s]))
        return RunResult(DensityMatrix(self.register, m), prob, logs, snaps)


# -- logical readout of data qubits -----------------------------------------


def data_state(dm: DensityMatrix) -> DensityMatrix:
    """Reduced state of D1-D4."""
    keep = [q for q in DATA if q in dm.register.labels]
    if tuple(keep) == dm.register.labels:
        return dm
    return partial_trace(dm, keep)


def assembly_statistics(dm: DensityMatrix, assembly: MeasurementAssembly, noise: NoiseModel | None = None) -> tuple[float, float]:
    """(acceptance probability, post-selected logical expectation) for a data readout.

    Pre-rotations are ideal; each site's declared outcome follows its assignment
    matrix, and a declared level 2 rejects the run.
    """
    noise = noise or NoiseModel.ideal()
    ds = data_state(dm)
    m = ds.matrix
    for q, (theta, phi) in assembly.rotations().items():
        ax = ds.register.index(q)
        m = unitary_on(m, ds.dims, embed_unitary(rotation(theta, phi), ds.dims[ax]), [ax])
    pops = np.clip(np.real(np.diagonal(m)), 0, None).reshape(ds.dims)
    for j, q in enumerate(reversed(DATA)):
        a = noise.assignment(q)  # rows: declared 0, 1, 2; columns: true level
        # each contraction prepends its output axis, so earlier sites shift right by j
        pops = np.tensordot(a[:2, :], pops, axes=([1], [ds.register.index(q) + j]))
    probs = pops.reshape(16)
    table = assembly.outcome_table()
    acc = float(np.sum(probs * table[:, 1]))
    if acc <= 0:
        return 0.0, float("nan")
    return acc, float(np.sum(probs * table[:, 0] * table[:, 1]) / acc)


def logical_bloch(dm: DensityMatrix) -> tuple[np.ndarray, float]:
    """Codespace-projected Bloch vector of the data qubits and the codespace weight (after level truncation)."""
    ds = data_state(dm)
    w_leak = 1.0
    if any(d > 2 for d in ds.dims):
        ds, w_leak = project_levels(ds, 1)
    rho_l, w = project_to_codespace(ds)
    return rho_l.bloch, w * w_leak


# -- detection experiments --------------------------------------------------


@dataclass
class ExperimentRecord:
    """Post-selection statistics of a repeated error-detection run.

    Arrays are indexed by cycle n = 1..N.  `ancilla_probs[n-1, i]` is the
    probability of outcome 0 for ancilla A_{i+1} in cycle n given no earlier
    detection; `final_probs` is the probability of a trivial final data-qubit
    Z syndrome; `post_selected` is P(n).
    """

    config: dict
    cycles: np.ndarray
    time_ns: np.ndarray
    ancilla_probs: np.ndarray
    final_probs: np.ndarray
    post_selected: np.ndarray
    z_l: np.ndarray
    x_l: np.ndarray
    y_l: np.ndarray
    bloch: np.ndarray
    codespace_weight: np.ndarray
    final_state: DensityMatrix | None = field(default=None, repr=False)

    @property
    def config_hash(self) -> str:
        return config_hash(self.config)

    def rows(self) -> list[dict]:
        return [
            {
                "cycle": int(n),
                "time_ns": float(t),
                "p_a1": float(a[0]),
                "p_a2": float(a[1]),
                "p_a3": float(a[2]),
                "p_final": float(f),
                "post_selected_fraction": float(p),
                "z_l": float(z),
                "x_l": float(x),
                "y_l": float(y),
            }
            for n, t, a, f, p, z, x, y in zip(
                self.cycles, self.time_ns, self.ancilla_probs, self.final_probs, self.post_selected, self.z_l, self.x_l, self.y_l
            )
        ]


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True, default=str).encode()).hexdigest()


def _prep_circuit(prep) -> tuple[TimedCircuit, dict]:
    if isinstance(prep, TimedCircuit):
        return prep, {"prep": prep.name}
    if isinstance(prep, str):
        if prep.startswith("ft"):
            return build_prep_ft(prep[2:]), {"prep": prep}
        prep = CARDINAL_PREP[prep]
    if not isinstance(prep, PrepAngles):
        prep = PrepAngles(*prep)
    return build_prep(prep), {"theta": prep.theta, "phi": prep.phi}


def detection_program(prep, scheme: str, n_cycles: int, echo_phases=(0.0, 0.0, 0.0, 0.0)) -> TimedCircuit:
    circ, _ = _prep_circuit(prep)
    cyc = build_cycle(scheme, echo_phases)
    for k in range(1, n_cycles + 1):
        circ = circ.then(cyc.retagged(str(k)))
    return circ


def run_detection(
    prep="0",
    scheme: str = "pipelined",
    n_cycles: int = 1,
    noise: NoiseModel | None = None,
    observables: Sequence[str] = ("Z", "X", "Y"),
    hook=None,
    keep_state: bool = False,
    echo_phases=(0.0, 0.0, 0.0, 0.0),
) -> ExperimentRecord:
    """Prepare, run `n_cycles` stabilizer cycles and read out the data qubits after every cycle.

    `prep` is PrepAngles, a (theta, phi) pair, a cardinal label ("0", "+i", ...),
    "ft+"/"ft-" for the product-state preparations, or a TimedCircuit.

    Raises:
        BranchUnderflowError: the no-error branch has vanishing probability.
    """
    if n_cycles < 1:
        raise ValueError("n_cycles must be >= 1")
    noise = noise or NoiseModel.ideal()
    prep_circ, prep_cfg = _prep_circuit(prep)
    program = detection_program(prep_circ, scheme, n_cycles, echo_phases)
    period = CYCLE_NS[scheme]
    t_snap = [prep_circ.duration_ns + k * period for k in range(1, n_cycles + 1)]
    sim = Simulator(noise)
    res = sim.run(program, snapshots=t_snap, hook=hook, until=t_snap[-1])
    if res.underflow:
        raise BranchUnderflowError("no-error branch probability underflowed")

    anc = np.ones((n_cycles, 3))
    for log in res.measurements:
        k = int(log.tag.split("@")[1]) - 1
        anc[k, ("A1", "A2", "A3").index(log.site)] = log.probability
    asm = {b: build_logical_measurement(b) for b in ("Z", "X", "Y")}
    fin, obs, bloch, weight = [], {b: [] for b in "ZXY"}, [], []
    for _, snap, _ in res.snapshots:
        ds = data_state(snap)
        p_f, z = assembly_statistics(ds, asm["Z"], noise)
        fin.append(p_f)
        obs["Z"].append(z)
        for b in ("X", "Y"):
            obs[b].append(assembly_statistics(ds, asm[b], noise)[1] if b in observables else float("nan"))
        try:
            bl, w = logical_bloch(ds)
        except Exception:
            bl, w = np.full(3, np.nan), 0.0
        bloch.append(bl)
        weight.append(w)
    cum = np.cumprod(np.prod(anc, axis=1))
    fin = np.array(fin)
    cfg = {
        "experiment": "detection",
        "scheme": scheme,
        "n_cycles": n_cycles,
        "noise": noise.describe(),
        **prep_cfg,
    }
    return ExperimentRecord(
        config=cfg,
        cycles=np.arange(1, n_cycles + 1),
        time_ns=np.array(t_snap) + T_RO_NS,
        ancilla_probs=anc,
        final_probs=fin,
        post_selected=cum * fin,
        z_l=np.array(obs["Z"]),
        x_l=np.array(obs["X"]),
        y_l=np.array(obs["Y"]),
        bloch=np.array(bloch),
        codespace_weight=np.array(weight),
        final_state=res.snapshots[-1][1] if keep_state else None,
    )


def sample_records(record: ExperimentRecord, shots: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Synthetic shot statistics consistent with a branch-deterministic record.

    Returns per-cycle accepted counts (an independent experiment per n, as in
    hardware) and, for a single run of N cycles, the cycle at which each shot
    was first rejected by an ancilla (0 = never) obtained by sequential
    binomial thinning.
    """
    if shots < 1:
        raise ValueError("shots must be positive")
    accepted = rng.binomial(shots, np.clip(record.post_selected, 0, 1))
    per_cycle = np.prod(record.ancilla_probs, axis=1)
    alive = shots
    first = np.zeros(shots, dtype=int)
    pos = 0
    for n, q in enumerate(per_cycle, start=1):
        survive = rng.binomial(alive, min(max(q, 0.0), 1.0))
        first[pos : pos + alive - survive] = n
        pos += alive - survive
        alive = survive
    rng.shuffle(first)
    return {"accepted": accepted, "shots": np.full_like(accepted, shots), "first_detection": first}
