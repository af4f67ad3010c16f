"""State and logical-process tomography.

Pauli vectors are ordered lexicographically over "IXYZ" per qubit, so index 0
is the identity.  Pauli transfer matrices follow p' = R p, where p and p' are
input and output Pauli vectors; trace preservation makes the first row
(1, 0, 0, 0).  The Choi state is rho_R = 1/4 sum_ij R_ij sigma_j^T (x) sigma_i,
with the input (auxiliary) factor first.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from functools import lru_cache, reduce
from pathlib import Path
from typing import Sequence

import numpy as np

from .engine import PAULI, DensityMatrix, QuditRegister, project_levels, rotation, unitary_on
from .errors import ConvergenceError, RankDeficiencyError

_BASIS_ROT = {"X": (-np.pi / 2, np.pi / 2), "Y": (np.pi / 2, 0.0), "Z": None}


def pauli_labels(k: int) -> list[str]:
    return ["".join(t) for t in itertools.product("IXYZ", repeat=k)]


@lru_cache(maxsize=None)
def pauli_basis(k: int) -> np.ndarray:
    """(4^k, 2^k, 2^k) stack of Pauli matrices in label order."""
    mats = np.array([reduce(np.kron, [PAULI[c] for c in lab]) for lab in pauli_labels(k)])
    mats.flags.writeable = False
    return mats


@dataclass(frozen=True)
class PauliVector:
    """Pauli expectations p_i = Tr(rho sigma_i) of a k-qubit state.

    `stderr` holds binomial standard errors in sampled mode and `shots` the
    number of shots contributing to each entry; `weight` is the qubit-subspace
    population when leaked levels were projected out.
    """

    values: np.ndarray
    shots: np.ndarray | None = None
    stderr: np.ndarray | None = None
    weight: float = 1.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        k = int(round(np.log(v.size) / np.log(4)))
        if 4 ** k != v.size:
            raise ValueError("Pauli vector length must be a power of 4")
        if abs(v[0] - 1) > 1e-9:
            raise ValueError("p_0 must equal 1")
        object.__setattr__(self, "values", v)

    @property
    def n_qubits(self) -> int:
        return int(round(np.log(self.values.size) / np.log(4)))

    @property
    def labels(self) -> list[str]:
        return pauli_labels(self.n_qubits)

    def __getitem__(self, label: str) -> float:
        return float(self.values[self.labels.index(label)])


def _qubit_state(dm: DensityMatrix) -> tuple[np.ndarray, float]:
    if any(d > 2 for d in dm.dims):
        dm, w = project_levels(dm, 1)
        return dm.matrix, w
    return dm.matrix / dm.trace(), 1.0


def measure_pauli_vector(dm: DensityMatrix | np.ndarray, shots: int | None = None, rng: np.random.Generator | None = None) -> PauliVector:
    """Pauli expectations, exact or estimated from the 3^k local basis settings.

    In sampled mode every setting receives `shots` shots; each Pauli is
    estimated from all settings compatible with it and its binomial standard
    error is reported.
    """
    if not isinstance(dm, DensityMatrix):
        m = np.asarray(dm, dtype=complex)
        k = int(round(np.log2(m.shape[0])))
        dm = DensityMatrix(QuditRegister((2,) * k), m)
    rho, weight = _qubit_state(dm)
    k = len(dm.dims)
    basis = pauli_basis(k)
    if shots is None:
        vals = np.real(np.einsum("iab,ba->i", basis, rho))
        return PauliVector(vals, weight=weight)
    if rng is None:
        raise ValueError("sampled mode needs an explicit random generator")
    labels = pauli_labels(k)
    sums = np.zeros(len(labels))
    counts = np.zeros(len(labels))
    dims = (2,) * k
    outcomes = np.array(list(itertools.product((0, 1), repeat=k)))
    for setting in itertools.product("XYZ", repeat=k):
        m = rho
        for q, b in enumerate(setting):
            if _BASIS_ROT[b] is not None:
                m = unitary_on(m, dims, rotation(*_BASIS_ROT[b]), [q])
        probs = np.clip(np.real(np.diagonal(m)), 0, None)
        hist = rng.multinomial(shots, probs / probs.sum())
        for i, lab in enumerate(labels):
            if all(c == "I" or c == s for c, s in zip(lab, setting)):
                mask = np.array([c != "I" for c in lab])
                signs = 1 - 2 * (outcomes[:, mask].sum(axis=1) % 2)
                sums[i] += float(signs @ hist)
                counts[i] += shots
    vals = sums / counts
    vals[0] = 1.0
    err = np.sqrt(np.clip(1 - vals ** 2, 0, None) / counts)
    err[0] = 0.0
    return PauliVector(vals, shots=counts, stderr=err, weight=weight)


# -- maximum-likelihood (least-squares) state reconstruction ----------------


def project_to_density_matrices(h: np.ndarray) -> np.ndarray:
    """Frobenius-nearest density matrix: eigenvalues projected onto the probability simplex."""
    h = 0.5 * (h + h.conj().T)
    w, v = np.linalg.eigh(h)
    u = np.sort(w)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, len(u) + 1)
    rho = idx[u - css / idx > 0][-1]
    tau = css[rho - 1] / rho
    lam = np.clip(w - tau, 0, None)
    return (v * lam) @ v.conj().T


@dataclass(frozen=True)
class MLEResult:
    state: DensityMatrix
    cost: float
    iterations: int
    stationarity: float


def mle_state_info(p: PauliVector | Sequence[float], max_iter: int = 10_000, tol: float = 1e-10) -> MLEResult:
    """Minimize sum_i (p_i - Tr(rho sigma_i))^2 over density matrices by projected gradient.

    The step 1/(2d) is the inverse Lipschitz constant of the gradient.  The
    returned `stationarity` is ||rho - P(rho - step grad)||_F, which vanishes
    exactly at the constrained optimum.
    """
    p = p if isinstance(p, PauliVector) else PauliVector(np.asarray(p, dtype=float))
    k = p.n_qubits
    d = 2 ** k
    basis = pauli_basis(k)
    vals = p.values

    def grad(rho):
        resid = np.real(np.einsum("iab,ba->i", basis, rho)) - vals
        return 2 * np.einsum("i,iab->ab", resid, basis), float(resid @ resid)

    step = 1.0 / (2 * d)
    rho = project_to_density_matrices(np.einsum("i,iab->ab", vals, basis) / d)
    for it in range(1, max_iter + 1):
        g, _ = grad(rho)
        nxt = project_to_density_matrices(rho - step * g)
        delta = np.linalg.norm(nxt - rho)
        rho = nxt
        if delta < tol:
            break
    else:
        raise ConvergenceError(f"projected gradient did not converge in {max_iter} iterations", float(delta))
    g, cost = grad(rho)
    stat = float(np.linalg.norm(rho - project_to_density_matrices(rho - step * g)))
    return MLEResult(DensityMatrix(QuditRegister((2,) * k), rho), cost, it, stat)


def mle_state(p: PauliVector | Sequence[float], max_iter: int = 10_000, tol: float = 1e-10) -> DensityMatrix:
    """Physical density matrix closest to the Pauli data (see :func:`mle_state_info`)."""
    return mle_state_info(p, max_iter, tol).state


# -- Pauli transfer matrices and Choi states --------------------------------


def unitary_ptm(u: np.ndarray) -> np.ndarray:
    """R_ij = Tr(sigma_i U sigma_j U^dagger)/2 for a single-qubit unitary."""
    basis = pauli_basis(1)
    return np.real(np.einsum("iab,bc,jcd,da->ij", basis, u, basis, u.conj().T)) / 2


def depolarizing_ptm(p: float) -> np.ndarray:
    return np.diag([1.0, 1 - p, 1 - p, 1 - p])


def ptm_to_choi(r: np.ndarray) -> np.ndarray:
    basis = pauli_basis(1)
    return np.einsum("ij,jba,icd->acbd", r, basis, basis).reshape(4, 4) / 4


def choi_to_ptm(choi: np.ndarray) -> np.ndarray:
    basis = pauli_basis(1)
    ops = np.einsum("jba,icd->ijacbd", basis, basis).reshape(4, 4, 4, 4)
    return np.real(np.einsum("ijxy,yx->ij", ops, choi))


def partial_trace_output(choi: np.ndarray) -> np.ndarray:
    """Trace over the output (second) factor; equals I/2 for trace-preserving maps."""
    return np.einsum("aibi->ab", choi.reshape(2, 2, 2, 2))


def _psd_part(h: np.ndarray) -> np.ndarray:
    h = 0.5 * (h + h.conj().T)
    w, v = np.linalg.eigh(h)
    return (v * np.clip(w, 0, None)) @ v.conj().T


def _tp_part(c: np.ndarray) -> np.ndarray:
    m = partial_trace_output(c) - np.eye(2) / 2
    return c - np.kron(m, np.eye(2) / 2)


@dataclass(frozen=True)
class TPCPResult:
    ptm: np.ndarray
    choi: np.ndarray
    iterations: int
    tp_residual: float
    min_eigenvalue: float


def tpcp_project_info(r: np.ndarray, max_iter: int = 100_000, tol: float = 1e-13) -> TPCPResult:
    """Nearest (Choi Frobenius norm) trace-preserving completely positive map.

    Dykstra's alternating projections between the PSD cone and the affine
    trace-preservation set converge to the projection onto their intersection.
    """
    c0 = ptm_to_choi(np.asarray(r, dtype=float))
    x = c0.copy()
    p = np.zeros_like(x)
    q = np.zeros_like(x)
    for it in range(1, max_iter + 1):
        y = _tp_part(x + p)
        p = x + p - y
        x_new = _psd_part(y + q)
        q = y + q - x_new
        change = np.linalg.norm(x_new - x)
        x = x_new
        tp_res = float(np.max(np.abs(partial_trace_output(x) - np.eye(2) / 2)))
        if change < tol and tp_res < 1e-12:
            break
    else:
        raise ConvergenceError("TPCP projection did not converge", float(change))
    # exact trace preservation on the final PSD iterate via a tiny affine correction
    x = _tp_part(x)
    w = np.linalg.eigvalsh(0.5 * (x + x.conj().T))
    ptm = choi_to_ptm(x)
    ptm[0] = (1.0, 0.0, 0.0, 0.0)
    return TPCPResult(ptm, x, it, float(np.max(np.abs(partial_trace_output(x) - np.eye(2) / 2))), float(w[0]))


def tpcp_project(r: np.ndarray) -> np.ndarray:
    return tpcp_project_info(r).ptm


def avg_gate_fidelity(r: np.ndarray, r_ideal: np.ndarray) -> float:
    """F = (Tr(R_ideal^T R) + 2)/6 for single-qubit PTMs."""
    r, r_ideal = np.asarray(r), np.asarray(r_ideal)
    if r.shape != (4, 4) or r_ideal.shape != (4, 4):
        raise ValueError("PTMs must be 4x4")
    return float((np.trace(r_ideal.T @ r) + 2) / 6)


def _augment(vectors) -> np.ndarray:
    v = np.atleast_2d(np.asarray(vectors, dtype=float))
    if v.shape[1] == 3:
        v = np.hstack([np.ones((v.shape[0], 1)), v])
    if v.shape[1] != 4:
        raise ValueError("expected Bloch vectors (3) or Pauli vectors (4)")
    return v.T


def lptm_inversion(inputs, outputs) -> np.ndarray:
    """Least-squares R solving p'_k = R p_k over an (overcomplete) input set."""
    p_in, p_out = _augment(inputs), _augment(outputs)
    if p_in.shape[1] != p_out.shape[1]:
        raise ValueError("inputs and outputs must pair up")
    if np.linalg.matrix_rank(p_in, tol=1e-9) < 4:
        raise RankDeficiencyError("input states are not tomographically complete")
    return p_out @ np.linalg.pinv(p_in)


# -- CSV artifacts ----------------------------------------------------------


def write_matrix_csv(path: str | Path, matrix: np.ndarray, row_labels: Sequence[str] | None = None, col_labels: Sequence[str] | None = None) -> None:
    """Real matrix with a header row naming the Pauli labels."""
    m = np.asarray(matrix)
    k = int(round(np.log(m.shape[1]) / np.log(4)))
    cols = list(col_labels or pauli_labels(k))
    rows = list(row_labels or pauli_labels(int(round(np.log(m.shape[0]) / np.log(4)))))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["pauli"] + cols)
        for lab, row in zip(rows, m):
            w.writerow([lab] + [repr(float(x)) for x in np.real(row)])


def read_matrix_csv(path: str | Path) -> tuple[np.ndarray, list[str], list[str]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    cols = rows[0][1:]
    labels = [r[0] for r in rows[1:]]
    return np.array([[float(x) for x in r[1:]] for r in rows[1:]]), labels, cols


# -- logical process tomography ---------------------------------------------


@dataclass
class ProcessTomographyResult:
    gate: str
    raw_ptm: np.ndarray
    ptm: np.ndarray
    ideal_ptm: np.ndarray
    fidelity: float
    inputs: np.ndarray
    outputs: np.ndarray
    probabilities: np.ndarray
    details: dict = field(default_factory=dict)


def reconstruct_logical(dm: DensityMatrix, shots: int | None = None, rng=None) -> tuple[np.ndarray, float]:
    """Four-qubit tomography of the data qubits, MLE, then codespace projection."""
    from .simulator import data_state
    from .surface_code import project_to_codespace

    ds = data_state(dm)
    pv = measure_pauli_vector(ds, shots, rng)
    rho = mle_state(pv)
    rho_l, w = project_to_codespace(rho)
    return rho_l.bloch, w


def logical_process_tomography(gate, noise=None, scheme: str = "pipelined", shots: int | None = None, rng=None) -> ProcessTomographyResult:
    """Six cardinal inputs -> cycle -> gate -> cycle; returns the TPCP-projected logical PTM.

    The input state of each run is reconstructed from a snapshot taken after
    the first cycle; the output after the second.
    """
    from .circuits import CARDINAL_PREP, LogicalGate, build_cycle, build_logical_gate, build_prep
    from .simulator import Simulator

    g = gate if isinstance(gate, LogicalGate) else build_logical_gate(gate)
    sim = Simulator(noise)
    cyc = build_cycle(scheme)
    ins, outs, probs = [], [], []
    for lab, angles in CARDINAL_PREP.items():
        first = build_prep(angles).then(cyc)
        prog = first.then(g.circuit).then(cyc)
        res = sim.run(prog, snapshots=[first.duration_ns])
        if res.underflow:
            raise RankDeficiencyError(f"input {lab} never survives post-selection")
        ins.append(reconstruct_logical(res.snapshots[0][1], shots, rng)[0])
        outs.append(reconstruct_logical(res.state, shots, rng)[0])
        probs.append(res.probability)
    raw = lptm_inversion(ins, outs)
    proj = tpcp_project(raw)
    ideal = unitary_ptm(g.ideal)
    return ProcessTomographyResult(g.name, raw, proj, ideal, avg_gate_fidelity(proj, ideal), np.array(ins), np.array(outs), np.array(probs))
