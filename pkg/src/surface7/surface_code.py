"""Algebra of the distance-2 surface code on data qubits D1-D4.

Data qubits map to tensor factors left to right in the order D1, D2, D3, D4.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache, reduce

import numpy as np

from .engine import PAULI, DensityMatrix, QuditRegister, PhysicalityError

DATA = ("D1", "D2", "D3", "D4")
ANCILLAS = ("A1", "A2", "A3")
SITES = DATA + ANCILLAS

STABILIZERS = {"Z13": "ZIZI", "X1234": "XXXX", "Z24": "IZIZ"}
Z_LOGICALS = ("ZZII", "IIZZ", "ZIIZ", "IZZI")
X_LOGICALS = ("XIXI", "IXIX")
Y_LOGICAL = "YZXI"  # +i X_L Z_L with X_L = X1X3, Z_L = Z1Z2

DATA_REGISTER = QuditRegister((2, 2, 2, 2), DATA)


def pauli_matrix(label: str) -> np.ndarray:
    return reduce(np.kron, [PAULI[c] for c in label])


def paulis_commute(a: str, b: str) -> bool:
    anti = sum(1 for x, y in zip(a, b) if x != "I" and y != "I" and x != y)
    return anti % 2 == 0


def ket(bits: str) -> np.ndarray:
    v = np.zeros(2 ** len(bits), dtype=complex)
    v[int(bits, 2)] = 1.0
    return v


@lru_cache(maxsize=None)
def _logical_basis() -> tuple[np.ndarray, np.ndarray]:
    zero = (ket("0000") + ket("1111")) / np.sqrt(2)
    one = (ket("0101") + ket("1010")) / np.sqrt(2)
    zero.flags.writeable = False
    one.flags.writeable = False
    return zero, one


def logical_basis() -> tuple[np.ndarray, np.ndarray]:
    """(|0_L>, |1_L>) as 16-dimensional vectors."""
    return _logical_basis()


@lru_cache(maxsize=None)
def _projector() -> np.ndarray:
    p = np.eye(16, dtype=complex)
    for s in STABILIZERS.values():
        p = p @ (np.eye(16) + pauli_matrix(s)) / 2
    p.flags.writeable = False
    return p


def codespace_projector() -> np.ndarray:
    """I_L, the product of (I + s)/2 over the stabilizers (rank 2)."""
    return _projector()


@lru_cache(maxsize=None)
def logical_operators() -> dict[str, np.ndarray]:
    """Logical Paulis as representative strings multiplied by I_L."""
    il = _projector()
    ops = {
        "I": il,
        "X": pauli_matrix(X_LOGICALS[0]) @ il,
        "Y": pauli_matrix(Y_LOGICAL) @ il,
        "Z": pauli_matrix(Z_LOGICALS[0]) @ il,
    }
    for m in ops.values():
        m.flags.writeable = False
    return ops


def logical_state_vector(alpha: complex, beta: complex) -> np.ndarray:
    zero, one = logical_basis()
    v = alpha * zero + beta * one
    return v / np.linalg.norm(v)


CARDINAL_LOGICAL = {
    "0": np.array([1, 0], dtype=complex),
    "1": np.array([0, 1], dtype=complex),
    "+": np.array([1, 1], dtype=complex) / np.sqrt(2),
    "-": np.array([1, -1], dtype=complex) / np.sqrt(2),
    "+i": np.array([1, 1j], dtype=complex) / np.sqrt(2),
    "-i": np.array([1, -1j], dtype=complex) / np.sqrt(2),
}


def encode(logical: np.ndarray) -> np.ndarray:
    """Four-qubit vector for a logical 2-vector."""
    zero, one = logical_basis()
    return logical[0] * zero + logical[1] * one


@dataclass(frozen=True)
class LogicalState:
    """Logical qubit state in the {|0_L>, |1_L>} basis."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.shape != (2, 2):
            raise ValueError("logical state must be 2x2")
        object.__setattr__(self, "matrix", m)
        if np.linalg.norm(self.bloch) > 1 + 1e-9:
            raise PhysicalityError("Bloch vector outside the unit ball")

    @classmethod
    def from_bloch(cls, bloch) -> "LogicalState":
        x, y, z = (float(b) for b in bloch)
        return cls(0.5 * (PAULI["I"] + x * PAULI["X"] + y * PAULI["Y"] + z * PAULI["Z"]))

    @classmethod
    def pure(cls, vec) -> "LogicalState":
        v = np.asarray(vec, dtype=complex)
        v = v / np.linalg.norm(v)
        return cls(np.outer(v, v.conj()))

    @property
    def bloch(self) -> np.ndarray:
        return np.array([np.real(np.trace(self.matrix @ PAULI[p])) for p in "XYZ"])

    def fidelity(self, target) -> float:
        return logical_fidelity(self, target)


def _as_matrix(rho) -> np.ndarray:
    if isinstance(rho, DensityMatrix):
        if rho.register.dims != (2, 2, 2, 2):
            raise ValueError("codespace projection needs a four-qubit data state")
        return rho.matrix
    return np.asarray(rho, dtype=complex)


def project_to_codespace(rho) -> tuple[LogicalState, float]:
    """Logical state p_i = Tr(rho s_i^L)/Tr(rho I_L) and the codespace weight Tr(rho I_L)."""
    m = _as_matrix(rho)
    ops = logical_operators()
    weight = float(np.real(np.trace(m @ ops["I"])))
    if weight <= 1e-12:
        raise PhysicalityError(f"negligible codespace weight {weight:.3e}")
    bloch = [float(np.real(np.trace(m @ ops[p]))) / weight for p in "XYZ"]
    return LogicalState.from_bloch(bloch), weight


def logical_fidelity(rho_l: LogicalState, target) -> float:
    """<psi|rho_L|psi> for a pure logical target (2-vector or cardinal label)."""
    psi = CARDINAL_LOGICAL[target] if isinstance(target, str) else np.asarray(target, dtype=complex)
    psi = psi / np.linalg.norm(psi)
    return float(np.real(psi.conj() @ rho_l.matrix @ psi))


def state_fidelity(rho, psi: np.ndarray) -> float:
    """<psi|rho|psi> for a four-qubit target vector."""
    m = _as_matrix(rho)
    psi = np.asarray(psi, dtype=complex)
    return float(np.real(psi.conj() @ m @ psi))


def stabilizer_group() -> set[str]:
    """All 8 elements of the stabilizer group as sign-free Pauli strings."""
    gens = list(STABILIZERS.values())
    group = set()
    for mask in itertools.product([0, 1], repeat=len(gens)):
        label = "IIII"
        for use, g in zip(mask, gens):
            if use:
                label = _multiply_labels(label, g)
        group.add(label)
    return group


def _multiply_labels(a: str, b: str) -> str:
    table = {("I", x): x for x in "IXYZ"}
    table.update({(x, "I"): x for x in "IXYZ"})
    table.update({(x, x): "I" for x in "XYZ"})
    table.update({("X", "Y"): "Z", ("Y", "X"): "Z", ("Y", "Z"): "X", ("Z", "Y"): "X", ("Z", "X"): "Y", ("X", "Z"): "Y"})
    return "".join(table[(x, y)] for x, y in zip(a, b))


def detectable(error: str) -> bool:
    """True if the Pauli error anticommutes with at least one stabilizer."""
    return any(not paulis_commute(error, s) for s in STABILIZERS.values())


def logical_action(error: str) -> str:
    """Which logical Pauli an undetectable error implements ("I", "X", "Y" or "Z")."""
    if detectable(error):
        raise ValueError(f"{error} is detectable")
    x_comm = paulis_commute(error, X_LOGICALS[0])
    z_comm = paulis_commute(error, Z_LOGICALS[0])
    return {(True, True): "I", (True, False): "X", (False, True): "Z", (False, False): "Y"}[(x_comm, z_comm)]


def undetectable_logical_errors(weight: int) -> dict[str, str]:
    """Every weight-w Pauli error that commutes with all stabilizers yet acts nontrivially."""
    found = {}
    for support in itertools.combinations(range(4), weight):
        for paulis in itertools.product("XYZ", repeat=weight):
            label = ["I"] * 4
            for q, p in zip(support, paulis):
                label[q] = p
            s = "".join(label)
            if not detectable(s):
                action = logical_action(s)
                if action != "I":
                    found[s] = action
    return found
