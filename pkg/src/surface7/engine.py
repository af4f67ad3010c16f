"""Exact density-matrix simulation of a register of mixed-dimension qudits.

Every site is a transmon truncated to two or three levels.  Operators are
always given on the product space of the target sites, in the order the
sites are listed.  The register's tensor-factor order is the order of
``QuditRegister.labels``, left to right.

Qubit Pauli operators on a qutrit site act on levels {0, 1} and annihilate
level 2 (see :func:`embed`).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce
from typing import Iterable, Mapping, Sequence

import numpy as np

ATOL = 1e-10

PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


class PhysicalityError(ValueError):
    """An operator or state violates a physicality requirement."""


@dataclass(frozen=True)
class QuditRegister:
    dims: tuple[int, ...]
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if not dims:
            raise ValueError("register needs at least one site")
        if any(d not in (2, 3) for d in dims):
            raise ValueError(f"site dimensions must be 2 or 3, got {dims}")
        labels = tuple(self.labels) or tuple(f"q{i}" for i in range(len(dims)))
        if len(labels) != len(dims):
            raise ValueError("one label per site required")
        if len(set(labels)) != len(labels):
            raise ValueError("site labels must be unique")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "labels", labels)

    @property
    def n_sites(self) -> int:
        return len(self.dims)

    @property
    def total_dim(self) -> int:
        return int(np.prod(self.dims))

    def index(self, site: int | str) -> int:
        if isinstance(site, str):
            try:
                return self.labels.index(site)
            except ValueError:
                raise IndexError(f"unknown site {site!r}") from None
        if not 0 <= site < self.n_sites:
            raise IndexError(f"site index {site} out of range")
        return int(site)

    def indices(self, sites: Iterable[int | str]) -> tuple[int, ...]:
        idx = tuple(self.index(s) for s in sites)
        if len(set(idx)) != len(idx):
            raise ValueError("repeated site in target list")
        return idx

    def sub(self, sites: Iterable[int | str]) -> "QuditRegister":
        idx = self.indices(sites)
        return QuditRegister(tuple(self.dims[i] for i in idx), tuple(self.labels[i] for i in idx))


@dataclass
class DensityMatrix:
    register: QuditRegister
    matrix: np.ndarray

    def __post_init__(self):
        d = self.register.total_dim
        self.matrix = np.asarray(self.matrix, dtype=complex)
        if self.matrix.shape != (d, d):
            raise ValueError(f"matrix shape {self.matrix.shape} does not match register dim {d}")

    @property
    def dims(self) -> tuple[int, ...]:
        return self.register.dims

    def tensor(self) -> np.ndarray:
        return self.matrix.reshape(self.dims + self.dims)

    def trace(self) -> float:
        return float(np.real(np.trace(self.matrix)))

    def purity(self) -> float:
        return float(np.real(np.vdot(self.matrix, self.matrix)))

    def copy(self) -> "DensityMatrix":
        return DensityMatrix(self.register, self.matrix.copy())

    def normalized(self) -> "DensityMatrix":
        return DensityMatrix(self.register, self.matrix / self.trace())

    def check(self, atol: float = ATOL, normalized: bool = True) -> None:
        """Raise PhysicalityError unless Hermitian, unit-trace (or sub-unit) and PSD."""
        m = self.matrix
        if np.max(np.abs(m - m.conj().T)) > 1e-12 * max(1.0, np.max(np.abs(m))):
            raise PhysicalityError("density matrix is not Hermitian")
        tr = self.trace()
        if normalized and abs(tr - 1) > atol:
            raise PhysicalityError(f"trace {tr} != 1")
        if not normalized and tr > 1 + atol:
            raise PhysicalityError(f"branch trace {tr} > 1")
        lo = np.linalg.eigvalsh(0.5 * (m + m.conj().T))[0]
        if lo < -atol:
            raise PhysicalityError(f"negative eigenvalue {lo}")


@dataclass(frozen=True)
class KrausChannel:
    operators: tuple[np.ndarray, ...]
    sites: tuple[int | str, ...]
    trace_preserving: bool = True
    _superop: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        ops = tuple(np.asarray(k, dtype=complex) for k in self.operators)
        if not ops:
            raise ValueError("channel needs at least one Kraus operator")
        dim = ops[0].shape[0]
        if any(k.shape != (dim, dim) for k in ops):
            raise ValueError("Kraus operators must be square and equally sized")
        object.__setattr__(self, "operators", ops)
        object.__setattr__(self, "sites", tuple(self.sites))
        if self.trace_preserving:
            completeness = sum(k.conj().T @ k for k in ops)
            if np.max(np.abs(completeness - np.eye(dim))) > ATOL:
                raise PhysicalityError("Kraus operators are not complete")

    @classmethod
    def from_superoperator(cls, superop: np.ndarray, sites, trace_preserving: bool = True):
        """Build a channel from a (d^2, d^2) superoperator acting on vec index (a, b)."""
        superop = np.asarray(superop, dtype=complex)
        d = int(round(np.sqrt(superop.shape[0])))
        choi = superop.reshape(d, d, d, d).transpose(0, 2, 1, 3).reshape(d * d, d * d)
        w, v = np.linalg.eigh(0.5 * (choi + choi.conj().T))
        ops = [np.sqrt(wk) * v[:, k].reshape(d, d) for k, wk in enumerate(w) if wk > 1e-14]
        return cls(tuple(ops), tuple(sites), trace_preserving)

    def superoperator(self) -> np.ndarray:
        """Matrix S with rho'[a, b] = sum_ij S[(a, b), (i, j)] rho[i, j]."""
        if self._superop is None:
            s = sum(np.kron(k, k.conj()) for k in self.operators)
            object.__setattr__(self, "_superop", s)
        return self._superop


@dataclass(frozen=True)
class PovmElement:
    """Diagonal measurement operator M_i = sum_j sqrt(P(i|j)) |j><j|."""

    outcome: int
    diag: np.ndarray

    def __post_init__(self):
        diag = np.asarray(self.diag, dtype=float)
        if np.any(diag < 0):
            raise ValueError("POVM amplitudes must be nonnegative")
        object.__setattr__(self, "diag", diag)

    @property
    def operator(self) -> np.ndarray:
        return np.diag(self.diag).astype(complex)


def povm_from_assignment(assignment: np.ndarray) -> tuple[PovmElement, ...]:
    """POVM set from an assignment matrix with entries P(i|j) (rows i, columns j)."""
    a = np.asarray(assignment, dtype=float)
    if np.any(a < -1e-15) or np.max(np.abs(a.sum(axis=0) - 1)) > ATOL:
        raise ValueError("assignment matrix columns must be probability vectors")
    return tuple(PovmElement(i, np.sqrt(np.clip(a[i], 0, None))) for i in range(a.shape[0]))


def ideal_povm(dim: int = 2) -> tuple[PovmElement, ...]:
    """Projective Z-basis readout; a leaked level is declared as outcome 1."""
    a = np.eye(dim)
    if dim == 3:
        a = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 1.0], [0.0, 0.0, 0.0]])
    return povm_from_assignment(a)


def embed(op: np.ndarray, dim: int) -> np.ndarray:
    """Embed a qubit operator on levels {0, 1} of a `dim`-level site (zero on level 2)."""
    op = np.asarray(op, dtype=complex)
    if op.shape[0] == dim:
        return op
    out = np.zeros((dim, dim), dtype=complex)
    out[:2, :2] = op
    return out


def embed_unitary(op: np.ndarray, dim: int) -> np.ndarray:
    """Like :func:`embed` but acts as identity on level 2, keeping unitarity."""
    out = embed(op, dim)
    if dim == 3 and op.shape[0] == 2:
        out[2, 2] = 1.0
    return out


# -- tensor kernels ---------------------------------------------------------


def _apply_ket(t: np.ndarray, op: np.ndarray, axes: Sequence[int]) -> np.ndarray:
    k = len(axes)
    shape = tuple(t.shape[a] for a in axes)
    op_t = op.reshape(shape + shape)
    out = np.tensordot(op_t, t, axes=(list(range(k, 2 * k)), list(axes)))
    return np.moveaxis(out, list(range(k)), list(axes))


def _apply_superop(t: np.ndarray, superop: np.ndarray, axes: Sequence[int], n: int) -> np.ndarray:
    k = len(axes)
    shape = tuple(t.shape[a] for a in axes)
    # superop index order: (kets_out, bras_out), (kets_in, bras_in)
    s_t = superop.reshape(shape + shape + shape + shape)
    all_axes = list(axes) + [a + n for a in axes]
    out = np.tensordot(s_t, t, axes=(list(range(2 * k, 4 * k)), all_axes))
    return np.moveaxis(out, list(range(2 * k)), all_axes)


def unitary_on(matrix: np.ndarray, dims: tuple[int, ...], U: np.ndarray, axes: Sequence[int]) -> np.ndarray:
    """U rho U^dagger on the sites `axes`, operating on a flat (D, D) matrix."""
    n = len(dims)
    t = matrix.reshape(dims + dims)
    t = _apply_ket(t, U, axes)
    t = _apply_ket(t, U.conj(), [a + n for a in axes])
    return np.ascontiguousarray(t).reshape(matrix.shape)


def superop_on(matrix: np.ndarray, dims: tuple[int, ...], superop: np.ndarray, axes: Sequence[int]) -> np.ndarray:
    n = len(dims)
    t = _apply_superop(matrix.reshape(dims + dims), superop, axes, n)
    return np.ascontiguousarray(t).reshape(matrix.shape)


def diag_scale_on(matrix: np.ndarray, dims: tuple[int, ...], diag: np.ndarray, axis: int) -> np.ndarray:
    """M rho M^dagger for a real diagonal single-site M (cheap broadcast)."""
    n = len(dims)
    shape_k = [1] * (2 * n)
    shape_k[axis] = dims[axis]
    shape_b = [1] * (2 * n)
    shape_b[axis + n] = dims[axis]
    t = matrix.reshape(dims + dims) * diag.reshape(shape_k) * diag.reshape(shape_b)
    return t.reshape(matrix.shape)


# -- public operations ------------------------------------------------------


def new_register(dims: Sequence[int], occupations: Sequence[int], labels: Sequence[str] = ()) -> DensityMatrix:
    """Pure product state |occupations><occupations| on a fresh register."""
    reg = QuditRegister(tuple(dims), tuple(labels))
    occ = tuple(int(o) for o in occupations)
    if len(occ) != reg.n_sites:
        raise ValueError("one occupation per site required")
    if any(not 0 <= o < d for o, d in zip(occ, reg.dims)):
        raise ValueError(f"occupation {occ} invalid for dims {reg.dims}")
    idx = int(np.ravel_multi_index(occ, reg.dims))
    m = np.zeros((reg.total_dim, reg.total_dim), dtype=complex)
    m[idx, idx] = 1.0
    return DensityMatrix(reg, m)


def product_state(register: QuditRegister, site_states: Sequence[np.ndarray]) -> DensityMatrix:
    """Tensor product of single-site density matrices."""
    mats = [np.asarray(s, dtype=complex) for s in site_states]
    if [m.shape[0] for m in mats] != list(register.dims):
        raise ValueError("site states do not match register dims")
    return DensityMatrix(register, reduce(np.kron, mats))


def is_unitary(U: np.ndarray, atol: float = ATOL) -> bool:
    U = np.asarray(U)
    return U.ndim == 2 and U.shape[0] == U.shape[1] and np.allclose(U.conj().T @ U, np.eye(U.shape[0]), atol=atol, rtol=0)


def apply_unitary(dm: DensityMatrix, U: np.ndarray, sites: Sequence[int | str]) -> DensityMatrix:
    """rho -> U rho U^dagger on the listed sites.

    A 2-level operator acting on a 3-level site is embedded with the identity
    on level 2.
    """
    axes = dm.register.indices(sites)
    U = np.asarray(U, dtype=complex)
    if not is_unitary(U):
        raise PhysicalityError("operator is not unitary")
    target = int(np.prod([dm.dims[a] for a in axes]))
    if U.shape[0] != target:
        if len(axes) == 1:
            U = embed_unitary(U, dm.dims[axes[0]])
        else:
            raise ValueError(f"operator dim {U.shape[0]} does not match target dim {target}")
    return DensityMatrix(dm.register, unitary_on(dm.matrix, dm.dims, U, axes))


def apply_kraus(dm: DensityMatrix, channel: KrausChannel) -> DensityMatrix:
    """rho -> sum_k K rho K^dagger."""
    axes = dm.register.indices(channel.sites)
    target = int(np.prod([dm.dims[a] for a in axes]))
    if channel.operators[0].shape[0] != target:
        raise ValueError("channel dimension does not match target sites")
    return DensityMatrix(dm.register, superop_on(dm.matrix, dm.dims, channel.superoperator(), axes))


def measure_condition(
    dm: DensityMatrix, site: int | str, outcome: int, povm: Sequence[PovmElement] | None = None
) -> tuple[float, DensityMatrix | None]:
    """Probability of `outcome` and the conditioned (renormalized) state.

    A zero-probability branch returns ``(0.0, None)``.
    """
    axis = dm.register.index(site)
    d = dm.dims[axis]
    povm = ideal_povm(d) if povm is None else povm
    total = sum(e.diag ** 2 for e in povm)
    if np.max(np.abs(total - 1)) > ATOL:
        raise PhysicalityError("POVM elements do not sum to identity")
    element = next(e for e in povm if e.outcome == outcome)
    if element.diag.shape[0] != d:
        raise ValueError("POVM dimension does not match site")
    weights = np.real(np.diagonal(dm.matrix)).reshape(dm.dims)
    p = float(np.sum(np.moveaxis(weights, axis, -1) * element.diag ** 2))
    if p <= 1e-15:
        return 0.0, None
    m = diag_scale_on(dm.matrix, dm.dims, element.diag, axis) / p
    return p, DensityMatrix(dm.register, m)


def _operator_factors(dm: DensityMatrix, operator) -> list[tuple[int, np.ndarray]]:
    reg = dm.register
    if isinstance(operator, str):
        if len(operator) != reg.n_sites:
            raise ValueError("Pauli string length must equal the number of sites")
        items = [(i, c) for i, c in enumerate(operator.upper()) if c != "I"]
    elif isinstance(operator, Mapping):
        items = [(reg.index(s), c) for s, c in operator.items()]
    else:
        items = [(reg.index(s), c) for s, c in operator]
    out = []
    for axis, op in items:
        mat = PAULI[op.upper()] if isinstance(op, str) else np.asarray(op, dtype=complex)
        if not np.allclose(mat, mat.conj().T, atol=ATOL):
            raise ValueError("operator is not Hermitian")
        out.append((axis, embed(mat, dm.dims[axis])))
    return out


def expectation(dm: DensityMatrix, operator) -> float:
    """Tr(rho O) for a product operator.

    `operator` is a full-length Pauli string (``"ZZIIIII"``), a mapping
    ``{site: "X" | matrix}``, or a sequence of ``(site, "X" | matrix)`` pairs.
    """
    t = dm.tensor()
    for axis, mat in _operator_factors(dm, operator):
        t = _apply_ket(t, mat, [axis])
    val = np.trace(np.ascontiguousarray(t).reshape(dm.matrix.shape))
    return float(np.real(val))


def operator_matrix(register: QuditRegister, operator) -> np.ndarray:
    """Dense matrix of a product operator on the full register."""
    dummy = DensityMatrix(register, np.zeros((register.total_dim,) * 2))
    factors = dict(_operator_factors(dummy, operator))
    mats = [factors.get(i, np.eye(d, dtype=complex)) for i, d in enumerate(register.dims)]
    return reduce(np.kron, mats)


def partial_trace(dm: DensityMatrix, keep: Sequence[int | str]) -> DensityMatrix:
    """Reduced state on `keep` (kept in register order)."""
    if not list(keep):
        raise ValueError("keep set must be nonempty")
    reg = dm.register
    kept = sorted(reg.indices(keep))
    n = reg.n_sites
    letters = "abcdefghijklmnopqrstuvwxyz"
    ket = [letters[i] for i in range(n)]
    bra = [letters[i].upper() if i in kept else letters[i] for i in range(n)]
    out = [ket[i] for i in kept] + [bra[i] for i in kept]
    spec = "".join(ket) + "".join(bra) + "->" + "".join(out)
    sub = reg.sub(kept)
    m = np.einsum(spec, dm.tensor()).reshape(sub.total_dim, sub.total_dim)
    return DensityMatrix(sub, m)


def project_levels(dm: DensityMatrix, max_level: int = 1) -> tuple[DensityMatrix, float]:
    """Restrict every site to levels <= max_level; returns (renormalized state, kept weight)."""
    reg = dm.register
    idx = [np.arange(min(d, max_level + 1)) for d in reg.dims]
    t = dm.tensor()[np.ix_(*(idx + idx))]
    new_reg = QuditRegister(tuple(len(i) for i in idx), reg.labels)
    m = np.ascontiguousarray(t).reshape(new_reg.total_dim, new_reg.total_dim)
    w = float(np.real(np.trace(m)))
    if w <= 1e-15:
        raise PhysicalityError("no weight in the computational subspace")
    return DensityMatrix(new_reg, m / w), w


def rotation(theta: float, phi: float) -> np.ndarray:
    """R_phi^theta = exp(-i theta/2 (cos(phi) X + sin(phi) Y)); phi=0 is x, phi=pi/2 is y."""
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    return np.array(
        [[c, -1j * s * np.exp(-1j * phi)], [-1j * s * np.exp(1j * phi), c]],
        dtype=complex,
    )


def cz(dim_a: int = 2, dim_b: int = 2) -> np.ndarray:
    """Controlled-Z; phase -1 on |11> only, identity on every state involving level 2."""
    d = np.ones(dim_a * dim_b, dtype=complex)
    d[1 * dim_b + 1] = -1
    return np.diag(d)
