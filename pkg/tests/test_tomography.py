import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_density_matrix, random_unitary
from oracles import cvxpy_mle, paulis, random_physical_ptm
from surface7.engine import DensityMatrix, QuditRegister
from surface7.errors import RankDeficiencyError
from surface7.surface_code import encode, logical_basis, project_to_codespace
from surface7.tomography import (
    PauliVector,
    avg_gate_fidelity,
    choi_to_ptm,
    depolarizing_ptm,
    lptm_inversion,
    measure_pauli_vector,
    mle_state,
    mle_state_info,
    partial_trace_output,
    ptm_to_choi,
    read_matrix_csv,
    tpcp_project,
    tpcp_project_info,
    unitary_ptm,
    write_matrix_csv,
)

T_GATE = np.diag([1, np.exp(1j * math.pi / 4)])


def pauli_vec(rho):
    k = int(round(math.log2(rho.shape[0])))
    return np.array([np.trace(rho @ s).real for s in paulis(k)])


# -- Pauli vectors ---------------------------------------------------------------------


def test_zero_state_pauli_vector():
    assert np.allclose(measure_pauli_vector(np.diag([1, 0])).values, [1, 0, 0, 1])


def test_logical_zero_stabilizers():
    psi = logical_basis()[0]
    pv = measure_pauli_vector(np.outer(psi, psi.conj()))
    for s in ("ZIZI", "IZIZ", "XXXX"):
        assert pv[s] == pytest.approx(1)


def test_bell_correlations():
    psi = np.array([1, 0, 0, 1]) / math.sqrt(2)
    pv = measure_pauli_vector(np.outer(psi, psi))
    assert (pv["XX"], pv["ZZ"], pv["YY"]) == pytest.approx((1, 1, -1))


def test_pauli_vector_validation():
    with pytest.raises(ValueError):
        PauliVector(np.ones(5))
    with pytest.raises(ValueError):
        PauliVector(np.array([0.5, 0, 0, 0]))


def test_sampled_pauli_vector(rng):
    rho = random_density_matrix(rng, 4)
    pv = measure_pauli_vector(rho, shots=4000, rng=np.random.default_rng(1))
    exact = pauli_vec(rho)
    assert np.all(np.abs(pv.values - exact) <= 5 * pv.stderr + 1e-12)
    assert pv.values[0] == 1 and pv.stderr[0] == 0


def test_sampled_mode_needs_rng(rng):
    with pytest.raises(ValueError):
        measure_pauli_vector(random_density_matrix(rng, 2), shots=10)


# -- MLE ---------------------------------------------------------------------------------


def test_mle_exact_state(rng):
    rho = random_density_matrix(rng, 4)
    out = mle_state_info(pauli_vec(rho))
    assert np.linalg.norm(out.state.matrix - rho) < 1e-6
    assert out.cost <= 1e-12


def test_mle_bloch_projection():
    out = mle_state([1, 1, 1, 1]).matrix
    assert np.allclose(pauli_vec(out)[1:], np.ones(3) / math.sqrt(3), atol=1e-8)


def test_mle_flipped_stabilizer():
    psi = logical_basis()[0]
    p = pauli_vec(np.outer(psi, psi.conj()))
    labels = PauliVector(p).labels
    p[labels.index("XXXX")] = -1
    rho = mle_state(p).matrix
    assert np.linalg.eigvalsh(rho)[0] > -1e-10
    _, w = project_to_codespace(rho)
    assert w < 1


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), k=st.sampled_from([1, 2]))
def test_mle_matches_sdp_oracle(seed, k):
    rng = np.random.default_rng(seed)
    p = np.concatenate([[1.0], rng.uniform(-1, 1, 4**k - 1) * (1.6 if k == 1 else 1.0)])
    ours = mle_state(p).matrix
    assert np.linalg.norm(ours - cvxpy_mle(p)) < 1e-4


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_mle_idempotent(seed):
    rng = np.random.default_rng(seed)
    p = np.concatenate([[1.0], rng.uniform(-1, 1, 15)])
    once = mle_state(p).matrix
    twice = mle_state(pauli_vec(once)).matrix
    assert np.linalg.norm(once - twice) < 1e-8


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_mle_output_is_density_matrix(seed):
    rng = np.random.default_rng(seed)
    p = np.concatenate([[1.0], rng.uniform(-1, 1, 15)])
    rho = mle_state(p)
    rho.check()


# -- PTMs and Choi states ----------------------------------------------------------


def test_identity_from_matching_inputs_and_outputs():
    ins = [[0, 0, 1], [0, 0, -1], [1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0]]
    assert np.allclose(lptm_inversion(ins, ins), np.eye(4))


def test_t_gate_ptm_from_cardinal_states():
    ins = np.array([[0, 0, 1], [0, 0, -1], [1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0]], dtype=float)
    c = s = 1 / math.sqrt(2)
    rot = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
    r = lptm_inversion(ins, ins @ rot.T)
    assert np.allclose(r[1:, 1:], rot)
    assert np.allclose(r, unitary_ptm(T_GATE))


def test_depolarizing_outputs():
    ins = [[0, 0, 1], [0, 0, -1], [1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0]]
    assert np.allclose(lptm_inversion(ins, np.zeros((6, 3))), np.diag([1, 0, 0, 0]))


def test_incomplete_inputs_rejected():
    with pytest.raises(RankDeficiencyError):
        lptm_inversion([[0, 0, 1], [0, 0, -1]], [[0, 0, 1], [0, 0, -1]])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_ptm_choi_round_trip(seed):
    r = random_physical_ptm(np.random.default_rng(seed))
    choi = ptm_to_choi(r)
    assert np.allclose(choi_to_ptm(choi), r, atol=1e-12)
    assert np.trace(choi).real == pytest.approx(1)
    assert np.allclose(partial_trace_output(choi), np.eye(2) / 2, atol=1e-12)
    assert np.linalg.eigvalsh(choi)[0] > -1e-12


def test_unitary_choi_is_pure(rng):
    u = random_unitary(rng, 2)
    choi = ptm_to_choi(unitary_ptm(u))
    assert np.trace(choi @ choi).real == pytest.approx(1)


def test_tpcp_keeps_physical_maps():
    u = unitary_ptm(T_GATE)
    assert np.allclose(tpcp_project(u), u, atol=1e-8)
    dep = depolarizing_ptm(1.0)
    assert np.allclose(tpcp_project(dep), dep, atol=1e-12)


def test_tpcp_repairs_inflated_map():
    r = unitary_ptm(T_GATE)
    r[1:, 1:] *= 1.5
    out = tpcp_project_info(r)
    assert out.min_eigenvalue >= -1e-9
    assert out.tp_residual <= 1e-8


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), scale=st.floats(1.05, 2.0))
def test_tpcp_idempotent_and_nonexpansive(seed, scale):
    rng = np.random.default_rng(seed)
    a = random_physical_ptm(rng)
    b = random_physical_ptm(rng)
    a[1:, 1:] *= scale
    b[1:] += rng.normal(scale=0.1, size=(3, 4))
    pa, pb = tpcp_project(a), tpcp_project(b)
    assert np.allclose(tpcp_project(pa), pa, atol=1e-10)
    d_in = np.linalg.norm(ptm_to_choi(a) - ptm_to_choi(b))
    d_out = np.linalg.norm(ptm_to_choi(pa) - ptm_to_choi(pb))
    assert d_out <= d_in + 1e-9


def test_tpcp_matches_sdp_oracle():
    import cvxpy as cp

    r = unitary_ptm(T_GATE)
    r[1:, 1:] *= 1.4
    r[3, 0] = 0.2
    c0 = ptm_to_choi(r)
    x = cp.Variable((4, 4), hermitian=True)
    cons = [x >> 0]
    for a in range(2):
        for b in range(2):
            cons.append(x[2 * a, 2 * b] + x[2 * a + 1, 2 * b + 1] == (0.5 if a == b else 0.0))
    cp.Problem(cp.Minimize(cp.sum_squares(cp.abs(x - c0))), cons).solve(solver=cp.CLARABEL)
    assert np.linalg.norm(tpcp_project_info(r).choi - x.value) < 1e-5


def test_average_gate_fidelity_examples(rng):
    u = unitary_ptm(random_unitary(rng, 2))
    assert avg_gate_fidelity(u, u) == pytest.approx(1)
    assert avg_gate_fidelity(np.eye(4), unitary_ptm(T_GATE)) == pytest.approx((2 + math.sqrt(2) + 2) / 6)
    assert avg_gate_fidelity(depolarizing_ptm(1.0), np.eye(4)) == pytest.approx(0.5)


def test_matrix_csv_round_trip(tmp_path, rng):
    m = rng.normal(size=(4, 4))
    path = tmp_path / "ptm.csv"
    write_matrix_csv(path, m, list("IXYZ"), list("IXYZ"))
    back, rows, cols = read_matrix_csv(path)
    assert np.array_equal(back, m)
    assert rows == cols == list("IXYZ")


def test_qutrit_state_tomography_drops_leaked_weight():
    m = np.zeros((3, 3), dtype=complex)
    m[0, 0], m[2, 2] = 0.8, 0.2
    pv = measure_pauli_vector(DensityMatrix(QuditRegister((3,)), m))
    assert pv.weight == pytest.approx(0.8)
    assert pv["Z"] == pytest.approx(1)


def test_encoded_state_reconstruction():
    psi = encode(np.array([1, 1j]) / math.sqrt(2))
    rho = mle_state(measure_pauli_vector(np.outer(psi, psi.conj()))).matrix
    s, w = project_to_codespace(rho)
    assert np.allclose(s.bloch, [0, 1, 0], atol=1e-8) and w == pytest.approx(1)
