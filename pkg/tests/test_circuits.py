import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from surface7.circuits import (
    CARDINAL_PREP,
    PrepAngles,
    TimedCircuit,
    TimedInstruction,
    build_check,
    build_cycle,
    build_logical_gate,
    build_logical_measurement,
    build_prep,
)
from surface7.engine import DensityMatrix
from surface7.experiments import _encoded_initial
from surface7.simulator import Simulator, assembly_statistics, data_state, run_detection
from surface7.surface_code import encode, ket, logical_basis, project_to_codespace, state_fidelity

GOLDEN = Path(__file__).parent / "golden"


@pytest.mark.parametrize("scheme", ["pipelined", "parallel"])
def test_cycle_dump_matches_golden(scheme):
    assert build_cycle(scheme).dump() == (GOLDEN / f"cycle_{scheme}.txt").read_text()


@pytest.mark.parametrize("scheme", ["pipelined", "parallel"])
def test_dump_parse_round_trip(scheme):
    text = build_cycle(scheme).dump()
    assert TimedCircuit.parse(text).dump() == text


def test_cycle_durations():
    assert build_cycle("pipelined").duration_ns == 840
    assert build_cycle("parallel").duration_ns == 1000


def test_unknown_scheme_rejected():
    with pytest.raises(ValueError):
        build_cycle("serial")


def test_overlapping_instructions_rejected():
    a = TimedInstruction("rot", ("D1",), 0.0, params=(1.0, 0.0))
    b = TimedInstruction("cz", ("A1", "D1"), 10.0)
    with pytest.raises(ValueError):
        TimedCircuit((a, b), 100.0)


def test_instruction_duration_enforced():
    with pytest.raises(ValueError):
        TimedInstruction("cz", ("A1", "D1"), 0.0, 40.0)


def test_pipelined_readout_windows():
    meas = {i.sites[0]: (i.start_ns, i.end_ns) for i in build_cycle("pipelined").instructions if i.kind == "measure"}
    assert meas["A2"] == (280.0, 820.0)
    assert meas["A1"] == meas["A3"] == (440.0, 980.0)


def test_consecutive_cycles_tile():
    cyc = build_cycle("pipelined")
    # composition re-validates that no site is double-booked across the boundary
    prog = cyc.then(cyc).then(cyc)
    assert prog.duration_ns == 3 * 840


@pytest.mark.parametrize("angles,bits", [((0.0, 0.0), "0000"), ((math.pi, 0.0), "1010")])
def test_prep_product_states(angles, bits):
    res = Simulator(labels=("D1", "D2", "D3", "D4")).run(build_prep(*angles).retagged("p"))
    assert state_fidelity(res.state, ket(bits)) == pytest.approx(1, abs=1e-12)


def test_prep_equatorial_phase_on_d3():
    res = Simulator(labels=("D1", "D2", "D3", "D4")).run(build_prep(math.pi / 2, math.pi / 2))
    s = 1 / math.sqrt(2)
    d1 = np.array([s, s])
    d3 = np.array([s, 1j * s])
    z = np.array([1, 0])
    psi = np.kron(np.kron(np.kron(d1, z), d3), z)
    assert state_fidelity(res.state, psi) == pytest.approx(1, abs=1e-12)


@pytest.mark.parametrize("angles", [(-0.1, 0.0), (math.pi + 0.1, 0.0), (1.0, 2 * math.pi)])
def test_prep_angle_domain(angles):
    with pytest.raises(ValueError):
        PrepAngles(*angles)


@pytest.mark.parametrize("scheme", ["pipelined", "parallel"])
def test_noiseless_cycle_on_zero_is_identity(scheme):
    sim = Simulator()
    res = sim.run(build_cycle(scheme).retagged("1"), state=_encoded_initial(sim, "0"))
    assert res.probability == pytest.approx(1, abs=1e-12)
    assert all(m.probability == pytest.approx(1, abs=1e-12) for m in res.measurements)
    assert state_fidelity(data_state(res.state), logical_basis()[0]) == pytest.approx(1, abs=1e-10)


def test_noiseless_detection_probabilities():
    assert run_detection("+", "pipelined", 1).post_selected[0] == pytest.approx(0.25, abs=1e-12)
    rec = run_detection("0", "pipelined", 4)
    assert np.allclose(rec.post_selected, 0.5, atol=1e-12)
    assert np.allclose(rec.z_l, 1, atol=1e-9)


@settings(max_examples=15, deadline=None)
@given(theta=st.floats(0, math.pi), phi=st.floats(0, 2 * math.pi, exclude_max=True))
def test_schemes_agree_without_noise(theta, phi):
    a = run_detection((theta, phi), "pipelined", 1, keep_state=True)
    b = run_detection((theta, phi), "parallel", 1, keep_state=True)
    assert np.max(np.abs(data_state(a.final_state).matrix - data_state(b.final_state).matrix)) <= 1e-10
    assert a.post_selected[0] == pytest.approx(b.post_selected[0], abs=1e-12)


def _codespace_dm(vec):
    psi = encode(np.asarray(vec, dtype=complex) / np.linalg.norm(vec))
    from surface7.engine import QuditRegister

    return DensityMatrix(QuditRegister((2,) * 4, ("D1", "D2", "D3", "D4")), np.outer(psi, psi.conj()))


def test_measurement_assemblies():
    p, v = assembly_statistics(_codespace_dm([1, 0]), build_logical_measurement("Z"))
    assert (p, v) == pytest.approx((1, 1))
    p, v = assembly_statistics(_codespace_dm([1, -1]), build_logical_measurement("X"))
    assert (p, v) == pytest.approx((1, -1))
    p, v = assembly_statistics(_codespace_dm([1, 1j]), build_logical_measurement("Y"))
    assert (p, v) == pytest.approx((1, 1))


def test_y_assembly_outcome_table_by_enumeration():
    # explicit oracle: value = parity of D1,D2,D3 bits, accept iff D2 xor D4 = 0
    table = build_logical_measurement("Y").outcome_table()
    for idx, (val, ok) in enumerate(table):
        b = [(idx >> (3 - k)) & 1 for k in range(4)]
        assert val == 1 - 2 * ((b[0] + b[1] + b[2]) % 2)
        assert ok == int(b[1] == b[3])


def _run_gate(gate, prep):
    sim = Simulator()
    base = build_prep(CARDINAL_PREP[prep]).then(build_cycle("pipelined"))
    res0 = sim.run(base)
    res = sim.run(base.then(build_logical_gate(gate).circuit))
    rho_l, w = project_to_codespace(data_state(res.state))
    return rho_l, res.probability / res0.probability, w


def test_transversal_z_on_plus():
    rho_l, p, w = _run_gate("Z", "+")
    assert p == pytest.approx(1) and w == pytest.approx(1)
    assert rho_l.fidelity("-") == pytest.approx(1, abs=1e-10)


def test_t_gate_by_measurement():
    rho_l, p, _ = _run_gate("TL", "+")
    assert p == pytest.approx(0.5, abs=1e-12)
    target = np.array([1, np.exp(1j * math.pi / 4)]) / math.sqrt(2)
    assert rho_l.fidelity(target) == pytest.approx(1, abs=1e-10)


def test_x90_gate_by_measurement():
    rho_l, p, _ = _run_gate("X90", "0")
    assert p == pytest.approx(0.5, abs=1e-12)
    assert rho_l.fidelity(np.array([1, -1j]) / math.sqrt(2)) == pytest.approx(1, abs=1e-10)


def test_unknown_gate_rejected():
    with pytest.raises(ValueError):
        build_logical_gate("H")


def test_check_blocks():
    assert build_check("Z13").instructions[-1].sites == ("A1",)
    with pytest.raises(ValueError):
        build_check("Z12")
