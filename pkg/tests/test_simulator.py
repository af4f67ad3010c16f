import numpy as np
import pytest

from surface7.circuits import build_cycle
from surface7.errors import BranchUnderflowError
from surface7.noise import NoiseModel
from surface7.simulator import Simulator, config_hash, logical_bloch, run_detection, sample_records


@pytest.fixture(scope="module")
def noisy_record():
    return run_detection("+", "pipelined", 6, NoiseModel(3))


def test_post_selected_fraction_nonincreasing(noisy_record):
    p = noisy_record.post_selected
    assert np.all(np.diff(p) <= 1e-15)
    assert np.all((p > 0) & (p <= 1))


def test_observables_bounded(noisy_record):
    for arr in (noisy_record.z_l, noisy_record.x_l, noisy_record.y_l):
        assert np.all(np.abs(arr) <= 1 + 1e-9)


def test_rows_layout(noisy_record):
    rows = noisy_record.rows()
    assert [r["cycle"] for r in rows] == list(range(1, 7))
    assert rows[0]["time_ns"] < rows[1]["time_ns"]
    assert set(rows[0]) >= {"p_a1", "p_a2", "p_a3", "p_final", "post_selected_fraction", "z_l"}


def test_time_axis_uses_cycle_length():
    rec = run_detection("0", "parallel", 3)
    assert np.allclose(np.diff(rec.time_ns), 1000.0)


def test_sampled_mean_matches_exact(noisy_record):
    shots = 10_000
    out = sample_records(noisy_record, shots, np.random.default_rng(7))
    p = noisy_record.post_selected
    se = np.sqrt(p * (1 - p) / shots)
    assert np.all(np.abs(out["accepted"] / shots - p) <= 3 * se + 1e-12)
    assert out["first_detection"].shape == (shots,)


def test_sampling_is_seeded(noisy_record):
    a = sample_records(noisy_record, 500, np.random.default_rng(3))
    b = sample_records(noisy_record, 500, np.random.default_rng(3))
    assert np.array_equal(a["accepted"], b["accepted"])
    assert np.array_equal(a["first_detection"], b["first_detection"])


def test_sampling_rejects_zero_shots(noisy_record):
    with pytest.raises(ValueError):
        sample_records(noisy_record, 0, np.random.default_rng(0))


def test_underflow_raises():
    def kill(k, ins, m, dims):
        return 0 * m if ins.kind == "cz" else m

    with pytest.raises(BranchUnderflowError):
        run_detection("0", "pipelined", 1, hook=kill)


def test_cycles_must_be_positive():
    with pytest.raises(ValueError):
        run_detection("0", "pipelined", 0)


def test_config_hash_is_stable(noisy_record):
    assert noisy_record.config_hash == config_hash(dict(noisy_record.config))
    assert config_hash({"a": 1, "b": 2}) == config_hash({"b": 2, "a": 1})


def test_state_register_mismatch():
    sim = Simulator()
    other = Simulator(NoiseModel(5, l1=0.01))
    with pytest.raises(ValueError):
        sim.run(build_cycle(), state=other.initial_state())


def test_snapshot_is_unit_trace():
    sim = Simulator(NoiseModel(1))
    res = sim.run(build_cycle().retagged("1"), snapshots=[500.0])
    t, snap, _ = res.snapshots[0]
    assert t == 500.0
    assert snap.trace() == pytest.approx(1.0, abs=1e-12)


def test_leaky_bloch_vector_in_ball():
    rec = run_detection("+", "pipelined", 2, NoiseModel(5, l1=0.05), observables=("Z",), keep_state=True)
    b, w = logical_bloch(rec.final_state)
    assert np.linalg.norm(b) <= 1 + 1e-9
    assert 0 < w < 1
