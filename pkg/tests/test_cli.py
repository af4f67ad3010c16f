import json
import os
from importlib import resources
from pathlib import Path

import jsonschema
import pytest

from surface7.cli import COMMANDS, build_parser, main
from surface7.experiments import read_rows, write_rows

GOLDEN = Path(__file__).parent / "golden" / "help"
CONFIGS = Path(__file__).parent.parent / "configs"


def schema(name):
    return json.loads(resources.files("surface7").joinpath("data", name).read_text())


def help_text(command=None):
    parser = build_parser()
    if command is None:
        return parser.format_help()
    sub = next(a for a in parser._actions if a.dest == "command")
    return sub.choices[command].format_help()


@pytest.fixture(autouse=True)
def fixed_width(monkeypatch):
    monkeypatch.setenv("COLUMNS", "100")


@pytest.mark.parametrize("command", [None, *COMMANDS])
def test_help_matches_golden(command):
    path = GOLDEN / f"{command or 'main'}.txt"
    text = help_text(command)
    if os.environ.get("SURFACE7_REGEN_GOLDEN"):
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    assert text == path.read_text()


def run_cli(tmp_path, *args):
    code = main([*args, "--out", str(tmp_path)])
    manifest = tmp_path / "manifest.json"
    return code, (json.loads(manifest.read_text()) if manifest.exists() else None)


def test_stabilize_noiseless(tmp_path, capsys):
    code, man = run_cli(tmp_path, "stabilize", "--noise", "0", "--cycles", "5")
    assert code == 0
    rows = read_rows(tmp_path / "fig4c.csv")
    assert [float(r["post_selected_fraction"]) for r in rows] == pytest.approx([0.5] * 5, abs=1e-12)
    assert "gamma = 0.000000" in capsys.readouterr().out
    jsonschema.validate(man, schema("manifest.schema.json"))
    assert set(man["outputs"]) == {"fig4c.csv", "fig4d.csv", "fit.csv", "fig4d.svg"}


def test_gate_tomo_t_gate(tmp_path, capsys):
    code, man = run_cli(tmp_path, "gate-tomo", "--gate", "T")
    assert code == 0
    assert "T: F_L^G = 1.000000" in capsys.readouterr().out
    assert man["results"]["fidelity"]["T"] == pytest.approx(1, abs=1e-9)
    assert len(read_rows(tmp_path / "fig3f.csv")) == 16


def test_init_suite_writes_summary(tmp_path):
    code, _ = run_cli(tmp_path, "init-suite", "--noise", "1")
    assert code == 0
    rows = read_rows(tmp_path / "summary.csv")
    assert {r["operation"] for r in rows} == {"init"}
    assert len(read_rows(tmp_path / "init_suite.csv")) == 6


def test_sampled_runs_are_reproducible(tmp_path):
    args = ("stabilize", "--noise", "2", "--cycles", "4", "--mode", "sampled", "--shots", "500", "--seed", "9")
    assert run_cli(tmp_path / "a", *args)[0] == 0
    assert run_cli(tmp_path / "b", *args)[0] == 0
    for name in ("fig4c.csv", "fig4d.csv", "fit.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_fit_subcommand(tmp_path, capsys):
    src = write_rows(tmp_path / "p.csv", [{"cycle": n, "post_selected_fraction": 0.9 * 0.8**n} for n in range(1, 8)])
    code, man = run_cli(tmp_path / "out", "fit", "--input", str(src))
    assert code == 0
    assert man["results"]["gamma"] == pytest.approx(0.2, abs=1e-9)


def test_leakage_subcommand(tmp_path):
    code, man = run_cli(tmp_path, "leakage-estimate", "--seed", "1", "--leak-weights", "0.0,0.1", "--shots", "10000")
    assert code == 0
    fr = [float(r["leaked_fraction"]) for r in read_rows(tmp_path / "figS4.csv")]
    assert fr == pytest.approx([0.0, 0.1], abs=0.01)
    assert man["results"]["low_confidence"] is False


def test_calibrate_zz_subcommand(tmp_path):
    code, man = run_cli(tmp_path, "calibrate-zz", "--check", "Z13", "--phase-points", "8")
    assert code == 0
    rows = read_rows(tmp_path / "zz_phases.csv")
    assert len(rows) == 2
    for r in rows:
        assert float(r["conditional_phase"]) == pytest.approx(float(r["conditional_phase_injected"]), abs=1e-6)
    assert man["results"]["max_residual"] < 1e-10


@pytest.mark.parametrize(
    "args",
    [
        ("stabilize", "--noise", "9"),
        ("stabilize", "--scheme", "serial"),
        ("stabilize", "--mode", "sampled", "--shots", "10"),
        ("stabilize", "--l1", "0.5"),
        ("nonsense",),
        ("fit",),
        ("stabilize", "--prep", "q"),
        ("ablation", "--levels", "5"),
        ("leakage-estimate", "--seed", "1", "--shots", "100"),
    ],
)
def test_configuration_errors_exit_1(tmp_path, args):
    assert main([*args, "--out", str(tmp_path)]) == 1


def test_missing_config_file_exits_1(tmp_path):
    assert main(["stabilize", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == 1


def test_config_for_other_experiment_exits_1(tmp_path):
    cfg2 = tmp_path / "d.json"
    cfg2.write_text(json.dumps({"experiment": "fit"}))
    assert main(["stabilize", "--config", str(cfg2), "--out", str(tmp_path)]) == 1


def test_numerical_failure_exits_2(tmp_path):
    src = write_rows(tmp_path / "p.csv", [{"cycle": n, "post_selected_fraction": 0.0} for n in range(1, 6)])
    assert main(["fit", "--input", str(src), "--out", str(tmp_path / "out")]) == 2


def test_unknown_config_key_exits_1(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"experiment": "stabilize", "bogus": 1}))
    assert main(["stabilize", "--config", str(cfg), "--out", str(tmp_path)]) == 1


def test_flags_override_config(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"experiment": "stabilize", "noise": 3, "cycles": 3}))
    code, man = run_cli(tmp_path / "out", "stabilize", "--config", str(cfg), "--noise", "0")
    assert code == 0
    assert man["config"]["noise"] == 0 and man["config"]["cycles"] == 3


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.json")), ids=lambda p: p.stem)
def test_example_configs_validate(path):
    doc = json.loads(path.read_text())
    jsonschema.validate(doc, schema("config.schema.json"))
    assert doc["experiment"] == path.stem


def test_every_subcommand_has_an_example_config():
    assert {p.stem for p in CONFIGS.glob("*.json")} == set(COMMANDS)


def test_csv_round_trip(tmp_path):
    rows = [{"x": 1 / 3, "y": "a"}]
    back = read_rows(write_rows(tmp_path / "r.csv", rows))
    assert float(back[0]["x"]) == 1 / 3 and back[0]["y"] == "a"
