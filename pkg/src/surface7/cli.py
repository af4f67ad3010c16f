"""Command-line front end.

Each subcommand writes CSV files (the contract), an SVG plot and a
``manifest.json`` into the output directory.  Values come from, in order of
precedence: command-line flags, the ``--config`` JSON file, built-in defaults.

Exit codes: 0 success, 1 configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import platform
import subprocess
import sys
import time
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import scipy

from . import __version__
from .calibration import (
    check_czs,
    estimate_L1_markov,
    estimate_leakage,
    fit_detection_rate,
    generate_ramsey_phases,
    solve_cz_phases,
    synthetic_voltages,
)
from .circuits import SCHEMES
from .engine import PhysicalityError
from .errors import BranchUnderflowError, ConfigError, ConvergenceError, DegenerateFitError, RankDeficiencyError
from .experiments import (
    GAMMA_TARGET,
    L1_GRID,
    TOMO_GATES,
    SweepSpec,
    compare_schemes,
    default_device,
    read_rows,
    run_cardinal_init_suite,
    run_gate_tomography,
    run_logical_measurement_sweeps,
    run_model_ablation,
    stabilize,
    summary_rows,
    write_rows,
)
from .noise import DeviceParams, NoiseModel, zz_phase_table
from .simulator import config_hash, run_detection, sample_records
from .svg import line_plot

log = logging.getLogger("surface7")

COMMANDS = (
    "init-suite",
    "measure-sweep",
    "gate-tomo",
    "stabilize",
    "compare-schemes",
    "ablation",
    "fit",
    "calibrate-zz",
    "leakage-estimate",
)

NUMERICAL_ERRORS = (ConvergenceError, RankDeficiencyError, DegenerateFitError, BranchUnderflowError, PhysicalityError, FloatingPointError, np.linalg.LinAlgError)


@dataclass
class RunConfig:
    """Validated settings of one CLI run."""

    experiment: str
    out: str = "results"
    device: str | None = None
    noise: int = 0
    l1: float = 0.0
    scheme: str = "pipelined"
    cycles: int = 15
    mode: str = "exact"
    shots: int | None = None
    seed: int | None = None
    jobs: int = 1
    flux_profile: bool = True
    options: dict = field(default_factory=dict)

    def validate(self) -> "RunConfig":
        if self.experiment not in COMMANDS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if self.device is not None and not Path(self.device).is_file():
            raise ConfigError(f"device file {self.device} does not exist")
        if self.noise not in range(6):
            raise ConfigError(f"noise level {self.noise} not in 0..5")
        if not 0 <= self.l1 <= 0.25:
            raise ConfigError(f"l1={self.l1} outside [0, 0.25]")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.cycles < 1:
            raise ConfigError("cycles must be >= 1")
        if self.mode not in ("exact", "sampled"):
            raise ConfigError("mode must be 'exact' or 'sampled'")
        if self.mode == "sampled":
            if self.seed is None:
                raise ConfigError("sampled mode needs --seed")
            if not self.shots or self.shots < 1:
                raise ConfigError("sampled mode needs a positive --shots")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        return self

    def device_params(self) -> DeviceParams:
        if self.device is not None:
            dev = DeviceParams.from_json(self.device)
            return dev
        return default_device(self.flux_profile)

    def noise_model(self) -> NoiseModel:
        if self.noise == 0:
            return NoiseModel.ideal()
        return NoiseModel(self.noise, self.device_params(), self.l1 if self.noise >= 5 else 0.0)

    @property
    def sampled_shots(self) -> int | None:
        return self.shots if self.mode == "sampled" else None

    def as_dict(self) -> dict:
        return asdict(self)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("common options")
    g.add_argument("--config", help="JSON file with run settings; flags override its values")
    g.add_argument("--out", help="output directory (default: results)")
    g.add_argument("--device", help="device-parameter JSON (default: bundled table)")
    g.add_argument("--noise", type=int, help="noise model level 0-5 (default: 0)")
    g.add_argument("--l1", type=float, help="leakage per CZ for model 5 (default: 0)")
    g.add_argument("--scheme", choices=SCHEMES, help="stabilizer cycle schedule (default: pipelined)")
    g.add_argument("--cycles", type=int, help="number of stabilizer cycles (default: 15)")
    g.add_argument("--mode", choices=("exact", "sampled"), help="branch-deterministic or shot-sampled statistics (default: exact)")
    g.add_argument("--shots", type=int, help="shots per setting in sampled mode")
    g.add_argument("--seed", type=int, help="random seed (required in sampled mode)")
    g.add_argument("--jobs", type=int, help="worker processes for independent grid points (default: 1)")
    g.add_argument("--no-flux-profile", dest="flux_profile", action="store_const", const=False, help="keep zero flux sensitivities instead of the example profile")
    g.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = _Parser(prog="surface7", description="Distance-2 surface-code density-matrix experiments.")
    p.add_argument("--version", action="version", version=f"surface7 {__version__}")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    sub.add_parser("init-suite", parents=[common], help="cardinal-state initialization fidelities F_4Q and F_L")

    s = sub.add_parser("measure-sweep", parents=[common], help="logical readout sweeps and F_L^R")
    s.add_argument("--sweep", choices=("phi", "theta"), help="swept preparation angle (default: phi)")
    s.add_argument("--points", type=int, help="grid points (default: 16 for phi, 9 for theta)")
    s.add_argument("--bases", help="comma-separated logical bases (default: X,Y for phi; Z,X for theta)")

    s = sub.add_parser("gate-tomo", parents=[common], help="logical process tomography and F_L^G")
    s.add_argument("--gate", action="append", help="gate name (repeatable; default: T, X90, Z, X)")

    s = sub.add_parser("stabilize", parents=[common], help="repeated error detection: P(n) and <Z_L>")
    s.add_argument("--prep", help="input state label: 0, 1, +, -, +i, -i, ft+, ft- (default: 0)")

    s = sub.add_parser("compare-schemes", parents=[common], help="gamma for the pipelined and parallel schemes")
    s.add_argument("--states", help="comma-separated input states (default: 0,1,+,-)")

    s = sub.add_parser("ablation", parents=[common], help="gamma versus noise model and L1")
    s.add_argument("--l1-grid", type=_float_list, help="comma-separated L1 values for model 5 (default: --l1 if given, else 0.01,0.02,0.05,0.08)")
    s.add_argument("--levels", help="comma-separated model levels 0-4 to include (default: 0,1,2,3,4)")

    s = sub.add_parser("fit", parents=[common], help="fit P(n) = A (1 - gamma)^n to a CSV column")
    s.add_argument("--input", help="CSV file with the series")
    s.add_argument("--column", help="column holding P(n) (default: post_selected_fraction)")
    s.add_argument("--cycle-column", help="column holding n (default: cycle)")
    s.add_argument("--skip-first", action="store_const", const=True, help="drop the first cycle before fitting")

    s = sub.add_parser("calibrate-zz", parents=[common], help="Ramsey characterization and CZ-phase least squares")
    s.add_argument("--check", action="append", help="parity check Z13, Z24, Z1234 or X1234 (repeatable; default: the Z checks)")
    s.add_argument("--phase-points", type=int, help="analysis-axis points per Ramsey experiment (default: 16)")

    s = sub.add_parser("leakage-estimate", parents=[common], help="triple-Gaussian leaked-population estimate")
    s.add_argument("--input", help="CSV with columns cycle,voltage (default: synthetic shots)")
    s.add_argument("--calibration", help="CSV with columns state,voltage for |0>, |1>, |2>")
    s.add_argument("--leak-weights", type=_float_list, help="synthetic |2> weight per cycle (default: 0.1)")
    s.add_argument("--means", type=_float_list, help="synthetic component means (default: 0,4,8)")
    s.add_argument("--sigmas", type=_float_list, help="synthetic component widths (default: 1,1,1)")
    s.add_argument("--n-cz", type=int, help="CZs per cycle in which the transmon can leak, for the Markov L1 estimate")
    s.add_argument("--t1", type=float, help="T1 in us for the Markov L1 estimate")
    return p


@lru_cache(maxsize=None)
def config_keys() -> frozenset[str]:
    """Keys accepted in a --config file, from the bundled config schema."""
    doc = json.loads(resources.files("surface7").joinpath("data", "config.schema.json").read_text())
    return frozenset(doc["properties"])


COMMON_KEYS = ("out", "device", "noise", "l1", "scheme", "cycles", "mode", "shots", "seed", "jobs", "flux_profile")


def load_config(args: argparse.Namespace) -> RunConfig:
    """Merge defaults, the JSON config file and flags into a validated RunConfig."""
    values: dict[str, Any] = {}
    options: dict[str, Any] = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file {path} does not exist")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = sorted(set(doc) - config_keys())
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        if doc.get("experiment", args.command) != args.command:
            raise ConfigError(f"config is for {doc['experiment']!r}, not {args.command!r}")
        for k, v in doc.items():
            if k == "experiment":
                continue
            (values if k in COMMON_KEYS else options)[k.replace("-", "_")] = v
    skip = {"command", "config", "verbose"}
    for k, v in vars(args).items():
        if k in skip or v is None:
            continue
        (values if k in COMMON_KEYS else options)[k] = v
    try:
        return RunConfig(experiment=args.command, options=options, **values).validate()
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def describe_version() -> str:
    try:
        out = subprocess.run(["git", "describe", "--tags", "--always", "--dirty"], capture_output=True, text=True, timeout=5, cwd=Path(__file__).parent)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def write_manifest(cfg: RunConfig, outputs: Sequence[Path], wall_time: float, results: dict | None = None) -> Path:
    out = Path(cfg.out)
    doc = {
        "schema": "surface7.manifest/1",
        "command": cfg.experiment,
        "config": cfg.as_dict(),
        "config_hash": config_hash(cfg.as_dict()),
        "seed": cfg.seed,
        "version": describe_version(),
        "versions": {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__},
        "wall_time_s": wall_time,
        "outputs": sorted(p.name for p in outputs),
        "results": results or {},
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def _merge_summary(out: Path, rows: list[dict]) -> Path:
    """Update summary.csv in place, keyed by (operation, target, characteristic)."""
    path = out / "summary.csv"
    cols = ["operation", "target", "characteristic", "metric", "simulated_pct", "hardware_pct"]
    existing = {}
    if path.exists():
        for r in read_rows(path):
            existing[(r["operation"], r["target"], r["characteristic"])] = r
    for r in rows:
        existing[(r["operation"], r["target"], r["characteristic"])] = r
    order = {"init": 0, "measure": 1, "gate": 2}
    merged = sorted(existing.values(), key=lambda r: (order.get(r["operation"], 9), r["target"], r["characteristic"]))
    return write_rows(path, merged, cols)


# -- subcommands --------------------------------------------------------------


def cmd_init_suite(cfg: RunConfig):
    rows = run_cardinal_init_suite(cfg.noise_model(), cfg.scheme, cfg.sampled_shots, cfg.seed or 0, cfg.jobs)
    out = Path(cfg.out)
    files = [write_rows(out / "init_suite.csv", rows), _merge_summary(out, summary_rows(init_rows=rows))]
    labels = [f"{r['state']} {r['characteristic']}" for r in rows]
    files.append(line_plot({"F_4Q": (range(len(rows)), [r["f_4q"] for r in rows]), "F_L": (range(len(rows)), [r["f_l"] for r in rows])}, out / "init_suite.svg", "Initialization: " + ", ".join(labels), "case", "fidelity"))
    for r in rows:
        print(f"{r['state']:>2} {r['characteristic']:<6} F_4Q={r['f_4q']:.6f} F_L={r['f_l']:.6f} P={r['post_selected_fraction']:.6f}")
    return files, {"rows": rows}


def cmd_measure_sweep(cfg: RunConfig):
    o = cfg.options
    sweep = o.get("sweep", "phi")
    n = int(o.get("points", 16 if sweep == "phi" else 9))
    if n < 3:
        raise ConfigError("a sweep needs at least 3 points")
    grid = np.linspace(0, 2 * math.pi, n + 1)[:-1] if sweep == "phi" else np.linspace(0, math.pi, n)
    default_bases = "X,Y" if sweep == "phi" else "Z,X"
    bases = tuple(b.strip().upper() for b in str(o.get("bases", default_bases)).split(",") if b.strip())
    try:
        spec = SweepSpec(sweep, tuple(grid), None, bases, cfg.scheme, cfg.noise_model())
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    rows, fits = run_logical_measurement_sweeps(spec, cfg.jobs)
    out = Path(cfg.out)
    name = "fig2c" if sweep == "phi" else "fig2e"
    files = [write_rows(out / f"{name}.csv", rows)]
    fit_rows = [{"basis": b, **f} for b, f in fits.items()]
    files.append(write_rows(out / f"{name}_fit.csv", fit_rows))
    files.append(_merge_summary(out, summary_rows(readout_fits={b: f["f_l_r"] for b, f in fits.items()})))
    series = {f"<{b}_L>": (grid, [r[f"{b.lower()}_l"] for r in rows]) for b in bases}
    series["P"] = (grid, [r["p_z"] for r in rows])
    files.append(line_plot(series, out / f"{name}.svg", f"{sweep} sweep", sweep, "expectation / fraction"))
    for b, f in fits.items():
        print(f"{b}_L: amplitude={f['amplitude']:.6f} F_L={f['f_l_init']:.6f} F_L^R={f['f_l_r']:.6f}")
    return files, {"fits": fits}


def cmd_gate_tomo(cfg: RunConfig):
    gates = cfg.options.get("gate") or list(TOMO_GATES)
    results = run_gate_tomography(gates, cfg.noise_model(), cfg.scheme, cfg.sampled_shots, cfg.seed or 0, cfg.jobs)
    out = Path(cfg.out)
    rows = []
    for g in results:
        for i in range(4):
            for j in range(4):
                rows.append({"gate": g.gate, "row": "IXYZ"[i], "col": "IXYZ"[j], "ptm": g.ptm[i, j], "raw_ptm": g.raw_ptm[i, j], "ideal_ptm": g.ideal_ptm[i, j]})
    files = [write_rows(out / "fig3f.csv", rows)]
    fid_rows = [{"gate": g.gate, "f_l_g": g.fidelity, "mean_success_probability": float(np.mean(g.probabilities))} for g in results]
    files.append(write_rows(out / "gate_fidelity.csv", fid_rows))
    files.append(_merge_summary(out, summary_rows(gate_results=results)))
    files.append(line_plot({"F_L^G": (range(len(results)), [g.fidelity for g in results])}, out / "gate_fidelity.svg", "Gates: " + ", ".join(g.gate for g in results), "gate", "F_L^G"))
    for g in results:
        print(f"{g.gate}: F_L^G = {g.fidelity:.6f}")
    return files, {"fidelity": {g.gate: g.fidelity for g in results}}


def cmd_stabilize(cfg: RunConfig):
    prep = cfg.options.get("prep", "0")
    noise = cfg.noise_model()
    try:
        rows, fit = stabilize(prep, cfg.scheme, cfg.cycles, noise)
    except KeyError as exc:
        raise ConfigError(f"unknown prep state {prep!r}") from exc
    if cfg.mode == "sampled":
        rec = run_detection(prep, cfg.scheme, cfg.cycles, noise, observables=("Z",))
        s = sample_records(rec, cfg.shots, np.random.default_rng(cfg.seed))
        for r, a in zip(rows, s["accepted"]):
            r["accepted"] = int(a)
            r["shots"] = cfg.shots
            r["sampled_fraction"] = a / cfg.shots
    out = Path(cfg.out)
    files = [write_rows(out / "fig4c.csv", rows)]
    files.append(write_rows(out / "fig4d.csv", rows, ["cycle", "scheme", "post_selected_fraction"] + (["accepted", "shots"] if cfg.mode == "sampled" else [])))
    files.append(write_rows(out / "fit.csv", [{"amplitude": fit.amplitude, "gamma": fit.gamma, "residual": fit.residual}]))
    n = [r["cycle"] for r in rows]
    files.append(line_plot({"P(n)": (n, [r["post_selected_fraction"] for r in rows]), "<Z_L>": (n, [r["z_l"] for r in rows])}, out / "fig4d.svg", f"Stabilization ({cfg.scheme})", "cycle n", "value"))
    for r in rows:
        print(f"n={r['cycle']:>3} P={r['post_selected_fraction']:.6f} <Z_L>={r['z_l']:.6f}")
    print(f"gamma = {fit.gamma:.6f}")
    return files, {"gamma": fit.gamma, "amplitude": fit.amplitude}


def cmd_compare_schemes(cfg: RunConfig):
    states = tuple(s.strip() for s in str(cfg.options.get("states", "0,1,+,-")).split(",") if s.strip())
    if cfg.cycles < 5:
        raise ConfigError("compare-schemes needs --cycles >= 5")
    rows, summary = compare_schemes(cfg.cycles, cfg.noise_model(), states, cfg.jobs)
    out = Path(cfg.out)
    files = [write_rows(out / "figS3.csv", rows)]
    idx = list(range(len(rows)))
    files.append(line_plot({"gamma_pip": (idx, [r["gamma_pip"] for r in rows]), "gamma_par": (idx, [r["gamma_par"] for r in rows])}, out / "figS3.svg", "Schemes per state: " + ",".join(states), "state index", "gamma"))
    print(f"gamma_pip={summary['gamma_pip']:.6f} gamma_par={summary['gamma_par']:.6f} ratio={summary['ratio']:.6f}")
    return files, summary


def cmd_ablation(cfg: RunConfig):
    o = cfg.options
    grid = o.get("l1_grid") or ([cfg.l1] if cfg.l1 > 0 else list(L1_GRID))
    levels = [int(x) for x in str(o.get("levels", "0,1,2,3,4")).split(",") if x.strip()]
    if any(lv not in range(5) for lv in levels):
        raise ConfigError("--levels takes model levels 0-4; model 5 is swept over --l1-grid")
    rows = run_model_ablation(grid, cfg.cycles, cfg.scheme, "0", cfg.device_params(), levels, cfg.jobs)
    out = Path(cfg.out)
    cols = ["level", "l1", "gamma", "amplitude", "residual", "p"]
    a_rows = [r for r in rows if r["level"] < 5]
    b_rows = [r for r in rows if r["level"] == 5]
    files = [write_rows(out / "figS5a.csv", a_rows, cols), write_rows(out / "figS5b.csv", b_rows, cols)]
    n = list(range(1, cfg.cycles + 1))
    series = {f"model {r['level']}" + (f" L1={r['l1']:g}" if r["level"] == 5 else ""): (n, r["p"]) for r in rows}
    files.append(line_plot(series, out / "figS5.svg", "Post-selected fraction by noise model", "cycle n", "P(n)"))
    closest = min(b_rows, key=lambda r: abs(r["gamma"] - GAMMA_TARGET)) if b_rows else None
    lines = [f"model {r['level']} L1={r['l1']:g}: gamma={r['gamma']:.6f}" for r in rows]
    if closest is not None:
        lines.append(f"target gamma {GAMMA_TARGET}: closest L1={closest['l1']:g} gamma={closest['gamma']:.6f} (difference {closest['gamma'] - GAMMA_TARGET:+.4f})")
    report = out / "report.txt"
    report.write_text("\n".join(lines) + "\n")
    files.append(report)
    print("\n".join(lines))
    return files, {"gamma": {f"{r['level']}:{r['l1']:g}": r["gamma"] for r in rows}}


def cmd_fit(cfg: RunConfig):
    o = cfg.options
    if not o.get("input"):
        raise ConfigError("fit needs --input")
    path = Path(o["input"])
    if not path.is_file():
        raise ConfigError(f"input file {path} does not exist")
    rows = read_rows(path)
    col = o.get("column", "post_selected_fraction")
    ncol = o.get("cycle_column", "cycle")
    if not rows or col not in rows[0] or ncol not in rows[0]:
        raise ConfigError(f"input lacks columns {col!r} and {ncol!r}")
    p = np.array([float(r[col]) for r in rows])
    n = np.array([float(r[ncol]) for r in rows])
    if o.get("skip_first"):
        p, n = p[1:], n[1:]
    try:
        fit = fit_detection_rate(p, n)
    except ValueError as exc:
        raise DegenerateFitError(str(exc)) from exc
    out = Path(cfg.out)
    files = [write_rows(out / "fit.csv", [{"amplitude": fit.amplitude, "gamma": fit.gamma, "residual": fit.residual}])]
    files.append(line_plot({"data": (n, p), "fit": (n, fit.predict(n))}, out / "fit.svg", "P(n) = A (1 - gamma)^n", "cycle n", "P(n)"))
    print(f"A = {fit.amplitude:.6f} gamma = {fit.gamma:.6f} residual = {fit.residual:.3e}")
    return files, {"amplitude": fit.amplitude, "gamma": fit.gamma}


def cmd_calibrate_zz(cfg: RunConfig):
    checks = cfg.options.get("check") or ["Z13", "Z24", "Z1234"]
    npts = int(cfg.options.get("phase_points", 16))
    dev = cfg.device_params()
    noise = NoiseModel.only("crosstalk", device=dev) if cfg.noise < 4 else cfg.noise_model()
    truth = zz_phase_table(dev)
    rows, ram_rows = [], []
    for chk in checks:
        try:
            czs = check_czs(chk)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        system = generate_ramsey_phases(chk, noise, npts)
        sol = solve_cz_phases(system, gauge=True)
        for (target, state), ph in zip(system.rows, system.phases):
            ram_rows.append({"check": chk, "target": target, "spectators": state, "phi_ram": ph})
        for j, (a, b) in enumerate(czs):
            t = truth.get((a, b)) or truth.get((b, a))
            p01, p10, p11 = sol.phases[3 * j : 3 * j + 3]
            # phi11 - phi01 - phi10 does not depend on the gauge
            rows.append({
                "check": chk, "cz": f"{a}-{b}",
                "phi01": p01, "phi10": p10, "phi11": p11,
                "phi11_injected": t[2] if t else float("nan"),
                "conditional_phase": (p11 - p01 - p10) % (2 * math.pi),
                "conditional_phase_injected": (t[2] - t[0] - t[1]) % (2 * math.pi) if t else float("nan"),
                "residual": sol.residual,
            })
    out = Path(cfg.out)
    files = [write_rows(out / "zz_phases.csv", rows), write_rows(out / "ramsey_phases.csv", ram_rows)]
    idx = list(range(len(rows)))
    files.append(line_plot({"phi11 fitted": (idx, [r["phi11"] for r in rows]), "phi11 injected": (idx, [r["phi11_injected"] for r in rows])}, out / "zz_phases.svg", "CZ conditional phases", "CZ index", "phase (rad)"))
    for r in rows:
        print(f"{r['check']} {r['cz']}: phi01={r['phi01']:.6f} phi10={r['phi10']:.6f} phi11={r['phi11']:.6f} conditional={r['conditional_phase']:.6f}")
    return files, {"max_residual": max(r["residual"] for r in rows)}


def cmd_leakage_estimate(cfg: RunConfig):
    o = cfg.options
    cal = None
    if o.get("input"):
        path = Path(o["input"])
        if not path.is_file():
            raise ConfigError(f"input file {path} does not exist")
        shots: dict[int, list[float]] = {}
        for r in read_rows(path):
            shots.setdefault(int(r["cycle"]), []).append(float(r["voltage"]))
        data = {k: np.array(v) for k, v in shots.items()}
        if o.get("calibration"):
            cpath = Path(o["calibration"])
            if not cpath.is_file():
                raise ConfigError(f"calibration file {cpath} does not exist")
            cal_lists: dict[int, list[float]] = {0: [], 1: [], 2: []}
            for r in read_rows(cpath):
                cal_lists[int(r["state"])].append(float(r["voltage"]))
            cal = {k: np.array(v) for k, v in cal_lists.items()}
    else:
        if cfg.seed is None:
            raise ConfigError("synthetic leakage shots need --seed")
        rng = np.random.default_rng(cfg.seed)
        weights = o.get("leak_weights") or [0.1]
        means = o.get("means") or [0.0, 4.0, 8.0]
        sigmas = o.get("sigmas") or [1.0, 1.0, 1.0]
        n = cfg.shots or 10_000
        if len(means) != 3 or len(sigmas) != 3:
            raise ConfigError("--means and --sigmas take three values")
        data = {k + 1: synthetic_voltages([(1 - w) / 2, (1 - w) / 2, w], means, sigmas, n, rng) for k, w in enumerate(weights)}
        cal = {s: synthetic_voltages([float(i == s) for i in range(3)], means, sigmas, n, rng) for s in range(3)}
    if any(len(v) < 1000 for v in data.values()):
        raise ConfigError("leakage estimation needs at least 1000 shots per cycle")
    est = estimate_leakage(data, cal)
    rows = [{"cycle": int(c), "leaked_fraction": p, "declared_fraction": d} for c, p, d in zip(est.cycles, est.leaked_fraction, est.declared_fraction)]
    results: dict[str, Any] = {"low_confidence": est.low_confidence, "threshold": est.model.threshold, "discrimination_fidelity": est.model.discrimination_fidelity()}
    if o.get("n_cz") and o.get("t1") and len(rows) >= 2:
        t_cycle = 840.0 if cfg.scheme == "pipelined" else 1000.0
        mk = estimate_L1_markov(est.leaked_fraction, int(o["n_cz"]), t_cycle, float(o["t1"]))
        results["l1_estimate"] = mk.l1
    out = Path(cfg.out)
    files = [write_rows(out / "figS4.csv", rows)]
    files.append(line_plot({"leaked (EM weight)": (est.cycles, est.leaked_fraction), "declared |2>": (est.cycles, est.declared_fraction)}, out / "figS4.svg", "Leaked population", "cycle n", "fraction"))
    for r in rows:
        print(f"n={r['cycle']} p_L={r['leaked_fraction']:.6f} declared={r['declared_fraction']:.6f}")
    if est.low_confidence:
        print("warning: |2> discrimination fidelity below 0.95; estimate is low-confidence")
    if "l1_estimate" in results:
        print(f"Markov L1 estimate = {results['l1_estimate']:.6f}")
    return files, results


HANDLERS = {
    "init-suite": cmd_init_suite,
    "measure-sweep": cmd_measure_sweep,
    "gate-tomo": cmd_gate_tomo,
    "stabilize": cmd_stabilize,
    "compare-schemes": cmd_compare_schemes,
    "ablation": cmd_ablation,
    "fit": cmd_fit,
    "calibrate-zz": cmd_calibrate_zz,
    "leakage-estimate": cmd_leakage_estimate,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
        cfg = load_config(args)
        Path(cfg.out).mkdir(parents=True, exist_ok=True)
        t0 = time.perf_counter()
        files, results = HANDLERS[cfg.experiment](cfg)
        write_manifest(cfg, files, time.perf_counter() - t0, results)
        return 0
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except NUMERICAL_ERRORS as exc:
        detail = ""
        if isinstance(exc, RankDeficiencyError) and exc.null_space is not None:
            detail = f" (null-space dimension {np.asarray(exc.null_space).shape[1]})"
        if isinstance(exc, ConvergenceError):
            detail = f" (residual {exc.residual:.3e})"
        print(f"numerical failure: {type(exc).__name__}: {exc}{detail}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
