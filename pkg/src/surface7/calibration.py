"""Fits and calibration procedures.

* error-detection rate from the post-selected fraction, P(n) = A (1 - gamma)^n
* parity-check assignment-fidelity benchmark
* Ramsey characterization of CZ phases and their box-constrained least-squares solution
* triple-Gaussian leakage estimation from scalar readout voltages
* a two-state Markov model relating leaked population to the leakage per CZ
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.linalg import null_space
from scipy.optimize import lsq_linear, minimize_scalar
from scipy.stats import norm

from .circuits import CHECK_SITES, T_1Q_NS, TimedCircuit, TimedInstruction, build_check
from .errors import DegenerateFitError, RankDeficiencyError
from .noise import COUPLINGS, NoiseModel, leaking_site
from .simulator import Simulator

TWO_PI = 2 * math.pi

# -- error-detection rate ---------------------------------------------------


@dataclass(frozen=True)
class DecayFit:
    amplitude: float
    gamma: float
    residual: float

    def predict(self, n) -> np.ndarray:
        return self.amplitude * (1 - self.gamma) ** np.asarray(n, dtype=float)


def fit_detection_rate(p, cycles=None, shots=None) -> DecayFit:
    """Fit P(n) = A (1 - gamma)^n by weighted linear least squares on log P.

    Args:
        p: post-selected fractions, all in (0, 1].
        cycles: cycle numbers (default 1..N).
        shots: optional shot counts; the log-space weights are then the inverse
            binomial variance of log P, shots * P / (1 - P).

    Returns:
        DecayFit with the RMS log-space residual.
    """
    p = np.asarray(p, dtype=float)
    n = np.arange(1, p.size + 1, dtype=float) if cycles is None else np.asarray(cycles, dtype=float)
    if p.size < 3:
        raise ValueError("need at least three points")
    if np.any(p <= 0) or np.any(p > 1 + 1e-12):
        raise ValueError("post-selected fractions must lie in (0, 1]")
    y = np.log(p)
    w = np.ones_like(p)
    if shots is not None:
        s = np.asarray(shots, dtype=float)
        w = s * p / np.clip(1 - p, 1e-12, None)
    sw = np.sqrt(w)
    design = np.column_stack([np.ones_like(n), n])
    coef, *_ = np.linalg.lstsq(design * sw[:, None], y * sw, rcond=None)
    resid = y - design @ coef
    gamma = -math.expm1(coef[1])
    return DecayFit(float(math.exp(coef[0])), float(min(max(gamma, 0.0), 1.0)), float(np.sqrt(np.mean(resid ** 2))))


# -- parity-check benchmark -------------------------------------------------


@dataclass(frozen=True)
class ParityBenchmark:
    check: str
    fidelity: float
    table: dict[str, float]
    shots: int | None = None


def parity_benchmark(check: str, noise: NoiseModel | None = None, shots: int | None = None, rng=None) -> ParityBenchmark:
    """Average probability of the correct ancilla parity over all data inputs in the check basis.

    Ancilla outcome 0 is the correct assignment for even parity.  With `shots`
    each input's probability is replaced by a binomial estimate.
    """
    noise = noise or NoiseModel.ideal()
    sites = CHECK_SITES[check]
    anc, data = sites[0], sites[1:]
    block = build_check(check)
    sim = Simulator(noise, labels=sites)
    table = {}
    for bits in itertools.product((0, 1), repeat=len(data)):
        if check.startswith("X"):
            # X-type inputs are |+> / |-> products
            flips = [TimedInstruction("rot", (q,), 0.0, params=(-math.pi / 2 if b else math.pi / 2, math.pi / 2)) for q, b in zip(data, bits)]
        else:
            flips = [TimedInstruction("rot", (q,), 0.0, params=(math.pi, 0.0)) for q, b in zip(data, bits) if b]
        keep = sum(bits) % 2
        ins = [i for i in block.instructions if i.kind != "measure"]
        meas = [i for i in block.instructions if i.kind == "measure"][0]
        ins.append(TimedInstruction("measure", meas.sites, meas.start_ns, tag=anc, postselect=keep))
        circ = TimedCircuit(tuple(flips) + tuple(i.shifted(T_1Q_NS) for i in ins), block.duration_ns + T_1Q_NS, sites, block.name)
        prob = sim.run(circ).probability
        if shots is not None:
            if rng is None:
                raise ValueError("sampled benchmark needs a random generator")
            prob = rng.binomial(shots, prob) / shots
        table["".join(map(str, bits))] = float(prob)
    return ParityBenchmark(check, float(np.mean(list(table.values()))), table, shots)


# -- Ramsey characterization of CZ phases -----------------------------------


def check_czs(check: str) -> list[tuple[str, str]]:
    return [tuple(i.sites) for i in build_check(check).instructions if i.kind == "cz"]


@dataclass(frozen=True)
class RamseySystem:
    """phi_Ram = A phi_CZ for one parity check.

    Rows enumerate (target transmon, computational state of the others);
    columns are (phi01, phi10, phi11) for each CZ in check order.
    """

    design: np.ndarray
    phases: np.ndarray | None = None
    rows: tuple[tuple[str, str], ...] = ()
    columns: tuple[str, ...] = ()

    def __post_init__(self):
        a = np.asarray(self.design, dtype=float)
        object.__setattr__(self, "design", a)
        if self.phases is not None:
            ph = np.asarray(self.phases, dtype=float)
            if ph.shape != (a.shape[0],):
                raise ValueError("one Ramsey phase per design row")
            object.__setattr__(self, "phases", ph)

    def with_phases(self, phases) -> "RamseySystem":
        return RamseySystem(self.design, phases, self.rows, self.columns)


def ramsey_design(check: str) -> RamseySystem:
    """Design matrix with k 2^(k-1) rows for a check on k transmons.

    For a CZ on (a, b) with phases diag(1, e^{i phi01}, e^{i phi10}, e^{i phi11}),
    target a acquires phi10 (b in |0>) or phi11 - phi01 (b in |1>), and target b
    acquires phi01 or phi11 - phi10.  Entries are therefore in {-1, 0, 1}.
    """
    sites = CHECK_SITES[check]
    czs = check_czs(check)
    cols = tuple(f"{a}-{b}:{p}" for a, b in czs for p in ("phi01", "phi10", "phi11"))
    rows, design = [], []
    for target in sites:
        others = [s for s in sites if s != target]
        for bits in itertools.product((0, 1), repeat=len(others)):
            state = dict(zip(others, bits))
            row = np.zeros(len(cols))
            for j, (a, b) in enumerate(czs):
                if target == a:
                    row[3 * j + (1 if state[b] == 0 else 2)] += 1
                    if state[b] == 1:
                        row[3 * j] -= 1
                elif target == b:
                    row[3 * j + (0 if state[a] == 0 else 2)] += 1
                    if state[a] == 1:
                        row[3 * j + 1] -= 1
            rows.append((target, "".join(map(str, bits))))
            design.append(row)
    return RamseySystem(np.array(design), None, tuple(rows), cols)


def fit_cosine_phase(phi, p1) -> tuple[float, float]:
    """Phase Phi and contrast of p1(phi) = a + b cos(phi - Phi), by linear least squares."""
    phi = np.asarray(phi, dtype=float)
    x = np.column_stack([np.ones_like(phi), np.cos(phi), np.sin(phi)])
    (a, c, s), *_ = np.linalg.lstsq(x, np.asarray(p1, dtype=float), rcond=None)
    return float(math.atan2(s, c) % TWO_PI), float(math.hypot(c, s))


def generate_ramsey_phases(check: str, noise: NoiseModel | None = None, n_points: int = 16) -> RamseySystem:
    """Simulate the k 2^(k-1) Ramsey experiments of a check's CZ block and fit each phase.

    The target starts in R_x^{-pi/2}|0>, the others in |l>; after the CZ block the
    target gets R_phi^{-pi/2} and the probability of |1> is fitted against phi.
    """
    noise = noise or NoiseModel.ideal()
    system = ramsey_design(check)
    sites = CHECK_SITES[check]
    czs = [i for i in build_check(check).instructions if i.kind == "cz"]
    t0 = T_1Q_NS
    t_end = max(i.end_ns for i in czs)
    sim = Simulator(noise, labels=sites)
    grid = np.linspace(0, TWO_PI, n_points, endpoint=False)
    phases = []
    for target, bits in system.rows:
        others = [s for s in sites if s != target]
        prep = [TimedInstruction("rot", (target,), 0.0, params=(-math.pi / 2, 0.0))]
        prep += [TimedInstruction("rot", (q,), 0.0, params=(math.pi, 0.0)) for q, b in zip(others, bits) if b == "1"]
        undo = [TimedInstruction("rot", (q,), t_end, params=(-math.pi, 0.0)) for q, b in zip(others, bits) if b == "1"]
        base = prep + [i.shifted(t0 - czs[0].start_ns) for i in czs]
        shift = t0 - czs[0].start_ns
        t_an = t_end + shift
        undo = [i.shifted(shift) for i in undo]
        p1 = []
        for phi in grid:
            ana = TimedInstruction("rot", (target,), t_an, params=(-math.pi / 2, float(phi)))
            meas = TimedInstruction("measure", (target,), t_an + T_1Q_NS, tag=target, postselect=1)
            circ = TimedCircuit(tuple(base + undo + [ana, meas]), t_an + T_1Q_NS + meas.duration_ns, sites)
            p1.append(sim.run(circ).probability)
        phases.append(fit_cosine_phase(grid, p1)[0])
    return system.with_phases(np.array(phases))


@dataclass(frozen=True)
class CZPhaseSolution:
    phases: np.ndarray
    residual: float
    branches: np.ndarray
    columns: tuple[str, ...] = ()

    def table(self) -> dict[tuple[str, str], tuple[float, float, float]]:
        """Per-CZ (phi01, phi10, phi11), the form consumed by NoiseModel.cz_phases."""
        out = {}
        for j in range(len(self.phases) // 3):
            pair = tuple(self.columns[3 * j].split(":")[0].split("-")) if self.columns else (str(j), "")
            out[pair] = tuple(float(x) for x in self.phases[3 * j : 3 * j + 3])
        return out


def _wrap(x):
    return (np.asarray(x) + math.pi) % TWO_PI - math.pi


def solve_cz_phases(system: RamseySystem, gauge=None, starts: int = 8, seed: int = 0, max_rounds: int = 50) -> CZPhaseSolution:
    """Box-constrained least squares for the CZ phases, with circular residuals.

    Each row's residual is taken on the 2 pi branch closest to zero.  Branches
    and the bounded linear solution are alternated to a fixed point from several
    starts (the reference, the ideal phases, and random points); the best is returned
    with phases wrapped into [0, 2 pi).

    Ramsey phases cannot tell how an ancilla's single-qubit phase is split
    between consecutive CZs, so multi-CZ checks have a null space.  These
    directions leave the block unitary unchanged.  Passing `gauge` (a reference
    phase vector, or True for the ideal CZ phases) pins the null-space
    coordinates to those of the reference.

    Raises:
        RankDeficiencyError: A has a nontrivial null space and no gauge was
            given; the null-space basis is carried on the error.
    """
    a = system.design
    b = system.phases
    if b is None:
        raise ValueError("system has no measured phases")
    if a.shape[0] != b.shape[0]:
        raise ValueError("design and phase vector sizes differ")
    n = a.shape[1]
    ideal = np.tile([0.0, 0.0, math.pi], n // 3) if n % 3 == 0 else np.zeros(n)
    center = ideal
    if np.linalg.matrix_rank(a) < n:
        ns = null_space(a)
        if gauge is None or gauge is False:
            raise RankDeficiencyError("Ramsey design matrix is rank deficient", ns)
        ref = ideal if gauge is True else np.asarray(gauge, dtype=float)
        center = ref
        # pinned rows are weighted heavily; they are consistent with any data
        w = 1e3
        a = np.vstack([a, w * ns.T])
        b = np.concatenate([b, w * ns.T @ ref])
    rng = np.random.default_rng(seed)
    # the box is one period wide around the reference; integer design entries make
    # every phase representable there, and the result is wrapped afterwards
    lo, hi = center - math.pi, center + math.pi
    inits = [center, ideal] + [rng.uniform(lo, hi) for _ in range(starts)]
    best = None
    for x in inits:
        k = np.round((a @ x - b) / TWO_PI)
        k[system.design.shape[0]:] = 0
        for _ in range(max_rounds):
            sol = lsq_linear(a, b + TWO_PI * k, bounds=(lo, hi), method="bvls", tol=1e-14)
            x = sol.x
            k_new = np.round((a @ x - b) / TWO_PI)
            k_new[system.design.shape[0]:] = 0
            if np.array_equal(k_new, k):
                break
            k = k_new
        m = system.design.shape[0]
        res = float(np.sum(_wrap(a[:m] @ x - b[:m]) ** 2))
        if best is None or res < best[0] - 1e-15:
            best = (res, x, k)
    res, x, k = best
    x = np.mod(x, TWO_PI)
    x[x > TWO_PI - 1e-8] = 0.0
    return CZPhaseSolution(x, res, k[: system.design.shape[0]].astype(int), system.columns)


# -- leakage from readout voltages ------------------------------------------


@dataclass(frozen=True)
class VoltageModel:
    """Three Gaussian components for |0>, |1>, |2> and the |2> discrimination threshold."""

    means: np.ndarray
    sigmas: np.ndarray
    weights: np.ndarray
    threshold: float = float("nan")
    leak_above: bool = True

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        s = np.asarray(self.sigmas, dtype=float)
        if np.any(w < -1e-12) or abs(w.sum() - 1) > 1e-8:
            raise ValueError("weights must be nonnegative and sum to 1")
        if np.any(s <= 0):
            raise ValueError("sigmas must be positive")
        object.__setattr__(self, "means", np.asarray(self.means, dtype=float))
        object.__setattr__(self, "sigmas", s)
        object.__setattr__(self, "weights", np.clip(w, 0, None))

    def declared_leaked(self, v) -> np.ndarray:
        v = np.asarray(v)
        return v > self.threshold if self.leak_above else v < self.threshold

    def discrimination_fidelity(self) -> float:
        """1 - (P(declare 2 | 1) + P(declare not 2 | 2))/2 at the model threshold."""
        return _disc(self.threshold, self.means, self.sigmas, self.leak_above)


def _disc(t, means, sigmas, above) -> float:
    p21 = norm.sf(t, means[1], sigmas[1]) if above else norm.cdf(t, means[1], sigmas[1])
    p22 = norm.sf(t, means[2], sigmas[2]) if above else norm.cdf(t, means[2], sigmas[2])
    return float(1 - 0.5 * (p21 + (1 - p22)))


def synthetic_voltages(weights, means, sigmas, shots: int, rng: np.random.Generator) -> np.ndarray:
    """Scalar readout voltages drawn from a three-component Gaussian mixture."""
    counts = rng.multinomial(shots, np.asarray(weights) / np.sum(weights))
    v = np.concatenate([rng.normal(m, s, c) for m, s, c in zip(means, sigmas, counts)])
    rng.shuffle(v)
    return v


def _log_gauss(v, mu, sd):
    return -0.5 * ((v - mu) / sd) ** 2 - np.log(sd) - 0.5 * math.log(TWO_PI)


def fit_triple_gaussian(v, means0, sigmas0, weights0=None, fix_shapes: bool = False, max_iter: int = 1000, tol: float = 1e-10) -> VoltageModel:
    """Expectation-maximization for a 1D three-component Gaussian mixture.

    With `fix_shapes` only the weights are updated.

    Raises:
        DegenerateFitError: a populated component's width collapses.
    """
    v = np.asarray(v, dtype=float)[:, None]
    mu = np.array(means0, dtype=float)
    sd = np.array(sigmas0, dtype=float)
    w = np.full(3, 1 / 3) if weights0 is None else np.array(weights0, dtype=float)
    floor = 1e-6 * (float(np.ptp(v)) or 1.0)
    prev = -np.inf
    for _ in range(max_iter):
        logp = _log_gauss(v, mu, sd) + np.log(np.clip(w, 1e-300, None))
        top = logp.max(axis=1, keepdims=True)
        resp = np.exp(logp - top)
        tot = resp.sum(axis=1, keepdims=True)
        ll = float(np.sum(top + np.log(tot)))
        resp /= tot
        nk = resp.sum(axis=0)
        w = nk / v.shape[0]
        if not fix_shapes:
            live = nk > 1e-6 * v.shape[0]
            safe = np.clip(nk, 1e-300, None)
            mu = np.where(live, (resp * v).sum(axis=0) / safe, mu)
            sd = np.where(live, np.sqrt((resp * (v - mu) ** 2).sum(axis=0) / safe), sd)
            if np.any(live & (sd < floor)):
                raise DegenerateFitError("a mixture component collapsed onto a point")
        if abs(ll - prev) < tol * max(1.0, abs(ll)):
            break
        prev = ll
    return VoltageModel(mu, sd, w / w.sum())


def best_threshold(means, sigmas, n_grid: int = 2001) -> tuple[float, bool, float]:
    """Threshold between |1> and |2> maximizing their discrimination fidelity."""
    above = means[2] > means[1]
    lo, hi = sorted((means[1], means[2]))
    pad = 3 * max(sigmas[1], sigmas[2])
    grid = np.linspace(lo - pad, hi + pad, n_grid)
    fid = np.array([_disc(t, means, sigmas, above) for t in grid])
    i = int(np.argmax(fid))
    return float(grid[i]), bool(above), float(fid[i])


@dataclass
class LeakageEstimate:
    cycles: np.ndarray
    leaked_fraction: np.ndarray
    declared_fraction: np.ndarray
    model: VoltageModel
    low_confidence: bool
    models: list[VoltageModel] = field(default_factory=list)


def estimate_leakage(shots_per_cycle: Sequence[np.ndarray] | Mapping[int, np.ndarray], calibration: Mapping[int, np.ndarray] | None = None, min_fidelity: float = 0.95) -> LeakageEstimate:
    """Leaked population per cycle from scalar readout voltages.

    Each cycle's shots are fitted with a triple-Gaussian mixture whose means and
    widths start from the per-state calibration shots (k-means when absent);
    the leaked fraction is the fitted |2> weight.  The fraction of shots beyond
    the optimal |2> threshold is reported alongside.  The estimate is flagged
    low-confidence when |1>/|2> discrimination fidelity is below `min_fidelity`.
    """
    if isinstance(shots_per_cycle, Mapping):
        cycles = np.array(sorted(shots_per_cycle))
        data = [np.asarray(shots_per_cycle[c], dtype=float) for c in cycles]
    else:
        data = [np.asarray(s, dtype=float) for s in shots_per_cycle]
        cycles = np.arange(1, len(data) + 1)
    if any(d.size < 1000 for d in data):
        raise ValueError("need at least 1000 shots per cycle point")
    pooled = np.concatenate(data)
    if calibration is not None:
        mu0 = np.array([np.mean(calibration[k]) for k in (0, 1, 2)])
        sd0 = np.array([np.std(calibration[k]) for k in (0, 1, 2)])
        pooled = np.concatenate([pooled] + [np.asarray(calibration[k], dtype=float) for k in (0, 1, 2)])
    else:
        centers, _ = kmeans2(pooled[:, None], 3, seed=0, minit="++")
        mu0 = np.sort(centers[:, 0])
        sd0 = np.full(3, np.std(pooled) / 3)
    # component shapes from all shots; per-cycle fits then only move the weights
    shape = fit_triple_gaussian(pooled, mu0, sd0)
    t, above, _ = best_threshold(shape.means, shape.sigmas)
    models, leaked, declared = [], [], []
    for d in data:
        m = fit_triple_gaussian(d, shape.means, shape.sigmas, shape.weights, fix_shapes=True)
        m = VoltageModel(m.means, m.sigmas, m.weights, t, above)
        models.append(m)
        leaked.append(m.weights[2])
        declared.append(float(np.mean(m.declared_leaked(d))))
    ref = VoltageModel(shape.means, shape.sigmas, shape.weights, t, above)
    low = ref.discrimination_fidelity() < min_fidelity
    return LeakageEstimate(cycles, np.array(leaked), np.array(declared), ref, bool(low), models)


# -- Markov leakage accumulation --------------------------------------------


def leaking_cz_count() -> dict[str, int]:
    """CZs per cycle in which each transmon is the one that can leak."""
    out: dict[str, int] = {}
    for a, b in COUPLINGS:
        s = leaking_site(a, b)
        out[s] = out.get(s, 0) + 1
    return out


def markov_leakage_series(l1: float, n_cz: int, n_cycles: int, t_cycle_ns: float, t1_us: float, neighbor_factor: float = 1.0, p0: float = 0.0) -> np.ndarray:
    """p(n+1) = p(n)(1 - r_down) + (1 - p(n)) r_up, with r_up = n_cz 4 L1 f and r_down = 1 - exp(-t_cycle/(T1/2))."""
    r_up = min(n_cz * 4 * l1 * neighbor_factor, 1.0)
    r_down = -math.expm1(-t_cycle_ns * 1e-3 / (t1_us / 2))
    p = np.empty(n_cycles)
    x = p0
    for i in range(n_cycles):
        x = x * (1 - r_down) + (1 - x) * r_up
        p[i] = x
    return p


@dataclass(frozen=True)
class MarkovFit:
    l1: float
    residual: float
    per_site: dict[str, float] = field(default_factory=dict)

    @property
    def l1_range(self) -> tuple[float, float]:
        vals = list(self.per_site.values()) or [self.l1]
        return (min(vals), max(vals))


def fit_markov_l1(series, n_cz: int, t_cycle_ns: float, t1_us: float, neighbor_factor: float = 1.0) -> tuple[float, float]:
    """L1 minimizing the squared residual of the Markov leakage series (an estimate only)."""
    p = np.asarray(series, dtype=float)
    if p.size == 0:
        raise ValueError("empty series")
    if np.all(p == 0):
        return 0.0, 0.0
    if p.size > 1 and np.ptp(p) < 1e-12:
        raise DegenerateFitError("flat leakage series does not identify L1")
    upper = 0.25 / max(n_cz * neighbor_factor, 1e-12)

    def cost(l1):
        return float(np.sum((markov_leakage_series(l1, n_cz, p.size, t_cycle_ns, t1_us, neighbor_factor) - p) ** 2))

    sol = minimize_scalar(cost, bounds=(0.0, min(upper, 0.25)), method="bounded", options={"xatol": 1e-9})
    return float(sol.x), float(sol.fun)


def estimate_L1_markov(series: Mapping[str, Sequence[float]] | Sequence[float], n_cz: Mapping[str, int] | int | None = None, t_cycle_ns: float = 840.0, t1_us: Mapping[str, float] | float = 30.0, neighbor_factor: float = 1.0) -> MarkovFit:
    """Per-transmon two-state Markov fits; `l1` is their mean and `l1_range` the spread.

    A bare series is treated as a single transmon.
    """
    if not isinstance(series, Mapping):
        k = 1 if n_cz is None else int(n_cz)
        t1 = float(t1_us if not isinstance(t1_us, Mapping) else next(iter(t1_us.values())))
        l1, res = fit_markov_l1(series, k, t_cycle_ns, t1, neighbor_factor)
        return MarkovFit(l1, res, {"site": l1})
    counts = leaking_cz_count() if n_cz is None else n_cz
    per, total = {}, 0.0
    for site, s in series.items():
        t1 = t1_us[site] if isinstance(t1_us, Mapping) else t1_us
        l1, res = fit_markov_l1(s, counts[site], t_cycle_ns, t1, neighbor_factor)
        per[site] = l1
        total += res
    return MarkovFit(float(np.mean(list(per.values()))), total, per)
