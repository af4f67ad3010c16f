"""Independent reference implementations used only by the tests."""

import itertools
from functools import reduce

import cvxpy as cp
import numpy as np

_P = {
    "I": np.eye(2),
    "X": np.array([[0, 1], [1, 0]]),
    "Y": np.array([[0, -1j], [1j, 0]]),
    "Z": np.diag([1, -1]),
}


def paulis(k):
    return [reduce(np.kron, [_P[c] for c in lab]) for lab in itertools.product("IXYZ", repeat=k)]


def cvxpy_mle(p):
    """argmin_rho sum_i (p_i - Tr(rho sigma_i))^2 over density matrices, by an SDP solver."""
    p = np.asarray(p, dtype=float)
    k = int(round(np.log(p.size) / np.log(4)))
    d = 2**k
    rho = cp.Variable((d, d), hermitian=True)
    preds = cp.hstack([cp.real(cp.trace(rho @ s)) for s in paulis(k)])
    prob = cp.Problem(cp.Minimize(cp.sum_squares(preds - p)), [rho >> 0, cp.real(cp.trace(rho)) == 1])
    prob.solve(solver=cp.CLARABEL)
    return rho.value


def bloch_grid_mle(p, n=201):
    """Single-qubit oracle: brute-force grid search over the Bloch ball, refined once."""
    b = np.asarray(p[1:], dtype=float)
    # inside the ball the optimum is the data itself; outside it is the radial projection,
    # confirmed here by a coarse-to-fine grid over the unit sphere
    if np.linalg.norm(b) <= 1:
        return b
    best, best_cost = None, np.inf
    th = np.linspace(0, np.pi, n)
    ph = np.linspace(0, 2 * np.pi, 2 * n)
    for _ in range(3):
        tt, pp = np.meshgrid(th, ph, indexing="ij")
        pts = np.stack([np.sin(tt) * np.cos(pp), np.sin(tt) * np.sin(pp), np.cos(tt)], axis=-1)
        cost = np.sum((pts - b) ** 2, axis=-1)
        i, j = np.unravel_index(np.argmin(cost), cost.shape)
        if cost[i, j] < best_cost:
            best, best_cost = pts[i, j], cost[i, j]
        dt, dp = th[1] - th[0], ph[1] - ph[0]
        th = np.linspace(max(0, th[i] - 2 * dt), min(np.pi, th[i] + 2 * dt), n)
        ph = np.linspace(ph[j] - 2 * dp, ph[j] + 2 * dp, n)
    return best


def random_physical_ptm(rng):
    """Random unitary composed with a depolarizing / amplitude-damping mixture (oracle for physical maps)."""
    z = (rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    u = q * (np.diag(r) / np.abs(np.diag(r)))
    g = rng.uniform(0, 1)
    lam = rng.uniform(0, 1)
    kraus = [np.array([[1, 0], [0, np.sqrt(1 - g)]]), np.array([[0, np.sqrt(g)], [0, 0]])]
    kraus = [np.sqrt(1 - lam) * k @ u for k in kraus] + [np.sqrt(lam / 4) * _P[c] @ u for c in "IXYZ"]
    basis = paulis(1)
    return np.array([[np.real(np.trace(si @ sum(k @ sj @ k.conj().T for k in kraus))) / 2 for sj in basis] for si in basis])
