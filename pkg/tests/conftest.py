"""Shared fixtures and independent oracles for the test suite.

Oracles here deliberately avoid the library's own fast paths: dense
materialization of the rank-2 comparison matrices, scipy's SLSQP for the
constrained rule subproblems, finite differences for gradients, and duality
certified high-accuracy solves for reference partitions.
"""

import numpy as np
import pytest

from tripscreen import (MetricProblem, SmoothedHingeLoss, SolveConfig,
                        Triplet, build_triplets, gaussian_blobs, pgd_solve)


def dense_h(t: Triplet) -> np.ndarray:
    """Dense comparison matrix u u^T - v v^T (test-only)."""
    return np.outer(t.u, t.u) - np.outer(t.v, t.v)


def random_instance(seed, n_lo=20, n_hi=60, d_lo=2, d_hi=5, classes=(2, 3),
                    k=3, gamma=0.05, diagonal=False):
    """Small random metric-learning instance with a fixed seed."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(n_lo, n_hi + 1))
    d = int(rng.integers(d_lo, d_hi + 1))
    n_classes = int(rng.choice(classes))
    sep = float(rng.uniform(1.0, 3.0))
    data = gaussian_blobs(n, d, n_classes, separation=sep, seed=seed + 10_000)
    triplets = build_triplets(data, k=k)
    return MetricProblem(triplets, SmoothedHingeLoss(gamma), diagonal=diagonal)


def solve_oracle(problem, lam, tol=1e-12, max_iter=400_000):
    """High-accuracy solve whose duality gap certifies the result."""
    res = pgd_solve(problem, lam, SolveConfig(gap_tol=min(tol, 1e-13),
                                              max_iter=max_iter))
    assert res.gap <= tol, f"oracle solve stuck at gap {res.gap:.3e}"
    return res


def reference_at(problem, lam, gap_level, m0=None):
    """Iterate until the duality gap first crosses ``gap_level``."""
    cfg = SolveConfig(gap_tol=gap_level, max_iter=400_000, screen_every=1)
    res = pgd_solve(problem, lam, cfg, m0=m0)
    assert res.converged
    return res


def kkt_reference(problem, lam, tol=1e-12):
    """Numerically KKT-consistent optimal pair (M0, alpha0).

    The dual weights are read off the converged metric and the metric is
    regenerated from them, so the pair satisfies the stationarity identity
    lam * M0 = [sum alpha0 H]_+ at floating-point level.
    """
    res = solve_oracle(problem, lam, tol=tol)
    alpha0 = problem.dual_from_primal(res.metric).alpha
    m0 = problem.m_of_alpha(alpha0, lam)
    return m0, alpha0


def numeric_p4_min(q, r, p, h):
    """Numerical solution of the ball/half-space linear minimization via its
    one-dimensional Lagrangian dual.

    Dualizing the half-space constraint leaves a ball-constrained linear
    problem with closed minimum, so the dual g(beta) = <Q, H - beta P>
    - r ||H - beta P|| is concave in the scalar beta >= 0 and strong duality
    holds whenever the feasible set has interior.
    """
    from scipy.optimize import minimize_scalar

    def g(beta):
        m = h - beta * p
        return float(np.vdot(q, m)) - r * float(np.linalg.norm(m))

    hi = 50.0 * (np.linalg.norm(h) / max(np.linalg.norm(p), 1e-12) + 1.0)
    res = minimize_scalar(lambda b: -g(b), bounds=(0.0, hi), method="bounded",
                          options={"xatol": 1e-12})
    return max(g(float(res.x)), g(0.0))


def numeric_p3_min(q, r, h):
    """Numerical solution of the ball/orthant linear minimization."""
    from scipy.optimize import NonlinearConstraint, minimize

    d = q.shape[0]
    con = NonlinearConstraint(lambda x: np.sum((x - q) ** 2), -np.inf, r ** 2,
                              jac=lambda x: 2.0 * (x - q))
    x0 = np.maximum(q, 0.0)
    over = np.linalg.norm(x0 - q)
    if over > r:  # pull the start inside the ball
        x0 = np.maximum(q + (x0 - q) * (0.95 * r / over), 0.0)
    res = minimize(lambda x: h @ x, x0, jac=lambda x: h,
                   hess=lambda x: np.zeros((d, d)),
                   bounds=[(0.0, None)] * d, constraints=[con],
                   method="trust-constr",
                   options={"gtol": 1e-12, "xtol": 1e-14, "maxiter": 3000})
    return float(res.fun)


def grid_p2_extremes(q, r, h, n_grid=160):
    """Dense-grid extremes of <X, H> over ball & PSD cone for d == 2.

    Returns (min, max, resolution_band); the band is an upper bound on the
    discretization error of either extreme.
    """
    a = np.linspace(max(0.0, q[0, 0] - r), q[0, 0] + r, n_grid)
    c = np.linspace(max(0.0, q[1, 1] - r), q[1, 1] + r, n_grid)
    b = np.linspace(q[0, 1] - r, q[0, 1] + r, n_grid)
    aa, bb, cc = np.meshgrid(a, b, c, indexing="ij")
    ball = ((aa - q[0, 0]) ** 2 + 2 * (bb - q[0, 1]) ** 2
            + (cc - q[1, 1]) ** 2) <= r ** 2
    psd = (aa >= 0) & (cc >= 0) & (bb ** 2 <= aa * cc)
    feas = ball & psd
    assert feas.any(), "grid found no feasible point"
    vals = aa * h[0, 0] + 2 * bb * h[0, 1] + cc * h[1, 1]
    vals = vals[feas]
    steps = np.array([a[1] - a[0], b[1] - b[0], c[1] - c[0]])
    band = float((abs(h[0, 0]) + 2 * abs(h[0, 1]) + abs(h[1, 1])) * steps.max() * 2)
    return float(vals.min()), float(vals.max()), band


def finite_diff_gradient(problem, m, lam, h=1e-6):
    """Central finite differences of the primal objective on symmetric
    (or diagonal-mode) perturbations."""
    if m.ndim == 1:
        g = np.zeros_like(m)
        for k in range(m.shape[0]):
            e = np.zeros_like(m)
            e[k] = h
            g[k] = (problem.primal_value(m + e, lam)
                    - problem.primal_value(m - e, lam)) / (2 * h)
        return g
    d = m.shape[0]
    g = np.zeros_like(m)
    for i in range(d):
        for j in range(i, d):
            e = np.zeros_like(m)
            e[i, j] = h
            e[j, i] = h
            diff = (problem.primal_value(m + e, lam)
                    - problem.primal_value(m - e, lam)) / (2 * h)
            # diff equals <grad, E>/h = 2 grad_ij off-diagonal, grad_ii on it.
            if i == j:
                g[i, i] = diff
            else:
                g[i, j] = g[j, i] = diff / 2.0
    return g


@pytest.fixture(scope="session")
def small_problem():
    return random_instance(seed=7, n_lo=36, n_hi=36, d_lo=4, d_hi=4)
