"""Projected gradient solver with spectral steps, dynamic screening, and an
active-set mode.

The optimizer minimizes the (possibly screening-reduced) regularized triplet
loss over the metric cone.  Every ``screen_every`` iterations a checkpoint
computes the duality gap on the full objective (dual weights of screened
triplets pinned to 1 on the linear side and 0 on the zero side), rebuilds the
configured sphere from the current iterate, re-screens the unknown triplets,
and tests termination.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import bounds as sb
from .linalg import cone_split
from .problem import MetricProblem
from .rules import HalfSpace, TripletStatus, halfspace_from_iterate, screen_all

BOUND_CHOICES = ("none", "gradient", "projected-gradient", "gap", "dual-gap",
                 "relaxed-path", "relaxed-path+projected-gradient")
RULE_CHOICES = ("sphere", "linear", "psd", "nonneg")


@dataclass
class SolveConfig:
    gap_tol: float = 1e-6
    max_iter: int = 20000
    screen_every: int = 10
    bound: str = "none"
    rule: str = "sphere"
    active_set: bool = False
    diagonal: bool = False
    psd_rule_budget: int = 30
    # Triplets within this distance above the zero-loss threshold stay in the
    # working set so that spectral-step overshoot cannot strand the iterate
    # in a region where the stale working set provides no loss gradient.
    active_margin: float = 0.5

    def __post_init__(self):
        if self.gap_tol <= 0:
            raise ValueError("gap_tol must be positive")
        if self.screen_every < 1:
            raise ValueError("screen_every must be >= 1")
        if self.bound not in BOUND_CHOICES:
            raise ValueError(f"bound must be one of {BOUND_CHOICES}")
        if self.rule not in RULE_CHOICES:
            raise ValueError(f"rule must be one of {RULE_CHOICES}")


@dataclass
class ScreenEvent:
    iteration: int
    gap: float
    new_lower: int
    new_upper: int
    remaining: int


@dataclass
class SolveResult:
    metric: np.ndarray
    alpha: np.ndarray
    gap: float
    iterations: int
    statuses: np.ndarray
    screening_log: List[ScreenEvent]
    wall_time: float
    screen_time: float
    converged: bool
    primal: float
    dual: float

    @property
    def n_lower(self) -> int:
        return int(np.count_nonzero(self.statuses == TripletStatus.LOWER))

    @property
    def n_upper(self) -> int:
        return int(np.count_nonzero(self.statuses == TripletStatus.UPPER))


def bb_step(dm: np.ndarray, dg: np.ndarray, fallback: float) -> float:
    """Averaged spectral step (1/2)|<dM,dG>/<dG,dG> + <dM,dM>/<dM,dG>|,
    falling back to the previous step when either ratio is undefined."""
    cross = float(np.vdot(dm, dg))
    gg = float(np.vdot(dg, dg))
    if cross == 0.0 or gg == 0.0:
        return fallback
    mm = float(np.vdot(dm, dm))
    return 0.5 * abs(cross / gg + mm / cross)


class _ScreenState:
    """Statuses plus the cached linear-side accumulations they induce."""

    def __init__(self, problem: MetricProblem, statuses: Optional[np.ndarray]):
        self.problem = problem
        m = problem.n_triplets
        if statuses is None:
            self.statuses = np.zeros(m, dtype=np.int8)
        else:
            self.statuses = np.asarray(statuses, dtype=np.int8).copy()
            if self.statuses.shape != (m,):
                raise ValueError("statuses must have one entry per triplet")
        self.unknown = np.flatnonzero(self.statuses == TripletStatus.UNKNOWN)
        lower_idx = np.flatnonzero(self.statuses == TripletStatus.LOWER)
        self.n_lower = lower_idx.size
        if lower_idx.size:
            self.sum_h_lower = problem.sum_h(lower_idx)
        else:
            self.sum_h_lower = problem.zero_metric()

    def absorb(self, before_lower: np.ndarray):
        """Refresh caches after screen_all mutated the statuses."""
        new_lower = np.flatnonzero(
            (self.statuses == TripletStatus.LOWER) & ~before_lower)
        if new_lower.size:
            self.sum_h_lower = self.sum_h_lower + self.problem.sum_h(new_lower)
            self.n_lower += new_lower.size
        self.unknown = np.flatnonzero(self.statuses == TripletStatus.UNKNOWN)


def _full_state(problem, m, lam, state):
    """Full-objective primal/dual pair with screened dual weights pinned."""
    loss = problem.loss
    inner_all = problem.inner(m)
    primal = float(np.sum(loss.value(inner_all))) + 0.5 * lam * float(np.vdot(m, m))

    alpha = problem.alpha_from_inner(inner_all)
    alpha[state.statuses == TripletStatus.LOWER] = 1.0
    alpha[state.statuses == TripletStatus.UPPER] = 0.0

    support = state.unknown[alpha[state.unknown] > 0.0]
    s = state.sum_h_lower
    if support.size:
        s = s + problem.accumulate(alpha[support], support)
    s_plus, _ = cone_split(s)
    dual = (-0.5 * loss.gamma * float(alpha @ alpha) + float(alpha.sum())
            - 0.5 * float(np.vdot(s_plus, s_plus)) / lam)
    gap = primal - dual
    return inner_all, alpha, s_plus, primal, dual, gap


def _build_spheres(problem, lam, config, m, inner_all, alpha, s_plus, gap):
    """Sphere(s) for dynamic screening from the current iterate."""
    choice = config.bound
    if choice == "none":
        return []
    spheres = []
    if choice in ("gradient", "projected-gradient",
                  "relaxed-path+projected-gradient"):
        grad = problem.accumulate(problem.loss.grad(inner_all)) + lam * m
        gb = sb.gradient_bound(m, grad, lam)
        if choice == "gradient":
            return [gb]
        pgb = sb.projected_gradient_bound(gb)
        if choice == "projected-gradient":
            return [pgb]
        spheres.append(pgb)
    radius = math.sqrt(2.0 * max(gap, 0.0) / lam)
    if choice in ("gap", "relaxed-path", "relaxed-path+projected-gradient"):
        # A relaxed-path sphere anchored at the current lambda degenerates to
        # the gap ball around the iterate.
        ball = sb.Sphere(center=m, radius=radius, lam=lam)
        spheres.insert(0, ball)
        return spheres
    if choice == "dual-gap":
        center = s_plus / lam
        p_center = problem.primal_value(center, lam)
        d_val = (-0.5 * problem.loss.gamma * float(alpha @ alpha) + float(alpha.sum())
                 - 0.5 * float(np.vdot(s_plus, s_plus)) / lam)
        g = max(p_center - d_val, 0.0)
        return [sb.Sphere(center=center, radius=math.sqrt(g / lam), lam=lam)]
    return spheres


def _solve_loop(problem: MetricProblem, lam: float, config: SolveConfig,
                m0: Optional[np.ndarray], statuses: Optional[np.ndarray],
                active_mode: bool) -> SolveResult:
    if lam <= 0:
        raise ValueError("lam must be positive")
    t0 = time.perf_counter()
    screen_time = 0.0
    loss = problem.loss

    m = problem.project(np.asarray(m0, dtype=float)) if m0 is not None \
        else problem.zero_metric()
    state = _ScreenState(problem, statuses)
    # Active mode fills this with the positive-loss triplets at the first
    # checkpoint scan; plain mode always works on every unknown triplet.
    active = np.empty(0, dtype=np.int64)

    step = 1.0 / lam
    prev_m = None
    prev_grad = None
    events: List[ScreenEvent] = []
    last_primal = math.inf
    best_primal = math.inf
    best_m = m
    bad_checkpoints = 0
    gap = math.inf
    primal = dual = math.nan
    alpha = np.zeros(problem.n_triplets)
    converged = False
    force_checkpoint = False
    it = 0

    while True:
        if it % config.screen_every == 0 or force_checkpoint:
            force_checkpoint = False
            inner_all, alpha, s_plus, primal, dual, gap = _full_state(
                problem, m, lam, state)
            if primal <= best_primal:
                best_primal = primal
                best_m = m
            elif primal > 1.5 * best_primal + 1e-9 * max(1.0, best_primal):
                # A runaway spectral step threw the iterate far off (badly
                # conditioned small-lam solves can even collapse it to the
                # cone apex).  Restore the best iterate, shorten the step,
                # and redo this checkpoint from there.
                m = best_m
                step *= 0.5
                prev_m = prev_grad = None
                bad_checkpoints = 0
                last_primal = math.inf
                continue
            if primal > last_primal:
                bad_checkpoints += 1
                if bad_checkpoints >= 5:
                    step *= 0.5
                    prev_m = prev_grad = None
                    bad_checkpoints = 0
            else:
                bad_checkpoints = 0
            last_primal = primal

            if config.bound != "none" and state.unknown.size:
                ts = time.perf_counter()
                spheres = _build_spheres(problem, lam, config, m, inner_all,
                                         alpha, s_plus, gap)
                halfspace = None
                if config.rule == "linear":
                    grad_full = problem.accumulate(loss.grad(inner_all)) + lam * m
                    halfspace = halfspace_from_iterate(m - step * grad_full)
                before_lower = state.statuses == TripletStatus.LOWER
                cache = inner_all if spheres and spheres[0].center is m else None
                counts = screen_all(problem, spheres, state.statuses,
                                    rule=config.rule, halfspace=halfspace,
                                    budget=config.psd_rule_budget,
                                    inner_cache=cache)
                if counts.new_lower or counts.new_upper:
                    state.absorb(before_lower)
                    prev_m = prev_grad = None  # reduced objective changed
                events.append(ScreenEvent(iteration=it, gap=gap,
                                          new_lower=counts.new_lower,
                                          new_upper=counts.new_upper,
                                          remaining=counts.remaining))
                screen_time += time.perf_counter() - ts
            if active_mode:
                # Grow-only scan: pull in every unknown triplet with positive
                # (or near-threshold) loss.  Dropping satisfied triplets
                # mid-solve invites limit cycles, so the set only shrinks by
                # screening or by re-initialization at the next warm start.
                live = state.unknown
                wanted = live[inner_all[live] < 1.0 + config.active_margin]
                new_active = np.union1d(
                    np.intersect1d(active, live, assume_unique=True), wanted)
                if not np.array_equal(new_active, active):
                    active = new_active
                    prev_m = prev_grad = None  # working set changed
            if gap <= config.gap_tol:
                converged = True
                break
        if it >= config.max_iter:
            break

        work = active if active_mode else state.unknown

        def reduced_grad(point):
            if work.size:
                g_loss = loss.grad(problem.inner(point, work))
                return (problem.accumulate(g_loss, work) + lam * point
                        - state.sum_h_lower)
            return lam * point - state.sum_h_lower

        grad = reduced_grad(m)
        if prev_m is not None:
            # Spectral step, capped at doubling per iteration: unchecked
            # proposals can jump by orders of magnitude on badly conditioned
            # problems and hurl the iterate off the cone.
            step = min(bb_step(m - prev_m, grad - prev_grad, step), 2.0 * step)
        else:
            # No history (cold start, or the objective just changed): probe
            # the curvature along the gradient ray so the first step is
            # stable even when the loss term dominates the regularizer.
            gnorm = float(np.linalg.norm(grad))
            if gnorm > 0.0:
                delta = 1e-6 * max(1.0, float(np.linalg.norm(m))) / gnorm
                curv = float(np.vdot(grad - reduced_grad(m - delta * grad),
                                     grad)) / (delta * gnorm ** 2)
                step = min(step, 1.0 / max(curv, lam))
        prev_m, prev_grad = m, grad
        m_new = problem.project(m - step * grad)
        if active_mode and it % config.screen_every != config.screen_every - 1:
            # Stalled inner iteration: the working-set subproblem is done, so
            # rescan the unknowns now instead of waiting for the checkpoint.
            moved = float(np.linalg.norm(m_new - m))
            if moved <= 1e-13 * max(1.0, float(np.linalg.norm(m))):
                force_checkpoint = True
        m = m_new
        it += 1

    return SolveResult(metric=m, alpha=alpha, gap=gap, iterations=it,
                       statuses=state.statuses, screening_log=events,
                       wall_time=time.perf_counter() - t0,
                       screen_time=screen_time, converged=converged,
                       primal=primal, dual=dual)


def pgd_solve(problem: MetricProblem, lam: float, config: SolveConfig,
              m0: Optional[np.ndarray] = None,
              statuses: Optional[np.ndarray] = None) -> SolveResult:
    """Projected gradient descent on the screening-reduced objective."""
    return _solve_loop(problem, lam, config, m0, statuses, active_mode=False)


def active_set_solve(problem: MetricProblem, lam: float, config: SolveConfig,
                     m0: Optional[np.ndarray] = None,
                     statuses: Optional[np.ndarray] = None) -> SolveResult:
    """Projected gradient descent over the positive-loss working set.

    Gradients between checkpoints use only triplets whose loss was positive
    at the latest refresh (screened triplets never enter the scan); each
    checkpoint rescans the unknown triplets, pulling violated ones back in,
    and certifies optimality through the full duality gap.
    """
    return _solve_loop(problem, lam, config, m0, statuses, active_mode=True)


def solve(problem: MetricProblem, lam: float, config: SolveConfig,
          m0: Optional[np.ndarray] = None,
          statuses: Optional[np.ndarray] = None) -> SolveResult:
    if config.active_set:
        return active_set_solve(problem, lam, config, m0, statuses)
    return pgd_solve(problem, lam, config, m0, statuses)
