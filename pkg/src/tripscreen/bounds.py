"""Sphere regions certified to contain the optimal metric.

Six constructions are provided.  All return a ``Sphere``; those whose center
and squared radius are affine/quadratic in 1/lam also carry the coefficients
of that closed form, which is what the range-based screening consumes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .linalg import cone_split
from .problem import MetricProblem


@dataclass(frozen=True)
class GeneralForm:
    """Center A + B/lam with squared radius a + b/lam + c/lam^2."""

    a_mat: np.ndarray
    b_mat: np.ndarray
    a: float
    b: float
    c: float

    def center_at(self, lam: float) -> np.ndarray:
        return self.a_mat + self.b_mat / lam

    def radius_sq_at(self, lam: float) -> float:
        return self.a + self.b / lam + self.c / lam ** 2


@dataclass(frozen=True)
class Sphere:
    """Ball ||X - center||_F <= radius guaranteed to contain the optimum."""

    center: np.ndarray
    radius: float
    lam: Optional[float] = None          # regularization value it was built for
    general_form: Optional[GeneralForm] = None
    radius_clamped: bool = False         # squared radius rounded up to 0

    @property
    def diagonal(self) -> bool:
        return self.center.ndim == 1


def _require_positive(lam: float, name: str = "lam"):
    if lam <= 0:
        raise ValueError(f"{name} must be positive")


def gradient_bound(m: np.ndarray, grad: np.ndarray, lam: float) -> Sphere:
    """Sphere from any feasible point and a (sub)gradient of the objective
    there: center M - grad/(2 lam), radius ||grad||_F / (2 lam)."""
    _require_positive(lam)
    m = np.asarray(m, dtype=float)
    grad = np.asarray(grad, dtype=float)
    center = m - grad / (2.0 * lam)
    radius = float(np.linalg.norm(grad)) / (2.0 * lam)
    xi = grad - lam * m  # loss-term subgradient sum, constant in lam
    form = GeneralForm(
        a_mat=m / 2.0,
        b_mat=-xi / 2.0,
        a=0.25 * float(np.vdot(m, m)),
        b=0.5 * float(np.vdot(xi, m)),
        c=0.25 * float(np.vdot(xi, xi)),
    )
    return Sphere(center=center, radius=radius, lam=lam, general_form=form)


def projected_gradient_bound(sphere: Sphere) -> Sphere:
    """Project a gradient-bound center onto the cone; the lost squared
    distance comes off the squared radius.  A numerically negative squared
    radius is clamped to 0 and flagged."""
    plus, minus = cone_split(sphere.center)
    r2 = sphere.radius ** 2 - float(np.vdot(minus, minus))
    clamped = r2 < 0.0
    return Sphere(center=plus, radius=math.sqrt(max(r2, 0.0)),
                  lam=sphere.lam, radius_clamped=clamped)


def gap_bound(problem: MetricProblem, m: np.ndarray, alpha: np.ndarray,
              lam: float, inner: Optional[np.ndarray] = None) -> Sphere:
    """Sphere centered at the primal reference with squared radius
    2 * (duality gap) / lam."""
    _require_positive(lam)
    m = np.asarray(m, dtype=float)
    alpha = np.clip(np.asarray(alpha, dtype=float), 0.0, 1.0)
    x = problem.inner(m) if inner is None else inner
    loss_sum = float(np.sum(problem.loss.value(x)))
    fenchel = loss_sum + float(np.sum(problem.loss.conjugate(alpha)))
    s_plus, _ = cone_split(problem.accumulate(alpha))
    c = float(np.vdot(s_plus, s_plus))
    mm = float(np.vdot(m, m))
    gap = fenchel + 0.5 * lam * mm + 0.5 * c / lam
    gap = max(gap, 0.0)
    form = GeneralForm(a_mat=m, b_mat=np.zeros_like(m),
                       a=mm, b=2.0 * fenchel, c=c)
    return Sphere(center=m, radius=math.sqrt(2.0 * gap / lam),
                  lam=lam, general_form=form)


def dual_gap_bound(problem: MetricProblem, alpha: np.ndarray, lam: float) -> Sphere:
    """Sphere centered at the dual-induced metric (1/lam)[sum alpha H]_+ with
    squared radius gap/lam; sqrt(2) tighter than the gap bound when the same
    dual vector also supplies the primal reference."""
    _require_positive(lam)
    alpha = np.clip(np.asarray(alpha, dtype=float), 0.0, 1.0)
    s_plus, _ = cone_split(problem.accumulate(alpha))
    center = s_plus / lam
    p = problem.primal_value(center, lam)
    d = problem.dual_value(alpha, lam, sum_ah_plus=s_plus)
    gap = max(p - d, 0.0)
    return Sphere(center=center, radius=math.sqrt(gap / lam), lam=lam)


def path_bound(m_opt: np.ndarray, lam0: float, lam1: float) -> Sphere:
    """Sphere for the optimum at lam1 built from the exact optimum at lam0.

    Requires a theoretically exact reference, so this is a test/analysis
    device; ``relaxed_path_bound`` is the practical variant.
    """
    _require_positive(lam0, "lam0")
    _require_positive(lam1, "lam1")
    m_opt = np.asarray(m_opt, dtype=float)
    center = (lam0 + lam1) / (2.0 * lam1) * m_opt
    norm = float(np.linalg.norm(m_opt))
    radius = abs(lam0 - lam1) / (2.0 * lam1) * norm
    form = GeneralForm(
        a_mat=m_opt / 2.0,
        b_mat=(lam0 / 2.0) * m_opt,
        a=0.25 * norm ** 2,
        b=-0.5 * lam0 * norm ** 2,
        c=0.25 * lam0 ** 2 * norm ** 2,
    )
    return Sphere(center=center, radius=radius, lam=lam1, general_form=form)


def relaxed_path_bound(m0: np.ndarray, eps: float, lam0: float,
                       lam1: float) -> Sphere:
    """Path sphere tolerant of an approximate reference: given
    ||M0_opt - M0||_F <= eps, blurs the path-bound center and radius by eps.

    With lam1 == lam0 this reduces to a gap-style ball of radius eps around
    the reference.
    """
    _require_positive(lam0, "lam0")
    _require_positive(lam1, "lam1")
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    m0 = np.asarray(m0, dtype=float)
    norm = float(np.linalg.norm(m0))
    center = (lam0 + lam1) / (2.0 * lam1) * m0
    dl = abs(lam0 - lam1)
    radius = dl / (2.0 * lam1) * norm + (dl + lam0 + lam1) / (2.0 * lam1) * eps

    # Piecewise closed form in 1/lam: the radius is affine in 1/lam on each
    # side of lam0, so the stored coefficients match the branch of lam1.
    if lam1 <= lam0:
        k = 0.5 * lam0 * norm + lam0 * eps
        s = 0.5 * norm
        form = GeneralForm(a_mat=m0 / 2.0, b_mat=(lam0 / 2.0) * m0,
                           a=s ** 2, b=-2.0 * s * k, c=k ** 2)
    else:
        s = eps + 0.5 * norm
        k = 0.5 * lam0 * norm
        form = GeneralForm(a_mat=m0 / 2.0, b_mat=(lam0 / 2.0) * m0,
                           a=s ** 2, b=-2.0 * s * k, c=k ** 2)
    return Sphere(center=center, radius=radius, lam=lam1, general_form=form)
