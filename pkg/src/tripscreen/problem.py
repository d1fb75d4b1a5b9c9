"""Triplet construction, loss functions, and the primal/dual metric-learning objectives.

The learned metric is a PSD matrix M (or a nonnegative vector in diagonal
mode).  Each triplet (i, j, l) with y_i == y_j != y_l contributes the rank-2
comparison matrix H = u u^T - v v^T, u = x_i - x_l, v = x_i - x_j, which is
never materialized densely: all objective and screening quantities reduce to
inner products against u and v.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .linalg import cone_project, cone_split, frob_inner


@dataclass(frozen=True)
class SmoothedHingeLoss:
    """Margin loss with a quadratic segment of width gamma joining the zero
    and linear parts; gamma == 0 gives the plain hinge.

    At the hinge kink (x == 1, gamma == 0) the subgradient is taken as 0.
    Callers that need a different subgradient (a dual iterate, say) inject it
    explicitly where they build gradient-based quantities.
    """

    gamma: float = 0.05

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must be in [0, 1], got {self.gamma}")

    def value(self, x):
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        x1 = np.atleast_1d(x)
        g = self.gamma
        if g == 0.0:
            out = np.maximum(0.0, 1.0 - x1)
        else:
            out = np.zeros_like(x1)
            mid = (x1 >= 1.0 - g) & (x1 <= 1.0)
            lin = x1 < 1.0 - g
            out[mid] = (1.0 - x1[mid]) ** 2 / (2.0 * g)
            out[lin] = 1.0 - x1[lin] - g / 2.0
        return float(out[0]) if scalar else out

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        x1 = np.atleast_1d(x)
        g = self.gamma
        if g == 0.0:
            out = np.where(x1 < 1.0, -1.0, 0.0)
        else:
            out = np.zeros_like(x1)
            mid = (x1 >= 1.0 - g) & (x1 <= 1.0)
            out[mid] = -(1.0 - x1[mid]) / g
            out[x1 < 1.0 - g] = -1.0
        return float(out[0]) if scalar else out

    def conjugate(self, alpha):
        """Convex conjugate ell*(-alpha) = (gamma/2) alpha^2 - alpha on [0, 1]."""
        alpha = np.asarray(alpha, dtype=float)
        out = 0.5 * self.gamma * alpha ** 2 - alpha
        return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class Dataset:
    """Feature matrix (n, d) with one discrete class id per row."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        features = np.ascontiguousarray(self.features, dtype=float)
        labels = np.asarray(self.labels)
        if features.ndim != 2:
            raise ValueError("features must be a 2-d array")
        if labels.shape != (features.shape[0],):
            raise ValueError("labels must have one entry per sample")
        if features.shape[0] < 2:
            raise ValueError("need at least 2 samples")
        if not np.all(np.isfinite(features)):
            raise ValueError("features must be finite")
        if np.unique(labels).size < 2:
            raise ValueError("need at least 2 distinct labels")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class Triplet:
    """Single triplet view: indices plus the rank-2 factors of H."""

    i: int
    j: int
    l: int
    u: np.ndarray      # x_i - x_l
    v: np.ndarray      # x_i - x_j
    hnorm: float       # Frobenius norm of u u^T - v v^T

    def inner(self, m: np.ndarray) -> float:
        """<H, M> for a dense metric, or h . m in diagonal mode."""
        if m.ndim == 1:
            return float(self.u ** 2 @ m - self.v ** 2 @ m)
        return float(self.u @ m @ self.u - self.v @ m @ self.v)

    def diag(self) -> np.ndarray:
        """Elementwise diagonal of H: u*u - v*v."""
        return self.u ** 2 - self.v ** 2


class TripletSet:
    """Vectorized triplet storage: index arrays plus stacked u/v factors."""

    def __init__(self, anchor, same, other, u, v):
        self.anchor = np.asarray(anchor, dtype=np.int64)
        self.same = np.asarray(same, dtype=np.int64)
        self.other = np.asarray(other, dtype=np.int64)
        self.u = np.ascontiguousarray(u, dtype=float)
        self.v = np.ascontiguousarray(v, dtype=float)
        if not (len(self.anchor) == len(self.same) == len(self.other)
                == self.u.shape[0] == self.v.shape[0]):
            raise ValueError("triplet arrays must have equal length")
        # ||H||_F^2 = ||u||^4 + ||v||^4 - 2 <u, v>^2 for rank-2 H.
        uu = np.einsum("md,md->m", self.u, self.u)
        vv = np.einsum("md,md->m", self.v, self.v)
        uv = np.einsum("md,md->m", self.u, self.v)
        self.hnorm = np.sqrt(np.maximum(uu ** 2 + vv ** 2 - 2.0 * uv ** 2, 0.0))

    def __len__(self) -> int:
        return self.u.shape[0]

    @property
    def dim(self) -> int:
        return self.u.shape[1]

    def __getitem__(self, t: int) -> Triplet:
        return Triplet(i=int(self.anchor[t]), j=int(self.same[t]),
                       l=int(self.other[t]), u=self.u[t], v=self.v[t],
                       hnorm=float(self.hnorm[t]))


def build_triplets(data: Dataset, k: Optional[int] = None) -> TripletSet:
    """Neighborhood triplets: for every anchor, cross its k nearest same-class
    neighbors with its k nearest other-class points (Euclidean distances, ties
    broken by smaller sample index).  ``k=None`` uses all available neighbors.

    Order is deterministic: ascending anchor, then same-neighbor rank, then
    other-neighbor rank.
    """
    if k is not None and k < 1:
        raise ValueError("k must be >= 1")
    x = data.features
    y = data.labels
    n = data.n_samples

    sq = np.einsum("nd,nd->n", x, x)
    dist2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.maximum(dist2, 0.0, out=dist2)

    anchors, sames, others = [], [], []
    idx_all = np.arange(n)
    for i in range(n):
        same_pool = idx_all[(y == y[i]) & (idx_all != i)]
        other_pool = idx_all[y != y[i]]
        if same_pool.size == 0 or other_pool.size == 0:
            continue
        ks = same_pool.size if k is None else min(k, same_pool.size)
        ko = other_pool.size if k is None else min(k, other_pool.size)
        same_order = same_pool[np.lexsort((same_pool, dist2[i, same_pool]))][:ks]
        other_order = other_pool[np.lexsort((other_pool, dist2[i, other_pool]))][:ko]
        jj = np.repeat(same_order, ko)
        ll = np.tile(other_order, ks)
        anchors.append(np.full(ks * ko, i, dtype=np.int64))
        sames.append(jj)
        others.append(ll)

    if not anchors:
        raise ValueError("no triplets could be built (need mixed-class data)")
    anchor = np.concatenate(anchors)
    same = np.concatenate(sames)
    other = np.concatenate(others)
    u = x[anchor] - x[other]
    v = x[anchor] - x[same]
    return TripletSet(anchor, same, other, u, v)


class DualState(NamedTuple):
    alpha: np.ndarray          # one weight per triplet, in [0, 1]
    gamma_matrix: np.ndarray   # PSD multiplier of the cone constraint


class Partition(NamedTuple):
    """Index partition of the triplets by where <H, M> falls on the loss."""

    lower: np.ndarray     # <H, M> <  1 - gamma   (linear part, dual weight 1)
    boundary: np.ndarray  # 1 - gamma <= <H, M> <= 1
    upper: np.ndarray     # <H, M> >  1           (zero part, dual weight 0)


class MetricProblem:
    """Regularized triplet-loss minimization instance.

    Bundles a triplet set with a loss; ``diagonal=True`` restricts the metric
    to a nonnegative diagonal, represented as a d-vector, in which case every
    matrix quantity below becomes its elementwise analogue.
    """

    def __init__(self, triplets: TripletSet, loss: SmoothedHingeLoss,
                 diagonal: bool = False):
        self.triplets = triplets
        self.loss = loss
        self.diagonal = bool(diagonal)
        if self.diagonal:
            self.h_diag = triplets.u ** 2 - triplets.v ** 2
            self.h_norms = np.linalg.norm(self.h_diag, axis=1)
        else:
            self.h_diag = None
            self.h_norms = triplets.hnorm

    @property
    def dim(self) -> int:
        return self.triplets.dim

    @property
    def n_triplets(self) -> int:
        return len(self.triplets)

    def zero_metric(self) -> np.ndarray:
        d = self.dim
        return np.zeros(d) if self.diagonal else np.zeros((d, d))

    def project(self, m: np.ndarray) -> np.ndarray:
        return cone_project(np.asarray(m, dtype=float))

    # -- inner products and rank-2 accumulation ---------------------------

    def inner(self, m: np.ndarray, idx: Optional[np.ndarray] = None) -> np.ndarray:
        """<H_t, M> for each triplet (restricted to ``idx`` when given)."""
        ts = self.triplets
        if self.diagonal:
            h = self.h_diag if idx is None else self.h_diag[idx]
            return h @ m
        u = ts.u if idx is None else ts.u[idx]
        v = ts.v if idx is None else ts.v[idx]
        return np.einsum("md,md->m", u @ m, u) - np.einsum("md,md->m", v @ m, v)

    def inner_single(self, m: np.ndarray, t: int) -> float:
        return self.triplets[t].inner(m)

    def accumulate(self, weights: np.ndarray,
                   idx: Optional[np.ndarray] = None) -> np.ndarray:
        """sum_t weights_t H_t as a dense symmetric matrix (vector in
        diagonal mode)."""
        ts = self.triplets
        if self.diagonal:
            h = self.h_diag if idx is None else self.h_diag[idx]
            return h.T @ weights
        u = ts.u if idx is None else ts.u[idx]
        v = ts.v if idx is None else ts.v[idx]
        wu = u * weights[:, None]
        wv = v * weights[:, None]
        s = wu.T @ u - wv.T @ v
        return (s + s.T) / 2.0

    def sum_h(self, idx: Optional[np.ndarray] = None) -> np.ndarray:
        count = self.n_triplets if idx is None else len(idx)
        return self.accumulate(np.ones(count), idx)

    # -- primal side -------------------------------------------------------

    def primal_value(self, m: np.ndarray, lam: float,
                     inner: Optional[np.ndarray] = None) -> float:
        if lam <= 0:
            raise ValueError("lam must be positive")
        x = self.inner(m) if inner is None else inner
        reg = 0.5 * lam * float(np.vdot(m, m))
        return float(np.sum(self.loss.value(x))) + reg

    def gradient(self, m: np.ndarray, lam: float,
                 inner: Optional[np.ndarray] = None) -> np.ndarray:
        if lam <= 0:
            raise ValueError("lam must be positive")
        x = self.inner(m) if inner is None else inner
        g = self.loss.grad(x)
        return self.accumulate(g) + lam * m

    def subgradient_sum(self, alpha: np.ndarray) -> np.ndarray:
        """Loss-term subgradient sum for an explicit dual weight vector:
        Xi = -sum_t alpha_t H_t, so that Xi + lam*M is a full subgradient
        whenever alpha_t is a valid subgradient choice at <H_t, M>."""
        return -self.accumulate(np.asarray(alpha, dtype=float))

    # -- dual side ----------------------------------------------------------

    def alpha_from_inner(self, inner: np.ndarray) -> np.ndarray:
        return -self.loss.grad(inner)

    def dual_from_primal(self, m: np.ndarray,
                         inner: Optional[np.ndarray] = None) -> DualState:
        x = self.inner(m) if inner is None else inner
        alpha = self.alpha_from_inner(x)
        _, minus = cone_split(self.accumulate(alpha))
        return DualState(alpha=alpha, gamma_matrix=-minus)

    def m_of_alpha(self, alpha: np.ndarray, lam: float,
                   sum_ah: Optional[np.ndarray] = None) -> np.ndarray:
        """Primal candidate induced by a dual vector: (1/lam) [sum alpha H]_+."""
        if lam <= 0:
            raise ValueError("lam must be positive")
        s = self.accumulate(np.asarray(alpha, dtype=float)) if sum_ah is None else sum_ah
        plus, _ = cone_split(s)
        return plus / lam

    def dual_value(self, alpha: np.ndarray, lam: float,
                   sum_ah_plus: Optional[np.ndarray] = None) -> float:
        if lam <= 0:
            raise ValueError("lam must be positive")
        alpha = np.asarray(alpha, dtype=float)
        if alpha.min() < -1e-12 or alpha.max() > 1.0 + 1e-12:
            raise ValueError("alpha is not dual feasible (outside [0, 1])")
        alpha = np.clip(alpha, 0.0, 1.0)
        if sum_ah_plus is None:
            sum_ah_plus, _ = cone_split(self.accumulate(alpha))
        quad = float(np.vdot(sum_ah_plus, sum_ah_plus)) / lam
        return float(-0.5 * self.loss.gamma * alpha @ alpha + alpha.sum() - 0.5 * quad)

    def duality_gap(self, m: np.ndarray, alpha: np.ndarray, lam: float) -> float:
        p = self.primal_value(m, lam)
        d = self.dual_value(alpha, lam)
        gap = p - d
        if gap < -1e-9 * max(1.0, abs(p)):
            raise ArithmeticError(f"weak duality violated: gap={gap:.3e}")
        return gap

    # -- triplet categorization against a solved metric ---------------------

    def categorize(self, m_star: np.ndarray,
                   inner: Optional[np.ndarray] = None) -> Partition:
        x = self.inner(m_star) if inner is None else inner
        g = self.loss.gamma
        lower = np.flatnonzero(x < 1.0 - g)
        upper = np.flatnonzero(x > 1.0)
        boundary = np.flatnonzero((x >= 1.0 - g) & (x <= 1.0))
        return Partition(lower=lower, boundary=boundary, upper=upper)
