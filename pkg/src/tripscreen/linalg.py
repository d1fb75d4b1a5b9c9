"""Dense symmetric linear algebra: eigendecomposition, cone splits, minimum eigenpair."""

from __future__ import annotations

from typing import NamedTuple, Tuple

import numpy as np

# Asymmetry above this (relative) is treated as a caller bug, not rounding noise.
_ASYM_REJECT = 1e-6


class ConvergenceError(RuntimeError):
    """An iterative routine exhausted its budget; carries the best iterate found."""

    def __init__(self, message: str, value: float | None = None,
                 vector: np.ndarray | None = None):
        super().__init__(message)
        self.value = value
        self.vector = vector


class EigDecomp(NamedTuple):
    values: np.ndarray   # eigenvalues, sorted descending
    vectors: np.ndarray  # orthonormal eigenvectors as columns, aligned with values


class PsdSplit(NamedTuple):
    plus: np.ndarray   # projection onto the PSD cone
    minus: np.ndarray  # the NSD remainder, plus + minus reconstructs the input


def check_symmetric(a, name: str = "matrix") -> np.ndarray:
    """Validate a dense symmetric matrix and return its exact symmetric average.

    Entries must be finite and the asymmetry at most 1e-6 relative to the
    largest magnitude entry.  Silently symmetrizing anything worse would hide
    bugs upstream, so larger asymmetry is rejected.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    scale = max(1.0, float(np.abs(a).max()))
    if float(np.abs(a - a.T).max()) > _ASYM_REJECT * scale:
        raise ValueError(f"{name} is not symmetric within {_ASYM_REJECT:g} relative")
    return (a + a.T) / 2.0


def frob_inner(a: np.ndarray, b: np.ndarray) -> float:
    """Frobenius inner product sum_ij A_ij B_ij."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.vdot(a, b))


def eig_sym(a) -> EigDecomp:
    """Full eigendecomposition of a symmetric matrix, eigenvalues descending."""
    a = check_symmetric(a)
    w, v = np.linalg.eigh(a)
    return EigDecomp(values=w[::-1].copy(), vectors=v[:, ::-1].copy())


def psd_split(a) -> PsdSplit:
    """Split a symmetric matrix into its PSD projection and NSD remainder."""
    a = check_symmetric(a)
    w, v = np.linalg.eigh(a)
    plus = (v * np.maximum(w, 0.0)) @ v.T
    minus = (v * np.minimum(w, 0.0)) @ v.T
    return PsdSplit(plus=(plus + plus.T) / 2.0, minus=(minus + minus.T) / 2.0)


def cone_split(a: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Positive/negative split for either layout of the metric cone.

    Matrices are split against the PSD cone; 1-d vectors (diagonal-metric
    mode, where the cone is the nonnegative orthant) are clipped elementwise.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        return np.maximum(a, 0.0), np.minimum(a, 0.0)
    s = psd_split(a)
    return s.plus, s.minus


def cone_project(a: np.ndarray) -> np.ndarray:
    return cone_split(a)[0]


def min_eigpair(a, tol: float = 1e-7, max_iter: int = 500,
                seed: int = 0x5EED) -> Tuple[float, np.ndarray]:
    """Smallest eigenvalue and unit eigenvector of a symmetric matrix.

    Rayleigh-Ritz expansion of a Krylov-style subspace grown from the residual
    direction of the current best Ritz pair, with full reorthogonalization.
    The start vector is drawn from a fixed seed so results are reproducible.

    Raises ConvergenceError (carrying the best iterate) if the residual does
    not reach ``tol * ||a||_F`` within ``max_iter`` matrix-vector products.
    """
    a = check_symmetric(a)
    d = a.shape[0]
    scale = float(np.linalg.norm(a))
    if scale == 0.0:
        e = np.zeros(d)
        e[0] = 1.0
        return 0.0, e

    rng = np.random.default_rng(seed)
    q = rng.standard_normal(d)
    q /= np.linalg.norm(q)

    basis = np.empty((d, 0))
    theta, y = 0.0, q
    for _ in range(max_iter):
        # Orthogonalize the new direction against the accumulated basis (twice,
        # to keep orthogonality at rounding level).
        w = q.copy()
        for _ in range(2):
            if basis.shape[1]:
                w -= basis @ (basis.T @ w)
        nw = np.linalg.norm(w)
        if nw <= 1e-14:
            if basis.shape[1] == d:
                break
            q = rng.standard_normal(d)
            continue
        basis = np.column_stack([basis, w / nw])

        small = basis.T @ (a @ basis)
        small = (small + small.T) / 2.0
        sw, sv = np.linalg.eigh(small)
        theta = float(sw[0])
        y = basis @ sv[:, 0]
        y /= np.linalg.norm(y)

        resid = a @ y - theta * y
        if np.linalg.norm(resid) <= tol * scale:
            return theta, y
        q = resid

    resid = float(np.linalg.norm(a @ y - theta * y))
    if resid <= tol * scale:
        return theta, y
    raise ConvergenceError(
        f"minimum eigenpair did not converge: residual {resid:.3e} > {tol * scale:.3e}",
        value=theta, vector=y)
