"""Spectral linear algebra primitives.

Thin and truncated SVDs with a fixed sign gauge, min-norm least squares,
orthogonal projectors, principal angles, Procrustes alignment and
condition numbers.  Everything here is a pure function of its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RANK_TOL = 1e-12
ORTHO_TOL = 1e-8
CLAMP_TOL = 1e-8


class NonFinite(ValueError):
    """Input contains NaN or Inf."""


class NotOrthonormal(ValueError):
    """Columns expected to be orthonormal are not."""


class DegenerateSpectrum(ValueError):
    """A condition number was requested for a nonpositive singular value."""


@dataclass(frozen=True)
class ThinSvd:
    """A = u @ diag(s) @ v.T with only the numerically nonzero triples kept."""

    u: np.ndarray
    s: np.ndarray
    v: np.ndarray

    @property
    def rank(self) -> int:
        return int(self.s.shape[0])

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.s) @ self.v.T

    def whitened(self) -> np.ndarray:
        """The whitened factorization U V^T (singular values dropped)."""
        return self.u @ self.v.T


@dataclass(frozen=True)
class TruncatedSvd(ThinSvd):
    requested: int = 0

    @property
    def shortfall(self) -> bool:
        """True when fewer than `requested` triples were available."""
        return self.rank < self.requested


def _check_finite(*arrays: np.ndarray) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFinite("input contains NaN or Inf")


def _apply_sign_convention(u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # largest-magnitude entry of each column of u is made nonnegative
    if u.shape[1] == 0:
        return u, v
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[idx, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return u * signs, v * signs


def thin_svd(a: np.ndarray, rank_tol: float = RANK_TOL) -> ThinSvd:
    """Thin SVD keeping singular values above ``rank_tol * sigma_max``."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {a.shape}")
    _check_finite(a)
    n, d = a.shape
    if n == 0 or d == 0:
        return ThinSvd(np.zeros((n, 0)), np.zeros(0), np.zeros((d, 0)))
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        keep = 0
    else:
        keep = int(np.count_nonzero(s > rank_tol * s[0]))
    u, v = _apply_sign_convention(u[:, :keep], vt[:keep].T)
    return ThinSvd(np.ascontiguousarray(u), s[:keep].copy(), np.ascontiguousarray(v))


def truncate(svd: ThinSvd, r: int) -> TruncatedSvd:
    """Leading ``min(r, svd.rank)`` triples; a shortfall is flagged, not raised."""
    if r < 1:
        raise ValueError(f"truncation rank must be >= 1, got {r}")
    m = min(r, svd.rank)
    return TruncatedSvd(svd.u[:, :m], svd.s[:m], svd.v[:, :m], requested=r)


def truncated_svd(a: np.ndarray, r: int, rank_tol: float = RANK_TOL) -> TruncatedSvd:
    return truncate(thin_svd(a, rank_tol), r)


def min_norm_solve(a: np.ndarray, y: np.ndarray, tol: float = RANK_TOL) -> np.ndarray:
    """Minimal-norm least-squares solution A^+ y via a thresholded thin SVD."""
    a = np.asarray(a, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if a.shape[0] != y.shape[0]:
        raise ValueError(f"dimension mismatch: A is {a.shape}, y has length {y.shape[0]}")
    _check_finite(y)
    svd = thin_svd(a, tol)
    return svd.v @ ((svd.u.T @ y) / svd.s)


def _check_orthonormal(u: np.ndarray, tol: float = ORTHO_TOL) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    if u.ndim == 1:
        u = u[:, None]
    _check_finite(u)
    gram = u.T @ u
    if gram.size and np.max(np.abs(gram - np.eye(u.shape[1]))) > tol:
        raise NotOrthonormal("columns are not orthonormal")
    return u


def projector(u: np.ndarray) -> np.ndarray:
    """Orthogonal projector U U^T onto the span of orthonormal columns."""
    u = _check_orthonormal(u)
    p = u @ u.T
    return 0.5 * (p + p.T)


def principal_angle_cosines(u1: np.ndarray, u2: np.ndarray) -> np.ndarray:
    """Cosines of the principal angles between span(u1) and span(u2), nonincreasing."""
    u1 = _check_orthonormal(u1)
    u2 = _check_orthonormal(u2)
    if u1.shape[0] != u2.shape[0]:
        raise ValueError("bases live in different ambient dimensions")
    s = np.linalg.svd(u2.T @ u1, compute_uv=False)
    if np.any(s > 1.0 + CLAMP_TOL):
        raise NotOrthonormal(f"overlap singular value {s.max()!r} exceeds 1")
    return np.clip(s, 0.0, 1.0)


def procrustes_rotation(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Orthogonal Q minimizing ||A - B Q|| for orthonormal-column A, B."""
    a = _check_orthonormal(a)
    b = _check_orthonormal(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    ub, _, vbt = np.linalg.svd(b.T @ a)
    return ub @ vbt


def condition_number(sigma) -> float:
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.size == 0 or np.min(sigma) <= 0:
        raise DegenerateSpectrum("condition number needs strictly positive singular values")
    return float(np.max(sigma) / np.min(sigma))


def cross_condition(sigma_max_a: float, sigma_min_b: float) -> float:
    """Generalized condition number sigma_max(A) / sigma_min(B)."""
    if sigma_min_b <= 0 or sigma_max_a <= 0:
        raise DegenerateSpectrum("cross condition needs positive inputs")
    return float(sigma_max_a / sigma_min_b)


def operator_norm(a: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    if a.size == 0:
        return 0.0
    return float(np.linalg.norm(a, 2))
