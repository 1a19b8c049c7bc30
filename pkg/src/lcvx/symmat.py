"""Dense symmetric-matrix kernel: Jacobi eigensolver, definiteness tests,
Cholesky factorization and Schur complements.

Everything here is sized for desk-scale problems (n up to roughly 50) and
favors unconditional stability over speed. All types are immutable after
construction and all operations are pure functions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SYMMETRY_TOL = 1e-9          # constructor symmetrizes drift up to this, rejects beyond
JACOBI_REL_TOL = 1e-12       # off-diagonal Frobenius norm target, relative to ||S||_F
JACOBI_MAX_SWEEPS = 100
SCHUR_SINGULAR_REL = 1e-12   # |eig(Z)| gate relative to ||Z||_F


class AsymmetricInput(ValueError):
    """Input matrix is further from symmetric than the drift tolerance."""


class SingularBlock(ValueError):
    """Trailing block of a Schur complement is numerically singular."""


class NotPositiveDefinite(ValueError):
    """Cholesky factorization hit a non-positive pivot."""


class SymMat:
    """Dense real symmetric matrix.

    Construction symmetrizes the input via (M + M^T)/2 to absorb floating
    point drift from products such as A@P@B; asymmetry beyond ``tol`` is an
    error. The stored array is read-only.
    """

    __slots__ = ("data",)

    def __init__(self, entries, tol: float = SYMMETRY_TOL):
        arr = np.array(entries, dtype=float)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {arr.shape}")
        if arr.shape[0] < 1:
            raise ValueError("dimension must be at least 1")
        if not np.all(np.isfinite(arr)):
            raise ValueError("entries must be finite")
        drift = np.max(np.abs(arr - arr.T)) if arr.size else 0.0
        if drift > tol:
            raise AsymmetricInput(f"asymmetry {drift:.3e} exceeds tolerance {tol:.3e}")
        sym = 0.5 * (arr + arr.T)
        sym.setflags(write=False)
        self.data = sym

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    @classmethod
    def identity(cls, n: int) -> "SymMat":
        return cls(np.eye(n))

    @classmethod
    def zeros(cls, n: int) -> "SymMat":
        return cls(np.zeros((n, n)))

    @classmethod
    def diagonal(cls, values) -> "SymMat":
        return cls(np.diag(np.asarray(values, dtype=float)))

    def __repr__(self):
        return f"SymMat({self.data.tolist()!r})"


@dataclass(frozen=True)
class EigenDecomp:
    """Eigenvalues in ascending order with orthonormal eigenvector columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def _off_norm(a: np.ndarray) -> float:
    # norm the off-diagonal part directly; total-minus-diagonal cancels badly
    off = a - np.diag(np.diag(a))
    return float(np.linalg.norm(off))


def sym_eig(s: SymMat) -> EigenDecomp:
    """Full eigendecomposition by cyclic Jacobi rotations.

    Converges when the off-diagonal Frobenius norm falls below
    ``JACOBI_REL_TOL * ||S||_F``; symmetric input always converges well inside
    the sweep cap, so hitting the cap signals an internal defect.
    """
    a = s.data.copy()
    n = s.dim
    q = np.eye(n)
    scale = np.linalg.norm(a)
    target = JACOBI_REL_TOL * max(scale, np.finfo(float).tiny)
    if n > 1:
        for _ in range(JACOBI_MAX_SWEEPS):
            if _off_norm(a) <= target:
                break
            for p in range(n - 1):
                for r in range(p + 1, n):
                    apr = a[p, r]
                    if apr == 0.0:
                        continue
                    diff = a[r, r] - a[p, p]
                    if diff == 0.0:
                        t = 1.0
                    elif abs(apr) < 1e-36 * abs(diff):
                        t = apr / diff  # small-angle branch, avoids overflow in tau
                    else:
                        tau = diff / (2.0 * apr)
                        t = math.copysign(1.0, tau) / (abs(tau) + math.sqrt(1.0 + tau * tau))
                    c = 1.0 / math.sqrt(1.0 + t * t)
                    sn = t * c
                    # A <- J^T A J with the Givens pair in the (p, r) plane
                    col_p, col_r = a[:, p].copy(), a[:, r].copy()
                    a[:, p] = c * col_p - sn * col_r
                    a[:, r] = sn * col_p + c * col_r
                    row_p, row_r = a[p, :].copy(), a[r, :].copy()
                    a[p, :] = c * row_p - sn * row_r
                    a[r, :] = sn * row_p + c * row_r
                    a[p, r] = 0.0
                    a[r, p] = 0.0
                    qp, qr = q[:, p].copy(), q[:, r].copy()
                    q[:, p] = c * qp - sn * qr
                    q[:, r] = sn * qp + c * qr
        else:
            raise RuntimeError("Jacobi sweep cap exceeded on symmetric input (internal defect)")
    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    w = w[order]
    q = q[:, order]
    w.setflags(write=False)
    q.setflags(write=False)
    return EigenDecomp(w, q)


def max_eig(s: SymMat) -> float:
    return float(sym_eig(s).eigenvalues[-1])


def min_eig(s: SymMat) -> float:
    return float(sym_eig(s).eigenvalues[0])


def is_nsd(s: SymMat, tol: float) -> bool:
    """True iff the largest eigenvalue is at most ``tol``."""
    if tol < 0:
        raise ValueError("tolerance must be nonnegative")
    return max_eig(s) <= tol


def is_psd(s: SymMat, tol: float) -> bool:
    """True iff the smallest eigenvalue is at least ``-tol``."""
    if tol < 0:
        raise ValueError("tolerance must be nonnegative")
    return min_eig(s) >= -tol


def schur_complement(m: SymMat, head: int) -> SymMat:
    """Schur complement X - Y Z^{-1} Y^T of the trailing block.

    ``head`` is the row count of the leading block X in the partition
    [[X, Y], [Y^T, Z]]. Z is inverted via its eigendecomposition and must pass
    the singularity gate min|eig(Z)| > 1e-12 * ||Z||_F.
    """
    if not 1 <= head < m.dim:
        raise ValueError(f"head block size {head} out of range for dim {m.dim}")
    x = m.data[:head, :head]
    y = m.data[:head, head:]
    z = SymMat(m.data[head:, head:])
    dz = sym_eig(z)
    gate = SCHUR_SINGULAR_REL * np.linalg.norm(z.data)
    if np.min(np.abs(dz.eigenvalues)) <= gate:
        raise SingularBlock(f"trailing block eigenvalue within {gate:.3e} of zero")
    z_inv = dz.eigenvectors @ np.diag(1.0 / dz.eigenvalues) @ dz.eigenvectors.T
    return SymMat(x - y @ z_inv @ y.T)


def chol_factor(a: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of a symmetric positive definite array."""
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    ell = np.zeros((n, n))
    for j in range(n):
        d = a[j, j] - ell[j, :j] @ ell[j, :j]
        if not (d > 0.0) or not np.isfinite(d):
            raise NotPositiveDefinite(f"pivot {d!r} at index {j}")
        ell[j, j] = math.sqrt(d)
        if j + 1 < n:
            ell[j + 1:, j] = (a[j + 1:, j] - ell[j + 1:, :j] @ ell[j, :j]) / ell[j, j]
    return ell


def chol_solve(ell: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve (L L^T) x = b given the lower factor L. ``b`` may hold columns."""
    b = np.asarray(b, dtype=float)
    squeeze = b.ndim == 1
    y = b.reshape(b.shape[0], -1).copy()
    n = ell.shape[0]
    for i in range(n):
        y[i] -= ell[i, :i] @ y[:i]
        y[i] /= ell[i, i]
    for i in range(n - 1, -1, -1):
        y[i] -= ell[i + 1:, i] @ y[i + 1:]
        y[i] /= ell[i, i]
    return y[:, 0] if squeeze else y


def cholesky(s: SymMat) -> np.ndarray:
    """Lower triangular L with L L^T = S; raises NotPositiveDefinite otherwise."""
    return chol_factor(s.data)
