"""Dense-matrix primitives and the scalar special functions of the budget calculus.

Matrices are plain 2-D ``float64`` numpy arrays; :func:`as_matrix` and
:func:`as_spd` are the validation gates used by the other modules.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from .errors import NumericalError, ParameterError, SizeError, StructureError

# Relative eigenvalue floor below which a symmetric matrix is not treated as SPD.
SPD_RTOL = 1e-10
SYMMETRY_ATOL = 1e-10
MAX_KRON_ENTRIES = 1 << 28


class SvdResult(NamedTuple):
    u: np.ndarray
    singular_values: np.ndarray
    vt: np.ndarray


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Return ``a`` as a finite 2-D float array, raising ParameterError otherwise."""
    arr = np.asarray(a, dtype=float)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ParameterError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ParameterError(f"{name} contains NaN or Inf entries")
    return arr


def is_diagonal(a: np.ndarray) -> bool:
    """True when every nonzero entry of a square matrix sits on the diagonal."""
    return np.count_nonzero(a) == np.count_nonzero(np.diagonal(a))


def as_spd(s, name: str = "covariance") -> np.ndarray:
    """Validate a symmetric positive-definite matrix.

    Symmetry is checked to ``SYMMETRY_ATOL`` (scaled by the largest entry when
    that exceeds one). The smallest eigenvalue may dip to ``-SPD_RTOL`` times
    the largest to absorb rounding; consumers clamp such values.
    """
    arr = as_matrix(s, name)
    if arr.shape[0] != arr.shape[1]:
        raise StructureError(f"{name} must be square, got shape {arr.shape}")
    if np.max(np.abs(arr - arr.T)) > SYMMETRY_ATOL * max(1.0, np.max(np.abs(arr))):
        raise StructureError(f"{name} is not symmetric")
    eig = spd_eigvals(arr)
    if eig[-1] <= 0 or eig[0] < -SPD_RTOL * eig[-1]:
        raise StructureError(
            f"{name} is not positive definite (eigenvalue range [{eig[0]:.3g}, {eig[-1]:.3g}])"
        )
    return arr


def spd_eigvals(s: np.ndarray) -> np.ndarray:
    """Ascending eigenvalues of a symmetric matrix, with a cheap path for diagonals."""
    if is_diagonal(s):
        return np.sort(np.diagonal(s).astype(float))
    return np.linalg.eigvalsh(s)


def frobenius_norm(a) -> float:
    a = as_matrix(a)
    return float(np.sqrt(np.sum(a * a)))


def svd(a) -> SvdResult:
    """Full SVD with a deterministic sign convention.

    The first nonzero entry of every left singular vector is made positive and
    the matching right singular vector is flipped with it.
    """
    a = as_matrix(a)
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=True)
    except np.linalg.LinAlgError as exc:
        cond = np.linalg.cond(a) if np.all(np.isfinite(a)) else float("nan")
        raise NumericalError(f"SVD did not converge (condition number {cond:.3g})") from exc
    k = s.size
    for j in range(u.shape[1]):
        col = u[:, j]
        nz = np.flatnonzero(np.abs(col) > 0)
        if nz.size and col[nz[0]] < 0:
            u[:, j] = -col
            if j < k:
                vt[j, :] = -vt[j, :]
    return SvdResult(u, s, vt)


def kron(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    rows = a.shape[0] * b.shape[0]
    cols = a.shape[1] * b.shape[1]
    if rows * cols > MAX_KRON_ENTRIES:
        raise SizeError(f"Kronecker product of size {rows}x{cols} exceeds {MAX_KRON_ENTRIES} entries")
    return np.kron(a, b)


def harmonic(r: int, order: float = 1.0) -> float:
    """Generalized harmonic number ``sum_{i<=r} i**-order`` by direct summation.

    Only orders 1 and 1/2 appear in the privacy bounds.
    """
    if int(r) != r or r < 1:
        raise ParameterError(f"r must be a positive integer, got {r}")
    if order not in (1, 1.0, 0.5):
        raise ParameterError(f"order must be 1 or 1/2, got {order}")
    i = np.arange(1, int(r) + 1, dtype=float)
    terms = 1.0 / i if order == 1 else 1.0 / np.sqrt(i)
    return float(math.fsum(terms))


def zeta(delta: float, m: int, n: int) -> float:
    """Laurent-Massart tail constant ``2*sqrt(-mn ln d) - 2 ln d + mn``."""
    if not 0.0 < delta < 1.0:
        raise ParameterError("delta must lie in (0,1)")
    if m < 1 or n < 1:
        raise ParameterError("m and n must be positive")
    mn = float(m) * float(n)
    log_d = math.log(delta)
    return 2.0 * math.sqrt(-mn * log_d) - 2.0 * log_d + mn


def spd_sqrt(s, validate: bool = True) -> np.ndarray:
    """Return ``B`` with ``B @ B.T == s`` via the eigendecomposition ``W diag(l) W^T``.

    ``B = W diag(sqrt(l))``. Diagonal inputs take an exact shortcut, which also
    keeps the identity mapped to the identity bit-for-bit. ``validate=False``
    skips the SPD check for inputs already known to be valid.
    """
    s = as_spd(s) if validate else s
    if is_diagonal(s):
        return np.diag(np.sqrt(np.clip(np.diagonal(s), 0.0, None)))
    try:
        lam, w = np.linalg.eigh(s)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("eigendecomposition of covariance failed") from exc
    lam = np.clip(lam, 0.0, None)
    return w * np.sqrt(lam)
