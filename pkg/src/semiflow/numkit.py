"""Dense linear algebra and univariate polynomial helpers used everywhere else.

Matrices are plain 2-d numpy arrays (real or complex), polynomials are 1-d
real coefficient arrays in ascending degree order.  All dimensions here are
tiny (at most ``MAX_DIM``), so the routines are written for exact contracts,
not scale.  Factorizations are delegated to LAPACK through numpy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

MAX_DIM = 64

__all__ = [
    "MAX_DIM",
    "Signature",
    "det",
    "kernel_basis",
    "sym_signature",
    "signature_from_eigenvalues",
    "poly_trim",
    "poly_degree",
    "poly_divrem",
    "poly_eval",
    "poly_add",
    "poly_sub",
    "poly_mul",
    "poly_scale",
]


@dataclass(frozen=True)
class Signature:
    """Inertia of a quadratic form: counts of positive, negative and
    numerically-zero eigenvalues."""

    n_plus: int
    n_minus: int
    n_zero: int

    @property
    def dimension(self) -> int:
        return self.n_plus + self.n_minus + self.n_zero

    @property
    def index(self) -> int:
        """Signed count n_plus - n_minus."""
        return self.n_plus - self.n_minus

    @property
    def nondegenerate(self) -> bool:
        return self.n_zero == 0

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.n_plus, self.n_minus, self.n_zero)


def _as_matrix(m, *, square: bool = True) -> np.ndarray:
    a = np.asarray(m)
    if a.ndim != 2:
        raise ValidationError(f"expected a 2-d matrix, got ndim={a.ndim}")
    if square and a.shape[0] != a.shape[1]:
        raise ValidationError(f"expected a square matrix, got shape {a.shape}")
    if max(a.shape) > MAX_DIM:
        raise ValidationError(f"matrix dimension {max(a.shape)} exceeds {MAX_DIM}")
    if not np.all(np.isfinite(a)):
        raise ValidationError("matrix contains non-finite entries")
    return a


def det(m) -> complex | float:
    """Determinant of a square real or complex matrix (LU with partial
    pivoting; the pivoting permutation sign is tracked exactly by LAPACK)."""
    a = _as_matrix(m)
    d = np.linalg.det(a.astype(np.complex128 if np.iscomplexobj(a) else np.float64))
    return complex(d) if np.iscomplexobj(a) else float(d)


def kernel_basis(m, rel_tol: float) -> list[np.ndarray]:
    """Orthonormal basis of the numerical kernel of a square matrix.

    Directions with singular value sigma_i <= rel_tol * sigma_max are kept;
    an empty list means the matrix is numerically invertible.
    """
    a = _as_matrix(m)
    if not (0.0 < rel_tol < 1.0):
        raise ValidationError(f"rel_tol must lie in (0, 1), got {rel_tol}")
    _, sigma, vh = np.linalg.svd(a)
    smax = sigma[0] if sigma.size else 0.0
    null_rows = np.nonzero(sigma <= rel_tol * smax)[0]
    return [np.conj(vh[i]) for i in null_rows]


def signature_from_eigenvalues(eigs: np.ndarray, rel_tol: float) -> Signature:
    """Classify eigenvalues of a symmetric form into (+, -, 0) with a
    threshold relative to the largest magnitude."""
    eigs = np.asarray(eigs, dtype=float)
    scale = float(np.max(np.abs(eigs))) if eigs.size else 0.0
    thresh = rel_tol * scale
    n_plus = int(np.count_nonzero(eigs > thresh))
    n_minus = int(np.count_nonzero(eigs < -thresh))
    return Signature(n_plus, n_minus, int(eigs.size) - n_plus - n_minus)


def sym_signature(s, rel_tol: float) -> Signature:
    """Signature of a real symmetric matrix (asymmetry beyond 1e-12 relative
    is rejected)."""
    a = _as_matrix(s)
    if np.iscomplexobj(a):
        if np.max(np.abs(a.imag)) > 0.0:
            raise ValidationError("sym_signature expects a real matrix")
        a = a.real
    a = a.astype(np.float64)
    norm = np.linalg.norm(a)
    if np.linalg.norm(a - a.T) > 1e-12 * max(norm, 1e-300):
        raise ValidationError("matrix is not symmetric within 1e-12 relative")
    if not (0.0 < rel_tol < 1.0):
        raise ValidationError(f"rel_tol must lie in (0, 1), got {rel_tol}")
    eigs = np.linalg.eigvalsh(0.5 * (a + a.T))
    return signature_from_eigenvalues(eigs, rel_tol)


# ----------------------------------------------------------------------
# polynomials: 1-d real arrays, ascending degree


def poly_trim(c, tol: float = 0.0) -> np.ndarray:
    """Strip trailing coefficients with magnitude <= tol (absolute)."""
    a = np.atleast_1d(np.asarray(c, dtype=float))
    if a.ndim != 1:
        raise ValidationError("polynomial coefficients must be 1-d")
    if not np.all(np.isfinite(a)):
        raise ValidationError("polynomial has non-finite coefficients")
    last = a.size - 1
    while last >= 0 and abs(a[last]) <= tol:
        last -= 1
    if last < 0:
        return np.zeros(1)
    return a[: last + 1].copy()


def poly_degree(c) -> int | float:
    """Degree of a polynomial; the zero polynomial has degree -inf."""
    a = poly_trim(c)
    if a.size == 1 and a[0] == 0.0:
        return -math.inf
    return a.size - 1


def poly_eval(c, x):
    """Horner evaluation; works on scalars and arrays."""
    a = poly_trim(c)
    xa = np.asarray(x, dtype=float)
    out = np.full(xa.shape, a[-1])
    for k in range(a.size - 2, -1, -1):
        out = out * xa + a[k]
    return out if xa.shape else float(out)


def poly_add(a, b) -> np.ndarray:
    pa, pb = poly_trim(a), poly_trim(b)
    n = max(pa.size, pb.size)
    out = np.zeros(n)
    out[: pa.size] += pa
    out[: pb.size] += pb
    return poly_trim(out)


def poly_scale(a, c: float) -> np.ndarray:
    return poly_trim(poly_trim(a) * c)


def poly_sub(a, b) -> np.ndarray:
    return poly_add(a, poly_scale(b, -1.0))


def poly_mul(a, b) -> np.ndarray:
    pa, pb = poly_trim(a), poly_trim(b)
    return poly_trim(np.convolve(pa, pb))


def poly_divrem(a, b) -> tuple[np.ndarray, np.ndarray]:
    """Euclidean division a = q*b + r with deg r < deg b.

    Division by the zero polynomial is rejected.
    """
    pa, pb = poly_trim(a), poly_trim(b)
    if poly_degree(pb) == -math.inf:
        raise ValidationError("division by the zero polynomial")
    da, db = pa.size - 1, pb.size - 1
    if da < db or (pa.size == 1 and pa[0] == 0.0):
        return np.zeros(1), pa
    q = np.zeros(da - db + 1)
    r = pa.copy()
    lead = pb[-1]
    for k in range(da - db, -1, -1):
        coef = r[k + db] / lead
        q[k] = coef
        if coef != 0.0:
            r[k : k + db] -= coef * pb[:-1]
        r[k + db] = 0.0  # leading term cancels exactly
    return poly_trim(q), poly_trim(r)
