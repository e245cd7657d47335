"""Fundamental solution of the suspended Hamiltonian system and the
determinant map rho(z) = det b_z built from its upper-right block."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _integrate
from .errors import ValidationError
from .system import MetricSignature, ProblemSystem, symplectic_matrix

__all__ = ["FundamentalSolution", "fundamental_solution", "rho", "symplectic_residual"]


@dataclass(frozen=True)
class FundamentalSolution:
    """End matrix Psi_z(1) of the matrix initial value problem
    Psi' = sigma H_z(x) Psi, Psi(0) = Id, with its four n x n blocks.

    Block convention: b is the upper-right block of Psi_z(1), the matrix
    sending v(0) to u(1)."""

    z: complex
    psi_end: np.ndarray
    steps: int

    @property
    def n(self) -> int:
        return self.psi_end.shape[0] // 2

    @property
    def a(self) -> np.ndarray:
        return self.psi_end[: self.n, : self.n]

    @property
    def b(self) -> np.ndarray:
        return self.psi_end[: self.n, self.n :]

    @property
    def c(self) -> np.ndarray:
        return self.psi_end[self.n :, : self.n]

    @property
    def d(self) -> np.ndarray:
        return self.psi_end[self.n :, self.n :]


def _check_z(z: complex) -> complex:
    z = complex(z)
    if not (np.isfinite(z.real) and np.isfinite(z.imag)):
        raise ValidationError("z must be finite")
    if not (0.0 <= z.real <= 1.0):
        raise ValidationError(f"Re z = {z.real} outside [0, 1]")
    return z


def fundamental_solution(sys: ProblemSystem, z: complex, steps: int | None = None) -> FundamentalSolution:
    """Classical fixed-step RK4 solution of Psi' = sigma H_z(x) Psi on [0, 1].

    The whole 2n x 2n system is integrated at once; steps defaults to the
    system tolerance setting and must be at least 16.
    """
    z = _check_z(z)
    steps = sys.tolerances.ode_steps if steps is None else int(steps)
    if steps < 16:
        raise ValidationError("steps must be at least 16")
    end = _integrate.psi_end(sys, z, steps)
    return FundamentalSolution(z=z, psi_end=end, steps=steps)


def rho(sys: ProblemSystem, z: complex, steps: int | None = None) -> complex:
    """Determinant of the b-block at the default step count."""
    z = _check_z(z)
    return complex(_integrate.rho_batch(sys, np.array([z]), steps)[0])


def symplectic_residual(fs: FundamentalSolution, signature: MetricSignature) -> float:
    """Frobenius norm of Psi^T sigma Psi - sigma for a real-parameter path
    value; complex z is rejected because the conservation law is stated for
    the real path."""
    if complex(fs.z).imag != 0.0:
        raise ValidationError("symplectic residual is defined for real z only")
    sigma = symplectic_matrix(signature.n)
    psi = np.real(fs.psi_end)
    return float(np.linalg.norm(psi.T @ sigma @ psi - sigma))
