"""Problem data in trivialized form.

A problem is the pair (J, S): the constant symmetry J = diag(Id, -Id)
induced by the metric signature, and an analytic symmetric coefficient
field S(x) on [0, 1].  The one-parameter family S_t(x) = t^2 S(t x) and
its complex suspension S_z = S_t + i s Id (z = t + i s), optionally
shifted by a regularization constant delta, drive every computation in
the package.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np

from .errors import DegenerateEndpointError, ValidationError

__all__ = [
    "MetricSignature",
    "CoefficientField",
    "Tolerances",
    "ProblemSystem",
    "s_family",
    "s_family_dot",
    "hamiltonian",
    "symplectic_matrix",
    "problem_from_dict",
    "problem_to_dict",
]

FIELD_KINDS = ("constant", "poly", "trig")

SYMMETRY_RTOL = 1e-12
NONDEGENERACY_RTOL = 1e-10


@dataclass(frozen=True)
class MetricSignature:
    """Dimension n and index nu of the metric; J = diag(Id_{n-nu}, -Id_nu)."""

    n: int
    nu: int

    def __post_init__(self):
        if not (isinstance(self.n, int) and isinstance(self.nu, int)):
            raise ValidationError("n and nu must be integers")
        if self.n < 1 or not (0 <= self.nu <= self.n):
            raise ValidationError(f"need n >= 1 and 0 <= nu <= n, got n={self.n}, nu={self.nu}")

    @property
    def eps(self) -> np.ndarray:
        """Diagonal of J: +1 on the first n-nu entries, -1 on the last nu."""
        e = np.ones(self.n)
        if self.nu:
            e[self.n - self.nu :] = -1.0
        return e

    def j_matrix(self) -> np.ndarray:
        return np.diag(self.eps)


def _check_symmetric_stack(mats: tuple[np.ndarray, ...], n: int) -> None:
    for k, a in enumerate(mats):
        if a.shape != (n, n):
            raise ValidationError(f"coefficient matrix {k} has shape {a.shape}, expected {(n, n)}")
        if not np.all(np.isfinite(a)):
            raise ValidationError(f"coefficient matrix {k} has non-finite entries")
        scale = max(np.linalg.norm(a), 1e-300)
        if np.linalg.norm(a - a.T) > SYMMETRY_RTOL * scale:
            raise ValidationError(f"coefficient matrix {k} is not symmetric within {SYMMETRY_RTOL}")


@dataclass(frozen=True)
class CoefficientField:
    """Analytic symmetric field S(x) plus an optional constant shift delta.

    kind "constant":  S(x) = M0
    kind "poly":      S(x) = sum_k M_k x^k
    kind "trig":      S(x) = M0 + sum_k (M_{2k-1} cos(2 pi k x) + M_{2k} sin(2 pi k x))

    The shift enters the suspended family as S_t + delta*Id, not the base
    field, so evaluate() below never includes it.
    """

    kind: str
    matrices: tuple[np.ndarray, ...]
    delta: float = 0.0

    def __post_init__(self):
        if self.kind not in FIELD_KINDS:
            raise ValidationError(f"unknown field kind {self.kind!r}; expected one of {FIELD_KINDS}")
        mats = tuple(np.array(m, dtype=float) for m in self.matrices)
        if not mats:
            raise ValidationError("coefficient field needs at least one matrix")
        if self.kind == "constant" and len(mats) != 1:
            raise ValidationError("constant field takes exactly one matrix")
        if self.kind == "trig" and len(mats) % 2 == 0:
            raise ValidationError("trig field needs matrices [M0, C1, S1, ..., Cd, Sd]")
        n = mats[0].shape[0]
        _check_symmetric_stack(mats, n)
        for m in mats:
            m.flags.writeable = False
        object.__setattr__(self, "matrices", mats)
        if not np.isfinite(self.delta):
            raise ValidationError("delta must be finite")

    @property
    def n(self) -> int:
        return self.matrices[0].shape[0]

    @property
    def trig_degree(self) -> int:
        return (len(self.matrices) - 1) // 2 if self.kind == "trig" else 0

    def stack(self) -> np.ndarray:
        return np.stack(self.matrices)

    def _basis(self, y: np.ndarray, derivative: bool) -> np.ndarray:
        """Values (or y-derivatives) of the scalar basis functions at y,
        shaped (len(matrices), y.shape...)."""
        k = len(self.matrices)
        if self.kind == "constant":
            return np.zeros((1,) + y.shape) if derivative else np.ones((1,) + y.shape)
        if self.kind == "poly":
            out = np.empty((k,) + y.shape)
            for j in range(k):
                if derivative:
                    out[j] = 0.0 if j == 0 else j * y ** (j - 1)
                else:
                    out[j] = y**j
            return out
        out = np.empty((k,) + y.shape)
        out[0] = 0.0 if derivative else 1.0
        for j in range(1, self.trig_degree + 1):
            w = 2.0 * np.pi * j
            c, s = np.cos(w * y), np.sin(w * y)
            if derivative:
                out[2 * j - 1] = -w * s
                out[2 * j] = w * c
            else:
                out[2 * j - 1] = c
                out[2 * j] = s
        return out

    def evaluate(self, y) -> np.ndarray:
        """S(y) for scalar or batched y; shape (..., n, n). No delta shift."""
        ya = np.asarray(y, dtype=float)
        basis = self._basis(np.atleast_1d(ya), derivative=False)
        flat = basis.reshape(len(self.matrices), -1).T @ self.stack().reshape(len(self.matrices), -1)
        out = flat.reshape(np.atleast_1d(ya).shape + (self.n, self.n))
        return out[0] if ya.shape == () else out

    def evaluate_derivative(self, y) -> np.ndarray:
        """S'(y), exact for all three kinds."""
        ya = np.asarray(y, dtype=float)
        basis = self._basis(np.atleast_1d(ya), derivative=True)
        flat = basis.reshape(len(self.matrices), -1).T @ self.stack().reshape(len(self.matrices), -1)
        out = flat.reshape(np.atleast_1d(ya).shape + (self.n, self.n))
        return out[0] if ya.shape == () else out

    def sup_norm(self, samples: int = 257) -> float:
        """Max spectral norm of S over [0, 1] on a sample grid (used to scale
        the regularization ladder)."""
        xs = np.linspace(0.0, 1.0, samples)
        vals = self.evaluate(xs)
        return float(np.max(np.linalg.norm(vals, ord=2, axis=(1, 2)))) if samples else 0.0


@dataclass(frozen=True)
class Tolerances:
    rank_rel_tol: float = 1e-8
    instant_tol: float = 1e-10
    ode_steps: int = 2000

    def __post_init__(self):
        if not (0.0 < self.rank_rel_tol < 1.0):
            raise ValidationError("rank_rel_tol must lie in (0, 1)")
        if not (0.0 < self.instant_tol < 1e-2):
            raise ValidationError("instant_tol must lie in (0, 1e-2)")
        if self.ode_steps < 16:
            raise ValidationError("ode_steps must be at least 16")


@dataclass
class ProblemSystem:
    """Complete input object: signature, coefficient field, domain half-height
    and numerical tolerances.  Treat as immutable after construction; the
    private cache only memoizes derived read-only data."""

    signature: MetricSignature
    field: CoefficientField
    o_height: float = 1.0
    tolerances: Tolerances = field(default_factory=Tolerances)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.field.n != self.signature.n:
            raise ValidationError(
                f"field dimension {self.field.n} does not match signature n={self.signature.n}"
            )
        if not (np.isfinite(self.o_height) and self.o_height > 0.0):
            raise ValidationError("o_height must be positive")
        self._check_nondegenerate_at_one()

    def _check_nondegenerate_at_one(self) -> None:
        from . import _integrate

        b1 = _integrate.psi_end(self, 1.0, self.tolerances.ode_steps)[: self.n, self.n :]
        d = abs(np.linalg.det(b1))
        bound = NONDEGENERACY_RTOL * np.linalg.norm(b1) ** self.n
        if not (d > bound):
            raise DegenerateEndpointError(
                f"system is degenerate at t=1: |det b_1| = {d:.3e} <= {bound:.3e}; "
                "the family endpoint must be invertible"
            )

    @property
    def n(self) -> int:
        return self.signature.n

    @property
    def delta(self) -> float:
        return self.field.delta

    def with_delta(self, delta: float) -> "ProblemSystem":
        """Copy of the system with the suspended family shifted by delta*Id.
        Endpoint nondegeneracy is re-validated by the constructor."""
        return ProblemSystem(
            signature=self.signature,
            field=replace(self.field, delta=float(delta)),
            o_height=self.o_height,
            tolerances=self.tolerances,
        )

    def with_tolerances(self, **kw) -> "ProblemSystem":
        return ProblemSystem(
            signature=self.signature,
            field=self.field,
            o_height=self.o_height,
            tolerances=replace(self.tolerances, **kw),
        )

    def with_o_height(self, o_height: float) -> "ProblemSystem":
        return ProblemSystem(
            signature=self.signature,
            field=self.field,
            o_height=float(o_height),
            tolerances=self.tolerances,
        )


def _check_range(name: str, value: float, lo: float, hi: float) -> float:
    v = float(value)
    if not (lo <= v <= hi) or not np.isfinite(v):
        raise ValidationError(f"{name} = {value} outside [{lo}, {hi}]")
    return v


def s_family(sys: ProblemSystem, t: float, x: float) -> np.ndarray:
    """Suspended family S_t(x) = t^2 S(t x) + delta * Id."""
    t = _check_range("t", t, 0.0, 1.0)
    x = _check_range("x", x, 0.0, 1.0)
    return t * t * sys.field.evaluate(t * x) + sys.delta * np.eye(sys.n)


def s_family_dot(sys: ProblemSystem, t: float, x: float) -> np.ndarray:
    """Parameter derivative of the family: 2 t S(t x) + t^2 x S'(t x)."""
    t = float(t)
    if not (0.0 < t <= 1.0):
        raise ValidationError(f"t = {t} outside (0, 1]")
    x = _check_range("x", x, 0.0, 1.0)
    return 2.0 * t * sys.field.evaluate(t * x) + t * t * x * sys.field.evaluate_derivative(t * x)


def symplectic_matrix(n: int) -> np.ndarray:
    """The standard symplectic matrix [[0, -Id], [Id, 0]] of size 2n."""
    sig = np.zeros((2 * n, 2 * n))
    sig[:n, n:] = -np.eye(n)
    sig[n:, :n] = np.eye(n)
    return sig


def hamiltonian(sys: ProblemSystem, z: complex, x: float) -> np.ndarray:
    """Right-hand-side matrix of the first-order system w' = sigma H_z w,
    with block structure [[0, J], [-S_z, 0]] and S_z = S_t + i s Id."""
    z = complex(z)
    _check_range("Re z", z.real, 0.0, 1.0)
    x = _check_range("x", x, 0.0, 1.0)
    n = sys.n
    s_z = s_family(sys, z.real, x).astype(complex)
    s_z += 1j * z.imag * np.eye(n)
    out = np.zeros((2 * n, 2 * n), dtype=complex)
    out[:n, n:] = sys.signature.j_matrix()
    out[n:, :n] = -s_z
    return out


# ----------------------------------------------------------------------
# problem JSON schema ("semiflow/1")


def _matrices_from_json(raw: Iterable) -> tuple[np.ndarray, ...]:
    return tuple(np.array(m, dtype=float) for m in raw)


def problem_from_dict(doc: dict) -> ProblemSystem:
    """Build a system from the problem JSON schema.

    Either an explicit "field" or a "generator" entry must be present; the
    generator route is resolved by the frontends module.
    """
    if not isinstance(doc, dict):
        raise ValidationError("problem document must be a JSON object")
    tol_doc = doc.get("tolerances", {})
    tolerances = Tolerances(
        rank_rel_tol=float(tol_doc.get("rank_rel_tol", 1e-8)),
        instant_tol=float(tol_doc.get("instant_tol", 1e-10)),
        ode_steps=int(tol_doc.get("ode_steps", 2000)),
    )
    o_height = float(doc.get("o_height", 1.0))
    delta = float(doc.get("delta", 0.0))

    if "generator" in doc:
        from .frontends import system_from_generator_dict

        sys0 = system_from_generator_dict(doc["generator"], o_height=o_height, tolerances=tolerances)
        return sys0.with_delta(delta) if delta else sys0

    for key in ("n", "nu", "field"):
        if key not in doc:
            raise ValidationError(f"problem document is missing {key!r}")
    sig = MetricSignature(int(doc["n"]), int(doc["nu"]))
    fdoc = doc["field"]
    kind = fdoc.get("kind")
    if kind not in FIELD_KINDS:
        raise ValidationError(f"field kind must be one of {FIELD_KINDS}, got {kind!r}")
    field_obj = CoefficientField(
        kind=kind,
        matrices=_matrices_from_json(fdoc.get("matrices", ())),
        delta=delta,
    )
    return ProblemSystem(signature=sig, field=field_obj, o_height=o_height, tolerances=tolerances)


def problem_to_dict(sys: ProblemSystem) -> dict:
    return {
        "schema": "semiflow/1",
        "n": sys.signature.n,
        "nu": sys.signature.nu,
        "field": {
            "kind": sys.field.kind,
            "matrices": [m.tolist() for m in sys.field.matrices],
        },
        "o_height": sys.o_height,
        "delta": sys.field.delta,
        "tolerances": {
            "rank_rel_tol": sys.tolerances.rank_rel_tol,
            "instant_tol": sys.tolerances.instant_tol,
            "ode_steps": sys.tolerances.ode_steps,
        },
    }
