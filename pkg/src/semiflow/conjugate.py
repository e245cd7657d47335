"""Conjugate instants, the boundary winding number of det b_z, and the
conjugate index, with the Green-kernel trace formula as a cross-check.

Orientation convention: boxes in the (t, s) plane are traversed
counterclockwise and phases accumulate through atan2.  The single
orientation constant below is pinned by the Riemannian calibration
system (one oscillator mode, one conjugate instant, index +1); all
degree-valued results are multiplied by it.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import _integrate
from .errors import (
    BoundaryZeroError,
    IrregularInstantError,
    UncertifiedDipError,
    ValidationError,
)
from .numkit import Signature, kernel_basis, signature_from_eigenvalues
from .system import MetricSignature, ProblemSystem

__all__ = [
    "ORIENTATION_SIGN",
    "ConjugateInstant",
    "WindingResult",
    "locate_instants",
    "instant_signature",
    "regular_conjugate_index",
    "winding",
    "map_winding",
    "conjugate_index",
    "local_multiplicity",
    "green_kernel",
    "GreenKernel",
    "trace_boundary_check",
    "boundary_samples",
    "default_box",
]

# Calibrated so that the Riemannian oscillator gets conjugate index +1
# (counterclockwise boundary, atan2 phase).  See README, "Calibrations".
ORIENTATION_SIGN = +1

GRID_POINTS = 512
DIP_RATIO = 1e-3
BOUNDARY_MIN_RATIO = 1e-8


class UncertifiedDipWarning(UserWarning):
    """A singular-value dip was flagged on the scan grid but refinement did
    not certify a kernel there."""


@dataclass(frozen=True)
class ConjugateInstant:
    """A located conjugate instant with its kernel data.

    kernel holds an orthonormal basis (w_k) of ker b_t; image_vectors the
    corresponding v_k = d_t w_k; signature_contrib is the signature of the
    restricted metric form <J v, v> on span{v_k} when that form is
    nondegenerate (None otherwise)."""

    t: float
    multiplicity: int
    kernel: tuple[np.ndarray, ...]
    image_vectors: tuple[np.ndarray, ...]
    form_signature: Signature
    regular: bool
    signature_contrib: int | None

    def __post_init__(self):
        if not (0.0 < self.t < 1.0):
            raise ValidationError(f"conjugate instant t={self.t} outside (0, 1)")
        if self.multiplicity != len(self.kernel):
            raise ValidationError("multiplicity must equal the kernel dimension")


@dataclass(frozen=True)
class WindingResult:
    winding: int
    samples_used: int
    max_phase_step: float
    phase_residue: float


def default_box(sys: ProblemSystem) -> tuple[float, float, float, float]:
    """The rectangle (0, 1) x (-o_height, o_height)."""
    return (0.0, 1.0, -sys.o_height, sys.o_height)


# ----------------------------------------------------------------------
# instant location


def _restricted_form(sys: ProblemSystem, b: np.ndarray, d: np.ndarray):
    """Kernel basis of b plus the restricted metric form <J v_j, v_k> on the
    image vectors v_k = d w_k."""
    rel_tol = sys.tolerances.rank_rel_tol
    kern = kernel_basis(b, rel_tol)
    if not kern:
        return kern, (), None, None
    w = np.stack(kern, axis=1)  # (n, m)
    v = d @ w
    gram = v.T @ (sys.signature.eps[:, None] * v)
    gram = 0.5 * (gram + gram.T)
    sig = signature_from_eigenvalues(np.linalg.eigvalsh(gram), rel_tol)
    return kern, tuple(v.T), gram, sig


def _make_instant(sys: ProblemSystem, t: float, b: np.ndarray, d: np.ndarray) -> ConjugateInstant | None:
    kern, image, _, sig = _restricted_form(sys, b, d)
    if not kern:
        return None
    regular = sig.nondegenerate
    return ConjugateInstant(
        t=float(t),
        multiplicity=len(kern),
        kernel=tuple(kern),
        image_vectors=image,
        form_signature=sig,
        regular=regular,
        signature_contrib=sig.index if regular else None,
    )


def _bisect_roots(evaluator, brackets: list[tuple[float, float, float, float]], tol: float) -> list[float]:
    """Vectorized sign-change bisection; brackets hold (lo, hi, f(lo), f(hi))."""
    if not brackets:
        return []
    lo = np.array([b[0] for b in brackets])
    hi = np.array([b[1] for b in brackets])
    flo = np.array([b[2] for b in brackets])
    while np.max(hi - lo) > tol:
        mid = 0.5 * (lo + hi)
        bmid, _ = evaluator.bd_at(mid)
        fmid = np.linalg.det(bmid)
        left = (flo * fmid) > 0.0
        lo = np.where(left, mid, lo)
        flo = np.where(left, fmid, flo)
        hi = np.where(left, hi, mid)
    return list(0.5 * (lo + hi))


def _golden_minima(evaluator, triples: list[tuple[float, float]], tol: float) -> list[float]:
    """Vectorized golden-section minimization of sigma_min(b_t) on brackets."""
    if not triples:
        return []
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a = np.array([t[0] for t in triples])
    b = np.array([t[1] for t in triples])
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)

    def sigma_min(ts):
        bb, _ = evaluator.bd_at(ts)
        return np.linalg.svd(bb, compute_uv=False)[:, -1]

    fc, fd = sigma_min(c), sigma_min(d)
    while np.max(b - a) > tol:
        left = fc < fd  # minimum confined to [a, d]
        a = np.where(left, a, c)
        b = np.where(left, d, b)
        survivor = np.where(left, c, d)
        f_survivor = np.where(left, fc, fd)
        probe = np.where(left, b - invphi * (b - a), a + invphi * (b - a))
        f_probe = sigma_min(probe)
        c = np.where(left, probe, survivor)
        fc = np.where(left, f_probe, f_survivor)
        d = np.where(left, survivor, probe)
        fd = np.where(left, f_survivor, f_probe)
    return list(0.5 * (a + b))


def locate_instants(sys: ProblemSystem, grid_points: int | None = None) -> list[ConjugateInstant]:
    """Scan (0, 1) for zeros of det b_t, refine, and attach kernel data.

    Sign changes of det b_t are refined by bisection to the instant
    tolerance; dips of sigma_min(b_t) below DIP_RATIO of the local largest
    singular value (even-order zeros show no sign change) are refined by
    golden section.  Candidates closer than ten instant tolerances are
    merged.  Dips that refine to a point without a certified kernel are
    reported through UncertifiedDipWarning, not dropped silently.
    """
    grid = GRID_POINTS if grid_points is None else int(grid_points)
    tol = sys.tolerances.instant_tol
    evaluator = _integrate.real_axis_evaluator(sys)

    ts = np.concatenate([[1.0 / (4 * grid)], np.arange(1, grid) / grid, [1.0]])
    b, _ = evaluator.bd_at(ts)
    dets = np.linalg.det(b)
    svals = np.linalg.svd(b, compute_uv=False)

    brackets = [
        (ts[j], ts[j + 1], dets[j], dets[j + 1])
        for j in range(len(ts) - 1)
        if dets[j] * dets[j + 1] < 0.0
    ]
    roots = _bisect_roots(evaluator, brackets, tol)

    smin, smax = svals[:, -1], svals[:, 0]
    interior = np.arange(1, len(ts) - 1)
    dip_idx = [
        j
        for j in interior
        if smin[j] <= smin[j - 1] and smin[j] <= smin[j + 1] and smin[j] < DIP_RATIO * smax[j]
    ]
    dip_candidates = _golden_minima(evaluator, [(ts[j - 1], ts[j + 1]) for j in dip_idx], tol)

    # one fine local pass around every candidate to split sub-grid pairs
    extra: list[float] = []
    for t0 in list(roots) + list(dip_candidates):
        lo = max(t0 - 2.0 / grid, 1.0 / (4 * grid))
        hi = min(t0 + 2.0 / grid, 1.0)
        fine = np.linspace(lo, hi, 129)
        bf, _ = evaluator.bd_at(fine)
        df = np.linalg.det(bf)
        fine_brackets = [
            (fine[j], fine[j + 1], df[j], df[j + 1])
            for j in range(len(fine) - 1)
            if df[j] * df[j + 1] < 0.0
        ]
        extra.extend(_bisect_roots(evaluator, fine_brackets, tol))

    merged: list[float] = []
    for t0 in sorted(roots + dip_candidates + extra):
        if merged and abs(t0 - merged[-1]) < 10.0 * tol:
            continue
        merged.append(t0)

    instants: list[ConjugateInstant] = []
    for t0 in merged:
        bb, dd = evaluator.bd_at(np.array([t0]))
        inst = _make_instant(sys, t0, bb[0], dd[0])
        if inst is None:
            warnings.warn(
                f"sigma_min dip near t={t0:.12g} did not certify a kernel "
                f"(rank tolerance {sys.tolerances.rank_rel_tol:g})",
                UncertifiedDipWarning,
            )
            continue
        instants.append(inst)
    return sorted(instants, key=lambda i: i.t)


def instant_signature(inst: ConjugateInstant, signature: MetricSignature) -> int:
    """Signature of the metric form <J v, v> on the image span of a regular
    instant; irregular instants are rejected (use local_multiplicity)."""
    if not inst.regular:
        raise IrregularInstantError(
            f"instant t={inst.t:.12g} has a degenerate restricted form; "
            "use local_multiplicity instead"
        )
    v = np.stack(inst.image_vectors, axis=1)
    gram = v.T @ (signature.eps[:, None] * v)
    eigs = np.linalg.eigvalsh(0.5 * (gram + gram.T))
    sig = signature_from_eigenvalues(eigs, 1e-8)
    return sig.index


def regular_conjugate_index(sys: ProblemSystem) -> int:
    """Sum of instant signatures; valid only when every instant is regular."""
    total = 0
    for inst in locate_instants(sys):
        if not inst.regular:
            raise IrregularInstantError(
                f"instant t={inst.t:.12g} is irregular; the signature sum is "
                "undefined, use conjugate_index / local_multiplicity"
            )
        total += inst.signature_contrib
    return total


# ----------------------------------------------------------------------
# boundary winding


class _EdgeSampler:
    """Adaptive sampling of a polyline in the z plane with value caching."""

    def __init__(self, f_batch, anchors: list[complex], init_per_edge: int):
        self.f = f_batch
        self.edges = list(zip(anchors[:-1], anchors[1:]))
        self.params: list[np.ndarray] = [np.linspace(0.0, 1.0, init_per_edge + 1) for _ in self.edges]
        self.values: list[np.ndarray] = []
        for (z0, z1), u in zip(self.edges, self.params):
            self.values.append(self._eval(z0, z1, u))

    def _eval(self, z0, z1, u):
        return np.asarray(self.f(z0 + (z1 - z0) * u))

    def refine(self, max_rounds: int = 24) -> None:
        """Insert midpoints until every consecutive phase increment along the
        polyline is below pi/2."""
        worst_z = self.edges[0][0]
        for _ in range(max_rounds):
            dirty = False
            for e, (z0, z1) in enumerate(self.edges):
                vals = self.values[e]
                dphi = np.angle(vals[1:] / vals[:-1])
                bad = np.nonzero(np.abs(dphi) >= 0.5 * np.pi)[0]
                if bad.size == 0:
                    continue
                dirty = True
                u = self.params[e]
                worst_z = z0 + (z1 - z0) * u[bad[0]]
                mids = 0.5 * (u[bad] + u[bad + 1])
                new_vals = self._eval(z0, z1, mids)
                order = np.argsort(np.concatenate([u, mids]))
                self.params[e] = np.concatenate([u, mids])[order]
                self.values[e] = np.concatenate([vals, new_vals])[order]
            if not dirty:
                return
        raise BoundaryZeroError(
            "phase increments failed to settle below pi/2; a zero is likely "
            "on or near the boundary",
            complex(worst_z),
        )

    def chained(self) -> tuple[np.ndarray, np.ndarray]:
        """All samples in traversal order (shared corners deduplicated)."""
        zs, vals = [], []
        for e, (z0, z1) in enumerate(self.edges):
            u, v = self.params[e], self.values[e]
            z = z0 + (z1 - z0) * u
            if e:
                z, v = z[1:], v[1:]
            zs.append(z)
            vals.append(v)
        return np.concatenate(zs), np.concatenate(vals)


def _phase_increments(values: np.ndarray) -> np.ndarray:
    return np.angle(values[1:] / values[:-1])


def _check_boundary_values(zs: np.ndarray, values: np.ndarray) -> None:
    mags = np.abs(values)
    if np.min(mags) <= BOUNDARY_MIN_RATIO * np.max(mags):
        z_bad = complex(zs[int(np.argmin(mags))])
        raise BoundaryZeroError("zero too close to boundary", z_bad)


def map_winding(f_batch, box: tuple[float, float, float, float], init_per_edge: int = 16) -> WindingResult:
    """Winding number of an arbitrary batched map over a counterclockwise
    rectangle boundary, by adaptive phase accumulation."""
    t0, t1, s0, s1 = box
    if not (t0 < t1 and s0 < s1):
        raise ValidationError(f"degenerate box {box}")
    anchors = [
        complex(t0, s0),
        complex(t1, s0),
        complex(t1, s1),
        complex(t0, s1),
        complex(t0, s0),
    ]
    sampler = _EdgeSampler(f_batch, anchors, init_per_edge)
    sampler.refine()
    zs, vals = sampler.chained()
    _check_boundary_values(zs, vals)
    incr = _phase_increments(vals)
    total = float(np.sum(incr))
    w = int(np.rint(total / (2.0 * np.pi)))
    residue = abs(total / (2.0 * np.pi) - w)
    return WindingResult(
        winding=w,
        samples_used=int(len(zs) - 1),
        max_phase_step=float(np.max(np.abs(incr))) if incr.size else 0.0,
        phase_residue=residue,
    )


def winding(sys: ProblemSystem, box: tuple[float, float, float, float] | None = None,
            steps: int | None = None, init_per_edge: int = 16) -> WindingResult:
    """Winding number of rho = det b_z over the boundary of a rectangle.

    For s-symmetric boxes only the upper half of the boundary is evaluated;
    rho(conj z) = conj rho(z) because the coefficients are real, so the
    lower half contributes an equal phase increment.
    """
    box = default_box(sys) if box is None else box
    t0, t1, s0, s1 = box
    if not (t0 < t1 and s0 < s1):
        raise ValidationError(f"degenerate box {box}")
    f = lambda zs: _integrate.rho_batch(sys, zs, steps)
    if abs(s0 + s1) > 1e-15 * max(abs(s0), abs(s1)):
        return map_winding(f, box, init_per_edge)

    anchors = [complex(t1, 0.0), complex(t1, s1), complex(t0, s1), complex(t0, 0.0)]
    sampler = _EdgeSampler(f, anchors, init_per_edge)
    sampler.refine()
    zs, vals = sampler.chained()
    _check_boundary_values(zs, vals)
    incr = _phase_increments(vals)
    total = 2.0 * float(np.sum(incr))
    w = int(np.rint(total / (2.0 * np.pi)))
    residue = abs(total / (2.0 * np.pi) - w)
    return WindingResult(
        winding=w,
        samples_used=int(2 * len(zs) - 2),
        max_phase_step=float(np.max(np.abs(incr))) if incr.size else 0.0,
        phase_residue=residue,
    )


def conjugate_index(sys: ProblemSystem, steps: int | None = None) -> int:
    """Oriented winding number of det b_z over the full rectangle."""
    return ORIENTATION_SIGN * winding(sys, default_box(sys), steps=steps).winding


def _neighbor_gap(sys: ProblemSystem, t0: float) -> float:
    gaps = [t0, 1.0 - t0]
    for inst in locate_instants(sys):
        if abs(inst.t - t0) > 100.0 * sys.tolerances.instant_tol:
            gaps.append(abs(inst.t - t0) / 2.0)
    return min(gaps)


def local_multiplicity(sys: ProblemSystem, t0: float, radius: float | None = None) -> int:
    """Oriented winding number over a small box isolating one instant."""
    if not (0.0 < t0 < 1.0):
        raise ValidationError("t0 must lie in (0, 1)")
    r = min(_neighbor_gap(sys, t0), 0.1) if radius is None else float(radius)
    if r <= 0.0:
        raise ValidationError("radius must be positive")
    box = (t0 - r, t0 + r, -r, r)
    return ORIENTATION_SIGN * winding(sys, box).winding


# ----------------------------------------------------------------------
# Green kernel and the trace formula


class GreenKernel:
    """Green kernel K_z(x, y) of the suspended operator at an invertible z.

    Built from the fundamental solution: with P_z = [[0, 0], [b_z^{-1}, 0]]
    Psi_z(1), the two-branch kernel is -Psi(x) P Psi(y)^{-1} for x < y and
    Psi(x) (Id - P) Psi(y)^{-1} for y < x, compressed to its upper-right
    n x n block.  The diagonal takes the x < y branch limit.
    """

    def __init__(self, sys: ProblemSystem, z: complex, steps: int | None = None):
        self.sys = sys
        self.z = complex(z)
        self.steps = sys.tolerances.ode_steps if steps is None else int(steps)
        self.path = _integrate.psi_path(sys, self.z, self.steps)
        psi1 = self.path[-1]
        n = sys.n
        b = psi1[:n, n:]
        if abs(np.linalg.det(b)) <= 1e-12 * max(np.linalg.norm(b) ** n, 1e-300):
            raise ValidationError(f"b_z is singular at z={self.z}; Green kernel undefined")
        p = np.zeros_like(psi1)
        p[n:, :n] = np.linalg.inv(b)
        self.p_z = p @ psi1

    def psi_at(self, x: float) -> np.ndarray:
        """Psi_z at an arbitrary point (stored node plus one partial step)."""
        steps = self.steps
        x = float(x)
        if not (0.0 <= x <= 1.0):
            raise ValidationError("x must lie in [0, 1]")
        idx = min(int(x * steps), steps)
        x0 = idx / steps
        h = x - x0
        w = self.path[idx]
        if h <= 0.0:
            return w
        sys = self.sys
        t = np.array([self.z.real])
        s = None if self.z.imag == 0.0 else np.array([self.z.imag])
        eps_c = sys.signature.eps[:, None]
        n = sys.n

        def deriv(s_mat, w_in):
            return np.vstack([eps_c * w_in[n:, :], -(s_mat @ w_in[:n, :])])

        s_of = lambda xx: _integrate._suspended_s(sys, t, s, np.array([xx]))[0]
        s0, sm, s1 = s_of(x0), s_of(x0 + 0.5 * h), s_of(x0 + h)
        k1 = deriv(s0, w)
        k2 = deriv(sm, w + 0.5 * h * k1)
        k3 = deriv(sm, w + 0.5 * h * k2)
        k4 = deriv(s1, w + h * k3)
        return w + (h / 6.0) * (k1 + k4 + 2.0 * (k2 + k3))

    def __call__(self, x: float, y: float) -> np.ndarray:
        if x == y == 0.0 or x == y == 1.0:
            raise ValidationError("kernel is not defined at the corner diagonal")
        n = self.sys.n
        psi_x = self.psi_at(x)
        psi_y_inv = np.linalg.inv(self.psi_at(y))
        if x <= y:
            full = -psi_x @ self.p_z @ psi_y_inv
        else:
            full = psi_x @ (np.eye(2 * n) - self.p_z) @ psi_y_inv
        return full[:n, n:]


def green_kernel(sys: ProblemSystem, z: complex, x: float, y: float) -> np.ndarray:
    """One-shot kernel evaluation; build a GreenKernel for repeated use."""
    return GreenKernel(sys, z)(x, y)


def _edge_b_eval(sys, z0: complex, z1: complex, count: int, steps: int, h_fd: float):
    """b_z along a segment plus tangential derivative by second-order stencils
    (central inside, one-sided at the ends to stay on the closed domain)."""
    u = np.linspace(0.0, 1.0, count + 1)
    zs = z0 + (z1 - z0) * u
    tau = (z1 - z0) / abs(z1 - z0)
    inner = zs[1:-1]
    batch = np.concatenate([
        zs,
        inner + h_fd * tau, inner - h_fd * tau,
        [zs[0] + h_fd * tau, zs[0] + 2 * h_fd * tau],
        [zs[-1] - h_fd * tau, zs[-1] - 2 * h_fd * tau],
    ])
    n = sys.n
    w0 = np.zeros((2 * n, n))
    w0[n:, :] = np.eye(n)
    ends = _integrate.propagate_batch(sys, batch, w0, steps)
    bmats = ends[:, :n, :]
    k = len(zs)
    m = len(inner)
    b_on = bmats[:k]
    b_plus, b_minus = bmats[k : k + m], bmats[k + m : k + 2 * m]
    b_first = bmats[k + 2 * m : k + 2 * m + 2]
    b_last = bmats[k + 2 * m + 2 :]
    db = np.empty_like(b_on)
    db[1:-1] = (b_plus - b_minus) / (2.0 * h_fd)
    db[0] = (-3.0 * b_on[0] + 4.0 * b_first[0] - b_first[1]) / (2.0 * h_fd)
    db[-1] = (3.0 * b_on[-1] - 4.0 * b_last[0] + b_last[1]) / (2.0 * h_fd)
    seg_len = abs(z1 - z0)
    return zs, b_on, db, seg_len


def trace_boundary_check(sys: ProblemSystem, steps: int | None = None, h_fd: float = 1e-6,
                         tol: float = 1e-4, max_doublings: int = 8) -> float:
    """Discrepancy between the boundary trace integral of db_z b_z^{-1} / (2 pi i)
    and the phase-winding number over the same rectangle.

    The integrand is sampled uniformly per edge with trapezoid quadrature and
    per-edge doubling until the integral settles; the derivative uses central
    differences along each edge.
    """
    steps = sys.tolerances.ode_steps if steps is None else int(steps)
    t0, t1, s0, s1 = default_box(sys)
    corners = [
        complex(t0, s0),
        complex(t1, s0),
        complex(t1, s1),
        complex(t0, s1),
        complex(t0, s0),
    ]
    w = winding(sys, steps=steps).winding

    count = 32
    prev = None
    for _ in range(max_doublings):
        integral = 0.0 + 0.0j
        for z0, z1 in zip(corners[:-1], corners[1:]):
            zs, b_on, db, seg_len = _edge_b_eval(sys, z0, z1, count, steps, h_fd)
            g = np.trace(db @ np.linalg.inv(b_on), axis1=1, axis2=2)
            du = seg_len / count
            integral += np.sum(0.5 * (g[1:] + g[:-1])) * du
        integral /= 2.0j * np.pi
        if prev is not None and abs(integral - prev) < tol:
            return abs(integral - w)
        prev = integral
        count *= 2
    return abs(prev - w)


def boundary_samples(sys: ProblemSystem, box: tuple[float, float, float, float] | None = None,
                     per_edge: int = 256, steps: int | None = None) -> np.ndarray:
    """Uniform boundary samples of rho for CSV dumps: columns are
    (t, s, Re rho, Im rho, accumulated phase)."""
    t0, t1, s0, s1 = default_box(sys) if box is None else box
    corners = [
        complex(t0, s0),
        complex(t1, s0),
        complex(t1, s1),
        complex(t0, s1),
        complex(t0, s0),
    ]
    zs = []
    for z0, z1 in zip(corners[:-1], corners[1:]):
        u = np.linspace(0.0, 1.0, per_edge, endpoint=False)
        zs.append(z0 + (z1 - z0) * u)
    zs = np.concatenate(zs + [np.array([corners[-1]])])
    vals = _integrate.rho_batch(sys, zs, steps)
    phase = np.concatenate([[np.angle(vals[0])], np.angle(vals[0]) + np.cumsum(_phase_increments(vals))])
    out = np.empty((len(zs), 5))
    out[:, 0] = np.real(zs)
    out[:, 1] = np.imag(zs)
    out[:, 2] = np.real(vals)
    out[:, 3] = np.imag(vals)
    out[:, 4] = phase
    return out
