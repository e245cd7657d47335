"""Fixed-step RK4 propagation of the first-order system w' = [[0, J], [-S_z, 0]] w.

Internal module; public contracts live in flow/conjugate/spectral/maslov.
Three execution strategies, all algebraically identical to classical RK4
with step 1/steps on [0, 1]:

* constant fields: the per-step transfer matrix T = sum_{j<=4} (h M)^j / j!
  does not depend on x, so end matrices are T^steps (square-and-multiply)
  and stored paths are plain T-recursions;
* varying fields: the scalar basis of the field is evaluated for all stage
  points up front, leaving two matmuls of stage assembly plus the four
  block-structured stage updates per step, batched over the spectral
  parameter z;
* real axis with zero shift: the family S_t(x) = t^2 S(t x) satisfies
  Psi_t(1) = D_t Phi(t) D_t^{-1}, D_t = diag(Id, t Id), where Phi is the
  flow of the unsuspended base system Ju'' + S(x)u = 0.  One stored
  propagation of Phi therefore serves every real t; evaluation between
  stored nodes is a single partial RK4 step, which keeps the global order.
"""

from __future__ import annotations

import numpy as np

from .errors import IntegrationBlowupError, ValidationError

__all__ = [
    "psi_end",
    "psi_end_batch",
    "psi_path",
    "propagate_columns",
    "propagate_batch",
    "rho_batch",
    "real_axis_evaluator",
    "base_flow",
    "BaseFlow",
    "DirectRealEval",
]

_CHUNK = 192  # bounds the memory of the precomputed stage basis


def _eps_col(sys) -> np.ndarray:
    return sys.signature.eps.reshape(1, -1, 1)


def _check_finite(w: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(w)):
        raise IntegrationBlowupError(
            f"non-finite values while integrating {what}; the input scale is likely too large"
        )


# ----------------------------------------------------------------------
# constant-coefficient fast path


def _const_system_matrix(sys, zs: np.ndarray) -> np.ndarray:
    """M_z = [[0, J], [-S_z, 0]] for a batch of spectral parameters."""
    n = sys.n
    t = np.real(zs)
    s = np.imag(zs)
    complex_mode = bool(np.any(s != 0.0))
    s_z = (t * t)[:, None, None] * sys.field.matrices[0]
    if complex_mode:
        s_z = s_z.astype(complex)
    idx = np.arange(n)
    if complex_mode:
        s_z[:, idx, idx] += sys.delta + 1j * s[:, None]
    elif sys.delta != 0.0:
        s_z[:, idx, idx] += sys.delta
    m = np.zeros((len(zs), 2 * n, 2 * n), dtype=s_z.dtype)
    m[:, :n, n:] = sys.signature.j_matrix()
    m[:, n:, :n] = -s_z
    return m


def _transfer_matrix(m: np.ndarray, h: float) -> np.ndarray:
    """One-step RK4 transfer matrix for a constant system matrix,
    T = Id + hM + (hM)^2/2 + (hM)^3/6 + (hM)^4/24 (Horner form)."""
    eye = np.broadcast_to(np.eye(m.shape[-1], dtype=m.dtype), m.shape)
    t = eye + (h / 4.0) * m
    t = eye + (h / 3.0) * (m @ t)
    t = eye + (h / 2.0) * (m @ t)
    return eye + h * (m @ t)


def _matrix_power(t: np.ndarray, e: int) -> np.ndarray:
    """Batched t**e by square-and-multiply."""
    result = None
    base = t
    while e:
        if e & 1:
            result = base.copy() if result is None else base @ result
        e >>= 1
        if e:
            base = base @ base
    return result


# ----------------------------------------------------------------------
# varying-coefficient engine


def _stage_basis(sys, t: np.ndarray, steps: int) -> np.ndarray:
    """Scalar basis values of the field at every stage point, pre-scaled by
    t^2, shaped (2*steps + 1, B, K); stage j sits at x = j / (2*steps)."""
    xs = np.arange(2 * steps + 1) / (2.0 * steps)
    args = t[:, None] * xs[None, :]
    basis = sys.field._basis(args, derivative=False)  # (K, B, 2S+1)
    basis = np.ascontiguousarray(basis.transpose(2, 1, 0))
    basis *= (t * t)[None, :, None]
    return basis


def _rk4_varying(sys, t: np.ndarray, s: np.ndarray | None, w0: np.ndarray, steps: int, path_rows: int):
    """Core batched RK4 for poly/trig fields.

    t, s: real and imaginary parts of the batch (s None means real arithmetic);
    w0: shared initial condition (2n, m);
    path_rows: store this many leading state rows at every node (0 = none).
    """
    n = sys.n
    b = len(t)
    m_cols = w0.shape[1]
    h = 1.0 / steps
    cdtype = float if s is None else complex
    eps_c = _eps_col(sys)

    basis = _stage_basis(sys, t, steps)
    stack = sys.field.stack().reshape(-1, n * n).astype(cdtype)

    shift = None
    if s is not None:
        shift = sys.delta + 1j * s
    elif sys.delta != 0.0:
        shift = np.full(b, sys.delta)

    w = np.broadcast_to(w0, (b, 2 * n, m_cols)).astype(cdtype).copy()
    path = None
    if path_rows:
        path = np.empty((steps + 1, b, path_rows, m_cols), dtype=cdtype)
        path[0] = w[:, :path_rows, :]

    s_buf = [np.empty((b, n * n), dtype=cdtype) for _ in range(3)]
    k_bufs = [np.empty_like(w) for _ in range(4)]
    wt = np.empty_like(w)

    def assemble(stage_idx: int, buf: np.ndarray) -> np.ndarray:
        np.matmul(basis[stage_idx], stack, out=buf)
        if shift is not None:
            buf[:, :: n + 1] += shift[:, None]
        return buf.reshape(b, n, n)

    def stage(s_mat: np.ndarray, w_in: np.ndarray, k_out: np.ndarray) -> None:
        np.multiply(eps_c, w_in[:, n:, :], out=k_out[:, :n, :])
        np.matmul(s_mat, w_in[:, :n, :], out=k_out[:, n:, :])
        k_out[:, n:, :] *= -1.0

    s0 = assemble(0, s_buf[0])
    k1, k2, k3, k4 = k_bufs
    for i in range(steps):
        sm = assemble(2 * i + 1, s_buf[1])
        s1 = assemble(2 * i + 2, s_buf[2])
        stage(s0, w, k1)
        np.multiply(k1, 0.5 * h, out=wt)
        wt += w
        stage(sm, wt, k2)
        np.multiply(k2, 0.5 * h, out=wt)
        wt += w
        stage(sm, wt, k3)
        np.multiply(k3, h, out=wt)
        wt += w
        stage(s1, wt, k4)
        k1 += k4
        k2 += k3
        k2 *= 2.0
        k1 += k2
        k1 *= h / 6.0
        w += k1
        s_buf[0], s_buf[2] = s_buf[2], s_buf[0]
        s0 = s_buf[0].reshape(b, n, n)
        if path is not None:
            path[i + 1] = w[:, :path_rows, :]
    return w, path


def propagate_batch(sys, zs, w0: np.ndarray, steps: int) -> np.ndarray:
    """End values at x = 1 of the suspended system for a batch of z,
    starting from the common initial condition w0 (2n x m)."""
    zs = np.atleast_1d(np.asarray(zs, dtype=complex))
    if steps < 16:
        raise ValidationError("steps must be at least 16")
    if sys.field.kind == "constant":
        t_step = _transfer_matrix(_const_system_matrix(sys, zs), 1.0 / steps)
        out = _matrix_power(t_step, steps) @ w0
        _check_finite(out, "constant-coefficient family")
        return out

    complex_mode = bool(np.any(np.imag(zs) != 0.0))
    pieces = []
    for lo in range(0, len(zs), _CHUNK):
        chunk = zs[lo : lo + _CHUNK]
        t = np.real(chunk)
        s = np.imag(chunk) if complex_mode else None
        w, _ = _rk4_varying(sys, t, s, w0, steps, path_rows=0)
        pieces.append(w)
    out = pieces[0] if len(pieces) == 1 else np.concatenate(pieces)
    _check_finite(out, "suspended family")
    return out


def psi_end_batch(sys, zs, steps: int) -> np.ndarray:
    """Fundamental-solution end matrices Psi_z(1), batched over z."""
    return propagate_batch(sys, zs, np.eye(2 * sys.n), steps)


def rho_batch(sys, zs, steps: int | None = None) -> np.ndarray:
    """det b_z batched over z (only the right block columns are propagated)."""
    steps = sys.tolerances.ode_steps if steps is None else steps
    n = sys.n
    w0 = np.zeros((2 * n, n))
    w0[n:, :] = np.eye(n)
    ends = propagate_batch(sys, zs, w0, steps)
    return np.linalg.det(ends[:, :n, :])


# ----------------------------------------------------------------------
# single-parameter propagation with optional path storage


def _propagate_single(sys, z: complex, w0: np.ndarray, steps: int, path_rows: int):
    z = complex(z)
    real_mode = z.imag == 0.0
    if sys.field.kind == "constant":
        m = _const_system_matrix(sys, np.array([z]))[0]
        if real_mode:
            m = np.real(m)
        t_step = _transfer_matrix(m, 1.0 / steps)
        w = w0.astype(m.dtype)
        path = None
        if path_rows:
            path = np.empty((steps + 1, path_rows, w.shape[1]), dtype=w.dtype)
            path[0] = w[:path_rows]
        for i in range(steps):
            w = t_step @ w
            if path is not None:
                path[i + 1] = w[:path_rows]
        _check_finite(w, "constant-coefficient family")
        return w, path

    t = np.array([z.real])
    s = None if real_mode else np.array([z.imag])
    w, path = _rk4_varying(sys, t, s, w0, steps, path_rows)
    _check_finite(w, "suspended family")
    return w[0], (None if path is None else path[:, 0])


def psi_end(sys, z: complex, steps: int) -> np.ndarray:
    """Psi_z(1) for a single spectral parameter."""
    end, _ = _propagate_single(sys, z, np.eye(2 * sys.n), steps, path_rows=0)
    return end


def psi_path(sys, z: complex, steps: int) -> np.ndarray:
    """Psi_z at every integration node, shape (steps+1, 2n, 2n)."""
    _, path = _propagate_single(sys, z, np.eye(2 * sys.n), steps, path_rows=2 * sys.n)
    return path


def propagate_columns(sys, z: complex, w0: np.ndarray, steps: int):
    """End state plus the u-component node path for the given initial
    columns; used for kernel solutions entering crossing forms."""
    end, u_path = _propagate_single(sys, z, w0, steps, path_rows=sys.n)
    return end, u_path


# ----------------------------------------------------------------------
# real-axis evaluators


class BaseFlow:
    """Stored flow Phi of the base system Ju'' + S(x)u = 0 (shift-free),
    rescaled on demand to the suspended family on the real axis."""

    def __init__(self, sys, steps: int):
        if sys.delta != 0.0:
            raise ValidationError("BaseFlow requires a shift-free system")
        self.sys = sys
        self.steps = steps
        self.n = sys.n
        # the base system is the t = 1 member of the suspended family
        _, path = _propagate_single(sys, 1.0, np.eye(2 * sys.n), steps, path_rows=2 * sys.n)
        self.nodes = path
        _check_finite(self.nodes[-1], "base system")

    def eval(self, xs) -> np.ndarray:
        """Phi at arbitrary points of [0, 1]: stored node plus one partial
        RK4 step of size x - node (local order preserved)."""
        xs = np.atleast_1d(np.asarray(xs, dtype=float))
        if xs.size == 0:
            return np.empty((0, 2 * self.n, 2 * self.n))
        if np.any((xs < 0.0) | (xs > 1.0 + 1e-12)):
            raise ValidationError("base-flow evaluation points must lie in [0, 1]")
        idx = np.minimum((xs * self.steps).astype(int), self.steps)
        x0 = idx / self.steps
        h = np.maximum(xs - x0, 0.0)
        w = self.nodes[idx].copy()
        live = np.nonzero(h > 0.0)[0]
        if live.size:
            n = self.n
            hb = h[live][:, None, None]
            wl = w[live]
            eps_c = _eps_col(self.sys)
            f = self.sys.field

            def deriv(s_mat, w_in):
                return np.concatenate(
                    [eps_c * w_in[:, n:, :], -(s_mat @ w_in[:, :n, :])], axis=1
                )

            s0 = f.evaluate(x0[live])
            sm = f.evaluate(x0[live] + 0.5 * h[live])
            s1 = f.evaluate(x0[live] + h[live])
            k1 = deriv(s0, wl)
            k2 = deriv(sm, wl + 0.5 * hb * k1)
            k3 = deriv(sm, wl + 0.5 * hb * k2)
            k4 = deriv(s1, wl + hb * k3)
            w[live] = wl + (hb / 6.0) * (k1 + k4 + 2.0 * (k2 + k3))
        return w

    def bd_at(self, ts) -> tuple[np.ndarray, np.ndarray]:
        """Blocks (b_t, d_t) of Psi_t(1) via the rescaling identity."""
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        if np.any(ts <= 0.0):
            raise ValidationError("rescaled evaluation requires t > 0")
        phi = self.eval(ts)
        n = self.n
        b = phi[:, :n, n:] / ts[:, None, None]
        d = phi[:, n:, n:]
        return b, d

    def kernel_solutions(self, t: float, w_vectors: np.ndarray, xgrid: np.ndarray):
        """Solutions u_k of the suspended system at parameter t with
        (u, v)(0) = (0, w_k): values on xgrid plus end derivatives u_k'(1).

        Returns (u_vals with shape (len(xgrid), n, k), du_end (n, k))."""
        w = np.asarray(w_vectors, dtype=float)
        n = self.n
        phi = self.eval(t * np.asarray(xgrid, dtype=float))
        u_vals = phi[:, :n, n:] @ (w / t)
        phi_end = self.eval(np.array([float(t)]))[0]
        v_end = phi_end[n:, n:] @ w
        du_end = self.sys.signature.eps[:, None] * v_end
        return u_vals, du_end


class DirectRealEval:
    """Real-axis evaluation by direct batched propagation; used when the
    family carries a nonzero shift and the rescaling identity is unavailable."""

    def __init__(self, sys, steps: int):
        self.sys = sys
        self.steps = steps
        self.n = sys.n

    def bd_at(self, ts) -> tuple[np.ndarray, np.ndarray]:
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        n = self.n
        w0 = np.zeros((2 * n, n))
        w0[n:, :] = np.eye(n)
        ends = propagate_batch(self.sys, ts, w0, self.steps)
        return np.real(ends[:, :n, :]), np.real(ends[:, n:, :])

    def kernel_solutions(self, t: float, w_vectors: np.ndarray, xgrid: np.ndarray):
        w = np.asarray(w_vectors, dtype=float)
        n = self.n
        w0 = np.zeros((2 * n, w.shape[1]))
        w0[n:, :] = w
        end, u_path = propagate_columns(self.sys, float(t), w0, self.steps)
        if len(xgrid) != self.steps + 1:
            raise ValidationError("direct evaluator stores u on the integrator grid only")
        du_end = self.sys.signature.eps[:, None] * np.real(end[n:, :])
        return np.real(u_path), du_end


def base_flow(sys, steps: int | None = None) -> BaseFlow:
    steps = sys.tolerances.ode_steps if steps is None else steps
    key = ("base_flow", steps)
    if key not in sys._cache:
        sys._cache[key] = BaseFlow(sys, steps)
    return sys._cache[key]


def real_axis_evaluator(sys, steps: int | None = None):
    steps = sys.tolerances.ode_steps if steps is None else steps
    if sys.delta == 0.0:
        return base_flow(sys, steps)
    return DirectRealEval(sys, steps)
