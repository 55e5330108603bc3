"""Finite-difference solvers for KdV on [0, L] with a Neumann control at x = L.

    y_t + y_x + y_xxx (+ y y_x) = f,   y(t,0) = y(t,L) = 0,   y_x(t,L) = u(t)

Unknowns are the interior values y_1 .. y_{N-1}.  y_x is a central difference;
y_xxx uses the central five-point stencil for i = 2 .. N-1, where the ghost
value y_{N+1} = y_{N-1} + 2 h u eliminates the Neumann datum, and a one-sided
first-order stencil at i = 1.  Time stepping is Crank-Nicolson with a banded
LU factorisation computed once per (grid, dt).

Also here: an exact per-mode integrator for the periodic KdV-Burgers equation
and closed-form / empirical frequency responses.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import lapack

from .critical_lengths import transfer_profile
from .spectral import find_real_zeros_H


@dataclass(frozen=True)
class Grid:
    L: float
    N: int
    dt: float
    T: float

    def __post_init__(self):
        if self.N < 32:
            raise ValueError("Grid: N must be at least 32")
        if not (self.dt > 0 and self.L > 0 and self.T > 0):
            raise ValueError("Grid: L, dt and T must be positive")

    @property
    def h(self):
        return self.L / self.N

    @property
    def n_steps(self):
        return int(round(self.T / self.dt))

    @property
    def x(self):
        """Full node set x_0 .. x_N."""
        return np.linspace(0.0, self.L, self.N + 1)

    @property
    def x_interior(self):
        return self.x[1:-1]

    @property
    def t(self):
        return self.dt * np.arange(self.n_steps + 1)

    def with_T(self, T):
        return Grid(self.L, self.N, self.dt, T)


@dataclass(frozen=True)
class Trajectory:
    grid: Grid
    t: np.ndarray
    states: np.ndarray  # (n_times, N - 1) interior values
    u: np.ndarray = field(repr=False)

    def full_states(self):
        z = np.zeros((self.states.shape[0], 1))
        return np.hstack([z, self.states, z])

    @cached_property
    def trace_left(self):
        """y_x(t, 0) by a one-sided second-order difference."""
        y = self.states
        return (4.0 * y[:, 0] - y[:, 1]) / (2.0 * self.grid.h)

    @cached_property
    def trace_right(self):
        y = self.states
        return (-4.0 * y[:, -1] + y[:, -2]) / (2.0 * self.grid.h)

    def energy(self):
        return 0.5 * self.grid.h * np.sum(self.states**2, axis=1)

    def norms(self):
        return np.sqrt(self.grid.h * np.sum(self.states**2, axis=1))


# ---------------------------------------------------------------------------
# spatial operator


def dispersion_bands(N, h):
    """Banded storage (LAPACK ab layout, kl = ku = 2) of A with y_t = -A y - b u."""
    n = N - 1
    A = np.zeros((n, n))
    c1 = 1.0 / (2.0 * h)
    c3 = 1.0 / (2.0 * h**3)
    idx = np.arange(n)
    # y_x
    A[idx[:-1], idx[:-1] + 1] += c1
    A[idx[1:], idx[1:] - 1] -= c1
    # y_xxx, five-point for rows i = 2 .. N-1 (python rows 1 .. n-1)
    for r in range(1, n):
        for off, w in ((-2, -1.0), (-1, 2.0), (1, -2.0), (2, 1.0)):
            c = r + off
            if 0 <= c < n:
                A[r, c] += w * c3
    # ghost y_{N+1} = y_{N-1} + 2 h u  adds y_{N-1} / (2 h^3) to the last row
    A[n - 1, n - 1] += c3
    # first-order forward closure at i = 1: (y_3 - 3 y_2 + 3 y_1 - y_0) / h^3
    A[0, 0] += 3.0 / h**3
    A[0, 1] += -3.0 / h**3
    A[0, 2] += 1.0 / h**3
    return A


def control_vector(N, h):
    """b with y_t = -A y - b u: the ghost term contributes 2 h u / (2 h^3)."""
    b = np.zeros(N - 1)
    b[-1] = 1.0 / h**2
    return b


def _to_band(M, kl=2, ku=2):
    n = M.shape[0]
    ab = np.zeros((2 * kl + ku + 1, n))
    for j in range(n):
        for i in range(max(0, j - ku), min(n, j + kl + 1)):
            ab[kl + ku + i - j, j] = M[i, j]
    return ab


def _band_matvec(M_band, x, kl=2, ku=2):
    """y = M x for M in the column-aligned diagonal form of ``_diag_form``."""
    n = x.shape[0]
    y = np.zeros_like(x)
    for d in range(-kl, ku + 1):
        diag = M_band[ku - d]
        if x.ndim == 2:
            diag = diag[:, None]
        if d >= 0:
            y[: n - d] += diag[d:] * x[d:]
        else:
            y[-d:] += diag[: n + d] * x[: n + d]
    return y


def _diag_form(M, kl=2, ku=2):
    """(ku+kl+1, n) array; row ku-d holds diagonal d, aligned on the column index."""
    n = M.shape[0]
    out = np.zeros((kl + ku + 1, n))
    for d in range(-kl, ku + 1):
        if d >= 0:
            out[ku - d, d:] = np.diagonal(M, d)
        else:
            out[ku - d, : n + d] = np.diagonal(M, d)
    return out


class CrankNicolson:
    """Factorised (I + dt/2 A) and the explicit half (I - dt/2 A) for one grid."""

    def __init__(self, grid: Grid):
        self.grid = grid
        n = grid.N - 1
        self.n = n
        A = dispersion_bands(grid.N, grid.h)
        self.A = A
        eye = np.eye(n)
        self.M_plus = eye + 0.5 * grid.dt * A
        self.M_minus = eye - 0.5 * grid.dt * A
        self._minus_diag = _diag_form(self.M_minus)
        self._minus_t_diag = _diag_form(self.M_minus.T)
        lu, piv, info = lapack.dgbtrf(_to_band(self.M_plus), 2, 2)
        if info != 0:
            raise np.linalg.LinAlgError(f"Crank-Nicolson factorisation failed (info={info})")
        self._lu, self._piv = lu, piv
        self.b = control_vector(grid.N, grid.h)
        self.b_dt = grid.dt * self.b

    def solve(self, rhs, trans=0):
        x, info = lapack.dgbtrs(self._lu, 2, 2, rhs, self._piv, trans=trans)
        if info != 0:
            raise np.linalg.LinAlgError(f"banded solve failed (info={info})")
        return x

    def explicit(self, y):
        return _band_matvec(self._minus_diag, y)

    def explicit_t(self, y):
        return _band_matvec(self._minus_t_diag, y)

    def step(self, y, u_mid, source_mid=None):
        rhs = self.explicit(y) - self.b_dt * u_mid
        if source_mid is not None:
            rhs = rhs + self.grid.dt * source_mid
        return self.solve(rhs)

    def amplification_radius(self):
        R = np.linalg.solve(self.M_plus, self.M_minus)
        return float(np.max(np.abs(np.linalg.eigvals(R))))


_CN_CACHE: dict = {}


def stepper(grid: Grid) -> CrankNicolson:
    key = (grid.L, grid.N, grid.dt)
    cn = _CN_CACHE.get(key)
    if cn is None:
        if len(_CN_CACHE) > 32:
            _CN_CACHE.clear()
        cn = CrankNicolson(grid)
        _CN_CACHE[key] = cn
    return cn


# ---------------------------------------------------------------------------
# sources


@dataclass(frozen=True)
class SourceTerm:
    """f = f1 + d/dx f2 sampled on time nodes x full spatial nodes."""

    f1: np.ndarray
    f2: np.ndarray

    def check(self, h, tol=1e-8):
        mean = np.abs(np.trapezoid(self.f1, dx=h, axis=1))
        scale = np.abs(self.f1).max() + 1e-300
        if np.any(mean > tol * scale * h * self.f1.shape[1]):
            raise ValueError("SourceTerm: f1 must have zero mean in x on every time slice")
        if np.any(np.abs(self.f2[:, 0]) > tol) or np.any(np.abs(self.f2[:, -1]) > tol):
            raise ValueError("SourceTerm: f2 must vanish at both ends")

    def interior(self, h):
        """Total source at interior nodes (central difference of f2)."""
        flux = (self.f2[:, 2:] - self.f2[:, :-2]) / (2.0 * h)
        return self.f1[:, 1:-1] + flux


def _control_samples(u, grid):
    n = grid.n_steps + 1
    if u is None:
        return np.zeros(n)
    u = np.asarray(getattr(u, "samples", u), dtype=float)
    if u.shape[0] < n:
        u = np.concatenate([u, np.zeros(n - u.shape[0])])
    return u[:n]


def solve_linear(grid: Grid, y0=None, u=None, f: SourceTerm | None = None, store_every=1) -> Trajectory:
    cn = stepper(grid)
    us = _control_samples(u, grid)
    y = np.zeros(grid.N - 1) if y0 is None else np.array(y0, dtype=float)
    if y0 is not None and y.shape[0] == grid.N + 1:
        y = y[1:-1]
    if y0 is not None and np.any(y):
        rd = (-4.0 * y[-1] + y[-2]) / (2.0 * grid.h)
        if abs(rd - us[0]) > 10.0 * grid.h * (1.0 + np.abs(y).max() / grid.h**0):
            warnings.warn("solve_linear: u(0) does not match the right derivative of y0", stacklevel=2)
    src = None
    if f is not None:
        f.check(grid.h)
        src = f.interior(grid.h)
    states = [y.copy()]
    times = [0.0]
    for k in range(grid.n_steps):
        u_mid = 0.5 * (us[k] + us[k + 1])
        s_mid = None if src is None else 0.5 * (src[k] + src[k + 1])
        y = cn.step(y, u_mid, s_mid)
        if (k + 1) % store_every == 0 or k + 1 == grid.n_steps:
            states.append(y.copy())
            times.append((k + 1) * grid.dt)
    return Trajectory(grid=grid, t=np.array(times), states=np.array(states), u=us)


def final_state(grid: Grid, u, y0=None):
    """y(T) only, without storing the path."""
    cn = stepper(grid)
    us = _control_samples(u, grid)
    y = np.zeros(grid.N - 1) if y0 is None else np.array(y0, dtype=float)
    for k in range(grid.n_steps):
        y = cn.step(y, 0.5 * (us[k] + us[k + 1]))
    return y


def adjoint_control(grid: Grid, psi):
    """Transpose of u -> y(T) applied to psi (sample-wise, unweighted).

    psi may be a vector or a matrix of column vectors.
    """
    cn = stepper(grid)
    K = grid.n_steps
    w = np.array(psi, dtype=float)
    coeff = np.zeros((K,) + w.shape[1:])
    for k in range(K - 1, -1, -1):
        # y^{k+1} = M+^{-1}(M- y^k - b_dt u_mid)
        s = cn.solve(w, trans=1)
        coeff[k] = -(cn.b_dt @ s)
        w = cn.explicit_t(s)
    g = np.zeros((K + 1,) + w.shape[1:])
    g[:-1] += 0.5 * coeff
    g[1:] += 0.5 * coeff
    return g


class NonlinearStepError(RuntimeError):
    pass


def solve_nonlinear(grid: Grid, y0=None, u=None, picard_min=2, picard_max=8, tol=1e-10, store_every=1) -> Trajectory:
    """Crank-Nicolson with the conservative term (y^2/2)_x, Picard-corrected."""
    us = _control_samples(u, grid)
    y = np.zeros(grid.N - 1) if y0 is None else np.array(y0, dtype=float)
    if y.shape[0] == grid.N + 1:
        y = y[1:-1]
    h = grid.h

    def flux(v):
        q = 0.5 * np.concatenate([[0.0], v, [0.0]]) ** 2
        return (q[2:] - q[:-2]) / (2.0 * h)

    def advance(y, ua, ub, g: Grid, depth):
        cn = stepper(g)
        u_mid = 0.5 * (ua + ub)
        base = cn.explicit(y) - cn.b_dt * u_mid - 0.5 * g.dt * flux(y)
        nxt = cn.solve(base - 0.5 * g.dt * flux(y))
        for it in range(picard_max):
            new = cn.solve(base - 0.5 * g.dt * flux(nxt))
            res = np.max(np.abs(new - nxt))
            nxt = new
            if it + 1 >= picard_min and res <= tol * (1.0 + np.max(np.abs(nxt))):
                return nxt
        if depth >= 5:
            raise NonlinearStepError(f"Picard iteration stalled after 5 step halvings (residual {res:.2e})")
        half = Grid(g.L, g.N, 0.5 * g.dt, g.T)
        um = 0.5 * (ua + ub)
        mid = advance(y, ua, um, half, depth + 1)
        return advance(mid, um, ub, half, depth + 1)

    states, times = [y.copy()], [0.0]
    for k in range(grid.n_steps):
        y = advance(y, us[k], us[k + 1], grid, 0)
        if (k + 1) % store_every == 0 or k + 1 == grid.n_steps:
            states.append(y.copy())
            times.append((k + 1) * grid.dt)
    return Trajectory(grid=grid, t=np.array(times), states=np.array(states), u=us)


# ---------------------------------------------------------------------------
# periodic KdV-Burgers:  y_t + 4 y_x + y_xxx - 3 y_xx = f  on [0, period)


def kdvb_symbol(n, period=2.0 * np.pi):
    k = 2.0 * np.pi * np.asarray(n, dtype=float) / period
    return 1j * (4.0 * k - k**3) + 3.0 * k**2


def _phi1(z):
    small = np.abs(z) < 1e-4
    zs = np.where(small, 1.0, z)
    return np.where(small, 1.0 + z / 2.0 + z * z / 6.0, np.expm1(zs) / zs)


def _phi2(z):
    small = np.abs(z) < 1e-3
    zs = np.where(small, 1.0, z)
    return np.where(small, 0.5 + z / 6.0 + z * z / 24.0, (np.expm1(zs) - zs) / (zs * zs))


@dataclass(frozen=True)
class PeriodicTrajectory:
    t: np.ndarray
    modes: np.ndarray  # (n_times, n_modes) complex Fourier coefficients, numpy fft order
    period: float

    def values(self, n_x=None):
        m = self.modes.shape[1]
        return np.real(np.fft.ifft(self.modes, axis=1) * m)

    def derivative_x(self):
        m = self.modes.shape[1]
        n = np.fft.fftfreq(m, d=1.0 / m)
        k = 2.0 * np.pi * n / self.period
        return np.real(np.fft.ifft(1j * k * self.modes, axis=1) * m)


def kdvb_periodic_solve(f_modes, T, dt, period=2.0 * np.pi, y0_modes=None):
    """Exact exponential integrator per Fourier mode.

    ``f_modes`` has shape (n_steps + 1, n_modes): Fourier coefficients (fft
    order, normalised so that f(x) = sum_n c_n e^{i k_n x}) on the time nodes.
    The forcing is integrated exactly as a piecewise-linear function of time.
    """
    f_modes = np.asarray(f_modes, dtype=complex)
    if np.any(np.abs(f_modes[:, 0]) > 1e-14 * (1.0 + np.abs(f_modes).max())):
        raise ValueError("kdvb_periodic_solve: mode-0 forcing must vanish")
    n_modes = f_modes.shape[1]
    n = np.fft.fftfreq(n_modes, d=1.0 / n_modes)
    a = kdvb_symbol(n, period)
    steps = int(round(T / dt))
    if f_modes.shape[0] != steps + 1:
        raise ValueError("kdvb_periodic_solve: forcing must be sampled on all time nodes")
    decay = np.exp(-a * dt)
    w0 = dt * (_phi1(-a * dt) - _phi2(-a * dt))  # weight of f(t_k)
    w1 = dt * _phi2(-a * dt)  # weight of f(t_{k+1})
    y = np.zeros(n_modes, dtype=complex) if y0_modes is None else np.array(y0_modes, dtype=complex)
    out = np.empty((steps + 1, n_modes), dtype=complex)
    out[0] = y
    for k in range(steps):
        y = decay * y + w0 * f_modes[k] + w1 * f_modes[k + 1]
        out[k + 1] = y
    return PeriodicTrajectory(t=dt * np.arange(steps + 1), modes=out, period=period)


def smoothing_constant(delta, n_modes, period=2.0 * np.pi):
    """C with |y_t| + |y_x| <= C ||f||_{L1} at distance delta after the forcing stops."""
    n = np.fft.fftfreq(n_modes, d=1.0 / n_modes)
    n = n[n != 0]
    k = 2.0 * np.pi * n / period
    a = kdvb_symbol(n, period)
    return float(np.sum((np.abs(k) + np.abs(a)) * np.exp(-3.0 * k * k * delta)) / period)


def bridge_residual(traj: Trajectory):
    """Residual of v_t + 4 v_x + v_xxx - 3 v_xx with v = e^{-2t+x} y, interior points.

    Uses centred differences on the stored trajectory; returns the max
    residual over nodes 3 .. N-3 and over interior time levels, and the
    scale max |v_t|.
    """
    g = traj.grid
    Y = traj.full_states()
    t = traj.t
    x = g.x
    V = np.exp(-2.0 * t[:, None] + x[None, :]) * Y
    dt = t[1] - t[0]
    h = g.h
    vt = (V[2:, :] - V[:-2, :]) / (2.0 * dt)
    Vm = V[1:-1]
    vx = (Vm[:, 4:-2] - Vm[:, 2:-4]) / (2.0 * h)
    vxx = (Vm[:, 4:-2] - 2.0 * Vm[:, 3:-3] + Vm[:, 2:-4]) / h**2
    vxxx = (Vm[:, 5:-1] - 2.0 * Vm[:, 4:-2] + 2.0 * Vm[:, 2:-4] - Vm[:, 1:-5]) / (2.0 * h**3)
    res = vt[:, 3:-3] + 4.0 * vx + vxxx - 3.0 * vxx
    return float(np.max(np.abs(res))), float(np.max(np.abs(vt)))


def psi_bracket_residual(traj: Trajectory, field):
    """Defect of d/dt int y Psi = 1/2 int y^2 Psi_x along a stored trajectory.

    ``field`` provides ``psi(t, x)`` and ``psi_x(t, x)`` of a solution of the
    adjoint-free linear equation vanishing with its x-derivative at both ends.
    Time derivative by centred differences of the stored levels.  Returns
    (max |defect|, max |1/2 int y^2 Psi_x|).
    """
    g = traj.grid
    x = g.x
    Y = traj.full_states()
    t = np.asarray(traj.t)
    w = np.full(x.size, g.h)
    w[0] = w[-1] = 0.5 * g.h
    moment = np.array([w @ (y * field.psi(ti, x)) for ti, y in zip(t, Y)])
    source = np.array([0.5 * w @ (y * y * field.psi_x(ti, x)) for ti, y in zip(t, Y)])
    rate = (moment[2:] - moment[:-2]) / (t[2:] - t[:-2])
    defect = rate - source[1:-1]
    return float(np.max(np.abs(defect))), float(np.max(np.abs(source)))


# ---------------------------------------------------------------------------
# frequency response


class ResonanceError(ValueError):
    pass


def _resonance_guard(z, L, band=1e-3):
    zeros = find_real_zeros_H(L, (z - 5e-3, z + 5e-3), step=1e-3)
    for e in zeros:
        if abs(e.z - z) < band:
            raise ResonanceError(
                f"frequency {z} lies within {band} of the eigen-frequency {e.z:.9f}; "
                "the transfer function has a pole there, pick another z"
            )


def frequency_response(z, L, x, guard=True):
    """M(z, x): complex amplitude of y(., x) per unit e^{i z t} at the boundary."""
    if guard:
        _resonance_guard(float(z), L)
    return complex(transfer_profile(float(z), L, float(x)))


def boundary_response(z, L, guard=True):
    """d/dx of the response at x = 0, i.e. P(z)/detQ(z)."""
    from .spectral import spectral_sample

    if guard:
        _resonance_guard(float(z), L)
    s = spectral_sample(float(z), L)
    return s.P / s.detQ


def empirical_frequency_response(grid: Grid, z, x, transient_periods=20, periods=40):
    """Drive u = sin(z t), discard a transient, demodulate over whole periods.

    Returns (response at x, response of y_x at x = 0).
    """
    period = 2.0 * np.pi / z
    steps_per = int(round(period / grid.dt))
    dt = period / steps_per
    total = (transient_periods + periods) * steps_per
    g = Grid(grid.L, grid.N, dt, total * dt)
    t = dt * np.arange(total + 1)
    traj = solve_linear(g, u=np.sin(z * t))
    i_x = int(round(x / g.h))
    Y = traj.full_states()[:, i_x]
    start = transient_periods * steps_per
    w = np.exp(-1j * z * t[start:])
    span = t[-1] - t[start]

    def demod(sig):
        return 1j * 2.0 / span * np.trapezoid(sig[start:] * w, dx=dt)

    return complex(demod(Y)), complex(demod(traj.trace_left))


# ---------------------------------------------------------------------------
# export


TRAJ_MAGIC = b"KDVTRAJ1"


def write_trajectory_csv(path, traj: Trajectory):
    Y = traj.full_states()
    with open(path, "w") as fh:
        fh.write("t," + ",".join(repr(float(v)) for v in traj.grid.x) + "\n")
        for ti, row in zip(traj.t, Y):
            fh.write(repr(float(ti)) + "," + ",".join(repr(float(v)) for v in row) + "\n")


def write_trajectory_binary(path, traj: Trajectory):
    Y = traj.full_states()
    with open(path, "wb") as fh:
        fh.write(TRAJ_MAGIC)
        fh.write(struct.pack("<qq", Y.shape[0], Y.shape[1]))
        fh.write(np.asarray(traj.t, dtype="<f8").tobytes())
        fh.write(np.asarray(traj.grid.x, dtype="<f8").tobytes())
        fh.write(np.asarray(Y, dtype="<f8").tobytes())


def read_trajectory_binary(path):
    with open(path, "rb") as fh:
        if fh.read(8) != TRAJ_MAGIC:
            raise ValueError("not a KDVTRAJ1 file")
        nt, nx = struct.unpack("<qq", fh.read(16))
        t = np.frombuffer(fh.read(8 * nt), dtype="<f8")
        x = np.frombuffer(fh.read(8 * nx), dtype="<f8")
        Y = np.frombuffer(fh.read(8 * nt * nx), dtype="<f8").reshape(nt, nx)
    return t, x, Y
