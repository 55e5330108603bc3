"""Boundary-control utilities for the linear KdV system.

* ``ControlSignal``: uniformly sampled u on [0, T], zero outside.
* ``sobolev_norm``: H^s(R) norm of the zero extension via a padded DFT.
* ``bump_control``: C-infinity bumps exp(-1/(1-r^2)).
* ``Gramian`` / ``hum_control``: minimum-norm controls from the discrete
  reachability Gramian (forward map composed with its exact transpose).
* ``null_control``: play a free control, then close the trajectory to zero.
* ``null_control_frequency``: the frequency-domain construction u^ = w^ * H.
* ``n_functional``: the norm N(u) built from w^ = u^ H'(. + i gamma) / H.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .complex_cubic import cubic_roots
from .critical_lengths import CriticalPair, critical_length, m_basis, make_pair
from .kdv_solver import Grid, adjoint_control, final_state, solve_linear, stepper
from .spectral import scaled_detq, xi_of


@dataclass(frozen=True)
class ControlSignal:
    samples: np.ndarray
    dt: float

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if not np.all(np.isfinite(s)):
            raise ValueError("ControlSignal: samples must be finite")
        object.__setattr__(self, "samples", s)

    @property
    def T(self):
        return self.dt * (self.samples.size - 1)

    @property
    def t(self):
        return self.dt * np.arange(self.samples.size)

    @property
    def u0(self):
        return float(self.samples[0])

    def __mul__(self, c):
        return ControlSignal(self.samples * float(c), self.dt)

    __rmul__ = __mul__

    def __add__(self, other):
        n = max(self.samples.size, other.samples.size)
        a = np.zeros(n)
        a[: self.samples.size] += self.samples
        a[: other.samples.size] += other.samples
        return ControlSignal(a, self.dt)

    def padded(self, n):
        """Same signal continued by zeros up to n samples."""
        out = np.zeros(max(n, self.samples.size))
        out[: self.samples.size] = self.samples
        return ControlSignal(out, self.dt)

    def shifted(self, delay_steps, n=None):
        n = self.samples.size + delay_steps if n is None else n
        out = np.zeros(n)
        m = min(self.samples.size, n - delay_steps)
        out[delay_steps : delay_steps + m] = self.samples[:m]
        return ControlSignal(out, self.dt)

    def l2(self):
        return float(np.sqrt(self.dt * np.sum(self.samples**2)))


def zero_control(T, dt):
    return ControlSignal(np.zeros(int(round(T / dt)) + 1), dt)


def fourier_transform(u: ControlSignal, z):
    """Transform of the piecewise-linear interpolant, (2 pi)^(-1/2) int u e^{-i z t} dt.

    Exact for signals that vanish at both ends (hat-function expansion).
    """
    z = np.asarray(z, dtype=float)
    out = np.zeros(z.shape, dtype=complex)
    t = u.t
    nz = np.flatnonzero(u.samples)
    if nz.size == 0:
        return out
    ts, us = t[nz], u.samples[nz]
    flat = z.ravel()
    res = np.empty(flat.shape, dtype=complex)
    chunk = max(1, int(4e6 // max(ts.size, 1)))
    for i in range(0, flat.size, chunk):
        zz = flat[i : i + chunk]
        res[i : i + chunk] = np.exp(-1j * np.outer(zz, ts)) @ us
    sinc2 = np.sinc(flat * u.dt / (2.0 * np.pi)) ** 2
    out = (u.dt / np.sqrt(2.0 * np.pi)) * res * sinc2
    return out.reshape(z.shape)


class SobolevConvergenceError(RuntimeError):
    pass


def _padded_spectrum(samples, dt, n_pad):
    F = np.fft.fft(samples, n=n_pad)
    xi = 2.0 * np.pi * np.fft.fftfreq(n_pad, d=dt)
    sinc2 = np.sinc(xi * dt / (2.0 * np.pi)) ** 2
    uhat = dt / np.sqrt(2.0 * np.pi) * F * sinc2
    dxi = 2.0 * np.pi / (n_pad * dt)
    return xi, uhat, dxi


def _sobolev_once(samples, dt, s, pad_factor, max_dxi):
    # the weight (1 + xi^2)^s varies on a unit scale, so dxi is capped as well
    n_pad = max(int(pad_factor) * samples.size, int(np.ceil(2.0 * np.pi / (max_dxi * dt))))
    xi, uhat, dxi = _padded_spectrum(samples, dt, n_pad)
    return float(np.sqrt(np.sum(np.abs(uhat) ** 2 * (1.0 + xi**2) ** s) * dxi))


def sobolev_norm(u: ControlSignal, s, pad_factor=4, rtol=1e-2, max_dxi=0.05):
    """||u||_{H^s(R)} of the zero extension, s in [-2, 1].

    Evaluated twice: as given, and with doubled padding on a signal refined
    twice by linear interpolation.  The two must agree to ``rtol``.
    """
    if not -2.0 <= s <= 1.0:
        raise ValueError("sobolev_norm: s must lie in [-2, 1]")
    if pad_factor < 4:
        raise ValueError("sobolev_norm: pad_factor must be at least 4")
    samples = u.samples
    if samples[0] != 0:
        samples = np.concatenate([[0.0], samples])
    if samples[-1] != 0:
        samples = np.concatenate([samples, [0.0]])
    if not np.any(samples):
        return 0.0
    coarse = _sobolev_once(samples, u.dt, s, pad_factor, max_dxi)
    t = np.arange(samples.size)
    fine = np.interp(np.arange(2 * samples.size - 1) / 2.0, t, samples)
    refined = _sobolev_once(fine, u.dt / 2.0, s, 2 * pad_factor, 0.5 * max_dxi)
    if abs(refined - coarse) > rtol * max(abs(refined), 1e-300):
        raise SobolevConvergenceError(f"sobolev_norm: refinements disagree ({coarse:.6e} vs {refined:.6e})")
    return refined


def bump_profile(t, center, width):
    r = (np.asarray(t, dtype=float) - center) / width
    out = np.zeros_like(r)
    inside = np.abs(r) < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - r[inside] ** 2))
    return out


def bump_derivative(t, center, width):
    r = (np.asarray(t, dtype=float) - center) / width
    out = np.zeros_like(r)
    inside = np.abs(r) < 1.0
    ri = r[inside]
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - ri**2)) * (-2.0 * ri / (1.0 - ri**2) ** 2) / width
    return out


def bump_control(T, center, width, amplitude, dt=1e-3):
    """amplitude * exp(1 - 1/(1 - r^2)), r = (t - center)/width; peak value = amplitude."""
    if center - width <= 0.0 or center + width >= T + 1e-12:
        raise ValueError("bump_control: support must lie inside (0, T)")
    n = int(round(T / dt))
    t = dt * np.arange(n + 1)
    return ControlSignal(amplitude * bump_profile(t, center, width), dt)


# ---------------------------------------------------------------------------
# uncontrollable directions


def pairs_for_length(L, s_max=400, tol=1e-9):
    s = 3.0 * (L / (2.0 * np.pi)) ** 2
    out = []
    for k in range(1, int(np.sqrt(s)) + 2):
        for l in range(1, k + 1):
            if abs(critical_length(k, l) - L) < tol * max(1.0, L):
                out.append(make_pair(k, l))
    return out


def m_projector_basis(L, x):
    """Orthonormal basis (rows) of the uncontrollable directions at length L (may be empty)."""
    rows = []
    h = x[1] - x[0]
    for pair in pairs_for_length(L):
        for b in m_basis(pair, x):
            w = b.copy()
            for r in rows:
                w -= (w @ r) * h * r
            n = np.sqrt(w @ w * h)
            if n > 1e-8:
                rows.append(w / n)
    return np.array(rows).reshape(len(rows), x.size)


def project_out(v, basis, h):
    if basis.size == 0:
        return v.copy(), 0.0
    coef = basis @ v * h
    return v - coef @ basis, float(np.sqrt(np.sum(coef**2)))


# ---------------------------------------------------------------------------
# reachability Gramian


class Gramian:
    """Discrete reachability map F: u -> y(T) from rest and its adjoint.

    Inner products: h * sum over interior nodes for states and dt * sum over
    samples for controls, so F* = (h/dt) F^T and Lambda = F F* is symmetric
    in the state inner product.
    """

    def __init__(self, grid: Grid, assemble=False):
        self.grid = grid
        self.h = grid.h
        self.dt = grid.dt
        self._matrix = None
        self._ft = None
        if assemble:
            self.assemble()

    def forward(self, u):
        return final_state(self.grid, u)

    def adjoint(self, psi):
        return (self.h / self.dt) * adjoint_control(self.grid, psi)

    def apply_free(self, psi):
        return self.forward(self.adjoint(psi))

    def assemble(self):
        if self._matrix is None:
            n = self.grid.N - 1
            Ft = adjoint_control(self.grid, np.eye(n))  # (K+1, n) = F^T
            self._ft = Ft
            self._matrix = (self.h / self.dt) * (Ft.T @ Ft)
        return self._matrix

    @property
    def assembled(self):
        return self._matrix is not None

    def apply(self, psi):
        if self._matrix is not None:
            return self._matrix @ psi
        return self.apply_free(psi)

    def control_for(self, psi):
        if self._ft is not None:
            return (self.h / self.dt) * (self._ft @ psi)
        return self.adjoint(psi)

    def trace_mean(self):
        M = self.assemble()
        return float(np.trace(M) / M.shape[0])

    def symmetry_defect(self, rng, n_pairs=3):
        """max |<L a, b> - <a, L b>| / (||L a|| ||b||) using the matrix-free route."""
        worst = 0.0
        n = self.grid.N - 1
        for _ in range(n_pairs):
            a, b = rng.standard_normal(n), rng.standard_normal(n)
            la, lb = self.apply_free(a), self.apply_free(b)
            lhs, rhs = self.h * la @ b, self.h * a @ lb
            scale = np.sqrt(self.h * la @ la) * np.sqrt(self.h * b @ b)
            worst = max(worst, abs(lhs - rhs) / scale)
        return worst


@dataclass
class CGResult:
    x: np.ndarray
    converged: bool
    iterations: int
    history: list = field(default_factory=list)


def conjugate_gradient(apply, b, inner, rtol=1e-3, max_iter=200, shift=0.0):
    """CG for (A + shift I) x = b in the inner product ``inner``; keeps the best iterate."""
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rr = inner(r, r)
    bnorm = np.sqrt(inner(b, b))
    history = [1.0]
    best = (1.0, x.copy())
    if bnorm == 0:
        return CGResult(x, True, 0, history)
    for it in range(1, max_iter + 1):
        Ap = apply(p) + shift * p
        pAp = inner(p, Ap)
        if pAp <= 0:
            break
        alpha = rr / pAp
        x = x + alpha * p
        r = r - alpha * Ap
        rr_new = inner(r, r)
        rel = np.sqrt(rr_new) / bnorm
        history.append(float(rel))
        if rel < best[0]:
            best = (rel, x.copy())
        if rel <= rtol:
            return CGResult(x, True, it, history)
        p = r + (rr_new / rr) * p
        rr = rr_new
    return CGResult(best[1], False, len(history) - 1, history)


@dataclass
class HumResult:
    control: ControlSignal
    residual: float
    converged: bool
    iterations: int
    projection_norm: float
    target_used: np.ndarray = field(repr=False)
    cg_history: list = field(default_factory=list, repr=False)


def hum_control(grid: Grid, target, T=None, tikhonov=None, project=True, gramian: Gramian | None = None, rtol=1e-3, max_iter=200):
    """Minimum-norm control steering 0 to ``target`` (interior values) in time T.

    CG on (Lambda + tikhonov I) psi = target, u = F* psi.  The returned
    residual is ||y(T) - target|| / ||target|| from a fresh forward solve.
    """
    if T is not None and abs(T - grid.T) > 1e-12:
        grid = grid.with_T(T)
    target = np.asarray(target, dtype=float)
    if target.shape[0] == grid.N + 1:
        target = target[1:-1]
    h = grid.h
    basis = m_projector_basis(grid.L, grid.x_interior)
    proj_norm = project_out(target, basis, h)[1]
    if project:
        target = project_out(target, basis, h)[0]
    tnorm = np.sqrt(h * target @ target)
    n_samples = grid.n_steps + 1
    if tnorm == 0:
        return HumResult(zero_control(grid.T, grid.dt), 0.0, True, 0, proj_norm, target)
    gram = gramian if gramian is not None else Gramian(grid)
    if tikhonov is None:
        tikhonov = 1e-8 * (gram.trace_mean() if gram.assembled else _trace_estimate(gram))

    def inner(a, b):
        return h * float(a @ b)

    # the CG criterion is on the forward residual: Lambda psi - target = r - tik psi
    res = conjugate_gradient(gram.apply, target, inner, rtol=rtol, max_iter=max_iter, shift=tikhonov)
    u = ControlSignal(gram.control_for(res.x)[:n_samples], grid.dt)
    yT = final_state(grid, u)
    resid = float(np.sqrt(h * np.sum((yT - target) ** 2)) / tnorm)
    return HumResult(u, resid, res.converged and resid <= max(rtol, 1e-3), res.iterations, proj_norm, target, res.history)


def _trace_estimate(gram: Gramian, n_probe=4, seed=0):
    rng = np.random.default_rng(seed)
    n = gram.grid.N - 1
    acc = 0.0
    for _ in range(n_probe):
        v = rng.choice([-1.0, 1.0], size=n)
        acc += v @ gram.apply_free(v)
    return acc / n_probe / n


# ---------------------------------------------------------------------------
# null controls


@dataclass
class NullControlResult:
    control: ControlSignal
    residual: float
    ok: bool
    m_projection: float
    closure_norm: float
    alpha: float = 0.0


def window_basis(n_samples, n_modes):
    """sin(j pi tau) sin(pi tau)^2 on tau in [0, 1]: smooth, vanishing to second order at both ends."""
    tau = np.linspace(0.0, 1.0, n_samples)
    j = np.arange(1, n_modes + 1)
    return np.sin(np.pi * np.outer(tau, j)) * np.sin(np.pi * tau)[:, None] ** 2


def default_window_modes(T, dt, resolution=0.25, max_modes=96):
    """Largest basis whose top frequency satisfies omega * dt <= resolution."""
    m = int(resolution * 0.5 * T / (np.pi * dt))
    return int(min(max(m, 8), max_modes))


class NullController:
    """Closes free controls on [0, T/2] to null controls on [0, T] for one grid.

    The closing control on [T/2, T] is sought in a smooth sine window basis
    and chosen by Tikhonov-regularised least squares
        min ||y(T)||^2 + alpha ||v||^2,
    solved through the SVD of the (basis-restricted) window map.  The
    regularisation is picked from ``alphas`` (relative to the top singular
    value squared) by predicted residual, then verified by a forward solve.
    """

    def __init__(self, grid: Grid, n_modes=None, tol=1e-5, alphas=(1e-12, 1e-16, 1e-20)):
        self.grid = grid
        self.K = grid.n_steps
        if self.K % 2:
            raise ValueError("NullController: T/dt must be even")
        self.half = Grid(grid.L, grid.N, grid.dt, 0.5 * grid.T)
        self.n_modes = n_modes if n_modes is not None else default_window_modes(grid.T, grid.dt)
        self.basis_t = window_basis(self.K // 2 + 1, self.n_modes)
        window_map = adjoint_control(self.half, np.eye(grid.N - 1)).T  # y(T) = window_map @ v
        U, s, Wt = np.linalg.svd(window_map @ self.basis_t, full_matrices=False)
        self._svd = (U, s, Wt)
        self.alphas = tuple(alphas)
        self.tol = tol
        self.basis = m_projector_basis(grid.L, grid.x_interior)

    def free_terminal_state(self, u_head):
        traj = solve_linear(self.half, u=u_head)
        y = traj.states[-1]
        cn = stepper(self.half)
        for _ in range(self.K // 2):
            y = cn.step(y, 0.0)
        return y

    def closure(self, y_free):
        U, s, Wt = self._svd
        proj = U.T @ (-y_free)
        best = None
        for a in self.alphas:
            al = a * s[0] ** 2
            coef = Wt.T @ ((s / (s**2 + al)) * proj)
            pred = np.linalg.norm(y_free + U @ (s * (Wt @ coef)))
            if best is None or pred < best[0]:
                best = (pred, a, coef)
        return self.basis_t @ best[2], best[1]

    def close(self, u_free: ControlSignal) -> NullControlResult:
        g = self.grid
        half_n = self.K // 2
        uf = np.zeros(self.K + 1)
        m = min(u_free.samples.size, half_n + 1)
        uf[:m] = u_free.samples[:m]
        if not np.any(uf):
            return NullControlResult(ControlSignal(uf, g.dt), 0.0, True, 0.0, 0.0)
        v, alpha = self.closure(self.free_terminal_state(uf[: half_n + 1]))
        total = uf.copy()
        total[half_n:] += v
        u = ControlSignal(total, g.dt)
        full = solve_linear(g, u=total)
        norms = full.norms()
        peak = max(norms.max(), 1e-300)
        resid = float(norms[-1] / peak)
        mproj = project_out(full.states[-1], self.basis, g.h)[1] / peak
        return NullControlResult(u, resid, resid <= self.tol, float(mproj), float(np.sqrt(g.dt * v @ v)), alpha)


def null_control(grid: Grid, u_free: ControlSignal, T=None, controller: NullController | None = None):
    if T is not None and abs(T - grid.T) > 1e-12:
        grid = grid.with_T(T)
    ctl = controller if controller is not None else NullController(grid)
    return ctl.close(u_free)


def experiment_grid(L, T, N=512):
    """Grid used for null-control experiments: dt = T / 2000 capped at 1e-3."""
    dt = min(1e-3, T / 2000.0)
    n = 2 * int(round(T / dt / 2.0))
    return Grid(L, N, T / n, T)


# ---------------------------------------------------------------------------
# frequency-domain quantities


def _h_scaled(z, L):
    """(mantissa, log_shift) of H(z) = detQ / Xi for complex arrays."""
    lam = cubic_roots(np.asarray(z, dtype=complex))
    dq, sq = scaled_detq(lam, L)
    return dq / xi_of(lam), sq


def h_reduced(z, pair: CriticalPair, roots=None):
    """(mantissa, log_shift) of H / Gamma with Gamma = prod (z - z_j) over real common zeros."""
    m, s = _h_scaled(z, pair.L)
    roots = _common_zeros(pair) if roots is None else roots
    g = np.ones_like(np.asarray(z, dtype=complex))
    for r in roots:
        g = g * (np.asarray(z, dtype=complex) - r)
    return m / g, s


def _common_zeros(pair: CriticalPair):
    """Real common zeros of G and H at a critical length: +-p of every pair sharing L."""
    out = []
    for c in pairs_for_length(pair.L):
        for r in (c.p, -c.p):
            if not any(abs(r - q) < 1e-12 for q in out):
                out.append(r)
    return out


def h_log_derivative_ratio(z, pair: CriticalPair, gamma, step=1e-6):
    """H'(z + i gamma) / H(z) with H = detQ / (Xi Gamma), overflow-free.

    The derivative is a central difference of step ``step`` along the
    imaginary direction, evaluated analytically off the real axis.
    """
    z = np.asarray(z, dtype=float)
    zc = z + 1j * gamma
    mp, sp = h_reduced(zc + 1j * step, pair)
    mm, sm = h_reduced(zc - 1j * step, pair)
    m0, s0 = h_reduced(z.astype(complex), pair)
    # derivative along i: f'(zc) = (f(zc + i s) - f(zc - i s)) / (2 i s)
    ref = np.maximum(sp, sm)
    num = (mp * np.exp(sp - ref) - mm * np.exp(sm - ref)) / (2j * step)
    return num / m0 * np.exp(ref - s0)


def alpha_modulus(L):
    return 3.0 / L


class GammaSelectionError(RuntimeError):
    pass


def select_gamma(pair: CriticalPair, z_grid, candidates=None):
    candidates = candidates if candidates is not None else np.round(np.arange(0.1, 2.0001, 0.1), 10)
    for gmm in candidates:
        zc = np.asarray(z_grid, dtype=float) + 1j * gmm
        mp, sp = h_reduced(zc + 1j * 1e-6, pair)
        mm, sm = h_reduced(zc - 1j * 1e-6, pair)
        ref = np.maximum(sp, sm)
        d = np.abs(mp * np.exp(sp - ref) - mm * np.exp(sm - ref)) / 2e-6
        # compare on the log scale: |H'| > 1e-8 everywhere on the grid
        with np.errstate(divide="ignore"):
            logd = np.log(d) + ref
        if np.all(logd > np.log(1e-8)):
            return float(gmm)
    raise GammaSelectionError("n_functional: no admissible gamma in the scan")


def spectrum(u: ControlSignal, pad=16, shift=0.0):
    """u^(z - shift) on the padded-DFT frequency grid, ascending z.

    Exact for the piecewise-linear interpolant when u vanishes at both
    ends.  Returns (z, values, dz).
    """
    n_pad = int(pad) * u.samples.size
    t = u.t
    mod = u.samples * np.exp(1j * shift * t) if shift else u.samples
    F = np.fft.fftshift(np.fft.fft(mod, n=n_pad))
    z = 2.0 * np.pi * np.fft.fftshift(np.fft.fftfreq(n_pad, d=u.dt))
    zs = z - shift
    vals = u.dt / np.sqrt(2.0 * np.pi) * F * np.sinc(zs * u.dt / (2.0 * np.pi)) ** 2
    return z, vals, 2.0 * np.pi / (n_pad * u.dt)


def n_functional(u: ControlSignal, pair: CriticalPair, gamma=0.0, pad=16, return_details=False):
    """N(u) = |alpha| ||w^||_{L2}, w^ = u^ H'(z + i gamma) / H(z), |alpha| = 3 / L.

    Grid points within 1e-6 of a real zero of H are replaced by the mean
    of their two neighbours (the quotient is entire for null controls).
    """
    z, uh, dz = spectrum(u, pad)
    if not np.any(uh):
        return (0.0, {"gamma": gamma}) if return_details else 0.0
    if gamma == 0:
        gamma = select_gamma(pair, z[:: max(1, z.size // 2000)])
    ratio = h_log_derivative_ratio(z, pair, gamma)
    w = uh * ratio
    bad = ~np.isfinite(w)
    for r in _common_zeros(pair):
        bad |= np.abs(z - r) < 1e-6
    if np.any(bad):
        idx = np.flatnonzero(bad)
        w[idx] = 0.5 * (w[np.clip(idx - 1, 0, z.size - 1)] + w[np.clip(idx + 1, 0, z.size - 1)])
    val = alpha_modulus(pair.L) * float(np.sqrt(np.sum(np.abs(w) ** 2) * dz))
    if return_details:
        return val, {"gamma": gamma, "z": z, "w_hat": w, "u_hat": uh}
    return val


@dataclass
class FrequencyNullControl:
    control: ControlSignal
    leakage: float
    residual: float
    flagged: bool
    symmetry_defect: float


def null_control_frequency(w: ControlSignal, pair: CriticalPair, grid: Grid | None = None, n_freq=None):
    """u^ = w^ * H with H = detQ / (Xi Gamma), inverse transformed and truncated to [0, T].

    Experimental.  Reports the mass of u outside [0, T] and the solver
    residual ||y(T)|| / max ||y||.
    """
    T = w.T
    dt = w.dt
    if not np.any(w.samples):
        return FrequencyNullControl(ControlSignal(np.zeros_like(w.samples), dt), 0.0, 0.0, False, 0.0)
    n_ext = 8 * w.samples.size if n_freq is None else n_freq
    xi = 2.0 * np.pi * np.fft.fftfreq(n_ext, d=dt)
    # centre the support: transform of w on an extended window [-a, T + a]
    a = 3.5 * T
    shift_n = int(round(a / dt))
    ext = np.zeros(n_ext)
    ext[shift_n : shift_n + w.samples.size] = w.samples
    W = np.fft.fft(ext)
    m, s = h_reduced(xi.astype(complex), pair)
    Hr = m * np.exp(np.minimum(s, 700.0))
    Hr[~np.isfinite(Hr)] = 0.0
    U = W * Hr
    # enforce U(-xi) = conj(U(xi)) so that u is real
    Uc = np.conj(np.roll(U[::-1], 1))
    U = 0.5 * (U + Uc)
    sym = float(np.max(np.abs(U - np.conj(np.roll(U[::-1], 1)))) / max(np.abs(U).max(), 1e-300))
    u_ext = np.real(np.fft.ifft(U))
    inside = u_ext[shift_n : shift_n + w.samples.size]
    total = float(np.sum(u_ext**2))
    leak = float(np.sqrt(max(total - np.sum(inside**2), 0.0) / total)) if total > 0 else 0.0
    u = ControlSignal(inside, dt)
    resid = float("nan")
    if grid is not None:
        g = Grid(pair.L, grid.N, dt, T)
        tr = solve_linear(g, u=u)
        nm = tr.norms()
        resid = float(nm[-1] / max(nm.max(), 1e-300))
    return FrequencyNullControl(u, leak, resid, leak > 0.1, sym)


# ---------------------------------------------------------------------------
# I/O


def write_control_csv(path, u: ControlSignal):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "u"])
        for ti, ui in zip(u.t, u.samples):
            w.writerow([repr(float(ti)), repr(float(ui))])


def read_control_csv(path, rtol=1e-9):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    if [c.strip() for c in rows[0]] != ["t", "u"]:
        raise ValueError("control CSV must have header 't,u'")
    data = np.array([[float(a), float(b)] for a, b in rows[1:]])
    t, u = data[:, 0], data[:, 1]
    steps = np.diff(t)
    dt = float(np.mean(steps))
    if np.max(np.abs(steps - dt)) > rtol * max(dt, 1.0) * 1e3 or abs(t[0]) > 1e-12:
        raise ValueError("control CSV: time samples must be uniform and start at 0")
    return ControlSignal(u, dt)
