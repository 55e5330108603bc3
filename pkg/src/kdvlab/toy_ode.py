"""Three-state model with a quadratic drift:

    y1' = u,   y2' = y3,   y3' = -y2 + 2 y1 u,

started at the origin.  Closed forms:
    y2(T) = int_0^T cos(T - t) y1(t)^2 dt,
    y3(T) = y1(T)^2 - int_0^T sin(T - t) y1(t)^2 dt.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .control_tools import ControlSignal, bump_profile, sobolev_norm


@dataclass(frozen=True)
class ToyState:
    y1: float
    y2: float
    y3: float
    t: float

    def __post_init__(self):
        if not all(np.isfinite([self.y1, self.y2, self.y3, self.t])):
            raise ValueError("ToyState: non-finite component")


def _control_at(u: ControlSignal, t):
    return np.interp(t, u.t, u.samples, right=0.0)


def toy_simulate(u: ControlSignal, T, dt):
    """Classical RK4 from the origin with the piecewise-linear control.

    When the control grid divides [0, T], the step count is rounded up to a
    multiple of the number of control intervals so that no step straddles
    a kink of u.
    """
    if dt > 1e-3 * T * (1 + 1e-12):
        raise ValueError("toy_simulate: dt must be at most 1e-3 * T")
    n = int(np.ceil(T / dt - 1e-9))
    m = T / u.dt
    if abs(m - round(m)) < 1e-9 * m and n >= round(m):
        m = int(round(m))
        n = m * int(np.ceil(n / m))
    h = T / n
    ts = h * np.arange(n + 1)
    u0 = _control_at(u, ts)
    um = _control_at(u, ts[:-1] + 0.5 * h)
    y = np.zeros(3)

    def rhs(y, c):
        return np.array([c, y[2], -y[1] + 2.0 * y[0] * c])

    for k in range(n):
        k1 = rhs(y, u0[k])
        k2 = rhs(y + 0.5 * h * k1, um[k])
        k3 = rhs(y + 0.5 * h * k2, um[k])
        k4 = rhs(y + h * k3, u0[k + 1])
        y = y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return ToyState(float(y[0]), float(y[1]), float(y[2]), float(T))


def _first_component(u: ControlSignal, T, theta):
    """y1 at the nodes and at fractions ``theta`` of each interval (exact for piecewise-linear u)."""
    n = int(round(T / u.dt))
    s = u.padded(n + 1).samples[: n + 1]
    dt = u.dt
    y1 = np.concatenate([[0.0], np.cumsum(0.5 * dt * (s[1:] + s[:-1]))])
    th = np.asarray(theta)[None, :]
    y1_in = y1[:-1, None] + dt * (th * s[:-1, None] + 0.5 * th**2 * (s[1:] - s[:-1])[:, None])
    return y1, y1_in, dt * np.arange(n + 1)


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(4)


def toy_exact(u: ControlSignal, T):
    """(y2(T), y3(T)) from the closed forms, 4-point Gauss-Legendre on each sample interval."""
    theta = 0.5 * (_GL_NODES + 1.0)
    y1, y1_in, t = _first_component(u, T, theta)
    dt = u.dt
    tq = t[:-1, None] + dt * theta[None, :]
    w = 0.5 * dt * _GL_WEIGHTS[None, :]
    sq = y1_in**2
    y2 = np.sum(w * np.cos(T - tq) * sq)
    y3 = y1[-1] ** 2 - np.sum(w * np.sin(T - tq) * sq)
    return float(y2), float(y3)


def random_toy_control(rng, T, dt, mean_free=False, n_atoms=None):
    n_atoms = int(rng.integers(1, 5)) if n_atoms is None else n_atoms
    n = int(round(T / dt))
    t = dt * np.arange(n + 1)
    out = np.zeros(n + 1)
    for _ in range(n_atoms):
        width = rng.uniform(0.05, 0.5) * T
        center = rng.uniform(width, T - width) if T > 2 * width else 0.5 * T
        out += rng.standard_normal() * bump_profile(t, center, min(width, 0.5 * T))
    if mean_free:
        out -= np.trapezoid(out, dx=dt) / T
    return ControlSignal(out, dt)


@dataclass
class ToyReport:
    T: float
    n_samples: int
    seed: int
    y2_violations: int | None
    y3_violations: int | None
    delta_y2: float
    delta_y3: float
    records: list = field(default_factory=list, repr=False)
    search: dict | None = None

    def write_csv(self, path):
        cols = ["family", "index", "y2", "y3", "h_minus_1", "h_minus_2"]
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            for r in self.records:
                w.writerow(r)


def toy_obstruction_check(T, n_samples=200, seed=0, dt=None):
    """Sign checks of y2 (T <= pi/2) and y3 (T <= pi, mean-free controls)."""
    if T <= 0:
        raise ValueError("toy_obstruction_check: T must be positive")
    dt = dt if dt is not None else T / 2000.0
    rng = np.random.default_rng(seed)
    records = []
    v2 = v3 = 0
    ratios2, ratios3 = [], []
    for i in range(n_samples):
        u = random_toy_control(rng, T, dt)
        y2, y3 = toy_exact(u, T)
        hm1 = sobolev_norm(u, -1.0)
        records.append({"family": "free", "index": i, "y2": y2, "y3": y3, "h_minus_1": hm1, "h_minus_2": ""})
        if y2 < 0:
            v2 += 1
        ratios2.append(y2 / hm1**2)
        um = random_toy_control(rng, T, dt, mean_free=True)
        y2m, y3m = toy_exact(um, T)
        hm2 = sobolev_norm(um, -2.0)
        records.append({"family": "mean-free", "index": i, "y2": y2m, "y3": y3m, "h_minus_1": "", "h_minus_2": hm2})
        if y3m > 0:
            v3 += 1
        ratios3.append(-y3m / hm2**2)
    report = ToyReport(
        T=float(T),
        n_samples=int(n_samples),
        seed=int(seed),
        y2_violations=v2 if T <= np.pi / 2 + 1e-12 else None,
        y3_violations=v3 if T <= np.pi + 1e-12 else None,
        delta_y2=float(min(ratios2)),
        delta_y3=float(min(ratios3)),
        records=records,
    )
    if T > np.pi:
        report.search = maximise_y3(T)
    return report


def maximise_y3(T, n_coef=64, dt=None):
    """Largest y3(T) over unit-L2 piecewise-linear controls with y1(T) = 0.

    y3 is a quadratic form in the ``n_coef`` node values, so the optimum is
    the top eigenpair of that form restricted to mean-free controls.  The
    optimum is re-simulated with RK4 as an independent check.
    """
    dt = T / 2000.0 if dt is None else dt
    n = int(round(T / dt))
    t = dt * np.arange(n + 1)
    nodes = np.linspace(0.0, T, n_coef)
    interp = np.array([np.interp(t, nodes, e) for e in np.eye(n_coef)]).T
    gram = dt * (interp.T @ interp)
    gram -= 0.5 * dt * (np.outer(interp[0], interp[0]) + np.outer(interp[-1], interp[-1]))
    integrals = np.trapezoid(interp, dx=dt, axis=0)

    def y3_of(c):
        return toy_exact(ControlSignal(interp @ c, dt), T)[1]

    # polarisation gives the symmetric matrix of the form
    diag = np.array([y3_of(e) for e in np.eye(n_coef)])
    form = np.empty((n_coef, n_coef))
    for i in range(n_coef):
        for j in range(i, n_coef):
            form[i, j] = form[j, i] = diag[i] if i == j else 0.5 * (y3_of(np.eye(n_coef)[i] + np.eye(n_coef)[j]) - diag[i] - diag[j])
    # orthonormal coordinates for the gram metric on {c : integrals . c = 0}
    q, _ = np.linalg.qr(np.column_stack([integrals, np.eye(n_coef)[:, 1:]]))
    free = q[:, 1:]
    g = free.T @ gram @ free
    chol = np.linalg.cholesky(g)
    inv = np.linalg.inv(chol)
    reduced = inv @ free.T @ form @ free @ inv.T
    vals, vecs = np.linalg.eigh(reduced)
    c = free @ inv.T @ vecs[:, -1]
    best = y3_of(c)
    u = interp @ c
    rk4 = toy_simulate(ControlSignal(u, dt), T, min(dt, 1e-3 * T)).y3
    return {
        "found_positive": bool(best > 0),
        "best_y3": float(best),
        "eigenvalue": float(vals[-1]),
        "rk4_y3": float(rk4),
        "y1_T": float(np.trapezoid(u, dx=dt)),
        "l2": float(np.sqrt(c @ gram @ c)),
        "control": ControlSignal(u, dt),
    }
