"""Quadratic-form experiments around a critical length.

For a null control u, the first-order state y solves the linear system and
the second-order projection onto the unreachable direction is the
quadratic form

    I(u) = int_0^inf int_0^L y^2 phi_x e^{-i p t} dx dt,

with the real version I_psi = int int y^2 Psi_x = Re(conj(E) I).  The
frequency-domain side of the same quantity is
int u^(z) conj(u^(z - p)) int_0^L B(z, x) dx dz.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .control_tools import (
    ControlSignal,
    NullController,
    experiment_grid,
    n_functional,
    sobolev_norm,
    spectrum,
    bump_profile,
)
from .critical_lengths import CriticalPair, PsiField, integral_B_regular, m_basis, make_pair
from .kdv_solver import Grid, SourceTerm, solve_linear

REPORT_SCHEMA = "obstruction-report/1"


class NotNullControlError(ValueError):
    pass


class DecayError(RuntimeError):
    pass


@dataclass(frozen=True)
class QuadraticForm:
    I_complex: complex
    I_psi: float
    horizon: float
    null_residual: float


def _trapezoid_weights(n, step):
    w = np.full(n, step)
    w[0] = w[-1] = 0.5 * step
    return w


def _solve_to_horizon(u: ControlSignal, grid: Grid, horizon_factor, decay, max_doublings=3):
    T = u.T
    horizon = horizon_factor * T
    for _ in range(max_doublings + 1):
        g = Grid(grid.L, grid.N, u.dt, horizon)
        traj = solve_linear(g, u=u.padded(g.n_steps + 1))
        norms = traj.norms()
        if norms[-1] <= decay * max(norms.max(), 1e-300):
            return traj, norms
        horizon *= 2.0
    raise DecayError(f"quadratic_form: trajectory not decayed by t = {horizon / 2:.3g}")


def quadratic_form(u: ControlSignal, pair: CriticalPair, grid: Grid, horizon_factor=3.0, decay=1e-8, null_tol=1e-4, return_trajectory=False):
    """(I_complex, I_psi) by trapezoid sums over the discrete trajectory."""
    if not np.any(u.samples):
        qf = QuadraticForm(0j, 0.0, 0.0, 0.0)
        return (qf, None) if return_trajectory else qf
    k_T = int(round(u.T / u.dt))
    try:
        traj, norms = _solve_to_horizon(u, grid, horizon_factor, decay)
    except DecayError:
        # a non-null control leaves an undamped remainder; report that first
        norms = solve_linear(Grid(grid.L, grid.N, u.dt, u.T), u=u).norms()
        if norms[-1] > null_tol * max(norms.max(), 1e-300):
            raise NotNullControlError(f"quadratic_form: ||y(T)|| / max ||y|| = {norms[-1] / norms.max():.2e} exceeds {null_tol:g}") from None
        raise
    resid = float(norms[k_T] / max(norms[: k_T + 1].max(), 1e-300))
    if resid > null_tol:
        raise NotNullControlError(f"quadratic_form: ||y(T)|| / max ||y|| = {resid:.2e} exceeds {null_tol:g}")
    g = traj.grid
    y2 = traj.full_states() ** 2
    field_ = PsiField(pair)
    wx = _trapezoid_weights(g.N + 1, g.h)
    wt = _trapezoid_weights(traj.t.size, u.dt)
    spatial = y2 @ (wx * field_.phi_x(g.x))
    I_c = complex(np.sum(wt * np.exp(-1j * pair.p * traj.t) * spatial))
    psi_x = field_.psi_x(traj.t, g.x)
    I_p = float(np.sum(wt * ((y2 * psi_x) @ wx)))
    qf = QuadraticForm(I_c, I_p, float(traj.t[-1]), resid)
    return (qf, traj) if return_trajectory else qf


_IB_CACHE: dict = {}


def parseval_frequency_side(u: ControlSignal, pair: CriticalPair, pad=16):
    """int u^(z) conj(u^(z - p)) int B(z, x) dx dz on the padded-DFT grid."""
    z, uh, dz = spectrum(u, pad)
    _, uh_shift = spectrum(u, pad, shift=pair.p)[:2]
    key = (pair.k, pair.l, z.size, round(dz, 15))
    ib = _IB_CACHE.get(key)
    if ib is None:
        if len(_IB_CACHE) > 8:
            _IB_CACHE.clear()
        ib = integral_B_regular(z, pair)
        _IB_CACHE[key] = ib
    return complex(np.sum(uh * np.conj(uh_shift) * ib) * dz)


def parseval_gap(qf: QuadraticForm, freq_value):
    return abs(qf.I_complex - freq_value) / max(abs(freq_value), 1e-300)


def second_order_state(traj, u2=None):
    """y2 driven by -y1 y1_x from rest, with boundary control u2 (default 0).

    Returns the terminal state of y2 on interior nodes.
    """
    g = traj.grid
    y1 = traj.full_states()
    src = SourceTerm(np.zeros_like(y1), -0.5 * y1**2)
    return solve_linear(g, u=u2, f=src).states[-1]


# ---------------------------------------------------------------------------
# random controls and the sign sweep


def random_bump_superposition(rng, T_half, dt, n_atoms=None):
    """Sum of 3-6 bumps with log-uniform widths, supported in (0, T_half)."""
    n_atoms = int(rng.integers(3, 7)) if n_atoms is None else n_atoms
    n = int(round(T_half / dt))
    t = dt * np.arange(n + 1)
    out = np.zeros(n + 1)
    for _ in range(n_atoms):
        width = math.exp(rng.uniform(math.log(T_half / 20.0), math.log(T_half / 4.0)))
        center = rng.uniform(width * 1.01, T_half - width * 1.01)
        out += rng.standard_normal() * bump_profile(t, center, width)
    return ControlSignal(out, dt)


class ObstructionNotApplicable(ValueError):
    pass


@dataclass
class ObstructionReport:
    pair: tuple
    T_list: list
    records: list
    verdicts: dict
    config: dict = field(default_factory=dict)
    schema: str = REPORT_SCHEMA

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def write_json(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json())

    def write_csv(self, path):
        cols = list(self.records[0].keys()) if self.records else ["control_id"]
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            for r in self.records:
                w.writerow(r)


def _sample_seed(seed, t_index, sample):
    return np.random.SeedSequence([int(seed), int(t_index), int(sample)])


def analyse_control(u: ControlSignal, pair: CriticalPair, grid: Grid, gamma=0.0, with_parseval=True):
    """Everything recorded per null control: I, I_psi, N, H^{-2/3} norm, ratio, Parseval gap."""
    qf = quadratic_form(u, pair, grid)
    hm = sobolev_norm(u, -2.0 / 3.0)
    nu, info = n_functional(u, pair, gamma=gamma, return_details=True)
    ratio = qf.I_complex / nu**2 if nu > 1e-12 else complex("nan")
    rec = {
        "I_psi": qf.I_psi,
        "I_re": qf.I_complex.real,
        "I_im": qf.I_complex.imag,
        "N_u": nu,
        "gamma": info["gamma"],
        "h_minus_two_thirds": hm,
        "coercivity": qf.I_psi / hm**2,
        "ratio_re": ratio.real,
        "ratio_im": ratio.imag,
        "ratio_gap_E": abs(ratio - pair.E) / abs(pair.E),
        "null_residual": qf.null_residual,
    }
    if with_parseval:
        rec["parseval_gap"] = parseval_gap(qf, parseval_frequency_side(u, pair))
    return rec


def _sweep_one_T(args):
    k, l, t_index, T, n_samples, seed, N, gamma = args
    pair = make_pair(k, l)
    grid = experiment_grid(pair.L, T, N)
    ctl = NullController(grid)
    records, skipped = [], 0
    for i in range(n_samples):
        rng = np.random.default_rng(_sample_seed(seed, t_index, i))
        u_free = random_bump_superposition(rng, 0.5 * T, grid.dt)
        res = ctl.close(u_free)
        if not res.ok:
            skipped += 1
            continue
        rec = {"control_id": f"T{t_index}-s{i}", "T": T}
        rec.update(analyse_control(res.control, pair, grid, gamma))
        rec["closure_residual"] = res.residual
        records.append(rec)
    return t_index, records, skipped


def _verdict(records, skipped):
    vals = [r["I_psi"] for r in records]
    ratios = [r["coercivity"] for r in records]
    return {
        "verdict": "all-positive" if vals and min(vals) > 0 else "mixed-sign",
        "min_ratio": min(ratios) if ratios else float("nan"),
        "n_used": len(records),
        "n_skipped": skipped,
        "parseval_max_gap": max((r.get("parseval_gap", 0.0) for r in records), default=float("nan")),
        "median_ratio_gap_E": float(np.median([r["ratio_gap_E"] for r in records])) if records else float("nan"),
    }


def sign_definiteness_sweep(pair: CriticalPair, T_list, n_samples, seed=0, N=512, jobs=1, gamma=0.0):
    """Random null controls per horizon T; sign of I_psi and coercivity ratio."""
    if not pair.obstruction_applies:
        raise ObstructionNotApplicable(f"pair ({pair.k},{pair.l}) has E = 0; no obstruction to test")
    tasks = [(pair.k, pair.l, i, float(T), int(n_samples), int(seed), int(N), float(gamma)) for i, T in enumerate(T_list)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_one_T, tasks))
    else:
        results = [_sweep_one_T(t) for t in tasks]
    results.sort(key=lambda r: r[0])
    records, verdicts = [], {}
    for t_index, recs, skipped in results:
        records.extend(recs)
        verdicts[repr(float(T_list[t_index]))] = _verdict(recs, skipped)
    mixed = [float(T) for T in T_list if verdicts[repr(float(T))]["verdict"] == "mixed-sign"]
    verdicts["first_mixed_T"] = min(mixed) if mixed else None
    config = {"seed": int(seed), "n_samples": int(n_samples), "N": int(N), "gamma": float(gamma)}
    return ObstructionReport((pair.k, pair.l), [float(T) for T in T_list], records, verdicts, config)


def monotone_ratio(u: ControlSignal, pair: CriticalPair, gamma=0.0, grid: Grid | None = None, N=512):
    """I(u) / N(u)^2 for a null control u."""
    nu = n_functional(u, pair, gamma=gamma)
    if nu < 1e-12:
        raise ValueError("monotone_ratio: N(u) below 1e-12")
    grid = grid if grid is not None else Grid(pair.L, N, u.dt, u.T)
    qf = quadratic_form(u, pair, grid)
    return qf.I_complex / nu**2


# ---------------------------------------------------------------------------
# steering to targets in M through the quadratic term


class SteeringError(RuntimeError):
    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


@dataclass
class SteerResult:
    control: ControlSignal
    residuals: list
    converged: bool
    history: list = field(default_factory=list, repr=False)


class MPlane:
    """Coordinates in the two-dimensional unreachable plane at one grid.

    ``coords`` uses an orthonormal basis of span{Re phi, Im phi};
    ``moment`` is the complex number int y phi dx.
    """

    def __init__(self, pair: CriticalPair, grid: Grid):
        self.x = grid.x_interior
        self.h = grid.h
        self.basis = m_basis(pair, self.x)
        phi = PsiField(pair).phi(self.x)
        rows = np.array([phi.real, phi.imag])
        # moment (as R^2) = G @ coords
        self.G = rows @ self.basis.T * self.h

    def coords(self, y):
        return self.basis @ y * self.h

    def project(self, y):
        return self.coords(y) @ self.basis

    def coords_from_moment(self, q):
        return np.linalg.solve(self.G, np.array([q.real, q.imag]))

    def moment_from_coords(self, c):
        m = self.G @ c
        return complex(m[0], m[1])


class QuadraticSteerer:
    """Builds u1 = sum a_j v(. - s_j) whose second-order projection hits a target.

    v is a null control on [0, tau]; a time shift by s multiplies the
    quadratic form by e^{-i p s}, and disjoint shifts add.
    """

    def __init__(self, pair: CriticalPair, grid: Grid, tau=2.0, seed=0):
        self.pair, self.grid, self.tau = pair, grid, tau
        self.plane = MPlane(pair, grid)
        g_tau = Grid(grid.L, grid.N, grid.dt, tau)
        ctl = NullController(g_tau)
        rng = np.random.default_rng(seed)
        head = random_bump_superposition(rng, 0.5 * tau, grid.dt, n_atoms=3)
        res = ctl.close(head)
        v = res.control.samples
        self.v = v / np.sqrt(grid.dt * v @ v)
        self.I_v = quadratic_form(ControlSignal(self.v, grid.dt), pair, g_tau).I_complex
        self.n_tau = self.v.size - 1
        self.max_shift = grid.n_steps - self.n_tau

    def _shifted(self, shift_steps, amp):
        out = np.zeros(self.grid.n_steps + 1)
        out[shift_steps : shift_steps + self.v.size] = amp * self.v
        return out

    def control_for(self, coords):
        """u1 with predicted int y2(T) phi = target moment (y2 from y1 y1_x)."""
        p, T, dt = self.pair.p, self.grid.T, self.grid.dt
        q = self.plane.moment_from_coords(coords)
        if abs(q) == 0:
            return np.zeros(self.grid.n_steps + 1)
        # int y2(T) phi = (1/2) e^{i p T} sum a_j^2 e^{-i p s_j} I_v
        w = 2.0 * np.exp(-1j * p * T) * q / self.I_v
        theta = -np.angle(w)  # need p s = theta (mod 2 pi)
        s = (theta % (2.0 * np.pi)) / p
        k = int(round(s / dt))
        if k <= self.max_shift:
            return self._shifted(k, np.sqrt(abs(w)))
        # outside the reachable arc: combine the two arc ends
        k_end = self.max_shift
        ph = np.exp(-1j * p * k_end * dt)
        A = np.array([[1.0, ph.real], [0.0, ph.imag]])
        c = np.linalg.solve(A, np.array([w.real, w.imag]))
        c = np.maximum(c, 0.0)
        return self._shifted(0, np.sqrt(c[0])) + self._shifted(k_end, np.sqrt(c[1]))

    def second_order(self, u1):
        traj = solve_linear(self.grid, u=u1)
        return second_order_state(traj)


def nonlinear_steer(pair: CriticalPair, y0, yT, T, rho, N=256, dt=None, n_iter=3, max_iter=8, tau=2.0, seed=0, hum_rtol=1e-6):
    """Picard iteration on phi -> phi - G(phi) + yT for the nonlinear system.

    Each control is u0 (HUM, M-orthogonal part of the linear target)
    + u1 (quadratic steering of the M part) + u2 (HUM removal of the
    M-orthogonal part of the second-order state).

    The second-order state can be much larger than rho, so the HUM solves
    run to ``hum_rtol``; a loose tolerance leaves a residual floor.
    """
    from .control_tools import Gramian, hum_control
    from .kdv_solver import solve_nonlinear

    if pair.dimM != 2 or not pair.obstruction_applies:
        raise ValueError("nonlinear_steer: needs a pair with dimM = 2 and E != 0")
    if T <= np.pi / pair.p:
        raise ValueError("nonlinear_steer: T must exceed pi / p")
    n = int(round(T / (dt if dt is not None else 2e-3)))
    grid = Grid(pair.L, N, T / n, T)
    x = grid.x_interior
    y0 = np.zeros(N - 1) if y0 is None else np.asarray(y0, dtype=float)
    yT = np.zeros(N - 1) if yT is None else np.asarray(yT, dtype=float)
    if y0.shape[0] == N + 1:
        y0 = y0[1:-1]
    if yT.shape[0] == N + 1:
        yT = yT[1:-1]
    target_norm = np.sqrt(grid.h * yT @ yT)
    if target_norm == 0 and not np.any(y0):
        zero = ControlSignal(np.zeros(grid.n_steps + 1), grid.dt)
        return SteerResult(zero, [0.0], True)
    scale = max(float(rho), 1e-300)
    if max(target_norm, np.sqrt(grid.h * y0 @ y0)) > 10.0 * scale:
        raise ValueError("nonlinear_steer: data larger than rho")
    gram = Gramian(grid, assemble=True)
    steer = QuadraticSteerer(pair, grid, tau=tau, seed=seed)
    plane = steer.plane
    free_y0 = solve_linear(grid, y0=y0).states[-1] if np.any(y0) else np.zeros(N - 1)

    def control_of(phi):
        lin = phi - free_y0
        c_m = plane.coords(lin)
        u1 = steer.control_for(c_m)
        y2 = steer.second_order(u1) if np.any(u1) else np.zeros(N - 1)
        perp = lin - plane.project(lin) - (y2 - plane.project(y2))
        u02 = hum_control(grid, perp, gramian=gram, project=True, rtol=hum_rtol, max_iter=4000).control.samples if np.any(perp) else 0.0
        return u02 + u1

    phi = yT.copy()
    residuals, history, best = [], [], None
    for it in range(max_iter):
        u = control_of(phi)
        traj = solve_nonlinear(grid, y0=y0, u=u, store_every=grid.n_steps)
        err = traj.states[-1] - yT
        r = float(np.sqrt(grid.h * err @ err) / max(target_norm, 1e-300))
        residuals.append(r)
        history.append({"iteration": it, "residual": r})
        if best is None or r < best[0]:
            best = (r, u)
        if it >= n_iter and residuals[-1] >= residuals[-2]:
            break
        phi = phi - err
    converged = len(residuals) > n_iter and residuals[0] / max(residuals[n_iter], 1e-300) >= 2.0
    if not np.all(np.isfinite(residuals)) or residuals[-1] > 10.0 * residuals[0]:
        raise SteeringError("nonlinear_steer: Picard iteration diverged", history)
    return SteerResult(ControlSignal(best[1], grid.dt), residuals, converged, history)
