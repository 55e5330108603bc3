"""Acceptance criteria 1-12.  Each test records one PASS/FAIL line and then asserts.

Run with ``pytest tests/test_acceptance.py -v``; the criterion lines are
repeated in the terminal summary.
"""

import os

import numpy as np
import pytest

from kdvlab.complex_cubic import asymptotic_roots, cubic_roots
from kdvlab.control_tools import Gramian, NullController, experiment_grid, hum_control
from kdvlab.critical_lengths import (
    PsiField,
    compute_E,
    e_closed_form,
    e_direct,
    integral_B,
    integral_B_closed,
    make_pair,
)
from kdvlab.kdv_solver import Grid, psi_bracket_residual, solve_linear, solve_nonlinear
from kdvlab.obstruction_experiments import (
    MPlane,
    nonlinear_steer,
    parseval_frequency_side,
    parseval_gap,
    quadratic_form,
    random_bump_superposition,
    sign_definiteness_sweep,
)
from kdvlab.spectral import (
    BRANCH_POINT,
    branch_loop_check,
    detq_line_floors,
    h_derivative,
    h_value,
    lattice_sum_fit,
)
from kdvlab.control_tools import ControlSignal
from kdvlab.toy_ode import toy_exact, toy_obstruction_check, toy_simulate, random_toy_control

JOBS = max(1, min(3, os.cpu_count() or 1))


def _matched_distance(a, b):
    """Largest distance between two unordered root triples (per-root nearest match)."""
    return max(float(np.min(np.abs(b - r))) for r in a)


def test_criterion_01_cubic_vieta_and_asymptotics(criterion):
    rng = np.random.default_rng(1)
    n = 100_000
    z = 1e3 * np.sqrt(rng.random(n)) * np.exp(2j * np.pi * rng.random(n))
    z[:4] = [0.0, BRANCH_POINT, -BRANCH_POINT, BRANCH_POINT + 1e-7j]
    lam = cubic_roots(z)
    s1 = lam.sum(-1)
    s2 = lam[:, 0] * lam[:, 1] + lam[:, 0] * lam[:, 2] + lam[:, 1] * lam[:, 2]
    s3 = lam.prod(-1)
    scale = 1.0 + np.abs(z)
    vieta = np.max(np.stack([np.abs(s1), np.abs(s2 - 1.0), np.abs(s3 + 1j * z)]), axis=0) / scale
    per_root = np.max(np.abs(lam**3 + lam + 1j * z[:, None]), axis=-1) / scale

    zs = 10.0 ** np.arange(2, 9)
    gaps = [_matched_distance(cubic_roots(np.array(zz + 0j)), asymptotic_roots(zz + 0j)) for zz in zs]
    slope = np.polyfit(np.log(zs), np.log(gaps), 1)[0]

    ok = vieta.max() <= 1e-12 and per_root.max() <= 1e-12 and slope <= -0.6
    criterion(1, ok, f"max Vieta {vieta.max():.2e}, max root residual {per_root.max():.2e} (<=1e-12); asymptotic slope {slope:.3f} (<= -0.6)")
    assert ok


def test_criterion_02_eigen_frequencies(criterion):
    pairs = [(k, l) for k in range(1, 6) for l in range(1, k)]
    assert len(pairs) == 10
    worst_h, worst_eta, min_hp = 0.0, 0.0, np.inf
    for k, l in pairs:
        c = make_pair(k, l)
        for z in (c.p, -c.p):
            worst_h = max(worst_h, abs(complex(h_value(np.array(z + 0j), c.L))))
            min_hp = min(min_hp, abs(complex(h_derivative(np.array(z + 0j), c.L))))
        worst_eta = max(worst_eta, _matched_distance(cubic_roots(np.array(-c.p + 0j)), c.eta))
    ok = worst_h <= 1e-9 and worst_eta <= 1e-10 and min_hp > 1e-6
    criterion(2, ok, f"10 pairs: max |H(+-p)| {worst_h:.2e} (<=1e-9), roots at -p vs eta {worst_eta:.2e} (<=1e-10), min |H'| {min_hp:.2e} (>1e-6)")
    assert ok


def test_criterion_03_E_cross_check(criterion):
    worst_rel, ratios, zero_ok = 0.0, [], True
    for k in range(1, 21):
        for l in range(1, 21):
            c = make_pair(k, l)
            if (2 * k + l) % 3 == 0:
                zero_ok &= c.E == 0 and e_closed_form(k, l) == 0
                continue
            zero_ok &= c.E != 0
            direct = e_direct(c.eta, c.p, c.L)
            closed = e_closed_form(k, l)
            worst_rel = max(worst_rel, abs(direct - closed) / abs(closed))
            ratios.append(closed / direct)
    ratios = np.array(ratios)
    ratio_spread = float(np.max(np.abs(ratios - 3.0)))
    ok = worst_rel <= 1e-12 and zero_ok
    criterion(
        3,
        ok,
        f"direct vs closed form max rel gap {worst_rel:.3e} (<=1e-12); closed/direct = 3 to {ratio_spread:.1e} on all pairs; "
        f"E = 0 exactly iff 2k+l in 3N: {zero_ok}",
    )
    assert zero_ok
    assert ratio_spread <= 1e-12
    assert worst_rel <= 1e-12


def test_criterion_04_B_asymptotics(criterion):
    c = make_pair(2, 1)
    E = c.E
    E_asym = compute_E(c, "asymptotic")
    zs = 10.0 ** np.arange(3, 8)
    scaled = np.array([abs(z) ** (4.0 / 3.0) * integral_B_closed(z, c) for z in zs])
    # independent route at |z| = 1e4: adaptive Gauss-Kronrod on the kernel
    quad = integral_B(1e4, c, quad_tol=1e-6 * 1e4 ** (-4.0 / 3.0))
    route_gap = abs(quad - integral_B_closed(1e4, c)) / abs(quad)
    gap = np.abs(scaled - E) / abs(E)
    gap_asym = np.abs(scaled - E_asym) / abs(E_asym)
    slope = np.polyfit(np.log(zs), np.log(gap), 1)[0]
    slope_asym = np.polyfit(np.log(zs), np.log(gap_asym), 1)[0]
    ok = gap[1] <= 0.10 and slope <= -0.25
    criterion(
        4,
        ok,
        f"gap vs E at 1e4 {gap[1]:.3f} (<=0.10), slope {slope:.3f} (<=-0.25); "
        f"against 0.6E: gap {gap_asym[1]:.2e}, slope {slope_asym:.3f}; quadrature vs closed form {route_gap:.1e}",
    )
    assert route_gap <= 1e-6
    assert gap_asym[1] <= 0.10 and slope_asym <= -0.25
    assert ok


def test_criterion_05_solver_exact_solution_and_bracket(criterion):
    c = make_pair(2, 1)
    field = PsiField(c)
    errors = []
    for N, dt in ((256, 2e-3), (512, 1e-3)):
        g = Grid(c.L, N, dt, 1.0)
        x = g.x_interior
        yT = solve_linear(g, y0=field.psi(0.0, x), store_every=g.n_steps).states[-1]
        exact = field.psi(1.0, x)
        errors.append(np.linalg.norm(yT - exact) / np.linalg.norm(exact))
    factor = errors[0] / errors[1]

    constants = []
    for N, dt in ((128, 4e-3), (256, 2e-3), (512, 1e-3)):
        g = Grid(c.L, N, dt, 1.0)
        x = g.x_interior
        u = 0.2 * np.sin(np.pi * g.t) ** 2
        traj = solve_nonlinear(g, y0=0.3 * field.psi(0.0, x), u=u)
        defect, _scale = psi_bracket_residual(traj, field)
        constants.append(defect / (g.h + dt))
    ok = errors[1] <= 5e-3 and factor >= 1.8 and constants[-1] <= constants[0]
    criterion(
        5,
        ok,
        f"Psi error {errors[1]:.2e} at (512,1e-3) (<=5e-3), halving factor {factor:.2f} (>=1.8); "
        f"bracket defect/(h+dt) = {', '.join(f'{v:.3e}' for v in constants)} (measured C {max(constants):.3e})",
    )
    assert ok


@pytest.mark.slow
def test_criterion_06_parseval(criterion):
    c = make_pair(2, 1)
    T = 0.5
    grid = experiment_grid(c.L, T)
    ctl = NullController(grid)
    gaps = []
    for i in range(10):
        rng = np.random.default_rng([6, i])
        res = ctl.close(random_bump_superposition(rng, 0.5 * T, grid.dt))
        assert res.ok
        qf = quadratic_form(res.control, c, grid)
        gaps.append(parseval_gap(qf, parseval_frequency_side(res.control, c)))
    ok = max(gaps) <= 0.02
    criterion(6, ok, f"10 null controls at T={T}: max relative gap {max(gaps):.2e} (<=2%)")
    assert ok


@pytest.mark.slow
def test_criterion_07_sign_definiteness(criterion):
    c = make_pair(2, 1)
    rep = sign_definiteness_sweep(c, [0.25, 0.5, 1.0], 50, seed=7, jobs=JOBS)
    parts, ok = [], True
    for T in (0.25, 0.5, 1.0):
        v = rep.verdicts[repr(T)]
        ok &= v["verdict"] == "all-positive" and v["n_used"] == 50 and v["min_ratio"] > 0
        parts.append(f"T={T}: {v['verdict']} ({v['n_used']} used), min coercivity {v['min_ratio']:.3f}")
    criterion(7, ok, "; ".join(parts))
    assert ok


@pytest.mark.slow
def test_criterion_08_monotone_ratio(criterion):
    c = make_pair(2, 1)
    E_asym = compute_E(c, "asymptotic")
    Ts = [0.5, 0.25, 0.1]
    rep = sign_definiteness_sweep(c, Ts, 20, seed=8, jobs=JOBS)
    med = [rep.verdicts[repr(T)]["median_ratio_gap_E"] for T in Ts]
    med_asym = []
    for T in Ts:
        ratios = np.array([r["ratio_re"] + 1j * r["ratio_im"] for r in rep.records if r["T"] == T])
        med_asym.append(float(np.median(np.abs(ratios - E_asym) / abs(E_asym))))
    decreasing = med[0] > med[1] > med[2]
    ok = decreasing and med[1] <= 0.5
    asym_ok = med_asym[0] > med_asym[1] > med_asym[2] and med_asym[1] <= 0.5
    criterion(
        8,
        ok,
        f"median gap vs E over T=0.5,0.25,0.1: {', '.join(f'{m:.3f}' for m in med)} (decreasing: {decreasing}); "
        f"against 0.6E: {', '.join(f'{m:.3f}' for m in med_asym)} (decreasing, <=0.5: {asym_ok})",
    )
    assert asym_ok
    assert ok


def test_criterion_09_hum(criterion):
    L = 2.0 * np.pi
    grid = Grid(L, 256, 2e-3, 2.0)
    x = grid.x_interior
    gram = Gramian(grid, assemble=True)
    sym = gram.symmetry_defect(np.random.default_rng(9))
    targets = {
        "sin x": np.sin(x),
        "sin 2x": np.sin(2 * x),
        "sin 3x": np.sin(3 * x),
        "x(2pi-x)sin x/10": x * (L - x) * np.sin(x) / 10.0,
        "cos x - cos 2x": np.cos(x) - np.cos(2 * x),
    }
    residuals = {name: hum_control(grid, t, gramian=gram).residual for name, t in targets.items()}
    stall = hum_control(grid, 1.0 - np.cos(x), gramian=gram, project=False)
    ok = max(residuals.values()) <= 1e-3 and sym <= 1e-8 and stall.residual > 1e-2 and not stall.converged
    criterion(
        9,
        ok,
        f"max residual {max(residuals.values()):.2e} over 5 targets (<=1e-3), symmetry {sym:.1e} (<=1e-8); "
        f"1-cos x stalls at residual {stall.residual:.3f} after {stall.iterations} iterations (M component {stall.projection_norm:.3f})",
    )
    assert ok


def test_criterion_10_toy_system(criterion):
    T = np.pi / 2
    dt = T / 2000
    c = 1.7
    y2, _ = toy_exact(ControlSignal(np.full(2001, c), dt), T)
    closed_gap = abs(y2 - c * c * (np.pi - 2.0))

    rng = np.random.default_rng(10)
    rk4_gap = 0.0
    for _ in range(100):
        TT = rng.uniform(0.1, 2.0 * np.pi)
        u = random_toy_control(rng, TT, TT / 2000)
        s = toy_simulate(u, TT, TT / 2000)
        e2, e3 = toy_exact(u, TT)
        rk4_gap = max(rk4_gap, abs(s.y2 - e2), abs(s.y3 - e3))

    r2 = toy_obstruction_check(np.pi / 2, n_samples=200, seed=10, dt=np.pi / 2 / 1000)
    r3 = toy_obstruction_check(np.pi, n_samples=200, seed=11, dt=np.pi / 1000)
    ok = closed_gap <= 1e-8 and rk4_gap <= 1e-7 and r2.y2_violations == 0 and r3.y3_violations == 0
    criterion(
        10,
        ok,
        f"|y2(pi/2) - c^2(pi-2)| {closed_gap:.1e}; RK4 vs exact {rk4_gap:.1e} (<=1e-7); "
        f"violations y2 (T=pi/2) {r2.y2_violations}, y3 (T=pi) {r3.y3_violations}; delta_y3 {r3.delta_y3:.3f}",
    )
    assert ok


@pytest.mark.slow
def test_criterion_11_steering(criterion):
    c = make_pair(2, 1)
    T = 1.2 * np.pi / c.p
    rho = 1e-3
    n = int(round(T / 2e-3))
    plane = MPlane(c, Grid(c.L, 256, T / n, T))
    reductions = []
    for angle in (0.0, 2.0 * np.pi / 3.0, 4.0 * np.pi / 3.0):
        yT = rho * (np.cos(angle) * plane.basis[0] + np.sin(angle) * plane.basis[1])
        res = nonlinear_steer(c, None, yT, T, rho, N=256, n_iter=3)
        reductions.append(res.residuals[0] / res.residuals[3])
    ok = min(reductions) >= 2.0
    criterion(11, ok, f"rho=1e-3, T=1.2pi/p: residual reduction over 3 Picard iterations {', '.join(f'{r:.1f}x' for r in reductions)} (>=2x)")
    assert ok


def test_criterion_12_branch_lattice_and_line_checks(criterion):
    loops = [branch_loop_check(z0, 2.0 * np.pi) for z0 in (BRANCH_POINT, -BRANCH_POINT)]
    variation = max(v for loop in loops for f in loop.values() for v in f.values())
    fits = [lattice_sum_fit(10.0 ** np.arange(1, 7), j) for j in (0, 1)]
    bounded = all(np.isfinite(f["constant"]) and f["slope"] <= 0.05 for f in fits)
    floors = [detq_line_floors(L) for L in (2.0 * np.pi, make_pair(2, 1).L)]
    positive = all(f["bounded_away"] and all(r["floor"] > 0 for r in f["reports"]) for f in floors)
    ok = variation <= 1e-6 and bounded and positive
    criterion(
        12,
        ok,
        f"branch-loop single-valuedness {variation:.1e} (<=1e-6); lattice-sum bound constants {fits[0]['constant']:.3f}, {fits[1]['constant']:.3f} "
        f"(log-log slopes {fits[0]['slope']:.3f}, {fits[1]['slope']:.3f}); detQ line floors positive for m=5..12: {positive}",
    )
    assert ok
