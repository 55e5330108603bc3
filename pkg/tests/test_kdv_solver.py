import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kdvlab.critical_lengths import PsiField, make_pair
from kdvlab.kdv_solver import (
    CrankNicolson,
    Grid,
    ResonanceError,
    SourceTerm,
    adjoint_control,
    boundary_response,
    bridge_residual,
    empirical_frequency_response,
    final_state,
    frequency_response,
    kdvb_periodic_solve,
    kdvb_symbol,
    psi_bracket_residual,
    read_trajectory_binary,
    smoothing_constant,
    solve_linear,
    solve_nonlinear,
    write_trajectory_binary,
    write_trajectory_csv,
)

PAIR = make_pair(2, 1)
FIELD = PsiField(PAIR)


def test_grid_validation():
    with pytest.raises(ValueError):
        Grid(1.0, 16, 1e-3, 1.0)
    with pytest.raises(ValueError):
        Grid(1.0, 64, 0.0, 1.0)


def test_zero_data_gives_zero_trajectory():
    g = Grid(PAIR.L, 64, 1e-2, 0.5)
    assert not np.any(solve_linear(g).states)
    assert not np.any(solve_nonlinear(g).states)


def _psi_error(N, dt):
    g = Grid(PAIR.L, N, dt, 1.0)
    x = g.x_interior
    yT = solve_linear(g, y0=FIELD.psi(0.0, x), store_every=g.n_steps).states[-1]
    exact = FIELD.psi(1.0, x)
    return np.linalg.norm(yT - exact) / np.linalg.norm(exact)


def test_exact_solution_convergence():
    e1, e2 = _psi_error(128, 4e-3), _psi_error(256, 2e-3)
    assert e2 <= 5e-3
    assert e1 / e2 >= 1.8


@pytest.mark.parametrize("N", [64, 128, 256])
def test_crank_nicolson_is_stable(N):
    g = Grid(PAIR.L, N, 1e-3, 1.0)
    assert CrankNicolson(g).amplification_radius() <= 1.0 + 10 * g.dt


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_adjoint_is_transpose(seed):
    rng = np.random.default_rng(seed)
    g = Grid(PAIR.L, 48, 1e-2, 0.3)
    u = rng.standard_normal(g.n_steps + 1)
    psi = rng.standard_normal(g.N - 1)
    lhs = final_state(g, u) @ psi
    rhs = adjoint_control(g, psi) @ u
    assert abs(lhs - rhs) <= 1e-10 * (abs(lhs) + np.linalg.norm(u) * np.linalg.norm(psi) * 1e-3)


def _energy_defect(N, dt):
    g = Grid(2 * np.pi, N, dt, 1.0)
    u = np.sin(3 * g.t) * np.sin(np.pi * g.t)
    tr = solve_linear(g, u=u)
    e = tr.energy()
    rate = (e[2:] - e[:-2]) / (2 * dt)
    expected = 0.5 * (tr.u[1:-1] ** 2 - tr.trace_left[1:-1] ** 2)
    return np.max(np.abs(rate - expected)) / np.max(np.abs(expected))


def test_energy_identity_converges():
    d1, d2 = _energy_defect(128, 4e-3), _energy_defect(256, 2e-3)
    assert d2 < d1
    assert d2 < 0.1


def test_free_evolution_does_not_gain_energy():
    g = Grid(PAIR.L, 128, 2e-3, 1.0)
    x = g.x_interior
    tr = solve_linear(g, y0=np.sin(np.pi * x / PAIR.L) ** 3)
    e = tr.energy()
    assert np.all(np.diff(e) <= g.h * g.dt * e[0])


def test_nonlinear_power_series_scaling():
    g = Grid(PAIR.L, 128, 4e-3, 1.0)
    x = g.x_interior
    lin = solve_linear(g, y0=FIELD.psi(0.0, x), store_every=25).states
    gaps = []
    for eps in (1e-2, 5e-3, 2.5e-3):
        nl = solve_nonlinear(g, y0=eps * FIELD.psi(0.0, x), store_every=25).states
        gaps.append(np.max(np.abs(nl - eps * lin)) / eps**2)
    assert max(gaps) / min(gaps) < 1.1


def test_psi_bracket_defect_is_first_order_or_better():
    c = []
    for N, dt in ((64, 8e-3), (128, 4e-3)):
        g = Grid(PAIR.L, N, dt, 0.5)
        traj = solve_nonlinear(g, y0=0.3 * FIELD.psi(0.0, g.x_interior))
        defect, scale = psi_bracket_residual(traj, FIELD)
        c.append(defect / (g.h + dt))
        assert scale > 0
    assert c[1] <= c[0]


def test_source_term_validation():
    g = Grid(PAIR.L, 64, 1e-2, 0.1)
    shape = (g.n_steps + 1, g.N + 1)
    bad_mean = SourceTerm(np.ones(shape), np.zeros(shape))
    with pytest.raises(ValueError, match="zero mean"):
        solve_linear(g, f=bad_mean)
    f2 = np.ones(shape)
    with pytest.raises(ValueError, match="vanish"):
        solve_linear(g, f=SourceTerm(np.zeros(shape), f2))


def test_flux_source_matches_mean_free_form():
    # f = d/dx (g w) given once as a flux and once as the explicit derivative g w'
    def run(N):
        g = Grid(PAIR.L, N, 2e-3, 0.2)
        x = g.x
        k = np.pi / PAIR.L
        w = np.sin(k * x) ** 2
        wx = 2 * k * np.sin(k * x) * np.cos(k * x)
        gt = np.sin(5 * g.t)[:, None]
        flux = solve_linear(g, f=SourceTerm(np.zeros((g.t.size, N + 1)), gt * w)).states[-1]
        direct = solve_linear(g, f=SourceTerm(gt * wx, np.zeros((g.t.size, N + 1)))).states[-1]
        return np.linalg.norm(flux - direct) / np.linalg.norm(direct)

    coarse, fine = run(64), run(128)
    assert fine < 1e-2
    assert coarse / fine > 3.0


def test_kdvb_single_mode_closed_form():
    n_modes, T, dt = 8, 1.0, 1e-2
    t = dt * np.arange(int(T / dt) + 1)
    f = np.zeros((t.size, n_modes), dtype=complex)
    f[:, 1] = t  # linear in time: the integrator is exact for it
    traj = kdvb_periodic_solve(f, T, dt)
    a = kdvb_symbol(1)
    exact = (a * T - 1 + np.exp(-a * T)) / a**2
    assert abs(traj.modes[-1, 1] - exact) <= 1e-10 * abs(exact)


def test_kdvb_steady_sinusoid():
    z, n_modes, T, dt = 1.3, 8, 8.0, 1e-4
    t = dt * np.arange(int(round(T / dt)) + 1)
    f = np.zeros((t.size, n_modes), dtype=complex)
    f[:, 2] = np.exp(1j * z * t)
    traj = kdvb_periodic_solve(f, T, dt)
    steady = np.exp(1j * z * T) / (1j * z + kdvb_symbol(2))
    assert abs(traj.modes[-1, 2] - steady) <= 1e-8 * abs(steady) + abs(np.exp(-kdvb_symbol(2).real * T))


def test_kdvb_rejects_mean_forcing():
    f = np.ones((11, 4), dtype=complex)
    with pytest.raises(ValueError):
        kdvb_periodic_solve(f, 0.1, 1e-2)


def test_kdvb_smoothing_after_support():
    n_modes, dt = 32, 1e-3
    t = dt * np.arange(2001)
    x = 2 * np.pi * np.arange(n_modes) / n_modes
    bump = np.where(t < 1.0, np.sin(np.pi * np.clip(t, 0, 1)) ** 2, 0.0)
    field = bump[:, None] * (np.cos(x) + 0.5 * np.sin(3 * x))[None, :]
    f = np.fft.fft(field, axis=1) / n_modes
    traj = kdvb_periodic_solve(f, 2.0, dt)
    late = t >= 1.5
    yx = traj.derivative_x()[late]
    a = kdvb_symbol(np.fft.fftfreq(n_modes, d=1.0 / n_modes))
    yt = np.real(np.fft.ifft(-a * traj.modes[late], axis=1) * n_modes)
    l1 = np.sum(np.abs(field)) * dt * (2 * np.pi / n_modes)
    assert np.max(np.abs(yt) + np.abs(yx)) <= smoothing_constant(0.5, n_modes) * l1


def test_bridge_residual_decreases():
    out = []
    for N, dt in ((64, 4e-3), (128, 2e-3)):
        g = Grid(np.pi, N, dt, 0.2)
        x = g.x_interior
        tr = solve_linear(g, y0=np.sin(x) ** 4)
        res, scale = bridge_residual(tr)
        out.append(res / scale)
    assert out[1] < out[0]


def test_frequency_response_matches_simulation():
    g = Grid(PAIR.L, 512, 1e-2, 1.0)
    m_emp, trace_emp = empirical_frequency_response(g, 1.0, PAIR.L / 2)
    m = frequency_response(1.0, PAIR.L, PAIR.L / 2)
    b = boundary_response(1.0, PAIR.L)
    assert abs(m_emp - m) <= 0.02 * abs(m)
    assert abs(trace_emp - b) <= 0.05 * abs(b)


def test_resonance_guard():
    with pytest.raises(ResonanceError):
        frequency_response(PAIR.p + 1e-4, PAIR.L, 1.0)
    assert np.isfinite(abs(frequency_response(PAIR.p + 1e-4, PAIR.L, 1.0, guard=False)))


def test_trajectory_export_roundtrip(tmp_path):
    g = Grid(PAIR.L, 32, 1e-2, 0.05)
    tr = solve_linear(g, y0=np.sin(np.pi * g.x_interior / PAIR.L) ** 2)
    write_trajectory_binary(tmp_path / "a.bin", tr)
    t, x, Y = read_trajectory_binary(tmp_path / "a.bin")
    assert np.array_equal(Y, tr.full_states()) and np.array_equal(t, tr.t)
    assert (tmp_path / "a.bin").read_bytes()[:8] == b"KDVTRAJ1"
    write_trajectory_csv(tmp_path / "a.csv", tr)
    rows = (tmp_path / "a.csv").read_text().splitlines()
    assert len(rows) == tr.t.size + 1
    assert np.allclose(np.array(rows[1].split(","), dtype=float)[1:], tr.full_states()[0])
