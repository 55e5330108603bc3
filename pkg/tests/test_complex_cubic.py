import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kdvlab.complex_cubic import (
    ASYMPTOTIC_MU,
    ASYMPTOTIC_MU_TILDE,
    BRANCH_POINT,
    asymptotic_roots,
    cubic_roots,
    match_roots,
    solve_cubic,
    tilde_roots,
)

finite = st.floats(min_value=-1e3, max_value=1e3, allow_nan=False, allow_infinity=False)
frequencies = st.builds(complex, finite, finite)


def as_set(a):
    return np.sort_complex(np.round(np.asarray(a), 10))


def reference_roots(z):
    # companion-matrix eigenvalues, independent of the closed form
    return np.roots([1.0, 0.0, 1.0, 1j * z])


def test_zero_frequency():
    r = solve_cubic(0)
    assert np.allclose(r.roots, [-1j, 0.0, 1j], atol=1e-15)
    assert r.ordering == "by-real-part"


def test_branch_point_has_double_root():
    r = solve_cubic(BRANCH_POINT)
    d = -1j / np.sqrt(3.0)
    assert np.allclose(np.sort_complex(r.roots), np.sort_complex([d, d, 2j / np.sqrt(3.0)]), atol=1e-7)
    assert r.near_branch
    assert np.max(np.abs(r.roots**3 + r.roots + 1j * BRANCH_POINT)) <= 1e-12


def test_large_frequency_matches_expansion():
    z = 1e6
    lam = solve_cubic(z).roots
    mu = ASYMPTOTIC_MU[2]
    expected = mu * z ** (1 / 3) - z ** (-1 / 3) / (3 * mu)
    assert np.min(np.abs(lam - expected)) <= 10 * z ** (-2 / 3)


def test_tilde_roots_large_frequency():
    z = 1e6
    lam = tilde_roots(z, 1.0).roots
    assert np.min(np.abs(lam / z ** (1 / 3) - ASYMPTOTIC_MU_TILDE[2])) <= 1e-3


def test_tilde_roots_definition():
    a = tilde_roots(0.5, 0.2).roots
    b = np.conj(solve_cubic(0.3).roots)
    assert np.allclose(as_set(a), as_set(b), atol=1e-12)
    c = tilde_roots(0.7, 0.0).roots
    assert np.allclose(as_set(c), as_set(np.conj(solve_cubic(0.7).roots)), atol=1e-12)


def test_non_finite_rejected():
    with pytest.raises(ValueError):
        solve_cubic(complex("nan"))
    with pytest.raises(ValueError):
        cubic_roots(np.array([1.0, np.inf]))


@settings(max_examples=300, deadline=None)
@given(frequencies)
def test_vieta_and_residuals(z):
    r = solve_cubic(z)
    assert np.max(r.vieta_residuals()) <= 1e-12 * (1 + abs(z))
    assert np.max(np.abs(r.roots**3 + r.roots + 1j * z)) <= 1e-12 * (1 + abs(z))


@settings(max_examples=200, deadline=None)
@given(frequencies)
def test_agrees_with_companion_matrix(z):
    lam = solve_cubic(z).roots
    ref = reference_roots(z)
    # matched distance; the companion solver loses digits only near the double root
    if min(abs(z - BRANCH_POINT), abs(z + BRANCH_POINT)) > 1e-3:
        assert max(np.min(np.abs(ref - r)) for r in lam) <= 1e-8 * (1 + abs(z)) ** (1 / 3)


@settings(max_examples=200, deadline=None)
@given(frequencies)
def test_ordering_by_real_part(z):
    lam = solve_cubic(z).roots
    assert np.all(np.diff(lam.real) >= -1e-12 * (1 + abs(z)) ** (1 / 3))


@settings(max_examples=200, deadline=None)
@given(frequencies)
def test_conjugation_symmetry(z):
    a = solve_cubic(-np.conj(z)).roots
    b = np.conj(solve_cubic(z).roots)
    assert max(np.min(np.abs(b - r)) for r in a) <= 1e-10 * (1 + abs(z)) ** (1 / 3)


@pytest.mark.parametrize("center", [BRANCH_POINT, -BRANCH_POINT])
def test_continuity_around_branch_points(center):
    radius = 1e-3
    theta = 2 * np.pi * np.arange(257) / 256
    lam = cubic_roots(np.array(complex(center + radius)))
    jumps = []
    for t in theta[1:]:
        nxt, dist = match_roots(lam, cubic_roots(np.array(center + radius * np.exp(1j * t))))
        jumps.append(dist)
        lam = nxt
    # sqrt(eps) behaviour: roots move by ~ sqrt(radius) * (2 pi / 256) per sample
    assert max(jumps) <= 0.1 * np.sqrt(radius)


def test_asymptotic_roots_shape():
    z = np.array([1e4, 1e5])
    assert asymptotic_roots(z).shape == (2, 3)
