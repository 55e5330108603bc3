import csv
import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kdvlab.complex_cubic import cubic_roots
from kdvlab.critical_lengths import (
    PsiField,
    QuadratureError,
    compute_E,
    e_direct,
    enumerate_pairs,
    gauss_kronrod,
    integral_B,
    integral_B_closed,
    m_basis,
    make_pair,
    write_pairs_csv,
)

pairs = st.tuples(st.integers(1, 20), st.integers(1, 20))


def test_smallest_pair():
    (c,) = enumerate_pairs(3)
    assert (c.k, c.l) == (1, 1)
    assert c.L == pytest.approx(2 * np.pi, abs=1e-14)
    assert c.p == 0 and not c.obstruction_applies
    assert c.E == 0


def test_pair_21_values():
    ks = {(c.k, c.l): c for c in enumerate_pairs(7)}
    c = ks[(2, 1)]
    assert c.L == pytest.approx(2 * np.pi * np.sqrt(7 / 3), rel=1e-15)
    assert c.p == pytest.approx(0.207827, abs=1e-6)
    assert c.p == pytest.approx(20 / (3 * np.sqrt(3) * 7**1.5), rel=1e-14)
    assert c.obstruction_applies and c.dimM == 2


def test_closed_form_value_21():
    # -5 (3/7)^{3/2} (sqrt3 + 3i), evaluated independently
    expected = -5 * (3 / 7) ** 1.5 * (np.sqrt(3) + 3j)
    assert compute_E(make_pair(2, 1), "closed_form") == pytest.approx(expected, rel=1e-13)
    assert abs(expected - (-2.4299 - 4.2086j)) < 1e-3


def test_E_variants_are_fixed_multiples():
    c = make_pair(2, 1)
    closed = compute_E(c, "closed_form")
    direct = compute_E(c, "direct")
    asym = compute_E(c, "asymptotic")
    assert closed / direct == pytest.approx(3.0, rel=1e-13)
    assert asym / direct == pytest.approx(0.6, rel=1e-13)
    assert c.E == direct
    with pytest.raises(ValueError):
        compute_E(c, "other")


@pytest.mark.parametrize("kl", [(1, 1), (3, 3), (2, 2), (4, 1)])
def test_E_vanishes_on_multiples_of_three(kl):
    c = make_pair(*kl)
    assert c.E == 0 and not c.obstruction_applies
    assert compute_E(c, "closed_form") == 0


def test_equal_indices_give_zero_frequency():
    for k in range(1, 8):
        assert make_pair(k, k).p == 0


def test_direct_sum_requires_nonzero_eta():
    c = make_pair(1, 1)
    with pytest.raises(ValueError, match="eta_"):
        e_direct(c.eta, c.p, c.L)


def test_invalid_indices():
    with pytest.raises(ValueError):
        make_pair(0, 1)
    with pytest.raises(ValueError):
        enumerate_pairs(2)


@settings(max_examples=80, deadline=None)
@given(pairs)
def test_eta_invariants(kl):
    c = make_pair(*kl)
    eta = c.eta
    assert np.max(np.abs(eta**3 + eta - 1j * c.p)) <= 1e-12 * max(1.0, abs(c.p))
    e = np.exp(eta * c.L)
    assert np.max(np.abs(e - e[0])) <= 1e-12
    d = np.roll(eta, -1) - eta
    assert abs(d.sum()) <= 1e-13
    assert abs(np.sum(np.roll(eta, -2) * d)) <= 1e-13 * max(1.0, np.max(np.abs(eta)) ** 2)
    roots = cubic_roots(np.array(-c.p + 0j))
    assert max(np.min(np.abs(roots - v)) for v in eta) <= 1e-10 * max(1.0, abs(c.p) ** (1 / 3))


@settings(max_examples=60, deadline=None)
@given(pairs)
def test_E_conjugate_under_negation(kl):
    c = make_pair(*kl)
    if not c.obstruction_applies:
        return
    assert e_direct(-c.eta, -c.p, c.L) == pytest.approx(np.conj(e_direct(c.eta, c.p, c.L)), rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.tuples(st.integers(1, 6), st.integers(1, 6)))
def test_psi_field_invariants(kl):
    c = make_pair(*kl)
    f = PsiField(c)
    ends = np.array([0.0, c.L])
    scale = np.max(np.abs(f.phi(np.linspace(0, c.L, 50))))
    assert np.max(np.abs(f.phi(ends))) <= 1e-12 * max(1.0, scale)
    assert np.max(np.abs(f.phi_x(ends))) <= 1e-12 * max(1.0, scale)
    t = np.linspace(0, 3, 7)
    x = np.linspace(0, c.L, 11)
    if c.E != 0:
        ref = np.max(np.abs(f.psi(t, x, x_order=3)))
        assert np.max(np.abs(f.kdv_residual(t, x))) <= 1e-10 * max(1.0, ref)
        xi1, xi2 = f.xi(t, x)
        assert np.allclose(f.psi(t, x), c.E.real * xi1 + c.E.imag * xi2, atol=1e-12)


def test_dimension_counts():
    dims = {(c.k, c.l): c.dimM for c in enumerate_pairs(200)}
    assert dims[(1, 1)] == 1
    assert dims[(2, 1)] == 2
    # 49 = 7^2 has representations (5,3), (3,5) and (7,0) is excluded, so (5,3) -> 2
    assert dims[(5, 3)] == 2
    # 147 = 3 * 49 = 7^2 + 7*7 + 7^2 also equals 11^2 + 11*2 + 2^2
    assert dims[(7, 7)] == 3


def test_integral_routes_agree():
    c = make_pair(2, 1)
    for z in (10.0, 1e3, -1e3, 1e4):
        tol = 1e-9 * abs(z) ** (-4 / 3)
        quad = integral_B(z, c, quad_tol=tol)
        closed = integral_B_closed(z, c)
        assert abs(quad - closed) <= 10 * tol + 1e-12 * abs(closed)


def test_integral_asymptotic_coefficient():
    c = make_pair(2, 1)
    E_asym = compute_E(c, "asymptotic")
    v = 1e6 ** (4 / 3) * integral_B_closed(1e6, c)
    assert abs(v - E_asym) / abs(E_asym) < 0.01


def test_reflection_symmetry():
    c = make_pair(2, 1)
    mirrored = dataclasses.replace(c, eta=-c.eta, p=-c.p, E=np.conj(c.E))
    a = integral_B_closed(-1e4, c)
    b = np.conj(integral_B_closed(1e4, mirrored))
    assert abs(a - b) <= 1e-10 * abs(a)


def test_gauss_kronrod_reports_failure():
    with pytest.raises(QuadratureError) as info:
        gauss_kronrod(lambda x: np.sin(1 / np.maximum(x, 1e-300)), 0.0, 1.0, 1e-14, max_intervals=20)
    assert info.value.achieved > 0


def test_gauss_kronrod_polynomial():
    val, _ = gauss_kronrod(lambda x: x**5 + 0j, 0.0, 2.0, 1e-13)
    assert val == pytest.approx(64 / 6, rel=1e-13)


def test_m_basis_orthonormal_and_clamped():
    c = make_pair(2, 1)
    x = np.linspace(0, c.L, 2001)
    h = x[1] - x[0]
    B = m_basis(c, x)
    assert B.shape == (2, x.size)
    gram = h * B @ B.T
    assert np.allclose(gram, np.eye(2), atol=1e-12)
    assert np.max(np.abs(B[:, [0, -1]])) <= 1e-12


def test_m_basis_length_two_pi():
    c = make_pair(1, 1)
    x = np.linspace(0, c.L, 1001)
    B = m_basis(c, x)
    assert B.shape[0] == 1
    ref = 1 - np.cos(x)
    ref /= np.linalg.norm(ref)
    v = B[0] / np.linalg.norm(B[0])
    assert min(np.max(np.abs(v - ref)), np.max(np.abs(v + ref))) <= 1e-12
    h = x[1] - x[0]
    assert abs(h * B[0] @ np.sin(x)) <= 1e-12


def test_pairs_csv(tmp_path):
    path = tmp_path / "pairs.csv"
    write_pairs_csv(path, enumerate_pairs(13))
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["k", "l", "L", "p", "Re E", "Im E", "dimM", "obstruction_applies"]
    assert len(rows) == 1 + len(enumerate_pairs(13))
