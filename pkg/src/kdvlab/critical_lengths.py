"""Critical lengths, their resonant frequencies and the obstruction constant E.

A pair of positive integers (k, l) gives the length

    L = 2 pi sqrt((k^2 + k l + l^2) / 3),

the frequency p, and three purely imaginary exponents eta_j that are the roots
of eta^3 + eta - i p = 0 with e^{eta_1 L} = e^{eta_2 L} = e^{eta_3 L}.  From
them we build

    phi(x) = sum_j (eta_{j+1} - eta_j) e^{eta_{j+2} x}

whose real and imaginary parts span the directions the linearised system
cannot reach, and the travelling field Psi(t, x) = Re(conj(E) phi(x) e^{-i p t}).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .complex_cubic import cubic_roots, near_branch_point, tilde_cubic_roots
from .spectral import scaled_detq


def critical_length(k, l):
    return 2.0 * np.pi * np.sqrt((k * k + k * l + l * l) / 3.0)


def resonant_frequency(k, l):
    s = k * k + k * l + l * l
    return (2 * k + l) * (k - l) * (2 * l + k) / (3.0 * np.sqrt(3.0) * s**1.5)


def pair_exponents(k, l):
    L = critical_length(k, l)
    eta1 = -2j * np.pi * (2 * k + l) / (3.0 * L)
    eta2 = eta1 + 2j * np.pi * k / L
    eta3 = eta2 + 2j * np.pi * l / L
    return np.array([eta1, eta2, eta3])


def representation_count(s):
    """Ordered pairs (k, l) of positive integers with k^2 + k l + l^2 = s."""
    count = 0
    k = 1
    while k * k + k + 1 <= s:
        l = 1
        while k * k + k * l + l * l <= s:
            if k * k + k * l + l * l == s:
                count += 1
            l += 1
        k += 1
    return count


@dataclass(frozen=True)
class CriticalPair:
    k: int
    l: int
    L: float
    p: float
    eta: np.ndarray = field(repr=False)
    E: complex
    dimM: int
    obstruction_applies: bool

    @property
    def E1(self):
        return self.E.real

    @property
    def E2(self):
        return self.E.imag

    @property
    def norm_index(self):
        return self.k * self.k + self.k * self.l + self.l * self.l


def make_pair(k, l) -> CriticalPair:
    k, l = int(k), int(l)
    if k < 1 or l < 1:
        raise ValueError("make_pair: k and l must be positive integers")
    L = critical_length(k, l)
    eta = pair_exponents(k, l)
    p = resonant_frequency(k, l)
    # e^{eta_1 L} = 1 exactly when 2k + l is a multiple of 3
    E = 0j if (2 * k + l) % 3 == 0 else e_direct(eta, p, L, phase=_boundary_phase(k, l))
    return CriticalPair(
        k=k,
        l=l,
        L=float(L),
        p=float(p),
        eta=eta,
        E=E,
        dimM=representation_count(k * k + k * l + l * l),
        obstruction_applies=(2 * k + l) % 3 != 0,
    )


def enumerate_pairs(s_max):
    """All pairs k >= l >= 1 with k^2 + k l + l^2 <= s_max, grouped by length."""
    if s_max < 3:
        raise ValueError("enumerate_pairs: s_max must be at least 3")
    out = []
    k = 1
    while k * k + k + 1 <= s_max:
        for l in range(1, k + 1):
            if k * k + k * l + l * l <= s_max:
                out.append(make_pair(k, l))
        k += 1
    out.sort(key=lambda c: (c.norm_index, -c.k))
    return out


def _boundary_phase(k, l):
    """e^{eta_1 L} - 1 with the phase -2 pi (2k+l)/3 reduced exactly mod 2 pi."""
    r = (2 * k + l) % 3
    if r == 0:
        return 0j
    return complex(np.exp(-2j * np.pi * r / 3.0) - 1.0)


def _eta_sums(eta):
    eta = np.asarray(eta, dtype=complex)
    for j in range(3):
        if eta[j] == 0:
            raise ValueError(f"compute_E: eta_{j + 1} vanishes, direct sums undefined")
    e1 = np.roll(eta, -1)
    e2 = np.roll(eta, -2)
    return np.sum(e2**2 * (e1 - eta)), np.sum((e1 - eta) / e2)


def e_direct(eta, p, L, phase=None):
    """(1/3)(e^{eta_1 L} - 1)(-(2/3) sum eta_{j+2}^2 (eta_{j+1}-eta_j) - i p sum (eta_{j+1}-eta_j)/eta_{j+2})."""
    s_quad, s_recip = _eta_sums(eta)
    if phase is None:
        phase = np.exp(eta[0] * L) - 1.0
    return complex(phase / 3.0 * (-2.0 / 3.0 * s_quad - 1j * p * s_recip))


def e_closed_form(k, l):
    """40 pi^3 / (3 L^3) (e^{eta_1 L} - 1) i k l (k + l)."""
    L = critical_length(k, l)
    return complex(40.0 * np.pi**3 / (3.0 * L**3) * _boundary_phase(k, l) * 1j * k * l * (k + l))


def e_asymptotic(eta, p, L, phase=None):
    """Coefficient of |z|^(-4/3) in the integral of B over [0, L].

    Same sums as ``e_direct`` but the resonant term carries a factor 1/3,
    because lam_2 + lamt_2 = i p z^(-2/3) / 3 at leading order.
    """
    s_quad, s_recip = _eta_sums(eta)
    if phase is None:
        phase = np.exp(eta[0] * L) - 1.0
    return complex(phase / 3.0 * (-2.0 / 3.0 * s_quad - 1j * p / 3.0 * s_recip))


def compute_E(pair: CriticalPair, method="direct"):
    """Obstruction constant by one of three routes.

    ``direct`` and ``closed_form`` are the two textbook expressions; they
    differ by exactly a factor 3.  ``asymptotic`` is the coefficient that the
    integral of B actually approaches, equal to 0.6 times ``direct``.
    """
    phase = _boundary_phase(pair.k, pair.l)
    if method == "closed_form":
        return e_closed_form(pair.k, pair.l)
    if method == "direct":
        return e_direct(pair.eta, pair.p, pair.L, phase)
    if method == "asymptotic":
        return e_asymptotic(pair.eta, pair.p, pair.L, phase)
    raise ValueError(f"compute_E: unknown method {method!r}")


class PsiField:
    """Exact evaluators of phi, Psi and their derivatives for one pair."""

    def __init__(self, pair: CriticalPair):
        self.pair = pair
        eta = pair.eta
        self.coef = np.roll(eta, -1) - eta  # multiplies e^{eta_{j+2} x}
        self.expo = np.roll(eta, -2)
        self.conjE = np.conj(pair.E)

    def phi(self, x, order=0):
        x = np.asarray(x, dtype=float)
        e = np.exp(np.multiply.outer(x, self.expo))
        return e @ (self.coef * self.expo**order)

    def phi_x(self, x):
        return self.phi(x, 1)

    def xi(self, t, x):
        """(xi_1, xi_2) with xi_1 + i xi_2 = phi(x) e^{-i p t}."""
        v = np.multiply.outer(np.exp(-1j * self.pair.p * np.asarray(t, dtype=float)), self.phi(x))
        return v.real, v.imag

    def psi(self, t, x, x_order=0, t_order=0):
        t = np.asarray(t, dtype=float)
        v = np.multiply.outer(np.exp(-1j * self.pair.p * t), self.phi(x, x_order))
        return np.real(self.conjE * (-1j * self.pair.p) ** t_order * v)

    def psi_x(self, t, x):
        return self.psi(t, x, x_order=1)

    def kdv_residual(self, t, x):
        return self.psi(t, x, t_order=1) + self.psi(t, x, x_order=1) + self.psi(t, x, x_order=3)


# ---------------------------------------------------------------------------
# the kernel B(z, x) and its integral over [0, L]


def _transfer_terms(lam, L):
    """Coefficients and exponents of M(x) = sum_j c_j e^{lam_{j+2} x}.

    Returned in log form: M(x) = sum_k sign_k exp(A_k + e_k x - S) / D with
    A_k one of lam L, so nothing overflows before combination.
    """
    dq, shift = scaled_detq(lam, L)
    lj = lam
    l1 = np.roll(lam, -1, axis=-1)
    l2 = np.roll(lam, -2, axis=-1)
    # (e^{lam_{j+1} L} - e^{lam_j L}) e^{lam_{j+2} x}
    a = np.concatenate([l1 * L, lj * L], axis=-1)
    sign = np.array([1.0, 1.0, 1.0, -1.0, -1.0, -1.0])
    e = np.concatenate([l2, l2], axis=-1)
    return a, e, sign, dq, shift


def transfer_profile(z, L, x):
    """M(z, x): the response at position x per unit boundary control at frequency z."""
    lam = cubic_roots(np.asarray(z, dtype=complex))
    a, e, sign, dq, shift = _transfer_terms(lam, L)
    x = np.asarray(x, dtype=float)[..., None]
    ex = np.exp(a - shift[..., None] + x * e)
    return (ex * sign).sum(axis=-1) / dq


class BKernel:
    """Pointwise evaluator of B(z, x) for one real frequency."""

    def __init__(self, z, pair: CriticalPair):
        self.z = float(z)
        self.pair = pair
        L = pair.L
        self.lam = cubic_roots(np.array(complex(z)))
        self.lam_t = tilde_cubic_roots(np.array(complex(z)), pair.p)
        self.m = _transfer_terms(self.lam, L)
        self.mt = _transfer_terms(self.lam_t, L)
        self.psi = PsiField(pair)

    @staticmethod
    def _eval(terms, x):
        a, e, sign, dq, shift = terms
        ex = np.exp(a[None, :] - shift + np.outer(x, e))
        return (ex * sign).sum(axis=-1) / dq

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self._eval(self.m, x) * self._eval(self.mt, x) * self.psi.phi_x(x)


_GK_X = np.array(
    [
        0.991455371120812639206854697526329,
        0.949107912342758524526189684047851,
        0.864864423359769072789712788640926,
        0.741531185599394439863864773280788,
        0.586087235467691130294144845693013,
        0.405845151377397166906606412076961,
        0.207784955007898467600689403773245,
        0.000000000000000000000000000000000,
    ]
)
_GK_WK = np.array(
    [
        0.022935322010529224963732008058970,
        0.063092092629978553290700663189204,
        0.104790010322250183839876322541518,
        0.140653259715525918745189590510238,
        0.169004726639267902826583426598550,
        0.190350578064785409913256402421014,
        0.204432940075298892414161999234649,
        0.209482141084727828012999174891714,
    ]
)
_GK_WG = np.array(
    [
        0.129484966168869693270611432679082,
        0.279705391489276667901467771423780,
        0.381830050505118944950369775488975,
        0.417959183673469387755102040816327,
    ]
)
_NODES = np.concatenate([-_GK_X[:-1], _GK_X[::-1]])
_WK = np.concatenate([_GK_WK[:-1], _GK_WK[::-1]])
_WG = np.zeros(15)
_WG[[1, 3, 5, 7, 9, 11, 13]] = np.concatenate([_GK_WG[:-1], _GK_WG[::-1]])


class QuadratureError(RuntimeError):
    def __init__(self, message, achieved):
        super().__init__(message)
        self.achieved = achieved


def gauss_kronrod(f, a, b, tol, n_initial=16, max_intervals=20000):
    """Adaptive 7/15-point Gauss-Kronrod with bisection of the worst panels."""
    edges = np.linspace(a, b, n_initial + 1)
    lo, hi = edges[:-1], edges[1:]
    total_done, err_done = 0j, 0.0
    n_used = 0
    while lo.size:
        mid = 0.5 * (lo + hi)
        half = 0.5 * (hi - lo)
        x = mid[:, None] + half[:, None] * _NODES[None, :]
        fx = f(x.ravel()).reshape(x.shape)
        k15 = half * (fx @ _WK)
        g7 = half * (fx @ _WG)
        err = np.abs(k15 - g7)
        n_used += lo.size
        # a panel is accepted if it is within its share of the budget
        ok = err <= tol * (hi - lo) / (b - a)
        total_done += k15[ok].sum()
        err_done += err[ok].sum()
        lo, hi = lo[~ok], hi[~ok]
        if lo.size and n_used + 2 * lo.size > max_intervals:
            achieved = err_done + float(np.sum(err[~ok]))
            raise QuadratureError(f"gauss_kronrod: no convergence, achieved {achieved:.3e}", achieved)
        m = 0.5 * (lo + hi)
        lo, hi = np.concatenate([lo, m]), np.concatenate([m, hi])
    return complex(total_done), err_done


def integral_B(z, pair: CriticalPair, quad_tol=None):
    """Adaptive quadrature of the integral of B(z, x) over [0, L]."""
    z = float(z)
    if abs(z) < 1.0:
        raise ValueError("integral_B: |z| must be at least 1")
    if quad_tol is None:
        quad_tol = 1e-10 * abs(z) ** (-4.0 / 3.0)
    kern = BKernel(z, pair)
    n0 = max(16, int(math.ceil(abs(z) ** (1.0 / 3.0) * pair.L / math.pi)))
    val, _ = gauss_kronrod(kern, 0.0, pair.L, quad_tol, n_initial=n0)
    return val


def _int_exp(s, L):
    """Integral of e^{s x} over [0, L] in log form: returns (mantissa, log_shift)."""
    sl = s * L
    pos = np.real(sl) > 0
    small = np.abs(sl) < 1e-3
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        mant = np.where(pos, -np.expm1(-sl) / s, np.expm1(sl) / s)
        # series for tiny s L keeps full accuracy
        ser = L * (1.0 + sl / 2.0 + sl**2 / 6.0 + sl**3 / 24.0)
    mant = np.where(small, ser, mant)
    shift = np.where(pos & ~small, np.real(sl), 0.0)
    phase = np.where(pos & ~small, np.exp(1j * np.imag(sl)), 1.0)
    return mant * phase, shift


def integral_B_closed(z, pair: CriticalPair):
    """Closed-form integral of B over [0, L] as a sum of 108 exponential moments.

    Works for arrays of real z.  Not valid where one of the two determinants
    vanishes; use ``integral_B_regular`` for those frequencies.
    """
    z = np.asarray(z, dtype=float)
    L = pair.L
    lam = cubic_roots(z.astype(complex))
    lam_t = tilde_cubic_roots(z.astype(complex), pair.p)
    a1, e1, s1, d1, sh1 = _transfer_terms(lam, L)
    a2, e2, s2, d2, sh2 = _transfer_terms(lam_t, L)
    psi = PsiField(pair)
    c3, e3 = psi.coef * psi.expo, psi.expo
    # broadcast over (..., 6, 6, 3)
    A = a1[..., :, None, None] + a2[..., None, :, None]
    S = e1[..., :, None, None] + e2[..., None, :, None] + e3[None, None, :]
    sign = s1[:, None, None] * s2[None, :, None] * np.ones(3)[None, None, :]
    mant, shift_i = _int_exp(S, L)
    logmag = np.real(A) + shift_i
    top = logmag.max(axis=(-3, -2, -1), keepdims=True)
    terms = sign * c3 * mant * np.exp(1j * np.imag(A)) * np.exp(logmag - top)
    total = terms.sum(axis=(-3, -2, -1))
    log_scale = top[..., 0, 0, 0] - sh1 - sh2
    return total * np.exp(log_scale) / (d1 * d2)


def singular_frequencies(pair: CriticalPair):
    """Real z where one of the two transfer determinants vanishes or roots collide."""
    from .complex_cubic import BRANCH_POINT

    p = pair.p
    pts = {-p, p, 0.0, 2.0 * p, BRANCH_POINT, -BRANCH_POINT, p + BRANCH_POINT, p - BRANCH_POINT}
    return np.array(sorted(pts))


def integral_B_regular(z, pair: CriticalPair, guard=1e-4, offset=2e-4):
    """Closed-form integral with removable points replaced by a symmetric average."""
    z = np.asarray(z, dtype=float)
    out = np.array(integral_B_closed(z, pair), dtype=complex)
    sing = singular_frequencies(pair)
    dist = np.min(np.abs(z[..., None] - sing), axis=-1)
    bad = (dist < guard) | ~np.isfinite(out)
    if np.any(bad):
        zb = z[bad]
        near = sing[np.argmin(np.abs(zb[:, None] - sing[None, :]), axis=1)]
        zb = np.where(np.abs(zb - near) < guard, near, zb)
        out[bad] = 0.5 * (integral_B_closed(zb + offset, pair) + integral_B_closed(zb - offset, pair))
    return out


def m_basis(pair: CriticalPair, x):
    """Orthonormal (discrete L2, spacing x[1]-x[0]) basis of span{Re phi, Im phi}."""
    x = np.asarray(x, dtype=float)
    h = x[1] - x[0]
    psi = PsiField(pair)
    cols = [psi.phi(x).real, psi.phi(x).imag]
    basis = []
    for v in cols:
        w = v.copy()
        for b in basis:
            w -= (w @ b) * h * b
        n = np.sqrt(w @ w * h)
        if n > 1e-8 * np.sqrt(v @ v * h + 1e-300):
            basis.append(w / n)
    return np.array(basis)


PAIR_COLUMNS = ["k", "l", "L", "p", "Re E", "Im E", "dimM", "obstruction_applies"]


def pair_rows(pairs: Iterable[CriticalPair]):
    for c in pairs:
        yield [c.k, c.l, repr(c.L), repr(c.p), repr(c.E.real), repr(c.E.imag), c.dimM, str(c.obstruction_applies).lower()]


def write_pairs_csv(path, pairs):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PAIR_COLUMNS)
        w.writerows(pair_rows(pairs))
