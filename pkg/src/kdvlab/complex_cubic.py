"""Roots of the dispersion cubic  lam^3 + lam + i z = 0.

Roots are computed in closed form (Cardano on the depressed cubic), then
polished with Newton steps.  Within ``BRANCH_RADIUS`` of the two branch
points z = +-2/(3 sqrt 3), where two roots collide, the local square-root
expansion is used as the starting point instead.

All routines accept scalars or arrays; ``cubic_roots`` is the vectorised
workhorse and returns an array of shape ``z.shape + (3,)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BRANCH_POINT = 2.0 / (3.0 * np.sqrt(3.0))
BRANCH_RADIUS = 1e-6
ORDERING = "by-real-part"

# leading coefficients of the large-z expansion, indexed 1..3 as (mu_1, mu_2, mu_3)
ASYMPTOTIC_MU = np.exp(-1j * np.pi / 6 - 2j * np.pi * np.arange(1, 4) / 3.0)
ASYMPTOTIC_MU_TILDE = np.exp(1j * np.pi / 6 + 2j * np.pi * np.arange(1, 4) / 3.0)

_OMEGA = np.exp(2j * np.pi * np.arange(3) / 3.0)


@dataclass(frozen=True)
class RootTriple:
    """The three roots at one frequency, with the ordering convention used."""

    z: complex
    roots: np.ndarray
    near_branch: bool
    ordering: str = ORDERING

    def vieta_residuals(self):
        lam = self.roots
        s1 = lam.sum()
        s2 = lam[0] * lam[1] + lam[0] * lam[2] + lam[1] * lam[2]
        s3 = lam.prod()
        return np.array([abs(s1), abs(s2 - 1.0), abs(s3 + 1j * self.z)])


def _cardano(z):
    q = 1j * z
    disc = np.sqrt(q * q / 4.0 + 1.0 / 27.0)
    a_plus = -q / 2.0 + disc
    a_minus = -q / 2.0 - disc
    a = np.where(np.abs(a_plus) >= np.abs(a_minus), a_plus, a_minus)
    c = a ** (1.0 / 3.0)
    c = c[..., None] * _OMEGA
    return c - 1.0 / (3.0 * c)


def _branch_expansion(z):
    """Square-root expansion of the roots around the nearest branch point."""
    sign = np.where(np.real(z) >= 0.0, 1.0, -1.0)
    eps = z - sign * BRANCH_POINT
    double = -1j * sign / np.sqrt(3.0)
    # 3 lam_d (delta)^2 = -i eps  at leading order
    delta = np.sqrt(-1j * eps / (3.0 * double))
    # the simple root moves by -i eps / f'(lam_s), f'(lam_s) = -3
    simple = 2j * sign / np.sqrt(3.0) + 1j * eps / 3.0
    return np.stack([double + delta, double - delta, simple], axis=-1)


def _newton(lam, z, steps):
    iz = (1j * z)[..., None]
    for _ in range(steps):
        f = lam**3 + lam + iz
        df = 3.0 * lam**2 + 1.0
        safe = np.abs(df) > 1e-300
        step = np.where(safe, f / np.where(safe, df, 1.0), 0.0)
        trial = lam - step
        better = np.abs(trial**3 + trial + iz) <= np.abs(f)
        lam = np.where(better, trial, lam)
    return lam


def _sort_roots(lam, z):
    """Sort by real part; near-equal real parts are ordered by imaginary part."""
    tol = 1e-12 * (1.0 + np.abs(z))[..., None] ** (1.0 / 3.0)
    order = np.argsort(np.real(lam), axis=-1, kind="stable")
    lam = np.take_along_axis(lam, order, axis=-1)
    # three-element insertion pass on the tie relation
    for i, j in ((0, 1), (1, 2), (0, 1)):
        a, b = lam[..., i], lam[..., j]
        tie = np.abs(np.real(a) - np.real(b)) <= tol[..., 0]
        swap = tie & (np.imag(a) > np.imag(b))
        lam[..., i], lam[..., j] = np.where(swap, b, a), np.where(swap, a, b)
    return lam


def near_branch_point(z, radius=BRANCH_RADIUS):
    z = np.asarray(z, dtype=complex)
    return (np.abs(z - BRANCH_POINT) < radius) | (np.abs(z + BRANCH_POINT) < radius)


def cubic_roots(z, newton_steps=2):
    """Sorted roots for an array of frequencies, shape ``z.shape + (3,)``."""
    z = np.asarray(z, dtype=complex)
    if not np.all(np.isfinite(z)):
        raise ValueError("cubic_roots: frequency must be finite")
    lam = _cardano(z)
    near = near_branch_point(z)
    if np.any(near):
        lam = np.where(near[..., None], _branch_expansion(z), lam)
    lam = _newton(lam, z, newton_steps)
    return _sort_roots(lam, z)


def solve_cubic(z) -> RootTriple:
    z = complex(z)
    if not (np.isfinite(z.real) and np.isfinite(z.imag)):
        raise ValueError(f"solve_cubic: non-finite frequency {z!r}")
    lam = cubic_roots(np.array(z))
    return RootTriple(z=z, roots=lam, near_branch=bool(near_branch_point(z)))


def tilde_cubic_roots(z, p):
    """Conjugated roots at the shifted frequency z - p, re-sorted."""
    z = np.asarray(z, dtype=complex)
    lam = np.conj(cubic_roots(z - p))
    return _sort_roots(lam, np.conj(z - p))


def tilde_roots(z, p) -> RootTriple:
    z = float(np.real(z))
    lam = tilde_cubic_roots(np.array(z), float(p))
    return RootTriple(z=complex(z - p), roots=lam, near_branch=bool(near_branch_point(z - p)))


def asymptotic_roots(z, tilde=False):
    """Two-term large-z expansion  mu z^(1/3) - z^(-1/3)/(3 mu)  for z > 0."""
    w = np.asarray(z, dtype=complex) ** (1.0 / 3.0)
    mu = ASYMPTOTIC_MU_TILDE if tilde else ASYMPTOTIC_MU
    w = w[..., None]
    return mu * w - 1.0 / (3.0 * mu * w)


def match_roots(a, b):
    """Permutation of ``b`` closest to ``a`` (three roots, brute force)."""
    from itertools import permutations

    best = None
    for perm in permutations(range(3)):
        cand = b[list(perm)]
        d = np.max(np.abs(cand - a))
        if best is None or d < best[0]:
            best = (d, cand)
    return best[1], best[0]
