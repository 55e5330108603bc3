"""Boundary determinants and transfer functions of the linear KdV resolvent.

For a frequency z and length L, with lam_j the roots of lam^3 + lam + i z = 0:

    Q      = [[1, 1, 1], [e^{lam_j L}], [lam_j e^{lam_j L}]]
    detQ   = sum_j (lam_{j+1} - lam_j) e^{-lam_{j+2} L}
    P      = sum_j lam_j (e^{lam_{j+2} L} - e^{lam_{j+1} L})
    Xi     = -(lam_2 - lam_1)(lam_3 - lam_2)(lam_1 - lam_3)
    G = P / Xi,   H = detQ / Xi

P, detQ and Xi flip sign under a transposition of the roots, G and H do not,
and both extend to entire functions of z.  Near the two branch points, where
Xi vanishes, they are evaluated as the mean over a small circle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import zeta

from .complex_cubic import BRANCH_POINT, cubic_roots

XI_FLOOR = 1e-8
REMOVABLE_RADIUS = 1e-4


def _roll(lam, k):
    return np.roll(lam, -k, axis=-1)


def scaled_detq(lam, L):
    """detQ as (mantissa, log_shift) with detQ = mantissa * exp(log_shift)."""
    lam = np.asarray(lam, dtype=complex)
    expo = -_roll(lam, 2) * L
    shift = np.max(np.real(expo), axis=-1)
    terms = (_roll(lam, 1) - lam) * np.exp(expo - shift[..., None])
    return terms.sum(axis=-1), shift


def scaled_p(lam, L):
    """P as (mantissa, log_shift)."""
    lam = np.asarray(lam, dtype=complex)
    shift = np.max(np.real(lam) * L, axis=-1)
    e = np.exp(lam * L - shift[..., None])
    terms = lam * (_roll(e, 2) - _roll(e, 1))
    return terms.sum(axis=-1), shift


def xi_of(lam):
    lam = np.asarray(lam, dtype=complex)
    l1, l2, l3 = lam[..., 0], lam[..., 1], lam[..., 2]
    return -(l2 - l1) * (l3 - l2) * (l1 - l3)


def q_matrix(lam, L):
    e = np.exp(np.asarray(lam, dtype=complex) * L)
    return np.array([np.ones(3, dtype=complex), e, lam * e])


def _raw_gh(z, L):
    lam = cubic_roots(z)
    dq, sq = scaled_detq(lam, L)
    pp, sp = scaled_p(lam, L)
    xi = xi_of(lam)
    # xi vanishes at removable points; those entries are replaced by the caller
    with np.errstate(divide="ignore", invalid="ignore"):
        return pp * np.exp(sp) / xi, dq * np.exp(sq) / xi, xi


def gh_values(z, L):
    """Vectorised (G, H); removable points are handled by circle averaging."""
    z = np.asarray(z, dtype=complex)
    g, h, xi = _raw_gh(z, L)
    bad = np.abs(xi) <= XI_FLOOR
    if np.any(bad):
        zb = z[bad]
        ring = REMOVABLE_RADIUS * np.exp(2j * np.pi * (np.arange(4) + 0.5) / 4.0)
        gr, hr, _ = _raw_gh(zb[..., None] + ring, L)
        g = np.array(g, dtype=complex)
        h = np.array(h, dtype=complex)
        g[bad] = gr.mean(axis=-1)
        h[bad] = hr.mean(axis=-1)
    return g, h


def h_value(z, L):
    return gh_values(z, L)[1]


def h_derivative(z, L, step=1e-6):
    z = np.asarray(z, dtype=complex)
    return (h_value(z + step, L) - h_value(z - step, L)) / (2.0 * step)


@dataclass(frozen=True)
class SpectralSample:
    z: complex
    L: float
    Q: np.ndarray
    detQ: complex
    P: complex
    Xi: complex
    G: complex
    H: complex
    roots: np.ndarray = field(repr=False)


def spectral_sample(z, L) -> SpectralSample:
    if not L > 0:
        raise ValueError(f"spectral_sample: length must be positive, got {L}")
    z = complex(z)
    lam = cubic_roots(np.array(z))
    dq, sq = scaled_detq(lam, L)
    pp, sp = scaled_p(lam, L)
    xi = complex(xi_of(lam))
    g, h = gh_values(np.array(z), L)
    return SpectralSample(
        z=z,
        L=float(L),
        Q=q_matrix(lam, L),
        detQ=complex(dq * np.exp(sq)),
        P=complex(pp * np.exp(sp)),
        Xi=xi,
        G=complex(g),
        H=complex(h),
        roots=lam,
    )


@dataclass(frozen=True)
class EigenFrequency:
    z: float
    multiplicity: int
    lambda_at_root: np.ndarray
    source: str
    h_abs: float = 0.0
    h_prime_abs: float = 0.0
    resolved: bool = True


def find_real_zeros_H(L, z_window, step=1e-3, max_newton=50):
    """Real zeros of H in a window: grid minima of |H| refined by complex Newton.

    Every grid minimum is refined.  Minima whose Newton iteration settles on a
    real zero are returned; iterations that fail to settle within
    ``max_newton`` steps come back with ``resolved=False``.
    """
    lo, hi = float(z_window[0]), float(z_window[1])
    if not (np.isfinite(lo) and np.isfinite(hi) and hi > lo):
        raise ValueError("find_real_zeros_H: window must be a bounded interval")
    grid = np.arange(lo, hi + 0.5 * step, step)
    hv = np.abs(h_value(grid, L))
    scale = float(np.median(hv)) if np.median(hv) > 0 else 1.0
    interior = (hv[1:-1] <= hv[:-2]) & (hv[1:-1] <= hv[2:])
    cand = list(grid[1:-1][interior])
    if hv[0] < hv[1]:
        cand.append(grid[0])
    if hv[-1] < hv[-2]:
        cand.append(grid[-1])

    found = []
    for z0 in cand:
        z = complex(z0)
        converged = False
        for _ in range(max_newton):
            hz = complex(h_value(z, L))
            dh = complex(h_derivative(z, L))
            if dh == 0:
                break
            dz = hz / dh
            z = z - dz
            if abs(dz) <= 1e-14 * (1.0 + abs(z)):
                converged = True
                break
        hz = abs(complex(h_value(z, L)))
        if converged and hz <= 1e-12 * (1.0 + abs(z)) * max(scale, 1.0):
            if abs(z.imag) > 1e-8 or not (lo - step <= z.real <= hi + step):
                continue  # the minimum belongs to a non-real or out-of-window zero
            dh = abs(complex(h_derivative(z.real, L)))
            ef = EigenFrequency(
                z=z.real,
                multiplicity=1 if dh > 1e-6 * max(scale, 1.0) else 2,
                lambda_at_root=cubic_roots(np.array(z.real + 0j)),
                source="root-search",
                h_abs=hz,
                h_prime_abs=dh,
            )
            if not any(abs(e.z - ef.z) < 1e-9 for e in found):
                found.append(ef)
        elif not converged and hv[np.argmin(np.abs(grid - z0))] < 1e-3 * scale:
            found.append(
                EigenFrequency(
                    z=float(z0),
                    multiplicity=0,
                    lambda_at_root=cubic_roots(np.array(complex(z0))),
                    source="root-search",
                    h_abs=hz,
                    resolved=False,
                )
            )
    found.sort(key=lambda e: e.z)
    return found


def shoot_theta(z, L, steps=4096):
    """U(0) for U''' + U' + z U = 0 integrated backwards from U(L)=U'(L)=0, U''(L)=1."""
    if not L > 0:
        raise ValueError("shoot_theta: length must be positive")
    z = complex(z)

    def rhs(v):
        return np.array([v[1], v[2], -v[1] - z * v[0]])

    h = -L / steps
    v = np.array([0.0, 0.0, 1.0], dtype=complex)
    for _ in range(steps):
        k1 = rhs(v)
        k2 = rhs(v + 0.5 * h * k1)
        k3 = rhs(v + 0.5 * h * k2)
        k4 = rhs(v + h * k3)
        v = v + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return complex(v[0])


def lattice_sum(z, j, n_max=1000):
    """sum over 0 < |n| of |n|^j / (|z + 4n - n^3| + n^2), with an analytic tail.

    Terms up to ``max(n_max, 10^6)`` are summed directly.  Beyond that the
    tail is expanded as 2 n^(j-3) - 2 n^(j-4) summed with Hurwitz zeta; the
    neglected remainder is O(N^(j-4)).  Returns ``(value, tail_estimate)``.
    """
    if j not in (0, 1):
        raise ValueError("lattice_sum: j must be 0 or 1")
    if n_max < 1000:
        raise ValueError("lattice_sum: n_max must be at least 1000")
    z = float(z)
    n_sum = max(int(n_max), 10**6, int(4.0 * abs(z) ** (1.0 / 3.0)) + 10)
    n = np.arange(1, n_sum + 1, dtype=float)
    denom_pos = np.abs(z + 4.0 * n - n**3) + n**2
    denom_neg = np.abs(z - 4.0 * n + n**3) + n**2
    head = float(np.sum(n**j / denom_pos) + np.sum(n**j / denom_neg))
    tail = 2.0 * float(zeta(3 - j, n_sum + 1) - zeta(4 - j, n_sum + 1))
    return head + tail, tail


def lattice_sum_fit(z_values, j, n_max=1000):
    """Normalised sums S(z)(|z|+2)^((2-j)/3)/ln(|z|+2) and their log-log trend."""
    z_values = np.asarray(z_values, dtype=float)
    norm = np.array(
        [lattice_sum(z, j, n_max)[0] * (abs(z) + 2.0) ** ((2.0 - j) / 3.0) / np.log(abs(z) + 2.0) for z in z_values]
    )
    slope = np.polyfit(np.log(np.abs(z_values) + 2.0), np.log(norm), 1)[0]
    return {"normalised": norm, "constant": float(norm.max()), "slope": float(slope)}


def detq_line_samples(L, m, n_samples=200):
    """Samples of log|detQ| on the line Im z = ((2m+1) pi / (sqrt3 L))^3, |Re z| <= 10 Im z."""
    height = ((2 * m + 1) * np.pi / (np.sqrt(3.0) * L)) ** 3
    re = np.linspace(-10.0 * abs(height), 10.0 * abs(height), n_samples)
    z = re + 1j * height
    dq, sq = scaled_detq(cubic_roots(z), L)
    with np.errstate(divide="ignore"):
        logabs = np.log(np.abs(dq)) + sq
    return z, logabs


def detq_line_bound(L, m, n_samples=200, c=None):
    """Floor of |detQ(z)| e^{c |z|^(1/3)} along one line.

    When ``c`` is not given it is fitted by least squares of log|detQ|
    against |z|^(1/3) on the line's own samples.
    """
    if abs(m) < 5:
        raise ValueError("detq_line_bound: |m| must be at least 5")
    z, logabs = detq_line_samples(L, m, n_samples)
    r = np.abs(z) ** (1.0 / 3.0)
    if c is None:
        c = -float(np.polyfit(r, logabs, 1)[0])
    log_floor = float(np.min(logabs + c * r))
    return {
        "L": float(L),
        "m": int(m),
        "c": float(c),
        "log_floor": log_floor,
        "floor": float(np.exp(log_floor)) if log_floor < 700 else float("inf"),
        "min_abs_detq_log": float(np.min(logabs)),
        "positive": bool(np.isfinite(log_floor)),
    }


def detq_line_floors(L, ms=range(5, 13), n_samples=200):
    """Shared-constant floors over several lines.

    A single c is fitted from the per-line minima of log|detQ| against the
    matching |z|^(1/3); the floor on each line is then reported with that c.
    """
    mins, radii = [], []
    for m in ms:
        z, logabs = detq_line_samples(L, m, n_samples)
        k = int(np.argmin(logabs))
        mins.append(logabs[k])
        radii.append(abs(z[k]) ** (1.0 / 3.0))
    c = -float(np.polyfit(radii, mins, 1)[0])
    reports = [detq_line_bound(L, m, n_samples, c=c) for m in ms]
    logs = np.array([r["log_floor"] for r in reports])
    return {
        "c": c,
        "reports": reports,
        "bounded_away": bool(np.all(np.isfinite(logs)) and (logs.min() - np.median(logs)) > np.log(1e-6)),
    }


def branch_loop_check(center, L, radius=1e-2, n_points=64):
    """Single-valuedness proxies for G and H on a loop around a branch point.

    Returns the mean-value defect |mean_loop - f(center)| / |f(center)| and the
    loop-closure mismatch after continuing roots once around the circle.
    """
    theta = 2.0 * np.pi * np.arange(n_points) / n_points
    ring = center + radius * np.exp(1j * theta)
    g, h = gh_values(ring, L)
    gc, hc = gh_values(np.array(complex(center)), L)
    out = {}
    for name, vals, cval in (("G", g, complex(gc)), ("H", h, complex(hc))):
        out[name] = {
            "mean_defect": float(abs(vals.mean() - cval) / abs(cval)),
            "contour_integral": float(abs(np.mean(vals * np.exp(1j * theta))) * radius / abs(cval)),
            "closure": float(abs(vals[0] - _continued_value(center, radius, L, name)) / abs(cval)),
        }
    return out


def _continued_value(center, radius, L, name, n_steps=512):
    """Value after one loop with the roots carried continuously (no re-sorting)."""
    from .complex_cubic import match_roots

    lam = cubic_roots(np.array(center + radius + 0j))
    for k in range(1, n_steps + 1):
        zk = center + radius * np.exp(2j * np.pi * k / n_steps)
        lam, _ = match_roots(lam, cubic_roots(np.array(zk)))
    xi = xi_of(lam)
    if name == "G":
        pp, sp = scaled_p(lam, L)
        return complex(pp * np.exp(sp) / xi)
    dq, sq = scaled_detq(lam, L)
    return complex(dq * np.exp(sq) / xi)


def common_root_scan(L, half_width=2.0, n=161):
    """Grid of min(|G|,|H|)/scale over a square; returns local minima below 1e-2."""
    x = np.linspace(-half_width, half_width, n)
    zz = x[None, :] + 1j * x[:, None]
    g, h = gh_values(zz, L)
    ga, ha = np.abs(g), np.abs(h)
    m = np.minimum(ga / np.median(ga), ha / np.median(ha))
    both = np.maximum(ga / np.median(ga), ha / np.median(ha))
    pts = []
    for i in range(1, n - 1):
        for k in range(1, n - 1):
            win = both[i - 1 : i + 2, k - 1 : k + 2]
            if both[i, k] == win.min() and both[i, k] < 5e-2:
                pts.append(complex(zz[i, k]))
    return {"z": zz, "min_gh": m, "max_gh": both, "simultaneous": pts}


def branch_points():
    return np.array([BRANCH_POINT, -BRANCH_POINT])
