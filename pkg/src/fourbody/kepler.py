"""Kepler-problem parameterizations shared by the chart and potential modules.

Positions and momenta follow the unrotated convention: the elliptic orbit has
its periapsis on the positive horizontal axis, the hyperbolic branch opens to
the right with periapsis on the negative axis. Rotations and per-pair angle
offsets are applied by the caller.

All routines accept complex input so that Jacobians can be obtained by
complex-step differentiation; norms and branches must therefore never go
through `abs` on perturbed quantities.
"""

import numpy as np

KEPLER_TOL = 1e-13
_MAX_NEWTON = 60


class KeplerError(RuntimeError):
    """Kepler equation solver failed to reach the residual tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


def solve_elliptic(ell, e, tol=KEPLER_TOL):
    """Solve u - e*sin(u) = ell for the eccentric anomaly u.

    Newton iteration from the standard guess u0 = ell + e*sin(ell), with a
    bisection fallback on the 2*pi-reduced equation. The winding of ell is
    preserved: u - ell is 2*pi-periodic in ell.
    """
    if np.iscomplexobj(ell) or np.iscomplexobj(e):
        u = _polish_elliptic_complex(ell, e, tol)
        return u
    ell = float(ell)
    e = float(e)
    # reduce to [-pi, pi) but remember the winding
    k = np.floor((ell + np.pi) / (2 * np.pi))
    ell_red = ell - 2 * np.pi * k
    u = ell_red + e * np.sin(ell_red)
    for _ in range(_MAX_NEWTON):
        f = u - e * np.sin(u) - ell_red
        if abs(f) < tol:
            return u + 2 * np.pi * k
        fp = 1.0 - e * np.cos(u)
        du = f / fp
        # Newton can overshoot badly near e ~ 1, ell ~ 0; damp the step
        if abs(du) > 1.0:
            du = np.sign(du)
        u -= du
    # bisection fallback: f is increasing in u, root within |u - ell_red| <= e
    lo, hi = ell_red - e - 1e-12, ell_red + e + 1e-12
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid - e * np.sin(mid) - ell_red > 0:
            hi = mid
        else:
            lo = mid
        if hi - lo < 1e-16:
            break
    u = 0.5 * (lo + hi)
    f = u - e * np.sin(u) - ell_red
    if abs(f) > 10 * tol:
        raise KeplerError("elliptic Kepler solve did not converge", residual=f)
    return u + 2 * np.pi * k


def solve_hyperbolic(ell, e, tol=KEPLER_TOL):
    """Solve u - e*sinh(u) = ell for the hyperbolic anomaly u.

    Initial guess sign(ell)*log(2|ell|/e + 1.8) — note u and ell carry
    opposite signs when |u| is large since e > 1.
    """
    if np.iscomplexobj(ell) or np.iscomplexobj(e):
        return _polish_hyperbolic_complex(ell, e, tol)
    ell = float(ell)
    e = float(e)
    if ell == 0.0:
        return 0.0
    u = -np.sign(ell) * np.log(2 * abs(ell) / e + 1.8)
    for _ in range(_MAX_NEWTON):
        f = u - e * np.sinh(u) - ell
        if abs(f) < tol * max(1.0, abs(ell)):
            return u
        fp = 1.0 - e * np.cosh(u)
        du = f / fp
        u -= du
    # safeguarded bisection: g(u) = u - e*sinh(u) - ell is decreasing
    hi = 1.0
    while hi - e * np.sinh(hi) - ell > 0:
        hi *= 2
        if hi > 1e9:
            raise KeplerError("hyperbolic bracket failed")
    lo = -1.0
    while lo - e * np.sinh(lo) - ell < 0:
        lo *= 2
        if lo < -1e9:
            raise KeplerError("hyperbolic bracket failed")
    for _ in range(300):
        mid = 0.5 * (lo + hi)
        if mid - e * np.sinh(mid) - ell > 0:
            lo = mid
        else:
            hi = mid
    u = 0.5 * (lo + hi)
    f = u - e * np.sinh(u) - ell
    if abs(f) > 10 * tol * max(1.0, abs(ell)):
        raise KeplerError("hyperbolic Kepler solve did not converge", residual=f)
    return u


def _polish_elliptic_complex(ell, e, tol):
    u = solve_elliptic(np.real(ell), np.real(e), tol)
    u = u + 0.0j
    for _ in range(8):
        f = u - e * np.sin(u) - ell
        u = u - f / (1.0 - e * np.cos(u))
    return u


def _polish_hyperbolic_complex(ell, e, tol):
    u = solve_hyperbolic(np.real(ell), np.real(e), tol)
    u = u + 0.0j
    for _ in range(8):
        f = u - e * np.sinh(u) - ell
        u = u - f / (1.0 - e * np.cosh(u))
    return u


def elliptic_qp(m, k, L, ell, G, tol=KEPLER_TOL):
    """Unrotated Cartesian (q, p) of the elliptic Kepler orbit (g = 0)."""
    e = np.sqrt(1.0 - (G / L) ** 2)
    u = solve_elliptic(ell, e, tol)
    a = L * L / (m * k)
    denom = 1.0 - e * np.cos(u)
    q = np.array([a * (np.cos(u) - e), (L * G / (m * k)) * np.sin(u)])
    p = np.array([-(m * k / L) * np.sin(u) / denom,
                  (m * k / (L * L)) * G * np.cos(u) / denom])
    return q, p


def hyperbolic_qp(m, k, L, ell, G, tol=KEPLER_TOL):
    """Unrotated Cartesian (q, p) of the hyperbolic Kepler orbit (g = 0).

    The G-odd terms carry the sign that makes (L, ell, G, g) canonical with
    dp^dx = dL^dl + dG^dg and G equal to the geometric angular momentum
    q x p (the bare textbook parameterization gives q x p = -G).
    """
    e = np.sqrt(1.0 + (G / L) ** 2)
    u = solve_hyperbolic(ell, e, tol)
    a = L * L / (m * k)
    denom = 1.0 - e * np.cosh(u)
    q = np.array([a * (np.cosh(u) - e), -(L * G / (m * k)) * np.sinh(u)])
    p = np.array([-(m * k / L) * np.sinh(u) / denom,
                  (m * k / (L * L)) * G * np.cosh(u) / denom])
    return q, p


def radius_elliptic(m, k, L, u, e=1.0):
    return (L * L / (m * k)) * (1.0 - e * np.cos(u))


def radius_hyperbolic(m, k, L, u, e=1.0):
    return (L * L / (m * k)) * (e * np.cosh(u) - 1.0)


def degenerate_q_derivs(kind, m, k, L, u):
    """Position derivatives w.r.t. (G, g) of a pair at the isosceles limit.

    At G = 0 (e = 1 exactly) the unrotated position and its G-derivatives
    have closed forms; rotation and angle offsets are applied by the caller.
    Returns (q, q_G, q_GG); q_g = J q and q_Gg = J q_G follow by rotation.
    """
    mk = m * k
    if kind == "elliptic":
        q = np.array([(L * L / mk) * (np.cos(u) - 1.0), 0.0])
        q_G = np.array([0.0, (L / mk) * np.sin(u)])
        q_GG = np.array([(2.0 + np.cos(u)) / mk, 0.0])
    elif kind == "hyperbolic":
        q = np.array([(L * L / mk) * (np.cosh(u) - 1.0), 0.0])
        q_G = np.array([0.0, -(L / mk) * np.sinh(u)])
        q_GG = np.array([-(2.0 + np.cosh(u)) / mk, 0.0])
    else:
        raise ValueError(f"unknown kind {kind!r}")
    return q, q_G, q_GG
