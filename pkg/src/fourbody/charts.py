"""Coordinate charts: Jacobi frames, Delaunay elements, triple-collision blowup.

Chart conventions (fixed once, used everywhere):

* pair 0 is the binary; pair 1 belongs to body 1, pair 2 to body 2, in both
  frames (on the right, pair 2 is the inner pair of the triple);
* Delaunay parameterizations are rotated by g plus a per-pair offset
  (0, pi, 0) so that the isosceles reference is g0 = pi/2, g1 = g2 = 0;
* the blowup shape angle carries the sign of the inner pair's horizontal
  coordinate, psi in [-pi/2, pi/2], and the binary is folded to x0_y >= 0;
* relative-angle offsets vanish at the isosceles configuration:
  gbar01 = g0 - g1 - pi/2 and gbar21 = g2 - g1 (left frame),
  gbar02 = g0 - g2 - pi/2 and gbar12 = g1 - g2 (right frame).
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import kepler
from .model import MassConfig, PAIR_ROT_OFFSETS, hamiltonian_cartesian


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = -((-np.asarray(a) + np.pi) % (2 * np.pi) - np.pi)
    return w if np.ndim(a) else float(w)


def _rot(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s], [s, c]])


def cross2(a, b):
    return a[0] * b[1] - a[1] * b[0]


# --------------------------------------------------------------------------
# state containers
# --------------------------------------------------------------------------

@dataclass
class CartesianJacobiState:
    """Positions/momenta of the three Jacobi pairs in a tagged frame."""

    frame: str
    x0: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    p0: np.ndarray
    p1: np.ndarray
    p2: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        for name in ("x0", "x1", "x2", "p0", "p1", "p2"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))

    def pair(self, i):
        return (getattr(self, f"x{i}"), getattr(self, f"p{i}"))

    def angular_momenta(self):
        return np.array([cross2(*self.pair(i)) for i in range(3)])

    def to_dict(self):
        return {"frame": self.frame, "time": self.time,
                **{n: list(map(float, getattr(self, n)))
                   for n in ("x0", "x1", "x2", "p0", "p1", "p2")}}

    @classmethod
    def from_dict(cls, d):
        return cls(frame=d["frame"], time=d.get("time", 0.0),
                   **{n: np.array(d[n]) for n in ("x0", "x1", "x2", "p0", "p1", "p2")})


@dataclass
class DelaunayElements:
    """Action-angle elements of one Kepler pair."""

    kind: str           # "elliptic" | "hyperbolic"
    L: float
    ell: float
    G: float
    g: float

    def __post_init__(self):
        if self.kind not in ("elliptic", "hyperbolic"):
            raise ValueError(f"bad kind {self.kind!r}")
        if self.L <= 0:
            raise ValueError("L must be positive")

    @property
    def eccentricity(self):
        if self.kind == "elliptic":
            return np.sqrt(max(1.0 - (self.G / self.L) ** 2, 0.0))
        return np.sqrt(1.0 + (self.G / self.L) ** 2)

    def to_dict(self):
        return {"kind": self.kind, "L": self.L, "ell": self.ell,
                "G": self.G, "g": self.g}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class BlowupState:
    """Regularized triple-collision coordinates, plus optional extensions."""

    r: float
    v: float
    psi: float
    what: float
    side: str = "left"
    w0: float = None
    w1: float = None
    g0: float = None
    g1: float = None
    w2: float = None
    g21: float = None

    def to_dict(self):
        d = {"r": self.r, "v": self.v, "psi": self.psi, "what": self.what,
             "side": self.side}
        for n in ("w0", "w1", "g0", "g1", "w2", "g21"):
            if getattr(self, n) is not None:
                d[n] = getattr(self, n)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    @property
    def w(self):
        c = np.cos(self.psi)
        if abs(c) < 1e-13:
            raise ValueError("w undefined at the double collision psi = ±pi/2")
        return self.what / c


@dataclass
class TangentFrame:
    """Tangent vectors transported by a variational flow."""

    matrix: np.ndarray
    chart: str
    basepoint: object = None

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=float)

    def to_dict(self):
        return {"chart": self.chart,
                "matrix": [list(map(float, row)) for row in self.matrix]}


def state_to_json(state, **kw):
    return json.dumps(state.to_dict(), **kw)


# --------------------------------------------------------------------------
# absolute <-> Jacobi
# --------------------------------------------------------------------------

def jacobi_from_absolute(Qs, Ps, masses, side, mom_tol=1e-12):
    """Jacobi state from absolute positions/momenta (total momentum zero)."""
    Qs = [np.asarray(Q, dtype=float) for Q in Qs]
    Ps = [np.asarray(P, dtype=float) for P in Ps]
    ptot = sum(Ps)
    if np.max(np.abs(ptot)) > mom_tol:
        raise ValueError(f"total momentum {ptot} is not zero")
    Q1, Q2, Q3, Q4 = Qs
    P1, P2, P3, P4 = Ps
    q3, q1, q2 = Q3 - Q4, Q1 - Q4, Q2 - Q4
    m1, m2 = masses.m1, masses.m2
    p0 = P3 + 0.5 * (P1 + P2)
    if side == "left":
        x0 = q3
        x1 = q1 - 0.5 * q3
        x2 = q2 - (m1 * q1 + q3) / (m1 + 2.0)
        p1 = P1 + m1 * P2 / (m1 + 2.0)
        p2 = P2
    else:
        x0 = q3
        x2 = q2 - 0.5 * q3
        x1 = q1 - (m2 * q2 + q3) / (m2 + 2.0)
        p2 = P2 + m2 * P1 / (m2 + 2.0)
        p1 = P1
    return CartesianJacobiState(side, x0, x1, x2, p0, p1, p2)


def absolute_from_jacobi(state, masses, Q4=(0.0, 0.0)):
    """Invert the Jacobi chart; the gauge is fixed by placing body 4."""
    Q4 = np.asarray(Q4, dtype=float)
    m1, m2 = masses.m1, masses.m2
    x0, x1, x2 = state.x0, state.x1, state.x2
    if state.frame == "left":
        q3 = x0
        q1 = x1 + 0.5 * x0
        q2 = x2 + (m1 * q1 + q3) / (m1 + 2.0)
        P2 = state.p2
        P1 = state.p1 - m1 * P2 / (m1 + 2.0)
    else:
        q3 = x0
        q2 = x2 + 0.5 * x0
        q1 = x1 + (m2 * q2 + q3) / (m2 + 2.0)
        P1 = state.p1
        P2 = state.p2 - m2 * P1 / (m2 + 2.0)
    P3 = state.p0 - 0.5 * (P1 + P2)
    P4 = -(P1 + P2 + P3)
    return ([q1 + Q4, q2 + Q4, q3 + Q4, Q4], [P1, P2, P3, P4])


def left_right_transition(state, masses):
    """Switch Jacobi frames; x0, p0 are untouched, pairs 1 and 2 mix."""
    M1L = masses.side("left").M1
    M2R = masses.side("right").M2
    q = 0.25 * M1L * M2R
    if state.frame == "left":
        x1 = (1.0 - q) * state.x1 - 0.5 * M2R * state.x2
        x2 = 0.5 * M1L * state.x1 + state.x2
        p1 = state.p1 - 0.5 * M1L * state.p2
        p2 = 0.5 * M2R * state.p1 + (1.0 - q) * state.p2
        frame = "right"
    else:
        x1 = state.x1 + 0.5 * M2R * state.x2
        x2 = -0.5 * M1L * state.x1 + (1.0 - q) * state.x2
        p1 = (1.0 - q) * state.p1 + 0.5 * M1L * state.p2
        p2 = -0.5 * M2R * state.p1 + state.p2
        frame = "left"
    return CartesianJacobiState(frame, state.x0, x1, x2, state.p0, p1, p2,
                                time=state.time)


# --------------------------------------------------------------------------
# Delaunay <-> Cartesian per pair
# --------------------------------------------------------------------------

def delaunay_to_cartesian(el, m, k, rotation=0.0, tol=kepler.KEPLER_TOL):
    """Cartesian (q, p) of a Kepler pair with reduced mass m and coupling k."""
    if el.kind == "elliptic":
        q, p = kepler.elliptic_qp(m, k, el.L, el.ell, el.G, tol)
    else:
        q, p = kepler.hyperbolic_qp(m, k, el.L, el.ell, el.G, tol)
    R = _rot(el.g + rotation)
    return R @ q, R @ p


def pair_to_cartesian(el, pair_index, masses, side, tol=kepler.KEPLER_TOL):
    fc = masses.side(side)
    m, k = fc.pair(pair_index)
    return delaunay_to_cartesian(el, m, k, PAIR_ROT_OFFSETS[pair_index], tol)


def cartesian_to_delaunay(x, p, m, k, rotation=0.0):
    """Delaunay elements of one pair; branch picked by the energy sign."""
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    r = np.hypot(*x)
    E = (p @ p) / (2.0 * m) - k / r
    G = cross2(x, p)
    rad = x @ p
    if E < 0:
        L = k * np.sqrt(m / (-2.0 * E))
        a = L * L / (m * k)
        e = np.sqrt(max(1.0 - (G / L) ** 2, 0.0))
        if e < 1e-12:
            g = 0.0
            u = np.arctan2(x[1], x[0]) - rotation
            ell = u
            return DelaunayElements("elliptic", L, wrap_angle(ell), G, g)
        u = np.arctan2(rad / L, 1.0 - r / a)
        ell = u - e * np.sin(u)
        evec = ((p @ p) * x - rad * p) / (m * k) - x / r
        g = wrap_angle(np.arctan2(evec[1], evec[0]) - rotation)
        return DelaunayElements("elliptic", L, ell, G, g)
    if E > 0:
        L = k * np.sqrt(m / (2.0 * E))
        a = L * L / (m * k)
        e = np.sqrt(1.0 + (G / L) ** 2)
        u = np.arcsinh(rad / (L * e))
        ell = u - e * np.sinh(u)
        evec = ((p @ p) * x - rad * p) / (m * k) - x / r
        g = wrap_angle(np.arctan2(evec[1], evec[0]) - np.pi - rotation)
        return DelaunayElements("hyperbolic", L, ell, G, g)
    raise ValueError("parabolic pair (E = 0) is not supported")


def pair_from_cartesian(x, p, pair_index, masses, side):
    fc = masses.side(side)
    m, k = fc.pair(pair_index)
    return cartesian_to_delaunay(x, p, m, k, PAIR_ROT_OFFSETS[pair_index])


def state_to_elements(state, masses):
    """Delaunay elements of all three pairs of a Jacobi state."""
    return tuple(pair_from_cartesian(*state.pair(i), i, masses, state.frame)
                 for i in range(3))


def elements_to_state(elements, masses, side, time=0.0):
    pairs = [pair_to_cartesian(el, i, masses, side)
             for i, el in enumerate(elements)]
    return CartesianJacobiState(side, pairs[0][0], pairs[1][0], pairs[2][0],
                                pairs[0][1], pairs[1][1], pairs[2][1], time=time)


# --------------------------------------------------------------------------
# relative-angle offsets (vanish at the isosceles configuration)
# --------------------------------------------------------------------------

# apse-angle references of the isosceles configuration, per pair; the binary
# hangs on the -y axis, body 1 sits to the left, body 2 to the right
APSE_REFS = (np.pi / 2, 0.0, np.pi)


def apse_angle(x, p, m, k):
    """Polar angle of the eccentricity vector (branch-free apse direction)."""
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    r = np.hypot(*x)
    evec = ((p @ p) * x - (x @ p) * p) / (m * k) - x / r
    return np.arctan2(evec[1], evec[0])


def angle_offsets(state, masses):
    """(gbar_0in, gbar_insp): apse-angle offsets that vanish at isosceles.

    gbar_0in = (binary apse) - (inner-pair apse), gbar_insp = (inner apse) -
    (spectator apse), both relative to the isosceles reference angles. These
    equal the Delaunay-label differences g0 - g_in - pi/2 and
    g_in - g_sp - pi up to the per-branch label constants, and are smooth
    across the elliptic/hyperbolic boundary.
    """
    fc = masses.side(state.frame)
    alphas = []
    for i in range(3):
        m, k = fc.pair(i)
        alphas.append(apse_angle(*state.pair(i), m, k) - APSE_REFS[i])
    i_in, i_sp = fc.inner_index, fc.spectator_index
    return (wrap_angle(alphas[0] - alphas[i_in]),
            wrap_angle(alphas[i_in] - alphas[i_sp]))


# --------------------------------------------------------------------------
# triple-collision blowup
# --------------------------------------------------------------------------

def blowup_from_jacobi(state, masses, full=False):
    """Blowup coordinates of the frame's own triple (near-isosceles chart).

    The shape angle is signed by the inner pair's horizontal coordinate and
    the binary is folded to its |x0| representative; for exactly isosceles
    states the chart is exact.
    """
    fc = masses.side(state.frame)
    x0, p0 = state.pair(0)
    xin, pin = state.pair(fc.inner_index)
    r0 = np.hypot(*x0)
    r1 = np.hypot(*xin)
    if r0 == 0.0 and r1 == 0.0:
        raise ValueError("triple collision: blowup chart boundary r = 0")
    M0, M1 = fc.M0, fc.pair(fc.inner_index)[0]
    r = np.sqrt(M0 * r0 ** 2 + M1 * r1 ** 2)
    sgn = 1.0 if xin[0] >= 0 else -1.0
    psi = sgn * np.arctan2(np.sqrt(M1) * r1, np.sqrt(M0) * r0)
    v = (x0 @ p0 + xin @ pin) / np.sqrt(r)
    R0 = (x0 @ p0) / r0 if r0 > 0 else 0.0
    R1 = (xin @ pin) / r1 if r1 > 0 else 0.0
    w = sgn * (np.sqrt(M0 / M1) * r0 * R1 - np.sqrt(M1 / M0) * r1 * R0) / np.sqrt(r)
    what = w * np.cos(psi)
    bl = BlowupState(r=float(r), v=float(v), psi=float(psi), what=float(what),
                     side=state.frame)
    if full:
        G0 = cross2(x0, p0)
        Gin = cross2(xin, pin)
        bl.w0 = float(G0 / np.sqrt(r))
        bl.w1 = float(Gin / np.sqrt(r))
        el0 = pair_from_cartesian(x0, p0, 0, masses, state.frame)
        elin = pair_from_cartesian(xin, pin, fc.inner_index, masses, state.frame)
        bl.g0 = float(el0.g)
        bl.g1 = float(elin.g)
    return bl


def jacobi_from_blowup(bl, masses, spectator=None, time=0.0):
    """Exactly isosceles Jacobi state from core blowup coordinates.

    spectator: optional DelaunayElements of the remaining pair (the I4BP
    carries it along); when omitted the spectator slot is parked far away on
    the axis with zero momentum, which is only acceptable for pure-triple
    work.
    """
    side = bl.side
    fc = masses.side(side)
    M0, _ = fc.pair(0)
    M1, _ = fc.pair(fc.inner_index)
    c, s = np.cos(bl.psi), np.sin(bl.psi)
    if abs(c) < 1e-13:
        raise ValueError("cannot leave the blowup chart at the double collision")
    w = bl.what / c
    r0 = bl.r * c / np.sqrt(M0)
    x1s = bl.r * s / np.sqrt(M1)      # signed horizontal scalar
    rinv = 1.0 / np.sqrt(bl.r)
    p0s = np.sqrt(M0) * rinv * (bl.v * c - w * s)
    p1s = np.sqrt(M1) * rinv * (bl.v * s + w * c)
    # the binary is folded to the -y representative so that its apse angle
    # sits at the reference pi/2 (the two orientations are physically
    # identical for equal binary masses)
    x0 = np.array([0.0, -r0])
    p0 = np.array([0.0, -p0s])
    xin = np.array([x1s, 0.0])
    pin = np.array([p1s, 0.0])
    if spectator is not None:
        xsp, psp = pair_to_cartesian(spectator, fc.spectator_index, masses, side)
    else:
        xsp = np.array([-1e8 if side == "left" else 1e8, 0.0])
        psp = np.zeros(2)
    pairs = {0: (x0, p0), fc.inner_index: (xin, pin), fc.spectator_index: (xsp, psp)}
    return CartesianJacobiState(side, pairs[0][0], pairs[1][0], pairs[2][0],
                                pairs[0][1], pairs[1][1], pairs[2][1], time=time)


# --------------------------------------------------------------------------
# isosceles-pairs chart (binary in elements, exterior pairs as scalars)
# --------------------------------------------------------------------------

def fast_from_blowup(y, masses, side, with_spectator=True):
    """Isosceles-pairs chart from a regularized blowup state.

    Requires the binary away from its double collision (the caller hands off
    at apoapsis); the exterior pairs are regular everywhere outside triple
    collision.
    """
    from .kepler import solve_hyperbolic
    fc = masses.side(side)
    M0, k0 = fc.pair(0)
    Min = fc.pair(fc.inner_index)[0]
    r, v, psi, what = y[0], y[1], y[2], y[3]
    c, s = np.cos(psi), np.sin(psi)
    if abs(c) < 1e-8:
        raise ValueError("fast-chart handoff at a binary collision")
    w = what / c
    r0 = r * c / np.sqrt(M0)
    q0 = np.sqrt(r) * (v * c * c - what * s)
    R0 = q0 / r0
    E0 = R0 ** 2 / (2.0 * M0) - k0 / r0
    if E0 >= 0:
        raise ValueError("binary unbound at the fast-chart handoff")
    L0 = k0 * np.sqrt(M0 / (-2.0 * E0))
    a0 = L0 * L0 / (M0 * k0)
    cu = np.clip(1.0 - r0 / a0, -1.0, 1.0)
    u0 = np.arctan2(np.sign(q0) * np.sqrt(max(1.0 - cu * cu, 0.0)), cu)
    ell0 = u0 - np.sin(u0)
    s_in = r * s / np.sqrt(Min)
    p_in = np.sqrt(Min) * (v * s + w * c) / np.sqrt(r)
    out = [L0, ell0, s_in, p_in]
    if with_spectator:
        Msp, ksp = fc.pair(fc.spectator_index)
        Lsp, ellsp = y[4], y[5]
        usp = solve_hyperbolic(ellsp, 1.0)
        asp = Lsp * Lsp / (Msp * ksp)
        direction = 1.0 if fc.spectator_index == 2 else -1.0
        s_sp = direction * asp * (np.cosh(usp) - 1.0)
        p_sp = Lsp * np.sinh(usp) / s_sp
        out += [s_sp, p_sp]
    return np.array(out)


def blowup_from_fast(yf, masses, side, with_spectator=True):
    """Regularized blowup state from the isosceles-pairs chart.

    Regular through binary double collisions: what is assembled from the
    collision-safe combination (M0 r0^2 p_in - Min s_in q0)/(sqrt(Min) r^1.5).
    """
    from .kepler import solve_elliptic
    fc = masses.side(side)
    M0, k0 = fc.pair(0)
    Min = fc.pair(fc.inner_index)[0]
    L0, ell0, s_in, p_in = yf[0], yf[1], yf[2], yf[3]
    u0 = solve_elliptic(ell0, 1.0)
    a0 = L0 * L0 / (M0 * k0)
    r0 = a0 * (1.0 - np.cos(u0))
    q0 = L0 * np.sin(u0)               # x0 . p0 at e = 1
    r = np.sqrt(M0 * r0 ** 2 + Min * s_in ** 2)
    psi = np.sign(s_in) * np.arctan2(np.sqrt(Min) * abs(s_in),
                                     np.sqrt(M0) * r0)
    v = (q0 + s_in * p_in) / np.sqrt(r)
    what = (M0 * r0 ** 2 * p_in - Min * s_in * q0) / (np.sqrt(Min) * r ** 1.5)
    out = [r, v, psi, what]
    if with_spectator:
        Msp, ksp = fc.pair(fc.spectator_index)
        s_sp, p_sp = yf[4], yf[5]
        Esp = p_sp ** 2 / (2.0 * Msp) - ksp / abs(s_sp)
        if Esp <= 0:
            raise ValueError("spectator not hyperbolic at the handoff")
        Lsp = ksp * np.sqrt(Msp / (2.0 * Esp))
        asp = Lsp * Lsp / (Msp * ksp)
        cu = 1.0 + abs(s_sp) / asp
        usp = np.sign(s_sp * p_sp) * np.arccosh(cu)
        out += [Lsp, usp - np.sinh(usp)]
    return np.array(out)


def fast_left_right(yf, masses, from_side):
    """Frame change of the isosceles-pairs chart (binary untouched)."""
    M1L = masses.side("left").M1
    M2R = masses.side("right").M2
    q = 0.25 * M1L * M2R
    L0, ell0 = yf[0], yf[1]
    if from_side == "left":
        x1, p1, x2, p2 = yf[2], yf[3], yf[4], yf[5]
        x1r = (1.0 - q) * x1 - 0.5 * M2R * x2
        x2r = 0.5 * M1L * x1 + x2
        p1r = p1 - 0.5 * M1L * p2
        p2r = 0.5 * M2R * p1 + (1.0 - q) * p2
        # right frame: inner pair is body 2
        return np.array([L0, ell0, x2r, p2r, x1r, p1r])
    x2, p2, x1, p1 = yf[2], yf[3], yf[4], yf[5]
    x1l = x1 + 0.5 * M2R * x2
    x2l = -0.5 * M1L * x1 + (1.0 - q) * x2
    p1l = (1.0 - q) * p1 + 0.5 * M1L * p2
    p2l = -0.5 * M2R * p1 + p2
    return np.array([L0, ell0, x1l, p1l, x2l, p2l])


def fast_triple_r(yf, masses, side):
    """Triple size of the frame's own triple in the isosceles-pairs chart."""
    from .kepler import solve_elliptic
    fc = masses.side(side)
    M0, k0 = fc.pair(0)
    Min = fc.pair(fc.inner_index)[0]
    u0 = solve_elliptic(yf[1], 1.0)
    a0 = yf[0] ** 2 / (M0 * k0)
    r0 = a0 * (1.0 - np.cos(u0))
    return np.sqrt(M0 * r0 ** 2 + Min * yf[2] ** 2)



def triple_energy(state, masses):
    """Energy of the frame's own triple (kinetic + V), the blowup E."""
    fc = masses.side(state.frame)
    x0, p0 = state.pair(0)
    xin, pin = state.pair(fc.inner_index)
    from .model import potentials_cartesian
    M0 = fc.M0
    M1 = fc.pair(fc.inner_index)[0]
    pots = potentials_cartesian(state.x0, state.x1, state.x2, masses,
                                state.frame, want_derivs=False)
    return (p0 @ p0) / (2 * M0) + (pin @ pin) / (2 * M1) + pots["V"].value
