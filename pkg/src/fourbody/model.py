"""Masses, coupling constants, potentials and their derivatives.

Everything downstream (vector fields, variational coefficient matrices,
Poincaré maps) evaluates the scalars defined here. Conventions:

* the binary masses are fixed at m3 = m4 = 1;
* "left" groups the binary with body 1, "right" with body 2;
* in either frame, pair 0 is the binary, and the pair keeping the frame's
  own exterior body (pair 1 on the left, pair 2 on the right) is the inner
  pair of the triple; the remaining pair is the spectator.

The potential splittings:

* ``V``   — full triple potential (binary + inner exterior body),
* ``U01`` — inner coupling left over after removing the inner Kepler term,
* ``U2``  — spectator perturbation left over after removing its Kepler term.
"""

from dataclasses import dataclass, field

import numpy as np

COLLISION_DIST = 1e-13

SIDES = ("left", "right")


class CollisionError(ValueError):
    """A pair separation fell below the collision threshold."""

    def __init__(self, pair, dist):
        super().__init__(f"collision in pair {pair}: separation {dist:.3e}")
        self.pair = pair
        self.dist = dist


class PoleError(ValueError):
    """The shape potential was evaluated at the double-collision pole."""


class IsoscelesLimitError(ValueError):
    """Closed forms requested away from the isosceles limit."""


@dataclass(frozen=True)
class FrameConstants:
    """Reduced masses and Kepler couplings of one Jacobi frame."""

    side: str
    m_ex: float     # exterior mass inside the triple (m1 on the left)
    m_sp: float     # spectator mass
    M0: float
    M1: float
    M2: float
    k0: float
    k1: float
    k2: float

    @property
    def inner_index(self):
        return 1 if self.side == "left" else 2

    @property
    def spectator_index(self):
        return 2 if self.side == "left" else 1

    def pair(self, i):
        """(reduced mass, coupling) of pair i in this frame."""
        return ((self.M0, self.k0), (self.M1, self.k1), (self.M2, self.k2))[i]


@dataclass(frozen=True)
class MassConfig:
    """Masses (m1, m2) with m3 = m4 = 1 and the per-side derived constants."""

    m1: float
    m2: float = 1.0

    def __post_init__(self):
        if self.m1 <= 0 or self.m2 <= 0:
            raise ValueError("masses must be positive")

    def side(self, side):
        m1, m2 = self.m1, self.m2
        if side == "left":
            return FrameConstants(
                side="left", m_ex=m1, m_sp=m2,
                M0=0.5,
                M1=2.0 * m1 / (m1 + 2.0),
                M2=m2 * (m1 + 2.0) / (m1 + m2 + 2.0),
                k0=1.0, k1=2.0 * m1, k2=(m1 + 2.0) * m2,
            )
        if side == "right":
            return FrameConstants(
                side="right", m_ex=m2, m_sp=m1,
                M0=0.5,
                M1=m1 * (m2 + 2.0) / (m1 + m2 + 2.0),
                M2=2.0 * m2 / (m2 + 2.0),
                k0=1.0, k1=(m2 + 2.0) * m1, k2=2.0 * m2,
            )
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")

    def to_dict(self):
        d = {"m1": self.m1, "m2": self.m2}
        for s in SIDES:
            fc = self.side(s)
            d[s] = {"M0": fc.M0, "M1": fc.M1, "M2": fc.M2,
                    "k0": fc.k0, "k1": fc.k1, "k2": fc.k2}
        return d


# --------------------------------------------------------------------------
# shape potential of the isosceles triple
# --------------------------------------------------------------------------

def _shape_terms(psi, m_ex):
    c = 2.0 * (2.0 + m_ex) / m_ex
    s2 = np.sin(psi) ** 2
    D = 2.0 + (c - 2.0) * s2
    return c, D


def isosceles_potential(psi, m_ex, deriv=0):
    """Shape potential of the isosceles triple and its psi-derivatives.

    m_ex is the exterior mass of the triple (m1 on the left side). Raises
    PoleError at |psi| = pi/2 where the binary collides; the regularized
    products below stay finite there.
    """
    if not np.iscomplexobj(psi) and abs(np.cos(psi)) < 1e-13:
        raise PoleError("shape potential has a pole at |psi| = pi/2")
    c, D = _shape_terms(psi, m_ex)
    cpsi = np.cos(psi)
    spsi = np.sin(psi)
    if deriv == 0:
        return -1.0 / (np.sqrt(2.0) * cpsi) - 4.0 * m_ex / np.sqrt(D)
    Dp = (c - 2.0) * np.sin(2.0 * psi)
    if deriv == 1:
        return -spsi / (np.sqrt(2.0) * cpsi ** 2) + 2.0 * m_ex * Dp / D ** 1.5
    if deriv == 2:
        Dpp = 2.0 * (c - 2.0) * np.cos(2.0 * psi)
        sec = 1.0 / cpsi
        part1 = -(sec * (spsi * sec) ** 2 + sec ** 3) / np.sqrt(2.0)
        part2 = 2.0 * m_ex * (Dpp / D ** 1.5 - 1.5 * Dp ** 2 / D ** 2.5)
        return part1 + part2
    raise ValueError("deriv must be 0, 1 or 2")


def vbar_times_cos(psi, m_ex):
    """V̄(psi)·cos(psi), finite through the double-collision pole."""
    _, D = _shape_terms(psi, m_ex)
    return -1.0 / np.sqrt(2.0) - 4.0 * m_ex * np.cos(psi) / np.sqrt(D)


def vbar_d1_times_cos2(psi, m_ex):
    """V̄'(psi)·cos²(psi), finite through the double-collision pole."""
    c, D = _shape_terms(psi, m_ex)
    Dp = (c - 2.0) * np.sin(2.0 * psi)
    return -np.sin(psi) / np.sqrt(2.0) + 2.0 * m_ex * Dp * np.cos(psi) ** 2 / D ** 1.5


def lagrange_angle(m_ex):
    """Shape angle of the equilateral (Lagrange) central configuration."""
    return np.arctan(np.sqrt(3.0 * m_ex / (2.0 + m_ex)))


# --------------------------------------------------------------------------
# pair potentials in Cartesian Jacobi variables
# --------------------------------------------------------------------------

@dataclass
class PotentialEval:
    """Value, gradient and Hessian w.r.t. the six position coordinates."""

    value: float
    grad: np.ndarray = field(default=None)
    hess: np.ndarray = field(default=None)


def _terms_V(fc):
    m = fc.m_ex
    return [(-fc.k0, (1.0, 0.0)), (-m, (-0.5, 1.0)), (-m, (0.5, 1.0))]


def _terms_U01(fc):
    m = fc.m_ex
    k_in = fc.pair(fc.inner_index)[1]
    return [(k_in, (0.0, 1.0)), (-m, (-0.5, 1.0)), (-m, (0.5, 1.0))]


def _terms_U2(fc):
    m_ex, m_sp = fc.m_ex, fc.m_sp
    k_sp = fc.pair(fc.spectator_index)[1]
    a = 2.0 / (m_ex + 2.0)
    b = m_ex / (m_ex + 2.0)
    # coefficients multiply (x0, x_inner, x_spectator)
    return [(k_sp, (0.0, 0.0, 1.0)),
            (-m_ex * m_sp, (0.0, -a, 1.0)),
            (-m_sp, (-0.5, b, 1.0)),
            (-m_sp, (0.5, b, 1.0))]


def _term_eval(terms, xs, pair_slots, want_derivs=True, check=True):
    """Sum of c/|z| terms, z a linear combination of the listed position blocks.

    pair_slots maps each term coefficient tuple entry to a block index in xs.
    Returns value, gradient (6,), Hessian (6, 6) over the flattened positions.
    """
    n = 6
    val = 0.0
    grad = np.zeros(n, dtype=xs[0].dtype) if want_derivs else None
    hess = np.zeros((n, n), dtype=xs[0].dtype) if want_derivs else None
    eye = np.eye(2)
    for coef, lin in terms:
        z = sum(a * xs[j] for a, j in zip(lin, pair_slots) if a != 0.0)
        zz = z @ z
        if check and not np.iscomplexobj(zz) and np.sqrt(abs(zz)) < COLLISION_DIST:
            names = "+".join(f"{a:+g}*x{j}" for a, j in zip(lin, pair_slots) if a)
            raise CollisionError(names, float(np.sqrt(abs(zz))))
        rz = np.sqrt(zz)
        val = val + coef / rz
        if not want_derivs:
            continue
        g_z = -coef * z / rz ** 3
        h_z = coef * (3.0 * np.outer(z, z) - zz * eye) / rz ** 5
        for a, j in zip(lin, pair_slots):
            if a == 0.0:
                continue
            grad[2 * j:2 * j + 2] += a * g_z
            for b, k in zip(lin, pair_slots):
                if b == 0.0:
                    continue
                hess[2 * j:2 * j + 2, 2 * k:2 * k + 2] += a * b * h_z
    return val, grad, hess


def potentials_cartesian(x0, x1, x2, masses, side, want_derivs=True):
    """U01, U2, V as PotentialEval over the positions of one Jacobi frame."""
    fc = masses.side(side)
    xs = [np.asarray(x0), np.asarray(x1), np.asarray(x2)]
    inner = fc.inner_index
    spect = fc.spectator_index
    out = {}
    v_val, v_g, v_h = _term_eval(_terms_V(fc), xs, (0, inner), want_derivs)
    out["V"] = PotentialEval(v_val, v_g, v_h)
    u01_val, u01_g, u01_h = _term_eval(_terms_U01(fc), xs, (0, inner), want_derivs)
    out["U01"] = PotentialEval(u01_val, u01_g, u01_h)
    u2_val, u2_g, u2_h = _term_eval(_terms_U2(fc), xs, (0, inner, spect), want_derivs)
    out["U2"] = PotentialEval(u2_val, u2_g, u2_h)
    return out


def hamiltonian_cartesian(x0, x1, x2, p0, p1, p2, masses, side):
    """Total Hamiltonian in one Jacobi frame (three Kepler terms + U01 + U2)."""
    fc = masses.side(side)
    pots = potentials_cartesian(x0, x1, x2, masses, side, want_derivs=False)
    kin = 0.0
    for i, p in enumerate((np.asarray(p0), np.asarray(p1), np.asarray(p2))):
        M, k = fc.pair(i)
        kin = kin + (p @ p) / (2.0 * M)
    xs = (np.asarray(x0), np.asarray(x1), np.asarray(x2))
    kep = 0.0
    for i in range(3):
        M, k = fc.pair(i)
        kep = kep - k / np.sqrt(xs[i] @ xs[i])
    return kin + kep + pots["U01"].value + pots["U2"].value


def pair_potentials(state, masses):
    """Potential evaluations and the Hamiltonian for a CartesianJacobiState."""
    side = state.frame
    out = potentials_cartesian(state.x0, state.x1, state.x2, masses, side)
    out["H"] = hamiltonian_cartesian(state.x0, state.x1, state.x2,
                                     state.p0, state.p1, state.p2, masses, side)
    return out


# --------------------------------------------------------------------------
# second derivatives w.r.t. (G, g) at the isosceles limit
# --------------------------------------------------------------------------

ISO_ANGLE_REFS = (np.pi / 2, 0.0, 0.0)   # g0, g1, g2
PAIR_ROT_OFFSETS = (0.0, np.pi, 0.0)     # extra rotation applied per pair


def _rot(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s], [s, c]])


_J = np.array([[0.0, -1.0], [1.0, 0.0]])


def second_derivatives_Gg(elements, masses, side):
    """Closed-form second partials of U01 and U2 over (G0,g0,G1,g1,G2,g2).

    Valid only at the isosceles limit (all G zero, angles at the reference
    values g0 = pi/2, g1 = 0, g2 = 0); anything else raises
    IsoscelesLimitError — off the limit use finite differences of
    pair_potentials instead. The G-derivatives use the smooth continuation
    of pair_G_derivative_vectors, so entries stay consistent when a pair
    crosses the parabolic boundary.
    """
    from .charts import pair_to_cartesian
    fc = masses.side(side)
    xs, vecs = [], []
    for i, el in enumerate(elements):
        if abs(el.G) > 1e-12:
            raise IsoscelesLimitError(f"pair {i} has G = {el.G}, not 0")
        dg = (el.g - ISO_ANGLE_REFS[i] + np.pi) % (2 * np.pi) - np.pi
        if abs(dg) > 1e-9:
            raise IsoscelesLimitError(f"pair {i} angle off the reference by {dg}")
        M, k = fc.pair(i)
        x, p = pair_to_cartesian(el, i, masses, side)
        xs.append(x)
        vecs.append(pair_G_derivative_vectors(x, p, M, k))

    pots = potentials_cartesian(xs[0], xs[1], xs[2], masses, side)
    return {name: gg_hessian(vecs, pots[name].grad, pots[name].hess)
            for name in ("U01", "U2")}


# --------------------------------------------------------------------------
# U01 second partials in blowup variables (isosceles limit, r-powers removed)
# --------------------------------------------------------------------------

def pair_G_derivative_vectors(x, p, M, k):
    """Smooth (G, g)-derivative vectors of a pair's position at G = 0.

    The G-derivative of the position at fixed (L, ell, g) has the
    branch-free closed forms

        dx/dG   = -(x.p) J x / (M k |x|),
        d²x/dG² = -(3 + 2|x|E/k) x / (M k |x|),
        d²x/dGdg = J dx/dG,   dx/dg = J x,   d²x/dg² = -x,

    valid on the degenerate (e = 1) family for either energy sign; these
    analytically continue the elliptic and hyperbolic chart derivatives
    across the parabolic boundary.
    """
    r = np.sqrt(x @ x)
    q = x @ p
    E = (p @ p) / (2.0 * M) - k / r
    Jx = np.array([-x[1], x[0]])
    x_G = -q * Jx / (M * k * r)
    x_GG = -(3.0 + 2.0 * r * E / k) * x / (M * k * r)
    return {"x": x, "G": x_G, "g": Jx, "GG": x_GG, "Gg": np.array([-x_G[1], x_G[0]]),
            "gg": -x}


def gg_hessian(pairs, grad, hess):
    """Second partials of a potential over (G0,g0,G1,g1,G2,g2) at G = 0.

    pairs: the derivative-vector dictionaries of the three pairs; grad/hess:
    the position-space gradient (6,) and Hessian (6,6) of the potential.
    """
    M6 = np.zeros((6, 6))
    dvecs = [(pairs[i // 2]["G"] if i % 2 == 0 else pairs[i // 2]["g"])
             for i in range(6)]
    for a in range(6):
        i = a // 2
        for b in range(6):
            j = b // 2
            M6[a, b] = dvecs[a] @ hess[2 * i:2 * i + 2, 2 * j:2 * j + 2] @ dvecs[b]
            if i == j:
                key = ("GG", "Gg", "Gg", "gg")[(a % 2) * 2 + (b % 2)]
                M6[a, b] += grad[2 * i:2 * i + 2] @ pairs[i][key]
    return M6


def u01_blowup_hessian(v, psi, what, fc):
    """Rescaling-invariant combinations of U01 second partials.

    Returns the dictionary

        rg0g0   = r   * d²U01/dg0²
        r2G0G0  = r²  * d²U01/dG0²
        r32G0g0 = r^1.5 * d²U01/dG0 dg0
        r32g0G1 = r^1.5 * d²U01/dg0 dG1
        r2G0G1  = r²  * d²U01/dG0 dG1
        r2G1G1  = r²  * d²U01/dG1²

    at the isosceles limit; each is a function of (v, psi, what) only, hence
    well defined on the collision manifold r = 0 and finite through the
    binary's double collision |psi| = pi/2. "Pair 1" means the inner pair of
    the frame the constants belong to.
    """
    m = fc.m_ex
    M0, k0 = fc.pair(0)
    M1, k1 = fc.pair(fc.inner_index)
    s, c = np.sin(psi), np.cos(psi)
    sa = np.abs(s)
    sg = np.sign(s) if s != 0 else 1.0
    D = s * s / M1 + c * c / (4.0 * M0)
    r0 = c / np.sqrt(M0)               # scaled radii at r = 1
    SA = v * c * c - what * s          # x0 . p0  (scaled)
    SB = v * s * s + what * s          # x1 . p1  (scaled)
    D32, D52 = D ** 1.5, D ** 2.5
    # gradient pieces
    g0y = m * r0 / (2.0 * D32)
    Gf = 2.0 * m * (1.0 / D32 - M1 ** 1.5 / sa ** 3)
    g1x = (s / np.sqrt(M1)) * Gf
    # Hessian pieces (diagonal blocks are diagonal, coupling block is
    # antidiagonal, by the axis-aligned isosceles geometry)
    H00xx = -(m / 2.0) * (3.0 * s * s / M1 - D) / D52
    H11yy = -k1 * M1 ** 1.5 / sa ** 3 - m * (1.5 * c * c / M0 - 2.0 * D) / D52
    h01 = -3.0 * m * s * c / (2.0 * np.sqrt(M0 * M1) * D52)
    # scaled radial-energy products, regular through the double collision
    T0 = (SA * SA / 2.0 - k0 * np.sqrt(M0) * c) / M0
    T1 = (SB * SB / 2.0 - k1 * np.sqrt(M1) * sa ** 3 / (s * s)) / M1

    rg0g0 = r0 * r0 * H00xx - g0y * r0
    r32G0g0 = (SA / (M0 * k0)) * (g0y - r0 * H00xx)
    r32g0G1 = r0 * h01 * SB * sg / (M1 * k1)
    r2G0G0 = ((SA / (M0 * k0)) ** 2 * H00xx
              - (m / (2.0 * D32)) * (3.0 * r0 + 2.0 * T0 / k0) / (M0 * k0))
    r2G0G1 = -SA * SB * sg * h01 / (M0 * k0 * M1 * k1)
    r2G1G1 = ((SB / (M1 * k1)) ** 2 * H11yy
              - (3.0 * sa * Gf / np.sqrt(M1) + 2.0 * Gf * T1 / k1) / (M1 * k1))
    return {"rg0g0": rg0g0, "r2G0G0": r2G0G0, "r32G0g0": r32G0g0,
            "r32g0G1": r32g0G1, "r2G0G1": r2G0G1, "r2G1G1": r2G1G1}
