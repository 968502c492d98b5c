"""Vector fields of the four-body laboratory and their variational systems.

Field ids and state layouts (clock quadratures are appended by the
integrator, not part of the state):

* I3BP_REGULARIZED   (r, v, psi, what)                     time tau-hat
* I4BP_REGULARIZED   (r, v, psi, what, L_sp, ell_sp)       time tau-hat
* F3BP_BLOWUP        (r, v, psi, w, w0, w1, th0, th1)      time tau
* F4BP_CARTESIAN     (x0, x1, x2, p0, p1, p2) flattened    time t
* F4BP_DELAUNAY_LEFT (L0,l0,G0,g0,G1,g1,L2,l2,G2,g2)       time ell1
* F4BP_DELAUNAY_RIGHT(L0,l0,G0,g0,L1,l1,G1,g1,G2,g2)       time ell2

Every rhs accepts complex state vectors so Jacobians are available through
complex-step differentiation (exact to machine precision).
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import kepler, model
from .model import PAIR_ROT_OFFSETS


class VectorFieldId(Enum):
    I3BP_REGULARIZED = "I3BP_REGULARIZED"
    I4BP_REGULARIZED = "I4BP_REGULARIZED"
    F3BP_BLOWUP = "F3BP_BLOWUP"
    F4BP_CARTESIAN = "F4BP_CARTESIAN"
    F4BP_DELAUNAY_LEFT = "F4BP_DELAUNAY_LEFT"
    F4BP_DELAUNAY_RIGHT = "F4BP_DELAUNAY_RIGHT"


FIELD_DIMS = {
    VectorFieldId.I3BP_REGULARIZED: 4,
    VectorFieldId.I4BP_REGULARIZED: 6,
    VectorFieldId.F3BP_BLOWUP: 8,
    VectorFieldId.F4BP_CARTESIAN: 12,
    VectorFieldId.F4BP_DELAUNAY_LEFT: 10,
    VectorFieldId.F4BP_DELAUNAY_RIGHT: 10,
}


def cs_jacobian(f, y, h=1e-30):
    """Complex-step Jacobian of f at y (f must be complex-safe)."""
    y = np.asarray(y, dtype=float)
    n = len(y)
    f0 = np.asarray(f(y))
    J = np.zeros((len(f0), n))
    for j in range(n):
        yc = y.astype(complex)
        yc[j] += 1j * h
        J[:, j] = np.imag(f(yc)) / h
    return J


def _rotm(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s], [s, c]])


# --------------------------------------------------------------------------
# field objects
# --------------------------------------------------------------------------

@dataclass
class Field:
    """A vector field with a fixed chart, clock, and parameter set."""

    id: VectorFieldId
    masses: model.MassConfig
    side: str = "left"
    energy: float = None   # total energy where the chart eliminates a pair

    def __post_init__(self):
        self.fc = self.masses.side(self.side)
        self.dim = FIELD_DIMS[self.id]
        self._rhs = _RHS[self.id]

    @property
    def time_label(self):
        return {"I3BP_REGULARIZED": "tauhat", "I4BP_REGULARIZED": "tauhat",
                "F3BP_BLOWUP": "tau", "F4BP_CARTESIAN": "t",
                "F4BP_DELAUNAY_LEFT": "ell1",
                "F4BP_DELAUNAY_RIGHT": "ell2"}[self.id.value]

    def rhs(self, t, y):
        return self._rhs(self, t, y)

    def jacobian(self, t, y):
        return cs_jacobian(lambda z: self._rhs(self, t, z), y)

    # auxiliary clocks integrated alongside the state
    def clock_names(self):
        if self.id in (VectorFieldId.I3BP_REGULARIZED,
                       VectorFieldId.I4BP_REGULARIZED):
            return ("t", "tau")
        if self.id is VectorFieldId.F3BP_BLOWUP:
            return ("t",)
        if self.id in (VectorFieldId.F4BP_DELAUNAY_LEFT,
                       VectorFieldId.F4BP_DELAUNAY_RIGHT):
            return ("t",)
        return ()

    def clock_rates(self, t, y):
        if self.id in (VectorFieldId.I3BP_REGULARIZED,
                       VectorFieldId.I4BP_REGULARIZED):
            r, psi = y[0], y[2]
            c = np.cos(psi)
            return np.array([r ** 1.5 * c, c])
        if self.id is VectorFieldId.F3BP_BLOWUP:
            return np.array([y[0] ** 1.5])
        if self.id in (VectorFieldId.F4BP_DELAUNAY_LEFT,
                       VectorFieldId.F4BP_DELAUNAY_RIGHT):
            return np.array([1.0 / _delaunay_ell_rate(self, t, y)])
        return np.zeros(0)


def get_field(fid, masses, side="left", energy=None):
    if isinstance(fid, str):
        fid = VectorFieldId(fid)
    return Field(fid, masses, side=side, energy=energy)


# --------------------------------------------------------------------------
# I3BP, regularized (double collisions are elastic bounces)
# --------------------------------------------------------------------------

def _rhs_i3bp(field, t, y):
    r, v, psi, what = y
    m = field.fc.m_ex
    E = field.energy
    c = np.cos(psi)
    s = np.sin(psi)
    vb_c = model.vbar_times_cos(psi, m)       # Vbar * cos
    vbp_c2 = model.vbar_d1_times_cos2(psi, m)  # Vbar' * cos^2
    rE = r * E
    dr = r * v * c
    dv = 2.0 * rE * c - 0.5 * v * v * c - vb_c
    dpsi = what
    dwhat = (-0.5 * v * what * c - vbp_c2
             - s * (2.0 * rE * c - v * v * c - 2.0 * vb_c))
    return np.array([dr, dv, dpsi, dwhat])


# --------------------------------------------------------------------------
# I4BP, regularized, spectator pair in Delaunay form
# --------------------------------------------------------------------------

def _iso_triple_positions(field, r, psi):
    fc = field.fc
    M0 = fc.M0
    Min = fc.pair(fc.inner_index)[0]
    x0 = np.array([0.0 * r, r * np.cos(psi) / np.sqrt(M0)])
    xin = np.array([r * np.sin(psi) / np.sqrt(Min), 0.0 * r])
    return x0, xin


def _spectator_position(field, L, ell):
    """On-axis spectator position and its (L, ell) derivatives (G = 0)."""
    fc = field.fc
    Msp, ksp = fc.pair(fc.spectator_index)
    u = kepler.solve_hyperbolic(ell, 1.0)
    a = L * L / (Msp * ksp)
    direction = 1.0 if fc.spectator_index == 2 else -1.0
    q = a * (np.cosh(u) - 1.0)
    dq_dL = 2.0 * L * (np.cosh(u) - 1.0) / (Msp * ksp)
    dq_dell = a * np.sinh(u) / (1.0 - np.cosh(u))
    xsp = np.array([direction * q, 0.0 * q])
    return xsp, direction * dq_dL, direction * dq_dell


def _rhs_i4bp(field, t, y):
    r, v, psi, what, Lsp, ellsp = y
    fc = field.fc
    m = fc.m_ex
    M0 = fc.M0
    Min = fc.pair(fc.inner_index)[0]
    Msp, ksp = fc.pair(fc.spectator_index)
    c = np.cos(psi)
    s = np.sin(psi)

    x0, xin = _iso_triple_positions(field, r, psi)
    xsp, dq_dL, dq_dell = _spectator_position(field, Lsp, ellsp)
    xs = {0: x0, fc.inner_index: xin, fc.spectator_index: xsp}
    val, grad, _ = model._term_eval(
        model._terms_U2(fc), [xs[0], xs[1], xs[2]],
        (0, fc.inner_index, fc.spectator_index), want_derivs=True, check=False)

    E_kep_sp = Msp * ksp ** 2 / (2.0 * Lsp ** 2)
    E_loc = field.energy - E_kep_sp - val

    vb_c = model.vbar_times_cos(psi, m)
    vbp_c2 = model.vbar_d1_times_cos2(psi, m)
    rE = r * E_loc
    dr = r * v * c
    dv = 2.0 * rE * c - 0.5 * v * v * c - vb_c
    dpsi = what
    dwhat = (-0.5 * v * what * c - vbp_c2
             - s * (2.0 * rE * c - v * v * c - 2.0 * vb_c))

    # spectator back-reaction on the triple
    g0s = grad[1]                        # dU2/d(x0 vertical scalar)
    i_in = fc.inner_index
    g1s = grad[2 * i_in]                 # dU2/d(inner horizontal scalar)
    x0s = x0[1]
    x1s = xin[0]
    dv += -c * r * (x0s * g0s + x1s * g1s)
    dwhat += c * c * r * (np.sqrt(Min / M0) * x1s * g0s
                          - np.sqrt(M0 / Min) * x0s * g1s)

    i_sp = fc.spectator_index
    gsp = grad[2 * i_sp]                 # dU2/d(spectator horizontal scalar)
    dU2_dL = gsp * dq_dL
    dU2_dell = gsp * dq_dell
    r32c = c * r ** 1.5
    dLsp = -r32c * dU2_dell
    dellsp = r32c * (-Msp * ksp ** 2 / Lsp ** 3 + dU2_dL)
    return np.array([dr, dv, dpsi, dwhat, dLsp, dellsp])


# --------------------------------------------------------------------------
# full 3BP in blowup coordinates (polar angles, time tau, unregularized)
# --------------------------------------------------------------------------

def _rhs_f3bp_blowup(field, t, y):
    r, v, psi, w, w0, w1, th0, th1 = y
    fc = field.fc
    M0 = fc.M0
    Min = fc.pair(fc.inner_index)[0]
    c, s = np.cos(psi), np.sin(psi)
    r0 = r * c / np.sqrt(M0)
    r1 = r * s / np.sqrt(Min)
    e0 = np.array([np.cos(th0), np.sin(th0)])
    e1 = np.array([np.cos(th1), np.sin(th1)])
    x0 = r0 * e0
    x1 = r1 * e1
    val, grad, _ = model._term_eval(
        model._terms_V(fc), [x0, x1], (0, 1), want_derivs=True, check=False)
    vbar = r * val
    g0, g1 = grad[0:2], grad[2:4]
    # chain rule on the sphere: d/dpsi at fixed thetas, d/dtheta_i at fixed psi
    dV_dpsi = r * (g0 @ (-r * s / np.sqrt(M0) * e0)
                   + g1 @ (r * c / np.sqrt(Min) * e1))
    e0p = np.array([-np.sin(th0), np.cos(th0)])
    e1p = np.array([-np.sin(th1), np.cos(th1)])
    dV_dth0 = r * (g0 @ (r0 * e0p))
    dV_dth1 = r * (g1 @ (r1 * e1p))

    dr = r * v
    dv = w * w + w0 * w0 / c ** 2 + w1 * w1 / s ** 2 + 0.5 * v * v + vbar
    dpsi = w
    dw = (-0.5 * v * w - dV_dpsi
          - w0 * w0 * s / c ** 3 + w1 * w1 * c / s ** 3)
    dw0 = -0.5 * v * w0 - dV_dth0
    dw1 = -0.5 * v * w1 - dV_dth1
    dth0 = w0 / c ** 2
    dth1 = w1 / s ** 2
    return np.array([dr, dv, dpsi, dw, dw0, dw1, dth0, dth1])


# --------------------------------------------------------------------------
# full 4BP, Cartesian Jacobi
# --------------------------------------------------------------------------

def _rhs_f4bp_cartesian(field, t, y):
    fc = field.fc
    xs = [y[0:2], y[2:4], y[4:6]]
    ps = [y[6:8], y[8:10], y[10:12]]
    inner, spect = fc.inner_index, fc.spectator_index
    _, gu01, _ = model._term_eval(model._terms_U01(fc), xs, (0, inner),
                                  want_derivs=True, check=False)
    _, gu2, _ = model._term_eval(model._terms_U2(fc), xs, (0, inner, spect),
                                 want_derivs=True, check=False)
    dy = np.zeros(12, dtype=y.dtype)
    for i in range(3):
        M, k = fc.pair(i)
        x = xs[i]
        r3 = (x @ x) ** 1.5
        dy[2 * i:2 * i + 2] = ps[i] / M
        dy[6 + 2 * i:8 + 2 * i] = (-k * x / r3
                                   - gu01[2 * i:2 * i + 2]
                                   - gu2[2 * i:2 * i + 2])
    return dy


# --------------------------------------------------------------------------
# full 4BP, Delaunay form with the inner pair eliminated
# --------------------------------------------------------------------------

def _qp_position_derivs(kind, m, k, L, ell, G, g, offset):
    """Rotated position and its derivatives w.r.t. (L, ell, G, g)."""
    if kind == "elliptic":
        e = np.sqrt(1.0 - (G / L) ** 2)
        u = kepler.solve_elliptic(ell, e)
        cu, su = np.cos(u), np.sin(u)
        a = L * L / (m * k)
        denom = 1.0 - e * cu
        u_l = 1.0 / denom
        u_e = su / denom
        e_L = G ** 2 / (e * L ** 3) if G != 0 else 0.0 * L
        e_G = -G / (e * L ** 2)
        Q = np.array([a * (cu - e), (L * G / (m * k)) * su])
        Q_l = np.array([-a * su * u_l, (L * G / (m * k)) * cu * u_l])
        Q_L = np.array([2 * L * (cu - e) / (m * k) - a * e_L * (su * u_e + 1.0),
                        (G / (m * k)) * su + (L * G / (m * k)) * cu * u_e * e_L])
        Q_G = np.array([-a * e_G * (su * u_e + 1.0),
                        (L / (m * k)) * su + (L * G / (m * k)) * cu * u_e * e_G])
    else:
        e = np.sqrt(1.0 + (G / L) ** 2)
        u = kepler.solve_hyperbolic(ell, e)
        cu, su = np.cosh(u), np.sinh(u)
        a = L * L / (m * k)
        denom = 1.0 - e * cu
        u_l = 1.0 / denom
        u_e = su / denom
        e_L = -G ** 2 / (e * L ** 3) if G != 0 else 0.0 * L
        e_G = G / (e * L ** 2)
        # canonical sign convention: the G-odd terms are flipped relative to
        # the bare hyperbolic parameterization so that G = q x p
        Q = np.array([a * (cu - e), -(L * G / (m * k)) * su])
        Q_l = np.array([a * su * u_l, -(L * G / (m * k)) * cu * u_l])
        Q_L = np.array([2 * L * (cu - e) / (m * k) + a * e_L * (su * u_e - 1.0),
                        -(G / (m * k)) * su - (L * G / (m * k)) * cu * u_e * e_L])
        Q_G = np.array([a * e_G * (su * u_e - 1.0),
                        -(L / (m * k)) * su - (L * G / (m * k)) * cu * u_e * e_G])
    R = _rotm(g + offset)
    J = np.array([[0.0, -1.0], [1.0, 0.0]])
    return {"x": R @ Q, "L": R @ Q_L, "ell": R @ Q_l, "G": R @ Q_G,
            "g": R @ (J @ Q)}


def _delaunay_unpack(field, t, y):
    """Elements of all three pairs; the inner L comes from energy conservation."""
    fc = field.fc
    if field.side == "left":
        L0, l0, G0, g0, G1, g1, L2, l2, G2, g2 = y
        inner = {"ell": t, "G": G1, "g": g1}
        spect = {"L": L2, "ell": l2, "G": G2, "g": g2}
    else:
        L0, l0, G0, g0, L1, l1, G1, g1, G2, g2 = y
        inner = {"ell": t, "G": G2, "g": g2}
        spect = {"L": L1, "ell": l1, "G": G1, "g": g1}
    return (L0, l0, G0, g0), inner, spect


def _delaunay_assemble(field, binary, inner, spect, L_in):
    fc = field.fc
    i_in, i_sp = fc.inner_index, fc.spectator_index
    M0, k0 = fc.pair(0)
    Min, kin = fc.pair(i_in)
    Msp, ksp = fc.pair(i_sp)
    d0 = _qp_position_derivs("elliptic", M0, k0, binary[0], binary[1],
                             binary[2], binary[3], PAIR_ROT_OFFSETS[0])
    din = _qp_position_derivs("hyperbolic", Min, kin, L_in, inner["ell"],
                              inner["G"], inner["g"], PAIR_ROT_OFFSETS[i_in])
    dsp = _qp_position_derivs("hyperbolic", Msp, ksp, spect["L"], spect["ell"],
                              spect["G"], spect["g"], PAIR_ROT_OFFSETS[i_sp])
    return d0, din, dsp


def _delaunay_H_and_grads(field, binary, inner, spect, L_in):
    fc = field.fc
    i_in, i_sp = fc.inner_index, fc.spectator_index
    M0, k0 = fc.pair(0)
    Min, kin = fc.pair(i_in)
    Msp, ksp = fc.pair(i_sp)
    d0, din, dsp = _delaunay_assemble(field, binary, inner, spect, L_in)
    xs = {0: d0["x"], i_in: din["x"], i_sp: dsp["x"]}
    xs_list = [xs[0], xs[1], xs[2]]
    _, g01, _ = model._term_eval(model._terms_U01(fc), xs_list, (0, i_in),
                                 want_derivs=True, check=False)
    u2val, g2_, _ = model._term_eval(model._terms_U2(fc), xs_list,
                                     (0, i_in, i_sp), want_derivs=True,
                                     check=False)
    u01val, _, _ = model._term_eval(model._terms_U01(fc), xs_list, (0, i_in),
                                    want_derivs=False, check=False)
    gU = g01 + g2_
    H = (-M0 * k0 ** 2 / (2 * binary[0] ** 2)
         + Min * kin ** 2 / (2 * L_in ** 2)
         + Msp * ksp ** 2 / (2 * spect["L"] ** 2)
         + u01val + u2val)
    return H, gU, (d0, din, dsp)


def _solve_inner_L(field, binary, inner, spect, E, guess=None, tol=1e-12):
    fc = field.fc
    Min, kin = fc.pair(fc.inner_index)
    M0, k0 = fc.pair(0)
    Msp, ksp = fc.pair(fc.spectator_index)
    E_in0 = (E + M0 * k0 ** 2 / (2 * binary[0] ** 2)
             - Msp * ksp ** 2 / (2 * spect["L"] ** 2))
    if guess is not None:
        L = guess
    elif np.real(E_in0) > 0:
        L = kin * np.sqrt(Min / (2.0 * E_in0))
    else:
        L = 1.0 + 0.0 * E_in0
    i_in = fc.inner_index
    polish = 2
    for _ in range(40):
        H, gU, (d0, din, dsp) = _delaunay_H_and_grads(field, binary, inner,
                                                      spect, L)
        f = H - E
        dH_dL = (-Min * kin ** 2 / L ** 3
                 + gU[2 * i_in:2 * i_in + 2] @ din["L"])
        step = f / dH_dL
        L = L - step
        if abs(np.real(f)) < tol and abs(np.real(step)) < tol:
            if polish == 0 or not np.iscomplexobj(L):
                return L
            polish -= 1
    raise RuntimeError(f"inner-L energy solve stalled, residual {f}")


def _delaunay_rates(field, t, y):
    """Canonical rates of all ten kept variables plus the inner ell rate."""
    fc = field.fc
    i_in, i_sp = fc.inner_index, fc.spectator_index
    binary, inner, spect = _delaunay_unpack(field, t, y)
    L_in = _solve_inner_L(field, binary, inner, spect, field.energy)
    H, gU, (d0, din, dsp) = _delaunay_H_and_grads(field, binary, inner, spect,
                                                  L_in)
    M0, k0 = fc.pair(0)
    Min, kin = fc.pair(i_in)
    Msp, ksp = fc.pair(i_sp)

    def chain(dd, i, key):
        return gU[2 * i:2 * i + 2] @ dd[key]

    dH_dL0 = M0 * k0 ** 2 / binary[0] ** 3 + chain(d0, 0, "L")
    dH_dl0 = chain(d0, 0, "ell")
    dH_dG0 = chain(d0, 0, "G")
    dH_dg0 = chain(d0, 0, "g")
    dH_dGin = chain(din, i_in, "G")
    dH_dgin = chain(din, i_in, "g")
    dH_dLsp = -Msp * ksp ** 2 / spect["L"] ** 3 + chain(dsp, i_sp, "L")
    dH_dlsp = chain(dsp, i_sp, "ell")
    dH_dGsp = chain(dsp, i_sp, "G")
    dH_dgsp = chain(dsp, i_sp, "g")
    ell_rate = -Min * kin ** 2 / L_in ** 3 + chain(din, i_in, "L")

    rates = {"L0": -dH_dl0, "l0": dH_dL0, "G0": -dH_dg0, "g0": dH_dG0,
             "Gin": -dH_dgin, "gin": dH_dGin,
             "Lsp": -dH_dlsp, "lsp": dH_dLsp, "Gsp": -dH_dgsp, "gsp": dH_dGsp}
    return rates, ell_rate, L_in


def _delaunay_ell_rate(field, t, y):
    _, ell_rate, _ = _delaunay_rates(field, t, y)
    return ell_rate


def _rhs_f4bp_delaunay(field, t, y):
    rates, ell_rate, _ = _delaunay_rates(field, t, y)
    if field.side == "left":
        order = ("L0", "l0", "G0", "g0", "Gin", "gin", "Lsp", "lsp", "Gsp",
                 "gsp")
    else:
        order = ("L0", "l0", "G0", "g0", "Lsp", "lsp", "Gsp", "gsp", "Gin",
                 "gin")
    return np.array([rates[k] / ell_rate for k in order])


class IsoscelesPairsField:
    """Isosceles dynamics with the binary in Delaunay elements.

    State (L0, ell0, x_in, p_in[, x_sp, p_sp]) with the exterior pairs as
    signed horizontal scalars; physical time. The binary's double collisions
    are invisible in the element variables (the singular Kepler term is
    absorbed into -M0 k0^2/(2 L0^2)), which makes this the efficient chart
    for the long legs far from triple collision. Not valid near the triple
    collision itself (x_in -> 0).
    """

    time_label = "t"

    def __init__(self, masses, side="left", with_spectator=True):
        self.masses = masses
        self.side = side
        self.with_spectator = with_spectator
        self.fc = masses.side(side)
        self.dim = 6 if with_spectator else 4
        self.id = f"ISO_PAIRS_{side.upper()}"

    def clock_names(self):
        return ()

    def clock_rates(self, t, y):
        return np.zeros(0)

    def _geometry(self, y):
        fc = self.fc
        M0, k0 = fc.pair(0)
        L0, ell0 = y[0], y[1]
        u0 = kepler.solve_elliptic(ell0, 1.0)
        a0 = L0 * L0 / (M0 * k0)
        r0 = a0 * (1.0 - np.cos(u0))
        return u0, a0, r0

    def rhs(self, t, y):
        fc = self.fc
        m = fc.m_ex
        M0, k0 = fc.pair(0)
        Min, kin = fc.pair(fc.inner_index)
        u0, a0, r0 = self._geometry(y)
        L0 = y[0]
        s_in, p_in = y[2], y[3]
        rho1sq = s_in * s_in + 0.25 * r0 * r0
        rho1 = np.sqrt(rho1sq)
        # potential = -2m/rho1 - m*msp/|da| - 2 msp/rho2 (physical terms;
        # the binary's own Kepler part lives in -M0 k0^2/(2 L0^2))
        g_r0 = 2.0 * m * 0.25 / rho1 ** 3          # (1/r0) dV/dr0, inner part
        dU_dsin = 2.0 * m * s_in / rho1 ** 3
        dU_dssp = 0.0
        if self.with_spectator:
            msp = fc.m_sp
            s_sp, p_sp = y[4], y[5]
            b = 2.0 / (m + 2.0)
            cpair = m / (m + 2.0)
            # d_a: spectator vs inner exterior body; d_b: spectator vs the
            # binary's center of mass
            da = s_sp - b * s_in
            db = s_sp + cpair * s_in
            rho2 = np.sqrt(db * db + 0.25 * r0 * r0)
            abs_da = np.sqrt(da * da)
            g_r0 = g_r0 + 2.0 * msp * 0.25 / rho2 ** 3
            dU2_dda = m * msp * da / abs_da ** 3
            dU2_ddb = 2.0 * msp * db / rho2 ** 3
            dU_dsin = dU_dsin - b * dU2_dda + cpair * dU2_ddb
            dU_dssp = dU2_dda + dU2_ddb
        # binary element rates: dr0/dl0 = a0^2 sin(u0)/r0, dr0/dL0 = 2 r0/L0
        dL0 = -g_r0 * a0 * a0 * np.sin(u0)
        dell0 = M0 * k0 ** 2 / L0 ** 3 + g_r0 * r0 * (2.0 * r0 / L0)
        out = [dL0, dell0, p_in / Min, -dU_dsin]
        if self.with_spectator:
            Msp = fc.pair(fc.spectator_index)[0]
            out += [p_sp / Msp, -dU_dssp]
        return np.array(out)

    def jacobian(self, t, y):
        return cs_jacobian(lambda z: self.rhs(t, z), y)

    def hamiltonian(self, y):
        fc = self.fc
        m = fc.m_ex
        M0, k0 = fc.pair(0)
        Min = fc.pair(fc.inner_index)[0]
        u0, a0, r0 = self._geometry(y)
        s_in, p_in = y[2], y[3]
        rho1 = np.sqrt(s_in * s_in + 0.25 * r0 * r0)
        H = (-M0 * k0 ** 2 / (2.0 * y[0] ** 2)
             + p_in ** 2 / (2.0 * Min) - 2.0 * m / rho1)
        if self.with_spectator:
            msp = fc.m_sp
            Msp = fc.pair(fc.spectator_index)[0]
            s_sp, p_sp = y[4], y[5]
            b = 2.0 / (m + 2.0)
            cpair = m / (m + 2.0)
            da = s_sp - b * s_in
            db = s_sp + cpair * s_in
            rho2 = np.sqrt(db * db + 0.25 * r0 * r0)
            H = H + (p_sp ** 2 / (2.0 * Msp)
                     - m * msp / np.sqrt(da * da) - 2.0 * msp / rho2)
        return H


class CanonicalDelaunayField:
    """Unreduced 12-variable Delaunay form of the F4BP, physical time.

    State (L0,l0,G0,g0,L1,l1,G1,g1,L2,l2,G2,g2); used for structure checks
    (Liouville volume) before any time reparameterization or energy
    reduction. Pair kinds follow the standard regime: binary elliptic,
    exterior pairs hyperbolic.
    """

    dim = 12
    time_label = "t"

    def __init__(self, masses, side="left"):
        self.masses = masses
        self.side = side
        self.fc = masses.side(side)
        self.id = VectorFieldId.F4BP_DELAUNAY_LEFT if side == "left" \
            else VectorFieldId.F4BP_DELAUNAY_RIGHT

    def clock_names(self):
        return ()

    def clock_rates(self, t, y):
        return np.zeros(0)

    def rhs(self, t, y):
        fc = self.fc
        dd = []
        xs = []
        for i in range(3):
            M, k = fc.pair(i)
            kind = "elliptic" if i == 0 else "hyperbolic"
            d = _qp_position_derivs(kind, M, k, y[4 * i], y[4 * i + 1],
                                    y[4 * i + 2], y[4 * i + 3],
                                    PAIR_ROT_OFFSETS[i])
            dd.append(d)
            xs.append(d["x"])
        i_in, i_sp = fc.inner_index, fc.spectator_index
        _, g01, _ = model._term_eval(model._terms_U01(fc), xs, (0, i_in),
                                     want_derivs=True, check=False)
        _, gu2, _ = model._term_eval(model._terms_U2(fc), xs,
                                     (0, i_in, i_sp), want_derivs=True,
                                     check=False)
        gU = g01 + gu2
        dy = np.zeros(12, dtype=np.asarray(y).dtype)
        for i in range(3):
            M, k = fc.pair(i)
            kep = (M * k * k / y[4 * i] ** 3 if i == 0
                   else -M * k * k / y[4 * i] ** 3)
            gblock = gU[2 * i:2 * i + 2]
            dy[4 * i] = -(gblock @ dd[i]["ell"])
            dy[4 * i + 1] = kep + gblock @ dd[i]["L"]
            dy[4 * i + 2] = -(gblock @ dd[i]["g"])
            dy[4 * i + 3] = gblock @ dd[i]["G"]
        return dy

    def jacobian(self, t, y):
        return cs_jacobian(lambda z: self.rhs(t, z), y)


_RHS = {
    VectorFieldId.I3BP_REGULARIZED: _rhs_i3bp,
    VectorFieldId.I4BP_REGULARIZED: _rhs_i4bp,
    VectorFieldId.F3BP_BLOWUP: _rhs_f3bp_blowup,
    VectorFieldId.F4BP_CARTESIAN: _rhs_f4bp_cartesian,
    VectorFieldId.F4BP_DELAUNAY_LEFT: _rhs_f4bp_delaunay,
    VectorFieldId.F4BP_DELAUNAY_RIGHT: _rhs_f4bp_delaunay,
}


# --------------------------------------------------------------------------
# variational coefficient matrices
# --------------------------------------------------------------------------

@dataclass
class CoefficientMatrix:
    matrix: np.ndarray
    system: str
    chart: str
    basepoint: object = None


def w0g01_matrix(bp, masses, side="left"):
    """2x2 coefficient matrix of the (w0, gbar01) variational system (time tau).

    bp = (r, v, psi, what); the entries depend only on (v, psi, what) — the
    rescaling-invariant combinations stay finite on the collision manifold.
    """
    _, v, psi, what = bp[:4]
    fc = masses.side(side)
    h = model.u01_blowup_hessian(v, psi, what, fc)
    a11 = -0.5 * v - (h["r32G0g0"] - h["r32g0G1"])
    a12 = -h["rg0g0"]
    a21 = h["r2G0G0"] - 2.0 * h["r2G0G1"] + h["r2G1G1"]
    a22 = h["r32G0g0"] - h["r32g0G1"]
    M = np.array([[a11, a12], [a21, a22]])
    return CoefficientMatrix(M, "W0G01", f"blowup/{side}", bp)


def _u2_Gg_blocks(bp, masses, side):
    """U2 second partials over (G,g) at the isosceles limit, from the
    reconstructed configuration (requires r > 0, away from the bounce)."""
    from .charts import DelaunayElements, jacobi_from_blowup, BlowupState
    r, v, psi, what, Lsp, lsp = bp
    fc = masses.side(side)
    bl = BlowupState(r=r, v=v, psi=psi, what=what, side=side)
    spect = DelaunayElements("hyperbolic", Lsp, lsp, 0.0,
                             model.ISO_ANGLE_REFS[fc.spectator_index])
    st = jacobi_from_blowup(bl, masses, spectator=spect)
    vecs = [model.pair_G_derivative_vectors(*st.pair(i), *fc.pair(i))
            for i in range(3)]
    pots = model.potentials_cartesian(st.x0, st.x1, st.x2, masses, side)
    return model.gg_hessian(vecs, pots["U2"].grad, pots["U2"].hess)


def y4_matrix(bp, masses, side="left", include_u2=True):
    """4x4 coefficient matrix for (w0, gbar01, w_sp, gbar_in_sp), time tau.

    bp is an I4BP state (r, v, psi, what, L_sp, ell_sp); pass a 4-vector or
    r = 0 to get the pure triple limit where the spectator terms vanish.
    """
    r = bp[0]
    v, psi, what = bp[1], bp[2], bp[3]
    fc = masses.side(side)
    h = model.u01_blowup_hessian(v, psi, what, fc)
    A = np.zeros((4, 4))
    A[0, 0] = -0.5 * v - (h["r32G0g0"] - h["r32g0G1"])
    A[0, 1] = -h["rg0g0"]
    A[0, 2] = h["r32g0G1"]
    A[1, 0] = h["r2G0G0"] - 2.0 * h["r2G0G1"] + h["r2G1G1"]
    A[1, 1] = h["r32G0g0"] - h["r32g0G1"]
    A[1, 2] = -h["r2G0G1"] + h["r2G1G1"]
    A[2, 2] = -0.5 * v
    A[3, 0] = h["r2G0G1"] - h["r2G1G1"]
    A[3, 1] = h["r32g0G1"]
    A[3, 2] = -h["r2G1G1"]
    if include_u2 and len(bp) >= 6 and r > 0:
        U2 = _u2_Gg_blocks(bp, masses, side)
        i_in, i_sp = fc.inner_index, fc.spectator_index
        iG0, ig0 = 0, 1
        iGi, igi = 2 * i_in, 2 * i_in + 1
        iGs, igs = 2 * i_sp, 2 * i_sp + 1
        r32 = r ** 1.5
        r2 = r * r
        # row 1: d(w0')
        A[0, 0] += -r32 * (U2[ig0, iG0] - U2[ig0, iGi])
        A[0, 1] += -r * U2[ig0, ig0]
        A[0, 2] += -r32 * (U2[ig0, iGs] - U2[ig0, iGi])
        A[0, 3] += r * U2[ig0, igs]
        # row 2: d(gbar01')
        A[1, 0] += r2 * (U2[iG0, iG0] - 2 * U2[iG0, iGi] + U2[iGi, iGi])
        A[1, 1] += r32 * (U2[iG0, ig0] - U2[iGi, ig0])
        A[1, 2] += r2 * (U2[iG0, iGs] - U2[iG0, iGi] - U2[iGi, iGs]
                         + U2[iGi, iGi])
        A[1, 3] += -r32 * (U2[iG0, igs] - U2[iGi, igs])
        # row 3: d(w_sp')
        A[2, 0] += -r32 * (U2[igs, iG0] - U2[igs, iGi])
        A[2, 1] += -r * U2[igs, ig0]
        A[2, 2] += -r32 * (U2[igs, iGs] - U2[igs, iGi])
        A[2, 3] += r * U2[igs, igs]
        # row 4: d(gbar_in_sp')
        A[3, 0] += r2 * (U2[iGi, iG0] - U2[iGi, iGi] - U2[iGs, iG0]
                         + U2[iGs, iGi])
        A[3, 1] += r32 * (U2[iGi, ig0] - U2[iGs, ig0])
        A[3, 2] += r2 * (U2[iGi, iGs] - U2[iGi, iGi] - U2[iGs, iGs]
                         + U2[iGs, iGi])
        A[3, 3] += -r32 * (U2[iGi, igs] - U2[iGs, igs])
    return CoefficientMatrix(A, "Y4", f"blowup/{side}", bp)


def variational_matrix(system, basepoint, masses, side="left", energy=None,
                       include_u2=True):
    """Coefficient matrix of the named variational system at a basepoint."""
    if system == "W0G01":
        return w0g01_matrix(basepoint, masses, side)
    if system == "Y4":
        return y4_matrix(basepoint, masses, side, include_u2=include_u2)
    if system in ("X4_LEFT", "X4_RIGHT", "XY_JOINT"):
        if system == "X4_LEFT":
            s = "left"
        elif system == "X4_RIGHT":
            s = "right"
        else:
            s = side
        fid = (VectorFieldId.F4BP_DELAUNAY_LEFT if s == "left"
               else VectorFieldId.F4BP_DELAUNAY_RIGHT)
        field = Field(fid, masses, side=s, energy=energy)
        t, y = basepoint
        J = field.jacobian(t, y)
        if system == "XY_JOINT":
            return CoefficientMatrix(J, system, f"delaunay/{s}", basepoint)
        idx = [0, 1, 6, 7] if s == "left" else [0, 1, 4, 5]
        return CoefficientMatrix(J[np.ix_(idx, idx)], system,
                                 f"delaunay/{s}", basepoint)
    raise ValueError(f"unknown variational system {system!r}")
