"""Coordinate charts: roundtrips, transition matrices, blowup identities."""

import json

import numpy as np
import pytest

from conftest import iso_state
from fourbody import kepler
from fourbody.charts import (BlowupState, CartesianJacobiState,
                             DelaunayElements, absolute_from_jacobi,
                             angle_offsets, blowup_from_jacobi,
                             cartesian_to_delaunay, delaunay_to_cartesian,
                             elements_to_state, jacobi_from_absolute,
                             jacobi_from_blowup, left_right_transition,
                             pair_from_cartesian, pair_to_cartesian,
                             state_to_elements, state_to_json, triple_energy,
                             wrap_angle)
from fourbody.model import MassConfig, hamiltonian_cartesian, isosceles_potential


def random_absolute(rng):
    Qs = [rng.normal(size=2) for _ in range(4)]
    Ps = [rng.normal(size=2) for _ in range(3)]
    Ps.append(-sum(Ps))
    return Qs, Ps


def test_jacobi_square_corners(equal_masses):
    # equal masses, bodies at square corners, momenta zero
    Qs = [np.array(q, dtype=float) for q in
          [(1, 1), (-1, 1), (-1, -1), (1, -1)]]
    Ps = [np.zeros(2) for _ in range(4)]
    st = jacobi_from_absolute(Qs, Ps, equal_masses, "left")
    assert np.allclose(st.x0, Qs[2] - Qs[3])
    assert np.allclose(st.x1, Qs[0] - 0.5 * (Qs[2] + Qs[3]))
    for p in (st.p0, st.p1, st.p2):
        assert np.allclose(p, 0.0)


def test_jacobi_roundtrip(mixed_masses, rng):
    for side in ("left", "right"):
        for _ in range(20):
            Qs, Ps = random_absolute(rng)
            st = jacobi_from_absolute(Qs, Ps, mixed_masses, side)
            Q2, P2 = absolute_from_jacobi(st, mixed_masses, Q4=Qs[3])
            assert np.max(np.abs(np.array(Q2) - np.array(Qs))) < 1e-12
            assert np.max(np.abs(np.array(P2) - np.array(Ps))) < 1e-12


def test_jacobi_rejects_momentum(mixed_masses, rng):
    Qs, Ps = random_absolute(rng)
    Ps[0] = Ps[0] + 1e-6
    with pytest.raises(ValueError):
        jacobi_from_absolute(Qs, Ps, mixed_masses, "left")


def test_left_right_agree_with_direct(mixed_masses, rng):
    # the composed transition equals building the right chart directly
    for _ in range(50):
        Qs, Ps = random_absolute(rng)
        stL = jacobi_from_absolute(Qs, Ps, mixed_masses, "left")
        stR = jacobi_from_absolute(Qs, Ps, mixed_masses, "right")
        stR2 = left_right_transition(stL, mixed_masses)
        for n in ("x0", "x1", "x2", "p0", "p1", "p2"):
            assert np.max(np.abs(getattr(stR2, n) - getattr(stR, n))) < 1e-12


def test_left_right_equal_mass_coefficients(equal_masses, rng):
    # m1 = m2 = 1: x1R = (1 - 1/9) x1L - (1/3) x2L, x2R = (1/3) x1L + x2L
    Qs, Ps = random_absolute(rng)
    st = jacobi_from_absolute(Qs, Ps, equal_masses, "left")
    stR = left_right_transition(st, equal_masses)
    assert np.allclose(stR.x1, (1 - 1 / 9) * st.x1 - st.x2 / 3, atol=1e-14)
    assert np.allclose(stR.x2, st.x1 / 3 + st.x2, atol=1e-14)


def test_transition_involution(mixed_masses, rng):
    Qs, Ps = random_absolute(rng)
    st = jacobi_from_absolute(Qs, Ps, mixed_masses, "left")
    st2 = left_right_transition(left_right_transition(st, mixed_masses),
                                mixed_masses)
    for n in ("x0", "x1", "x2", "p0", "p1", "p2"):
        assert np.max(np.abs(getattr(st2, n) - getattr(st, n))) < 1e-14


def test_transition_preserves_G_and_H(mixed_masses, rng):
    for _ in range(20):
        Qs, Ps = random_absolute(rng)
        st = jacobi_from_absolute(Qs, Ps, mixed_masses, "left")
        stR = left_right_transition(st, mixed_masses)
        assert abs(st.angular_momenta().sum()
                   - stR.angular_momenta().sum()) < 1e-12
        HL = hamiltonian_cartesian(st.x0, st.x1, st.x2, st.p0, st.p1, st.p2,
                                   mixed_masses, "left")
        HR = hamiltonian_cartesian(stR.x0, stR.x1, stR.x2, stR.p0, stR.p1,
                                   stR.p2, mixed_masses, "right")
        assert abs(HL - HR) < 1e-12 * max(1.0, abs(HL))


def test_kepler_solver_residuals(rng):
    for _ in range(200):
        e = rng.uniform(0.0, 1.0)
        ell = rng.uniform(-20, 20)
        u = kepler.solve_elliptic(ell, e)
        assert abs(u - e * np.sin(u) - ell) < 1e-13
        eh = rng.uniform(1.0, 3.0)
        uh = kepler.solve_hyperbolic(ell, eh)
        assert abs(uh - eh * np.sinh(uh) - ell) < 1e-13 * max(1, abs(ell))


def test_delaunay_circular_orbit(equal_masses):
    # e = 0 (G = L), g = 0, u = ell: circular orbit of radius L^2/(mk)
    m, k = equal_masses.side("left").pair(0)
    L = 0.9
    for ell in (0.3, 1.2, 2.5):
        el = DelaunayElements("elliptic", L, ell, L, 0.0)
        q, p = delaunay_to_cartesian(el, m, k)
        a = L * L / (m * k)
        assert np.isclose(np.hypot(*q), a, atol=1e-12)
        assert np.allclose(q, a * np.array([np.cos(ell), np.sin(ell)]),
                           atol=1e-12)


def test_delaunay_hyperbolic_periapsis(equal_masses):
    # u = 0: q = (a(1-e), 0), periapsis on the negative axis before rotation
    m, k = equal_masses.side("left").pair(1)
    el = DelaunayElements("hyperbolic", 1.3, 0.0, 0.8, 0.0)
    q, p = delaunay_to_cartesian(el, m, k)
    a = el.L ** 2 / (m * k)
    assert np.isclose(q[0], a * (1 - el.eccentricity), atol=1e-12)
    assert abs(q[1]) < 1e-12
    assert q[0] < 0


def test_delaunay_counterclockwise(equal_masses):
    # positive angular momentum means counterclockwise motion for both kinds
    m, k = 0.75, 3.0
    for kind, ell in (("elliptic", 0.7), ("hyperbolic", 0.7)):
        el = DelaunayElements(kind, 1.1, ell, 0.6, 0.4)
        q, p = delaunay_to_cartesian(el, m, k)
        assert q[0] * p[1] - q[1] * p[0] > 0


def test_delaunay_roundtrip(mixed_masses, rng):
    worst = 0.0
    for kind in ("elliptic", "hyperbolic"):
        for _ in range(100):
            L = rng.uniform(0.5, 3.0)
            G = (rng.uniform(-0.9, 0.9) * L if kind == "elliptic"
                 else rng.uniform(-2.0, 2.0))
            el = DelaunayElements(kind, L, rng.uniform(-3, 3), G,
                                  rng.uniform(-np.pi, np.pi))
            i = int(rng.integers(0, 3))
            x, p = pair_to_cartesian(el, i, mixed_masses, "left")
            el2 = pair_from_cartesian(x, p, i, mixed_masses, "left")
            x2, p2 = pair_to_cartesian(el2, i, mixed_masses, "left")
            worst = max(worst, np.max(np.abs(x2 - x)), np.max(np.abs(p2 - p)))
            # G is the geometric angular momentum
            assert abs(el2.G - (x[0] * p[1] - x[1] * p[0])) < 1e-12
    assert worst < 1e-10


def test_blowup_examples(equal_masses):
    # zero momentum -> v = w = 0
    st = iso_state(equal_masses, v=0.0, psi=-0.5, what=0.0)
    bl = blowup_from_jacobi(st, equal_masses)
    assert abs(bl.v) < 1e-14 and abs(bl.what) < 1e-14

    # rescaling invariance: x -> lam x, p -> lam^{-1/2} p
    st = iso_state(equal_masses, v=-0.7, psi=-0.6, what=0.4, r=2.0)
    lam = 3.7
    st2 = CartesianJacobiState("left", lam * st.x0, lam * st.x1, lam * st.x2,
                               st.p0 / np.sqrt(lam), st.p1 / np.sqrt(lam),
                               st.p2 / np.sqrt(lam))
    bl1 = blowup_from_jacobi(st, equal_masses)
    bl2 = blowup_from_jacobi(st2, equal_masses)
    assert np.isclose(bl2.r, lam * bl1.r, rtol=1e-13)
    for n in ("v", "psi", "what"):
        assert np.isclose(getattr(bl2, n), getattr(bl1, n), atol=1e-13)


def test_blowup_energy_relation(equal_masses, rng):
    for _ in range(20):
        v = rng.uniform(-2, 2)
        psi = rng.uniform(-1.2, -0.2)
        what = rng.uniform(-1, 1)
        r = rng.uniform(0.5, 4.0)
        st = iso_state(equal_masses, v, psi, what, r=r)
        E3 = triple_energy(st, equal_masses)
        rhs = (what ** 2 / (2 * np.cos(psi) ** 2) + 0.5 * v ** 2
               + isosceles_potential(psi, 1.0))
        assert abs(r * E3 - rhs) < 1e-12


def test_blowup_roundtrip(equal_masses, rng):
    for _ in range(20):
        bl = BlowupState(r=rng.uniform(0.5, 3), v=rng.uniform(-2, 2),
                         psi=rng.uniform(-1.3, 1.3), what=rng.uniform(-1, 1),
                         side="left")
        sp = DelaunayElements("hyperbolic", 1.5, 3.0, 0.0, 0.0)
        st = jacobi_from_blowup(bl, equal_masses, spectator=sp)
        bl2 = blowup_from_jacobi(st, equal_masses)
        for n in ("r", "v", "psi", "what"):
            assert abs(getattr(bl2, n) - getattr(bl, n)) < 1e-12


def test_blowup_full_extension(equal_masses):
    st = iso_state(equal_masses, v=-0.7, psi=-0.6, what=0.4, r=2.0)
    bl = blowup_from_jacobi(st, equal_masses, full=True)
    assert abs(bl.w0) < 1e-13 and abs(bl.w1) < 1e-13
    assert abs(wrap_angle(bl.g0 - np.pi / 2)) < 1e-9


def test_angle_offsets_vanish_at_isosceles(equal_masses, mixed_masses):
    for mc in (equal_masses, mixed_masses):
        for side, psi in (("left", -0.6), ("right", 0.6)):
            st = iso_state(mc, v=-0.7, psi=psi, what=0.4, side=side)
            gin, gsp = angle_offsets(st, mc)
            assert abs(gin) < 1e-12 and abs(gsp) < 1e-12


def test_symplectic_form_preserved(mixed_masses, rng):
    """The Jacobi chart preserves sum dP ^ dQ = sum dp ^ dx."""
    h = 1e-3   # the chart is linear, so only roundoff limits the difference
    Qs = [rng.normal(size=2) for _ in range(4)]
    Ps = [rng.normal(size=2) for _ in range(3)]
    Ps.append(-sum(Ps))

    def pack_abs(z):
        Q = [z[2 * i:2 * i + 2] for i in range(4)]
        P = [z[8 + 2 * i:10 + 2 * i] for i in range(3)]
        P.append(-(P[0] + P[1] + P[2]))
        return Q, P

    z0 = np.concatenate(Qs[:4] + Ps[:3])

    def chart(z):
        Q, P = pack_abs(z)
        st = jacobi_from_absolute(Q, P, mixed_masses, "left")
        return np.concatenate([st.x0, st.x1, st.x2, st.p0, st.p1, st.p2])

    rng2 = np.random.default_rng(5)
    for _ in range(5):
        d1 = rng2.normal(size=14)
        d2 = rng2.normal(size=14)
        J1 = (chart(z0 + h * d1) - chart(z0 - h * d1)) / (2 * h)
        J2 = (chart(z0 + h * d2) - chart(z0 - h * d2)) / (2 * h)

        def om_jac(u, w):
            return sum(u[6 + 2 * i:8 + 2 * i] @ w[2 * i:2 * i + 2]
                       - w[6 + 2 * i:8 + 2 * i] @ u[2 * i:2 * i + 2]
                       for i in range(3))

        # the absolute-side form: sum_i dP_i ^ dQ_i over the four bodies
        def om_abs(u, w):
            uQ, uP = pack_abs(u)
            wQ, wP = pack_abs(w)
            return sum(uP[i] @ wQ[i] - wP[i] @ uQ[i] for i in range(4))

        assert abs(om_jac(J1, J2) - om_abs(d1, d2)) < 1e-10


def test_json_serialization(equal_masses):
    st = iso_state(equal_masses, v=-0.7, psi=-0.6, what=0.4)
    d = json.loads(state_to_json(st))
    st2 = CartesianJacobiState.from_dict(d)
    assert np.allclose(st2.x1, st.x1)
    el = DelaunayElements("hyperbolic", 1.5, 3.0, 0.2, 0.1)
    el2 = DelaunayElements.from_dict(json.loads(json.dumps(el.to_dict())))
    assert el2 == el
    bl = BlowupState(r=1.0, v=2.0, psi=0.5, what=0.25, w0=0.1)
    d = bl.to_dict()
    assert d["what"] == 0.25 and d["w0"] == 0.1 and "w1" not in d
    assert BlowupState.from_dict(d).what == 0.25
