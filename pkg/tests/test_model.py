"""Potentials, their derivatives, and the shape potential of the triple."""

import numpy as np
import pytest

from conftest import iso_state
from fourbody.charts import DelaunayElements, elements_to_state
from fourbody.model import (CollisionError, IsoscelesLimitError, MassConfig,
                            PoleError, gg_hessian, hamiltonian_cartesian,
                            isosceles_potential, lagrange_angle,
                            pair_G_derivative_vectors, pair_potentials,
                            potentials_cartesian, second_derivatives_Gg,
                            u01_blowup_hessian, vbar_d1_times_cos2,
                            vbar_times_cos)


def test_mass_config_invariants():
    mc = MassConfig(1.3, 0.7)
    L = mc.side("left")
    assert L.M0 == 0.5 and L.k0 == 1.0
    assert np.isclose(L.M1, 2 * 1.3 / 3.3)
    assert np.isclose(L.M2, 0.7 * 3.3 / 4.0)
    assert np.isclose(L.k1, 2.6) and np.isclose(L.k2, 3.3 * 0.7)
    R = mc.side("right")
    assert np.isclose(R.M2, 2 * 0.7 / 2.7)
    assert np.isclose(R.M1, 1.3 * 2.7 / 4.0)
    assert np.isclose(R.k2, 1.4) and np.isclose(R.k1, 2.7 * 1.3)
    with pytest.raises(ValueError):
        MassConfig(-1.0)


def test_shape_potential_values():
    # direct evaluations of the shape potential
    assert np.isclose(isosceles_potential(0.0, 1.0), -5 / np.sqrt(2), atol=1e-14)
    assert np.isclose(isosceles_potential(np.pi / 4, 1.0), -3.0, atol=1e-14)


def test_shape_potential_even(rng):
    for _ in range(25):
        m1 = rng.uniform(0.1, 20.0)
        psi = rng.uniform(-1.5, 1.5)
        assert np.isclose(isosceles_potential(psi, m1),
                          isosceles_potential(-psi, m1), rtol=1e-14)


def test_shape_potential_pole():
    with pytest.raises(PoleError):
        isosceles_potential(np.pi / 2, 1.0)
    # the regularized products stay finite there
    assert np.isfinite(vbar_times_cos(np.pi / 2, 1.0))
    assert np.isfinite(vbar_d1_times_cos2(np.pi / 2, 1.0))
    assert np.isclose(vbar_d1_times_cos2(np.pi / 2, 1.0), -1 / np.sqrt(2))


def test_shape_potential_derivatives_fd(rng):
    h = 1e-6
    for _ in range(40):
        m1 = rng.uniform(0.2, 8.0)
        psi = rng.uniform(-1.4, 1.4)
        d1 = (isosceles_potential(psi + h, m1)
              - isosceles_potential(psi - h, m1)) / (2 * h)
        assert np.isclose(isosceles_potential(psi, m1, deriv=1), d1,
                          rtol=1e-6, atol=1e-8)
        d2 = (isosceles_potential(psi + h, m1, deriv=1)
              - isosceles_potential(psi - h, m1, deriv=1)) / (2 * h)
        assert np.isclose(isosceles_potential(psi, m1, deriv=2), d2,
                          rtol=1e-6, atol=1e-8)


def test_lagrange_angle_critical(rng):
    # the Lagrange angle is a critical point of the shape potential
    for _ in range(20):
        m1 = rng.uniform(0.1, 20.0)
        psi = lagrange_angle(m1)
        assert abs(isosceles_potential(psi, m1, deriv=1)) < 1e-10


def _nondegenerate_positions(rng):
    """Random positions with all interaction distances bounded below."""
    while True:
        xs = [rng.normal(scale=2.0, size=2) for _ in range(3)]
        xs[2] = xs[2] + np.array([8.0, 0.0])   # keep the spectator clear
        d = [np.hypot(*xs[0]), np.hypot(*(xs[1] - xs[0] / 2)),
             np.hypot(*(xs[1] + xs[0] / 2)), np.hypot(*xs[1])]
        if min(d) > 0.7:
            return xs


def test_potential_gradients_fd(mixed_masses, rng):
    # analytic gradients of U01, U2, V vs central differences
    h = 1e-6
    worst = 0.0
    for _ in range(100):
        xs = _nondegenerate_positions(rng)
        pots = potentials_cartesian(*xs, mixed_masses, "left")
        for name in ("U01", "U2", "V"):
            g = pots[name].grad
            for j in range(6):
                dxp = [x.copy() for x in xs]
                dxm = [x.copy() for x in xs]
                dxp[j // 2][j % 2] += h
                dxm[j // 2][j % 2] -= h
                vp = potentials_cartesian(*dxp, mixed_masses, "left",
                                          want_derivs=False)[name].value
                vm = potentials_cartesian(*dxm, mixed_masses, "left",
                                          want_derivs=False)[name].value
                fd = (vp - vm) / (2 * h)
                # relative where the component is O(1), absolute below the
                # central-difference roundoff floor
                err = abs(g[j] - fd) / max(abs(fd), 1.0)
                worst = max(worst, err)
    assert worst < 1e-6


def test_hessian_symmetry(mixed_masses, rng):
    for _ in range(20):
        xs = [rng.normal(scale=2.0, size=2) for _ in range(3)]
        xs[2] = xs[2] + np.array([7.0, 0.0])
        pots = potentials_cartesian(*xs, mixed_masses, "left")
        for name in ("U01", "U2", "V"):
            H = pots[name].hess
            assert np.max(np.abs(H - H.T)) < 1e-12 * max(1.0, np.max(np.abs(H)))


def test_collision_detection(equal_masses):
    x0 = np.array([0.0, 1e-14])
    with pytest.raises(CollisionError):
        potentials_cartesian(x0, np.array([-1.0, 0.0]), np.array([9.0, 0.0]),
                             equal_masses, "left")


def test_u01_decay(equal_masses):
    # U01 -> 0 as the inner body recedes with the binary fixed
    x0 = np.array([0.0, 0.5])
    vals = []
    for r1 in (10.0, 100.0, 1000.0):
        pots = potentials_cartesian(x0, np.array([-r1, 0.0]),
                                    np.array([5000.0, 0.0]), equal_masses,
                                    "left", want_derivs=False)
        vals.append(abs(pots["U01"].value))
    assert vals[0] > vals[1] > vals[2]
    assert vals[2] < 1e-8


def test_u01_quadrupole_asymptotics(equal_masses):
    # U01 ~ k1 r0^2 / (8 r1^3) for r1 >> r0 in the isosceles configuration
    k1 = equal_masses.side("left").k1
    for r1 in (30.0, 100.0, 300.0):
        r0 = 1.0
        pots = potentials_cartesian(np.array([0.0, r0]), np.array([-r1, 0.0]),
                                    np.array([5000.0, 0.0]), equal_masses,
                                    "left", want_derivs=False)
        lead = k1 * r0 ** 2 / (8 * r1 ** 3)
        rel = abs(pots["U01"].value - lead) / lead
        assert rel < 10 * (r0 / r1) ** 2


def test_cross_chart_energy(equal_masses):
    # H in Cartesian equals the blowup energy relation on isosceles states
    from fourbody.charts import triple_energy
    st = iso_state(equal_masses, v=-0.7, psi=-0.6, what=0.4, r=2.3)
    pots = pair_potentials(st, equal_masses)
    E3 = triple_energy(st, equal_masses)
    lhs = 2.3 * E3
    rhs = (0.4 ** 2 / (2 * np.cos(0.6) ** 2) + 0.5 * 0.7 ** 2
           + isosceles_potential(-0.6, 1.0))
    assert abs(lhs - rhs) < 1e-12
    # and H = H_triple + spectator Kepler + U2
    fc = equal_masses.side("left")
    kep2 = (st.p2 @ st.p2) / (2 * fc.M2) - fc.k2 / np.hypot(*st.x2)
    assert abs(pots["H"] - (E3 + kep2 + pots["U2"].value)) < 1e-12


def _iso_elements():
    return (DelaunayElements("elliptic", 0.8, 1.3, 0.0, np.pi / 2),
            DelaunayElements("hyperbolic", 1.1, 2.1, 0.0, 0.0),
            DelaunayElements("hyperbolic", 1.4, 7.0, 0.0, 0.0))


def test_second_derivatives_vs_fd(equal_masses):
    """Closed forms vs central finite differences of the potentials."""
    els = _iso_elements()
    M = second_derivatives_Gg(els, equal_masses, "left")

    def U_of(vars6, name):
        e2 = [DelaunayElements(el.kind, el.L, el.ell, vars6[2 * i],
                               vars6[2 * i + 1])
              for i, el in enumerate(els)]
        st = elements_to_state(e2, equal_masses, "left")
        return potentials_cartesian(st.x0, st.x1, st.x2, equal_masses, "left",
                                    want_derivs=False)[name].value

    v0 = np.array([0.0, np.pi / 2, 0.0, 0.0, 0.0, 0.0])
    h = 1e-5
    for name in ("U01", "U2"):
        for a in range(6):
            for b in range(a, 6):
                if a == b:
                    vp, vm = v0.copy(), v0.copy()
                    vp[a] += h
                    vm[a] -= h
                    fd = (U_of(vp, name) - 2 * U_of(v0, name)
                          + U_of(vm, name)) / h ** 2
                else:
                    vpp, vpm, vmp, vmm = (v0.copy() for _ in range(4))
                    vpp[[a, b]] += h
                    vpm[a] += h
                    vpm[b] -= h
                    vmp[a] -= h
                    vmp[b] += h
                    vmm[[a, b]] -= h
                    fd = (U_of(vpp, name) - U_of(vpm, name) - U_of(vmp, name)
                          + U_of(vmm, name)) / (4 * h ** 2)
                got = M[name][a, b]
                # the G-odd entries of hyperbolic pairs differ between the
                # smooth continuation and the chart branch; compare magnitude
                sgn_free = {2, 4}
                if (a in sgn_free) ^ (b in sgn_free):
                    assert abs(abs(got) - abs(fd)) < 2e-4 * max(1, abs(fd))
                else:
                    assert abs(got - fd) < 2e-4 * max(1.0, abs(fd))


def test_u2_G1_ratio(equal_masses):
    # d2U2/dG1dg1 and d2U2/dg1^2 differ by the factor 1/L1 asymptotically
    els = (DelaunayElements("elliptic", 0.8, 1.3, 0.0, np.pi / 2),
           DelaunayElements("hyperbolic", 1.1, -3000.0, 0.0, 0.0),
           DelaunayElements("hyperbolic", 1.4, 9000.0, 0.0, 0.0))
    M = second_derivatives_Gg(els, equal_masses, "left")["U2"]
    ratio = abs(M[2, 3] / M[3, 3]) * els[1].L
    assert abs(ratio - 1.0) < 2e-3


def test_mixed_partials_vanish(equal_masses):
    """d2H/dxi deta with xi in (L, ell), eta in (G, g) vanish at the limit."""
    els = _iso_elements()

    def H_of(dL0, dl0, dG0, dg0, dG1, dg1):
        e2 = (DelaunayElements("elliptic", els[0].L + dL0, els[0].ell + dl0,
                               dG0, np.pi / 2 + dg0),
              DelaunayElements("hyperbolic", els[1].L, els[1].ell, dG1, dg1),
              els[2])
        st = elements_to_state(e2, equal_masses, "left")
        return hamiltonian_cartesian(st.x0, st.x1, st.x2, st.p0, st.p1,
                                     st.p2, equal_masses, "left")

    h = 1e-5
    for i_xi in range(2):          # L0 or ell0
        for i_eta in range(4):     # G0, g0, G1, g1
            def f(a, b):
                args = [0.0] * 6
                args[i_xi] = a
                args[2 + i_eta] = b
                return H_of(*args)
            fd = (f(h, h) - f(h, -h) - f(-h, h) + f(-h, -h)) / (4 * h ** 2)
            assert abs(fd) < 1e-10


def test_second_derivatives_requires_limit(equal_masses):
    els = list(_iso_elements())
    els[0] = DelaunayElements("elliptic", 0.8, 1.3, 0.1, np.pi / 2)
    with pytest.raises(IsoscelesLimitError):
        second_derivatives_Gg(tuple(els), equal_masses, "left")


def test_blowup_hessian_matches_universal(equal_masses, mixed_masses, rng):
    """Closed forms in blowup variables vs the assembled Cartesian route."""
    for mc in (equal_masses, mixed_masses):
        fc = mc.side("left")
        for _ in range(40):
            v = rng.uniform(-4, 4)
            psi = rng.uniform(-1.45, -0.15)
            what = rng.uniform(-1.5, 1.5)
            st = iso_state(mc, v, psi, what, ell_sp=80.0)
            pots = potentials_cartesian(st.x0, st.x1, st.x2, mc, "left")
            vecs = [pair_G_derivative_vectors(*st.pair(i), *fc.pair(i))
                    for i in range(3)]
            M6 = gg_hessian(vecs, pots["U01"].grad, pots["U01"].hess)
            h = u01_blowup_hessian(v, psi, what, fc)
            for key, truth in (("rg0g0", M6[1, 1]), ("r2G0G0", M6[0, 0]),
                               ("r32G0g0", M6[0, 1]), ("r32g0G1", M6[1, 2]),
                               ("r2G0G1", M6[0, 2]), ("r2G1G1", M6[2, 2])):
                assert abs(h[key] - truth) < 1e-10 * max(1.0, abs(truth))


def test_blowup_hessian_printed_g0g0(equal_masses, rng):
    # r * d2U01/dg0^2 = -3 m (r1 r0)^2 / (2 (r1^2 + r0^2/4)^{5/2}),
    # checked in the equivalent blowup form
    fc = equal_masses.side("left")
    for _ in range(20):
        v = rng.uniform(-3, 3)
        psi = rng.uniform(-1.4, -0.2)
        what = rng.uniform(-1, 1)
        s, c = np.sin(psi), np.cos(psi)
        M0, M1 = fc.M0, fc.M1
        D = s * s / M1 + c * c / (4 * M0)
        printed = -3.0 * (s * c) ** 2 / (M0 * M1 * 2 * D ** 2.5)
        h = u01_blowup_hessian(v, psi, what, fc)
        assert np.isclose(h["rg0g0"], printed, rtol=1e-12)
