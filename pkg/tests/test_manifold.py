"""Collision-manifold equilibria, classification, and branch fates."""

import numpy as np
import pytest

from fourbody.flows import VectorFieldId, get_field
from fourbody.integrate import IntegratorConfig, integrate_until
from fourbody.manifold import (FATE_DIES, FATE_ESCAPES_LEFT,
                               FATE_ESCAPES_RIGHT, branch_fate,
                               fate_transition, find_equilibria,
                               lower_lagrange, lyapunov_check, mass_scan,
                               unstable_direction)
from fourbody.model import MassConfig, isosceles_potential, lagrange_angle


def test_equal_mass_equilibria(equal_masses):
    eqs = find_equilibria(equal_masses)
    assert len(eqs) == 6
    lower_left = [e for e in eqs if e.kind == "lagrange"
                  and e.v < 0 and e.psi < 0][0]
    assert abs(lower_left.psi + np.pi / 4) < 1e-10
    assert abs(lower_left.v + np.sqrt(6.0)) < 1e-9
    # classification per the manifold phase portrait
    for e in eqs:
        if e.kind == "euler":
            assert ("sink" if e.v > 0 else "source") in e.classification
            assert "complex" in e.classification      # m1 = 1 < 55/4
        else:
            assert e.classification == "saddle"
            mu = np.sort(np.real(e.manifold_eigenvalues))
            assert mu[0] < 0 < mu[1]


def test_equilibria_symmetry(equal_masses):
    eqs = find_equilibria(equal_masses)
    locs = {(round(e.v, 10), round(e.psi, 10)) for e in eqs}
    for v, psi in list(locs):
        assert (round(-v, 10), round(psi, 10)) in locs
        assert (round(v, 10), round(-psi, 10)) in locs


def test_lagrange_y_block_bracket(equal_masses):
    eqs = find_equilibria(equal_masses)
    for e in eqs:
        if e.kind == "lagrange" and e.v < 0:
            mu_s, mu_u = e.y_block_eigenvalues
            assert mu_u > -e.v / 2 > 0 > mu_s


def test_equilibria_across_mass_grid():
    for m1 in np.geomspace(0.2, 20.0, 50):
        eqs = find_equilibria(MassConfig(m1))
        assert len(eqs) == 6
        for e in eqs:
            if e.kind == "lagrange":
                mu = np.sort(np.real(e.manifold_eigenvalues))
                assert mu[0] < 0 < mu[1]
                assert abs(np.imag(e.manifold_eigenvalues)).max() < 1e-12


def test_jacobian_vs_fd(equal_masses):
    field = get_field(VectorFieldId.I3BP_REGULARIZED, equal_masses,
                      energy=0.0)
    for eq in find_equilibria(equal_masses):
        y = eq.location
        J = field.jacobian(0.0, y)
        h = 1e-6
        Jfd = np.zeros_like(J)
        for j in range(4):
            yp, ym = y.copy(), y.copy()
            yp[j] += h
            ym[j] -= h
            Jfd[:, j] = (field.rhs(0.0, yp) - field.rhs(0.0, ym)) / (2 * h)
        ev = np.sort_complex(np.linalg.eigvals(J))
        evfd = np.sort_complex(np.linalg.eigvals(Jfd))
        assert np.max(np.abs(ev - evfd)) < 1e-6 * max(1.0, np.max(np.abs(ev)))


def test_arms_unbounded(equal_masses):
    # the shape potential diverges at the arms, so on {r=0} the energy
    # relation v^2 + w^2 = -2 Vbar is unbounded there
    vals = [-2 * isosceles_potential(psi, 1.0)
            for psi in (1.4, 1.5, 1.56, 1.5707)]
    assert all(np.diff(vals) > 0) and vals[-1] > 1e4


def test_lyapunov_on_manifold(equal_masses, rng):
    field = get_field(VectorFieldId.I3BP_REGULARIZED, equal_masses,
                      energy=0.0)
    cfg = IntegratorConfig()
    # constant orbit at a fixed point
    pt = lower_lagrange(equal_masses, "left")
    seg = integrate_until(field, pt, cfg, horizon=1.0)
    rep = lyapunov_check(seg)
    assert abs(rep.min_rate) < 1e-12

    # orbit leaving the lower Euler source (seeded exactly on the energy
    # shell: the off-shell direction is linearly unstable near the source)
    from fourbody.integrate import SectionSpec
    psi0 = 1e-3
    y0 = np.array([0.0, -np.sqrt(-2 * isosceles_potential(psi0, 1.0)),
                   psi0, 0.0])
    stop = SectionSpec("GENERAL", fn=lambda f, t, y: y[1] - 1.0, direction=+1)
    seg = integrate_until(field, y0, IntegratorConfig(abs_tol=1e-15),
                          stop=stop, horizon=100.0)
    rep = lyapunov_check(seg)
    assert rep.monotone and rep.min_rate > -1e-10

    # generic manifold orbit at m1 = 2 (on-shell seed)
    mc = MassConfig(2.0)
    f2 = get_field(VectorFieldId.I3BP_REGULARIZED, mc, energy=0.0)
    psi0 = -0.5
    what0 = 0.6 * np.cos(psi0) * np.sqrt(-2 * isosceles_potential(psi0, 2.0))
    v0 = -np.sqrt(-2 * isosceles_potential(psi0, 2.0)
                  - what0 ** 2 / np.cos(psi0) ** 2)
    seg = integrate_until(f2, [0.0, v0, psi0, what0], IntegratorConfig(),
                          horizon=5.0)
    rep = lyapunov_check(seg)
    assert rep.v_end > rep.v_start and rep.monotone


def test_branch_fates():
    assert branch_fate(1.0, +1) == FATE_ESCAPES_LEFT
    assert branch_fate(1.0, -1) == FATE_ESCAPES_RIGHT
    assert branch_fate(5.0, -1) == FATE_DIES
    assert branch_fate(5.0, +1) == FATE_ESCAPES_LEFT


@pytest.mark.slow
def test_fate_thresholds():
    b1 = fate_transition(+1, 0.3, 0.5)   # right-headed branch flips at b1
    b2 = fate_transition(-1, 2.0, 3.0)   # left-headed branch flips at b2
    assert abs(b1 - 0.379) < 0.01
    assert abs(b2 - 2.662) < 0.01


def test_mass_scan_rows():
    rows = mass_scan([0.9, 1.1])
    assert len(rows) == 2
    for row in rows:
        assert set(row) == {"m1", "fate_left_branch", "fate_right_branch",
                            "v_star", "psi_star", "mu_u", "mu_s"}
        assert row["mu_u"] > 0 > row["mu_s"]
        assert row["v_star"] < 0 and row["psi_star"] < 0
