"""Integration engine: events, accuracy, variational transport, clocks."""

import numpy as np
import pytest

from conftest import iso_state
from fourbody.charts import DelaunayElements, elements_to_state
from fourbody.flows import (CanonicalDelaunayField, VectorFieldId, get_field)
from fourbody.integrate import (EventNotReachedError, IntegrationBudgetError,
                                IntegratorConfig, SectionSpec, integrate_until,
                                integrate_with_variational)
from fourbody.model import (MassConfig, hamiltonian_cartesian,
                            isosceles_potential, lagrange_angle)


def test_kepler_ten_periods(equal_masses):
    """Decoupled binary over 10 periods vs analytic mean-motion propagation."""
    fc = equal_masses.side("left")
    M0, k0 = fc.pair(0)
    el0 = DelaunayElements("elliptic", 0.9, 0.4, 0.6, 0.3)
    els = (el0,
           DelaunayElements("hyperbolic", 1.1, -1e8, 0.0, 0.0),
           DelaunayElements("hyperbolic", 1.6, 3e8, 0.0, 0.0))
    st = elements_to_state(els, equal_masses, "left")
    n = M0 * k0 ** 2 / el0.L ** 3
    T = 10 * 2 * np.pi / n
    f = get_field(VectorFieldId.F4BP_CARTESIAN, equal_masses)
    seg = integrate_until(
        f, np.concatenate([st.x0, st.x1, st.x2, st.p0, st.p1, st.p2]),
        IntegratorConfig(rel_tol=1e-13, abs_tol=1e-15), horizon=T)
    el_t = DelaunayElements("elliptic", el0.L, el0.ell + n * T, el0.G, el0.g)
    st_ref = elements_to_state((el_t, els[1], els[2]), equal_masses, "left")
    assert np.max(np.abs(seg.y_end[0:2] - st_ref.x0)) < 1e-9


def test_homothetic_lagrange_orbit(equal_masses):
    """Starting on the homothetic family keeps psi frozen at psi*."""
    psis = -lagrange_angle(1.0)
    E = -8 / 9
    r0 = 1.0
    v0 = -np.sqrt(2 * (r0 * E - isosceles_potential(psis, 1.0)))
    f = get_field(VectorFieldId.I3BP_REGULARIZED, equal_masses, energy=E)
    seg = integrate_until(f, [r0, v0, psis, 0.0],
                          IntegratorConfig(abs_tol=1e-15), horizon=6.0)
    assert np.max(np.abs(seg.y[:, 2] - psis)) < 1e-9
    assert seg.y_end[0] < r0   # collapsing branch


def test_section_event_s_minus(equal_masses):
    """An expanding triple orbit stops exactly on {r = 1/eps}."""
    r0, v0, psi0, what0 = 1.0, 3.0, -0.5, 0.2
    E = ((what0 ** 2 / (2 * np.cos(psi0) ** 2) + 0.5 * v0 ** 2
          + isosceles_potential(psi0, 1.0)) / r0)
    f = get_field(VectorFieldId.I3BP_REGULARIZED, equal_masses, energy=E)
    stop = SectionSpec("S_MINUS", epsilon=0.01, direction=+1)
    seg = integrate_until(f, [r0, v0, psi0, what0], IntegratorConfig(),
                          stop=stop, horizon=100.0)
    assert seg.terminated
    assert abs(seg.event_state[0] - 100.0) < 1e-10


def test_event_not_reached(equal_masses):
    f = get_field(VectorFieldId.I3BP_REGULARIZED, equal_masses, energy=-8 / 9)
    stop = SectionSpec("S_MINUS", epsilon=0.01, direction=+1)
    with pytest.raises(EventNotReachedError):
        integrate_until(f, [0.0, -1.0, -0.5, 0.1], IntegratorConfig(),
                        stop=stop, horizon=1.0)


def test_step_budget(equal_masses):
    f = get_field(VectorFieldId.I3BP_REGULARIZED, equal_masses, energy=-8 / 9)
    cfg = IntegratorConfig(max_steps=10)
    with pytest.raises(IntegrationBudgetError):
        integrate_until(f, [0.5, -1.0, -0.5, 0.1], cfg, horizon=50.0)


def test_determinism(equal_masses):
    f = get_field(VectorFieldId.I3BP_REGULARIZED, equal_masses, energy=-8 / 9)
    y0 = [0.5, -1.0, -0.5, 0.1]
    seg1 = integrate_until(f, y0, IntegratorConfig(), horizon=5.0)
    seg2 = integrate_until(f, y0, IntegratorConfig(), horizon=5.0)
    assert np.array_equal(seg1.y, seg2.y) and np.array_equal(seg1.t, seg2.t)


def test_tolerance_halving(equal_masses):
    f = get_field(VectorFieldId.I3BP_REGULARIZED, equal_masses, energy=-8 / 9)
    y0 = [0.5, -1.0, -0.5, 0.1]
    a = integrate_until(f, y0, IntegratorConfig(rel_tol=1e-10), horizon=5.0)
    b = integrate_until(f, y0, IntegratorConfig(rel_tol=5e-11), horizon=5.0)
    c = integrate_until(f, y0, IntegratorConfig(rel_tol=1e-13), horizon=5.0)
    # halving the tolerance moves the answer by less than 10x the estimate
    assert np.max(np.abs(b.y_end - a.y_end)) < 10 * max(
        np.max(np.abs(c.y_end - a.y_end)), 1e-12)


def test_clock_consistency(equal_masses):
    """t and tau quadratures agree with an independent dense quadrature."""
    f = get_field(VectorFieldId.I3BP_REGULARIZED, equal_masses, energy=-8 / 9)
    y0 = [0.5, -1.0, -0.5, 0.1]
    seg = integrate_until(f, y0, IntegratorConfig(), horizon=4.0)
    from scipy.integrate import quad
    tau_q, _ = quad(lambda s: np.cos(seg.state(s)[2]), 0.0, seg.t_end,
                    limit=200, epsabs=1e-11, epsrel=1e-11)
    t_q, _ = quad(lambda s: seg.state(s)[0] ** 1.5 * np.cos(seg.state(s)[2]),
                  0.0, seg.t_end, limit=200, epsabs=1e-11, epsrel=1e-11)
    assert abs(seg.clocks["tau"][-1] - tau_q) < 1e-8
    assert abs(seg.clocks["t"][-1] - t_q) < 1e-8


def test_variational_identity_zero_length(equal_masses):
    f = get_field(VectorFieldId.I3BP_REGULARIZED, equal_masses, energy=-8 / 9)
    seg, frame = integrate_with_variational(
        f, "SELF", [0.5, -1.0, -0.5, 0.1], np.eye(4), IntegratorConfig(),
        horizon=1e-14)
    assert np.allclose(frame.matrix, np.eye(4), atol=1e-12)


def test_fundamental_solution_vs_flow_fd(equal_masses, rng):
    """Fundamental solution vs finite differences of the flow map."""
    f = get_field(VectorFieldId.I3BP_REGULARIZED, equal_masses, energy=-8 / 9)
    cfg = IntegratorConfig()
    worst = 0.0
    for _ in range(20):
        y0 = np.array([rng.uniform(0.2, 1.0), rng.uniform(-1.5, 0.5),
                       rng.uniform(-1.0, -0.3), rng.uniform(-0.5, 0.5)])
        T = rng.uniform(0.3, 1.0)
        _, fr = integrate_with_variational(f, "SELF", y0, np.eye(4), cfg,
                                           horizon=T)
        h = 1e-7
        for j in range(4):
            yp, ym = y0.copy(), y0.copy()
            yp[j] += h
            ym[j] -= h
            col = (integrate_until(f, yp, cfg, horizon=T).y_end
                   - integrate_until(f, ym, cfg, horizon=T).y_end) / (2 * h)
            err = np.max(np.abs(fr.matrix[:, j] - col)) / max(
                1.0, np.max(np.abs(col)))
            worst = max(worst, err)
    assert worst < 1e-4


def test_liouville_canonical_delaunay(equal_masses):
    """det of the fundamental solution of the canonical Delaunay field is 1."""
    f = CanonicalDelaunayField(equal_masses, side="left")
    y0 = np.array([0.7, 0.9, 0.004, np.pi / 2 + 0.002,
                   1.1, -12.0, -0.003, 0.001,
                   1.6, 40.0, -0.001, 0.0015])
    _, fr = integrate_with_variational(f, "SELF", y0, np.eye(12),
                                       IntegratorConfig(), horizon=1.0)
    assert abs(np.linalg.det(fr.matrix) - 1.0) < 1e-8


def test_energy_and_G_drift_f4bp(equal_masses, rng):
    """Conserved quantities drift below tolerance on F4BP test orbits."""
    f = get_field(VectorFieldId.F4BP_CARTESIAN, equal_masses)
    cfg = IntegratorConfig()
    from fourbody.charts import pair_from_cartesian, pair_to_cartesian
    for _ in range(3):
        st = iso_state(equal_masses, rng.uniform(-1, 0.5),
                       rng.uniform(-1.0, -0.4), rng.uniform(-0.5, 0.5),
                       r=2.0, ell_sp=60.0)
        # break isoscelesness with real angular momentum in the binary so the
        # orbit stays clear of unregularized collisions
        y0 = np.concatenate([st.x0, st.x1, st.x2, st.p0, st.p1, st.p2])
        for i, dG in ((0, 0.08), (1, -0.08)):
            el = pair_from_cartesian(y0[2 * i:2 * i + 2],
                                     y0[6 + 2 * i:8 + 2 * i], i,
                                     equal_masses, "left")
            from fourbody.charts import DelaunayElements as DE
            x2_, p2_ = pair_to_cartesian(
                DE(el.kind, el.L, el.ell, el.G + dG, el.g), i,
                equal_masses, "left")
            y0[2 * i:2 * i + 2] = x2_
            y0[6 + 2 * i:8 + 2 * i] = p2_

        def H_of(y):
            return hamiltonian_cartesian(y[0:2], y[2:4], y[4:6], y[6:8],
                                         y[8:10], y[10:12], equal_masses,
                                         "left")

        def G_of(y):
            return sum(y[2 * i] * y[7 + 2 * i] - y[2 * i + 1] * y[6 + 2 * i]
                       for i in range(3))

        seg = integrate_until(f, y0, cfg, horizon=3.0)
        H0, G0 = H_of(y0), G_of(y0)
        assert abs(H_of(seg.y_end) - H0) / max(abs(H0), 1.0) < 1e-9
        assert abs(G_of(seg.y_end) - G0) < 1e-10


def test_csv_dump(tmp_path, equal_masses):
    f = get_field(VectorFieldId.I3BP_REGULARIZED, equal_masses, energy=-8 / 9)
    seg = integrate_until(f, [0.5, -1.0, -0.5, 0.1], IntegratorConfig(),
                          horizon=2.0)
    path = tmp_path / "orbit.csv"
    seg.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "tauhat,t,tau,r,v,psi,what"
    assert len(lines) == len(seg.t) + 1
    row = [float(v) for v in lines[-1].split(",")]
    assert np.isclose(row[0], seg.t[-1])
    assert np.allclose(row[3:], seg.y[-1])
