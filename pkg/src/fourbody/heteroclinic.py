"""Guiding orbits of the near-triple-collision passage.

gamma_O is the branch of the lower Lagrange point's unstable manifold that
lives on the collision manifold and escapes through the correct arm;
gamma_I is the stable-manifold orbit selected, among all orbits falling in
from infinity, by the energy partition between the binary and the incoming
exterior body. Both are computed by direct shooting on the regularized
triple flow.
"""

from dataclasses import dataclass, field as dfield

import numpy as np

from .charts import blowup_from_jacobi, jacobi_from_blowup, pair_from_cartesian
from .flows import VectorFieldId, get_field
from .integrate import IntegratorConfig, SectionSpec, integrate_until
from .manifold import (FATE_DIES, branch_fate, lower_lagrange,
                       unstable_direction)
from .model import isosceles_potential, lagrange_angle


@dataclass
class GammaOrbit:
    kind: str                 # "GAMMA_I" | "GAMMA_O"
    side: str
    segment: object           # OrbitSegment, anchored per the conventions
    anchor_state: np.ndarray  # state at gamma(0)
    anchor_time: float        # integrator time of the anchor
    masses: object = None
    energy: float = None
    seed: np.ndarray = None
    seed_angle: float = None
    partition_residual: float = None
    partition_target: float = None
    far_state: np.ndarray = None
    far_elements: dict = None

    def summary(self):
        d = {"kind": self.kind, "side": self.side,
             "anchor_state": [float(x) for x in self.anchor_state],
             "anchor_time": float(self.anchor_time)}
        if self.seed_angle is not None:
            d["seed_angle"] = float(self.seed_angle)
        if self.partition_residual is not None:
            d["partition_residual"] = float(self.partition_residual)
            d["partition_target"] = float(self.partition_target)
        return d


class GammaError(RuntimeError):
    def __init__(self, message, table=None):
        super().__init__(message)
        self.table = table


def partition_target(masses, side):
    """Asymptotic (L0/L_in)^2 selecting gamma_I, from the energy handoff."""
    if side == "right":
        m_in, m_other = masses.m2, masses.m1
    else:
        m_in, m_other = masses.m1, masses.m2
    return m_other / (16.0 * m_in ** 2 * (m_other + 2.0))


def compute_gamma_O(masses, side="left", epsilon=0.01, delta0=1e-10,
                    config=None, horizon=500.0):
    """Unstable-manifold branch on {r = 0} from the lower Lagrange point.

    Integrates the regularized triple flow from a small offset along the
    unit unstable eigenvector until the section {v = eps^-1/2}; the branch
    escaping the frame's own arm (psi of the exterior body's sign) is
    selected, and the anchor gamma_O(0) is the section crossing.
    """
    point = lower_lagrange(masses, side)
    eu, _ = unstable_direction(masses, point, side)
    field = get_field(VectorFieldId.I3BP_REGULARIZED, masses, side=side,
                      energy=0.0)
    config = config or IntegratorConfig(rel_tol=1e-13, abs_tol=1e-15)
    stop = SectionSpec("S_PLUS", epsilon=epsilon, direction=+1)
    want_sign = -1.0 if side == "left" else 1.0
    fates = {}
    for branch in (1, -1):
        y0 = point + branch * delta0 * np.array([0.0, 0.0, eu[0], eu[1]])
        y0[0] = 0.0
        seg = integrate_until(field, y0, config, stop=stop, horizon=horizon,
                              require_event=False)
        if seg.terminated and np.sign(seg.event_state[2]) == want_sign:
            return GammaOrbit(kind="GAMMA_O", side=side, segment=seg,
                              anchor_state=seg.event_state,
                              anchor_time=seg.event_time, masses=masses,
                              seed=y0)
        fates[branch] = ("escapes psi=%+.2f arm" % seg.event_state[2]
                         if seg.terminated else "no escape (dies at Euler?)")
    raise GammaError(
        f"no unstable branch of the {side} lower Lagrange point escapes "
        f"its own arm: {fates}", table=fates)


def stable_directions(masses, side, energy):
    """(e1s on-manifold, e2s homothetic) at the lower Lagrange point."""
    point = lower_lagrange(masses, side)
    field = get_field(VectorFieldId.I3BP_REGULARIZED, masses, side=side,
                      energy=energy)
    J = field.jacobian(0.0, point)
    block = J[2:4, 2:4]
    eigs, vecs = np.linalg.eig(block)
    i = int(np.argmin(eigs.real))
    es = vecs[:, i].real
    es = es / np.linalg.norm(es)
    if es[0] < 0:
        es = -es
    e1 = np.array([0.0, 0.0, es[0], es[1]])
    e2 = np.array([point[1], energy, 0.0, 0.0])
    e2 = e2 / np.linalg.norm(e2)
    return e1, e2


_V_CAP = 60.0     # collapse guard level for v^2/(1+r)
_R_HAND = 40.0    # blowup <-> isosceles-pairs chart handoff size


def _r_far_stop(r_far):
    return SectionSpec("GENERAL", fn=lambda f, t, y: y[0] - r_far,
                       direction=+1)


# a recollapsing seed dives to the triple collision with v^2/(1+r) -> inf,
# while escaping orbits keep v^2 ~ O(r); fire only on the former
_GUARDS = [SectionSpec("GENERAL",
                       fn=lambda f, t, y: y[1] ** 2 / (1.0 + y[0])
                       - _V_CAP ** 2, direction=+1)]


def blowup_to_apoapsis(y, masses, side, energy, config, backward=False):
    """Short regularized leg to the next binary apoapsis (x0.p0 sign flip).

    Used before handing the orbit to the isosceles-pairs chart, which must
    not be entered at a binary double collision.
    """
    from .charts import fast_from_blowup  # noqa: F401 (chart availability)
    fid = (VectorFieldId.I4BP_REGULARIZED if len(y) >= 6
           else VectorFieldId.I3BP_REGULARIZED)
    field = get_field(fid, masses, side=side, energy=energy)
    stop = SectionSpec("GENERAL", fn=lambda f, t, yy: yy[1]
                       * np.cos(yy[2]) ** 2 - yy[3] * np.sin(yy[2]),
                       direction=(+1 if backward else -1))
    horizon = -50.0 if backward else 50.0
    return integrate_until(field, y, config, stop=stop, horizon=horizon)


def _fast_partition(masses, side, yf):
    """(status, residual, elements) from an isosceles-pairs far state."""
    from .charts import DelaunayElements
    fc = masses.side(side)
    M0, k0 = fc.pair(0)
    Min, kin = fc.pair(fc.inner_index)
    L0 = yf[0]
    Ein = yf[3] ** 2 / (2.0 * Min) - kin / abs(yf[2])
    if Ein <= 0:
        return "WRONG_REGIME", np.inf, None
    Lin = kin * np.sqrt(Min / (2.0 * Ein))
    ratio = (L0 / Lin) ** 2
    residual = abs(ratio - partition_target(masses, side))
    el0 = DelaunayElements("elliptic", float(L0), float(yf[1]), 0.0,
                           np.pi / 2)
    el_in = DelaunayElements("hyperbolic", float(Lin), 0.0, 0.0, 0.0)
    return "OK", residual, (el0, el_in)


def _backward_partition(masses, side, energy, seed, r_far, config, horizon):
    """Backward orbit from the seed; returns (status, residual, seg, far).

    Hybrid propagation: the regularized chart carries the orbit out of the
    near-collision region; from the first apoapsis past r = _R_HAND the
    isosceles-pairs chart covers the long smooth leg to r_far.
    """
    from .charts import fast_from_blowup, fast_triple_r
    from .flows import IsoscelesPairsField
    field = get_field(VectorFieldId.I3BP_REGULARIZED, masses, side=side,
                      energy=energy)
    stop = _r_far_stop(min(r_far, _R_HAND))
    try:
        seg = integrate_until(field, seed, config, stop=stop,
                              horizon=-horizon, require_event=False,
                              guards=_GUARDS)
    except RuntimeError:
        return "FAILED", np.inf, None, None
    if not seg.terminated:
        return "BOUNDED", np.inf, seg, None
    yh = seg.event_state
    correct_arm = (yh[2] < 0) if side == "left" else (yh[2] > 0)
    if not correct_arm:
        return "WRONG_ARM", np.inf, seg, None
    try:
        seg_apo = blowup_to_apoapsis(yh, masses, side, energy, config,
                                     backward=True)
        yf0 = fast_from_blowup(seg_apo.event_state, masses, side,
                               with_spectator=False)
    except (RuntimeError, ValueError):
        return "FAILED", np.inf, seg, None
    fast = IsoscelesPairsField(masses, side, with_spectator=False)
    stop_far = SectionSpec("GENERAL",
                           fn=lambda f, t, y: fast_triple_r(y, masses, side)
                           - r_far, direction=+1)
    t_horizon = -(60.0 * r_far)
    try:
        seg2 = integrate_until(fast, yf0, config, stop=stop_far,
                               horizon=t_horizon, require_event=False)
    except RuntimeError:
        return "FAILED", np.inf, seg, None
    if not seg2.terminated:
        return "BOUNDED", np.inf, seg2, None
    status, residual, els = _fast_partition(masses, side, seg2.event_state)
    return status, residual, seg2, els


def _bl_state(y, side):
    from .charts import BlowupState
    return BlowupState(r=float(y[0]), v=float(y[1]), psi=float(y[2]),
                       what=float(y[3]), side=side)


def asymptotic_actions(masses, side, energy):
    """(L0, L_in, E0, E_in) fixed by the energy partition on the level."""
    fc = masses.side(side)
    M0, k0 = fc.pair(0)
    Min, kin = fc.pair(fc.inner_index)
    tgt = partition_target(masses, side)
    # E0 = -M0 k0^2/(2 L0^2), E_in = +Min kin^2/(2 L_in^2) and
    # (L0/L_in)^2 = tgt give E_in = -E0 * (Min kin^2 / (M0 k0^2)) * tgt
    ratio = (Min * kin ** 2) / (M0 * k0 ** 2) * tgt
    E0 = energy / (1.0 - ratio)
    Ein = energy - E0
    if not (E0 < 0 < Ein):
        raise GammaError(f"partition gives E0={E0}, E_in={Ein}; no orbit")
    L0 = k0 * np.sqrt(M0 / (-2.0 * E0))
    Lin = kin * np.sqrt(Min / (2.0 * Ein))
    return L0, Lin, E0, Ein


def incoming_state(masses, side, energy, phi, r_start):
    """Blowup state at triple size r_start carrying the exact partition
    asymptotics, with incoming exterior pair and binary phase phi."""
    from .charts import CartesianJacobiState, DelaunayElements, \
        pair_to_cartesian
    fc = masses.side(side)
    Min, kin = fc.pair(fc.inner_index)
    L0, Lin, _, _ = asymptotic_actions(masses, side, energy)
    a_in = Lin * Lin / (Min * kin)
    r_in = r_start / np.sqrt(Min)
    u = -np.arccosh(1.0 + r_in / a_in)
    ell_in = u - np.sinh(u)
    el0 = DelaunayElements("elliptic", L0, phi, 0.0, np.pi / 2)
    el_in = DelaunayElements("hyperbolic", Lin, ell_in, 0.0, 0.0)
    x0, p0 = pair_to_cartesian(el0, 0, masses, side)
    xin, pin = pair_to_cartesian(el_in, fc.inner_index, masses, side)
    far = np.array([1e9, 0.0])
    pairs = {0: (x0, p0), fc.inner_index: (xin, pin),
             fc.spectator_index: (far, np.zeros(2))}
    st = CartesianJacobiState(side, pairs[0][0], pairs[1][0], pairs[2][0],
                              pairs[0][1], pairs[1][1], pairs[2][1])
    bl = blowup_from_jacobi(st, masses)
    return np.array([bl.r, bl.v, bl.psi, bl.what])


def incoming_fast_state(masses, side, energy, phi, r_start):
    """Isosceles-pairs state at triple size r_start with the exact partition
    asymptotics, incoming exterior pair, and binary phase phi."""
    fc = masses.side(side)
    Min, kin = fc.pair(fc.inner_index)
    L0, Lin, _, _ = asymptotic_actions(masses, side, energy)
    a_in = Lin * Lin / (Min * kin)
    r_in = r_start / np.sqrt(Min)
    u = -np.arccosh(1.0 + r_in / a_in)
    sgn = -1.0 if side == "left" else 1.0
    s_in = sgn * r_in
    p_in = Lin * np.sinh(u) / s_in
    return np.array([L0, phi, s_in, p_in])


def _exit_arm(masses, side, energy, phi, r_start, config, horizon,
              v_exit=8.0, keep=False):
    """Hybrid forward shot: fast chart to the handoff size, regularized
    chart through the near-collision passage until {v = v_exit}. Returns
    (arm sign, blowup segment or None)."""
    from .charts import blowup_from_fast, fast_triple_r
    from .flows import IsoscelesPairsField
    fast = IsoscelesPairsField(masses, side, with_spectator=False)
    yf = incoming_fast_state(masses, side, energy, phi, r_start)
    stop_hand = SectionSpec("GENERAL",
                            fn=lambda f, t, y: fast_triple_r(y, masses, side)
                            - _R_HAND, direction=-1)
    seg_in = integrate_until(fast, yf, config, stop=stop_hand,
                             horizon=60.0 * r_start)
    y4 = blowup_from_fast(seg_in.event_state, masses, side,
                          with_spectator=False)
    field = get_field(VectorFieldId.I3BP_REGULARIZED, masses, side=side,
                      energy=energy)
    stop = SectionSpec("GENERAL", fn=lambda f, t, y: y[1] - v_exit,
                       direction=+1)
    try:
        seg = integrate_until(field, y4, config, stop=stop, horizon=horizon,
                              require_event=False, guards=_GUARDS)
    except RuntimeError:
        return 0.0, None
    if not seg.terminated:
        return 0.0, (seg if keep else None)
    return float(np.sign(seg.event_state[2])), (seg if keep else None)


def _bisect_gamma_I(masses, side, energy, r_start, config, phi_tol, horizon):
    """Bisect the binary phase on the re-escape arm; the flip marks a
    stable-manifold crossing."""
    coarse = IntegratorConfig(rel_tol=1e-9, abs_tol=1e-11,
                              max_steps=config.max_steps)
    phis = np.linspace(0.05, 2 * np.pi - 0.05, 25)
    arms = []
    for phi in phis:
        arm, _ = _exit_arm(masses, side, energy, phi, r_start, coarse,
                           horizon)
        arms.append(arm)
    bracket = None
    for i in range(len(phis) - 1):
        if arms[i] and arms[i + 1] and arms[i] * arms[i + 1] < 0:
            bracket = (phis[i], phis[i + 1], arms[i])
            break
    if bracket is None:
        raise GammaError("no arm-exit sign change over the binary phase "
                         "grid", table=list(zip(phis, arms)))
    lo, hi, arm_lo = bracket
    while hi - lo > phi_tol:
        mid = 0.5 * (lo + hi)
        cfg = coarse if hi - lo > 1e-6 else config
        arm, _ = _exit_arm(masses, side, energy, mid, r_start, cfg, horizon)
        if arm == arm_lo:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _saddle_basis(masses, side, energy):
    """Eigenbasis of the regularized field at the lower Lagrange point,
    columns ordered (stable on-manifold, stable homothetic, unstable,
    off-shell)."""
    point = lower_lagrange(masses, side)
    field = get_field(VectorFieldId.I3BP_REGULARIZED, masses, side=side,
                      energy=energy)
    J = field.jacobian(0.0, point)
    evals, evecs = np.linalg.eig(J)
    evals = evals.real
    vecs = evecs.real
    vstar_c = point[1] * np.cos(point[2])
    cols = {}
    for i in range(4):
        v = vecs[:, i] / np.linalg.norm(vecs[:, i])
        if evals[i] < 0 and abs(evals[i] - vstar_c) < 1e-8:
            cols["homothetic"] = v
        elif evals[i] < 0 and abs(evals[i] + vstar_c) > 1e-8:
            cols["stable"] = v
        elif evals[i] > 0 and abs(evals[i] + vstar_c) < 1e-8:
            cols["offshell"] = v
        else:
            cols["unstable"] = v
    B = np.column_stack([cols["stable"], cols["homothetic"],
                         cols["unstable"], cols["offshell"]])
    return point, B


def refine_seed(masses, side, energy, seed, target_radius=1e-6, config=None,
                max_rounds=12):
    """Pull a near-stable-manifold state down to a small saddle-side seed.

    Alternates a projection onto the linear stable plane of the saddle with
    a short forward integration to the closest approach; each round shrinks
    the radius while the projection removes the accumulated unstable
    component. Caveat: the flow rotates stable-plane directions toward the
    slow eigenvector, so the refined seed generally belongs to a slightly
    different member of the stable family than the input orbit — use it for
    saddle-local work, not to re-measure backward asymptotics.
    """
    config = config or IntegratorConfig(rel_tol=1e-13, abs_tol=1e-15)
    point, B = _saddle_basis(masses, side, energy)
    field = get_field(VectorFieldId.I3BP_REGULARIZED, masses, side=side,
                      energy=energy)
    Binv = np.linalg.inv(B)
    seed = np.asarray(seed, dtype=float)
    for _ in range(max_rounds):
        co = Binv @ (seed - point)
        co[2] = 0.0   # drop the unstable component
        co[3] = 0.0   # drop the off-shell component
        seed = point + B @ co
        radius = np.linalg.norm(seed - point)
        if radius <= target_radius:
            return seed
        seg = integrate_until(field, seed, config, horizon=6.0)
        ts = np.linspace(0.0, seg.t_end, 600)
        ys = np.array([seg.state(t) for t in ts])
        d = np.linalg.norm(ys - point, axis=1)
        seed = ys[int(np.argmin(d))]
    return seed


def compute_gamma_I(masses, side="left", energy=-8.0 / 9.0, epsilon=0.01,
                    mode="two_sided", n_grid=2001, seed_radius=1e-6,
                    r_far=1e4, r_start=200.0, config=None, horizon=4000.0,
                    angle_tol=1e-9, phi_tol=1e-13, verify=True):
    """Stable-manifold orbit with the prescribed energy partition at infinity.

    mode="two_sided" (default): build the incoming state with the exact
    partition actions at triple size r_start and bisect the binary phase on
    the arm of re-escape; the flip locates the stable-manifold crossing.
    The closest approach to the saddle provides the fixed-point-side seed,
    and a backward integration from that seed out to r >= r_far measures
    the achieved partition residual.

    mode="grid": the fixed-point-side family scan — seeds
    O + seed_radius*(-cos(a) e2s + sin(a) e1s) over n_grid angles in
    [-pi/2, pi/2], each scored by the partition residual of its backward
    orbit at r_far, then golden-section refinement. Orders of magnitude
    slower than the bisection; intended for cross-checks on small grids.

    The anchor gamma_I(0) is the first forward crossing of {r = 1/eps}.
    """
    if energy >= 0:
        raise ValueError("gamma_I needs a negative triple energy")
    config = config or IntegratorConfig(rel_tol=1e-12, abs_tol=1e-14)
    point = lower_lagrange(masses, side)
    e1, e2 = stable_directions(masses, side, energy)
    field = get_field(VectorFieldId.I3BP_REGULARIZED, masses, side=side,
                      energy=energy)

    seg_in = None
    if mode == "two_sided":
        phi = _bisect_gamma_I(masses, side, energy, r_start, config, phi_tol,
                              horizon)
        _, seg_in = _exit_arm(masses, side, energy, phi, r_start, config,
                              horizon, keep=True)
        if seg_in is None:
            raise GammaError("final shot failed to integrate")
        d = np.linalg.norm(seg_in.y - point, axis=1)
        i_min = int(np.argmin(d))
        # the on-orbit closest approach is the seed: projecting it onto the
        # linear stable plane would drift the backward asymptotics toward a
        # neighboring member of the stable family and spoil the partition
        seed = seg_in.y[i_min]
        rel = seed - point
        angle = float(np.arctan2(rel @ e1, -(rel @ e2)))
    elif mode == "grid":
        def seed_of(a):
            return point + seed_radius * (-np.cos(a) * e2 + np.sin(a) * e1)

        def residual_of(a):
            return _backward_partition(masses, side, energy, seed_of(a),
                                       r_far, config, horizon)[1]

        angles = np.linspace(-np.pi / 2, np.pi / 2, n_grid)
        residuals = [residual_of(a) for a in angles]
        i_best = int(np.argmin(residuals))
        if not np.isfinite(residuals[i_best]):
            raise GammaError("no grid seed reaches the far region on the "
                             "correct arm",
                             table=list(zip(angles, residuals)))
        angle = angles[i_best]
        da = angles[1] - angles[0] if n_grid > 1 else 0.1
        gr = (np.sqrt(5.0) - 1.0) / 2.0
        lo, hi = angle - da, angle + da
        c = hi - gr * (hi - lo)
        dpt = lo + gr * (hi - lo)
        fc_, fd_ = residual_of(c), residual_of(dpt)
        while hi - lo > angle_tol:
            if fc_ < fd_:
                hi, dpt, fd_ = dpt, c, fc_
                c = hi - gr * (hi - lo)
                fc_ = residual_of(c)
            else:
                lo, c, fc_ = c, dpt, fd_
                dpt = lo + gr * (hi - lo)
                fd_ = residual_of(dpt)
        angle = 0.5 * (lo + hi)
        seed = seed_of(angle)
    else:
        raise ValueError(f"unknown mode {mode!r}")

    res, far_state, els = np.nan, None, None
    if verify or mode == "grid":
        status, res, seg_far, els = _backward_partition(
            masses, side, energy, seed, r_far, config, horizon)
        if status != "OK":
            raise GammaError(f"backward verification failed ({status})")
        far_state = seg_far.event_state

    anchor_stop = SectionSpec("S_MINUS", epsilon=epsilon, direction=+1)
    seg_anchor = integrate_until(field, seed, config, stop=anchor_stop,
                                 horizon=-horizon)
    out = GammaOrbit(kind="GAMMA_I", side=side,
                     segment=seg_in if seg_in is not None else seg_anchor,
                     anchor_state=seg_anchor.event_state,
                     anchor_time=seg_anchor.event_time, masses=masses,
                     energy=energy, seed=np.asarray(seed), seed_angle=angle,
                     partition_residual=float(res) if np.isfinite(res)
                     else None,
                     partition_target=partition_target(masses, side),
                     far_state=far_state)
    if els is not None:
        out.far_elements = {"binary": els[0].to_dict(),
                            "inner": els[1].to_dict()}
    return out
