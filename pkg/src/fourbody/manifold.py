"""The collision manifold {r = 0}: equilibria, linearization, branch fates.

The triple-collision blowup turns {r = 0} into an invariant two-sphere with
four arms. Six equilibria live on it: two collinear (Euler) configurations
on the symmetry axis and four equilateral (Lagrange) ones. The lower
Lagrange saddles organize everything downstream: their unstable branches
either escape through an upper arm or spiral into the upper Euler sink, and
the transition masses b1, b2 are located here by bisection.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .flows import VectorFieldId, get_field, w0g01_matrix
from .integrate import IntegratorConfig, SectionSpec, integrate_until
from .model import MassConfig, isosceles_potential, lagrange_angle

FATE_ESCAPES_LEFT = "ESCAPES_LEFT_ARM"
FATE_ESCAPES_RIGHT = "ESCAPES_RIGHT_ARM"
FATE_DIES = "DIES_AT_EULER"
FATE_UNDECIDED = "UNDECIDED"


@dataclass
class EquilibriumReport:
    kind: str                     # "euler" | "lagrange"
    v: float
    psi: float
    what: float
    manifold_eigenvalues: np.ndarray   # (psi, what)-block eigenvalues
    full_eigenvalues: np.ndarray       # 4x4 regularized-field spectrum
    manifold_eigenvectors: np.ndarray
    classification: str
    y_block_eigenvalues: np.ndarray = None    # (w0, gbar01) block, Lagrange

    @property
    def location(self):
        return np.array([0.0, self.v, self.psi, self.what])

    def to_dict(self):
        d = {"kind": self.kind, "v": self.v, "psi": self.psi,
             "what": self.what, "classification": self.classification,
             "manifold_eigenvalues": [str(z) for z in
                                      np.atleast_1d(self.manifold_eigenvalues)],
             "full_eigenvalues": [str(z) for z in
                                  np.atleast_1d(self.full_eigenvalues)]}
        if self.y_block_eigenvalues is not None:
            d["y_block_eigenvalues"] = [float(z) for z in
                                        self.y_block_eigenvalues]
        return d


def _manifold_block(field, point):
    """(psi, what)-block of the field Jacobian at an equilibrium."""
    J = field.jacobian(0.0, point)
    return J[2:4, 2:4]


def _classify_euler(v, block_eigs):
    stype = "sink" if v > 0 else "source"
    kind = "complex" if np.iscomplexobj(block_eigs) and np.max(
        np.abs(block_eigs.imag)) > 1e-12 else "real"
    return f"{stype} ({kind} eigenvalues)"


def find_equilibria(masses, side="left"):
    """All six rest points of the regularized triple flow on {r = 0}.

    Eigenvalues come from the complex-step Jacobian of the regularized
    field, which is analytic; the (psi, what) sub-block classifies the
    on-manifold behaviour per the collision-manifold phase portrait.
    """
    m_ex = masses.side(side).m_ex
    field = get_field(VectorFieldId.I3BP_REGULARIZED, masses, side=side,
                      energy=0.0)
    psis = lagrange_angle(m_ex)
    vstar = np.sqrt(-2 * isosceles_potential(psis, m_ex))
    vdag = np.sqrt(-2 * isosceles_potential(0.0, m_ex))
    out = []
    for v, psi, kind in [(vdag, 0.0, "euler"), (-vdag, 0.0, "euler"),
                         (vstar, psis, "lagrange"), (vstar, -psis, "lagrange"),
                         (-vstar, psis, "lagrange"),
                         (-vstar, -psis, "lagrange")]:
        point = np.array([0.0, v, psi, 0.0])
        block = _manifold_block(field, point)
        eigs, vecs = np.linalg.eig(block)
        full = np.linalg.eigvals(field.jacobian(0.0, point))
        if kind == "euler":
            cls = _classify_euler(v, eigs)
            ybe = None
        else:
            cls = "saddle"
            yb = w0g01_matrix(point, masses, side).matrix
            ybe = np.sort(np.linalg.eigvals(yb).real)
        out.append(EquilibriumReport(kind, float(v), float(psi), 0.0,
                                     eigs, full, vecs, cls,
                                     y_block_eigenvalues=ybe))
    return out


def lower_lagrange(masses, side="left"):
    """The lower Lagrange point whose arm faces the frame's exterior body."""
    m_ex = masses.side(side).m_ex
    sign_psi = -1.0 if side == "left" else 1.0
    psis = sign_psi * lagrange_angle(m_ex)
    vstar = -np.sqrt(-2 * isosceles_potential(psis, m_ex))
    return np.array([0.0, vstar, psis, 0.0])


def unstable_direction(masses, point, side="left"):
    """Unit unstable eigenvector of the on-manifold (psi, what) block."""
    field = get_field(VectorFieldId.I3BP_REGULARIZED, masses, side=side,
                      energy=0.0)
    block = _manifold_block(field, point)
    eigs, vecs = np.linalg.eig(block)
    i = int(np.argmax(eigs.real))
    vec = vecs[:, i].real
    vec = vec / np.linalg.norm(vec)
    if vec[0] < 0:          # orient so branch +1 starts toward larger psi
        vec = -vec
    return vec, float(eigs[i].real)


@dataclass
class LyapunovReport:
    min_rate: float
    v_start: float
    v_end: float
    monotone: bool


def lyapunov_check(segment, tol=1e-10):
    """v is nondecreasing in the tau clock along manifold orbits.

    The regularized integrator runs in tau-hat with d(tau) = cos(psi)
    d(tau-hat); during the brief analytic-continuation dips past
    |psi| = pi/2 the tau-hat rate flips sign while dv/dtau stays
    nonnegative, so the rate is measured as (dv/dtau-hat)/cos(psi),
    skipping samples at the collision itself.
    """
    rates = []
    for t, y in zip(segment.t, segment.y):
        c = np.cos(y[2])
        # skip the double collision and the brief analytic-continuation dips
        # beyond it, where the fold is not physical
        if abs(c) < 1e-6 or abs(y[2]) >= np.pi / 2:
            continue
        rates.append(segment.field.rhs(t, y)[1] / c)
    min_rate = float(np.min(rates))
    return LyapunovReport(min_rate=min_rate, v_start=float(segment.y[0, 1]),
                          v_end=float(segment.y[-1, 1]),
                          monotone=min_rate >= -tol)


def branch_fate(m1, branch, delta0=1e-10, v_escape=10.0, horizon=500.0,
                ball=1e-3, config=None):
    """Fate of one unstable branch of the lower-left Lagrange point on {r=0}.

    branch is +1 or -1 along the unit unstable eigenvector. Escape means v
    reaches v_escape (the arm is read off the sign of psi there); death
    means the orbit enters the ball around the upper Euler sink.
    """
    masses = MassConfig(m1, 1.0)
    point = lower_lagrange(masses, "left")
    eu, _ = unstable_direction(masses, point, "left")
    y0 = point + branch * delta0 * np.array([0.0, 0.0, eu[0], eu[1]])
    y0[0] = 0.0
    field = get_field(VectorFieldId.I3BP_REGULARIZED, masses, side="left",
                      energy=0.0)
    stop = SectionSpec("GENERAL", fn=lambda f, t, y: y[1] - v_escape,
                       direction=+1)
    config = config or IntegratorConfig(rel_tol=1e-10, abs_tol=1e-12)
    seg = integrate_until(field, y0, config, stop=stop, horizon=horizon,
                          require_event=False)
    if seg.terminated:
        return FATE_ESCAPES_LEFT if seg.event_state[2] < 0 else \
            FATE_ESCAPES_RIGHT
    vdag = np.sqrt(-2 * isosceles_potential(0.0, m1))
    euler = np.array([vdag, 0.0, 0.0])
    d = np.linalg.norm(seg.y[:, 1:4] - euler, axis=1)
    if np.min(d) < ball or (abs(seg.y_end[1] - vdag) < 0.2
                            and abs(seg.y_end[2]) < 0.2):
        return FATE_DIES
    return FATE_UNDECIDED


def fate_transition(branch, m_lo, m_hi, tol=1e-4, max_iter=60):
    """Bisect the mass where the branch fate changes character."""
    f_lo = branch_fate(m_lo, branch)
    f_hi = branch_fate(m_hi, branch)
    if f_lo == f_hi:
        raise ValueError(f"no fate change in [{m_lo}, {m_hi}]: {f_lo}")
    for _ in range(max_iter):
        mid = 0.5 * (m_lo + m_hi)
        if branch_fate(mid, branch) == f_lo:
            m_lo = mid
        else:
            m_hi = mid
        if m_hi - m_lo < tol:
            break
    return 0.5 * (m_lo + m_hi)


def _scan_row(m1):
    masses = MassConfig(m1, 1.0)
    point = lower_lagrange(masses, "left")
    _, mu_u = unstable_direction(masses, point, "left")
    yb = w0g01_matrix(point, masses, "left").matrix
    ybe = np.sort(np.linalg.eigvals(yb).real)
    return {"m1": m1,
            "fate_left_branch": branch_fate(m1, -1),
            "fate_right_branch": branch_fate(m1, +1),
            "v_star": point[1], "psi_star": point[2],
            "mu_u": ybe[1], "mu_s": ybe[0]}


def mass_scan(m1_values, jobs=None):
    """Branch fates over a mass grid; rows ordered as the input."""
    if jobs is not None and jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(_scan_row, m1_values))
    return [_scan_row(m) for m in m1_values]
