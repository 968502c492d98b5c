"""Adaptive integration with dense output, section events and clock tracking.

Wraps scipy's DOP853 (order 8 embedded pair with dense output); every orbit,
manifold branch and Poincaré map in the package runs through here. Auxiliary
clocks (physical time t, intermediate blowup time tau) are integrated as
extra quadrature components so that time conversions inherit the integrator
accuracy.
"""

import csv
from dataclasses import dataclass, field as dfield

import numpy as np
from scipy.integrate import solve_ivp

from .flows import Field, VectorFieldId, cs_jacobian, variational_matrix


class IntegrationBudgetError(RuntimeError):
    """The step budget was exhausted before reaching the stop condition."""


class EventNotReachedError(RuntimeError):
    """The requested section was never crossed within the horizon."""


@dataclass
class IntegratorConfig:
    rel_tol: float = 1e-12
    abs_tol: float = 1e-14
    max_step: float = np.inf
    max_steps: int = 100_000_000
    event_tol: float = 1e-12

    def __post_init__(self):
        if self.rel_tol <= 0 or self.abs_tol <= 0 or self.max_steps <= 0:
            raise ValueError("tolerances and step budget must be positive")


@dataclass
class SectionSpec:
    """A scalar zero-crossing that terminates (or samples) an orbit.

    kind: S_MINUS {r = 1/eps}, S_PLUS {v = eps^-1/2}, S_MIDDLE
    {x2^R + beta*x1^L = 0 on the axis}, or GENERAL with a callable
    fn(field, t, y). direction refers to the sign of the section value's
    change as the integration progresses (also for backward runs): +1
    fires on rising crossings, -1 on falling, 0 on either.
    """

    kind: str
    epsilon: float = None
    beta: float = None
    fn: object = None
    direction: int = 0
    side: str = None

    def value(self, field, t, y):
        if self.kind == "S_MINUS":
            return _triple_r(field, y) - 1.0 / self.epsilon
        if self.kind == "S_PLUS":
            return _triple_v(field, y) - self.epsilon ** -0.5
        if self.kind == "S_MIDDLE":
            # left frame: x2^R + beta x1^L = 0; right frame: the mirrored
            # condition x1^L + beta x2^R = 0, both on the horizontal axis
            if field.side == "left":
                M1L = field.masses.side("left").M1
                return (0.5 * M1L + self.beta) * y[2] + y[4]
            M2R = field.masses.side("right").M2
            return (0.5 * M2R + self.beta) * y[4] + y[2]
        if self.kind == "GENERAL":
            return self.fn(field, t, y)
        raise ValueError(f"unknown section kind {self.kind!r}")


def _triple_r(field, y):
    if field.id in (VectorFieldId.I3BP_REGULARIZED,
                    VectorFieldId.I4BP_REGULARIZED,
                    VectorFieldId.F3BP_BLOWUP):
        return y[0]
    if field.id is VectorFieldId.F4BP_CARTESIAN:
        fc = field.fc
        x0 = y[0:2]
        xin = y[2 * fc.inner_index:2 * fc.inner_index + 2]
        Min = fc.pair(fc.inner_index)[0]
        return np.sqrt(fc.M0 * (x0 @ x0) + Min * (xin @ xin))
    raise NotImplementedError(f"r-section undefined for {field.id}")


def _triple_v(field, y):
    if field.id in (VectorFieldId.I3BP_REGULARIZED,
                    VectorFieldId.I4BP_REGULARIZED,
                    VectorFieldId.F3BP_BLOWUP):
        return y[1]
    if field.id is VectorFieldId.F4BP_CARTESIAN:
        fc = field.fc
        x0, p0 = y[0:2], y[6:8]
        i = fc.inner_index
        xin, pin = y[2 * i:2 * i + 2], y[6 + 2 * i:8 + 2 * i]
        return (x0 @ p0 + xin @ pin) / np.sqrt(_triple_r(field, y))
    raise NotImplementedError(f"v-section undefined for {field.id}")


@dataclass
class OrbitSegment:
    """An integrated orbit with dense output and clock bookkeeping."""

    field: Field
    t: np.ndarray
    y: np.ndarray                    # (n_samples, dim)
    clocks: dict
    dense: object
    terminated: bool = False
    event_time: float = None
    event_state: np.ndarray = None
    event_residual: float = None
    guard_index: int = None
    n_rhs: int = 0

    @property
    def t_end(self):
        return self.t[-1]

    @property
    def y_end(self):
        return self.y[-1]

    def state(self, t):
        return self.dense(t)[:self.field.dim]

    def clocks_at(self, t):
        full = self.dense(t)
        names = self.field.clock_names()
        return {n: full[self.field.dim + i] for i, n in enumerate(names)}

    def to_csv(self, path, state_names=None):
        names = state_names or STATE_NAMES.get(self.field.id)
        clock_names = self.field.clock_names()
        header = [self.field.time_label, *clock_names, *names]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for i, t in enumerate(self.t):
                row = [repr(float(t))]
                row += [repr(float(self.clocks[n][i])) for n in clock_names]
                row += [repr(float(v)) for v in self.y[i]]
                w.writerow(row)


STATE_NAMES = {
    VectorFieldId.I3BP_REGULARIZED: ["r", "v", "psi", "what"],
    VectorFieldId.I4BP_REGULARIZED: ["r", "v", "psi", "what", "L_sp", "ell_sp"],
    VectorFieldId.F3BP_BLOWUP: ["r", "v", "psi", "w", "w0", "w1", "theta0",
                                "theta1"],
    VectorFieldId.F4BP_CARTESIAN: ["x0x", "x0y", "x1x", "x1y", "x2x", "x2y",
                                   "p0x", "p0y", "p1x", "p1y", "p2x", "p2y"],
    VectorFieldId.F4BP_DELAUNAY_LEFT: ["L0", "ell0", "G0", "g0", "G1", "g1",
                                       "L2", "ell2", "G2", "g2"],
    VectorFieldId.F4BP_DELAUNAY_RIGHT: ["L0", "ell0", "G0", "g0", "L1", "ell1",
                                        "G1", "g1", "G2", "g2"],
}


def _augmented_rhs(field, config, counter):
    dim = field.dim
    budget = 13 * config.max_steps

    def rhs(t, Y):
        counter[0] += 1
        if counter[0] > budget:
            raise IntegrationBudgetError(
                f"exceeded {config.max_steps} steps")
        core = np.asarray(field.rhs(t, Y[:dim]), dtype=float)
        rates = field.clock_rates(t, Y[:dim])
        return np.concatenate([core, rates])

    return rhs


def integrate_until(field, y0, config=None, stop=None, horizon=None, t0=0.0,
                    clocks0=None, require_event=True, guards=None):
    """Integrate until a section crossing or the horizon.

    stop may be a SectionSpec or None; horizon is the furthest time in the
    field's own clock (signed: negative to integrate backward). guards are
    additional terminal sections that abort the run early; a fired guard is
    reported on the segment (guard_index) and never satisfies require_event.
    """
    config = config or IntegratorConfig()
    if horizon is None:
        raise ValueError("a finite horizon is required")
    dim = field.dim
    y0 = np.asarray(y0, dtype=float)
    nclock = len(field.clock_names())
    c0 = np.zeros(nclock) if clocks0 is None else np.asarray(clocks0, float)
    Y0 = np.concatenate([y0, c0])
    counter = [0]
    rhs = _augmented_rhs(field, config, counter)

    events = []
    specs = ([] if stop is None else [stop]) + list(guards or [])
    for spec in specs:
        def ev(t, Y, spec=spec):
            return spec.value(field, t, Y[:dim])
        ev.terminal = True
        ev.direction = float(spec.direction)
        events.append(ev)

    sol = solve_ivp(rhs, (t0, horizon), Y0, method="DOP853",
                    rtol=config.rel_tol, atol=config.abs_tol,
                    max_step=config.max_step, dense_output=True,
                    events=events or None)
    if not sol.success and sol.status != 1:
        raise RuntimeError(f"integration failed: {sol.message}")

    seg = OrbitSegment(
        field=field, t=sol.t, y=sol.y[:dim].T,
        clocks={n: sol.y[dim + i] for i, n in enumerate(field.clock_names())},
        dense=sol.sol, n_rhs=counter[0])
    fired = None
    if sol.status == 1:
        for i_ev in range(len(specs)):
            if len(sol.t_events[i_ev]):
                fired = i_ev
                break
    if fired is not None:
        te = sol.t_events[fired][-1]
        Ye = sol.y_events[fired][-1]
        if stop is not None and fired == 0:
            seg.terminated = True
            seg.event_time = te
            seg.event_state = Ye[:dim]
            seg.event_residual = abs(stop.value(field, te, Ye[:dim]))
            # the root is located to ~4 eps |t|; scale the acceptance with it
            if seg.event_residual > config.event_tol * max(1.0, abs(te)):
                raise RuntimeError(
                    f"event residual {seg.event_residual:.2e} above tolerance")
        else:
            seg.guard_index = fired - (0 if stop is None else 1)
            seg.event_time = te
            seg.event_state = Ye[:dim]
    if stop is not None and not seg.terminated and require_event:
        raise EventNotReachedError(
            f"section {stop.kind} not reached within horizon {horizon}")
    return seg


def _variational_rate(field, varsys, t, y, frame_mat):
    if varsys == "SELF":
        A = field.jacobian(t, y)
    else:
        cm = variational_matrix(varsys, y, field.masses, side=field.side,
                                energy=field.energy)
        A = cm.matrix
        if field.time_label == "tauhat":
            A = A * np.cos(y[2])
    return A @ frame_mat


def integrate_with_variational(field, varsys, y0, frame0, config=None,
                               stop=None, horizon=None, t0=0.0,
                               boundary=False, require_event=True):
    """Transport a tangent frame along the orbit.

    varsys: "SELF" for the field's own fundamental solution (complex-step
    Jacobian), or a named reduced system ("W0G01", "Y4") whose coefficient
    matrix rides along a blowup orbit. The optional boundary flag applies
    the section-projection factor Id - f (grad s)/(grad s . f) at the
    terminal crossing so the frame becomes the Poincaré-map tangent.
    """
    config = config or IntegratorConfig()
    dim = field.dim
    frame0 = np.asarray(frame0, dtype=float)
    fshape = frame0.shape
    nclock = len(field.clock_names())
    Y0 = np.concatenate([np.asarray(y0, float), np.zeros(nclock),
                         frame0.ravel()])
    counter = [0]
    budget = 13 * config.max_steps

    def rhs(t, Y):
        counter[0] += 1
        if counter[0] > budget:
            raise IntegrationBudgetError(f"exceeded {config.max_steps} steps")
        y = Y[:dim]
        core = np.asarray(field.rhs(t, y), dtype=float)
        rates = field.clock_rates(t, y)
        F = Y[dim + nclock:].reshape(fshape)
        dF = _variational_rate(field, varsys, t, y, F)
        return np.concatenate([core, rates, dF.ravel()])

    events = None
    if stop is not None:
        def ev(t, Y):
            return stop.value(field, t, Y[:dim])
        ev.terminal = True
        ev.direction = float(stop.direction)
        events = [ev]

    sol = solve_ivp(rhs, (t0, horizon), Y0, method="DOP853",
                    rtol=config.rel_tol, atol=config.abs_tol,
                    max_step=config.max_step, dense_output=True,
                    events=events)
    if not sol.success and sol.status != 1:
        raise RuntimeError(f"integration failed: {sol.message}")

    seg = OrbitSegment(
        field=field, t=sol.t, y=sol.y[:dim].T,
        clocks={n: sol.y[dim + i] for i, n in enumerate(field.clock_names())},
        dense=sol.sol, n_rhs=counter[0])
    if stop is not None and sol.status == 1 and len(sol.t_events[0]):
        te = sol.t_events[0][-1]
        Ye = sol.y_events[0][-1]
        seg.terminated = True
        seg.event_time = te
        seg.event_state = Ye[:dim]
        seg.event_residual = abs(stop.value(field, te, Ye[:dim]))
        frame = Ye[dim + nclock:].reshape(fshape)
        ye = Ye[:dim]
    elif stop is not None and require_event:
        raise EventNotReachedError(
            f"section {stop.kind} not reached within horizon {horizon}")
    else:
        frame = sol.y[dim + nclock:, -1].reshape(fshape)
        ye = sol.y[:dim, -1]

    if boundary and seg.terminated and varsys == "SELF":
        f_end = np.asarray(field.rhs(seg.event_time, ye), dtype=float)
        grad_s = cs_jacobian(
            lambda z: np.atleast_1d(stop.value(field, seg.event_time, z)),
            ye)[0]
        denom = grad_s @ f_end
        frame = (np.eye(dim) - np.outer(f_end, grad_s) / denom) @ frame
    from .charts import TangentFrame
    return seg, TangentFrame(frame, chart=f"{field.id.value}/{varsys}",
                             basepoint=ye)
