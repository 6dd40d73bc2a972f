"""Time integration of the shifting-niche equation.

Two frames are supported:

* ``"fixed"``: ``U_t = J * U - U + f(x - c t, U)`` on a fixed grid, the
  growth law re-evaluated at the shifted abscissae every step;
* ``"moving"``: ``u_t = c u_x + J * u - u + f(x, u)``, with the same
  upwind drift stencil as :mod:`shiftniche.discrete_operator`.

Forward Euler with ``dt (1 + L_f + [moving] |c|/h) <= 1`` writes every
step as a nonnegative combination of the previous values, so order and
positivity are preserved exactly (up to rounding).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .discrete_operator import assemble
from .errors import ValidationError
from .kernel import cutoff

DT_SAFETY = 0.9
EXTINCTION = 1e-3
PERSISTENCE = 5e-2
CONVERGENCE = 1e-2


@dataclass
class EvolutionTrace:
    frame: str
    times: np.ndarray
    sup_norms: np.ndarray
    l1_masses: np.ndarray
    niche_minima: np.ndarray
    snapshots: dict
    dt: float
    final_state: np.ndarray
    x: np.ndarray
    c: float = 0.0
    distances: np.ndarray = None
    reference: np.ndarray = None
    mass_defect: float = 0.0
    flags: list = field(default_factory=list)


def dt_bound(growth, c, grid, frame, s_max):
    """Largest monotone step ``1 / (1 + L_f + [moving] |c|/h)``."""
    L = growth.lipschitz(s_max)
    drift = abs(c) / grid.h if frame == "moving" else 0.0
    return 1.0 / (1.0 + L + drift)


def niche_core(growth):
    """Inner half of the niche interval."""
    lo, hi = growth.profile.niche_interval
    if not (math.isfinite(lo) and math.isfinite(hi)):
        return -math.inf, math.inf
    mid, quarter = 0.5 * (lo + hi), 0.25 * (hi - lo)
    return mid - quarter, mid + quarter


def bump_initial(grid, growth, height=None):
    """Smooth bump of height ``height`` (default half the saturation level)
    carried by the niche interval; zero outside it."""
    lo, hi = growth.profile.niche_interval
    height = 0.5 * growth.saturation if height is None else float(height)
    half = 0.5 * (hi - lo)
    if half <= 0:
        raise ValidationError("evolution.bump_initial", "niche interval is empty")
    return height * cutoff(2.0 * (grid.x - 0.5 * (lo + hi)) / half)


class _Stepper:
    def __init__(self, frame, kernel, growth, c, grid):
        if frame not in ("fixed", "moving"):
            raise ValidationError("evolution.integrate", f"frame must be 'fixed' or 'moving', got {frame!r}")
        self.frame = frame
        self.growth = growth
        self.c = float(c)
        self.grid = grid
        self.x = grid.x
        self.op = assemble(grid, kernel, c if frame == "moving" else 0.0, 0.0)
        self.core = niche_core(growth)

    def shift(self, t):
        return self.c * t if self.frame == "fixed" else 0.0

    def rhs(self, u, t):
        """Return ``(dispersal + drift part, growth part)``."""
        return self.op.apply_linear(u, "direct"), self.growth.f(self.x - self.shift(t), u)

    def core_min(self, u, t):
        lo, hi = self.core
        s = self.shift(t)
        mask = (self.x >= lo + s) & (self.x <= hi + s)
        if not mask.any():
            return float(u[np.argmin(np.abs(self.x - 0.5 * (lo + hi) - s))])
        return float(u[mask].min())


def _resolve_dt(dt, bound, where, allow_unsafe=False):
    if isinstance(dt, str):
        if dt != "auto":
            raise ValidationError(where, f"dt must be a positive number or 'auto', got {dt!r}")
        return DT_SAFETY * bound
    dt = float(dt)
    if not dt > 0:
        raise ValidationError(where, f"dt must be positive, got {dt}")
    if dt > bound * (1 + 1e-12) and not allow_unsafe:
        raise ValidationError(where, f"dt = {dt} violates the monotonicity bound {bound}")
    return dt


def integrate(
    initial,
    frame,
    kernel,
    growth,
    c,
    grid,
    T,
    dt="auto",
    stride=None,
    snapshot_times=(),
    reference=None,
    scheme="euler",
    check_sign=True,
):
    """Integrate from ``initial`` up to time ``T``.

    Parameters
    ----------
    initial : array
        Nonnegative, bounded values on ``grid.x``.
    frame : {"fixed", "moving"}
    dt : float or "auto"
        ``"auto"`` uses 0.9 times the monotonicity bound; an explicit value
        above the bound is rejected.
    stride : int, optional
        Record norms every ``stride`` steps (default: about every 0.1 time
        units, at least every step).
    snapshot_times : sequence of float
        Store the state at the first recorded time ``>=`` each entry.
    reference : array, optional
        Record the sup-norm distance to this state at each output.
    scheme : {"euler", "rk4"}
        ``"rk4"`` is a non-monotone exploratory path; no ordering guarantees.

    Returns
    -------
    EvolutionTrace
    """
    where = "evolution.integrate"
    u = np.array(initial, dtype=float)
    if u.shape != (grid.n,) or not np.all(np.isfinite(u)):
        raise ValidationError(where, "initial data must be a finite vector on the grid")
    if np.any(u < 0):
        raise ValidationError(where, "initial data must be nonnegative")
    if not T >= 0:
        raise ValidationError(where, f"T must be nonnegative, got {T}")
    stepper = _Stepper(frame, kernel, growth, c, grid)
    s_max = max(float(u.max()), growth.saturation)
    bound = dt_bound(growth, c, grid, frame, s_max)
    dt = _resolve_dt(dt, bound, where, allow_unsafe=(scheme != "euler") or not check_sign)
    steps = int(math.ceil(T / dt - 1e-12)) if T > 0 else 0
    if stride is None:
        stride = max(1, int(round(0.1 / dt)))
    h = grid.h
    if reference is not None:
        reference = np.asarray(reference, dtype=float)
        if reference.shape != u.shape:
            raise ValidationError(where, "reference state is on a different grid")
    pending = sorted(float(s) for s in snapshot_times)

    times, sups, masses, mins, dists = [], [], [], [], []
    snapshots = {}
    mass_defect = 0.0

    def record(t, u):
        times.append(t)
        sups.append(float(u.max()))
        masses.append(h * math.fsum(u))
        mins.append(stepper.core_min(u, t))
        if reference is not None:
            dists.append(float(np.max(np.abs(u - reference))))
        while pending and t >= pending[0] - 1e-12:
            snapshots[pending.pop(0)] = u.copy()

    t = 0.0
    record(t, u)
    for m in range(1, steps + 1):
        tau = min(dt, T - t)
        if scheme == "euler":
            lin, grow = stepper.rhs(u, t)
            new = u + tau * (lin + grow)
            # mass bookkeeping: d/dt int u = int f + (dispersal/drift flux)
            change = h * math.fsum(new) - h * math.fsum(u)
            budget = tau * (h * math.fsum(grow) + h * math.fsum(lin))
            mass_defect = max(mass_defect, abs(change - budget) / tau)
        elif scheme == "rk4":
            def F(v, s):
                a, b = stepper.rhs(v, s)
                return a + b
            k1 = F(u, t)
            k2 = F(u + 0.5 * tau * k1, t + 0.5 * tau)
            k3 = F(u + 0.5 * tau * k2, t + 0.5 * tau)
            k4 = F(u + tau * k3, t + tau)
            new = u + tau / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        else:
            raise ValidationError(where, f"unknown scheme {scheme!r}")
        if check_sign and scheme == "euler" and np.any(new < 0):
            raise ValidationError(
                where, f"negative value {new.min():.3e} at t={t + tau}: dt bound violated"
            )
        u = new
        t = m * dt if m < steps else float(T)
        if m % stride == 0 or m == steps:
            record(t, u)

    return EvolutionTrace(
        frame=frame,
        times=np.array(times),
        sup_norms=np.array(sups),
        l1_masses=np.array(masses),
        niche_minima=np.array(mins),
        snapshots=snapshots,
        dt=dt,
        final_state=u,
        x=grid.x,
        c=float(c),
        distances=np.array(dists) if reference is not None else None,
        reference=reference,
        mass_defect=mass_defect,
    )


def comparison_probe(lower0, upper0, frame, kernel, growth, c, grid, T, dt="auto", unsafe_dt_factor=None):
    """Co-integrate two ordered seeds and return ``max (lower - upper)_+``.

    ``unsafe_dt_factor`` (test-only) multiplies the monotonicity bound,
    deliberately breaking it.
    """
    where = "evolution.comparison_probe"
    lower = np.array(lower0, dtype=float)
    upper = np.array(upper0, dtype=float)
    if lower.shape != upper.shape or np.any(lower > upper):
        raise ValidationError(where, "seeds must satisfy lower0 <= upper0 pointwise")
    stepper = _Stepper(frame, kernel, growth, c, grid)
    bound = dt_bound(growth, c, grid, frame, max(float(upper.max()), growth.saturation))
    if unsafe_dt_factor is not None:
        dt = float(unsafe_dt_factor) * bound
    else:
        dt = _resolve_dt(dt, bound, where)
    steps = int(math.ceil(T / dt - 1e-12))
    worst = 0.0
    t = 0.0
    for m in range(1, steps + 1):
        tau = min(dt, T - t)
        with np.errstate(over="ignore", invalid="ignore"):
            lower = lower + tau * sum(stepper.rhs(lower, t))
            upper = upper + tau * sum(stepper.rhs(upper, t))
        with np.errstate(invalid="ignore"):
            gap = float(np.max(lower - upper))
        if not math.isfinite(gap):
            # blow-up (only possible past the bound): report what was seen
            return worst if worst > 0 else math.inf
        worst = max(worst, gap)
        t = m * dt
    return worst


def long_time_classify(
    trace,
    steady=None,
    extinction=EXTINCTION,
    persistence=PERSISTENCE,
    convergence=CONVERGENCE,
):
    """Label a trace ``"extinct"``, ``"persistent"`` or ``"undecided"``.

    ``extinct``: sup-norm below ``extinction`` at the horizon and
    nonincreasing over the last quartile. ``persistent``: niche-core minimum
    at least ``persistence`` over the last quartile and, when ``steady`` is
    given, the final sup-norm distance to it below ``convergence``.
    """
    where = "evolution.long_time_classify"
    times = trace.times
    if times.size < 2:
        return "undecided"
    tail = times >= times[0] + 0.75 * (times[-1] - times[0])
    sups = trace.sup_norms[tail]
    if sups[-1] < extinction and np.all(np.diff(sups) <= 0):
        return "extinct"
    if np.all(trace.niche_minima[tail] >= persistence):
        if steady is None:
            # without a reference, require the trace to have settled
            mins, mass = trace.niche_minima[tail], trace.l1_masses[tail]
            settled = np.ptp(mins) <= convergence and np.ptp(mass) <= convergence * max(mass.max(), 1e-300)
            return "persistent" if settled else "undecided"
        ref = np.asarray(steady.u if hasattr(steady, "u") else steady, dtype=float)
        if ref.shape != trace.final_state.shape or (
            hasattr(steady, "x") and not np.array_equal(steady.x, trace.x)
        ):
            raise ValidationError(where, "steady state and trace live on different grids")
        if float(np.max(np.abs(trace.final_state - ref))) < convergence:
            return "persistent"
    return "undecided"


def frame_discrepancy(fixed, moving, c, t):
    """Sup-norm gap between the fixed-frame state sampled at ``x + c t``
    (linear interpolation) and the moving-frame state, on the points whose
    shifted abscissa stays inside the grid."""
    x = moving.x
    xs = x + c * t
    inside = (xs >= fixed.x[0]) & (xs <= fixed.x[-1])
    sampled = np.interp(xs[inside], fixed.x, fixed.final_state)
    return float(np.max(np.abs(sampled - moving.final_state[inside])))


def save_trace_csv(trace, path):
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write("t,sup_norm,l1_mass,niche_min\n")
        for row in zip(trace.times, trace.sup_norms, trace.l1_masses, trace.niche_minima):
            fh.write(",".join(format(float(v), ".17g") for v in row) + "\n")


def save_snapshot_csv(x, u, path):
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write("x,u\n")
        for xi, ui in zip(x, u):
            fh.write(f"{format(float(xi), '.17g')},{format(float(ui), '.17g')}\n")
