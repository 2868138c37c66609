"""Path functionals of ancestral trajectories, accumulated forward in time.

Nothing here stores a path.  Each particle carries, per registered curve f,
the grid occupation time below f and the running maximum of f - X, plus a
confinement flag per registered tube half-width and the running minimum of
its position.  Children inherit all of these verbatim.

Time conventions on the grid t_k = k dt:

* occupation time charges ``dt * 1{X(t_k) <= f(t_k)}`` for k = 0 .. n-1
  (left Riemann sum, pre-move positions);
* sup-type quantities look at every grid time 0 .. n, the current one included.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class LineageAccumulators:
    time_below: dict = field(default_factory=dict)
    sup_deficit: dict = field(default_factory=dict)
    tube_ok: dict = field(default_factory=dict)
    min_position: float = 0.0


def _usage(msg):
    from .engine import UsageError

    return UsageError(msg)


def register_curve(state, curve) -> int:
    """Attach a curve to ``state`` (before its first step) and return its handle."""
    if state.step_count > 0:
        raise _usage("curves must be registered before the first step")
    fval = float(curve(state.time))
    state.time_below = np.hstack((state.time_below, np.zeros((state.n, 1))))
    state.sup_deficit = np.hstack((state.sup_deficit, (fval - state.position)[:, None]))
    state.curves = tuple(state.curves) + (curve,)
    return len(state.curves) - 1


def register_tube(state, c: float) -> int:
    if state.step_count > 0:
        raise _usage("tubes must be registered before the first step")
    if not c > 0:
        raise ValueError("tube half-width must be positive")
    if float(c) in state.tubes:
        return state.tubes.index(float(c))
    state.tube_ok = np.hstack((state.tube_ok, (np.abs(state.position) < c)[:, None]))
    state.tubes = tuple(state.tubes) + (float(c),)
    return len(state.tubes) - 1


def _check_handle(state, handle):
    if not (isinstance(handle, (int, np.integer)) and 0 <= handle < len(state.curves)):
        raise _usage(f"unknown curve handle {handle!r}")


def time_below(obj, handle: int):
    """Occupation time below curve ``handle``.

    Accepts a :class:`~bbm_decay.engine.Particle` (returns a float) or a state
    (returns one value per particle).
    """
    acc = getattr(obj, "lineage_acc", None)
    if acc is not None:
        if handle not in acc.time_below:
            raise _usage(f"unknown curve handle {handle!r}")
        return acc.time_below[handle]
    _check_handle(obj, handle)
    return obj.time_below[:, handle]


def sup_deficit(state, handle: int) -> np.ndarray:
    _check_handle(state, handle)
    return state.sup_deficit[:, handle]


@dataclass(frozen=True)
class SurfCensus:
    counts: np.ndarray
    edges: np.ndarray
    min_value: float | None
    count_below: int


def census_surf(state, handle: int, threshold: float, bins: int = 20) -> SurfCensus:
    """Histogram of occupation times and how many particles stayed below ``threshold``."""
    tb = time_below(state, handle)
    if tb.size == 0:
        return SurfCensus(np.zeros(bins, dtype=np.int64), np.linspace(0, 1, bins + 1), None, 0)
    hi = max(float(tb.max()), float(state.time), 1e-12)
    counts, edges = np.histogram(tb, bins=bins, range=(0.0, hi))
    return SurfCensus(counts, edges, float(tb.min()), int(np.count_nonzero(tb <= threshold)))


def cstar_estimate(state, handle: int) -> float | None:
    """Least sup-deficit against curve ``handle`` over living particles."""
    sd = sup_deficit(state, handle)
    return float(sd.min()) if sd.size else None


def cstar_per_replica(state, handle: int) -> np.ndarray:
    sd = sup_deficit(state, handle)
    out = np.full(state.n_replicas, np.inf)
    np.minimum.at(out, state.replica, sd)
    out[np.isinf(out)] = np.nan
    return out


def tube_count(state, c: float) -> int:
    if float(c) not in state.tubes:
        raise _usage(f"tube half-width {c!r} was not registered")
    return int(np.count_nonzero(state.tube_ok[:, state.tubes.index(float(c))]))


def tube_counts_per_replica(state, c: float) -> np.ndarray:
    if float(c) not in state.tubes:
        raise _usage(f"tube half-width {c!r} was not registered")
    ok = state.tube_ok[:, state.tubes.index(float(c))]
    return np.bincount(state.replica[ok], minlength=state.n_replicas)


class MassFloorMonitor:
    """Observer certifying the density hypothesis behind the mass floor.

    After every step it checks that each particle strictly beyond ``f(t)``
    decayed at rate at most ``beta`` during that step, which is what the floor
    ``mass >= exp(-beta t)`` needs.  It also records ``D(t, beta)`` so the
    stronger profile-level condition ``D <= f`` can be reported.  Call it
    after every step (``every=1``).
    """

    def __init__(self, handle: int, beta: float, record_profile: bool = True):
        self.handle = handle
        self.beta = float(beta)
        self.record_profile = record_profile
        self.held = None
        self.profile_held = None
        self.last_step = None
        # False once a step was skipped or monitoring started late
        self.complete = True
        self.D_series: list[tuple[float, float | None]] = []

    def __call__(self, state):
        from .density import profile_from_arrays, _front_D

        if self.held is None:
            self.held = np.ones(state.n_replicas, dtype=bool)
            self.profile_held = np.ones(state.n_replicas, dtype=bool)
        if self.last_step is None:
            self.complete = state.step_count <= 1
        elif state.step_count != self.last_step + 1:
            self.complete = False
        self.last_step = state.step_count
        f = float(state.curves[self.handle](state.time))
        beyond = state.position > f
        worst = np.zeros(state.n_replicas)
        np.maximum.at(worst, state.replica[beyond], state.last_zeta[beyond])
        self.held &= worst <= self.beta
        if not self.record_profile:
            self.profile_held[:] = False
            return None
        seg = state.segments()
        for r in range(state.n_replicas):
            a, b = seg[r], seg[r + 1]
            D = _front_D(profile_from_arrays(state.position[a:b], state.mass[a:b]), self.beta)
            if D is not None and D > f:
                self.profile_held[r] = False
            if state.n_replicas == 1:
                self.D_series.append((state.time, D))
        return None


@dataclass(frozen=True)
class MassFloorResult:
    violations: int
    applicable: bool
    checked: int
    profile_hypothesis: bool


def mass_floor_check(state, handle: int, beta: float, monitor: MassFloorMonitor,
                     tol: float = 1e-6) -> MassFloorResult:
    """Count particles that stayed above curve ``handle`` yet lost more than the floor allows.

    A particle qualifies when it was never charged occupation time and is
    above the curve now.  Replicas whose certificate failed are excluded;
    the result is flagged not applicable when no replica kept it.
    """
    _check_handle(state, handle)
    if monitor.held is None or monitor.last_step != state.step_count or not monitor.complete:
        if state.step_count > 0:
            return MassFloorResult(0, False, 0, False)
        held = np.ones(state.n_replicas, dtype=bool)
        prof = held
    else:
        held, prof = monitor.held, monitor.profile_held
    if not held.any():
        return MassFloorResult(0, False, 0, bool(prof.any()))
    f = float(state.curves[handle](state.time))
    q = (state.time_below[:, handle] == 0) & (state.position > f) & held[state.replica]
    floor = np.exp(-beta * state.time) * (1.0 - tol)
    bad = int(np.count_nonzero(state.mass[q] < floor))
    return MassFloorResult(bad, True, int(q.sum()), bool(prof[held].all()))
