"""Branching Brownian motion with competitive mass decay on a fixed time grid.

A :class:`PopulationState` stores particles as parallel numpy arrays sorted by
``(replica, position, id)``.  One state may hold several independent replicas
of the same system; they never interact and each draws its randomness from its
own key, so batching replicas is purely a throughput device.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Sequence

import numba
import numpy as np

from . import rng as _rng
from .density import zeta_at_particles
from .lineage import LineageAccumulators

STANDARD = "standard"
LOGISTIC = "logistic_variant"
_MODES = (STANDARD, LOGISTIC)

MASS_REL_TOL = 1e-10
LOGISTIC_MASS_TOL = 1e-6


class ConfigurationError(ValueError):
    pass


class UsageError(RuntimeError):
    pass


class InvariantViolation(AssertionError):
    pass


class CapacityError(RuntimeError):
    """Raised when a step would push a replica past ``max_particles``.

    ``state`` is the last consistent state (before the failing step) and
    ``records`` holds whatever observers produced up to that point.
    """

    def __init__(self, message, state=None, replicas=(), records=None):
        super().__init__(message)
        self.state = state
        self.replicas = tuple(replicas)
        self.records = records if records is not None else []


@dataclass
class SimConfig:
    dt: float = 1e-3
    horizon: float = 1.0
    seed: int = 0
    max_particles: int = 10_000_000
    dynamics_mode: str = STANDARD
    motion_frozen: bool = False
    branching_disabled: bool = False
    initial: Sequence[tuple[float, float]] = ((0.0, 1.0),)
    # per-step mass checks; off by default because they cost a few array passes
    check_invariants: bool = False

    def __post_init__(self):
        self.initial = tuple((float(x), float(m)) for x, m in self.initial)
        self.validate()

    def validate(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ConfigurationError(f"dt must be positive, got {self.dt!r}")
        if not self.horizon >= 0:
            raise ConfigurationError(f"horizon must be >= 0, got {self.horizon!r}")
        if int(self.max_particles) < 1:
            raise ConfigurationError("max_particles must be >= 1")
        if self.dynamics_mode not in _MODES:
            raise ConfigurationError(f"unknown dynamics_mode {self.dynamics_mode!r}")
        if len(self.initial) == 0:
            raise ConfigurationError("initial configuration is empty")
        for k, (x, m) in enumerate(self.initial):
            if not math.isfinite(x):
                raise ConfigurationError(f"initial[{k}]: position must be finite")
            if not (0.0 < m <= 1.0):
                raise ConfigurationError(f"initial[{k}]: mass {m!r} outside (0, 1]")
        if len(self.initial) > self.max_particles:
            raise ConfigurationError("initial configuration exceeds max_particles")

    @property
    def n_steps(self) -> int:
        """Number of grid steps needed to reach the horizon."""
        return int(round(self.horizon / self.dt))

    @property
    def branch_probability(self) -> float:
        return -math.expm1(-self.dt)


@dataclass
class Particle:
    id: int
    parent_id: int | None
    position: float
    mass: float
    zeta_integral: float
    lineage_acc: LineageAccumulators
    replica: int = 0


@dataclass
class PopulationState:
    time: float
    step_count: int
    dt: float
    position: np.ndarray
    mass: np.ndarray
    zeta_integral: np.ndarray
    last_zeta: np.ndarray
    pid: np.ndarray
    parent: np.ndarray
    replica: np.ndarray
    time_below: np.ndarray
    sup_deficit: np.ndarray
    tube_ok: np.ndarray
    min_position: np.ndarray
    keys: np.ndarray
    next_id: np.ndarray
    replica_index: np.ndarray
    active: np.ndarray
    curves: tuple = ()
    tubes: tuple = ()
    # starting mass of each particle's founding ancestor
    mass0: np.ndarray | None = None

    def __post_init__(self):
        if self.mass0 is None:
            self.mass0 = np.exp(np.log(self.mass) + self.zeta_integral)

    # -- construction -------------------------------------------------
    @classmethod
    def from_arrays(cls, position, mass, seed: int = 0, dt: float = 1e-3):
        """Single-replica state from explicit positions and masses (ids in input order)."""
        position = np.asarray(position, dtype=float).reshape(-1)
        mass = np.asarray(mass, dtype=float).reshape(-1)
        if position.shape != mass.shape:
            raise ConfigurationError("position and mass must have equal length")
        n = position.size
        pid = np.arange(n, dtype=np.int64)
        order = np.lexsort((pid, position))
        return cls(
            time=0.0, step_count=0, dt=dt,
            position=position[order].copy(), mass=mass[order].copy(),
            mass0=mass[order].copy(), zeta_integral=np.zeros(n), last_zeta=np.zeros(n),
            pid=pid[order], parent=np.full(n, -1, dtype=np.int64),
            replica=np.zeros(n, dtype=np.int64),
            time_below=np.zeros((n, 0)), sup_deficit=np.zeros((n, 0)),
            tube_ok=np.zeros((n, 0), dtype=bool), min_position=position[order].copy(),
            keys=_rng.replica_keys(seed, 0, 1), next_id=np.array([n], dtype=np.int64),
            replica_index=np.array([0], dtype=np.int64), active=np.ones(1, dtype=bool),
        )

    # -- views ----------------------------------------------------------
    @property
    def n(self) -> int:
        return int(self.position.size)

    @property
    def n_replicas(self) -> int:
        return int(self.keys.size)

    def counts(self) -> np.ndarray:
        """Particle count per replica."""
        return np.bincount(self.replica, minlength=self.n_replicas)

    def segments(self) -> np.ndarray:
        """Offsets such that replica r occupies ``[seg[r], seg[r+1])``."""
        return np.searchsorted(self.replica, np.arange(self.n_replicas + 1)).astype(np.int64)

    def replica_view(self, r: int) -> "PopulationState":
        """Copy of local replica ``r`` as a single-replica state."""
        seg = self.segments()
        sl = slice(int(seg[r]), int(seg[r + 1]))
        return replace(
            self,
            position=self.position[sl].copy(), mass=self.mass[sl].copy(),
            mass0=self.mass0[sl].copy(),
            zeta_integral=self.zeta_integral[sl].copy(), last_zeta=self.last_zeta[sl].copy(),
            pid=self.pid[sl].copy(), parent=self.parent[sl].copy(),
            replica=np.zeros(sl.stop - sl.start, dtype=np.int64),
            time_below=self.time_below[sl].copy(), sup_deficit=self.sup_deficit[sl].copy(),
            tube_ok=self.tube_ok[sl].copy(), min_position=self.min_position[sl].copy(),
            keys=self.keys[r:r + 1].copy(), next_id=self.next_id[r:r + 1].copy(),
            replica_index=self.replica_index[r:r + 1].copy(), active=self.active[r:r + 1].copy(),
        )

    def split(self) -> list["PopulationState"]:
        return [self.replica_view(r) for r in range(self.n_replicas)]

    def particle(self, i: int) -> Particle:
        acc = LineageAccumulators(
            time_below={h: float(self.time_below[i, h]) for h in range(len(self.curves))},
            sup_deficit={h: float(self.sup_deficit[i, h]) for h in range(len(self.curves))},
            tube_ok={c: bool(self.tube_ok[i, j]) for j, c in enumerate(self.tubes)},
            min_position=float(self.min_position[i]),
        )
        parent = int(self.parent[i])
        return Particle(
            id=int(self.pid[i]), parent_id=None if parent < 0 else parent,
            position=float(self.position[i]), mass=float(self.mass[i]),
            zeta_integral=float(self.zeta_integral[i]), lineage_acc=acc,
            replica=int(self.replica_index[self.replica[i]]),
        )

    @property
    def particles(self) -> list[Particle]:
        return [self.particle(i) for i in range(self.n)]

    @property
    def rng_state(self) -> dict:
        return {"keys": [int(k) for k in self.keys],
                "next_id": [int(v) for v in self.next_id],
                "step_count": int(self.step_count)}

    def copy(self) -> "PopulationState":
        return replace(self, **{f: getattr(self, f).copy() for f in _ARRAY_FIELDS + _REPLICA_FIELDS})


_ARRAY_FIELDS = ("position", "mass", "mass0", "zeta_integral", "last_zeta", "pid", "parent", "replica",
                 "time_below", "sup_deficit", "tube_ok", "min_position")
_REPLICA_FIELDS = ("keys", "next_id", "replica_index", "active")


def init_population(config: SimConfig) -> PopulationState:
    """Time-zero state of a single run (replica 0 of ``config.seed``)."""
    return init_ensemble(config, 1)


def init_ensemble(config: SimConfig, replicas: int, first: int = 0) -> PopulationState:
    """Time-zero state holding replicas ``first .. first+replicas-1`` side by side.

    Replica ``r`` of an ensemble is bit-identical to a single run whose key is
    ``replica_key(config.seed, r)``; in particular replica 0 equals
    :func:`init_population`.
    """
    config.validate()
    if replicas < 1:
        raise ConfigurationError("replicas must be >= 1")
    init = np.array(config.initial, dtype=float)
    k = init.shape[0]
    pid0 = np.arange(k, dtype=np.int64)
    order = np.lexsort((pid0, init[:, 0]))
    pos1, mass1, pid1 = init[order, 0], init[order, 1], pid0[order]
    n = k * replicas
    return PopulationState(
        time=0.0, step_count=0, dt=config.dt,
        position=np.tile(pos1, replicas), mass=np.tile(mass1, replicas),
        mass0=np.tile(mass1, replicas),
        zeta_integral=np.zeros(n), last_zeta=np.zeros(n),
        pid=np.tile(pid1, replicas), parent=np.full(n, -1, dtype=np.int64),
        replica=np.repeat(np.arange(replicas, dtype=np.int64), k),
        time_below=np.zeros((n, 0)), sup_deficit=np.zeros((n, 0)),
        tube_ok=np.zeros((n, 0), dtype=bool), min_position=np.tile(pos1, replicas),
        keys=_rng.replica_keys(config.seed, first, replicas),
        next_id=np.full(replicas, k, dtype=np.int64),
        replica_index=np.arange(first, first + replicas, dtype=np.int64),
        active=np.ones(replicas, dtype=bool),
    )


@numba.njit(cache=True)
def _group_stable(rep, n_rep):
    """Stable counting-sort permutation of ``rep`` (values in [0, n_rep))."""
    counts = np.zeros(n_rep + 1, dtype=np.int64)
    for r in rep:
        counts[r + 1] += 1
    for r in range(n_rep):
        counts[r + 1] += counts[r]
    out = np.empty(rep.size, dtype=np.int64)
    for i in range(rep.size):
        r = rep[i]
        out[counts[r]] = i
        counts[r] += 1
    return out


def _has_misordered_ties(pos, rep, pid) -> bool:
    same = (pos[1:] == pos[:-1]) & (rep[1:] == rep[:-1])
    if not same.any():
        return False
    return bool(np.any(pid[1:][same] < pid[:-1][same]))


def _canonical_perm(pos, rep, pid, n_rep):
    order = np.argsort(pos)
    if n_rep > 1:
        order = order[_group_stable(rep[order], n_rep)]
    p, r, i = pos[order], rep[order], pid[order]
    if _has_misordered_ties(p, r, i):
        order = np.lexsort((pid, pos, rep))
    return order


def _curve_values(curves, t):
    return np.array([float(c(t)) for c in curves], dtype=float)


def _check_mass_invariants(config, old_mass, new_mass, zint, mass0):
    if config.dynamics_mode == STANDARD:
        if np.any(new_mass > old_mass):
            raise InvariantViolation("mass increased along a lineage")
        # relative to the founder's starting mass (1 in the default start)
        err = np.abs(new_mass - mass0 * np.exp(-zint))
        if np.any(err > MASS_REL_TOL * (1.0 + zint) * mass0):
            raise InvariantViolation(f"mass != exp(-integral zeta): max error {err.max():.3e}")
    elif np.any(new_mass > 1.0 + LOGISTIC_MASS_TOL):
        raise InvariantViolation(f"logistic mass above 1: {new_mass.max()!r}")


def step(state: PopulationState, config: SimConfig, on_capacity: str = "raise") -> PopulationState:
    """Advance every replica by one grid step of length ``config.dt``.

    Order within a step: occupation times are charged at the pre-move
    positions, particles move, the population is re-sorted, sup-type lineage
    functionals see the new positions, masses decay with the density evaluated
    at the new positions, and finally particles branch in place.

    ``on_capacity='drop'`` removes overflowing replicas (marking them inactive)
    instead of raising :class:`CapacityError`.
    """
    dt = config.dt
    t = state.time
    if t > config.horizon + 1e-9 * max(1.0, config.horizon):
        raise UsageError(f"state time {t} is past the horizon {config.horizon}")
    k = state.step_count
    n_rep = state.n_replicas

    pos, mass, zint, mass0 = state.position, state.mass, state.zeta_integral, state.mass0
    pid, parent, rep = state.pid, state.parent, state.replica
    tb, sd, tube, minpos = state.time_below, state.sup_deficit, state.tube_ok, state.min_position

    if state.curves:
        tb = tb + dt * (pos[:, None] <= _curve_values(state.curves, t)[None, :])

    keys_p = state.keys[rep]
    if not config.motion_frozen:
        pos = pos + _rng.keyed_normal(keys_p, pid, k, math.sqrt(dt))
        order = _canonical_perm(pos, rep, pid, n_rep)
        pos, mass, zint, mass0 = pos[order], mass[order], zint[order], mass0[order]
        pid, parent, rep, keys_p = pid[order], parent[order], rep[order], keys_p[order]
        tb, sd, tube, minpos = tb[order], sd[order], tube[order], minpos[order]

    t1 = (k + 1) * dt
    if state.curves:
        sd = np.maximum(sd, _curve_values(state.curves, t1)[None, :] - pos[:, None])
    if state.tubes:
        tube = tube & (np.abs(pos)[:, None] < np.asarray(state.tubes)[None, :])
    minpos = np.minimum(minpos, pos)

    seg = np.searchsorted(rep, np.arange(n_rep + 1)).astype(np.int64)
    if config.dynamics_mode == STANDARD:
        zeta = zeta_at_particles(pos, mass, seg, False)
        new_mass = mass * np.exp(-zeta * dt)
    else:
        zeta = zeta_at_particles(pos, mass, seg, True)
        new_mass = mass * np.exp((1.0 - zeta) * dt)
    zint = zint + zeta * dt
    if config.check_invariants:
        _check_mass_invariants(config, mass, new_mass, zint, mass0)
    mass = new_mass

    next_id = state.next_id
    active = state.active
    keys_arr = state.keys
    if not config.branching_disabled:
        u = _rng.keyed_uniform(keys_p, pid, k, _rng.STREAM_BRANCH)
        b = u < config.branch_probability
        if b.any():
            born = np.bincount(rep[b], minlength=n_rep)
            over = np.flatnonzero(np.bincount(rep, minlength=n_rep) + born > config.max_particles)
            if over.size:
                if on_capacity != "drop":
                    raise CapacityError(
                        f"replicas {state.replica_index[over].tolist()} would exceed "
                        f"max_particles={config.max_particles} at step {k + 1}",
                        state=state, replicas=state.replica_index[over].tolist())
                keep = ~np.isin(rep, over)
                pos, mass, zint, zeta = pos[keep], mass[keep], zint[keep], zeta[keep]
                mass0 = mass0[keep]
                pid, parent, rep, keys_p = pid[keep], parent[keep], rep[keep], keys_p[keep]
                tb, sd, tube, minpos = tb[keep], sd[keep], tube[keep], minpos[keep]
                b = b[keep]
                born[over] = 0
                active = active.copy()
                active[over] = False
            idx = np.flatnonzero(b)
            if idx.size:
                # children take ids next_id[r], next_id[r]+1, ... in sorted order
                brep = rep[idx]
                first = np.searchsorted(brep, brep, side="left")
                child_id = next_id[brep] + (np.arange(idx.size) - first)
                next_id = next_id + born

                shift = np.cumsum(b) - b
                dest = np.arange(b.size) + shift
                cdest = dest[idx] + 1
                m = b.size + idx.size

                def spread(a, child_vals=None):
                    out = np.empty((m,) + a.shape[1:], dtype=a.dtype)
                    out[dest] = a
                    out[cdest] = a[idx] if child_vals is None else child_vals
                    return out

                if config.dynamics_mode == LOGISTIC:
                    mass = mass.copy()
                    mass[idx] *= 0.5
                pos, mass, zint, zeta = spread(pos), spread(mass), spread(zint), spread(zeta)
                mass0 = spread(mass0)
                parent = spread(parent, pid[idx])
                pid = spread(pid, child_id)
                rep, keys_p = spread(rep), spread(keys_p)
                tb, sd, tube, minpos = spread(tb), spread(sd), spread(tube), spread(minpos)
                if _has_misordered_ties(pos, rep, pid):
                    order = np.lexsort((pid, pos, rep))
                    pos, mass, zint, zeta = pos[order], mass[order], zint[order], zeta[order]
                    mass0 = mass0[order]
                    pid, parent, rep = pid[order], parent[order], rep[order]
                    tb, sd, tube, minpos = tb[order], sd[order], tube[order], minpos[order]

    return PopulationState(
        time=t1, step_count=k + 1, dt=dt,
        position=pos, mass=mass, mass0=mass0, zeta_integral=zint, last_zeta=zeta,
        pid=pid, parent=parent, replica=rep,
        time_below=tb, sup_deficit=sd, tube_ok=tube, min_position=minpos,
        keys=keys_arr, next_id=next_id, replica_index=state.replica_index, active=active,
        curves=state.curves, tubes=state.tubes,
    )


Observer = Callable[[PopulationState], "dict | list[dict] | None"]


def run(state: PopulationState, config: SimConfig, observers: Iterable[Observer] = (),
        every: int = 1, on_capacity: str = "raise", until_step: int | None = None):
    """Step to the horizon, calling each observer every ``every`` steps.

    Observers return a dict, a list of dicts or None; the concatenation of
    their outputs is returned as ``records``.  The final step is always
    observed.
    """
    observers = list(observers)
    if every < 1:
        raise UsageError("every must be >= 1")
    target = config.n_steps if until_step is None else min(until_step, config.n_steps)
    records: list[dict] = []
    while state.step_count < target:
        try:
            state = step(state, config, on_capacity=on_capacity)
        except CapacityError as err:
            err.records = records
            raise
        if state.step_count % every == 0 or state.step_count == target:
            for obs in observers:
                out = obs(state)
                if out is None:
                    continue
                if isinstance(out, dict):
                    records.append(out)
                else:
                    records.extend(out)
    return state, records
