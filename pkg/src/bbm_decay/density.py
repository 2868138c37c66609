"""Local density fields of a particle configuration and the fronts they define.

Three windows appear here and they differ only in their boundary conventions:

* ``zeta``: open radius-1 window that ignores particles at distance 0,
* ``zeta_bar``: closed radius-1 window that counts everything, self included,
* ``z``: open radius-1/2 window that counts particles at distance 0.

Values of the piecewise-constant ``zeta`` exactly at breakpoints or at
particle positions are a measure-zero set and are not represented by
:class:`DensityProfile`; front locations are the inf/sup over its intervals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numba
import numpy as np


@numba.njit(cache=True)
def _two_sum(x, y):
    s = x + y
    v = s - x
    return s, (x - (s - v)) + (y - v)


@numba.njit(cache=True)
def _dd_diff(pref, comp, j, i):
    s, e = _two_sum(pref[j], -pref[i])
    return s + (e + (comp[j] - comp[i]))


@numba.njit(cache=True)
def zeta_at_particles(pos, mass, seg, closed):
    """Window mass seen by every particle, segment by segment.

    ``pos`` must be sorted inside each segment ``[seg[r], seg[r+1])``;
    segments never see each other.  With ``closed=False`` this is the open
    radius-1 sum excluding distance 0, with ``closed=True`` the closed sum
    including the particle itself.  Two monotone pointers per side keep the
    sweep linear.
    """
    n = pos.shape[0]
    out = np.zeros(n)
    for r in range(seg.shape[0] - 1):
        a = seg[r]
        b = seg[r + 1]
        if b - a < 2 and not closed:
            continue
        # double-double prefix sums: plain ones lose ~1e-11 on dense windows
        pref = np.zeros(b - a + 1)
        comp = np.zeros(b - a + 1)
        for k in range(a, b):
            s, e = _two_sum(pref[k - a], mass[k])
            pref[k - a + 1] = s
            comp[k - a + 1] = comp[k - a] + e
        lo = a
        hi = a
        eqlo = a
        eqhi = a
        for i in range(a, b):
            x = pos[i]
            if closed:
                while x - pos[lo] > 1.0:
                    lo += 1
                while hi < b and pos[hi] - x <= 1.0:
                    hi += 1
                out[i] = _dd_diff(pref, comp, hi - a, lo - a)
            else:
                while x - pos[lo] >= 1.0:
                    lo += 1
                if hi < i + 1:
                    hi = i + 1
                while hi < b and pos[hi] - x < 1.0:
                    hi += 1
                while pos[eqlo] < x:
                    eqlo += 1
                if eqhi < i + 1:
                    eqhi = i + 1
                while eqhi < b and pos[eqhi] <= x:
                    eqhi += 1
                out[i] = _dd_diff(pref, comp, hi - a, eqhi - a) + _dd_diff(pref, comp, eqlo - a, lo - a)
    return out


def _single(state):
    if getattr(state, "n_replicas", 1) != 1:
        raise ValueError("density queries take a single-replica state; use state.replica_view(r)")
    return np.asarray(state.position, dtype=float), np.asarray(state.mass, dtype=float)


def zeta_at(state, x: float) -> float:
    """Brute-force zeta(x): mass at distance in (0, 1) from ``x``."""
    pos, mass = _single(state)
    d = np.abs(pos - x)
    return math.fsum(mass[(d > 0) & (d < 1)])


@dataclass(frozen=True)
class DensityProfile:
    """Piecewise-constant zeta.

    ``values[0]`` and ``values[-1]`` are the unbounded tails (always 0);
    ``values[j+1]`` is the value on ``(breakpoints[j], breakpoints[j+1])``.
    """

    breakpoints: np.ndarray
    values: np.ndarray

    def __call__(self, x):
        idx = np.searchsorted(self.breakpoints, x, side="right")
        return self.values[idx]

    def intervals(self):
        """Iterate ``(left, right, value)`` including the two infinite tails."""
        edges = np.concatenate(([-np.inf], self.breakpoints, [np.inf]))
        for j, v in enumerate(self.values):
            yield float(edges[j]), float(edges[j + 1]), float(v)

    @property
    def max(self) -> float:
        return float(self.values.max())


BREAKPOINT_MERGE = 64 * np.finfo(float).eps


def _prefix(a):
    out = np.zeros(a.size + 1, dtype=np.longdouble)
    np.cumsum(a, dtype=np.longdouble, out=out[1:])
    return out


def profile_from_arrays(pos, mass) -> DensityProfile:
    pos = np.asarray(pos, dtype=float)
    mass = np.asarray(mass, dtype=float)
    if pos.size == 0:
        return DensityProfile(np.empty(0), np.zeros(1))
    order = np.argsort(pos, kind="stable")
    pos, mass = pos[order], mass[order]
    left, right = pos - 1.0, pos + 1.0
    bp = np.unique(np.concatenate((left, right)))
    # ends that differ by a few ulps (p + 1 vs q - 1 with q - p = 2 up to rounding)
    # would leave a sliver interval; keep only the last end of each such cluster
    last = np.append(np.diff(bp) > BREAKPOINT_MERGE * (1.0 + np.abs(bp[1:])), True)
    bp = bp[last]
    # on (bp[j], bp[j+1]) a particle counts iff its left end is <= bp[j]
    # and its right end is > bp[j]
    cl = np.searchsorted(left, bp, side="right")
    cr = np.searchsorted(right, bp, side="right")
    pl, pr = _prefix(mass), _prefix(mass)
    inner = (pl[cl] - pr[cr]).astype(float)
    inner[cl == cr] = 0.0
    np.maximum(inner, 0.0, out=inner)
    values = np.concatenate(([0.0], inner))
    values[-1] = 0.0
    return DensityProfile(bp, values)


def zeta_profile(state) -> DensityProfile:
    pos, mass = _single(state)
    return profile_from_arrays(pos, mass)


@dataclass(frozen=True)
class FrontStats:
    m: float
    d: float | None
    D: float | None
    # d came out as 0+: zeta is already below m immediately right of the origin
    d_at_origin: bool = False


def _front_d(profile: DensityProfile, m: float) -> tuple[float, bool]:
    bp, vals = profile.breakpoints, profile.values
    if bp.size == 0:
        return 0.0, True
    left = np.concatenate(([-np.inf], bp))
    right = np.concatenate((bp, [np.inf]))
    ok = (right > 0) & (vals < m)
    j = int(np.argmax(ok))
    d = max(float(left[j]), 0.0)
    return d, d == 0.0


def _front_D(profile: DensityProfile, m: float) -> float | None:
    bp, vals = profile.breakpoints, profile.values
    hit = np.flatnonzero(vals > m)
    if hit.size == 0:
        return None
    return float(bp[hit[-1]])


def _check_m(m):
    if not m > 0:
        raise ValueError(f"threshold m must be > 0, got {m!r}")


def front_d(state, m: float, profile: DensityProfile | None = None) -> float:
    """Leftmost point of (0, inf) from which zeta drops below ``m`` (inf convention)."""
    _check_m(m)
    profile = zeta_profile(state) if profile is None else profile
    return _front_d(profile, m)[0]


def front_D(state, m: float, profile: DensityProfile | None = None) -> float | None:
    """Supremum of the set where zeta exceeds ``m``; None if that set is empty."""
    _check_m(m)
    profile = zeta_profile(state) if profile is None else profile
    return _front_D(profile, m)


def front_stats(state, m_list: Sequence[float], profile: DensityProfile | None = None):
    profile = zeta_profile(state) if profile is None else profile
    out = []
    for m in m_list:
        _check_m(m)
        d, at0 = _front_d(profile, m)
        out.append(FrontStats(m=float(m), d=d, D=_front_D(profile, m), d_at_origin=at0))
    return out


def zmax_arrays(pos, mass) -> tuple[float, float]:
    pos = np.asarray(pos, dtype=float)
    mass = np.asarray(mass, dtype=float)
    if pos.size == 0:
        return 0.0, 0.0
    order = np.argsort(pos, kind="stable")
    pos, mass = pos[order], mass[order]
    # block [i, hi) holds every particle within distance < 1 to the right of pos[i]
    n = pos.size
    idx = np.arange(n)
    hi = np.searchsorted(pos, pos + 1.0, side="left")
    # pos + 1.0 is rounded; settle the boundary with the difference test itself
    while True:
        back = (hi > idx + 1) & (pos[np.maximum(hi - 1, 0)] - pos >= 1.0)
        fwd = (hi < n) & (pos[np.minimum(hi, n - 1)] - pos < 1.0)
        if not (back.any() or fwd.any()):
            break
        hi = hi - back + fwd
    pref = _prefix(mass)
    sums = (pref[hi] - pref[idx]).astype(float)
    i = int(np.argmax(sums))
    j = int(hi[i]) - 1
    return 0.5 * (pos[i] + pos[j]), float(sums[i])


def zmax(state) -> tuple[float, float]:
    """``(argmax x, sup_x z(x))`` for the open half-width-1/2 window counting self."""
    return zmax_arrays(*_single(state))


def z_at(state, x: float) -> float:
    pos, mass = _single(state)
    return math.fsum(mass[np.abs(pos - x) < 0.5])


def tau_schedule(times, z, N: float, gap: float) -> list[float]:
    """Stopping times for the maximal half-window mass, on the recorded grid.

    The first time is the first grid time with ``z >= N - 1``; each later one
    is the first grid time strictly after ``previous + gap`` with the same
    property.
    """
    if not N > 1:
        raise ValueError("N must exceed 1")
    if not gap > 0:
        raise ValueError("gap must be positive")
    times = np.asarray(times, dtype=float)
    z = np.asarray(z, dtype=float)
    hits = times[z >= N - 1]
    out: list[float] = []
    for t in hits:
        if not out or t > out[-1] + gap:
            out.append(float(t))
    return out


def windowed_mass(state, lo: float, hi: float) -> np.ndarray:
    """Per-replica total mass on ``[lo, hi]``."""
    inside = (state.position >= lo) & (state.position <= hi)
    return np.bincount(state.replica, weights=np.where(inside, state.mass, 0.0),
                       minlength=state.n_replicas)


def zeta_max_per_replica(state) -> np.ndarray:
    """``sup_x zeta(x)`` for every replica of a batched state."""
    seg = state.segments()
    out = np.zeros(state.n_replicas)
    for r in range(state.n_replicas):
        a, b = seg[r], seg[r + 1]
        if b > a:
            out[r] = profile_from_arrays(state.position[a:b], state.mass[a:b]).max
    return out


@dataclass(frozen=True)
class GrowthRate:
    rate: float
    used: int
    dropped: int

    def __float__(self):
        return self.rate


def self_correction_rate(times, window_mass, t0: float, t1: float) -> GrowthRate:
    """Least-squares slope of log(ensemble mean windowed mass) over ``[t0, t1]``.

    ``window_mass`` has shape (replicates, len(times)).  Replicates with no mass
    in the window at ``t0`` are dropped and counted.
    """
    if not t1 > t0:
        raise ValueError("need t1 > t0")
    times = np.asarray(times, dtype=float)
    wm = np.atleast_2d(np.asarray(window_mass, dtype=float))
    sel = (times >= t0 - 1e-12) & (times <= t1 + 1e-12)
    if sel.sum() < 2:
        raise ValueError("fewer than two recorded times inside [t0, t1]")
    start = int(np.flatnonzero(sel)[0])
    keep = wm[:, start] > 0
    if not keep.any():
        return GrowthRate(float("nan"), 0, int(wm.shape[0]))
    mean = wm[keep][:, sel].mean(axis=0)
    tt = times[sel]
    good = mean > 0
    slope = np.polyfit(tt[good], np.log(mean[good]), 1)[0]
    return GrowthRate(float(slope), int(keep.sum()), int((~keep).sum()))
