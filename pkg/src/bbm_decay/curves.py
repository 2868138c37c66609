"""Barrier curves and the self-similar envelope behind them.

The envelope profile ``l`` on [0, 1] solves

    l(s) = alpha + c s^(1/3) - kappa * int_0^s l(u)^(-2) du,   l(1) = 0,

with ``kappa = pi^2 / (2 sqrt 2)``.  Writing ``v = s^(1/3)`` and ``w = l^3``
turns this into the smooth ODE ``dw/dv = 3 c w^(2/3) - 9 kappa v^2`` with
``w(0) = alpha^3``, so the shooting integrator never sees the s^(-2/3)
singularity at the origin, and the blow-down at the right end is a simple
zero of ``w``.  The same change of variables also gives a scaling law: if
``l`` starts at ``alpha`` and vanishes at ``T`` then ``T^(-1/3) l(T s)`` starts
at ``T^(-1/3) alpha`` and vanishes at 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

KAPPA = math.pi ** 2 / (2.0 * math.sqrt(2.0))
SQRT2 = math.sqrt(2.0)
MEDIAN_COEF = 3.0 / 2.0 ** 1.5
ALPHA_BRACKET = (1e-6, 1e3)
K_LADDER = tuple(2.0 ** k for k in range(1, 11))


class NoSolutionError(ValueError):
    pass


class SolverError(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ParameterError(ValueError):
    def __init__(self, message, condition=""):
        super().__init__(message)
        self.condition = condition


def cstar() -> float:
    return 3.0 ** (4.0 / 3.0) * math.pi ** (2.0 / 3.0) / 2.0 ** (7.0 / 6.0)


# ---------------------------------------------------------------- curves

class CurveSpec:
    """Base class; subclasses are callable on scalars or arrays of s >= 0."""

    kind = "curve"

    def __call__(self, s):
        raise NotImplementedError

    def shift(self, c: float) -> "Shifted":
        return Shifted(self, c)

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        for k, v in self.__dict__.items():
            d[k] = v.to_dict() if isinstance(v, CurveSpec) else v
        return d


@dataclass(frozen=True)
class G(CurveSpec):
    c: float
    kind = "G"

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        return SQRT2 * s - self.c * np.cbrt(s)


@dataclass(frozen=True)
class B(CurveSpec):
    c: float
    beta: float
    t: float
    kind = "B"

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        return SQRT2 * s - self.c * np.cbrt(s + self.beta * self.t)


@dataclass(frozen=True)
class GStar(CurveSpec):
    c: float = field(default_factory=cstar)
    kind = "GStar"

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        r = np.cbrt(s)
        return SQRT2 * s - self.c * r + self.c * r / np.log(s + math.e) ** 2 - 1.0


@dataclass(frozen=True)
class Shifted(CurveSpec):
    base: CurveSpec
    c: float
    kind = "Shifted"

    def __call__(self, s):
        return self.base(s) - self.c


@dataclass(frozen=True)
class Median(CurveSpec):
    kind = "Median"

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        with np.errstate(divide="ignore"):
            return SQRT2 * s - MEDIAN_COEF * np.log(s)


_KINDS = {"G": G, "B": B, "GStar": GStar, "Shifted": Shifted, "Median": Median}


def curve_from_dict(d: dict) -> CurveSpec:
    d = dict(d)
    kind = d.pop("kind", None)
    if kind not in _KINDS:
        raise ValueError(f"unknown curve kind {kind!r}")
    if kind == "Shifted":
        d["base"] = curve_from_dict(d["base"])
    return _KINDS[kind](**d)


def eval_curve(spec: CurveSpec, s):
    if np.any(np.asarray(s) < 0):
        raise ValueError("curves are defined for s >= 0")
    out = spec(s)
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------- shooting

def _series_w(alpha, c, s0):
    l0 = alpha + c * s0 ** (1.0 / 3.0) - KAPPA * s0 / alpha ** 2
    return l0 ** 3 if l0 > 0 else None


def _shoot(alpha, c, s0, v_end=1.0, dense=False):
    """Integrate from the series start; return (hit_time or None, solution)."""
    w0 = _series_w(alpha, c, s0)
    if w0 is None:
        return s0, None
    v0 = s0 ** (1.0 / 3.0)

    def rhs(v, w):
        return [3.0 * c * np.cbrt(max(w[0], 0.0)) ** 2 - 9.0 * KAPPA * v * v]

    def hit(v, w):
        return w[0]

    hit.terminal = True
    hit.direction = -1
    sol = solve_ivp(rhs, (v0, v_end), [w0], method="DOP853", rtol=1e-13, atol=1e-15,
                    events=hit, dense_output=dense)
    if sol.t_events[0].size:
        return float(sol.t_events[0][0]) ** 3, sol
    return None, sol


@dataclass
class EnvelopeSolution:
    c: float
    alpha: float
    s_grid: np.ndarray
    l_grid: np.ndarray
    residual: float
    l_end: float
    brackets: list
    u_t: float | None = None
    t: float | None = None
    beta: float | None = None
    K: float | None = None
    grid: np.ndarray | None = None
    L_grid: np.ndarray | None = None
    Delta_grid: np.ndarray | None = None
    _T0: float = 1.0
    _alpha0: float = 1.0
    _s0: float = 0.0
    _dense: Callable | None = field(default=None, repr=False)

    def l(self, s):
        """Interpolated profile on [0, 1] (exact up to the integrator's accuracy)."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        T0 = self._T0
        ss = np.clip(s, 0.0, 1.0) * T0
        out = np.empty_like(ss)
        early = ss < self._s0
        a0 = self._alpha0
        out[early] = a0 + self.c * np.cbrt(ss[early]) - KAPPA * ss[early] / a0 ** 2
        if not early.all():
            w = self._dense(np.cbrt(ss[~early]))
            out[~early] = np.cbrt(np.maximum(np.ravel(w), 0.0))
        return out / T0 ** (1.0 / 3.0)

    def l_prime(self, s):
        s = np.asarray(s, dtype=float)
        with np.errstate(divide="ignore"):
            return (self.c / 3.0) * s ** (-2.0 / 3.0) - KAPPA / self.l(s) ** 2

    def L(self, s):
        """Envelope width at times ``s`` in [0, t]."""
        t, beta, u = self.t, self.beta, self.u_t
        scale = t ** (1.0 / 3.0) * ((1.0 + beta) / u) ** (1.0 / 3.0)
        return scale * self.l((np.asarray(s, dtype=float) + beta * t) * u / (t + beta * t))

    def to_dict(self) -> dict:
        out = {"c": self.c, "alpha": self.alpha, "residual": self.residual,
               "l_end": self.l_end, "brackets": [list(b) for b in self.brackets]}
        for k in ("u_t", "t", "beta", "K"):
            out[k] = getattr(self, k)
        return out


def _classify(alpha, c, s0):
    T, _ = _shoot(alpha, c, s0)
    return T


def _cell_integrals(s, l):
    """Integral of l^-2 over each cell, exact when l^3 is linear in s."""
    la, lb = l[:-1], l[1:]
    return 3.0 * np.diff(s) / (la * la + la * lb + lb * lb)


def residual_sup(c, alpha, s, l) -> float:
    """sup-norm residual of the integral equation on a grid (cell-exact quadrature)."""
    integ = np.concatenate(([0.0], np.cumsum(_cell_integrals(s, l))))
    r = l - alpha - c * np.cbrt(s) + KAPPA * integ
    return float(np.max(np.abs(r)))


def solution_grid(n: int) -> np.ndarray:
    """Uniform in s^(1/3), plus a geometric cluster toward s = 1 where l^3 bends."""
    v = np.linspace(0.0, 1.0, n)
    tail = 1.0 - np.geomspace(1e-2, 1e-9, max(n // 50, 50))
    return np.unique(np.concatenate((v ** 3, tail)))


def solve_l(c: float, tol: float = 1e-6, end_tol: float = 1e-4, n_grid: int = 20001,
            s0: float = 1e-8, scan: int = 40, strict: bool = True) -> EnvelopeSolution:
    """Shoot on ``alpha`` so that ``l`` reaches 0 exactly at s = 1.

    A trial ``alpha`` is "blow-down" when ``l`` hits 0 before 1 and "survive"
    otherwise.  A log-spaced scan over the bracket reports every sign change,
    bisection runs inside the smallest one, and the final trajectory is
    rescaled so that its zero sits at s = 1.
    """
    cs = cstar()
    if not (0 < c < cs):
        raise NoSolutionError(f"need 0 < c < c* = {cs:.6f}, got {c!r}")
    lo_b, hi_b = ALPHA_BRACKET
    trial = np.geomspace(lo_b, hi_b, scan)
    blow = np.array([(_classify(a, c, s0) or 2.0) <= 1.0 for a in trial])
    changes = np.flatnonzero(blow[:-1] & ~blow[1:])
    brackets = [(float(trial[i]), float(trial[i + 1])) for i in changes]
    if not brackets:
        raise SolverError("no blow-down/survive bracket in [1e-6, 1e3]",
                          {"trial_alpha": trial.tolist(), "blow_down": blow.tolist()})
    lo, hi = brackets[0]
    while hi - lo > 1e-14 * hi:
        mid = 0.5 * (lo + hi)
        T = _classify(mid, c, s0)
        if T is not None and T <= 1.0:
            lo = mid
        else:
            hi = mid
    T0, sol = _shoot(lo, c, s0, dense=True)
    if T0 is None or sol is None:
        raise SolverError("bisection lost the blow-down side", {"alpha": lo})
    alpha = lo * T0 ** (-1.0 / 3.0)
    out = EnvelopeSolution(c=float(c), alpha=float(alpha), s_grid=solution_grid(n_grid),
                           l_grid=np.empty(0),
                           residual=np.inf, l_end=np.nan, brackets=brackets,
                           _T0=T0, _alpha0=lo, _s0=s0, _dense=sol.sol)
    out.l_grid = out.l(out.s_grid)
    out.l_grid[-1] = 0.0 if out.l_grid[-1] < 1e-3 else out.l_grid[-1]
    out.l_end = float(out.l(1.0)[0])
    out.residual = residual_sup(c, alpha, out.s_grid, out.l_grid)
    if strict and (abs(out.l_end) > end_tol or out.residual > tol):
        raise SolverError("solution misses its tolerance",
                          {"l_end": out.l_end, "residual": out.residual, "alpha": alpha})
    return out


def alpha_fixed_point(c: float, n: int = 10_000, iters: int = 500, tol: float = 1e-14) -> float:
    """Starting value from a backward Picard iteration, independent of shooting.

    With ``v = s^(1/3)`` and ``W = l^3``, ``l(1) = 0`` gives
    ``W(v) = 3 kappa (1 - v^3) - 3 c int_v^1 W(r)^(2/3) dr``; the integral is a
    trapezoid sum on ``n`` uniform points and ``alpha = W(0)^(1/3)``.
    """
    v = np.linspace(0.0, 1.0, n)
    h = v[1] - v[0]
    base = 3.0 * KAPPA * (1.0 - v ** 3)
    W = base.copy()
    for _ in range(iters):
        g = np.cbrt(np.maximum(W, 0.0)) ** 2
        # tail integrals int_v^1 by reversed cumulative trapezoid
        cell = 0.5 * h * (g[:-1] + g[1:])
        tail = np.concatenate((np.cumsum(cell[::-1])[::-1], [0.0]))
        W_new = base - 3.0 * c * tail
        if np.max(np.abs(W_new - W)) < tol:
            W = W_new
            break
        W = W_new
    return float(np.cbrt(max(W[0], 0.0)))


# ---------------------------------------------------------------- envelope

def default_beta(c: float, alpha: float) -> float:
    a3 = alpha ** 3
    return 0.9 * min(a3 / 8.0, a3 / (8.0 * c ** 3), 1.0)


def _u_t(lsol: EnvelopeSolution, t: float) -> float:
    thr = 2.0 * t ** (-1.0 / 12.0)
    s, l = lsol.s_grid, lsol.l_grid
    j = int(np.argmax(l))
    after = np.flatnonzero(l[j:] <= thr)
    if l[j] <= thr or after.size == 0:
        raise ParameterError(f"t={t} too small: l never exceeds 2 t^(-1/12) = {thr:.4f}",
                             "u_t undefined")
    k = j + int(after[0])
    if l[k] == thr or k == j:
        return float(s[k])
    return float(brentq(lambda u: lsol.l(u)[0] - thr, s[k - 1], s[k], xtol=1e-15))


def compute_envelope(lsol: EnvelopeSolution, t: float, beta: float | None = None,
                     K: float = 2.0, n_grid: int = 20001) -> EnvelopeSolution:
    """Stretch ``l`` into the time-``t`` envelope ``L`` and ``Delta = L - K t^(1/6)``.

    ``u_t`` is the first point past the maximum of ``l`` where ``l`` falls to
    ``2 t^(-1/12)``; whenever ``alpha`` already exceeds that level this is the
    first such point on all of [0, 1].
    """
    if not t > 0:
        raise ParameterError("t must be positive", "t > 0")
    c, alpha = lsol.c, lsol.alpha
    beta = default_beta(c, alpha) if beta is None else float(beta)
    a3 = alpha ** 3
    for bound, name in ((a3 / 8.0, "beta < alpha^3/8"), (a3 / (8.0 * c ** 3), "beta < alpha^3/(8c^3)"),
                        (1.0, "beta < 1")):
        if not beta < bound:
            raise ParameterError(f"beta={beta} violates {name} (bound {bound})", name)
    if not beta > 0:
        raise ParameterError("beta must be positive", "beta > 0")
    u = _u_t(lsol, t)
    edge = beta * u / (1.0 + beta)
    probe = np.linspace(0.0, edge, 2001)
    if np.min(lsol.l(probe)) < alpha / 2.0:
        raise ParameterError(f"l drops below alpha/2 on [0, {edge:.4g}]", "l >= alpha/2 near 0")
    env = replace(lsol, u_t=u, t=float(t), beta=beta, K=float(K))
    env.grid = np.linspace(0.0, t, n_grid)
    env.L_grid = env.L(env.grid)
    env.Delta_grid = env.L_grid - K * t ** (1.0 / 6.0)
    return env


@dataclass
class DeltaReport:
    K: float | None
    passed: bool
    checks: dict
    first_failure: str | None
    # the sufficient condition used in the existence proof, for information only
    proof_condition: float
    ladder: tuple = K_LADDER


def _delta_checks(env: EnvelopeSolution, K: float) -> dict:
    t = env.t
    delta = env.L_grid - K * t ** (1.0 / 6.0)
    slope = np.gradient(delta, env.grid)
    return {
        "delta_lower": bool(np.all(delta >= t ** 0.25)),
        "delta_upper": bool(np.all(delta <= K * t ** (1.0 / 3.0))),
        "delta_end": bool(delta[-1] <= K * t ** 0.25),
        "delta_slope": bool(np.max(np.abs(slope)) <= 1.0),
        "L_lower": bool(np.all(env.L_grid >= 2.0 * t ** 0.25)),
        "L_upper": bool(np.all(env.L_grid <= 2.0 * (env.c + env.alpha) * t ** (1.0 / 3.0))),
    }


def check_delta_properties(env: EnvelopeSolution, ladder=K_LADDER) -> DeltaReport:
    """Smallest K on the ladder for which every Delta/L check holds at this t."""
    proof = (SQRT2 / 2.0) * env.alpha - SQRT2 * env.c * env.beta ** (1.0 / 3.0)
    first = None
    last = {}
    for K in ladder:
        checks = _delta_checks(env, K)
        if all(checks.values()):
            return DeltaReport(float(K), True, checks, None, proof, tuple(ladder))
        if first is None:
            first = next(k for k, ok in checks.items() if not ok)
        last = checks
    return DeltaReport(None, False, last, first, proof, tuple(ladder))


def assumption_A_sup(f_spec, env: EnvelopeSolution, n_grid: int | None = None) -> float:
    """Sup over u of the tube-regularity functional of (L, f) on [0, t].

    ``|L'(0)| L(0) + |L'(u)| L(u) + int_0^u |L''| L + int_0^u |f''| L - |L'(0)| f(0)``
    with derivatives from second-order finite differences.
    """
    if n_grid is None:
        s, L = env.grid, env.L_grid
    else:
        s = np.linspace(0.0, env.t, n_grid)
        L = env.L(s)
    f = np.asarray(f_spec(s), dtype=float) * np.ones_like(s)
    L1 = np.gradient(L, s, edge_order=2)
    L2 = np.gradient(L1, s, edge_order=2)
    f2 = np.gradient(np.gradient(f, s, edge_order=2), s, edge_order=2)

    def cumtrap(y):
        return np.concatenate(([0.0], np.cumsum(0.5 * np.diff(s) * (y[:-1] + y[1:]))))

    q = (abs(L1[0]) * L[0] + np.abs(L1) * L + cumtrap(np.abs(L2) * L)
         + cumtrap(np.abs(f2) * L) - abs(L1[0]) * f[0])
    return float(np.max(q))


def barrier_minus_width(c: float, beta: float, t: float, K: float) -> CurveSpec:
    """The curve ``b - K t^(1/6)`` fed to the tube-regularity functional."""
    return Shifted(B(c, beta, t), K * t ** (1.0 / 6.0))
