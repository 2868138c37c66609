import math
from types import SimpleNamespace

import numpy as np
import pytest

from bbm_decay.curves import (B, G, GStar, MEDIAN_COEF, Median, NoSolutionError, ParameterError,
                              Shifted, alpha_fixed_point, assumption_A_sup, barrier_minus_width,
                              check_delta_properties, compute_envelope, cstar, curve_from_dict,
                              eval_curve, residual_sup, solve_l)

# closed form evaluated once at full precision
CSTAR = 4.134216917542665
# fixed-point oracle at 10^4 grid points (trapezoid Picard iteration), frozen
ALPHA_ORACLE = {0.25: 1.38682938, 0.5: 0.68074204, 0.75: 0.15674002}


@pytest.fixture(scope="module")
def half():
    return solve_l(cstar() / 2)


def test_cstar_value():
    assert cstar() == pytest.approx(CSTAR, rel=1e-15)
    assert cstar() == pytest.approx(4.134, abs=1e-3)
    assert cstar() > math.sqrt(2)
    assert MEDIAN_COEF == pytest.approx(1.0607, abs=1e-4)


def test_curve_values():
    assert eval_curve(G(1.0), 0.0) == 0.0
    assert eval_curve(GStar(), 0.0) == -1.0
    assert eval_curve(B(1.0, 0.5, 8.0), 0.0) == pytest.approx(-1.5874010519681994, rel=1e-15)
    assert eval_curve(Shifted(G(1.0), 2.0), 1.0) == pytest.approx(math.sqrt(2) - 3.0)
    assert eval_curve(Median(), 1.0) == pytest.approx(math.sqrt(2))
    with pytest.raises(ValueError):
        eval_curve(G(1.0), -1.0)


def test_curve_roundtrip():
    for spec in (G(1.5), B(1.0, 0.1, 10.0), GStar(), Median(), Shifted(GStar(), 3.0)):
        again = curve_from_dict(spec.to_dict())
        assert again == spec
        assert eval_curve(again, 2.0) == eval_curve(spec, 2.0)


@pytest.mark.parametrize("frac", [0.25, 0.5, 0.75])
def test_solve_l(frac):
    c = cstar() * frac
    sol = solve_l(c)
    assert sol.residual < 1e-6
    assert abs(sol.l_end) < 1e-4
    assert np.all(sol.l_grid <= c + sol.alpha + 1e-12)
    assert sol.alpha == pytest.approx(ALPHA_ORACLE[frac], abs=1e-4)
    # the residual reported is the one an independent recomputation finds
    assert residual_sup(c, sol.alpha, sol.s_grid, sol.l_grid) == pytest.approx(sol.residual)


def test_alpha_fixed_point_matches_frozen():
    assert alpha_fixed_point(cstar() / 2) == pytest.approx(ALPHA_ORACLE[0.5], abs=1e-7)


def test_solve_l_rejects_out_of_range():
    with pytest.raises((NoSolutionError, ValueError)):
        solve_l(cstar() * 1.01)
    with pytest.raises((NoSolutionError, ValueError)):
        solve_l(0.0)


def test_l_is_callable_and_derivative_consistent(half):
    s = np.linspace(0.1, 0.9, 9)
    h = 1e-6
    fd = (half.l(s + h) - half.l(s - h)) / (2 * h)
    assert np.allclose(half.l_prime(s), fd, rtol=1e-4, atol=1e-4)
    assert half.l(0.0)[0] == pytest.approx(half.alpha, abs=1e-6)


def test_envelope_u_t_grows(half):
    u = [compute_envelope(half, t).u_t for t in (1e4, 1e5, 1e6)]
    assert u[0] < u[1] < u[2] < 1


def test_envelope_regression_K(half):
    rep = check_delta_properties(compute_envelope(half, 1e4))
    assert rep.passed and rep.K == 2.0  # regression value


def test_envelope_delta_ranges(half):
    env = compute_envelope(half, 1e6)
    rep = check_delta_properties(env)
    K, t = rep.K, env.t
    delta = env.L_grid - K * t ** (1 / 6)
    assert np.all(delta >= t ** 0.25) and np.all(delta <= K * t ** (1 / 3))
    assert delta[-1] <= K * t ** 0.25
    slope = np.max(np.abs(np.gradient(delta, env.grid)))
    assert slope <= 2 * t ** -0.5 + 1e-3


def test_envelope_small_t_fails(half):
    with pytest.raises(ParameterError):
        compute_envelope(half, 10.0)


def test_envelope_beta_checked(half):
    with pytest.raises(ParameterError):
        compute_envelope(half, 1e4, beta=0.5)


def test_assumption_A_vanishes_for_constant_L_linear_f():
    s = np.linspace(0, 100, 1001)
    env = SimpleNamespace(grid=s, L_grid=np.full_like(s, 3.0), t=100.0)
    assert assumption_A_sup(G(0.0), env) == pytest.approx(0.0, abs=1e-9)


def test_assumption_A_uniform_in_t(half):
    qs = []
    for t in (1e4, 1e5, 1e6):
        env = compute_envelope(half, t)
        f = barrier_minus_width(half.c, env.beta, t, 2.0)
        qs.append(assumption_A_sup(f, env))
    for a, b in zip(qs, qs[1:]):
        assert 0.1 <= b / a <= 10
    env = compute_envelope(half, 1e5)
    f = barrier_minus_width(half.c, env.beta, 1e5, 2.0)
    coarse = assumption_A_sup(f, env, n_grid=20001)
    fine = assumption_A_sup(f, env, n_grid=40001)
    assert abs(fine - coarse) / abs(coarse) < 0.01
