"""Solve the envelope equation and stretch it to time t."""

import numpy as np

from bbm_decay.curves import check_delta_properties, compute_envelope, cstar, solve_l

c = cstar() / 2
sol = solve_l(c)
print(f"c = c*/2 = {c:.6f}")
print(f"alpha = {sol.alpha:.8f}   residual = {sol.residual:.2e}   l(1) = {sol.l_end:.1e}")

s = np.linspace(0, 1, 11)
print("l on a coarse grid:", np.array2string(sol.l(s), precision=4))

for t in (1e4, 1e5, 1e6):
    env = compute_envelope(sol, t)
    rep = check_delta_properties(env)
    print(f"t = {t:.0e}: beta = {env.beta:.4f}, u_t = {env.u_t:.4f}, "
          f"K = {rep.K}, passed = {rep.passed}")

# at 3c*/4 the solution is fine but the envelope is too thin for the
# Delta/L bounds at any reachable t
hi = solve_l(0.75 * cstar())
rep = check_delta_properties(compute_envelope(hi, 1e6))
print(f"3c*/4, t = 1e6: alpha = {hi.alpha:.5f}, first failing check: {rep.first_failure}")
