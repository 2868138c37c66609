"""Empirical checks of the tail inequalities, at a demo-friendly 10^4 replicates.

The CLI runs the same suite at 10^5: python -m bbm_decay.expcli bounds
"""

from bbm_decay.bounds import bounds_suite

for rep in bounds_suite(10_000, seed=3):
    d = rep.to_dict()
    if "tv" in d:
        print(f"{d['label']:<42} tv {d['tv']:.4f} (threshold {d['tv_threshold']})  pass={rep.passed}")
    else:
        print(f"{d['label']:<42} emp {d['empirical']:.5f} <= bound {d['bound']:.5f} "
              f"+ {d['ci_halfwidth']:.5f}  pass={rep.passed}")
