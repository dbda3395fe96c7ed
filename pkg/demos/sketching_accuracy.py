"""Random projection leverages: accuracy against the exact computation.

For a growing projection dimension p, compare the sketched leave-out
estimate with the exact one and with the reported bias bound.

    python3 demos/sketching_accuracy.py
"""

import time

import numpy as np

from leaveout.design import Panel, akm_forms, build_design
from leaveout.estimators import theta_jla, theta_leave_out
from leaveout.network import prune
from leaveout.simulation import SbmConfig, gen_sbm
from leaveout.sketch import SketchConfig, jla_bias_bound, sketched_leverages
from leaveout.solver import NormalEquations, exact_leverages, fit


def levels_panel(graph, rng, stay=3):
    """Movers plus a few stayers per firm, four periods each."""
    rows = []
    psi = {j: rng.normal(scale=0.3) for j in graph.firms}
    for w, (a, b) in graph.movers.items():
        alpha = rng.normal()
        rows += [(w, a if t < 2 else b, t, alpha + psi[a if t < 2 else b]) for t in range(4)]
    for j in graph.firms:
        for s in range(stay):
            alpha = rng.normal()
            rows += [(f"s{j}_{s}", j, t, alpha + psi[j]) for t in range(4)]
    w, f, t, mu = zip(*rows)
    y = np.array(mu) + rng.normal(scale=0.4, size=len(mu))
    return Panel(np.array(w, dtype=object), np.array(f, dtype=object), np.array(t), y)


def main():
    rng = np.random.default_rng(0)
    g, _, _, _ = gen_sbm(SbmConfig(J=200, N=1500, p_b=0.5, seed=1))
    g, _ = prune(g, "loo")
    panel = levels_panel(g, rng)
    design = build_design(panel)
    forms = akm_forms(design)
    solver = NormalEquations(design)
    fr = fit(design, None, solver)
    t0 = time.time()
    exact = exact_leverages(design, forms, solver)
    t_exact = time.time() - t0
    target = forms["var_firm"]
    truth = theta_leave_out(design.y, fr, exact, target)
    print(f"n={design.n} k={design.k}; exact leverages in {t_exact:.2f} s; "
          f"leave-out firm variance {truth.theta_hat:.5f}")
    for p in (16, 64, 256, 1024):
        t0 = time.time()
        lev = sketched_leverages(design, forms, SketchConfig(p, 0), solver)
        est = theta_jla(design.y, fr, lev, target)
        bound = jla_bias_bound(lev, est.sigma2, "var_firm")
        print(f"p={p:>5}: estimate {est.theta_hat:.5f} (gap {est.theta_hat - truth.theta_hat:+.5f}), "
              f"bias bound {bound:.2e}, {time.time() - t0:.2f} s")


if __name__ == "__main__":
    main()
