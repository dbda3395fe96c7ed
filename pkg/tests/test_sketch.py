import numpy as np
import pytest

from leaveout.design import DesignMatrix, EstimandSpec, akm_forms, build_quadratic_form
from leaveout.errors import SketchedLeverageOne, ValidationError
from leaveout.estimators import theta_jla, theta_leave_out
from leaveout.sketch import (SketchConfig, jla_bias_bound, jla_sigma2, nonlinearity_correction,
                             sketched_leverages)
from leaveout.solver import LeverageSet, NormalEquations, exact_leverages, fit

from conftest import random_dense_design


@pytest.fixture(scope="module")
def small_problem():
    rng = np.random.default_rng(20)
    X = random_dense_design(rng, n=100, k=20, density=0.5)
    F = rng.normal(size=(6, 20))
    d = DesignMatrix.from_matrix(X, X @ rng.normal(size=20) + rng.normal(size=100))
    form = build_quadratic_form(d, EstimandSpec("custom", matrix=F.T @ F / 6, psd=True))
    solver = NormalEquations(d)
    return d, form, solver, exact_leverages(d, form, solver)


def test_sketch_means_are_unbiased(small_problem):
    d, form, solver, exact = small_problem
    reps, p = 200, 64
    Ps = np.empty((reps, d.n))
    Bs = np.empty((reps, d.n))
    for s in range(reps):
        lev = sketched_leverages(d, form, SketchConfig(p, s), solver, fallback_margin=0.0)
        Ps[s], Bs[s] = lev.P, lev.B["custom"]
    for est, truth in ((Ps, exact.P), (Bs, exact.B["custom"])):
        se = est.std(axis=0, ddof=1) / np.sqrt(reps)
        z = np.abs(est.mean(axis=0) - truth) / np.maximum(se, 1e-300)
        # 200 coordinates: allow the extreme tail expected under the null
        assert np.mean(z > 4) < 0.02
        assert z.max() < 5.5


def test_large_p_is_close(small_problem):
    d, form, solver, exact = small_problem
    lev = sketched_leverages(d, form, SketchConfig(4096, 3), solver)
    assert np.max(np.abs(lev.P - exact.P) / exact.P) < 0.1
    assert np.median(np.abs(lev.P - exact.P) / exact.P) < 0.02


def test_same_seed_is_bit_identical(small_problem):
    d, form, solver, _ = small_problem
    a = sketched_leverages(d, form, SketchConfig(50, 9), solver)
    b = sketched_leverages(d, form, SketchConfig(50, 9), solver)
    assert np.array_equal(a.P, b.P) and np.array_equal(a.B["custom"], b.B["custom"])


def test_hybrid_fallback_uses_exact_rows(small_problem):
    d, form, solver, exact = small_problem
    lev = sketched_leverages(d, form, SketchConfig(2, 1), solver, fallback_margin=0.9)
    assert lev.mode == "hybrid(2)"
    rows = lev.exact_rows
    assert np.allclose(lev.P[rows], exact.P[rows])


def test_correction_factor_limits():
    assert np.allclose(nonlinearity_correction(np.zeros(3), 10), 1.0)
    assert np.isclose(nonlinearity_correction(np.array([0.5]), 10 ** 12)[0], 1.0)
    assert nonlinearity_correction(np.array([0.5]), 10)[0] == pytest.approx(1 - (3 / 8 + 1 / 4) / 5)


def test_sigma2_reduces_to_leave_out_at_zero_sketch_error(small_problem):
    d, form, solver, exact = small_problem
    fr = fit(d, None, solver)
    fake = LeverageSet(exact.P.copy(), dict(exact.B), "sketched(1e12)", 10 ** 12)
    s2 = jla_sigma2(d.y, fr, fake)
    assert np.allclose(s2, d.y * fr.residuals / exact.M, rtol=1e-9)
    zero = LeverageSet(np.zeros(d.n), dict(exact.B), "sketched(5)", 5)
    assert np.allclose(jla_sigma2(d.y, fr, zero), d.y * fr.residuals)


def test_sketched_leverage_one_is_an_error(small_problem):
    d, form, solver, exact = small_problem
    fr = fit(d, None, solver)
    bad = LeverageSet(np.full(d.n, 1.0), dict(exact.B), "sketched(5)", 5)
    with pytest.raises(SketchedLeverageOne):
        jla_sigma2(d.y, fr, bad)


def test_bias_bound_oracle_and_scaling(small_problem):
    d, form, solver, _ = small_problem
    lev = sketched_leverages(d, form, SketchConfig(40, 2), solver)
    s2 = np.random.default_rng(0).normal(size=d.n)
    oracle = sum(lev.P[i] ** 2 * abs(lev.B["custom"][i]) * abs(s2[i]) for i in range(d.n)) / 40
    assert jla_bias_bound(lev, s2) == pytest.approx(oracle, rel=1e-12)
    doubled = LeverageSet(lev.P, lev.B, "sketched(80)", 80)
    assert jla_bias_bound(doubled, s2) == pytest.approx(oracle / 2, rel=1e-12)
    zero = LeverageSet(lev.P, {"custom": np.zeros(d.n)}, "sketched(40)", 40)
    assert jla_bias_bound(zero, s2) == 0.0
    with pytest.raises(ValidationError):
        jla_bias_bound(LeverageSet(lev.P, lev.B), s2)


def test_jla_estimate_converges(akm_design):
    forms = akm_forms(akm_design)
    solver = NormalEquations(akm_design)
    fr = fit(akm_design, None, solver)
    exact = exact_leverages(akm_design, forms, solver)
    assert exact.P.max() <= 0.9
    lev = sketched_leverages(akm_design, forms, SketchConfig(8192, 0), solver)
    for name in ("var_firm", "var_person"):
        a = theta_leave_out(akm_design.y, fr, exact, forms[name]).theta_hat
        b = theta_jla(akm_design.y, fr, lev, forms[name]).theta_hat
        assert abs(a - b) < 1e-2 * abs(a)
