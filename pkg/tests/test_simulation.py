import numpy as np
import pytest

from leaveout.design import EstimandSpec, build_quadratic_form
from leaveout.errors import DisconnectedDraw, ValidationError
from leaveout.inference import top_eigen
from leaveout.network import build_split_plan, is_connected
from leaveout.simulation import (HeteroModel, SbmConfig, Scenario, draw_errors,
                                 first_difference_variances, gen_sbm, gen_wages, monte_carlo,
                                 sbm_design)
from leaveout.solver import exact_leverages

CALIBRATED_HET = (-3.3441, 1.3951, -0.0037, -0.0012, -0.0086)


def test_config_validation():
    with pytest.raises(ValidationError):
        SbmConfig(J=3)
    with pytest.raises(ValidationError):
        SbmConfig(J=10, N=5)
    with pytest.raises(ValidationError):
        SbmConfig(p_b=0.7)


def test_between_share_matches_probability():
    g, _, block, share = gen_sbm(SbmConfig(J=20, N=2000, p_b=0.5, seed=1))
    assert is_connected(g)
    assert abs(share - 0.5) < 4 * np.sqrt(0.25 / 2000)
    assert all(a != b for _, a, b in g.edges())


def test_small_between_probability_concentrates_eigen_share():
    weak = gen_sbm(SbmConfig(J=20, N=400, p_b=0.01, seed=2))[0]
    strong = gen_sbm(SbmConfig(J=20, N=400, p_b=0.5, seed=2))[0]
    shares = []
    for g in (weak, strong):
        d, _ = sbm_design(g, np.zeros(20))
        form = build_quadratic_form(d, EstimandSpec("var_firm"))
        shares.append(top_eigen(d, form, 1).shares[0])
    assert shares[0] > 0.3 > shares[1]


def test_equal_block_effects_have_no_signal():
    g, psi, block, _ = gen_sbm(SbmConfig(J=10, N=100, seed=3), [1.0, 1.0], 0.0)
    assert np.ptp(psi) == 0


def test_disconnected_draws_raise():
    with pytest.raises(DisconnectedDraw):
        gen_sbm(SbmConfig(J=40, N=40, p_b=0.01, seed=0), max_redraws=2)


def test_het_model():
    het = HeteroModel(np.log(0.3))
    assert np.allclose(het.variances(np.ones(3), np.ones(3), np.ones(3), np.ones(3)), 0.3)
    g, psi, _, _ = gen_sbm(SbmConfig(J=10, N=100, seed=4))
    d, beta = sbm_design(g, psi)
    form = build_quadratic_form(d, EstimandSpec("var_firm"))
    lev = exact_leverages(d, form)
    v = first_difference_variances(d, g, HeteroModel(*CALIBRATED_HET), lev, "var_firm")
    assert np.all(v > 0) and np.all(np.isfinite(v))


def test_errors_and_wages():
    rng = np.random.default_rng(0)
    e = draw_errors(np.full(50_000, 4.0), "scaled_t", 6.0, rng)
    assert abs(e.var() - 4.0) < 0.15
    with pytest.raises(ValidationError):
        draw_errors([1.0], "scaled_t", 3.0)
    with pytest.raises(ValidationError):
        draw_errors([1.0], "cauchy")
    g, psi, _, _ = gen_sbm(SbmConfig(J=10, N=100, seed=5))
    d, beta = sbm_design(g, psi)
    y = gen_wages(d, beta, np.zeros(d.n), seed=1)
    assert np.allclose(y, d.X @ beta)
    Y = gen_wages(d, beta, np.ones(d.n), seed=1, reps=4)
    assert Y.shape == (d.n, 4)


def small_scenario(reps_seed=0, qs=(0,)):
    g, psi, _, _ = gen_sbm(SbmConfig(J=10, N=100, p_b=0.5, seed=6), [0.0, 0.5], 0.3)
    d, beta = sbm_design(g, psi)
    form = build_quadratic_form(d, EstimandSpec("var_firm"))
    plan = build_split_plan(d, g, 0)
    return Scenario(d, form, beta, np.full(d.n, 0.2), plan, qs, seed=reps_seed, draws=20_000)


def test_zero_noise_recovers_theta():
    sc = small_scenario()
    sc.variances = np.zeros(sc.design.n)
    rep = monte_carlo(sc, 3, metrics=("bias",))
    assert np.allclose(rep.estimates["KSS"], rep.theta, atol=1e-12)
    assert np.allclose(rep.estimates["PI"], rep.theta, atol=1e-12)


def test_replications_are_reproducible_by_index():
    a = monte_carlo(small_scenario(3), 6, metrics=("bias",))
    b = monte_carlo(small_scenario(3), 4, metrics=("bias",))
    assert np.array_equal(a.estimates["KSS"][:4], b.estimates["KSS"])


def test_summary_fields():
    rep = monte_carlo(small_scenario(1, qs=(0, 1)), 120)
    s = rep.summary()
    for key in ("bias_KSS", "mcse_KSS", "skew_KSS", "ks_normal_p", "se_ratio", "coverage_q0",
                "coverage_q1", "analytic_pi_bias"):
        assert key in s
    assert abs(s["bias_PI"] - s["analytic_pi_bias"]) < 5 * s["mcse_PI"]
