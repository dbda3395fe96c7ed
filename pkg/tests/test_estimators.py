import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from leaveout.design import (DesignMatrix, EstimandSpec, akm_forms, build_design, build_quadratic_form,
                             group_design)
from leaveout.errors import ClusterLeverageOne, DegenerateDof, InsufficientPeriods, OddT
from leaveout.estimators import (anova_leave_out_closed_form, decompose_akm, kernel_matrix,
                                 sigma2_hc2, sigma2_leave_out, theta_cluster, theta_homosc,
                                 theta_jackknife_family, theta_leave_out, theta_leave_out_covariance,
                                 theta_plugin, theta_ustat, vcov_beta)
from leaveout.solver import NormalEquations, exact_leverages, fit, hat_matrices

from conftest import random_akm_panel, random_dense_design


def random_problem(seed, n=None, k=None):
    rng = np.random.default_rng(seed)
    X = random_dense_design(rng, n, k)
    F = rng.normal(size=(3, X.shape[1]))
    G = rng.normal(size=(3, X.shape[1]))
    A = 0.5 * (F.T @ G + G.T @ F)
    d = DesignMatrix.from_matrix(X, X @ rng.normal(size=X.shape[1]) + rng.normal(size=X.shape[0]))
    return d, build_quadratic_form(d, EstimandSpec("custom", matrix=A))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 100_000))
def test_three_representations_agree(seed):
    d, form = random_problem(seed)
    solver = NormalEquations(d)
    fr = fit(d, None, solver)
    lev = exact_leverages(d, form, solver)
    a = theta_leave_out(d.y, fr, lev, form).theta_hat
    b = theta_leave_out_covariance(d.y, d, form, solver)
    P, B = hat_matrices(d, form, solver)
    c = theta_ustat(d.y, kernel_matrix(P, B["custom"]))
    scale = max(abs(a), 1e-12)
    assert abs(a - b) / scale < 1e-9 and abs(a - c) / scale < 1e-9


def test_kernel_is_exactly_unbiased():
    # E[y'Cy] = mu'C mu + sum_i C_ii sigma_i^2 and C_ii = 0, so it suffices that mu'C mu = theta
    d, form = random_problem(3, n=60, k=8)
    beta = np.random.default_rng(1).normal(size=d.k)
    P, B = hat_matrices(d, form)
    C = kernel_matrix(P, B["custom"])
    mu = d.X @ beta
    assert np.allclose(np.diag(C), 0)
    assert mu @ C @ mu == pytest.approx(form.quad(beta), rel=1e-10)


def test_plugin_bias_is_analytic():
    d, form = random_problem(4, n=50, k=6)
    rng = np.random.default_rng(2)
    sigma2 = rng.uniform(0.2, 2.0, d.n)
    lev = exact_leverages(d, form)
    Sinv = np.linalg.inv(d.X.toarray().T @ d.X.toarray())
    V = Sinv @ d.X.toarray().T @ np.diag(sigma2) @ d.X.toarray() @ Sinv
    assert np.trace(form.to_dense() @ V) == pytest.approx(lev.B["custom"] @ sigma2, rel=1e-10)


def test_homoscedastic_correction_unbiased_under_homoscedasticity():
    d, form = random_problem(5, n=40, k=5)
    lev = exact_leverages(d, form)
    # E[RSS/(n-k)] = sigma^2 and E[plug-in] = theta + sigma^2 trace(A S^-1)
    Sinv = np.linalg.inv(d.X.toarray().T @ d.X.toarray())
    assert np.trace(form.to_dense() @ Sinv) == pytest.approx(lev.B["custom"].sum(), rel=1e-10)


def test_homoscedastic_needs_degrees_of_freedom():
    X = np.eye(3)
    d = DesignMatrix.from_matrix(X, np.ones(3))
    form = build_quadratic_form(d, EstimandSpec("custom", matrix=np.eye(3)))
    fr = fit(d)
    with pytest.raises(DegenerateDof):
        theta_homosc(d.y, fr, exact_leverages(d, form), form, d.k)


def test_anova_closed_form():
    rng = np.random.default_rng(6)
    groups = np.repeat(np.arange(12), rng.integers(2, 7, 12))
    y = rng.normal(size=len(groups)) + groups * 0.1
    d = group_design(groups, y)
    form = build_quadratic_form(d, EstimandSpec("anova_group_variance"))
    est = theta_leave_out(y, fit(d), exact_leverages(d, form), form).theta_hat
    closed = anova_leave_out_closed_form(groups, y)
    assert est == pytest.approx(closed, rel=1e-12)


def test_theil_identity(akm_panel):
    d = build_design(akm_panel)
    dec = decompose_akm(d.y, d)
    ratio = (1 - dec.value("R2", "HO")) / (1 - dec.value("R2", "PI"))
    assert ratio == pytest.approx((d.n - 1) / (d.n - d.k), rel=1e-12)


def test_decomposition_table(akm_design):
    dec = decompose_akm(akm_design.y, akm_design)
    rows = dec.table()
    assert {r["component"] for r in rows} == {"var_firm", "cov_person_firm", "var_person", "R2"}
    assert {r["method"] for r in rows} == {"PI", "HO", "KSS"}
    # the plug-in firm variance is upward biased relative to the corrected one here
    assert dec.value("var_firm", "PI") >= dec.value("var_firm", "KSS")


def test_cluster_of_singletons_equals_leave_out(akm_design):
    form = akm_forms(akm_design)["var_firm"]
    fr = fit(akm_design)
    lev = exact_leverages(akm_design, form)
    single = theta_cluster(akm_design.y, akm_design, form, np.arange(akm_design.n)).theta_hat
    assert single == pytest.approx(theta_leave_out(akm_design.y, fr, lev, form).theta_hat, rel=1e-10)


def test_cluster_estimator_matches_refits():
    d, form = random_problem(7, n=36, k=4)
    clusters = np.arange(d.n) // 3
    est = theta_cluster(d.y, d, form, clusters).theta_hat
    X, y = d.X.toarray(), d.y
    beta = np.linalg.lstsq(X, y, rcond=None)[0]
    A = form.to_dense()
    Sinv = np.linalg.inv(X.T @ X)
    oracle = 0.0
    for c in np.unique(clusters):
        keep = clusters != c
        b_c = np.linalg.lstsq(X[keep], y[keep], rcond=None)[0]
        idx = clusters == c
        oracle += y[idx] @ (X[idx] @ Sinv @ A @ b_c)
    assert est == pytest.approx(oracle, rel=1e-9)


def test_cluster_without_rank_is_an_error(akm_design):
    form = akm_forms(akm_design)["var_firm"]
    workers = akm_design.row_ids
    with pytest.raises(ClusterLeverageOne):
        theta_cluster(akm_design.y, akm_design, form, workers)


def test_jackknife_matches_refits():
    d, form = random_problem(8, n=30, k=4)
    X, y, A = d.X.toarray(), d.y, form.to_dense()
    plug = lambda rows: (lambda b: b @ A @ b)(np.linalg.lstsq(X[rows], y[rows], rcond=None)[0])
    n = d.n
    full = plug(np.arange(n))
    drops = sum(plug(np.delete(np.arange(n), i)) for i in range(n))
    oracle = n * full - (n - 1) / n * drops
    assert theta_jackknife_family(y, d, form, "JK").theta_hat == pytest.approx(oracle, rel=1e-9)
    periods = np.arange(n) % 6
    T = 6
    pj = T * full - (T - 1) / T * sum(plug(np.flatnonzero(periods != t)) for t in range(T))
    assert theta_jackknife_family(y, d, form, "PJK", periods).theta_hat == pytest.approx(pj, rel=1e-9)
    first = periods < 3
    sp = 2 * full - 0.5 * (plug(np.flatnonzero(first)) + plug(np.flatnonzero(~first)))
    assert theta_jackknife_family(y, d, form, "SPJK", periods).theta_hat == pytest.approx(sp, rel=1e-9)


def test_jackknife_period_errors():
    d, form = random_problem(9, n=30, k=3)
    with pytest.raises(InsufficientPeriods):
        theta_jackknife_family(d.y, d, form, "PJK")
    with pytest.raises(OddT):
        theta_jackknife_family(d.y, d, form, "SPJK", np.arange(d.n) % 3)


def test_sigma2_estimators(akm_design):
    fr = fit(akm_design)
    lev = exact_leverages(akm_design)
    s_lo = sigma2_leave_out(akm_design.y, fr, lev)
    s_hc2 = sigma2_hc2(fr, lev)
    assert np.all(s_hc2 >= 0)
    # the two differ by fitted_i * residual_i / M_ii
    assert np.allclose(s_lo - s_hc2, fr.fitted * fr.residuals / lev.M)


def test_matrix_outcomes_match_columns(akm_design):
    form = akm_forms(akm_design)["var_firm"]
    rng = np.random.default_rng(1)
    Y = akm_design.y[:, None] + rng.normal(size=(akm_design.n, 3))
    fr = fit(akm_design, Y)
    lev = exact_leverages(akm_design, form)
    vec = theta_leave_out(Y, fr, lev, form).theta_hat
    for r in range(3):
        single = theta_leave_out(Y[:, r], fit(akm_design, Y[:, r]), lev, form).theta_hat
        assert vec[r] == pytest.approx(single, rel=1e-12)
    assert theta_plugin(fr, form).theta_hat.shape == (3,)


def test_coefficient_covariance(akm_design):
    lev = exact_leverages(akm_design)
    s2 = np.abs(np.random.default_rng(3).normal(size=akm_design.n))
    cov = vcov_beta(akm_design, lev, s2)
    dense = cov.to_dense()
    v = np.random.default_rng(4).normal(size=akm_design.k)
    assert cov.lincom_variance(v) == pytest.approx(v @ dense @ v, rel=1e-10)
