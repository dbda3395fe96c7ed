import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from leaveout.design import DesignMatrix, EstimandSpec, akm_forms, build_design, build_quadratic_form
from leaveout.errors import LeverageOne, RankDeficient
from leaveout.solver import (NormalEquations, exact_leverages, fit, hat_matrices,
                             leave_out_residual, leave_out_residuals)

from conftest import random_akm_panel, random_dense_design


def dense_oracle(X, A=None):
    Sinv = np.linalg.inv(X.T @ X)
    P = X @ Sinv @ X.T
    out = {"P": np.diag(P).copy(), "Sinv": Sinv}
    if A is not None:
        out["B"] = np.diag(X @ Sinv @ A @ Sinv @ X.T).copy()
    return out


def test_dense_and_cg_agree(akm_design):
    forms = akm_forms(akm_design)
    dense = NormalEquations(akm_design, method="dense")
    cg = NormalEquations(akm_design, method="cg")
    ld = exact_leverages(akm_design, forms, dense)
    lc = exact_leverages(akm_design, forms, cg)
    assert np.allclose(ld.P, lc.P, atol=1e-8)
    for name in forms:
        assert np.allclose(ld.B[name], lc.B[name], atol=1e-8)
    assert cg.stats["iterations"] > 0


def test_leverages_match_inverse(akm_design):
    X = akm_design.X.toarray()
    form = akm_forms(akm_design)["var_firm"]
    oracle = dense_oracle(X, form.to_dense())
    lev = exact_leverages(akm_design, form)
    assert np.allclose(lev.P, oracle["P"], atol=1e-10)
    assert np.allclose(lev.B["var_firm"], oracle["B"], atol=1e-10)


def test_leave_one_out_residual_matches_refit():
    rng = np.random.default_rng(2)
    X = random_dense_design(rng, n=40, k=5)
    y = rng.normal(size=40)
    d = DesignMatrix.from_matrix(X, y)
    fr = fit(d)
    lev = exact_leverages(d)
    for i in (0, 7, 39):
        keep = np.arange(40) != i
        b = np.linalg.lstsq(X[keep], y[keep], rcond=None)[0]
        assert np.isclose(leave_out_residual(fr, lev, i), y[i] - X[i] @ b)
    assert np.allclose(leave_out_residuals(fr, lev)[[0, 7]],
                       [leave_out_residual(fr, lev, 0), leave_out_residual(fr, lev, 7)])


def test_matrix_outcome_fit():
    rng = np.random.default_rng(3)
    X = random_dense_design(rng, n=30, k=4)
    Y = rng.normal(size=(30, 3))
    d = DesignMatrix.from_matrix(X)
    fr = fit(d, Y)
    assert fr.beta.shape == (4, 3)
    assert np.allclose(fr.beta[:, 1], np.linalg.lstsq(X, Y[:, 1], rcond=None)[0])


def test_rank_deficient_design_rejected():
    X = np.ones((5, 2))
    with pytest.raises(RankDeficient):
        NormalEquations(DesignMatrix.from_matrix(X))
    with pytest.raises(RankDeficient):
        NormalEquations(DesignMatrix.from_matrix(np.column_stack([np.ones(5), np.zeros(5)])))


def test_leverage_one_detected():
    # the single mover of a firm pins that firm's effect
    X = np.array([[1.0, 0], [0, 1.0], [0, 1.0]])
    lev = exact_leverages(DesignMatrix.from_matrix(X))
    with pytest.raises(LeverageOne):
        lev.check_feasible()


def test_hat_matrices_diagonals(akm_design):
    form = akm_forms(akm_design)["cov_person_firm"]
    P, B = hat_matrices(akm_design, form)
    lev = exact_leverages(akm_design, form)
    assert np.allclose(np.diag(P), lev.P)
    assert np.allclose(np.diag(B["cov_person_firm"]), lev.B["cov_person_firm"])
    assert np.allclose(P @ P, P, atol=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_leverage_bounds_and_trace(seed):
    rng = np.random.default_rng(seed)
    X = random_dense_design(rng, n=int(rng.integers(15, 60)), k=int(rng.integers(2, 8)))
    lev = exact_leverages(DesignMatrix.from_matrix(X))
    assert np.all(lev.P >= -1e-12) and np.all(lev.P <= 1 + 1e-12)
    assert np.isclose(lev.P.sum(), X.shape[1])


def test_levels_and_first_difference_leverages():
    # with two periods, levels leverage equals (1 + first-difference leverage) / 2
    p = random_akm_panel(5, firms=5, workers=30, periods=2, move_prob=1.0)
    lev_l = exact_leverages(build_design(p, "levels"))
    fd = build_design(p, "first_difference")
    lev_f = exact_leverages(fd)
    per_worker = dict(zip(fd.row_ids.tolist(), lev_f.P))
    expected = np.array([(1 + per_worker[w]) / 2 for w in p.worker.tolist()])
    assert np.allclose(lev_l.P, expected, atol=1e-12)
