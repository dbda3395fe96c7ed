"""Point estimators of quadratic forms ``theta = beta'A beta``.

The leave-out estimator subtracts ``sum_i B_ii sigma_i^2`` from the plug-in
value with ``sigma_i^2`` estimated by ``y_i`` times the leave-one-out
residual.  It is computed from diagonals only; the covariance and
U-statistic representations are available as cross-checks.  Plug-in,
degrees-of-freedom corrected, sketched, leave-cluster-out and jackknife
variants are provided for comparison.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .design import DesignMatrix, EstimandSpec, QuadraticForm, akm_forms, build_quadratic_form
from .errors import (ClusterLeverageOne, DegenerateDof, InsufficientPeriods, LeverageOne, OddT,
                     ValidationError)
from .solver import (LEVERAGE_DELTA, FitResult, LeverageSet, NormalEquations, exact_leverages, fit,
                     hat_matrices)
from .sketch import jla_sigma2

METHODS = ("PI", "HO", "KSS", "KSS_JLA", "KSS_cluster", "JK", "PJK", "SPJK")


@dataclass
class VarianceComponentEstimate:
    method: str
    theta_hat: object  # float, or an array when several outcomes are stacked
    sigma2: Optional[np.ndarray] = None
    diagnostics: dict = field(default_factory=dict)
    target: str = ""

    def __float__(self):
        return float(self.theta_hat)


def _form_B(lev: LeverageSet, form: QuadraticForm) -> np.ndarray:
    if form.name not in lev.B:
        raise ValidationError(f"leverage set has no entry for target {form.name!r}")
    return lev.B[form.name]


def _col(v, ndim):
    return v if ndim == 1 else v[:, None]


def sigma2_leave_out(y, fit_result: FitResult, lev: LeverageSet, delta: float = LEVERAGE_DELTA):
    """``y_i (y_i - x_i'beta_{-i})``; negative values are kept."""
    y = np.asarray(y, dtype=float)
    lev.check_feasible(delta)
    return y * fit_result.residuals / _col(lev.M, y.ndim)


def sigma2_hc2(fit_result: FitResult, lev: LeverageSet, delta: float = LEVERAGE_DELTA):
    lev.check_feasible(delta)
    res = fit_result.residuals
    return res ** 2 / _col(lev.M, res.ndim)


def theta_plugin(fit_result: FitResult, form: QuadraticForm) -> VarianceComponentEstimate:
    val = form.quad(fit_result.beta)
    return VarianceComponentEstimate("PI", val if np.ndim(val) else float(val), target=form.name)


def theta_leave_out(y, fit_result: FitResult, lev: LeverageSet, form: QuadraticForm,
                    delta: float = LEVERAGE_DELTA) -> VarianceComponentEstimate:
    """``beta'A beta - sum_i B_ii sigma_i^2`` with leave-one-out variances."""
    s2 = sigma2_leave_out(y, fit_result, lev, delta)
    B = _form_B(lev, form)
    plug = form.quad(fit_result.beta)
    correction = B @ s2
    theta = plug - correction
    diag = {"plug_in": plug, "bias_correction": correction,
            "negative_sigma2": int(np.sum(s2 < 0)), "max_leverage": float(np.max(lev.P))}
    if np.ndim(theta) == 0:
        theta = float(theta)
    return VarianceComponentEstimate("KSS", theta, s2, diag, form.name)


def theta_leave_out_covariance(y, design: DesignMatrix, form: QuadraticForm,
                               solver: Optional[NormalEquations] = None) -> float:
    """``sum_i y_i x_i' S^{-1} A beta_{-i}`` using Sherman-Morrison updates."""
    y = np.asarray(y, dtype=float)
    solver = solver or NormalEquations(design)
    fr = fit(design, y, solver)
    lev = exact_leverages(design, form, solver)
    lev.check_feasible()
    xt_beta = np.asarray(design.X @ solver.solve(form.matvec(fr.beta)))
    loo = xt_beta - lev.B[form.name] * fr.residuals / lev.M
    return float(y @ loo)


def kernel_matrix(P: np.ndarray, B: np.ndarray) -> np.ndarray:
    """``C = B - M o (b 1' + 1 b') / 2`` with ``b_i = B_ii / M_ii``; zero diagonal."""
    M = np.eye(P.shape[0]) - P
    m = np.diag(M).copy()
    if np.any(m < LEVERAGE_DELTA):
        raise LeverageOne("an observation has leverage one")
    b = np.diag(B) / m
    C = B - 0.5 * M * (b[:, None] + b[None, :])
    np.fill_diagonal(C, 0.0)
    return C


def theta_ustat(y, C: np.ndarray) -> float:
    """``sum_i sum_{l != i} C_il y_i y_l`` (the diagonal of ``C`` is zero)."""
    y = np.asarray(y, dtype=float)
    return float(y @ C @ y)


def theta_homosc(y, fit_result: FitResult, lev: LeverageSet, form: QuadraticForm, k: int):
    """Plug-in minus ``trace(A S^{-1})`` times ``RSS / (n - k)``."""
    res = fit_result.residuals
    n = res.shape[0]
    if n <= k:
        raise DegenerateDof(f"n = {n} does not exceed k = {k}")
    s2 = np.sum(res ** 2, axis=0) / (n - k)
    trace = float(np.sum(_form_B(lev, form)))
    plug = form.quad(fit_result.beta)
    theta = plug - trace * s2
    diag = {"plug_in": plug, "sigma2_homoscedastic": s2, "trace_AS": trace}
    return VarianceComponentEstimate("HO", float(theta) if np.ndim(theta) == 0 else theta, None,
                                     diag, form.name)


def theta_jla(y, fit_result: FitResult, sketched: LeverageSet, form: QuadraticForm):
    s2 = jla_sigma2(y, fit_result, sketched)
    B = _form_B(sketched, form)
    plug = form.quad(fit_result.beta)
    theta = plug - B @ s2
    diag = {"plug_in": plug, "bias_correction": B @ s2, "p": sketched.p, "mode": sketched.mode,
            "exact_rows": int(len(sketched.exact_rows))}
    return VarianceComponentEstimate("KSS_JLA", float(theta) if np.ndim(theta) == 0 else theta, s2,
                                     diag, form.name)


def theta_cluster(y, design: DesignMatrix, form: QuadraticForm, clusters,
                  solver: Optional[NormalEquations] = None, delta: float = LEVERAGE_DELTA):
    """Leave-cluster-out estimator
    ``beta'A beta - sum_c y_c' B_c (I - P_c)^{-1} (y_c - X_c beta)``."""
    y = np.asarray(y, dtype=float)
    solver = solver or NormalEquations(design)
    fr = fit(design, y, solver)
    clusters = np.asarray(clusters)
    if clusters.shape[0] != design.n:
        raise ValidationError("one cluster label per observation required")
    order = np.argsort(clusters, kind="stable")
    labels, starts = np.unique(clusters[order], return_index=True)
    bounds = list(starts) + [len(order)]
    correction = 0.0
    worst = 0.0
    for c in range(len(labels)):
        idx = order[bounds[c]:bounds[c + 1]]
        Xc = design.X[idx]
        Z = solver.solve(Xc.T.toarray())
        Pc = np.asarray(Xc @ Z)
        Pc = 0.5 * (Pc + Pc.T)
        F1 = form.A1.matmat(Z)
        F2 = F1 if form.A2 is form.A1 else form.A2.matmat(Z)
        Bc = F1.T @ F2
        Bc = 0.5 * (Bc + Bc.T)
        Mc = np.eye(len(idx)) - Pc
        eig_min = float(np.linalg.eigvalsh(Mc).min())
        worst = max(worst, 1.0 - eig_min)
        if eig_min < delta:
            raise ClusterLeverageOne(f"cluster {labels[c]!r} cannot be left out (design loses rank)")
        correction += y[idx] @ Bc @ np.linalg.solve(Mc, fr.residuals[idx])
    plug = float(form.quad(fr.beta))
    diag = {"plug_in": plug, "bias_correction": float(correction), "clusters": int(len(labels)),
            "max_cluster_leverage": worst}
    return VarianceComponentEstimate("KSS_cluster", plug - float(correction), None, diag, form.name)


def _subsample_plugin(design: DesignMatrix, y, rows, form: QuadraticForm):
    X = design.X[rows]
    solver = NormalEquations(X)
    beta = solver.solve(np.asarray(X.T @ y[rows]))
    return form.quad(beta)


def theta_jackknife_family(y, design: DesignMatrix, form: QuadraticForm, variant: str = "JK",
                           periods=None, solver: Optional[NormalEquations] = None):
    """Jackknife bias corrections of the plug-in estimator (for benchmarking).

    ``JK`` drops one observation at a time; ``PJK`` drops one period at a
    time; ``SPJK`` averages the two half-panels.  ``y`` may hold several
    outcome columns (all variants are linear in the refits).
    """
    y = np.asarray(y, dtype=float)
    solver = solver or NormalEquations(design)
    fr = fit(design, y, solver)
    full = form.quad(fr.beta)
    n = design.n
    if variant == "JK":
        if y.ndim != 1:
            raise ValidationError("JK takes a single outcome column")
        lev = exact_leverages(design, None, solver)
        lev.check_feasible()
        D = solver.solve(design.X.T.toarray()) * (fr.residuals / lev.M)
        drops = form.quad(fr.beta[:, None] - D)
        theta = n * full - (n - 1) / n * np.sum(drops)
        extra = {"n": n}
    else:
        if periods is None:
            raise InsufficientPeriods(f"{variant} needs a period for every observation")
        periods = np.asarray(periods)
        ts = np.unique(periods)
        T = len(ts)
        if T < 2:
            raise InsufficientPeriods("at least two periods are needed")
        if variant == "PJK":
            drops = sum(_subsample_plugin(design, y, np.flatnonzero(periods != t), form) for t in ts)
            theta = T * full - (T - 1) / T * drops
        elif variant == "SPJK":
            if T % 2:
                raise OddT("split-panel jackknife needs an even number of periods")
            first = np.isin(periods, ts[: T // 2])
            halves = (_subsample_plugin(design, y, np.flatnonzero(first), form)
                      + _subsample_plugin(design, y, np.flatnonzero(~first), form))
            theta = 2 * full - 0.5 * halves
        else:
            raise ValidationError(f"unknown jackknife variant {variant!r}")
        extra = {"T": T}
    theta = float(theta) if np.ndim(theta) == 0 else theta
    return VarianceComponentEstimate(variant, theta, None, {"plug_in": full, **extra}, form.name)


# ---------------------------------------------------------------------------
# two-way decompositions
# ---------------------------------------------------------------------------

@dataclass
class AkmDecomposition:
    """PI / HO / KSS estimates for each variance component and R^2."""

    components: dict  # name -> {method: VarianceComponentEstimate}
    total_variance: float
    residual_share: float
    n: int
    k: int

    def table(self) -> list:
        rows = []
        for name, by_method in self.components.items():
            for method, est in by_method.items():
                rows.append({"component": name, "method": method, "estimate": float(est.theta_hat)})
        return rows

    def value(self, component: str, method: str) -> float:
        return float(self.components[component][method].theta_hat)


def decompose_akm(y, design: DesignMatrix, forms=None, lev: Optional[LeverageSet] = None,
                  solver: Optional[NormalEquations] = None) -> AkmDecomposition:
    """Variance of firm effects, person-firm covariance, variance of person
    effects and R^2 by the plug-in, homoscedastic and leave-out methods.

    R^2 estimates divide by the raw sample variance of ``y``.
    """
    y = np.asarray(y, dtype=float)
    solver = solver or NormalEquations(design)
    forms = dict(forms or akm_forms(design))
    r2 = build_quadratic_form(design, EstimandSpec("coefficient_of_determination"))
    r2.name = "R2"
    forms["R2"] = r2
    if lev is None or any(name not in lev.B for name in forms):
        lev = exact_leverages(design, forms, solver)
    fr = fit(design, y, solver)
    total = float(np.mean((y - y.mean()) ** 2))
    comps = {}
    for name, form in forms.items():
        ests = {"PI": theta_plugin(fr, form), "HO": theta_homosc(y, fr, lev, form, design.k),
                "KSS": theta_leave_out(y, fr, lev, form)}
        if name == "R2":
            for e in ests.values():
                e.theta_hat = float(e.theta_hat) / total
        comps[name] = ests
    return AkmDecomposition(comps, total, float(np.mean(fr.residuals ** 2)), design.n, design.k)


def anova_leave_out_closed_form(groups, y) -> float:
    """Leave-out variance of group means in a one-way layout without other
    regressors: ``(1/n) sum_g [T_g (a_g - abar)^2 - (1 - T_g/n) s_g^2]``."""
    groups = np.asarray(groups)
    y = np.asarray(y, dtype=float)
    n = len(y)
    total = 0.0
    ybar = y.mean()
    for g in np.unique(groups):
        yg = y[groups == g]
        T = len(yg)
        s2 = yg.var(ddof=1)
        total += T * (yg.mean() - ybar) ** 2 - (1 - T / n) * s2
    return total / n


# ---------------------------------------------------------------------------
# coefficient covariance
# ---------------------------------------------------------------------------

class BetaCovariance:
    """``S^{-1} (sum_i x_i x_i' sigma_i^2) S^{-1}`` as an operator."""

    def __init__(self, design: DesignMatrix, sigma2, solver: Optional[NormalEquations] = None):
        self.design = design
        self.sigma2 = np.asarray(sigma2, dtype=float)
        self.solver = solver or NormalEquations(design)

    def lincom_variance(self, v) -> float:
        z = self.solver.solve(np.asarray(v, dtype=float))
        xz = np.asarray(self.design.X @ z)
        return float(self.sigma2 @ xz ** 2)

    def lincom_se(self, v) -> float:
        return float(np.sqrt(max(self.lincom_variance(v), 0.0)))

    def to_dense(self) -> np.ndarray:
        Z = self.solver.solve(np.eye(self.design.k))
        XZ = np.asarray(self.design.X @ Z)
        V = XZ.T @ (XZ * self.sigma2[:, None])
        return 0.5 * (V + V.T)


def vcov_beta(design: DesignMatrix, lev: LeverageSet, sigma2,
              solver: Optional[NormalEquations] = None) -> BetaCovariance:
    lev.check_feasible()
    return BetaCovariance(design, sigma2, solver)
