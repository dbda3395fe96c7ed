"""Normal-equation solves, OLS fits and exact leverages.

Small systems (k up to ``dense_threshold``) are factored once by Cholesky;
larger sparse systems use conjugate gradients with a Jacobi (or incomplete
LU) preconditioner.  Everything downstream talks to ``NormalEquations.solve``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Union

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .design import DesignMatrix, QuadraticForm
from .errors import LeverageOne, NotConverged, RankDeficient, ValidationError

DENSE_THRESHOLD = 2000
CG_RTOL = 1e-10
LEVERAGE_DELTA = 1e-8


class NormalEquations:
    """Solver for ``S_xx z = r`` with ``S_xx = X'X``."""

    def __init__(self, design: Union[DesignMatrix, sp.spmatrix, np.ndarray], method: str = "auto",
                 dense_threshold: int = DENSE_THRESHOLD, rtol: float = CG_RTOL,
                 maxiter: Optional[int] = None, preconditioner: str = "jacobi"):
        X = design.X if isinstance(design, DesignMatrix) else sp.csr_matrix(design, dtype=float)
        self.X = X
        self.k = X.shape[1]
        self.S = sp.csr_matrix(X.T @ X)
        if method == "auto":
            method = "dense" if self.k <= dense_threshold else "cg"
        if method not in ("dense", "cg"):
            raise ValidationError(f"unknown solver method {method!r}")
        self.method = method
        self.rtol = rtol
        self.maxiter = maxiter if maxiter is not None else max(10 * self.k, 100)
        self.stats = {"method": method, "solves": 0, "iterations": 0, "max_rel_residual": 0.0}
        diag = self.S.diagonal()
        if self.k and np.min(diag) <= 0:
            raise RankDeficient("design has an all-zero column")
        if method == "dense":
            Sd = self.S.toarray()
            try:
                self._chol = sla.cho_factor(Sd, lower=True, check_finite=False)
            except np.linalg.LinAlgError as exc:
                raise RankDeficient("normal equations are not positive definite") from exc
            pivots = np.diag(self._chol[0]) ** 2
            if self.k and np.min(pivots / diag) < 1e-13:
                raise RankDeficient("normal equations are numerically singular")
        else:
            if preconditioner == "jacobi":
                inv_d = 1.0 / diag
                self._M = spla.LinearOperator((self.k, self.k), matvec=lambda v: inv_d * v.ravel(),
                                              dtype=float)
            elif preconditioner == "ilu":
                ilu = spla.spilu(sp.csc_matrix(self.S), drop_tol=1e-5, fill_factor=20)
                self._M = spla.LinearOperator((self.k, self.k), matvec=ilu.solve, dtype=float)
            elif preconditioner == "none":
                self._M = None
            else:
                raise ValidationError(f"unknown preconditioner {preconditioner!r}")

    def _cg(self, b):
        iters = [0]

        def count(_):
            iters[0] += 1

        nb = np.linalg.norm(b)
        if nb == 0:
            return np.zeros_like(b)
        x, info = spla.cg(self.S, b, rtol=self.rtol, atol=0.0, maxiter=self.maxiter, M=self._M,
                          callback=count)
        rel = np.linalg.norm(self.S @ x - b) / nb
        self.stats["iterations"] += iters[0]
        self.stats["max_rel_residual"] = max(self.stats["max_rel_residual"], float(rel))
        if info != 0 or rel > 10 * self.rtol:
            if info > 0:
                raise NotConverged(f"CG stopped after {info} iterations (relative residual {rel:.2e})")
            raise RankDeficient("CG broke down; normal equations look singular")
        return x

    def solve(self, rhs):
        rhs = np.asarray(rhs, dtype=float)
        vec = rhs.ndim == 1
        R = rhs[:, None] if vec else rhs
        if self.method == "dense":
            out = sla.cho_solve(self._chol, R, check_finite=False)
        else:
            out = np.column_stack([self._cg(R[:, j]) for j in range(R.shape[1])]) if R.shape[1] \
                else np.zeros_like(R)
        self.stats["solves"] += R.shape[1]
        return out[:, 0] if vec else out


@dataclass
class FitResult:
    beta: np.ndarray
    fitted: np.ndarray
    residuals: np.ndarray
    stats: dict = field(default_factory=dict)


def fit(design: DesignMatrix, y=None, solver: Optional[NormalEquations] = None) -> FitResult:
    """OLS fit.  ``y`` may be a vector or an (n, R) matrix of outcomes."""
    y = design.y if y is None else np.asarray(y, dtype=float)
    if y is None:
        raise ValidationError("no outcome supplied")
    if y.shape[0] != design.n:
        raise ValidationError("outcome length does not match the design")
    solver = solver or NormalEquations(design)
    rhs = design.X.T @ y
    beta = solver.solve(rhs)
    fitted = design.X @ beta
    denom = np.linalg.norm(rhs)
    rel = np.linalg.norm(solver.S @ beta - rhs) / denom if denom > 0 else 0.0
    stats = dict(solver.stats)
    stats["normal_equation_residual"] = float(rel)
    return FitResult(beta, fitted, y - fitted, stats)


@dataclass
class LeverageSet:
    """Per-observation ``P_ii`` and ``B_ii`` (one vector per target)."""

    P: np.ndarray
    B: dict
    mode: str = "exact"
    p: Optional[int] = None
    exact_rows: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def M(self) -> np.ndarray:
        return 1.0 - self.P

    def check_feasible(self, delta: float = LEVERAGE_DELTA):
        worst = float(np.max(self.P)) if len(self.P) else 0.0
        if worst > 1.0 - delta:
            bad = int(np.argmax(self.P))
            raise LeverageOne(f"observation {bad} has leverage {worst:.12f}; prune the sample first")
        return worst


def _as_form_dict(forms) -> dict:
    if forms is None:
        return {}
    if isinstance(forms, QuadraticForm):
        return {forms.name: forms}
    if isinstance(forms, Mapping):
        return dict(forms)
    return {f.name: f for f in forms}


def exact_leverages(design: DesignMatrix, forms=None, solver: Optional[NormalEquations] = None,
                    block: int = 512) -> LeverageSet:
    """``P_ii = x_i'S^{-1}x_i`` and ``B_ii = z_i'A z_i`` with ``z_i = S^{-1}x_i``."""
    forms = _as_form_dict(forms)
    solver = solver or NormalEquations(design)
    X = design.X
    n = design.n
    P = np.empty(n)
    B = {name: np.empty(n) for name in forms}
    for start in range(0, n, block):
        stop = min(start + block, n)
        Xb = X[start:stop]
        Z = solver.solve(Xb.T.toarray())
        P[start:stop] = np.asarray(Xb.multiply(Z.T).sum(axis=1)).ravel()
        cache = {}
        for name, form in forms.items():
            for fac in (form.A1, form.A2):
                if id(fac) not in cache:
                    cache[id(fac)] = fac.matmat(Z)
            B[name][start:stop] = np.sum(cache[id(form.A1)] * cache[id(form.A2)], axis=0)
    return LeverageSet(P, B, "exact")


def hat_matrices(design: DesignMatrix, forms=None, solver: Optional[NormalEquations] = None):
    """Dense ``P = X S^{-1} X'`` and ``B = X S^{-1} A S^{-1} X'`` (small designs)."""
    forms = _as_form_dict(forms)
    solver = solver or NormalEquations(design)
    Z = solver.solve(design.X.T.toarray())
    P = np.asarray(design.X @ Z)
    P = 0.5 * (P + P.T)
    Bs = {}
    for name, form in forms.items():
        F1 = form.A1.matmat(Z)
        F2 = F1 if form.A2 is form.A1 else form.A2.matmat(Z)
        M = F1.T @ F2
        Bs[name] = 0.5 * (M + M.T)
    return P, Bs


def leave_out_residual(fit_result: FitResult, lev: LeverageSet, i: int,
                       delta: float = LEVERAGE_DELTA) -> float:
    """``y_i - x_i' beta_{-i}`` through the leverage identity."""
    if lev.P[i] > 1.0 - delta:
        raise LeverageOne(f"observation {i} has leverage {lev.P[i]:.12f}")
    return float(fit_result.residuals[i] / (1.0 - lev.P[i]))


def leave_out_residuals(fit_result: FitResult, lev: LeverageSet,
                        delta: float = LEVERAGE_DELTA) -> np.ndarray:
    lev.check_feasible(delta)
    M = lev.M
    res = fit_result.residuals
    return res / (M if res.ndim == 1 else M[:, None])
