"""Standard errors, confidence intervals and tests for leave-out estimates.

The variance of the leave-out estimator involves products
``sigma_i^2 sigma_l^2`` which are estimated from two independent split-sample
predictions per observation (``network.SplitSamplePlan``).  When a few
eigenvalues of ``S^{-1/2} A S^{-1/2}`` dominate, the estimate is split into
``q`` weakly identified quadratic terms plus a remainder, and the interval
inverts a minimum-distance statistic over the resulting ellipsoid with a
curvature-adjusted critical value.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.optimize as sopt
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import stats

from .design import DesignMatrix, Factor, QuadraticForm
from .errors import (InsufficientEigen, NoPlan, NotConverged, OptFailed, RankDeficientR,
                     SingularConditional, ValidationError)
from .estimators import kernel_matrix, theta_leave_out
from .network import SplitSamplePlan
from .solver import DENSE_THRESHOLD, NormalEquations, exact_leverages, fit, hat_matrices

Q_THRESHOLD = 0.1
CRITICAL_DRAWS = 1_000_000
HUTCHINSON_PROBES = 256
VHAT_FLOOR = 1e-6


# ---------------------------------------------------------------------------
# eigen-structure of the target
# ---------------------------------------------------------------------------

@dataclass
class EigenInfo:
    lambdas: np.ndarray
    vectors: np.ndarray  # generalized eigenvectors v with v'Sv = 1 (columns)
    weights: np.ndarray  # w_il = v_l'x_i, shape (n, q_max)
    trace_sq: float
    trace_sq_se: float = 0.0
    trace_exact: bool = True
    residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def shares(self) -> np.ndarray:
        if self.trace_sq <= 0:
            return np.zeros_like(self.lambdas)
        return np.minimum(self.lambdas ** 2 / self.trace_sq, 1.0)

    def lindeberg(self, s: int) -> float:
        s = min(s, self.weights.shape[1])
        if s == 0:
            return 0.0
        return float(np.max(np.sum(self.weights[:, :s] ** 2, axis=1)))


def top_eigen(design: DesignMatrix, form: QuadraticForm, q_max: int = 5,
              solver: Optional[NormalEquations] = None, dense_threshold: int = DENSE_THRESHOLD,
              probes: int = HUTCHINSON_PROBES, seed: int = 0) -> EigenInfo:
    """Largest-magnitude eigenpairs of ``A v = lambda S v``.

    Eigenvalues coincide with those of ``S^{-1/2} A S^{-1/2}`` and the
    weights ``w_il = v_l'x_i`` with that matrix's eigenvectors mapped back.
    """
    solver = solver or NormalEquations(design)
    k = design.k
    q_max = min(q_max, k)
    S = solver.S
    if k <= dense_threshold:
        A = form.to_dense()
        vals, vecs = sla.eigh(A, S.toarray())
        order = np.argsort(-np.abs(vals), kind="stable")
        vals, vecs = vals[order], vecs[:, order]
        trace_sq, se, exact = float(np.sum(vals ** 2)), 0.0, True
        vals, vecs = vals[:q_max], vecs[:, :q_max]
    else:
        Aop = spla.LinearOperator((k, k), matvec=lambda v: form.matvec(np.ravel(v)), dtype=float)
        Minv = spla.LinearOperator((k, k), matvec=lambda v: solver.solve(np.ravel(v)), dtype=float)
        try:
            vals, vecs = spla.eigsh(Aop, k=q_max, M=S, Minv=Minv, which="LM", tol=1e-12)
        except spla.ArpackNoConvergence as exc:
            raise NotConverged("eigen-solver did not converge") from exc
        order = np.argsort(-np.abs(vals), kind="stable")
        vals, vecs = vals[order], vecs[:, order]
        norms = np.sqrt(np.einsum("ij,ij->j", vecs, S @ vecs))
        vecs = vecs / norms
        rng = np.random.default_rng(seed)
        est = np.empty(probes)
        for t in range(probes):
            z = rng.integers(0, 2, k) * 2.0 - 1.0
            u = solver.solve(form.matvec(z))
            est[t] = form.matvec(solver.solve(z)) @ u
        trace_sq, se, exact = float(est.mean()), float(est.std(ddof=1) / np.sqrt(probes)), False
        trace_sq = max(trace_sq, float(np.sum(vals ** 2)))
    res = np.empty(len(vals))
    for j in range(len(vals)):
        r = form.matvec(vecs[:, j]) - vals[j] * (S @ vecs[:, j])
        res[j] = np.sqrt(max(r @ solver.solve(r), 0.0))
    W = np.asarray(design.X @ vecs)
    return EigenInfo(vals, vecs, W, trace_sq, se, exact, res)


def select_q(eig_or_shares, threshold: float = Q_THRESHOLD) -> int:
    """Number of leading eigenvalues whose squared share reaches ``threshold``."""
    shares = eig_or_shares.shares if isinstance(eig_or_shares, EigenInfo) else np.asarray(eig_or_shares)
    q = 0
    for s in shares:
        if s >= threshold:
            q += 1
        else:
            break
    return q


# ---------------------------------------------------------------------------
# split-sample variance estimation
# ---------------------------------------------------------------------------

class SplitVariance:
    """Dense ``n x n`` machinery shared by every variance estimate for one
    design, target and split plan; outcomes can then be swapped cheaply."""

    def __init__(self, design: DesignMatrix, form: QuadraticForm, plan: Optional[SplitSamplePlan],
                 solver: Optional[NormalEquations] = None):
        if plan is None:
            raise NoPlan("variance estimation needs a split-sample plan")
        if plan.n != design.n:
            raise ValidationError("split plan does not match the design")
        self.design = design
        self.form = form
        self.plan = plan
        self.solver = solver or NormalEquations(design)
        P, Bs = hat_matrices(design, form, self.solver)
        self.P = P
        self.B = Bs[form.name]
        self.Mdiag = 1.0 - np.diag(P)
        self.C = kernel_matrix(P, self.B)
        self.cases = plan.pair_cases()
        self.U1 = (plan.P1 != 0).toarray()
        self.Q = plan.Q.astype(bool)
        self.conservative = bool(self.Q.any())
        off = self.cases > 0
        self.b_share = float(np.sum(self.cases >= 4) / max(off.sum(), 1))
        self.C_tilde = self.kernel_tilde(self.C)
        self._q_cache = {}

    def kernel_tilde(self, C: np.ndarray) -> np.ndarray:
        """``C o C + 2[(C o P1)'(C o P2) + (C o P2)'(C o P1)]``."""
        CP1 = sp.csr_matrix(self.plan.P1.multiply(C))
        CP2 = sp.csr_matrix(self.plan.P2.multiply(C))
        T = np.asarray((CP1.T @ CP2).toarray())
        return C * C + 2.0 * (T + T.T)

    def outcome_terms(self, y) -> dict:
        y = np.asarray(y, dtype=float)
        res = y - self.P @ y
        loo = y * res / self.Mdiag
        yh1 = self.plan.P1 @ y
        yh2 = self.plan.P2 @ y
        cross = (y - yh1) * (y - yh2)
        dev = (y - y.mean()) ** 2
        s1 = y * (y - yh1)
        s2 = y * (y - yh2)
        return {
            "y": y, "sigma2": loo, "sigma2_cons": np.where(self.Q, dev, loo),
            "cross": cross, "cross_cons": np.where(self.Q, dev, cross), "dev": dev,
            "leave_pair": np.where(self.U1, s2[:, None], s1[:, None]),
        }

    def products(self, terms: dict, C_tilde: np.ndarray) -> np.ndarray:
        """Estimates of ``sigma_i^2 sigma_l^2`` for every ordered pair."""
        S = terms["leave_pair"]
        cross, dev = terms["cross"], terms["dev"]
        neg = C_tilde < 0
        c = self.cases
        out = np.zeros_like(S)
        m = c == 1
        out[m] = (S * S.T)[m]
        m = c == 2
        out[m] = (cross[:, None] * S.T)[m]
        m = c == 3
        out[m] = (S * cross[None, :])[m]
        m = (c == 4) & neg
        out[m] = (S * dev[None, :])[m]
        m = (c == 5) & neg
        out[m] = (dev[:, None] * S.T)[m]
        m = (c == 6) & neg
        out[m] = np.outer(dev, dev)[m]
        return out

    def vhat_theta(self, y, floor: float = VHAT_FLOOR):
        """Variance estimate of the leave-out estimator (conservative where
        the plan lacks a second predictor or a pair has no unbiased product)."""
        t = self.outcome_terms(y)
        h = self.C @ t["y"]
        first = 4.0 * float(np.sum(h ** 2 * t["cross_cons"]))
        correction = 2.0 * float(np.sum(self.C_tilde * self.products(t, self.C_tilde)))
        value = first - correction
        floored = value <= 0
        if floored:
            # the first term itself can be negative; scale the floor by its absolute version
            value = 4.0 * float(np.sum(h ** 2 * np.abs(t["cross_cons"]))) * floor
        diag = {"first_term": first, "correction": correction, "floored": bool(floored),
                "Q_share": float(self.Q.mean()), "B_share": self.b_share,
                "conservative": self.conservative}
        return value, diag

    def sigma_q(self, y, eig: EigenInfo, q: int):
        if q < 1:
            raise ValidationError("q must be at least 1")
        if eig.weights.shape[1] < q:
            raise InsufficientEigen(f"{q} eigenpairs requested, {eig.weights.shape[1]} available")
        key = (q, id(eig))
        if key not in self._q_cache:
            lam = eig.lambdas[:q]
            W = eig.weights[:, :q]
            Cq = kernel_matrix(self.P, self.B - (W * lam) @ W.T)
            self._q_cache[key] = (lam, W, Cq, self.kernel_tilde(Cq))
        lam, W, Cq, Ctq = self._q_cache[key]
        t = self.outcome_terms(y)
        yv = t["y"]
        h = Cq @ yv
        Vb = W.T @ (W * t["sigma2_cons"][:, None])
        Cbt = 2.0 * W.T @ (h * t["cross_cons"])
        Vt = 4.0 * float(np.sum(h ** 2 * t["cross_cons"])) \
            - 2.0 * float(np.sum(Ctq * self.products(t, Ctq)))
        Sigma = np.zeros((q + 1, q + 1))
        Sigma[:q, :q] = Vb
        Sigma[:q, q] = Sigma[q, :q] = Cbt
        Sigma[q, q] = Vt
        Sigma, projected = project_psd(Sigma, floor=VHAT_FLOOR)
        b_hat = W.T @ yv
        vb_diag = np.sum(W ** 2 * t["sigma2"][:, None], axis=0)
        theta_q = float(yv @ Cq @ yv)
        return WeakIdVariance(q, Sigma, self.conservative, b_hat, theta_q, lam.copy(), vb_diag,
                              projected)


@dataclass
class WeakIdVariance:
    q: int
    Sigma: np.ndarray
    conservative: bool
    b_hat: np.ndarray
    theta_q: float
    lambdas: np.ndarray
    vb_leave_out: np.ndarray  # sum_i w_il^2 sigma_i^2 (enters the decomposition)
    psd_projected: bool = False

    @property
    def Vb(self):
        return self.Sigma[: self.q, : self.q]

    @property
    def Cbt(self):
        return self.Sigma[: self.q, self.q]

    @property
    def Vt(self):
        return float(self.Sigma[self.q, self.q])

    def centre_value(self) -> float:
        return float(self.lambdas @ self.b_hat ** 2 + self.theta_q)


def project_psd(Sigma: np.ndarray, tol: float = 1e-10, floor: float = 0.0):
    """Clip eigenvalues below ``-tol * trace`` to zero; returns (matrix, flag).

    With ``floor > 0`` eigenvalues are also raised to ``floor`` times the
    largest one, which keeps the matrix invertible.
    """
    Sigma = 0.5 * (Sigma + Sigma.T)
    vals, vecs = np.linalg.eigh(Sigma)
    top = max(vals.max(), 0.0)
    low = floor * top
    if vals.min() < -tol * max(abs(np.trace(Sigma)), 1e-300) or (floor > 0 and vals.min() < low):
        vals = np.clip(vals, low, None)
        return (vecs * vals) @ vecs.T, True
    return Sigma, False


def vhat_theta(y, design: DesignMatrix, form: QuadraticForm, plan: Optional[SplitSamplePlan],
               solver: Optional[NormalEquations] = None):
    return SplitVariance(design, form, plan, solver).vhat_theta(y)


def sigma_q_hat(y, design: DesignMatrix, form: QuadraticForm, eig: EigenInfo, q: int,
                plan: Optional[SplitSamplePlan], solver: Optional[NormalEquations] = None):
    return SplitVariance(design, form, plan, solver).sigma_q(y, eig, q)


# ---------------------------------------------------------------------------
# curvature and critical values
# ---------------------------------------------------------------------------

def curvature(q: int, lambdas, Sigma) -> float:
    """Maximal curvature of the constraint manifold (0 when ``q = 0``)."""
    if q == 0:
        return 0.0
    Sigma = np.asarray(Sigma, dtype=float)
    lam = np.asarray(lambdas, dtype=float)[:q]
    Vb = Sigma[:q, :q]
    c = Sigma[:q, q]
    Vt = Sigma[q, q]
    if q == 1:
        vb = Vb[0, 0]
        if vb <= 0 or Vt <= 0:
            raise SingularConditional("degenerate variance for the q = 1 problem")
        rho2 = c[0] ** 2 / (vb * Vt)
        if 1.0 - rho2 < 1e-12:
            raise SingularConditional("b and theta_q are perfectly correlated")
        return float(2.0 * abs(lam[0]) * vb / (np.sqrt(Vt) * np.sqrt(1.0 - rho2)))
    cond = Vt - c @ np.linalg.solve(Vb, c)
    if cond <= 1e-12 * max(Vt, 1e-300):
        raise SingularConditional("conditional variance of theta_q is not positive")
    root = sla.sqrtm(Vb).real
    mid = root @ np.diag(lam) @ root
    top = np.max(np.abs(np.linalg.eigvalsh(0.5 * (mid + mid.T))))
    return float(2.0 * top / np.sqrt(cond))


_DRAW_CACHE: dict = {}


def _chi_draws(q: int, draws: int, seed: int):
    key = (q, draws, seed)
    if key not in _DRAW_CACHE:
        if len(_DRAW_CACHE) > 8:
            _DRAW_CACHE.clear()
        rng = np.random.default_rng([seed, q])
        _DRAW_CACHE[key] = (rng.chisquare(q, draws), rng.chisquare(1, draws))
    return _DRAW_CACHE[key]


def distance_to_disc(chi2_q, chi2_1, kappa: float):
    """``sqrt(chi_q^2 + (chi_1 + 1/kappa)^2) - 1/kappa`` written to stay finite at 0."""
    c1 = np.sqrt(chi2_1)
    num = kappa * (chi2_q + chi2_1) + 2.0 * c1
    den = np.sqrt(kappa ** 2 * chi2_q + (kappa * c1 + 1.0) ** 2) + 1.0
    return num / den


def critical_value(alpha: float, q: int, kappa: float, draws: int = CRITICAL_DRAWS, seed: int = 0,
                   return_se: bool = False):
    """``(1 - alpha)`` quantile of the distance statistic by seeded simulation.

    The same draws are reused for every ``kappa`` so the result is monotone
    in ``kappa``.  ``kappa = 0`` returns the exact chi-square(1) root.
    """
    if not 0 < alpha < 1:
        raise ValidationError("alpha must lie in (0, 1)")
    if kappa < 0:
        raise ValidationError("curvature must be nonnegative")
    if kappa == 0 or q == 0:
        z = float(np.sqrt(stats.chi2.ppf(1 - alpha, 1)))
        return (z, 0.0) if return_se else z
    cq, c1 = _chi_draws(q, draws, seed)
    r = distance_to_disc(cq, c1, float(kappa))
    idx = int(np.ceil((1 - alpha) * draws)) - 1
    if not return_se:
        return float(np.partition(r, idx)[idx])
    h = max(int(np.sqrt(draws)), 1)
    lo_i, hi_i = max(idx - h, 0), min(idx + h, draws - 1)
    part = np.partition(r, [lo_i, idx, hi_i])
    z, lo, hi = float(part[idx]), part[lo_i], part[hi_i]
    density_inv = (hi - lo) / (2 * h / draws)
    return z, float(density_inv * np.sqrt(alpha * (1 - alpha) / draws))


# ---------------------------------------------------------------------------
# confidence intervals
# ---------------------------------------------------------------------------

@dataclass
class ConfidenceInterval:
    lower: float
    upper: float
    alpha: float
    q: int
    kappa: float
    critical_value: float
    method: str
    jla_widening: float = 0.0

    def contains(self, value) -> bool:
        return self.lower <= value <= self.upper

    def as_dict(self) -> dict:
        return {"lower": self.lower, "upper": self.upper, "alpha": self.alpha, "q": self.q,
                "kappa": self.kappa, "critical_value": self.critical_value, "method": self.method,
                "jla_widening": self.jla_widening}


def interval_q1(b_hat: float, theta_q: float, lam: float, Sigma, z: float):
    """Closed-form endpoints for one weakly identified term.

    The maximiser over the ellipse solves a quartic; its real roots (plus
    the two ends of the feasible range) are scored with the boundary
    objective and the extremes returned.
    """
    Sigma = np.asarray(Sigma, dtype=float)
    vb, c, vt = Sigma[0, 0], Sigma[0, 1], Sigma[1, 1]
    if vb <= 0 or vt <= 0:
        raise SingularConditional("degenerate variance for the q = 1 problem")
    rho = c / np.sqrt(vb * vt)
    one_m = 1.0 - rho ** 2
    if one_m < 1e-12:
        raise SingularConditional("b and theta_q are perfectly correlated")
    slope = 2.0 * lam * np.sqrt(vb) / np.sqrt(vt * one_m)
    shift = rho / np.sqrt(one_m)
    # (b_hat - u)^2 (1 + h^2) - vb z^2 h^2 = 0 with h = slope*u + shift
    # plain coefficient arrays: numpy scalars times poly1d silently degrade to arrays
    d2 = np.polymul([-1.0, b_hat], [-1.0, b_hat])
    h2 = np.polymul([slope, shift], [slope, shift])
    quartic = np.polysub(np.polymul(d2, np.polyadd([1.0], h2)), float(vb * z ** 2) * h2)
    roots = np.roots(quartic) if np.any(quartic != 0) else np.array([])
    scale = max(abs(b_hat), z * np.sqrt(vb), 1.0)
    cands = [r.real for r in roots if abs(r.imag) <= 1e-8 * scale]
    half = z * np.sqrt(vb)
    cands += [b_hat - half, b_hat + half]
    cands = np.array([u for u in cands if abs(b_hat - u) <= half * (1 + 1e-12)])

    def objective(u, sign):
        slack = np.maximum(z ** 2 - (b_hat - u) ** 2 / vb, 0.0)
        return (lam * u ** 2 + theta_q - rho * np.sqrt(vt / vb) * (b_hat - u)
                + sign * np.sqrt(vt * one_m * slack))

    return float(np.min(objective(cands, -1.0))), float(np.max(objective(cands, 1.0)))


def interval_ellipsoid(b_hat, theta_q: float, lambdas, Sigma, z: float, seed: int = 0,
                       iterations: int = 2000):
    """Extremes of ``sum_l lambda_l b_l^2 + theta_q`` over the ellipsoid
    ``(x - x_hat)' Sigma^{-1} (x - x_hat) <= z^2`` by multistart projected
    gradient on the unit ball followed by an SLSQP polish."""
    b_hat = np.atleast_1d(np.asarray(b_hat, dtype=float))
    lam = np.atleast_1d(np.asarray(lambdas, dtype=float))
    q = len(b_hat)
    dim = q + 1
    Sigma = np.asarray(Sigma, dtype=float)
    try:
        L = np.linalg.cholesky(Sigma + 1e-300 * np.eye(dim))
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(Sigma)
        L = vecs * np.sqrt(np.clip(vals, 0, None))
    centre = np.append(b_hat, theta_q)
    G = z * L

    def value(xi):
        x = centre + G @ xi
        return float(lam @ x[:q] ** 2 + x[q])

    def grad(xi):
        x = centre + G @ xi
        gx = np.append(2.0 * lam * x[:q], 1.0)
        return G.T @ gx

    lip = 2.0 * np.max(np.abs(lam)) * np.linalg.norm(G[:q], 2) ** 2 if q else 0.0
    rng = np.random.default_rng(seed)
    starts = [np.zeros(dim)]
    for j in range(dim):
        e = np.zeros(dim)
        e[j] = 1.0
        starts += [e, -e]
    for _ in range(8 - 1):
        v = rng.standard_normal(dim)
        starts.append(v / np.linalg.norm(v) * rng.uniform() ** (1 / dim))

    def project(xi):
        nrm = np.linalg.norm(xi)
        return xi / nrm if nrm > 1 else xi

    def solve(sign):
        best, best_xi = -np.inf, None
        step = 1.0 / lip if lip > 0 else 1e6
        for xi in starts:
            xi = project(xi.copy())
            for _ in range(iterations):
                g = sign * grad(xi)
                nxt = project(xi + step * g if lip > 0 else g / max(np.linalg.norm(g), 1e-300))
                if np.linalg.norm(nxt - xi) < 1e-13:
                    xi = nxt
                    break
                xi = nxt
            val = sign * value(xi)
            if val > best:
                best, best_xi = val, xi
        res = sopt.minimize(lambda v: -sign * value(v), best_xi, jac=lambda v: -sign * grad(v),
                            method="SLSQP",
                            constraints=[{"type": "ineq", "fun": lambda v: 1.0 - v @ v,
                                          "jac": lambda v: -2.0 * v}],
                            options={"ftol": 1e-14, "maxiter": 500})
        if res.success and np.linalg.norm(res.x) <= 1 + 1e-9 and -res.fun > best:
            best = -res.fun
        if not np.isfinite(best):
            raise OptFailed("ellipsoid optimisation failed from every start")
        return sign * best

    return float(solve(-1.0)), float(solve(1.0))


def confidence_interval(theta_hat: float, q: int, vhat: Optional[float] = None,
                        weak: Optional[WeakIdVariance] = None, alpha: float = 0.05,
                        draws: int = CRITICAL_DRAWS, seed: int = 0, method: str = "auto",
                        jla_widening: float = 0.0) -> ConfidenceInterval:
    """Interval for ``theta`` given ``q`` weakly identified components.

    ``q = 0`` uses ``theta_hat +- z * sqrt(vhat)``; ``q >= 1`` needs the
    joint variance ``weak`` and inverts the minimum-distance statistic.
    """
    if q == 0:
        if vhat is None:
            raise ValidationError("q = 0 needs a variance estimate")
        z = critical_value(alpha, 0, 0.0)
        half = z * np.sqrt(max(vhat, 0.0))
        return ConfidenceInterval(theta_hat - half - jla_widening, theta_hat + half + jla_widening,
                                  alpha, 0, 0.0, z, "normal", jla_widening)
    if weak is None or weak.q != q:
        raise ValidationError("q >= 1 needs the matching joint variance")
    kappa = curvature(q, weak.lambdas, weak.Sigma)
    z = critical_value(alpha, q, kappa, draws, seed)
    if method == "auto":
        method = "closed_form_q1" if q == 1 else "ellipsoid_opt"
    if method == "closed_form_q1":
        if q != 1:
            raise ValidationError("closed form only exists for q = 1")
        lo, hi = interval_q1(weak.b_hat[0], weak.theta_q, weak.lambdas[0], weak.Sigma, z)
    elif method == "ellipsoid_opt":
        lo, hi = interval_ellipsoid(weak.b_hat, weak.theta_q, weak.lambdas, weak.Sigma, z, seed)
    else:
        raise ValidationError(f"unknown interval method {method!r}")
    return ConfidenceInterval(lo - jla_widening, hi + jla_widening, alpha, q, kappa, z, method,
                              jla_widening)


# ---------------------------------------------------------------------------
# linear restrictions
# ---------------------------------------------------------------------------

def restriction_form(design: DesignMatrix, R, solver: Optional[NormalEquations] = None):
    """Target ``A = R'(R S^{-1} R')^{-1} R / r`` as a psd factored form."""
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if R.shape[1] != design.k:
        raise ValidationError("R must have one column per regressor")
    r = R.shape[0]
    solver = solver or NormalEquations(design)
    if np.linalg.matrix_rank(R) < r:
        raise RankDeficientR("restriction matrix is not of full row rank")
    G = R @ solver.solve(R.T)
    try:
        L = np.linalg.cholesky(0.5 * (G + G.T))
    except np.linalg.LinAlgError as exc:
        raise RankDeficientR("R S^{-1} R' is singular") from exc
    F = sla.solve_triangular(L, R, lower=True) / np.sqrt(r)
    fac = Factor(sp.csr_matrix(F))
    return QuadraticForm(fac, fac, True, "restriction", r)


@dataclass
class TestReport:
    statistic: float
    p_value: float
    mode: str
    r: int
    theta_hat: float
    details: dict = field(default_factory=dict)


def test_linear_restrictions(design: DesignMatrix, R, y, mode: str = "growing_rank",
                             plan: Optional[SplitSamplePlan] = None,
                             solver: Optional[NormalEquations] = None, draws: int = 200_000,
                             seed: int = 0) -> TestReport:
    """Test ``R beta = 0`` with heteroscedasticity-robust leave-out statistics."""
    y = np.asarray(y, dtype=float)
    solver = solver or NormalEquations(design)
    form = restriction_form(design, R, solver)
    r = form.rank_hint
    fr = fit(design, y, solver)
    lev = exact_leverages(design, form, solver)
    est = theta_leave_out(y, fr, lev, form)
    theta = float(est.theta_hat)
    if mode == "growing_rank":
        vhat, diag = SplitVariance(design, form, plan, solver).vhat_theta(y)
        t = theta / np.sqrt(vhat)
        return TestReport(t, float(stats.norm.sf(t)), mode, r, theta, {"vhat": vhat, **diag})
    if mode == "fixed_rank":
        eig = top_eigen(design, form, r, solver)
        W = eig.weights[:, :r]
        b_hat = W.T @ y
        Vb = W.T @ (W * est.sigma2[:, None])
        Vb, _ = project_psd(Vb)
        rng = np.random.default_rng(seed)
        Z = rng.multivariate_normal(np.zeros(r), Vb, size=draws, method="eigh")
        null = (Z ** 2 - np.diag(Vb)) @ eig.lambdas[:r]
        p = float((np.sum(null >= theta) + 1) / (draws + 1))
        return TestReport(theta, p, mode, r, theta, {"b_hat": b_hat, "Vb": Vb,
                                                     "lambdas": eig.lambdas[:r]})
    raise ValidationError(f"unknown test mode {mode!r}")


test_linear_restrictions.__test__ = False  # not a pytest test
TestReport.__test__ = False


def equal_effects_restriction(design: DesignMatrix, first_cols, second_cols) -> np.ndarray:
    """``R = [I, -I, 0]`` pairing ``first_cols[j]`` with ``second_cols[j]``."""
    first_cols = np.asarray(first_cols)
    second_cols = np.asarray(second_cols)
    if len(first_cols) != len(second_cols):
        raise ValidationError("paired column lists must have equal length")
    R = np.zeros((len(first_cols), design.k))
    R[np.arange(len(first_cols)), first_cols] = 1.0
    R[np.arange(len(first_cols)), second_cols] = -1.0
    return R


def test_equal_effects(design: DesignMatrix, first_cols, second_cols, y, plan=None,
                       mode: str = "growing_rank", **kw) -> TestReport:
    """Are the effects in ``first_cols`` equal to those in ``second_cols``?"""
    R = equal_effects_restriction(design, first_cols, second_cols)
    return test_linear_restrictions(design, R, y, mode, plan, **kw)


test_equal_effects.__test__ = False


def restricted_leverage_identity(design: DesignMatrix, R, solver=None):
    """``B_ii`` of the restriction target and ``(P_X,ii - P_restricted,ii) / r``
    where the restricted design imposes ``R beta = 0`` (null-space basis)."""
    R = np.atleast_2d(np.asarray(R, dtype=float))
    solver = solver or NormalEquations(design)
    form = restriction_form(design, R, solver)
    lev = exact_leverages(design, form, solver)
    N = sla.null_space(R)
    Xr = design.X @ N
    restricted = NormalEquations(Xr)
    Z = restricted.solve(np.asarray(Xr).T)
    P_r = np.sum(np.asarray(Xr) * Z.T, axis=1)
    return lev.B["restriction"], (lev.P - P_r) / R.shape[0]


# ---------------------------------------------------------------------------
# one-call driver
# ---------------------------------------------------------------------------

def infer(y, design: DesignMatrix, form: QuadraticForm, plan: Optional[SplitSamplePlan],
          q: Optional[int] = None, alpha: float = 0.05, q_max: int = 5,
          threshold: float = Q_THRESHOLD, draws: int = CRITICAL_DRAWS, seed: int = 0,
          solver: Optional[NormalEquations] = None, context: Optional[SplitVariance] = None,
          eig: Optional[EigenInfo] = None) -> dict:
    """Point estimate, eigen diagnostics, chosen ``q`` and the interval(s).

    When the share of eigenvalue ``q + 1`` lies within 0.02 of the
    threshold, the interval for ``q + 1`` and the union are also returned.
    """
    solver = solver or NormalEquations(design)
    context = context or SplitVariance(design, form, plan, solver)
    y = np.asarray(y, dtype=float)
    fr = fit(design, y, solver)
    lev = exact_leverages(design, form, solver)
    est = theta_leave_out(y, fr, lev, form)
    eig = eig or top_eigen(design, form, q_max, solver)
    chosen = select_q(eig, threshold) if q is None else q
    vhat, vdiag = context.vhat_theta(y)

    def interval(qq):
        if qq == 0:
            return confidence_interval(est.theta_hat, 0, vhat=vhat, alpha=alpha), None
        weak = context.sigma_q(y, eig, qq)
        return confidence_interval(est.theta_hat, qq, weak=weak, alpha=alpha, draws=draws,
                                   seed=seed), weak

    ci, weak = interval(chosen)
    out = {"theta_hat": float(est.theta_hat), "estimate": est, "eig": eig, "q": chosen,
           "vhat": vhat, "se": float(np.sqrt(vhat)), "vhat_diagnostics": vdiag, "ci": ci,
           "weak": weak}
    shares = eig.shares
    if q is None and chosen < len(shares) and abs(shares[chosen] - threshold) < 0.02:
        alt, _ = interval(chosen + 1)
        out["ci_alt"] = alt
        out["ci_union"] = (min(ci.lower, alt.lower), max(ci.upper, alt.upper))
    return out
