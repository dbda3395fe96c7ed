"""Panels, design matrices and quadratic-form targets.

A ``DesignMatrix`` holds a sparse regressor matrix together with enough
bookkeeping about person-years to build the dispersion targets used for
variance decompositions (firm effects, person effects, their covariance,
group effects, slopes, R^2).  A ``QuadraticForm`` stores the target
``A = (A1'A2 + A2'A1) / 2`` through its two factors so that both exact and
sketched leverage computations can work without forming ``A``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import EmptyPanel, LabelMismatch, SingletonWorker, ValidationError, DuplicateObservation


def id_sort_key(value):
    """Order ids numerically when they look like integers, else as strings."""
    try:
        return (0, int(value), "")
    except (TypeError, ValueError):
        return (1, 0, str(value))


def sorted_ids(values) -> list:
    return sorted(set(values), key=id_sort_key)


# ---------------------------------------------------------------------------
# panel
# ---------------------------------------------------------------------------

@dataclass
class Panel:
    """Person-year records.  All arrays share the same length and order."""

    worker: np.ndarray
    firm: np.ndarray
    period: np.ndarray
    outcome: np.ndarray
    covariates: Optional[np.ndarray] = None
    covariate_names: tuple = ()

    def __post_init__(self):
        self.worker = np.asarray(self.worker, dtype=object)
        self.firm = np.asarray(self.firm, dtype=object)
        self.period = np.asarray(self.period, dtype=np.int64)
        self.outcome = np.asarray(self.outcome, dtype=float)
        n = len(self.worker)
        if not (len(self.firm) == len(self.period) == len(self.outcome) == n):
            raise ValidationError("panel columns have different lengths")
        if self.covariates is not None:
            cov = np.asarray(self.covariates, dtype=float)
            if cov.ndim == 1:
                cov = cov[:, None]
            if cov.shape[0] != n:
                raise ValidationError("covariate rows do not match panel rows")
            self.covariates = cov
            if not self.covariate_names:
                self.covariate_names = tuple(f"covariate_{j}" for j in range(cov.shape[1]))
        seen = {}
        for i, key in enumerate(zip(self.worker, self.period)):
            if key in seen:
                raise DuplicateObservation(
                    f"worker {key[0]!r} observed twice in period {key[1]} (rows {seen[key]} and {i})",
                    line=i,
                )
            seen[key] = i

    @property
    def n(self) -> int:
        return len(self.worker)

    def workers(self) -> list:
        """Distinct workers in order of first appearance."""
        return list(dict.fromkeys(self.worker.tolist()))

    def group_index(self) -> dict:
        """Map worker -> observation indices ordered by period."""
        groups: dict = {}
        for i, g in enumerate(self.worker.tolist()):
            groups.setdefault(g, []).append(i)
        return {g: sorted(idx, key=lambda i: self.period[i]) for g, idx in groups.items()}

    def subset(self, mask) -> "Panel":
        mask = np.asarray(mask)
        cov = None if self.covariates is None else self.covariates[mask]
        return Panel(self.worker[mask], self.firm[mask], self.period[mask], self.outcome[mask],
                     cov, self.covariate_names)

    def with_outcome(self, outcome) -> "Panel":
        return Panel(self.worker, self.firm, self.period, np.asarray(outcome, float),
                     self.covariates, self.covariate_names)

    def firm_sizes(self) -> dict:
        sizes: dict = {}
        for j in self.firm.tolist():
            sizes[j] = sizes.get(j, 0) + 1
        return sizes


def residualize_on_periods(panel: Panel) -> Panel:
    """Remove period means from the outcome (a first-step year-effect adjustment)."""
    y = panel.outcome.copy()
    for t in np.unique(panel.period):
        rows = panel.period == t
        y[rows] -= y[rows].mean()
    return panel.with_outcome(y + panel.outcome.mean())


# ---------------------------------------------------------------------------
# factors of quadratic forms
# ---------------------------------------------------------------------------

class Factor:
    """Operator ``F`` of shape (m, k) with rows ``sqrt(w_i) (m_i - mbar)``.

    ``base`` is a sparse (m, k) matrix; ``weights`` are normalised to sum to
    one; ``centered`` subtracts the weighted mean row.  With ``weights=None``
    and ``centered=False`` the factor is just ``base``.
    """

    def __init__(self, base, weights=None, centered=False):
        self.base = sp.csr_matrix(base)
        m = self.base.shape[0]
        if weights is None:
            self.sqrt_w = None
            w = np.full(m, 1.0 / max(m, 1))
        else:
            w = np.asarray(weights, dtype=float)
            w = w / w.sum()
            self.sqrt_w = np.sqrt(w)
        self.centered = centered
        self.mean_row = np.asarray(self.base.T @ w).ravel() if centered else None

    @property
    def shape(self):
        return self.base.shape

    def matmat(self, V):
        V = np.asarray(V, dtype=float)
        vec = V.ndim == 1
        if vec:
            V = V[:, None]
        out = np.asarray(self.base @ V)
        if self.centered:
            out = out - self.mean_row @ V
        if self.sqrt_w is not None:
            out = out * self.sqrt_w[:, None]
        return out[:, 0] if vec else out

    def rmatmat(self, U):
        U = np.asarray(U, dtype=float)
        vec = U.ndim == 1
        if vec:
            U = U[:, None]
        if self.sqrt_w is not None:
            U = U * self.sqrt_w[:, None]
        out = np.asarray(self.base.T @ U)
        if self.centered:
            out = out - np.outer(self.mean_row, U.sum(axis=0))
        return out[:, 0] if vec else out

    def toarray(self):
        return self.matmat(np.eye(self.shape[1]))


def indicator_factor(cols: np.ndarray, k: int, weights=None, centered=True) -> Factor:
    """Rows are unit vectors ``e_{cols[i]}`` (zero rows where ``cols[i] < 0``)."""
    cols = np.asarray(cols, dtype=np.int64)
    keep = cols >= 0
    rows = np.arange(len(cols))[keep]
    base = sp.csr_matrix((np.ones(keep.sum()), (rows, cols[keep])), shape=(len(cols), k))
    if weights is None:
        weights = np.ones(len(cols))
    return Factor(base, weights=weights, centered=centered)


@dataclass
class QuadraticForm:
    """Symmetric target ``A = (A1'A2 + A2'A1)/2`` acting on coefficients."""

    A1: Factor
    A2: Factor
    psd: bool
    name: str = "custom"
    rank_hint: Optional[int] = None

    @property
    def k(self) -> int:
        return self.A1.shape[1]

    def matvec(self, v):
        return 0.5 * (self.A1.rmatmat(self.A2.matmat(v)) + self.A2.rmatmat(self.A1.matmat(v)))

    def quad(self, v, w=None):
        """``v'Aw`` (``v'Av`` when ``w`` is omitted); columns are handled pairwise."""
        if w is None:
            a1 = self.A1.matmat(v)
            a2 = a1 if self.A2 is self.A1 else self.A2.matmat(v)
            return np.sum(a1 * a2, axis=0)
        return np.sum(np.asarray(v) * self.matvec(w), axis=0)

    def to_dense(self):
        F1 = self.A1.toarray()
        F2 = F1 if self.A2 is self.A1 else self.A2.toarray()
        M = F1.T @ F2
        return 0.5 * (M + M.T)


# ---------------------------------------------------------------------------
# design matrices
# ---------------------------------------------------------------------------

@dataclass
class DesignMatrix:
    """Sparse regressors with role tags per column.

    ``py_person`` / ``py_firm`` / ``py_slope`` give, for each person-year, the
    column carrying that person's (group's) effect, firm effect or slope
    (``-1`` for the normalised firm, ``None`` when the design has no such
    role).  ``py_weights`` are the person-year weights used by dispersion
    targets.
    """

    X: sp.csr_matrix
    labels: tuple
    kind: str = "generic"
    y: Optional[np.ndarray] = None
    column_keys: tuple = ()
    row_ids: Optional[np.ndarray] = None
    py_person: Optional[np.ndarray] = None
    py_firm: Optional[np.ndarray] = None
    py_slope: Optional[np.ndarray] = None
    py_weights: Optional[np.ndarray] = None
    py_row: Optional[np.ndarray] = None
    reference_firm: object = None
    firm_ids: tuple = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = sp.csr_matrix(self.X, dtype=float)
        if len(self.labels) != self.X.shape[1]:
            raise ValidationError("one label per column required")
        if self.y is not None:
            self.y = np.asarray(self.y, dtype=float)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def k(self) -> int:
        return self.X.shape[1]

    def gram(self) -> sp.csr_matrix:
        return sp.csr_matrix(self.X.T @ self.X)

    def columns(self, role: str) -> np.ndarray:
        return np.array([j for j, lab in enumerate(self.labels) if lab == role], dtype=np.int64)

    def take_rows(self, rows) -> "DesignMatrix":
        """Generic design on a subset of rows (dispersion bookkeeping dropped)."""
        rows = np.asarray(rows)
        y = None if self.y is None else self.y[rows]
        return DesignMatrix(self.X[rows], self.labels, "generic", y, self.column_keys)

    @classmethod
    def from_matrix(cls, X, y=None, labels=None) -> "DesignMatrix":
        X = sp.csr_matrix(X, dtype=float)
        if labels is None:
            labels = ("regressor",) * X.shape[1]
        return cls(X, tuple(labels), "generic", y)


def _reference_firm(panel: Panel):
    sizes = panel.firm_sizes()
    return min(sizes, key=lambda j: (-sizes[j], id_sort_key(j)))


def build_design(panel: Panel, model: str = "levels", include_covariates: bool = False,
                 normalized_firm=None) -> DesignMatrix:
    """Two-way fixed effects design in levels or in first differences.

    The firm effect of ``normalized_firm`` (default: the largest firm by
    person-years, ties to the lowest id) is set to zero.
    """
    if panel.n == 0:
        raise EmptyPanel("panel has no observations")
    groups = panel.group_index()
    short = [g for g, idx in groups.items() if len(idx) < 2]
    if short:
        raise SingletonWorker(f"{len(short)} worker(s) observed once, e.g. {short[0]!r}")
    ref = _reference_firm(panel) if normalized_firm is None else normalized_firm
    firms = [j for j in sorted_ids(panel.firm.tolist()) if j != ref]
    if ref not in set(panel.firm.tolist()):
        raise ValidationError(f"normalized firm {ref!r} not in panel")
    firm_col = {j: c for c, j in enumerate(firms)}
    workers = panel.workers()
    covs = panel.covariates if include_covariates and panel.covariates is not None else None
    n_cov = 0 if covs is None else covs.shape[1]
    py_firm_local = np.array([firm_col.get(j, -1) for j in panel.firm.tolist()], dtype=np.int64)

    if model == "levels":
        person_col = {g: c for c, g in enumerate(workers)}
        N, J = len(workers), len(firms)
        n = panel.n
        pc = np.array([person_col[g] for g in panel.worker.tolist()])
        rows, cols = [np.arange(n)], [pc]
        fmask = py_firm_local >= 0
        rows.append(np.arange(n)[fmask])
        cols.append(N + py_firm_local[fmask])
        data = np.ones(sum(len(r) for r in rows))
        X = sp.csr_matrix((data, (np.concatenate(rows), np.concatenate(cols))), shape=(n, N + J))
        if n_cov:
            X = sp.hstack([X, sp.csr_matrix(covs)], format="csr")
        labels = ("person",) * N + ("firm",) * J + ("covariate",) * n_cov
        keys = tuple(workers) + tuple(firms) + tuple(panel.covariate_names[:n_cov])
        py_firm = np.where(py_firm_local >= 0, N + py_firm_local, -1)
        return DesignMatrix(X, labels, "levels", panel.outcome.copy(), keys,
                            row_ids=panel.worker.copy(), py_person=pc, py_firm=py_firm,
                            py_weights=np.ones(n), py_row=np.arange(n), reference_firm=ref,
                            firm_ids=tuple(firms))

    if model == "first_difference":
        long = [g for g in workers if len(groups[g]) != 2]
        if long:
            raise ValidationError("first-difference design needs exactly two periods per worker")
        J = len(firms)
        data, ri, ci, y = [], [], [], []
        py_rows, py_obs = [], []
        dcov = np.zeros((len(workers), n_cov))
        for r, g in enumerate(workers):
            i1, i2 = groups[g]
            for obs, sign in ((i2, 1.0), (i1, -1.0)):
                c = py_firm_local[obs]
                if c >= 0:
                    ri.append(r)
                    ci.append(c)
                    data.append(sign)
            y.append(panel.outcome[i2] - panel.outcome[i1])
            if n_cov:
                dcov[r] = covs[i2] - covs[i1]
            py_rows += [r, r]
            py_obs += [i1, i2]
        X = sp.csr_matrix((data, (ri, ci)), shape=(len(workers), J))
        X.sum_duplicates()
        X.eliminate_zeros()
        if n_cov:
            X = sp.hstack([X, sp.csr_matrix(dcov)], format="csr")
        labels = ("firm",) * J + ("covariate",) * n_cov
        keys = tuple(firms) + tuple(panel.covariate_names[:n_cov])
        py_obs = np.array(py_obs)
        return DesignMatrix(X, labels, "first_difference", np.array(y), keys,
                            row_ids=np.array(workers, dtype=object), py_person=None,
                            py_firm=py_firm_local[py_obs], py_weights=np.ones(len(py_obs)),
                            py_row=np.array(py_rows), reference_firm=ref, firm_ids=tuple(firms),
                            meta={"py_obs": py_obs})

    raise ValidationError(f"unknown model {model!r}")


def group_design(groups, y=None, slopes=None, covariates=None) -> DesignMatrix:
    """One-way layout: a dummy per group, optionally a group-specific slope.

    With ``slopes`` given the columns alternate (intercept_g, slope_g) per
    group, i.e. the random coefficients model ``y = a_g + z * c_g + e``.
    """
    groups = np.asarray(groups, dtype=object)
    n = len(groups)
    if n == 0:
        raise EmptyPanel("no observations")
    ids = sorted_ids(groups.tolist())
    col = {g: c for c, g in enumerate(ids)}
    gc = np.array([col[g] for g in groups.tolist()])
    G = len(ids)
    if slopes is None:
        X = sp.csr_matrix((np.ones(n), (np.arange(n), gc)), shape=(n, G))
        labels = ("group",) * G
        keys = tuple(ids)
        py_person, py_slope = gc, None
    else:
        z = np.asarray(slopes, dtype=float)
        rows = np.concatenate([np.arange(n), np.arange(n)])
        cols = np.concatenate([2 * gc, 2 * gc + 1])
        X = sp.csr_matrix((np.concatenate([np.ones(n), z]), (rows, cols)), shape=(n, 2 * G))
        labels = ("group", "slope") * G
        keys = tuple(x for g in ids for x in (g, g))
        py_person, py_slope = 2 * gc, 2 * gc + 1
    n_cov = 0
    if covariates is not None:
        cov = np.asarray(covariates, dtype=float)
        cov = cov[:, None] if cov.ndim == 1 else cov
        n_cov = cov.shape[1]
        X = sp.hstack([X, sp.csr_matrix(cov)], format="csr")
        labels = labels + ("covariate",) * n_cov
        keys = keys + tuple(f"covariate_{j}" for j in range(n_cov))
    return DesignMatrix(X, labels, "group", y, keys, row_ids=groups.copy(), py_person=py_person,
                        py_slope=py_slope, py_weights=np.ones(n), py_row=np.arange(n))


# ---------------------------------------------------------------------------
# estimands
# ---------------------------------------------------------------------------

ESTIMAND_KINDS = ("var_firm", "cov_person_firm", "var_person", "coefficient_of_determination",
                  "anova_group_variance", "random_coefficient_variance", "custom")


@dataclass
class EstimandSpec:
    kind: str
    centered: Optional[bool] = None
    weights: Optional[np.ndarray] = None
    matrix: Optional[np.ndarray] = None
    psd: bool = False

    def __post_init__(self):
        if self.kind not in ESTIMAND_KINDS:
            raise ValidationError(f"unknown estimand {self.kind!r}")


def _py_weights(design: DesignMatrix, estimand: EstimandSpec):
    if estimand.weights is not None:
        return np.asarray(estimand.weights, dtype=float)
    return design.py_weights


def build_quadratic_form(design: DesignMatrix, estimand: EstimandSpec) -> QuadraticForm:
    kind = estimand.kind
    k = design.k
    if kind == "custom":
        if estimand.matrix is None:
            raise ValidationError("custom estimand needs a matrix")
        A = np.asarray(estimand.matrix, dtype=float)
        if A.shape != (k, k):
            raise LabelMismatch("custom matrix does not match the number of columns")
        if not np.allclose(A, A.T, rtol=0, atol=1e-12 * max(1.0, np.abs(A).max())):
            raise ValidationError("custom matrix must be symmetric")
        if estimand.psd:
            vals, vecs = np.linalg.eigh(0.5 * (A + A.T))
            keep = vals > 1e-14 * max(1.0, vals.max())
            F = Factor(sp.csr_matrix((vecs[:, keep] * np.sqrt(vals[keep])).T))
            return QuadraticForm(F, F, True, "custom", int(keep.sum()))
        return QuadraticForm(Factor(sp.csr_matrix(A)), Factor(sp.identity(k, format="csr")), False,
                             "custom")

    if kind == "coefficient_of_determination":
        F = Factor(design.X, weights=np.ones(design.n), centered=True)
        return QuadraticForm(F, F, True, kind)

    w = _py_weights(design, estimand)
    centered = True if estimand.centered is None else estimand.centered

    def person_factor():
        if design.py_person is None:
            raise LabelMismatch(f"{kind} needs person or group effect columns")
        return indicator_factor(design.py_person, k, w, centered)

    def firm_factor():
        if design.py_firm is None:
            raise LabelMismatch(f"{kind} needs firm effect columns")
        return indicator_factor(design.py_firm, k, w, centered)

    if kind == "var_firm":
        F = firm_factor()
        return QuadraticForm(F, F, True, kind)
    if kind == "var_person" or kind == "anova_group_variance":
        F = person_factor()
        return QuadraticForm(F, F, True, kind)
    if kind == "cov_person_firm":
        return QuadraticForm(person_factor(), firm_factor(), False, kind)
    if kind == "random_coefficient_variance":
        if design.py_slope is None:
            raise LabelMismatch("random_coefficient_variance needs slope columns")
        centered = False if estimand.centered is None else estimand.centered
        F = indicator_factor(design.py_slope, k, w, centered)
        return QuadraticForm(F, F, True, kind)
    raise ValidationError(f"unhandled estimand {kind!r}")


def akm_forms(design: DesignMatrix) -> dict:
    """The three dispersion targets of a levels design sharing factor objects."""
    f = indicator_factor(design.py_firm, design.k, design.py_weights, True)
    d = indicator_factor(design.py_person, design.k, design.py_weights, True)
    return {
        "var_firm": QuadraticForm(f, f, True, "var_firm"),
        "cov_person_firm": QuadraticForm(d, f, False, "cov_person_firm"),
        "var_person": QuadraticForm(d, d, True, "var_person"),
    }


def direct_dispersion(values_per_person_year: np.ndarray, weights=None) -> float:
    """Weighted variance of a per-person-year quantity (oracle for targets)."""
    v = np.asarray(values_per_person_year, dtype=float)
    w = np.ones(len(v)) if weights is None else np.asarray(weights, float)
    w = w / w.sum()
    m = w @ v
    return float(w @ (v - m) ** 2)


def expand_coefficients(design: DesignMatrix, beta: np.ndarray, role_cols: Optional[np.ndarray]):
    """Per-person-year coefficient values for the given column index array."""
    padded = np.append(np.asarray(beta, float), 0.0)
    return padded[np.where(role_cols >= 0, role_cols, len(beta))]
