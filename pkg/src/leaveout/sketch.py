"""Random-projection approximations of ``P_ii`` and ``B_ii``.

Rademacher matrices are generated in fixed row blocks from a seed keyed on
(seed, tag, block), so only their products with the design and the target
factors are ever held in memory.  Each distinct factor costs ``p`` solves;
the three dispersion targets of a two-way design share them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .design import DesignMatrix, Factor, QuadraticForm
from .errors import SketchedLeverageOne, ValidationError
from .solver import FitResult, LeverageSet, NormalEquations, _as_form_dict

BLOCK_ROWS = 4096
FALLBACK_MARGIN = 1e-3
_TAGS = {"P": 1, "B": 2}


@dataclass
class SketchConfig:
    p: int = 500
    seed: int = 0

    def __post_init__(self):
        if int(self.p) < 1:
            raise ValidationError("projection dimension p must be at least 1")
        self.p = int(self.p)


def rademacher_block(seed: int, tag: str, block: int, rows: int, p: int) -> np.ndarray:
    """Rows ``block*BLOCK_ROWS ...`` of a p-column Rademacher matrix (transposed)."""
    rng = np.random.default_rng([int(seed), _TAGS[tag], int(block)])
    return rng.integers(0, 2, size=(rows, p)).astype(float) * 2.0 - 1.0


def _project_rows(X, cfg: SketchConfig, tag: str) -> np.ndarray:
    """``(R X)'`` of shape (k, p) for a sparse matrix ``X``."""
    n, k = X.shape
    out = np.zeros((k, cfg.p))
    for b, start in enumerate(range(0, n, BLOCK_ROWS)):
        stop = min(start + BLOCK_ROWS, n)
        R = rademacher_block(cfg.seed, tag, b, stop - start, cfg.p)
        out += np.asarray(X[start:stop].T @ R)
    return out


def _project_factor(F: Factor, cfg: SketchConfig, tag: str) -> np.ndarray:
    """``(R F)'`` of shape (k, p), accumulated block by block."""
    m, k = F.shape
    out = np.zeros((k, cfg.p))
    colsum = np.zeros(cfg.p)
    for b, start in enumerate(range(0, m, BLOCK_ROWS)):
        stop = min(start + BLOCK_ROWS, m)
        R = rademacher_block(cfg.seed, tag, b, stop - start, cfg.p)
        if F.sqrt_w is not None:
            R = R * F.sqrt_w[start:stop, None]
        out += np.asarray(F.base[start:stop].T @ R)
        colsum += R.sum(axis=0)
    if F.centered:
        out -= np.outer(F.mean_row, colsum)
    return out


def sketched_leverages(design: DesignMatrix, forms, cfg: SketchConfig,
                       solver: Optional[NormalEquations] = None,
                       fallback_margin: float = FALLBACK_MARGIN) -> LeverageSet:
    """Unbiased sketches ``(1/p)||R_P X S^{-1} x_i||^2`` and
    ``(1/p)(R_B A1 S^{-1} x_i)'(R_B A2 S^{-1} x_i)``.

    Rows whose sketched leverage exceeds ``1 - fallback_margin`` get exact
    values instead (listed in ``exact_rows``).
    """
    forms = _as_form_dict(forms)
    solver = solver or NormalEquations(design)
    X = design.X
    p = cfg.p
    XZ = np.asarray(X @ solver.solve(_project_rows(X, cfg, "P")))
    P = np.einsum("ij,ij->i", XZ, XZ) / p
    projected = {}
    for form in forms.values():
        for fac in (form.A1, form.A2):
            if id(fac) not in projected:
                projected[id(fac)] = np.asarray(X @ solver.solve(_project_factor(fac, cfg, "B")))
    B = {}
    for name, form in forms.items():
        B[name] = np.einsum("ij,ij->i", projected[id(form.A1)], projected[id(form.A2)]) / p
    exact_rows = np.flatnonzero(P > 1.0 - fallback_margin)
    if len(exact_rows):
        Z = solver.solve(X[exact_rows].T.toarray())
        P[exact_rows] = np.asarray(X[exact_rows].multiply(Z.T).sum(axis=1)).ravel()
        for name, form in forms.items():
            B[name][exact_rows] = np.sum(form.A1.matmat(Z) * form.A2.matmat(Z), axis=0)
    mode = f"sketched({p})" if not len(exact_rows) else f"hybrid({p})"
    return LeverageSet(P, B, mode, p, exact_rows)


def nonlinearity_correction(P_hat: np.ndarray, p: int) -> np.ndarray:
    """Multiplicative factor removing the leading bias of ``1/(1 - P_hat)``."""
    return 1.0 - (3.0 * P_hat ** 3 + P_hat ** 2) / (p * (1.0 - P_hat))


def jla_sigma2(y, fit_result: FitResult, sketched: LeverageSet, cfg: Optional[SketchConfig] = None):
    """Bias-corrected leave-out variances built from sketched leverages."""
    y = np.asarray(y, dtype=float)
    P_hat = sketched.P
    p = sketched.p if sketched.p is not None else (cfg.p if cfg else None)
    if p is None:
        raise ValidationError("sketched leverages must record their projection dimension")
    if np.any(P_hat >= 1.0):
        bad = int(np.argmax(P_hat))
        raise SketchedLeverageOne(f"sketched leverage of observation {bad} is {P_hat[bad]:.6f}; "
                                  "increase p")
    factor = nonlinearity_correction(P_hat, p)
    factor[sketched.exact_rows] = 1.0
    res = fit_result.residuals
    if res.ndim == 2:
        return y * res / (1.0 - P_hat)[:, None] * factor[:, None]
    return y * res / (1.0 - P_hat) * factor


def jla_bias_bound(lev: LeverageSet, sigma2, form_name: Optional[str] = None) -> float:
    """``(1/p) sum_i P_ii^2 |B_ii| |sigma_i^2|`` for a sketched leverage set."""
    if lev.p is None:
        raise ValidationError("bias bound needs a sketched leverage set")
    if form_name is None:
        if len(lev.B) != 1:
            raise ValidationError("name the target when several are sketched")
        form_name = next(iter(lev.B))
    B = lev.B[form_name]
    keep = np.ones(len(B), dtype=bool)
    keep[lev.exact_rows] = False
    terms = lev.P ** 2 * np.abs(B) * np.abs(np.asarray(sigma2, float))
    return float(terms[keep].sum() / lev.p)
