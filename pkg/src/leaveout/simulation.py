"""Synthetic mobility networks, heteroscedastic wages and a Monte Carlo harness."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .design import DesignMatrix, EstimandSpec, Panel, QuadraticForm, build_design, build_quadratic_form
from .errors import DisconnectedDraw, ValidationError
from .estimators import theta_homosc, theta_leave_out, theta_plugin
from .network import MobilityGraph, is_connected
from .solver import LeverageSet, NormalEquations, exact_leverages, fit

MAX_REDRAWS = 50


@dataclass
class SbmConfig:
    J: int = 40
    N: int = 400
    p_b: float = 0.5
    seed: int = 0
    blocks: int = 2

    def __post_init__(self):
        if self.J < 4 or self.J % self.blocks:
            raise ValidationError("J must be at least 4 and divisible by the number of blocks")
        if self.N < self.J:
            raise ValidationError("need at least as many movers as firms")
        if not 0 < self.p_b <= 0.5:
            raise ValidationError("p_b must lie in (0, 0.5]")


def _draw_sbm(cfg: SbmConfig, rng):
    size = cfg.J // cfg.blocks
    block_of = np.repeat(np.arange(cfg.blocks), size)
    edges = []
    for g in range(cfg.N):
        between = rng.uniform() < cfg.p_b
        b1 = int(rng.integers(cfg.blocks))
        if between:
            b2 = (b1 + 1 + int(rng.integers(cfg.blocks - 1))) % cfg.blocks
        else:
            b2 = b1
        while True:
            a = b1 * size + int(rng.integers(size))
            b = b2 * size + int(rng.integers(size))
            if a != b:
                break
        if rng.uniform() < 0.5:
            a, b = b, a
        edges.append((g, a, b))
    return edges, block_of


def gen_sbm(cfg: SbmConfig, block_effects: Optional[Sequence[float]] = None,
            within_sd: float = 0.0, max_redraws: int = MAX_REDRAWS):
    """Stochastic block mobility network with one move per worker.

    Returns the graph, firm effects (indexed by firm id ``0..J-1``), the
    block of each firm and the share of between-block moves.  Disconnected
    draws are regenerated from fresh substreams.
    """
    block_effects = np.zeros(cfg.blocks) if block_effects is None else np.asarray(block_effects, float)
    for attempt in range(max_redraws):
        rng = np.random.default_rng([cfg.seed, attempt])
        edges, block_of = _draw_sbm(cfg, rng)
        graph = MobilityGraph.from_edges(edges, firms=range(cfg.J))
        if is_connected(graph):
            psi = block_effects[block_of] + within_sd * rng.standard_normal(cfg.J)
            between = np.mean([block_of[a] != block_of[b] for _, a, b in edges])
            return graph, psi, block_of, float(between)
    raise DisconnectedDraw(f"no connected draw in {max_redraws} attempts")


def graph_panel(graph: MobilityGraph, outcome=None) -> Panel:
    """Two-period panel of the movers in ``graph`` (outcomes default to zero)."""
    worker, firm, period = [], [], []
    for w, seq in graph.movers.items():
        for t, j in enumerate(seq[:2]):
            worker.append(w)
            firm.append(j)
            period.append(t)
    n = len(worker)
    out = np.zeros(n) if outcome is None else np.asarray(outcome, float)
    return Panel(np.array(worker, dtype=object), np.array(firm, dtype=object), np.array(period),
                 out)


def sbm_design(graph: MobilityGraph, psi: np.ndarray, normalized_firm=None):
    """First-difference design of an SBM draw and the matching true coefficients."""
    panel = graph_panel(graph)
    design = build_design(panel, "first_difference", normalized_firm=normalized_firm)
    ref = design.reference_firm
    beta = np.array([psi[int(j)] - psi[int(ref)] for j in design.firm_ids])
    return design, beta


@dataclass
class HeteroModel:
    """Log-linear error variance in leverages and firm sizes."""

    a0: float = 0.0
    a1: float = 0.0
    a2: float = 0.0
    a3: float = 0.0
    a4: float = 0.0

    def variances(self, B, P, size_second, size_first) -> np.ndarray:
        return np.exp(self.a0 + self.a1 * np.asarray(B) + self.a2 * np.asarray(P)
                      + self.a3 * np.log(size_second) + self.a4 * np.log(size_first))


def firm_degrees(graph: MobilityGraph) -> dict:
    deg = {j: 0 for j in graph.firms}
    for _, a, b in graph.edges():
        deg[a] += 1
        deg[b] += 1
    return deg


def first_difference_variances(design: DesignMatrix, graph: MobilityGraph, het: HeteroModel,
                               lev: LeverageSet, form_name: str) -> np.ndarray:
    """Per-mover error variances with firm sizes taken as network degrees."""
    deg = firm_degrees(graph)
    L1, L2 = [], []
    for w in design.row_ids.tolist():
        a, b = graph.movers[w][:2]
        L1.append(max(deg[a], 1))
        L2.append(max(deg[b], 1))
    return het.variances(lev.B[form_name], lev.P, np.array(L2), np.array(L1))


def draw_errors(variances, law: str = "normal", df: float = 5.0, rng=None, reps: Optional[int] = None):
    """Independent errors with the given variances (normal or scaled t)."""
    rng = np.random.default_rng(rng)
    sd = np.sqrt(np.asarray(variances, float))
    shape = sd.shape if reps is None else (len(sd), reps)
    if law == "normal":
        e = rng.standard_normal(shape)
    elif law == "scaled_t":
        if df <= 4:
            raise ValidationError("scaled t needs more than four degrees of freedom")
        e = rng.standard_t(df, shape) / np.sqrt(df / (df - 2))
    else:
        raise ValidationError(f"unknown error law {law!r}")
    return e * (sd if reps is None else sd[:, None])


def gen_wages(design: DesignMatrix, beta, variances, error_law: str = "normal", seed: int = 0,
              reps: Optional[int] = None, df: float = 5.0):
    """``y = X beta + e``; a matrix with ``reps`` columns when requested."""
    mean = np.asarray(design.X @ np.asarray(beta, float))
    e = draw_errors(variances, error_law, df, np.random.default_rng(seed), reps)
    return (mean if reps is None else mean[:, None]) + e


# ---------------------------------------------------------------------------
# Monte Carlo harness
# ---------------------------------------------------------------------------

@dataclass
class Scenario:
    design: DesignMatrix
    form: QuadraticForm
    beta: np.ndarray
    variances: np.ndarray
    plan: object = None
    qs: tuple = (0,)
    alpha: float = 0.05
    error_law: str = "normal"
    seed: int = 0
    draws: int = 200_000
    name: str = "scenario"


@dataclass
class MonteCarloReport:
    theta: float
    estimates: dict  # method -> array over reps
    se: Optional[np.ndarray] = None
    coverage: dict = field(default_factory=dict)
    intervals: dict = field(default_factory=dict)
    analytic_pi_bias: float = 0.0

    def summary(self) -> dict:
        reps = len(next(iter(self.estimates.values())))
        out = {"theta": self.theta, "reps": reps, "analytic_pi_bias": self.analytic_pi_bias}
        for m, v in self.estimates.items():
            out[f"bias_{m}"] = float(v.mean() - self.theta)
            out[f"mcse_{m}"] = float(v.std(ddof=1) / np.sqrt(reps))
        kss = self.estimates["KSS"]
        out["sd_KSS"] = float(kss.std(ddof=1))
        out["skew_KSS"] = float(stats.skew(kss))
        z = (kss - kss.mean()) / kss.std(ddof=1)
        out["ks_normal_p"] = float(stats.kstest(z, "norm").pvalue)
        if self.se is not None:
            out["se_ratio"] = float(np.mean(self.se) / kss.std(ddof=1))
            out["variance_ratio"] = float(np.mean(self.se ** 2) / kss.var(ddof=1))
        for q, c in self.coverage.items():
            out[f"coverage_q{q}"] = float(np.mean(c))
        return out


def monte_carlo(scenario: Scenario, reps: int, metrics=("bias", "variance_ratio", "coverage"),
                batch: int = 500) -> MonteCarloReport:
    """Replicate the estimators on fresh errors; replication ``r`` uses the
    substream ``(seed, r)`` so any replication can be regenerated alone."""
    from .inference import SplitVariance, confidence_interval, top_eigen

    sc = scenario
    design, form = sc.design, sc.form
    solver = NormalEquations(design)
    lev = exact_leverages(design, form, solver)
    theta = float(form.quad(sc.beta))
    mean = np.asarray(design.X @ sc.beta)
    sd = np.sqrt(sc.variances)
    Y = np.empty((design.n, reps))
    for r in range(reps):
        rng = np.random.default_rng([sc.seed, r])
        Y[:, r] = mean + draw_errors(sc.variances, sc.error_law, rng=rng)
    est = {"PI": [], "HO": [], "KSS": []}
    for start in range(0, reps, batch):
        Yb = Y[:, start:start + batch]
        fr = fit(design, Yb, solver)
        est["PI"].append(np.atleast_1d(theta_plugin(fr, form).theta_hat))
        est["HO"].append(np.atleast_1d(theta_homosc(Yb, fr, lev, form, design.k).theta_hat))
        est["KSS"].append(np.atleast_1d(theta_leave_out(Yb, fr, lev, form).theta_hat))
    est = {m: np.concatenate(v) for m, v in est.items()}
    report = MonteCarloReport(theta, est, analytic_pi_bias=float(lev.B[form.name] @ sc.variances))
    needs_se = any(m in metrics for m in ("variance_ratio", "coverage"))
    if needs_se and sc.plan is not None:
        ctx = SplitVariance(design, form, sc.plan, solver)
        vh = np.array([ctx.vhat_theta(Y[:, r])[0] for r in range(reps)])
        report.se = np.sqrt(vh)
        if "coverage" in metrics:
            eig = top_eigen(design, form, max(max(sc.qs), 1), solver) if max(sc.qs) > 0 else None
            for q in sc.qs:
                cover, ints = [], []
                for r in range(reps):
                    if q == 0:
                        ci = confidence_interval(est["KSS"][r], 0, vhat=vh[r], alpha=sc.alpha)
                    else:
                        weak = ctx.sigma_q(Y[:, r], eig, q)
                        ci = confidence_interval(est["KSS"][r], q, weak=weak, alpha=sc.alpha,
                                                 draws=sc.draws, seed=sc.seed)
                    cover.append(ci.contains(theta))
                    ints.append((ci.lower, ci.upper))
                report.coverage[q] = np.array(cover)
                report.intervals[q] = np.array(ints)
    return report
