"""Command line front end: ingest, prune, estimate, infer, simulate, jla-bench.

Exit codes: 0 success, 2 invalid input or configuration, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .design import (DesignMatrix, EstimandSpec, Panel, akm_forms, build_design, build_quadratic_form,
                     residualize_on_periods)
from .errors import (EmptyPanel, LeaveOutError, MissingColumn, NumericalError, ParseError,
                     ValidationError)
from .estimators import (decompose_akm, theta_cluster, theta_homosc, theta_jla, theta_leave_out,
                         theta_plugin)
from .network import MobilityGraph, build_split_plan, prune
from .sketch import SketchConfig, jla_bias_bound, sketched_leverages
from .solver import NormalEquations, exact_leverages, fit

SCHEMA_VERSION = "1.0"
REQUIRED_COLUMNS = ("worker_id", "firm_id", "period", "outcome")
OBS_COLUMNS = ("row", "worker_id", "P_ii", "B_ii", "sigma2_i")

DEFAULTS = {
    "model": "levels",
    "estimands": ["var_firm", "cov_person_firm", "var_person"],
    "leave_out_level": "observation",
    "pruning": "loo",
    "prune": True,
    "covariates": False,
    "adjust_periods": False,
    "jla": None,
    "inference": {"alpha": 0.05, "q": "auto", "threshold": 0.1, "q_max": 5, "draws": 1_000_000},
    "threads": None,
    "seed": 0,
}


class StageError(Exception):
    def __init__(self, stage, error):
        super().__init__(f"[{stage}] {error}")
        self.stage = stage
        self.error = error


# ---------------------------------------------------------------------------
# input
# ---------------------------------------------------------------------------

def ingest(path) -> Panel:
    """Read ``worker_id,firm_id,period,outcome[,covariate_*]`` records."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"input file {path} does not exist")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyPanel("input file is empty") from None
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise MissingColumn(f"missing column(s): {', '.join(missing)}")
        pos = {c: header.index(c) for c in REQUIRED_COLUMNS}
        cov_cols = [j for j, h in enumerate(header) if h.startswith("covariate_")]
        worker, firm, period, outcome, covs = [], [], [], [], []
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"line {line}: expected {len(header)} fields, got {len(row)}", line)
            try:
                period.append(int(row[pos["period"]]))
                outcome.append(float(row[pos["outcome"]]))
                covs.append([float(row[j]) for j in cov_cols])
            except ValueError as exc:
                raise ParseError(f"line {line}: {exc}", line) from None
            worker.append(row[pos["worker_id"]].strip())
            firm.append(row[pos["firm_id"]].strip())
    if not worker:
        raise EmptyPanel("input has a header but no records")
    cov = np.array(covs, dtype=float) if cov_cols else None
    names = tuple(header[j] for j in cov_cols)
    try:
        return Panel(np.array(worker, dtype=object), np.array(firm, dtype=object),
                     np.array(period), np.array(outcome), cov, names)
    except LeaveOutError as exc:
        line = getattr(exc, "line", None)
        if line is not None:
            exc.line = line + 2
            exc.args = (f"line {line + 2}: {exc.args[0]}",)
        raise


def restrict_panel(panel: Panel, graph: MobilityGraph) -> Panel:
    keep_workers = set(graph.movers) | set(graph.stayers)
    firms = set(graph.firms)
    mask = np.array([w in keep_workers and j in firms
                     for w, j in zip(panel.worker.tolist(), panel.firm.tolist())], dtype=bool)
    return panel.subset(mask)


def load_config(path=None, overrides=None) -> dict:
    cfg = json.loads(json.dumps(DEFAULTS))
    if path:
        with open(path, encoding="utf-8") as fh:
            loaded = yaml.safe_load(fh) or {}
        if not isinstance(loaded, dict):
            raise ValidationError("configuration file must hold a mapping")
        _merge(cfg, loaded)
    _merge(cfg, {k: v for k, v in (overrides or {}).items() if v is not None})
    validate_config(cfg)
    return cfg


def _merge(base: dict, extra: dict):
    for key, val in extra.items():
        if key not in DEFAULTS and key not in base:
            raise ValidationError(f"unknown configuration key {key!r}")
        if isinstance(val, dict) and isinstance(base.get(key), dict):
            base[key].update(val)
        else:
            base[key] = val


def validate_config(cfg: dict):
    if cfg["model"] not in ("levels", "first_difference"):
        raise ValidationError("model must be levels or first_difference")
    if cfg["leave_out_level"] not in ("observation", "match", "worker"):
        raise ValidationError("leave_out_level must be observation, match or worker")
    if cfg["pruning"] not in ("loo", "l2o"):
        raise ValidationError("pruning must be loo or l2o")
    inf = cfg["inference"]
    if not 0 < float(inf["alpha"]) < 1:
        raise ValidationError("alpha must lie in (0, 1)")
    if inf["q"] != "auto" and (not str(inf["q"]).isdigit()):
        raise ValidationError("q must be 'auto' or a nonnegative integer")
    if cfg["jla"] is not None:
        jla = cfg["jla"]
        if not isinstance(jla, dict) or int(jla.get("p", 0)) < 1:
            raise ValidationError("jla needs a positive p")
    for e in cfg["estimands"]:
        EstimandSpec(e)


def parse_jla(text):
    """``p=<int> seed=<int>`` (comma or space separated)."""
    if text is None:
        return None
    out = {"p": 500, "seed": 0}
    for tok in text.replace(",", " ").split():
        key, _, val = tok.partition("=")
        if key not in out or not val.lstrip("-").isdigit():
            raise ValidationError(f"bad --jla token {tok!r}")
        out[key] = int(val)
    return out


# ---------------------------------------------------------------------------
# pipeline stages
# ---------------------------------------------------------------------------

def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except LeaveOutError as exc:
        raise StageError(name, exc) from exc


def run_prune(panel: Panel, level: str):
    graph = MobilityGraph.from_panel(panel)
    pruned, stages = prune(graph, level)
    counts = []
    prev = None
    for name, summary in stages:
        entry = {"stage": name, **summary}
        if prev is not None:
            entry["dropped_workers"] = prev["workers"] - summary["workers"]
            entry["dropped_firms"] = prev["firms"] - summary["firms"]
        counts.append(entry)
        prev = summary
    return pruned, counts


def _within_worker(design: DesignMatrix, panel: Panel):
    """Demean firm and covariate columns and the outcome within worker."""
    firm_cols = np.array([j for j, lab in enumerate(design.labels) if lab != "person"])
    X = design.X[:, firm_cols].toarray()
    y = design.y.copy()
    for idx in panel.group_index().values():
        X[idx] -= X[idx].mean(axis=0)
        y[idx] -= y[idx].mean()
    N = len(design.labels) - len(firm_cols)
    py_firm = np.where(design.py_firm >= 0, design.py_firm - N, -1)
    return DesignMatrix(X, tuple(design.labels[j] for j in firm_cols), "within", y,
                        tuple(design.column_keys[j] for j in firm_cols), row_ids=design.row_ids,
                        py_firm=py_firm, py_weights=design.py_weights, py_row=design.py_row,
                        reference_firm=design.reference_firm, firm_ids=design.firm_ids)


def run_estimate(panel: Panel, cfg: dict, obs_rows=None) -> dict:
    report = {"estimates": [], "diagnostics": {}}
    if cfg["adjust_periods"]:
        panel = residualize_on_periods(panel)
    if cfg["prune"]:
        graph, counts = _stage("prune", run_prune, panel, cfg["pruning"])
        panel = restrict_panel(panel, graph)
        report["pruning"] = counts
    design = _stage("design", build_design, panel, cfg["model"], cfg["covariates"])
    level = cfg["leave_out_level"]
    if level != "observation":
        if design.kind != "levels":
            raise StageError("design", ValidationError("cluster leave-out needs the levels model"))
        # stayers are a single match, so both cluster levels work on within-worker deviations
        design = _within_worker(design, panel)
    forms = {}
    for name in cfg["estimands"]:
        if level != "observation" and name != "var_firm":
            continue
        form = _stage("design", build_quadratic_form, design, EstimandSpec(name))
        forms[name] = form
    solver = _stage("solve", NormalEquations, design)
    fr = _stage("solve", fit, design, None, solver)
    lev = _stage("leverage", exact_leverages, design, forms, solver)
    if level == "observation":
        _stage("leverage", lev.check_feasible)
    report["design"] = {"model": design.kind, "n": design.n, "k": design.k,
                        "reference_firm": design.reference_firm,
                        "firms": len(design.firm_ids) + 1 if design.firm_ids else 0}
    report["diagnostics"]["max_leverage"] = float(lev.P.max())
    report["diagnostics"]["solver"] = {k: v for k, v in fr.stats.items()}
    y = design.y
    for name, form in forms.items():
        if level == "observation":
            ests = [theta_plugin(fr, form), _stage("estimate", theta_homosc, y, fr, lev, form, design.k),
                    _stage("estimate", theta_leave_out, y, fr, lev, form)]
        else:
            clusters = (np.array([f"{w}\x1f{j}" for w, j in zip(panel.worker.tolist(),
                                                                  panel.firm.tolist())])
                        if level == "match" else np.array([str(w) for w in panel.worker.tolist()]))
            ests = [theta_plugin(fr, form),
                    _stage("estimate", theta_cluster, y, design, form, clusters, solver)]
        for e in ests:
            row = {"component": name, "method": e.method, "estimate": float(e.theta_hat)}
            if "bias_correction" in e.diagnostics:
                row["bias_correction"] = float(e.diagnostics["bias_correction"])
            if "negative_sigma2" in e.diagnostics:
                row["negative_sigma2"] = int(e.diagnostics["negative_sigma2"])
            report["estimates"].append(row)
    if level == "observation" and design.kind == "levels" and set(forms) >= set(akm_forms(design)):
        dec = _stage("estimate", decompose_akm, y, design, None, None, solver)
        for method in ("PI", "HO", "KSS"):
            report["estimates"].append({"component": "R2", "method": method,
                                        "estimate": dec.value("R2", method)})
        report["diagnostics"]["total_variance"] = dec.total_variance
    if cfg["jla"]:
        scfg = SketchConfig(int(cfg["jla"]["p"]), int(cfg["jla"].get("seed", 0)))
        slev = _stage("sketch", sketched_leverages, design, forms, scfg, solver)
        jla = {"mode": slev.mode, "p": scfg.p, "seed": scfg.seed, "estimates": []}
        for name, form in forms.items():
            e = _stage("sketch", theta_jla, y, fr, slev, form)
            bound = jla_bias_bound(slev, e.sigma2, name)
            jla["estimates"].append({"component": name, "method": "KSS_JLA",
                                     "estimate": float(e.theta_hat), "bias_bound": bound})
        jla["tail_lengthening"] = bool(design.n / scfg.p ** 2 >= 0.01)
        report["jla"] = jla
    if obs_rows is not None and level == "observation":
        first = next(iter(forms))
        s2 = y * fr.residuals / lev.M
        for i in range(design.n):
            obs_rows.append([i, design.row_ids[i], lev.P[i], lev.B[first][i], s2[i]])
    report["_design"] = design
    report["_forms"] = forms
    report["_solver"] = solver
    report["_panel"] = panel
    return report


def run_infer(panel: Panel, cfg: dict) -> dict:
    from .inference import SplitVariance, infer

    cfg = dict(cfg)
    jla = cfg["jla"]
    cfg["model"] = "first_difference"
    cfg["estimands"] = ["var_firm"]
    cfg["leave_out_level"] = "observation"
    cfg["jla"] = None
    report = run_estimate(panel, cfg)
    design, solver = report["_design"], report["_solver"]
    form = report["_forms"]["var_firm"]
    graph = MobilityGraph.from_panel(report["_panel"])
    plan = _stage("split", build_split_plan, design, graph, int(cfg["seed"]))
    ctx = _stage("variance", SplitVariance, design, form, plan, solver)
    inf = cfg["inference"]
    q = None if inf["q"] == "auto" else int(inf["q"])
    out = _stage("infer", infer, design.y, design, form, plan, q, float(inf["alpha"]),
                 int(inf["q_max"]), float(inf["threshold"]), int(inf["draws"]), int(cfg["seed"]),
                 solver, ctx)
    eig = out["eig"]
    block = {"q": out["q"], "lambdas": eig.lambdas.tolist(), "shares": eig.shares.tolist(),
             "trace_sq": eig.trace_sq, "trace_exact": eig.trace_exact,
             "lindeberg": [eig.lindeberg(1), eig.lindeberg(2)],
             "kappa": out["ci"].kappa, "z": out["ci"].critical_value,
             "theta_hat": out["theta_hat"], "se": out["se"],
             "ci_lower": out["ci"].lower, "ci_upper": out["ci"].upper,
             "vhat_floored": out["vhat_diagnostics"]["floored"],
             "conservative_flags": {"Q_share": out["vhat_diagnostics"]["Q_share"],
                                    "B_share": out["vhat_diagnostics"]["B_share"]}}
    if "ci_alt" in out:
        block["ci_alt"] = out["ci_alt"].as_dict()
        block["ci_union"] = list(out["ci_union"])
    if jla:
        scfg = SketchConfig(int(jla["p"]), int(jla.get("seed", 0)))
        slev = _stage("sketch", sketched_leverages, design, form, scfg, solver)
        e = _stage("sketch", theta_jla, design.y, fit(design, None, solver), slev, form)
        bound = jla_bias_bound(slev, e.sigma2, form.name)
        widen = design.n / scfg.p ** 2 >= 0.01
        block["jla"] = {"mode": slev.mode, "p": scfg.p, "seed": scfg.seed,
                        "estimate": float(e.theta_hat), "bias_bound": bound,
                        "tail_lengthening": bool(widen),
                        "ci_lower": out["ci"].lower - (bound if widen else 0.0),
                        "ci_upper": out["ci"].upper + (bound if widen else 0.0)}
    report["inference"] = block
    return report


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items() if not str(k).startswith("_")}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj


def write_report(report: dict, path, command: str, cfg: dict):
    doc = {"schema_version": SCHEMA_VERSION, "package_version": __version__, "command": command,
           "config": cfg, **report,
           "created_at": datetime.now(timezone.utc).isoformat(timespec="seconds")}
    text = json.dumps(_jsonable(doc), indent=2, sort_keys=False)
    if path in (None, "-"):
        print(text)
    else:
        Path(path).write_text(text + "\n", encoding="utf-8")


def write_observations(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(OBS_COLUMNS)
        for r in rows:
            w.writerow([r[0], r[1]] + [repr(float(v)) for v in r[2:]])


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_prune(args):
    panel = _stage("ingest", ingest, args.input)
    graph, counts = _stage("prune", run_prune, panel, args.level)
    kept = restrict_panel(panel, graph)
    report = {"pruning": counts, "retained_rows": int(kept.n), "input_rows": int(panel.n)}
    if args.panel_out:
        with open(args.panel_out, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(REQUIRED_COLUMNS + kept.covariate_names)
            for i in range(kept.n):
                extra = [] if kept.covariates is None else [repr(float(v)) for v in kept.covariates[i]]
                w.writerow([kept.worker[i], kept.firm[i], int(kept.period[i]),
                            repr(float(kept.outcome[i]))] + extra)
    write_report(report, args.out, "prune", {"pruning": args.level})


def _config_from_args(args):
    overrides = {"model": args.model, "pruning": args.level, "leave_out_level": args.leave_out,
                 "jla": parse_jla(args.jla), "seed": args.seed, "threads": args.threads}
    if args.no_prune:
        overrides["prune"] = False
    if args.covariates:
        overrides["covariates"] = True
    if args.adjust_periods:
        overrides["adjust_periods"] = True
    if args.estimands:
        overrides["estimands"] = args.estimands.split(",")
    inf = {}
    for key in ("alpha", "q", "threshold", "draws", "q_max"):
        val = getattr(args, key, None)
        if val is not None:
            inf[key] = val
    if inf:
        overrides["inference"] = inf
    cfg = load_config(args.config, overrides)
    if cfg["threads"] is None:
        cfg["threads"] = int(os.environ.get("LEAVEOUT_THREADS", os.cpu_count() or 1))
    return cfg


def cmd_estimate(args):
    cfg = _config_from_args(args)
    panel = _stage("ingest", ingest, args.input)
    rows = [] if args.obs_out else None
    report = run_estimate(panel, cfg, rows)
    write_report(report, args.out, "estimate", cfg)
    if rows is not None:
        write_observations(rows, args.obs_out)


def cmd_infer(args):
    cfg = _config_from_args(args)
    panel = _stage("ingest", ingest, args.input)
    report = run_infer(panel, cfg)
    write_report(report, args.out, "infer", cfg)


def cmd_simulate(args):
    from .inference import SplitVariance  # noqa: F401  (imported for its side-effect free check)
    from .network import build_split_plan as plan_builder
    from .simulation import (HeteroModel, SbmConfig, Scenario, first_difference_variances, gen_sbm,
                             monte_carlo, sbm_design)

    if args.seed is None:
        raise ValidationError("simulate needs --seed")
    sbm = SbmConfig(args.firms, args.movers, args.p_b, args.seed)
    graph, psi, blocks, share = _stage("simulate", gen_sbm, sbm, [0.0, args.block_gap],
                                       args.within_sd)
    design, beta = sbm_design(graph, psi)
    form = build_quadratic_form(design, EstimandSpec("var_firm"))
    solver = NormalEquations(design)
    lev = exact_leverages(design, form, solver)
    coefs = [float(v) for v in args.het.split(",")] if args.het else [np.log(0.1), 0, 0, 0, 0]
    het = HeteroModel(*coefs)
    variances = first_difference_variances(design, graph, het, lev, form.name)
    plan = _stage("split", plan_builder, design, graph, args.seed)
    qs = tuple(int(q) for q in args.qs.split(","))
    sc = Scenario(design, form, beta, variances, plan, qs, args.alpha, args.error_law, args.seed,
                  args.draws, "sbm")
    rep = _stage("simulate", monte_carlo, sc, args.reps)
    summary = rep.summary()
    summary.update({"between_share": share, "J": sbm.J, "N": sbm.N, "p_b": sbm.p_b,
                    "max_leverage": float(lev.P.max())})
    write_report({"summary": summary}, args.out, "simulate",
                 {"seed": args.seed, "reps": args.reps, "het": coefs, "qs": list(qs)})
    if args.reps_out:
        with open(args.reps_out, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            cols = list(rep.estimates)
            w.writerow(["rep"] + cols + (["se"] if rep.se is not None else []))
            for r in range(args.reps):
                vals = [repr(float(rep.estimates[c][r])) for c in cols]
                if rep.se is not None:
                    vals.append(repr(float(rep.se[r])))
                w.writerow([r] + vals)


def cmd_jla_bench(args):
    cfg = _config_from_args(args)
    panel = _stage("ingest", ingest, args.input)
    cfg["jla"] = None
    t0 = time.perf_counter()
    report = run_estimate(panel, cfg)
    exact_time = time.perf_counter() - t0
    design, forms, solver = report["_design"], report["_forms"], report["_solver"]
    fr = fit(design, None, solver)
    exact = {r["component"]: r["estimate"] for r in report["estimates"] if r["method"] == "KSS"}
    rows = []
    for p in [int(v) for v in args.p_values.split(",")]:
        t0 = time.perf_counter()
        slev = _stage("sketch", sketched_leverages, design, forms, SketchConfig(p, int(cfg["seed"])),
                      solver)
        for name, form in forms.items():
            e = theta_jla(design.y, fr, slev, form)
            rows.append({"p": p, "component": name, "exact": exact.get(name),
                         "jla": float(e.theta_hat), "bias_bound": jla_bias_bound(slev, e.sigma2, name),
                         "seconds": time.perf_counter() - t0})
    write_report({"exact_seconds": exact_time, "benchmark": rows}, args.out, "jla-bench", cfg)


def build_parser():
    ap = argparse.ArgumentParser(prog="leaveout", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prune", help="extract the leave-one-out (or leave-two-out) connected set")
    p.add_argument("input")
    p.add_argument("--level", choices=["loo", "l2o"], default="loo")
    p.add_argument("--out", default="-")
    p.add_argument("--panel-out")
    p.set_defaults(func=cmd_prune)

    def common(p):
        p.add_argument("input")
        p.add_argument("--config")
        p.add_argument("--model", choices=["levels", "first_difference"])
        p.add_argument("--level", choices=["loo", "l2o"], help="pruning level")
        p.add_argument("--no-prune", action="store_true")
        p.add_argument("--leave-out", choices=["observation", "match", "worker"])
        p.add_argument("--estimands", help="comma separated list")
        p.add_argument("--covariates", action="store_true")
        p.add_argument("--adjust-periods", action="store_true",
                       help="remove period means from the outcome first")
        p.add_argument("--jla", help="'p=<int> seed=<int>'")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int)
        p.add_argument("--out", default="-")

    p = sub.add_parser("estimate", help="variance components by PI, HO and leave-out")
    common(p)
    p.add_argument("--obs-out", help="per-observation CSV (P_ii, B_ii, sigma2_i)")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("infer", help="standard error and confidence interval for the firm-effect variance")
    common(p)
    p.add_argument("--alpha", type=float)
    p.add_argument("--q")
    p.add_argument("--threshold", type=float)
    p.add_argument("--q-max", type=int, dest="q_max")
    p.add_argument("--draws", type=int)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("simulate", help="Monte Carlo on a stochastic block network")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--firms", type=int, default=20)
    p.add_argument("--movers", type=int, default=200)
    p.add_argument("--p-b", type=float, default=0.5, dest="p_b")
    p.add_argument("--block-gap", type=float, default=0.5)
    p.add_argument("--within-sd", type=float, default=0.3)
    p.add_argument("--het", help="a0,a1,a2,a3,a4 of the log-variance model")
    p.add_argument("--error-law", choices=["normal", "scaled_t"], default="normal")
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--qs", default="0,1")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--draws", type=int, default=200_000)
    p.add_argument("--out", default="-")
    p.add_argument("--reps-out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("jla-bench", help="exact versus sketched leave-out estimates")
    common(p)
    p.add_argument("--p-values", default="50,200,500")
    p.set_defaults(func=cmd_jla_bench)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3 if isinstance(exc.error, NumericalError) else 2
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ValidationError, yaml.YAMLError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
