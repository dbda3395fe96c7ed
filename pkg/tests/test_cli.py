import csv
import json

import numpy as np
import pytest

from leaveout.cli import ingest, load_config, main, parse_jla
from leaveout.errors import DuplicateObservation, EmptyPanel, MissingColumn, ParseError, ValidationError


def write_csv(path, rows, header=("worker_id", "firm_id", "period", "outcome")):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def ring_fixture(path, seed=0, stayers=True):
    """Six firms on a ring, two movers per neighbouring pair, two periods."""
    rng = np.random.default_rng(seed)
    psi = rng.normal(size=6)
    rows = []
    m = 0
    for j in range(6):
        for _ in range(2):
            a = rng.normal()
            k = (j + 1) % 6
            if m % 2:
                j_, k_ = k, j
            else:
                j_, k_ = j, k
            rows.append((f"m{m}", f"F{j_}", 1, a + psi[j_] + 0.3 * rng.normal()))
            rows.append((f"m{m}", f"F{k_}", 2, a + psi[k_] + 0.3 * rng.normal()))
            m += 1
    if stayers:
        for s in range(6):
            a = rng.normal()
            rows += [(f"s{s}", f"F{s}", t, a + psi[s] + 0.3 * rng.normal()) for t in (1, 2)]
    return write_csv(path, rows)


def brute_force_leave_out(path):
    """Dense levels regression and explicit leave-one-out refits."""
    panel = ingest(path)
    workers = list(dict.fromkeys(panel.worker.tolist()))
    sizes = {}
    for f in panel.firm.tolist():
        sizes[f] = sizes.get(f, 0) + 1
    ref = min(sizes, key=lambda f: (-sizes[f], f))
    firms = sorted(f for f in sizes if f != ref)
    n = panel.n
    X = np.zeros((n, len(workers) + len(firms)))
    for i, (w, f) in enumerate(zip(panel.worker, panel.firm)):
        X[i, workers.index(w)] = 1
        if f != ref:
            X[i, len(workers) + firms.index(f)] = 1
    y = panel.outcome
    F = X[:, len(workers):]
    Fc = F - F.mean(0)
    A = np.zeros((X.shape[1], X.shape[1]))
    A[len(workers):, len(workers):] = Fc.T @ Fc / n
    beta = np.linalg.lstsq(X, y, rcond=None)[0]
    Sinv = np.linalg.inv(X.T @ X)
    plug = beta @ A @ beta
    corr = 0.0
    for i in range(n):
        keep = np.arange(n) != i
        b_i = np.linalg.lstsq(X[keep], y[keep], rcond=None)[0]
        s2 = y[i] * (y[i] - X[i] @ b_i)
        corr += (X[i] @ Sinv @ A @ Sinv @ X[i]) * s2
    return plug, plug - corr


def run(args):
    return main([str(a) for a in args])


def test_ingest_minimal(tmp_path):
    p = write_csv(tmp_path / "a.csv", [("1", "x", 1, 0.1), ("1", "y", 2, 0.2),
                                       ("2", "x", 1, 0.3), ("2", "x", 2, 0.4)])
    panel = ingest(p)
    assert panel.n == 4 and len(panel.workers()) == 2


def test_ingest_errors(tmp_path):
    dup = write_csv(tmp_path / "d.csv", [("1", "x", 1, 0.1), ("1", "y", 1, 0.2)])
    with pytest.raises(DuplicateObservation) as info:
        ingest(dup)
    assert info.value.line == 3
    with pytest.raises(EmptyPanel):
        ingest(write_csv(tmp_path / "e.csv", []))
    with pytest.raises(MissingColumn):
        ingest(write_csv(tmp_path / "m.csv", [("1", "x", 1)], header=("worker_id", "firm_id", "period")))
    with pytest.raises(ParseError) as info:
        ingest(write_csv(tmp_path / "p.csv", [("1", "x", 1, 0.1), ("1", "y", 2, "abc")]))
    assert info.value.line == 3


def test_config_overrides(tmp_path):
    cfg_file = tmp_path / "c.yaml"
    cfg_file.write_text("pruning: l2o\ninference:\n  alpha: 0.1\n")
    cfg = load_config(cfg_file, {"pruning": "loo"})
    assert cfg["pruning"] == "loo" and cfg["inference"]["alpha"] == 0.1
    assert cfg["inference"]["threshold"] == 0.1
    with pytest.raises(ValidationError):
        load_config(None, {"leave_out_level": "firm"})
    with pytest.raises(ValidationError):
        load_config(None, {"inference": {"alpha": 1.5}})
    assert parse_jla("p=64 seed=3") == {"p": 64, "seed": 3}
    with pytest.raises(ValidationError):
        parse_jla("q=1")


def test_estimate_matches_brute_force(tmp_path):
    data = ring_fixture(tmp_path / "ring.csv")
    out = tmp_path / "r.json"
    assert run(["estimate", data, "--out", out, "--level", "l2o"]) == 0
    rep = json.loads(out.read_text())
    est = {(r["component"], r["method"]): r["estimate"] for r in rep["estimates"]}
    for m in ("PI", "HO", "KSS"):
        assert ("var_firm", m) in est and ("var_person", m) in est
    plug, kss = brute_force_leave_out(data)
    assert est[("var_firm", "PI")] == pytest.approx(plug, rel=1e-10)
    assert est[("var_firm", "KSS")] == pytest.approx(kss, rel=1e-9)
    assert rep["schema_version"] == "1.0"
    stages = rep["pruning"]
    for prev, cur in zip(stages[:-1], stages[1:]):
        assert prev["workers"] == cur["workers"] + cur["dropped_workers"]
        assert prev["firms"] == cur["firms"] + cur["dropped_firms"]


def test_reports_are_reproducible(tmp_path):
    data = ring_fixture(tmp_path / "ring.csv", seed=1)
    docs = []
    for name in ("a.json", "b.json"):
        assert run(["estimate", data, "--out", tmp_path / name, "--jla", "p=16 seed=2"]) == 0
        doc = json.loads((tmp_path / name).read_text())
        doc.pop("created_at")
        docs.append(json.dumps(doc, sort_keys=True))
    assert docs[0] == docs[1]


def test_jla_and_observation_file(tmp_path):
    data = ring_fixture(tmp_path / "ring.csv", seed=2)
    out, obs = tmp_path / "r.json", tmp_path / "o.csv"
    assert run(["estimate", data, "--out", out, "--jla", "p=32 seed=1", "--obs-out", obs]) == 0
    rep = json.loads(out.read_text())
    assert rep["jla"]["p"] == 32
    assert all(e["bias_bound"] >= 0 for e in rep["jla"]["estimates"])
    with open(obs) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["row", "worker_id", "P_ii", "B_ii", "sigma2_i"]
    assert len(rows) - 1 == rep["design"]["n"]


def test_cluster_levels(tmp_path):
    data = ring_fixture(tmp_path / "ring.csv", seed=3)
    out = tmp_path / "r.json"
    assert run(["estimate", data, "--out", out, "--leave-out", "match"]) == 0
    methods = {r["method"] for r in json.loads(out.read_text())["estimates"]}
    assert "KSS_cluster" in methods
    # a stayer's only match is the whole worker; both levels run on within-worker deviations
    assert run(["estimate", data, "--out", out, "--leave-out", "worker"]) == 0


def test_exit_codes(tmp_path):
    assert run(["estimate", tmp_path / "missing.csv", "--out", tmp_path / "x.json"]) == 2
    dup = write_csv(tmp_path / "d.csv", [("1", "x", 1, 0.1), ("1", "y", 1, 0.2)])
    assert run(["estimate", dup, "--out", tmp_path / "x.json"]) == 2
    # a firm reached by a single mover cannot be estimated without pruning
    bad = write_csv(tmp_path / "b.csv", [("1", "x", 1, 0.1), ("1", "y", 2, 0.2),
                                         ("2", "x", 1, 0.3), ("2", "x", 2, 0.4)])
    assert run(["estimate", bad, "--no-prune", "--out", tmp_path / "x.json"]) == 3


def test_infer_prune_and_simulate(tmp_path):
    data = ring_fixture(tmp_path / "ring.csv", seed=4, stayers=False)
    out = tmp_path / "i.json"
    assert run(["infer", data, "--out", out, "--draws", "20000", "--jla", "p=8 seed=0"]) == 0
    inf = json.loads(out.read_text())["inference"]
    for key in ("q", "lambdas", "shares", "lindeberg", "kappa", "z", "ci_lower", "ci_upper",
                "conservative_flags"):
        assert key in inf
    assert inf["jla"]["tail_lengthening"]
    assert run(["prune", data, "--level", "l2o", "--out", tmp_path / "p.json",
                "--panel-out", tmp_path / "p.csv"]) == 0
    assert ingest(tmp_path / "p.csv").n == json.loads((tmp_path / "p.json").read_text())["retained_rows"]
    sim = tmp_path / "s.json"
    assert run(["simulate", "--seed", "1", "--firms", "10", "--movers", "80", "--reps", "20",
                "--qs", "0", "--out", sim, "--reps-out", tmp_path / "s.csv"]) == 0
    assert json.loads(sim.read_text())["summary"]["reps"] == 20
    with pytest.raises(SystemExit):
        main(["simulate", "--reps", "5"])
    assert run(["jla-bench", data, "--p-values", "8,32", "--out", tmp_path / "j.json"]) == 0
