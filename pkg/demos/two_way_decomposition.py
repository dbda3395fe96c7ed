"""Variance decomposition of a simulated worker-firm panel.

Writes a small panel to a temporary CSV, runs the ``estimate`` command on it
and prints the plug-in, homoscedastic and leave-out estimates next to the
values implied by the true effects.

    python3 demos/two_way_decomposition.py
"""

import csv
import json
import tempfile
from pathlib import Path

import numpy as np

from leaveout.cli import main


def simulate(path, firms=30, workers=600, periods=4, seed=0):
    rng = np.random.default_rng(seed)
    psi = rng.normal(scale=0.3, size=firms)
    alpha = rng.normal(scale=0.6, size=workers)
    # sorting: workers with high alpha lean toward high-psi firms
    order = np.argsort(psi)
    truth = {"psi": [], "alpha": []}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["worker_id", "firm_id", "period", "outcome"])
        for i in range(workers):
            rank = np.clip(int((alpha[i] / 1.2 + 0.5) * firms + rng.normal(scale=8)), 0, firms - 1)
            firm = order[rank]
            for t in range(periods):
                if t and rng.uniform() < 0.15:
                    firm = int(rng.integers(firms))
                y = alpha[i] + psi[firm] + rng.normal(scale=0.5)
                w.writerow([f"w{i}", f"f{firm}", t, y])
                truth["psi"].append(psi[firm])
                truth["alpha"].append(alpha[i])
    return {k: np.array(v) for k, v in truth.items()}


def main_demo():
    with tempfile.TemporaryDirectory() as tmp:
        data = Path(tmp) / "panel.csv"
        truth = simulate(data)
        out = Path(tmp) / "report.json"
        code = main(["estimate", str(data), "--out", str(out)])
        report = json.loads(out.read_text())
    print(f"exit code {code}; estimation sample: {report['design']}")
    # person-year moments of the true effects (computed on the full panel, so only a guide)
    print("population-style values: var(psi) %.4f  var(alpha) %.4f  cov %.4f" % (
        truth["psi"].var(), truth["alpha"].var(), np.cov(truth["psi"], truth["alpha"])[0, 1]))
    print(f"{'component':<18}{'PI':>10}{'HO':>10}{'KSS':>10}")
    table = {}
    for row in report["estimates"]:
        table.setdefault(row["component"], {})[row["method"]] = row["estimate"]
    for comp, vals in table.items():
        print(f"{comp:<18}" + "".join(f"{vals.get(m, float('nan')):>10.4f}" for m in ("PI", "HO", "KSS")))


if __name__ == "__main__":
    main_demo()
