"""Acceptance criteria 1 to 9; each test records one pass/fail line."""

import json
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from chainforge.antidiv import gain_audit
from chainforge.decompose import decompose, reconstruct
from chainforge.fields import DefectField, GridSpec
from chainforge.mikado import alpha_bound, build_pair, measured_constant, solve_alpha
from chainforge.probes import slope_probe
from chainforge.renormalization import concentration_floor, exact_abs, parse_beta
from chainforge.verify import audit_directory, audit_mikado

SMOOTH = parse_beta("smooth-abs:1.0")
HERE = os.path.dirname(__file__)


def forge(*args):
    cmd = [sys.executable, "-c", "import sys; from chainforge.cli import main; sys.exit(main())", *args]
    return subprocess.run(cmd, capture_output=True, text=True)


@pytest.fixture(scope="module")
def demo_run(tmp_path_factory):
    """Two-step demo run at N=128 under the report policy, in its own process."""
    out = tmp_path_factory.mktemp("demo") / "run"
    started = time.perf_counter()
    proc = forge("run", "--dim", "3", "--p", str(4 / 3), "--ptilde", "1", "--grid", "128", "--steps", "2",
                 "--policy", "report", "--out", str(out))
    elapsed = time.perf_counter() - started
    assert (out / "manifest.json").exists(), proc.stderr
    return out, elapsed


def test_criterion_1_decomposition_round_trip(criterion):
    rng = np.random.default_rng(20240601)
    grid = GridSpec(3, 32)
    started = time.perf_counter()
    worst, bounded = 0.0, True
    for _ in range(100):
        r = DefectField(grid, rng.standard_normal((3,) + grid.shape), rng.standard_normal((3,) + grid.shape))
        dec = decompose(r)
        back = reconstruct(dec)
        worst = max(worst, float(np.abs(back.first - r.first).max()), float(np.abs(back.second - r.second).max()))
        frob = np.sqrt(np.sum(r.first**2, axis=0) + np.sum(r.second**2, axis=0))
        bounded = bounded and bool(np.all(np.abs(dec.coefficients) <= frob))
    elapsed = time.perf_counter() - started
    ok = worst <= 1e-14 and bounded and elapsed < 10
    criterion(1, ok, f"max error {worst:.2e}, |g_j| <= |R|: {bounded}, {elapsed:.1f}s")
    assert ok


def test_criterion_2_antidivergence_gain(criterion):
    grid = GridSpec(2, 256)
    lams = [8, 16, 32, 64]
    audit = gain_audit(lambda x, y: 1.0 + 0 * x, lambda x, y: np.sin(2 * np.pi * x), grid, lams)
    rel = [abs(n * 2 * np.pi * lam - 1.0) for n, lam in zip(audit["norms"], lams)]
    ok = max(rel) <= 0.01 and abs(audit["slope"] + 1.0) <= 0.05
    criterion(2, ok, f"max rel error {max(rel):.2e}, slope {audit['slope']:.4f}")
    assert ok


def test_criterion_3_alpha_closed_form(criterion):
    plus = solve_alpha(exact_abs(), 0.7, 1, 16.0, 4 / 3, 3)
    minus = solve_alpha(exact_abs(), 0.7, -1, 16.0, 4 / 3, 3)
    c = 64 / np.pi
    err = max(np.abs(np.subtract(plus, (c, 0.0, -c))).max(), np.abs(np.subtract(minus, (0.0, -c, c))).max())
    rng = np.random.default_rng(3)
    bound = alpha_bound(SMOOTH, 3)
    worst = 0.0
    for _ in range(1000):
        a = float(rng.uniform(1e-3, 20.0)) * rng.choice([-1, 1])
        mu = max(float(rng.uniform(2.0, 512.0)), concentration_floor(SMOOTH, abs(a), 4 / 3, 3))
        alpha = solve_alpha(SMOOTH, a, int(rng.choice([-1, 1])), mu, 4 / 3, 3)
        worst = max(worst, float(np.abs(alpha).max()))
    ok = err <= 1e-10 and worst <= bound
    criterion(3, ok, f"closed-form error {err:.1e}, max |alpha| {worst:.3f} <= {bound:.3f}")
    assert ok


def test_criterion_4_mikado_certificates(criterion):
    started = time.perf_counter()
    p, pd = 4 / 3, 4.0
    certs, ratios = {}, []
    ok = True
    for sigma in (1, -1):
        audits = {}
        for mu in (16.0, 32.0):
            pair = build_pair(SMOOTH, 0.7, 0, 0.05, mu, sigma, p, 3)
            audit = audit_mikado(pair, SMOOTH)
            m0 = measured_constant([pair])
            b = audit["bounds"]
            ok = ok and audit["ok"] and all(audit["checks"].values())
            ok = ok and b["density_Lp"]["value"] <= m0 and b["flux_Lp_dual"]["value"] <= m0
            audits[mu] = audit
            certs[(sigma, mu)] = audit
        for key in audits[16.0]["bounds"]:
            name, tag = key.split("_L")
            r = {"1": 1.0, "p": p, "p_dual": pd, "inf": np.inf}[tag]
            base = 1 / p if name == "density" else 1 / pd
            expected = 2.0 ** (2 * (base - (0.0 if np.isinf(r) else 1.0 / r)))
            measured = audits[32.0]["bounds"][key]["value"] / audits[16.0]["bounds"][key]["value"]
            ratios.append(abs(measured / expected - 1.0))
    elapsed = time.perf_counter() - started
    ok = ok and max(ratios) <= 0.05 and elapsed < 120
    criterion(4, ok, f"{len(certs)} certificates, worst scaling deviation {max(ratios):.2%}, {elapsed:.1f}s")
    assert ok


def test_criterion_5_single_step(criterion, demo_run):
    out, elapsed = demo_run
    record = json.loads((out / "step_001.json").read_text())
    report = record["report"]
    est = report["estimates"]
    res = report["residuals"]
    ok_est = all(e["ok"] for e in est.values())
    ok_res = all(r["relative"] <= 1e-6 for r in res.values())
    ok = record["status"] == "accepted" and ok_est and ok_res
    worst = max(est, key=lambda k: est[k]["value"] / est[k]["bound"])
    criterion(5, ok, f"status {record['status']}, worst estimate {worst} "
                     f"{est[worst]['value']:.3e} vs {est[worst]['bound']:.3e}, "
                     f"max residual {max(r['relative'] for r in res.values()):.1e}, run {elapsed:.0f}s")
    assert ok


def test_criterion_6_two_steps(criterion, demo_run):
    out, _ = demo_run
    summary = json.loads((out / "summary.json").read_text())
    rows = {row["q"]: row for row in summary["trajectory"]}
    reached = [q for q in (1, 2) if q in rows and rows[q]["status"] == "accepted"]
    ok = reached == [1, 2] and all(rows[q]["defect_L1"] <= 2.0 ** -q for q in (1, 2))
    detail = ", ".join(f"q={q} |R|={rows[q]['defect_L1']:.3e} ({rows[q]['status']})" for q in sorted(rows) if q)
    criterion(6, ok, detail + (f", halted at {summary['halted_at']}" if summary["halted_at"] else ""))
    assert ok


def test_criterion_7_hamiltonian_mode(criterion):
    proc = subprocess.run([sys.executable, os.path.join(HERE, "hamiltonian_check.py")],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    grid = json.loads(proc.stdout.strip().splitlines()[-1])
    probe = slope_probe("wc_hamiltonian_W1", tolerance=0.3)
    ok = grid["sup_error"] <= 1e-9 and grid["divergence_residual"] <= 1e-9 and probe["ok"]
    criterion(7, ok, f"sup error {grid['sup_error']:.1e} (field sup {grid['field_sup']:.2f}), "
                     f"div residual {grid['divergence_residual']:.1e}, corrector slope {probe['slope']:.3f}")
    assert ok


def test_criterion_8_slope_probes(criterion):
    results = {q: slope_probe(q, tolerance=0.15) for q in
               ("R1_quad", "R2_quad", "R1_lin", "R2_lin", "improved_holder")}
    ok = all(r["ok"] for r in results.values())
    detail = ", ".join(f"{q} {r['slope']:.3f} ({r['expected']:.2f})" for q, r in results.items())
    criterion(8, ok, detail)
    assert ok


def test_criterion_9_independent_audit(criterion, demo_run):
    out, _ = demo_run
    code, verdict = audit_directory(str(out))
    proc = forge("verify", str(out))
    mismatches = [m for step in verdict["steps"] for m in step["mismatches"]]
    reproduced = not mismatches and not verdict["errors"] and bool(verdict["steps"])
    ok = reproduced and code == 0 and proc.returncode == 0
    criterion(9, ok, f"reproduced within 1e-10: {reproduced}, exit code {proc.returncode}")
    assert ok
