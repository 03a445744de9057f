"""Acceptance criteria on the default desk instance (m=3, k=4, n=2, r_b=0.15, s=0.05, seed 7).

Each test prints one PASS/FAIL line, visible even when output is captured.
"""

import json
import math
import time

import numpy as np
import pytest

from skeletonmap import certify as C
from skeletonmap.cli import main


@pytest.fixture
def verdict(capsys):
    def report(number, ok, summary):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {summary}")
        return ok
    return report


def test_01_boundary_identity(desk, verdict):
    t0 = time.perf_counter()
    rep = C.cert_boundary(desk, 10_000, seed=0, tol=1e-9)
    dt = time.perf_counter() - t0
    ok = verdict(1, rep.passed and dt < 30,
                 f"boundary sup residual {rep.residuals['max']:.2e} < 1e-9 in {dt:.1f}s (< 30s)")
    assert ok


def test_02_gluing(desk, verdict):
    rep = C.cert_gluing(desk, 10_000, seed=0, tol=1e-9)
    assert verdict(2, rep.passed and rep.n_samples == 10_000,
                   f"gluing sup residual {rep.residuals['max']:.2e} < 1e-9")


def test_03_skeleton_membership(desk, verdict):
    rep = C.cert_skeleton(desk, 10_000, depth=3, seed=0, tol=1e-12)
    assert verdict(3, rep.passed and rep.n_samples == 10_000,
                   f"skeleton distance max {rep.residuals['max']:.2e} <= 1e-12")


def test_04_rank_bound(desk, verdict):
    rep = C.cert_rank_bound(desk, depth=3, n_samples=10_000, tol=1e-6, fd_step=1e-6)
    neg = C.cert_rank_negative(desk, tol=1e-6, fd_step=1e-6)
    ok = (rep.passed and rep.n_samples == 10_000 and rep.exclusion_fraction < 0.05
          and neg.residuals["max"] > 1e-3)
    assert verdict(4, ok, f"sigma4/sigma1 max {rep.residuals['max']:.2e} < 1e-6, exclusion "
                          f"{rep.exclusion_fraction:.2%}; ridge control {neg.residuals['max']:.2e}"
                          " > 1e-3")


def test_05_selfsimilarity(desk, verdict):
    rep = C.cert_selfsimilarity(desk, depth=3, n_checks=1000)
    ok = rep.passed and rep.tolerance == 2 * math.sqrt(4) * 2.0 ** -3 \
        and rep.details["empty_address_max"] == 0.0
    assert verdict(5, ok, f"residual max {rep.residuals['max']:.2e} <= {rep.tolerance}; "
                          f"empty address {rep.details['empty_address_max']}")


def test_06_convergence(desk, verdict):
    rep = C.cert_convergence(desk, n_samples=1000, depths=(1, 2, 3))
    assert verdict(6, rep.passed and rep.residuals["max"] <= 1.0,
                   f"max |F_d - F_d+2| / (2 n^-d) = {rep.residuals['max']:.3f} <= 1")


def test_07_derivative_decay(desk, verdict):
    rep = C.cert_derivative_decay(desk, generations=3, n_samples=200)
    pilot = C.cert_derivative_decay(desk, generations=2, n_samples=200, pilot=True)
    g, p = rep.details["fitted_ratio"], pilot.details["fitted_ratio"]
    ok = abs(g - 10 / 3) <= 0.15 * 10 / 3 and abs(p - 0.5) <= 0.15 * 0.5
    assert verdict(7, ok, f"desk ratio {g:.4f} vs gamma 3.3333; pilot (n=33) {p:.4f} vs 0.5")


def test_08_hopf_linking(desk, verdict):
    rep = C.cert_linking(desk, samples=(256, 1024), tol=0.05)
    raw, ints = rep.details["raw"], rep.details["linking"]
    ok = (all(abs(i) == 1 for i in ints) and ints[0] == ints[1]
          and all(abs(r - i) < 0.05 for r, i in zip(raw, ints)))
    assert verdict(8, ok, f"linking {ints}, Gauss integrals {[round(r, 6) for r in raw]}")


def test_09_sard_breach(desk, verdict):
    t0 = time.perf_counter()
    rep = C.experiment_sard_breach(desk, eps=desk.layout.radius ** 2, order=4, depth=4)
    dt = time.perf_counter() - t0
    last = rep["runs"][-1]
    ok = (rep["pass"] and last["found"] and min(last["ball_samples"]) >= 200
          and last["g_off_skeleton_cells"] > 0 and rep["F_off_skeleton_cells"] == 0
          and rep["negative_control"]["NoBreachFound"] and dt < 600)
    assert verdict(9, ok, f"breach ball found (samples {last.get('ball_samples')}), delta "
                          f"{last['delta']:.3f}; g off-skeleton cells "
                          f"{last['g_off_skeleton_cells']}, F {rep['F_off_skeleton_cells']}; "
                          f"{dt:.0f}s")


def test_10_local_approximation(verdict):
    rep = C.experiment_local_approx(eps_list=(0.2, 0.1, 0.05, 0.025), n_samples=1000)
    rows = rep["rows"]
    errs = [r["sup_error"] for r in rows]
    ok = (all(b < a for a, b in zip(errs[:-1], errs[1:]))
          and max(r["max_rank_ratio"] for r in rows) < 1e-8
          and min(r["min_det_DPhi"] for r in rows) > 0)
    assert verdict(10, ok, "sup errors " + ", ".join(f"{e:.1e}" for e in errs)
                   + f"; rank ratio {max(r['max_rank_ratio'] for r in rows):.1e}")


def test_11_determinism(tmp_path, monkeypatch, verdict):
    texts = []
    for run in ("a", "b"):
        d = tmp_path / run
        d.mkdir()
        monkeypatch.chdir(d)
        code = main(["certify", "--suite", "all", "--out", "report.json"])
        doc = json.loads((d / "report.json").read_text())
        doc.pop("metadata")
        texts.append(json.dumps(doc, sort_keys=True, indent=1).encode())
    assert verdict(11, code == 0 and texts[0] == texts[1],
                   f"two 'certify --suite all' reports identical ({len(texts[0])} bytes "
                   "without metadata)")
