"""Acceptance suite: one test per criterion, each at its stated tolerance.

A summary line per criterion is printed at the end of the pytest run.
"""
import math
import time

import numpy as np
import pytest

from starflow.cli import main
from starflow.config import build_config
from starflow.flow import sample_orbit
from starflow.measures import theorem_a_experiment, trend_groups
from starflow.oseledec import (combined_error, exponents_from_cocycle,
                               lyapunov_exponents_lpf, lyapunov_exponents_tangent)
from starflow.pesin import (PesinParams, cone_contains, cone_invariance_check,
                            perturbation_margin_check, pesin_block_test, quasi_hyperbolic_scan,
                            sigma3, sigma4)
from starflow.poincare import cocycle_from_segment, fit_return_constant
from starflow.shadowing import find_periodic_from_recurrence, floquet, refine_periodic_orbit

from conftest import TWO_PI
from test_pesin import _NoSing, random_splitting

ROUNDOFF = 1e-12


def ok_orbits(result):
    return [c.orbit for c in result.candidates if c.status == "ok"]


def test_criterion_1_limit_cycle_ground_truth(cyc):
    t0 = time.perf_counter()
    tan = lyapunov_exponents_tangent(cyc, (1, 0, 0), 20 * TWO_PI, TWO_PI / 50)
    lpf = lyapunov_exponents_lpf(cyc, (1, 0, 0), 20 * TWO_PI, TWO_PI / 10, scaled=True)
    seeds = sample_orbit(cyc, (1.05, 0, 0.02), 6.0, 0.1).points[:-1]
    orbit = refine_periodic_orbit(cyc, seeds, 6.0)
    fl = floquet(orbit)
    elapsed = time.perf_counter() - t0
    np.testing.assert_allclose(lpf.values, [-2, -1], atol=1e-3)
    np.testing.assert_allclose(tan.values, [-2, -1, 0], atol=2e-2)
    np.testing.assert_allclose(fl.exponents, [-2, -1], atol=1e-6)
    assert elapsed < 10


@pytest.mark.parametrize("name", ["CYC", "LOR"])
def test_criterion_2_scaled_unscaled_identity(name, cyc, lor, lor_x):
    t0 = time.perf_counter()
    if name == "CYC":
        fld, x, total, T, dt = cyc, (1, 0, 0), 20 * TWO_PI, TWO_PI / 10, TWO_PI / 50
    else:
        fld, x, total, T, dt = lor, lor_x, 2000.0, 1.0, 0.1
    tan = lyapunov_exponents_tangent(fld, x, total, dt)
    scaled = lyapunov_exponents_lpf(fld, x, total, T, scaled=True)
    unscaled = lyapunov_exponents_lpf(fld, x, total, T, scaled=False)
    # on the exact cycle both estimates converge to round-off, so the error needs a floor
    err = combined_error(scaled, unscaled) + ROUNDOFF
    assert np.all(np.abs(scaled.values - unscaled.values) <= err)
    assert np.sum(np.abs(tan.values) < 0.05) == 1
    assert time.perf_counter() - t0 < 300


def test_criterion_3_reversal(lor, lor_ref, lor_theorem_a, lor_theorem_b):
    fwd = lor_ref.report
    back = exponents_from_cocycle(cocycle_from_segment(lor_ref.segment.reversed(), 1.0))
    tol = combined_error(fwd, back) + combined_error(fwd, back)[::-1]
    assert np.all(np.abs(back.values + fwd.values[::-1]) <= tol)
    for orbit in ok_orbits(lor_theorem_a):
        fl = floquet(orbit).exponents
        rv = floquet(orbit.reversed()).exponents
        np.testing.assert_allclose(rv, -fl[::-1], atol=1e-6)
    assert lor_theorem_b.extra["reverse_matched"] >= 1
    assert lor_theorem_b.extra["reverse_max_error"] <= 1e-6


def test_criterion_4_lorenz_divergence(lor_exponents):
    total = float(np.sum(lor_exponents["tangent"].values))
    assert abs(total - (-(10.0 + 1.0 + 8.0 / 3.0))) <= 5e-2


def test_criterion_5_pesin_and_cone_properties():
    t0 = time.perf_counter()
    rng = np.random.default_rng(20240501)
    # monotone in k
    for seed in range(100):
        sp = random_splitting(seed)
        eta, start = rng.uniform(0, 1), int(rng.integers(0, 60))
        prev = None
        for k in (1.0, 2.0, 5.0, 20.0, 100.0):
            v = pesin_block_test(_NoSing(), start, sp, PesinParams(T=1, eta=eta, k=k), 40)
            if prev is not None:
                assert v.margin >= prev.margin - 1e-12 and (v.passed or not prev.passed)
            prev = v
    # monotone in eta: intervals at a larger eta sit inside those at a smaller one
    for seed in range(50):
        sp = random_splitting(seed, n=60)
        etas = np.sort(rng.uniform(0, 1, 3))
        scans = [quasi_hyperbolic_scan(sp, e, 1.0) for e in etas]
        for loose, tight in zip(scans, scans[1:]):
            assert all(any(a2 <= a and b <= b2 for a2, b2 in loose) for a, b in tight)
    # cone invariance on dominated cocycles with admissible perturbations
    gamma, rho = math.exp(-0.5), 2.0
    s4 = sigma4(gamma, rho)
    ang = np.linspace(-math.atan(1 / rho), math.atan(1 / rho), 1024)
    oracle_dirs = np.vstack([np.sin(ang), np.cos(ang)])
    passed = 0
    for _ in range(100):
        n = int(rng.integers(1, 8))
        a1 = np.exp(rng.uniform(-2, 2, n))
        steps = [np.diag([a, a * math.exp(rng.uniform(0.5, 3.0))]) for a in a1]
        perts = []
        for _ in range(n):
            M = rng.normal(size=(2, 2))
            perts.append(np.eye(2) + rng.uniform(0, s4) * M / np.linalg.norm(M, 2))
        v = cone_invariance_check(steps, rho, gamma, perts)
        assert all(v.perturbation_ok)
        for A, B in zip(steps, perts):
            img = A @ B @ oracle_dirs
            assert all(cone_contains(w, rho, 1e-9) for w in img.T)
        passed += v.passed
    assert passed == 100
    # perturbation margin: zero counterexamples
    counter = 0
    trials = 0
    while trials < 100_000:
        A = rng.normal(size=(2, 2))
        if np.linalg.cond(A) > 1e8:
            continue
        eps1 = rng.uniform(1e-3, 2.0)
        M = rng.normal(size=(2, 2))
        B = np.eye(2) + rng.uniform(0, 1) * sigma3(A, eps1) * M / np.linalg.norm(M, 2)
        counter += perturbation_margin_check(A, B, eps1) == "counterexample"
        trials += 1
    assert counter == 0
    assert time.perf_counter() - t0 < 120


def test_criterion_6_shadowing(cyc, lor_theorem_a):
    eps = []
    for r in (1.1, 1.05, 1.02, 1.01):
        seg = sample_orbit(cyc, (r, 0.0, 0.0), TWO_PI, TWO_PI / 500)
        _, rep = find_periodic_from_recurrence(cyc, seg, (0, 1), TWO_PI, 0.5)
        assert rep.passed
        eps.append(rep.epsilon_achieved)
    assert all(a > b for a, b in zip(eps, eps[1:]))
    emitted = [c for c in lor_theorem_a.candidates if c.status == "ok"]
    assert emitted
    for c in emitted:
        rep = c.shadowing
        assert c.orbit.closure_residual <= 1e-9
        assert set(rep.items) == {"1", "2", "3"}
        assert len(rep.theta) == len(rep.t) == len(rep.ratios) == c.l + 1
        assert math.isfinite(rep.epsilon_achieved) and rep.epsilon_achieved == rep.ratios.max()


def test_criterion_7_theorem_a(cyc, lor_theorem_a):
    rows = lor_theorem_a.rows
    assert len(rows) >= 8
    assert lor_theorem_a.extra["spearman"] <= -0.5
    assert sum(lor_theorem_a.timings.values()) < 900
    res = theorem_a_experiment(cyc, build_config(field_name="CYC").experiment())
    r = res.rows[0]
    assert r["d_M"] <= 2 * r["tail"] + 1e-6


def test_criterion_8_theorem_b(lor_theorem_b):
    rows = lor_theorem_b.rows
    for r in rows:
        assert math.isfinite(r["dev1"]) and math.isfinite(r["dev2"])
        assert abs(r["long_run1"] - r["lambda1_p"]) <= 1e-3
        assert abs(r["long_run2"] - r["lambda2_p"]) <= 1e-3
    for key in ("dev1", "dev2"):
        best, worst = trend_groups(rows, key)
        assert max(best) <= min(worst)
    assert lor_theorem_b.extra["reverse_matched"] >= 1
    assert lor_theorem_b.extra["reverse_max_error"] <= 1e-6


@pytest.mark.parametrize("name", ["CYC", "LOR"])
def test_criterion_9_return_time_bound(name, cyc, lor, lor_x):
    fld, x = (cyc, np.array([0.6, 0.2, 0.4])) if name == "CYC" else (lor, lor_x)
    rng = np.random.default_rng(9)
    radii = np.exp(rng.uniform(math.log(1e-5), math.log(1e-3), 50))
    k1, r1 = fit_return_constant(fld, x, radii, np.random.default_rng(1))
    k2, r2 = fit_return_constant(fld, x, radii / 2, np.random.default_rng(2))
    assert k1 > 0 and k2 > 0
    assert max(k1, k2) / min(k1, k2) <= 2.0
    assert np.all(r2 <= k1 * 2.0)


def test_criterion_10_determinism(tmp_path):
    runs = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        assert main(["exponents", "--seed", "5", "--out", str(out)]) == 0
        assert main(["theorems", "--field", "CYC", "--seed", "5", "--out", str(out)]) == 0
        assert main(["pesin-scan", "--field", "CYC", "--seed", "5", "--out", str(out)]) == 0
        runs.append(out)
    tables = sorted(p.name for p in runs[0].glob("*.csv"))
    assert len(tables) >= 7
    for name in tables:
        assert (runs[0] / name).read_bytes() == (runs[1] / name).read_bytes(), name
