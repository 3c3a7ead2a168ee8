import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from starflow.config import build_config
from starflow.errors import DomainError, StalenessError, ValidationError, ZeroCandidatesError
from starflow.flow import sample_orbit
from starflow.measures import (ExperimentConfig, FunctionDictionary, birkhoff_average, dirac,
                               empirical_measure, monomial_exponents, periodic_measure,
                               reference_run, theorem_a_experiment, theorem_b_experiment,
                               trend_groups, weak_star_distance)
from starflow.shadowing import refine_periodic_orbit

from conftest import TWO_PI

UNIT_BOX = FunctionDictionary(np.full(3, -1.0), np.full(3, 1.0), 8)


@pytest.fixture(scope="module")
def cycle_orbit(cyc, cycle_segment):
    return refine_periodic_orbit(cyc, cycle_segment.points[:501], TWO_PI, closed=True)


@pytest.fixture(scope="module")
def cyc_config():
    return build_config(field_name="CYC").experiment()


@pytest.fixture(scope="module")
def cyc_theorem_a(cyc, cyc_config):
    return theorem_a_experiment(cyc, cyc_config)


# measures

def test_single_point_segment_is_dirac(cyc):
    seg = sample_orbit(cyc, (0.3, 0.4, 0.5), 0.0, 0.1)
    mu = empirical_measure(seg)
    assert len(mu.points) == 1 and mu.weights[0] == 1.0
    np.testing.assert_array_equal(mu.points[0], [0.3, 0.4, 0.5])


def test_cycle_empirical_measure(cycle_segment):
    mu = empirical_measure(cycle_segment)
    n = cycle_segment.n
    assert len(mu.points) == n
    np.testing.assert_allclose(np.linalg.norm(mu.points[:, :2], axis=1), 1.0, atol=1e-9)
    np.testing.assert_array_equal(mu.weights, np.full(n, 1.0 / n))
    assert abs(mu.weights.sum() - 1.0) <= 1e-12


def test_weights_validated():
    with pytest.raises(ValidationError):
        type(dirac([0, 0, 0]))(np.zeros((2, 3)), np.array([0.7, 0.7]), "periodic")


def test_periodic_measure_phases(cycle_orbit):
    np.testing.assert_allclose(cycle_orbit.anchor, [1.0, 0.0, 0.0], atol=1e-9)
    nu = periodic_measure(cycle_orbit, 16)
    np.testing.assert_array_equal(nu.weights, np.full(16, 1 / 16))
    quarter = nu.points[::4]
    phases = np.array([0.0, 0.5, 1.0, 1.5]) * math.pi
    np.testing.assert_allclose(quarter, np.column_stack([np.cos(phases), np.sin(phases), np.zeros(4)]),
                               atol=1e-8)
    with pytest.raises(ValidationError):
        periodic_measure(cycle_orbit, 4)


def test_periodic_measure_refinement(cycle_orbit):
    dic = FunctionDictionary.from_points(cycle_orbit.phase_points(64), 20)
    a = dic.integrals(periodic_measure(cycle_orbit, 64))
    b = dic.integrals(periodic_measure(cycle_orbit, 128))
    assert np.max(np.abs(a - b)) <= 1.0 / 64


def test_periodic_measure_staleness(cycle_orbit):
    stale = dataclasses.replace(cycle_orbit, period=cycle_orbit.period * 1.01)
    with pytest.raises(StalenessError):
        periodic_measure(stale, 64)


def test_lor_periodic_measure_atoms(lor_theorem_a):
    ref = lor_theorem_a.reference
    orbit = min((c.orbit for c in lor_theorem_a.candidates if c.status == "ok"),
                key=lambda o: o.period)
    a = ref.dictionary.integrals(periodic_measure(orbit, 256))
    b = ref.dictionary.integrals(periodic_measure(orbit, 512))
    assert np.max(np.abs(a - b)) <= 1e-4


# dictionary and metric

def test_monomial_order():
    np.testing.assert_array_equal(monomial_exponents(10), [
        [0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1],
        [2, 0, 0], [1, 1, 0], [1, 0, 1], [0, 2, 0], [0, 1, 1], [0, 0, 2]])


def test_dictionary_sup_norms_on_box():
    dic = FunctionDictionary(np.array([-2.0, 0.0, 5.0]), np.array([2.0, 1.0, 9.0]), 20)
    corners = np.array([[x, y, z] for x in (-2, 2) for y in (0, 1) for z in (5, 9)], float)
    vals = np.abs(dic.evaluate(corners))
    np.testing.assert_allclose(vals.max(axis=0), dic.sup_norms)
    assert np.all(dic.sup_norms > 0) and np.all(np.isfinite(dic.sup_norms))


def test_dictionary_box_margin():
    pts = np.array([[0.0, 0.0, 0.0], [1.0, 2.0, 4.0]])
    dic = FunctionDictionary.from_points(pts)
    np.testing.assert_allclose(dic.lo, [-0.1, -0.2, -0.4])
    np.testing.assert_allclose(dic.hi, [1.1, 2.2, 4.4])


def test_distance_identical_is_zero(cycle_segment):
    mu = empirical_measure(cycle_segment)
    dic = FunctionDictionary.from_points(cycle_segment.points)
    for n in (1, 5, 20):
        assert weak_star_distance(mu, mu, dic, n)[0] == 0.0


def test_dirac_distance_hand_oracle():
    a = np.array([0.5, -0.2, 0.1])
    b = np.array([-0.3, 0.4, 0.7])
    fs = [lambda p: 1.0, lambda p: p[0], lambda p: p[1], lambda p: p[2],
          lambda p: p[0] ** 2, lambda p: p[0] * p[1], lambda p: p[0] * p[2], lambda p: p[1] ** 2]
    expected = sum(abs(f(a) - f(b)) / 2 ** i for i, f in enumerate(fs, 1))
    val, tail = weak_star_distance(dirac(a), dirac(b), UNIT_BOX, 8)
    assert val == pytest.approx(expected, abs=1e-15)
    assert tail == 2.0 ** -7


def test_distance_domain_error():
    with pytest.raises(DomainError):
        weak_star_distance(dirac([0, 0, 0]), dirac([1.5, 0, 0]), UNIT_BOX, 8)


def _measure(draw_pts, draw_w):
    w = np.asarray(draw_w) + 1e-3
    return type(dirac([0, 0, 0]))(np.asarray(draw_pts), w / w.sum(), "orbit-empirical")


points = st.lists(st.tuples(*[st.floats(-1, 1)] * 3), min_size=1, max_size=6)


@st.composite
def measures(draw):
    pts = draw(points)
    w = draw(st.lists(st.floats(0, 1), min_size=len(pts), max_size=len(pts)))
    return _measure(pts, w)


@settings(max_examples=60, deadline=None)
@given(measures(), measures(), measures())
def test_triangle_inequality(mu, nu, la):
    dic = FunctionDictionary(np.full(3, -1.0), np.full(3, 1.0), 20)
    ab, tail = weak_star_distance(mu, nu, dic)
    bc, _ = weak_star_distance(nu, la, dic)
    ac, _ = weak_star_distance(mu, la, dic)
    assert ac <= ab + bc + 2 * tail
    assert ab == pytest.approx(weak_star_distance(nu, mu, dic)[0], abs=1e-15)


@settings(max_examples=60, deadline=None)
@given(measures(), measures(), st.integers(1, 19))
def test_truncation_brackets(mu, nu, n):
    dic = FunctionDictionary(np.full(3, -1.0), np.full(3, 1.0), 20)
    lo, tail = weak_star_distance(mu, nu, dic, n)
    hi, _ = weak_star_distance(mu, nu, dic, 20)
    assert lo <= hi + 1e-15
    assert hi - lo <= tail + 1e-15


# Birkhoff averages

def test_birkhoff_constant(lor, lor_x):
    assert birkhoff_average(lor, lor_x, lambda p: np.full(len(p), 3.25), 10.0, 0.01) == pytest.approx(
        3.25, abs=1e-14)


def test_birkhoff_cycle(cyc):
    z = birkhoff_average(cyc, (1, 0, 0), lambda p: p[:, 2], TWO_PI, TWO_PI / 500)
    x2 = birkhoff_average(cyc, (1, 0, 0), lambda p: p[:, 0] ** 2, TWO_PI, TWO_PI / 500)
    assert abs(z) <= 1e-10
    assert abs(x2 - 0.5) <= 1e-6


def test_birkhoff_dictionary_index(cyc, cycle_orbit):
    dic = FunctionDictionary.from_points(cycle_orbit.phase_points(64), 10)
    nu = periodic_measure(cycle_orbit, 500)
    integrals = dic.integrals(nu)
    for i in range(1, 11):
        avg = birkhoff_average(cyc, cycle_orbit.anchor, i, cycle_orbit.period, cycle_orbit.period / 500,
                               dictionary=dic)
        assert abs(avg - integrals[i - 1]) <= 1e-6
    with pytest.raises(ValidationError):
        birkhoff_average(cyc, (1, 0, 0), 2, 1.0, 0.1)


# experiments

def test_cyc_theorem_a(cyc_theorem_a):
    rows = cyc_theorem_a.rows
    assert len(rows) == 1
    r = rows[0]
    assert abs(r["period"] - TWO_PI) <= 1e-8
    assert r["d_M"] <= 2 * r["tail"] + 1e-6


def test_cyc_theorem_b(cyc, cyc_config, cyc_theorem_a):
    res = theorem_b_experiment(cyc, cyc_config, forward=cyc_theorem_a)
    err = res.reference.report.convergence_error
    r = res.rows[0]
    assert r["dev1"] <= err[0] + 1e-6 and r["dev2"] <= err[1] + 1e-6
    assert res.extra["orbit_reversal_max_error"] <= 1e-6


def test_zero_candidates(lor, lor_ref):
    cfg = ExperimentConfig(total_time=1500.0, delta=1e-12)
    with pytest.raises(ZeroCandidatesError) as exc:
        theorem_a_experiment(lor, cfg, reference=lor_ref)
    assert exc.value.report == []


def test_lor_theorem_a_table(lor_theorem_a):
    rows = lor_theorem_a.rows
    assert [r["lT"] for r in rows] == sorted(r["lT"] for r in rows)
    assert len({r["orbit_id"] for r in rows}) == len(rows)
    for r in rows:
        assert 0 <= r["d_M"] and r["tail"] == 2.0 ** -19
        assert math.isfinite(r["epsilon_achieved"])
    for c in lor_theorem_a.candidates:
        assert c.status == "ok" or c.status.startswith(("failed", "skipped", "duplicate"))


def test_lor_theorem_b_table(lor_theorem_b):
    rows = lor_theorem_b.rows
    assert rows
    for r in rows:
        assert r["lambda1_p"] < 0 < r["lambda2_p"]
        assert abs(r["long_run1"] - r["lambda1_p"]) <= 1e-3
        assert abs(r["long_run2"] - r["lambda2_p"]) <= 1e-3
    for key in ("dev1", "dev2"):
        hi, lo = trend_groups(rows, key)
        assert max(hi) <= min(lo)
    assert lor_theorem_b.extra["orbit_reversal_max_error"] <= 1e-6
    assert lor_theorem_b.extra["reverse_max_error"] <= 1e-6


def test_deviations_invariant_under_halved_dt(lor, lor_config, lor_theorem_b):
    half = reference_run(lor, dataclasses.replace(lor_config, dt=lor_config.dt / 2))
    err = lor_theorem_b.reference.report.convergence_error + half.report.convergence_error
    for r in lor_theorem_b.rows:
        for i, key in ((0, "lambda1_p"), (1, "lambda2_p")):
            dev_half = abs(half.report.values[i] - r[key])
            assert abs(dev_half - r[f"dev{i + 1}"]) <= err[i]
