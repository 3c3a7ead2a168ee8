import numpy as np
import pytest

from starflow.errors import DegenerateSplittingError, ValidationError
from starflow.flow import sample_orbit
from starflow.oseledec import (ExponentReport, check_domination, classify_measure, combined_error,
                               drop_zero_exponent, exponents_from_cocycle, lyapunov_exponents_lpf,
                               lyapunov_exponents_tangent, oseledec_splitting, restricted_norms,
                               splitting_from_cocycle)
from starflow.poincare import constant_cocycle, cocycle_from_segment

TWO_PI = 2 * np.pi


def ginelli_vectors(mats):
    """Covariant vectors of a 2x2 cocycle by forward QR then backward R^-1 iteration."""
    n = len(mats)
    Q = np.eye(2)
    Qs, Rs = [Q], []
    for A in mats:
        Q, R = np.linalg.qr(A @ Q)
        s = np.sign(np.diag(R))
        Q, R = Q * s, R * s[:, None]
        Qs.append(Q)
        Rs.append(R)
    C = np.eye(2)
    slow = np.empty((n + 1, 2))
    slow[n] = Qs[n] @ C[:, 1]
    for i in range(n - 1, -1, -1):
        C = np.linalg.solve(Rs[i], C)
        C /= np.linalg.norm(C, axis=0)
        slow[i] = Qs[i] @ C[:, 1]
    fast = np.array([q[:, 0] for q in Qs])
    return slow, fast


def line_angle(a, b):
    c = np.abs(np.sum(a * b, axis=-1)) / (np.linalg.norm(a, axis=-1) * np.linalg.norm(b, axis=-1))
    return np.arccos(np.clip(c, 0, 1))


def test_report_invariants():
    with pytest.raises(ValidationError):
        ExponentReport(np.array([1.0, -1.0]), "lpf")
    rep = exponents_from_cocycle(constant_cocycle(np.diag([np.exp(-2), np.exp(1)]), 200))
    np.testing.assert_allclose(rep.values, [-2, 1], atol=1e-12)
    assert rep.converged and np.all(rep.convergence_error >= 0)


def test_cycle_tangent_exponents(cyc):
    rep = lyapunov_exponents_tangent(cyc, (0.5, 0, 0.3), 500, 0.1)
    np.testing.assert_allclose(rep.values, [-2, -1, 0], atol=2e-2)
    with pytest.raises(ValidationError):
        lyapunov_exponents_tangent(cyc, (0.5, 0, 0.3), 5, 0.1)


def test_linear_tangent_exponents(lin):
    rep = lyapunov_exponents_tangent(lin, (1e-3, 1e-3, 1e-3), 10, 0.1)
    np.testing.assert_allclose(rep.values, [-2, -1, 1], atol=1e-6)


def test_cycle_lpf_exponents(cyc):
    s = lyapunov_exponents_lpf(cyc, (1, 0, 0), 20 * TWO_PI, TWO_PI / 10, scaled=True)
    u = lyapunov_exponents_lpf(cyc, (1, 0, 0), 20 * TWO_PI, TWO_PI / 10, scaled=False)
    np.testing.assert_allclose(s.values, [-2, -1], atol=1e-3)
    np.testing.assert_allclose(s.values, u.values, atol=1e-6)
    off_s = lyapunov_exponents_lpf(cyc, (0.5, 0, 0.3), 400, 1.0, scaled=True)
    off_u = lyapunov_exponents_lpf(cyc, (0.5, 0, 0.3), 400, 1.0, scaled=False)
    assert np.all(np.abs(off_s.values - off_u.values) <= combined_error(off_s, off_u))
    with pytest.raises(ValidationError):
        lyapunov_exponents_lpf(cyc, (1, 0, 0), 10, 1.0)


def test_lorenz_exponents(lor_exponents):
    tan, s, u = lor_exponents["tangent"], lor_exponents["scaled"], lor_exponents["unscaled"]
    assert s.values[0] < -1 < 0 < 0.8 < s.values[1]
    assert np.sum(np.abs(tan.values) < 0.05) == 1
    nonzero = drop_zero_exponent(tan)
    err = tan.convergence_error[[0, 2]] + s.convergence_error
    assert np.all(np.abs(nonzero - s.values) <= err)
    assert np.all(np.abs(s.values - u.values) <= combined_error(s, u))
    assert tan.values.sum() == pytest.approx(-(10 + 1 + 8 / 3), abs=5e-2)
    cls = classify_measure(s)
    assert cls.state == "hyperbolic" and cls.index == 1 and cls.saddle


def test_exponent_additivity(lor_ref):
    coc = lor_ref.splitting.cocycle
    rep = exponents_from_cocycle(coc)
    mean_logdet = np.mean(np.log(np.abs(np.linalg.det(coc.matrices)))) / coc.step
    assert rep.values.sum() == pytest.approx(mean_logdet, abs=1e-3)


def test_report_csv(tmp_path, lin):
    rep = lyapunov_exponents_tangent(lin, (1, 1, 1), 10, 0.1)
    rep.to_csv(tmp_path / "r.csv", every=10)
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "kind,window,lambda1,lambda2,lambda3,convergence_error"
    assert len(lines) == 11 and lines[-1].startswith("tangent,10.0")


def cycle_splitting(cyc):
    seg = sample_orbit(cyc, (1, 0, 0), 10 * TWO_PI, TWO_PI / 100)
    return oseledec_splitting(cyc, seg, TWO_PI / 10)


def test_cycle_splitting_directions(cyc):
    sp = cycle_splitting(cyc)
    from starflow.poincare import normal_frame

    for k, i in enumerate(sp.indices):
        p = sp.cocycle.points[i]
        B = normal_frame(cyc, p).basis
        radial = np.array([p[0], p[1], 0.0])
        assert line_angle(B.T @ sp.e1[k], radial) <= 1e-4
        assert line_angle(B.T @ sp.e2[k], np.array([0, 0, 1.0])) <= 1e-4
    assert np.all(sp.angles > 0) and np.all(sp.angles <= np.pi)
    np.testing.assert_allclose(np.linalg.norm(sp.e1, axis=1), 1, atol=1e-12)


def test_constant_diagonal_splitting():
    sp = splitting_from_cocycle(constant_cocycle(np.diag([np.exp(-2), np.exp(1)]), 50))
    assert np.all(line_angle(sp.e1, np.array([1.0, 0])) == 0)
    assert np.all(line_angle(sp.e2, np.array([0, 1.0])) == 0)


def test_degenerate_splitting_detected():
    shear = np.array([[1.0, 1e8], [0.0, 1.0]])
    with pytest.raises(DegenerateSplittingError) as info:
        splitting_from_cocycle(constant_cocycle(shear, 50))
    assert info.value.angle < 1e-6


def test_lorenz_splitting_matches_covariant_vectors(lor_ref):
    sp = lor_ref.splitting
    slow, fast = ginelli_vectors(sp.cocycle.matrices)
    assert sp.angles.min() > 0.05
    assert line_angle(sp.e2, fast[sp.indices]).max() <= 1e-6
    assert line_angle(sp.e1, slow[sp.indices]).max() <= 1e-6
    assert line_angle(slow[sp.indices], fast[sp.indices]).min() > 0.05


def test_splitting_is_invariant(lor_ref):
    sp = lor_ref.splitting
    mats = sp.cocycle.matrices[sp.indices[:-1]]
    push2 = np.einsum("nij,nj->ni", mats, sp.e2[:-1])
    push1 = np.einsum("nij,nj->ni", mats, sp.e1[:-1])
    assert line_angle(push2, sp.e2[1:]).max() <= 1e-3
    assert line_angle(push1, sp.e1[1:]).max() <= 1e-3
    c, x = restricted_norms(sp)
    assert np.all(c > 0) and c.shape == x.shape == (len(sp.indices) - 1,)


def test_domination_on_cycle(cyc):
    sp = cycle_splitting(cyc)
    cert = check_domination(cyc, None, sp, TWO_PI / 10, 3.0)
    assert cert.verdict and cert.fitted_lambda == pytest.approx(1.0, rel=0.2) and cert.fitted_C >= 1
    bad = check_domination(cyc, None, sp.swapped(), TWO_PI / 10, 3.0)
    assert not bad.verdict and bad.fitted_lambda <= 0


def test_domination_on_lorenz(lor, lor_ref):
    cert = check_domination(lor, lor_ref.segment, lor_ref.splitting, 1.0, 20.0, stride=5)
    assert cert.verdict and cert.fitted_lambda > 0
    curve = np.log(cert.worst_ratio_curve)
    assert curve[-1] < curve[0]


@pytest.mark.parametrize("vals,state,index", [((-2, -1), "hyperbolic", 2),
                                              ((-14.5, 0.9), "hyperbolic", 1),
                                              ((-0.05, 0.9), "non-hyperbolic", 0)])
def test_classification(vals, state, index):
    rep = ExponentReport(np.array(vals, float), "scaled-lpf", convergence_error=np.zeros(2))
    cls = classify_measure(rep, 0.1)
    assert cls.state == state and cls.index == index
    if index == 1:
        assert cls.saddle and not cls.excluded_by_domination
    if index == 2:
        assert cls.excluded_by_domination


def test_classification_inconclusive_and_kind():
    rep = ExponentReport(np.array([-1.0, 1.0]), "lpf", convergence_error=np.array([1.0, 1.0]))
    assert classify_measure(rep).state == "inconclusive"
    with pytest.raises(ValidationError):
        classify_measure(ExponentReport(np.array([-1.0, 0, 1.0]), "tangent",
                                        convergence_error=np.zeros(3)))


def test_orbit_level_reversal(lor, lor_ref):
    """Exponents of -X along the same arc are the negated, swapped pair."""
    fwd = lor_ref.report
    back = exponents_from_cocycle(cocycle_from_segment(lor_ref.segment.reversed(), 1.0))
    assert np.all(np.abs(back.values - (-fwd.values[::-1])) <= combined_error(fwd, back)[::-1]
                  + combined_error(fwd, back))
