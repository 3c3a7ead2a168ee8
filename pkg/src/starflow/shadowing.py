"""Periodic orbits near recurrent segments: multiple-shooting refinement,
Floquet data, the reparameterization theta and a-posteriori shadowing checks.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.optimize import isotonic_regression

from .errors import (InconsistentMonodromyError, NoConvergenceError, ShadowingMismatchError,
                     ValidationError)
from .fields import VectorField, reverse
from .flow import TrajectorySegment, integrate, integrate_with_tangent
from .oseledec import ZERO_TOL, exponents_from_cocycle
from .poincare import Cocycle, normal_frame

NEWTON_TOL = 1e-9
NEWTON_MAX_ITER = 50
SHOOT_TOL = 1e-12
SHOOT_SPACING = 0.2
FLOW_EIG_TOL = 1e-6


def shooting_count(period_guess: float) -> int:
    return max(8, int(math.ceil(period_guess / SHOOT_SPACING)))


@dataclass(frozen=True, eq=False)
class PeriodicOrbit:
    """Refined closed orbit.

    ``samples`` are the shooting points, at uniform phase period/m starting
    from ``anchor``.  ``normal_log_moduli`` are log moduli of the two normal
    Floquet multipliers, kept in log form so that strongly contracting
    orbits do not underflow.
    """

    field: VectorField
    anchor: np.ndarray
    period: float
    samples: np.ndarray
    monodromy: np.ndarray
    normal_log_moduli: np.ndarray
    closure_residual: float
    tol: float = SHOOT_TOL
    defective: bool = False
    iterations: int = 0
    history: tuple = ()

    @property
    def m(self) -> int:
        return len(self.samples)

    @property
    def h(self) -> float:
        return self.period / self.m

    @property
    def lpf_exponents(self) -> np.ndarray:
        return np.sort(self.normal_log_moduli) / self.period

    @property
    def multipliers(self) -> np.ndarray:
        """Eigenvalue moduli of the monodromy, ascending (flow multiplier is 1)."""
        return np.sort(np.concatenate([np.exp(self.normal_log_moduli), [1.0]]))

    def point_at(self, tau: float) -> np.ndarray:
        tau = float(tau) % self.period
        i = min(int(tau // self.h), self.m - 1)
        dt = tau - i * self.h
        p = self.samples[i]
        return p.copy() if dt == 0.0 else integrate(self.field, p, dt, self.tol)

    def phase_points(self, n: int) -> np.ndarray:
        """n points at uniform phase period/n, each integrated from the nearest shooting point."""
        return np.array([self.point_at(j * self.period / n) for j in range(n)])

    def closure_drift(self) -> float:
        """|phi_h(last shooting point) - anchor| from a fresh integration."""
        end = integrate(self.field, self.samples[-1], self.h, self.tol)
        return float(np.linalg.norm(end - self.samples[0]))

    def canonical_anchor(self, n: int = 256) -> np.ndarray:
        """Phase-independent representative: the orbit point of maximal x."""
        taus = np.arange(n) * self.period / n
        pts = np.array([self.point_at(t) for t in taus])
        k = int(np.argmax(pts[:, 0]))
        tau = taus[k]
        step = self.period / n
        for _ in range(60):
            q = self.point_at(tau)
            X = self.field.eval(q)
            dX = self.field.jacobian(q) @ X
            if dX[0] >= 0 or abs(X[0]) < 1e-14:
                break
            d = -X[0] / dX[0]
            d = max(-step, min(step, d))
            tau += d
            if abs(d) < 1e-14 * max(1.0, self.period):
                break
        return self.point_at(tau)

    def reversed(self) -> "PeriodicOrbit":
        """The same closed curve as an orbit of -X, with Floquet data recomputed."""
        fld = reverse(self.field)
        pts = self.samples[::-1].copy()
        pts = np.vstack([pts[-1:], pts[:-1]])
        mats, mono, resid = _shooting_maps(fld, pts, self.h, self.tol)
        logs, defective = _normal_log_moduli(fld, pts, mats, self.h, self.tol)
        return PeriodicOrbit(fld, pts[0].copy(), self.period, pts, mono, logs, resid, self.tol,
                             defective)

    def lpf_cocycle(self, scaled: bool = True) -> Cocycle:
        """psi over one period at the shooting points, re-anchored at each."""
        raw = np.empty((self.m, 2, 2))
        ratios = np.empty(self.m)
        pts = np.vstack([self.samples, self.samples[:1]])
        for i in range(self.m):
            y, F = integrate_with_tangent(self.field, self.samples[i], self.h, self.tol)
            src = normal_frame(self.field, self.samples[i])
            dst = normal_frame(self.field, pts[i + 1])
            raw[i] = dst.basis @ F.matrix @ src.basis.T
            ratios[i] = self.field.speed(self.samples[i]) / self.field.speed(pts[i + 1])
        return Cocycle(self.field.id, self.h, pts, raw, ratios, scaled)

    def record(self) -> dict:
        mult = np.exp(np.sort(self.normal_log_moduli))
        lam = self.lpf_exponents
        return {
            "field": self.field.name + ("-" if self.field.reversed else ""),
            "params": ";".join(f"{k}={v!r}" for k, v in sorted(self.field.params.items())),
            "anchor": self.canonical_anchor(),
            "period": self.period,
            "multiplier1": mult[0],
            "multiplier2": mult[1],
            "lpf_lambda1": lam[0],
            "lpf_lambda2": lam[1],
            "closure_residual": self.closure_residual,
        }


def _shooting_maps(field, pts, h, tol):
    m = len(pts)
    ends = np.empty((m, 3))
    mats = np.empty((m, 3, 3))
    for i in range(m):
        ends[i], F = integrate_with_tangent(field, pts[i], h, tol)
        mats[i] = F.matrix
    mono = np.eye(3)
    for M in mats:
        mono = M @ mono
    resid = float(np.max(np.linalg.norm(ends - np.roll(pts, -1, axis=0), axis=1)))
    return mats, mono, resid


def _normal_log_moduli(field, pts, mats, h, tol):
    """Log moduli of the normal multipliers from the 2x2 linear Poincare product.

    The product is kept normalized; the small modulus comes from the exact
    sum of log|det| divided by the large one, so it never underflows.
    """
    m = len(pts)
    M = np.eye(2)
    logscale = 0.0
    logdet = 0.0
    for i in range(m):
        src = normal_frame(field, pts[i])
        dst = normal_frame(field, pts[(i + 1) % m])
        A = dst.basis @ mats[i] @ src.basis.T
        logdet += math.log(abs(np.linalg.det(A)))
        M = A @ M
        s = np.linalg.norm(M)
        M /= s
        logscale += math.log(s)
    tr = np.trace(M)
    det_n = np.linalg.det(M)
    disc = tr * tr - 4.0 * det_n
    defective = abs(disc) <= 1e-10 * max(tr * tr, 1e-300)
    if disc >= 0:
        big = 0.5 * (tr + math.copysign(math.sqrt(disc), tr))
        lb = math.log(abs(big)) + logscale
        return np.sort(np.array([logdet - lb, lb])), defective
    half = 0.5 * logdet
    return np.array([half, half]), defective


def refine_periodic_orbit(field: VectorField, seed_points, period_guess: float,
                          tol: float = NEWTON_TOL, max_iter: int = NEWTON_MAX_ITER,
                          m: int | None = None, closed: bool = False,
                          integ_tol: float = SHOOT_TOL) -> PeriodicOrbit:
    """Multiple-shooting Newton for a closed orbit near the seed loop.

    ``seed_points`` are samples of one loop at uniform time; with
    ``closed=True`` the last sample is the (approximate) return of the first
    and is dropped.  Unknowns are m shooting points and the period; the
    phase condition keeps the first point on the hyperplane through
    seed_points[0] normal to X there.  The step is damped by halving until
    the residual norm decreases.
    """
    seeds = np.asarray(seed_points, dtype=float)
    if closed:
        seeds = seeds[:-1]
    if period_guess <= 0 or len(seeds) < 2:
        raise ValidationError("need a positive period guess and at least two seed points")
    m = m or shooting_count(period_guess)
    idx = np.floor(np.arange(m) * len(seeds) / m).astype(int)
    pts = seeds[idx].copy()
    P = float(period_guess)
    s0 = seeds[0].copy()
    n0 = field.eval(s0)
    n0 /= np.linalg.norm(n0)
    dim = 3 * m + 1

    def residual(pts, P):
        h = P / m
        ends = np.empty((m, 3))
        mats = np.empty((m, 3, 3))
        for i in range(m):
            ends[i], F = integrate_with_tangent(field, pts[i], h, integ_tol)
            mats[i] = F.matrix
        r = np.empty(dim)
        r[:3 * m] = (ends - np.roll(pts, -1, axis=0)).ravel()
        r[-1] = (pts[0] - s0) @ n0
        return r, ends, mats

    r, ends, mats = residual(pts, P)
    history = [float(np.max(np.abs(r)))]
    it = 0
    while True:
        mismatch = float(np.max(np.linalg.norm(r[:3 * m].reshape(m, 3), axis=1)))
        if mismatch <= tol and abs(r[-1]) <= tol:
            break
        if it >= max_iter:
            raise NoConvergenceError(f"Newton stalled at residual {mismatch:.3g} after {it} "
                                     "iterations", history)
        J = np.zeros((dim, dim))
        for i in range(m):
            j = (i + 1) % m
            J[3 * i:3 * i + 3, 3 * i:3 * i + 3] += mats[i]
            J[3 * i:3 * i + 3, 3 * j:3 * j + 3] -= np.eye(3)
            J[3 * i:3 * i + 3, -1] = field.eval(ends[i]) / m
        J[-1, :3] = n0
        try:
            delta = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            delta = np.linalg.lstsq(J, -r, rcond=None)[0]
        norm0 = np.linalg.norm(r)
        alpha = 1.0
        while True:
            cand = pts + alpha * delta[:-1].reshape(m, 3)
            Pc = P + alpha * delta[-1]
            ok = Pc > 0
            if ok:
                try:
                    rc, ec, mc = residual(cand, Pc)
                    ok = np.all(np.isfinite(rc)) and np.linalg.norm(rc) < norm0
                except Exception:
                    ok = False
            if ok:
                break
            alpha *= 0.5
            if alpha < 1e-6:
                raise NoConvergenceError(f"line search failed at residual {history[-1]:.3g}",
                                         history)
        pts, P, r, ends, mats = cand, Pc, rc, ec, mc
        it += 1
        history.append(float(np.max(np.abs(r))))
    h = P / m
    _, mono, resid = _shooting_maps(field, pts, h, integ_tol)
    logs, defective = _normal_log_moduli(field, pts, mats, h, integ_tol)
    return PeriodicOrbit(field, pts[0].copy(), P, pts, mono, logs, resid, integ_tol, defective,
                         it, tuple(history))


@dataclass(frozen=True)
class FloquetData:
    multipliers: np.ndarray
    exponents: np.ndarray
    hyperbolic: bool
    flow_multiplier: complex


def floquet(orbit: PeriodicOrbit, zero_tol: float = ZERO_TOL,
            flow_tol: float = FLOW_EIG_TOL) -> FloquetData:
    """Normal multipliers and exponents with the flow eigenvalue split off.

    The flow eigenvalue is the monodromy eigenvalue closest to 1 whose
    eigenvector is within 1e-4 rad of X(anchor).  Its distance to 1 is
    judged relative to the conditioning of the monodromy.
    """
    M = orbit.monodromy
    w, V = np.linalg.eig(M)
    X = orbit.field.eval(orbit.anchor)
    X = X / np.linalg.norm(X)
    ang = np.array([math.acos(min(1.0, abs(np.real(np.vdot(V[:, i], X)))
                                  / np.linalg.norm(V[:, i]))) for i in range(3)])
    scale = max(1.0, np.linalg.norm(M, 2) * orbit.tol * 1e3)
    ok = (np.abs(w - 1.0) <= flow_tol * scale) & (ang <= 1e-4 * scale)
    if not ok.any():
        raise InconsistentMonodromyError(
            f"no monodromy eigenvalue near 1 along the flow: eigenvalues {w}")
    k = int(np.argmin(np.where(ok, np.abs(w - 1.0), np.inf)))
    logs = np.sort(orbit.normal_log_moduli)
    lam = logs / orbit.period
    return FloquetData(np.exp(logs), lam, bool(np.all(np.abs(lam) > zero_tol)), complex(w[k]))


def long_run_lpf_exponents(orbit: PeriodicOrbit, n_periods: int | None = None,
                           scaled: bool = True):
    """Exponents of psi repeated along the orbit for many periods (QR estimate)."""
    one = orbit.lpf_cocycle(scaled)
    if n_periods is None:
        n_periods = max(50, int(math.ceil(2000.0 / orbit.period)))
    raw = np.tile(one.raw, (n_periods, 1, 1))
    ratios = np.tile(one.speed_ratios, n_periods)
    pts = np.vstack([np.tile(orbit.samples, (n_periods, 1)), orbit.samples[:1]])
    coc = Cocycle(one.field_id, one.step, pts, raw, ratios, scaled)
    return exponents_from_cocycle(coc)


# shadowing

@dataclass(frozen=True, eq=False)
class ShadowingReport:
    t: np.ndarray
    theta: np.ndarray
    derivative_bounds: tuple
    ratios: np.ndarray
    epsilon: float
    items: dict
    violations: dict = dc_field(default_factory=dict)
    quasi_hyperbolic: bool | None = None
    fitted_N: float = math.nan

    @property
    def epsilon_achieved(self) -> float:
        return float(np.max(self.ratios)) if len(self.ratios) else 0.0

    @property
    def passed(self) -> bool:
        return all(self.items.values())

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("t,theta,ratio\n")
            for a, b, c in zip(self.t, self.theta, self.ratios):
                fh.write(f"{float(a)!r},{float(b)!r},{float(c)!r}\n")


def _foot_phase(orbit: PeriodicOrbit, y, tau, lo, hi, iters: int = 8):
    """Phase of the foot of y on the orbit: (q(tau) - y) . X(q(tau)) = 0, tau kept in [lo, hi]."""
    for _ in range(iters):
        q = orbit.point_at(tau)
        X = orbit.field.eval(q)
        d = (y - q) @ X / (X @ X)
        new = min(hi, max(lo, tau + d))
        if abs(new - tau) < 1e-13 * max(1.0, orbit.period):
            tau = new
            break
        tau = new
    return tau


def build_theta(window: TrajectorySegment, orbit: PeriodicOrbit) -> np.ndarray:
    """Monotone reparameterization theta on the window's sample times.

    Each sample is projected to the nearest-phase orbit point inside a
    window around the previous phase, the unwrapped phases are made
    monotone by isotonic regression and then mapped affinely so that
    theta(0) = 0 and theta(end) = period.
    """
    dt = window.dt
    n = window.n
    P = orbit.period
    raw = np.empty(n + 1)
    tau = _foot_phase(orbit, window.points[0], 0.0, -0.25 * P, 0.25 * P)
    raw[0] = tau
    speed_ratio = P / window.duration if window.duration > 0 else 1.0
    for j in range(1, n + 1):
        guess = raw[j - 1] + dt * speed_ratio
        w = 4.0 * dt
        raw[j] = _foot_phase(orbit, window.points[j], guess, raw[j - 1] - w, guess + w)
    back = np.maximum.accumulate(raw) - raw
    fold = max(10.0 * dt, 0.05 * P)
    if back.max() > fold:
        k = int(np.argmax(back))
        raise ShadowingMismatchError(f"phase folds back by {back[k]:.3g} at sample {k}")
    iso = isotonic_regression(raw).x
    span = iso[-1] - iso[0]
    if span <= 0:
        raise ShadowingMismatchError("projected phase does not advance")
    return (iso - iso[0]) * (P / span)


def verify_shadowing(field: VectorField, window: TrajectorySegment, orbit: PeriodicOrbit,
                     theta, epsilon: float, closure_tol: float = NEWTON_TOL) -> ShadowingReport:
    """Recompute the three shadowing conclusions from scratch.

    (1) theta strictly increasing with symmetric difference quotients in
    (1 - eps, 1 + eps); (2) p is periodic with period theta(end), certified
    by the closure residual; (3) d(phi_t(y), phi_theta(t)(p)) < eps |X(phi_t(y))|.
    """
    theta = np.asarray(theta, dtype=float)
    t = window.times
    if len(theta) != len(t):
        raise ValidationError("theta samples must match the window samples")
    violations = {}
    dth = np.diff(theta)
    if len(theta) > 2:
        dq = np.empty(len(theta))
        dq[1:-1] = (theta[2:] - theta[:-2]) / (2 * window.dt)
        dq[0] = dth[0] / window.dt
        dq[-1] = dth[-1] / window.dt
    else:
        dq = np.full(len(theta), dth[0] / window.dt if len(dth) else 1.0)
    mono = bool(np.all(dth > 0))
    inside = (dq > 1 - epsilon) & (dq < 1 + epsilon)
    item1 = mono and bool(np.all(inside)) and theta[0] == 0.0
    if not mono:
        violations["1"] = int(np.argmin(dth > 0)) + 1
    elif not np.all(inside):
        violations["1"] = int(np.argmin(inside))
    item2 = bool(orbit.closure_residual <= closure_tol
                 and abs(theta[-1] - orbit.period) <= 1e-9 * max(1.0, orbit.period))
    if not item2:
        violations["2"] = len(theta) - 1
    ratios = np.empty(len(t))
    for j in range(len(t)):
        q = orbit.point_at(theta[j])
        ratios[j] = np.linalg.norm(window.points[j] - q) / window.speeds[j]
    item3 = bool(np.all(ratios < epsilon))
    if not item3:
        violations["3"] = int(np.argmax(ratios >= epsilon))
    gap = float(np.linalg.norm(window.points[0] - window.points[-1]))
    fitted = float(abs(theta[-1] - window.duration) / gap) if gap > 0 else math.nan
    return ShadowingReport(t.copy(), theta, (float(dq.min()), float(dq.max())), ratios,
                           float(epsilon), {"1": bool(item1), "2": bool(item2), "3": bool(item3)}, violations,
                           fitted_N=fitted)


def find_periodic_from_recurrence(field: VectorField, segment: TrajectorySegment, recurrence,
                                  T: float, epsilon: float, alpha: float = 0.0,
                                  tol: float = NEWTON_TOL, splitting=None, eta: float | None = None):
    """Refine the loop of a recurrence into a periodic orbit and verify shadowing.

    When a splitting and eta are supplied the loop is checked against the
    quasi-hyperbolic scan; the outcome is recorded, never enforced.
    """
    from .pesin import quasi_hyperbolic_scan

    start, l = recurrence
    s = segment.stride(T)
    stop = start + l * s
    if stop > segment.n:
        raise ValidationError("recurrence runs past the end of the segment")
    for p in (segment.points[start], segment.points[stop]):
        if field.distance_to_singularities(p) <= alpha:
            raise ValidationError("recurrence endpoint violates singularity clearance")
    window = segment.window(start, stop)
    orbit = refine_periodic_orbit(field, window.points, l * T, tol=tol, closed=True)
    theta = build_theta(window, orbit)
    report = verify_shadowing(field, window, orbit, theta, epsilon, tol)
    qh = None
    if splitting is not None and eta is not None:
        ivs = quasi_hyperbolic_scan(splitting, eta, splitting.cocycle.step)
        k = splitting.cocycle.step / segment.dt
        a, b = start / k, stop / k
        qh = any(lo <= a + 1e-9 and b <= hi + 1e-9 for lo, hi in ivs)
    report = ShadowingReport(report.t, report.theta, report.derivative_bounds, report.ratios,
                             report.epsilon, report.items, report.violations, qh,
                             report.fitted_N)
    return orbit, report


# orbit library

LIBRARY_HEADER = ("field,params,anchor,period,multiplier1,multiplier2,lpf_lambda1,lpf_lambda2,"
                  "closure_residual")


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, np.ndarray):
        return " ".join(repr(float(a)) for a in v)
    return repr(float(v))


def library_row(record: dict) -> str:
    return ",".join(_fmt(record[k]) for k in LIBRARY_HEADER.split(","))


def read_library(path):
    rows = []
    with open(path) as fh:
        head = fh.readline().strip()
        if head != LIBRARY_HEADER:
            raise ValidationError(f"unexpected library header {head!r}")
        for line in fh:
            if not line.strip():
                continue
            f = line.rstrip("\n").split(",")
            rows.append({
                "field": f[0], "params": f[1],
                "anchor": np.array([float(a) for a in f[2].split()]),
                "period": float(f[3]), "multiplier1": float(f[4]), "multiplier2": float(f[5]),
                "lpf_lambda1": float(f[6]), "lpf_lambda2": float(f[7]),
                "closure_residual": float(f[8]), "line": line.rstrip("\n"),
            })
    return rows


def same_orbit(a: dict, b: dict, tol: float = 1e-6) -> bool:
    return (a["field"] == b["field"] and a["params"] == b["params"]
            and abs(a["period"] - b["period"]) <= tol
            and np.linalg.norm(a["anchor"] - b["anchor"]) <= tol)


def merge_library(existing: list, new: list, tol: float = 1e-6):
    """Existing rows followed by new records not already present; order is deterministic."""
    out = list(existing)
    for rec in sorted(new, key=lambda r: (r["period"], tuple(r["anchor"]))):
        if not any(same_orbit(rec, o, tol) for o in out):
            out.append(rec)
    return out


def write_library(records, path) -> None:
    with open(path, "w") as fh:
        fh.write(LIBRARY_HEADER + "\n")
        for r in records:
            fh.write((r["line"] if "line" in r else library_row(r)) + "\n")
