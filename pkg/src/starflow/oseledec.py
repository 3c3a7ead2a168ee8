"""Finite-time Lyapunov exponents, Oseledec splittings of the normal bundle,
domination certificates and hyperbolicity classification."""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import DegenerateSplittingError, ValidationError
from .fields import VectorField
from .flow import DEFAULT_TOL, integrate_with_tangent, propagate_tangent
from .poincare import Cocycle, cocycle_from_segment, lpf_cocycle

ZERO_TOL = 0.05
CONVERGENCE_THRESHOLD = 0.05
SEED_ANGLE_TOL = 1e-9
MIN_SPLITTING_ANGLE = 1e-6


@dataclass(frozen=True)
class ExponentReport:
    """Ascending exponents with their running-estimate history.

    ``window_times[j]`` is the elapsed time of the j-th running estimate
    ``window_values[j]`` (one column per exponent, same order as ``values``).
    ``convergence_error`` is the max-min spread of each column over the last
    quarter of the history.
    """

    values: np.ndarray
    kind: str
    window_times: np.ndarray = dc_field(default_factory=lambda: np.zeros(0))
    window_values: np.ndarray = dc_field(default_factory=lambda: np.zeros((0, 0)))
    convergence_error: np.ndarray | None = None
    threshold: float = CONVERGENCE_THRESHOLD

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", vals)
        if np.any(np.diff(vals) < 0):
            raise ValidationError("exponent values must be ascending")
        if self.convergence_error is None:
            object.__setattr__(self, "convergence_error", np.zeros_like(vals))

    @property
    def converged(self) -> bool:
        return bool(np.all(np.asarray(self.convergence_error) < self.threshold))

    def rows(self):
        """Rows of the export table: kind, window, lambdas..., convergence error."""
        err = float(np.max(self.convergence_error)) if len(self.values) else 0.0
        for t, est in zip(self.window_times, self.window_values):
            yield (self.kind, float(t), *map(float, est), err)

    def to_csv(self, path, every: int = 1) -> None:
        k = len(self.values)
        header = ["kind", "window"] + [f"lambda{i + 1}" for i in range(k)] + ["convergence_error"]
        with open(path, "w") as fh:
            fh.write(",".join(header) + "\n")
            rows = list(self.rows())
            picked = rows[every - 1::every]
            if rows and (not picked or picked[-1] is not rows[-1]):
                picked.append(rows[-1])
            for r in picked:
                fh.write(",".join([r[0]] + [repr(v) for v in r[1:]]) + "\n")


def _spread(curve):
    if len(curve) == 0:
        return np.zeros(curve.shape[1] if curve.ndim == 2 else 0)
    q = curve[int(np.floor(0.75 * len(curve))):]
    return q.max(axis=0) - q.min(axis=0)


def _report(sums_history, times, kind, threshold):
    """Build an ascending report from cumulative log-stretch sums (columns in QR order)."""
    est = sums_history / times[:, None]
    order = np.argsort(est[-1])
    est = est[:, order]
    return ExponentReport(est[-1].copy(), kind, times.copy(), est, _spread(est), threshold)


def initial_frame(first_map) -> np.ndarray:
    """Right singular vectors of the first-interval map, fastest first.

    An identity frame can have a column sitting exactly in a slow invariant
    direction, and then round-off decides when it gets overtaken; starting
    from the singular directions orders the columns from the outset.
    """
    _, _, vt = np.linalg.svd(first_map)
    return vt.T.copy()


def qr_accumulate(matrices, step: float):
    """Benettin QR over a product of square matrices.

    Returns the (n, d) array of cumulative log |R_ii| in QR column order.
    """
    mats = np.asarray(matrices, dtype=float)
    n, d, _ = mats.shape
    Q = initial_frame(mats[0])
    acc = np.zeros(d)
    hist = np.empty((n, d))
    for i in range(n):
        Q, R = np.linalg.qr(mats[i] @ Q)
        diag = np.diag(R)
        acc += np.log(np.abs(diag))
        hist[i] = acc
    return hist


def exponents_from_cocycle(cocycle: Cocycle, kind: str | None = None,
                           threshold: float = CONVERGENCE_THRESHOLD) -> ExponentReport:
    hist = qr_accumulate(cocycle.matrices, cocycle.step)
    times = cocycle.step * np.arange(1, cocycle.n + 1)
    kind = kind or ("scaled-lpf" if cocycle.scaled else "lpf")
    return _report(hist, times, kind, threshold)


def lyapunov_exponents_tangent(field: VectorField, x0, total_time: float, reorth_dt: float,
                               tol: float = DEFAULT_TOL,
                               threshold: float = CONVERGENCE_THRESHOLD) -> ExponentReport:
    """Three tangent-flow exponents by QR re-orthonormalization every reorth_dt."""
    if total_time < 100 * reorth_dt:
        raise ValidationError("total_time must be at least 100 reorthonormalization intervals")
    n = int(round(total_time / reorth_dt))
    x = np.asarray(x0, dtype=float)
    _, F = integrate_with_tangent(field, x, reorth_dt, tol)
    Q = initial_frame(F.matrix)
    acc = np.zeros(3)
    hist = np.empty((n, 3))
    for i in range(n):
        x, Y = propagate_tangent(field, x, Q, reorth_dt, tol)
        Q, R = np.linalg.qr(Y)
        acc += np.log(np.abs(np.diag(R)))
        hist[i] = acc
    times = reorth_dt * np.arange(1, n + 1)
    return _report(hist, times, "tangent", threshold)


def lyapunov_exponents_lpf(field: VectorField, x0, total_time: float, step_T: float,
                           scaled: bool = True, tol: float = DEFAULT_TOL,
                           min_distance: float = 1e-8,
                           threshold: float = CONVERGENCE_THRESHOLD) -> ExponentReport:
    """Two exponents of psi_t (or psi*_t) along the orbit of x0.

    Raises SingularPointError (with the closest approach) if the orbit comes
    within ``min_distance`` of a zero of the field.
    """
    if total_time < 100 * step_T:
        raise ValidationError("total_time must be at least 100 steps")
    n = int(round(total_time / step_T))
    coc = lpf_cocycle(field, x0, n, step_T, tol, scaled, min_distance)
    return exponents_from_cocycle(coc, threshold=threshold)


def combined_error(a: ExponentReport, b: ExponentReport) -> np.ndarray:
    return np.asarray(a.convergence_error) + np.asarray(b.convergence_error)


def drop_zero_exponent(report: ExponentReport) -> np.ndarray:
    """Tangent exponents with the one closest to zero removed."""
    k = int(np.argmin(np.abs(report.values)))
    return np.delete(report.values, k)


# splittings

@dataclass(frozen=True, eq=False)
class SplittingEstimate:
    """Per-sample unit vectors spanning E1 (contracting) and E2 (expanding).

    Vectors are in the normal-frame coordinates of ``cocycle.points[index]``.
    """

    indices: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    angles: np.ndarray
    cocycle: Cocycle
    method: str = "forward-backward power iteration"

    def position(self, index: int) -> int:
        k = int(index) - int(self.indices[0])
        if k < 0 or k >= len(self.indices):
            raise KeyError(index)
        return k

    def covers(self, start: int, stop: int) -> bool:
        return len(self.indices) > 0 and self.indices[0] <= start and stop <= self.indices[-1]

    def swapped(self) -> "SplittingEstimate":
        return SplittingEstimate(self.indices, self.e2, self.e1, self.angles, self.cocycle,
                                 self.method + " (swapped)")


def _line_angle(a, b):
    c = np.abs(np.sum(a * b, axis=-1)) / (np.linalg.norm(a, axis=-1) * np.linalg.norm(b, axis=-1))
    return np.arccos(np.clip(c, 0.0, 1.0))


def _push(mats, seed):
    n = len(mats)
    out = np.empty((n + 1, 2))
    v = seed / np.linalg.norm(seed)
    out[0] = v
    for i in range(n):
        v = mats[i] @ v
        v /= np.linalg.norm(v)
        out[i + 1] = v
    return out


def _pull(mats, seed):
    n = len(mats)
    out = np.empty((n + 1, 2))
    w = seed / np.linalg.norm(seed)
    out[n] = w
    for i in range(n - 1, -1, -1):
        w = np.linalg.solve(mats[i], w)
        w /= np.linalg.norm(w)
        out[i] = w
    return out


def splitting_from_cocycle(cocycle: Cocycle, transient: float = 0.2, seed: int = 0,
                           min_angle: float = MIN_SPLITTING_ANGLE) -> SplittingEstimate:
    """Oseledec directions of a 2x2 cocycle.

    E2 is the forward push of a seed vector from the start, E1 the backward
    pull of a seed from the end.  The first ``transient`` fraction of samples
    is dropped for E2 convergence and the last fraction for E1.  The default
    seed is frame axis 1; a random seed replaces it when it lies within
    1e-9 rad of the complementary direction.
    """
    mats = cocycle.matrices
    n = len(mats)
    rng = np.random.default_rng(seed)
    axis = np.array([1.0, 0.0])
    back = _pull(mats, axis)
    if _line_angle(axis, back[0]) < SEED_ANGLE_TOL:
        fwd = _push(mats, rng.normal(size=2))
    else:
        fwd = _push(mats, axis)
    if _line_angle(axis, fwd[n]) < SEED_ANGLE_TOL:
        back = _pull(mats, rng.normal(size=2))
    lo = int(np.ceil(transient * n))
    hi = n - lo
    if hi <= lo:
        raise ValidationError("segment too short for the requested transients")
    idx = np.arange(lo, hi + 1)
    e1, e2 = back[idx], fwd[idx]
    ang = _line_angle(e1, e2)
    k = int(np.argmin(ang))
    if ang[k] < min_angle:
        raise DegenerateSplittingError(f"splitting angle {ang[k]:.3g} rad at sample {idx[k]}",
                                       index=int(idx[k]), angle=float(ang[k]))
    return SplittingEstimate(idx, e1, e2, ang, cocycle)


def oseledec_splitting(field: VectorField, segment, step_T: float, tol: float = DEFAULT_TOL,
                       transient: float = 0.2, seed: int = 0) -> SplittingEstimate:
    coc = cocycle_from_segment(segment, step_T, tol, scaled=True)
    return splitting_from_cocycle(coc, transient, seed)


def restricted_norms(splitting: SplittingEstimate):
    """Per-step |psi*_T e1| and |psi*_T e2| for every retained sample except the last."""
    mats = splitting.cocycle.matrices
    idx = splitting.indices[:-1]
    a = mats[idx]
    c = np.linalg.norm(np.einsum("nij,nj->ni", a, splitting.e1[:-1]), axis=1)
    x = np.linalg.norm(np.einsum("nij,nj->ni", a, splitting.e2[:-1]), axis=1)
    return c, x


@dataclass(frozen=True)
class DominationCertificate:
    T: float
    fitted_C: float
    fitted_lambda: float
    horizons: np.ndarray
    worst_ratio_curve: np.ndarray
    verdict: bool

    @property
    def verdict_label(self) -> str:
        return "pass" if self.verdict else "fail"


def check_domination(field, segment, splitting: SplittingEstimate, step_T: float,
                     max_horizon: float, stride: int = 1) -> DominationCertificate:
    """Uniform envelope C exp(-lambda t) for |psi*_t|E1| * |psi*_{-t}|E2(phi_t x)|.

    The worst ratio over start indices is computed for each horizon; lambda is
    the least-squares decay rate of the log of its running maximum (taken from
    the far end so the envelope is monotone), capped by the decay rate of the
    raw curve, and C the smallest constant making the envelope hold.  ``field`` and ``segment`` are accepted for
    symmetry with the other operations; the data come from ``splitting``.
    """
    mats = splitting.cocycle.matrices
    T = splitting.cocycle.step
    if abs(T - step_T) > 1e-12 * max(1.0, T):
        raise ValidationError("step_T differs from the splitting's cocycle step")
    H = int(np.floor(max_horizon / T + 1e-9))
    starts = splitting.indices[::stride]
    last = mats.shape[0]
    worst = np.full(H, -np.inf)
    for k, i in enumerate(starts):
        p = splitting.position(i)
        v1, v2 = splitting.e1[p].copy(), splitting.e2[p].copy()
        l1 = l2 = 0.0
        for h in range(min(H, last - i)):
            v1 = mats[i + h] @ v1
            v2 = mats[i + h] @ v2
            n1, n2 = np.linalg.norm(v1), np.linalg.norm(v2)
            l1 += np.log(n1)
            l2 += np.log(n2)
            v1 /= n1
            v2 /= n2
            worst[h] = max(worst[h], l1 - l2)
    valid = np.isfinite(worst)
    logw = worst[valid]
    t = T * (np.arange(1, H + 1)[valid])
    if len(t) < 2:
        raise ValidationError("need at least two horizons to fit an envelope")
    env = np.maximum.accumulate(logw[::-1])[::-1]
    # the envelope alone is flat for a growing curve, so the raw slope caps the rate
    lam = -float(max(np.polyfit(t, env, 1)[0], np.polyfit(t, logw, 1)[0]))
    logC = max(0.0, float(np.max(logw + lam * t)))
    holds = bool(np.all(logw <= logC - lam * t + 1e-12))
    return DominationCertificate(float(T), float(np.exp(logC)), lam, t, np.exp(logw),
                                 bool(lam > 0 and holds))


@dataclass(frozen=True)
class Classification:
    state: str  # "hyperbolic" | "non-hyperbolic" | "inconclusive"
    hyperbolic: bool | None
    index: int | None
    saddle: bool | None
    excluded_by_domination: bool | None
    note: str = ""


def classify_measure(report: ExponentReport, zero_tol: float = ZERO_TOL) -> Classification:
    """Hyperbolicity and index from normal (LPF) exponents.

    Index 0 or 2 is flagged as excluded by the domination/dimension argument
    for star fields; index 1 is the saddle case.
    """
    if report.kind not in ("lpf", "scaled-lpf"):
        raise ValidationError("classification needs an lpf or scaled-lpf report")
    if not report.converged:
        return Classification("inconclusive", None, None, None, None,
                              f"unconverged: spread {np.max(report.convergence_error):.3g}")
    vals = report.values
    hyp = bool(np.all(np.abs(vals) > zero_tol))
    index = int(np.sum(vals < -zero_tol))
    if not hyp:
        return Classification("non-hyperbolic", False, index, None, None,
                              f"an exponent lies within {zero_tol} of zero")
    saddle = index == 1
    return Classification("hyperbolic", True, index, saddle, not saddle,
                          "saddle type" if saddle else "index 0/2: excluded for star fields")
