"""Empirical and periodic measures, a weak* metric over a monomial
dictionary, Birkhoff averages, and the two approximation experiments.
"""
from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field as dc_field, asdict

import numpy as np
from scipy.stats import spearmanr

from .errors import DomainError, StalenessError, StarflowError, ValidationError, ZeroCandidatesError
from .fields import VectorField, reverse
from .flow import (DEFAULT_BURN_IN, DEFAULT_TOL, TrajectorySegment, attractor_point,
                   find_recurrences, sample_orbit)
from .oseledec import ZERO_TOL, exponents_from_cocycle, splitting_from_cocycle
from .poincare import cocycle_from_segment
from .shadowing import (PeriodicOrbit, find_periodic_from_recurrence, floquet,
                        long_run_lpf_exponents)

DEFAULT_N_TERMS = 20
BOX_MARGIN = 0.1


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    points: np.ndarray
    weights: np.ndarray
    kind: str
    source_id: str = ""

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValidationError("weights must be nonnegative and sum to 1")

    def integrate(self, values) -> float:
        return float(np.asarray(values) @ self.weights)


def _equal(points, kind, source):
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = len(pts)
    return EmpiricalMeasure(pts, np.full(n, 1.0 / n), kind, source)


def empirical_measure(segment: TrajectorySegment) -> EmpiricalMeasure:
    """Equal weights on the samples at t = 0, dt, ..., (n-1) dt.

    The final sample closes the last Riemann interval and carries no
    weight, so a segment spanning exactly one period reproduces the
    periodic measure.  A single-sample segment gives its Dirac mass.
    """
    pts = segment.points if len(segment.points) == 1 else segment.points[:-1]
    return _equal(pts, "orbit-empirical", f"{segment.field_id}@{segment.cache_key()}")


def dirac(point) -> EmpiricalMeasure:
    return _equal([point], "orbit-empirical", "dirac")


def periodic_measure(orbit: PeriodicOrbit, n_atoms: int) -> EmpiricalMeasure:
    """Equal atoms at phases j*period/n_atoms along a refined orbit."""
    if n_atoms < 16:
        raise ValidationError("periodic measures need at least 16 atoms")
    drift = orbit.closure_drift()
    if drift > 10.0 * max(orbit.closure_residual, 1e-12):
        raise StalenessError(f"closure drift {drift:.3g} exceeds 10x the recorded residual "
                             f"{orbit.closure_residual:.3g}")
    return _equal(orbit.phase_points(n_atoms), "periodic",
                  f"{orbit.field.id}:period={orbit.period!r}")


def monomial_exponents(n: int):
    """First n exponent triples by total degree, then lexicographically (x before y before z)."""
    out = []
    for d in itertools.count():
        level = sorted(((a, b, d - a - b) for a in range(d + 1) for b in range(d + 1 - a)),
                       reverse=True)
        out.extend(level)
        if len(out) >= n:
            return np.array(out[:n], dtype=int)


@dataclass(frozen=True, eq=False)
class FunctionDictionary:
    """Monomials in box-normalized coordinates, each with sup-norm 1 on the box.

    f_i (i = 1, 2, ...) is u^a v^b w^c with u, v, w the affine images of
    x, y, z onto [-1, 1].
    """

    lo: np.ndarray
    hi: np.ndarray
    n: int = DEFAULT_N_TERMS

    @classmethod
    def from_points(cls, points, n: int = DEFAULT_N_TERMS, margin: float = BOX_MARGIN):
        pts = np.asarray(points, dtype=float)
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        width = np.maximum(hi - lo, 1e-3 * max(float(np.max(hi - lo)), 1.0))
        mid = 0.5 * (lo + hi)
        half = 0.5 * width * (1.0 + 2.0 * margin)
        return cls(mid - half, mid + half, n)

    @property
    def exponents(self) -> np.ndarray:
        return monomial_exponents(self.n)

    @property
    def sup_norms(self) -> np.ndarray:
        return np.ones(self.n)

    def normalize(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        span = self.hi - self.lo
        outside = np.any((pts < self.lo - 1e-12 * span) | (pts > self.hi + 1e-12 * span), axis=1)
        if outside.any():
            raise DomainError(f"{int(outside.sum())} points lie outside the dictionary box")
        return (2.0 * pts - (self.lo + self.hi)) / span

    def evaluate(self, points, n_terms: int | None = None) -> np.ndarray:
        """(len(points), n_terms) matrix of f_i values."""
        n_terms = self.n if n_terms is None else n_terms
        if n_terms > self.n:
            raise ValidationError(f"n_terms {n_terms} exceeds the truncation {self.n}")
        u = self.normalize(points)
        e = self.exponents[:n_terms]
        return np.prod(u[:, None, :] ** e[None, :, :], axis=2)

    def integrals(self, mu: EmpiricalMeasure, n_terms: int | None = None) -> np.ndarray:
        return mu.weights @ self.evaluate(mu.points, n_terms)


def weak_star_distance(mu: EmpiricalMeasure, nu: EmpiricalMeasure, dictionary: FunctionDictionary,
                       n_terms: int | None = None):
    """(value, tail) with value <= d_M(mu, nu) <= value + tail.

    d_M = sum_i |int f_i dmu - int f_i dnu| / (2^i |f_i|); each term beyond
    n_terms is at most 2^(1-i), so the tail is 2^(1-n).
    """
    n = dictionary.n if n_terms is None else n_terms
    diff = np.abs(dictionary.integrals(mu, n) - dictionary.integrals(nu, n))
    w = 2.0 ** -np.arange(1, n + 1) / dictionary.sup_norms[:n]
    return float(diff @ w), 2.0 ** (1 - n)


def birkhoff_average(field: VectorField, x0, f, total_time: float, dt: float,
                     dictionary: FunctionDictionary | None = None, tol: float = DEFAULT_TOL):
    """Trapezoidal time average of f along the orbit of x0.

    ``f`` is a 1-based dictionary index or a callable on an (n, 3) array.
    """
    seg = sample_orbit(field, x0, total_time, dt, tol)
    if callable(f):
        vals = np.asarray(f(seg.points), dtype=float)
    else:
        if dictionary is None:
            raise ValidationError("a dictionary index needs a dictionary")
        vals = dictionary.evaluate(seg.points, int(f))[:, int(f) - 1]
    if len(vals) == 1:
        return float(vals[0])
    return float(np.trapezoid(vals, dx=dt) / (dt * (len(vals) - 1)))


# experiments

@dataclass
class ExperimentConfig:
    x0: tuple = (1.0, 1.0, 1.0)
    burn_in: float = DEFAULT_BURN_IN
    total_time: float = 1000.0
    dt: float = 0.01
    tol: float = DEFAULT_TOL
    step_T: float = 1.0
    rec_T: float = 0.01
    delta: float = 0.5
    alpha: float = 0.5
    targets: tuple = (2.0, 5.0, 10.0, 20.0)
    window: float = 0.25
    per_target: int = 3
    attempts: int = 12
    epsilon: float = 0.5
    eta: float = 0.3
    n_terms: int = DEFAULT_N_TERMS
    n_atoms: int = 256
    zero_tol: float = ZERO_TOL
    newton_tol: float = 1e-9
    rank: str = "birkhoff"
    seed: int = 0

    def echo(self) -> dict:
        return asdict(self)


@dataclass
class Reference:
    field: VectorField
    segment: TrajectorySegment
    report: object
    splitting: object
    measure: EmpiricalMeasure
    dictionary: FunctionDictionary


@dataclass
class Candidate:
    cid: int
    target: float
    start: int
    l: int
    lT: float
    distance: float
    status: str = "pending"
    orbit: PeriodicOrbit | None = None
    shadowing: object = None
    orbit_id: str = ""
    record: dict | None = None


@dataclass
class ExperimentResult:
    rows: list
    reference: Reference
    candidates: list
    timings: dict = dc_field(default_factory=dict)
    extra: dict = dc_field(default_factory=dict)


def _timed(timings, name, fn, *a, **k):
    t0 = time.perf_counter()
    out = fn(*a, **k)
    timings[name] = timings.get(name, 0.0) + time.perf_counter() - t0
    return out


def reference_run(field: VectorField, cfg: ExperimentConfig, timings=None) -> Reference:
    timings = {} if timings is None else timings
    x = _timed(timings, "burn_in", attractor_point, field, cfg.x0, cfg.burn_in, cfg.tol)
    seg = _timed(timings, "sample", sample_orbit, field, x, cfg.total_time, cfg.dt, cfg.tol)
    coc = _timed(timings, "cocycle", cocycle_from_segment, seg, cfg.step_T, cfg.tol, True)
    rep = exponents_from_cocycle(coc)
    split = _timed(timings, "splitting", splitting_from_cocycle, coc, 0.2, cfg.seed)
    mu = empirical_measure(seg)
    dic = FunctionDictionary.from_points(seg.points, cfg.n_terms)
    return Reference(field, seg, rep, split, mu, dic)


def _orbit_id(rec: dict) -> str:
    a = rec["anchor"]
    return f"P{rec['period']:.6f}@{a[0]:.4f},{a[1]:.4f},{a[2]:.4f}".replace(",", "_")


def _same(a: dict, b: dict, tol: float = 1e-6) -> bool:
    return abs(a["period"] - b["period"]) <= tol and np.linalg.norm(a["anchor"] - b["anchor"]) <= tol


def window_distances(ref: Reference, starts, stops, n_terms: int | None = None) -> np.ndarray:
    """Truncated d_M between each window's left-Riemann measure and the reference measure.

    Uses prefix sums of the dictionary values along the reference segment,
    so each window costs O(n_terms).
    """
    n = ref.dictionary.n if n_terms is None else n_terms
    vals = ref.dictionary.evaluate(ref.segment.points, n)
    csum = np.vstack([np.zeros(n), np.cumsum(vals, axis=0)])
    starts = np.asarray(starts, dtype=int)
    stops = np.asarray(stops, dtype=int)
    means = (csum[stops] - csum[starts]) / (stops - starts)[:, None]
    target = ref.dictionary.integrals(ref.measure, n)
    w = 2.0 ** -np.arange(1, n + 1)
    return np.abs(means - target) @ w


def _recurrence_candidates(ref: Reference, cfg: ExperimentConfig):
    """Recurrences per target length, best first, with overlapping loops thinned.

    ``cfg.rank == "birkhoff"`` orders pairs by how well the loop's time
    averages match the reference measure (Birkhoff-generic base points);
    ``"distance"`` orders by closing distance.
    """
    if cfg.rank not in ("birkhoff", "distance"):
        raise ValidationError(f"unknown rank {cfg.rank!r}")
    seg = ref.segment
    s = seg.stride(cfg.rec_T)
    out = []
    for target in cfg.targets:
        lo = max(1, int(math.ceil(target * (1 - cfg.window) / cfg.rec_T)))
        hi = int(math.floor(target * (1 + cfg.window) / cfg.rec_T))
        pairs = find_recurrences(seg, cfg.rec_T, cfg.delta, cfg.alpha, lo, hi)
        if not pairs:
            continue
        arr = np.array(pairs, dtype=int)
        dist = np.linalg.norm(seg.points[arr[:, 0]] - seg.points[arr[:, 0] + arr[:, 1] * s], axis=1)
        if cfg.rank == "birkhoff":
            key = window_distances(ref, arr[:, 0], arr[:, 0] + arr[:, 1] * s, cfg.n_terms)
            order = np.lexsort((arr[:, 1], arr[:, 0], key))
        else:
            order = np.arange(len(arr))
        chosen = []
        for k in order:
            start, l = int(arr[k, 0]), int(arr[k, 1])
            # skip near-duplicates: same loop seen from a neighbouring start
            if any(abs(start - c0) <= l * s // 4 and abs(l - l0) <= max(2, l // 20)
                   for c0, l0 in chosen):
                continue
            chosen.append((start, l))
            out.append((target, start, l, float(dist[k])))
            if len(chosen) >= cfg.attempts:
                break
    return out


def _refine_candidates(field, ref, cfg, timings, seg=None):
    seg = ref.segment if seg is None else seg
    cands, found = [], []
    per_target = {}
    for k, (target, start, l, d) in enumerate(_recurrence_candidates(
            Reference(field, seg, ref.report, ref.splitting, ref.measure, ref.dictionary), cfg)):
        c = Candidate(k, target, start, l, l * cfg.rec_T, d)
        cands.append(c)
        if per_target.get(target, 0) >= cfg.per_target:
            c.status = "skipped: target quota reached"
            continue
        try:
            orbit, rep = _timed(timings, "shadowing", find_periodic_from_recurrence, field, seg,
                                (start, l), cfg.rec_T, cfg.epsilon, cfg.alpha, cfg.newton_tol,
                                ref.splitting if not field.reversed else None, cfg.eta)
            floquet(orbit, cfg.zero_tol)
        except StarflowError as exc:
            c.status = f"failed: {type(exc).__name__}"
            continue
        rec = orbit.record()
        if any(_same(rec, f.record) for f in found):
            c.status = "duplicate"
            continue
        c.orbit, c.shadowing, c.record = orbit, rep, rec
        c.orbit_id = _orbit_id(rec)
        c.status = "ok"
        found.append(c)
        per_target[target] = per_target.get(target, 0) + 1
    return cands, found


def theorem_a_experiment(field: VectorField, config: ExperimentConfig | None = None,
                         reference: Reference | None = None) -> ExperimentResult:
    """Weak* distance between the reference empirical measure and periodic measures.

    Rows: (lT, period, d_M, tail, orbit_id, quasi_hyperbolic, epsilon_achieved),
    sorted by lT then orbit id.  Raises ZeroCandidatesError if nothing survives.
    """
    cfg = config or ExperimentConfig()
    timings = {}
    ref = reference or reference_run(field, cfg, timings)
    cands, found = _refine_candidates(field, ref, cfg, timings)
    rows = []
    for c in found:
        try:
            nu = _timed(timings, "measures", periodic_measure, c.orbit, cfg.n_atoms)
            val, tail = weak_star_distance(ref.measure, nu, ref.dictionary, cfg.n_terms)
        except StarflowError as exc:
            c.status = f"failed: {type(exc).__name__}"
            continue
        rows.append({"target": c.target, "lT": c.lT, "period": c.orbit.period, "d_M": val, "tail": tail,
                     "orbit_id": c.orbit_id, "quasi_hyperbolic": c.shadowing.quasi_hyperbolic,
                     "epsilon_achieved": c.shadowing.epsilon_achieved})
    if not rows:
        raise ZeroCandidatesError("no candidate survived", report=cands)
    rows.sort(key=lambda r: (r["lT"], r["orbit_id"]))
    res = ExperimentResult(rows, ref, cands, timings)
    if len(rows) >= 2:
        rho = spearmanr([r["lT"] for r in rows], [r["d_M"] for r in rows]).statistic
        res.extra["spearman"] = float(rho)
    return res


def theorem_b_experiment(field: VectorField, config: ExperimentConfig | None = None,
                         reference: Reference | None = None,
                         forward: ExperimentResult | None = None) -> ExperimentResult:
    """Floquet exponents of shadowing orbits against the reference exponents.

    Each row also carries the long-run LPF exponents on the orbit.  The
    reversed-field path refines the reversed reference loops under -X and
    matches the resulting orbits to forward ones by period and canonical
    anchor; ``extra['reverse_max_error']`` is the worst negate-and-swap error.
    """
    cfg = config or ExperimentConfig()
    timings = {}
    ref = reference or (forward.reference if forward else reference_run(field, cfg, timings))
    if forward is not None:
        found = [c for c in forward.candidates if c.status == "ok"]
    else:
        _, found = _refine_candidates(field, ref, cfg, timings)
    lam = ref.report.values
    rows = []
    for c in found:
        fl = floquet(c.orbit, cfg.zero_tol)
        lr = _timed(timings, "long_run", long_run_lpf_exponents, c.orbit)
        rows.append({"orbit_id": c.orbit_id, "target": c.target, "lT": c.lT, "lambda1": lam[0], "lambda2": lam[1],
                     "lambda1_p": fl.exponents[0], "lambda2_p": fl.exponents[1],
                     "dev1": abs(lam[0] - fl.exponents[0]), "dev2": abs(lam[1] - fl.exponents[1]),
                     "long_run1": lr.values[0], "long_run2": lr.values[1]})
    if not rows:
        raise ZeroCandidatesError("no candidate survived", report=found)
    rows.sort(key=lambda r: (r["lT"], r["orbit_id"]))
    rev_seg = ref.segment.reversed()
    rfield = reverse(field)
    _, rfound = _refine_candidates(rfield, ref, cfg, timings, seg=rev_seg)
    worst, matched = 0.0, 0
    for rc in rfound:
        fr = floquet(rc.orbit, cfg.zero_tol).exponents
        for c in found:
            if _same(rc.record, c.record, 1e-6):
                fw = floquet(c.orbit, cfg.zero_tol).exponents
                err = max(abs(fr[0] + fw[1]), abs(fr[1] + fw[0]))
                worst = max(worst, err)
                matched += 1
    own = max((_reversal_error(c.orbit, cfg.zero_tol) for c in found), default=0.0)
    return ExperimentResult(rows, ref, found, timings,
                            {"reverse_matched": matched, "reverse_found": len(rfound),
                             "reverse_max_error": worst, "orbit_reversal_max_error": own})


def _reversal_error(orbit: PeriodicOrbit, zero_tol: float) -> float:
    fw = floquet(orbit, zero_tol).exponents
    bw = floquet(orbit.reversed(), zero_tol).exponents
    return float(max(abs(bw[0] + fw[1]), abs(bw[1] + fw[0])))


def trend_groups(rows, key: str):
    """Values of ``key`` for the longest and the shortest target length present."""
    ts = sorted({r["target"] for r in rows})
    hi = [r[key] for r in rows if r["target"] == ts[-1]]
    lo = [r[key] for r in rows if r["target"] == ts[0]]
    return hi, lo
