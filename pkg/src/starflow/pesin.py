"""Pesin-block membership, finite-time exponent windows, quasi-hyperbolic
segments and the cone machinery used for transition-map perturbations.

Everything here works on a :class:`~starflow.oseledec.SplittingEstimate`:
per-step norms of the scaled cocycle restricted to E1 and E2 are summed in
log space, and time partitions are uniform with step equal to the cocycle
step.  Cone vectors are written in splitting-adapted coordinates
``(v1, v2)`` with ``v1`` along E1 and ``v2`` along E2.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import MissingDataError, ValidationError
from .fields import VectorField, reverse
from .flow import DEFAULT_TOL
from .oseledec import SplittingEstimate, restricted_norms
from .poincare import lpf_step, normal_frame

BLOCK_CONVENTION = "symmetric: expanding bound uses k^-1 e^(n eta)"
CONE_DIRECTIONS = 64
MARGIN_DIRECTIONS = 256
CONE_SLACK = 1e-9


@dataclass(frozen=True)
class PesinParams:
    """Block parameters.  ``eta`` is the rate per step of length ``T``."""

    T: float
    eta: float
    k: float
    T0: float | None = None
    chi: float | None = None
    epsilon: float | None = None

    def __post_init__(self):
        if self.T <= 0 or self.k < 1 or self.eta < 0:
            raise ValidationError("need T > 0, k >= 1 and eta >= 0")
        if self.epsilon is not None and self.chi is not None:
            if not 0 < self.epsilon < self.chi / 4:
                raise ValidationError("epsilon must satisfy 0 < epsilon < chi/4")

    @classmethod
    def from_exponents(cls, chi: float, epsilon: float, T0: float, j: int, k: float):
        """eta = (chi - epsilon/2) * j * T0 with step T = j * T0."""
        return cls(T=j * T0, eta=(chi - epsilon / 2) * j * T0, k=k, T0=T0, chi=chi,
                   epsilon=epsilon)

    def describe(self) -> str:
        items = [("T", self.T), ("eta", self.eta), ("k", self.k)]
        items += [(n, v) for n, v in (("T0", self.T0), ("chi", self.chi),
                                     ("epsilon", self.epsilon)) if v is not None]
        return ";".join(f"{n}={v!r}" for n, v in items)


@dataclass(frozen=True)
class ConeSpec:
    rho: float
    gamma: float

    def __post_init__(self):
        if self.rho <= 1 or not 0 < self.gamma < 1 or self.gamma * self.rho <= 1:
            raise ValidationError("cone needs rho > 1, 0 < gamma < 1 and gamma*rho > 1")


@dataclass(frozen=True)
class Verdict:
    """One row of the verdict table."""

    op: str
    point_index: int
    params: str
    passed: bool
    fail_index: int | None = None
    margin: float = math.nan
    detail: dict = dc_field(default_factory=dict)

    def row(self) -> str:
        fail = "" if self.fail_index is None else str(self.fail_index)
        return f"{self.op},{self.point_index},{self.params},{int(self.passed)},{fail},{self.margin!r}"


def write_verdicts(verdicts, path) -> None:
    with open(path, "w") as fh:
        fh.write("op,point_index,params,pass,fail_index,margin\n")
        for v in verdicts:
            fh.write(v.row() + "\n")


def _log_norms(splitting: SplittingEstimate):
    c, x = restricted_norms(splitting)
    return np.log(c), np.log(x)


def _window(splitting: SplittingEstimate, index: int, n: int):
    start = splitting.position(index)
    if start + n > len(splitting.indices) - 1:
        raise MissingDataError(
            f"splitting covers {len(splitting.indices) - 1 - start} steps after index {index}, "
            f"{n} requested")
    return start


def _check_step(splitting, T):
    if abs(splitting.cocycle.step - T) > 1e-12 * max(1.0, T):
        raise ValidationError(f"T={T} differs from the cocycle step {splitting.cocycle.step}")


# Pesin blocks

def pesin_block_test(field: VectorField, index: int, splitting: SplittingEstimate,
                     params: PesinParams, n_max: int) -> Verdict:
    """Block membership of the sample ``index`` of the splitting's cocycle.

    For n = 1..n_max the contracting product must stay below k e^(-n eta)
    and the expanding product above k^-1 e^(n eta); the base point must be at
    least 1/k from every singularity.  ``detail`` reports each inequality
    separately and the first failing (n, inequality).
    """
    _check_step(splitting, params.T)
    try:
        start = _window(splitting, index, n_max)
    except KeyError as exc:
        raise MissingDataError(f"index {index} is outside the splitting") from exc
    lc, lx = _log_norms(splitting)
    n = np.arange(1, n_max + 1)
    logk = math.log(params.k)
    sc = np.cumsum(lc[start:start + n_max])
    sx = np.cumsum(lx[start:start + n_max])
    mc = logk - n * params.eta - sc
    mx = sx - (n * params.eta - logk)
    point = splitting.cocycle.points[index]
    clearance = field.distance_to_singularities(point) - 1.0 / params.k
    fails = []
    if np.any(mc < 0):
        fails.append((int(n[np.argmax(mc < 0)]), "contracting"))
    if np.any(mx < 0):
        fails.append((int(n[np.argmax(mx < 0)]), "expanding"))
    if clearance < 0:
        fails.append((0, "clearance"))
    fails.sort()
    margin = float(min(mc.min(), mx.min(), clearance))
    detail = {
        "contracting": bool(np.all(mc >= 0)),
        "expanding": bool(np.all(mx >= 0)),
        "clearance": bool(clearance >= 0),
        "first_failure": fails[0] if fails else None,
        "contracting_margin": float(mc.min()),
        "expanding_margin": float(mx.min()),
        "convention": BLOCK_CONVENTION,
    }
    return Verdict("pesin_block", int(index), params.describe(), not fails,
                   fails[0][0] if fails else None, margin, detail)


@dataclass(frozen=True)
class GammaEstimate:
    fraction: float
    verdicts: list
    N90: float
    passed: bool
    indices: np.ndarray


def estimate_gamma_T(splitting: SplittingEstimate, exponents, epsilon: float, delta: float,
                     n_max: int, indices=None, horizon: int | None = None,
                     n_points: int | None = None) -> GammaEstimate:
    """Empirical size of the set where finite-time products obey the exponent window.

    For each sample the window is checked on n in [N, horizon] for both
    bundles: (lambda_j - eps) nT <= log prod <= (lambda_j + eps) nT.  N(x) is the
    smallest such N; a sample counts when N(x) <= n_max.  ``horizon``
    defaults to ``n_max``; fixing it makes the fraction monotone in n_max.
    ``passed`` reports fraction >= 1 - delta.
    """
    H = n_max if horizon is None else int(horizon)
    if H < 1 or n_max < 1:
        raise ValidationError("n_max and horizon must be positive")
    T = splitting.cocycle.step
    lam = np.sort(np.asarray(exponents, dtype=float))
    lc, lx = _log_norms(splitting)
    avail = len(splitting.indices) - 1 - H
    if avail < 0:
        raise MissingDataError(f"splitting too short for horizon {H}")
    if indices is None:
        pos = np.arange(avail + 1)
        if n_points is not None and n_points < len(pos):
            pos = pos[np.linspace(0, len(pos) - 1, n_points).round().astype(int)]
        indices = splitting.indices[pos]
    indices = np.asarray(indices, dtype=int)
    n = np.arange(1, H + 1) * T
    Ns = []
    for i in indices:
        s = _window(splitting, int(i), H)
        bad = np.zeros(H, dtype=bool)
        for lj, logs in ((lam[0], lc), (lam[1], lx)):
            S = np.cumsum(logs[s:s + H])
            bad |= (S < (lj - epsilon) * n) | (S > (lj + epsilon) * n)
        last = np.flatnonzero(bad)
        Ns.append(1 if len(last) == 0 else int(last[-1]) + 2)
    Ns = np.array(Ns, dtype=float)
    ok = Ns <= n_max
    frac = float(ok.mean()) if len(Ns) else 0.0
    verdicts = [int(N) if good else None for N, good in zip(Ns, ok)]
    # nearest-rank percentile, so failed points (N = inf) need no interpolation
    ranked = np.sort(np.where(ok, Ns, np.inf))
    N90 = float(ranked[math.ceil(0.9 * len(ranked)) - 1]) if len(Ns) else math.inf
    return GammaEstimate(frac, verdicts, N90, frac >= 1 - delta, indices)


# quasi-hyperbolic segments

QH_CHECKS = ("contracting", "expanding", "ratio")


def quasi_hyperbolic_scan(splitting: SplittingEstimate, eta: float, T: float,
                          checks=QH_CHECKS):
    """Maximal index intervals [a, b] that are (eta, T) quasi hyperbolic.

    With the uniform partition t_i = iT, for every step n in [a, b):
    the contracting product over [a, n) is at most e^(-eta (t_n - t_a)),
    the expanding product over [n, b) at least e^(eta (t_b - t_n)), and the
    one-step ratio |psi*|E1| / m(psi*|E2) at most e^(-eta T).  ``checks``
    selects a subset of the three inequalities.  Intervals are returned as
    sample indices of the splitting, sorted by start.
    """
    _check_step(splitting, T)
    unknown = set(checks) - set(QH_CHECKS)
    if unknown:
        raise ValidationError(f"unknown checks {sorted(unknown)}")
    lc, lx = _log_norms(splitting)
    m = len(lc)
    tiny = 1e-12
    L1 = np.concatenate([[0.0], np.cumsum(lc)])
    L2 = np.concatenate([[0.0], np.cumsum(lx)])
    steps = np.arange(m + 1)
    g1 = L1 + eta * T * steps
    g2 = L2 - eta * T * steps
    ratio_bad = (lc - lx) > -eta * T + tiny if "ratio" in checks else np.zeros(m, dtype=bool)
    best = []
    for a in range(m):
        stop = m
        if "contracting" in checks:
            over = np.flatnonzero(g1[a + 1:m] > g1[a] + tiny)
            if len(over):
                stop = min(stop, a + 1 + int(over[0]))
        bad = np.flatnonzero(ratio_bad[a:m])
        if len(bad):
            stop = min(stop, a + int(bad[0]))
        if stop <= a:
            continue
        if "expanding" in checks:
            run = np.maximum.accumulate(g2[a:stop])
            good = np.flatnonzero(g2[a + 1:stop + 1] >= run - tiny)
            if not len(good):
                continue
            b = a + 1 + int(good[-1])
        else:
            b = stop
        best.append((a, b))
    maximal, reach = [], -1
    for a, b in best:
        if b > reach:
            maximal.append((a, b))
            reach = b
    base = int(splitting.indices[0])
    return [(base + a, base + b) for a, b in maximal]


def interval_coverage(intervals, n_samples: int) -> float:
    covered = np.zeros(n_samples + 1, dtype=bool)
    for a, b in intervals:
        covered[a:b + 1] = True
    return float(covered.mean())


# contracting / expanding points

def _bundle_log_norms(field, points, directions, T, tol):
    """log |psi*_T v_i| for ambient unit directions v_i in N at points[i]."""
    logs = np.empty(len(points))
    for i, (x, d) in enumerate(zip(points, directions)):
        st = lpf_step(field, x, T, tol, scaled=True)
        v = st.from_frame.basis @ d
        logs[i] = math.log(np.linalg.norm(st.matrix @ v) / np.linalg.norm(v))
    return logs


def _transported_log_norms(field, x, direction, T, n_max, tol):
    frame = normal_frame(field, x)
    v = frame.basis @ np.asarray(direction, dtype=float)
    nv = np.linalg.norm(v)
    if nv == 0:
        raise ValidationError("direction is parallel to the flow")
    v /= nv
    logs = np.empty(n_max)
    for i in range(n_max):
        st = lpf_step(field, x, T, tol, scaled=True)
        w = st.matrix @ v
        logs[i] = math.log(np.linalg.norm(w))
        v = w / np.linalg.norm(w)
        x = st.to_frame.base
    return logs


def _splitting_log_norms(field, splitting, index, which, T, n_max, tol, backward):
    """Per-step log norms of psi*_T on a stored line field.

    Backward steps (field -X along a forward splitting) use the identity
    psi^{-X}_T(phi_T x)|E = (psi^X_T(x)|E)^-1 on the invariant line, which
    avoids integrating against the strongly contracting bundle.
    """
    _check_step(splitting, T)
    k = splitting.position(index)
    span = range(k - 1, k - 1 - n_max, -1) if backward else range(k, k + n_max)
    if min(span) < 0 or max(span) >= len(splitting.indices):
        raise MissingDataError(f"splitting does not cover {n_max} steps from index {index}")
    own = reverse(field) if backward else field
    pts = [splitting.cocycle.points[splitting.indices[j]] for j in span]
    dirs = [splitting_direction(own, splitting, int(splitting.indices[j]), which) for j in span]
    logs = _bundle_log_norms(own, pts, dirs, T, tol)
    return -logs if backward else logs


def contracting_point_test(field: VectorField, x, direction, C: float, eta: float, T: float,
                           n_max: int, tol: float = DEFAULT_TOL, splitting=None,
                           index: int | None = None) -> Verdict:
    """Uniform-partition check of prod |psi*_T|E| <= C e^(-eta nT) for n <= n_max.

    ``direction`` selects the line field E.  A 3-vector spanning a line in
    N_x is carried along by the cocycle, which is only stable when E is the
    dominating bundle or exactly invariant.  The strings ``"E1"``/``"E2"``
    read E at every orbit sample from ``splitting`` starting at sample
    ``index`` (``x`` must be that sample's point).
    """
    x = np.asarray(x, dtype=float)
    if isinstance(direction, str):
        if splitting is None or index is None:
            raise ValidationError("a bundle name needs a splitting and a sample index")
        if np.linalg.norm(splitting.cocycle.points[index] - x) > 1e-9 * max(1.0, np.linalg.norm(x)):
            raise ValidationError("x is not the splitting point at the given index")
        logs = _splitting_log_norms(field, splitting, index, direction, T, n_max, tol,
                                    backward=field.reversed != _splitting_reversed(splitting))
    else:
        logs = _transported_log_norms(field, x, direction, T, n_max, tol)
    n = np.arange(1, n_max + 1)
    marg = math.log(C) - eta * n * T - np.cumsum(logs)
    bad = np.flatnonzero(marg < 0)
    params = f"C={C!r};eta={eta!r};T={T!r};field={field.id}"
    return Verdict("contracting_point", 0 if index is None else int(index), params, not len(bad),
                   int(n[bad[0]]) if len(bad) else None, float(marg.min()),
                   {"log_products": np.cumsum(logs)})


def _splitting_reversed(splitting) -> bool:
    return splitting.cocycle.field_id.startswith("-")


def expanding_point_test(field: VectorField, x, direction, C: float, eta: float, T: float,
                         n_max: int, tol: float = DEFAULT_TOL, splitting=None,
                         index: int | None = None) -> Verdict:
    """Expansion is contraction for the reversed field (along the backward orbit)."""
    v = contracting_point_test(reverse(field), x, direction, C, eta, T, n_max, tol,
                               splitting, index)
    return Verdict("expanding_point", v.point_index, v.params, v.passed, v.fail_index,
                   v.margin, v.detail)


def splitting_direction(field: VectorField, splitting: SplittingEstimate, index: int,
                        which: str = "E1") -> np.ndarray:
    """Ambient 3-vector of E1 or E2 at a splitting sample."""
    k = splitting.position(index)
    e = splitting.e1[k] if which == "E1" else splitting.e2[k]
    frame = normal_frame(field, splitting.cocycle.points[index])
    return frame.basis.T @ e


# cones

def cone_contains(v, rho: float, slack: float = 0.0) -> bool:
    """|v2| >= rho |v1|, boundary included."""
    v = np.asarray(v, dtype=float)
    return bool(abs(v[1]) >= rho * abs(v[0]) - slack * np.linalg.norm(v))


def box_norm(v) -> float:
    v = np.asarray(v, dtype=float)
    return float(max(abs(v[0]), abs(v[1])))


def cone_directions(rho: float, count: int = CONE_DIRECTIONS) -> np.ndarray:
    """Unit vectors filling C_rho (upper sheet), boundary rays included."""
    half = math.atan(1.0 / rho)
    ang = np.linspace(-half, half, count)
    return np.column_stack([np.sin(ang), np.cos(ang)])


def sigma4(gamma: float, rho: float, iterations: int = 200) -> float:
    """Largest r with |B - I| <= r forcing B C_rho into C_{gamma rho}.

    Bisection on r: the images of a unit boundary vector v of C_rho under
    all such B fill the disk of radius r about v, so the worst image leaves
    the boundary ray by the angle asin(r).
    """
    ConeSpec(rho, gamma)
    inner = math.atan(1.0 / rho)
    outer = math.atan(1.0 / (gamma * rho))
    lo, hi = 0.0, 1.0
    for _ in range(iterations):
        r = 0.5 * (lo + hi)
        if inner + math.asin(r) <= outer:
            lo = r
        else:
            hi = r
    return lo


@dataclass(frozen=True)
class ConeVerdict:
    passed: bool
    stage: int | None
    escaping: np.ndarray | None
    perturbation_ok: list
    sigma4: float


def cone_invariance_check(steps, rho: float, gamma: float, perturbations=None,
                          directions: int = CONE_DIRECTIONS) -> ConeVerdict:
    """Check that each stage v -> A_i B_i v maps C_rho into C_rho.

    ``steps`` are 2x2 matrices in splitting coordinates.  Perturbations
    default to the identity; whether each lies within sigma4(gamma, rho) is
    reported but does not short-circuit the check.
    """
    spec = ConeSpec(rho, gamma)
    steps = np.asarray(steps, dtype=float).reshape(-1, 2, 2)
    if perturbations is None:
        perturbations = np.repeat(np.eye(2)[None], len(steps), axis=0)
    perturbations = np.asarray(perturbations, dtype=float).reshape(-1, 2, 2)
    if len(perturbations) != len(steps):
        raise ValidationError("need one perturbation per step")
    s4 = sigma4(spec.gamma, spec.rho)
    within = [bool(np.linalg.norm(B - np.eye(2), 2) <= s4) for B in perturbations]
    dirs = cone_directions(rho, max(directions, CONE_DIRECTIONS))
    for i, (A, B) in enumerate(zip(steps, perturbations)):
        img = dirs @ (A @ B).T
        norms = np.linalg.norm(img, axis=1)
        inside = np.abs(img[:, 1]) >= rho * np.abs(img[:, 0]) - CONE_SLACK * norms
        if not inside.all():
            j = int(np.argmin(inside))
            return ConeVerdict(False, i, dirs[j].copy(), within, s4)
    return ConeVerdict(True, None, None, within, s4)


def perturbation_margin_check(A, B, epsilon1: float, directions: int = MARGIN_DIRECTIONS,
                              rel_slack: float = 1e-12) -> str:
    """Check |A B v| >= e^(-eps1) |A v| under |B - I| <= sigma3.

    sigma3 = (m(A)/|A|) eps2 with eps2 = 1 - e^(-eps1).  Returns "pass",
    "vacuous" when the hypothesis fails, or "counterexample".
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if epsilon1 <= 0:
        raise ValidationError("epsilon1 must be positive")
    s = np.linalg.svd(A, compute_uv=False)
    if s[-1] <= 0 or not np.isfinite(s[0] / s[-1]) or s[0] / s[-1] > 1e15:
        raise ValidationError("A must be invertible")
    eps2 = -math.expm1(-epsilon1)
    sigma3 = s[-1] / s[0] * eps2
    if np.linalg.norm(B - np.eye(2), 2) > sigma3:
        return "vacuous"
    ang = np.linspace(0.0, np.pi, directions, endpoint=False)
    v = np.vstack([np.cos(ang), np.sin(ang)])
    ratio = np.linalg.norm(A @ B @ v, axis=0) / np.linalg.norm(A @ v, axis=0)
    floor = math.exp(-epsilon1) * (1.0 - rel_slack)
    return "pass" if ratio.min() >= floor else "counterexample"


def sigma3(A, epsilon1: float) -> float:
    s = np.linalg.svd(np.asarray(A, dtype=float), compute_uv=False)
    return float(s[-1] / s[0] * -math.expm1(-epsilon1))
