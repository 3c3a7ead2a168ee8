"""Flow and tangent flow integration, orbit sampling, recurrence search."""
from __future__ import annotations

import hashlib
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels as K
from .errors import (AlignmentError, DivergenceError, IntegrationError, ResourceError,
                     SectionMissError, ValidationError)
from .fields import VectorField, reverse

MAX_SAMPLES = 5_000_000
MAX_STEPS = 50_000_000
DEFAULT_TOL = 1e-10
DEFAULT_BURN_IN = 50.0


def _check_tol(tol):
    if not (1e-13 <= tol <= 1e-3):
        raise ValidationError(f"tol must lie in [1e-13, 1e-3], got {tol}")


def _raise_status(status, state, time):
    if status == K.NONFINITE:
        raise DivergenceError(f"non-finite state near t={time}", state=state, time=time)
    if status == K.UNDERFLOW:
        raise IntegrationError(f"step size underflow at t={time}", state=state, time=time)
    if status == K.MAXSTEPS:
        raise IntegrationError(f"step budget exhausted at t={time}", state=state, time=time)


def _run(field: VectorField, y0, t, tol):
    """Integrate the 3- or 12-dimensional system over signed time t."""
    if not math.isfinite(t):
        raise ValidationError(f"integration time must be finite, got {t}")
    _check_tol(tol)
    y0 = np.ascontiguousarray(y0, dtype=float)
    fld = field if t >= 0 else reverse(field)
    y, _, st, tr, _ = K.advance(*fld.kernel_args, y0, abs(float(t)), tol, tol, -1.0, MAX_STEPS)
    if st != K.OK:
        _raise_status(st, y, math.copysign(tr, t))
    return y


def integrate(field: VectorField, x0, t: float, tol: float = DEFAULT_TOL) -> np.ndarray:
    """phi_t(x0) by adaptive Dormand-Prince; negative t integrates backward."""
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (3,):
        raise ValidationError("x0 must be a 3-vector")
    return _run(field, x0, t, tol)


@dataclass(frozen=True)
class FundamentalMatrix:
    base: np.ndarray
    t: float
    matrix: np.ndarray


def integrate_with_tangent(field: VectorField, x0, t: float, tol: float = DEFAULT_TOL):
    """Return (phi_t(x0), FundamentalMatrix) from the joint 12-dimensional system."""
    x0 = np.asarray(x0, dtype=float)
    y0 = np.concatenate([x0, np.eye(3).ravel()])
    y = _run(field, y0, t, tol)
    return y[:3].copy(), FundamentalMatrix(x0.copy(), float(t), y[3:].reshape(3, 3).copy())


def propagate_tangent(field: VectorField, x0, Y0, t: float, tol: float = DEFAULT_TOL):
    """Integrate the state with a 3x3 block of tangent vectors; returns (phi_t(x0), Phi_t Y0)."""
    y0 = np.concatenate([np.asarray(x0, dtype=float), np.asarray(Y0, dtype=float).ravel()])
    y = _run(field, y0, t, tol)
    return y[:3].copy(), y[3:].reshape(3, 3).copy()


def first_crossing(field: VectorField, y0, t_max, point, normal, radius, tol=1e-12):
    """Time and position of the first upward crossing of the plane through ``point``
    with normal ``normal`` that lands within ``radius`` of ``point``."""
    _check_tol(tol)
    t, y, st = K.cross(*field.kernel_args, np.asarray(y0, dtype=float), float(t_max),
                       np.asarray(point, dtype=float), np.asarray(normal, dtype=float),
                       float(radius), tol, tol, MAX_STEPS)
    if st == K.NOCROSS:
        raise SectionMissError(f"no crossing within t < {t_max}")
    if st != K.OK:
        _raise_status(st, y, t)
    return t, y


@dataclass(frozen=True, eq=False)
class TrajectorySegment:
    """Uniformly sampled orbit arc; ``points[i]`` is phi_{i*dt}(x0)."""

    field: VectorField
    x0: np.ndarray
    dt: float
    points: np.ndarray
    speeds: np.ndarray
    tol: float

    @property
    def field_id(self) -> str:
        return self.field.id

    @property
    def n(self) -> int:
        return len(self.points) - 1

    @property
    def duration(self) -> float:
        return self.n * self.dt

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.points)) * self.dt

    def stride(self, T: float) -> int:
        """Number of samples per time T; raises AlignmentError if T is not a multiple of dt."""
        s = T / self.dt
        k = int(round(s))
        if k < 1 or abs(s - k) > 1e-9 * max(1.0, s):
            raise AlignmentError(f"T={T} is not a positive integer multiple of dt={self.dt}")
        return k

    def window(self, start: int, stop: int) -> "TrajectorySegment":
        pts = self.points[start:stop + 1]
        return TrajectorySegment(self.field, pts[0].copy(), self.dt, pts, self.speeds[start:stop + 1],
                                 self.tol)

    def reversed(self) -> "TrajectorySegment":
        """The same arc traversed backward: an orbit segment of -X."""
        pts = self.points[::-1].copy()
        return TrajectorySegment(reverse(self.field), pts[0].copy(), self.dt, pts,
                                 self.speeds[::-1].copy(), self.tol)

    def cache_key(self) -> str:
        return segment_cache_key(self.field, self.x0, self.dt, self.tol, self.n)

    def to_csv(self, path) -> None:
        data = np.column_stack([self.times, self.points, self.speeds])
        with open(path, "w") as fh:
            fh.write("t,x,y,z,speed\n")
            for row in data:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")


def _speeds(field, pts):
    return K.speeds(*field.kernel_args[:5], np.ascontiguousarray(pts, dtype=float))


def sample_orbit(field: VectorField, x0, total_time: float, dt: float,
                 tol: float = DEFAULT_TOL, max_samples: int = MAX_SAMPLES) -> TrajectorySegment:
    """Sample phi_t(x0) at t = 0, dt, ..., total_time.

    The integrator lands exactly on every grid time, so re-integrating from
    ``points[i]`` over dt reproduces ``points[i+1]`` to integrator accuracy.
    """
    _check_tol(tol)
    if dt <= 0 or total_time < 0:
        raise ValidationError("dt must be positive and total_time nonnegative")
    ratio = total_time / dt
    n = int(round(ratio))
    if abs(ratio - n) > 1e-9 * max(1.0, ratio):
        raise AlignmentError(f"dt={dt} does not divide total_time={total_time}")
    if n > max_samples:
        raise ResourceError(f"{n} samples exceeds the cap of {max_samples}")
    x0 = np.asarray(x0, dtype=float)
    pts, st, k = K.sample(*field.kernel_args, x0, float(dt), n, tol, tol, MAX_STEPS)
    if st != K.OK:
        _raise_status(st, pts[-1], k * dt)
    return TrajectorySegment(field, x0.copy(), float(dt), pts, _speeds(field, pts), float(tol))


def attractor_point(field: VectorField, x0, burn_in: float = DEFAULT_BURN_IN,
                    tol: float = DEFAULT_TOL) -> np.ndarray:
    """Point after discarding a transient of length ``burn_in``."""
    return integrate(field, x0, burn_in, tol)


def find_recurrences(segment: TrajectorySegment, T: float, delta: float, alpha: float = 0.0,
                     l_min: int = 1, l_max: int | None = None):
    """All (start, l) with |points[start] - phi_{lT}(points[start])| < delta.

    Both endpoints must stay farther than ``alpha`` from every singularity.
    Pairs come back sorted by increasing distance (ties by start, then l).
    A uniform hash grid of cell size delta restricts the scan to the 27
    neighbouring cells of each occupied cell.
    """
    s = segment.stride(T)
    if delta <= 0:
        return []
    pts = segment.points
    fld = segment.field
    ok = np.ones(len(pts), dtype=bool)
    for sing in fld.singularities:
        ok &= np.linalg.norm(pts - sing, axis=1) > alpha
    # cells at least delta wide still cover every pair; the floor keeps indices in int64 range
    cell = max(delta, 1e-12 * (1.0 + float(np.max(np.abs(pts)))))
    cells = np.floor(pts / cell).astype(np.int64)
    grid = defaultdict(list)
    for i, c in enumerate(map(tuple, cells)):
        if ok[i]:
            grid[c].append(i)
    grid = {c: np.array(v, dtype=np.int64) for c, v in grid.items()}
    offsets = [(a, b, c) for a in (-1, 0, 1) for b in (-1, 0, 1) for c in (-1, 0, 1)]
    lmax = l_max if l_max is not None else len(pts)
    found = []
    for c, idx_a in grid.items():
        for o in offsets:
            idx_b = grid.get((c[0] + o[0], c[1] + o[1], c[2] + o[2]))
            if idx_b is None:
                continue
            lag = idx_b[None, :] - idx_a[:, None]
            mask = (lag > 0) & (lag % s == 0)
            if not mask.any():
                continue
            ia, ib = np.nonzero(mask)
            i, j = idx_a[ia], idx_b[ib]
            ls = (j - i) // s
            keep = (ls >= l_min) & (ls <= lmax)
            i, j, ls = i[keep], j[keep], ls[keep]
            d = np.linalg.norm(pts[i] - pts[j], axis=1)
            near = d < delta
            found.extend(zip(d[near].tolist(), i[near].tolist(), ls[near].tolist()))
    found.sort()
    return [(i, l) for _, i, l in found]


def recurrence_distance(segment: TrajectorySegment, start: int, l: int, T: float) -> float:
    s = segment.stride(T)
    return float(np.linalg.norm(segment.points[start] - segment.points[start + l * s]))


# persistence

def segment_cache_key(field: VectorField, x0, dt, tol, n) -> str:
    h = hashlib.sha256()
    h.update(field.id.encode())
    h.update(np.asarray(x0, dtype=float).tobytes())
    h.update(repr((float(dt), float(tol), int(n))).encode())
    return h.hexdigest()[:32]


def save_segment_cache(segment: TrajectorySegment, cache_dir) -> Path:
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    path = cache_dir / f"{segment.cache_key()}.npz"
    np.savez_compressed(path, points=segment.points, speeds=segment.speeds,
                        x0=segment.x0, dt=segment.dt, tol=segment.tol)
    return path


def load_segment_cache(field: VectorField, x0, dt, tol, n, cache_dir):
    """Cached segment or None."""
    path = Path(cache_dir) / f"{segment_cache_key(field, x0, dt, tol, n)}.npz"
    if not path.exists():
        return None
    with np.load(path) as data:
        return TrajectorySegment(field, data["x0"], float(data["dt"]), data["points"],
                                 data["speeds"], float(data["tol"]))


def cached_sample_orbit(field, x0, total_time, dt, tol=DEFAULT_TOL, cache_dir=None):
    if cache_dir is None:
        return sample_orbit(field, x0, total_time, dt, tol)
    n = int(round(total_time / dt))
    seg = load_segment_cache(field, x0, dt, tol, n, cache_dir)
    if seg is None:
        seg = sample_orbit(field, x0, total_time, dt, tol)
        save_segment_cache(seg, cache_dir)
    return seg


def read_segment_csv(path, field: VectorField, tol: float = DEFAULT_TOL) -> TrajectorySegment:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    t, pts, speeds = data[:, 0], data[:, 1:4], data[:, 4]
    dt = float(t[1] - t[0]) if len(t) > 1 else 0.0
    return TrajectorySegment(field, pts[0].copy(), dt, pts, speeds, tol)
