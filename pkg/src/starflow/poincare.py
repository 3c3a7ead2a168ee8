"""Normal frames, the linear Poincare flow psi_t, its scaled variant psi*_t,
the extended flow projection and sectional return maps.

Matrices of psi_t are written in deterministic orthonormal frames
``(u, n1, n2)`` rebuilt at every base point; only frame-covariant quantities
(singular values, determinants, composition laws) are meaningful across
different frame conventions.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SectionMissError, SingularPointError, ValidationError
from .fields import VectorField
from .flow import DEFAULT_TOL, first_crossing, integrate, integrate_with_tangent

SPEED_CUTOFF = 1e-10
SECTION_BETA = 0.05
_AXIS_THRESHOLD = 0.9


@dataclass(frozen=True)
class NormalFrame:
    base: np.ndarray
    u: np.ndarray
    n1: np.ndarray
    n2: np.ndarray

    @property
    def basis(self) -> np.ndarray:
        """2x3 matrix whose rows span the normal plane."""
        return np.vstack([self.n1, self.n2])

    @property
    def matrix(self) -> np.ndarray:
        return np.vstack([self.u, self.n1, self.n2])


def frame_from_direction(u, base=None) -> NormalFrame:
    """Right-handed frame (u, n1, n2) with n1 taken from the first usable axis.

    n1 is the first ambient axis e_i with |u_i| <= 0.9 (hence well away from
    parallel to u), orthogonalized against u; n2 = u x n1.
    """
    u = np.asarray(u, dtype=float)
    u = u / np.linalg.norm(u)
    i = next(k for k in range(3) if abs(u[k]) <= _AXIS_THRESHOLD)
    e = np.zeros(3)
    e[i] = 1.0
    n1 = e - u[i] * u
    n1 /= np.linalg.norm(n1)
    n2 = np.cross(u, n1)
    base = np.zeros(3) if base is None else np.asarray(base, dtype=float)
    return NormalFrame(base, u, n1, n2)


def normal_frame(field: VectorField, x) -> NormalFrame:
    x = np.asarray(x, dtype=float)
    X = field.eval(x)
    speed = np.linalg.norm(X)
    if speed <= SPEED_CUTOFF:
        raise SingularPointError(f"|X(x)| = {speed:.3g} at {x}: normal bundle undefined",
                                 time=0.0, point=x, distance=field.distance_to_singularities(x))
    return frame_from_direction(X / speed, x)


def project_normal(v, X) -> np.ndarray:
    """Orthogonal projection of v onto the plane perpendicular to X."""
    v = np.asarray(v, dtype=float)
    X = np.asarray(X, dtype=float)
    return v - (v @ X) / (X @ X) * X


@dataclass(frozen=True)
class CocycleStep:
    from_frame: NormalFrame
    to_frame: NormalFrame
    t: float
    matrix: np.ndarray
    scaled: bool
    speed_ratio: float = 1.0

    @property
    def unscaled_matrix(self) -> np.ndarray:
        return self.matrix / self.speed_ratio if self.scaled else self.matrix

    def then(self, other: "CocycleStep") -> "CocycleStep":
        """Composition: apply self first, then ``other``."""
        return CocycleStep(self.from_frame, other.to_frame, self.t + other.t,
                           other.matrix @ self.matrix, self.scaled,
                           self.speed_ratio * other.speed_ratio)


def _check_regular(field, x, t):
    speed = field.speed(x)
    if speed <= SPEED_CUTOFF:
        raise SingularPointError(f"orbit reaches speed {speed:.3g} at t={t}", time=t, point=x,
                                 distance=field.distance_to_singularities(x))
    return speed


def lpf_step(field: VectorField, x, T: float, tol: float = DEFAULT_TOL,
             scaled: bool = False) -> CocycleStep:
    """Matrix of psi_T (or psi*_T) from the frame at x to the frame at phi_T(x)."""
    x = np.asarray(x, dtype=float)
    _check_regular(field, x, 0.0)
    src = normal_frame(field, x)
    y, F = integrate_with_tangent(field, x, T, tol)
    _check_regular(field, y, T)
    dst = normal_frame(field, y)
    M = dst.basis @ F.matrix @ src.basis.T
    ratio = field.speed(x) / field.speed(y)
    if scaled:
        M = ratio * M
    return CocycleStep(src, dst, float(T), M, scaled, ratio)


def extended_lpf_step(field: VectorField, x, u, T: float, tol: float = DEFAULT_TOL):
    """Proj_2 of the extended flow Theta_T for the unit direction u.

    Returns the 2x2 matrix from the plane orthogonal to u to the plane
    orthogonal to Phi_T(u), both in :func:`frame_from_direction` frames, and
    the transported unit direction Phi_T(u)/|Phi_T(u)|.  Works at
    singularities, where the ordinary normal bundle is undefined.
    """
    u = np.asarray(u, dtype=float)
    if abs(np.linalg.norm(u) - 1.0) > 1e-9:
        raise ValidationError("u must be a unit vector")
    _, F = integrate_with_tangent(field, x, T, tol)
    Fu = F.matrix @ u
    u_t = Fu / np.linalg.norm(Fu)
    src = frame_from_direction(u, x)
    dst = frame_from_direction(u_t)
    return dst.basis @ F.matrix @ src.basis.T, u_t


def sectional_return(field: VectorField, x, y, tol: float = 1e-12, T: float = 1.0,
                     beta: float = SECTION_BETA):
    """Hit point of the orbit of y on the section through phi_T(x), and its time.

    y must lie in the affine plane through x normal to X(x), within
    beta*|X(x)| of x.  The section at phi_T(x) is the affine plane normal to
    X(phi_T(x)); the crossing is located on the dense output of the
    integrator and must happen in (0, 2T).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    Xx = field.eval(x)
    sx = np.linalg.norm(Xx)
    if sx <= SPEED_CUTOFF:
        raise SingularPointError("section base point is singular", time=0.0, point=x)
    off = y - x
    if abs(off @ Xx) > 1e-9 * sx * max(1.0, np.linalg.norm(off)):
        raise ValidationError("y does not lie on the normal section at x")
    if np.linalg.norm(off) > beta * sx:
        raise ValidationError(f"|y - x| exceeds beta*|X(x)| = {beta * sx:.3g}")
    target = integrate(field, x, T, tol)
    Xt = field.eval(target)
    radius = max(0.5 * np.linalg.norm(Xt) * T, 10.0 * np.linalg.norm(off))
    t, hit = first_crossing(field, y, 2.0 * T, target, Xt, radius, tol)
    if not 0.0 < t < 2.0 * T:
        raise SectionMissError(f"return time {t} outside (0, {2 * T})")
    return hit, t


def fit_return_constant(field: VectorField, x, radii, rng, tol: float = 1e-12,
                        beta: float = SECTION_BETA):
    """Max of |t(y) - 1| / |y - x| over section points at the given radii."""
    frame = normal_frame(field, x)
    ratios = []
    for r in radii:
        ang = rng.uniform(0.0, 2.0 * np.pi)
        y = x + r * (np.cos(ang) * frame.n1 + np.sin(ang) * frame.n2)
        _, t = sectional_return(field, x, y, tol=tol, beta=beta)
        ratios.append(abs(t - 1.0) / r)
    return float(max(ratios)), np.array(ratios)


@dataclass(frozen=True, eq=False)
class Cocycle:
    """Sequence of psi_T matrices along an orbit.

    ``raw[i]`` maps the normal frame at ``points[i]`` to the frame at the
    integrated endpoint phi_T(points[i]); ``speed_ratios[i]`` is
    |X(points[i])| / |X(phi_T(points[i]))|.
    """

    field_id: str
    step: float
    points: np.ndarray
    raw: np.ndarray
    speed_ratios: np.ndarray
    scaled: bool
    t0: float = 0.0

    @property
    def n(self) -> int:
        return len(self.raw)

    @property
    def matrices(self) -> np.ndarray:
        if self.scaled:
            return self.raw * self.speed_ratios[:, None, None]
        return self.raw

    def with_scaling(self, scaled: bool) -> "Cocycle":
        return Cocycle(self.field_id, self.step, self.points, self.raw, self.speed_ratios,
                       scaled, self.t0)

    def window(self, start: int, stop: int) -> "Cocycle":
        return Cocycle(self.field_id, self.step, self.points[start:stop + 1],
                       self.raw[start:stop], self.speed_ratios[start:stop], self.scaled,
                       self.t0 + start * self.step)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("t0,t1,m11,m12,m21,m22,scaled\n")
            for i, m in enumerate(self.matrices):
                a = self.t0 + i * self.step
                vals = [a, a + self.step, *m.ravel()]
                fh.write(",".join(repr(float(v)) for v in vals) + f",{int(self.scaled)}\n")


def constant_cocycle(matrix, n: int, step: float = 1.0, scaled: bool = True) -> Cocycle:
    """Synthetic cocycle repeating one 2x2 matrix, for tests and calibration."""
    m = np.asarray(matrix, dtype=float)
    return Cocycle("synthetic", float(step), np.zeros((n + 1, 3)), np.repeat(m[None], n, axis=0),
                   np.ones(n), scaled)


def lpf_cocycle_along(field: VectorField, anchors, step_T: float, tol: float = DEFAULT_TOL,
                      scaled: bool = True, min_distance: float = 0.0) -> Cocycle:
    """psi_T matrices re-anchored at each of the given orbit points.

    ``anchors[i+1]`` should be (close to) phi_T(anchors[i]).  Re-anchoring
    keeps unstable directions under control on long or backward runs.
    """
    anchors = np.asarray(anchors, dtype=float)
    n = len(anchors) - 1
    raw = np.empty((n, 2, 2))
    ratios = np.empty(n)
    _guard_singularities(field, anchors, min_distance, step_T)
    for i in range(n):
        st = lpf_step(field, anchors[i], step_T, tol, scaled=False)
        raw[i] = st.matrix
        ratios[i] = st.speed_ratio
    return Cocycle(field.id, float(step_T), anchors.copy(), raw, ratios, scaled)


def lpf_cocycle(field: VectorField, x0, n_steps: int, step_T: float, tol: float = DEFAULT_TOL,
                scaled: bool = True, min_distance: float = 0.0) -> Cocycle:
    """psi_T matrices along one continuously integrated orbit from x0."""
    pts = np.empty((n_steps + 1, 3))
    raw = np.empty((n_steps, 2, 2))
    ratios = np.empty(n_steps)
    x = np.asarray(x0, dtype=float)
    pts[0] = x
    closest = (np.inf, 0.0)
    for i in range(n_steps):
        t = i * step_T
        try:
            st = lpf_step(field, x, step_T, tol, scaled=False)
        except SingularPointError as exc:
            exc.time = t + (exc.time or 0.0)
            raise
        raw[i] = st.matrix
        ratios[i] = st.speed_ratio
        x = st.to_frame.base
        pts[i + 1] = x
        d = field.distance_to_singularities(x)
        if d < closest[0]:
            closest = (d, t + step_T)
        if d <= min_distance:
            raise SingularPointError(f"orbit within {d:.3g} of a singularity at t={t + step_T}",
                                     time=t + step_T, point=x.copy(), distance=d)
    return Cocycle(field.id, float(step_T), pts, raw, ratios, scaled)


def _guard_singularities(field, pts, min_distance, step):
    if min_distance <= 0 or not field.singularities:
        return
    d = np.min([np.linalg.norm(pts - s, axis=1) for s in field.singularities], axis=0)
    k = int(np.argmin(d))
    if d[k] <= min_distance:
        raise SingularPointError(f"orbit within {d[k]:.3g} of a singularity at t={k * step}",
                                 time=k * step, point=pts[k].copy(), distance=float(d[k]))


def cocycle_from_segment(segment, step_T: float, tol: float = DEFAULT_TOL,
                         scaled: bool = True, min_distance: float = 0.0) -> Cocycle:
    """Re-anchored cocycle over a sampled segment at stride step_T."""
    s = segment.stride(step_T)
    anchors = segment.points[::s]
    return lpf_cocycle_along(segment.field, anchors, step_T, tol, scaled, min_distance)
