"""Catalog of 3-dimensional polynomial vector fields.

Three catalog entries are provided, each with a hand-coded Jacobian:

``LIN``  x' = diag(-2, -1, 1) x
``CYC``  attracting unit limit cycle in the plane z = 0, with z' = -z
``LOR``  the Lorenz equations, (sigma, rho, beta) = (10, 28, 8/3) by default

User fields are polynomial; they are given either as coefficient tables or
as polynomial expressions in x, y, z, and are differentiated exactly at
construction.

Star property: LOR at the classical parameters is commonly believed to be a
star flow (every nearby field has only hyperbolic critical elements).  This
is documented, never asserted or tested.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from types import MappingProxyType
from typing import Mapping, Sequence

import numpy as np

from . import _kernels as K
from .errors import CatalogError, ValidationError

__all__ = ["VectorField", "make_field", "reverse", "polynomial_field", "CATALOG"]

CATALOG = ("LIN", "CYC", "LOR")
LORENZ_DEFAULTS = {"sigma": 10.0, "rho": 28.0, "beta": 8.0 / 3.0}

_EMPTY_COEF = np.zeros(0)
_EMPTY_COMP = np.zeros(0, dtype=np.int64)
_EMPTY_EXPS = np.zeros((0, 3), dtype=np.int64)


@dataclass(frozen=True, eq=False)
class VectorField:
    """Immutable polynomial vector field on R^3.

    ``eval`` and ``jacobian`` accept a single point.  ``reversed`` marks the
    field -X; the sign is applied inside the kernels so reversal is exact.
    """

    name: str
    params: Mapping[str, float]
    singularities: tuple
    reversed: bool = False
    kind: int = K.KIND_POLY
    par: np.ndarray = dc_field(default_factory=lambda: np.zeros(3), repr=False)
    coef: np.ndarray = dc_field(default_factory=lambda: _EMPTY_COEF, repr=False)
    comp: np.ndarray = dc_field(default_factory=lambda: _EMPTY_COMP, repr=False)
    exps: np.ndarray = dc_field(default_factory=lambda: _EMPTY_EXPS, repr=False)

    @property
    def sign(self) -> float:
        return -1.0 if self.reversed else 1.0

    @property
    def kernel_args(self):
        return (self.kind, self.par, self.coef, self.comp, self.exps, self.sign)

    @property
    def id(self) -> str:
        pars = ",".join(f"{k}={v!r}" for k, v in sorted(self.params.items()))
        return f"{'-' if self.reversed else ''}{self.name}({pars})"

    def eval(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.empty(3)
        K.vf(self.kind, self.par, self.coef, self.comp, self.exps, x, out)
        return self.sign * out

    __call__ = eval

    def jacobian(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        J = np.empty((3, 3))
        K.jac(self.kind, self.par, self.coef, self.comp, self.exps, x, J)
        return self.sign * J

    def speed(self, x) -> float:
        return float(np.linalg.norm(self.eval(x)))

    def divergence(self, x) -> float:
        return float(np.trace(self.jacobian(x)))

    def distance_to_singularities(self, x) -> float:
        if not self.singularities:
            return math.inf
        x = np.asarray(x, dtype=float)
        return min(float(np.linalg.norm(x - s)) for s in self.singularities)

    def reverse(self) -> "VectorField":
        return reverse(self)


def reverse(field: VectorField) -> VectorField:
    """Return -X: pointwise negation, same zero set, flag toggled."""
    return VectorField(
        name=field.name,
        params=field.params,
        singularities=field.singularities,
        reversed=not field.reversed,
        kind=field.kind,
        par=field.par,
        coef=field.coef,
        comp=field.comp,
        exps=field.exps,
    )


def _frozen(arr):
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


def _lorenz_equilibria(sigma, rho, beta):
    eq = [_frozen([0.0, 0.0, 0.0])]
    if rho > 1.0:
        c = math.sqrt(beta * (rho - 1.0))
        eq.append(_frozen([c, c, rho - 1.0]))
        eq.append(_frozen([-c, -c, rho - 1.0]))
    return tuple(eq)


def make_field(spec) -> VectorField:
    """Build a field from a catalog name or a mapping spec.

    ``spec`` may be a string (``"LIN"``, ``"CYC"``, ``"LOR"``) or a mapping
    with ``name`` and optional Lorenz parameters ``sigma``, ``rho``, ``beta``.
    A mapping with a ``poly`` entry (component -> expression or term table)
    builds a polynomial field; see :func:`polynomial_field`.
    """
    if isinstance(spec, str):
        spec = {"name": spec}
    spec = dict(spec)
    if "poly" in spec:
        return polynomial_field(spec["poly"], name=spec.get("name", "POLY"),
                                singularities=spec.get("singularities"))
    name = str(spec.get("name", "")).upper()
    if name == "LIN":
        return VectorField("LIN", MappingProxyType({}), (_frozen([0.0, 0.0, 0.0]),),
                           kind=K.KIND_LIN, par=_frozen([-2.0, -1.0, 1.0]))
    if name == "CYC":
        return VectorField("CYC", MappingProxyType({}), (_frozen([0.0, 0.0, 0.0]),),
                           kind=K.KIND_CYC, par=_frozen([0.0, 0.0, 0.0]))
    if name == "LOR":
        p = dict(LORENZ_DEFAULTS)
        for key in p:
            if key in spec and spec[key] is not None:
                p[key] = float(spec[key])
        for key, v in p.items():
            if not math.isfinite(v):
                raise ValidationError(f"Lorenz parameter {key} must be finite, got {v}")
        if p["sigma"] <= 0 or p["beta"] <= 0 or p["rho"] <= 0:
            raise ValidationError(f"Lorenz parameters must be positive, got {p}")
        return VectorField("LOR", MappingProxyType(p),
                           _lorenz_equilibria(p["sigma"], p["rho"], p["beta"]),
                           kind=K.KIND_LOR,
                           par=_frozen([p["sigma"], p["rho"], p["beta"]]))
    raise CatalogError(f"unknown field {spec.get('name')!r}; catalog is {CATALOG}")


_COMPONENTS = {"x": 0, "y": 1, "z": 2, "0": 0, "1": 1, "2": 2}


def _parse_expression(expr: str):
    import sympy

    x, y, z = sympy.symbols("x y z")
    try:
        poly = sympy.Poly(sympy.sympify(expr.replace("^", "**")), x, y, z)
    except (sympy.SympifyError, sympy.PolynomialError, TypeError) as exc:
        raise ValidationError(f"cannot parse polynomial {expr!r}: {exc}") from exc
    return [(float(c), *map(int, m)) for m, c in poly.terms()]


def polynomial_field(components: Mapping, name: str = "POLY",
                     singularities: Sequence | None = None) -> VectorField:
    """Polynomial field from per-component term tables.

    ``components`` maps ``"x"``/``"y"``/``"z"`` (or 0/1/2) to either an
    expression string such as ``"-y + x - x^3 - x*y^2"`` or a list of
    ``(coef, a, b, c)`` tuples for ``coef * x**a * y**b * z**c``.
    Singularities are not solved for; pass the known ones explicitly.
    """
    coef, comp, exps = [], [], []
    for key, terms in components.items():
        idx = _COMPONENTS.get(str(key).lower())
        if idx is None:
            raise ValidationError(f"unknown component {key!r}")
        if isinstance(terms, str):
            terms = _parse_expression(terms)
        for term in terms:
            c, a, b, d = term
            c = float(c)
            if not math.isfinite(c):
                raise ValidationError(f"non-finite coefficient {c} in component {key!r}")
            if min(a, b, d) < 0 or any(int(e) != e for e in (a, b, d)):
                raise ValidationError(f"exponents must be nonnegative integers, got {term}")
            coef.append(c)
            comp.append(idx)
            exps.append((int(a), int(b), int(d)))
    sing = tuple(_frozen(s) for s in (singularities or ()))
    fld = VectorField(
        name=name,
        params=MappingProxyType({}),
        singularities=sing,
        kind=K.KIND_POLY,
        par=_frozen([0.0, 0.0, 0.0]),
        coef=_frozen(coef) if coef else _EMPTY_COEF,
        comp=np.array(comp, dtype=np.int64).reshape(-1),
        exps=np.array(exps, dtype=np.int64).reshape(-1, 3),
    )
    for s in sing:
        if np.linalg.norm(fld.eval(s)) > 1e-12:
            raise ValidationError(f"listed singularity {s} is not a zero of the field")
    return fld


def saddle_cycle_field() -> VectorField:
    """Unit limit cycle with normal Floquet exponents (-2, +1).

    Planar part as in CYC, vertical direction z' = +z, so the cycle is a
    hyperbolic saddle orbit.  Used as the index-1 analogue of CYC.
    """
    return polynomial_field(
        {"x": "-y + x - x^3 - x*y^2", "y": "x + y - x^2*y - y^3", "z": "z"},
        name="SADDLECYC", singularities=[(0.0, 0.0, 0.0)])
