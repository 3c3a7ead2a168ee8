"""Plain-text run configuration: ``key = value`` lines, sections by dotted prefix.

Values may be numbers, numeric expressions such as ``2*pi/500``,
comma-separated tuples, or bare words.  Keys not listed in :data:`DEFAULTS`
(other than ``field.*``) are rejected.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field, replace
from pathlib import Path

from .errors import ValidationError
from .measures import ExperimentConfig

TWO_PI = 2.0 * math.pi

# key -> (default, help)
DEFAULTS = {
    "run.x0": ((1.0, 1.0, 1.0), "initial point before burn-in"),
    "run.burn_in": (50.0, "transient discarded before sampling"),
    "run.total_time": (1000.0, "length of the reference orbit"),
    "run.dt": (0.01, "sampling step"),
    "run.tol": (1e-10, "integrator tolerance"),
    "run.step_T": (1.0, "cocycle step T (multiple of dt)"),
    "run.reorth_dt": (0.1, "tangent QR re-orthonormalization interval"),
    "run.zero_tol": (0.05, "exponents closer to 0 count as zero"),
    "pesin.epsilon": (0.2, "exponent window slack"),
    "pesin.eta": (0.3, "quasi-hyperbolic rate"),
    "pesin.k": (20.0, "Pesin block level"),
    "pesin.n_max": (200, "block test horizon (steps)"),
    "pesin.points": (200, "sample points for block tests"),
    "cone.rho": (2.0, "cone aperture"),
    "cone.gamma": (0.7, "cone shrink factor"),
    "recurrence.T": (0.01, "recurrence time quantum (multiple of dt)"),
    "recurrence.delta": (0.5, "closing distance"),
    "recurrence.alpha": (0.5, "singularity clearance"),
    "recurrence.targets": ((2.0, 5.0, 10.0, 20.0), "target loop lengths lT"),
    "recurrence.window": (0.25, "relative window around each target"),
    "recurrence.per_target": (3, "orbits kept per target"),
    "recurrence.attempts": (12, "candidates tried per target"),
    "recurrence.rank": ("birkhoff", "candidate order: birkhoff or distance"),
    "shadowing.epsilon": (0.5, "requested shadowing epsilon"),
    "shadowing.tol": (1e-9, "Newton closure tolerance"),
    "measures.n_terms": (20, "dictionary truncation"),
    "measures.n_atoms": (256, "atoms per periodic measure"),
}

PRESETS = {
    "CYC": {
        "run.x0": (1.0, 0.0, 0.0), "run.burn_in": 0.0, "run.total_time": 20 * TWO_PI,
        "run.dt": TWO_PI / 500, "run.step_T": TWO_PI / 10, "run.reorth_dt": TWO_PI / 50,
        "recurrence.T": TWO_PI / 500, "recurrence.delta": 1e-3, "recurrence.targets": (TWO_PI,),
        "recurrence.window": 0.01, "recurrence.per_target": 1, "recurrence.attempts": 1,
        "pesin.n_max": 20, "pesin.points": 20, "pesin.eta": 0.5, "pesin.epsilon": 0.1,
    },
    "LIN": {"run.x0": (1e-3, 1e-3, 1e-3), "run.burn_in": 0.0, "run.total_time": 10.0,
            "run.step_T": 0.1},
}


def _parse_value(text: str):
    import sympy

    text = text.strip()
    if "," in text:
        return tuple(_parse_value(p) for p in text.split(",") if p.strip())
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    try:
        expr = sympy.sympify(text.replace("^", "**"))
        if expr.is_number:
            return float(expr)
    except (sympy.SympifyError, TypeError):
        pass
    return text


def parse_config_text(text: str) -> dict:
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"config line {n}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ValidationError(f"config line {n}: empty key")
        if key.startswith("field.poly."):
            out[key] = val
        else:
            out[key] = _parse_value(val)
    return out


@dataclass
class RunConfig:
    field: dict
    values: dict
    out: Path
    seed: int = 0
    raw: dict = dc_field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def experiment(self) -> ExperimentConfig:
        v = self.values
        return ExperimentConfig(
            x0=tuple(float(a) for a in v["run.x0"]), burn_in=float(v["run.burn_in"]),
            total_time=float(v["run.total_time"]), dt=float(v["run.dt"]), tol=float(v["run.tol"]),
            step_T=float(v["run.step_T"]), rec_T=float(v["recurrence.T"]),
            delta=float(v["recurrence.delta"]), alpha=float(v["recurrence.alpha"]),
            targets=tuple(float(t) for t in _as_tuple(v["recurrence.targets"])),
            window=float(v["recurrence.window"]), per_target=int(v["recurrence.per_target"]),
            attempts=int(v["recurrence.attempts"]), epsilon=float(v["shadowing.epsilon"]),
            eta=float(v["pesin.eta"]), n_terms=int(v["measures.n_terms"]),
            n_atoms=int(v["measures.n_atoms"]), zero_tol=float(v["run.zero_tol"]),
            newton_tol=float(v["shadowing.tol"]), rank=str(v["recurrence.rank"]), seed=self.seed)

    def echo(self) -> dict:
        return {"field": self.field, "values": {k: self.values[k] for k in sorted(self.values)},
                "seed": self.seed, "file": self.raw}


def _as_tuple(v):
    return v if isinstance(v, tuple) else (v,)


def _multiple(a: float, b: float) -> bool:
    r = a / b
    return round(r) >= 1 and abs(r - round(r)) <= 1e-9 * max(1.0, r)


def build_config(path=None, out=None, seed=None, field_name=None) -> RunConfig:
    raw = {}
    if path is not None:
        try:
            raw = parse_config_text(Path(path).read_text())
        except OSError as exc:
            raise ValidationError(f"cannot read config {path}: {exc}") from exc
    fspec = {}
    poly = {}
    for k, v in raw.items():
        if k.startswith("field.poly."):
            poly[k[len("field.poly."):]] = v
        elif k.startswith("field."):
            fspec[k[len("field."):]] = v
        elif k not in DEFAULTS and k not in ("run.seed", "output.dir"):
            raise ValidationError(f"unknown config key {k!r}")
    if field_name is not None:
        fspec["name"] = field_name
    fspec.setdefault("name", "POLY" if poly else "LOR")
    if poly:
        fspec["poly"] = poly
    values = {k: d for k, (d, _) in DEFAULTS.items()}
    values.update(PRESETS.get(str(fspec["name"]).upper(), {}))
    values.update({k: v for k, v in raw.items() if k in DEFAULTS})
    seed = int(seed if seed is not None else raw.get("run.seed", 0))
    out = Path(out if out is not None else raw.get("output.dir", "starflow-out"))
    cfg = RunConfig(fspec, values, out, seed, raw)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    v = cfg.values
    for key in ("run.tol", "run.dt", "run.step_T", "run.reorth_dt", "run.total_time",
                "recurrence.T", "recurrence.delta", "shadowing.tol", "shadowing.epsilon",
                "pesin.epsilon", "cone.rho", "cone.gamma"):
        if not isinstance(v[key], (int, float)) or not v[key] > 0:
            raise ValidationError(f"{key} must be a positive number, got {v[key]!r}")
    if not 1e-13 <= v["run.tol"] <= 1e-3:
        raise ValidationError("run.tol must lie in [1e-13, 1e-3]")
    if len(_as_tuple(v["run.x0"])) != 3:
        raise ValidationError("run.x0 needs three coordinates")
    for key in ("run.step_T", "recurrence.T", "run.total_time"):
        if not _multiple(float(v[key]), float(v["run.dt"])):
            raise ValidationError(f"{key} = {v[key]!r} is not an integer multiple of run.dt")
    if v["recurrence.rank"] not in ("birkhoff", "distance"):
        raise ValidationError("recurrence.rank must be birkhoff or distance")


def with_values(cfg: RunConfig, **updates) -> RunConfig:
    vals = dict(cfg.values)
    vals.update({k.replace("__", "."): v for k, v in updates.items()})
    new = replace(cfg, values=vals)
    validate(new)
    return new


def defaults_help() -> str:
    lines = ["configuration keys (key = value):"]
    for k, (d, h) in DEFAULTS.items():
        dv = ",".join(map(str, d)) if isinstance(d, tuple) else d
        lines.append(f"  {k:<24} {h} [default {dv}]")
    lines.append("  field.name / field.sigma / field.rho / field.beta / field.poly.<x|y|z>")
    lines.append("  run.seed, output.dir")
    return "\n".join(lines)
