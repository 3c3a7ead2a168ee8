"""Command-line driver: ``starflow <subcommand> [--config PATH] [--out DIR] [--seed N] [--field NAME]``.

Exit codes: 0 ok, 2 configuration error, 3 numerical failure, 4 zero candidates.
Outputs are staged in a scratch directory and moved into place only when a
subcommand completes, so failures leave no partial files behind.
"""
from __future__ import annotations

import argparse
import contextlib
import json
import os
import shutil
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import config as C
from .errors import (AlignmentError, CatalogError, StarflowError, ValidationError,
                     ZeroCandidatesError)
from .fields import make_field
from .flow import attractor_point
from .measures import reference_run, theorem_a_experiment, theorem_b_experiment
from .oseledec import classify_measure, lyapunov_exponents_lpf, lyapunov_exponents_tangent
from .pesin import (PesinParams, estimate_gamma_T, pesin_block_test, quasi_hyperbolic_scan,
                    write_verdicts, Verdict)
from .shadowing import merge_library, read_library, write_library

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_EMPTY = 0, 2, 3, 4
CONFIG_ERRORS = (ValidationError, AlignmentError, CatalogError)


class Stage:
    name = "setup"


def _field(cfg: C.RunConfig):
    spec = dict(cfg.field)
    sing = spec.pop("singularities", None)
    if sing is not None:
        flat = np.atleast_1d(np.asarray(sing, dtype=float))
        spec["singularities"] = flat.reshape(-1, 3).tolist()
    return make_field(spec)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_table(path, rows, columns) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(columns) + "\n")
        for r in rows:
            fh.write(",".join(_fmt(r[c]) for c in columns) + "\n")


@contextlib.contextmanager
def staged(out: Path):
    """Scratch directory inside ``out``; contents are moved into ``out`` on success."""
    out.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".staging-", dir=out))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    for p in sorted(tmp.iterdir()):
        os.replace(p, out / p.name)
    tmp.rmdir()


def _check_writable(out: Path) -> None:
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = tempfile.NamedTemporaryFile(dir=out, prefix=".probe-", delete=True)
        probe.close()
    except OSError as exc:
        raise ValidationError(f"output directory {out} is not writable: {exc}") from exc


def _manifest(tmp: Path, cfg: C.RunConfig, command: str, timings: dict, extra=None) -> None:
    data = {"command": command, "config": cfg.echo(), "seed": cfg.seed,
            "tolerances": {"integrator": cfg["run.tol"], "newton": cfg["shadowing.tol"]},
            "timings": {k: round(v, 6) for k, v in sorted(timings.items())}}
    if extra:
        data.update(extra)
    (tmp / f"manifest_{command}.json").write_text(json.dumps(data, indent=2, default=_json) + "\n")


def _json(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, (np.ndarray, tuple)):
        return list(o)
    if isinstance(o, Path):
        return str(o)
    return str(o)


def _timed(timings, name, fn, *a, **k):
    Stage.name = name
    t0 = time.perf_counter()
    out = fn(*a, **k)
    timings[name] = timings.get(name, 0.0) + time.perf_counter() - t0
    return out


# subcommands

def cmd_exponents(cfg: C.RunConfig) -> int:
    fld = _field(cfg)
    timings = {}
    x = _timed(timings, "burn_in", attractor_point, fld, cfg["run.x0"], cfg["run.burn_in"],
               cfg["run.tol"])
    tan = _timed(timings, "tangent", lyapunov_exponents_tangent, fld, x, cfg["run.total_time"],
                 cfg["run.reorth_dt"], cfg["run.tol"])
    lpf = _timed(timings, "scaled_lpf", lyapunov_exponents_lpf, fld, x, cfg["run.total_time"],
                 cfg["run.step_T"], True, cfg["run.tol"])
    cls = classify_measure(lpf, cfg["run.zero_tol"])
    with staged(cfg.out) as tmp:
        tan.to_csv(tmp / "exponents_tangent.csv", every=10)
        lpf.to_csv(tmp / "exponents_scaled_lpf.csv")
        write_table(tmp / "classification.csv",
                    [{"state": cls.state, "hyperbolic": cls.hyperbolic, "index": cls.index,
                      "saddle": cls.saddle, "excluded_by_domination": cls.excluded_by_domination,
                      "lambda1": lpf.values[0], "lambda2": lpf.values[1], "note": cls.note}],
                    ["state", "hyperbolic", "index", "saddle", "excluded_by_domination",
                     "lambda1", "lambda2", "note"])
        _manifest(tmp, cfg, "exponents", timings)
    print(f"{fld.id}: tangent {tan.values}, scaled-lpf {lpf.values}, {cls.state}, "
          f"index {cls.index}")
    return EXIT_OK


def cmd_find_orbits(cfg: C.RunConfig) -> int:
    fld = _field(cfg)
    ecfg = cfg.experiment()
    timings = {}
    res = _timed(timings, "pipeline", theorem_a_experiment, fld, ecfg)
    lib_path = cfg.out / "orbits.csv"
    existing = read_library(lib_path) if lib_path.exists() else []
    new = [c.record for c in res.candidates if c.status == "ok"]
    merged = merge_library(existing, new)
    with staged(cfg.out) as tmp:
        write_library(merged, tmp / "orbits.csv")
        _manifest(tmp, cfg, "find-orbits", timings, {"added": len(merged) - len(existing)})
    print(f"{len(merged)} orbits in library ({len(merged) - len(existing)} new)")
    return EXIT_OK


def cmd_theorems(cfg: C.RunConfig) -> int:
    fld = _field(cfg)
    ecfg = cfg.experiment()
    timings = {}
    a = _timed(timings, "theorem_a", theorem_a_experiment, fld, ecfg)
    b = _timed(timings, "theorem_b", theorem_b_experiment, fld, ecfg, forward=a)
    for k, v in list(a.timings.items()) + list(b.timings.items()):
        timings[f"stage.{k}"] = timings.get(f"stage.{k}", 0.0) + v
    with staged(cfg.out) as tmp:
        write_table(tmp / "theorem_a.csv", a.rows,
                    ["target", "lT", "period", "d_M", "tail", "orbit_id", "quasi_hyperbolic",
                     "epsilon_achieved"])
        write_table(tmp / "theorem_b.csv", b.rows,
                    ["orbit_id", "target", "lT", "lambda1", "lambda2", "lambda1_p", "lambda2_p",
                     "dev1", "dev2", "long_run1", "long_run2"])
        _manifest(tmp, cfg, "theorems", timings,
                  {"theorem_a": a.extra, "theorem_b": b.extra,
                   "candidates": [(c.cid, c.target, c.start, c.l, c.status) for c in a.candidates]})
    print(f"theorem A: {len(a.rows)} rows, spearman {a.extra.get('spearman')}; "
          f"theorem B: {len(b.rows)} rows, reversal error {b.extra['reverse_max_error']:.3g}")
    return EXIT_OK


def cmd_verify_shadowing(cfg: C.RunConfig) -> int:
    fld = _field(cfg)
    ecfg = cfg.experiment()
    timings = {}
    res = _timed(timings, "pipeline", theorem_a_experiment, fld, ecfg)
    ok = [c for c in res.candidates if c.status == "ok"]
    summary = []
    with staged(cfg.out) as tmp:
        for c in ok:
            rep = c.shadowing
            c_name = f"shadowing_{c.cid:03d}.csv"
            rep.to_csv(tmp / c_name)
            summary.append({"candidate": c.cid, "orbit_id": c.orbit_id, "lT": c.lT,
                            "epsilon": rep.epsilon, "epsilon_achieved": rep.epsilon_achieved,
                            "theta_min": rep.derivative_bounds[0],
                            "theta_max": rep.derivative_bounds[1],
                            "item1": rep.items["1"], "item2": rep.items["2"],
                            "item3": rep.items["3"], "quasi_hyperbolic": rep.quasi_hyperbolic,
                            "closure_residual": c.orbit.closure_residual, "file": c_name})
        write_table(tmp / "shadowing_summary.csv", summary,
                    ["candidate", "orbit_id", "lT", "epsilon", "epsilon_achieved", "theta_min",
                     "theta_max", "item1", "item2", "item3", "quasi_hyperbolic",
                     "closure_residual", "file"])
        _manifest(tmp, cfg, "verify-shadowing", timings)
    print(f"{len(summary)} shadowing reports")
    return EXIT_OK


def cmd_pesin_scan(cfg: C.RunConfig) -> int:
    fld = _field(cfg)
    ecfg = cfg.experiment()
    timings = {}
    ref = _timed(timings, "reference", reference_run, fld, ecfg)
    split = ref.splitting
    lam = ref.report.values
    n_max = int(cfg["pesin.n_max"])
    T = ecfg.step_T
    chi = float(min(abs(lam[0]), abs(lam[1])))
    eps = float(cfg["pesin.epsilon"])
    params = PesinParams.from_exponents(chi, eps, T, 1, float(cfg["pesin.k"]))
    avail = len(split.indices) - 1 - n_max
    if avail < 1:
        raise ValidationError("reference run too short for pesin.n_max")
    pos = np.unique(np.linspace(0, avail - 1, int(cfg["pesin.points"])).round().astype(int))
    Stage.name = "pesin_block"
    verdicts = [pesin_block_test(fld, int(split.indices[p]), split, params, n_max) for p in pos]
    gamma = _timed(timings, "gamma_T", estimate_gamma_T, split, lam, eps, 0.1, n_max,
                   split.indices[pos])
    ivs = _timed(timings, "quasi_hyperbolic", quasi_hyperbolic_scan, split, float(cfg["pesin.eta"]), T)
    for a, b in ivs:
        verdicts.append(Verdict("quasi_hyperbolic", a, f"eta={cfg['pesin.eta']!r};T={T!r}", True,
                                b, float((b - a) * T)))
    with staged(cfg.out) as tmp:
        write_verdicts(verdicts, tmp / "pesin_verdicts.csv")
        write_table(tmp / "gamma_T.csv",
                    [{"point_index": int(i), "N": n} for i, n in zip(gamma.indices, gamma.verdicts)],
                    ["point_index", "N"])
        _manifest(tmp, cfg, "pesin-scan", timings,
                  {"gamma_fraction": gamma.fraction, "gamma_N90": gamma.N90,
                   "exponents": list(map(float, lam))})
    passed = sum(v.passed for v in verdicts if v.op == "pesin_block")
    print(f"pesin blocks: {passed}/{len(pos)} pass; gamma fraction {gamma.fraction:.3f}; "
          f"{len(ivs)} quasi-hyperbolic intervals")
    return EXIT_OK


COMMANDS = {
    "exponents": cmd_exponents,
    "find-orbits": cmd_find_orbits,
    "theorems": cmd_theorems,
    "verify-shadowing": cmd_verify_shadowing,
    "pesin-scan": cmd_pesin_scan,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="starflow", description="Exponents, periodic orbits and approximation experiments "
        "for 3-dimensional flows.", epilog=C.defaults_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", metavar="PATH", help="key = value configuration file")
    p.add_argument("--out", metavar="DIR", help="output directory [default starflow-out]")
    p.add_argument("--seed", metavar="N", type=int, help="random seed [default 0]")
    p.add_argument("--field", metavar="NAME", help="catalog field LIN, CYC or LOR [default LOR]")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    Stage.name = "config"
    try:
        cfg = C.build_config(args.config, args.out, args.seed, args.field)
        _check_writable(cfg.out)
        _field(cfg)
        Stage.name = args.command
        return COMMANDS[args.command](cfg)
    except CONFIG_ERRORS as exc:
        print(f"starflow: configuration error in stage {Stage.name}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ZeroCandidatesError as exc:
        print(f"starflow: zero candidates in stage {Stage.name}: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except StarflowError as exc:
        print(f"starflow: numerical failure in stage {Stage.name}: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
