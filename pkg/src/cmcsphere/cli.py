"""Batch front end.

Every subcommand reads a flat JSON config (``--config``) whose keys may be
overridden with ``--set key=value`` (values parsed as JSON when possible).
Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 IO error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import diagnostics as dg
from . import energy as en
from . import fields, io
from .flow import FlowConfig, descend, energy_trace
from .mesh import MeshCapacityError, build_icosphere
from .metric import OutsideNeighborhoodError, metric_from_spec
from .minmax import (
    DegreeChangeError,
    MinMaxConfig,
    extract_critical_point,
    latitude_sweepout,
    mountain_pass,
    omega_over_h_scan,
)

log = logging.getLogger("cmcsphere")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

DEFAULTS = {
    "level": 4,
    "metric": "round",
    "metric_phi_linear": None,
    "neighborhood_radius": 0.1,
    "H": 0.0,
    "H_grid": None,
    "eps": 0.05,
    "eps_schedule": None,
    "slices": 64,
    "seed": 0,
    "output_dir": "out",
    "outer_iters": 60,
    "descent_steps": 1,
    "minmax_grad_tol": 1e-4,
    "flow_grad_tol": 1e-6,
    "flow_max_iter": 500,
    "flow_step_rule": "armijo",
    "flow_preconditioner": "h2",
    "max_displacement": 0.2,
    "beta_collapse": 1e-3,
    "eta0": 0.3,
    "scan_radius": 0.02,
    "k_eigs": 10,
    "null_tol": 0.1,
    "init": "equator",
    "map": None,
    "tracked_volume": None,
    "mode": "stereographic",
    "auto_rotate": True,
    "threads": None,
}

REQUIRED = {
    "sweepout": (),
    "minmax": (),
    "hsweep": ("H_grid",),
    "flow": (),
    "diagnose": ("map",),
    "export": ("map",),
}


class ConfigError(ValueError):
    pass


class NumericalFailure(RuntimeError):
    pass


# -- configuration ---------------------------------------------------------

def load_config(path, overrides, command) -> dict:
    cfg = dict(DEFAULTS)
    if path is not None:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigError("config file must hold a flat JSON object")
        cfg.update(_checked(user))
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        k, v = item.split("=", 1)
        try:
            val = json.loads(v)
        except json.JSONDecodeError:
            val = v
        cfg.update(_checked({k: val}))
    for key in REQUIRED[command]:
        if cfg.get(key) is None:
            raise ConfigError(f"missing required config key {key!r} for '{command}'")
    _validate(cfg)
    return cfg


def _checked(d):
    unknown = sorted(set(d) - set(DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown config keys {unknown}")
    return d


def _validate(cfg):
    try:
        if not (isinstance(cfg["level"], int) and 0 <= cfg["level"]):
            raise ConfigError("level must be a nonnegative integer")
        if cfg["eps"] < 0:
            raise ConfigError("eps must be nonnegative")
        sched = cfg["eps_schedule"]
        if sched is not None:
            s = [float(x) for x in sched]
            if any(b >= a for a, b in zip(s[:-1], s[1:])) or any(x < 0 for x in s) or any(x == 0 for x in s[:-1]):
                raise ConfigError("eps_schedule must be strictly decreasing and positive (0 allowed last)")
        if cfg["H_grid"] is not None:
            g = [float(x) for x in cfg["H_grid"]]
            if any(h <= 0 for h in g) or any(b <= a for a, b in zip(g[:-1], g[1:])):
                raise ConfigError("H_grid must be positive and strictly increasing")
        if cfg["H"] < 0:
            raise ConfigError("H must be nonnegative")
        if cfg["slices"] < 3:
            raise ConfigError("slices must be at least 3")
        if cfg["mode"] not in ("stereographic", "slice"):
            raise ConfigError("mode must be 'stereographic' or 'slice'")
    except TypeError as exc:
        raise ConfigError(f"bad config value: {exc}") from None


def _metric(cfg):
    try:
        return metric_from_spec(cfg)
    except KeyError as exc:
        raise ConfigError(f"bad metric specification: {exc}") from None


def _mesh(cfg):
    try:
        return build_icosphere(cfg["level"])
    except MeshCapacityError as exc:
        raise ConfigError(str(exc)) from None


def _flow_cfg(cfg) -> FlowConfig:
    try:
        return FlowConfig(step_rule=cfg["flow_step_rule"], preconditioner=cfg["flow_preconditioner"],
                          grad_tol=float(cfg["flow_grad_tol"]), max_iter=int(cfg["flow_max_iter"]),
                          max_displacement=float(cfg["max_displacement"]),
                          beta_collapse=float(cfg["beta_collapse"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _minmax_cfg(cfg) -> MinMaxConfig:
    try:
        return MinMaxConfig(outer_iters=int(cfg["outer_iters"]), descent_steps=int(cfg["descent_steps"]),
                            grad_tol=float(cfg["minmax_grad_tol"]), flow=_flow_cfg(cfg))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _outdir(cfg) -> Path:
    d = Path(cfg["output_dir"])
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_metadata(out: Path, command: str, cfg: dict, started: float):
    io.write_json(out / f"{command}.meta.json", {
        "command": command, "config": cfg, "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime(started)),
        "wall_seconds": round(time.time() - started, 3)})


def _record_json(rec) -> dict:
    d = rec.as_dict()
    d["trace_rows"] = len(rec.trace)
    return d


# -- subcommands -----------------------------------------------------------

def cmd_sweepout(cfg) -> int:
    mesh, metric = _mesh(cfg), _metric(cfg)
    sw = latitude_sweepout(mesh, metric, int(cfg["slices"]))
    H, eps = float(cfg["H"]), float(cfg["eps"])
    out = _outdir(cfg)
    De = sw.d_eps(eps)
    rows = []
    n = len(sw)
    for k, u in enumerate(sw.slices):
        rows.append({"t": k / (n - 1), "D": en.dirichlet(u), "D_eps": De[k], "V": sw.tracked_volumes[k],
                     "E": De[k] + H * sw.tracked_volumes[k]})
    io.write_csv(out / "sweepout_profile.csv", rows, ["t", "D", "D_eps", "V", "E"])
    ck = out / "sweepout"
    ck.mkdir(exist_ok=True)
    for k, u in enumerate(sw.slices):
        io.save_map(ck / f"slice_{k:03d}.ply", u, {"tracked_volume": float(sw.tracked_volumes[k])})
    io.write_json(ck / "volumes.json", {"tracked_volumes": sw.tracked_volumes, "degree": sw.degree})
    return EXIT_OK


def _save_critical(out: Path, stem: str, rec):
    io.save_map(out / f"{stem}.ply", rec.map, {"tracked_volume": rec.energy.tracked_volume, "H": rec.H,
                                                "eps": rec.eps})
    io.write_json(out / f"{stem}.json", _record_json(rec))
    (out / f"{stem}_trace.csv").write_text(energy_trace(rec))


def revalidate_record(record_path, map_path, tol: float = 1e-9):
    """Recompute residuals of a stored critical-point record; returns (ok, differences)."""
    rec = io.read_json(record_path)
    u, _ = io.load_map(map_path)
    H = float(rec["H"])
    diffs = {
        "cmc_residual": abs(en.cmc_residual(u, H)[1] - rec["cmc_residual"]),
        "hopf_residual": abs(en.hopf_residual(u)[0] - rec["hopf_residual"]),
        "energy_d_eps": abs(en.perturbed_energy(u, float(rec["eps"])) - rec["energy_d_eps"]),
    }
    return all(v <= tol for v in diffs.values()), diffs


def cmd_minmax(cfg) -> int:
    mesh, metric = _mesh(cfg), _metric(cfg)
    H = float(cfg["H"])
    schedule = cfg["eps_schedule"] or [cfg["eps"]]
    mm_cfg = _minmax_cfg(cfg)
    out = _outdir(cfg)
    sw = latitude_sweepout(mesh, metric, int(cfg["slices"]))
    chain = []
    for i, eps in enumerate(float(e) for e in schedule):
        sw, rec = mountain_pass(sw, H, eps, mm_cfg)
        crit = extract_critical_point(sw, rec, _flow_cfg(cfg))
        stem = "critical" if len(schedule) == 1 else f"critical_{i:02d}"
        _save_critical(out, stem, crit)
        io.write_json(out / ("minmax.json" if len(schedule) == 1 else f"minmax_{i:02d}.json"), rec.as_dict())
        chain.append({"eps": eps, "omega": rec.omega, "argmax": rec.argmax, "D_eps": crit.energy.d_eps,
                      "D": crit.energy.dirichlet, "status": crit.status, "mountain_pass_status": rec.status})
    if len(schedule) > 1:
        io.write_json(out / "minmax_chain.json", {"H": H, "chain": chain})
    return EXIT_OK


def cmd_hsweep(cfg) -> int:
    mesh, metric = _mesh(cfg), _metric(cfg)
    sw = latitude_sweepout(mesh, metric, int(cfg["slices"]))
    rows = omega_over_h_scan(cfg["H_grid"], float(cfg["eps"]), sw, _minmax_cfg(cfg))
    out = _outdir(cfg)
    io.write_csv(out / "hsweep.csv", rows, ["H", "omega", "omega_over_H", "neg_deriv"])
    return EXIT_OK


def _initial_map(cfg, mesh, metric):
    if cfg["map"] is not None:
        u, meta = io.load_map(cfg["map"], metric)
        V = cfg["tracked_volume"] if cfg["tracked_volume"] is not None else meta.get("tracked_volume", 0.0)
        return u, float(V)
    spec = str(cfg["init"])
    name, _, arg = spec.partition(":")
    try:
        if name == "equator":
            return fields.equatorial_map(mesh, metric), float(cfg["tracked_volume"] or 0.0)
        if name == "constant":
            return fields.constant_map(mesh, metric=metric), 0.0
        if name == "latitude":
            return fields.latitude_map(mesh, float(arg), metric), float(cfg["tracked_volume"] or 0.0)
        if name == "geodesic":
            return fields.geodesic_sphere(mesh, float(arg), metric), float(cfg["tracked_volume"] or 0.0)
        if name == "random":
            rng = np.random.default_rng(int(cfg["seed"]))
            return fields.random_map(mesh, rng, metric=metric), float(cfg["tracked_volume"] or 0.0)
    except ValueError as exc:
        raise ConfigError(f"bad init {spec!r}: {exc}") from None
    raise ConfigError(f"unknown init {spec!r}")


def cmd_flow(cfg) -> int:
    metric = _metric(cfg)
    mesh = _mesh(cfg) if cfg["map"] is None else None
    u0, V0 = _initial_map(cfg, mesh, metric)
    rec = descend(u0, V0, float(cfg["H"]), float(cfg["eps"]), _flow_cfg(cfg))
    _save_critical(_outdir(cfg), "flow", rec)
    return EXIT_OK


def diagnose_report(u, H, eps, cfg) -> dict:
    r, rn = en.cmc_residual(u, H)
    hopf, degenerate = en.hopf_residual(u)
    De = en.perturbed_energy(u, eps)
    rep = {
        "H": H, "eps": eps, "dirichlet": en.dirichlet(u), "d_eps": De,
        "cmc_residual": rn, "hopf_residual": hopf, "hopf_degenerate": degenerate,
        "gradient_l2": en.gradient(u, H, eps).l2_norm,
        "H_star": en.residual_minimizing_H(u),
        "is_constant": u.is_constant,
    }
    scan = dg.concentration_scan(u, min(eps, float(cfg["scan_radius"])), float(cfg["scan_radius"]),
                                 float(cfg["eta0"]))
    rep["concentration"] = scan.as_dict()
    k = int(cfg["k_eigs"])
    tol = float(cfg["null_tol"])
    if u.is_constant:
        rep["index_bh"] = {"form": "bh", "index": 0, "nullity": 0, "eigenvalues": []}
    else:
        rep["index_bh"] = dg.morse_index(u, H, eps, k, "bh", tol).as_dict()
    if u.metric.is_round:
        rep["index_hessian"] = dg.morse_index(u, H, eps, k, "hessian", tol).as_dict()
        ok, margin, ratio = dg.energy_bound_check(u, H)
        rep["energy_bound"] = {"passed": ok, "margin": margin, "ratio": ratio}
    return rep


def cmd_diagnose(cfg) -> int:
    metric = _metric(cfg)
    u, meta = io.load_map(cfg["map"], metric)
    H = float(meta.get("H", cfg["H"]))
    eps = float(meta.get("eps", cfg["eps"]))
    out = _outdir(cfg)
    io.write_json(out / "diagnose.json", diagnose_report(u, H, eps, cfg))
    return EXIT_OK


def stereographic_r3(values, auto_rotate: bool = True, tol: float = 1e-6):
    """Project from ``-e4``: ``y -> (y1, y2, y3) / (1 + y4)``; rotate away from the pole if needed."""
    v = np.asarray(values, float)
    if np.min(1.0 + v[:, 3]) < tol:
        if not auto_rotate:
            raise NumericalFailure("map passes through the projection pole -e4 and auto_rotate is off")
        cands = np.vstack([np.eye(4), -np.eye(4)])
        score = [np.min(np.linalg.norm(v - c, axis=1)) for c in cands]
        q = cands[int(np.argmax(score))]
        R = _rotation_taking(q, -np.eye(4)[3])
        v = v @ R.T
    return v[:, :3] / (1.0 + v[:, 3:4])


def _rotation_taking(a, b):
    """Rotation in SO(4) sending unit ``a`` to unit ``b``: two Householder reflections."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    if np.allclose(a, b):
        return np.eye(4)

    def refl(n):
        n = n / np.linalg.norm(n)
        return np.eye(4) - 2.0 * np.outer(n, n)

    e = np.eye(4)[int(np.argmin(np.abs(b)))]
    c = e - (e @ b) * b
    return refl(c) @ refl(a - b)


def cmd_export(cfg) -> int:
    metric = _metric(cfg)
    u, _ = io.load_map(cfg["map"], metric)
    out = _outdir(cfg)
    if u.is_constant:
        p = stereographic_r3(u.values[:1], bool(cfg["auto_rotate"])) if cfg["mode"] == "stereographic" \
            else u.values[:1, :3]
        io.write_ply(out / "export.ply", {"x": p[:, 0], "y": p[:, 1], "z": p[:, 2]})
        return EXIT_OK
    if cfg["mode"] == "stereographic":
        p = stereographic_r3(u.values, bool(cfg["auto_rotate"]))
    else:
        p = u.values[:, :3]
    io.write_ply(out / "export.ply", {"x": p[:, 0], "y": p[:, 1], "z": p[:, 2]}, u.mesh.faces)
    return EXIT_OK


COMMANDS = {
    "sweepout": cmd_sweepout,
    "minmax": cmd_minmax,
    "hsweep": cmd_hsweep,
    "flow": cmd_flow,
    "diagnose": cmd_diagnose,
    "export": cmd_export,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cmcsphere", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="flat JSON configuration file")
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
        if name in ("diagnose", "export", "flow"):
            s.add_argument("map", nargs="?", help="map PLY file (overrides the 'map' key)")
        s.add_argument("-o", "--output-dir", help="output directory (overrides 'output_dir')")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = time.time()
    try:
        overrides = list(args.set)
        if getattr(args, "map", None):
            overrides.append(f"map={json.dumps(args.map)}")
        if args.output_dir:
            overrides.append(f"output_dir={json.dumps(args.output_dir)}")
        cfg = load_config(args.config, overrides, args.command)
        if cfg["threads"]:
            os.environ.setdefault("OMP_NUM_THREADS", str(cfg["threads"]))
        code = COMMANDS[args.command](cfg)
        _write_metadata(Path(cfg["output_dir"]), args.command, cfg, started)
        return code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (io.PlyParseError, OSError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericalFailure, DegreeChangeError, en.LocalityError, OutsideNeighborhoodError,
            dg.EigenSolveError, dg.NoConcentrationError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
