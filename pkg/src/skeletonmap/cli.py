"""Command-line front end: build, eval, certify, experiment, export-slice.

Exit codes: 0 success/pass, 1 suite failure, 2 configuration error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import io
import json
import sys
import time

import numpy as np

from . import certify as C
from .assembly import (Construction, build_construction, descend, face_id, grid_level,
                       make_padded_spec, pad_map_f)
from .errors import ConstructionError
from .instance import make_instance
from .numerics import fd_jacobian, singular_values

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3

DEFAULTS = {
    "m": 3, "k": 4, "n": 2, "ball_radius": 0.15, "s": 0.05, "mode": "desk", "seed": 7,
    "depth": 3, "samples": None, "tol": 1e-6, "fd_step": 1e-6, "threads": 1, "out": None,
    "instance": None,
}
COMMAND_KEYS = {
    "build": set(),
    "eval": {"input", "jacobian", "padded", "ell", "r"},
    "certify": {"suite"},
    "experiment": {"kind", "grid_res", "eps", "center_address"},
    "export-slice": {"axes", "resolution", "extent"},
}
SUITES = ("boundary", "gluing", "skeleton", "rank", "selfsimilarity", "convergence", "decay",
          "decay_pilot", "linking")
NEGATIVE_SUITES = ("neg_rank", "neg_selfsim", "neg_gluing")


class ConfigError(Exception):
    pass


def _emit_error(kind, exc, code):
    print(json.dumps({"error": kind, "type": type(exc).__name__, "message": str(exc)}),
          file=sys.stdout)
    return code


def _write(text, path):
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", newline="") as fh:
            fh.write(text)


def _dump(doc):
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def _metadata(t0):
    return {"timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
            "wall_time": time.perf_counter() - t0}


# ---------------------------------------------------------------------------
# Configuration

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with option values")
    common.add_argument("--instance", help="instance JSON written by 'build'")
    common.add_argument("--m", type=int)
    common.add_argument("--k", type=int)
    common.add_argument("--n", type=int)
    common.add_argument("--ball-radius", dest="ball_radius", type=float)
    common.add_argument("--s", type=float)
    common.add_argument("--mode", choices=["faithful", "desk", "toy"])
    common.add_argument("--seed", type=int)
    common.add_argument("--depth", type=int)
    common.add_argument("--samples", type=int)
    common.add_argument("--tol", type=float)
    common.add_argument("--fd-step", dest="fd_step", type=float)
    common.add_argument("--threads", type=int)
    common.add_argument("--out")

    p = argparse.ArgumentParser(prog="skeletonmap", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("build", parents=[common], help="validate parameters and write an instance")
    pe = sub.add_parser("eval", parents=[common], help="evaluate F (or the padded f) on CSV points")
    pe.add_argument("--input", help="CSV of points, one per row")
    pe.add_argument("--jacobian", action="store_true", default=None)
    pe.add_argument("--padded", action="store_true", default=None)
    pe.add_argument("--ell", type=int)
    pe.add_argument("--r", type=int)
    pc = sub.add_parser("certify", parents=[common], help="run property suites")
    pc.add_argument("--suite", help="'all', a suite name, or a comma-separated list")
    px = sub.add_parser("experiment", parents=[common], help="sard | approx")
    px.add_argument("kind", choices=["sard", "approx"])
    px.add_argument("--grid-res", dest="grid_res", type=int, nargs="+")
    px.add_argument("--eps", type=float)
    px.add_argument("--center-address", dest="center_address", type=int, nargs="+")
    ps = sub.add_parser("export-slice", parents=[common], help="CSV of F on a 2-plane slice")
    ps.add_argument("--axes", type=int, nargs=2)
    ps.add_argument("--resolution", type=int)
    ps.add_argument("--extent", type=float)
    return p


CMD_DEFAULTS = {
    "eval": {"input": None, "jacobian": False, "padded": False, "ell": 5, "r": 4},
    "certify": {"suite": "all"},
    "experiment": {"grid_res": [9, 13], "eps": None, "center_address": [0], "depth": 4},
    "export-slice": {"axes": [0, 1], "resolution": 64, "extent": 1.0},
}


def resolve_config(args):
    """Defaults < config file < command-line flags.  Unknown config keys are rejected."""
    cmd = args.command
    allowed = set(DEFAULTS) | COMMAND_KEYS[cmd]
    cfg = dict(DEFAULTS)
    cfg.update(CMD_DEFAULTS.get(cmd, {}))
    if args.config:
        try:
            with open(args.config) as fh:
                file_cfg = json.load(fh)
        except OSError:
            raise
        except ValueError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = sorted(set(file_cfg) - allowed)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        cfg.update(file_cfg)
    for key in allowed:
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    if cmd == "experiment":
        cfg["kind"] = args.kind
    cfg["command"] = cmd
    return cfg


def load_construction(cfg) -> Construction:
    if cfg.get("instance"):
        with open(cfg["instance"]) as fh:
            text = fh.read()
        try:
            return Construction.from_json(text)
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"malformed instance file: {exc}") from exc
    params = make_instance(cfg["m"], cfg["k"], cfg["n"], r_b=cfg["ball_radius"], s=cfg["s"],
                           mode=cfg["mode"], seed=cfg["seed"])
    return build_construction(params)


# ---------------------------------------------------------------------------
# Commands

def cmd_build(cfg):
    con = load_construction(cfg)
    doc = con.to_dict()
    doc["config"] = cfg
    _write(_dump(doc), cfg["out"])
    return EXIT_OK


def _is_number(text):
    try:
        float(text)
    except ValueError:
        return False
    return True


def _read_points(path, width_options):
    text = sys.stdin.read() if path in (None, "-") else open(path).read()
    rows = []
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row or all(not c.strip() for c in row) or row[0].lstrip().startswith("#"):
            continue
        try:
            rows.append([float(c) for c in row])
        except ValueError:
            if lineno == 1 and not any(_is_number(c) for c in row):
                continue  # header line
            raise OSError(f"line {lineno}: non-numeric entry") from None
    if rows:
        widths = {len(r) for r in rows}
        if len(widths) != 1 or widths.pop() not in width_options:
            raise OSError(f"rows must all have one of {sorted(width_options)} columns")
    return np.array(rows, dtype=float)


def cmd_eval(cfg):
    con = load_construction(cfg)
    depth = cfg["depth"]
    padded = bool(cfg["padded"])
    spec = make_padded_spec(con, cfg["ell"], cfg["r"], depth=depth) if padded else None
    width = spec.ell if padded else con.k1
    X = _read_points(cfg["input"], {width})
    if len(X) == 0:
        _write("", cfg["out"])
        return EXIT_OK
    if padded:
        values = pad_map_f(con, X, spec)
        ev = descend(con, spec.Phi_inverse(X[:, :con.k1]), depth)
        fun = lambda Q: pad_map_f(con, Q, spec)
    else:
        ev = descend(con, X, depth)
        values = ev.values
        fun = lambda Q: descend(con, Q, depth).values
    columns = ["x", "value", "depth_used", "address", "error_bound"]
    if cfg["jacobian"]:
        J = fd_jacobian(fun, X, cfg["fd_step"])
        sv = singular_values(J)
        columns += ["jacobian", "singular_values"]
    lines = [json.dumps({"header": {"columns": columns, "config": cfg}}, sort_keys=True)]
    for j in range(len(X)):
        d = int(ev.depth_used[j])
        rec = {"x": X[j].tolist(), "value": values[j].tolist(), "depth_used": d,
               "address": ev.addresses[j, :d].tolist(), "error_bound": float(ev.error_bound[j])}
        if cfg["jacobian"]:
            rec["jacobian"] = J[j].tolist()
            rec["singular_values"] = sv[j].tolist()
        lines.append(json.dumps(rec, sort_keys=True))
    _write("\n".join(lines) + "\n", cfg["out"])
    return EXIT_OK


def _samples(cfg, default):
    return cfg["samples"] if cfg["samples"] is not None else default


def run_suite(name, con, cfg):
    seed, depth, tol, h = cfg["seed"], cfg["depth"], cfg["tol"], cfg["fd_step"]
    if name == "boundary":
        return C.cert_boundary(con, _samples(cfg, 10_000), seed)
    if name == "gluing":
        return C.cert_gluing(con, _samples(cfg, 10_000), seed)
    if name == "skeleton":
        return C.cert_skeleton(con, _samples(cfg, 10_000), depth, seed)
    if name == "rank":
        return C.cert_rank_bound(con, depth, _samples(cfg, 10_000), tol, h, seed)
    if name == "selfsimilarity":
        return C.cert_selfsimilarity(con, depth, _samples(cfg, 1000), seed)
    if name == "convergence":
        return C.cert_convergence(con, _samples(cfg, 1000), seed=seed)
    if name == "decay":
        return C.cert_derivative_decay(con, depth, _samples(cfg, 200), h, seed)
    if name == "decay_pilot":
        return C.cert_derivative_decay(con, 2, _samples(cfg, 200), h, seed, pilot=True)
    if name == "linking":
        return C.cert_linking(con)
    if name == "neg_rank":
        return C.cert_rank_negative(con, tol, h, seed)
    if name == "neg_selfsim":
        return C.cert_selfsimilarity(con, depth, _samples(cfg, 1000), seed, wrong_cell=True)
    if name == "neg_gluing":
        return C.cert_gluing(con, _samples(cfg, 10_000), seed, tau_offset=1e-3)
    raise ConfigError(f"unknown suite {name!r}")


def parse_suites(spec):
    names = []
    for part in str(spec).split(","):
        part = part.strip()
        if part == "all":
            names.extend(SUITES)
        elif part in SUITES or part in NEGATIVE_SUITES:
            names.append(part)
        else:
            raise ConfigError(f"unknown suite {part!r}; choose from all, "
                              + ", ".join(SUITES + NEGATIVE_SUITES))
    return list(dict.fromkeys(names))


def cmd_certify(cfg):
    t0 = time.perf_counter()
    names = parse_suites(cfg["suite"])
    con = load_construction(cfg)
    reports, runtimes = [], {}
    for name in names:
        rep = run_suite(name, con, cfg)
        reports.append(rep.to_dict(include_runtime=False))
        runtimes[name] = rep.runtime
    ok = all(r["pass"] for r in reports)
    meta = _metadata(t0)
    meta["suite_runtime"] = runtimes
    doc = {"config": cfg, "instance": con.params.to_dict(), "suites": reports, "pass": ok,
           "metadata": meta}
    _write(_dump(doc), cfg["out"])
    return EXIT_OK if ok else EXIT_FAIL


def cmd_experiment(cfg):
    t0 = time.perf_counter()
    if cfg["kind"] == "sard":
        con = load_construction(cfg)
        rep = C.experiment_sard_breach(con, tuple(cfg["center_address"]), eps=cfg["eps"],
                                       grid_res=tuple(cfg["grid_res"]), depth=cfg["depth"],
                                       tol=cfg["tol"], seed=cfg["seed"])
    else:
        rep = C.experiment_local_approx(n_samples=_samples(cfg, 1000), seed=cfg["seed"])
    meta = _metadata(t0)
    meta["runtime"] = rep.pop("runtime")
    doc = {"config": cfg, "report": rep, "pass": rep["pass"], "metadata": meta}
    _write(_dump(doc), cfg["out"])
    return EXIT_OK if rep["pass"] else EXIT_FAIL


def cmd_export_slice(cfg):
    con = load_construction(cfg)
    res = int(cfg["resolution"])
    i, j = (int(a) for a in cfg["axes"])
    if res <= 0:
        raise ConfigError("resolution must be positive")
    if i == j or not (0 <= i < con.k1 and 0 <= j < con.k1):
        raise ConfigError(f"axes must be two distinct indices in [0, {con.k1})")
    ext = float(cfg["extent"])
    u = np.linspace(-ext, ext, res)
    U, V = np.meshgrid(u, u, indexing="ij")
    X = np.zeros((res * res, con.k1))
    X[:, i], X[:, j] = U.ravel(), V.ravel()
    inside = np.linalg.norm(X, axis=1) <= 1.0
    X = X[inside]
    ev = descend(con, X, cfg["depth"])
    faces = face_id(ev.values, con.params.n, grid_level(ev.depth_used))
    out = io.StringIO()
    out.write("# config: " + json.dumps(cfg, sort_keys=True) + "\n")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["u", "v"] + [f"x{a}" for a in range(con.k1)] + [f"y{a}" for a in range(con.m1)]
               + ["depth_used", "error_bound", "face_id"])
    for x, y, d, e, f in zip(X, ev.values, ev.depth_used, ev.error_bound, faces):
        w.writerow([repr(float(x[i])), repr(float(x[j]))] + [repr(float(a)) for a in x]
                   + [repr(float(a)) for a in y] + [int(d), repr(float(e)),
                                                     f if e == 0 else "truncated"])
    _write(out.getvalue(), cfg["out"])
    return EXIT_OK


COMMANDS = {"build": cmd_build, "eval": cmd_eval, "certify": cmd_certify,
            "experiment": cmd_experiment, "export-slice": cmd_export_slice}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        cfg = resolve_config(args)
        if cfg["threads"] is not None and cfg["threads"] < 1:
            raise ConfigError("--threads must be at least 1")
        return COMMANDS[args.command](cfg)
    except (ConfigError, ConstructionError, ValueError) as exc:
        return _emit_error("config", exc, EXIT_CONFIG)
    except OSError as exc:
        return _emit_error("io", exc, EXIT_IO)


if __name__ == "__main__":
    sys.exit(main())
