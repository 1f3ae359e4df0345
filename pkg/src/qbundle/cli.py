"""Command line front end.

Subcommands: ``fkmm``, ``wz``, ``cs``, ``scan``, ``converge``, ``selftest``,
``mesh-dump`` and ``map-dump``.  Settings come from an optional flat
``key = value`` config file (``--config``) overridden by flags.

Exit codes: 0 accepted, 2 inconclusive, 1 error (error JSON on stderr).
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import bloch
from . import eqmap as eq
from . import invariants as inv
from . import mesh as ms
from .errors import GapError, GaugeSmoothnessError, InvalidInputError, QBundleError

SCHEMA_VERSION = inv.SCHEMA_VERSION
INVARIANTS = ("fkmm", "wz", "cs")
TOLERANCES = {
    "gap_tol": 1e-2,  # minimal direct gap for model frames
    "converge_tol": 1e-2,  # half-integer window of the extrapolated value
    "refine": 3.0,  # mesh doublings allowed when a frame is not smooth
    "layers": 0.0,  # WZ contraction layers (0: automatic)
    "relax_sweeps": 20.0,  # gauge relaxation sweeps after transport
}
MANIFOLDS = {
    "t2": "T2", "t3": "T3", "s2": "S2", "s3": "S3", "s3_plus": "S3_PLUS", "s3plus": "S3_PLUS", "disk": "DISK",
}


class UsageError(QBundleError):
    code = "usage"


@dataclass
class RunConfig:
    command: str
    manifold_tag: str | None = None
    mesh_N: int | None = None
    model: str | None = None
    synthetic: str | None = None
    params: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=lambda: dict(TOLERANCES))
    json_path: str | None = None
    csv_path: str | None = None
    levels: list = field(default_factory=list)
    vary: tuple | None = None
    invariant: str | None = None
    threads: int = 1

    def validate(self):
        needs_input = self.command in ("fkmm", "wz", "cs", "scan", "converge", "map-dump")
        if needs_input and (self.model is None) == (self.synthetic is None):
            raise UsageError("exactly one of --model or --synthetic is required")
        if self.command == "mesh-dump" and self.manifold_tag is None:
            raise UsageError("mesh-dump needs --manifold")
        if self.mesh_N is not None and (self.mesh_N <= 0 or self.mesh_N % 2):
            raise UsageError("--mesh must be a positive even integer", mesh=self.mesh_N)
        if self.command == "scan":
            if self.vary is None:
                raise UsageError("scan needs --vary param=start:stop:step")
            if not self.vary[3] > 0:
                raise UsageError("scan step must be positive", step=self.vary[3])
        if self.command == "converge" and len(self.levels) < 3:
            raise UsageError("converge needs --levels with at least three mesh sizes")
        if self.invariant is not None and self.invariant not in INVARIANTS:
            raise UsageError("unknown invariant", invariant=self.invariant, known=list(INVARIANTS))
        return self


# ------------------------------------------------------------------ parsing

def parse_params(text):
    """``"a=1,b=2.5"`` -> ``{"a": 1.0, "b": 2.5}``."""
    out = {}
    if not text:
        return out
    for item in str(text).split(","):
        item = item.strip()
        if not item:
            continue
        if "=" not in item:
            raise UsageError("parameters must look like name=value", item=item)
        key, val = item.split("=", 1)
        try:
            out[key.strip()] = float(val)
        except ValueError:
            raise UsageError("parameter value is not a number", item=item) from None
    return out


def parse_vary(text):
    """``"lv=0:0.6:0.01"`` -> ``("lv", 0.0, 0.6, 0.01)``."""
    try:
        name, rng = text.split("=", 1)
        start, stop, step = (float(x) for x in rng.split(":"))
    except ValueError:
        raise UsageError("--vary must look like param=start:stop:step", value=text) from None
    return name.strip(), start, stop, step


def scan_values(start, stop, step):
    """Inclusive arithmetic grid; empty when ``stop < start``."""
    if stop < start:
        return []
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    return [start + i * step for i in range(n)]


def parse_levels(text):
    try:
        return [int(x) for x in str(text).replace(" ", "").split(",") if x]
    except ValueError:
        raise UsageError("--levels must be a comma separated list of integers", value=text) from None


def read_config_file(path):
    """Flat ``key = value`` (or ``key: value``) lines; ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for num, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            sep = "=" if "=" in line else (":" if ":" in line else None)
            if sep is None:
                raise UsageError("config line is not key = value", line=num)
            key, val = line.split(sep, 1)
            out[key.strip().lower().replace("-", "_")] = val.strip()
    return out


def _manifold(text):
    key = str(text).strip().lower()
    if key not in MANIFOLDS:
        raise UsageError("unknown manifold", manifold=text, known=sorted(MANIFOLDS))
    return MANIFOLDS[key]


def build_config(args):
    """Merge config file values with command line flags (flags win)."""
    file_vals = read_config_file(args.config) if getattr(args, "config", None) else {}
    cfg = RunConfig(command=args.command)
    tol = dict(TOLERANCES)

    def pick(name, flag):
        val = getattr(args, flag, None)
        return val if val is not None else file_vals.get(name)

    man = pick("manifold", "manifold")
    cfg.manifold_tag = _manifold(man) if man else None
    mesh_n = pick("mesh", "mesh")
    if mesh_n is not None:
        try:
            cfg.mesh_N = int(mesh_n)
        except ValueError:
            raise UsageError("--mesh must be an integer", mesh=mesh_n) from None
    cfg.model = pick("model", "model")
    cfg.synthetic = pick("synthetic", "synthetic")
    cfg.params = parse_params(file_vals.get("params"))
    cfg.params.update(parse_params(getattr(args, "params", None)))
    for key, val in file_vals.items():
        if key.startswith("tol."):
            tol[key[4:]] = val
    for item in getattr(args, "tol", None) or []:
        if "=" not in item:
            raise UsageError("--tol must look like NAME=VALUE", value=item)
        key, val = item.split("=", 1)
        tol[key.strip()] = val
    for key, val in tol.items():
        if key not in TOLERANCES:
            raise UsageError("unknown tolerance", name=key, known=sorted(TOLERANCES))
        try:
            tol[key] = float(val)
        except ValueError:
            raise UsageError("tolerance value is not a number", name=key, value=val) from None
    cfg.tolerances = tol
    cfg.json_path = pick("json", "json")
    cfg.csv_path = pick("csv", "csv")
    lev = pick("levels", "levels")
    cfg.levels = parse_levels(lev) if lev else []
    vary = pick("vary", "vary")
    cfg.vary = parse_vary(vary) if vary else None
    cfg.invariant = pick("invariant", "invariant")
    thr = pick("threads", "threads")
    cfg.threads = int(thr) if thr else 1
    return cfg.validate()


# ------------------------------------------------------------------ inputs

def _eps_from_params(mesh, params, count):
    eps = [int(np.sign(params.get("eps%d" % i, 1.0)) or 1) for i in range(count)]
    return dict(zip(sorted(mesh.fixed_vertices), eps))


def make_synthetic(name, mesh, params):
    """Named synthetic field on ``mesh``."""
    p = dict(params)
    if name == "chi":
        return eq.synth_chi(mesh)
    if name == "chi_tilde":
        return eq.synth_chi_tilde(mesh)
    if name == "phi_star":
        return eq.synth_phi_star(mesh)
    if name == "constant":
        return eq.synth_constant(mesh)
    if name == "disk":
        return eq.synth_disk_map(mesh)
    if name == "xi_eps":
        eps = _eps_from_params(mesh, p, len(mesh.fixed_vertices))
        return eq.synth_xi_epsilon(mesh, eps, p.get("radius"))
    if name == "bump3":
        eps = _eps_from_params(mesh, p, len(mesh.fixed_vertices))
        return eq.synth_bump3(mesh, eps, p.get("radius"))
    if name == "dirac":
        return eq.synth_dirac_map(mesh, p.get("mass", 1.0))
    if name == "random":
        rng = np.random.default_rng(int(p.get("seed", 0)))
        return eq.random_smooth_su2(mesh, rng, int(p.get("modes", 2)), p.get("amplitude", 1.0))
    raise InvalidInputError("unknown synthetic map", synthetic=name, known=sorted(SYNTHETICS))


SYNTHETICS = ("chi", "chi_tilde", "phi_star", "constant", "disk", "xi_eps", "bump3", "dirac", "random")
DEFAULT_MESH = {"T2": 32, "T3": 16, "S2": 32, "S3": 16, "S3_PLUS": 16, "DISK": 16}


def model_classifying_map(model, N, tol):
    """Classifying map of ``model`` on the torus; the mesh is doubled (up to
    ``tol["refine"]`` times) when the parallel-transport frame is not smooth."""
    tries = int(tol.get("refine", 1)) + 1
    n = N
    for attempt in range(tries):
        mesh = ms.build_torus(model.dim, n)
        try:
            frames = bloch.occupied_frame_field(
                model, mesh, gap_tol=tol["gap_tol"], relax_sweeps=int(tol["relax_sweeps"])
            )
            xi = bloch.classifying_map(frames, model)
            xi.meta["requested_N"] = N
            xi.meta["overlap_defect"] = frames.gauge_metadata["overlap_defect"]
            xi.meta["gap_min"] = frames.gauge_metadata["gap_min"]
            return xi
        except GaugeSmoothnessError:
            if attempt == tries - 1:
                raise
            n *= 2


def resolve_input(cfg, N=None):
    """MapField described by ``cfg`` at mesh size ``N``."""
    N = N or cfg.mesh_N
    if cfg.model is not None:
        model = bloch.make_model(cfg.model, **cfg.params)
        tag = "T%d" % model.dim
        if cfg.manifold_tag not in (None, tag):
            raise InvalidInputError("model lives on a different torus", model=cfg.model, manifold=cfg.manifold_tag)
        return model_classifying_map(model, N or 32, cfg.tolerances)
    tag = cfg.manifold_tag
    if tag is None:
        raise UsageError("--synthetic needs --manifold")
    mesh = ms.build_manifold(tag, N or DEFAULT_MESH[tag])
    return make_synthetic(cfg.synthetic, mesh, cfg.params)


def compute_report(cfg, kind, N=None):
    f = resolve_input(cfg, N)
    if kind == "fkmm":
        rep = inv.fkmm_index(f)
    elif kind == "wz":
        g = eq.su2_reduce(f) if f.flavor == "U2" else f
        layers = int(cfg.tolerances.get("layers", 0)) or None
        rep = inv.wz_term(g, layers)
    elif kind == "cs":
        rep = inv.cs_invariant(f)
    else:
        raise UsageError("unknown invariant", invariant=kind)
    rep.model = cfg.model if cfg.model is not None else "synthetic:" + cfg.synthetic
    rep.params = {k: float(v) for k, v in sorted(cfg.params.items())}
    for key in ("requested_N", "overlap_defect", "gap_min"):
        if key in f.meta:
            rep.extra[key] = f.meta[key]
    rep.extra["manifold"] = f.mesh.manifold_tag
    return rep


# ------------------------------------------------------------------ output

def atomic_write(path, text):
    """Write ``text`` to ``path`` through a temporary file and a rename."""
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(doc):
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def emit(text, path, out):
    if path:
        atomic_write(path, text)
    else:
        out.write(text)


def _exit_for(status):
    return 0 if status == "accepted" else 2


# ------------------------------------------------------------------ commands

def cmd_invariant(cfg, out):
    rep = compute_report(cfg, cfg.command)
    doc = rep.to_dict()
    doc["command"] = cfg.command
    emit(dump_json(doc), cfg.json_path, out)
    return _exit_for(rep.status)


def _gap_min(cfg, N):
    """Located minimum of the direct gap (NaN for synthetic inputs)."""
    if cfg.model is None:
        return float("nan")
    model = bloch.make_model(cfg.model, **cfg.params)
    return bloch.locate_gap_minimum(model, N)[0]


def scan_rows(cfg):
    """One result row per parameter value; failures are recorded, not raised."""
    name, start, stop, step = cfg.vary
    kind = cfg.invariant or "fkmm"
    N = cfg.mesh_N
    rows = []
    for val in scan_values(start, stop, step):
        sub = RunConfig(**{**cfg.__dict__, "params": {**cfg.params, name: val}})
        gap = _gap_min(sub, min(N or 32, 32))
        row = {"param_value": val, "sign": None, "value_mod_1": None, "half_integer_residual": None,
               "gap_min": gap, "status": "inconclusive"}
        if gap < cfg.tolerances["gap_tol"]:
            row["status"] = "gap_closed"
            rows.append(row)
            continue
        try:
            rep = compute_report(sub, kind)
            d = rep.to_dict()
            row.update(sign=d["sign"], value_mod_1=d["value_mod_1"],
                       half_integer_residual=d["half_integer_residual"], status=d["status"])
        except GapError:
            row["status"] = "gap_closed"
        except QBundleError as exc:
            row["status"] = "inconclusive"
            row["error"] = exc.code
        rows.append(row)
    return rows


CSV_COLUMNS = ("param_value", "sign", "value_mod_1", "half_integer_residual", "gap_min", "status")


def _fmt(val):
    if val is None:
        return ""
    if isinstance(val, float):
        return "nan" if math.isnan(val) else repr(float(val))
    return str(val)


def rows_to_csv(rows):
    lines = [",".join(CSV_COLUMNS)]
    for r in rows:
        lines.append(",".join(_fmt(r[c]) for c in CSV_COLUMNS))
    return "\n".join(lines) + "\n"


def rows_to_plotdata(rows, param):
    """Whitespace separated columns for gnuplot; missing values are NaN."""
    lines = ["# %s sign value_mod_1 half_integer_residual gap_min" % param]
    for r in rows:
        vals = [r["param_value"], r["sign"], r["value_mod_1"], r["half_integer_residual"], r["gap_min"]]
        lines.append(" ".join("NaN" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))
                              for v in vals))
    return "\n".join(lines) + "\n"


def cmd_scan(cfg, out):
    rows = scan_rows(cfg)
    text = rows_to_csv(rows)
    emit(text, cfg.csv_path, out)
    if cfg.csv_path:
        atomic_write(os.path.splitext(cfg.csv_path)[0] + ".dat", rows_to_plotdata(rows, cfg.vary[0]))
    if cfg.json_path:
        # JSON has no NaN: a gap that was not computed becomes null
        plain = [{**r, "gap_min": None if math.isnan(r["gap_min"]) else r["gap_min"]} for r in rows]
        doc = {"schema_version": SCHEMA_VERSION, "command": "scan", "param": cfg.vary[0],
               "invariant": cfg.invariant or "fkmm", "rows": plain}
        atomic_write(cfg.json_path, dump_json(inv._plain(doc)))
    return 2 if any(r["status"] == "inconclusive" for r in rows) else 0


def cmd_converge(cfg, out):
    kind = cfg.invariant or ("cs" if _input_dim(cfg) == 3 else "wz")

    def task(n):
        return compute_report(cfg, kind, n).raw

    rep = inv.refine_and_extrapolate(task, cfg.levels, cfg.tolerances["converge_tol"])
    doc = rep.to_dict()
    doc["command"] = "converge"
    doc["invariant"] = kind
    emit(dump_json(doc), cfg.json_path, out)
    return _exit_for(rep.status)


def _input_dim(cfg):
    if cfg.model is not None:
        return bloch.make_model(cfg.model, **cfg.params).dim
    return 3 if cfg.manifold_tag in ("T3", "S3", "S3_PLUS") else 2


def cmd_mesh_dump(cfg, out):
    mesh = ms.build_manifold(cfg.manifold_tag, cfg.mesh_N or DEFAULT_MESH[cfg.manifold_tag])
    emit(ms.mesh_to_json(mesh) + "\n", cfg.json_path, out)
    return 0


def cmd_map_dump(cfg, out):
    f = resolve_input(cfg)
    emit(eq.field_to_json(f) + "\n", cfg.json_path, out)
    return 0


# ------------------------------------------------------------------ selftest

def selftest_checks():
    """Small-mesh versions of the reference-value checks."""

    def chi_half():
        rep = inv.wz_term(eq.synth_chi(ms.build_sphere2(32)))
        lam = inv.lambda_integral(eq.synth_chi_tilde(ms.build_sphere3_plus(24)))
        ok = abs(rep.value_mod_1 - 0.5) <= 2e-2 and abs(lam - 0.5) <= 2e-2
        return ok, "wz mod 1 = %.5f, half-ball integral = %.5f" % (rep.value_mod_1, lam)

    def identity_degree():
        lam = inv.lambda_integral(eq.synth_chi_tilde(ms.build_sphere3(24)))
        return abs(lam - 1) <= 2e-2, "degree of the identity = %.5f" % lam

    def sign_patterns():
        mesh = ms.build_torus(2, 24)
        fx = sorted(mesh.fixed_vertices)
        bad = []
        for bits in range(16):
            eps = {p: (-1 if bits >> i & 1 else 1) for i, p in enumerate(fx)}
            rep = inv.wz_term(eq.synth_xi_epsilon(mesh, eps))
            if rep.sign != int(np.prod(list(eps.values()))):
                bad.append(bits)
        return not bad, "mismatching patterns: %s" % (bad or "none")

    def constant_cs():
        rep = inv.cs_invariant(eq.synth_constant(ms.build_torus(3, 8)))
        return rep.sign == 1 and abs(rep.raw) < 1e-12, "raw = %.3g" % rep.raw

    def atomic_limit():
        model = bloch.atomic_model(2)
        mesh = ms.build_torus(2, 16)
        rep = inv.fkmm_index(bloch.classifying_map(bloch.occupied_frame_field(model, mesh), model))
        oracle = bloch.trim_pfaffian_oracle(model, mesh)
        ok = rep.sign == 1 and all(v == 1 for v in oracle.values())
        return ok, "fkmm %+d, oracle %s" % (rep.sign, sorted(oracle.values()))

    def kane_mele_topological():
        model = bloch.kane_mele_model(lso=0.06)
        mesh = ms.build_torus(2, 32)
        rep = inv.fkmm_index(bloch.classifying_map(bloch.occupied_frame_field(model, mesh), model))
        oracle = bloch.trim_pfaffian_oracle(model, mesh).product()
        return rep.sign == -1 and oracle == -1, "fkmm %+d, oracle %+d" % (rep.sign, oracle)

    def pfaffian_identity():
        from . import linalg as la

        rng = np.random.default_rng(7)
        worst = 0.0
        for n in (2, 4, 6, 8):
            a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
            a = a - a.T
            worst = max(worst, abs(la.pfaffian(a) ** 2 - np.linalg.det(a)) / max(1.0, abs(np.linalg.det(a))))
        return worst <= 1e-9, "max |Pf^2 - det| = %.2e" % worst

    return [
        ("chi_half", chi_half),
        ("identity_degree", identity_degree),
        ("sign_patterns", sign_patterns),
        ("constant_cs", constant_cs),
        ("atomic_limit", atomic_limit),
        ("kane_mele_topological", kane_mele_topological),
        ("pfaffian_identity", pfaffian_identity),
    ]


def cmd_selftest(cfg, out):
    results = []
    for name, check in selftest_checks():
        try:
            ok, detail = check()
        except QBundleError as exc:
            ok, detail = False, "%s: %s" % (exc.code, exc)
        results.append({"check": name, "status": "PASS" if ok else "FAIL", "detail": detail})
        out.write("%s %s  %s\n" % ("PASS" if ok else "FAIL", name, detail))
    passed = all(r["status"] == "PASS" for r in results)
    out.write("selftest: %d/%d passed\n" % (sum(r["status"] == "PASS" for r in results), len(results)))
    if cfg.json_path:
        atomic_write(cfg.json_path, dump_json({"schema_version": SCHEMA_VERSION, "checks": results}))
    return 0 if passed else 1


COMMANDS = {
    "fkmm": cmd_invariant,
    "wz": cmd_invariant,
    "cs": cmd_invariant,
    "scan": cmd_scan,
    "converge": cmd_converge,
    "selftest": cmd_selftest,
    "mesh-dump": cmd_mesh_dump,
    "map-dump": cmd_map_dump,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def make_parser():
    parser = _Parser(prog="qbundle", description="Z2 invariants of time-reversal symmetric bundles")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat key = value file; flags override it")
        p.add_argument("--model", choices=sorted(bloch.MODELS))
        p.add_argument("--synthetic", choices=SYNTHETICS)
        p.add_argument("--manifold")
        p.add_argument("--mesh")
        p.add_argument("--params", help="name=value[,name=value...]")
        p.add_argument("--levels", help="comma separated mesh sizes")
        p.add_argument("--vary", help="param=start:stop:step")
        p.add_argument("--invariant", choices=INVARIANTS, help="invariant for scan and converge")
        p.add_argument("--json")
        p.add_argument("--csv")
        p.add_argument("--tol", action="append", help="NAME=VALUE, repeatable")
        p.add_argument("--threads", help="accepted for compatibility; results do not depend on it")
    return parser


def main(argv=None, out=None, err=None):
    out = out or sys.stdout
    err = err or sys.stderr
    try:
        args = make_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("missing command", known=sorted(COMMANDS))
        cfg = build_config(args)
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return COMMANDS[cfg.command](cfg, out)
    except QBundleError as exc:
        err.write(json.dumps(exc.to_dict(), sort_keys=True) + "\n")
        return 1
    except OSError as exc:
        err.write(json.dumps({"error": "io", "message": str(exc)}, sort_keys=True) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
