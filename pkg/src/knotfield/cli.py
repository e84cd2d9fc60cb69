"""Command-line entry point and job configuration.

A job is a flat list of ``key=value`` entries, read from a file and/or given
as ``--key=value`` flags (flags win). ``[section]`` lines prefix the keys
that follow them, so ``[map]`` then ``preset=hopf`` equals ``map.preset=hopf``.
``#`` starts a comment. See the README for the full key list.
"""
from __future__ import annotations

import argparse
import json
import os
import platform
import shlex
import sys
import time
import traceback
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__
from .helicity import (
    DEFAULT_LEVELS,
    HelicityResult,
    TUBE_SPEC,
    QuadratureSpec,
    fluxtube_flux,
    fluxtube_helicity,
    helicity_formula,
    helicity_volume,
    hopf_invariant_linking_result,
    total_energy,
)
from .field import far_field_decay_slope
from .mesh import (
    export_csv,
    export_obj,
    export_vtk,
    isosurface,
    clip_mesh,
    mesh_diagnostics,
    sample_grid,
    SCALAR_QUANTITIES,
    VECTOR_QUANTITIES,
)
from .ratmap import ComplexPolynomial, PolynomialFormatError, RationalMap, preset
from .trace import TraceParams, crossing_numbers, level_curves, trace_fieldline, trace_nodal_curve

ACTIONS = ("sample", "helicity", "fluxtube", "trace", "level-curve", "nodal", "surface", "energy", "verify")
FORMATS = ("vtk", "csv", "obj")


class ConfigError(ValueError):
    pass


# value parsers ------------------------------------------------------------

def _int(text):
    return int(text)


def _float(text):
    return float(text)


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected true/false, got {text!r}")


def _floats(text):
    return [float(x) for x in text.replace(";", ",").split(",") if x.strip()]


def _complex_value(text):
    t = text.strip().lower().replace(" ", "")
    if t in ("inf", "infinity"):
        return complex("inf")
    if "@" in t:
        # polar form modulus@degrees
        r, deg = t.split("@")
        return complex(float(r) * np.exp(1j * np.deg2rad(float(deg))))
    return complex(t.replace("i", "j"))


def _complexes(text):
    return [_complex_value(x) for x in text.split(",") if x.strip()]


def _points(text):
    pts = []
    for chunk in text.split(";"):
        if chunk.strip():
            xyz = [float(x) for x in chunk.split(",")]
            if len(xyz) != 3:
                raise ValueError(f"a seed needs three coordinates, got {chunk!r}")
            pts.append(xyz)
    return pts


def _bounds(text):
    vals = _floats(text)
    if len(vals) == 2:
        return [vals, vals, vals]
    if len(vals) == 6:
        return [vals[0:2], vals[2:4], vals[4:6]]
    raise ValueError(f"bounds take 2 or 6 numbers, got {len(vals)}")


def _formats(text):
    out = [x.strip().lower() for x in text.split(",") if x.strip()]
    for f in out:
        if f not in FORMATS:
            raise ValueError(f"unknown format {f!r} (expected {', '.join(FORMATS)})")
    return out


def _choice(options):
    def parse(text):
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {text!r}")
        return text

    return parse


_QUAD_TYPES = {f.name: f.type for f in fields(QuadratureSpec)}
_TRACE_TYPES = {f.name: f.type for f in fields(TraceParams)}


def _typed(kind):
    return _int if kind == "int" else _float


SCHEMA = {
    "map.preset": (str, None),
    "map.alpha": (_int, None),
    "map.beta": (_int, None),
    "map.p": (_int, None),
    "map.q": (_int, None),
    "map.P": (str, None),
    "map.Q": (str, None),
    "map.label": (str, None),
    "action": (_choice(ACTIONS), None),
    "bounds": (_bounds, [[-3.0, 3.0]] * 3),
    "dims": (_int, None),
    "quantity": (_choice(SCALAR_QUANTITIES + VECTOR_QUANTITIES), "chi"),
    "level": (_float, None),
    "clip": (_float, None),
    "chi0": (_floats, [0.5]),
    "section": (_choice(("seifert", "plane")), "seifert"),
    "flux": (_bool, True),
    "linking": (_bool, True),
    "seeds": (_points, None),
    "c-values": (_complexes, list(DEFAULT_LEVELS)),
    "poly": (_choice(("P", "Q")), "Q"),
    "radius": (_floats, [20.0, 40.0]),
    "verify.points": (_int, 200),
    "verify.level": (_float, 0.45),
    "verify.dims": (_int, 96),
    "out": (str, "."),
    "formats": (_formats, ["vtk"]),
    "threads": (_int, os.cpu_count() or 1),
    "seed": (_int, 0),
}
for _name, _kind in _QUAD_TYPES.items():
    if _name != "workers":
        SCHEMA[f"quadrature.{_name}"] = (_typed(_kind), getattr(QuadratureSpec(), _name))
for _name, _kind in _TRACE_TYPES.items():
    SCHEMA[f"trace.{_name}"] = (_typed(_kind), getattr(TraceParams(), _name))

DEFAULT_DIMS = {"sample": 96, "surface": 96, "nodal": 48, "level-curve": 48}


@dataclass
class JobConfig:
    values: dict
    ratmap: RationalMap

    @property
    def action(self) -> str:
        return self.values["action"]

    def __getitem__(self, key):
        return self.values[key]

    def quadrature(self) -> QuadratureSpec:
        kw = {k.split(".", 1)[1]: v for k, v in self.values.items() if k.startswith("quadrature.")}
        return QuadratureSpec(workers=max(1, self.values["threads"]), **kw)

    def trace_params(self) -> TraceParams:
        kw = {k.split(".", 1)[1]: v for k, v in self.values.items() if k.startswith("trace.")}
        return TraceParams(**kw)

    def echo(self) -> dict:
        """All settings with defaults filled in, as JSON-ready values."""
        out = {}
        for k, v in self.values.items():
            if k == "threads":
                continue  # results do not depend on it
            out[k] = _jsonable(v)
        return out


def tokenize(text: str) -> list:
    lexer = shlex.shlex(text, posix=True)
    lexer.whitespace_split = True
    lexer.commenters = "#"
    tokens, prefix = [], ""
    for tok in lexer:
        if tok.startswith("[") and tok.endswith("]"):
            prefix = tok[1:-1].strip()
            prefix = prefix + "." if prefix else ""
            continue
        if "=" not in tok:
            raise ConfigError(f"cli: expected key=value, got {tok!r}")
        key, value = tok.split("=", 1)
        tokens.append((prefix + key.strip(), value))
    return tokens


def _read_polynomial(key: str, text: str, base: Path | None) -> ComplexPolynomial:
    source = text
    if text.startswith("@"):
        path = Path(text[1:])
        if base is not None and not path.is_absolute():
            path = base / path
        source = path.read_text()
    try:
        return ComplexPolynomial.from_text(source)
    except PolynomialFormatError as exc:
        raise ConfigError(f"ratmap: {key} line {exc.lineno}: {exc.reason}") from exc


def parse_config(text: str = "", overrides=(), base: Path | None = None) -> JobConfig:
    """Validate a job description; ``overrides`` are extra ``(key, value)`` pairs."""
    raw = {}
    for key, value in list(tokenize(text)) + list(overrides):
        if key not in SCHEMA:
            raise ConfigError(f"cli: unknown key {key!r}")
        raw[key] = value

    values = {}
    for key, (parse, default) in SCHEMA.items():
        if key in raw:
            try:
                values[key] = parse(raw[key]) if parse is not str else raw[key]
            except ValueError as exc:
                raise ConfigError(f"cli: bad value for {key}: {exc}") from exc
        else:
            values[key] = default

    if values["action"] is None:
        raise ConfigError("cli: missing required key 'action'")
    if values["dims"] is None:
        values["dims"] = DEFAULT_DIMS.get(values["action"], 48)
    if values["dims"] < 2:
        raise ConfigError("cli: dims must be >= 2")
    if values["action"] == "fluxtube":
        # tube integrals default to their own (looser) settings
        for name in _QUAD_TYPES:
            key = f"quadrature.{name}"
            if key in SCHEMA and key not in raw:
                values[key] = getattr(TUBE_SPEC, name)
    if values["level"] is None:
        values["level"] = 0.25 if values["quantity"] in ("f", "eta") else 0.5

    ratmap = _build_map(values, base)
    values["quadrature.R0"] = float(values["quadrature.R0"])
    try:
        QuadratureSpec(**{k.split(".", 1)[1]: v for k, v in values.items() if k.startswith("quadrature.")})
        TraceParams(**{k.split(".", 1)[1]: v for k, v in values.items() if k.startswith("trace.")})
    except ValueError as exc:
        raise ConfigError(f"cli: {exc}") from exc
    for c in values["chi0"]:
        if not 0.0 <= c <= 1.0:
            raise ConfigError(f"helicity: chi0 must lie in [0, 1], got {c}")
    return JobConfig(values, ratmap)


def _build_map(values, base) -> RationalMap:
    name = values["map.preset"]
    has_poly = values["map.P"] is not None or values["map.Q"] is not None
    torus_keys = [k for k in ("map.alpha", "map.beta", "map.p", "map.q") if values[k] is not None]
    if name is not None and has_poly:
        raise ConfigError("cli: give either map.preset or map.P/map.Q, not both")
    if name is None:
        if values["map.P"] is None or values["map.Q"] is None:
            raise ConfigError("cli: missing required key 'map.preset' (or both 'map.P' and 'map.Q')")
        P = _read_polynomial("map.P", values["map.P"], base)
        Q = _read_polynomial("map.Q", values["map.Q"], base)
        try:
            return RationalMap(P, Q, values["map.label"] or "custom")
        except ValueError as exc:
            raise ConfigError(f"ratmap: {exc}") from exc
    if torus_keys and name != "torus":
        raise ConfigError(f"cli: {', '.join(torus_keys)} only apply to map.preset=torus")
    params = {k.split(".")[1]: values[k] for k in torus_keys}
    try:
        return preset(name, **params)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"ratmap: {exc}") from exc


# running ------------------------------------------------------------------

def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (complex, np.complexfloating)):
        return {"re": _jsonable(x.real), "im": _jsonable(x.imag)}
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if np.isfinite(x):
            return x
        return "nan" if np.isnan(x) else ("inf" if x > 0 else "-inf")
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


def _versions() -> dict:
    import scipy
    import skimage
    import sklearn

    return {
        "knotfield": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "scikit-image": skimage.__version__,
        "scikit-learn": sklearn.__version__,
        "python": platform.python_version(),
    }


class _Artifacts:
    def __init__(self, out: Path, stem: str, formats):
        self.out = out
        self.stem = stem
        self.formats = formats
        self.paths = []

    def _add(self, paths):
        for p in paths if isinstance(paths, list) else [paths]:
            self.paths.append(str(Path(p).relative_to(self.out)))

    def grid(self, grid):
        if "vtk" in self.formats:
            self._add(export_vtk(self.out / f"{self.stem}.vtk", grids=[grid]))
        if "csv" in self.formats:
            self._add(export_csv(grid, self.out / f"{self.stem}.csv"))

    def curves(self, curves, tag=""):
        if not curves:
            return
        if "vtk" in self.formats:
            self._add(export_vtk(self.out / f"{self.stem}{tag}.vtk", curves=curves))
        if "csv" in self.formats:
            for i, c in enumerate(curves):
                self._add(export_csv(c, self.out / f"{self.stem}{tag}_{i}.csv"))

    def mesh(self, mesh):
        if "vtk" in self.formats:
            self._add(export_vtk(self.out / f"{self.stem}.vtk", meshes=[mesh]))
        if "obj" in self.formats:
            self._add(export_obj(mesh, self.out / f"{self.stem}.obj"))


def _curve_summary(ratmap, curve) -> dict:
    from .field import euler_potentials

    chi = euler_potentials(ratmap, curve.vertices)[0]
    return {
        "closed": curve.closed,
        "closure_gap": curve.closure_gap,
        "arc_length": curve.arc_length,
        "vertices": len(curve.vertices),
        "chi_spread": float(chi.max() - chi.min()),
    }


def _do_sample(cfg, art):
    grid = sample_grid(cfg.ratmap, cfg["quantity"], cfg["bounds"], cfg["dims"], cfg["threads"])
    art.grid(grid)
    v = grid.values
    return {
        "quantity": cfg["quantity"],
        "dims": list(grid.dims),
        "invalid_samples": int(np.isnan(v).any(axis=-1).sum() if v.ndim == 2 else np.isnan(v).sum()),
        "min": float(np.nanmin(v)) if np.isfinite(v).any() else None,
        "max": float(np.nanmax(v)) if np.isfinite(v).any() else None,
    }


def _do_helicity(cfg, art):
    res = helicity_volume(cfg.ratmap, cfg.quadrature())
    out = res.as_dict()
    out["formula"] = helicity_formula(cfg.ratmap)
    if cfg["linking"]:
        try:
            link = hopf_invariant_linking_result(cfg.ratmap, cfg["c-values"], cfg.trace_params())
            out["linking"] = link.as_dict()
        except ValueError as exc:
            out["linking"] = {"error": f"helicity: {exc}"}
    return out


def _do_fluxtube(cfg, art):
    spec = cfg.quadrature()
    total = helicity_volume(cfg.ratmap, spec)
    rows = []
    for chi0 in cfg["chi0"]:
        tube = fluxtube_helicity(cfg.ratmap, chi0, spec)
        row = {"chi0": chi0, "helicity": tube.as_dict(), "expected_ratio": (1 - chi0) ** 2}
        row["ratio"] = tube.value / total.value if total.value != 0 else None
        if cfg["flux"] and chi0 < 1.0:
            try:
                row["flux"] = fluxtube_flux(cfg.ratmap, chi0, spec, cfg["section"])
            except ValueError as exc:
                row["flux"] = {"error": str(exc)}
            row["expected_flux"] = 1 - chi0
        rows.append(row)
    out = {"total": total.as_dict(), "tubes": rows}
    if len(rows) == 1:
        out["value"] = rows[0]["helicity"]["value"]
        out["error_estimate"] = rows[0]["helicity"]["error_estimate"]
    return out


def _default_seeds():
    return [[x, 0.0, 0.0] for x in (0.25, 0.5, 0.75, 1.5)]


def _do_trace(cfg, art):
    seeds = cfg["seeds"] or _default_seeds()
    params = cfg.trace_params()
    curves = [trace_fieldline(cfg.ratmap, s, params) for s in seeds]
    art.curves(curves)
    return {"fieldlines": [dict(seed=s, **_curve_summary(cfg.ratmap, c)) for s, c in zip(seeds, curves)]}


def _do_level_curve(cfg, art):
    lo, hi = cfg["bounds"][0]
    out = []
    for k, c in enumerate(cfg["c-values"]):
        curves = level_curves(cfg.ratmap, None if np.isinf(abs(c)) else c, cfg.trace_params(), (lo, hi), cfg["dims"])
        art.curves(curves, f"_c{k}")
        out.append({"c": c, "components": [_curve_summary(cfg.ratmap, x) for x in curves]})
    return {"levels": out}


def _do_nodal(cfg, art):
    lo, hi = cfg["bounds"][0]
    poly = cfg.ratmap.P if cfg["poly"] == "P" else cfg.ratmap.Q
    curves = trace_nodal_curve(poly, (lo, hi), cfg["dims"], cfg.trace_params())
    art.curves(curves)
    comps = []
    for c in curves:
        d = {"closed": c.closed, "arc_length": c.arc_length, "vertices": len(c.vertices)}
        if c.closed:
            d["projection_crossings"] = list(crossing_numbers(c))
        comps.append(d)
    return {"polynomial": cfg["poly"], "components": comps}


def _do_surface(cfg, art):
    qty = cfg["quantity"]
    if qty in VECTOR_QUANTITIES:
        raise ConfigError(f"mesh: quantity {qty!r} is a vector; surfaces need a scalar")
    grid = sample_grid(cfg.ratmap, qty, cfg["bounds"], cfg["dims"], cfg["threads"])
    mesh = isosurface(grid, cfg["level"])
    if cfg["clip"] is not None:
        mesh = clip_mesh(mesh, cfg["clip"])
    art.mesh(mesh)
    return {"quantity": qty, "level": cfg["level"], "vertices": len(mesh.vertices),
            "triangles": len(mesh.triangles), "diagnostics": mesh_diagnostics(mesh).as_dict()}


def _do_energy(cfg, art):
    spec = cfg.quadrature()
    rows = []
    for r in cfg["radius"]:
        value, err = total_energy(cfg.ratmap, r, spec)
        rows.append({"radius": r, "value": value, "error_estimate": err})
    out = {"energies": rows, "decay_slope": far_field_decay_slope(cfg.ratmap)}
    if len(rows) >= 2:
        a, b = rows[-2]["value"], rows[-1]["value"]
        out["relative_change"] = abs(a - b) / abs(b) if b else None
    return out


def _do_verify(cfg, art):
    from .verify import run_suite

    checks = run_suite(
        cfg.ratmap, cfg["seed"], cfg["verify.points"], cfg.quadrature(), cfg["c-values"],
        cfg.trace_params(), cfg["verify.level"], cfg["verify.dims"],
    )
    return {"checks": [c.as_dict() for c in checks], "all_passed": all(c.passed for c in checks)}


_DISPATCH = {
    "sample": _do_sample,
    "helicity": _do_helicity,
    "fluxtube": _do_fluxtube,
    "trace": _do_trace,
    "level-curve": _do_level_curve,
    "nodal": _do_nodal,
    "surface": _do_surface,
    "energy": _do_energy,
    "verify": _do_verify,
}

VOLATILE_KEYS = ("wall_time_s", "timestamp")


def run(cfg: JobConfig) -> tuple:
    """Execute the job; returns ``(exit_status, manifest)`` and writes ``manifest.json``."""
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    stem = cfg.action.replace("-", "_")
    art = _Artifacts(out, stem, cfg["formats"])
    start = time.perf_counter()
    result = _DISPATCH[cfg.action](cfg, art)
    status = 0
    if cfg.action == "verify" and not result["all_passed"]:
        status = 1
    manifest = {
        "action": cfg.action,
        "config": cfg.echo(),
        "map": {
            "label": cfg.ratmap.label,
            "tuning": list(cfg.ratmap.tuning) if cfg.ratmap.tuning else None,
            "P": cfg.ratmap.P.to_text(),
            "Q": cfg.ratmap.Q.to_text(),
        },
        "seed": cfg["seed"],
        "versions": _versions(),
        "result": result,
        "artifacts": art.paths,
        "status": status,
        "wall_time_s": time.perf_counter() - start,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    manifest = _jsonable(manifest)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return status, manifest


def strip_volatile(manifest: dict) -> dict:
    return {k: v for k, v in manifest.items() if k not in VOLATILE_KEYS}


def _module_of(exc: BaseException) -> str:
    """Name of the deepest package module in the traceback."""
    name = "cli"
    for frame, _ in traceback.walk_tb(exc.__traceback__):
        mod = frame.f_globals.get("__name__", "")
        if mod.startswith("knotfield."):
            name = mod.split(".", 1)[1]
    return name


def _split_flags(argv) -> tuple:
    parser = argparse.ArgumentParser(
        prog="knotfield",
        description="Knotted fields from rational maps: helicity, field lines, surfaces and exports.",
        epilog="Any config key can be given as a flag, e.g. --map.preset=hopf --action=helicity.",
    )
    parser.add_argument("config", nargs="?", help="job file with key=value entries")
    # argparse reads "--key=a b" as positional, so flags are split by hand
    positional, overrides = [], []
    i = 0
    while i < len(argv):
        tok = argv[i]
        if tok in ("-h", "--help"):
            parser.parse_args([tok])
        if not tok.startswith("--"):
            positional.append(tok)
            i += 1
            continue
        tok = tok[2:]
        if "=" in tok:
            key, value = tok.split("=", 1)
        elif i + 1 < len(argv):
            key, value = tok, argv[i + 1]
            i += 1
        else:
            parser.error(f"flag --{tok} needs a value")
        overrides.append((key, value))
        i += 1
    args = parser.parse_args(positional)
    return args.config, overrides


def main(argv=None) -> int:
    path, overrides = _split_flags(sys.argv[1:] if argv is None else argv)
    try:
        text, base = "", None
        if path is not None:
            text = Path(path).read_text()
            base = Path(path).resolve().parent
        cfg = parse_config(text, overrides, base)
        status, manifest = run(cfg)
    except ConfigError as exc:
        print(f"knotfield: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - reported with its module
        msg = str(exc)
        module = _module_of(exc)
        if not msg.startswith(module + ":"):
            msg = f"{module}: {msg}"
        print(f"knotfield: {msg}", file=sys.stderr)
        return 1
    summary = {k: manifest["result"][k] for k in ("value", "error_estimate", "all_passed") if k in manifest["result"]}
    print(json.dumps({"action": cfg.action, "status": status, **summary, "manifest": str(Path(cfg["out"]) / "manifest.json")}))
    return status


if __name__ == "__main__":
    sys.exit(main())
