"""Invariant checks run by the ``verify`` action.

Each check returns a :class:`Check` with the measured value and the
threshold it was held to. Random check points come from a seeded generator
so repeated runs give identical reports.
"""
from __future__ import annotations

import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import field as fld
from .helicity import (
    DEFAULT_LEVELS,
    QuadratureSpec,
    helicity_formula,
    helicity_volume,
    hopf_invariant_linking_result,
)
from .mesh import export_csv, isosurface, mesh_diagnostics, read_csv_curve, sample_grid
from .ratmap import RationalMap, eval_map, stereographic
from .trace import TraceParams, hausdorff, level_curves, trace_fieldline

FD_STEP = 1e-4


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": bool(self.passed),
            "value": float(self.value),
            "threshold": float(self.threshold),
            "detail": self.detail,
        }


def random_points(rng: np.random.Generator, n: int, scale: float = 1.5) -> np.ndarray:
    """Points with Gaussian coordinates; ``scale`` sets the spread."""
    return rng.normal(scale=scale / np.sqrt(3), size=(n, 3))


def regular_points(ratmap: RationalMap, rng, n: int, margin: float = 1e-3) -> np.ndarray:
    """Random points away from the nodal curves of P and Q (where eta, f and A blow up)."""
    out = []
    while sum(len(o) for o in out) < n:
        pts = random_points(rng, 2 * n)
        ev = eval_map(ratmap, pts)
        s = np.sqrt(np.abs(ev.P) ** 2 + np.abs(ev.Q) ** 2)
        ok = (np.abs(ev.P) > margin * s) & (np.abs(ev.Q) > margin * s)
        out.append(pts[ok])
    return np.concatenate(out)[:n]


def fd_jacobian(fn, pts, h: float = FD_STEP) -> np.ndarray:
    """Fourth-order central differences; ``out[..., i, j] = d fn_i / d x_j``."""
    cols = []
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        d = (-fn(pts + 2 * e) + 8 * fn(pts + e) - 8 * fn(pts - e) + fn(pts - 2 * e)) / (12 * h)
        cols.append(d)
    return np.stack(cols, axis=-1)


def fd_curl(fn, pts, h: float = FD_STEP) -> np.ndarray:
    J = fd_jacobian(fn, pts, h)
    return np.stack([J[:, 2, 1] - J[:, 1, 2], J[:, 0, 2] - J[:, 2, 0], J[:, 1, 0] - J[:, 0, 1]], axis=-1)


def _rel(a, b):
    return np.linalg.norm(a - b, axis=-1) / np.maximum(np.linalg.norm(b, axis=-1), 1e-300)


def check_unit_sphere(ratmap, rng, n) -> Check:
    c = stereographic(random_points(rng, n, 5.0))
    err = float(np.abs(np.abs(c.u) ** 2 + np.abs(c.v) ** 2 - 1).max())
    return Check("ratmap.unit_sphere", err < 1e-12, err, 1e-12)


def check_gradients(ratmap, rng, n) -> Check:
    pts = regular_points(ratmap, rng, n)
    ev = eval_map(ratmap, pts)
    worst = 0.0
    for name, grad in (("P", ev.grad_P), ("Q", ev.grad_Q)):
        fd = fd_jacobian(lambda p: np.stack([getattr(eval_map(ratmap, p), name).real,
                                             getattr(eval_map(ratmap, p), name).imag], -1), pts)
        fd = fd[:, 0, :] + 1j * fd[:, 1, :]
        scale = np.maximum(np.linalg.norm(grad, axis=-1), 1e-8)
        worst = max(worst, float((np.linalg.norm(fd - grad, axis=-1) / scale).max()))
    return Check("ratmap.gradient_fd", worst < 1e-6, worst, 1e-6)


def check_divergence(ratmap, rng, n) -> Check:
    pts = random_points(rng, n)
    J = fd_jacobian(lambda p: fld.bfield(ratmap, p), pts)
    div = np.abs(np.trace(J, axis1=-2, axis2=-1))
    bound = 1e-5 * np.linalg.norm(fld.bfield(ratmap, pts), axis=-1) / FD_STEP
    ratio = float((div / bound).max())
    return Check("field.divergence", ratio < 1.0, ratio, 1.0, "max |div B| / (1e-5 |B| / h)")


def check_curl(ratmap, rng, n) -> Check:
    pts = regular_points(ratmap, rng, n)
    B = fld.bfield(ratmap, pts)
    err = float(_rel(fd_curl(lambda p: fld.vecpot_smooth(ratmap, p), pts), B).max())
    return Check("field.curl_smooth", err < 1e-4, err, 1e-4)


def check_euler_identity(ratmap, rng, n) -> Check:
    pts = regular_points(ratmap, rng, n)
    gc, ge = fld.euler_gradients(ratmap, pts)
    err = float(_rel(np.cross(gc, ge), fld.bfield(ratmap, pts)).max())
    return Check("field.euler_identity", err < 1e-6, err, 1e-6)


def check_tangency(ratmap, rng, n) -> Check:
    pts = regular_points(ratmap, rng, n)
    B = fld.bfield(ratmap, pts)
    gc, ge = fld.euler_gradients(ratmap, pts)
    nb = np.linalg.norm(B, axis=-1)
    worst = 0.0
    for g in (gc, ge):
        den = np.maximum(nb * np.linalg.norm(g, axis=-1), 1e-300)
        worst = max(worst, float((np.abs(np.einsum("ij,ij->i", B, g)) / den).max()))
    return Check("field.tangency", worst < 1e-8, worst, 1e-8)


def check_chi_range(ratmap, rng, n) -> Check:
    chi = fld.euler_potentials(ratmap, random_points(rng, n, 5.0))[0]
    excess = float(max(-chi.min(), chi.max() - 1.0, 0.0))
    return Check("field.chi_range", excess == 0.0, excess, 0.0)


def check_helicity(ratmap, spec, c_values, trace_params) -> list:
    expected = helicity_formula(ratmap)
    vol = helicity_volume(ratmap, spec)
    checks = []
    if expected is not None:
        tol = max(0.02, 0.02 * abs(expected))
        checks.append(Check("helicity.volume_vs_formula", abs(vol.value - expected) < tol,
                            abs(vol.value - expected), tol, f"H = {vol.value:.6f}, formula {expected}"))
    try:
        link = hopf_invariant_linking_result(ratmap, c_values, trace_params)
        diff = abs(link.value_int - vol.value)
        tol = max(0.02, 0.02 * abs(link.value_int))
        checks.append(Check("helicity.volume_vs_linking", diff < tol, diff, tol,
                            f"linking {link.value_int}"))
        if expected is not None:
            checks.append(Check("helicity.linking_vs_formula", link.value_int == expected,
                                abs(link.value_int - expected), 0.0))
    except ValueError as exc:
        checks.append(Check("helicity.volume_vs_linking", False, float("nan"), 0.0, str(exc)))
    return checks


def check_fieldline(ratmap, c, trace_params) -> list:
    curves = [k for k in level_curves(ratmap, c, trace_params) if k.closed]
    if not curves:
        return [Check("trace.fieldline_on_level_curve", False, float("nan"), 1e-3,
                      f"no closed level curve for c = {c}")]
    ref = curves[0]
    line = trace_fieldline(ratmap, ref.vertices[0], trace_params)
    chi = fld.euler_potentials(ratmap, line.vertices)[0]
    spread = float(chi.max() - chi.min())
    dist = hausdorff(line, ref) if line.closed else float("inf")
    return [
        Check("trace.fieldline_closes", line.closed, line.closure_gap, trace_params.closure_tol),
        Check("trace.chi_conserved", spread < 1e-4, spread, 1e-4),
        Check("trace.fieldline_on_level_curve", dist < 1e-3, dist, 1e-3),
    ]


def check_surface(ratmap, level, dims) -> Check:
    mesh = isosurface(sample_grid(ratmap, "chi", (-3.0, 3.0), dims), level)
    d = mesh_diagnostics(mesh)
    ok = (d.components >= 1 and all(e == 0 for e in d.euler_characteristic)
          and d.non_manifold_edges == 0 and d.boundary_loops == 0)
    return Check("mesh.flux_surface_tori", ok, float(d.total_euler_characteristic), 0.0,
                 f"chi = {level}: {d.components} component(s), euler {list(d.euler_characteristic)}")


def check_csv_roundtrip(ratmap, c, trace_params) -> Check:
    curves = level_curves(ratmap, c, trace_params)
    if not curves:
        return Check("mesh.csv_roundtrip", True, 0.0, 1e-8, "no curve to write")
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "curve.csv"
        export_csv(curves[0], path)
        back = read_csv_curve(path)
    v = curves[0].vertices
    err = float((np.abs(back.vertices - v) / np.maximum(np.abs(v), 1e-300)).max())
    return Check("mesh.csv_roundtrip", err < 1e-8, err, 1e-8)


def run_suite(
    ratmap: RationalMap,
    seed: int = 0,
    n_points: int = 200,
    spec: QuadratureSpec | None = None,
    c_values=DEFAULT_LEVELS,
    trace_params: TraceParams | None = None,
    surface_level: float = 0.45,
    surface_dims: int = 96,
) -> list:
    """All checks for one map, in a fixed order."""
    rng = np.random.default_rng(seed)
    spec = spec or QuadratureSpec()
    trace_params = trace_params or TraceParams()
    checks = [
        check_unit_sphere(ratmap, rng, n_points),
        check_gradients(ratmap, rng, n_points),
        check_divergence(ratmap, rng, n_points),
        check_curl(ratmap, rng, n_points),
        check_euler_identity(ratmap, rng, n_points),
        check_tangency(ratmap, rng, n_points),
        check_chi_range(ratmap, rng, n_points),
    ]
    checks += check_helicity(ratmap, spec, c_values, trace_params)
    checks += check_fieldline(ratmap, c_values[-1], trace_params)
    checks.append(check_surface(ratmap, surface_level, surface_dims))
    checks.append(check_csv_roundtrip(ratmap, c_values[-1], trace_params))
    return checks
