"""Helicity of knotted fields by volume quadrature and by linking of preimages.

The volume integral of ``A_smooth . B`` over R^3 is computed in compactified
spherical coordinates ``r = R0 tan(theta / 2)``, ``theta in [0, pi)``, so the
domain becomes a finite box; the integrand is concentrated in thin tubes
around the nodal curve of ``Q`` for some maps, so the box is integrated with
adaptive Gauss-Kronrod subdivision.
"""
from __future__ import annotations

import warnings
from functools import lru_cache
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cubature

from .field import bfield, euler_potentials, helicity_density, energy_density
from .ratmap import RationalMap, eval_map
from .trace import Curve, TraceParams, ZeroSet, densify, segment_lengths, trace_components, trace_nodal_curve

DEFAULT_LEVELS = (0.8 * np.exp(0.2j * np.pi), 2.0 * np.exp(1j * np.pi / 3))


class ConvergenceWarning(UserWarning):
    pass


class LinkingError(ValueError):
    pass


@dataclass(frozen=True)
class QuadratureSpec:
    """Adaptive quadrature settings.

    Refinement level ``k`` of ``levels`` runs with relative tolerance
    ``rtol * refine ** (levels - 1 - k)``; the last level uses ``rtol``.
    ``tolerance`` is the absolute error above which the result is flagged as
    not converged.
    """

    rtol: float = 1e-3
    atol: float = 1e-4
    R0: float = 2.0
    levels: int = 2
    refine: float = 4.0
    max_subdivisions: int = 200_000
    tolerance: float = 0.01
    workers: int = 1
    chunk: int = 65_536

    def __post_init__(self):
        if self.levels < 2:
            raise ValueError("QuadratureSpec.levels must be >= 2 (needed for error estimation)")
        if self.R0 <= 0:
            raise ValueError("QuadratureSpec.R0 must be positive")
        if self.rtol <= 0 or self.atol < 0 or self.refine <= 1:
            raise ValueError("QuadratureSpec needs rtol > 0, atol >= 0, refine > 1")


@dataclass
class HelicityResult:
    value: float
    error_estimate: float
    method: str
    convergence: list = field(default_factory=list)
    converged: bool = True

    def as_dict(self) -> dict:
        return {
            "value": self.value,
            "error_estimate": self.error_estimate,
            "method": self.method,
            "convergence": [list(c) for c in self.convergence],
            "converged": self.converged,
        }


def _compact_points(X, R0):
    t, c, ph = X[:, 0], X[:, 1], X[:, 2]
    half = 0.5 * np.pi * t
    r = R0 * np.tan(half)
    jac = 0.5 * np.pi * R0 / np.cos(half) ** 2 * r * r
    s = np.sqrt(np.clip(1.0 - c * c, 0.0, None))
    pts = np.stack([r * s * np.cos(ph), r * s * np.sin(ph), r * c], axis=-1)
    return pts, jac


def _chunked(fn, spec: QuadratureSpec):
    """Evaluate ``fn`` over fixed-size chunks; results concatenate in chunk order."""

    def run(X):
        chunks = [X[i : i + spec.chunk] for i in range(0, len(X), spec.chunk)]
        if spec.workers > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(spec.workers) as pool:
                parts = list(pool.map(fn, chunks))
        else:
            parts = [fn(c) for c in chunks]
        return np.concatenate(parts)

    return run


def integrate_compact(density, spec: QuadratureSpec, t_max: float = 1.0):
    """Integrate ``density(points)`` over R^3 (or the ball ``theta < pi t_max``).

    Returns ``(value, error_estimate, convergence, converged)`` with one
    ``(evaluations, value)`` record per refinement level.
    """

    def fn(X):
        pts, jac = _compact_points(X, spec.R0)
        return density(pts) * jac

    count = [0]
    run = _chunked(fn, spec)

    def counted(X):
        count[0] += len(X)
        return run(X)

    a = np.array([0.0, -1.0, 0.0])
    b = np.array([t_max, 1.0, 2.0 * np.pi])
    convergence = []
    last_err = 0.0
    status_ok = True
    for k in range(spec.levels):
        rtol = spec.rtol * spec.refine ** (spec.levels - 1 - k)
        res = cubature(
            counted, a, b, rule="gk15", rtol=rtol, atol=spec.atol,
            max_subdivisions=spec.max_subdivisions,
        )
        convergence.append((count[0], float(res.estimate)))
        last_err = float(res.error)
        status_ok = res.status == "converged"
    value = convergence[-1][1]
    err = max(abs(convergence[-1][1] - convergence[-2][1]) / 2.0, last_err)
    converged = status_ok and err <= spec.tolerance
    return value, err, convergence, converged


def _finish(value, err, conv, ok, method, spec, what) -> HelicityResult:
    if not ok:
        warnings.warn(
            f"helicity: {what} did not reach tolerance {spec.tolerance:g} (error estimate {err:.3g})",
            ConvergenceWarning,
            stacklevel=3,
        )
    return HelicityResult(value, err, method, conv, ok)


def helicity_volume(ratmap: RationalMap, spec: QuadratureSpec | None = None, extra_potential=None) -> HelicityResult:
    """``H = integral of A_smooth . B`` over all of space.

    ``extra_potential(points)``, if given, is added to ``A_smooth`` (used to
    check gauge invariance).
    """
    spec = spec or QuadratureSpec()

    def density(pts):
        h, _ = helicity_density(ratmap, pts)
        if extra_potential is not None:
            h = h + np.einsum("...i,...i->...", extra_potential(pts), bfield(ratmap, pts))
        return h

    value, err, conv, ok = integrate_compact(density, spec)
    return _finish(value, err, conv, ok, "volume-quadrature", spec, "volume integral")


# the sharp tube wall dominates the cost; these settings keep ratio and
# flux errors near 1e-4, far inside what the tube laws are checked to
TUBE_SPEC = QuadratureSpec(rtol=3e-3, atol=1e-3, tolerance=0.02)


@lru_cache(maxsize=64)
def _tube_integral(ratmap: RationalMap, chi0: float, spec: QuadratureSpec):
    """``integral of A_smooth . B`` over the tube ``chi > chi0``, memoised.

    Both the tube helicity and the Seifert-section flux reduce to this
    integral, so a cached value is shared between them.
    """

    def density(pts):
        h, chi = helicity_density(ratmap, pts)
        return np.where(chi > chi0, h, 0.0)

    return integrate_compact(density, spec)


def fluxtube_helicity(ratmap: RationalMap, chi0: float, spec: QuadratureSpec | None = None) -> HelicityResult:
    """Helicity of the field restricted to the tube ``chi > chi0``.

    The restricted field ``B 1[chi > chi0]`` has the continuous potential
    ``(chi - chi0) grad eta + (1 - chi0) grad f`` inside the tube and
    ``(1 - chi0) grad f`` outside. Since ``grad eta . B = 0`` and
    ``A_smooth . B = grad f . B``, its helicity density is
    ``(1 - chi0) A_smooth . B`` on the tube.
    """
    if not 0.0 <= chi0 <= 1.0:
        raise ValueError(f"helicity: chi0 must lie in [0, 1], got {chi0}")
    spec = spec or TUBE_SPEC
    if chi0 == 1.0:
        return HelicityResult(0.0, 0.0, "volume-quadrature", [(0, 0.0), (0, 0.0)], True)
    value, err, conv, ok = _tube_integral(ratmap, float(chi0), spec)
    k = 1.0 - chi0
    conv = [(n, k * v) for n, v in conv]
    return _finish(k * value, k * err, conv, ok, "volume-quadrature", spec, f"flux-tube integral (chi0={chi0})")


def total_energy(ratmap: RationalMap, radius: float, spec: QuadratureSpec | None = None):
    """``integral of |B|^2`` over the ball of the given radius; returns ``(value, error)``."""
    if radius <= 0:
        raise ValueError("energy: radius must be positive")
    spec = spec or QuadratureSpec()
    t_max = 2.0 / np.pi * np.arctan(radius / spec.R0)
    value, err, _, _ = integrate_compact(lambda p: energy_density(ratmap, p), spec, t_max)
    return value, err


def helicity_formula(ratmap: RationalMap):
    """Closed-form helicity, or ``None`` when neither template applies.

    Torus-family maps give ``alpha p + beta q``; maps with ``P = u^alpha`` and
    ``Q`` free of ``conj(v)`` give ``alpha * deg_v(Q)``.
    """
    if ratmap.tuning is not None:
        alpha, beta, p, q = ratmap.tuning
        return alpha * p + beta * q
    terms = ratmap.P.terms
    if len(terms) == 1:
        (a, b, c, d), _ = terms[0]
        if a >= 1 and b == c == d == 0 and not ratmap.Q.involves("vbar"):
            return a * ratmap.Q.degree("v")
    return None


# flux ---------------------------------------------------------------------

def phase_winding(ratmap: RationalMap, curves) -> int:
    """Total turns of ``arg P`` along closed curves (the nodal curves of ``Q``)."""
    total = 0.0
    for c in curves:
        pts = c.polyline()
        phase = np.angle(eval_map(ratmap, pts).P)
        step = np.angle(np.exp(1j * np.diff(phase)))
        if np.abs(step).max() > np.pi / 2:
            pts = densify(c, 0.25 * float(segment_lengths(c).min())).polyline()
            phase = np.angle(eval_map(ratmap, pts).P)
            step = np.angle(np.exp(1j * np.diff(phase)))
        total += step.sum() / (2.0 * np.pi)
    return int(round(total))


def fluxtube_flux(
    ratmap: RationalMap,
    chi0: float,
    spec: QuadratureSpec | None = None,
    section: str = "seifert",
    nodal_curves=None,
    **plane_options,
) -> float:
    """Flux of ``B`` carried by the tube ``chi > chi0``, oriented along ``B``.

    ``section="seifert"`` integrates over the part of each surface of constant
    ``f`` inside the tube, averaged over ``f`` by the coarea formula, i.e. the
    volume integral of ``B . grad f`` over the tube. That portion wraps the
    tube ``w`` times, ``w`` being the turns of ``arg P`` along the nodal curve,
    so the result is divided by ``w``. ``section="plane"`` integrates over a
    planar slice normal to the nodal curve, valid while that slice is a disk
    (thin tubes); ``plane_options`` go to :func:`plane_section_flux`.
    """
    if not 0.0 <= chi0 < 1.0:
        raise ValueError(f"flux: chi0 must lie in [0, 1), got {chi0}")
    if nodal_curves is None:
        nodal_curves = [c for c in trace_nodal_curve(ratmap.Q) if c.closed]
    if not nodal_curves:
        raise ValueError(f"flux: no closed nodal curve of Q found for {ratmap.label!r}; cannot build a cross-section")
    if section == "plane":
        return plane_section_flux(ratmap, chi0, nodal_curves[0], **plane_options)
    if section != "seifert":
        raise ValueError(f"flux: unknown section {section!r} (expected 'seifert' or 'plane')")
    w = phase_winding(ratmap, nodal_curves)
    if w == 0:
        raise ValueError("flux: arg P does not wind along the nodal curve, the Seifert section is degenerate")
    value, err, conv, ok = _tube_integral(ratmap, float(chi0), spec or TUBE_SPEC)
    if not ok:
        warnings.warn(f"flux: quadrature error estimate {err:.3g} above tolerance", ConvergenceWarning, stacklevel=2)
    return abs(value / w)


def plane_section_flux(
    ratmap: RationalMap,
    chi0: float,
    nodal_curve: Curve,
    n_angles: int = 256,
    n_radial: int = 48,
    rho_max: float = 1e3,
    vertex: int = 0,
) -> float:
    """Flux through a planar slice of the tube normal to the nodal curve.

    The slice is centred on a vertex of the nodal curve and, along each ray,
    extends to the first place where ``chi`` falls to ``chi0``.
    """
    if not 0.0 < chi0 < 1.0:
        raise ValueError(f"flux: a planar section needs chi0 in (0, 1), got {chi0}")
    zs = ZeroSet(ratmap.Q)
    p0, ok = zs.newton(nodal_curve.vertices[vertex])
    if not ok:
        raise ValueError("flux: cross-section centre did not converge onto Q = 0")
    t0 = zs.tangent(p0)
    if bfield(ratmap, p0) @ t0 < 0:
        t0 = -t0
    e1 = np.cross(t0, [1.0, 0.0, 0.0] if abs(t0[0]) < 0.9 else [0.0, 1.0, 0.0])
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(t0, e1)

    phi = (np.arange(n_angles) + 0.5) * 2 * np.pi / n_angles
    dirs = np.cos(phi)[:, None] * e1 + np.sin(phi)[:, None] * e2

    edge = _section_edges(ratmap, p0, dirs, chi0, rho_max)

    # radial Gauss-Legendre in log(1 + rho) on [0, edge]
    x, w = np.polynomial.legendre.leggauss(n_radial)
    total = 0.0
    for i in range(n_angles):
        smax = np.log1p(edge[i])
        s = 0.5 * smax * (x + 1.0)
        r = np.expm1(s)
        jac = 0.5 * smax * w * np.exp(s)
        q = p0 + dirs[i] * r[:, None]
        flux_density = bfield(ratmap, q) @ t0
        total += float(np.sum(flux_density * r * jac))
    return total * 2 * np.pi / n_angles


def _section_edges(ratmap, p0, dirs, chi0, rho_max):
    """Distance along each ray to the first point where ``chi`` reaches ``chi0``.

    Sampled on a geometric grid; a sampled local minimum is refined in case
    ``chi`` dips to ``chi0`` between samples. Rays that never reach ``chi0``
    end at ``rho_max``.
    """
    rho = np.geomspace(1e-6, rho_max, 4000)
    chi, _, _ = euler_potentials(ratmap, p0 + dirs[:, None, :] * rho[None, :, None])

    def chi_at(i, r):
        return float(euler_potentials(ratmap, p0 + dirs[i] * r)[0])

    edges = np.full(len(dirs), rho_max)
    for i in range(len(dirs)):
        below = np.flatnonzero(chi[i] <= chi0)
        stop = below[0] if len(below) else rho.size
        # sampled local minima close enough to chi0 to hide a crossing
        mins = np.flatnonzero(
            (chi[i, 1:-1] <= chi[i, :-2]) & (chi[i, 1:-1] <= chi[i, 2:]) & (chi[i, 1:-1] < chi0 + 0.05)
        ) + 1
        found = False
        for m in mins[mins < stop]:
            r_min = _golden_min(lambda r: chi_at(i, r), rho[m - 1], rho[m + 1])
            if chi_at(i, r_min) <= chi0:
                edges[i] = _bisect(lambda r: chi_at(i, r) - chi0, rho[m - 1], r_min)
                found = True
                break
        if not found and stop < rho.size:
            lo = rho[stop - 1] if stop > 0 else 0.0
            edges[i] = _bisect(lambda r: chi_at(i, r) - chi0, lo, rho[stop])
    return edges


def _bisect(g, lo, hi, iters=60):
    glo = g(lo) if lo > 0 else 1.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        gm = g(mid)
        if (gm > 0) == (glo > 0):
            lo, glo = mid, gm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _golden_min(g, lo, hi, iters=60):
    invphi = (np.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    gc, gd = g(c), g(d)
    for _ in range(iters):
        if gc < gd:
            b, d, gd = d, c, gc
            c = b - invphi * (b - a)
            gc = g(c)
        else:
            a, c, gc = c, d, gd
            d = a + invphi * (b - a)
            gd = g(d)
    return 0.5 * (a + b)


# linking ------------------------------------------------------------------

def _linking_pairs(a0, a1, b0, b1):
    """Signed solid-angle contribution of segment pairs (exact for straight segments)."""
    r13 = b0 - a0
    r14 = b1 - a0
    r23 = b0 - a1
    r24 = b1 - a1

    def unit(v):
        n = np.linalg.norm(v, axis=-1, keepdims=True)
        return np.divide(v, n, out=np.zeros_like(v), where=n > 0)

    n1 = unit(np.cross(r13, r14))
    n2 = unit(np.cross(r14, r24))
    n3 = unit(np.cross(r24, r23))
    n4 = unit(np.cross(r23, r13))

    def asin_dot(p, q):
        return np.arcsin(np.clip(np.einsum("...i,...i->...", p, q), -1.0, 1.0))

    omega = asin_dot(n1, n2) + asin_dot(n2, n3) + asin_dot(n3, n4) + asin_dot(n4, n1)
    sign = np.sign(np.einsum("...i,...i->...", np.cross(b1 - b0, a1 - a0), r13))
    return omega * sign


def gauss_linking(c1: Curve, c2: Curve, tol: float = 0.05, check_separation: bool = True):
    """Gauss linking number of two closed polylines.

    Each segment pair contributes the exact Gauss double integral over the two
    straight segments (a signed solid angle over ``4 pi``). Returns
    ``(raw, nearest_integer)``.
    """
    for name, c in (("first", c1), ("second", c2)):
        if not c.closed:
            raise LinkingError(f"linking: {name} curve is open")
    A = c1.polyline()
    Bv = c2.polyline()
    if check_separation:
        seg = max(np.linalg.norm(np.diff(A, axis=0), axis=1).max(), np.linalg.norm(np.diff(Bv, axis=0), axis=1).max())
        from scipy.spatial import cKDTree

        dmin = cKDTree(Bv).query(A)[0].min()
        if dmin <= 10 * seg:
            raise LinkingError(
                f"linking: curves nearly intersect (min distance {dmin:.3g} <= 10 x segment length {seg:.3g})"
            )
    a0, a1 = A[:-1], A[1:]
    b0, b1 = Bv[:-1], Bv[1:]
    total = 0.0
    block = max(1, 2_000_000 // max(len(b0), 1))
    for i in range(0, len(a0), block):
        total += float(
            _linking_pairs(a0[i : i + block, None, :], a1[i : i + block, None, :], b0[None], b1[None]).sum()
        )
    raw = total / (4 * np.pi)
    nearest = int(round(raw))
    if abs(raw - nearest) > tol:
        raise LinkingError(f"linking: raw value {raw:.4f} is not within {tol} of an integer")
    return raw, nearest


def gauss_linking_quadrature(c1: Curve, c2: Curve) -> float:
    """Midpoint-rule Gauss double integral; a slow, independent cross-check."""
    A, Bv = c1.polyline(), c2.polyline()
    ma, da = 0.5 * (A[1:] + A[:-1]), np.diff(A, axis=0)
    mb, db = 0.5 * (Bv[1:] + Bv[:-1]), np.diff(Bv, axis=0)
    r = ma[:, None, :] - mb[None, :, :]
    num = np.einsum("ijk,ijk->ij", r, np.cross(da[:, None, :], db[None, :, :]))
    return float((num / np.linalg.norm(r, axis=-1) ** 3).sum() / (4 * np.pi))


def _sagitta(curve: Curve) -> float:
    """Largest estimated gap between a polygon segment and the smooth curve it samples."""
    pts = curve.polyline()
    seg = np.diff(pts, axis=0)
    lengths = np.linalg.norm(seg, axis=1)
    unit = seg / lengths[:, None]
    turn = np.arccos(np.clip(np.einsum("ij,ij->i", unit[1:], unit[:-1]), -1.0, 1.0))
    return float((lengths[1:] * turn).max() / 8.0) if len(turn) else 0.0


def _checked_linking(a: Curve, b: Curve) -> float:
    from scipy.spatial import cKDTree

    dmin = cKDTree(b.vertices).query(a.vertices)[0].min()
    if dmin <= 4.0 * max(_sagitta(a), _sagitta(b)):
        raise LinkingError(f"linking: preimages too close ({dmin:.3g}) for their polygon resolution")
    return gauss_linking(a, b, check_separation=False)[0]


def hopf_invariant_linking(
    ratmap: RationalMap,
    c_values=DEFAULT_LEVELS,
    params: TraceParams | None = None,
    bounds=(-3.0, 3.0),
    dims: int = 48,
) -> int:
    """Hopf invariant as the total linking of the preimages of two regular values."""
    return hopf_invariant_linking_result(ratmap, c_values, params, bounds, dims).value_int


@dataclass
class LinkingResult(HelicityResult):
    value_int: int = 0
    components: tuple = ()

    def as_dict(self) -> dict:
        out = super().as_dict()
        out["value_int"] = self.value_int
        out["components"] = list(self.components)
        return out


def hopf_invariant_linking_result(ratmap, c_values=DEFAULT_LEVELS, params=None, bounds=(-3.0, 3.0), dims=48) -> LinkingResult:
    c1, c2 = c_values
    if c1 == c2:
        raise ValueError("linking: the two level values must differ")
    params = params or TraceParams()
    sets = []
    for c in (c1, c2):
        comps = trace_components(ZeroSet.level(ratmap, c), params, bounds, dims)
        for k, comp in enumerate(comps):
            if not comp.closed:
                raise LinkingError(f"linking: component {k} of psi = {complex(c)} did not close (gap {comp.closure_gap:.3g})")
        if not comps:
            raise LinkingError(f"linking: no component of psi = {complex(c)} found; value may be critical or outside the scan box")
        sets.append(comps)
    raw_total = 0.0
    for a in sets[0]:
        for b in sets[1]:
            raw_total += _checked_linking(a, b)
    n = int(round(raw_total))
    return LinkingResult(
        value=float(n),
        error_estimate=abs(raw_total - n),
        method="preimage-linking",
        convergence=[(len(sets[0]) + len(sets[1]), raw_total)],
        converged=True,
        value_int=n,
        components=(len(sets[0]), len(sets[1])),
    )
