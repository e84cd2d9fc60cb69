"""Field lines of ``B``, level curves of ``psi`` and nodal curves of polynomials.

Level curves ``psi = c`` are traced as the zero set of ``G = P - c Q``, which
has the same zeros away from common zeros of ``P`` and ``Q`` but no poles;
``c = inf`` traces ``Q = 0``. The orientation ``Im(conj(grad G) x grad G)``
agrees with ``B`` on the curve, so level curves and field lines through the
same point are the same oriented loop.

Seeding from a lattice is heuristic: a component that never comes within
about one lattice cell of a lattice node can be missed.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.spatial import cKDTree

from .field import bfield
from .ratmap import ComplexPolynomial, RationalMap, poly_value_and_gradient, stereographic

logger = logging.getLogger(__name__)


class TraceError(RuntimeError):
    pass


@dataclass(frozen=True)
class TraceParams:
    """Step control and termination for all tracers.

    ``max_step`` is measured on the 3-sphere: the Euclidean step cap at ``x``
    is ``max_step * (1 + |x|^2) / 2``.
    """

    initial_step: float = 0.01
    tolerance: float = 1e-9
    max_steps: int = 50_000
    closure_tol: float = 1e-3
    max_arc_length: float = 500.0
    max_step: float = 0.02
    box: float = 1e3

    def __post_init__(self):
        for name in ("initial_step", "tolerance", "max_steps", "closure_tol", "max_arc_length", "max_step", "box"):
            if not getattr(self, name) > 0:
                raise ValueError(f"TraceParams.{name} must be positive, got {getattr(self, name)!r}")


@dataclass(frozen=True)
class Curve:
    """Polyline in R^3.

    For a closed curve the first vertex is not repeated; the closing segment
    from the last vertex back to the first is implied and counted in
    ``arc_length``. ``closure_gap`` is the distance by which the traced path
    missed its starting point when it came back around.
    """

    vertices: np.ndarray
    closed: bool
    closure_gap: float = float("nan")
    tags: dict = field(default_factory=dict)

    @property
    def arc_length(self) -> float:
        return float(segment_lengths(self).sum())

    def polyline(self) -> np.ndarray:
        """Vertices with the first repeated at the end when closed."""
        if self.closed:
            return np.vstack([self.vertices, self.vertices[:1]])
        return self.vertices

    def reversed(self) -> "Curve":
        return Curve(self.vertices[::-1].copy(), self.closed, self.closure_gap, dict(self.tags))

    def __len__(self):
        return len(self.vertices)


def segment_lengths(curve: Curve) -> np.ndarray:
    return np.linalg.norm(np.diff(curve.polyline(), axis=0), axis=1)


def densify(curve: Curve, max_segment: float) -> Curve:
    """Subdivide segments linearly so none is longer than ``max_segment``."""
    pts = curve.polyline()
    out = [pts[:1]]
    for a, b in zip(pts[:-1], pts[1:]):
        n = max(1, int(np.ceil(np.linalg.norm(b - a) / max_segment)))
        t = (np.arange(1, n + 1) / n)[:, None]
        out.append(a + t * (b - a))
    verts = np.vstack(out)
    if curve.closed:
        verts = verts[:-1]
    return Curve(verts, curve.closed, curve.closure_gap, dict(curve.tags))


def hausdorff(a: Curve, b: Curve, resolution: float | None = None) -> float:
    """Symmetric Hausdorff distance between two polylines.

    Vertices of each curve (densified to ``resolution`` when given) are
    measured against the segments of the other, so the result does not
    depend on how the vertices of the two curves interleave.
    """
    if resolution is not None:
        a, b = densify(a, resolution), densify(b, resolution)
    return max(_directed(a, b), _directed(b, a))


def _directed(a: Curve, b: Curve, k: int = 4) -> float:
    pts = a.vertices
    line = b.polyline()
    n_seg = len(line) - 1
    if n_seg < 1:
        return float(np.linalg.norm(pts - line[0], axis=1).max())
    _, idx = cKDTree(b.vertices).query(pts, k=min(k, len(b.vertices)))
    idx = idx.reshape(len(pts), -1)
    # segments touching each nearby vertex
    segs = np.concatenate([idx, idx - 1], axis=1)
    if b.closed:
        segs %= n_seg
    segs = np.clip(segs, 0, n_seg - 1)
    p0, p1 = line[segs], line[segs + 1]
    d = p1 - p0
    t = np.einsum("nkj,nkj->nk", pts[:, None] - p0, d) / np.maximum(np.einsum("nkj,nkj->nk", d, d), 1e-300)
    foot = p0 + np.clip(t, 0.0, 1.0)[..., None] * d
    return float(np.linalg.norm(pts[:, None] - foot, axis=2).min(axis=1).max())


# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])


def _dp_step(rhs, x, h, k1):
    k = [k1]
    for i in range(1, 7):
        xi = x + h * sum(a * kj for a, kj in zip(_A[i], k))
        k.append(rhs(xi))
    K = np.array(k)
    x5 = x + h * (_B5 @ K)
    err = h * np.linalg.norm((_B5 - _B4) @ K)
    return x5, err, k[6]


def _step_cap(params: TraceParams, x) -> float:
    return params.max_step * 0.5 * (1.0 + float(x @ x))


def _unit_b(ratmap: RationalMap, sign: float):
    def rhs(x):
        b = bfield(ratmap, x)
        n = np.linalg.norm(b)
        if n < 1e-300:
            raise TraceError(f"trace: field vanishes at {x.tolist()}")
        return sign * b / n

    return rhs


def trace_fieldline(ratmap: RationalMap, seed, params: TraceParams | None = None, backward: bool = False) -> Curve:
    """Integrate ``dx/ds = B/|B|`` from ``seed`` with adaptive Dormand-Prince steps.

    Stops on closure (the path re-crosses the plane through the seed normal to
    the initial tangent within ``closure_tol`` of the seed, heading the same
    way), ``max_steps``, ``max_arc_length`` or leaving the box ``|x_i| < box``.
    """
    params = params or TraceParams()
    seed = np.asarray(seed, dtype=float).reshape(3)
    b0 = np.linalg.norm(bfield(ratmap, seed))
    if b0 <= 1e-12:
        raise TraceError(f"trace: zero-field seed {seed.tolist()} (|B| = {b0:.3g})")
    rhs = _unit_b(ratmap, -1.0 if backward else 1.0)

    t0 = rhs(seed)
    x, k1 = seed.copy(), t0
    h = params.initial_step
    s = 0.0
    verts = [seed.copy()]
    gap = float("nan")
    closed = False
    steps = 0
    while steps < params.max_steps:
        h = min(h, _step_cap(params, x))
        x_new, err, k_new = _dp_step(rhs, x, h, k1)
        if err > params.tolerance:
            h *= max(0.2, 0.9 * (params.tolerance / err) ** 0.2)
            if h < 1e-12:
                raise TraceError(f"trace: step size underflow near {x.tolist()}")
            continue
        steps += 1
        if s > 10 * params.initial_step:
            hit = _closure_crossing(seed, t0, x, x_new, params)
            if hit:
                h_star = brentq(lambda hh: (_dp_step(rhs, x, hh, k1)[0] - seed) @ t0, 0.0, h, xtol=1e-14)
                x_star = _dp_step(rhs, x, h_star, k1)[0]
                gap = float(np.linalg.norm(x_star - seed))
                if gap < params.closure_tol and rhs(x_star) @ t0 > 0.9:
                    closed = True
                    break
        s += h
        x, k1 = x_new, k_new
        verts.append(x.copy())
        if s > params.max_arc_length or np.any(np.abs(x) > params.box):
            break
        if err > 0:
            h *= min(5.0, 0.9 * (params.tolerance / err) ** 0.2)
        else:
            h *= 5.0
    curve = Curve(np.array(verts), closed, gap if closed else float(np.linalg.norm(verts[-1] - seed)))
    if not closed:
        logger.info("field line from %s did not close after %d steps", seed.tolist(), steps)
    return curve


def _closure_crossing(seed, t0, x0, x1, params) -> bool:
    g0 = (x0 - seed) @ t0
    g1 = (x1 - seed) @ t0
    if not (g0 < 0.0 <= g1):
        return False
    xc = x0 + (x1 - x0) * (g0 / (g0 - g1))
    return np.linalg.norm(xc - seed) < max(10 * params.closure_tol, 0.25 * np.linalg.norm(x1 - x0))


# zero sets ---------------------------------------------------------------

class ZeroSet:
    """Zero set of a complex polynomial ``G`` of the sphere coordinates."""

    def __init__(self, poly: ComplexPolynomial, label: str = ""):
        if poly.is_zero:
            raise ValueError("zero set of the zero polynomial is all of space")
        self.poly = poly
        self.label = label

    @classmethod
    def level(cls, ratmap: RationalMap, c) -> "ZeroSet":
        """``psi = c``; ``c = None`` or ``inf`` selects ``Q = 0``."""
        if c is None or (np.isscalar(c) and np.isinf(abs(c))):
            return cls(ratmap.Q, f"{ratmap.label}: Q = 0")
        return cls(ratmap.P - ratmap.Q * complex(c), f"{ratmap.label}: psi = {complex(c)}")

    def evaluate(self, x):
        return poly_value_and_gradient(self.poly, stereographic(x))

    def tangent(self, x) -> np.ndarray:
        _, dG = self.evaluate(x)
        t = np.imag(np.cross(np.conj(dG), dG))
        return t / np.linalg.norm(t, axis=-1, keepdims=True)

    def newton(self, x, tol: float = 1e-12, max_iter: int = 12):
        """Minimum-norm Newton projection onto ``G = 0``; batched over ``(..., 3)``.

        Returns ``(x, converged)``.
        """
        x = np.array(x, dtype=float)
        conv = np.zeros(x.shape[:-1], dtype=bool)
        for _ in range(max_iter):
            G, dG = self.evaluate(x)
            J = np.stack([dG.real, dG.imag], axis=-2)
            g = np.stack([G.real, G.imag], axis=-1)
            JJt = J @ np.swapaxes(J, -1, -2)
            det = JJt[..., 0, 0] * JJt[..., 1, 1] - JJt[..., 0, 1] * JJt[..., 1, 0]
            ok = np.abs(det) > 1e-300
            safe = np.where(ok[..., None, None], JJt, np.eye(2))
            y = np.linalg.solve(safe, g[..., None])[..., 0]
            delta = (np.swapaxes(J, -1, -2) @ y[..., None])[..., 0]
            delta = np.where(ok[..., None], delta, 0.0)
            x = x - delta
            step = np.linalg.norm(delta, axis=-1)
            conv = ok & (step <= tol * (1.0 + np.linalg.norm(x, axis=-1)))
            if np.all(conv):
                break
        G, _ = self.evaluate(x)
        finite = np.all(np.isfinite(x), axis=-1)
        return x, conv & finite


def lattice_points(bounds=(-3.0, 3.0), dims: int = 48) -> np.ndarray:
    lo, hi = bounds
    axis = np.linspace(lo, hi, dims)
    X, Y, Z = np.meshgrid(axis, axis, axis, indexing="ij")
    return np.stack([X, Y, Z], axis=-1)


def find_seeds(zs: ZeroSet, bounds=(-3.0, 3.0), dims: int = 48) -> np.ndarray:
    """Lattice nodes within about one cell of the zero set, Newton-projected onto it.

    Candidates are nodes whose linearised distance ``|J^+ g|`` is below the
    cell diagonal and is a local minimum along two lattice axes, or which
    are very close to the curve.
    """
    grid = lattice_points(bounds, dims)
    cell = (bounds[1] - bounds[0]) / (dims - 1)
    G, dG = zs.evaluate(grid)
    J = np.stack([dG.real, dG.imag], axis=-2)
    JJt = J @ np.swapaxes(J, -1, -2)
    det = JJt[..., 0, 0] * JJt[..., 1, 1] - JJt[..., 0, 1] ** 2
    g = np.stack([G.real, G.imag], axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.linalg.solve(np.where((det > 1e-300)[..., None, None], JJt, np.eye(2)), g[..., None])[..., 0]
    dist = np.linalg.norm((np.swapaxes(J, -1, -2) @ y[..., None])[..., 0], axis=-1)
    dist = np.where(det > 1e-300, dist, np.inf)

    # |G| itself can decay along the curve (u on the z axis), so minima are
    # taken of the linearised distance; a curve running along one lattice
    # axis is only a minimum across the other two
    min_axes = np.zeros(dist.shape, dtype=int)
    for ax in range(3):
        is_min = np.ones(dist.shape, dtype=bool)
        for shift in (1, -1):
            nb = np.roll(dist, shift, axis=ax)
            edge = [slice(None)] * 3
            edge[ax] = 0 if shift == 1 else -1
            nb[tuple(edge)] = np.inf
            is_min &= dist <= nb
        min_axes += is_min
    local_min = min_axes >= 2
    candidates = (dist < np.sqrt(3) * cell) & (local_min | (dist < 0.5 * cell))
    start = grid[candidates]
    if len(start) == 0:
        return np.empty((0, 3))
    x, ok = zs.newton(start)
    x = x[ok]
    # stay near where the seed came from
    near = np.linalg.norm(x - start[ok], axis=1) < 2 * np.sqrt(3) * cell
    inside = np.all((x >= bounds[0]) & (x <= bounds[1]), axis=1)
    return x[near & inside]


def trace_zero_set(zs: ZeroSet, seed, params: TraceParams | None = None, backward: bool = False) -> Curve:
    """Predictor-corrector tracing of one component of ``G = 0`` through ``seed``."""
    params = params or TraceParams()
    x, ok = zs.newton(np.asarray(seed, dtype=float))
    if not ok:
        raise TraceError(f"trace: Newton projection of seed {np.asarray(seed).tolist()} did not converge ({zs.label})")
    sign = -1.0 if backward else 1.0
    seed = x.copy()
    t0 = sign * zs.tangent(seed)
    t = t0
    h = params.initial_step
    s = 0.0
    verts = [seed.copy()]
    closed = False
    gap = float("nan")
    max_angle = 0.1
    steps = 0
    while steps < params.max_steps:
        h = min(h, _step_cap(params, x))
        if h < 1e-10:
            raise TraceError(f"trace: step size underflow near {x.tolist()} ({zs.label})")
        t_mid = sign * zs.tangent(x + 0.5 * h * t)
        pred = x + h * t_mid
        xn, ok = zs.newton(pred)
        if not ok or np.linalg.norm(xn - pred) > 0.2 * h:
            h *= 0.5
            continue
        tn = sign * zs.tangent(xn)
        cos = float(np.clip(tn @ t, -1.0, 1.0))
        if np.arccos(cos) > max_angle:
            h *= 0.5
            continue
        steps += 1
        if s > 10 * params.initial_step and _closure_crossing(seed, t0, x, xn, params):
            g0, g1 = (x - seed) @ t0, (xn - seed) @ t0
            xc, ok = zs.newton(x + (xn - x) * (g0 / (g0 - g1)))
            if ok:
                gap = float(np.linalg.norm(xc - seed))
                if gap < params.closure_tol and sign * zs.tangent(xc) @ t0 > 0.9:
                    closed = True
                    break
        s += float(np.linalg.norm(xn - x))
        x, t = xn, tn
        verts.append(x.copy())
        if s > params.max_arc_length or np.any(np.abs(x) > params.box):
            break
        if np.arccos(cos) < 0.3 * max_angle:
            h *= 1.5
    verts = np.array(verts)
    if not closed:
        gap = float(np.linalg.norm(verts[-1] - seed))
    return Curve(verts, closed, gap, {"label": zs.label})


def _open_curve(zs, seed, params):
    fwd = trace_zero_set(zs, seed, params)
    if fwd.closed:
        return fwd
    bwd = trace_zero_set(zs, seed, params, backward=True)
    verts = np.vstack([bwd.vertices[::-1], fwd.vertices[1:]])
    return Curve(verts, False, float(np.linalg.norm(verts[-1] - verts[0])), {"label": zs.label})


def trace_components(
    zs: ZeroSet,
    params: TraceParams | None = None,
    bounds=(-3.0, 3.0),
    dims: int = 48,
    seeds=None,
) -> list:
    """All components of a zero set reachable from lattice seeds, deduplicated."""
    params = params or TraceParams()
    if seeds is None:
        seeds = find_seeds(zs, bounds, dims)
    seeds = np.asarray(seeds, dtype=float).reshape(-1, 3)
    cell = (bounds[1] - bounds[0]) / (dims - 1)
    radius = 0.25 * cell
    curves: list = []
    remaining = seeds
    while len(remaining):
        curve = _open_curve(zs, remaining[0], params)
        dense = densify(curve, 0.5 * radius)
        if any(hausdorff(dense, c, 0.5 * radius) < radius for c in curves):
            # re-found a known component from a stray seed
            remaining = remaining[1:]
            continue
        curves.append(curve)
        d, _ = cKDTree(dense.vertices).query(remaining)
        remaining = remaining[d > radius]
    return curves


def trace_level_curve(ratmap: RationalMap, c, seed, params: TraceParams | None = None) -> Curve:
    """Level curve ``psi = c`` through (the Newton projection of) ``seed``."""
    zs = ZeroSet.level(ratmap, c)
    curve = _open_curve(zs, seed, params or TraceParams())
    return curve


def level_curves(ratmap: RationalMap, c, params=None, bounds=(-3.0, 3.0), dims: int = 48) -> list:
    return trace_components(ZeroSet.level(ratmap, c), params, bounds, dims)


def trace_nodal_curve(poly: ComplexPolynomial, bounds=(-3.0, 3.0), dims: int = 48, params: TraceParams | None = None) -> list:
    """Components of ``poly = 0`` found from a lattice scan of ``bounds^3``.

    Curves leaving the box are clipped there and returned open. A polynomial
    without zeros in the box (e.g. a constant) yields an empty list.
    """
    params = params or TraceParams()
    box = max(abs(bounds[0]), abs(bounds[1]))
    params = TraceParams(**{**params.__dict__, "box": min(params.box, box)})
    zs = ZeroSet(poly, "nodal")
    return trace_components(zs, params, bounds, dims)


# diagnostics --------------------------------------------------------------

def _segments_intersect(p1, p2, q1, q2):
    def orient(a, b, c):
        return (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0])

    d1 = orient(q1, q2, p1)
    d2 = orient(q1, q2, p2)
    d3 = orient(p1, p2, q1)
    d4 = orient(p1, p2, q2)
    return (d1 * d2 < 0) & (d3 * d4 < 0)


def projection_crossings(curve: Curve, axis: int) -> int:
    """Number of self-crossings of the polyline projected along ``axis``."""
    keep = [k for k in range(3) if k != axis]
    pts = curve.polyline()[:, keep]
    a, b = pts[:-1], pts[1:]
    n = len(a)
    count = 0
    for i in range(n):
        j = np.arange(i + 2, n)
        if curve.closed and i == 0:
            j = j[j != n - 1]
        if len(j) == 0:
            continue
        hit = _segments_intersect(a[i], b[i], a[j], b[j])
        count += int(hit.sum())
    return count


def crossing_numbers(curve: Curve) -> tuple:
    """Self-crossing counts of the projections along x, y and z."""
    return tuple(projection_crossings(curve, ax) for ax in range(3))
