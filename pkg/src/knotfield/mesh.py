"""Regular-grid sampling, isosurfaces, mesh topology and file export.

Grids store values in x-fastest order, i.e. ``values.reshape(nz, ny, nx)``
for scalars. Invalid samples (poles, degenerate points) are NaN and poison
every marching cube that touches them.
"""
from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.spatial import cKDTree
from scipy.sparse.csgraph import connected_components
from skimage.measure import marching_cubes

from . import field as fld
from .ratmap import RationalMap, eval_map
from .trace import Curve, densify

SCALAR_QUANTITIES = ("chi", "eta", "f", "energy", "helicity")
VECTOR_QUANTITIES = ("B", "A_smooth", "A_naive")
CIRCULAR_QUANTITIES = ("eta", "f")
DEGENERATE_AREA = 1e-14


# grids --------------------------------------------------------------------

def _check_box(bounds, dims):
    bounds = np.asarray(bounds, dtype=float)
    if bounds.shape == (2,):
        bounds = np.array([bounds] * 3)
    if bounds.shape != (3, 2) or np.any(bounds[:, 1] <= bounds[:, 0]):
        raise ValueError(f"mesh: bounds must be three (lo, hi) pairs with lo < hi, got {bounds.tolist()}")
    dims = np.broadcast_to(np.asarray(dims, dtype=int), (3,)).copy()
    if np.any(dims < 2):
        raise ValueError(f"mesh: dims must be >= 2 per axis, got {dims.tolist()}")
    return bounds, tuple(int(d) for d in dims)


@dataclass(frozen=True)
class ScalarGrid:
    """Scalar samples on a uniform box grid; ``values`` has ``prod(dims)`` entries, x fastest."""

    bounds: np.ndarray
    dims: tuple
    values: np.ndarray
    quantity: str = "custom"

    def __post_init__(self):
        b, d = _check_box(self.bounds, self.dims)
        object.__setattr__(self, "bounds", b)
        object.__setattr__(self, "dims", d)
        v = np.asarray(self.values, dtype=float).reshape(-1)
        if v.size != int(np.prod(d)):
            raise ValueError(f"mesh: grid needs {int(np.prod(d))} values, got {v.size}")
        object.__setattr__(self, "values", v)

    @property
    def spacing(self) -> np.ndarray:
        return (self.bounds[:, 1] - self.bounds[:, 0]) / (np.array(self.dims) - 1)

    @property
    def origin(self) -> np.ndarray:
        return self.bounds[:, 0].copy()

    def volume(self) -> np.ndarray:
        """Values as an array indexed ``[i, j, k]`` along ``x, y, z``."""
        nx, ny, nz = self.dims
        return self.values.reshape(nz, ny, nx).transpose(2, 1, 0)

    def points(self) -> np.ndarray:
        return grid_points(self.bounds, self.dims)

    def interpolate(self, pts) -> np.ndarray:
        """Trilinear interpolation at ``pts`` (NaN outside the box)."""
        from scipy.interpolate import RegularGridInterpolator

        axes = [np.linspace(lo, hi, n) for (lo, hi), n in zip(self.bounds, self.dims)]
        interp = RegularGridInterpolator(axes, self.volume(), bounds_error=False, fill_value=np.nan)
        return interp(np.asarray(pts, dtype=float))


@dataclass(frozen=True)
class VectorGrid:
    """Vector samples; ``values`` has shape ``(prod(dims), 3)``, x fastest."""

    bounds: np.ndarray
    dims: tuple
    values: np.ndarray
    quantity: str = "custom"

    def __post_init__(self):
        b, d = _check_box(self.bounds, self.dims)
        object.__setattr__(self, "bounds", b)
        object.__setattr__(self, "dims", d)
        v = np.asarray(self.values, dtype=float).reshape(-1, 3)
        if v.shape[0] != int(np.prod(d)):
            raise ValueError(f"mesh: grid needs {int(np.prod(d))} vectors, got {v.shape[0]}")
        object.__setattr__(self, "values", v)

    @property
    def spacing(self) -> np.ndarray:
        return (self.bounds[:, 1] - self.bounds[:, 0]) / (np.array(self.dims) - 1)

    @property
    def origin(self) -> np.ndarray:
        return self.bounds[:, 0].copy()

    def points(self) -> np.ndarray:
        return grid_points(self.bounds, self.dims)


def grid_points(bounds, dims) -> np.ndarray:
    """Grid nodes as an ``(N, 3)`` array in x-fastest order."""
    bounds, dims = _check_box(bounds, dims)
    axes = [np.linspace(lo, hi, n) for (lo, hi), n in zip(bounds, dims)]
    z, y, x = np.meshgrid(axes[2], axes[1], axes[0], indexing="ij")
    return np.stack([x.ravel(), y.ravel(), z.ravel()], axis=-1)


def evaluate_quantity(ratmap: RationalMap, quantity: str, pts: np.ndarray) -> np.ndarray:
    ev = eval_map(ratmap, pts)
    bad = np.abs(ev.P) ** 2 + np.abs(ev.Q) ** 2 < 1e-300
    if bad.any():
        if bad.all():
            shape = (len(pts), 3) if quantity in VECTOR_QUANTITIES else (len(pts),)
            return np.full(shape, np.nan)
        pts = pts.copy()
        pts[bad] = pts[np.flatnonzero(~bad)[0]]

    if quantity == "chi":
        out = fld.euler_potentials(ratmap, pts)[0]
    elif quantity == "eta":
        out = fld.euler_potentials(ratmap, pts)[1]
    elif quantity == "f":
        out = fld.gauge_phase(ratmap, pts)[0]
    elif quantity == "energy":
        out = fld.energy_density(ratmap, pts)
    elif quantity == "helicity":
        out = fld.helicity_density(ratmap, pts)[0]
    elif quantity == "B":
        out = fld.bfield(ratmap, pts)
    elif quantity == "A_smooth":
        out = fld.vecpot_smooth(ratmap, pts)
    elif quantity == "A_naive":
        out = fld.vecpot_naive(ratmap, pts)[0]
    else:
        known = ", ".join(SCALAR_QUANTITIES + VECTOR_QUANTITIES)
        raise ValueError(f"mesh: unknown quantity {quantity!r} (expected one of {known})")
    out = np.array(out, dtype=float)
    out[bad] = np.nan
    return out


def sample_grid(ratmap: RationalMap, quantity: str, bounds=(-3.0, 3.0), dims=96, workers: int = 1):
    """Sample a field quantity on a uniform grid.

    Slabs of constant ``z`` are evaluated independently (in parallel when
    ``workers > 1``) and concatenated in order, so the result does not depend
    on ``workers``.
    """
    bounds, dims = _check_box(bounds, dims)
    pts = grid_points(bounds, dims)
    slabs = np.array_split(pts, dims[2])
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda p: evaluate_quantity(ratmap, quantity, p), slabs))
    else:
        parts = [evaluate_quantity(ratmap, quantity, p) for p in slabs]
    values = np.concatenate(parts)
    cls = VectorGrid if quantity in VECTOR_QUANTITIES else ScalarGrid
    return cls(bounds, dims, values, quantity)


# meshes -------------------------------------------------------------------

@dataclass(frozen=True)
class TriMesh:
    vertices: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    triangles: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))
    normals: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise ValueError("mesh: triangle index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        if self.normals is not None:
            object.__setattr__(self, "normals", np.asarray(self.normals, dtype=float).reshape(-1, 3))

    @property
    def empty(self) -> bool:
        return len(self.triangles) == 0

    def triangle_areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.triangles[:, k]] for k in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def cleanup(mesh: TriMesh, merge_tol: float = 1e-12) -> TriMesh:
    """Merge coincident vertices, drop degenerate triangles and unused vertices."""
    if mesh.empty:
        return TriMesh(normals=None)
    v = mesh.vertices
    key = np.round(v / merge_tol).astype(np.int64) if merge_tol > 0 else v
    _, first, inverse = np.unique(key, axis=0, return_index=True, return_inverse=True)
    # keep the first occurrence order for determinism
    order = np.argsort(first)
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    remap = rank[inverse.reshape(-1)]
    verts = v[first[order]]
    normals = mesh.normals[first[order]] if mesh.normals is not None else None
    tri = remap[mesh.triangles]
    distinct = (tri[:, 0] != tri[:, 1]) & (tri[:, 1] != tri[:, 2]) & (tri[:, 0] != tri[:, 2])
    tri = tri[distinct]
    m = TriMesh(verts, tri, normals)
    tri = tri[m.triangle_areas() >= DEGENERATE_AREA]
    used = np.zeros(len(verts), bool)
    used[tri.ravel()] = True
    new_index = np.cumsum(used) - 1
    return TriMesh(
        verts[used], new_index[tri], normals[used] if normals is not None else None
    )


def isosurface(grid: ScalarGrid, level: float) -> TriMesh:
    """Marching-cubes surface ``value = level``; empty if ``level`` is outside the data.

    Circular quantities (``f``, ``eta``) are shifted so that ``level`` maps to
    0.5 and cubes whose corner values jump by more than 0.5 (the cut) are
    skipped, as are cubes touching a NaN sample.
    """
    vol = grid.volume()
    circular = grid.quantity in CIRCULAR_QUANTITIES
    if circular:
        vol = np.mod(vol - level + 0.5, 1.0)
        target = 0.5
    else:
        target = float(level)

    finite = np.isfinite(vol)
    if not finite.any():
        return TriMesh()
    lo, hi = np.nanmin(vol), np.nanmax(vol)
    if not lo < target < hi:
        return TriMesh()

    corners = [vol[i:vol.shape[0] - 1 + i, j:vol.shape[1] - 1 + j, k:vol.shape[2] - 1 + k]
               for i in (0, 1) for j in (0, 1) for k in (0, 1)]
    stack = np.stack(corners)
    bad_cube = ~np.all(np.isfinite(stack), axis=0)
    if circular:
        with np.errstate(invalid="ignore"):
            bad_cube |= (np.nanmax(stack, axis=0) - np.nanmin(stack, axis=0)) > 0.5
    # skimage visits cube (i, j, k) only when mask[i + 1, j + 1, k + 1] is set
    mask = np.ones(vol.shape, bool)
    mask[1:, 1:, 1:] = ~bad_cube
    filled = np.where(finite, vol, target)
    if not np.any(mask[1:, 1:, 1:]):
        return TriMesh()
    try:
        verts, faces, normals, _ = marching_cubes(filled, target, mask=mask, method="lewiner")
    except (ValueError, RuntimeError):
        return TriMesh()
    if len(faces) == 0:
        return TriMesh()
    idx = _refine_on_edges(filled, target, verts)
    return cleanup(TriMesh(idx * grid.spacing + grid.origin, faces, normals))


def _refine_on_edges(vol, target, verts):
    """Redo the edge interpolation in double precision (skimage works in float32)."""
    idx = verts.astype(np.float64)
    near = np.rint(idx)
    frac = np.abs(idx - near)
    axis = np.argmax(frac, axis=1)
    on_edge = frac[np.arange(len(idx)), axis] > 1e-6
    rows = np.flatnonzero(on_edge)
    if len(rows) == 0:
        return idx
    a = axis[rows]
    base = near[rows].astype(np.int64)
    base[np.arange(len(rows)), a] = np.floor(idx[rows, a]).astype(np.int64)
    step = np.zeros_like(base)
    step[np.arange(len(rows)), a] = 1
    top = np.minimum(base + step, np.array(vol.shape) - 1)
    v0 = vol[tuple(base.T)]
    v1 = vol[tuple(top.T)]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (target - v0) / (v1 - v0)
    good = np.isfinite(t) & (t >= 0) & (t <= 1)
    idx[rows[good], a[good]] = base[good, a[good]] + t[good]
    return idx


def clip_mesh(mesh: TriMesh, radius: float, center=(0.0, 0.0, 0.0)) -> TriMesh:
    """Keep triangles whose vertices all lie inside the ball."""
    if mesh.empty:
        return mesh
    inside = np.linalg.norm(mesh.vertices - np.asarray(center), axis=1) < radius
    tri = mesh.triangles[np.all(inside[mesh.triangles], axis=1)]
    return cleanup(TriMesh(mesh.vertices, tri, mesh.normals), merge_tol=0.0)


@dataclass(frozen=True)
class MeshDiagnostics:
    components: int
    euler_characteristic: tuple
    boundary_loops: int
    area: float
    non_manifold_edges: int
    orientation_consistent: bool

    @property
    def total_euler_characteristic(self) -> int:
        return int(sum(self.euler_characteristic))

    def as_dict(self) -> dict:
        return {
            "components": self.components,
            "euler_characteristic": list(self.euler_characteristic),
            "boundary_loops": self.boundary_loops,
            "area": self.area,
            "non_manifold_edges": self.non_manifold_edges,
            "orientation_consistent": self.orientation_consistent,
        }


def _edges(tri):
    e = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
    return e


def boundary_edges(mesh: TriMesh) -> np.ndarray:
    """Undirected edges used by exactly one triangle."""
    if mesh.empty:
        return np.zeros((0, 2), dtype=np.int64)
    und = np.sort(_edges(mesh.triangles), axis=1)
    uniq, counts = np.unique(und, axis=0, return_counts=True)
    return uniq[counts == 1]


def boundary_loops(mesh: TriMesh) -> list:
    """Vertex index sets of each connected chain of boundary edges."""
    be = boundary_edges(mesh)
    if len(be) == 0:
        return []
    verts, local = np.unique(be, return_inverse=True)
    local = local.reshape(-1, 2)
    n = len(verts)
    g = coo_matrix((np.ones(len(local)), (local[:, 0], local[:, 1])), shape=(n, n))
    k, labels = connected_components(g, directed=False)
    return [verts[labels == i] for i in range(k)]


def boundary_deviation(mesh: TriMesh, curves, keep_inside: float, resolution: float) -> float:
    """Largest distance from a boundary vertex to the nearest of ``curves``.

    Boundary vertices within ``resolution`` of the clip region's edge (the
    ball ``|x| < keep_inside``) are ignored, so only boundary the surface
    owns, not boundary made by clipping, is measured. NaN if none is left.
    """
    be = boundary_edges(mesh)
    if len(be) == 0 or not curves:
        return float("nan")
    v = mesh.vertices[np.unique(be)]
    v = v[np.linalg.norm(v, axis=1) < keep_inside - resolution]
    if len(v) == 0:
        return float("nan")
    pts = np.concatenate([densify(c, 0.1 * resolution).vertices for c in curves])
    return float(cKDTree(pts).query(v)[0].max())


def mesh_diagnostics(mesh: TriMesh) -> MeshDiagnostics:
    """Exact topology numbers from the combinatorial mesh."""
    if mesh.empty:
        return MeshDiagnostics(0, (), 0, 0.0, 0, True)
    tri = mesh.triangles
    nv = len(mesh.vertices)
    directed = _edges(tri)
    und = np.sort(directed, axis=1)
    uniq, inv, counts = np.unique(und, axis=0, return_inverse=True, return_counts=True)
    inv = inv.reshape(-1)

    g = coo_matrix((np.ones(len(uniq)), (uniq[:, 0], uniq[:, 1])), shape=(nv, nv))
    _, vlabel = connected_components(g, directed=False)
    used = np.zeros(nv, bool)
    used[tri.ravel()] = True
    # relabel components by their smallest vertex so output ignores vertex order
    comp_ids = np.unique(vlabel[used])
    tlabel = vlabel[tri[:, 0]]
    elabel = vlabel[uniq[:, 0]]
    chis = []
    for c in comp_ids:
        V = int(np.count_nonzero(used & (vlabel == c)))
        E = int(np.count_nonzero(elabel == c))
        F = int(np.count_nonzero(tlabel == c))
        chis.append(V - E + F)
    chis = tuple(sorted(chis))

    # an interior edge is consistently oriented when its two uses run in opposite directions
    forward = directed[:, 0] < directed[:, 1]
    fcount = np.bincount(inv, weights=forward, minlength=len(uniq))
    interior = counts == 2
    consistent = bool(np.all(fcount[interior] == 1))

    return MeshDiagnostics(
        components=len(comp_ids),
        euler_characteristic=chis,
        boundary_loops=len(boundary_loops(mesh)),
        area=float(mesh.triangle_areas().sum()),
        non_manifold_edges=int(np.count_nonzero(counts > 2)),
        orientation_consistent=consistent,
    )


# export -------------------------------------------------------------------

def _fmt(x) -> str:
    return format(float(x), ".9g")


def _rows(arr) -> str:
    return "\n".join(" ".join(_fmt(x) for x in row) for row in np.atleast_2d(arr)) + "\n"


def _grid_vtk(grids) -> str:
    g0 = grids[0]
    for g in grids[1:]:
        if g.dims != g0.dims or not np.allclose(g.bounds, g0.bounds):
            raise ValueError("mesh: grids written to one VTK file must share bounds and dims")
    out = ["# vtk DataFile Version 3.0", "knotfield grid", "ASCII", "DATASET STRUCTURED_POINTS"]
    out.append("DIMENSIONS {} {} {}".format(*g0.dims))
    out.append("ORIGIN " + " ".join(_fmt(x) for x in g0.origin))
    out.append("SPACING " + " ".join(_fmt(x) for x in g0.spacing))
    out.append(f"POINT_DATA {int(np.prod(g0.dims))}")
    text = "\n".join(out) + "\n"
    for g in grids:
        name = g.quantity or "values"
        if isinstance(g, VectorGrid):
            text += f"VECTORS {name} double\n" + _rows(g.values)
        else:
            text += f"SCALARS {name} double 1\nLOOKUP_TABLE default\n" + _rows(g.values[:, None])
    return text


def _poly_vtk(curves, meshes) -> str:
    blocks, lines, polys = [], [], []
    offset = 0
    for c in curves:
        n = len(c.vertices)
        idx = list(range(offset, offset + n)) + ([offset] if c.closed else [])
        lines.append(idx)
        blocks.append(c.vertices)
        offset += n
    for m in meshes:
        polys.extend((m.triangles + offset).tolist())
        blocks.append(m.vertices)
        offset += len(m.vertices)
    pts = np.concatenate(blocks) if blocks else np.zeros((0, 3))
    out = "# vtk DataFile Version 3.0\nknotfield geometry\nASCII\nDATASET POLYDATA\n"
    out += f"POINTS {len(pts)} double\n" + (_rows(pts) if len(pts) else "")
    if lines:
        size = sum(len(i) + 1 for i in lines)
        out += f"LINES {len(lines)} {size}\n"
        out += "".join(f"{len(i)} " + " ".join(map(str, i)) + "\n" for i in lines)
    if polys:
        out += f"POLYGONS {len(polys)} {4 * len(polys)}\n"
        out += "".join("3 " + " ".join(map(str, t)) + "\n" for t in polys)
    return out


def export_vtk(path, grids=(), curves=(), meshes=()) -> list:
    """Write legacy ASCII VTK; returns the paths written.

    Grids go to a STRUCTURED_POINTS file, curves and meshes to one POLYDATA
    file. With both kinds present the file stem gets ``_grid`` and
    ``_geometry`` suffixes.
    """
    path = Path(path)
    grids = [grids] if isinstance(grids, (ScalarGrid, VectorGrid)) else list(grids)
    curves = [curves] if isinstance(curves, Curve) else list(curves)
    meshes = [meshes] if isinstance(meshes, TriMesh) else list(meshes)
    jobs = []
    both = bool(grids) and bool(curves or meshes)
    if grids:
        target = path.with_name(path.stem + "_grid" + path.suffix) if both else path
        jobs.append((target, _grid_vtk(grids)))
    if curves or meshes or not grids:
        target = path.with_name(path.stem + "_geometry" + path.suffix) if both else path
        jobs.append((target, _poly_vtk(curves, meshes)))
    for target, text in jobs:
        target.write_text(text)
    return [t for t, _ in jobs]


def export_obj(mesh: TriMesh, path) -> Path:
    path = Path(path)
    text = "# knotfield mesh\n"
    text += "".join("v " + " ".join(_fmt(x) for x in v) + "\n" for v in mesh.vertices)
    text += "".join("f {} {} {}\n".format(*(t + 1)) for t in mesh.triangles)
    path.write_text(text)
    return path


def export_csv(obj, path) -> Path:
    """Write a curve (``x,y,z``) or grid (``x,y,z,value`` or vector columns) as CSV."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if isinstance(obj, Curve):
            fh.write(f"# closed={int(obj.closed)} closure_gap={_fmt(obj.closure_gap)}\n")
            w.writerow(["x", "y", "z"])
            w.writerows([[_fmt(x) for x in v] for v in obj.vertices])
        elif isinstance(obj, ScalarGrid):
            w.writerow(["x", "y", "z", obj.quantity])
            data = np.column_stack([obj.points(), obj.values])
            w.writerows([[_fmt(x) for x in row] for row in data])
        elif isinstance(obj, VectorGrid):
            q = obj.quantity
            w.writerow(["x", "y", "z", f"{q}_x", f"{q}_y", f"{q}_z"])
            data = np.column_stack([obj.points(), obj.values])
            w.writerows([[_fmt(x) for x in row] for row in data])
        else:
            raise TypeError(f"mesh: cannot write {type(obj).__name__} as CSV")
    return path


def read_csv_curve(path) -> Curve:
    """Read a curve written by :func:`export_csv`."""
    with open(path, newline="") as fh:
        first = fh.readline()
        meta = dict(item.split("=", 1) for item in first.lstrip("#").split())
        rows = list(csv.reader(fh))
    pts = np.array([[float(x) for x in r] for r in rows[1:]])
    return Curve(pts, bool(int(meta["closed"])), float(meta["closure_gap"]))
