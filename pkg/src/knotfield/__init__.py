"""Knotted, divergence-free vector fields built from rational maps of stereographic coordinates."""
from .ratmap import (
    ComplexPolynomial,
    PolynomialFormatError,
    RationalMap,
    conjugate_map,
    eval_map,
    preset,
    stereographic,
)
from .field import (
    DegenerateMapError,
    bfield,
    energy_density,
    euler_potentials,
    gauge_phase,
    sample,
    vecpot_naive,
    vecpot_smooth,
)
from .trace import Curve, TraceParams, trace_fieldline, trace_level_curve, trace_nodal_curve
from .helicity import (
    HelicityResult,
    QuadratureSpec,
    fluxtube_flux,
    fluxtube_helicity,
    gauss_linking,
    helicity_volume,
    hopf_invariant_linking,
)
from .mesh import (
    ScalarGrid,
    TriMesh,
    VectorGrid,
    export_csv,
    export_obj,
    export_vtk,
    isosurface,
    mesh_diagnostics,
    sample_grid,
)
from .estimator import KnottedField

__version__ = "0.1.0"

__all__ = [
    "ComplexPolynomial", "PolynomialFormatError", "RationalMap", "conjugate_map", "eval_map",
    "preset", "stereographic", "DegenerateMapError", "bfield", "energy_density",
    "euler_potentials", "gauge_phase", "sample", "vecpot_naive", "vecpot_smooth", "Curve",
    "TraceParams", "trace_fieldline", "trace_level_curve", "trace_nodal_curve",
    "HelicityResult", "QuadratureSpec", "fluxtube_flux", "fluxtube_helicity", "gauss_linking",
    "helicity_volume", "hopf_invariant_linking", "ScalarGrid", "TriMesh", "VectorGrid",
    "export_csv", "export_obj", "export_vtk", "isosurface", "mesh_diagnostics", "sample_grid",
    "KnottedField", "__version__",
]
