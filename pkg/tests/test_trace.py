import numpy as np
import pytest

from knotfield.field import euler_potentials
from knotfield.helicity import _checked_linking
from knotfield.ratmap import ComplexPolynomial, eval_map, preset
from knotfield.trace import (
    Curve,
    TraceError,
    TraceParams,
    crossing_numbers,
    densify,
    hausdorff,
    level_curves,
    segment_lengths,
    trace_fieldline,
    trace_level_curve,
    trace_nodal_curve,
)

M = ComplexPolynomial.monomial


@pytest.fixture(scope="module")
def hopf():
    return preset("hopf")


@pytest.fixture(scope="module")
def trefoil():
    return preset("trefoil")


def _eta_drift(ratmap, curve):
    eta = euler_potentials(ratmap, curve.vertices)[1]
    d = np.angle(np.exp(2j * np.pi * (eta - eta[0]))) / (2 * np.pi)
    return np.abs(d).max()


def test_hopf_fieldline_closes(hopf):
    curve = trace_fieldline(hopf, [0.5, 0.0, 0.0])
    assert curve.closed and curve.closure_gap < 1e-4
    chi = euler_potentials(hopf, curve.vertices)[0]
    assert np.ptp(chi) < 1e-4
    assert _eta_drift(hopf, curve) < 1e-4


def test_curve_invariants(hopf):
    curve = trace_fieldline(hopf, [0.3, 0.2, 0.4])
    seg = segment_lengths(curve)
    assert np.all(seg > 0)
    assert curve.arc_length == pytest.approx(seg.sum())
    assert curve.closure_gap < TraceParams().closure_tol


@pytest.mark.parametrize("name, seed", [("trefoil", (0.8, 0.1, 0.3)), ("fig8_d", (0.3, 0.2, 0.1)),
                                        ("cable_23_32", (0.5, 0.5, 0.2)), ("unknot_P_only", (0.4, 0.0, 0.6))])
def test_chi_conserved_on_fieldlines(name, seed):
    m = preset(name)
    curve = trace_fieldline(m, seed, TraceParams(max_arc_length=200))
    chi = euler_potentials(m, curve.vertices)[0]
    assert np.ptp(chi) < 1e-4
    if curve.closed:
        assert _eta_drift(m, curve) < 1e-4


def test_zero_field_seed_rejected():
    # B vanishes on the z axis of the trefoil map (P = u^3 has a triple zero)
    with pytest.raises(TraceError, match="zero-field"):
        trace_fieldline(preset("trefoil"), [0.0, 0.0, 0.5])


def test_hopf_level_curve_matches_fieldline(hopf):
    (curve,) = level_curves(hopf, 1.0)
    assert curve.closed
    psi = eval_map(hopf, curve.vertices).psi
    assert np.abs(psi - 1).max() < 1e-8
    line = trace_fieldline(hopf, curve.vertices[0])
    assert line.closed
    assert hausdorff(line, curve, resolution=1e-3) < 1e-3


def test_trefoil_level_curve_two_seeds(trefoil):
    curves = level_curves(trefoil, 2.0)
    assert curves and all(c.closed for c in curves)
    c0 = curves[0]
    other = trace_level_curve(trefoil, 2.0, c0.vertices[len(c0.vertices) // 2])
    assert other.closed
    assert hausdorff(c0, other, resolution=1e-3) < 1e-3


def test_trefoil_fieldlines_link_nodal_curve(trefoil):
    (nodal,) = trace_nodal_curve(trefoil.Q)
    links = []
    for phase in (0.3, 2.0):
        (level,) = level_curves(trefoil, np.sqrt(99) * np.exp(1j * phase))
        seed = level.vertices[0]
        assert euler_potentials(trefoil, seed)[0] == pytest.approx(0.99)
        line = trace_fieldline(trefoil, seed)
        assert line.closed
        links.append(round(_checked_linking(line, nodal)))
    assert links[0] == links[1] == 6


def test_nodal_v_is_unit_circle():
    (curve,) = trace_nodal_curve(M(1, e_v=1))
    assert curve.closed
    r = np.linalg.norm(curve.vertices[:, :2], axis=1)
    assert np.abs(r - 1).max() < 1e-6
    assert np.abs(curve.vertices[:, 2]).max() < 1e-6


def test_nodal_u_is_open_z_axis():
    curves = trace_nodal_curve(M(1, e_u=1))
    assert len(curves) == 1
    (axis,) = curves
    assert not axis.closed
    assert np.abs(axis.vertices[:, :2]).max() < 1e-9
    assert axis.vertices[:, 2].min() < -2.9 and axis.vertices[:, 2].max() > 2.9


def test_nodal_constant_is_empty():
    assert trace_nodal_curve(M(1.0)) == []


def test_trefoil_nodal_curve_crossings(trefoil):
    (curve,) = trace_nodal_curve(trefoil.Q)
    assert curve.closed
    assert max(crossing_numbers(curve)) >= 3


def test_reversed_trace_same_set(hopf):
    seed = [0.2, -0.3, 0.5]
    fwd = trace_fieldline(hopf, seed)
    bwd = trace_fieldline(hopf, seed, backward=True)
    assert fwd.closed and bwd.closed
    assert hausdorff(fwd, bwd, resolution=1e-3) < 1e-3
    assert np.array_equal(fwd.reversed().vertices[-1], fwd.vertices[0])


@pytest.mark.parametrize("name, seed", [("hopf", (0.5, 0.0, 0.0)), ("trefoil", (0.8, 0.1, 0.3))])
def test_tolerance_scaling(name, seed):
    m = preset(name)
    a = trace_fieldline(m, seed, TraceParams(tolerance=1e-9))
    b = trace_fieldline(m, seed, TraceParams(tolerance=5e-10))
    assert a.closed and b.closed
    assert abs(a.arc_length - b.arc_length) / b.arc_length < 1e-3
    assert abs(a.closure_gap - b.closure_gap) < 1e-3 * TraceParams().closure_tol


def test_densify_preserves_shape():
    square = Curve(np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], float), True, 0.0)
    dense = densify(square, 0.1)
    assert dense.closed
    assert segment_lengths(dense).max() <= 0.1 + 1e-12
    assert dense.arc_length == pytest.approx(4.0)
    assert hausdorff(square, dense) < 1e-12
