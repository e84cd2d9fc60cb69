import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from knotfield.helicity import (
    ConvergenceWarning,
    LinkingError,
    QuadratureSpec,
    fluxtube_flux,
    fluxtube_helicity,
    gauss_linking,
    gauss_linking_quadrature,
    helicity_formula,
    helicity_volume,
    hopf_invariant_linking,
    hopf_invariant_linking_result,
    phase_winding,
    total_energy,
)
from knotfield.ratmap import conjugate_map, preset
from knotfield.trace import Curve, trace_fieldline, trace_nodal_curve


def circle(center=(0, 0, 0), radius=1.0, normal="z", n=200):
    t = np.linspace(0, 2 * np.pi, n, endpoint=False)
    a, b = radius * np.cos(t), radius * np.sin(t)
    zero = np.zeros_like(t)
    pts = {"z": (a, b, zero), "y": (a, zero, b), "x": (zero, a, b)}[normal]
    return Curve(np.stack(pts, axis=1) + np.asarray(center, float), True, 0.0)


def test_unlinked_circles():
    raw, n = gauss_linking(circle(), circle(center=(5, 0, 0)))
    assert n == 0 and abs(raw) < 1e-10


def test_hopf_link_embedding():
    raw, n = gauss_linking(circle(), circle(center=(1, 0, 0), normal="y"))
    assert abs(n) == 1
    assert abs(raw - n) < 1e-10
    # the independent midpoint rule agrees to its own discretisation error
    assert gauss_linking_quadrature(circle(n=400), circle(center=(1, 0, 0), normal="y", n=400)) == pytest.approx(raw, abs=1e-2)


def test_linking_symmetric_and_orientation_sign():
    a, b = circle(), circle(center=(1, 0, 0), normal="y")
    ab = gauss_linking(a, b)[0]
    assert gauss_linking(b, a)[0] == pytest.approx(ab, abs=1e-12)
    assert gauss_linking(a.reversed(), b)[0] == pytest.approx(-ab, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(
    st.floats(-np.pi, np.pi), st.floats(-np.pi, np.pi), st.floats(-np.pi, np.pi),
    st.lists(st.floats(-5, 5), min_size=3, max_size=3),
)
def test_linking_invariant_under_rigid_motion(yaw, pitch, roll, shift):
    from scipy.spatial.transform import Rotation

    R = Rotation.from_euler("zyx", [yaw, pitch, roll]).as_matrix()
    a, b = circle(n=60), circle(center=(1, 0, 0), normal="y", n=60)
    moved = [Curve(c.vertices @ R.T + np.asarray(shift), True, 0.0) for c in (a, b)]
    ref = gauss_linking(a, b, check_separation=False)[0]
    assert gauss_linking(*moved, check_separation=False)[0] == pytest.approx(ref, abs=1e-9)


def test_linking_rejects_open_and_close_curves():
    open_curve = Curve(circle().vertices, False)
    with pytest.raises(LinkingError, match="open"):
        gauss_linking(open_curve, circle(center=(5, 0, 0)))
    with pytest.raises(LinkingError, match="nearly intersect"):
        gauss_linking(circle(), circle(center=(0.01, 0, 0)))


def test_two_hopf_fieldlines_link_once():
    hopf = preset("hopf")
    a = trace_fieldline(hopf, [0.4, 0.0, 0.0])
    b = trace_fieldline(hopf, [-2.0, 0.0, 0.0])
    assert a.closed and b.closed
    raw, n = gauss_linking(a, b, check_separation=False)
    assert abs(n) == 1 and abs(raw - n) < 1e-6


def test_hopf_linking_real_levels():
    assert hopf_invariant_linking(preset("hopf"), (1.0, -1.0)) == 1


@pytest.mark.parametrize(
    "name, params, expected",
    [("hopf", {}, 1), ("trefoil", {}, 6), ("torus", dict(alpha=1, beta=1, p=2, q=3), 5)],
)
def test_linking_matches_formula(name, params, expected):
    m = preset(name, **params)
    assert helicity_formula(m) == expected
    res = hopf_invariant_linking_result(m)
    assert res.value_int == expected
    assert res.error_estimate < 0.05


def test_conjugation_flips_sign():
    m = preset("trefoil")
    assert hopf_invariant_linking(conjugate_map(m, "P")) == -6
    assert helicity_volume(conjugate_map(preset("hopf"), "Q")).value == pytest.approx(-1, abs=0.01)


def test_linking_reports_missing_level():
    with pytest.raises(LinkingError, match="no component"):
        hopf_invariant_linking(preset("unknot_P_only"))
    with pytest.raises(ValueError, match="differ"):
        hopf_invariant_linking(preset("hopf"), (1.0, 1.0))


def test_helicity_formula_cases():
    assert helicity_formula(preset("fig8_d")) == 3
    assert helicity_formula(preset("unknot_P_only")) == 0
    assert helicity_formula(preset("torus", alpha=2, beta=1, p=2, q=5)) == 9
    assert helicity_formula(preset("cable_23_32")) is None


def test_hopf_volume_helicity():
    res = helicity_volume(preset("hopf"))
    assert res.value == pytest.approx(1.0, abs=0.01)
    assert res.converged and res.method == "volume-quadrature"
    (n1, v1), (n2, v2) = res.convergence[-2:]
    assert res.error_estimate >= abs(v2 - v1) / 2
    assert n2 > n1


def test_trefoil_volume_helicity():
    assert helicity_volume(preset("trefoil")).value == pytest.approx(6.0, abs=0.12)


def test_unknot_helicity_vanishes():
    assert abs(helicity_volume(preset("unknot_P_only")).value) < 0.02


def test_gauge_invariance_with_bump():
    hopf = preset("hopf")

    def grad_bump(pts):
        # gradient of g = x exp(-r^2)
        x = pts[..., :1]
        e = np.exp(-np.sum(pts**2, axis=-1, keepdims=True))
        g = -2 * x * pts * e
        g[..., 0] += e[..., 0]
        return g

    base = helicity_volume(hopf)
    shifted = helicity_volume(hopf, extra_potential=grad_bump)
    assert abs(shifted.value - base.value) < base.error_estimate


def test_conjugation_antisymmetry_of_volume():
    m = preset("trefoil")
    a, b = helicity_volume(m), helicity_volume(conjugate_map(m, "P"))
    assert abs(a.value + b.value) < a.error_estimate + b.error_estimate


def test_quadrature_spec_validation():
    with pytest.raises(ValueError, match="levels"):
        QuadratureSpec(levels=1)
    with pytest.raises(ValueError):
        QuadratureSpec(R0=0)


def test_nonconvergence_is_flagged():
    spec = QuadratureSpec(rtol=1e-6, atol=0, max_subdivisions=3, tolerance=1e-9)
    with pytest.warns(ConvergenceWarning):
        res = helicity_volume(preset("trefoil"), spec)
    assert not res.converged


def test_fluxtube_endpoints():
    hopf = preset("hopf")
    assert fluxtube_helicity(hopf, 1.0).value == 0.0
    full = fluxtube_helicity(hopf, 0.0).value
    assert full == pytest.approx(helicity_volume(hopf).value, abs=0.01)
    with pytest.raises(ValueError):
        fluxtube_helicity(hopf, 1.5)


def test_hopf_fluxtube_half():
    hopf = preset("hopf")
    assert fluxtube_helicity(hopf, 0.5).value == pytest.approx(0.25, abs=0.01)
    assert fluxtube_flux(hopf, 0.5) == pytest.approx(0.5, rel=0.02)
    assert fluxtube_flux(hopf, 0.0) == pytest.approx(1.0, rel=0.02)


def test_plane_section_matches_seifert_for_thin_tube():
    hopf = preset("hopf")
    assert fluxtube_flux(hopf, 0.5, section="plane") == pytest.approx(0.5, rel=0.02)
    trefoil = preset("trefoil")
    assert fluxtube_flux(trefoil, 0.8, section="plane") == pytest.approx(0.2, rel=0.02)


def test_flux_errors():
    with pytest.raises(ValueError, match="no closed nodal curve"):
        fluxtube_flux(preset("unknot_P_only"), 0.5)
    with pytest.raises(ValueError, match="unknown section"):
        fluxtube_flux(preset("hopf"), 0.5, section="disk")


def test_phase_winding_equals_hopf_invariant():
    for name, expected in (("hopf", 1), ("trefoil", 6)):
        m = preset(name)
        assert abs(phase_winding(m, trace_nodal_curve(m.Q))) == expected


def test_total_energy_positive_and_growing():
    hopf = preset("hopf")
    e1, _ = total_energy(hopf, 1.0)
    e2, _ = total_energy(hopf, 5.0)
    assert 0 < e1 < e2
    with pytest.raises(ValueError):
        total_energy(hopf, 0.0)
