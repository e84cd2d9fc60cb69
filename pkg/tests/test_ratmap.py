import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from knotfield.ratmap import (
    PRESETS,
    ComplexPolynomial,
    PolynomialFormatError,
    RationalMap,
    conjugate_map,
    eval_map,
    poly_eval,
    poly_partial,
    preset,
    stereographic,
)
from knotfield.verify import fd_jacobian

M = ComplexPolynomial.monomial
Q_TREFOIL = M(1, e_u=3) + M(1, e_v=2)


def _coords_at(u, v):
    """Coordinates with the given sphere values; gradients are irrelevant for evaluation."""
    z = np.zeros(3, dtype=complex)
    from knotfield.ratmap import SurfaceCoords

    return SurfaceCoords(np.asarray(u, dtype=complex), np.asarray(v, dtype=complex), z, z)


@pytest.mark.parametrize(
    "point, u, v",
    [((0, 0, 0), 0, -1j), ((1, 0, 0), 1, 0)],
)
def test_stereographic_examples(point, u, v):
    c = stereographic(np.array(point, dtype=float))
    assert abs(c.u - u) < 1e-15
    assert abs(c.v - v) < 1e-15


def test_stereographic_unit_sphere_example():
    c = stereographic(np.array([0.3, -1.2, 2.5]))
    assert abs(abs(c.u) ** 2 + abs(c.v) ** 2 - 1) < 1e-12


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=3, max_size=3))
def test_unit_sphere_property(xyz):
    c = stereographic(np.array(xyz))
    assert abs(abs(c.u) ** 2 + abs(c.v) ** 2 - 1) < 1e-12


def test_stereographic_gradients_match_finite_differences(rng):
    pts = rng.normal(size=(50, 3))
    c = stereographic(pts)
    for attr, grad in (("u", c.grad_u), ("v", c.grad_v)):
        def fn(p, attr=attr):
            val = getattr(stereographic(p), attr)
            return np.stack([val.real, val.imag], -1)

        J = fd_jacobian(fn, pts)
        fd = J[:, 0, :] + 1j * J[:, 1, :]
        assert np.max(np.abs(fd - grad)) < 1e-9


@pytest.mark.parametrize("u, v, expected", [(0, 0, 0), (1, 0, 1), (0, 1j, -1)])
def test_poly_eval_examples(u, v, expected):
    assert abs(poly_eval(Q_TREFOIL, _coords_at(u, v)) - expected) < 1e-15


def test_poly_partial_examples():
    assert poly_partial(Q_TREFOIL, "u") == M(3, e_u=2)
    assert poly_partial(M(1, e_u=1, e_ubar=1), "ubar") == M(1, e_u=1)
    assert poly_partial(M(2.5), "v").is_zero


def test_canonical_form_drops_zeros_and_sorts():
    p = ComplexPolynomial((((0, 0, 1, 0), 1.0), ((3, 0, 0, 0), 1.0), ((1, 0, 0, 0), 0.0)))
    q = ComplexPolynomial((((3, 0, 0, 0), 1.0), ((0, 0, 1, 0), 1.0)))
    assert p == q
    assert [e for e, _ in p.terms] == sorted(e for e, _ in p.terms)
    assert (M(1, e_u=1) - M(1, e_u=1)).is_zero


def test_text_roundtrip_is_byte_identical():
    for name in PRESETS:
        m = preset("torus", alpha=1, beta=1, p=2, q=3) if name == "torus" else preset(name)
        for poly in (m.P, m.Q):
            text = poly.to_text()
            back = ComplexPolynomial.from_text(text)
            assert back == poly
            assert back.to_text() == text


def test_text_format_errors_name_the_line():
    with pytest.raises(PolynomialFormatError, match="line 2"):
        ComplexPolynomial.from_text("1 0 1 0 0 0\n1 0 -1 0 0 0\n")
    with pytest.raises(PolynomialFormatError, match="line 1"):
        ComplexPolynomial.from_text("1 0 1 0\n")


def test_pole_flag_on_hopf_circle():
    ev = eval_map(preset("hopf"), np.array([[1.0, 0, 0], [0.5, 0, 0]]))
    assert ev.pole.tolist() == [True, False]
    assert np.isnan(ev.psi[0])


def test_preset_polynomials():
    m = preset("torus", alpha=1, beta=0, p=2, q=3)
    assert m.P == M(1, e_u=1)
    assert m.Q == Q_TREFOIL
    t = preset("trefoil")
    assert t.P == M(1, e_u=3) and t.Q == Q_TREFOIL
    f = preset("fig8_d")
    expected = (M(64, e_v=3) - M(12, e_v=1) * (M(3) + M(2, e_u=2) - M(2, e_ubar=2))
                - (M(14, e_u=2) + M(14, e_ubar=2) + M(1, e_u=4) - M(1, e_ubar=4)))
    assert f.P == M(1, e_u=1) and f.Q == expected
    assert preset("unknot_P_only").Q == M(1)
    assert preset("hopf").Q == M(1, e_v=1)


@pytest.mark.parametrize(
    "params, match",
    [
        (dict(alpha=1, beta=0, p=2, q=4), "coprime"),
        (dict(alpha=0, beta=0, p=2, q=3), "alpha"),
        (dict(alpha=1, beta=0, p=0, q=3), "p >= 1"),
        (dict(alpha=1, beta=0, p=2), "missing"),
    ],
)
def test_torus_validation(params, match):
    with pytest.raises(ValueError, match=match):
        preset("torus", **params)


def test_unknown_preset():
    with pytest.raises(ValueError, match="unknown preset"):
        preset("granny")


def test_zero_denominator_rejected():
    with pytest.raises(ValueError):
        RationalMap(M(1, e_u=1), ComplexPolynomial())


def test_conjugate_map():
    c = conjugate_map(preset("hopf"), "P")
    assert c.P == M(1, e_ubar=1)
    assert c.Q == M(1, e_v=1)
    with pytest.raises(ValueError):
        conjugate_map(preset("hopf"), "R")


@settings(max_examples=50, deadline=None)
@given(
    st.dictionaries(
        st.tuples(*[st.integers(0, 3)] * 4),
        st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False),
        max_size=6,
    )
)
def test_text_roundtrip_property(terms):
    poly = ComplexPolynomial.from_dict(terms)
    assert ComplexPolynomial.from_text(poly.to_text()) == poly


@settings(max_examples=30, deadline=None)
@given(
    st.dictionaries(st.tuples(*[st.integers(0, 3)] * 4), st.complex_numbers(max_magnitude=5, allow_nan=False,
                    allow_infinity=False), min_size=1, max_size=5),
    st.sampled_from(["u", "ubar", "v", "vbar"]),
)
def test_partial_is_linear_and_lowers_degree(terms, var):
    poly = ComplexPolynomial.from_dict(terms)
    d = poly.partial(var)
    assert d.degree(var) <= max(poly.degree(var) - 1, 0)
    assert (poly + poly).partial(var) == d * 2


def test_eval_gradient_matches_finite_differences(any_preset, rng):
    pts = rng.normal(size=(40, 3))
    ev = eval_map(any_preset, pts)
    for name, grad in (("P", ev.grad_P), ("Q", ev.grad_Q)):
        def fn(p, name=name):
            val = getattr(eval_map(any_preset, p), name)
            return np.stack([val.real, val.imag], -1)

        J = fd_jacobian(fn, pts)
        fd = J[:, 0, :] + 1j * J[:, 1, :]
        scale = np.maximum(np.linalg.norm(grad, axis=-1), 1e-8)
        assert np.max(np.linalg.norm(fd - grad, axis=-1) / scale) < 1e-6


def _eval_independent(poly, u, ub, v, vb):
    """Oracle: evaluate with the four variables set independently."""
    return sum(c * u**a * ub**b * v**cc * vb**d for (a, b, cc, d), c in poly.terms)


@pytest.mark.parametrize("name", ["trefoil", "fig8_a", "fig8_d", "cable_23_32"])
@pytest.mark.parametrize("var", range(4))
def test_partial_matches_complex_difference(name, var, rng):
    poly = preset(name).Q
    z = rng.normal(size=4) + 1j * rng.normal(size=4)
    h = 1e-3
    stencil = []
    for s in (2, 1, -1, -2):
        zz = z.copy()
        zz[var] += s * h
        stencil.append(_eval_independent(poly, *zz))
    fd = (-stencil[0] + 8 * stencil[1] - 8 * stencil[2] + stencil[3]) / (12 * h)
    exact = _eval_independent(poly.partial(["u", "ubar", "v", "vbar"][var]), *z)
    assert abs(fd - exact) <= 1e-8 * max(abs(exact), 1.0)


def test_poly_eval_matches_independent_oracle(any_preset, rng):
    c = stereographic(rng.normal(size=(20, 3)))
    for poly in (any_preset.P, any_preset.Q):
        ref = _eval_independent(poly, c.u, np.conj(c.u), c.v, np.conj(c.v))
        assert np.allclose(poly_eval(poly, c), ref, rtol=1e-13, atol=1e-13)
