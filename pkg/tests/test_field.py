import numpy as np
import pytest

from knotfield.field import (
    DegenerateMapError,
    bfield,
    bfield_ratio_form,
    energy_density,
    euler_gradients,
    euler_potentials,
    far_field_decay_slope,
    fibonacci_sphere,
    gauge_phase,
    gauge_phase_gradient,
    sample,
    vecpot_naive,
    vecpot_smooth,
)
from knotfield.ratmap import ComplexPolynomial, RationalMap, eval_map, preset
from knotfield.trace import trace_nodal_curve
from knotfield.verify import fd_curl, fd_jacobian, random_points, regular_points

M = ComplexPolynomial.monomial


def _rel(a, b):
    return np.linalg.norm(a - b, axis=-1) / np.linalg.norm(b, axis=-1)


def test_divergence_free(any_preset, rng):
    pts = random_points(rng, 200)
    J = fd_jacobian(lambda p: bfield(any_preset, p), pts)
    div = np.abs(np.trace(J, axis1=-2, axis2=-1))
    bound = 1e-5 * np.linalg.norm(bfield(any_preset, pts), axis=-1) / 1e-4
    assert np.all(div < bound)


def test_curl_of_smooth_potential(any_preset, rng):
    pts = regular_points(any_preset, rng, 200)
    curl = fd_curl(lambda p: vecpot_smooth(any_preset, p), pts)
    assert _rel(curl, bfield(any_preset, pts)).max() < 1e-4


def test_curl_of_naive_potential_away_from_nodal_curve(any_preset, rng):
    pts = regular_points(any_preset, rng, 200, margin=1e-2)
    curl = fd_curl(lambda p: vecpot_naive(any_preset, p)[0], pts)
    assert _rel(curl, bfield(any_preset, pts)).max() < 1e-4


def test_euler_identity_and_tangency(any_preset, rng):
    pts = regular_points(any_preset, rng, 300)
    B = bfield(any_preset, pts)
    gc, ge = euler_gradients(any_preset, pts)
    assert _rel(np.cross(gc, ge), B).max() < 1e-8
    nb = np.linalg.norm(B, axis=-1)
    for g in (gc, ge):
        dot = np.abs(np.einsum("ij,ij->i", B, g))
        assert np.all(dot < 1e-8 * nb * np.linalg.norm(g, axis=-1))


def test_euler_identity_with_finite_differences(rng):
    m = preset("trefoil")
    pts = regular_points(m, rng, 100)

    def circle(p):
        eta = euler_potentials(m, p)[1]
        return np.stack([np.cos(2 * np.pi * eta), np.sin(2 * np.pi * eta)], -1)

    J = fd_jacobian(circle, pts)
    c = circle(pts)
    grad_eta = (c[:, 0, None] * J[:, 1] - c[:, 1, None] * J[:, 0]) / (2 * np.pi)
    grad_chi = fd_jacobian(lambda p: euler_potentials(m, p)[0][:, None], pts)[:, 0]
    assert _rel(np.cross(grad_chi, grad_eta), bfield(m, pts)).max() < 1e-4


def test_reciprocal_consistency(any_preset, rng):
    pts = random_points(rng, 4000, 3.0)
    if any_preset.Q.involves("u") or any_preset.Q.involves("v"):
        # the fig-8 maps reach |psi| ~ 1 only near the nodal curve of Q
        verts = np.concatenate([c.vertices for c in trace_nodal_curve(any_preset.Q, bounds=(-6, 6))])
        pts = np.concatenate([pts, verts + rng.normal(scale=0.05, size=verts.shape)])
    ev = eval_map(any_preset, pts)
    keep = (np.abs(ev.psi) > 0.5) & (np.abs(ev.psi) < 2.0)
    assert keep.sum() > 20
    psi, gpsi = ev.psi[keep], ev.grad_psi[keep]
    direct = bfield_ratio_form(psi, gpsi)
    recip = bfield_ratio_form(1 / psi, -gpsi / (psi**2)[:, None])
    homog = bfield(any_preset, pts[keep])
    assert _rel(recip, direct).max() < 1e-8
    assert _rel(homog, direct).max() < 1e-8


def test_bfield_finite_on_hopf_pole_circle():
    m = preset("hopf")
    on = bfield(m, np.array([1.0, 0.0, 0.0]))
    assert np.all(np.isfinite(on))
    # linear extrapolation from two nearby points off the circle
    near = bfield(m, np.array([[1.0 + 1e-4, 0, 0], [1.0 + 2e-4, 0, 0]]))
    assert np.linalg.norm(2 * near[0] - near[1] - on) < 1e-6


def test_degenerate_map_raises():
    m = RationalMap(M(1, e_u=1), M(1, e_u=1), "both vanish on the z axis")
    with pytest.raises(DegenerateMapError, match="degenerate"):
        bfield(m, np.array([0.0, 0.0, 0.5]))
    with pytest.raises(DegenerateMapError):
        vecpot_smooth(m, np.array([0.0, 0.0, 0.5]))


def test_euler_potential_examples():
    hopf = preset("hopf")
    chi, eta, ok = euler_potentials(hopf, np.zeros(3))
    assert chi == 0 and not ok
    # psi = u / v with |u| = |v| on the sphere 2|w| = |2z + i(r^2 - 1)|
    chi, _, _ = euler_potentials(hopf, np.array([0.5, 0.0, 0.0]))
    x = 0.5
    u, v = 2 * x / (1 + x * x), 1j * (x * x - 1) / (1 + x * x)
    assert abs(chi - abs(u / v) ** 2 / (1 + abs(u / v) ** 2)) < 1e-15
    # |psi| = 1 where |u| = |v| = 1/sqrt(2): x^2 + y^2 = 3 - 2 sqrt 2 on z = 0 is one solution
    r = np.sqrt(3 - 2 * np.sqrt(2))
    assert abs(euler_potentials(hopf, np.array([r, 0.0, 0.0]))[0] - 0.5) < 1e-12
    # psi real positive: take u real and v = u on the sphere
    unknot = preset("unknot_P_only")
    chi, eta, ok = euler_potentials(unknot, np.array([0.7, 0.0, 0.3]))
    assert ok and abs(eta) < 1e-15
    chi, _, _ = euler_potentials(hopf, np.array([1.0, 0.0, 0.0]))
    assert chi == 1.0


def test_gauge_phase_examples():
    unknot = preset("unknot_P_only")
    f, ok = gauge_phase(unknot, np.array([0.3, 0.2, 0.1]))
    assert ok and f == 0.0
    # Q = v = i (r^2 - 1)/(1 + r^2) on the plane z = 0 outside the unit circle
    f, ok = gauge_phase(preset("hopf"), np.array([2.0, 0.0, 0.0]))
    assert ok and abs(f - 0.25) < 1e-15
    f, ok = gauge_phase(preset("hopf"), np.array([1.0, 0.0, 0.0]))
    assert not ok and np.isnan(f)


def test_naive_potential_vanishes_at_zero_of_psi():
    A, ok = vecpot_naive(preset("hopf"), np.array([0.0, 0.0, 0.7]))
    assert ok and np.all(A == 0)


def test_gauge_identity(any_preset, rng):
    if any_preset.Q.is_zero:
        pytest.skip("no denominator")
    pts = regular_points(any_preset, rng, 150, margin=1e-2)

    def circle(p):
        f = gauge_phase(any_preset, p)[0]
        return np.stack([np.cos(2 * np.pi * f), np.sin(2 * np.pi * f)], -1)

    J = fd_jacobian(circle, pts)
    c = circle(pts)
    grad_f = (c[:, 0, None] * J[:, 1] - c[:, 1, None] * J[:, 0]) / (2 * np.pi)
    A = vecpot_naive(any_preset, pts)[0]
    smooth = vecpot_smooth(any_preset, pts)
    assert _rel(A + grad_f, smooth).max() < 1e-4
    assert _rel(A + gauge_phase_gradient(any_preset, pts), smooth).max() < 1e-8


def test_unknot_smooth_equals_naive(rng):
    m = preset("unknot_P_only")
    pts = random_points(rng, 100)
    assert np.array_equal(vecpot_smooth(m, pts), vecpot_naive(m, pts)[0])


def _off_curve_points(curve, d, n=8):
    idx = np.linspace(0, len(curve.vertices) - 1, n, endpoint=False).astype(int)
    v = curve.vertices
    t = v[(idx + 1) % len(v)] - v[idx - 1]
    t /= np.linalg.norm(t, axis=1, keepdims=True)
    normal = np.cross(t, [0.0, 0.0, 1.0])
    normal /= np.linalg.norm(normal, axis=1, keepdims=True)
    return v[idx], v[idx] + d * normal


def test_naive_potential_blows_up_on_trefoil_nodal_curve():
    m = preset("trefoil")
    (curve,) = trace_nodal_curve(m.Q)
    sphere = 1.5 * fibonacci_sphere(400)
    med_a = np.median(np.linalg.norm(vecpot_naive(m, sphere)[0], axis=1))
    med_s = np.median(np.linalg.norm(vecpot_smooth(m, sphere), axis=1))
    on, near2 = _off_curve_points(curve, 1e-2)
    _, near3 = _off_curve_points(curve, 1e-3)
    a2 = np.linalg.norm(vecpot_naive(m, near2)[0], axis=1)
    a3 = np.linalg.norm(vecpot_naive(m, near3)[0], axis=1)
    assert np.all(a3 > a2)
    assert np.all(a2 > 10 * med_a)
    smooth_on = np.linalg.norm(vecpot_smooth(m, on), axis=1)
    assert np.all(np.isfinite(smooth_on)) and np.all(smooth_on < 10 * med_s)
    assert not np.any(vecpot_naive(m, on)[1])


@pytest.mark.parametrize("name", ["hopf", "trefoil", "torus"])
def test_chi_range_and_decay(name, rng):
    m = preset("torus", alpha=1, beta=1, p=2, q=3) if name == "torus" else preset(name)
    chi = euler_potentials(m, random_points(rng, 2000, 4.0))[0]
    assert chi.min() >= 0 and chi.max() <= 1
    far = 1e3 * fibonacci_sphere(200)
    assert euler_potentials(m, far)[0].max() < 1e-2


def test_energy_density_nonnegative(any_preset, rng):
    pts = random_points(rng, 500, 3.0)
    e = energy_density(any_preset, pts)
    assert np.all(e >= 0)
    assert np.allclose(e, np.sum(bfield(any_preset, pts) ** 2, axis=1))


def test_hopf_far_field_slope():
    assert far_field_decay_slope(preset("hopf")) <= -4 + 0.1


def test_sample_record():
    s = sample(preset("hopf"), [0.5, 0.1, -0.2])
    assert s.A_naive_valid and s.eta_valid and s.f_valid
    assert 0 <= s.chi <= 1 and 0 <= s.eta < 1 and 0 <= s.f < 1
    assert s.energy_density == pytest.approx(s.B @ s.B)
    assert np.all(np.isreal(s.B))
