"""The knotted field ``B``, its vector potentials and Euler potentials.

All functions take a :class:`~knotfield.ratmap.RationalMap` and points of
shape ``(..., 3)`` and return arrays with the same leading shape.

With ``psi = P / Q`` and ``W = Q grad P - P grad Q`` every quantity can be
written without dividing by ``Q`` or ``P``:

* ``B = Im(conj(W) x W) / (2 pi (|P|^2 + |Q|^2)^2)``
* ``A_smooth = (Im(conj(P) grad P) + Im(conj(Q) grad Q)) / (2 pi (|P|^2 + |Q|^2))``

which are regular wherever ``P`` and ``Q`` do not vanish together.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ratmap import POLE_TOL, RationalMap, eval_map

TWO_PI = 2.0 * np.pi


class DegenerateMapError(ValueError):
    """``P`` and ``Q`` vanish simultaneously, so ``psi`` is undefined."""


def _components(ratmap: RationalMap, points):
    ev = eval_map(ratmap, points)
    P, Q, gP, gQ = ev.P, ev.Q, ev.grad_P, ev.grad_Q
    aP, aQ = np.abs(P) ** 2, np.abs(Q) ** 2
    S = aP + aQ
    if np.any(S < 1e-300):
        bad = np.argwhere(np.atleast_1d(S) < 1e-300)[0].tolist()
        raise DegenerateMapError(f"map degenerate at point (P = Q = 0), index {bad}")
    return ev, P, Q, gP, gQ, aP, aQ, S


def _cross(a, b):
    return np.cross(a, b)


def _b_from_w(W, S):
    return np.imag(_cross(np.conj(W), W)) / (TWO_PI * S[..., None] ** 2)


def bfield(ratmap: RationalMap, points) -> np.ndarray:
    """``B = (1 / 2 pi i) grad(psi*) x grad(psi) / (1 + |psi|^2)^2``, real, shape ``(..., 3)``.

    Evaluated in the homogeneous ``(P, Q)`` form, which equals both the direct
    form and its ``psi -> 1/psi`` reciprocal and is finite on poles of ``psi``.
    """
    _, P, Q, gP, gQ, _, _, S = _components(ratmap, points)
    W = Q[..., None] * gP - P[..., None] * gQ
    return _b_from_w(W, S)


def bfield_ratio_form(w, grad_w) -> np.ndarray:
    """Direct form of ``B`` from a ratio ``w`` and its gradient.

    Used with ``w = psi`` or ``w = 1/psi``; both must give the same field.
    """
    w = np.asarray(w)
    grad_w = np.asarray(grad_w)
    denom = (1.0 + np.abs(w) ** 2) ** 2
    return np.imag(_cross(np.conj(grad_w), grad_w)) / (TWO_PI * denom[..., None])


def euler_potentials(ratmap: RationalMap, points):
    """Return ``(chi, eta, eta_valid)``.

    ``chi = |psi|^2 / (1 + |psi|^2)`` (1 on poles) and ``eta = arg(psi) / 2 pi``
    in turns on ``[0, 1)``; ``eta`` is invalid where ``psi`` is 0 or infinite.
    """
    ev, P, Q, _, _, aP, aQ, S = _components(ratmap, points)
    chi = aP / S
    chi = np.where(ev.pole, 1.0, chi)
    zero = np.abs(P) < POLE_TOL * (1.0 + np.abs(Q))
    valid = ~(zero | ev.pole)
    eta = _turns(np.angle(P) - np.angle(Q))
    eta = np.where(valid, eta, np.nan)
    return chi, eta, valid


def euler_gradients(ratmap: RationalMap, points):
    """Analytic ``grad chi`` and ``grad eta`` (the latter NaN where ``eta`` is invalid)."""
    _, P, Q, gP, gQ, aP, aQ, S = _components(ratmap, points)
    g_aP = 2.0 * np.real(np.conj(P)[..., None] * gP)
    g_aQ = 2.0 * np.real(np.conj(Q)[..., None] * gQ)
    grad_chi = (aQ[..., None] * g_aP - aP[..., None] * g_aQ) / (S * S)[..., None]
    with np.errstate(divide="ignore", invalid="ignore"):
        grad_eta = (np.imag(gP / P[..., None]) - np.imag(gQ / Q[..., None])) / TWO_PI
    return grad_chi, grad_eta


def vecpot_naive(ratmap: RationalMap, points):
    """``A = (1 / 4 pi i)(psi* grad psi - psi grad psi*) / (1 + |psi|^2)``.

    Returns ``(A, valid)``; ``A`` is NaN where ``Q`` is within the pole
    tolerance. Diverges as the nodal curve of ``Q`` is approached.
    """
    ev, P, Q, gP, gQ, aP, aQ, S = _components(ratmap, points)
    valid = ~ev.pole
    W = Q[..., None] * gP - P[..., None] * gQ
    Qs = np.where(valid, Q, 1.0)
    A = np.imag(np.conj(P)[..., None] * W / Qs[..., None]) / (TWO_PI * S[..., None])
    A = np.where(valid[..., None], A, np.nan)
    return A, valid


def vecpot_smooth(ratmap: RationalMap, points) -> np.ndarray:
    """Gauge-transformed potential ``A + grad f`` with ``f = arg(Q) / 2 pi``.

    Finite wherever the map is non-degenerate; its curl is ``B``.
    """
    _, P, Q, gP, gQ, _, _, S = _components(ratmap, points)
    num = np.imag(np.conj(P)[..., None] * gP) + np.imag(np.conj(Q)[..., None] * gQ)
    return num / (TWO_PI * S[..., None])


def gauge_phase(ratmap: RationalMap, points):
    """``f = arg(Q) / 2 pi`` in turns on ``[0, 1)``; returns ``(f, valid)``."""
    ev = eval_map(ratmap, points)
    valid = ~ev.pole
    f = np.where(valid, _turns(np.angle(ev.Q)), np.nan)
    return f, valid


def gauge_phase_gradient(ratmap: RationalMap, points) -> np.ndarray:
    """``grad f = Im(grad Q / Q) / 2 pi``, NaN on the nodal curve of ``Q``."""
    ev = eval_map(ratmap, points)
    with np.errstate(divide="ignore", invalid="ignore"):
        g = np.imag(ev.grad_Q / ev.Q[..., None]) / TWO_PI
    return np.where(ev.pole[..., None], np.nan, g)


def energy_density(ratmap: RationalMap, points) -> np.ndarray:
    B = bfield(ratmap, points)
    return np.einsum("...i,...i->...", B, B)


def helicity_density(ratmap: RationalMap, points) -> np.ndarray:
    """``A_smooth . B`` with a single polynomial evaluation."""
    _, P, Q, gP, gQ, aP, aQ, S = _components(ratmap, points)
    W = Q[..., None] * gP - P[..., None] * gQ
    B = _b_from_w(W, S)
    A = (np.imag(np.conj(P)[..., None] * gP) + np.imag(np.conj(Q)[..., None] * gQ)) / (
        TWO_PI * S[..., None]
    )
    return np.einsum("...i,...i->...", A, B), aP / S


def _turns(angle):
    t = np.mod(angle / TWO_PI, 1.0)
    # mod can round up to exactly 1.0 for tiny negative inputs
    return np.where(t >= 1.0, 0.0, t)


@dataclass(frozen=True)
class FieldSample:
    """All field quantities at one point; invalid entries are NaN."""

    point: np.ndarray
    B: np.ndarray
    A_naive: np.ndarray
    A_naive_valid: bool
    A_smooth: np.ndarray
    chi: float
    eta: float
    eta_valid: bool
    f: float
    f_valid: bool
    energy_density: float


def sample(ratmap: RationalMap, point) -> FieldSample:
    pt = np.asarray(point, dtype=float).reshape(3)
    B = bfield(ratmap, pt)
    A, a_ok = vecpot_naive(ratmap, pt)
    chi, eta, eta_ok = euler_potentials(ratmap, pt)
    f, f_ok = gauge_phase(ratmap, pt)
    return FieldSample(
        point=pt,
        B=B,
        A_naive=A,
        A_naive_valid=bool(a_ok),
        A_smooth=vecpot_smooth(ratmap, pt),
        chi=float(chi),
        eta=float(eta),
        eta_valid=bool(eta_ok),
        f=float(f),
        f_valid=bool(f_ok),
        energy_density=float(B @ B),
    )


def far_field_decay_slope(ratmap: RationalMap, radii=None, n_directions: int = 400) -> float:
    """Least-squares slope of ``log max_{|x| = r} |B|^2`` against ``log r``."""
    if radii is None:
        radii = np.geomspace(10.0, 100.0, 12)
    dirs = fibonacci_sphere(n_directions)
    peaks = [energy_density(ratmap, r * dirs).max() for r in radii]
    slope, _ = np.polyfit(np.log(radii), np.log(peaks), 1)
    return float(slope)


def fibonacci_sphere(n: int) -> np.ndarray:
    """``n`` nearly uniform unit vectors (deterministic)."""
    k = np.arange(n) + 0.5
    z = 1.0 - 2.0 * k / n
    rho = np.sqrt(1.0 - z * z)
    phi = np.pi * (3.0 - np.sqrt(5.0)) * k
    return np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=-1)
