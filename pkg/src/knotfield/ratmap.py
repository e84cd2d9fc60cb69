"""Rational maps of stereographic coordinates.

A knotted field is built from a complex scalar ``psi = P / Q`` where ``P`` and
``Q`` are polynomials in ``u, conj(u), v, conj(v)`` and ``(u, v)`` are the
coordinates of a point of the unit 3-sphere obtained by inverse stereographic
projection of ``(x, y, z)``.

Everything here is vectorised over a trailing point axis: ``points`` is an
array of shape ``(..., 3)``.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

VARIABLES = ("u", "ubar", "v", "vbar")

#: Relative threshold below which ``|Q|`` counts as a pole of ``psi``.
POLE_TOL = 1e-13


class PolynomialFormatError(ValueError):
    """Malformed polynomial text; ``lineno`` is 1-based."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"polynomial line {lineno}: {message}")
        self.lineno = lineno
        self.reason = message


@dataclass(frozen=True)
class SurfaceCoords:
    """Coordinates ``(u, v)`` on the 3-sphere with their real 3-gradients.

    ``grad_u`` and ``grad_v`` have shape ``(..., 3)`` and hold complex
    components ``d u / d x_k``.
    """

    u: np.ndarray
    v: np.ndarray
    grad_u: np.ndarray
    grad_v: np.ndarray

    def values(self) -> tuple:
        return self.u, np.conj(self.u), self.v, np.conj(self.v)

    def gradients(self) -> tuple:
        return self.grad_u, np.conj(self.grad_u), self.grad_v, np.conj(self.grad_v)


def stereographic(points) -> SurfaceCoords:
    """Map points of R^3 to ``(u, v)`` on the unit 3-sphere.

    ``u = 2 (x + i y) / (1 + r^2)`` and ``v = (2 z + i (r^2 - 1)) / (1 + r^2)``.
    Gradients are the hand-differentiated expressions, exact up to rounding.
    """
    pts = np.asarray(points, dtype=float)
    x, y, z = pts[..., 0], pts[..., 1], pts[..., 2]
    r2 = x * x + y * y + z * z
    d = 1.0 + r2
    w = x + 1j * y
    u = 2.0 * w / d
    v = (2.0 * z + 1j * (r2 - 1.0)) / d

    # d(1/d)/dx_k = -2 x_k / d^2
    inv_d2 = 1.0 / (d * d)
    grad_u = np.empty(pts.shape, dtype=complex)
    grad_u[..., 0] = 2.0 / d - 4.0 * w * x * inv_d2
    grad_u[..., 1] = 2.0j / d - 4.0 * w * y * inv_d2
    grad_u[..., 2] = -4.0 * w * z * inv_d2

    num = 2.0 * z + 1j * (r2 - 1.0)
    grad_v = np.empty(pts.shape, dtype=complex)
    grad_v[..., 0] = 2.0j * x / d - 2.0 * num * x * inv_d2
    grad_v[..., 1] = 2.0j * y / d - 2.0 * num * y * inv_d2
    grad_v[..., 2] = (2.0 + 2.0j * z) / d - 2.0 * num * z * inv_d2
    return SurfaceCoords(u, v, grad_u, grad_v)


def _canonical_terms(items: Iterable) -> tuple:
    acc: dict = {}
    for exps, coef in items:
        exps = tuple(int(e) for e in exps)
        if len(exps) != 4 or any(e < 0 for e in exps):
            raise ValueError(f"exponent tuple must be 4 non-negative integers, got {exps}")
        acc[exps] = acc.get(exps, 0j) + complex(coef)
    return tuple(sorted((k, c) for k, c in acc.items() if c != 0))


@dataclass(frozen=True)
class ComplexPolynomial:
    """Sparse polynomial in the four formally independent variables
    ``u, ubar, v, vbar``.

    ``terms`` is a sorted tuple of ``((e_u, e_ubar, e_v, e_vbar), coefficient)``
    pairs with no zero coefficients.
    """

    terms: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "terms", _canonical_terms(self.terms))

    @classmethod
    def from_dict(cls, mapping: Mapping) -> "ComplexPolynomial":
        return cls(tuple(mapping.items()))

    @classmethod
    def monomial(cls, coef=1.0, e_u=0, e_ubar=0, e_v=0, e_vbar=0) -> "ComplexPolynomial":
        return cls((((e_u, e_ubar, e_v, e_vbar), coef),))

    @property
    def is_zero(self) -> bool:
        return not self.terms

    def as_dict(self) -> dict:
        return dict(self.terms)

    def __add__(self, other: "ComplexPolynomial") -> "ComplexPolynomial":
        return ComplexPolynomial(self.terms + other.terms)

    def __neg__(self) -> "ComplexPolynomial":
        return ComplexPolynomial(tuple((e, -c) for e, c in self.terms))

    def __sub__(self, other: "ComplexPolynomial") -> "ComplexPolynomial":
        return self + (-other)

    def __mul__(self, other) -> "ComplexPolynomial":
        if not isinstance(other, ComplexPolynomial):
            return ComplexPolynomial(tuple((e, c * other) for e, c in self.terms))
        out = []
        for e1, c1 in self.terms:
            for e2, c2 in other.terms:
                out.append((tuple(a + b for a, b in zip(e1, e2)), c1 * c2))
        return ComplexPolynomial(tuple(out))

    __rmul__ = __mul__

    def degree(self, var: str) -> int:
        """Highest power of ``var`` appearing in any term (0 for the zero polynomial)."""
        k = VARIABLES.index(var)
        return max((e[k] for e, _ in self.terms), default=0)

    def involves(self, var: str) -> bool:
        return self.degree(var) > 0

    def conjugate(self) -> "ComplexPolynomial":
        """Complex conjugate: conjugated coefficients, ``u <-> ubar``, ``v <-> vbar``."""
        return ComplexPolynomial(
            tuple(((b, a, d, c), np.conj(coef)) for (a, b, c, d), coef in self.terms)
        )

    def partial(self, var: str) -> "ComplexPolynomial":
        """Formal partial derivative with respect to one of :data:`VARIABLES`."""
        k = VARIABLES.index(var)
        out = []
        for exps, coef in self.terms:
            if exps[k] == 0:
                continue
            lowered = list(exps)
            lowered[k] -= 1
            out.append((tuple(lowered), coef * exps[k]))
        return ComplexPolynomial(tuple(out))

    def __call__(self, coords: SurfaceCoords) -> np.ndarray:
        return poly_eval(self, coords)

    # text format ---------------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for (a, b, c, d), coef in self.terms:
            lines.append(f"{coef.real!r} {coef.imag!r} {a} {b} {c} {d}")
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def from_text(cls, text: str) -> "ComplexPolynomial":
        """Parse ``re im e_u e_ubar e_v e_vbar`` lines; ``#`` starts a comment.

        Terms may also be separated by ``;`` on a single line.
        """
        items = []
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0]
            for chunk in line.split(";"):
                fields = chunk.split()
                if not fields:
                    continue
                if len(fields) != 6:
                    raise PolynomialFormatError(lineno, f"expected 6 fields, got {len(fields)}")
                try:
                    re_, im_ = float(fields[0]), float(fields[1])
                except ValueError:
                    raise PolynomialFormatError(lineno, "coefficient is not a number") from None
                try:
                    exps = [int(f) for f in fields[2:]]
                except ValueError:
                    raise PolynomialFormatError(lineno, "exponents must be integers") from None
                if any(e < 0 for e in exps):
                    raise PolynomialFormatError(lineno, "exponents must be non-negative")
                if not (math.isfinite(re_) and math.isfinite(im_)):
                    raise PolynomialFormatError(lineno, "coefficient must be finite")
                items.append((tuple(exps), complex(re_, im_)))
        return cls(tuple(items))


def poly_eval(poly: ComplexPolynomial, coords: SurfaceCoords) -> np.ndarray:
    """Sum of ``c * u^a ubar^b v^c vbar^d`` over the terms of ``poly``."""
    plan = _plan(poly)
    shape = np.shape(coords.u)
    if plan is None:
        return np.zeros(shape, dtype=complex)
    table = _power_table(coords, plan.max_degree)
    return _contract(plan.exps, plan.coefs, table).reshape(shape)


@dataclass(frozen=True)
class _Plan:
    exps: np.ndarray
    coefs: np.ndarray
    max_degree: int


@functools.lru_cache(maxsize=256)
def _plan(poly: ComplexPolynomial):
    if poly.is_zero:
        return None
    exps = np.array([e for e, _ in poly.terms], dtype=np.intp)
    coefs = np.array([c for _, c in poly.terms], dtype=complex)
    return _Plan(exps, coefs, int(exps.max()))


@functools.lru_cache(maxsize=256)
def _gradient_plans(poly: ComplexPolynomial) -> tuple:
    return tuple((k, _plan(poly.partial(var))) for k, var in enumerate(VARIABLES))


def _power_table(coords: SurfaceCoords, degree: int) -> np.ndarray:
    """``table[k, n] = var_k ** n`` flattened over points."""
    base = np.stack([np.ravel(b) for b in coords.values()])
    table = np.empty((4, degree + 1, base.shape[1]), dtype=complex)
    table[:, 0] = 1.0
    for n in range(1, degree + 1):
        table[:, n] = table[:, n - 1] * base
    return table


def _contract(exps, coefs, table) -> np.ndarray:
    mono = table[0, exps[:, 0]] * table[1, exps[:, 1]] * table[2, exps[:, 2]] * table[3, exps[:, 3]]
    return coefs @ mono


def poly_partial(poly: ComplexPolynomial, var: str) -> ComplexPolynomial:
    return poly.partial(var)


def poly_value_and_gradient(poly: ComplexPolynomial, coords: SurfaceCoords):
    """Value of ``poly`` and its real 3-gradient (complex components) by the chain rule."""
    shape = np.shape(coords.u)
    plan = _plan(poly)
    if plan is None:
        return np.zeros(shape, dtype=complex), np.zeros(shape + (3,), dtype=complex)
    table = _power_table(coords, plan.max_degree)
    value = _contract(plan.exps, plan.coefs, table).reshape(shape)
    grad = np.zeros(shape + (3,), dtype=complex)
    for k, dvar in zip(range(4), coords.gradients()):
        dplan = _gradient_plans(poly)[k][1]
        if dplan is None:
            continue
        grad += _contract(dplan.exps, dplan.coefs, table).reshape(shape)[..., None] * dvar
    return value, grad


@dataclass(frozen=True)
class RationalMap:
    """``psi = P / Q`` with optional torus-family tuning exponents ``(alpha, beta, p, q)``."""

    P: ComplexPolynomial
    Q: ComplexPolynomial
    label: str = ""
    tuning: tuple | None = None

    def __post_init__(self):
        if self.Q.is_zero:
            raise ValueError("Q must not be the zero polynomial")

    def to_text(self) -> str:
        out = [f"# label: {self.label}"] if self.label else []
        out.append("# P")
        out.append(self.P.to_text().rstrip("\n"))
        out.append("# Q")
        out.append(self.Q.to_text().rstrip("\n"))
        return "\n".join(out) + "\n"


@dataclass(frozen=True)
class MapEval:
    """Values and gradients of ``P``, ``Q`` and ``psi`` at a batch of points.

    ``psi`` and ``grad_psi`` are NaN where ``pole`` is set.
    """

    P: np.ndarray
    Q: np.ndarray
    grad_P: np.ndarray
    grad_Q: np.ndarray
    psi: np.ndarray
    grad_psi: np.ndarray
    pole: np.ndarray
    coords: SurfaceCoords = field(repr=False)


def pole_mask(P, Q) -> np.ndarray:
    return np.abs(Q) < POLE_TOL * (1.0 + np.abs(P))


def eval_map(ratmap: RationalMap, points) -> MapEval:
    coords = stereographic(points)
    P, gP = poly_value_and_gradient(ratmap.P, coords)
    Q, gQ = poly_value_and_gradient(ratmap.Q, coords)
    pole = pole_mask(P, Q)
    with np.errstate(divide="ignore", invalid="ignore"):
        Qs = np.where(pole, 1.0, Q)
        psi = np.where(pole, np.nan, P / Qs)
        grad_psi = (Qs[..., None] * gP - P[..., None] * gQ) / (Qs * Qs)[..., None]
        grad_psi = np.where(pole[..., None], np.nan, grad_psi)
    return MapEval(P, Q, gP, gQ, psi, grad_psi, pole, coords)


def conjugate_map(ratmap: RationalMap, which: str = "P") -> RationalMap:
    """Replace ``P`` or ``Q`` by its complex conjugate; flips the sign of the helicity."""
    if which == "P":
        return RationalMap(ratmap.P.conjugate(), ratmap.Q, f"conj_P({ratmap.label})")
    if which == "Q":
        return RationalMap(ratmap.P, ratmap.Q.conjugate(), f"conj_Q({ratmap.label})")
    raise ValueError(f"which must be 'P' or 'Q', got {which!r}")


# presets -------------------------------------------------------------------

def _mono(coef=1.0, eu=0, eub=0, ev=0, evb=0):
    return ((eu, eub, ev, evb), coef)


def _poly(*terms) -> ComplexPolynomial:
    return ComplexPolynomial(tuple(terms))


PRESETS = ("hopf", "torus", "trefoil", "fig8_a", "fig8_d", "cable_23_32", "unknot_P_only")


def _torus(alpha: int, beta: int, p: int, q: int) -> RationalMap:
    for name, val in (("alpha", alpha), ("beta", beta), ("p", p), ("q", q)):
        if int(val) != val:
            raise ValueError(f"torus parameter {name} must be an integer, got {val!r}")
    alpha, beta, p, q = int(alpha), int(beta), int(p), int(q)
    if p < 1 or q < 1:
        raise ValueError(f"torus parameters require p >= 1 and q >= 1, got p={p}, q={q}")
    if math.gcd(p, q) != 1:
        raise ValueError(f"torus parameters require p and q coprime, got p={p}, q={q}")
    if alpha < 0 or beta < 0 or (alpha == 0 and beta == 0):
        raise ValueError(
            f"torus parameters require alpha, beta >= 0 and not both zero, got alpha={alpha}, beta={beta}"
        )
    P = _poly(_mono(1.0, eu=alpha, ev=beta))
    Q = _poly(_mono(1.0, eu=q), _mono(1.0, ev=p))
    return RationalMap(P, Q, f"torus(alpha={alpha},beta={beta},p={p},q={q})", (alpha, beta, p, q))


def preset(name: str, **params) -> RationalMap:
    """Build one of the catalogued maps.

    ``torus`` takes integer keywords ``alpha, beta, p, q`` and yields
    ``P = u^alpha v^beta``, ``Q = u^q + v^p``.
    """
    if name != "torus" and params:
        raise ValueError(f"preset {name!r} takes no parameters, got {sorted(params)}")
    if name == "hopf":
        return RationalMap(_poly(_mono(eu=1)), _poly(_mono(ev=1)), "hopf")
    if name == "torus":
        missing = {"alpha", "beta", "p", "q"} - set(params)
        extra = set(params) - {"alpha", "beta", "p", "q"}
        if missing or extra:
            raise ValueError(
                f"torus preset needs exactly alpha, beta, p, q (missing {sorted(missing)}, unknown {sorted(extra)})"
            )
        return _torus(params["alpha"], params["beta"], params["p"], params["q"])
    if name == "trefoil":
        m = _torus(3, 0, 2, 3)
        return RationalMap(m.P, m.Q, "trefoil", m.tuning)
    if name == "fig8_a":
        # 64u^3 - 12u(3 - 2v^2 + 2vb^2) + (14v^2 + 14vb^2 - v^4 + vb^4)
        Q = _poly(
            _mono(64, eu=3), _mono(-36, eu=1), _mono(24, eu=1, ev=2), _mono(-24, eu=1, evb=2),
            _mono(14, ev=2), _mono(14, evb=2), _mono(-1, ev=4), _mono(1, evb=4),
        )
        return RationalMap(_poly(_mono(ev=1)), Q, "fig8_a")
    if name == "fig8_d":
        # 64v^3 - 12v(3 + 2u^2 - 2ub^2) - (14u^2 + 14ub^2 + u^4 - ub^4)
        Q = _poly(
            _mono(64, ev=3), _mono(-36, ev=1), _mono(-24, eu=2, ev=1), _mono(24, eub=2, ev=1),
            _mono(-14, eu=2), _mono(-14, eub=2), _mono(-1, eu=4), _mono(1, eub=4),
        )
        return RationalMap(_poly(_mono(eu=1)), Q, "fig8_d")
    if name == "cable_23_32":
        # v^4 - 2u^3 v^2 - 2i u^3 v + u^6 + u^3/4
        Q = _poly(
            _mono(1, ev=4), _mono(-2, eu=3, ev=2), _mono(-2j, eu=3, ev=1),
            _mono(1, eu=6), _mono(0.25, eu=3),
        )
        return RationalMap(_poly(_mono(eu=1, ev=1)), Q, "cable_23_32")
    if name == "unknot_P_only":
        return RationalMap(_poly(_mono(eu=1)), _poly(_mono()), "unknot_P_only")
    raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
