"""scikit-learn style wrapper: points in, field quantities out.

There is nothing to learn from data, so ``fit`` only validates the map
parameters and builds the :class:`~knotfield.ratmap.RationalMap`.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .mesh import SCALAR_QUANTITIES, VECTOR_QUANTITIES, evaluate_quantity
from .ratmap import ComplexPolynomial, RationalMap, preset


class KnottedField(BaseEstimator, TransformerMixin):
    """Evaluate a knotted field at points of shape ``(n_samples, 3)``.

    Parameters
    ----------
    map : str
        Preset name (see :data:`knotfield.ratmap.PRESETS`), or ``"custom"``
        with ``P`` and ``Q`` given as polynomial text.
    quantities : tuple of str
        Quantities to output, in order; vectors contribute three columns.
    alpha, beta, p, q : int, optional
        Torus-family parameters when ``map="torus"``.
    P, Q : str, optional
        Polynomial text for ``map="custom"``.
    """

    def __init__(self, map="hopf", quantities=("B",), alpha=None, beta=None, p=None, q=None, P=None, Q=None):
        self.map = map
        self.quantities = quantities
        self.alpha = alpha
        self.beta = beta
        self.p = p
        self.q = q
        self.P = P
        self.Q = Q

    def _build(self) -> RationalMap:
        if self.map == "custom":
            if self.P is None or self.Q is None:
                raise ValueError("KnottedField: map='custom' needs both P and Q")
            return RationalMap(ComplexPolynomial.from_text(self.P), ComplexPolynomial.from_text(self.Q), "custom")
        params = {k: getattr(self, k) for k in ("alpha", "beta", "p", "q") if getattr(self, k) is not None}
        return preset(self.map, **params)

    def fit(self, X=None, y=None):
        for qty in self.quantities:
            if qty not in SCALAR_QUANTITIES + VECTOR_QUANTITIES:
                raise ValueError(f"KnottedField: unknown quantity {qty!r}")
        if X is not None:
            check_array(X)
        self.ratmap_ = self._build()
        self.n_features_in_ = 3
        return self

    def transform(self, X):
        check_is_fitted(self, "ratmap_")
        X = check_array(X, ensure_all_finite=True, dtype=np.float64)
        if X.shape[1] != 3:
            raise ValueError(f"KnottedField: expected points with 3 columns, got {X.shape[1]}")
        cols = []
        for qty in self.quantities:
            out = evaluate_quantity(self.ratmap_, qty, X)
            cols.append(out if out.ndim == 2 else out[:, None])
        return np.hstack(cols)

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "ratmap_")
        names = []
        for qty in self.quantities:
            if qty in VECTOR_QUANTITIES:
                names.extend(f"{qty}_{c}" for c in "xyz")
            else:
                names.append(qty)
        return np.asarray(names, dtype=object)
