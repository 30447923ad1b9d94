"""scikit-learn transformers over molecules and orientation pairs."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .errors import InvalidInputError
from .interaction import SUPPORTED, make_batch_objective
from .multipole import compute_multipoles
from .so3 import quat_to_matrix


class MultipoleFeatures(BaseEstimator, TransformerMixin):
    """Flatten the multipole tensors of each charge distribution into one row.

    Columns are the total charge followed by D, Q, O and H (row-major), cut
    at ``max_order``.
    """

    def __init__(self, max_order=4):
        self.max_order = max_order

    def fit(self, X, y=None):
        if self.max_order not in (0, 1, 2, 3, 4):
            raise InvalidInputError("max_order must lie in 0..4")
        self.n_features_out_ = sum(3**k for k in range(self.max_order + 1))
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_out_")
        rows = []
        for dist in X:
            ms = compute_multipoles(dist, max(self.max_order, 1))
            parts = [np.atleast_1d(ms.total_charge)] + [np.ravel(ms.tensor(n)) for n in range(1, self.max_order + 1)]
            rows.append(np.concatenate(parts))
        return np.array(rows).reshape(len(rows), self.n_features_out_)


class InteractionFeatures(BaseEstimator, TransformerMixin):
    """F^(n,m) for every supported (n, m) with n+m <= ``order`` at each orientation pair.

    Input rows are two unit quaternions [w1,x1,y1,z1,w2,x2,y2,z2]; the
    molecules are fixed at construction.
    """

    def __init__(self, m1=None, m2=None, order=5):
        self.m1 = m1
        self.m2 = m2
        self.order = order

    def fit(self, X=None, y=None):
        if self.m1 is None or self.m2 is None:
            raise InvalidInputError("both multipole sets are required")
        self.pairs_ = [(n, m) for n, m in SUPPORTED if n + m <= self.order]
        self._objectives = [make_batch_objective(self.m1, self.m2, n, m) for n, m in self.pairs_]
        return self

    def transform(self, X):
        check_is_fitted(self, "pairs_")
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != 8:
            raise InvalidInputError("expected rows of two quaternions (8 columns)")
        q1 = X[:, :4] / np.linalg.norm(X[:, :4], axis=1, keepdims=True)
        q2 = X[:, 4:] / np.linalg.norm(X[:, 4:], axis=1, keepdims=True)
        U, V = quat_to_matrix(q1), quat_to_matrix(q2)
        return np.column_stack([fb(U, V) for fb in self._objectives])

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "pairs_")
        return np.array([f"F{n}{m}" for n, m in self.pairs_], dtype=object)
