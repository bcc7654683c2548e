"""Moderator feature maps and the weighted, action-centered stacking transform.

Stacking turns the per-(participant, time) records into the per-participant
matrices consumed by the penalized criterion: each row of the transformed
design is sqrt(W_it) (A_it - ptilde) f_t(S_it), and the transformed response
is sqrt(W_it) (Y_it - ghat_t(H_it)), with weight W_it the ratio of the
pseudo-randomization probability of the realized action to its true one.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


class FeatureMap:
    """Deterministic map (t, moderator row) -> feature vector of fixed length.

    The default keeps the moderators as-is behind a leading intercept
    column; the intercept carries the un-moderated treatment effect and is
    left unpenalized downstream.
    """

    def __init__(self, func, dim, names, unpenalized=(), description=""):
        self._func = func
        self.dim = int(dim)
        self.names = list(names)
        self.unpenalized = tuple(unpenalized)
        self.description = description or "custom feature map"

    def __call__(self, t, s_rows):
        out = np.atleast_2d(np.asarray(self._func(t, np.atleast_2d(s_rows)), dtype=float))
        if out.shape[1] != self.dim:
            raise ValidationError(
                f"feature map produced {out.shape[1]} columns, declared {self.dim}")
        return out

    @staticmethod
    def identity_with_intercept(moderator_names):
        names = ["intercept"] + list(moderator_names)
        p = len(names)

        def func(t, s_rows):
            s_rows = np.atleast_2d(s_rows)
            return np.hstack([np.ones((s_rows.shape[0], 1)), s_rows])

        return FeatureMap(func, p, names, unpenalized=(0,),
                          description="intercept + identity on moderators")

    @staticmethod
    def identity(moderator_names):
        names = list(moderator_names)

        def func(t, s_rows):
            return np.atleast_2d(s_rows)

        return FeatureMap(func, len(names), names, unpenalized=(),
                          description="identity on moderators")


class StackedDesign:
    """Per-participant transformed matrices (X_i, Y_i) plus bookkeeping.

    Immutable after construction; the pooled Gram pieces are cached lazily.
    """

    def __init__(self, Xs, Ys, col_names=None, unpenalized=(), meta=None):
        if len(Xs) != len(Ys):
            raise ValidationError("X and Y block counts differ")
        self.Xs = [np.atleast_2d(np.asarray(X, dtype=float)) for X in Xs]
        self.Ys = [np.asarray(Y, dtype=float).ravel() for Y in Ys]
        p = self.Xs[0].shape[1] if self.Xs else 0
        for X, Y in zip(self.Xs, self.Ys):
            if X.shape[1] != p:
                raise ValidationError("column count differs across participants")
            if X.shape[0] != Y.shape[0]:
                raise ValidationError("row count mismatch between X and Y block")
        self.p = p
        self.n = len(self.Xs)
        self.col_names = list(col_names) if col_names else [f"x{k}" for k in range(p)]
        self.unpenalized = tuple(sorted(unpenalized))
        self.meta = dict(meta or {})
        self._gram = None

    @property
    def n_rows(self):
        return sum(X.shape[0] for X in self.Xs)

    def stacked(self):
        """All rows pooled: (X, Y) with shapes (N, p) and (N,)."""
        return np.vstack(self.Xs), np.concatenate(self.Ys)

    def gram(self):
        """(sum_i X_i' X_i, sum_i X_i' Y_i), cached."""
        if self._gram is None:
            X, Y = self.stacked()
            self._gram = (X.T @ X, X.T @ Y)
        return self._gram

    def penalized_columns(self):
        return [j for j in range(self.p) if j not in self.unpenalized]

    def subset(self, indices):
        idx = list(indices)
        return StackedDesign([self.Xs[i] for i in idx], [self.Ys[i] for i in idx],
                             col_names=self.col_names, unpenalized=self.unpenalized,
                             meta=self.meta)


def stack_design(data, nuisance, fmap=None, p_tilde=0.5, weights_override=None):
    """Apply the weighting/centering transform to every record of `data`.

    `nuisance` supplies ghat_t(H_it); pass None for ghat = 0. The caller is
    responsible for having fitted the nuisance on disjoint participants
    (recorded in the design metadata, not enforced).
    """
    if fmap is None:
        fmap = FeatureMap.identity_with_intercept(data.moderator_names)
    if not (0.0 <= p_tilde <= 1.0):
        raise ValidationError(f"p_tilde must lie in [0,1], got {p_tilde}")

    from .estimation import history_features

    Xs, Ys = [], []
    for i in range(data.n):
        A = data.actions[i]
        p_realized = data.prob_of_realized_action(i)
        if np.any(p_realized <= 0.0) or np.any(p_realized >= 1.0):
            raise ValidationError(
                f"positivity violation for participant {data.ids[i]}")
        if weights_override is not None:
            W = np.broadcast_to(np.asarray(weights_override, dtype=float),
                                A.shape).astype(float)
        else:
            ptilde_realized = np.where(A == 1.0, p_tilde, 1.0 - p_tilde)
            W = ptilde_realized / p_realized
        if np.any(~np.isfinite(W)) or np.any(W <= 0.0):
            raise ValidationError(
                f"non-positive or non-finite weight for participant {data.ids[i]}")
        sqw = np.sqrt(W)

        if nuisance is None:
            ghat = np.zeros_like(A)
        else:
            ghat = nuisance.predict(history_features(data, i, nuisance.feature_names))
        feats = fmap(None, data.covariates[i])
        Xs.append(sqw[:, None] * (A - p_tilde)[:, None] * feats)
        Ys.append(sqw * (data.responses[i] - ghat))

    meta = {
        "p_tilde": p_tilde,
        "feature_map": fmap.description,
        "nuisance_ids": tuple(getattr(nuisance, "fit_ids", ()) or ()),
        "analysis_ids": tuple(data.ids),
    }
    return StackedDesign(Xs, Ys, col_names=fmap.names,
                         unpenalized=fmap.unpenalized, meta=meta)
