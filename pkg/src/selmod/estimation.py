"""Nuisance regression on a participant split, WCLS refitting, and the
clustered sandwich pieces (H, K) the selective machinery is built from.

Participants are the independent units throughout: scores are summed over
times within a participant before any outer product is taken.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, SingularityError

DEFAULT_HISTORY_FEATURES = ("intercept", "moderators", "prev_action", "prev_response")


def history_features(data, i, feature_names=DEFAULT_HISTORY_FEATURES):
    """Feature matrix g_t(H_it) for participant i, one row per decision time.

    Lagged features are zero at t=1 (no prior observation).
    """
    T_i = data.covariates[i].shape[0]
    cols = []
    for name in feature_names:
        if name == "intercept":
            cols.append(np.ones((T_i, 1)))
        elif name == "moderators":
            cols.append(data.covariates[i])
        elif name == "prev_action":
            lag = np.concatenate([[0.0], data.actions[i][:-1]])
            cols.append(lag[:, None])
        elif name == "prev_response":
            lag = np.concatenate([[0.0], data.responses[i][:-1]])
            cols.append(lag[:, None])
        else:
            raise ConfigError(f"unknown history feature '{name}'")
    return np.hstack(cols)


@dataclass(frozen=True)
class NuisanceModel:
    """Least-squares working model for E[Y_it | H_it]."""

    coef: np.ndarray
    feature_names: tuple
    fit_ids: tuple
    rank_deficient: bool = False

    def predict(self, features):
        return np.atleast_2d(features) @ self.coef


def fit_nuisance(data, split_fraction=1.0 / 3.0, seed=0,
                 feature_names=DEFAULT_HISTORY_FEATURES):
    """Partition participants, fit OLS on the nuisance part, return the rest.

    Returns (NuisanceModel, analysis dataset). The nuisance part has
    round(split_fraction * n) participants, drawn without replacement.
    """
    if not 0.0 < split_fraction < 1.0:
        raise ConfigError("split_fraction must lie strictly inside (0,1)")
    n = data.n
    n_nuis = int(round(split_fraction * n))
    if n_nuis < 2 or n - n_nuis < 2:
        raise ConfigError("need at least 2 participants on each side of the split")

    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    nuis_idx, analysis_idx = perm[:n_nuis], perm[n_nuis:]
    nuis_part = data.subset(np.sort(nuis_idx))
    analysis_part = data.subset(np.sort(analysis_idx))

    G = np.vstack([history_features(nuis_part, i, feature_names)
                   for i in range(nuis_part.n)])
    y = np.concatenate(nuis_part.responses)
    gram = G.T @ G
    rank_deficient = np.linalg.matrix_rank(gram) < gram.shape[0]
    if rank_deficient:
        warnings.warn("nuisance feature matrix is rank deficient; using pseudo-inverse")
        coef = np.linalg.pinv(G) @ y
    else:
        coef = np.linalg.solve(gram, G.T @ y)

    model = NuisanceModel(coef=coef, feature_names=tuple(feature_names),
                          fit_ids=tuple(nuis_part.ids), rank_deficient=rank_deficient)
    return model, analysis_part


def wcls_refit(design, E):
    """Least-squares coefficients on the column set E of the stacked design.

    Solves argmin_b sum_i 0.5 ||Y_i - X_{i,E} b||^2 via the normal equations
    and verifies residual orthogonality before returning.
    """
    E = list(E)
    Gn, c = design.gram()
    G_EE = Gn[np.ix_(E, E)]
    rank = np.linalg.matrix_rank(G_EE)
    if rank < len(E):
        # name the columns a pivoted QR would discard
        from scipy.linalg import qr
        _, _, piv = qr(G_EE, pivoting=True)
        bad = [design.col_names[E[k]] for k in piv[rank:]]
        raise SingularityError(
            f"singular Gram matrix for E={E}; offending columns {bad}", columns=bad)
    bhat = np.linalg.solve(G_EE, c[E])

    resid_orth = c[E] - G_EE @ bhat
    scale = max(1.0, float(np.max(np.abs(c[E]))))
    if np.max(np.abs(resid_orth)) > 1e-8 * scale:
        raise SingularityError("normal equations solved inaccurately; "
                               f"orthogonality residual {np.max(np.abs(resid_orth)):.3e}")
    return bhat


@dataclass
class SandwichMatrices:
    """Empirical hessian/score-covariance pair and the blocks derived from it."""

    H: np.ndarray
    K: np.ndarray
    E: list
    SigmaEE: np.ndarray
    sigma_Ej: dict
    K_sqrt: np.ndarray
    ridge_lifted: bool = False

    def sigma_for(self, j):
        """sqrt of the Sigma_{E,E} diagonal entry for original column j."""
        return self.sigma_Ej[j]


def sandwich(design, E, bhatE, ridge_tol=1e-12):
    """H, K and Sigma_{E,E} at the refit bhatE.

    H = (1/n) sum_i X_i'X_i (quadratic loss: coefficient-free); K averages
    the per-participant score outer products, the score being the gradient
    of the participant's loss at the refit.
    """
    E = list(E)
    n = design.n
    Gn, _ = design.gram()
    H = Gn / n

    p = design.p
    scores = np.empty((n, p))
    for i in range(n):
        r = design.Ys[i] - design.Xs[i][:, E] @ bhatE
        scores[i] = -design.Xs[i].T @ r
    K = scores.T @ scores / n

    K_EE = K[np.ix_(E, E)]
    ridge_lifted = False
    cond = np.linalg.cond(K_EE)
    if not np.isfinite(cond) or cond > 1.0 / ridge_tol:
        eps = 1e-8 * np.trace(K_EE) / len(E)
        K = K + eps * np.eye(p)
        K_EE = K[np.ix_(E, E)]
        ridge_lifted = True
        warnings.warn("K_EE numerically singular; ridge lift applied")

    H_EE = H[np.ix_(E, E)]
    H_EE_inv = np.linalg.inv(H_EE)
    SigmaEE = H_EE_inv @ K_EE @ H_EE_inv
    SigmaEE = 0.5 * (SigmaEE + SigmaEE.T)
    sig = {j: float(np.sqrt(SigmaEE[k, k])) for k, j in enumerate(E)}

    return SandwichMatrices(H=H, K=K, E=E, SigmaEE=SigmaEE, sigma_Ej=sig,
                            K_sqrt=psd_sqrt(K), ridge_lifted=ridge_lifted)


def psd_sqrt(M):
    """Symmetric PSD square root; negative eigenvalues are clamped to zero."""
    M = 0.5 * (M + M.T)
    vals, vecs = np.linalg.eigh(M)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T
