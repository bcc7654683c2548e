"""Baseline interval methods: non-randomized polyhedral conditioning,
participant-level data splitting, and unadjusted Wald intervals.

All three consume the same stacked design as the randomized method;
they differ only in how the active set is chosen and how (or whether)
the selection is accounted for.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .errors import ConfigError, NumericError
from .estimation import sandwich, wcls_refit
from .gauss import log_gauss_mass
from .randlasso import Randomization, lambda_rule, solve

MAX_DOUBLINGS = 60


def null_randomization(p):
    """Zero tilt: the plain (non-randomized) lasso."""
    return Randomization(omega=np.zeros(p), tau=0.0, seed=None)


@dataclass(frozen=True)
class TargetInterval:
    j: int
    estimate: float
    lower: float
    upper: float
    sigma: float

    @property
    def finite(self):
        return bool(np.isfinite(self.lower) and np.isfinite(self.upper))

    @property
    def length(self):
        return self.upper - self.lower


@dataclass
class IntervalReport:
    method: str
    alpha: float
    E: tuple                     # reported (penalized) targets
    intervals: list
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for iv in self.intervals:
            if not iv.lower <= iv.upper:
                raise NumericError(f"interval out of order for column {iv.j}")

    @property
    def empty(self):
        return len(self.intervals) == 0


def wald_intervals(design, E_targets, bhatE, sw, alpha, method, meta=None):
    """b +- z_{1-alpha/2} sigma / sqrt(n) for each requested active column."""
    z = ndtri(1.0 - alpha / 2.0)
    sqrt_n = np.sqrt(design.n)
    E = sw.E
    ivs = []
    for j in E_targets:
        k = E.index(j)
        sd = sw.sigma_Ej[j] / sqrt_n
        ivs.append(TargetInterval(j=j, estimate=float(bhatE[k]),
                                  lower=float(bhatE[k] - z * sd),
                                  upper=float(bhatE[k] + z * sd),
                                  sigma=sw.sigma_Ej[j]))
    return IntervalReport(method=method, alpha=alpha, E=tuple(E_targets),
                          intervals=ivs, meta=dict(meta or {}))


# ---------------------------------------------------------------------------
# polyhedral (truncated-normal) conditioning for the plain lasso
# ---------------------------------------------------------------------------

def truncated_normal_cdf(x, mu, sd, lower, upper):
    """P(Z <= x) for Z ~ N(mu, sd^2) truncated to [lower, upper], in a form
    that survives far tails."""
    a = (lower - mu) / sd
    b = (upper - mu) / sd
    xx = (x - mu) / sd
    log_den = log_gauss_mass(a, b)
    if log_den == -np.inf:
        # all mass collapsed onto one boundary; decide by the side of mu
        return 0.0 if mu >= x else 1.0
    log_num = log_gauss_mass(a, min(xx, b))
    val = np.exp(min(log_num - log_den, 0.0))
    return float(min(max(val, 0.0), 1.0))


def _selection_constraints(selection, sw, design, bhatE):
    """The observed selection event {active set, signs} as an affine set
    A z <= b in the jointly Gaussian statistic z = (sqrt(n) bhat^E,
    sqrt(n) W), where W is the inactive-block score at the refit.

    For quadratic loss both the sign constraints on the lasso solution and
    the sup-norm constraints on the inactive subgradient are exact affine
    functions of z. Returns (A, b, z_obs, C) with C the asymptotic
    covariance of z built from the sandwich blocks.
    """
    E = list(selection.E)
    p = design.p
    E_comp = [j for j in range(p) if j not in set(E)]
    q, qc = len(E), len(E_comp)
    sqrt_n = np.sqrt(design.n)

    H_EE = sw.H[np.ix_(E, E)]
    H_cE = sw.H[np.ix_(E_comp, E)]
    H_EE_inv = np.linalg.inv(H_EE)
    lamS_E = (selection.lam_vec * selection.subgradient)[E]

    Gn, c = design.gram()
    W = (c[E_comp] - Gn[np.ix_(E_comp, E)] @ bhatE) / design.n if qc else np.zeros(0)
    z_obs = np.concatenate([sqrt_n * np.asarray(bhatE, dtype=float), sqrt_n * W])

    # Cov of (sqrt(n)(bhat - beta), sqrt(n) W) = J K J' with the linearization
    # J mapping the full score into the two blocks
    J = np.zeros((p, p))
    J[:q, :q] = -H_EE_inv
    J[q:, :q] = -H_cE @ H_EE_inv
    J[q:, q:] = np.eye(qc)
    Kp = sw.K[np.ix_(E + E_comp, E + E_comp)]
    C = J @ Kp @ J.T
    C = 0.5 * (C + C.T)

    rows_A, rows_b = [], []
    # sign consistency of the penalized active coordinates:
    # sign_k * (bhat_k - offset_k) > 0 with beta_lasso_E = bhat - offset
    offset = H_EE_inv @ lamS_E / sqrt_n
    for k in range(q):
        if selection.lam_vec[E[k]] <= 0:
            continue
        s_k = np.sign(selection.beta_lasso[E[k]])
        row = np.zeros(p)
        row[k] = -s_k
        rows_A.append(row)
        rows_b.append(-s_k * sqrt_n * offset[k])
    # inactive subgradient inside [-1, 1]:
    # lam * S_inactive = sqrt(n) W + H_cE H_EE^-1 lamS_E componentwise
    shift = H_cE @ H_EE_inv @ lamS_E if qc else np.zeros(0)
    for k in range(qc):
        lam = selection.lam
        for sgn in (+1.0, -1.0):
            row = np.zeros(p)
            row[q + k] = sgn
            rows_A.append(row)
            rows_b.append(lam - sgn * shift[k])
    A = np.vstack(rows_A) if rows_A else np.zeros((0, p))
    b = np.asarray(rows_b)
    return A, b, z_obs, C


def _truncation_limits(A, b, cov, z, k):
    """One-dimensional limits for coordinate k of z under {A z <= b}."""
    eta = np.zeros(z.shape[0])
    eta[k] = 1.0
    denom = float(eta @ cov @ eta)
    c = cov @ eta / denom
    resid = z - c * z[k]
    Ac = A @ c
    Ar = A @ resid
    tol = 1e-12 * max(1.0, float(np.max(np.abs(Ac))) if Ac.size else 1.0)
    lo_set = Ac < -tol
    hi_set = Ac > tol
    v_lo = np.max((b[lo_set] - Ar[lo_set]) / Ac[lo_set]) if np.any(lo_set) else -np.inf
    v_up = np.min((b[hi_set] - Ar[hi_set]) / Ac[hi_set]) if np.any(hi_set) else np.inf
    return v_lo, v_up


def _invert_tn(x_obs, sd, v_lo, v_up, alpha, step0, search_sd=40.0):
    """Endpoints of {mu : alpha/2 <= TN-cdf(x_obs; mu) <= 1 - alpha/2}.

    The cdf is non-increasing in mu. The bracket search is confined to
    x_obs +- search_sd standard deviations (the scale on which linear-space
    normal-tail arithmetic is meaningful); an endpoint escaping that range
    is reported infinite, which is how observations hugging a truncation
    boundary produce unbounded intervals.
    """
    def cdf(mu):
        return truncated_normal_cdf(x_obs, mu, sd, v_lo, v_up)

    budget = search_sd * sd

    def solve_for(target):
        lo, hi = x_obs, x_obs
        p_lo = p_hi = cdf(x_obs)
        step = step0
        while p_lo < target:
            lo -= step
            step *= 2.0
            if x_obs - lo > budget:
                return -np.inf if target > 0.5 else None
            p_lo = cdf(lo)
        step = step0
        while p_hi > target:
            hi += step
            step *= 2.0
            if hi - x_obs > budget:
                return np.inf if target < 0.5 else None
            p_hi = cdf(hi)
        for _ in range(300):
            mid = 0.5 * (lo + hi)
            p_mid = cdf(mid)
            if abs(p_mid - target) <= 1e-8:
                return mid
            if p_mid > target:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    lower = solve_for(1.0 - alpha / 2.0)
    upper = solve_for(alpha / 2.0)
    if lower is None:
        lower = -np.inf
    if upper is None:
        upper = np.inf
    return lower, upper


def polyhedral_intervals(design, lam, alpha, selection=None, meta=None):
    """Truncated-normal intervals after the plain lasso, conditioning on the
    selected set and its signs (both the active sign constraints and the
    inactive subgradient bounds). Endpoints may be infinite."""
    if selection is None:
        selection = solve(design, lam, null_randomization(design.p))
    targets = selection.penalized_active()
    E = list(selection.E)
    if not targets:
        return IntervalReport(method="polyhedral", alpha=alpha, E=(),
                              intervals=[], meta=dict(meta or {}))
    bhatE = wcls_refit(design, E)
    sw = sandwich(design, E, bhatE)
    sqrt_n = np.sqrt(design.n)
    A, b, z_obs, C = _selection_constraints(selection, sw, design, bhatE)

    ivs = []
    for j in targets:
        k = E.index(j)
        sd = float(np.sqrt(C[k, k]))
        v_lo, v_up = _truncation_limits(A, b, C, z_obs, k)
        if v_lo > v_up:
            warnings.warn("crossed truncation limits; widest-valid fallback")
            v_lo, v_up = -np.inf, np.inf
        if not v_lo - 1e-9 * sd <= z_obs[k] <= v_up + 1e-9 * sd:
            warnings.warn("observation escapes its truncation; widest-valid fallback")
            v_lo, v_up = -np.inf, np.inf
        lower, upper = _invert_tn(float(z_obs[k]), sd, v_lo, v_up, alpha, 2.0 * sd)
        ivs.append(TargetInterval(j=j, estimate=float(bhatE[k]),
                                  lower=lower / sqrt_n, upper=upper / sqrt_n,
                                  sigma=sw.sigma_Ej[j]))
    return IntervalReport(method="polyhedral", alpha=alpha, E=tuple(targets),
                          intervals=ivs, meta=dict(meta or {}))


def naive_intervals(design, lam, alpha, selection=None, meta=None):
    """Plain-lasso selection on the full data, then unadjusted Wald intervals
    on the same data."""
    if selection is None:
        selection = solve(design, lam, null_randomization(design.p))
    targets = selection.penalized_active()
    if not targets:
        return IntervalReport(method="naive", alpha=alpha, E=(),
                              intervals=[], meta=dict(meta or {}))
    E = list(selection.E)
    bhatE = wcls_refit(design, E)
    sw = sandwich(design, E, bhatE)
    report = wald_intervals(design, targets, bhatE, sw, alpha, "naive", meta)
    return report


def splitting_intervals(design, select_fraction, alpha, seed, kappa=1.0,
                        lam=None, meta=None):
    """Participant-level data splitting: plain lasso on the selection fold,
    classical sandwich Wald intervals on the disjoint inference fold.

    The penalty is recomputed on the selection fold with the shared rule
    unless `lam` is given explicitly.
    """
    n = design.n
    n_sel = int(round(select_fraction * n))
    if n_sel < 2 or n - n_sel < 2:
        raise ConfigError("not enough participants for both folds")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    fold_sel = design.subset(np.sort(perm[:n_sel]))
    fold_inf = design.subset(np.sort(perm[n_sel:]))

    if lam is None:
        lam = lambda_rule(fold_sel, tau=0.0, seed=rng.integers(2 ** 32), kappa=kappa)
    selection = solve(fold_sel, lam, null_randomization(design.p))
    targets = selection.penalized_active()
    if not targets:
        return IntervalReport(method="splitting", alpha=alpha, E=(),
                              intervals=[], meta=dict(meta or {}))
    E = list(selection.E)
    bhatE = wcls_refit(fold_inf, E)
    sw = sandwich(fold_inf, E, bhatE)
    meta = dict(meta or {})
    meta.update({"n_select": n_sel, "n_inference": n - n_sel, "lam": lam})
    return wald_intervals(fold_inf, targets, bhatE, sw, alpha, "splitting", meta)
