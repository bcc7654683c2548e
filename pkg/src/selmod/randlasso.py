"""Gaussian-randomized lasso on the stacked design.

The criterion solved is

    (1/sqrt(n)) sum_i 0.5 ||Y_i - X_i b||^2 + sum_j lam_j |b_j| - omega' b,

where omega is a fresh N(0, tau^2 I) draw and lam_j = lam for penalized
columns, 0 for unpenalized ones (the intercept). Coordinate descent has a
closed-form update here; a final active-set polish solves the stationarity
system exactly so downstream geometry sees machine-precision KKT residuals.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ConvergenceError

KKT_RTOL = 1e-8
MAX_SWEEPS = 10_000
SWEEP_TOL = 1e-10


@dataclass(frozen=True)
class Randomization:
    """A realized randomization draw omega ~ N(0, tau^2 I_p)."""

    omega: np.ndarray
    tau: float
    seed: object

    @property
    def Omega(self):
        return self.tau ** 2 * np.eye(self.omega.shape[0])


def draw_randomization(p, tau, seed):
    if tau <= 0:
        raise ConfigError("tau must be strictly positive")
    rng = np.random.default_rng(seed)
    return Randomization(omega=rng.normal(0.0, tau, size=p), tau=float(tau), seed=seed)


@dataclass(frozen=True)
class SelectionResult:
    """Solution of the randomized lasso and its selection event."""

    beta_lasso: np.ndarray
    E: tuple                 # active columns, ascending; includes unpenalized
    signs: np.ndarray        # sign of beta_lasso on E (unpenalized sign included)
    S_inactive: np.ndarray   # subgradient on the complement of E, sup-norm <= 1
    lam: float
    lam_vec: np.ndarray      # per-column penalty (0 on unpenalized columns)
    omega: np.ndarray
    kkt_residual: float
    subgradient: np.ndarray  # full-length S with lam_vec * S entering the KKT

    @property
    def E_complement(self):
        p = self.beta_lasso.shape[0]
        return tuple(j for j in range(p) if j not in set(self.E))

    def penalized_active(self):
        return tuple(j for j in self.E if self.lam_vec[j] > 0)


def _kkt_residual(Gn, c, b, lam_vec, S, omega, sqrt_n):
    grad = (Gn @ b - c) / sqrt_n
    return grad + lam_vec * S - omega


def solve(design, lam, rand, unpenalized=None, max_sweeps=MAX_SWEEPS,
          tol=SWEEP_TOL):
    """Minimize the randomized-lasso criterion; returns a SelectionResult.

    Raises ConvergenceError (carrying the last residual) if the sweep
    tolerance is not met within `max_sweeps`.
    """
    if lam <= 0:
        raise ConfigError("lam must be strictly positive")
    if unpenalized is None:
        unpenalized = design.unpenalized
    p = design.p
    sqrt_n = np.sqrt(design.n)
    omega = np.asarray(rand.omega, dtype=float)
    if omega.shape != (p,):
        raise ConfigError("randomization dimension must match the design")

    lam_vec = np.full(p, float(lam))
    lam_vec[list(unpenalized)] = 0.0

    Gn, c = design.gram()
    diag = np.diag(Gn).copy()
    if np.any(diag <= 0):
        raise ConfigError("design has a zero column; cannot run the lasso")

    b = np.zeros(p)
    Gb = np.zeros(p)
    target = c + sqrt_n * omega
    for sweep in range(max_sweeps):
        max_delta = 0.0
        for j in range(p):
            r_j = target[j] - (Gb[j] - diag[j] * b[j])
            thresh = sqrt_n * lam_vec[j]
            if abs(r_j) <= thresh:
                b_new = 0.0
            else:
                b_new = (r_j - np.sign(r_j) * thresh) / diag[j]
            delta = b_new - b[j]
            if delta != 0.0:
                Gb += Gn[:, j] * delta
                b[j] = b_new
                max_delta = max(max_delta, abs(delta))
        if max_delta < tol * max(1.0, np.max(np.abs(b))):
            break
    else:
        resid = np.max(np.abs(_kkt_residual(Gn, c, b, lam_vec,
                                            np.sign(b), omega, sqrt_n)))
        raise ConvergenceError(
            f"coordinate descent did not converge in {max_sweeps} sweeps",
            residual=resid)

    # active-set polish: solve the stationarity system exactly for the signs
    # found by the sweeps, so the KKT identity holds to machine precision
    active = np.flatnonzero((b != 0.0) | (lam_vec == 0.0))
    if active.size:
        s_act = np.sign(b[active])
        s_act[lam_vec[active] == 0.0] = np.sign(b[active][lam_vec[active] == 0.0])
        rhs = c[active] + sqrt_n * (omega[active] - lam_vec[active] * s_act)
        b_act = np.linalg.solve(Gn[np.ix_(active, active)], rhs)
        flipped = (np.sign(b_act) != s_act) & (lam_vec[active] > 0.0)
        if not np.any(flipped):
            b = np.zeros(p)
            b[active] = b_act
        # else: keep the CD solution; the residual check below still applies

    E = tuple(int(j) for j in np.flatnonzero((b != 0.0) | (lam_vec == 0.0)))
    E_comp = [j for j in range(p) if j not in set(E)]
    grad = (Gn @ b - c) / sqrt_n

    S = np.zeros(p)
    signs = np.sign(b[list(E)]) if E else np.array([])
    for k, j in enumerate(E):
        S[j] = signs[k]
    if E_comp:
        S_inactive = (omega[E_comp] - grad[E_comp]) / lam
        S[E_comp] = S_inactive
    else:
        S_inactive = np.array([])

    resid_vec = _kkt_residual(Gn, c, b, lam_vec, S, omega, sqrt_n)
    kkt_residual = float(np.max(np.abs(resid_vec)))
    bound = KKT_RTOL * (1.0 + float(np.max(np.abs(omega))))
    if kkt_residual > bound:
        raise ConvergenceError(
            f"KKT residual {kkt_residual:.3e} exceeds bound {bound:.3e}",
            residual=kkt_residual)
    if S_inactive.size and np.max(np.abs(S_inactive)) > 1.0 + 1e-8:
        raise ConvergenceError(
            "inactive subgradient leaves [-1, 1]; solve is inconsistent",
            residual=float(np.max(np.abs(S_inactive))))

    return SelectionResult(beta_lasso=b, E=E, signs=signs, S_inactive=S_inactive,
                           lam=float(lam), lam_vec=lam_vec, omega=omega,
                           kkt_residual=kkt_residual, subgradient=S)


def selection_event_check(result):
    """Sign-consistency on E and the sup-norm bound off E."""
    b_E = result.beta_lasso[list(result.E)]
    if b_E.size and np.any(np.sign(b_E) * result.signs < 0):
        return False
    if result.S_inactive.size and np.max(np.abs(result.S_inactive)) > 1.0 + 1e-8:
        return False
    return True


def objective(design, b, lam_vec, omega):
    """Randomized-lasso criterion value at b (for minimality spot checks)."""
    X, Y = design.stacked()
    loss = 0.5 * np.sum((Y - X @ b) ** 2) / np.sqrt(design.n)
    return loss + np.sum(lam_vec * np.abs(b)) - omega @ b


def lambda_rule(design, tau, seed, kappa=1.0, n_draws=50):
    """Penalty level: kappa times the median, over Monte-Carlo draws, of the
    sup-norm of (1/sqrt(n)) X' eps* + omega*, with eps* a permutation of the
    baseline-fit residuals and omega* a fresh randomization draw.

    Only penalized columns enter the sup-norm.
    """
    rng = np.random.default_rng(seed)
    X, Y = design.stacked()
    sqrt_n = np.sqrt(design.n)
    unpen = list(design.unpenalized)
    if unpen:
        Xu = X[:, unpen]
        coef, *_ = np.linalg.lstsq(Xu, Y, rcond=None)
        resid = Y - Xu @ coef
    else:
        resid = Y - np.mean(Y)
    pen = design.penalized_columns()
    vals = np.empty(n_draws)
    for d in range(n_draws):
        eps = resid[rng.permutation(resid.shape[0])]
        score = X[:, pen].T @ eps / sqrt_n
        omega_star = rng.normal(0.0, tau, size=len(pen))
        vals[d] = np.max(np.abs(score + omega_star))
    lam = kappa * float(np.median(vals))
    if lam <= 0:
        raise ConfigError("lambda rule produced a non-positive penalty")
    return lam


def tau_rule(design):
    """Default randomization scale: tau^2 equal to the mean diagonal of the
    score covariance K at the unpenalized-columns-only baseline fit."""
    from .estimation import sandwich, wcls_refit

    base = list(design.unpenalized) if design.unpenalized else [0]
    bhat = wcls_refit(design, base)
    sw = sandwich(design, base, bhat)
    tau2 = float(np.mean(np.diag(sw.K)))
    if tau2 <= 0:
        raise ConfigError("tau rule produced a non-positive scale")
    return np.sqrt(tau2)
