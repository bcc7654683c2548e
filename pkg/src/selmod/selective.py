"""Post-selection inference engine: master statistics, the conditioning
geometry of the randomized-lasso solution, the closed-form selection
adjustment, and the exact pivot with its interval inversion.

Conventions
-----------
All vectors and matrices inside this module live in the *permuted* column
order (active set E first, complement after), matching the block formulas.
The randomization draw is the realized sqrt(n)-scaled tilt, distributed
N(0, Omega). Signs of the active coordinates are folded into the active
hessian block, so the solution-magnitude vector sqrt(n)|beta_E| is the
positive quantity being decomposed as V + Q U.

The selection adjustment

    F(x, y) = int_{I-}^{I+} phi(L t + P1 x + P2 y + T; 0, Omega) dt

is evaluated in closed form by completing the square along L: with
w = P1 x + P2 y + T, s^2 = L' Omega^-1 L and ell = L' Omega^-1 w / s^2,

    F = (2 pi)^{-p/2} |Omega|^{-1/2} exp(-w' Theta w / 2)
        * sqrt(2 pi) / s * [Phi(s (I+ + ell)) - Phi(s (I- + ell))],

where Theta = Omega^-1 - Omega^-1 L L' Omega^-1 / s^2. Everything is
carried in log space.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import roots_legendre

from .errors import ConfigError, NumericError
from .gauss import LOG_2PI, log_gauss_mass, norm_logpdf

QUAD_ORDER = 4096
QUAD_HALFWIDTH = 12.0
PIVOT_TOL = 1e-6
MAX_DOUBLINGS = 60

_GL_CACHE = {}


def _gl_nodes(order):
    if order not in _GL_CACHE:
        _GL_CACHE[order] = roots_legendre(order)
    return _GL_CACHE[order]


@dataclass
class MasterStats:
    """Statistics through which the data enters the selection event."""

    j: int                  # original column index of the target
    jj: int                 # its position inside E
    E: list
    order: list             # permutation: E then its complement
    bhat_Ej: float          # unscaled refit coordinate
    ghat: np.ndarray        # unscaled nuisance statistic, length p-1
    sigma_Ej: float
    Sigma_Ej_col: np.ndarray
    M1: np.ndarray          # (p,)
    M2: np.ndarray          # (p-1, p)
    Sigma_big: np.ndarray   # M2 M2'
    P1: np.ndarray          # (p,), permuted order
    P2: np.ndarray          # (p, p-1), permuted order


def master_statistics(design, sw, bhatE, E, j):
    """Assemble the target/nuisance split for column j of the refit on E."""
    E = list(E)
    if j not in E:
        raise ConfigError(f"target column {j} is not in the active set")
    q = len(E)
    p = sw.H.shape[0]
    order = E + [k for k in range(p) if k not in set(E)]
    jj = E.index(j)

    Hp = sw.H[np.ix_(order, order)]
    Kp = sw.K[np.ix_(order, order)]
    Ksqrt_p = sw.K_sqrt[np.ix_(order, order)]

    H_EE = Hp[:q, :q]
    K_EE = Kp[:q, :q]
    H_EE_inv = np.linalg.inv(H_EE)
    Sigma_EE = sw.SigmaEE
    sigma2 = Sigma_EE[jj, jj]
    sigma_Ej = float(np.sqrt(sigma2))
    Sigma_col = Sigma_EE[:, jj]

    keep = [k for k in range(q) if k != jj]
    bhatE = np.asarray(bhatE, dtype=float)

    # observed nuisance statistic
    top = (bhatE - Sigma_col * (bhatE[jj] / sigma2))[keep]
    Gn, c = design.gram()
    E_comp = order[q:]
    score_Ec = -(c[E_comp] - Gn[np.ix_(E_comp, E)] @ bhatE) / design.n
    K_EcE = Kp[q:, :q]
    KinvH = np.linalg.solve(K_EE, H_EE)
    bottom = score_Ec - (Hp[q:, :q] - K_EcE @ KinvH) @ bhatE
    ghat = np.concatenate([top, bottom])

    # asymptotic-covariance factors
    M1 = np.concatenate([-H_EE_inv[jj, :], np.zeros(p - q)]) @ Ksqrt_p
    top_rows = np.hstack([
        (np.outer(Sigma_col, H_EE_inv[jj, :]) / sigma2 - H_EE_inv)[keep, :],
        np.zeros((q - 1, p - q)),
    ])
    bottom_rows = np.hstack([-K_EcE @ np.linalg.inv(K_EE), np.eye(p - q)])
    M2 = np.vstack([top_rows, bottom_rows]) @ Ksqrt_p

    P1 = -Kp[:, :q] @ (H_EE_inv[:, jj] / sigma2)
    P2 = np.vstack([
        np.hstack([-H_EE[:, keep], np.zeros((q, p - q))]),
        np.hstack([-K_EcE @ KinvH[:, keep], np.eye(p - q)]),
    ])

    return MasterStats(j=j, jj=jj, E=E, order=order,
                       bhat_Ej=float(bhatE[jj]), ghat=ghat,
                       sigma_Ej=sigma_Ej, Sigma_Ej_col=Sigma_col,
                       M1=M1, M2=M2, Sigma_big=M2 @ M2.T, P1=P1, P2=P2)


@dataclass
class ConditioningGeometry:
    """Truncation of the one-dimensional remainder of the solution magnitudes."""

    Lambda: np.ndarray
    eta: np.ndarray
    Qvec: np.ndarray
    U: float
    V: np.ndarray
    I_minus: float
    I_plus: float
    Lvec: np.ndarray     # permuted order
    Tvec: np.ndarray     # permuted order
    signs: np.ndarray
    sqrt_n: float


def truncation(selection, sw, stats, Omega, sqrt_n):
    """Conditioning geometry for the observed selection event.

    Decomposes sqrt(n) |beta_E| as V + Q U and computes the interval
    [I-, I+] on which the sign constraints keep U.
    """
    E = stats.E
    q = len(E)
    order = stats.order
    signs = np.asarray(selection.signs, dtype=float)

    Hp = sw.H[np.ix_(order, order)]
    Hbar = Hp[:, :q] * signs[None, :]
    Omega_p = np.asarray(Omega, dtype=float)[np.ix_(order, order)]
    Oinv = np.linalg.inv(Omega_p)

    Lam = np.linalg.inv(Hbar.T @ Oinv @ Hbar)
    eta = Lam @ (Hbar.T @ (Oinv @ stats.P1))
    quad = float(eta @ Lam @ eta)
    if not quad > 0 or not np.any(np.abs(eta) > 0):
        raise NumericError("degenerate truncation direction (eta vanished)")
    Qvec = (Lam @ eta) / quad

    ubar = sqrt_n * signs * selection.beta_lasso[list(E)]
    U = float(eta @ ubar)
    V = ubar - Qvec * U

    tolQ = 1e-12 * max(1.0, float(np.max(np.abs(Qvec))))
    pos = Qvec > tolQ
    neg = Qvec < -tolQ
    flat = ~(pos | neg)
    if np.any(V[flat] <= 0):
        raise NumericError("sign constraint with no dependence on U is violated")
    I_minus = float(np.max(-V[pos] / Qvec[pos])) if np.any(pos) else -np.inf
    I_plus = float(np.min(-V[neg] / Qvec[neg])) if np.any(neg) else np.inf

    slack = 1e-9 * max(1.0, abs(U))
    if not (I_minus - slack <= U <= I_plus + slack):
        raise NumericError(
            f"observed U={U:.6g} escapes its truncation [{I_minus:.6g}, {I_plus:.6g}]")

    lam_subgrad = (selection.lam_vec * selection.subgradient)[order]
    Tvec = Hbar @ V + lam_subgrad
    return ConditioningGeometry(Lambda=Lam, eta=eta, Qvec=Qvec, U=U, V=V,
                                I_minus=I_minus, I_plus=I_plus,
                                Lvec=Hbar @ Qvec, Tvec=Tvec, signs=signs,
                                sqrt_n=sqrt_n)


def kkt_reconstruction(stats, geometry, sw, selection):
    """Rebuild the randomization draw from the master statistics and the
    solution geometry; for quadratic loss with empirical H and K this equals
    omega up to solver precision. Returned in the permuted order."""
    sqrt_n = geometry.sqrt_n
    return (stats.P1 * (sqrt_n * stats.bhat_Ej)
            + stats.P2 @ (sqrt_n * stats.ghat)
            + geometry.Lvec * geometry.U
            + geometry.Tvec)


@dataclass
class PivotContext:
    """Everything the pivot needs, precomputed once per (E, j)."""

    stats: MasterStats
    geometry: ConditioningGeometry
    Omega: np.ndarray       # permuted order
    sqrt_n: float
    sigma: float
    Theta: np.ndarray
    Oinv_L: np.ndarray
    s2: float
    log_prefactor: float
    quad_order: int = QUAD_ORDER
    quad_halfwidth: float = QUAD_HALFWIDTH

    @property
    def I_minus(self):
        return self.geometry.I_minus

    @property
    def I_plus(self):
        return self.geometry.I_plus


def build_pivot_context(selection, sw, stats, Omega, sqrt_n,
                        quad_order=QUAD_ORDER, quad_halfwidth=QUAD_HALFWIDTH):
    geometry = truncation(selection, sw, stats, Omega, sqrt_n)
    order = stats.order
    Omega_p = np.asarray(Omega, dtype=float)[np.ix_(order, order)]
    Oinv = np.linalg.inv(Omega_p)
    L = geometry.Lvec
    Oinv_L = Oinv @ L
    s2 = float(L @ Oinv_L)
    if not s2 > 0:
        raise NumericError("L' Omega^-1 L must be positive")
    Theta = Oinv - np.outer(Oinv_L, Oinv_L) / s2
    p = Omega_p.shape[0]
    sign, logdet = np.linalg.slogdet(Omega_p)
    if sign <= 0:
        raise ConfigError("Omega must be positive definite")
    log_prefactor = -0.5 * p * LOG_2PI - 0.5 * logdet + 0.5 * LOG_2PI - 0.5 * np.log(s2)
    return PivotContext(stats=stats, geometry=geometry, Omega=Omega_p,
                        sqrt_n=sqrt_n, sigma=stats.sigma_Ej, Theta=Theta,
                        Oinv_L=Oinv_L, s2=s2, log_prefactor=log_prefactor,
                        quad_order=quad_order, quad_halfwidth=quad_halfwidth)


def adjustment_F(x, y, ctx):
    """log F(x, y) for scalar x and nuisance vector y (sqrt(n)-scale inputs)."""
    w = ctx.stats.P1 * x + ctx.stats.P2 @ np.asarray(y, dtype=float) + ctx.geometry.Tvec
    if ctx.I_minus > ctx.I_plus:
        raise NumericError("truncation interval is empty")
    s = np.sqrt(ctx.s2)
    ell = float(ctx.Oinv_L @ w) / ctx.s2
    mass = log_gauss_mass(s * (ctx.I_minus + ell), s * (ctx.I_plus + ell))
    return ctx.log_prefactor - 0.5 * float(w @ ctx.Theta @ w) + mass


def _logF_coefficients(y, ctx):
    """Coefficients making log F(x, y) cheap on a grid of x values."""
    wbase = ctx.stats.P2 @ np.asarray(y, dtype=float) + ctx.geometry.Tvec
    P1 = ctx.stats.P1
    qa = float(P1 @ ctx.Theta @ P1)
    qb = float(P1 @ ctx.Theta @ wbase)
    qc = float(wbase @ ctx.Theta @ wbase)
    la = float(ctx.Oinv_L @ P1) / ctx.s2
    lb = float(ctx.Oinv_L @ wbase) / ctx.s2
    return qa, qb, qc, la, lb


def _logF_grid(x, coeffs, ctx):
    qa, qb, qc, la, lb = coeffs
    s = np.sqrt(ctx.s2)
    ell = la * x + lb
    mass = log_gauss_mass(s * (ctx.I_minus + ell), s * (ctx.I_plus + ell))
    return ctx.log_prefactor - 0.5 * (qa * x * x + 2.0 * qb * x + qc) + mass


def _segments(m, xo, halfwidth):
    """Quadrature segments covering the windows around the mean and the
    observation, split at the observation point."""
    windows = sorted([(m - halfwidth, m + halfwidth),
                      (xo - halfwidth, xo + halfwidth)])
    merged = [list(windows[0])]
    for a, b in windows[1:]:
        if a <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], b)
        else:
            merged.append([a, b])
    segs = []
    for a, b in merged:
        if a < xo < b:
            segs.append((a, xo))
            segs.append((xo, b))
        else:
            segs.append((a, b))
    return segs


def pivot(bhat_Ej_obs, ghat_obs, beta, ctx):
    """Probability-integral-transform value of the observed refit coordinate
    under the selection-adjusted law with target value `beta`.

    Inputs are on the unscaled (per-observation) scale; the sqrt(n) scaling
    is applied internally.
    """
    if ctx.sigma <= 0:
        raise ConfigError("sigma must be positive")
    sn = ctx.sqrt_n
    xo = sn * bhat_Ej_obs
    m = sn * beta
    y = sn * np.asarray(ghat_obs, dtype=float)
    coeffs = _logF_coefficients(y, ctx)
    sigma = ctx.sigma
    hw = ctx.quad_halfwidth * sigma

    nodes, weights = _gl_nodes(ctx.quad_order)
    left_terms, right_terms = [], []
    for a, b in _segments(m, xo, hw):
        half = 0.5 * (b - a)
        x = half * nodes + 0.5 * (a + b)
        logI = norm_logpdf(x, m, sigma) + _logF_grid(x, coeffs, ctx)
        (left_terms if b <= xo else right_terms).append((logI, half * weights))

    all_logs = np.concatenate([t[0] for t in left_terms + right_terms])
    M = float(np.max(all_logs))
    if not np.isfinite(M):
        raise NumericError(
            "selection-adjusted density underflowed on the whole grid",
            diagnostics={"beta": beta, "bhat": bhat_Ej_obs,
                         "I": (ctx.I_minus, ctx.I_plus)})
    num = sum(float(np.sum(w * np.exp(lg - M))) for lg, w in left_terms)
    rest = sum(float(np.sum(w * np.exp(lg - M))) for lg, w in right_terms)
    denom = num + rest
    if denom <= 0:
        raise NumericError("pivot denominator underflowed after stabilization",
                           diagnostics={"beta": beta, "bhat": bhat_Ej_obs})
    return min(max(num / denom, 0.0), 1.0)


class _PivotEvaluator:
    """Cheap repeated pivot evaluation for a fixed observation.

    log F does not depend on the target value, so it is precomputed on a
    quadrature grid that covers every target seen so far; each evaluation
    then only prices the Gaussian factor on the grid. Results agree with
    `pivot` to quadrature accuracy; `invert_interval` verifies its final
    endpoints against the public `pivot` regardless.
    """

    def __init__(self, bhat_Ej_obs, ghat_obs, ctx):
        self.ctx = ctx
        self.xo = ctx.sqrt_n * bhat_Ej_obs
        self.y = ctx.sqrt_n * np.asarray(ghat_obs, dtype=float)
        self.coeffs = _logF_coefficients(self.y, ctx)
        self.hw = ctx.quad_halfwidth * ctx.sigma
        self._lo = self.xo - self.hw
        self._hi = self.xo + self.hw
        self._build()

    def _build(self):
        nodes, weights = _gl_nodes(self.ctx.quad_order)
        span = self._hi - self._lo
        if span > 400.0 * self.ctx.sigma:
            self._grid = None  # too wide for a shared grid; fall back
            return
        grids = []
        for a, b in ((self._lo, self.xo), (self.xo, self._hi)):
            half = 0.5 * (b - a)
            x = half * nodes + 0.5 * (a + b)
            logF = _logF_grid(x, self.coeffs, self.ctx)
            grids.append((x, half * weights, logF, b <= self.xo))
        self._grid = grids

    def __call__(self, beta):
        m = self.ctx.sqrt_n * beta
        if self._grid is None or m - self.hw < self._lo or m + self.hw > self._hi:
            self._lo = min(self._lo, m - self.hw)
            self._hi = max(self._hi, m + self.hw)
            self._build()
            if self._grid is None:
                return pivot(self.xo / self.ctx.sqrt_n,
                             self.y / self.ctx.sqrt_n, beta, self.ctx)
        sigma = self.ctx.sigma
        parts = []
        for x, w, logF, is_left in self._grid:
            parts.append((norm_logpdf(x, m, sigma) + logF, w, is_left))
        M = max(float(np.max(lg)) for lg, _, _ in parts)
        if not np.isfinite(M):
            raise NumericError("selection-adjusted density underflowed (fast path)")
        num = sum(float(np.sum(w * np.exp(lg - M))) for lg, w, left in parts if left)
        rest = sum(float(np.sum(w * np.exp(lg - M))) for lg, w, left in parts if not left)
        if num + rest <= 0:
            raise NumericError("pivot denominator underflowed (fast path)")
        return min(max(num / (num + rest), 0.0), 1.0)


def invert_interval(bhat_Ej_obs, ghat_obs, ctx, alpha):
    """Two-sided confidence interval by inverting the pivot.

    The pivot is non-increasing in beta; the lower endpoint solves
    pivot = 1 - alpha/2 and the upper solves pivot = alpha/2, each found by
    geometric bracket expansion followed by bisection. Always bounded.
    """
    if not 0.0 < alpha < 1.0:
        raise ConfigError("alpha must lie in (0,1)")

    fast = _PivotEvaluator(bhat_Ej_obs, ghat_obs, ctx)

    def pv_exact(beta):
        return pivot(bhat_Ej_obs, ghat_obs, beta, ctx)

    step0 = 2.0 * ctx.sigma / ctx.sqrt_n
    endpoints = []
    for target in (1.0 - alpha / 2.0, alpha / 2.0):
        beta = _solve_pivot_equation(fast, bhat_Ej_obs, target, step0,
                                     tol=0.2 * PIVOT_TOL)
        if abs(pv_exact(beta) - target) > 0.9 * PIVOT_TOL:
            beta = _solve_pivot_equation(pv_exact, bhat_Ej_obs, target, step0)
        endpoints.append(beta)
    lower, upper = endpoints
    if not lower < upper:
        raise NumericError(f"inverted endpoints out of order: {lower} >= {upper}")
    return lower, upper


def _solve_pivot_equation(pv, center, target, step0, tol=PIVOT_TOL):
    """Find beta with pv(beta) == target for a non-increasing pv."""
    # expand left until pv >= target
    lo = center
    p_lo = pv(lo)
    step = step0
    k = 0
    while p_lo < target:
        lo -= step
        step *= 2.0
        p_lo = pv(lo)
        k += 1
        if k > MAX_DOUBLINGS:
            raise NumericError(f"no left bracket for pivot target {target}")
    # expand right until pv <= target
    hi = center
    p_hi = pv(hi)
    step = step0
    k = 0
    while p_hi > target:
        hi += step
        step *= 2.0
        p_hi = pv(hi)
        k += 1
        if k > MAX_DOUBLINGS:
            raise NumericError(f"no right bracket for pivot target {target}")
    if lo == hi:
        return lo

    for _ in range(300):
        mid = 0.5 * (lo + hi)
        p_mid = pv(mid)
        if abs(p_mid - target) <= tol:
            return mid
        if p_mid > target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(1.0, abs(center)):
            break
    p_mid = pv(0.5 * (lo + hi))
    if abs(p_mid - target) > tol:
        raise NumericError(
            f"bisection stalled at pivot {p_mid:.8f}, target {target:.8f}")
    return 0.5 * (lo + hi)


def monotonicity_audit(bhat_Ej_obs, ghat_obs, ctx, lo, hi, grid=50, slack=1e-7):
    """Pivot values on a beta grid; returns (grid, values, is_non_increasing)."""
    betas = np.linspace(lo, hi, grid)
    vals = np.array([pivot(bhat_Ej_obs, ghat_obs, b, ctx) for b in betas])
    ok = bool(np.all(np.diff(vals) <= slack))
    return betas, vals, ok


def selective_intervals(design, selection, sw, bhatE, alpha, Omega,
                        targets=None, quad_order=QUAD_ORDER):
    """Pivot-inverted intervals for each requested active column.

    Returns a list of dicts (one per target) with the interval, the pivot
    value at the point estimate, and the context for auditing. Targets
    default to the penalized active columns.
    """
    if targets is None:
        targets = selection.penalized_active()
    sqrt_n = np.sqrt(design.n)
    out = []
    for j in targets:
        stats = master_statistics(design, sw, bhatE, list(selection.E), j)
        ctx = build_pivot_context(selection, sw, stats, Omega, sqrt_n,
                                  quad_order=quad_order)
        lower, upper = invert_interval(stats.bhat_Ej, stats.ghat, ctx, alpha)
        out.append({
            "j": j,
            "estimate": stats.bhat_Ej,
            "lower": lower,
            "upper": upper,
            "sigma": stats.sigma_Ej,
            "ctx": ctx,
        })
    return out
