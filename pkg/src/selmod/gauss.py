"""Log-space Gaussian primitives shared by the pivot and comparator code.

Everything here is written to stay finite far in the tails: probabilities
are carried as logs and differences of normal CDFs are computed without
cancellation.
"""

import numpy as np
from scipy.special import log_ndtr

LOG_2PI = np.log(2.0 * np.pi)


def log1mexp(x):
    """log(1 - exp(x)) for x <= 0, elementwise, without underflow."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        # expm1 branch is accurate for x near 0, log1p branch for x << 0
        out = np.where(
            x > -np.log(2.0),
            np.log(-np.expm1(np.minimum(x, 0.0))),
            np.log1p(-np.exp(np.minimum(x, 0.0))),
        )
    out = np.where(x == -np.inf, 0.0, out)
    if out.ndim == 0:
        return float(out)
    return out


def log_gauss_mass(a, b):
    """log(Phi(b) - Phi(a)) for a <= b, stable in both tails.

    Accepts +-inf endpoints; broadcasts elementwise. A numerically empty
    interval returns -inf.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a, b = np.broadcast_arrays(a, b)

    # reflect intervals on the positive axis into the negative one, where
    # log_ndtr is the accurate branch
    flip = (a > 0.0) | ((a == 0.0) & (b == np.inf))
    lo = np.where(flip, -b, a)
    hi = np.where(flip, -a, b)

    log_hi = log_ndtr(hi)
    with np.errstate(invalid="ignore"):
        diff = log_ndtr(lo) - log_hi
    out = np.where(
        lo == -np.inf,
        log_hi,
        log_hi + log1mexp(np.where(diff < 0.0, diff, 0.0)),
    )
    out = np.where((hi <= lo) | (diff >= 0.0) & (lo > -np.inf), -np.inf, out)
    if out.ndim == 0:
        return float(out)
    return out


def norm_logpdf(x, mean=0.0, sd=1.0):
    z = (np.asarray(x, dtype=float) - mean) / sd
    return -0.5 * LOG_2PI - np.log(sd) - 0.5 * z * z


def logsumexp_weighted(log_vals, weights):
    """log(sum_i w_i * exp(log_vals_i)) with positive weights."""
    log_vals = np.asarray(log_vals, dtype=float)
    weights = np.asarray(weights, dtype=float)
    m = np.max(log_vals)
    if not np.isfinite(m):
        return -np.inf
    return m + np.log(np.sum(weights * np.exp(log_vals - m)))
