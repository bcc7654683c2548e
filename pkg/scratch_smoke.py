"""Scratch validation of the core machinery (not part of the deliverable)."""
import numpy as np
from scipy.integrate import quad
from scipy.stats import kstest, norm

from selmod.design import StackedDesign
from selmod.estimation import SandwichMatrices, psd_sqrt, sandwich, wcls_refit
from selmod.randlasso import Randomization, draw_randomization, solve
from selmod.selective import (adjustment_F, build_pivot_context,
                              kkt_reconstruction, master_statistics,
                              invert_interval, pivot, truncation)

rng = np.random.default_rng(7)

# --- fixed-design regression wrapped as T=1 stacked design -------------
def make_design(n, p, X=None):
    if X is None:
        X = rng.normal(size=(n, p)) / np.sqrt(n) * np.sqrt(n)  # plain normal
    Xs = [X[i:i+1, :] for i in range(n)]
    return X

n, p = 200, 8
X = rng.normal(size=(n, p))
beta_true = np.zeros(p); beta_true[:3] = [0.5, -0.4, 0.3]
sigma_noise = 1.0
Y = X @ beta_true + rng.normal(0, sigma_noise, n)
design = StackedDesign([X[i:i+1] for i in range(n)], [Y[i:i+1] for i in range(n)])

tau = 1.0
rnd = draw_randomization(p, tau, 123)
lam = 0.7
sel = solve(design, lam, rnd)
print("E:", sel.E, "kkt resid:", sel.kkt_residual)

bhatE = wcls_refit(design, list(sel.E))
sw = sandwich(design, list(sel.E), bhatE)

# exact-regime K: sigma^2 * H
swx = SandwichMatrices(H=sw.H, K=sigma_noise**2 * sw.H, E=list(sel.E),
                       SigmaEE=np.linalg.inv(sw.H[np.ix_(list(sel.E), list(sel.E))]) * sigma_noise**2,
                       sigma_Ej={j: float(np.sqrt(sigma_noise**2 * np.linalg.inv(sw.H[np.ix_(list(sel.E), list(sel.E))])[k, k]))
                                 for k, j in enumerate(sel.E)},
                       K_sqrt=psd_sqrt(sigma_noise**2 * sw.H))

j = sel.E[0]
stats = master_statistics(design, swx, bhatE, list(sel.E), j)
print("M1 M2' max:", np.max(np.abs(stats.M1 @ stats.M2.T)))

sqrt_n = np.sqrt(n)
Omega = rnd.Omega
geom = truncation(sel, swx, stats, Omega, sqrt_n)
recon = kkt_reconstruction(stats, geom, swx, sel)
omega_perm = sel.omega[stats.order]
print("KKT reconstruction err:", np.max(np.abs(recon - omega_perm)),
      "(bound", 1e-6 * (1 + np.max(np.abs(sel.omega))), ")")

ctx = build_pivot_context(sel, swx, stats, Omega, sqrt_n)

# F closed form vs quadrature at random (x, y)
for trial in range(3):
    x = rng.normal() * 3
    y = rng.normal(size=p - 1) * 2
    w = stats.P1 * x + stats.P2 @ y + geom.Tvec
    Oinv = np.linalg.inv(Omega)
    def integrand(t):
        v = geom.Lvec * t + w
        return np.exp(-0.5 * v @ Oinv @ v) * (2 * np.pi) ** (-p / 2) * np.linalg.det(Omega) ** (-0.5)
    a = geom.I_minus if np.isfinite(geom.I_minus) else -50
    b = geom.I_plus if np.isfinite(geom.I_plus) else 50
    val, err = quad(integrand, a, b, limit=200)
    logF = adjustment_F(x, y, ctx)
    print(f"F quad {val:.12e}  closed {np.exp(logF):.12e}  rel {abs(val-np.exp(logF))/val:.2e}")

# pivot uniformity over replications (exact regime, fixed X)
print("running uniformity check...")
pivots = []
H = X.T @ X / n
for rep in range(400):
    rng_r = np.random.default_rng(10_000 + rep)
    Yr = X @ beta_true + rng_r.normal(0, sigma_noise, n)
    d_r = StackedDesign([X[i:i+1] for i in range(n)], [Yr[i:i+1] for i in range(n)])
    om_r = Randomization(omega=rng_r.normal(0, tau, p), tau=tau, seed=None)
    try:
        sel_r = solve(d_r, lam, om_r)
    except Exception as e:
        print("solve fail", e)
        continue
    if len(sel_r.E) == 0:
        continue
    E_r = list(sel_r.E)
    bhat_r = wcls_refit(d_r, E_r)
    HEE = H[np.ix_(E_r, E_r)]
    SigEE = sigma_noise**2 * np.linalg.inv(HEE)
    swr = SandwichMatrices(H=H, K=sigma_noise**2 * H, E=E_r, SigmaEE=SigEE,
                           sigma_Ej={j2: float(np.sqrt(SigEE[k, k])) for k, j2 in enumerate(E_r)},
                           K_sqrt=psd_sqrt(sigma_noise**2 * H))
    jpick = E_r[int(rng_r.integers(len(E_r)))]
    st_r = master_statistics(d_r, swr, bhat_r, E_r, jpick)
    ctx_r = build_pivot_context(sel_r, swr, st_r, Omega, sqrt_n)
    # true projected target for fixed design
    beta_proj = np.linalg.solve(X[:, E_r].T @ X[:, E_r], X[:, E_r].T @ (X @ beta_true))
    pv = pivot(st_r.bhat_Ej, st_r.ghat, beta_proj[E_r.index(jpick)], ctx_r)
    pivots.append(pv)

pivots = np.array(pivots)
print("n pivots:", len(pivots), "mean:", pivots.mean())
print("KS:", kstest(pivots, "uniform"))

# interval inversion + Wald-limit sanity
lo, up = invert_interval(stats.bhat_Ej, stats.ghat, ctx, 0.1)
print("90% SI interval:", lo, up, " estimate:", stats.bhat_Ej)
print("pivot at endpoints:", pivot(stats.bhat_Ej, stats.ghat, lo, ctx),
      pivot(stats.bhat_Ej, stats.ghat, up, ctx))
