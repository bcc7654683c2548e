"""Synthetic MRT generator: VAR moderators, logistic treatment assignment,
and longitudinally correlated outcome noise in three regimes.

The moderators evolve as S_t = Gamma0 S_{t-1} + A_{t-1} Gamma1 + e_t with
Gaussian innovations. The dataset exposes the *conditionally centered*
moderators Stilde_t = S_t - E[S_t | H_{t-1}, A_{t-1}] = e_t, which is the
scale on which the treatment effect is linear; the raw series still drives
treatment assignment and can be reconstructed from the stored data.

Outcome model per (participant, time):

    Y_t = theta1' Stilde_t + theta2 (A_{t-1} - p_{t-1})
          + (A_t - p_t) (beta11' Stilde_{t,active} + effect_intercept)
          + eps_t,

with eps an AR(1) Gaussian series (stationary start), optionally plus
i.i.d. Laplace or exponential noise.
"""

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from .data import MrtDataset
from .errors import ConfigError

ERROR_REGIMES = ("gaussian", "laplace", "exponential")


@dataclass(frozen=True)
class SimConfig:
    n: int = 120
    T: int = 30
    p: int = 50
    active_size: int = 5
    c: float = 2.4
    rho: float = 0.5
    theta1: np.ndarray | None = None          # default 0.8 * ones(p)
    theta2: float = 0.5
    sigma_e: float = 1.5
    Gamma0: np.ndarray | None = None          # default 0.3 * I
    Gamma1: np.ndarray | None = None          # default zeros
    error_regime: str = "gaussian"
    action_coefs: tuple = (0.2, -0.1)         # logistic slopes on leading raw moderators
    action_clip: tuple = (0.2, 0.8)
    effect_intercept: float = -0.2
    laplace_scale: float = 1.5
    exponential_scale: float = 1.5
    seed: int = 0

    def resolved(self):
        """Config with array defaults materialized and invariants checked."""
        theta1 = np.full(self.p, 0.8) if self.theta1 is None else np.asarray(self.theta1, float)
        Gamma0 = 0.3 * np.eye(self.p) if self.Gamma0 is None else np.asarray(self.Gamma0, float)
        Gamma1 = np.zeros(self.p) if self.Gamma1 is None else np.asarray(self.Gamma1, float)
        if theta1.shape != (self.p,):
            raise ConfigError("theta1 must have length p")
        if Gamma0.shape != (self.p, self.p) or Gamma1.shape != (self.p,):
            raise ConfigError("Gamma0 must be p x p and Gamma1 length p")
        if np.max(np.abs(np.linalg.eigvals(Gamma0))) >= 1.0:
            raise ConfigError("Gamma0 spectral radius must be < 1 (stationarity)")
        if not abs(self.rho) < 1.0:
            raise ConfigError("|rho| must be < 1")
        if self.c < 0.0:
            raise ConfigError("signal scalar c must be >= 0")
        if not 0 <= self.active_size <= self.p:
            raise ConfigError("active_size must lie in [0, p]")
        if self.error_regime not in ERROR_REGIMES:
            raise ConfigError(f"error_regime must be one of {ERROR_REGIMES}")
        lo, hi = self.action_clip
        if not (0.0 < lo <= hi < 1.0):
            raise ConfigError("action_clip bounds must satisfy 0 < lo <= hi < 1")
        return replace(self, theta1=theta1, Gamma0=Gamma0, Gamma1=Gamma1)

    def with_seed(self, seed):
        return replace(self, seed=seed)


@dataclass(frozen=True)
class GroundTruth:
    beta_star: np.ndarray
    active_set: tuple
    effect_intercept: float

    def __post_init__(self):
        support = tuple(int(k) for k in np.nonzero(self.beta_star)[0])
        if support != tuple(self.active_set):
            raise ConfigError("beta_star support must equal the active set")


def beta_star_for(config):
    beta = np.zeros(config.p)
    if config.active_size:
        beta[: config.active_size] = config.c / config.active_size
    return beta


def _ar1_matrix(rng, n, T, rho):
    """n independent stationary AR(1) rows with unit innovations."""
    eps = np.empty((n, T))
    eps[:, 0] = rng.normal(0.0, 1.0 / np.sqrt(1.0 - rho ** 2), size=n)
    innov = rng.normal(size=(n, T - 1)) if T > 1 else np.empty((n, 0))
    for t in range(1, T):
        eps[:, t] = rho * eps[:, t - 1] + innov[:, t - 1]
    return eps


def _error_matrix(rng, n, T, rho, regime, laplace_scale, exponential_scale):
    eps = _ar1_matrix(rng, n, T, rho)
    if regime == "laplace":
        eps = eps + rng.laplace(0.0, laplace_scale, size=(n, T))
    elif regime == "exponential":
        # deliberately not mean-centered; the offset lands in the nuisance
        eps = eps + rng.exponential(exponential_scale, size=(n, T))
    return eps


def error_process(T, rho, regime="gaussian", seed=0,
                  laplace_scale=1.5, exponential_scale=1.5):
    """One outcome-noise trajectory of length T."""
    if not abs(rho) < 1.0:
        raise ConfigError("|rho| must be < 1")
    if regime not in ERROR_REGIMES:
        raise ConfigError(f"error_regime must be one of {ERROR_REGIMES}")
    rng = np.random.default_rng(seed)
    return _error_matrix(rng, 1, T, rho, regime, laplace_scale, exponential_scale)[0]


def action_probabilities(S_raw, coefs, clip_bounds):
    """clip(logistic(coefs . leading raw moderators), lo, hi), row-wise."""
    coefs = np.asarray(coefs, dtype=float)
    k = coefs.shape[0]
    lin = S_raw[:, :k] @ coefs
    return np.clip(expit(lin), clip_bounds[0], clip_bounds[1])


def generate(config):
    """Simulate a dataset and its ground truth from the resolved config."""
    cfg = config.resolved()
    rng = np.random.default_rng(cfg.seed)
    n, T, p = cfg.n, cfg.T, cfg.p

    innov = rng.normal(0.0, cfg.sigma_e, size=(T, n, p))
    eps = _error_matrix(rng, n, T, cfg.rho, cfg.error_regime,
                        cfg.laplace_scale, cfg.exponential_scale)
    u_action = rng.random(size=(T, n))

    beta11 = beta_star_for(cfg)[: cfg.active_size]
    active = np.arange(cfg.active_size)

    S_prev = np.zeros((n, p))
    A_prev = np.zeros(n)
    p_prev = np.full(n, 0.5)

    S_centered = np.empty((T, n, p))
    actions = np.empty((T, n))
    probs = np.empty((T, n))
    Y = np.empty((T, n))

    for t in range(T):
        S_raw = S_prev @ cfg.Gamma0.T + np.outer(A_prev, cfg.Gamma1) + innov[t]
        p_t = action_probabilities(S_raw, cfg.action_coefs, cfg.action_clip)
        A_t = (u_action[t] < p_t).astype(float)

        stil = innov[t]  # S_raw minus its conditional mean given the past
        effect = beta11 @ stil[:, active].T + cfg.effect_intercept if cfg.active_size \
            else np.full(n, cfg.effect_intercept)
        Y[t] = (stil @ cfg.theta1
                + (cfg.theta2 * (A_prev - p_prev) if t > 0 else 0.0)
                + (A_t - p_t) * effect
                + eps[:, t])

        S_centered[t] = stil
        actions[t] = A_t
        probs[t] = p_t
        S_prev, A_prev, p_prev = S_raw, A_t, p_t

    ids = [f"p{i + 1:04d}" for i in range(n)]
    dataset = MrtDataset(
        ids,
        [S_centered[:, i, :] for i in range(n)],
        [actions[:, i] for i in range(n)],
        [probs[:, i] for i in range(n)],
        [Y[:, i] for i in range(n)],
    )
    truth = GroundTruth(beta_star=beta_star_for(cfg),
                        active_set=tuple(int(a) for a in active),
                        effect_intercept=cfg.effect_intercept)
    return dataset, truth


def reconstruct_raw_moderators(dataset, config):
    """Invert the conditional centering: S_t = Gamma0 S_{t-1} + A_{t-1} Gamma1 + Stilde_t.

    Used to audit that stored randomization probabilities match the logistic
    assignment model on the realized raw history.
    """
    cfg = config.resolved()
    out = []
    for i in range(dataset.n):
        stil = dataset.covariates[i]
        A = dataset.actions[i]
        T_i = stil.shape[0]
        S = np.zeros((T_i, cfg.p))
        S_prev = np.zeros(cfg.p)
        A_prev = 0.0
        for t in range(T_i):
            S[t] = cfg.Gamma0 @ S_prev + A_prev * cfg.Gamma1 + stil[t]
            S_prev, A_prev = S[t], A[t]
        out.append(S)
    return out
