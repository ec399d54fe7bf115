"""Coordinate-ascent variational inference for finite Gaussian mixtures.

Model: ``pi ~ Dir(alpha0)``, ``Lambda_j ~ Wishart(W0, nu0)``,
``mu_j | Lambda_j ~ N(m0, (beta0 Lambda_j)^-1)``, ``z_i ~ Cat(pi)``,
``x_i | z_i = j ~ N(mu_j, Lambda_j^-1)``. The mean-field family factorizes
as ``q(Z) q(pi) prod_j q(mu_j, Lambda_j)`` and every factor update is in
closed form. The ELBO below keeps all normalizing constants so that it can
be compared across component counts.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Callable, List, Optional, Tuple

import numpy as np
from scipy.special import digamma, gammaln, xlogy

from ..core import LadderSpec, StopRule, run_esa, run_full, select_best

logger = logging.getLogger(__name__)

EMPTY_MASS = 1e-10

__all__ = [
    "GmmPrior",
    "GmmVarState",
    "CaviConfig",
    "CaviError",
    "CaviFit",
    "empirical_prior",
    "cavi_fit",
    "elbo",
    "e_step",
    "m_step",
    "predict_labels",
    "gmm_evaluator",
    "esa_cluster",
]


class CaviError(RuntimeError):
    pass


@dataclass(frozen=True)
class GmmPrior:
    alpha0: float
    beta0: float
    m0: np.ndarray
    W0: np.ndarray
    nu0: float

    def __post_init__(self):
        m0 = np.atleast_1d(np.asarray(self.m0, dtype=float))
        W0 = np.atleast_2d(np.asarray(self.W0, dtype=float))
        d = m0.size
        if W0.shape != (d, d):
            raise ValueError(f"W0 has shape {W0.shape}, expected {(d, d)}")
        if not np.allclose(W0, W0.T):
            raise ValueError("W0 must be symmetric")
        try:
            np.linalg.cholesky(W0)
        except np.linalg.LinAlgError:
            raise ValueError("W0 must be positive definite") from None
        if self.alpha0 <= 0 or self.beta0 <= 0:
            raise ValueError("alpha0 and beta0 must be positive")
        if self.nu0 < d:
            raise ValueError(f"nu0 must be >= d = {d}")
        object.__setattr__(self, "m0", m0)
        object.__setattr__(self, "W0", W0)

    @property
    def d(self) -> int:
        return self.m0.size

    @cached_property
    def W0inv(self) -> np.ndarray:
        return np.linalg.inv(self.W0)

    @cached_property
    def log_B0(self) -> float:
        return float(_log_wishart_B(self.W0[None], np.array([self.nu0]))[0])


@dataclass(frozen=True)
class GmmVarState:
    """Variational parameters for K components plus responsibilities ``R``."""

    alpha: np.ndarray  # (K,)
    beta: np.ndarray  # (K,)
    m: np.ndarray  # (K, d)
    W: np.ndarray  # (K, d, d)
    nu: np.ndarray  # (K,)
    R: np.ndarray  # (n, K)

    @property
    def K(self) -> int:
        return self.alpha.size

    def permuted(self, perm) -> "GmmVarState":
        perm = np.asarray(perm)
        return GmmVarState(
            self.alpha[perm], self.beta[perm], self.m[perm], self.W[perm], self.nu[perm], self.R[:, perm]
        )


@dataclass(frozen=True)
class CaviConfig:
    max_iter: int = 500
    rel_tol: float = 1e-6
    restarts: int = 5
    seed: int = 0
    cov_floor: float = 0.0

    def __post_init__(self):
        if self.max_iter < 1 or self.restarts < 1:
            raise ValueError("max_iter and restarts must be >= 1")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if self.cov_floor < 0:
            raise ValueError("cov_floor must be >= 0")


@dataclass(frozen=True)
class CaviFit:
    state: GmmVarState
    elbo_trace: Tuple[float, ...]
    restart_traces: Tuple[Tuple[float, ...], ...]

    @property
    def elbo(self) -> float:
        return self.elbo_trace[-1]


def empirical_prior(X: np.ndarray) -> GmmPrior:
    """Data-centred prior: ``m0`` the sample mean, ``W0`` the inverse sample
    covariance, ``nu0 = d`` and ``alpha0 = beta0 = 1``."""
    X = np.asarray(X, dtype=float)
    d = X.shape[1]
    m0 = X.mean(axis=0)
    C = np.atleast_2d((X - m0).T @ (X - m0) / X.shape[0])
    return GmmPrior(alpha0=1.0, beta0=1.0, m0=m0, W0=np.linalg.inv(C), nu0=float(d))


def _expected_log_det(W, nu):
    d = W.shape[-1]
    _, logdet = np.linalg.slogdet(W)
    i = np.arange(1, d + 1)
    return digamma((nu[:, None] + 1 - i) / 2.0).sum(axis=1) + d * math.log(2.0) + logdet


def _log_multigamma(a, d):
    j = np.arange(d)
    return 0.25 * d * (d - 1) * math.log(math.pi) + gammaln(np.asarray(a)[..., None] - 0.5 * j).sum(axis=-1)


def _log_wishart_B(W, nu):
    # log of the Wishart normalizer B(W, nu)
    d = W.shape[-1]
    _, logdet = np.linalg.slogdet(W)
    return -0.5 * nu * logdet - 0.5 * nu * d * math.log(2.0) - _log_multigamma(nu / 2.0, d)


def _log_dirichlet_C(alpha):
    return gammaln(alpha.sum()) - gammaln(alpha).sum()


def _stats(X, R, cov_floor=0.0):
    """Component masses, weighted means and weighted covariances."""
    Nk = R.sum(axis=0)
    safe = np.where(Nk > EMPTY_MASS, Nk, 1.0)
    xbar = (R.T @ X) / safe[:, None]
    diff = X[None, :, :] - xbar[:, None, :]  # (K, n, d)
    S = np.matmul(np.transpose(diff * R.T[:, :, None], (0, 2, 1)), diff) / safe[:, None, None]
    if cov_floor > 0:
        S = S + (cov_floor / safe)[:, None, None] * np.eye(X.shape[1])
    return Nk, xbar, S


def _mahalanobis(X, m, W):
    diff = X[None, :, :] - m[:, None, :]  # (K, n, d)
    return np.sum(np.matmul(diff, W) * diff, axis=2).T


def _log_normalize(log_rho):
    top = log_rho.max(axis=1, keepdims=True)
    return log_rho - (top + np.log(np.exp(log_rho - top).sum(axis=1, keepdims=True)))


def e_step(X: np.ndarray, state: GmmVarState) -> np.ndarray:
    """Responsibilities given the current ``q(pi) q(mu, Lambda)``."""
    d = X.shape[1]
    Elogpi = digamma(state.alpha) - digamma(state.alpha.sum())
    Elogdet = _expected_log_det(state.W, state.nu)
    quad = d / state.beta[None, :] + state.nu[None, :] * _mahalanobis(X, state.m, state.W)
    log_rho = Elogpi + 0.5 * Elogdet - 0.5 * d * math.log(2 * math.pi) - 0.5 * quad
    return np.exp(_log_normalize(log_rho))


def _m_step(X, R, prior, cov_floor):
    Nk, xbar, S = _stats(X, R, cov_floor)
    empty = Nk <= EMPTY_MASS
    alpha = prior.alpha0 + Nk
    beta = prior.beta0 + Nk
    nu = prior.nu0 + Nk
    m = (prior.beta0 * prior.m0[None, :] + Nk[:, None] * xbar) / beta[:, None]
    W0inv = prior.W0inv
    dm = xbar - prior.m0[None, :]
    Winv = (
        W0inv[None]
        + Nk[:, None, None] * S
        + (prior.beta0 * Nk / beta)[:, None, None] * (dm[:, :, None] * dm[:, None, :])
    )
    Winv = 0.5 * (Winv + np.transpose(Winv, (0, 2, 1)))
    if np.any(empty):
        m[empty] = prior.m0
        Winv[empty] = W0inv
    try:
        L = np.linalg.cholesky(Winv)
    except np.linalg.LinAlgError as exc:
        raise CaviError("degenerate component scatter (Cholesky failed); raise cov_floor") from exc
    Linv = np.linalg.inv(L)
    W = np.matmul(np.transpose(Linv, (0, 2, 1)), Linv)
    if np.any(empty):
        W[empty] = prior.W0
    state = GmmVarState(alpha=alpha, beta=beta, m=m, W=W, nu=nu, R=R)
    if cov_floor > 0:
        Nk, xbar, S = _stats(X, R)
    return state, (Nk, xbar, S)


def m_step(X: np.ndarray, R: np.ndarray, prior: GmmPrior, cov_floor: float = 0.0) -> GmmVarState:
    """Dirichlet and Normal-Wishart factors given responsibilities ``R``.

    Components with mass below ``EMPTY_MASS`` are reset to the prior.
    """
    return _m_step(np.asarray(X, dtype=float), R, prior, cov_floor)[0]


def elbo(state: GmmVarState, X: np.ndarray, prior: GmmPrior) -> float:
    """Evidence lower bound, all constants included."""
    X = np.asarray(X, dtype=float)
    try:
        np.linalg.cholesky(state.W)
    except np.linalg.LinAlgError:
        raise CaviError("state has a non-SPD scale matrix") from None
    return _elbo(state, X, prior, _stats(X, state.R))


def _elbo(state, X, prior, stats):
    d = X.shape[1]
    K = state.K
    R = state.R
    Nk, xbar, S = stats
    alpha, beta, m, W, nu = state.alpha, state.beta, state.m, state.W, state.nu
    Elogpi = digamma(alpha) - digamma(alpha.sum())
    Elogdet = _expected_log_det(W, nu)
    log2pi = math.log(2 * math.pi)

    trSW = np.sum(S * W, axis=(1, 2))
    dx = xbar - m
    quad_x = np.einsum("kd,kde,ke->k", dx, W, dx)
    e_loglik = 0.5 * np.sum(Nk * (Elogdet - d / beta - nu * trSW - nu * quad_x - d * log2pi))

    e_logpz = np.sum(Nk * Elogpi)
    e_logppi = _log_dirichlet_C(np.full(K, prior.alpha0)) + (prior.alpha0 - 1.0) * Elogpi.sum()

    dm = m - prior.m0[None, :]
    quad_m = np.einsum("kd,kde,ke->k", dm, W, dm)
    trW0invW = np.sum(prior.W0inv[None] * W, axis=(1, 2))
    e_logpmulam = (
        0.5 * np.sum(d * math.log(prior.beta0 / (2 * math.pi)) + Elogdet - d * prior.beta0 / beta - prior.beta0 * nu * quad_m)
        + K * prior.log_B0
        + 0.5 * (prior.nu0 - d - 1.0) * Elogdet.sum()
        - 0.5 * np.sum(nu * trW0invW)
    )

    e_logqz = np.sum(xlogy(R, R))
    e_logqpi = np.sum((alpha - 1.0) * Elogpi) + _log_dirichlet_C(alpha)
    entropy_lam = -_log_wishart_B(W, nu) - 0.5 * (nu - d - 1.0) * Elogdet + 0.5 * nu * d
    e_logqmulam = np.sum(0.5 * Elogdet + 0.5 * d * np.log(beta / (2 * math.pi)) - 0.5 * d - entropy_lam)

    return float(e_loglik + e_logpz + e_logppi + e_logpmulam - e_logqz - e_logqpi - e_logqmulam)


def _init_responsibilities(X, K, rng):
    n = X.shape[0]
    centers = X[rng.choice(n, size=K, replace=False)]
    d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    onehot = np.zeros((n, K))
    onehot[np.arange(n), np.argmin(d2, axis=1)] = 1.0
    return 0.9 * onehot + 0.1 / K


def _run_once(X, K, prior, config, R0):
    state, stats = _m_step(X, R0, prior, config.cov_floor)
    trace = [_elbo(state, X, prior, stats)]
    for _ in range(config.max_iter - 1):
        R = e_step(X, state)
        state, stats = _m_step(X, R, prior, config.cov_floor)
        value = _elbo(state, X, prior, stats)
        if not math.isfinite(value):
            raise CaviError("ELBO became non-finite")
        trace.append(value)
        if abs(trace[-1] - trace[-2]) < config.rel_tol * abs(trace[-2]):
            break
    return state, trace


def cavi_fit(X: np.ndarray, K: int, prior: GmmPrior, config: CaviConfig = CaviConfig()) -> CaviFit:
    """Best-of-restarts CAVI fit with ``K`` components."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or not np.all(np.isfinite(X)):
        raise ValueError("data must be a finite (n, d) array")
    n, d = X.shape
    if not 1 <= K <= n:
        raise ValueError(f"need 1 <= K <= n, got K={K}, n={n}")
    if d != prior.d:
        raise ValueError(f"prior dimension {prior.d} does not match data dimension {d}")
    rng = np.random.default_rng(config.seed)
    best = None
    traces = []
    for _ in range(config.restarts):
        state, trace = _run_once(X, K, prior, config, _init_responsibilities(X, K, rng))
        traces.append(tuple(trace))
        if best is None or trace[-1] > best[1][-1]:
            best = (state, trace)
    return CaviFit(state=best[0], elbo_trace=tuple(best[1]), restart_traces=tuple(traces))


def warm_start_fit(X, state: GmmVarState, prior: GmmPrior, config: CaviConfig = CaviConfig()) -> CaviFit:
    """Continue CAVI from an existing state's responsibilities."""
    X = np.asarray(X, dtype=float)
    s, trace = _run_once(X, state.K, prior, config, state.R)
    return CaviFit(state=s, elbo_trace=tuple(trace), restart_traces=(tuple(trace),))


def embed_state(state: GmmVarState) -> GmmVarState:
    """Append an empty component (zero responsibility) to ``state``."""
    R = np.hstack([state.R, np.zeros((state.R.shape[0], 1))])
    return replace(state, R=R)


def predict_labels(state: GmmVarState) -> np.ndarray:
    """Hard labels; ``argmax`` ties go to the lowest component index."""
    return np.argmax(state.R, axis=1)


def gmm_evaluator(X, prior: GmmPrior, config: CaviConfig):
    """Ladder evaluator over ``K = 1, 2, ...`` with criterion ``-ELBO``.

    Each ``K`` draws its restarts from a seed derived from ``(config.seed, K)``
    so the fit of a given ``K`` does not depend on which other models ran.
    """
    X = np.asarray(X, dtype=float)

    def evaluate(K):
        seed = int(np.random.SeedSequence([config.seed, K]).generate_state(1)[0])
        fit = cavi_fit(X, K, prior, replace(config, seed=seed))
        return -fit.elbo, fit

    return evaluate


def esa_cluster(
    X: np.ndarray,
    K_max: int,
    prior_builder: Callable[[np.ndarray], GmmPrior] = empirical_prior,
    cavi_config: CaviConfig = CaviConfig(),
    rule: Optional[StopRule] = StopRule(),
    full: bool = False,
):
    """Walk ``K = 1..K_max`` and return ``(EsaResult, labels)``.

    Labels come from the evaluated model with the largest weight. With
    ``rule=None`` or ``full=True`` every ``K`` is fitted (full aggregation).
    """
    if K_max < 1:
        raise ValueError("K_max must be >= 1")
    X = np.asarray(X, dtype=float)
    K_max = min(K_max, X.shape[0])
    evaluator = gmm_evaluator(X, prior_builder(X), cavi_config)
    ladder = LadderSpec(K_max, tuple(f"K={k}" for k in range(1, K_max + 1)))
    if full or rule is None:
        res = run_full(evaluator, ladder)
    else:
        res = run_esa(evaluator, ladder, rule)
    fit = res.artifacts[res.best_position]
    return res, predict_labels(fit.state)


def select_cluster(res) -> Tuple[int, np.ndarray]:
    """Model-selection labels from a full ladder result: ``(K, labels)``."""
    pos = select_best(res.evaluated.values) - 1
    return res.indices[pos], predict_labels(res.artifacts[pos].state)
