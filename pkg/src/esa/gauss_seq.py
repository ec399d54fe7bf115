"""Closed-form ESA on the Gaussian sequence model.

Observations are ``x_i = theta*_i + z_i`` with ``z_i ~ N(0, 1/n)`` and
``theta*_i = i^(-beta* - 1/2)``. Model ``k`` keeps the first
``c_k = floor(n^q(k))`` coordinates with independent ``N(0, psi)`` priors
and pins the rest at zero. Under the square loss ``n ||x - theta||^2`` the
tempered posterior is Gaussian, so the minimized free energy, the
posterior and the theoretical excess risk all have closed forms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import simpson
from scipy.special import zeta

from .core import LadderSpec, StopRule, aggregate_points, run_esa, run_full

__all__ = [
    "SeqConfig",
    "SeqData",
    "CoordGaussPosterior",
    "EbConfig",
    "simulate_seq",
    "cutoff",
    "mvfe_seq",
    "mvfe_bruteforce",
    "posterior_k",
    "vfe_identity",
    "seq_evaluator",
    "esa_posterior_mean",
    "full_posterior_mean",
    "oracle_excess_risk",
    "oracle_excess_risk_bruteforce",
    "oracle_curve",
    "near_optimal_index",
    "mvfe_fixed_psi",
    "eb_mvfe",
    "golden_section",
    "true_excess_risk",
]

# guards floor/ceil of n**q against round-off, e.g. 1000**(1/3) = 9.999...
_POW_EPS = 1e-9


@dataclass(frozen=True)
class SeqConfig:
    n: int
    beta_star: float
    q_ladder: Tuple[float, ...]
    lam: float = 0.5
    xi1: Optional[float] = None
    trunc_dim: Optional[int] = None

    def __post_init__(self):
        q = tuple(float(v) for v in self.q_ladder)
        object.__setattr__(self, "q_ladder", q)
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n}")
        if not q:
            raise ValueError("q_ladder is empty")
        if any(v < 0 or v > 1 for v in q) or any(b <= a for a, b in zip(q, q[1:])):
            raise ValueError(f"q_ladder must be strictly increasing in [0, 1], got {q}")
        if not (self.beta_star > 0 and self.lam > 0):
            raise ValueError("beta_star and lam must be positive")
        if self.xi1 is None:
            object.__setattr__(self, "xi1", float(self.lam))
        if self.xi1 <= 0:
            raise ValueError("xi1 must be positive")
        d_min = math.ceil(self.n ** q[-1] - _POW_EPS)
        if self.trunc_dim is None:
            object.__setattr__(self, "trunc_dim", max(d_min, 1))
        elif self.trunc_dim < d_min or self.trunc_dim < 1:
            raise ValueError(f"trunc_dim must be >= ceil(n^q(M)) = {d_min}")

    @property
    def M(self) -> int:
        return len(self.q_ladder)

    @property
    def D(self) -> int:
        return self.trunc_dim

    def ladder(self) -> LadderSpec:
        return LadderSpec(self.M, tuple(f"q={q:g}" for q in self.q_ladder))


@dataclass(frozen=True)
class SeqData:
    x: np.ndarray
    theta_star: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        t = np.asarray(self.theta_star, dtype=float)
        if x.shape != t.shape or x.ndim != 1:
            raise ValueError("x and theta_star must be 1-d arrays of equal length")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(t))):
            raise ValueError("non-finite entries in sequence data")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "theta_star", t)


@dataclass(frozen=True)
class CoordGaussPosterior:
    """Gaussian posterior over the first ``cutoff`` coordinates."""

    cutoff: int
    means: np.ndarray
    variances: np.ndarray

    def mean_vector(self, D: int) -> np.ndarray:
        out = np.zeros(D)
        out[: self.cutoff] = self.means
        return out


@dataclass(frozen=True)
class EbConfig:
    psi_min: float = 1e-3
    psi_max: float = 1e3
    rho_bar: float = 1.0
    upsilon: Callable[[float], float] = field(default=lambda psi: 0.0)
    tol: float = 1e-10

    def __post_init__(self):
        if not (0 < self.psi_min <= self.psi_max):
            raise ValueError(f"need 0 < psi_min <= psi_max, got {self.psi_min}, {self.psi_max}")
        if self.rho_bar < 1:
            raise ValueError("rho_bar must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be positive")


def true_theta(beta_star: float, D: int) -> np.ndarray:
    return np.arange(1, D + 1, dtype=float) ** (-beta_star - 0.5)


def simulate_seq(config: SeqConfig, seed) -> SeqData:
    rng = np.random.default_rng(seed)
    theta = true_theta(config.beta_star, config.D)
    x = theta + rng.standard_normal(config.D) / math.sqrt(config.n)
    return SeqData(x=x, theta_star=theta)


def cutoff(config: SeqConfig, k: int) -> int:
    """Number of free coordinates in model ``k``, clamped to ``[0, D]``."""
    if not 1 <= k <= config.M:
        raise IndexError(f"model index {k} outside [1, {config.M}]")
    c = math.floor(config.n ** config.q_ladder[k - 1] + _POW_EPS)
    return min(max(c, 0), config.D)


def _tail_sq_sum(beta_star: float, start: int) -> float:
    """sum_{i > start} theta*_i^2 = zeta(2 beta* + 1, start + 1)."""
    return float(zeta(2.0 * beta_star + 1.0, start + 1))


def _gauss_conv_nll(x, a, psi=1.0):
    # -log int exp(-a (x - t)^2) N(t; 0, psi) dt
    s = 1.0 + 2.0 * a * psi
    return 0.5 * np.log(s) + a * np.square(x) / s


def mvfe_seq(data: SeqData, k: int, config: SeqConfig) -> float:
    """Minimized free energy of model ``k`` over the first ``D`` coordinates."""
    c = cutoff(config, k)
    a = config.lam * config.n
    x = data.x[: config.D]
    return float(np.sum(_gauss_conv_nll(x[:c], a)) + a * np.sum(np.square(x[c:])))


def _log_simpson_nll(centers, a, grid_points, lo=-10.0, hi=10.0):
    """-log int exp(-a (x - t)^2) phi(t) dt by composite Simpson, per center."""
    if grid_points < 1000:
        raise ValueError("grid_points must be at least 1000")
    m = int(grid_points) | 1  # Simpson wants an odd node count
    t = np.linspace(lo, hi, m)
    out = np.empty(len(centers))
    for j, x in enumerate(centers):
        logf = -a * (x - t) ** 2 - 0.5 * t**2 - 0.5 * math.log(2 * math.pi)
        top = logf.max()
        out[j] = -(top + math.log(simpson(np.exp(logf - top), x=t)))
    return out


def mvfe_bruteforce(data: SeqData, k: int, config: SeqConfig, grid_points: int = 20001) -> float:
    """Quadrature counterpart of :func:`mvfe_seq`."""
    c = cutoff(config, k)
    a = config.lam * config.n
    x = data.x[: config.D]
    return float(_log_simpson_nll(x[:c], a, grid_points).sum() + a * np.sum(x[c:] ** 2))


def posterior_k(data: SeqData, k: int, config: SeqConfig) -> CoordGaussPosterior:
    c = cutoff(config, k)
    s = 1.0 + 2.0 * config.lam * config.n
    means = 2.0 * config.lam * config.n * data.x[:c] / s
    return CoordGaussPosterior(cutoff=c, means=means, variances=np.full(c, 1.0 / s))


def vfe_identity(data: SeqData, post: CoordGaussPosterior, config: SeqConfig) -> float:
    """``lam * E_Q[loss] + KL(Q, prior)`` for a coordinatewise Gaussian ``Q``.

    The loss is restricted to the first ``D`` coordinates; coordinates above
    the cutoff are pinned at zero under both ``Q`` and the prior.
    """
    a = config.lam * config.n
    x = data.x[: config.D]
    c = post.cutoff
    mu, v = post.means, post.variances
    expected_loss = np.sum((x[:c] - mu) ** 2 + v) + np.sum(x[c:] ** 2)
    kl = 0.5 * np.sum(v + mu**2 - 1.0 - np.log(v))
    return float(a * expected_loss + kl)


def seq_evaluator(data: SeqData, config: SeqConfig):
    def evaluate(k):
        return mvfe_seq(data, k, config), posterior_k(data, k, config)

    return evaluate


def esa_posterior_mean(data: SeqData, config: SeqConfig, rule: StopRule = StopRule()):
    """ESA-weighted average of per-model posterior means (length ``D``).

    Returns the mean vector and the underlying :class:`~esa.core.EsaResult`.
    """
    res = run_esa(seq_evaluator(data, config), config.ladder(), rule)
    means = [post.mean_vector(config.D) for post in res.artifacts]
    return aggregate_points(res.weights, means), res


def full_posterior_mean(data: SeqData, config: SeqConfig):
    res = run_full(seq_evaluator(data, config), config.ladder())
    means = [post.mean_vector(config.D) for post in res.artifacts]
    return aggregate_points(res.weights, means), res


def oracle_excess_risk(config: SeqConfig, theta_star: np.ndarray, k: int) -> float:
    """``-log int exp(-xi1 * n ||theta - theta*||^2) dPrior_k``.

    Coordinates beyond ``len(theta_star)`` follow the power law of the
    configured ``beta_star`` and are summed in closed form.
    """
    c = cutoff(config, k)
    b = config.xi1 * config.n
    t = np.asarray(theta_star, dtype=float)
    active = np.sum(_gauss_conv_nll(t[:c], b))
    inactive = np.sum(t[c:] ** 2) + _tail_sq_sum(config.beta_star, len(t))
    return float(active + b * inactive)


def oracle_excess_risk_bruteforce(config: SeqConfig, theta_star, k: int, grid_points: int = 20001) -> float:
    c = cutoff(config, k)
    b = config.xi1 * config.n
    t = np.asarray(theta_star, dtype=float)
    inactive = np.sum(t[c:] ** 2) + _tail_sq_sum(config.beta_star, len(t))
    return float(_log_simpson_nll(t[:c], b, grid_points).sum() + b * inactive)


def oracle_curve(config: SeqConfig) -> np.ndarray:
    theta = true_theta(config.beta_star, config.D)
    return np.array([oracle_excess_risk(config, theta, k) for k in range(1, config.M + 1)])


def near_optimal_index(excess_risks: Sequence[float], tau: float) -> int:
    """Smallest ``k`` with ``E(k) <= (1 + tau) E(k+1)``, else ``M`` (1-based)."""
    E = [float(e) for e in excess_risks]
    if not E or not all(math.isfinite(e) for e in E):
        raise ValueError("need a nonempty list of finite excess risks")
    if tau < 0:
        raise ValueError("tau must be >= 0")
    for k in range(len(E) - 1):
        if E[k] <= (1.0 + tau) * E[k + 1]:
            return k + 1
    return len(E)


def mvfe_fixed_psi(data: SeqData, k: int, config: SeqConfig, psi: float, rho_bar: float = 1.0) -> float:
    """Minimized free energy with prior variance ``psi`` and rate ``lam / rho_bar``."""
    c = cutoff(config, k)
    a = config.lam * config.n / rho_bar
    x = data.x[: config.D]
    return float(np.sum(_gauss_conv_nll(x[:c], a, psi)) + a * np.sum(x[c:] ** 2))


def golden_section(f: Callable[[float], float], lo: float, hi: float, tol: float) -> Tuple[float, float]:
    """Minimize ``f`` on ``[lo, hi]``; returns ``(argmin, min)``.

    The bracket endpoints are compared with the interior result, so a
    minimum attained at a bound is returned exactly.
    """
    if hi < lo:
        raise ValueError("empty search interval")
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    candidates = [(fc, c), (fd, d), (f(lo), lo), (f(hi), hi)]
    fbest, xbest = min(candidates, key=lambda p: p[0])
    return xbest, fbest


def eb_mvfe(data: SeqData, k: int, config: SeqConfig, eb: EbConfig = EbConfig()) -> Tuple[float, float]:
    """Free energy jointly minimized over the posterior and the prior variance.

    Returns ``(value, psi_hat)``; ``value`` includes ``upsilon(psi_hat)``.
    """
    c = cutoff(config, k)
    a = config.lam * config.n / eb.rho_bar
    x = data.x[: config.D]
    x_act = x[:c]
    inactive = a * float(np.sum(x[c:] ** 2))

    def objective(psi):
        return float(np.sum(_gauss_conv_nll(x_act, a, psi))) + inactive + float(eb.upsilon(psi))

    candidates = [(objective(eb.psi_min), eb.psi_min), (objective(eb.psi_max), eb.psi_max)]
    if eb.psi_min < eb.psi_max:
        # the objective varies on the scale of log(psi)
        u, val = golden_section(
            lambda u: objective(math.exp(u)), math.log(eb.psi_min), math.log(eb.psi_max), eb.tol
        )
        candidates.append((val, math.exp(u)))
    val, psi = min(candidates, key=lambda p: p[0])
    return val, float(psi)


def true_excess_risk(estimate, theta_star, n: int, beta_star: Optional[float]) -> float:
    """``n ||estimate - theta*||^2`` including coordinates beyond the estimate.

    The tail beyond ``len(theta_star)`` follows the ``beta_star`` power law
    and is added in closed form; pass ``None`` for a finite-dimensional truth.
    """
    est = np.asarray(estimate, dtype=float)
    t = np.asarray(theta_star, dtype=float)
    if est.shape != t.shape:
        raise ValueError(f"estimate has shape {est.shape}, theta_star {t.shape}")
    tail = _tail_sq_sum(beta_star, len(t)) if beta_star is not None else 0.0
    return float(n * (np.sum((est - t) ** 2) + tail))
