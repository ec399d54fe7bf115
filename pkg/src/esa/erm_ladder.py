"""Frequentist ESA over empirical-risk ladders, instantiated on kNN regression.

Three criteria are supported: AICc on training residuals, the validation
SSE of a single train/validation split (sample-splitting ESA), and a
penalized empirical risk ``lam * loss + H_k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial import cKDTree

from .core import EsaResult, LadderSpec, StopRule, aggregate_points, run_esa, run_full

__all__ = [
    "RegressionData",
    "KnnLadderSpec",
    "AICc",
    "ValidationSSE",
    "Penalized",
    "InterpolationError",
    "knn_predict",
    "KnnRegressor",
    "aicc",
    "mper",
    "df_penalty",
    "knn_evaluator",
    "esa_regress",
    "predict_from_result",
]

DEFAULT_NEIGHBORS = (1, 3, 5, 10, 20, 40, 80, 160)


class InterpolationError(ValueError):
    """AICc is undefined: zero residuals or too many degrees of freedom."""


@dataclass(frozen=True)
class RegressionData:
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float).ravel()
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[0] != y.size:
            raise ValueError(f"X of shape {X.shape} does not match {y.size} responses")
        if y.size < 2:
            raise ValueError("need at least two observations")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("non-finite entries in regression data")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.y.size

    def subset(self, idx) -> "RegressionData":
        return RegressionData(self.X[idx], self.y[idx])


@dataclass(frozen=True)
class KnnLadderSpec:
    neighbor_counts: Tuple[int, ...] = DEFAULT_NEIGHBORS

    def __post_init__(self):
        ks = tuple(int(k) for k in self.neighbor_counts)
        if not ks or ks[0] < 1 or any(b <= a for a, b in zip(ks, ks[1:])):
            raise ValueError(f"neighbor counts must be strictly increasing positive integers, got {ks}")
        object.__setattr__(self, "neighbor_counts", ks)

    @property
    def M(self) -> int:
        return len(self.neighbor_counts)

    def check(self, n_train: int):
        if self.neighbor_counts[-1] > n_train:
            raise ValueError(
                f"ladder needs {self.neighbor_counts[-1]} neighbors but only {n_train} training points"
            )

    def ladder(self) -> LadderSpec:
        return LadderSpec(self.M, tuple(f"k={k}" for k in self.neighbor_counts))


@dataclass(frozen=True)
class AICc:
    pass


@dataclass(frozen=True)
class ValidationSSE:
    split_fraction: float = 0.2
    seed: int = 0
    alpha: float = 1.0

    def __post_init__(self):
        if not 0 < self.split_fraction < 1:
            raise ValueError("split_fraction must lie in (0, 1)")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")


@dataclass(frozen=True)
class Penalized:
    """``lam * training SSE + H_k``.

    ``H`` must be nonnegative and nondecreasing in the order the ladder is
    walked (checked by :func:`esa_regress` against the stop rule).
    """

    H: Tuple[float, ...]
    lam: float = 1.0

    def __post_init__(self):
        H = tuple(float(h) for h in self.H)
        if any(not math.isfinite(h) or h < 0 for h in H):
            raise ValueError("penalties must be finite and nonnegative")
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        object.__setattr__(self, "H", H)

    def check_order(self, traversal: str):
        seq = self.H if traversal == "forward" else self.H[::-1]
        if any(b < a for a, b in zip(seq, seq[1:])):
            raise ValueError(
                f"penalties must be nondecreasing along the {traversal} walk; "
                "for df-based penalties on an increasing neighbor ladder use traversal='backward'"
            )


CriterionKind = Union[AICc, ValidationSSE, Penalized]


class KnnRegressor:
    """Exact Euclidean kNN with ties broken by lower training index."""

    def __init__(self, train: RegressionData):
        self.train = train
        self._tree = cKDTree(train.X)

    def neighbors(self, query: np.ndarray, k_nbr: int) -> np.ndarray:
        """Indices (sorted ascending) of the ``k_nbr`` nearest training points."""
        n = self.train.n
        if not 1 <= k_nbr <= n:
            raise ValueError(f"k_nbr must lie in [1, {n}], got {k_nbr}")
        Q = np.atleast_2d(np.asarray(query, dtype=float))
        kq = min(k_nbr + 1, n)
        dist, idx = self._tree.query(Q, k=kq)
        dist = np.asarray(dist).reshape(len(Q), kq)
        idx = np.asarray(idx).reshape(len(Q), kq)
        chosen = idx[:, :k_nbr].copy()
        if kq > k_nbr:
            # a tie across the k-th boundary makes the tree's pick arbitrary
            kth, nxt = dist[:, k_nbr - 1], dist[:, k_nbr]
            ambiguous = np.flatnonzero(nxt - kth <= 1e-12 * np.maximum(kth, 1.0))
            for r in ambiguous:
                chosen[r] = _exact_neighbors(self.train.X, Q[r], k_nbr)
        return np.sort(chosen, axis=1)

    def predict(self, query: np.ndarray, k_nbr: int) -> np.ndarray:
        return self.train.y[self.neighbors(query, k_nbr)].mean(axis=1)


def _exact_neighbors(X, q, k):
    d2 = np.sum((X - q) ** 2, axis=1)
    return np.lexsort((np.arange(len(d2)), d2))[:k]


def knn_predict(train: RegressionData, query: np.ndarray, k_nbr: int) -> np.ndarray:
    """Unweighted mean response of the ``k_nbr`` nearest training points."""
    return KnnRegressor(train).predict(query, k_nbr)


def aicc(sse: float, df: float, n: int) -> float:
    """``n log(SSE/n) + 2 df + 2 df (df + 1) / (n - df - 1)``."""
    if sse <= 0:
        raise InterpolationError(
            "AICc needs a positive SSE; zero residuals mean the model interpolates "
            "(drop k_nbr = 1 from the ladder)"
        )
    if df >= n - 1:
        raise InterpolationError(
            f"AICc needs df < n - 1 (df={df}, n={n}); drop the smallest neighbor counts"
        )
    return n * math.log(sse / n) + 2.0 * df + 2.0 * df * (df + 1.0) / (n - df - 1.0)


def mper(empirical_loss: float, H_k: float, lam: float) -> float:
    """Penalized empirical risk ``lam * loss + H_k``."""
    return lam * empirical_loss + H_k


def df_penalty(neighbor_counts: Sequence[int], n: int) -> Tuple[float, ...]:
    """Heuristic ``H_k = 4 df_k log(3n)`` with ``df_k = n / k``.

    kNN has no exact parameter dimension; ``n / k`` stands in for it.
    """
    return tuple(4.0 * (n / k) * math.log(3.0 * n) for k in neighbor_counts)


def _split(n, split_fraction, seed):
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_val = int(round(split_fraction * n))
    if n_val < 1 or n_val > n - 1:
        raise ValueError(f"split_fraction {split_fraction} leaves an empty part for n={n}")
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def knn_evaluator(data: RegressionData, ladder: KnnLadderSpec, criterion: CriterionKind):
    """Ladder evaluator returning ``(criterion, (k_nbr, fitted regressor))``."""
    if isinstance(criterion, ValidationSSE):
        tr, va = _split(data.n, criterion.split_fraction, criterion.seed)
        fit_data, val_data = data.subset(tr), data.subset(va)
    else:
        fit_data, val_data = data, None
    ladder.check(fit_data.n)
    model = KnnRegressor(fit_data)
    n = fit_data.n

    def evaluate(k):
        k_nbr = ladder.neighbor_counts[k - 1]
        if isinstance(criterion, ValidationSSE):
            resid = val_data.y - model.predict(val_data.X, k_nbr)
            value = criterion.alpha * float(resid @ resid)
        else:
            resid = fit_data.y - model.predict(fit_data.X, k_nbr)
            sse = float(resid @ resid)
            if isinstance(criterion, AICc):
                value = aicc(sse, n / k_nbr, n)
            else:
                value = mper(sse, criterion.H[k - 1], criterion.lam)
        return value, (k_nbr, model)

    return evaluate


def predict_from_result(res: EsaResult, test_X: np.ndarray) -> np.ndarray:
    preds = [model.predict(test_X, k_nbr) for k_nbr, model in res.artifacts]
    return aggregate_points(res.weights, preds)


def esa_regress(
    data: RegressionData,
    ladder: KnnLadderSpec,
    criterion: CriterionKind,
    rule: StopRule = StopRule(),
    test_X: Optional[np.ndarray] = None,
    full: bool = False,
):
    """Walk the neighbor ladder and return ``(EsaResult, test predictions)``.

    Predictions are the weight-averaged per-model predictions; ``None`` when
    no ``test_X`` is given.
    """
    if isinstance(criterion, Penalized):
        if len(criterion.H) != ladder.M:
            raise ValueError(f"{len(criterion.H)} penalties for {ladder.M} models")
        criterion.check_order("forward" if full else rule.traversal)
    evaluator = knn_evaluator(data, ladder, criterion)
    res = run_full(evaluator, ladder.ladder()) if full else run_esa(evaluator, ladder.ladder(), rule)
    preds = None if test_X is None else predict_from_result(res, test_X)
    return res, preds
