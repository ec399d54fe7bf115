"""Ladder-generic early-stopped aggregation engine.

A ladder is an ordered list of candidate models, indexed ``1..M`` from the
simplest to the most complex. An evaluator maps a model index to a pair
``(criterion value, artifact)``; the engine walks the ladder, stops at the
first increase of the criterion and aggregates the evaluated prefix with
exponential weights ``exp(-criterion)``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Optional, Sequence, Tuple

import numpy as np

__all__ = [
    "LadderCriterion",
    "LadderSpec",
    "CriterionTrace",
    "StopRule",
    "EsaResult",
    "LadderEvaluationError",
    "NonFiniteCriterionError",
    "run_esa",
    "run_full",
    "exp_weights",
    "select_best",
    "aggregate_points",
]

LadderCriterion = Callable[[int], Tuple[float, Any]]


class LadderEvaluationError(RuntimeError):
    """An evaluator failed at a given (1-based) ladder index."""

    def __init__(self, index: int, message: str):
        super().__init__(f"model {index}: {message}")
        self.index = index


class NonFiniteCriterionError(LadderEvaluationError):
    pass


@dataclass(frozen=True)
class LadderSpec:
    model_count: int
    labels: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        if int(self.model_count) != self.model_count or self.model_count < 1:
            raise ValueError(f"model_count must be a positive integer, got {self.model_count!r}")
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(str(s) for s in self.labels))
            if len(self.labels) != self.model_count:
                raise ValueError(
                    f"got {len(self.labels)} labels for {self.model_count} models"
                )

    def label(self, k: int) -> str:
        return self.labels[k - 1] if self.labels is not None else str(k)


@dataclass(frozen=True)
class CriterionTrace:
    values: Tuple[float, ...]

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if not vals:
            raise ValueError("criterion trace must be nonempty")
        for i, v in enumerate(vals):
            if not math.isfinite(v):
                raise ValueError(f"non-finite criterion value {v} at position {i + 1}")
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return len(self.values)

    def __iter__(self):
        return iter(self.values)

    def __getitem__(self, i):
        return self.values[i]


@dataclass(frozen=True)
class StopRule:
    """Improvement test applied between consecutive ladder models.

    Walking stops at the first model whose criterion ``c`` fails to improve
    on its predecessor ``p``:

    * ``multiplicative``: stop when ``p < (1 + delta) * c``
    * ``additive``: stop when ``p < c + delta * |c|``

    Both reduce to the strict rule ``p < c`` at ``delta = 0``; they differ
    only for negative criteria, where the multiplicative margin works
    against earlier termination.
    """

    delta: float = 0.0
    margin_mode: str = "additive"
    traversal: str = "forward"

    def __post_init__(self):
        if not (self.delta >= 0 and math.isfinite(self.delta)):
            raise ValueError(f"delta must be finite and >= 0, got {self.delta}")
        if self.margin_mode not in ("multiplicative", "additive"):
            raise ValueError(f"unknown margin_mode {self.margin_mode!r}")
        if self.traversal not in ("forward", "backward"):
            raise ValueError(f"unknown traversal {self.traversal!r}")

    def should_stop(self, previous: float, current: float) -> bool:
        if self.margin_mode == "multiplicative":
            return previous < (1.0 + self.delta) * current
        return previous < current + self.delta * abs(current)


@dataclass(frozen=True)
class EsaResult:
    """Outcome of one ladder walk.

    ``indices`` lists the evaluated ladder indices in traversal order; the
    weights, trace values and artifacts are aligned with it. For a forward
    walk ``indices == (1, ..., stop_index)``.
    """

    stop_index: int
    weights: Tuple[float, ...]
    evaluated: CriterionTrace
    artifacts: Tuple[Any, ...]
    indices: Tuple[int, ...]

    @property
    def n_evaluated(self) -> int:
        return len(self.indices)

    @property
    def best_position(self) -> int:
        """Position (0-based, traversal order) of the maximum-weight model."""
        return select_best(self.evaluated.values) - 1

    def aggregate(self, points: Sequence[Sequence[float]]) -> np.ndarray:
        return aggregate_points(self.weights, points)


def exp_weights(values: Sequence[float]) -> Tuple[float, ...]:
    """Normalized ``exp(-c_k)`` computed after shifting by ``min(c)``."""
    c = np.asarray(values, dtype=float)
    if c.ndim != 1 or c.size == 0:
        raise ValueError("exp_weights needs a nonempty 1-d list of values")
    if not np.all(np.isfinite(c)):
        raise ValueError("exp_weights got a non-finite criterion value")
    w = np.exp(-(c - c.min()))
    w /= w.sum()
    return tuple(float(x) for x in w)


def select_best(values: Sequence[float]) -> int:
    """1-based index of the smallest value; ties go to the simpler model."""
    c = np.asarray(values, dtype=float)
    if c.ndim != 1 or c.size == 0:
        raise ValueError("select_best needs a nonempty 1-d list of values")
    if not np.all(np.isfinite(c)):
        raise ValueError("select_best got a non-finite criterion value")
    return int(np.argmin(c)) + 1


def aggregate_points(weights: Sequence[float], points: Sequence[Sequence[float]]) -> np.ndarray:
    """Coordinatewise convex combination ``sum_k w_k * points[k]``."""
    w = np.asarray(weights, dtype=float)
    P = np.asarray(points, dtype=float)
    if w.ndim != 1 or P.ndim != 2:
        raise ValueError("expected a weight vector and a list of equal-length vectors")
    if P.shape[0] != w.size:
        raise ValueError(f"{w.size} weights for {P.shape[0]} points")
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise ValueError("weights must lie in the probability simplex")
    return w @ P


def _evaluate(evaluator: LadderCriterion, k: int) -> Tuple[float, Any]:
    try:
        value, artifact = evaluator(k)
    except LadderEvaluationError:
        raise
    except Exception as exc:
        raise LadderEvaluationError(k, f"evaluator failed: {exc!r}") from exc
    value = float(value)
    if not math.isfinite(value):
        raise NonFiniteCriterionError(k, f"non-finite criterion value {value}")
    return value, artifact


def _result(indices, values, artifacts) -> EsaResult:
    return EsaResult(
        stop_index=indices[-1],
        weights=exp_weights(values),
        evaluated=CriterionTrace(tuple(values)),
        artifacts=tuple(artifacts),
        indices=tuple(indices),
    )


def run_esa(evaluator: LadderCriterion, ladder: LadderSpec, rule: StopRule = StopRule()) -> EsaResult:
    """Walk the ladder lazily and stop at the first criterion increase.

    The evaluator is called once per visited model and never for models
    past the stopping index.
    """
    M = ladder.model_count
    if rule.traversal == "forward":
        order = range(1, M + 1)
    else:
        order = range(M, 0, -1)

    indices, values, artifacts = [], [], []
    for k in order:
        value, artifact = _evaluate(evaluator, k)
        indices.append(k)
        values.append(value)
        artifacts.append(artifact)
        if len(values) >= 2 and rule.should_stop(values[-2], values[-1]):
            break
    return _result(indices, values, artifacts)


def run_full(evaluator: LadderCriterion, ladder: LadderSpec, max_workers: Optional[int] = None) -> EsaResult:
    """Evaluate every model and aggregate all of them.

    With ``max_workers > 1`` the models are evaluated on a thread pool; the
    evaluator must then be safe to call concurrently.
    """
    ks = list(range(1, ladder.model_count + 1))
    if max_workers is not None and max_workers > 1 and len(ks) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            outs = list(pool.map(lambda k: _evaluate(evaluator, k), ks))
    else:
        outs = [_evaluate(evaluator, k) for k in ks]
    return _result(ks, [v for v, _ in outs], [a for _, a in outs])
