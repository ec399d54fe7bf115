"""Early-stopped aggregation (ESA) over complexity-ordered model ladders."""

from .core import (
    CriterionTrace,
    EsaResult,
    LadderEvaluationError,
    LadderSpec,
    NonFiniteCriterionError,
    StopRule,
    aggregate_points,
    exp_weights,
    run_esa,
    run_full,
    select_best,
)

__version__ = "0.1.0"
