"""Replicated ESA / FA / MS comparisons on synthetic data.

Replicate ``r`` of a run with master seed ``s`` uses the seed
``SeedSequence([s, r]).generate_state(1)[0]``, so any single replicate can
be rerun in isolation. Timings cover the ladder walk only; data generation
and final prediction are excluded.
"""

from __future__ import annotations

import logging
import os
import math
import time
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .. import gauss_seq as gs
from ..core import LadderSpec, StopRule, run_esa, run_full, select_best
from ..erm_ladder import (
    AICc,
    KnnLadderSpec,
    KnnRegressor,
    Penalized,
    RegressionData,
    ValidationSSE,
    df_penalty,
    knn_evaluator,
    predict_from_result,
)
from ..vgmm import CaviConfig, ari, empirical_prior, gen_setting_a, gen_setting_b, gmm_evaluator, nmi
from ..vgmm.cavi import predict_labels
from .records import RunRecord

logger = logging.getLogger(__name__)

__all__ = [
    "ExperimentConfig",
    "replicate_seed",
    "run_gauss_experiment",
    "run_cluster_experiment",
    "run_knn_experiment",
    "run_experiment",
    "gen_regression",
    "cv_select",
]

EXPERIMENTS = ("gauss-seq", "gmm", "knn")
METHODS = ("esa", "fa", "ms")
MARGIN_MODES = {"mult": "multiplicative", "add": "additive", "multiplicative": "multiplicative", "additive": "additive"}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    methods: Tuple[str, ...] = METHODS
    replicates: int = 1
    seed: int = 0
    delta: float = 0.0
    margin_mode: str = "additive"
    out_path: Optional[str] = None
    timing: bool = True
    n: Optional[int] = None
    # gauss-seq
    beta_star: float = 1.0
    q_ladder: Tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    lam: float = 0.5
    xi1: Optional[float] = None
    # gmm
    setting: str = "a"
    k_max: int = 10
    restarts: int = 5
    noise_var: float = 0.15
    # knn
    ladder: Optional[Tuple[int, ...]] = None
    criterion: str = "aicc"
    alpha: float = 1.0
    split: float = 0.2
    sigma: float = 0.3
    p: int = 2
    test_fraction: float = 0.2
    cv_folds: int = 5

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        methods = tuple(self.methods)
        if not methods or any(m not in METHODS for m in methods):
            raise ValueError(f"methods must be a nonempty subset of {METHODS}, got {methods}")
        object.__setattr__(self, "methods", methods)
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if self.margin_mode not in MARGIN_MODES:
            raise ValueError(f"unknown margin mode {self.margin_mode!r}")
        object.__setattr__(self, "margin_mode", MARGIN_MODES[self.margin_mode])
        if self.n is None:
            object.__setattr__(self, "n", 4096 if self.experiment == "gauss-seq" else 500)
        if self.n < 2:
            raise ValueError("n must be >= 2")
        if self.setting not in ("a", "b"):
            raise ValueError("setting must be 'a' or 'b'")
        if self.out_path:
            parent = os.path.dirname(os.path.abspath(self.out_path))
            if not (os.path.isdir(parent) and os.access(parent, os.W_OK)):
                raise ValueError(f"output directory {parent!r} is missing or not writable")
        if self.k_max < 1:
            raise ValueError("k_max must be >= 1")
        if self.criterion not in ("aicc", "val", "pen"):
            raise ValueError("criterion must be one of aicc, val, pen")
        if self.ladder is None:
            # k_nbr = 1 interpolates the training data, where AICc is undefined
            default = (3, 5, 10, 20, 40, 80, 160) if self.criterion == "aicc" else (1, 3, 5, 10, 20, 40, 80, 160)
            object.__setattr__(self, "ladder", default)
        object.__setattr__(self, "ladder", tuple(int(k) for k in self.ladder))
        if self.criterion == "aicc" and self.ladder and self.ladder[0] == 1:
            raise ValueError("AICc is undefined for k_nbr = 1 (df = n); drop 1 from the ladder")
        object.__setattr__(self, "q_ladder", tuple(float(q) for q in self.q_ladder))
        StopRule(self.delta, self.margin_mode)

    @property
    def rule(self) -> StopRule:
        return StopRule(delta=self.delta, margin_mode=self.margin_mode)

    def seq_config(self) -> gs.SeqConfig:
        return gs.SeqConfig(n=self.n, beta_star=self.beta_star, q_ladder=self.q_ladder, lam=self.lam, xi1=self.xi1)


def replicate_seed(master: int, replicate: int) -> int:
    return int(np.random.SeedSequence([int(master), int(replicate)]).generate_state(1)[0])


class _Counter:
    def __init__(self, evaluate):
        self.evaluate = evaluate
        self.calls = 0

    def __call__(self, k):
        self.calls += 1
        return self.evaluate(k)


class _Clock:
    def __init__(self, enabled):
        self.enabled = enabled
        self.ms = 0.0

    def __enter__(self):
        self._t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.ms = (time.perf_counter() - self._t0) * 1e3 if self.enabled else 0.0


def _walk(method, evaluator, ladder: LadderSpec, rule: StopRule):
    # MS evaluates the whole ladder like FA and differs only in how the result is used
    if method == "esa":
        return run_esa(evaluator, ladder, rule)
    return run_full(evaluator, ladder)


def run_gauss_experiment(config: ExperimentConfig) -> List[RunRecord]:
    cfg = config.seq_config()
    ladder = cfg.ladder()
    curve = gs.oracle_curve(cfg)
    k_star = select_best(curve)
    records = [
        RunRecord("gauss-seq", "oracle", -1, config.seed, cfg.M, tuple(curve), "k_star", float(k_star), 0.0)
    ]
    for r in range(config.replicates):
        seed = replicate_seed(config.seed, r)
        data = gs.simulate_seq(cfg, seed)
        for method in config.methods:
            counter = _Counter(gs.seq_evaluator(data, cfg))
            with _Clock(config.timing) as clock:
                res = _walk(method, counter, ladder, config.rule)
            means = [post.mean_vector(cfg.D) for post in res.artifacts]
            if method == "ms":
                best = res.best_position
                estimate = means[best]
                extra = [("selected_index", float(res.indices[best]))]
            else:
                estimate = res.aggregate(means)
                extra = []
            risk = gs.true_excess_risk(estimate, data.theta_star, cfg.n, cfg.beta_star)
            metrics = [("excess_risk", risk), ("evaluator_calls", float(counter.calls))] + extra
            for name, value in metrics:
                records.append(
                    RunRecord("gauss-seq", method, r, seed, res.n_evaluated, res.evaluated.values, name, value, clock.ms)
                )
    return records


def max_elbo_decrease(fits) -> float:
    """Largest single-sweep ELBO drop over every restart of every fit."""
    worst = 0.0
    for fit in fits:
        for trace in fit.restart_traces:
            t = np.asarray(trace)
            if t.size > 1:
                worst = max(worst, float(np.max(t[:-1] - t[1:])))
    return worst


def run_cluster_experiment(config: ExperimentConfig) -> List[RunRecord]:
    if config.setting == "a":
        gen = gen_setting_a
    else:
        def gen(n, seed):
            return gen_setting_b(n, seed, noise_var=config.noise_var)
    exp = f"gmm-{config.setting}"
    records = []
    for r in range(config.replicates):
        seed = replicate_seed(config.seed, r)
        X, truth = gen(config.n, seed)
        K_max = min(config.k_max, config.n)
        ladder = LadderSpec(K_max, tuple(f"K={k}" for k in range(1, K_max + 1)))
        for method in config.methods:
            evaluator = gmm_evaluator(X, empirical_prior(X), CaviConfig(seed=seed, restarts=config.restarts))
            try:
                with _Clock(config.timing) as clock:
                    res = _walk(method, evaluator, ladder, config.rule)
            except Exception as exc:  # CAVI breakdown is a result, not a crash
                logger.warning("replicate %d, %s failed: %s", r, method, exc)
                records.append(RunRecord(exp, method, r, seed, 0, (), "failed", float("nan"), 0.0))
                continue
            pos = res.best_position
            labels = predict_labels(res.artifacts[pos].state)
            metrics = [
                ("ari", ari(truth, labels)),
                ("nmi", nmi(truth, labels)),
                ("selected_k", float(res.indices[pos])),
                ("max_elbo_decrease", max_elbo_decrease(res.artifacts)),
            ]
            for name, value in metrics:
                records.append(RunRecord(exp, method, r, seed, res.n_evaluated, res.evaluated.values, name, value, clock.ms))
    return records


def gen_regression(n: int, p: int, sigma: float, seed) -> RegressionData:
    """``y = sin(2 pi x1) + x2^2 + noise`` with ``x`` uniform on ``[0, 1]^p``."""
    if p < 1:
        raise ValueError("p must be >= 1")
    rng = np.random.default_rng(seed)
    X = rng.uniform(0.0, 1.0, size=(n, p))
    f = np.sin(2 * math.pi * X[:, 0]) + (X[:, 1] ** 2 if p > 1 else 0.0)
    return RegressionData(X, f + sigma * rng.standard_normal(n))


def train_test_split(data: RegressionData, test_fraction: float, seed):
    rng = np.random.default_rng(seed)
    perm = rng.permutation(data.n)
    n_test = int(round(test_fraction * data.n))
    if not 1 <= n_test < data.n - 1:
        raise ValueError("test split leaves an empty part")
    return data.subset(np.sort(perm[n_test:])), data.subset(np.sort(perm[:n_test]))


def cv_select(train: RegressionData, neighbor_counts, folds: int, seed) -> Tuple[int, Tuple[float, ...]]:
    """K-fold CV over the ladder; returns ``(selected k_nbr, mean fold MSE per model)``."""
    rng = np.random.default_rng(seed)
    parts = np.array_split(rng.permutation(train.n), folds)
    sse = np.zeros(len(neighbor_counts))
    for j in range(folds):
        val = np.sort(parts[j])
        fit = np.sort(np.concatenate([parts[i] for i in range(folds) if i != j]))
        model = KnnRegressor(train.subset(fit))
        Xv, yv = train.X[val], train.y[val]
        for i, k in enumerate(neighbor_counts):
            if k > len(fit):
                sse[i] = math.inf
                continue
            resid = yv - model.predict(Xv, k)
            sse[i] += resid @ resid
    mse = sse / train.n
    return int(neighbor_counts[int(np.argmin(mse))]), tuple(mse)


def _knn_criterion(config: ExperimentConfig, n_train: int, seed: int):
    if config.criterion == "aicc":
        return AICc()
    if config.criterion == "val":
        return ValidationSSE(split_fraction=config.split, seed=seed, alpha=config.alpha)
    return Penalized(H=df_penalty(config.ladder, n_train), lam=1.0)


def run_knn_experiment(config: ExperimentConfig) -> List[RunRecord]:
    records = []
    knn_ladder = KnnLadderSpec(config.ladder)
    rule = config.rule
    if config.criterion == "pen":
        # df-based penalties shrink as k_nbr grows: walk from the smoothest model
        rule = StopRule(rule.delta, rule.margin_mode, traversal="backward")
    for r in range(config.replicates):
        seed = replicate_seed(config.seed, r)
        data = gen_regression(config.n, config.p, config.sigma, seed)
        train, test = train_test_split(data, config.test_fraction, seed)
        criterion = _knn_criterion(config, train.n, seed)
        if isinstance(criterion, Penalized):
            criterion.check_order(rule.traversal)

        def rmse(pred):
            return float(np.sqrt(np.mean((test.y - pred) ** 2)))

        for method in config.methods:
            with _Clock(config.timing) as clock:
                evaluator = knn_evaluator(train, knn_ladder, criterion)
                res = _walk(method, evaluator, knn_ladder.ladder(), rule)
            if method == "ms":
                k_nbr, model = res.artifacts[res.best_position]
                pred = model.predict(test.X, k_nbr)
            else:
                pred = predict_from_result(res, test.X)
            for name, value in (("rmse", rmse(pred)), ("evaluator_calls", float(res.n_evaluated))):
                records.append(RunRecord("knn", method, r, seed, res.n_evaluated, res.evaluated.values, name, value, clock.ms))

        with _Clock(config.timing) as clock:
            k_cv, mse = cv_select(train, config.ladder, config.cv_folds, seed)
        pred = KnnRegressor(train).predict(test.X, k_cv)
        records.append(RunRecord("knn", "cv", r, seed, knn_ladder.M, mse, "rmse", rmse(pred), clock.ms))
        records.append(RunRecord("knn", "cv", r, seed, knn_ladder.M, mse, "selected_k", float(k_cv), clock.ms))
    return records


def run_experiment(config: ExperimentConfig) -> List[RunRecord]:
    runner = {
        "gauss-seq": run_gauss_experiment,
        "gmm": run_cluster_experiment,
        "knn": run_knn_experiment,
    }[config.experiment]
    return runner(config)
