"""Replicated simulation study: HIFM against lasso, elastic net and hierarchical lasso."""

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .baselines import BINARY as FAM_BINARY
from .baselines import LINEAR, EnetConfig, expand_hierarchical, fit_enet, hierarchical_coefficients, lasso_config
from .distributions import RngHandle
from .errors import ValidationError
from .gibbs import run_chain
from .metrics import auc, coefficient_mse, mse
from .model import Hyperparameters
from .regression import coefficient_draws, count_active_factors, predict
from .simulation import generate_with_holdout, true_factor_count

log = logging.getLogger(__name__)

METHODS = ("hifm", "lasso", "enet", "hlasso")
# substream ids per replication
STREAM_DATA, STREAM_CHAIN, STREAM_PREDICT = 0, 1, 2
STREAM_METHOD = {"lasso": 3, "enet": 4, "hlasso": 5}


@dataclass
class StudyConfig:
    p: int = 50
    k: int = 10
    n: int = 1000
    n_target: int = 400
    n_test: int = 1000
    binary_cols: tuple = ()
    n_populations: int = 2
    tau: float = 3.0
    alpha_l: float = 15.0
    alpha0: float = 15.0
    replications: int = 10
    seed: int = 1
    methods: tuple = METHODS
    hyper: Hyperparameters = field(default_factory=Hyperparameters)
    threshold: float = 0.05
    folds: int = 10
    standardize: bool = False
    chain_workers: int = 1

    def __post_init__(self):
        self.methods = tuple(self.methods)
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ValidationError(f"unknown methods: {', '.join(bad)}" if bad else "no methods given")
        if self.replications < 1:
            raise ValidationError("replications must be >= 1")
        if self.n_test < 1:
            raise ValidationError("the study needs a held-out set (n_test >= 1)")

    @property
    def binary_outcome(self):
        return 0 in set(self.binary_cols)

    def to_dict(self):
        d = asdict(self)
        d["hyper"] = self.hyper.to_dict()
        d["binary_cols"] = list(self.binary_cols)
        d["methods"] = list(self.methods)
        return d


@dataclass
class ReplicationResult:
    rep: int
    records: list  # dicts: method, metric, population, value
    timings: dict
    chain: object = None
    failures: dict = field(default_factory=dict)  # method -> message


def simulate_replication(cfg, rep):
    rng = RngHandle(cfg.seed).substream(rep, STREAM_DATA).generator()
    return generate_with_holdout(
        cfg.p, cfg.k, cfg.n, cfg.n_target, cfg.binary_cols, rng, n_test=cfg.n_test, tau=cfg.tau,
        alpha_l=cfg.alpha_l, alpha0=cfg.alpha0, n_populations=cfg.n_populations,
        standardize=cfg.standardize,
    )


def _prediction_metric(cfg, scores, y):
    if cfg.binary_outcome:
        return "auc", auc(scores, y)
    return "mse", mse(scores, y)


def run_replication(cfg, rep, on_draw=None, keep_chain=False):
    """One replication of every configured method.

    ``on_draw(rep, iteration, state, dataset)`` sees each retained HIFM draw.
    A failing method is recorded in ``failures`` and the others still run.
    """
    t0 = time.perf_counter()
    train, test, truth = simulate_replication(cfg, rep)
    timings = {"simulate": time.perf_counter() - t0}
    x_idx = train.covariate_idx
    x_tr, y_tr = train.raw_values()[:, x_idx], train.raw_values()[:, 0]
    x_te, y_te = test.raw_values()[:, x_idx], test.raw_values()[:, 0]
    family = FAM_BINARY if cfg.binary_outcome else LINEAR
    records, failures = [], {}
    chain = None
    root = RngHandle(cfg.seed)

    def add(method, metric, value, population=""):
        records.append({"rep": rep, "method": method, "metric": metric, "population": population,
                        "value": float(value)})

    for method in cfg.methods:
        start = time.perf_counter()
        try:
            if method == "hifm":
                cb = None if on_draw is None else (lambda it, st: on_draw(rep, it, st, train))
                chain = run_chain(train, cfg.hyper, root.substream(rep, STREAM_CHAIN),
                                  workers=cfg.chain_workers, callback=cb, seed=cfg.seed)
                pred = predict(chain, x_te, test.group, root.substream(rep, STREAM_PREDICT))
                add(method, *_prediction_metric(cfg, pred.mean[:, 0], y_te))
                true_counts = true_factor_count(truth, cfg.threshold)
                for l in range(train.n_populations):
                    est = coefficient_draws(chain, l).mean[:, 0]
                    add(method, "coef_mse", coefficient_mse(est, truth.theta_true[l]), l + 1)
                    add(method, "factor_count", count_active_factors(chain, l, cfg.threshold).posterior_mean_count, l + 1)
                    add("truth", "factor_count", true_counts[l], l + 1)
                add(method, "mh_acceptance", chain.diagnostics.acceptance_rate)
            else:
                rng = root.substream(rep, STREAM_METHOD[method])
                if method == "lasso":
                    fit = fit_enet(x_tr, y_tr, lasso_config(family, cfg.folds), rng)
                    slopes = [fit.coef] * train.n_populations
                    scores = fit.predict(x_te)
                elif method == "enet":
                    fit = fit_enet(x_tr, y_tr, EnetConfig(family=family, folds=cfg.folds), rng)
                    slopes = [fit.coef] * train.n_populations
                    scores = fit.predict(x_te)
                else:
                    fit = fit_enet(expand_hierarchical(x_tr, train.group), y_tr, lasso_config(family, cfg.folds), rng)
                    slopes = hierarchical_coefficients(fit.coef, x_idx.size, train.n_populations)
                    scores = fit.predict(_expand_like(x_te, test.group, train.populations))
                add(method, *_prediction_metric(cfg, scores, y_te))
                for l in range(train.n_populations):
                    add(method, "coef_mse", coefficient_mse(slopes[l], truth.theta_true[l]), l + 1)
                add(method, "alpha", fit.alpha)
                add(method, "lambda", fit.lam)
        except Exception as exc:  # recorded, the study carries on
            log.error("replication %d, %s failed: %s", rep, method, exc)
            failures[method] = f"{type(exc).__name__}: {exc}"
        timings[method] = time.perf_counter() - start
    return ReplicationResult(rep, records, timings, chain if keep_chain else None, failures)


def _expand_like(x, groups, populations):
    """Hierarchical design for held-out rows using the training population levels."""
    x = np.asarray(x, dtype=float)
    if len(populations) < 2:
        return x.copy()
    inter, ind = [], []
    for lab in populations[1:]:
        d = (np.asarray(groups) == lab).astype(float)
        inter.append(x * d[:, None])
        ind.append(d[:, None])
    return np.hstack([x] + inter + ind)


def study_workers():
    raw = os.environ.get("HIFM_THREADS", "").strip()
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ValidationError(f"HIFM_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


def run_study(cfg, workers=None, on_draw=None, keep_chains=False):
    """All replications; results returned in replication order regardless of ``workers``."""
    workers = study_workers() if workers is None else workers
    reps = range(cfg.replications)
    if workers <= 1:
        return [run_replication(cfg, r, on_draw, keep_chains) for r in reps]
    with ThreadPoolExecutor(min(workers, cfg.replications)) as pool:
        return list(pool.map(lambda r: run_replication(cfg, r, on_draw, keep_chains), reps))


def failure_fraction(results):
    """Share of replications in which at least one method failed."""
    return sum(bool(r.failures) for r in results) / len(results) if results else 0.0


def _values(results, method, metric, population=""):
    return np.array([rec["value"] for r in results for rec in r.records
                     if rec["method"] == method and rec["metric"] == metric and rec["population"] == population])


STATS = (("median", np.median), ("mean", np.mean), ("min", np.min), ("max", np.max))


def _stat_rows(results, methods, metric, population="", scale=1.0):
    rows = []
    for name, fn in STATS:
        row = []
        for m in methods:
            v = _values(results, m, metric, population)
            row.append(float(fn(v)) * scale if v.size else float("nan"))
        rows.append((name, row))
    return rows


def table_prediction(results, cfg):
    """Median/mean/min/max of the held-out metric (MSE or AUC) per method."""
    metric = "auc" if cfg.binary_outcome else "mse"
    return metric, _stat_rows(results, cfg.methods, metric)


def table_coefficients(results, cfg, n_populations):
    """Coefficient MSE x 1e3 summaries per population and method."""
    return {l: _stat_rows(results, cfg.methods, "coef_mse", l, 1e3) for l in range(1, n_populations + 1)}


def table_factor_counts(results, n_populations):
    out = {}
    for l in range(1, n_populations + 1):
        est = _values(results, "hifm", "factor_count", l)
        true = _values(results, "truth", "factor_count", l)
        out[l] = (float(est.mean()) if est.size else float("nan"),
                  float(true.mean()) if true.size else float("nan"))
    return out
