"""Command-line interface: simulate, fit, predict, evaluate and study.

Exit codes: 0 success, 1 runtime or numerical failure, 2 invalid input,
3 study finished but more than 20% of replications had a failing method.
"""

import argparse
import json
import logging
import platform
import subprocess
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from . import io as hio
from .errors import HIFMError, IntegrityError, NumericalError, ParameterError, UndefinedMetricError, ValidationError
from .gibbs import run_chain
from .metrics import auc, auprc, mse, precision_recall_curve, roc_curve, sens_spec_at
from .model import BINARY
from .regression import coefficient_draws, count_active_factors, predict
from .simulation import generate_with_holdout
from .study import (
    StudyConfig,
    failure_fraction,
    run_study,
    study_workers,
    table_coefficients,
    table_factor_counts,
    table_prediction,
)
from .baselines import EnetConfig
from .distributions import RngHandle

log = logging.getLogger("hifm")

EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION, EXIT_PARTIAL = 0, 1, 2, 3
FAILURE_LIMIT = 0.20

PRESETS = {
    # simulation-study schedule with the default truncation round(5 log p)
    "simulation": "[schedule]\nn_iter = 2000\nn_burnin = 1000\nthin = 5\n",
    # application settings: 25 factors, longer chain, C = 50
    "application": ("[model]\nalpha0 = 10\nalpha_l = 15\nk_star = 25\nmh_tuning_c = 50\n"
                    "[schedule]\nn_iter = 3000\nn_burnin = 1500\nthin = 6\n"),
}

SIM_KEYS = {
    "p": int, "k": int, "n": int, "n_target": int, "n_test": int, "replications": int,
    "n_populations": int, "tau": float, "alpha_l": float, "alpha0": float,
}


class Stopwatch:
    def __init__(self):
        self.stages = {}

    def __call__(self, name):
        watch = self

        class _Stage:
            def __enter__(self):
                self.t = time.perf_counter()

            def __exit__(self, *exc):
                watch.stages[name] = watch.stages.get(name, 0.0) + time.perf_counter() - self.t

        return _Stage()


def build_id():
    try:
        out = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True, text=True,
                             cwd=Path(__file__).parent, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"git:{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return f"hifm-{__version__}"


def write_manifest(path, command, args, cp, seeds, timings, extra=None, checksums=None):
    manifest = {
        "command": command,
        "argv": [str(a) for a in args],
        "config": hio.config_echo(cp) if cp is not None else {},
        "seeds": seeds,
        "build": build_id(),
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "timings_seconds": timings,
        "checksums": checksums or {},
    }
    manifest.update(extra or {})
    hio.atomic_write(path, json.dumps(manifest, indent=2, sort_keys=True, default=_json_default))
    return manifest


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def load_config(args):
    text = ""
    if getattr(args, "preset", None):
        text += PRESETS[args.preset]
    cp = hio.read_config(text=text)
    if getattr(args, "config", None):
        if not Path(args.config).exists():
            raise ValidationError(f"config not found: {args.config}")
        try:
            cp.read(args.config)
        except Exception as exc:
            raise ValidationError(f"invalid config {args.config}: {exc}") from None
    return cp


def _seed(args, cp):
    seed = args.seed if getattr(args, "seed", None) is not None else hio.get(cp, "run", "seed", int, 1)
    if seed < 0:
        raise ValidationError("seed must be nonnegative")
    return seed


def _workers(args, cp):
    if getattr(args, "workers", None) is not None:
        return max(1, args.workers)
    return hio.get(cp, "run", "workers", int, study_workers())


def _sim_kwargs(cp):
    kw = {}
    if cp.has_section("simulation"):
        for key, raw in cp.items("simulation"):
            if key in SIM_KEYS:
                kw[key] = hio._convert("simulation", key, raw, SIM_KEYS[key])
            elif key == "binary_cols":
                # 1-based column positions; position 1 is the outcome
                try:
                    pos = hio.parse_int_set(raw)
                except ValueError:
                    raise ValidationError(f"[simulation] binary_cols: cannot parse {raw!r}") from None
                if any(j < 1 for j in pos):
                    raise ValidationError("[simulation] binary_cols are 1-based column positions")
                kw[key] = tuple(j - 1 for j in pos)
            else:
                raise ValidationError(f"[simulation] unknown key {key!r}")
    return kw


def _output_dir(path):
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ValidationError(f"output directory not writable: {path} ({exc.strerror})") from None
    return path


# --------------------------------------------------------------- simulate

def cmd_simulate(args):
    cp = load_config(args)
    seed = _seed(args, cp)
    kw = _sim_kwargs(cp)
    reps = kw.pop("replications", 1)
    cfg = StudyConfig(seed=seed, replications=reps, n_test=max(kw.get("n_test", 0), 1),
                      **{k: v for k, v in kw.items() if k != "n_test"})
    n_test = kw.get("n_test", 0)
    out = _output_dir(args.out)
    watch = Stopwatch()
    checksums = {}
    for rep in range(reps):
        with watch("simulate"):
            rng = RngHandle(seed).substream(rep, 0).generator()
            train, test, truth = generate_with_holdout(
                cfg.p, cfg.k, cfg.n, cfg.n_target, cfg.binary_cols, rng, n_test=n_test, tau=cfg.tau,
                alpha_l=cfg.alpha_l, alpha0=cfg.alpha0, n_populations=cfg.n_populations, standardize=False)
        with watch("write"):
            d = out / f"rep_{rep + 1:03d}"
            hio.save_dataset(d, train)
            hio.write_truth(d / "truth.csv", truth)
            if test is not None:
                hio.write_data(d / "test.csv", test.raw_values(), test.group, test.names)
            for f in sorted(d.iterdir()):
                checksums[f"{d.name}/{f.name}"] = hio.sha256_file(f)
    write_manifest(out / "manifest.json", "simulate", args.argv, cp, {"master": seed}, watch.stages,
                   {"replications": reps, "simulation": cfg.to_dict()}, checksums)
    log.info("wrote %d replication(s) to %s", reps, out)
    return EXIT_OK


# -------------------------------------------------------------------- fit

def cmd_fit(args):
    cp = load_config(args)
    hyper = hio.hyper_from_config(cp)
    seed = _seed(args, cp)
    workers = _workers(args, cp)
    fmt = args.format or hio.get(cp, "run", "chain_format", str, "csv")
    standardize = hio.get(cp, "run", "standardize", bool, True)
    progress = hio.get(cp, "run", "progress_every", int, 100)
    out = _output_dir(args.out)
    watch = Stopwatch()
    with watch("load"):
        data = hio.load_dataset(args.data, args.schema, standardize=standardize)
    hyper = hyper.resolve(data.p)
    log.info("fitting n=%d p=%d populations=%d k*=%d  %d/%d/%d", data.n, data.p, data.n_populations,
             hyper.k_star, hyper.n_iter, hyper.n_burnin, hyper.thin)
    with watch("sample"):
        chain = run_chain(data, hyper, RngHandle(seed), workers=workers, progress_every=progress, seed=seed)
    with watch("write"):
        target = out / ("chain" if fmt == "csv" else "chain.bin")
        checksums = {f"{target.name}/{k}" if fmt == "csv" else k: v
                     for k, v in hio.save_chain(chain, target, fmt).items()}
        rows, counts = [], []
        for l, lab in enumerate(chain.populations):
            cd = coefficient_draws(chain, l)
            for i, cov in enumerate(cd.covariates):
                for o, outc in enumerate(cd.outcomes):
                    rows.append([int(lab), outc, cov, float(cd.mean[i, o]), float(cd.lower[i, o]),
                                 float(cd.upper[i, o])])
            fc = count_active_factors(chain, l, hyper.weight_threshold)
            counts.append([int(lab), fc.posterior_mean_count, float(np.mean(fc.per_draw))])
        hio.write_csv(out / "coefficients.csv",
                      ["population", "outcome", "covariate", "mean", "lower95", "upper95"], rows)
        hio.write_csv(out / "factor_counts.csv", ["population", "posterior_mean_count", "mean_per_draw"], counts)
        for name in ("coefficients.csv", "factor_counts.csv"):
            checksums[name] = hio.sha256_file(out / name)
    rate = chain.diagnostics.acceptance_rate
    dims = {"n": data.n, "p": data.p, "populations": [int(x) for x in data.populations],
            "k_star": hyper.k_star, "retained_draws": len(chain)}
    write_manifest(out / "manifest.json", "fit", args.argv, cp, {"master": seed}, watch.stages, {
        "hyperparameters": hyper.to_dict(), "mh": chain.diagnostics.to_dict(), "dimensions": dims,
        "workers": workers, "chain_format": fmt, "standardize": standardize,
        "inputs": {"data": hio.sha256_file(args.data), "schema": hio.sha256_file(args.schema)},
    }, checksums)
    log.info("retained %d draws, MH acceptance %.3f, output in %s", len(chain), rate, out)
    return EXIT_OK


# ---------------------------------------------------------------- predict

def _check_schema_drift(chain, schema_path):
    test_cols = {c.name: c for c in hio.read_schema(schema_path)}
    bad = []
    for j in chain.covariate_idx:
        c = chain.columns[j]
        t = test_cols.get(c.name)
        if t is None:
            bad.append(f"{c.name} (missing)")
        elif t.type != c.type:
            bad.append(f"{c.name} ({t.type}, trained as {c.type})")
    if bad:
        raise ValidationError(f"test schema does not match training schema: {', '.join(bad)}")


def cmd_predict(args):
    cp = load_config(args)
    seed = _seed(args, cp)
    watch = Stopwatch()
    with watch("load"):
        chain = hio.load_chain(args.chain)
        if args.schema:
            _check_schema_drift(chain, args.schema)
        cov_names = [chain.names[j] for j in chain.covariate_idx]
        values, group, names = hio.read_data(args.data)
        missing = [c for c in cov_names if c not in names]
        if missing:
            raise ValidationError(f"test data lacks covariates: {', '.join(missing)}")
        x = values[:, [names.index(c) for c in cov_names]]
    with watch("predict"):
        res = predict(chain, x, group, RngHandle(seed, 1), aug_sweeps=args.aug_sweeps)
    rows = []
    for i in range(x.shape[0]):
        for o, name in enumerate(res.outcomes):
            rows.append([i, int(group[i]), name, float(res.mean[i, o]), float(res.lower[i, o]),
                         float(res.upper[i, o])])
    out = Path(args.out)
    with watch("write"):
        hio.write_csv(out, ["row", "population", "outcome", "mean", "lower95", "upper95"], rows)
    write_manifest(out.with_name(out.stem + ".manifest.json"), "predict", args.argv, cp, {"master": seed},
                   watch.stages, {"rows": x.shape[0]}, {out.name: hio.sha256_file(out)})
    log.info("wrote predictions for %d rows to %s", x.shape[0], out)
    return EXIT_OK


# --------------------------------------------------------------- evaluate

def parse_filter(text):
    """``group==1`` / ``group!=1`` -> (label, predicate over population labels)."""
    if not text:
        return None
    expr = text.replace(" ", "")
    for op in ("==", "!="):
        if op in expr:
            lhs, rhs = expr.split(op, 1)
            if lhs == "group":
                try:
                    val = int(rhs)
                except ValueError:
                    break
                if op == "==":
                    return expr, lambda g: g == val
                return expr, lambda g: g != val
    raise ValidationError(f"unsupported filter {text!r}; use group==<label> or group!=<label>")


BINARY_METRICS = ("auc", "auprc", "sensitivity", "specificity")
CONTINUOUS_METRICS = ("mse",)
KNOWN_METRICS = set(BINARY_METRICS + CONTINUOUS_METRICS) | {"roc", "pr"}


def _evaluate_subset(outcome, subset, scores, labels, is_binary, metrics, threshold):
    rows, curves = [], []

    def put(metric, fn):
        try:
            rows.append([outcome, subset, metric, float(fn()), "ok"])
        except UndefinedMetricError as exc:
            rows.append([outcome, subset, metric, "", f"undefined: {exc}"])

    if scores.size == 0:
        for m in metrics:
            if m not in ("roc", "pr"):
                rows.append([outcome, subset, m, "", "undefined: empty subset"])
        return rows, curves
    for m in metrics:
        if m == "mse":
            put(m, lambda: mse(scores, labels))
            continue
        if not is_binary:
            rows.append([outcome, subset, m, "", "not applicable: continuous outcome"])
            continue
        if m == "auc":
            put(m, lambda: auc(scores, labels))
        elif m == "auprc":
            put(m, lambda: auprc(scores, labels))
        elif m == "sensitivity":
            put(m, lambda: sens_spec_at(scores, labels, threshold)[0])
        elif m == "specificity":
            put(m, lambda: sens_spec_at(scores, labels, threshold)[1])
        elif m == "roc":
            try:
                fpr, tpr = roc_curve(scores, labels)
                curves += [[outcome, subset, "roc", float(a), float(b)] for a, b in zip(fpr, tpr)]
            except UndefinedMetricError:
                pass
        elif m == "pr":
            try:
                prec, rec = precision_recall_curve(scores, labels)
                curves += [[outcome, subset, "pr", float(r), float(p)] for r, p in zip(rec, prec)]
            except UndefinedMetricError:
                pass
    return rows, curves


def cmd_evaluate(args):
    metrics = [m.strip() for m in args.metrics.split(",")] if args.metrics else None
    if metrics:
        unknown = [m for m in metrics if m not in KNOWN_METRICS]
        if unknown:
            raise ValidationError(f"unknown metrics: {', '.join(unknown)}")
    flt = parse_filter(args.filter)
    header, rows = hio.read_csv(args.predictions)
    need = ["row", "population", "outcome", "mean"]
    missing = [c for c in need if c not in header]
    if missing:
        raise ValidationError(f"{args.predictions}: missing columns {', '.join(missing)}")
    idx = {c: header.index(c) for c in need}
    values, group, names = hio.read_data(args.truth)
    types = {}
    if args.schema:
        types = {c.name: c.type == BINARY for c in hio.read_schema(args.schema)}
    by_outcome = {}
    for r in rows:
        by_outcome.setdefault(r[idx["outcome"]], []).append(r)
    out_rows, out_curves = [], []
    for outcome, recs in by_outcome.items():
        if outcome not in names:
            raise ValidationError(f"truth file lacks outcome column {outcome!r}")
        row_ids = np.array([int(r[idx["row"]]) for r in recs])
        if len(recs) != values.shape[0] or set(row_ids) != set(range(values.shape[0])):
            raise ValidationError(f"row count mismatch for {outcome!r}: {len(recs)} predictions, "
                                  f"{values.shape[0]} truth rows")
        scores = np.empty(values.shape[0])
        scores[row_ids] = [float(r[idx["mean"]]) for r in recs]
        labels = values[:, names.index(outcome)]
        is_bin = types.get(outcome, bool(np.all((labels == 0) | (labels == 1))))
        ms = metrics or list(BINARY_METRICS + ("roc", "pr") if is_bin else CONTINUOUS_METRICS)
        subsets = [("all", np.ones(values.shape[0], bool))]
        if flt is not None:
            subsets.append((flt[0], flt[1](group)))
        for name, mask in subsets:
            if not mask.any():
                warnings.warn(f"subset {name!r} selects no rows; metrics marked undefined")
            r_, c_ = _evaluate_subset(outcome, name, scores[mask], labels[mask], is_bin, ms, args.threshold)
            out_rows += r_
            out_curves += c_
    out = _output_dir(args.out)
    hio.write_csv(out / "metrics.csv", ["outcome", "subset", "metric", "value", "status"], out_rows)
    hio.write_csv(out / "curves.csv", ["outcome", "subset", "curve", "x", "y"], out_curves)
    log.info("wrote %d metric rows to %s", len(out_rows), out / "metrics.csv")
    return EXIT_OK


# ------------------------------------------------------------------ study

def study_config_from(cp, seed):
    kw = _sim_kwargs(cp)
    methods = hio.get(cp, "study", "methods", str, "hifm, lasso, enet, hlasso")
    extra = {}
    if cp.has_section("study"):
        for key, raw in cp.items("study"):
            if key == "methods":
                continue
            if key == "threshold":
                extra["threshold"] = hio._convert("study", key, raw, float)
            elif key in ("folds", "replications", "chain_workers"):
                extra[key] = hio._convert("study", key, raw, int)
            elif key == "save_chains":
                continue
            else:
                raise ValidationError(f"[study] unknown key {key!r}")
    kw.update(extra)
    return StudyConfig(
        seed=seed, methods=tuple(m.strip() for m in methods.split(",") if m.strip()),
        hyper=hio.hyper_from_config(cp), standardize=hio.get(cp, "run", "standardize", bool, False), **kw)


def baseline_grids(cfg):
    """Tuning grids used by the configured baselines, recorded in the study manifest."""
    out = {}
    if "lasso" in cfg.methods or "hlasso" in cfg.methods:
        out["lasso"] = "alpha 1; 100 log-spaced lambdas from lambda_max to 1e-4 lambda_max"
    if "enet" in cfg.methods:
        cfg_e = EnetConfig()
        out["enet"] = {
            "alphas": list(cfg_e.alphas),
            "lambdas": [float(x) for x in cfg_e.lambdas],
            "note": "widened default: 30 log-spaced values on [1e-5, 0.1] instead of [1e-5, 1e-3], "
                    "so the CV optimum is bracketed",
        }
    return out


def _table_rows(stat_rows, prefix=()):
    return [list(prefix) + [name] + vals for name, vals in stat_rows]


def cmd_study(args):
    cp = load_config(args)
    seed = _seed(args, cp)
    cfg = study_config_from(cp, seed)
    workers = _workers(args, cp)
    save_chains = hio.get(cp, "study", "save_chains", bool, False)
    out = _output_dir(args.out)
    watch = Stopwatch()
    with watch("replications"):
        results = run_study(cfg, workers=workers, keep_chains=save_chains)
    checksums = {}
    with watch("write"):
        rep_rows, fail_rows = [], []
        for r in results:
            rep_rows += [[rec["rep"] + 1, rec["method"], rec["metric"], rec["population"], rec["value"]]
                         for rec in r.records]
            fail_rows += [[r.rep + 1, m, msg] for m, msg in sorted(r.failures.items())]
            if save_chains and r.chain is not None:
                for k, v in hio.save_chain(r.chain, out / "chains" / f"rep_{r.rep + 1:03d}").items():
                    checksums[f"chains/rep_{r.rep + 1:03d}/{k}"] = v
        hio.write_csv(out / "replicates.csv", ["rep", "method", "metric", "population", "value"], rep_rows)
        hio.write_csv(out / "failures.csv", ["rep", "method", "error"], fail_rows)
        metric, t1 = table_prediction(results, cfg)
        hio.write_csv(out / "table1.csv", ["metric", "statistic"] + list(cfg.methods), _table_rows(t1, (metric,)))
        t2 = table_coefficients(results, cfg, cfg.n_populations)
        hio.write_csv(out / "table2.csv", ["population", "statistic"] + list(cfg.methods),
                      [row for l, rows in t2.items() for row in _table_rows(rows, (l,))])
        rows3 = []
        if "hifm" in cfg.methods:
            rows3 = [[l, cfg.threshold, est, true] for l, (est, true) in table_factor_counts(results, cfg.n_populations).items()]
        hio.write_csv(out / "table3.csv", ["population", "threshold", "hifm_mean_count", "true_mean_count"], rows3)
        for name in ("replicates.csv", "failures.csv", "table1.csv", "table2.csv", "table3.csv"):
            checksums[name] = hio.sha256_file(out / name)
    frac = failure_fraction(results)
    write_manifest(out / "manifest.json", "study", args.argv, cp, {"master": seed}, watch.stages, {
        "study": cfg.to_dict(), "workers": workers, "failure_fraction": frac,
        "baseline_grids": baseline_grids(cfg),
        "replication_timings": [r.timings for r in results],
    }, checksums)
    if frac > FAILURE_LIMIT:
        log.error("%.0f%% of replications had failures (limit %.0f%%)", 100 * frac, 100 * FAILURE_LIMIT)
        return EXIT_PARTIAL
    return EXIT_OK


# ------------------------------------------------------------------- main

def build_parser():
    ap = argparse.ArgumentParser(prog="hifm", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    ap.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, preset=True):
        p.add_argument("--config", help="INI configuration file")
        p.add_argument("--seed", type=int, help="master seed (overrides [run] seed)")
        if preset:
            p.add_argument("--preset", choices=sorted(PRESETS), help="built-in settings applied before --config")

    p = sub.add_parser("simulate", help="generate synthetic replications")
    common(p, preset=False)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit the model to a CSV dataset")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, help="threads for row-block updates (default HIFM_THREADS)")
    p.add_argument("--format", choices=("csv", "binary"), help="chain serialization")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="posterior predictive summaries for new rows")
    common(p, preset=False)
    p.add_argument("--chain", required=True, help="chain directory or chain.bin")
    p.add_argument("--data", required=True, help="CSV with group and covariate columns")
    p.add_argument("--schema", help="test schema, checked against the training schema")
    p.add_argument("--out", required=True, help="predictions CSV path")
    p.add_argument("--aug-sweeps", type=int, default=5, help="latent sweeps for binary covariates")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="metrics and curve points for predictions")
    p.add_argument("--predictions", required=True)
    p.add_argument("--truth", required=True, help="CSV with group and outcome columns")
    p.add_argument("--schema", help="schema giving outcome types (otherwise inferred)")
    p.add_argument("--metrics", help="comma list from: auc, auprc, sensitivity, specificity, mse, roc, pr")
    p.add_argument("--filter", help="population subset, e.g. group==1")
    p.add_argument("--threshold", type=float, default=0.5, help="probability cut for sensitivity/specificity")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("study", help="replicated simulation study with baselines")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, help="parallel replications (default HIFM_THREADS)")
    p.set_defaults(func=cmd_study)
    return ap


def main(argv=None):
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)
    args.argv = ["hifm"] + argv
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)
    logging.captureWarnings(True)
    try:
        return args.func(args)
    except (ValidationError, ParameterError, IntegrityError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_VALIDATION
    except NumericalError as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_RUNTIME
    except (HIFMError, OSError, ArithmeticError, RuntimeError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
