import json

import numpy as np
import pytest

from hifm import io as hio
from hifm.cli import PRESETS, main, parse_filter
from hifm.errors import ValidationError

TINY = """
[simulation]
p = 6
k = 2
n = 60
n_target = 20
n_test = 20
binary_cols = 1, 4

[schedule]
n_iter = 30
n_burnin = 10
thin = 5

[run]
progress_every = 0
"""


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.ini"
    cfg.write_text(TINY)
    assert main(["-q", "simulate", "--config", str(cfg), "--seed", "3", "--out", str(root / "sim")]) == 0
    rep = root / "sim" / "rep_001"
    assert main(["-q", "fit", "--config", str(cfg), "--seed", "4", "--data", str(rep / "data.csv"),
                 "--schema", str(rep / "schema.csv"), "--out", str(root / "fit")]) == 0
    return root, cfg, rep


def read_json(path):
    return json.loads(path.read_text())


def test_simulate_layout_and_schema(work):
    root, _, rep = work
    assert sorted(p.name for p in rep.iterdir()) == ["data.csv", "schema.csv", "test.csv", "truth.csv"]
    cols = hio.read_schema(rep / "schema.csv")
    # 1-based positions: 1 is the outcome, 4 is x3
    assert [c.name for c in cols if c.type == "binary"] == ["y", "x3"]
    man = read_json(root / "sim" / "manifest.json")
    assert man["command"] == "simulate" and man["seeds"] == {"master": 3}
    assert man["replications"] == 1
    assert man["argv"][:2] == ["hifm", "-q"]


def test_simulate_deterministic(work, tmp_path):
    root, cfg, _ = work
    assert main(["-q", "simulate", "--config", str(cfg), "--seed", "3", "--out", str(tmp_path / "again")]) == 0
    a = read_json(root / "sim" / "manifest.json")["checksums"]
    b = read_json(tmp_path / "again" / "manifest.json")["checksums"]
    assert a == b and len(a) == 4
    assert main(["-q", "simulate", "--config", str(cfg), "--seed", "5", "--out", str(tmp_path / "other")]) == 0
    assert read_json(tmp_path / "other" / "manifest.json")["checksums"] != a


def test_fit_outputs(work):
    root, _, _ = work
    fit = root / "fit"
    man = read_json(fit / "manifest.json")
    assert man["dimensions"]["retained_draws"] == 4
    assert man["dimensions"]["k_star"] == 9  # round(5 log 6)
    assert 0 <= man["mh"]["acceptance_rate"] <= 1
    chain = hio.load_chain(fit / "chain")
    assert len(chain) == 4
    header, rows = hio.read_csv(fit / "coefficients.csv")
    assert header == ["population", "outcome", "covariate", "mean", "lower95", "upper95"]
    assert len(rows) == 2 * 5
    for r in rows:
        assert float(r[4]) <= float(r[3]) <= float(r[5])
    _, counts = hio.read_csv(fit / "factor_counts.csv")
    assert [r[0] for r in counts] == ["1", "2"]
    for name, digest in man["checksums"].items():
        assert hio.sha256_file(fit / name) == digest


def test_fit_binary_format_matches_csv(work, tmp_path):
    root, cfg, rep = work
    assert main(["-q", "fit", "--config", str(cfg), "--seed", "4", "--data", str(rep / "data.csv"),
                 "--schema", str(rep / "schema.csv"), "--out", str(tmp_path), "--format", "binary"]) == 0
    a, b = hio.load_chain(root / "fit" / "chain"), hio.load_chain(tmp_path / "chain.bin")
    assert np.array_equal(a.stack("lam", 0), b.stack("lam", 0))


def test_fit_default_schedule_retains_200(work, tmp_path):
    _, _, rep = work
    cfg = tmp_path / "c.ini"
    cfg.write_text("[run]\nprogress_every = 0\n")
    assert main(["-q", "fit", "--config", str(cfg), "--data", str(rep / "data.csv"),
                 "--schema", str(rep / "schema.csv"), "--out", str(tmp_path / "f")]) == 0
    assert len(hio.load_chain(tmp_path / "f" / "chain")) == 200


def test_application_preset(work, tmp_path):
    h = hio.hyper_from_config(hio.read_config(text=PRESETS["application"]))
    assert (h.k_star, h.n_iter, h.n_burnin, h.thin, h.mh_tuning_c, h.alpha0) == (25, 3000, 1500, 6, 50, 10)
    assert h.n_retained == 250
    _, cfg, rep = work
    # a config file layered on top of the preset wins for the keys it sets
    assert main(["-q", "fit", "--preset", "application", "--config", str(cfg), "--data", str(rep / "data.csv"),
                 "--schema", str(rep / "schema.csv"), "--out", str(tmp_path)]) == 0
    hyp = read_json(tmp_path / "manifest.json")["hyperparameters"]
    assert hyp["k_star"] == 25 and hyp["mh_tuning_c"] == 50 and hyp["n_iter"] == 30


def test_fit_missing_group_column(work, tmp_path):
    _, _, rep = work
    header, rows = hio.read_csv(rep / "data.csv")
    hio.write_csv(tmp_path / "d.csv", header[1:], [r[1:] for r in rows])
    code = main(["-q", "fit", "--data", str(tmp_path / "d.csv"), "--schema", str(rep / "schema.csv"),
                 "--out", str(tmp_path / "o")])
    assert code == 2


def test_fit_schema_drift_names_columns(work, tmp_path, capsys):
    _, _, rep = work
    header, rows = hio.read_csv(rep / "data.csv")
    header = [h if h != "x2" else "x2_renamed" for h in header]
    hio.write_csv(tmp_path / "d.csv", header, rows)
    code = main(["fit", "--data", str(tmp_path / "d.csv"), "--schema", str(rep / "schema.csv"),
                 "--out", str(tmp_path / "o")])
    assert code == 2
    err = capsys.readouterr().err
    assert "missing columns: x2" in err and "unexpected columns: x2_renamed" in err


def test_corrupt_chain_exit_2(work, tmp_path):
    root, _, rep = work
    import shutil
    shutil.copytree(root / "fit" / "chain", tmp_path / "chain")
    p = tmp_path / "chain" / "phi.csv"
    p.write_text(p.read_text()[:-20])
    code = main(["-q", "predict", "--chain", str(tmp_path / "chain"), "--data", str(rep / "test.csv"),
                 "--out", str(tmp_path / "p.csv")])
    assert code == 2


def test_predict_and_evaluate(work, tmp_path):
    root, _, rep = work
    header, rows = hio.read_csv(rep / "test.csv")
    hio.write_csv(tmp_path / "five.csv", header, rows[:5])
    out = tmp_path / "pred.csv"
    assert main(["-q", "predict", "--chain", str(root / "fit" / "chain"), "--data", str(tmp_path / "five.csv"),
                 "--schema", str(rep / "schema.csv"), "--out", str(out)]) == 0
    h, pr = hio.read_csv(out)
    assert h == ["row", "population", "outcome", "mean", "lower95", "upper95"] and len(pr) == 5
    for r in pr:
        lo, m, hi = float(r[4]), float(r[3]), float(r[5])
        assert 0 <= lo <= m <= hi <= 1
    assert (tmp_path / "pred.manifest.json").exists()

    full = tmp_path / "full.csv"
    assert main(["-q", "predict", "--chain", str(root / "fit" / "chain"), "--data", str(rep / "test.csv"),
                 "--out", str(full)]) == 0
    ev = tmp_path / "ev"
    assert main(["-q", "evaluate", "--predictions", str(full), "--truth", str(rep / "test.csv"),
                 "--schema", str(rep / "schema.csv"), "--metrics", "auc", "--filter", "group==1",
                 "--out", str(ev)]) == 0
    h, m = hio.read_csv(ev / "metrics.csv")
    assert [r[1:3] for r in m] == [["all", "auc"], ["group==1", "auc"]]
    for r in m:
        assert r[4] == "ok" and 0 <= float(r[3]) <= 1

    with pytest.warns(UserWarning, match="selects no rows"):
        assert main(["-q", "evaluate", "--predictions", str(full), "--truth", str(rep / "test.csv"),
                     "--filter", "group==9", "--out", str(ev)]) == 0
    _, m = hio.read_csv(ev / "metrics.csv")
    empty = [r for r in m if r[1] == "group==9"]
    assert empty and all(r[4] == "undefined: empty subset" for r in empty)
    _, curves = hio.read_csv(ev / "curves.csv")
    assert {r[2] for r in curves} == {"roc", "pr"}

    assert main(["-q", "evaluate", "--predictions", str(full), "--truth", str(rep / "test.csv"),
                 "--metrics", "auc,mse,bogus", "--out", str(ev)]) == 2


def test_predict_schema_type_drift(work, tmp_path):
    root, _, rep = work
    cols = hio.read_schema(rep / "schema.csv")
    text = (rep / "schema.csv").read_text().replace("x3,binary", "x3,continuous")
    (tmp_path / "s.csv").write_text(text)
    assert any(c.name == "x3" for c in cols)
    code = main(["-q", "predict", "--chain", str(root / "fit" / "chain"), "--data", str(rep / "test.csv"),
                 "--schema", str(tmp_path / "s.csv"), "--out", str(tmp_path / "p.csv")])
    assert code == 2


def test_parse_filter():
    label, pred = parse_filter("group == 2")
    assert label == "group==2" and pred(np.array([1, 2])).tolist() == [False, True]
    assert parse_filter("group!=2")[1](np.array([1, 2])).tolist() == [True, False]
    assert parse_filter(None) is None
    with pytest.raises(ValidationError):
        parse_filter("population==1")


STUDY = TINY.replace("binary_cols = 1, 4", "replications = 2") + "[study]\nmethods = lasso\nfolds = 3\n"


def test_study_single_method(tmp_path):
    cfg = tmp_path / "s.ini"
    cfg.write_text(STUDY)
    assert main(["-q", "study", "--config", str(cfg), "--out", str(tmp_path / "st"), "--workers", "1"]) == 0
    h, rows = hio.read_csv(tmp_path / "st" / "table1.csv")
    assert h == ["metric", "statistic", "lasso"]
    assert [r[1] for r in rows] == ["median", "mean", "min", "max"] and rows[0][0] == "mse"
    h, rows = hio.read_csv(tmp_path / "st" / "table2.csv")
    assert h == ["population", "statistic", "lasso"] and len(rows) == 8
    _, fails = hio.read_csv(tmp_path / "st" / "failures.csv")
    assert fails == []
    _, reps = hio.read_csv(tmp_path / "st" / "replicates.csv")
    assert {r[0] for r in reps} == {"1", "2"}
    grids = read_json(tmp_path / "st" / "manifest.json")["baseline_grids"]
    assert list(grids) == ["lasso"]


def test_study_exit_3_when_replications_fail(tmp_path, monkeypatch):
    import hifm.study

    def broken(*a, **k):
        raise RuntimeError("solver diverged")

    monkeypatch.setattr(hifm.study, "fit_enet", broken)
    cfg = tmp_path / "s.ini"
    cfg.write_text(STUDY)
    assert main(["-q", "study", "--config", str(cfg), "--out", str(tmp_path / "st"), "--workers", "1"]) == 3
    _, fails = hio.read_csv(tmp_path / "st" / "failures.csv")
    assert len(fails) == 2 and all("solver diverged" in r[2] for r in fails)
    assert read_json(tmp_path / "st" / "manifest.json")["failure_fraction"] == 1.0


def test_bad_config_exit_2(tmp_path):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[simulation]\nwidth = 3\n")
    assert main(["-q", "simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert main(["-q", "simulate", "--config", str(tmp_path / "none.ini"), "--out", str(tmp_path / "o")]) == 2
