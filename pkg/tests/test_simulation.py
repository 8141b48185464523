import numpy as np
import pytest

from hifm.distributions import RngHandle
from hifm.errors import ValidationError
from hifm.model import BINARY, CONTINUOUS
from hifm.simulation import generate, generate_with_holdout, schema_for, true_factor_count


def gen(seed=0, **kw):
    args = dict(p=12, k=4, n=300, n_target=100)
    args.update(kw)
    return generate(rng=RngHandle(seed).generator(), **args)


def test_same_seed_same_data():
    a, ta = gen(3)
    b, tb = gen(3)
    assert np.array_equal(a.z, b.z)
    assert all(np.array_equal(x, y) for x, y in zip(ta.lambda_true, tb.lambda_true))
    c, _ = gen(4)
    assert not np.array_equal(a.z, c.z)


def test_outcome_row_has_planted_pair():
    for seed in range(20):
        _, truth = gen(seed)
        for lam in truth.lambda_true:
            row = lam[0]
            assert sorted(row[row != 0].tolist()) == [-1.0, 1.0]


def test_truth_shapes_and_positivity():
    d, truth = gen(1, n_populations=3)
    assert len(truth.lambda_true) == 3 and truth.lambda_true[0].shape == (12, 4)
    assert truth.phi_true.shape == (12, 4) and np.all(truth.phi_true > 0)
    assert abs(truth.pi0_true.sum() - 1) < 1e-12
    for om, s2 in zip(truth.omega_true, truth.sigma_true):
        assert np.array_equal(om, om.T)
        assert np.linalg.eigvalsh(om).min() > 0
        assert np.all(s2 > 0)
    assert truth.factors_true.shape == (300, 4)
    assert np.sum(d.group == 1) == 100
    assert sorted(np.unique(d.group).tolist()) == [1, 2, 3]


def test_true_coefficients_match_partition():
    _, truth = gen(2)
    om = truth.omega_true[1]
    ref = np.linalg.solve(om[1:, 1:], om[1:, 0])
    assert np.allclose(truth.theta_true[1], ref, atol=1e-10)


def test_empirical_covariance_matches_truth():
    d, truth = generate(p=8, k=3, n=10**6 + 10, n_target=10**6, rng=RngHandle(5).generator(),
                        standardize=False)
    z = d.z[d.group == 1]
    emp = np.cov(z, rowvar=False)
    om = truth.omega_true[0]
    assert np.linalg.norm(emp - om) / np.linalg.norm(om) < 0.01


def test_dichotomization_balance():
    bins = [0, 1, 2, 3, 4, 5]
    d, _ = generate(p=10, k=3, n=60_000, n_target=30_000, binary_cols=bins, rng=RngHandle(6).generator())
    assert [c.type for c in d.columns[:6]] == [BINARY] * 6
    assert d.columns[6].type == CONTINUOUS
    frac = d.z[:, bins].mean(axis=0)
    assert np.all(np.abs(frac - 0.5) < 0.02)
    assert set(np.unique(d.z[:, bins])) == {0.0, 1.0}


def test_holdout_is_raw_and_split_proportionally():
    train, test, _ = generate_with_holdout(6, 2, 200, 80, rng=RngHandle(7).generator(), n_test=100)
    assert test.n == 100 and np.sum(test.group == 1) == 40
    assert np.all(test.center == 0) and np.all(test.scale == 1)
    assert np.allclose(train.z.mean(axis=0), 0, atol=1e-12)


def test_single_population_uses_all_rows():
    d, truth = gen(8, n_populations=1)
    assert np.all(d.group == 1) and len(truth.w_true) == 1


@pytest.mark.parametrize("kw", [dict(k=12), dict(k=0), dict(n_target=300), dict(n_target=0),
                                dict(binary_cols=[12]), dict(binary_cols=[-1]), dict(n_populations=0)])
def test_validation(kw):
    with pytest.raises(ValidationError):
        gen(0, **kw)


def test_schema_names():
    cols = schema_for(4, binary_cols=[0, 2])
    assert [c.name for c in cols] == ["y", "x1", "x2", "x3"]
    assert [c.type for c in cols] == [BINARY, CONTINUOUS, BINARY, CONTINUOUS]


def test_true_factor_count():
    _, truth = gen(9)
    truth.w_true = [np.array([0.01, 0.2, 3.0, 0.05]), np.zeros(4)]
    assert true_factor_count(truth) == [2, 0]
    assert true_factor_count(truth, threshold=0.001) == [4, 0]
