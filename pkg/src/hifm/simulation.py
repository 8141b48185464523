"""Synthetic multi-population data with known loadings, weights and coefficients."""

from dataclasses import dataclass, field

import numpy as np

from .distributions import (
    as_generator,
    sample_dirichlet_via_gamma,
    sample_gamma,
    sample_inverse_gamma,
)
from .errors import ValidationError
from .model import BINARY, CONTINUOUS, COVARIATE, OUTCOME, ColumnSpec, Dataset
from .regression import partition_coefficients


@dataclass
class SyntheticTruth:
    lambda_true: list
    w_true: list
    sigma_true: list
    omega_true: list
    theta_true: list
    phi_true: np.ndarray
    pi0_true: np.ndarray
    factors_true: np.ndarray
    config: dict = field(default_factory=dict)


def schema_for(p, binary_cols=()):
    binary_cols = set(binary_cols)
    cols = [ColumnSpec("y", BINARY if 0 in binary_cols else CONTINUOUS, OUTCOME)]
    cols += [ColumnSpec(f"x{j}", BINARY if j in binary_cols else CONTINUOUS, COVARIATE) for j in range(1, p)]
    return cols


def generate_with_holdout(p, k, n, n_target, binary_cols=(), rng=None, n_test=0, tau=3.0,
                          alpha_l=15.0, alpha0=15.0, n_populations=2, sigma_shape=1.0,
                          sigma_rate=0.33, standardize=True):
    """Draw a training :class:`Dataset`, a raw held-out :class:`Dataset` and the truth.

    Column 0 is the outcome ``y``; ``binary_cols`` are zero-based column
    indices dichotomized at zero.  The first ``n_target`` training rows (and
    the same fraction of held-out rows) belong to population 1.  The held-out
    set is returned unstandardized so it can be mapped with the training
    constants.
    """
    rng = as_generator(rng)
    binary_cols = sorted(set(int(j) for j in binary_cols))
    if any(j < 0 or j >= p for j in binary_cols):
        raise ValidationError(f"binary_cols must lie in [0, {p - 1}]")
    if not 0 < n_target < n:
        raise ValidationError("need 0 < n_target < n")
    if not 1 <= k < p:
        raise ValidationError("need 1 <= k < p")
    if n_populations < 1:
        raise ValidationError("need at least one population")

    pi0 = sample_dirichlet_via_gamma(np.full(k, alpha0 / k), rng)
    phi = np.reshape(sample_gamma(tau / 2, tau / 2, rng, size=(p, k)), (p, k))
    alphas = np.broadcast_to(np.asarray(alpha_l, dtype=float), (n_populations,))
    lams, ws, sigmas, omegas, thetas = [], [], [], [], []
    for l in range(n_populations):
        w = np.atleast_1d(sample_gamma(alphas[l] * pi0, 1.0, rng))
        lam = np.sqrt(w / phi) * rng.standard_normal((p, k))
        lam[0] = 0.0
        pos = rng.choice(k, size=2, replace=False)
        lam[0, pos[0]], lam[0, pos[1]] = 1.0, -1.0
        sigma2 = np.atleast_1d(sample_inverse_gamma(sigma_shape, sigma_rate, rng, size=p))
        omega = lam @ lam.T
        omega = 0.5 * (omega + omega.T) + np.diag(sigma2)
        lams.append(lam)
        ws.append(w)
        sigmas.append(sigma2)
        omegas.append(omega)
        thetas.append(partition_coefficients(omega, [0], np.arange(1, p))[:, 0])

    def draw_rows(n_rows, n_first):
        counts = [n_first] + _split(n_rows - n_first, n_populations - 1)
        group = np.concatenate([np.full(c, l + 1) for l, c in enumerate(counts)])
        f = rng.standard_normal((n_rows, k))
        z = np.empty((n_rows, p))
        start = 0
        for l, c in enumerate(counts):
            sl = slice(start, start + c)
            z[sl] = f[sl] @ lams[l].T + rng.standard_normal((c, p)) * np.sqrt(sigmas[l])
            start += c
        return z, group, f

    if n_populations == 1:
        n_target = n
    z, group, f = draw_rows(n, n_target)
    cols = schema_for(p, binary_cols)
    config = {
        "p": p, "k": k, "n": n, "n_target": n_target, "n_test": n_test, "tau": tau,
        "alpha_l": alphas.tolist(), "alpha0": alpha0, "binary_cols": binary_cols,
        "n_populations": n_populations,
    }
    truth = SyntheticTruth(lams, ws, sigmas, omegas, thetas, phi, pi0, f, config)
    z_obs = z.copy()
    z_obs[:, binary_cols] = (z[:, binary_cols] > 0).astype(float)
    train = Dataset(z_obs, cols, group, standardize=standardize)
    test = None
    if n_test > 0:
        n_test_first = int(round(n_test * n_target / n))
        zt, gt, _ = draw_rows(n_test, n_test_first)
        zt[:, binary_cols] = (zt[:, binary_cols] > 0).astype(float)
        test = Dataset(zt, cols, gt, standardize=False)
    return train, test, truth


def _split(total, parts):
    if parts <= 0:
        return []
    base = [total // parts] * parts
    for i in range(total - sum(base)):
        base[i] += 1
    return base


def generate(p, k, n, n_target, binary_cols=(), rng=None, **kwargs):
    """Training data and ground truth; see :func:`generate_with_holdout`."""
    train, _, truth = generate_with_holdout(p, k, n, n_target, binary_cols, rng, n_test=0, **kwargs)
    return train, truth


def true_factor_count(truth, threshold=0.05):
    """Number of true stick weights above ``threshold``, per population."""
    return [int(np.sum(w > threshold)) for w in truth.w_true]
