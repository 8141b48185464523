"""Regression coefficients, held-out predictions and factor counts from posterior draws."""

from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import ndtr

from .distributions import as_generator, truncated_normal_from_uniform
from .errors import NumericalError, ValidationError
from .gibbs import factor_conditional
from .model import assemble_covariance


def partition_coefficients(omega, y_idx, x_idx, solver="cholesky"):
    """Coefficients of Y on X implied by a joint covariance: Omega_XX^{-1} Omega_XY.

    Returns an array of shape (len(x_idx), len(y_idx)).  ``solver`` is
    ``"cholesky"`` or ``"lu"``; neither forms an explicit inverse.
    """
    omega = np.asarray(omega, dtype=float)
    x_idx, y_idx = np.atleast_1d(x_idx), np.atleast_1d(y_idx)
    oxx = omega[np.ix_(x_idx, x_idx)]
    oxy = omega[np.ix_(x_idx, y_idx)]
    try:
        if solver == "cholesky":
            return linalg.cho_solve(linalg.cho_factor(oxx, lower=True), oxy)
        if solver == "lu":
            return linalg.lu_solve(linalg.lu_factor(oxx), oxy)
    except (np.linalg.LinAlgError, linalg.LinAlgError) as exc:
        raise NumericalError(f"covariate covariance block is singular: {exc}") from exc
    raise ValueError(f"unknown solver {solver!r}")


def coefficients_from_draw(state, l, y_idx, x_idx, solver="cholesky"):
    """Latent-scale regression coefficients of population ``l`` for one draw."""
    return partition_coefficients(assemble_covariance(state.groups[l]), y_idx, x_idx, solver)


@dataclass
class CoefficientDraws:
    draws: np.ndarray  # (n_draws, p_x, p_y)
    covariates: list
    outcomes: list

    @property
    def mean(self):
        return self.draws.mean(axis=0)

    @property
    def lower(self):
        return np.minimum(np.quantile(self.draws, 0.025, axis=0), self.mean)

    @property
    def upper(self):
        return np.maximum(np.quantile(self.draws, 0.975, axis=0), self.mean)


def coefficient_draws(chain, l, original_scale=True):
    """Coefficient draws for population index ``l`` across the retained chain.

    With ``original_scale`` the standardization of continuous columns is
    undone, so coefficients refer to the variables as ingested.  Binary
    columns are left on the latent probit scale.
    """
    y_idx, x_idx = chain.outcome_idx, chain.covariate_idx
    draws = np.stack([coefficients_from_draw(d, l, y_idx, x_idx) for d in chain.draws])
    if original_scale:
        draws = draws * chain.scale[y_idx][None, None, :] / chain.scale[x_idx][None, :, None]
    names = chain.names
    return CoefficientDraws(draws, [names[j] for j in x_idx], [names[j] for j in y_idx])


@dataclass
class PredictionResult:
    mean: np.ndarray  # (n_rows, p_y); probabilities for binary outcomes
    lower: np.ndarray
    upper: np.ndarray
    population: np.ndarray
    outcomes: list
    binary: np.ndarray
    draws: np.ndarray = None  # (n_draws, n_rows, p_y)


def predict(chain, x_raw, populations, rng, covariate_names=None, aug_sweeps=5, keep_draws=False):
    """Posterior predictive outcome summaries for held-out covariate rows.

    ``x_raw`` holds covariates on the ingested scale, columns ordered like the
    training covariates (or as given by ``covariate_names``).  For each draw
    the factor scores are integrated out analytically given the covariates;
    binary covariates are augmented with latent values by ``aug_sweeps``
    alternating truncated-normal / factor draws.  Binary outcomes report
    Phi(m / sqrt(1 + v)), continuous outcomes the predictive mean.
    """
    rng = as_generator(rng)
    x_idx, y_idx = chain.covariate_idx, chain.outcome_idx
    names = chain.names
    cov_names = [names[j] for j in x_idx]
    x_raw = np.atleast_2d(np.asarray(x_raw, dtype=float))
    if covariate_names is not None:
        covariate_names = list(covariate_names)
        missing = sorted(set(cov_names) - set(covariate_names))
        if missing:
            raise ValidationError(f"test data lacks covariates: {', '.join(missing)}")
        x_raw = x_raw[:, [covariate_names.index(n) for n in cov_names]]
    if x_raw.shape[1] != x_idx.size:
        raise ValidationError(f"expected {x_idx.size} covariate columns, got {x_raw.shape[1]}")
    populations = np.asarray(populations)
    if populations.shape != (x_raw.shape[0],):
        raise ValidationError("need one population label per test row")
    pop_index = np.array([chain.population_index(lab) for lab in populations], dtype=int)

    binary = chain.binary
    x_bin = binary[x_idx]
    y_bin = binary[y_idx]
    if np.any(x_bin):
        vals = x_raw[:, x_bin]
        if not np.all((vals == 0) | (vals == 1)):
            raise ValidationError("binary covariates must be 0/1")
    x_std = (x_raw - chain.center[x_idx]) / chain.scale[x_idx]
    n_rows, p_y = x_raw.shape[0], y_idx.size
    if len(chain.draws) == 0:
        raise ValidationError("chain has no retained draws")
    out = np.empty((len(chain.draws), n_rows, p_y))

    for d, state in enumerate(chain.draws):
        for l in np.unique(pop_index):
            rows = np.flatnonzero(pop_index == l)
            g = state.groups[l]
            lam_x, c_x, s2_x = g.loadings[x_idx], g.intercept[x_idx], g.sigma2[x_idx]
            lam_y, c_y, s2_y = g.loadings[y_idx], g.intercept[y_idx], g.sigma2[y_idx]
            chol, lt = factor_conditional(lam_x, c_x, s2_x)
            xl = x_std[rows].copy()
            if np.any(x_bin):
                above = xl[:, x_bin] == 1
                f = np.zeros((rows.size, lam_x.shape[1]))
                for s in range(max(1, aug_sweeps)):
                    m_b = f @ lam_x[x_bin].T + c_x[x_bin]
                    xl[:, x_bin] = truncated_normal_from_uniform(m_b, 1.0, above, rng.random(m_b.shape))
                    mu = linalg.cho_solve((chol, True), ((xl - c_x) @ lt.T).T).T
                    eps = rng.standard_normal(mu.shape)
                    f = mu + linalg.solve_triangular(chol, eps.T, lower=True, trans="T").T
            else:
                mu = linalg.cho_solve((chol, True), ((xl - c_x) @ lt.T).T).T
            cov_f = linalg.cho_solve((chol, True), np.eye(lam_x.shape[1]))
            m = mu @ lam_y.T + c_y
            v = np.einsum("yk,kh,yh->y", lam_y, cov_f, lam_y)
            pred = np.where(y_bin, ndtr(m / np.sqrt(s2_y + v)), m)
            out[d, rows] = pred

    # continuous outcomes back on the ingested scale
    cont = ~y_bin
    out[:, :, cont] = out[:, :, cont] * chain.scale[y_idx][cont] + chain.center[y_idx][cont]
    mean = out.mean(axis=0)
    lower = np.quantile(out, 0.025, axis=0)
    upper = np.quantile(out, 0.975, axis=0)
    return PredictionResult(mean, np.minimum(lower, mean), np.maximum(upper, mean), populations,
                            [names[j] for j in y_idx], y_bin, out if keep_draws else None)


@dataclass
class FactorCount:
    per_draw: np.ndarray
    posterior_mean_count: int
    posterior_mean_w: np.ndarray


def count_active_factors(chain, l, threshold=0.05):
    """Columns whose stick weight exceeds ``threshold`` (intercept never counted)."""
    if threshold <= 0:
        raise ValidationError("threshold must be positive")
    w = chain.stack("w", l)
    per_draw = np.sum(w > threshold, axis=1)
    w_mean = w.mean(axis=0)
    return FactorCount(per_draw, int(np.sum(w_mean > threshold)), w_mean)
