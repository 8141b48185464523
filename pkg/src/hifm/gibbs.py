"""Gibbs sampler for the hierarchical infinite factor model.

One sweep updates, in order: probit latents, factor scores, loadings rows,
idiosyncratic variances, local precisions ``phi``, stick weights ``w`` (GIG
draws) and the shared stick proportions ``pi0`` (Metropolis-Hastings).

Row-wise blocks (factor scores and probit latents) draw all their random
numbers up front and then process fixed-size row chunks, so running the
chunks on a thread pool gives bit-identical results to running them serially.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import gammaln

from .distributions import (
    as_generator,
    cholesky_jittered,
    sample_gamma,
    sample_gig,
    sample_mvn_precision,
    truncated_normal_from_uniform,
)
from .errors import NumericalError, ValidationError
from .model import MhDiagnostics, PosteriorChain, init_from_prior

log = logging.getLogger(__name__)

CHUNK_ROWS = 256
GIG_B_FLOOR = 1e-12
_W_FLOOR = 1e-300


def _map_chunks(n, work, pool=None, chunk_rows=CHUNK_ROWS):
    slices = [slice(i, min(i + chunk_rows, n)) for i in range(0, n, chunk_rows)]
    if pool is None or len(slices) < 2:
        parts = [work(sl) for sl in slices]
    else:
        parts = list(pool.map(work, slices))
    return np.concatenate(parts, axis=0) if parts else None


def factor_conditional(lam, intercept, sigma2):
    """Precision Cholesky factor and the map z -> h for the factor-score conditional.

    Returns ``(chol, lt)`` where ``chol`` is the lower Cholesky factor of
    I + Lambda^T Sigma^{-1} Lambda and ``lt = Lambda^T Sigma^{-1}``.
    """
    lt = lam.T / sigma2
    prec = np.eye(lam.shape[1]) + lt @ lam
    return cholesky_jittered(prec), lt


def update_factors(group, z, rng, pool=None):
    """Draw every factor-score row of one population from its Gaussian conditional.

    ``z`` holds the (latent-augmented) rows of the population.  The intercept
    column enters as a known offset.
    """
    lam, c = group.loadings, group.intercept
    chol, lt = factor_conditional(lam, c, group.sigma2)
    n, k = z.shape[0], lam.shape[1]
    eps = rng.standard_normal((n, k))

    def work(sl):
        h = (z[sl] - c) @ lt.T
        mean = cho_solve((chol, True), h.T)
        noise = solve_triangular(chol, eps[sl].T, lower=True, trans="T")
        return (mean + noise).T

    out = _map_chunks(n, work, pool)
    return np.empty((0, k)) if out is None else out


def _with_intercept(factors):
    return np.hstack([factors, np.ones((factors.shape[0], 1))])


def loadings_conditional(group, z, phi, rows=None):
    """Stacked precisions and linear terms of the loadings-row conditionals.

    Row j has precision diag(phi_j / w, 1) + F1^T F1 / sigma2_j and linear
    term F1^T z_j / sigma2_j, where F1 is the factor matrix with a column of ones.
    """
    rows = np.arange(z.shape[1]) if rows is None else np.atleast_1d(rows)
    f1 = _with_intercept(group.factors)
    gram = f1.T @ f1
    s2 = group.sigma2[rows]
    prior = np.ones((rows.size, f1.shape[1]))
    prior[:, :-1] = phi[rows] / np.maximum(group.w, _W_FLOOR)
    prec = gram[None, :, :] / s2[:, None, None]
    idx = np.arange(f1.shape[1])
    prec[:, idx, idx] += prior
    linear = (f1.T @ z[:, rows]).T / s2[:, None]
    return prec, linear


def update_loadings(group, z, phi, rng):
    """Draw all loadings rows (including intercepts) of one population."""
    prec, linear = loadings_conditional(group, z, phi)
    eps = rng.standard_normal(linear.shape)
    draw, _ = sample_mvn_precision(prec, linear, eps)
    return draw


def update_loadings_row(j, group, z, phi, rng):
    """Draw row ``j`` of one population's loadings matrix."""
    prec, linear = loadings_conditional(group, z, phi, rows=[j])
    eps = rng.standard_normal(linear.shape)
    draw, _ = sample_mvn_precision(prec, linear, eps)
    return draw[0]


def update_sigma2(group, z, binary, shape, rate, rng):
    """Conjugate inverse-gamma update of continuous-column variances; binary stay at 1."""
    sigma2 = np.ones(z.shape[1])
    cont = ~np.asarray(binary)
    if cont.any():
        f1 = _with_intercept(group.factors)
        resid = z[:, cont] - f1 @ group.lam[cont].T
        ss = np.einsum("ij,ij->j", resid, resid)
        prec = sample_gamma(shape + z.shape[0] / 2.0, rate + ss / 2.0, rng)
        sigma2[cont] = 1.0 / prec
    return sigma2


def update_phi(groups, tau, rng):
    """Gamma update of the shared local precisions from squared loadings."""
    k = groups[0].k
    acc = sum(g.loadings**2 / (2.0 * np.maximum(g.w, _W_FLOOR)) for g in groups)
    shape = tau / 2.0 + len(groups) / 2.0
    return np.reshape(sample_gamma(shape, tau / 2.0 + acc, rng), (-1, k))


def weight_gig_params(group, phi, pi0, alpha):
    """GIG parameters ``(p, a, b)`` of the stick-weight conditionals of one population."""
    n_rows = group.lam.shape[0]
    p_w = alpha * pi0 - n_rows / 2.0
    b_w = np.einsum("jh,jh->h", phi, group.loadings**2)
    b_w = np.where((p_w <= 0) & (b_w < GIG_B_FLOOR), GIG_B_FLOOR, b_w)
    return p_w, np.full_like(p_w, 2.0), b_w


def update_weights(group, phi, pi0, alpha, rng):
    p_w, a_w, b_w = weight_gig_params(group, phi, pi0, alpha)
    return np.atleast_1d(sample_gig(p_w, a_w, b_w, rng))


def pi0_log_posterior(pi0, ws, alpha0, alphas):
    """Log Dir(pi0; alpha0/k) + sum_l sum_h log Gamma(w_lh; alpha_l pi0_h, 1).

    Returns ``-inf`` when any component of ``pi0`` is not strictly positive.
    """
    pi0 = np.asarray(pi0, dtype=float)
    if np.any(pi0 <= 0) or not np.all(np.isfinite(pi0)):
        return -np.inf
    k = pi0.size
    conc = alpha0 / k
    out = gammaln(alpha0) - k * gammaln(conc) + (conc - 1.0) * np.sum(np.log(pi0))
    for w, a in zip(ws, alphas):
        shape = a * pi0
        out += np.sum((shape - 1.0) * np.log(w) - w - gammaln(shape))
    return float(out)


def _gamma_logpdf(x, shape, rate):
    return shape * np.log(rate) - gammaln(shape) + (shape - 1.0) * np.log(x) - rate * x


def theta_log_target(theta, ws, alpha0, alphas):
    """Target density of the unnormalized anchor theta0.

    With theta_h iid Gamma(alpha0/k, 1) a priori, theta / sum(theta) is
    Dir(alpha0/k) and independent of the total, so this target has exactly the
    intended pi0 marginal.
    """
    theta = np.asarray(theta, dtype=float)
    total = theta.sum()
    k = theta.size
    lp = pi0_log_posterior(theta / total, ws, alpha0, alphas)
    if not np.isfinite(lp):
        return -np.inf
    return lp + float(_gamma_logpdf(total, alpha0, 1.0)) - (k - 1) * np.log(total)


def update_pi0_mh(shared, ws, alpha0, alphas, c, diagnostics, rng):
    """Gamma random-walk proposal on theta0, normalized to pi0; returns ``(pi0, theta0)``."""
    theta = shared.theta0
    proposal = np.atleast_1d(sample_gamma(theta * c, c, rng))
    diagnostics.proposals += 1
    log_u = np.log(rng.random())
    if np.any(proposal <= 0):
        return shared.pi0, theta
    log_ratio = (
        theta_log_target(proposal, ws, alpha0, alphas)
        - theta_log_target(theta, ws, alpha0, alphas)
        + np.sum(_gamma_logpdf(theta, proposal * c, c))
        - np.sum(_gamma_logpdf(proposal, theta * c, c))
    )
    if np.isfinite(log_ratio) and log_u < log_ratio:
        diagnostics.accepts += 1
        return proposal / proposal.sum(), proposal
    return shared.pi0, theta


def update_probit_latents(z_latent, obs, binary, rows_by_group, groups, rng, pool=None):
    """Redraw latent values of binary cells from N(lambda_j^T [f_i, 1], 1) truncated by sign.

    Continuous cells are not touched.  ``obs`` holds the observed 0/1 data.
    """
    cols = np.flatnonzero(binary)
    if cols.size == 0:
        return z_latent
    out = z_latent.copy()
    for rows, g in zip(rows_by_group, groups):
        if rows.size == 0:
            continue
        u = rng.random((rows.size, cols.size))
        lam_b = g.lam[cols]
        f1 = _with_intercept(g.factors)
        above = obs[np.ix_(rows, cols)] == 1

        def work(sl, f1=f1, lam_b=lam_b, above=above, u=u):
            m = f1[sl] @ lam_b.T
            return truncated_normal_from_uniform(m, 1.0, above[sl], u[sl])

        out[np.ix_(rows, cols)] = _map_chunks(rows.size, work, pool)
    return out


class GibbsSampler:
    """Holds the mutable state of one chain and advances it sweep by sweep."""

    def __init__(self, dataset, hyper, rng, workers=1, state=None):
        self.data = dataset
        self.hyper = hyper.resolve(dataset.p)
        self.rng = as_generator(rng)
        self.rows = [dataset.rows_of(l) for l in range(dataset.n_populations)]
        if any(r.size == 0 for r in self.rows):
            raise ValidationError("every population needs at least one row")
        self.alphas = self.hyper.alphas(dataset.n_populations)
        self.state = init_from_prior(self.hyper, dataset, self.rng) if state is None else state
        self.diagnostics = MhDiagnostics()
        self.workers = max(1, int(workers))
        self.iteration = 0

    def _block(self, name, fn, pool):
        try:
            return fn(pool)
        except NumericalError as exc:
            exc.block, exc.iteration = name, self.iteration
            raise NumericalError(
                f"{exc} [block={name}, iteration={self.iteration}]",
                min_eigenvalue=exc.min_eigenvalue, block=name, iteration=self.iteration,
            ) from exc

    def sweep(self, pool=None):
        st, h, rng, data = self.state, self.hyper, self.rng, self.data
        groups = st.groups

        st.z_latent = self._block("probit", lambda pl: update_probit_latents(
            st.z_latent, data.z, data.binary, self.rows, groups, rng, pl), pool)

        def factors(pl):
            for rows, g in zip(self.rows, groups):
                g.factors = update_factors(g, st.z_latent[rows], rng, pl)
        self._block("factors", factors, pool)

        def loadings(pl):
            for rows, g in zip(self.rows, groups):
                g.lam = update_loadings(g, st.z_latent[rows], st.shared.phi, rng)
        self._block("loadings", loadings, pool)

        for rows, g in zip(self.rows, groups):
            g.sigma2 = update_sigma2(g, st.z_latent[rows], data.binary, h.sigma_shape, h.sigma_rate, rng)

        st.shared.phi = update_phi(groups, h.tau, rng)
        for g, a in zip(groups, self.alphas):
            g.w = update_weights(g, st.shared.phi, st.shared.pi0, a, rng)
        st.shared.pi0, st.shared.theta0 = update_pi0_mh(
            st.shared, [g.w for g in groups], h.alpha0, self.alphas, h.mh_tuning_c, self.diagnostics, rng)
        self.iteration += 1

    def run(self, progress_every=0, store_latent=False, callback=None):
        """Run the full schedule and return the retained, thinned draws.

        ``callback(iteration, state)`` is invoked on every retained draw before
        it is copied, e.g. to check invariants on the latent values that are
        not stored by default.
        """
        h = self.hyper
        draws = []
        start = time.perf_counter()
        pool = ThreadPoolExecutor(self.workers) if self.workers > 1 else None
        try:
            for it in range(h.n_iter):
                self.sweep(pool)
                if it >= h.n_burnin and (it - h.n_burnin + 1) % h.thin == 0:
                    if callback is not None:
                        callback(it, self.state)
                    draws.append(self.state.copy(latent=store_latent))
                if progress_every and (it + 1) % progress_every == 0:
                    log.info("iteration %d/%d  MH acceptance %.3f  %.1fs",
                             it + 1, h.n_iter, self.diagnostics.acceptance_rate,
                             time.perf_counter() - start)
        finally:
            if pool is not None:
                pool.shutdown()
        rate = self.diagnostics.acceptance_rate
        if not 0.10 <= rate <= 0.70:
            log.warning("pi0 MH acceptance rate %.3f outside [0.10, 0.70]; consider rescaling C "
                        "(larger C gives smaller steps)", rate)
        return PosteriorChain(
            draws=draws, hyper=h, columns=list(self.data.columns),
            center=self.data.center.copy(), scale=self.data.scale.copy(),
            populations=self.data.populations.copy(), fingerprint="",
            diagnostics=self.diagnostics,
        )


def run_chain(dataset, hyper, rng, workers=1, progress_every=0, store_latent=False,
              callback=None, seed=None):
    """Fit the model by Gibbs sampling; see :class:`GibbsSampler`."""
    sampler = GibbsSampler(dataset, hyper, rng, workers=workers)
    chain = sampler.run(progress_every=progress_every, store_latent=store_latent, callback=callback)
    chain.fingerprint = dataset.fingerprint(seed)
    return chain
