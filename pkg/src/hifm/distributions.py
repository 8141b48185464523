"""Random-variate generators used by the sampler.

All generators take a :class:`numpy.random.Generator` and are vectorized over
broadcastable parameter arrays.  Seeding goes through :class:`RngHandle`, which
maps a ``(seed, stream)`` pair onto an independent Philox stream.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr, ndtri_exp

from .errors import NumericalError, ParameterError

_TINY = np.finfo(float).tiny


@dataclass(frozen=True)
class RngHandle:
    """Reproducible handle on a random stream.

    Identical ``(seed, stream)`` pairs always yield the same sequence; distinct
    stream ids give statistically independent streams (SeedSequence spawn keys).
    """

    seed: int
    stream: int = 0

    def __post_init__(self):
        if self.seed < 0 or self.seed >= 2**64:
            raise ParameterError("seed must be a 64-bit unsigned integer")
        if self.stream < 0:
            raise ParameterError("stream id must be nonnegative")

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(self.seed, spawn_key=(self.stream,))
        return np.random.Generator(np.random.Philox(seq))

    def substream(self, *ids: int) -> "RngHandle":
        """Derive a handle for a nested stream, e.g. ``(replication, method)``."""
        seq = np.random.SeedSequence(self.seed, spawn_key=(self.stream, *ids))
        stream = int(seq.generate_state(1, np.uint64)[0] >> np.uint64(1))
        return RngHandle(self.seed, stream)


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngHandle):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RngHandle or numpy Generator, got {type(rng).__name__}")


def _positive(name, value):
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise ParameterError(f"{name} must be finite and positive")
    return arr


# -- gamma family ------------------------------------------------------------

def log_gamma_variates(shape, rng, size=None):
    """Log of Gamma(shape, 1) draws, accurate for shape << 1.

    For shape < 1 uses Gamma(shape + 1) * U**(1/shape), evaluated in log space
    so tiny shapes never underflow.
    """
    shape = _positive("shape", shape)
    if size is None:
        size = shape.shape
    shape = np.broadcast_to(shape, size)
    small = shape < 1.0
    base = rng.standard_gamma(np.where(small, shape + 1.0, shape))
    u = rng.random(size)
    with np.errstate(divide="ignore"):
        out = np.log(base)
    # u == 0 has probability 2**-53 per draw; treat as the smallest uniform
    u = np.maximum(u, 2.0**-53)
    out = np.where(small, out + np.log(u) / shape, out)
    return out


def sample_gamma(shape, rate, rng, size=None):
    """Gamma(shape, rate) draws; strictly positive even for very small shapes."""
    rate = _positive("rate", rate)
    shape = _positive("shape", shape)
    if size is None:
        size = np.broadcast_shapes(shape.shape, rate.shape)
    logx = log_gamma_variates(np.broadcast_to(shape, size), rng) - np.log(np.broadcast_to(rate, size))
    out = np.maximum(np.exp(logx), _TINY)
    return out if out.ndim else float(out)


def sample_inverse_gamma(shape, rate, rng, size=None):
    """Reciprocal of a Gamma(shape, rate) draw."""
    return 1.0 / sample_gamma(shape, rate, rng, size)


def sample_dirichlet_via_gamma(alphas, rng):
    """Dirichlet draw built from normalized independent gamma variates."""
    alphas = np.asarray(alphas, dtype=float)
    if alphas.ndim != 1 or alphas.size == 0:
        raise ParameterError("alphas must be a nonempty vector")
    _positive("alphas", alphas)
    if alphas.size == 1:
        return np.ones(1)
    logg = log_gamma_variates(alphas, rng)
    g = np.exp(logg - logg.max())
    return g / g.sum()


# -- generalized inverse Gaussian --------------------------------------------

def gig_valid(p, a, b):
    p, a, b = (np.asarray(x, dtype=float) for x in (p, a, b))
    finite = np.isfinite(p) & np.isfinite(a) & np.isfinite(b)
    return finite & (a > 0) & ((b > 0) | ((b == 0) & (p > 0)))


@dataclass(frozen=True)
class GigParams:
    """Parameters of the density proportional to x**(p-1) exp(-(a x + b / x) / 2)."""

    p: float
    a: float
    b: float

    def __post_init__(self):
        if not bool(gig_valid(self.p, self.a, self.b)):
            raise ParameterError(f"invalid GIG parameters p={self.p}, a={self.a}, b={self.b}")


def _gig_mode(lam, omega):
    big = lam >= 1.0
    lm1 = lam - 1.0
    root = np.sqrt(lm1 * lm1 + omega * omega)
    with np.errstate(divide="ignore", invalid="ignore"):
        m_big = (lm1 + root) / omega
        m_small = omega / (root - lm1)
    return np.where(big, m_big, m_small)


def _rejection(rng, m, propose):
    """Run ``propose(idx, rng) -> (x, accepted)`` until every slot is filled."""
    out = np.empty(m)
    pending = np.arange(m)
    while pending.size:
        x, ok = propose(pending, rng)
        out[pending[ok]] = x[ok]
        pending = pending[~ok]
    return out


def _gig_rou_shift(lam, omega, rng):
    t = 0.5 * (lam - 1.0)
    s = 0.25 * omega
    xm = _gig_mode(lam, omega)
    nc = t * np.log(xm) - s * (xm + 1.0 / xm)
    a = -(2.0 * (lam + 1.0) / omega + xm)
    b = 2.0 * (lam - 1.0) * xm / omega - 1.0
    c = xm
    pp = b - a * a / 3.0
    qq = 2.0 * a**3 / 27.0 - a * b / 3.0 + c
    arg = np.clip(-qq / (2.0 * np.sqrt(-(pp**3) / 27.0)), -1.0, 1.0)
    fi = np.arccos(arg)
    fak = 2.0 * np.sqrt(-pp / 3.0)
    y1 = fak * np.cos(fi / 3.0) - a / 3.0
    y2 = fak * np.cos(fi / 3.0 + 4.0 / 3.0 * np.pi) - a / 3.0
    uplus = (y1 - xm) * np.exp(t * np.log(y1) - s * (y1 + 1.0 / y1) - nc)
    uminus = (y2 - xm) * np.exp(t * np.log(y2) - s * (y2 + 1.0 / y2) - nc)

    def propose(idx, rng):
        u = uminus[idx] + rng.random(idx.size) * (uplus[idx] - uminus[idx])
        v = rng.random(idx.size)
        with np.errstate(divide="ignore", invalid="ignore"):
            x = u / v + xm[idx]
            logf = t[idx] * np.log(x) - s[idx] * (x + 1.0 / x) - nc[idx]
            ok = (x > 0) & (np.log(v) <= logf)
        return x, ok

    return _rejection(rng, lam.size, propose)


def _gig_rou_noshift(lam, omega, rng):
    t = 0.5 * (lam - 1.0)
    s = 0.25 * omega
    xm = _gig_mode(lam, omega)
    nc = t * np.log(xm) - s * (xm + 1.0 / xm)
    ym = ((lam + 1.0) + np.sqrt((lam + 1.0) ** 2 + omega * omega)) / omega
    um = np.exp(0.5 * (lam + 1.0) * np.log(ym) - s * (ym + 1.0 / ym) - nc)

    def propose(idx, rng):
        u = um[idx] * rng.random(idx.size)
        v = rng.random(idx.size)
        with np.errstate(divide="ignore", invalid="ignore"):
            x = u / v
            logf = t[idx] * np.log(x) - s[idx] * (x + 1.0 / x) - nc[idx]
            ok = (x > 0) & (np.log(v) <= logf)
        return x, ok

    return _rejection(rng, lam.size, propose)


def _gig_small_omega(lam, omega, rng):
    # dominating density with three pieces; valid for 0 <= lam < 1, small omega
    xm = _gig_mode(lam, omega)
    x0 = omega / (1.0 - lam)
    k0 = np.exp((lam - 1.0) * np.log(xm) - 0.5 * omega * (xm + 1.0 / xm))
    a0 = k0 * x0
    far = x0 >= 2.0 / omega
    lam0 = lam == 0.0
    k1 = np.where(far, 0.0, np.exp(-omega))
    with np.errstate(divide="ignore", invalid="ignore"):
        a1_pos = k1 / lam * ((2.0 / omega) ** lam - x0**lam)
    a1 = np.where(far, 0.0, np.where(lam0, k1 * np.log(2.0 / omega**2), a1_pos))
    k2 = np.where(far, x0 ** (lam - 1.0), (2.0 / omega) ** (lam - 1.0))
    a2 = np.where(far, k2 * 2.0 * np.exp(-omega * x0 / 2.0) / omega, k2 * 2.0 * np.exp(-1.0) / omega)
    atot = a0 + a1 + a2
    left = np.maximum(x0, 2.0 / omega)

    def propose(idx, rng):
        lm, om = lam[idx], omega[idx]
        v = atot[idx] * rng.random(idx.size)
        x = np.empty(idx.size)
        hx = np.empty(idx.size)
        seg0 = v <= a0[idx]
        seg1 = ~seg0 & (v <= a0[idx] + a1[idx])
        seg2 = ~seg0 & ~seg1
        x[seg0] = x0[idx][seg0] * v[seg0] / a0[idx][seg0]
        hx[seg0] = k0[idx][seg0]
        if seg1.any():
            vv = v[seg1] - a0[idx][seg1]
            l1 = lm[seg1]
            kk1 = k1[idx][seg1]
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                x_pos = (x0[idx][seg1] ** l1 + l1 / kk1 * vv) ** (1.0 / l1)
                x_zero = om[seg1] * np.exp(np.exp(om[seg1]) * vv)
            xs = np.where(l1 == 0.0, x_zero, x_pos)
            x[seg1] = xs
            hx[seg1] = np.where(l1 == 0.0, kk1 / xs, kk1 * xs ** (l1 - 1.0))
        if seg2.any():
            vv = v[seg2] - a0[idx][seg2] - a1[idx][seg2]
            o2 = om[seg2]
            kk2 = k2[idx][seg2]
            with np.errstate(divide="ignore", invalid="ignore"):
                xs = -2.0 / o2 * np.log(np.exp(-o2 / 2.0 * left[idx][seg2]) - o2 / (2.0 * kk2) * vv)
            x[seg2] = xs
            hx[seg2] = kk2 * np.exp(-o2 / 2.0 * xs)
        u = rng.random(idx.size) * hx
        with np.errstate(divide="ignore", invalid="ignore"):
            logf = (lm - 1.0) * np.log(x) - om / 2.0 * (x + 1.0 / x)
            ok = np.isfinite(x) & (x > 0) & (np.log(u) <= logf)
        return x, ok

    return _rejection(rng, lam.size, propose)


def _gig_standard(lam, omega, rng):
    """Draws from y**(lam-1) exp(-omega (y + 1/y) / 2) for lam >= 0, omega > 0."""
    out = np.empty(lam.size)
    shift = (lam > 2.0) | (omega > 3.0)
    noshift = ~shift & ((lam >= 1.0 - 2.25 * omega * omega) | (omega > 0.2))
    small = ~shift & ~noshift
    for mask, fn in ((shift, _gig_rou_shift), (noshift, _gig_rou_noshift), (small, _gig_small_omega)):
        if mask.any():
            out[mask] = fn(lam[mask], omega[mask], rng)
    return out


def sample_gig(p, a=None, b=None, rng=None, size=None):
    """Draws from the GIG density proportional to x**(p-1) exp(-(a x + b/x)/2).

    Ratio-of-uniforms (with mode shift where needed) for b > 0; the b = 0 limit
    is Gamma(p, a/2).  ``p``, ``a``, ``b`` broadcast against each other.
    A :class:`GigParams` may be passed in place of the three parameters,
    followed by ``rng`` and ``size``: ``sample_gig(params, rng, size)``.
    """
    if isinstance(p, GigParams):
        p, a, b, rng, size = p.p, p.a, p.b, a, b
    if rng is None:
        raise TypeError("sample_gig needs an rng")
    rng = as_generator(rng)
    p, a, b = (np.asarray(x, dtype=float) for x in (p, a, b))
    if size is None:
        size = np.broadcast_shapes(p.shape, a.shape, b.shape)
    p, a, b = (np.broadcast_to(x, size).ravel() for x in (p, a, b))
    if not np.all(gig_valid(p, a, b)):
        raise ParameterError("GIG requires a > 0 and b > 0, or a > 0, b = 0, p > 0")
    out = np.empty(p.size)
    zero_b = b == 0
    if zero_b.any():
        out[zero_b] = sample_gamma(p[zero_b], a[zero_b] / 2.0, rng)
    pos = ~zero_b
    if pos.any():
        lam, aa, bb = p[pos], a[pos], b[pos]
        omega = np.sqrt(aa * bb)
        y = _gig_standard(np.abs(lam), omega, rng)
        y = np.where(lam < 0, 1.0 / y, y)
        out[pos] = np.sqrt(bb / aa) * y
    out = out.reshape(size)
    return out if out.ndim else float(out)


# -- normal family -----------------------------------------------------------

def truncated_normal_from_uniform(mean, sd, above, u):
    """Inverse-CDF transform of uniforms onto N(mean, sd^2) truncated at zero.

    ``above`` selects (0, inf) where true and (-inf, 0] where false.  Works in
    log-probability space, so it stays exact far into either tail.
    """
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    above = np.asarray(above, dtype=bool)
    # reflect the "below" case onto "above": X <= 0 with mean m  <=>  -X > 0 with mean -m
    m = np.where(above, mean, -mean)
    lower = -m / sd
    u = np.clip(u, 2.0**-54, 1.0)
    z = -ndtri_exp(np.log(u) + log_ndtr(-lower))
    x = m + sd * np.maximum(z, lower)
    x = np.maximum(x, _TINY)
    return np.where(above, x, -x)


def sample_truncated_normal(mean, sd, side, rng, size=None):
    """N(mean, sd^2) conditioned on (0, inf) (``side="above"``) or (-inf, 0].

    ``side`` may also be a boolean array (True for above) broadcast to the
    means, which is how the probit update calls it.
    """
    sd = _positive("sd", sd)
    if isinstance(side, str):
        if side not in ("above", "below"):
            raise ParameterError("side must be 'above' or 'below'")
        side = side == "above"
    mean = np.asarray(mean, dtype=float)
    if size is None:
        size = np.broadcast_shapes(mean.shape, sd.shape, np.shape(side))
    out = truncated_normal_from_uniform(mean, sd, side, rng.random(size))
    return out if out.ndim else float(out)


def cholesky_jittered(mat):
    """Lower Cholesky factor, adding 1e-10 * trace/k to the diagonal once on failure."""
    mat = np.asarray(mat, dtype=float)
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        pass
    k = mat.shape[-1]
    jitter = 1e-10 * np.trace(mat, axis1=-2, axis2=-1) / k
    jittered = mat + np.asarray(jitter)[..., None, None] * np.eye(k)
    try:
        return np.linalg.cholesky(jittered)
    except np.linalg.LinAlgError:
        eig = np.linalg.eigvalsh(0.5 * (mat + np.swapaxes(mat, -1, -2)))
        min_eig = float(np.min(eig))
        raise NumericalError(
            f"matrix not positive definite after jitter (min eigenvalue {min_eig:.3e})",
            min_eigenvalue=min_eig,
        ) from None


def sample_mvn(mean, cov, rng, size=None):
    """Multivariate normal draws via a (jittered) Cholesky factor of ``cov``."""
    mean = np.asarray(mean, dtype=float)
    chol = cholesky_jittered(cov)
    shape = (mean.shape[-1],) if size is None else (*np.atleast_1d(size), mean.shape[-1])
    eps = rng.standard_normal(shape)
    return mean + eps @ chol.T


def sample_mvn_precision(precision, linear, eps):
    """Draw N(P^{-1} h, P^{-1}) for stacked precisions ``P`` and vectors ``h``.

    ``precision`` has shape (..., k, k), ``linear`` (..., k) and ``eps`` holds
    the standard-normal innovations with the same shape as ``linear``.
    Returns ``(draw, mean)``.
    """
    chol = cholesky_jittered(precision)
    y = np.linalg.solve(chol, linear[..., None])
    mean = np.linalg.solve(np.swapaxes(chol, -1, -2), y)[..., 0]
    noise = np.linalg.solve(np.swapaxes(chol, -1, -2), eps[..., None])[..., 0]
    return mean + noise, mean
