"""Data model, hyperparameters, chain state and prior draws for the truncated model."""

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .distributions import (
    sample_dirichlet_via_gamma,
    sample_gamma,
    sample_inverse_gamma,
    sample_truncated_normal,
)
from .errors import ValidationError

BINARY = "binary"
CONTINUOUS = "continuous"
OUTCOME = "outcome"
COVARIATE = "covariate"


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    type: str
    role: str

    def __post_init__(self):
        if self.type not in (BINARY, CONTINUOUS):
            raise ValidationError(f"column {self.name!r}: unknown type {self.type!r}")
        if self.role not in (OUTCOME, COVARIATE):
            raise ValidationError(f"column {self.name!r}: unknown role {self.role!r}")


class Dataset:
    """Observation matrix ``z`` (outcomes first), column schema and population labels.

    Continuous columns are centered and scaled over the full dataset at
    construction; the constants are kept in ``center`` / ``scale`` so held-out
    rows can be mapped with :meth:`transform`.  Binary columns are stored
    as-is (center 0, scale 1).
    """

    def __init__(self, values, columns, group, standardize=True, center=None, scale=None):
        values = np.array(values, dtype=float)
        columns = [c if isinstance(c, ColumnSpec) else ColumnSpec(*c) for c in columns]
        group = np.asarray(group)
        if values.ndim != 2 or values.shape[1] != len(columns):
            raise ValidationError(
                f"data has {values.shape[1] if values.ndim == 2 else '?'} columns, schema has {len(columns)}"
            )
        if group.shape != (values.shape[0],):
            raise ValidationError("group labels must have one entry per row")
        if len({c.name for c in columns}) != len(columns):
            raise ValidationError("duplicate column names in schema")
        if not any(c.role == OUTCOME for c in columns):
            raise ValidationError("schema needs at least one outcome column")
        if not np.all(np.equal(np.mod(group, 1), 0)):
            raise ValidationError("group labels must be integers")
        group = group.astype(int)
        if group.size and group.min() < 1:
            raise ValidationError("population labels must be integers >= 1")

        # outcomes first, then covariates, each in schema order
        order = [i for i, c in enumerate(columns) if c.role == OUTCOME]
        order += [i for i, c in enumerate(columns) if c.role == COVARIATE]
        values = values[:, order]
        columns = [columns[i] for i in order]

        bad = []
        for j, col in enumerate(columns):
            v = values[:, j]
            if col.type == BINARY:
                if not np.all((v == 0) | (v == 1)):
                    bad.append(col.name)
            elif not np.all(np.isfinite(v)):
                bad.append(col.name)
        if bad:
            raise ValidationError(f"invalid values in columns: {', '.join(bad)}")

        self.columns = columns
        self.binary = np.array([c.type == BINARY for c in columns])
        if center is None or scale is None:
            center = np.zeros(len(columns))
            scale = np.ones(len(columns))
            if standardize:
                cont = ~self.binary
                center[cont] = values[:, cont].mean(axis=0)
                sd = values[:, cont].std(axis=0)
                sd[sd == 0] = 1.0
                scale[cont] = sd
        self.center = np.asarray(center, dtype=float)
        self.scale = np.asarray(scale, dtype=float)
        self.z = (values - self.center) / self.scale
        self._raw = values
        self.group = group
        self.populations = np.unique(group)
        n_pop = len(self.populations)
        if n_pop == 0:
            raise ValidationError("dataset has no rows")

    @property
    def n(self):
        return self.z.shape[0]

    @property
    def p(self):
        return self.z.shape[1]

    @property
    def names(self):
        return [c.name for c in self.columns]

    @property
    def outcome_idx(self):
        return np.array([j for j, c in enumerate(self.columns) if c.role == OUTCOME])

    @property
    def covariate_idx(self):
        return np.array([j for j, c in enumerate(self.columns) if c.role == COVARIATE], dtype=int)

    @property
    def n_populations(self):
        return len(self.populations)

    def group_index(self):
        """Zero-based population index per row."""
        return np.searchsorted(self.populations, self.group)

    def rows_of(self, l):
        return np.flatnonzero(self.group == self.populations[l])

    def raw_values(self):
        """Values as ingested (reordered outcomes first); a copy."""
        return self._raw.copy()

    def transform(self, values, names=None):
        """Standardize raw values (columns ordered as ``names``) with this dataset's constants."""
        values = np.asarray(values, dtype=float)
        idx = np.arange(self.p) if names is None else np.array([self.names.index(n) for n in names])
        return (values - self.center[idx]) / self.scale[idx]

    def fingerprint(self, seed=None):
        payload = {
            "columns": [asdict(c) for c in self.columns],
            "n": self.n,
            "populations": [int(x) for x in self.populations],
            "seed": seed,
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class Hyperparameters:
    """Prior settings and iteration schedule.

    ``sigma_shape``/``sigma_rate`` are the inverse-gamma prior on continuous
    idiosyncratic variances; the default 1.5/1.5 is IG(v/2, v/2) with v = 3.
    ``alpha_l`` may be one value shared by all populations or one per population.
    """

    alpha0: float = 10.0
    alpha_l: object = 15.0
    tau: float = 3.0
    sigma_shape: float = 1.5
    sigma_rate: float = 1.5
    k_star: int = None
    mh_tuning_c: float = 50.0
    n_iter: int = 2000
    n_burnin: int = 1000
    thin: int = 5
    weight_threshold: float = 0.05

    def __post_init__(self):
        for name in ("alpha0", "tau", "sigma_shape", "sigma_rate", "mh_tuning_c", "weight_threshold"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        if np.any(np.asarray(self.alpha_l, dtype=float) <= 0):
            raise ValidationError("alpha_l must be positive")
        if self.k_star is not None and self.k_star < 1:
            raise ValidationError("k_star must be >= 1")
        if self.thin < 1 or self.n_iter < 1 or self.n_burnin < 0:
            raise ValidationError("n_iter >= 1, n_burnin >= 0 and thin >= 1 are required")
        if self.n_burnin >= self.n_iter:
            raise ValidationError("n_burnin must be smaller than n_iter")

    def alphas(self, n_populations):
        a = np.atleast_1d(np.asarray(self.alpha_l, dtype=float))
        if a.size == 1:
            return np.repeat(a, n_populations)
        if a.size != n_populations:
            raise ValidationError(f"alpha_l has {a.size} entries for {n_populations} populations")
        return a

    def resolve(self, p):
        """Copy with ``k_star`` filled in from :func:`default_k_star` when unset."""
        if self.k_star is not None:
            return self
        return replace(self, k_star=default_k_star(p))

    @property
    def n_retained(self):
        return (self.n_iter - self.n_burnin) // self.thin

    def to_dict(self):
        d = asdict(self)
        a = np.asarray(self.alpha_l, dtype=float)
        d["alpha_l"] = a.tolist() if a.ndim else float(a)
        return d


def default_k_star(p):
    """Truncation level round(5 log p), at least 2."""
    if p < 2:
        raise ValidationError("default_k_star needs p >= 2")
    return max(2, int(math.floor(5.0 * math.log(p) + 0.5)))


@dataclass
class SharedState:
    pi0: np.ndarray
    theta0: np.ndarray  # unnormalized anchor for the Metropolis-Hastings proposal
    phi: np.ndarray  # p x k local precisions


@dataclass
class GroupState:
    lam: np.ndarray  # p x (k + 1); last column is the intercept
    w: np.ndarray
    sigma2: np.ndarray
    factors: np.ndarray = None  # n_l x k

    @property
    def k(self):
        return self.lam.shape[1] - 1

    @property
    def loadings(self):
        return self.lam[:, :-1]

    @property
    def intercept(self):
        return self.lam[:, -1]


@dataclass
class ChainState:
    shared: SharedState
    groups: list
    z_latent: np.ndarray = None

    def copy(self, latent=True):
        groups = [
            GroupState(g.lam.copy(), g.w.copy(), g.sigma2.copy(),
                       None if (g.factors is None or not latent) else g.factors.copy())
            for g in self.groups
        ]
        shared = SharedState(self.shared.pi0.copy(), self.shared.theta0.copy(), self.shared.phi.copy())
        z = None if (self.z_latent is None or not latent) else self.z_latent.copy()
        return ChainState(shared, groups, z)


@dataclass
class MhDiagnostics:
    proposals: int = 0
    accepts: int = 0

    @property
    def acceptance_rate(self):
        return self.accepts / self.proposals if self.proposals else 0.0

    def to_dict(self):
        return {"proposals": self.proposals, "accepts": self.accepts,
                "acceptance_rate": self.acceptance_rate}


@dataclass
class PosteriorChain:
    """Retained draws plus what is needed to interpret them on new data."""

    draws: list
    hyper: Hyperparameters
    columns: list
    center: np.ndarray
    scale: np.ndarray
    populations: np.ndarray
    fingerprint: str
    diagnostics: MhDiagnostics = field(default_factory=MhDiagnostics)

    def __len__(self):
        return len(self.draws)

    @property
    def names(self):
        return [c.name for c in self.columns]

    @property
    def binary(self):
        return np.array([c.type == BINARY for c in self.columns])

    @property
    def outcome_idx(self):
        return np.array([j for j, c in enumerate(self.columns) if c.role == OUTCOME])

    @property
    def covariate_idx(self):
        return np.array([j for j, c in enumerate(self.columns) if c.role == COVARIATE], dtype=int)

    def population_index(self, label):
        hits = np.flatnonzero(self.populations == label)
        if hits.size == 0:
            raise ValidationError(f"unknown population label {label!r}")
        return int(hits[0])

    def stack(self, name, l=None):
        """Stack one block across draws, e.g. ``stack("w", 0)`` -> (n_draws, k)."""
        if name in ("pi0", "theta0", "phi"):
            return np.stack([getattr(d.shared, name) for d in self.draws])
        return np.stack([getattr(d.groups[l], name) for d in self.draws])


def init_from_prior(hyper, dataset, rng):
    """Draw a full chain state from the truncated prior.

    The intercept column of each loadings matrix gets an unshrunk N(0, 1)
    prior; binary columns have their variance pinned to 1 and their latent
    values started from one-sided N(0, 1) draws.
    """
    hyper = hyper.resolve(dataset.p)
    k, p, n_pop = hyper.k_star, dataset.p, dataset.n_populations
    alphas = hyper.alphas(n_pop)
    pi0 = sample_dirichlet_via_gamma(np.full(k, hyper.alpha0 / k), rng)
    phi = np.atleast_2d(sample_gamma(hyper.tau / 2, hyper.tau / 2, rng, size=(p, k)))
    groups = []
    gidx = dataset.group_index()
    for l in range(n_pop):
        w = np.atleast_1d(sample_gamma(alphas[l] * pi0, 1.0, rng))
        sd = np.sqrt(w[None, :] / phi)
        lam = np.empty((p, k + 1))
        lam[:, :k] = sd * rng.standard_normal((p, k))
        lam[:, k] = rng.standard_normal(p)
        sigma2 = np.ones(p)
        cont = ~dataset.binary
        if cont.any():
            sigma2[cont] = sample_inverse_gamma(hyper.sigma_shape, hyper.sigma_rate, rng, size=int(cont.sum()))
        n_l = int(np.sum(gidx == l))
        factors = rng.standard_normal((n_l, k))
        groups.append(GroupState(lam, w, sigma2, factors))
    z_latent = dataset.z.copy()
    if dataset.binary.any():
        obs = dataset.z[:, dataset.binary]
        z_latent[:, dataset.binary] = sample_truncated_normal(0.0, 1.0, obs == 1, rng, size=obs.shape)
    shared = SharedState(pi0=pi0, theta0=pi0 * k, phi=phi)
    return ChainState(shared, groups, z_latent)


def assemble_covariance(group):
    """Marginal covariance Lambda Lambda^T + diag(sigma2), intercept column excluded."""
    lam = group.loadings
    omega = lam @ lam.T
    omega = 0.5 * (omega + omega.T)
    omega[np.diag_indices_from(omega)] += group.sigma2
    return omega
