"""Data containers and distance utilities for GP-based SVC models."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist, pdist

# beyond this many points the median distance is estimated from sampled pairs
MEDIAN_EXACT_MAX_N = 5000
MEDIAN_SAMPLE_PAIRS = 1_000_000


class ValidationError(ValueError):
    """Raised when SVC data violate the model's shape or finiteness rules.

    The individual problems are kept in ``problems``.
    """

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


def _as_matrix(a):
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    return a


def find_problems(y, X, W, locs):
    """List every violated invariant of the raw inputs (empty if valid)."""
    problems = []
    y = np.asarray(y, dtype=float)
    if y.ndim != 1:
        problems.append(f"y must be a vector, got shape {y.shape}")
        return problems
    n = y.shape[0]
    if n < 1:
        problems.append("need at least one observation")
    for name, a in (("X", X), ("W", W), ("locs", locs)):
        if a.ndim != 2:
            problems.append(f"{name} must be a matrix, got shape {a.shape}")
            continue
        if a.shape[0] != n:
            problems.append(f"dimension mismatch: y has {n} rows but {name} has {a.shape[0]}")
        if a.shape[1] < 1:
            problems.append(f"{name} has no columns")
    if not problems:
        for name, a in (("y", y[:, None]), ("X", X), ("W", W), ("locs", locs)):
            bad = np.argwhere(~np.isfinite(a))
            for row, col in bad[:10]:
                if name == "y":
                    problems.append(f"non-finite entry in y at row {row}")
                else:
                    problems.append(f"non-finite entry in {name} at (row {row}, col {col})")
            if len(bad) > 10:
                problems.append(f"{len(bad) - 10} further non-finite entries in {name}")
    return problems


@dataclass(frozen=True, eq=False)
class SvcData:
    """Response, design matrices and locations of an SVC model.

    ``y = X mu + sum_k w_k * eta_k(s) + eps``. When `W` is omitted every
    fixed-effect covariate also gets a varying coefficient (``W = X``).
    """

    y: np.ndarray
    X: np.ndarray
    W: np.ndarray
    locs: np.ndarray

    def __init__(self, y, X, locs, W=None):
        y = np.asarray(y, dtype=float)
        X = _as_matrix(X)
        locs = _as_matrix(locs)
        W = X if W is None else _as_matrix(W)
        problems = find_problems(y, X, W, locs)
        if problems:
            raise ValidationError(problems)
        for name, a in (("y", y), ("X", X), ("W", W), ("locs", locs)):
            a = np.array(a, dtype=float)
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    @property
    def q(self):
        return self.W.shape[1]

    @property
    def d(self):
        return self.locs.shape[1]

    def take(self, rows):
        """Subset (or permute) observations."""
        return SvcData(self.y[rows], self.X[rows], self.locs[rows], W=self.W[rows])


def validate(y, X, locs, W=None):
    """Build an :class:`SvcData`, raising :class:`ValidationError` on bad input."""
    return SvcData(y, X, locs, W=W)


@dataclass
class ParamVector:
    """Full parameter ``omega``: fixed effects plus per-SVC range/variance and nugget.

    The covariance part is exchanged as the flat vector
    ``theta = (rho_1, sigma2_1, ..., rho_q, sigma2_q, tau2)``.
    """

    mu: np.ndarray
    rho: np.ndarray
    sigma2: np.ndarray
    nugget: float

    def __post_init__(self):
        self.mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        self.rho = np.atleast_1d(np.asarray(self.rho, dtype=float))
        self.sigma2 = np.atleast_1d(np.asarray(self.sigma2, dtype=float))
        self.nugget = float(self.nugget)
        if self.rho.shape != self.sigma2.shape:
            raise ValueError("rho and sigma2 must have the same length")
        if np.any(self.rho <= 0):
            raise ValueError("ranges must be positive")
        if np.any(self.sigma2 < 0):
            raise ValueError("GP variances must be nonnegative")
        if not self.nugget > 0:
            raise ValueError("nugget variance must be positive")

    @property
    def q(self):
        return self.rho.shape[0]

    @property
    def theta(self):
        return theta_vector(self.rho, self.sigma2, self.nugget)

    @classmethod
    def from_theta(cls, theta, mu):
        rho, sigma2, nugget = split_theta(theta)
        return cls(mu=mu, rho=rho, sigma2=sigma2, nugget=nugget)

    def as_dict(self):
        return {
            "mu": self.mu.tolist(),
            "rho": self.rho.tolist(),
            "sigma2": self.sigma2.tolist(),
            "nugget": self.nugget,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(mu=d["mu"], rho=d["rho"], sigma2=d["sigma2"], nugget=d["nugget"])


def theta_vector(rho, sigma2, nugget):
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    sigma2 = np.atleast_1d(np.asarray(sigma2, dtype=float))
    theta = np.empty(2 * rho.shape[0] + 1)
    theta[0:-1:2] = rho
    theta[1:-1:2] = sigma2
    theta[-1] = nugget
    return theta


def split_theta(theta):
    """Split ``theta`` into ``(rho, sigma2, nugget)``."""
    theta = np.asarray(theta, dtype=float)
    if theta.ndim != 1 or theta.shape[0] % 2 != 1:
        raise ValueError(f"theta must have odd length 2q+1, got shape {theta.shape}")
    return theta[0:-1:2].copy(), theta[1:-1:2].copy(), float(theta[-1])


def pairwise_distances(locs, other=None):
    """Euclidean distance matrix between rows of `locs` (and `other`)."""
    locs = _as_matrix(locs)
    if other is None:
        return cdist(locs, locs)
    return cdist(_as_matrix(other), locs)


def sparse_distances(locs, max_distance):
    """Index pairs closer than `max_distance` and their distances.

    Returns ``(rows, cols, dist)`` covering both triangles plus the
    diagonal, so any covariance built on them has a complete pattern.
    Duplicate locations (distance 0) are kept.
    """
    locs = _as_matrix(locs)
    n = locs.shape[0]
    pairs = cKDTree(locs).query_pairs(max_distance, output_type="ndarray")
    i, j = pairs[:, 0], pairs[:, 1]
    d = np.linalg.norm(locs[i] - locs[j], axis=1)
    keep = d < max_distance
    i, j, d = i[keep], j[keep], d[keep]
    diag = np.arange(n)
    rows = np.concatenate([i, j, diag])
    cols = np.concatenate([j, i, diag])
    dist = np.concatenate([d, d, np.zeros(n)])
    return rows, cols, dist


def median_distance(dist):
    """Median of the distinct pairwise distances.

    Parameters
    ----------
    dist : array_like
        Either a square distance matrix or a condensed vector of pairwise
        distances.
    """
    dist = np.asarray(dist, dtype=float)
    if dist.ndim == 2:
        n = dist.shape[0]
        if n < 2:
            raise ValueError("median distance needs at least two locations")
        values = dist[np.triu_indices(n, k=1)]
    else:
        values = dist
        if values.size < 1:
            raise ValueError("median distance needs at least two locations")
    return float(np.median(values))


def median_location_distance(locs, seed=0):
    """Median pairwise distance of `locs`, sampled for very large n."""
    locs = _as_matrix(locs)
    n = locs.shape[0]
    if n < 2:
        raise ValueError("median distance needs at least two locations")
    if n <= MEDIAN_EXACT_MAX_N:
        return median_distance(pdist(locs))
    rng = np.random.default_rng(seed)
    i = rng.integers(0, n, MEDIAN_SAMPLE_PAIRS)
    j = rng.integers(0, n - 1, MEDIAN_SAMPLE_PAIRS)
    j = np.where(j >= i, j + 1, j)
    return median_distance(np.linalg.norm(locs[i] - locs[j], axis=1))
