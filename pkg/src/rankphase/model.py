"""Core domain objects for approximate ranking from pairwise interactions.

A rank vector assigns an integer latent position r(i) in {1..n} to each of n
objects; ties are allowed, so r need not be a permutation.  Observed
interactions X_ij (i != j) are noisy readings of a mean mu_{r(i)r(j)} that
depends only on the two latent positions.  This module holds the rank/space
types, mean-matrix construction for the three supported mean structures,
the l_q loss family, and the exact signal-gap identities used as numerical
oracles elsewhere in the package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InputError

DIFFERENTIAL = "differential"
ADDITIVE = "additive"
POISSON_SQRT_LINEAR = "poisson_sqrt_linear"

MODEL_KINDS = (DIFFERENTIAL, ADDITIVE, POISSON_SQRT_LINEAR)


def identity_rank(n: int) -> np.ndarray:
    """The rank vector r(i) = i as an int64 array."""
    if n < 1:
        raise InputError(f"n must be >= 1, got {n}")
    return np.arange(1, n + 1, dtype=np.int64)


def rank_entries(r, n: int | None = None) -> np.ndarray:
    """Coerce a rank vector (RankVector, array, or sequence) to int64 entries.

    Validates integrality and, when ``n`` is given, length and the range
    1 <= r(i) <= n.
    """
    if isinstance(r, RankVector):
        arr = r.entries
    else:
        arr = np.asarray(r)
        if arr.ndim != 1:
            raise InputError(f"rank vector must be 1-d, got shape {arr.shape}")
        if not np.issubdtype(arr.dtype, np.integer):
            rounded = np.rint(arr)
            if not np.all(np.isfinite(arr)) or np.any(rounded != arr):
                raise InputError("rank entries must be integers")
            arr = rounded
        arr = arr.astype(np.int64)
    if n is not None:
        if arr.shape[0] != n:
            raise InputError(f"rank vector has length {arr.shape[0]}, expected {n}")
        if arr.size and (arr.min() < 1 or arr.max() > n):
            raise InputError("rank entries must lie in [1, n]")
    return arr


@dataclass(frozen=True)
class RankVector:
    """Latent positions r(i) in {1..n}; ties allowed, not necessarily a permutation."""

    entries: np.ndarray

    def __post_init__(self):
        arr = rank_entries(self.entries)
        n = arr.shape[0]
        if n < 1:
            raise InputError("rank vector must be nonempty")
        if arr.min() < 1 or arr.max() > n:
            raise InputError("rank entries must lie in [1, n]")
        arr.setflags(write=False)
        object.__setattr__(self, "entries", arr)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def __len__(self) -> int:
        return self.n


def default_sum_budget(n: int) -> int:
    """Default c_n = ceil(n^(1/4)), computed in exact integer arithmetic."""
    k = 1
    while k**4 < n:
        k += 1
    return k


def default_sumsq_budget(n: int) -> int:
    """Default c'_n = ceil(n^(3/2)), computed in exact integer arithmetic."""
    m = math.isqrt(n**3)
    if m * m < n**3:
        m += 1
    return m


@dataclass(frozen=True)
class RankSpace:
    """Feasible rank vectors: |sum r - sum i| <= c_n, optionally |sum r^2 - sum i^2| <= c_n_sq.

    The sum-of-squares budget is present exactly when the space is the
    restricted one used by the profile least-squares estimator.
    """

    n: int
    c_n: int
    c_n_sq: int | None = None

    def __post_init__(self):
        if self.n < 2:
            raise InputError(f"rank space needs n >= 2, got {self.n}")
        if self.c_n < 1:
            raise InputError(f"sum budget c_n must be >= 1, got {self.c_n}")
        if self.c_n_sq is not None:
            if self.c_n_sq < 0:
                raise InputError("sum-of-squares budget must be nonnegative")
            if self.c_n_sq >= self.n**3:
                raise InputError("sum-of-squares budget must be < n^3")

    @classmethod
    def default(cls, n: int) -> "RankSpace":
        return cls(n=n, c_n=default_sum_budget(n))

    @classmethod
    def default_restricted(cls, n: int) -> "RankSpace":
        return cls(n=n, c_n=default_sum_budget(n), c_n_sq=default_sumsq_budget(n))

    @property
    def restricted(self) -> bool:
        return self.c_n_sq is not None

    def identity_sum(self) -> int:
        return self.n * (self.n + 1) // 2

    def identity_sumsq(self) -> int:
        return self.n * (self.n + 1) * (2 * self.n + 1) // 6


def space_contains(space: RankSpace, r) -> bool:
    """True iff r satisfies the sum (and, if present, sum-of-squares) budget."""
    arr = rank_entries(r, space.n)
    dev = int(arr.sum()) - space.identity_sum()
    if abs(dev) > space.c_n:
        return False
    if space.c_n_sq is not None:
        dev2 = int(np.dot(arr, arr)) - space.identity_sumsq()
        if abs(dev2) > space.c_n_sq:
            return False
    return True


@dataclass(frozen=True)
class NoiseSpec:
    """Noise family for the interaction model: centered Gaussian or Poisson."""

    family: str
    sigma: float = 1.0
    independent: bool = True

    def __post_init__(self):
        if self.family not in ("gaussian", "poisson"):
            raise InputError(f"unknown noise family {self.family!r}")
        if self.family == "gaussian" and not self.sigma > 0:
            raise InputError("gaussian noise needs sigma > 0")
        if not self.independent:
            raise InputError("only independent noise is supported")


@dataclass(frozen=True)
class ModelSpec:
    """Mean structure mu_{ab} over latent positions a, b in [n].

    kind = "differential":       mu_ab = theta_a - theta_b
    kind = "additive":           mu_ab = theta_a + theta_b
    kind = "poisson_sqrt_linear": sqrt(mu_ab) = 2*alpha + beta_tilde*(a + b)

    ``theta`` holds the per-position ability values; for the Poisson kind it
    stores the square-root-scale coefficients alpha + beta_tilde*k, so that
    sqrt(mu_ab) = theta_a + theta_b.  ``alpha``/``beta_tilde`` are set only
    for parametric (linear-in-position) instances.
    """

    kind: str
    theta: np.ndarray
    alpha: float | None = None
    beta_tilde: float | None = None

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise InputError(f"unknown model kind {self.kind!r}")
        th = np.asarray(self.theta, dtype=np.float64)
        if th.ndim != 1 or th.shape[0] < 2:
            raise InputError("theta must be a 1-d vector of length >= 2")
        if not np.all(np.isfinite(th)):
            raise InputError("theta entries must be finite")
        if self.kind == POISSON_SQRT_LINEAR and np.any(th[:, None] + th[None, :] <= 0):
            raise InputError("Poisson sqrt-means 2*alpha + beta_tilde*(i+j) must be positive")
        th = th.copy()
        th.setflags(write=False)
        object.__setattr__(self, "theta", th)

    @property
    def n(self) -> int:
        return self.theta.shape[0]

    @property
    def is_parametric(self) -> bool:
        return self.beta_tilde is not None

    @classmethod
    def differential(cls, theta: Sequence[float]) -> "ModelSpec":
        return cls(kind=DIFFERENTIAL, theta=np.asarray(theta, dtype=np.float64))

    @classmethod
    def additive(cls, theta: Sequence[float]) -> "ModelSpec":
        return cls(kind=ADDITIVE, theta=np.asarray(theta, dtype=np.float64))

    @classmethod
    def parametric(cls, kind: str, n: int, alpha: float, beta_tilde: float) -> "ModelSpec":
        """Linear abilities theta_k = alpha + beta_tilde*k for k = 1..n."""
        if kind not in (DIFFERENTIAL, ADDITIVE):
            raise InputError(f"parametric() expects differential/additive, got {kind!r}")
        if not beta_tilde > 0:
            raise InputError("parametric models need beta_tilde > 0")
        theta = alpha + beta_tilde * np.arange(1, n + 1, dtype=np.float64)
        return cls(kind=kind, theta=theta, alpha=float(alpha), beta_tilde=float(beta_tilde))

    @classmethod
    def poisson_sqrt_linear(cls, n: int, alpha: float, beta_tilde: float) -> "ModelSpec":
        """Poisson means with sqrt(mu_ab) = 2*alpha + beta_tilde*(a+b)."""
        if beta_tilde < 0:
            raise InputError("poisson_sqrt_linear needs beta_tilde >= 0")
        theta = alpha + beta_tilde * np.arange(1, n + 1, dtype=np.float64)
        return cls(
            kind=POISSON_SQRT_LINEAR,
            theta=theta,
            alpha=float(alpha),
            beta_tilde=float(beta_tilde),
        )


@dataclass(frozen=True)
class InteractionMatrix:
    """Observed interactions X_ij for i != j; the diagonal is masked (NaN).

    The constructor overwrites the diagonal with NaN so that any operation
    that accidentally reads it poisons its output instead of silently using
    a sentinel value.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise InputError(f"interaction matrix must be square, got shape {v.shape}")
        if v.shape[0] < 2:
            raise InputError("interaction matrix needs n >= 2")
        off = ~np.eye(v.shape[0], dtype=bool)
        if not np.all(np.isfinite(v[off])):
            raise InputError("off-diagonal interaction entries must be finite")
        v = v.copy()
        np.fill_diagonal(v, np.nan)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def zero_diagonal(self) -> np.ndarray:
        """A writable copy with the masked diagonal replaced by exact zeros."""
        v = self.values.copy()
        np.fill_diagonal(v, 0.0)
        return v


def position_mean_table(model: ModelSpec) -> np.ndarray:
    """Means mu_{ab} for every pair of latent positions a, b in [n].

    Unlike build_mean_matrix this table has no masked diagonal: mu_{aa} is a
    legitimate mean when two distinct objects share the position a.
    """
    th = model.theta
    if model.kind == DIFFERENTIAL:
        return th[:, None] - th[None, :]
    if model.kind == ADDITIVE:
        return th[:, None] + th[None, :]
    s = th[:, None] + th[None, :]
    return s * s


def build_mean_matrix(model: ModelSpec, r) -> np.ndarray:
    """The n x n mean matrix mu_{r(i)r(j)} with a NaN-masked diagonal."""
    arr = rank_entries(r, model.n)
    th = model.theta[arr - 1]
    if model.kind == DIFFERENTIAL:
        mu = th[:, None] - th[None, :]
    elif model.kind == ADDITIVE:
        mu = th[:, None] + th[None, :]
    else:
        s = th[:, None] + th[None, :]
        mu = s * s
    np.fill_diagonal(mu, np.nan)
    return mu


def _offdiag_sq_sum(diff: np.ndarray) -> float:
    d = diff.copy()
    np.fill_diagonal(d, 0.0)
    return float(np.sum(d * d))


def signal_gap(model: ModelSpec, r, r_tilde) -> float:
    """Sum over i != j of (mu~ - mu)^2, on the sqrt-mean scale for Poisson.

    This is the left side of the signal condition that lower-bounds the
    separation between two rank vectors.
    """
    mu_r = build_mean_matrix(model, r)
    mu_t = build_mean_matrix(model, r_tilde)
    if model.kind == POISSON_SQRT_LINEAR:
        mu_r = np.sqrt(mu_r)
        mu_t = np.sqrt(mu_t)
    return _offdiag_sq_sum(mu_t - mu_r)


def signal_gap_closed_form(model: ModelSpec, r, r_tilde) -> float:
    """Exact closed form of signal_gap for linear-ability models.

    differential (theta_k = alpha + beta_tilde*k):
        2*n*bt^2*||delta||^2 - 2*bt^2*(sum delta)^2
    poisson_sqrt_linear:
        bt^2*(2*(n-2)*||delta||^2 + 2*(sum delta)^2)
    with delta = r_tilde - r.
    """
    if model.kind == DIFFERENTIAL:
        if not model.is_parametric:
            raise InputError("closed form needs a parametric differential model")
    elif model.kind != POISSON_SQRT_LINEAR:
        raise InputError(f"no closed-form gap for model kind {model.kind!r}")
    a = rank_entries(r, model.n)
    b = rank_entries(r_tilde, model.n)
    delta = (b - a).astype(np.float64)
    nsq = float(np.dot(delta, delta))
    s = float(delta.sum())
    bt2 = float(model.beta_tilde) ** 2
    if model.kind == DIFFERENTIAL:
        return 2.0 * model.n * bt2 * nsq - 2.0 * bt2 * s * s
    return bt2 * (2.0 * (model.n - 2) * nsq + 2.0 * s * s)


def loss(q: float, r_hat, r) -> float:
    """The l_q loss between two rank vectors.

    q = 0 gives the normalized Hamming distance; q in (0, 2] gives the
    normalized mean of |r_hat(i) - r(i)|^q.
    """
    if not 0.0 <= q <= 2.0:
        raise InputError(f"loss exponent q must be in [0, 2], got {q}")
    a = rank_entries(r_hat)
    b = rank_entries(r)
    if a.shape[0] != b.shape[0]:
        raise InputError("rank vectors must have equal length")
    if q == 0.0:
        return float(np.mean(a != b))
    diff = np.abs(a - b).astype(np.float64)
    return float(np.mean(diff**q))


def snr(n: int, beta: float, sigma: float) -> float:
    """Signal-to-noise ratio n*beta^2 / (4*sigma^2)."""
    if n < 2:
        raise InputError(f"snr needs n >= 2, got {n}")
    if not sigma > 0:
        raise InputError("snr needs sigma > 0")
    return n * beta * beta / (4.0 * sigma * sigma)


def beta_for_snr(n: int, snr_value: float, sigma: float) -> float:
    """Invert snr(): the beta >= 0 with n*beta^2/(4*sigma^2) = snr_value."""
    if n < 2:
        raise InputError(f"beta_for_snr needs n >= 2, got {n}")
    if not sigma > 0:
        raise InputError("beta_for_snr needs sigma > 0")
    if snr_value < 0:
        raise InputError("snr must be nonnegative")
    return 2.0 * sigma * math.sqrt(snr_value / n)


def estimate_beta_squared(model: ModelSpec, rank_pairs) -> float:
    """Empirical beta^2: min of signal_gap / (2n ||r~ - r||^2) over given pairs.

    For nonparametric ability vectors the signal constant is not known in
    closed form, so it is probed on supplied rank pairs (identical pairs are
    skipped).
    """
    best = math.inf
    used = 0
    for r, r_tilde in rank_pairs:
        a = rank_entries(r, model.n)
        b = rank_entries(r_tilde, model.n)
        nsq = float(np.sum((a - b) ** 2))
        if nsq == 0.0:
            continue
        gap = signal_gap(model, a, b)
        best = min(best, gap / (2.0 * model.n * nsq))
        used += 1
    if used == 0:
        raise InputError("estimate_beta_squared needs at least one distinct pair")
    return best
