"""Prior families with exact posterior updates and posterior sampling.

Discrete and Gaussian posteriors are exact. Uniform priors over balls and
boxes have truncated-Gaussian posteriors: the data contributes a (possibly
rank-deficient) Gaussian factor and the support constraint is kept, so
sampling works by rejection with a proposal that is Gaussian along informed
directions and flat along uninformed ones. All weight arithmetic happens in
log space with log-sum-exp normalization.

A bandit observation (type x, arm i, reward y) contributes one scalar
Gaussian likelihood on x_i . u with standard deviation R * ||x_i||_2, which
is the reward's exact law when the noisy model has iid N(0, R^2)
coordinates. A semi-bandit observation contributes one scalar likelihood
per observed coordinate with standard deviation R.
"""

import math
from dataclasses import dataclass

import numpy as np

from .domain import Feedback, Instance, RoundRecord, frozen_array
from .errors import (
    DegeneratePosteriorError,
    SamplingError,
    UnsupportedOperationError,
)
from .semantics import apply_map_batch, message_space

MAX_REJECT = 10_000      # consecutive rejections before the grid fallback
FALLBACK_GRID = 64       # grid points per dimension, d <= 3 only
WEIGHT_SUM_TOL = 1e-12
EXACT_MATCH_TOL = 1e-12  # residual tolerance for R = 0 likelihoods


# ---------------------------------------------------------------------------
# Prior families


@dataclass(frozen=True)
class DiscretePrior:
    models: np.ndarray   # (n, d)
    weights: np.ndarray  # (n,), sums to 1

    def __post_init__(self):
        object.__setattr__(self, "models", frozen_array(self.models))
        object.__setattr__(self, "weights", frozen_array(self.weights))
        if self.models.ndim != 2:
            raise ValueError("models must form an (n, d) matrix")
        if self.weights.shape != (len(self.models),):
            raise ValueError("weights must give one probability per model")
        if np.any(self.weights < 0):
            raise ValueError("weights must be non-negative")
        if abs(float(self.weights.sum()) - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError("weights must sum to 1 within 1e-12")

    @property
    def dim(self) -> int:
        return self.models.shape[1]


@dataclass(frozen=True)
class GaussianPrior:
    mean: np.ndarray
    cov: np.ndarray  # symmetric positive definite

    def __post_init__(self):
        object.__setattr__(self, "mean", frozen_array(self.mean))
        object.__setattr__(self, "cov", frozen_array(self.cov))
        if self.cov.shape != (self.dim, self.dim):
            raise ValueError("cov must be (d, d)")
        if not np.allclose(self.cov, self.cov.T):
            raise ValueError("cov must be symmetric")
        try:
            np.linalg.cholesky(self.cov)
        except np.linalg.LinAlgError as exc:
            raise ValueError("cov must be positive definite") from exc

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class UniformBallPrior:
    radius: float
    dim: int

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")


@dataclass(frozen=True)
class UniformBoxPrior:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", frozen_array(self.lo))
        object.__setattr__(self, "hi", frozen_array(self.hi))
        if self.lo.shape != self.hi.shape or self.lo.ndim != 1:
            raise ValueError("lo and hi must be vectors of equal length")
        if np.any(self.lo >= self.hi):
            raise ValueError("lo must be < hi coordinatewise")

    @property
    def dim(self) -> int:
        return self.lo.shape[0]


Prior = DiscretePrior | GaussianPrior | UniformBallPrior | UniformBoxPrior


def prior_dim(prior) -> int:
    return prior.dim


def sup_density(prior):
    """Supremum of the prior density, or None for discrete priors."""
    if isinstance(prior, UniformBoxPrior):
        return 1.0 / float(np.prod(prior.hi - prior.lo))
    if isinstance(prior, UniformBallPrior):
        d = prior.dim
        vol = math.pi ** (d / 2.0) / math.gamma(d / 2.0 + 1.0) * prior.radius**d
        return 1.0 / vol
    if isinstance(prior, GaussianPrior):
        det = float(np.linalg.det(prior.cov))
        return (2.0 * math.pi) ** (-prior.dim / 2.0) / math.sqrt(det)
    return None


# ---------------------------------------------------------------------------
# Posterior states


@dataclass(frozen=True)
class DiscretePosterior:
    prior: DiscretePrior
    log_weights: np.ndarray  # normalized: logsumexp == 0

    def __post_init__(self):
        object.__setattr__(self, "log_weights", frozen_array(self.log_weights))

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)


@dataclass(frozen=True)
class GaussianPosterior:
    prior: GaussianPrior
    precision: np.ndarray  # prior precision + data terms
    shift: np.ndarray      # precision-weighted mean accumulator

    def __post_init__(self):
        object.__setattr__(self, "precision", frozen_array(self.precision))
        object.__setattr__(self, "shift", frozen_array(self.shift))

    @property
    def mean(self) -> np.ndarray:
        return np.linalg.solve(self.precision, self.shift)

    @property
    def cov(self) -> np.ndarray:
        return np.linalg.inv(self.precision)


@dataclass(frozen=True)
class TruncatedPosterior:
    """Uniform prior over a ball or box: data-only Gaussian factor plus the
    support constraint. The precision may be singular before the data spans
    all directions."""

    prior: "UniformBallPrior | UniformBoxPrior"
    precision: np.ndarray
    shift: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "precision", frozen_array(self.precision))
        object.__setattr__(self, "shift", frozen_array(self.shift))

    @property
    def has_data(self) -> bool:
        return bool(self.precision.any())


PosteriorState = DiscretePosterior | GaussianPosterior | TruncatedPosterior


def make_posterior(prior):
    """Zero-observation posterior state for a prior."""
    if isinstance(prior, DiscretePrior):
        with np.errstate(divide="ignore"):
            logw = np.log(prior.weights)
        return DiscretePosterior(prior, _log_normalize(logw))
    if isinstance(prior, GaussianPrior):
        precision = np.linalg.inv(prior.cov)
        precision = 0.5 * (precision + precision.T)
        return GaussianPosterior(prior, precision, precision @ prior.mean)
    if isinstance(prior, (UniformBallPrior, UniformBoxPrior)):
        d = prior.dim
        return TruncatedPosterior(prior, np.zeros((d, d)), np.zeros(d))
    raise TypeError(f"unknown prior {type(prior).__name__}")


# ---------------------------------------------------------------------------
# Prior sampling


def sample_prior(prior, rng) -> np.ndarray:
    if isinstance(prior, DiscretePrior):
        k = int(rng.choice(len(prior.models), p=prior.weights))
        return prior.models[k].copy()
    if isinstance(prior, GaussianPrior):
        chol = np.linalg.cholesky(prior.cov)
        return prior.mean + chol @ rng.standard_normal(prior.dim)
    if isinstance(prior, UniformBoxPrior):
        return rng.uniform(prior.lo, prior.hi)
    if isinstance(prior, UniformBallPrior):
        # rejection from the bounding box; acceptance is fine at desk-scale d
        while True:
            u = rng.uniform(-prior.radius, prior.radius, size=prior.dim)
            if np.linalg.norm(u) <= prior.radius:
                return u
    raise TypeError(f"unknown prior {type(prior).__name__}")


# ---------------------------------------------------------------------------
# Posterior updates


def _log_normalize(logw: np.ndarray) -> np.ndarray:
    m = logw.max()
    if not np.isfinite(m):
        raise DegeneratePosteriorError(
            "all posterior log-weights are -inf (data inconsistent with every model)"
        )
    total = m + np.log(np.exp(logw - m).sum())
    return logw - total


def _likelihood_terms(obs: RoundRecord, inst: Instance):
    """Scalar Gaussian terms (feature, value, sigma) implied by one record."""
    if inst.feedback is Feedback.SEMIBANDIT:
        if obs.aux is None:
            raise ValueError("semi-bandit instance requires aux observations")
        d = obs.type.dim
        for j, v in obs.aux:
            feat = np.zeros(d)
            feat[j] = 1.0
            yield feat, float(v), inst.R
    else:
        feat = obs.type.rows[obs.arm]
        sigma = inst.R * float(np.linalg.norm(feat))
        yield np.asarray(feat, dtype=float), float(obs.reward), sigma


def posterior_update(state, obs: RoundRecord, inst: Instance):
    """Exact Bayes update of `state` with one round's observation."""
    if isinstance(state, DiscretePosterior):
        logw = state.log_weights.copy()
        for feat, value, sigma in _likelihood_terms(obs, inst):
            preds = state.prior.models @ feat
            if sigma == 0.0:
                logw = np.where(np.abs(preds - value) <= EXACT_MATCH_TOL, logw, -np.inf)
            else:
                logw = logw - 0.5 * ((value - preds) / sigma) ** 2
        return DiscretePosterior(state.prior, _log_normalize(logw))
    if isinstance(state, (GaussianPosterior, TruncatedPosterior)):
        precision = state.precision.copy()
        shift = state.shift.copy()
        for feat, value, sigma in _likelihood_terms(obs, inst):
            if sigma == 0.0:
                raise ValueError(
                    "exact (R = 0) observations are only supported for discrete priors"
                )
            w = 1.0 / sigma**2
            precision = precision + w * np.outer(feat, feat)
            shift = shift + w * value * feat
        return type(state)(state.prior, 0.5 * (precision + precision.T), shift)
    raise TypeError(f"unknown posterior state {type(state).__name__}")


# ---------------------------------------------------------------------------
# Posterior sampling


def _in_support(prior, u) -> bool:
    if isinstance(prior, UniformBallPrior):
        return float(np.linalg.norm(u)) <= prior.radius
    return bool(np.all(u >= prior.lo) and np.all(u <= prior.hi))


def _support_box(prior):
    if isinstance(prior, UniformBallPrior):
        lo = np.full(prior.dim, -prior.radius)
        hi = np.full(prior.dim, prior.radius)
    else:
        lo, hi = prior.lo, prior.hi
    return lo, hi


def _circumradius(prior) -> float:
    if isinstance(prior, UniformBallPrior):
        return prior.radius
    corners = np.maximum(np.abs(prior.lo), np.abs(prior.hi))
    return float(np.linalg.norm(corners))


def _truncated_log_density(state: TruncatedPosterior, points: np.ndarray) -> np.ndarray:
    quad = np.einsum("ij,jk,ik->i", points, state.precision, points)
    return -0.5 * quad + points @ state.shift


def _grid_fallback(state: TruncatedPosterior, rng) -> np.ndarray:
    prior = state.prior
    d = prior.dim
    if d > 3:
        raise SamplingError(
            f"rejection underflowed after {MAX_REJECT} draws and the grid "
            f"fallback only supports d <= 3 (got d = {d})"
        )
    lo, hi = _support_box(prior)
    axes = [lo[j] + (np.arange(FALLBACK_GRID) + 0.5) * (hi[j] - lo[j]) / FALLBACK_GRID for j in range(d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=1)
    inside = np.array([_in_support(prior, p) for p in points])
    points = points[inside]
    if len(points) == 0:
        raise SamplingError("fallback grid contains no point of the support")
    logp = _truncated_log_density(state, points)
    logp -= logp.max()
    weights = np.exp(logp)
    total = float(weights.sum())
    if not np.isfinite(total) or total <= 0.0:
        raise SamplingError(
            "fallback grid weights underflowed; the grid is too coarse to "
            f"contain posterior mass (acceptance rate < 1/{MAX_REJECT})"
        )
    k = int(rng.choice(len(points), p=weights / total))
    # jitter uniformly within the chosen cell to avoid atoms at grid nodes
    half = 0.5 * (hi - lo) / FALLBACK_GRID
    return points[k] + rng.uniform(-half, half)


def _truncated_sample(state: TruncatedPosterior, rng) -> np.ndarray:
    prior = state.prior
    if not state.has_data:
        return sample_prior(prior, rng)
    evals, vecs = np.linalg.eigh(state.precision)
    tol = max(float(evals.max()), 1.0) * 1e-12
    pos = evals > tol
    b_w = vecs.T @ state.shift
    mean_w = np.zeros(prior.dim)
    mean_w[pos] = b_w[pos] / evals[pos]
    rho = _circumradius(prior)
    n_pos = int(pos.sum())
    n_flat = prior.dim - n_pos
    for _ in range(MAX_REJECT):
        w = np.empty(prior.dim)
        if n_pos:
            w[pos] = mean_w[pos] + rng.standard_normal(n_pos) / np.sqrt(evals[pos])
        if n_flat:
            w[~pos] = rng.uniform(-rho, rho, size=n_flat)
        u = vecs @ w
        if _in_support(prior, u):
            return u
    return _grid_fallback(state, rng)


def posterior_sample(state, rng) -> np.ndarray:
    if isinstance(state, DiscretePosterior):
        k = int(rng.choice(len(state.prior.models), p=state.weights))
        return state.prior.models[k].copy()
    if isinstance(state, GaussianPosterior):
        chol = np.linalg.cholesky(state.precision)
        z = rng.standard_normal(state.prior.dim)
        # precision = L L^T, so L^-T z has the posterior covariance
        return state.mean + np.linalg.solve(chol.T, z)
    if isinstance(state, TruncatedPosterior):
        return _truncated_sample(state, rng)
    raise TypeError(f"unknown posterior state {type(state).__name__}")


# ---------------------------------------------------------------------------
# Message distributions


@dataclass(frozen=True)
class MessageDistribution:
    messages: tuple
    probs: np.ndarray
    exact: bool

    def __post_init__(self):
        object.__setattr__(self, "probs", frozen_array(self.probs))

    def prob_of(self, message) -> float:
        return float(self.probs[self.messages.index(message)])


def message_distribution(state, smap, x_pub: int, grid=None) -> MessageDistribution:
    """Law of the map applied to a posterior draw.

    Exact for discrete states (weights aggregated per message). Continuous
    states need a quadrature grid of model points and return an estimate
    tagged approximate.
    """
    messages = message_space(smap)
    if isinstance(state, DiscretePosterior):
        index = {m: k for k, m in enumerate(messages)}
        probs = np.zeros(len(messages))
        tags = apply_map_batch(smap, x_pub, state.prior.models)
        for w, tag in zip(state.weights, tags):
            probs[index[tag]] += w
        return MessageDistribution(messages, probs, exact=True)
    if grid is None:
        raise UnsupportedOperationError(
            "continuous posteriors need a quadrature grid for message distributions"
        )
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    if isinstance(state, GaussianPosterior):
        diff = grid - state.mean
        logp = -0.5 * np.einsum("ij,jk,ik->i", diff, state.precision, diff)
    elif isinstance(state, TruncatedPosterior):
        inside = np.array([_in_support(state.prior, p) for p in grid])
        logp = _truncated_log_density(state, grid)
        logp[~inside] = -np.inf
    else:
        raise TypeError(f"unknown posterior state {type(state).__name__}")
    logp = logp - logp.max()
    weights = np.exp(logp)
    weights /= weights.sum()
    index = {m: k for k, m in enumerate(messages)}
    probs = np.zeros(len(messages))
    tags = apply_map_batch(smap, x_pub, grid)
    for w, tag in zip(weights, tags):
        probs[index[tag]] += w
    return MessageDistribution(messages, probs, exact=False)
