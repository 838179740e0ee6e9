"""Gaussian distribution math for variational weight compression.

Two parameterizations of a diagonal-Gaussian posterior against a diagonal
Gaussian coding distribution:

* mean/variance: free means and log standard deviations; the KL divergence
  to the coding distribution is whatever it is, and must be annealed.
* mean/KL: each weight carries an unconstrained `tau` (mean position inside
  the admissible interval, through tanh) and a quota logit (softmax share
  of the block's KL budget).  The variance is recovered from the Lambert W
  function, so the blockwise KL equals the budget by construction.

All KL quantities are in nats; bit conversions happen at IO boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lambertw import DEFAULT_REFINE_ITERATIONS, lambert_w

# Inverse-tanh clamp: initial means may land outside the admissible open
# interval, and tanh saturates in float64 anyway beyond |tau| ~ 19.
ARTANH_CLAMP = 1e-6

# Below this |W argument| the Halley-polished root loses relative accuracy
# to cancellation; the series W(-a) = -(a + a^2 + 1.5 a^3) is exact to
# ~2.7 a^2 relative error there.
_SERIES_CUTOFF = 1e-6


class ConstraintViolationError(ValueError):
    """A mean sits outside the interval its KL budget admits."""


@dataclass(frozen=True)
class Gaussian1D:
    mean: float
    log_std: float

    @property
    def std(self) -> float:
        return float(np.exp(self.log_std))

    @property
    def variance(self) -> float:
        return float(np.exp(2.0 * self.log_std))


@dataclass(frozen=True)
class DiagonalGaussian:
    """Independent Gaussians: one mean and one log-std per dimension."""

    means: np.ndarray
    log_stds: np.ndarray

    def __post_init__(self):
        means = np.asarray(self.means, dtype=np.float64)
        log_stds = np.asarray(self.log_stds, dtype=np.float64)
        if means.shape != log_stds.shape or means.ndim != 1:
            raise ValueError("means and log_stds must be 1-d and the same length")
        if not (np.all(np.isfinite(means)) and np.all(np.isfinite(log_stds))):
            raise ValueError("non-finite Gaussian parameters")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "log_stds", log_stds)

    @property
    def dim(self) -> int:
        return self.means.shape[0]

    @property
    def stds(self) -> np.ndarray:
        return np.exp(self.log_stds)

    def slice(self, start: int, length: int) -> "DiagonalGaussian":
        return DiagonalGaussian(self.means[start : start + length], self.log_stds[start : start + length])


@dataclass(frozen=True)
class MeanVarBlockParams:
    means: np.ndarray
    log_stds: np.ndarray

    def as_gaussian(self) -> DiagonalGaussian:
        return DiagonalGaussian(self.means, self.log_stds)


@dataclass(frozen=True)
class MeanKLBlockParams:
    """Trainable per-weight (tau, quota logit) plus the block's nat budget."""

    taus: np.ndarray
    quota_logits: np.ndarray
    budget_nats: float

    def __post_init__(self):
        taus = np.asarray(self.taus, dtype=np.float64)
        logits = np.asarray(self.quota_logits, dtype=np.float64)
        if taus.shape != logits.shape or taus.ndim != 1:
            raise ValueError("taus and quota_logits must be 1-d and the same length")
        if not self.budget_nats > 0.0:
            raise ValueError("budget_nats must be positive")
        object.__setattr__(self, "taus", taus)
        object.__setattr__(self, "quota_logits", logits)


def gauss_kl_elementwise(q_means, q_log_stds, p_means, p_log_stds) -> np.ndarray:
    """KL(N(q) || N(p)) per dimension, in nats."""
    q_means = np.asarray(q_means, dtype=np.float64)
    q_log_stds = np.asarray(q_log_stds, dtype=np.float64)
    p_means = np.asarray(p_means, dtype=np.float64)
    p_log_stds = np.asarray(p_log_stds, dtype=np.float64)
    var_ratio = np.exp(2.0 * (q_log_stds - p_log_stds))
    shift = (q_means - p_means) ** 2 * np.exp(-2.0 * p_log_stds)
    return (p_log_stds - q_log_stds) + 0.5 * (var_ratio + shift) - 0.5


def gauss_kl(q: Gaussian1D, p: Gaussian1D) -> float:
    return float(gauss_kl_elementwise(q.mean, q.log_std, p.mean, p.log_std))


def block_kl(q: DiagonalGaussian, p: DiagonalGaussian) -> float:
    """Sum of per-dimension KLs (mean-field factorization)."""
    if q.dim != p.dim:
        raise ValueError(f"dimension mismatch: q has {q.dim}, p has {p.dim}")
    return float(np.sum(gauss_kl_elementwise(q.means, q.log_stds, p.means, p.log_stds)))


def quotas_from_logits(quota_logits) -> np.ndarray:
    """Softmax with max subtraction; positive entries summing to 1."""
    logits = np.asarray(quota_logits, dtype=np.float64)
    if logits.size == 0:
        raise ValueError("empty quota logits")
    e = np.exp(logits - logits.max())
    return e / e.sum()


def mean_from_tau(tau, kappa_w, p: Gaussian1D):
    """mu = nu + rho * sqrt(2*kappa_w) * tanh(tau).

    tanh maps into the open interval, so the admissibility constraint
    |mu - nu| < rho*sqrt(2*kappa_w) holds for every finite tau (up to
    float64 tanh saturation at |tau| ~ 19).
    """
    tau = np.asarray(tau, dtype=np.float64)
    kappa_w = np.asarray(kappa_w, dtype=np.float64)
    out = p.mean + p.std * np.sqrt(2.0 * kappa_w) * np.tanh(tau)
    return out if out.ndim else float(out)


def tau_from_mean(mu, kappa_w, p: Gaussian1D):
    """Inverse of mean_from_tau, clamping out-of-range means just inside."""
    mu = np.asarray(mu, dtype=np.float64)
    kappa_w = np.asarray(kappa_w, dtype=np.float64)
    ratio = (mu - p.mean) / (p.std * np.sqrt(2.0 * kappa_w))
    out = np.arctanh(np.clip(ratio, -1.0 + ARTANH_CLAMP, 1.0 - ARTANH_CLAMP))
    return out if out.ndim else float(out)


def variance_ratio(z_sq, kappa_w, refine_iterations: int = DEFAULT_REFINE_ITERATIONS) -> np.ndarray:
    """Solve s - ln(s) = 2*kappa + 1 - z^2 for s = sigma^2/rho^2 in (0, 1].

    s = -W(-exp(z^2 - 2*kappa - 1)) on the principal branch.  The W
    argument is formed in log space and clamped into [-1/e, 0]; tiny
    arguments switch to the series expansion, and the result is floored at
    the argument magnitude (a strict lower bound for the true root).
    """
    z_sq = np.asarray(z_sq, dtype=np.float64)
    kappa_w = np.asarray(kappa_w, dtype=np.float64)
    arg_log = np.minimum(z_sq - 2.0 * kappa_w - 1.0, -1.0)
    a = np.exp(arg_log)
    w = lambert_w(-a, refine_iterations=refine_iterations)
    s = np.maximum(-np.asarray(w), a)
    s_series = a * (1.0 + a * (1.0 + 1.5 * a))
    s = np.where(a < _SERIES_CUTOFF, s_series, s)
    return np.clip(s, 1e-308, 1.0)


def var_from_mean_kl(mu, kappa_w, p: Gaussian1D, refine_iterations: int = DEFAULT_REFINE_ITERATIONS):
    """Variance of the posterior with mean mu and KL budget kappa_w nats.

    Raises ConstraintViolationError (naming the offending index for vector
    input) when |mu - nu| exceeds rho*sqrt(2*kappa_w).
    """
    mu = np.asarray(mu, dtype=np.float64)
    kappa_w = np.asarray(kappa_w, dtype=np.float64)
    if np.any(kappa_w <= 0.0):
        raise ValueError("kappa_w must be positive")
    z = (mu - p.mean) / p.std
    z_sq = z * z
    bad = z_sq > 2.0 * kappa_w * (1.0 + 1e-9)
    if np.any(bad):
        idx = int(np.argmax(np.atleast_1d(bad)))
        raise ConstraintViolationError(
            f"weight {idx}: |mu - nu| = {float(np.atleast_1d(np.abs(mu - p.mean))[idx]):.6g} exceeds "
            f"rho*sqrt(2*kappa) = {float(np.atleast_1d(p.std * np.sqrt(2.0 * kappa_w))[idx]):.6g}"
        )
    out = p.variance * variance_ratio(z_sq, kappa_w, refine_iterations)
    return out if out.ndim else float(out)


def meankl_to_meanvar(
    params: MeanKLBlockParams,
    p: DiagonalGaussian,
    refine_iterations: int = DEFAULT_REFINE_ITERATIONS,
) -> MeanVarBlockParams:
    """Convert one block's (tau, quota) parameters to means and log-stds."""
    if params.taus.shape[0] != p.dim:
        raise ValueError(f"block has {params.taus.shape[0]} weights but p has {p.dim}")
    quotas = quotas_from_logits(params.quota_logits)
    kappa_w = quotas * params.budget_nats
    rho = p.stds
    half_width = rho * np.sqrt(2.0 * kappa_w)
    means = p.means + half_width * np.tanh(params.taus)
    z_sq = 2.0 * kappa_w * np.tanh(params.taus) ** 2
    s = variance_ratio(z_sq, kappa_w, refine_iterations)
    log_stds = p.log_stds + 0.5 * np.log(s)
    return MeanVarBlockParams(means=means, log_stds=log_stds)
