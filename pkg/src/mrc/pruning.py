"""Zero-pruning strategies for compressed weight samples.

Three selection rules: uniformly random, smallest absolute value, and
smallest posterior KL divergence to a point mass at zero (equivalently,
highest posterior density at zero).  Each strategy induces a fixed total
order over coordinates, so pruned sets are nested across fractions and a
sweep traces one curve per strategy.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .gaussians import DiagonalGaussian
from .nn import ModelSpec
from .pipeline import evaluate

RANDOM_UNIFORM = "random_uniform"
ABSOLUTE_VALUE = "absolute_value"
KL_DIVERGENCE = "kl_divergence"

STRATEGIES = (RANDOM_UNIFORM, ABSOLUTE_VALUE, KL_DIVERGENCE)


@dataclass(frozen=True)
class PruneStrategy:
    kind: str
    seed: int = 0  # used by random_uniform only

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ValueError(f"unknown pruning strategy {self.kind!r}")


@dataclass(frozen=True)
class PruneCurve:
    strategy: str
    fractions: np.ndarray
    accuracies: np.ndarray


def score_kl_to_delta(mu, sigma):
    """log(sigma) + mu^2 / (2 sigma^2); lower means closer to a zero point mass."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0.0):
        raise ValueError("sigma must be positive")
    out = np.log(sigma) + mu * mu / (2.0 * sigma * sigma)
    return out if out.ndim else float(out)


def prune_order(sample: np.ndarray, posterior: DiagonalGaussian | None, strategy: PruneStrategy) -> np.ndarray:
    """Coordinate order in which the strategy zeroes weights (ties by index)."""
    n = sample.shape[0]
    if strategy.kind == RANDOM_UNIFORM:
        return np.random.default_rng(strategy.seed).permutation(n)
    if strategy.kind == ABSOLUTE_VALUE:
        keys = np.abs(sample)
    else:
        if posterior is None:
            raise ValueError("kl_divergence pruning requires the posterior")
        if posterior.dim != n:
            raise ValueError("posterior dimension does not match sample")
        keys = score_kl_to_delta(posterior.means, posterior.stds)
    # lexsort: primary key ascending, index breaks ties deterministically
    return np.lexsort((np.arange(n), keys))


def prune(
    sample: np.ndarray,
    posterior: DiagonalGaussian | None,
    strategy: PruneStrategy,
    fraction: float,
) -> np.ndarray:
    """Return a copy with floor(fraction * n) coordinates set to zero."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction {fraction} outside [0, 1]")
    sample = np.asarray(sample, dtype=np.float64)
    count = int(np.floor(fraction * sample.shape[0]))
    out = sample.copy()
    if count:
        out[prune_order(sample, posterior, strategy)[:count]] = 0.0
    return out


def prune_sweep(
    sample: np.ndarray,
    posterior: DiagonalGaussian | None,
    strategies: list[PruneStrategy],
    fractions: np.ndarray,
    spec: ModelSpec,
    data: Dataset,
    prunable: np.ndarray | None = None,
    csv_path=None,
    seed: int = 0,
) -> dict[str, PruneCurve]:
    """Accuracy after pruning, per strategy and fraction.

    `prunable` restricts pruning to a boolean mask over the flat vector
    (weight matrices only, by default); the fraction applies to the
    prunable coordinates.  Fraction steps extend the pruned set (nested).
    """
    fractions = np.asarray(fractions, dtype=np.float64)
    if np.any(np.diff(fractions) <= 0.0):
        raise ValueError("fractions must be strictly increasing")
    if np.any((fractions < 0.0) | (fractions > 1.0)):
        raise ValueError("fractions must lie in [0, 1]")
    sample = np.asarray(sample, dtype=np.float64)
    if prunable is None:
        prunable = spec.weight_matrix_mask()
    idx = np.flatnonzero(prunable)
    sub_sample = sample[idx]
    sub_posterior = None
    if posterior is not None:
        sub_posterior = DiagonalGaussian(posterior.means[idx], posterior.log_stds[idx])

    curves: dict[str, PruneCurve] = {}
    rows = []
    for strategy in strategies:
        posterior_arg = sub_posterior if strategy.kind == KL_DIVERGENCE else None
        if strategy.kind == KL_DIVERGENCE and sub_posterior is None:
            raise ValueError("kl_divergence pruning requires the posterior")
        order = prune_order(sub_sample, posterior_arg, strategy)
        accs = np.empty(fractions.shape)
        for i, f in enumerate(fractions):
            pruned_sub = sub_sample.copy()
            count = int(np.floor(f * sub_sample.shape[0]))
            if count:
                pruned_sub[order[:count]] = 0.0
            full = sample.copy()
            full[idx] = pruned_sub
            accs[i], _ = evaluate(spec, full, data)
            rows.append((strategy.kind, float(f), float(accs[i]), seed))
        curves[strategy.kind] = PruneCurve(strategy.kind, fractions.copy(), accs)

    if csv_path is not None:
        with open(csv_path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["strategy", "fraction", "accuracy", "seed"])
            for row in rows:
                writer.writerow([row[0], repr(row[1]), repr(row[2]), row[3]])
    return curves


def default_fractions(step: float = 0.05) -> np.ndarray:
    return np.round(np.arange(0.0, 1.0 + step / 2, step), 10)
