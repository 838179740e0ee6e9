"""Principal branch of the Lambert W function on [-1/e, 0].

Everything downstream only ever evaluates W at arguments of the form
-exp(z^2 - 2*kappa - 1) with z^2 < 2*kappa, which lie in (-1/e, 0).  The
implementation is a [3/2] Pade approximant in t = sqrt(2*e*x + 2) (the
branch-point variable), optionally polished with Halley iterations on
f(w) = w*exp(w) - x.  A slow bisection solver is provided as an
independent oracle for tests.
"""

from __future__ import annotations

import numpy as np

BRANCH_POINT = -1.0 / np.e

# Raw Pade leaves ~2.7e-4 absolute error near x = 0, which is too coarse
# for the variance-from-KL identity; two Halley steps drive the root to
# float precision over the whole interval.
DEFAULT_REFINE_ITERATIONS = 2

_DOMAIN_TOL = 1e-12


class LambertWDomainError(ValueError):
    """Argument outside [-1/e, 0]."""


class LambertWDivergenceError(ArithmeticError):
    """Halley refinement produced a non-finite iterate."""


def _check_domain(x: np.ndarray) -> None:
    if np.any(x < BRANCH_POINT - _DOMAIN_TOL) or np.any(x > 0.0):
        bad = x[(x < BRANCH_POINT - _DOMAIN_TOL) | (x > 0.0)]
        raise LambertWDomainError(
            f"lambert_w argument {float(np.ravel(bad)[0])!r} outside [-1/e, 0]"
        )


def lambert_w_pade(x):
    """[3/2] Pade approximant of W in t = sqrt(2*e*x + 2).

    Absolute error <= 5e-4 on [-1/e, 0]; exact at the branch point and
    ~2.7e-4 at x = 0.  Scalar or ndarray input.
    """
    x_arr = np.asarray(x, dtype=np.float64)
    _check_domain(x_arr)
    # Inputs within tolerance below the branch point clamp to it exactly,
    # so the sqrt never sees a negative argument.
    t = np.sqrt(np.maximum(2.0 * np.e * x_arr + 2.0, 0.0))
    num = t * (t * (t * (13.0 / 720.0) + 257.0 / 720.0) + 1.0 / 6.0) - 1.0
    den = t * (t * (103.0 / 720.0) + 5.0 / 6.0) + 1.0
    w = num / den
    return w if w.ndim else float(w)


def lambert_w_refine(x, w0, iterations: int = 1):
    """Halley iterations for f(w) = w*exp(w) - x starting from w0.

    With iterations = 0 this returns w0 unchanged.  Each step is cubically
    convergent; the update is suppressed where the Halley denominator
    vanishes (branch point: f and f' both -> 0).
    """
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    x_arr = np.asarray(x, dtype=np.float64)
    w = np.asarray(w0, dtype=np.float64).copy()
    for _ in range(iterations):
        ew = np.exp(w)
        f = w * ew - x_arr
        fp = ew * (1.0 + w)
        fpp = ew * (2.0 + w)
        den = 2.0 * fp * fp - f * fpp
        step = np.where(np.abs(den) < 1e-300, 0.0, 2.0 * f * fp / np.where(den == 0.0, 1.0, den))
        w = w - step
        if not np.all(np.isfinite(w)):
            raise LambertWDivergenceError("Halley iteration diverged")
    return w if w.ndim else float(w)


def lambert_w(x, refine_iterations: int = DEFAULT_REFINE_ITERATIONS):
    """W on [-1/e, 0]: Pade start plus `refine_iterations` Halley steps.

    refine_iterations=0 selects the raw Pade approximant.
    """
    w = lambert_w_pade(x)
    if refine_iterations:
        w = lambert_w_refine(x, w, refine_iterations)
    return w


def lambert_w_oracle(x):
    """Bisection solver for w*exp(w) = x on [-1, 0], to width ~1e-18.

    Independent of the Pade/Halley path; w*exp(w) is strictly increasing
    on [-1, 0], so the root is unique.  Test oracle only.
    """
    x_arr = np.asarray(x, dtype=np.float64)
    _check_domain(x_arr)
    lo = np.full(x_arr.shape, -1.0)
    hi = np.zeros(x_arr.shape)
    for _ in range(64):
        mid = 0.5 * (lo + hi)
        below = mid * np.exp(mid) - x_arr < 0.0
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    w = 0.5 * (lo + hi)
    return w if w.ndim else float(w)


def lambert_w_derivative(x, w):
    """dW/dx = W / (x * (1 + W)), with the x -> 0 limit of 1.

    `w` must be W(x).  The denominator magnitude is floored so the
    derivative stays finite at the branch point (where it genuinely
    diverges); callers that reach it through tanh saturation multiply by a
    zero upstream factor, which must not turn into NaN.
    """
    x_arr = np.asarray(x, dtype=np.float64)
    w_arr = np.asarray(w, dtype=np.float64)
    den = x_arr * (1.0 + w_arr)
    den = np.where(np.abs(den) < 1e-12, np.copysign(1e-12, np.where(den == 0.0, 1.0, den)), den)
    d = np.where(np.abs(x_arr) < 1e-12, 1.0, w_arr / den)
    return d if d.ndim else float(d)
