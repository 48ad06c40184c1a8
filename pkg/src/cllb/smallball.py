"""Monte Carlo small-ball probabilities and rate-law fitting.

For the processes here, the probability that the running sup stays inside a
shrinking ball decays like

    -log P( sup_[0,1] |X| <= eps ) ~ c * eps^(-1/theta),

with ``c = kappa^(1/theta) * lambda`` for the heat-equation field and
``c = lambda`` for the unit-scale fractional-Brownian fixture of index theta.
``lambda`` is only known analytically at theta = 1/2 (Brownian motion, where
it equals pi^2/8 and the whole curve has the classical reflection series);
everywhere else it is treated as a measured quantity with error bars.

Estimation is a plain hit fraction of the discrete sup over a uniform grid.
The discrete max understates the continuous sup, so estimates are biased
upward, shrinking as the grid refines (like grid^-theta for Holder-theta
paths); :func:`refinement_report` quantifies the gap between two resolutions
per epsilon so callers can judge whether a fit window is trustworthy.

Fits: the rate constant comes from inverse-variance weighted least squares of
-log P against eps^(-1/theta) through the origin; the rate exponent from a
free log-log fit of -log P against 1/eps. Both carry delta-method standard
errors propagated from the binomial counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .covariance import TimeGrid, build_cov_matrix
from .errors import NumericalError, ParameterError
from .params import DerivedConstants
from .sampler import FbmSpec, build_fbm_cov_matrix, sample_sup_abs

__all__ = [
    "BM_SMALL_BALL_CONSTANT",
    "bm_small_ball_prob",
    "SmallBallCurve",
    "SmallBallFit",
    "estimate_curve_sfhe",
    "estimate_curve_fbm",
    "fit_rate",
    "lambda_from_fit",
    "geometric_epsilons",
    "trim_epsilons",
    "refinement_report",
]

# Brownian motion: lim eps^2 log P(sup|B| <= eps) = -pi^2/8.
BM_SMALL_BALL_CONSTANT = math.pi ** 2 / 8.0

_MIN_COUNT = 10_000
_MIN_GRID_FOR_SMALL_EPS = 256
_SMALL_EPS = 0.2


def bm_small_ball_prob(eps: float, terms: int = 80) -> float:
    """P(sup_[0,1] |B| <= eps) for standard Brownian motion.

    The independent oracle for the Brownian fixture: the reflection series
    (4/pi) sum_k (-1)^k/(2k+1) exp(-(2k+1)^2 pi^2/(8 eps^2)) for small eps,
    and its theta-dual sum_k (-1)^k [Phi((2k+1) eps) - Phi((2k-1) eps)] for
    large eps, where each converges geometrically.
    """
    if eps <= 0.0:
        raise ParameterError(f"eps must be positive, got {eps}")
    if eps <= 1.5:
        acc = 0.0
        for k in range(terms):
            acc += (
                (-1) ** k
                / (2 * k + 1)
                * math.exp(-((2 * k + 1) ** 2) * math.pi ** 2 / (8.0 * eps ** 2))
            )
        return 4.0 / math.pi * acc

    def cdf(x: float) -> float:
        return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))

    acc = 0.0
    for k in range(-terms, terms + 1):
        acc += (-1) ** k * (cdf((2 * k + 1) * eps) - cdf((2 * k - 1) * eps))
    return acc


@dataclass(frozen=True)
class SmallBallCurve:
    """Estimated probabilities over a decreasing epsilon schedule."""

    epsilons: np.ndarray
    probabilities: np.ndarray
    stderrs: np.ndarray
    hits: np.ndarray
    count: int
    grid_size: int
    process: str  # "sfhe" | "fbm"
    seed: int

    @property
    def zero_hit(self) -> np.ndarray:
        """Entries whose ball was never hit at this budget (kept, flagged)."""
        return self.hits == 0


@dataclass(frozen=True)
class SmallBallFit:
    """Fitted rate law: exponent of 1/eps and prefactor of -log P."""

    exponent: float
    constant: float
    stderr_exponent: float
    stderr_constant: float
    warnings: tuple = field(default_factory=tuple)


def _validate_epsilons(epsilons) -> np.ndarray:
    eps = np.ascontiguousarray(epsilons, dtype=np.float64)
    if eps.ndim != 1 or eps.size < 1:
        raise ParameterError("need at least one epsilon")
    if np.any(eps <= 0.0):
        raise ParameterError("epsilons must be positive")
    if eps.size > 1 and not np.all(np.diff(eps) < 0.0):
        raise ParameterError("epsilons must be strictly decreasing")
    return eps


def _estimate(cov, process: str, eps: np.ndarray, count: int, seed: int, workers: int) -> SmallBallCurve:
    sups = sample_sup_abs(cov, count, seed, workers=workers)
    hits = np.array([(sups <= e).sum() for e in eps], dtype=np.int64)
    if not hits.any():
        raise NumericalError(
            "no path stayed inside any ball: every epsilon is too small for this "
            f"budget (count={count}); increase epsilon or count"
        )
    probs = hits / count
    stderrs = np.sqrt(probs * (1.0 - probs) / count)
    return SmallBallCurve(
        epsilons=eps,
        probabilities=probs,
        stderrs=stderrs,
        hits=hits,
        count=count,
        grid_size=len(cov),
        process=process,
        seed=seed,
    )


def _check_budget(eps: np.ndarray, count: int, grid_size: int) -> None:
    if count < _MIN_COUNT:
        raise ParameterError(f"count must be >= {_MIN_COUNT}, got {count}")
    if grid_size < 2:
        raise ParameterError(f"grid_size must be >= 2, got {grid_size}")
    if np.any(eps < _SMALL_EPS) and grid_size < _MIN_GRID_FOR_SMALL_EPS:
        raise ParameterError(
            f"grid_size >= {_MIN_GRID_FOR_SMALL_EPS} required when any epsilon is "
            f"below {_SMALL_EPS} (discretization guard), got {grid_size}"
        )


def _unit_grid(grid_size: int) -> TimeGrid:
    # uniform spacing 1/m on (0, 1]; the origin is excluded because the
    # process vanishes there almost surely and would only degenerate the
    # factorization
    return TimeGrid(np.arange(1, grid_size + 1) / grid_size)


def estimate_curve_sfhe(
    consts: DerivedConstants,
    epsilons,
    count: int,
    grid_size: int,
    seed: int,
    workers: int = 0,
) -> SmallBallCurve:
    """Small-ball curve of the heat-equation field on [0, 1]."""
    eps = _validate_epsilons(epsilons)
    _check_budget(eps, count, grid_size)
    cov = build_cov_matrix(_unit_grid(grid_size), consts, check_psd=False)
    return _estimate(cov, "sfhe", eps, count, seed, workers)


def estimate_curve_fbm(
    hurst_index: float,
    epsilons,
    count: int,
    grid_size: int,
    seed: int,
    workers: int = 0,
) -> SmallBallCurve:
    """Small-ball curve of the fractional-Brownian fixture on [0, 1]."""
    eps = _validate_epsilons(epsilons)
    _check_budget(eps, count, grid_size)
    cov = build_fbm_cov_matrix(FbmSpec(hurst_index=hurst_index, grid=_unit_grid(grid_size)))
    return _estimate(cov, "fbm", eps, count, seed, workers)


def fit_rate(curve: SmallBallCurve, theta: float) -> SmallBallFit:
    """Fit the rate law on the usable part of a curve.

    Usable points have 0 < hits < count (the log transforms degenerate at
    the endpoints); at least 4 are required. ``constant`` is the weighted
    through-origin slope of -log P against eps^(-1/theta); ``exponent`` the
    free log-log slope against 1/eps, expected near 1/theta. A warning is
    attached when -log P decreases between consecutive usable points by more
    than twice the combined standard error.
    """
    if not 0.0 < theta < 1.0:
        raise ParameterError(f"theta must lie in (0, 1), got {theta}")
    usable = (curve.hits > 0) & (curve.hits < curve.count)
    n_usable = int(usable.sum())
    if n_usable < 4:
        raise NumericalError(
            f"rate fit needs >= 4 usable curve points (0 < hits < count), got {n_usable}"
        )
    eps = curve.epsilons[usable]
    p = curve.probabilities[usable]
    n = curve.count

    y = -np.log(p)
    var_y = (1.0 - p) / (n * p)  # delta method on log P

    warnings = []
    drops = y[1:] - y[:-1]
    tol = 2.0 * np.sqrt(var_y[1:] + var_y[:-1])
    for k in np.nonzero(drops < -tol)[0]:
        warnings.append(
            f"-log P not monotone beyond noise between eps={eps[k]:.6g} and "
            f"eps={eps[k + 1]:.6g} ({drops[k]:.3g} vs -{tol[k]:.3g})"
        )

    # constrained: y = constant * x through the origin
    x = eps ** (-1.0 / theta)
    w = 1.0 / var_y
    sxx = float(np.sum(w * x * x))
    constant = float(np.sum(w * x * y) / sxx)
    stderr_constant = 1.0 / math.sqrt(sxx)

    # free: log y = exponent * log(1/eps) + intercept
    ly = np.log(y)
    var_ly = var_y / (y * y)
    w2 = 1.0 / var_ly
    lx = np.log(1.0 / eps)
    design = np.column_stack([lx, np.ones_like(lx)])
    m = design.T @ (design * w2[:, None])
    rhs = design.T @ (w2 * ly)
    coef = np.linalg.solve(m, rhs)
    cov_coef = np.linalg.inv(m)
    exponent = float(coef[0])
    stderr_exponent = math.sqrt(cov_coef[0, 0])

    return SmallBallFit(
        exponent=exponent,
        constant=constant,
        stderr_exponent=stderr_exponent,
        stderr_constant=stderr_constant,
        warnings=tuple(warnings),
    )


def lambda_from_fit(fit: SmallBallFit, consts: DerivedConstants) -> tuple:
    """Measured small-ball constant of the heat-equation field.

    The fitted prefactor estimates kappa^(1/theta) * lambda; divide it out.
    Returns (lambda_hat, stderr).
    """
    scale = consts.kappa ** (1.0 / consts.theta)
    return fit.constant / scale, fit.stderr_constant / scale


def geometric_epsilons(start: float = 0.5, ratio: float = 0.75, num: int = 8) -> np.ndarray:
    """Default geometric schedule eps_k = start * ratio**k."""
    if start <= 0.0 or not 0.0 < ratio < 1.0 or num < 1:
        raise ParameterError("schedule needs start > 0, 0 < ratio < 1, num >= 1")
    return start * ratio ** np.arange(num)


def trim_epsilons(epsilons, probe_probs, count: int, min_expected_hits: float = 20.0) -> np.ndarray:
    """Drop schedule entries whose expected hit count falls below threshold.

    ``probe_probs`` are rough probability estimates (pilot run or analytic
    oracle) aligned with ``epsilons``.
    """
    eps = _validate_epsilons(epsilons)
    probs = np.ascontiguousarray(probe_probs, dtype=np.float64)
    keep = probs * count >= min_expected_hits
    if not keep.any():
        raise NumericalError(
            f"every epsilon falls under {min_expected_hits} expected hits at count={count}"
        )
    return eps[keep]


def refinement_report(fine: SmallBallCurve, coarse: SmallBallCurve) -> list:
    """Per-epsilon discretization gap between two grid resolutions.

    Returns a list of dicts with the coarse/fine estimates, their gap
    (coarse - fine; positive when refinement lowers the estimate, as the
    sup-max bias predicts) and the gap's z-score against the combined
    standard error. Large z means the grids do not yet agree statistically
    and rate fits at this resolution inherit the bias.
    """
    if fine.epsilons.shape != coarse.epsilons.shape or not np.allclose(
        fine.epsilons, coarse.epsilons
    ):
        raise ParameterError("refinement report needs matching epsilon schedules")
    rows = []
    for k, eps in enumerate(fine.epsilons):
        gap = coarse.probabilities[k] - fine.probabilities[k]
        se = math.hypot(coarse.stderrs[k], fine.stderrs[k])
        rows.append(
            {
                "epsilon": float(eps),
                "coarse": float(coarse.probabilities[k]),
                "fine": float(fine.probabilities[k]),
                "gap": float(gap),
                "z": float(gap / se) if se > 0.0 else math.inf if gap != 0.0 else 0.0,
            }
        )
    return rows
