"""Desk-scale localization harness for the Chung-LIL statistic.

The limit statement under study normalizes the running sup of the field by
``psi(t) = (t / loglog(1/t))^theta`` along the doubly-exponential times
``t_n = exp(-n^(1+beta))`` and predicts the liminf value ``kappa*lambda^theta``.
At double precision the sequence is feasible only up to roughly n = 26 (for
beta = 1), so almost-sure asymptotics are replaced by finite-n trend and
bracket statistics:

* slab fields ``u_n`` (noise restricted to [t_{n+1}, t_n)) are sampled
  independently across n, exactly as their independence is used in the
  localization argument;
* the early-noise remainder ``Y_n = u - u_n`` is by default drawn as an
  independent Gaussian with the exact pointwise variance (its temporal
  coupling does not enter the sup magnitudes or the variance reconstruction
  this harness validates; full joint sampling is available for audit runs);
* per realization and per n the harness records sup|u_n|/psi(t_n),
  sup|Y_n|/psi(t_n), sup|u|/psi(t_n) and their prefix minima over n, the
  finite-n proxy of the liminf.

Note ``t_1 = 1/e`` for every beta, where ``loglog(1/t)`` vanishes and psi is
undefined (infinite normalization); statistics therefore start at n >= 2,
and n = 1 events are reported with probability zero.

Slab covariances are sampled through their correlation form (diagonal
rescaling before factorization): slab grids span up to ~23 decades and the
raw matrices are too ill-scaled for a reliable Cholesky, while the
correlation matrix is benign. The path law is unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .covariance import CovMatrix, TimeGrid, build_cov_matrix
from .errors import ParameterError
from .params import DerivedConstants, ModelParams, psi, t_seq, validate
from .sampler import _path_normals, sample

__all__ = [
    "Slab",
    "LocalizationPlan",
    "build_plan",
    "SlabBlock",
    "BlockEnsembles",
    "simulate_blocks",
    "ChungPrediction",
    "LilStatistics",
    "compute_statistics",
    "LemmaBoundsReport",
    "check_lemma_bounds",
]

# t_{n_max} must stay a normal double (exponent < 690) and t_{n_max + 1},
# the last slab's left edge, must stay nonzero (exponent < 745).
_MAX_EXPONENT = 690.0
_MAX_EDGE_EXPONENT = 745.0
_MIN_SLAB_POINTS = 128
_EARLY_WINDOW_LOG_SPAN = 40.0


@dataclass(frozen=True)
class Slab:
    """One localization slab [t_{n+1}, t_n] with its sampling grid."""

    n: int
    t_lo: float
    t_hi: float
    grid: TimeGrid


@dataclass(frozen=True)
class LocalizationPlan:
    beta: float
    n_min: int
    n_max: int
    requested_n_max: int
    slabs: tuple

    @property
    def clamped(self) -> bool:
        return self.n_max < self.requested_n_max


def _feasible_n_max(beta: float) -> int:
    n = 1
    while (n + 1.0) ** (1.0 + beta) < _MAX_EXPONENT and (n + 2.0) ** (1.0 + beta) < _MAX_EDGE_EXPONENT:
        n += 1
    return n


def build_plan(
    params: ModelParams,
    n_min: int = 2,
    n_max: int = 26,
    grid_points: int = 160,
) -> LocalizationPlan:
    """Construct the slab sequence with geometric per-slab grids.

    ``n_max`` is clamped to the double-precision-feasible range (26 for
    beta = 1); consecutive slab grids share the boundary time exactly.
    """
    validate(params)
    if not 1 <= n_min < n_max:
        raise ParameterError(f"need 1 <= n_min < n_max, got n_min={n_min}, n_max={n_max}")
    if grid_points < _MIN_SLAB_POINTS:
        raise ParameterError(f"slab grids need >= {_MIN_SLAB_POINTS} points, got {grid_points}")
    beta = params.beta
    feasible = _feasible_n_max(beta)
    if n_min > feasible:
        raise ParameterError(
            f"no feasible slabs: n_min={n_min} exceeds the double-precision limit {feasible}"
        )
    effective = min(n_max, feasible)
    slabs = []
    for n in range(n_min, effective + 1):
        t_lo, t_hi = t_seq(n + 1, beta), t_seq(n, beta)
        grid = TimeGrid.geometric(t_lo, t_hi, grid_points)
        slabs.append(Slab(n=n, t_lo=t_lo, t_hi=t_hi, grid=grid))
    return LocalizationPlan(
        beta=beta, n_min=n_min, n_max=effective, requested_n_max=n_max, slabs=tuple(slabs)
    )


def _subseed(seed: int, *tags: int) -> int:
    ss = np.random.SeedSequence(entropy=[int(seed), *map(int, tags)])
    return int(ss.generate_state(1, np.uint64)[0])


def _sample_correlation_scaled(cov: CovMatrix, count: int, seed: int, workers: int = 0):
    """Sample through the correlation form: chol(D^-1 A D^-1), paths scaled by D."""
    d = np.sqrt(np.diag(cov.entries))
    if np.any(d <= 0.0) or not np.isfinite(d).all():
        raise ParameterError("correlation-scaled sampling needs strictly positive variances")
    corr = cov.entries / d[:, None] / d[None, :]
    corr_cov = CovMatrix(
        grid=cov.grid, entries=corr, provenance=cov.provenance, slab_start=cov.slab_start
    )
    ens = sample(corr_cov, count, seed, workers=workers)
    return ens.paths * d[None, :], ens.jitter


@dataclass(frozen=True)
class SlabBlock:
    """Sampled fields on one slab: paths are (count x grid-size)."""

    n: int
    grid: TimeGrid
    un_paths: np.ndarray
    y_paths: Optional[np.ndarray]
    jitter: float


@dataclass(frozen=True)
class BlockEnsembles:
    plan: LocalizationPlan
    count: int
    seed: int
    joint_y: bool
    blocks: tuple


def _yn_std_profile(times: np.ndarray, slab_start: float, consts: DerivedConstants) -> np.ndarray:
    tt = consts.two_theta
    var = consts.c21 * (times ** tt - (times - slab_start) ** tt)
    return np.sqrt(np.maximum(var, 0.0))


def simulate_blocks(
    plan: LocalizationPlan,
    consts: DerivedConstants,
    count: int,
    seed: int,
    include_y: bool = True,
    joint_y: bool = False,
    workers: int = 0,
) -> BlockEnsembles:
    """Sample every slab field (and its remainder) independently across n.

    The slab field vanishes at the left edge ``t_{n+1}`` almost surely, so
    that grid point carries exact zeros and the factorization runs on the
    remaining points. The remainder is drawn with exact pointwise standard
    deviations (default) or jointly from its full covariance (``joint_y``).
    """
    if count < 1:
        raise ParameterError(f"count must be >= 1, got {count}")
    blocks = []
    for slab in plan.slabs:
        g = slab.grid.points
        tail = TimeGrid(g[1:])
        cov_un = build_cov_matrix(tail, consts, slab_start=slab.t_lo, check_psd=False)
        paths_tail, jitter = _sample_correlation_scaled(
            cov_un, count, _subseed(seed, slab.n, 0), workers=workers
        )
        un = np.zeros((count, g.size))
        un[:, 1:] = paths_tail

        y = None
        if include_y:
            y_seed = _subseed(seed, slab.n, 1)
            if joint_y:
                full = build_cov_matrix(slab.grid, consts, check_psd=False)
                restricted = build_cov_matrix(
                    slab.grid, consts, slab_start=slab.t_lo, check_psd=False
                )
                y_cov = CovMatrix(
                    grid=slab.grid,
                    entries=full.entries - restricted.entries,
                    provenance="closed-form",
                    slab_start=slab.t_lo,
                )
                y, y_jitter = _sample_correlation_scaled(y_cov, count, y_seed, workers=workers)
                jitter = max(jitter, y_jitter)
            else:
                sd = _yn_std_profile(g, slab.t_lo, consts)
                y = _path_normals(y_seed, 0, count, g.size) * sd[None, :]
        blocks.append(
            SlabBlock(n=slab.n, grid=slab.grid, un_paths=un, y_paths=y, jitter=jitter)
        )
    return BlockEnsembles(plan=plan, count=count, seed=seed, joint_y=joint_y, blocks=tuple(blocks))


@dataclass(frozen=True)
class ChungPrediction:
    """Predicted liminf value kappa * lambda^theta with propagated error."""

    value: float
    stderr: float


@dataclass(frozen=True)
class LilStatistics:
    """Per-realization, per-n normalized sups and their prefix minima.

    Arrays are (count x number of slabs), ordered by ``ns``.
    """

    ns: np.ndarray
    sup_u_over_psi: np.ndarray
    sup_un_over_psi: np.ndarray
    sup_yn_over_psi: np.ndarray
    running_min_un: np.ndarray
    running_min_u: np.ndarray
    predicted: ChungPrediction


def compute_statistics(
    blocks: BlockEnsembles,
    consts: DerivedConstants,
    lambda_hat: float,
    lambda_stderr: float = 0.0,
) -> LilStatistics:
    """Normalized sup statistics, prefix minima and the predicted constant.

    Requires blocks with remainders (``include_y=True``) and slabs starting
    at n >= 2 (psi is undefined at t_1 = 1/e).
    """
    plan = blocks.plan
    if plan.n_min < 2:
        raise ParameterError(
            "statistics need n_min >= 2: t_1 = 1/e for every beta and the "
            "psi normalization is undefined there"
        )
    if lambda_hat <= 0.0:
        raise ParameterError(f"lambda_hat must be positive, got {lambda_hat}")

    k = len(blocks.blocks)
    count = blocks.count
    sup_u = np.empty((count, k))
    sup_un = np.empty((count, k))
    sup_yn = np.empty((count, k))
    ns = np.empty(k, dtype=np.int64)
    for j, block in enumerate(blocks.blocks):
        if block.y_paths is None:
            raise ParameterError("statistics need blocks simulated with include_y=True")
        psi_n = psi(t_seq(block.n, plan.beta), consts.theta)
        ns[j] = block.n
        sup_un[:, j] = _kernels.row_max_abs(block.un_paths) / psi_n
        sup_yn[:, j] = _kernels.row_max_abs(block.y_paths) / psi_n
        sup_u[:, j] = _kernels.row_max_abs(block.un_paths + block.y_paths) / psi_n

    theta = consts.theta
    value = consts.kappa * lambda_hat ** theta
    stderr = consts.kappa * theta * lambda_hat ** (theta - 1.0) * lambda_stderr
    return LilStatistics(
        ns=ns,
        sup_u_over_psi=sup_u,
        sup_un_over_psi=sup_un,
        sup_yn_over_psi=sup_yn,
        running_min_un=np.minimum.accumulate(sup_un, axis=1),
        running_min_u=np.minimum.accumulate(sup_u, axis=1),
        predicted=ChungPrediction(value=value, stderr=stderr),
    )


@dataclass(frozen=True)
class LemmaBoundsReport:
    """Diagnostic frequencies against the localization lemma shapes.

    ``exceed_rows``: per n, empirical frequencies of the early-window
    exceedance sup_[0, t_{n+1}] |u| >= delta psi(t_n) and of the remainder
    exceedance sup |Y_n| >= delta psi(t_n), with the doubly-exponential bound
    shape exp(-exp(2 theta (1+beta) n^beta) / (log n)^(2 theta)) evaluated
    with unit constants (report-only).

    ``smallball_rows``: per n, estimates of P(sup |u_n| <= gamma psi(t_n))
    at gamma = 2 kappa lambda^theta (slope target
    -lambda (kappa/gamma)^(1/theta) (1+beta)) and at
    gamma* = kappa (1+2 beta)^theta lambda^theta, whose probabilities decay
    like n^(-(1+beta)/(1+2beta)) and therefore have divergent partial sums.
    """

    delta: float
    gamma: float
    gamma_star: float
    exceed_rows: tuple
    smallball_rows: tuple
    slope: float
    slope_predicted: float
    slope_star: float
    slope_star_predicted: float
    partial_sums_star: np.ndarray


def _psi_or_inf(t: float, theta: float) -> float:
    if t >= 1.0 / math.e:
        return math.inf
    return psi(t, theta)


def _freq_sup_exceeds(paths: np.ndarray, threshold: float) -> float:
    if math.isinf(threshold):
        return 0.0
    return float((_kernels.row_max_abs(paths) >= threshold).mean())


def check_lemma_bounds(
    plan: LocalizationPlan,
    consts: DerivedConstants,
    lambda_hat: float,
    count: int,
    seed: int,
    delta: float = 1.0,
    exceed_ns: tuple = (1, 2, 3, 4),
    early_grid_points: int = 128,
    workers: int = 0,
) -> LemmaBoundsReport:
    """Empirical check of the lemma-level probability shapes (diagnostic).

    Exceedance events are evaluated for ``exceed_ns`` (probabilities are
    Monte-Carlo visible only for small n); the slab small-ball probabilities
    and their log-log slopes over n use every slab of ``plan``.
    """
    if lambda_hat <= 0.0:
        raise ParameterError(f"lambda_hat must be positive, got {lambda_hat}")
    beta, theta = plan.beta, consts.theta
    gamma = 2.0 * consts.kappa * lambda_hat ** theta
    gamma_star = consts.kappa * (1.0 + 2.0 * beta) ** theta * lambda_hat ** theta

    exceed_rows = []
    for n in exceed_ns:
        t_np1 = t_seq(n + 1, beta)
        psi_n = _psi_or_inf(t_seq(n, beta), theta)
        threshold = delta * psi_n
        if math.isinf(threshold):
            freq_u = freq_y = 0.0
        else:
            # early window [t_{n+1} e^-span, t_{n+1}]: deeper times contribute
            # sup mass suppressed by e^(-span*theta), negligible at span 40
            lo = t_np1 * math.exp(-_EARLY_WINDOW_LOG_SPAN)
            grid = TimeGrid.geometric(lo, t_np1, early_grid_points)
            cov = build_cov_matrix(grid, consts, check_psd=False)
            u_paths, _ = _sample_correlation_scaled(
                cov, count, _subseed(seed, n, 2), workers=workers
            )
            freq_u = _freq_sup_exceeds(u_paths, threshold)

            slab_grid = TimeGrid.geometric(t_np1, t_seq(n, beta), early_grid_points)
            sd = _yn_std_profile(slab_grid.points, t_np1, consts)
            y_paths = _path_normals(_subseed(seed, n, 3), 0, count, slab_grid.points.size) * sd
            freq_y = _freq_sup_exceeds(y_paths, threshold)
        if n >= 2:
            bound = math.exp(
                -math.exp(2.0 * theta * (1.0 + beta) * n ** beta) / math.log(n) ** (2.0 * theta)
            )
        else:
            bound = None
        exceed_rows.append(
            {"n": n, "freq_u_early": freq_u, "freq_yn": freq_y, "bound_shape": bound}
        )

    blocks = simulate_blocks(
        plan, consts, count, _subseed(seed, 0, 4), include_y=False, workers=workers
    )
    smallball_rows = []
    for block in blocks.blocks:
        psi_n = _psi_or_inf(t_seq(block.n, beta), theta)
        sups = _kernels.row_max_abs(block.un_paths)
        p_gamma = float((sups <= gamma * psi_n).mean())
        p_star = float((sups <= gamma_star * psi_n).mean())
        smallball_rows.append(
            {
                "n": block.n,
                "p_gamma": p_gamma,
                "p_gamma_star": p_star,
                "se_gamma": math.sqrt(max(p_gamma * (1 - p_gamma), 0.0) / count),
                "se_gamma_star": math.sqrt(max(p_star * (1 - p_star), 0.0) / count),
            }
        )

    def _loglog_slope(key: str) -> float:
        pts = [(r["n"], r[key]) for r in smallball_rows if r["n"] >= 2 and 0.0 < r[key] < 1.0]
        if len(pts) < 2:
            return math.nan
        lx = np.log([p[0] for p in pts])
        ly = np.log([p[1] for p in pts])
        design = np.column_stack([lx, np.ones_like(lx)])
        coef, *_ = np.linalg.lstsq(design, ly, rcond=None)
        return float(coef[0])

    inv_theta = 1.0 / theta
    slope_predicted = -lambda_hat * (consts.kappa / gamma) ** inv_theta * (1.0 + beta)
    slope_star_predicted = -(1.0 + beta) / (1.0 + 2.0 * beta)
    partial = np.cumsum([r["p_gamma_star"] for r in smallball_rows])
    return LemmaBoundsReport(
        delta=delta,
        gamma=gamma,
        gamma_star=gamma_star,
        exceed_rows=tuple(exceed_rows),
        smallball_rows=tuple(smallball_rows),
        slope=_loglog_slope("p_gamma"),
        slope_predicted=slope_predicted,
        slope_star=_loglog_slope("p_gamma_star"),
        slope_star_predicted=slope_star_predicted,
        partial_sums_star=partial,
    )
