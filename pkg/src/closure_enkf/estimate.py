"""Likelihood, error metrics and grid search over the filter hyperparameters."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import ClosureEnKFError, ConfigurationError, DimensionError, UndefinedMetricError


@dataclass(frozen=True)
class HyperParams:
    """Shared Brownian scale, number of basis functions and ensemble size."""

    sigma: float
    num_bases: int
    n_ens: int

    def __post_init__(self):
        if not self.sigma > 0:
            raise ConfigurationError("sigma must be positive")
        if self.num_bases < 1:
            raise ConfigurationError("num_bases must be at least 1")
        if self.n_ens < 2:
            raise ConfigurationError("n_ens must be at least 2")


def gaussian_nll_term(innovation, forecast_cov, gamma: float, paper_literal: bool = False) -> float:
    """``log det S + d^T S^{-1} d`` with ``S = forecast_cov + gamma I``.

    With ``paper_literal`` the term is ``det(C) + d^T C^{-1} d`` using the bare
    forecast covariance ``C``. Singular systems give ``+inf``.
    """
    d = np.asarray(innovation, dtype=float)
    C = np.asarray(forecast_cov, dtype=float)
    if C.shape != (d.size, d.size):
        raise DimensionError(f"covariance shape {C.shape} does not match innovation length {d.size}")
    if not (np.all(np.isfinite(C)) and np.all(np.isfinite(d))):
        return math.inf
    if paper_literal:
        try:
            det = float(np.linalg.det(C))
            quad = float(d @ np.linalg.solve(C, d))
        except np.linalg.LinAlgError:
            return math.inf
        value = det + quad
        return value if np.isfinite(value) else math.inf
    S = C + gamma * np.eye(d.size)
    try:
        L = scipy.linalg.cholesky(S, lower=True)
    except np.linalg.LinAlgError:
        return math.inf
    w = scipy.linalg.solve_triangular(L, d, lower=True)
    return float(2.0 * np.sum(np.log(np.diag(L))) + w @ w)


def negative_log_marginal_likelihood(result, gamma: float, paper_literal: bool = False) -> float:
    """Approximate negative log marginal likelihood of the data (constants dropped).

    Sums :func:`gaussian_nll_term` over analysis times using the forecast
    innovations and observation-space forecast covariances held by ``result``.
    If those covariances were not stored, the per-time terms recorded during
    filtering are used; that requires ``gamma`` to match the filtering run.
    """
    covs = getattr(result, "forecast_obs_cov", None)
    if covs is None:
        if paper_literal or not math.isclose(gamma, result.gamma):
            raise ConfigurationError("forecast covariances were not stored; cannot re-evaluate the likelihood")
        return float(np.sum(result.nll_terms))
    if len(covs) != len(result.innovations):
        raise DimensionError("one forecast covariance is needed per analysis time")
    total = 0.0
    for d, C in zip(result.innovations, covs):
        total += gaussian_nll_term(d, C, gamma, paper_literal)
    return total


def _time_weights(times) -> np.ndarray:
    t = np.asarray(times, dtype=float)
    if t.size == 1:
        return np.ones(1)
    w = np.zeros(t.size)
    gaps = np.diff(t)
    w[:-1] += gaps / 2
    w[1:] += gaps / 2
    return w


def standardized_l2_error(estimate, truth, times, cell_volume: float = 1.0) -> float:
    """Normalised space-time L2 error of a closure estimate.

    ``estimate`` and ``truth`` have shape ``(n_times, N_x)``. Space uses the
    uniform cell volume, time the trapezoidal rule over ``times``; the
    denominator is the spread of ``truth`` about its space-time mean.
    """
    est = np.asarray(estimate, dtype=float)
    tru = np.asarray(truth, dtype=float)
    if est.shape != tru.shape or est.ndim != 2 or est.shape[0] != len(times):
        raise DimensionError("estimate and truth must both be (n_times, N_x) and match times")
    w = _time_weights(times)[:, None] * cell_volume
    total = w.sum() * est.shape[1]
    mean = (w * tru).sum() / total
    num = (w * (est - tru) ** 2).sum()
    den = (w * (tru - mean) ** 2).sum()
    if not den > 0:
        raise UndefinedMetricError("truth closure is constant in space and time")
    return float(math.sqrt(num / den))


def coverage_fraction(lower, upper, truth) -> float:
    """Fraction of points with ``lower <= truth <= upper``."""
    lower, upper, truth = (np.asarray(a, dtype=float) for a in (lower, upper, truth))
    if not lower.shape == upper.shape == truth.shape:
        raise DimensionError("band and truth shapes differ")
    return float(np.mean((lower <= truth) & (truth <= upper)))


@dataclass
class SearchSurface:
    sigma_grid: list[float]
    num_bases_grid: list[int]
    nll: np.ndarray  # (n_sigma, n_bases)
    l2_error: np.ndarray
    diverged: np.ndarray
    meta: dict = field(default_factory=dict)

    def _argmin(self, values) -> tuple[int, int]:
        # row-major scan over (sigma, M) sorted ascending breaks ties toward smaller sigma, then smaller M
        best = None
        s_order = np.argsort(self.sigma_grid, kind="stable")
        m_order = np.argsort(self.num_bases_grid, kind="stable")
        for i in s_order:
            for j in m_order:
                v = values[i, j]
                if best is None or v < values[best]:
                    best = (int(i), int(j))
        return best

    @property
    def argmin_nll(self) -> tuple[float, int]:
        i, j = self._argmin(self.nll)
        return self.sigma_grid[i], self.num_bases_grid[j]

    @property
    def argmin_l2(self) -> tuple[float, int]:
        i, j = self._argmin(self.l2_error)
        return self.sigma_grid[i], self.num_bases_grid[j]

    def argmin_index(self, which: str = "nll") -> tuple[int, int]:
        return self._argmin(self.nll if which == "nll" else self.l2_error)

    def rows(self):
        for i, s in enumerate(self.sigma_grid):
            for j, m in enumerate(self.num_bases_grid):
                yield s, m, float(self.nll[i, j]), float(self.l2_error[i, j]), bool(self.diverged[i, j])


def grid_search(sigma_grid, num_bases_grid, config, seed: int | None = None, threads: int = 1,
                prepared=None) -> SearchSurface:
    """Evaluate the filter on every ``(sigma, M)`` cell with common random numbers.

    Every cell reuses the same truth, the same observations and the same named
    random substreams; diverged cells get ``nll = l2 = +inf``.
    """
    from . import experiment

    sigma_grid = [float(s) for s in sigma_grid]
    num_bases_grid = [int(m) for m in num_bases_grid]
    if not sigma_grid or not num_bases_grid:
        raise ConfigurationError("search grids must be nonempty")
    if seed is not None:
        config = config.replace(seed=int(seed))
    if prepared is None:
        prepared = experiment.prepare(config)

    def cell(args):
        s, m = args
        try:
            outcome = experiment.run_filter_cell(config, prepared, s, m)
            return outcome.nll, outcome.l2_error, False
        except (ClosureEnKFError, FloatingPointError, np.linalg.LinAlgError):
            return math.inf, math.inf, True

    cells = [(s, m) for s in sigma_grid for m in num_bases_grid]
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            values = list(pool.map(cell, cells))
    else:
        values = [cell(c) for c in cells]
    shape = (len(sigma_grid), len(num_bases_grid))
    nll = np.array([v[0] for v in values]).reshape(shape)
    l2 = np.array([v[1] for v in values]).reshape(shape)
    diverged = np.array([v[2] for v in values]).reshape(shape)
    nll[~np.isfinite(nll)] = math.inf
    return SearchSurface(sigma_grid, num_bases_grid, nll, l2, diverged, {"seed": config.seed})
