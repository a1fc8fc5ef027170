"""Stochastic ensemble Kalman filter over the augmented state ``[u; eta]``.

The ensemble is stored column-wise: ``members[:, l]`` is member ``l``. The
full state covariance is never formed during filtering; the gain is applied
through the anomaly matrix ``A`` and its observed rows ``H A``::

    S   = (H A)(H A)^T / (N - 1) + gamma I
    z_l <- z_l + A (H A)^T S^{-1} (y - H u_l + e_l) / (N - 1)
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import scipy.linalg
import scipy.stats

from .basis import BasisSet
from .dynamics import AugmentedState, EvolutionModel, forecast_substeps, stable_time_step, substep_schedule
from .errors import ConfigurationError, DimensionError, DivergenceError
from .estimate import gaussian_nll_term
from .observe import ObservationRecord
from .rng import Streams

# Members are always forecast in chunks of this fixed size so results do not
# depend on how many worker threads process the chunks.
FORECAST_CHUNK = 128


class Phase(str, enum.Enum):
    FORECAST = "forecast"
    ANALYSIS = "analysis"


@dataclass
class AugmentedEnsemble:
    members: np.ndarray
    n_state: int
    time: float = 0.0
    phase: Phase = Phase.ANALYSIS

    def __post_init__(self):
        self.members = np.asarray(self.members, dtype=float)
        if self.members.ndim != 2 or self.members.shape[1] < 2:
            raise ConfigurationError("an ensemble needs at least 2 members")
        if not 0 < self.n_state <= self.members.shape[0]:
            raise DimensionError("n_state out of range")

    @property
    def n_ens(self) -> int:
        return self.members.shape[1]

    @property
    def n_coef(self) -> int:
        return self.members.shape[0] - self.n_state

    @property
    def u(self) -> np.ndarray:
        return self.members[: self.n_state]

    @property
    def eta(self) -> np.ndarray:
        return self.members[self.n_state :]

    def check_finite(self, time_index=None) -> None:
        ok = np.isfinite(self.members).all(axis=0)
        if not ok.all():
            bad = int(np.flatnonzero(~ok)[0])
            raise DivergenceError(
                f"non-finite ensemble member {bad} at time index {time_index}", time_index=time_index, member=bad
            )


@dataclass(frozen=True)
class CoefficientPrior:
    """Isotropic Gaussian prior ``N(mean, variance I)`` on the initial coefficients."""

    mean: np.ndarray
    variance: float

    def __post_init__(self):
        if not self.variance > 0:
            raise ConfigurationError("prior variance must be positive")
        object.__setattr__(self, "mean", np.atleast_1d(np.asarray(self.mean, dtype=float)))


def _normals(rng, shape) -> np.ndarray:
    """Draw standard normals of ``shape``; a sequence of generators supplies one row each."""
    if isinstance(rng, np.random.Generator):
        return rng.standard_normal(shape)
    rows = list(rng)
    if len(rows) != shape[0]:
        raise DimensionError(f"need {shape[0]} generators, got {len(rows)}")
    return np.stack([g.standard_normal(shape[1:]) for g in rows]) if rows else np.zeros(shape)


def init_ensemble(u0, prior: CoefficientPrior | None, n_ens: int, rng) -> AugmentedEnsemble:
    """Point-mass state ``u0`` for every member; coefficients drawn from ``prior``.

    ``rng`` is a generator or a sequence of per-coefficient generators (row
    ``k`` of the draw comes from generator ``k``).
    """
    if n_ens < 2:
        raise ConfigurationError("an ensemble needs at least 2 members")
    u0 = np.asarray(u0, dtype=float)
    U = np.repeat(u0[:, None], n_ens, axis=1)
    if prior is None or prior.mean.size == 0:
        return AugmentedEnsemble(U, len(u0))
    k = prior.mean.size
    eta = prior.mean[:, None] + math.sqrt(prior.variance) * _normals(rng, (k, n_ens))
    return AugmentedEnsemble(np.vstack([U, eta]), len(u0))


def ensemble_moments(ens: AugmentedEnsemble) -> tuple[np.ndarray, np.ndarray]:
    """Sample mean and ``1/(N-1)``-normalised sample covariance (outer-product form)."""
    X = ens.members
    m = X.mean(axis=1)
    A = X - m[:, None]
    return m, A @ A.T / (ens.n_ens - 1)


def observation_moments(ens: AugmentedEnsemble, indices) -> tuple[np.ndarray, np.ndarray]:
    """Forecast mean and covariance in observation space, ``H m`` and ``H P H^T``."""
    HX = ens.u[np.asarray(indices)]
    m = HX.mean(axis=1)
    HA = HX - m[:, None]
    return m, HA @ HA.T / (ens.n_ens - 1)


def kalman_gain(P, indices, gamma: float) -> np.ndarray:
    """``K = P H^T (H P H^T + gamma I)^{-1}`` with ``H`` a row selection."""
    P = np.asarray(P, dtype=float)
    idx = np.asarray(indices)
    if not np.all(np.isfinite(P)):
        raise DivergenceError("non-finite forecast covariance")
    PHt = P[:, idx]
    S = PHt[idx] + gamma * np.eye(len(idx))
    return scipy.linalg.cho_solve(scipy.linalg.cho_factor(S), PHt.T).T


def analysis_update(ens: AugmentedEnsemble, y: ObservationRecord, gamma: float, rng=None,
                    perturbations=None) -> AugmentedEnsemble:
    """Stochastic EnKF update ``z_l + K (y - G z_l + e_l)`` with ``e_l ~ N(0, gamma I)``.

    Perturbations come from ``perturbations`` (shape ``(N_obs, N_ens)``) if
    given, else from ``rng``: one generator, or one generator per member.
    """
    if ens.phase is not Phase.FORECAST:
        raise ConfigurationError("analysis requires a forecast ensemble")
    idx = np.asarray(y.indices)
    n_obs, n = len(idx), ens.n_ens
    if perturbations is None:
        if rng is None:
            raise ConfigurationError("either rng or perturbations is required")
        if isinstance(rng, np.random.Generator):
            E = rng.standard_normal((n_obs, n))
        else:
            E = _normals(rng, (n, n_obs)).T
        E = math.sqrt(gamma) * E
    else:
        E = np.asarray(perturbations, dtype=float)
        if E.shape != (n_obs, n):
            raise DimensionError(f"perturbations must have shape {(n_obs, n)}")
    X = ens.members
    A = X - X.mean(axis=1, keepdims=True)
    HX = X[idx]
    HA = A[idx]
    S = HA @ HA.T / (n - 1) + gamma * np.eye(n_obs)
    W = scipy.linalg.cho_solve(scipy.linalg.cho_factor(S), np.asarray(y.values)[:, None] + E - HX)
    Xa = X + A @ (HA.T @ W) / (n - 1)
    out = AugmentedEnsemble(Xa, ens.n_state, ens.time, Phase.ANALYSIS)
    out.check_finite()
    return out


def closure_estimate(ens: AugmentedEnsemble, basis: BasisSet, sigma) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise mean and standard deviation of the synthesized closure over members."""
    if ens.n_ens < 2:
        raise ConfigurationError("need at least 2 members")
    xi = basis.synthesize(ens.eta, sigma)
    return xi.mean(axis=1), xi.std(axis=1, ddof=1)


def credible_band(mean, std, level: float = 0.95) -> tuple[np.ndarray, np.ndarray]:
    """``mean -/+ z_{(1+level)/2} std``."""
    if not 0 < level < 1:
        raise ConfigurationError("level must lie in (0, 1)")
    z = scipy.stats.norm.ppf(0.5 * (1.0 + level))
    mean = np.asarray(mean, dtype=float)
    std = np.asarray(std, dtype=float)
    return mean - z * std, mean + z * std


def _forecast_chunk(args):
    u, eta, t_from, t_to, model, basis, sigma, noise, dt = args
    with np.errstate(over="ignore", invalid="ignore"):
        z = forecast_substeps(AugmentedState(u, eta), t_from, t_to, model, basis, sigma, noise, dt)
    return z.u, z.eta


def forecast_ensemble(ens: AugmentedEnsemble, t_to: float, model: EvolutionModel, basis: BasisSet | None,
                      sigma, noise, dt: float, pool: ThreadPoolExecutor | None = None) -> AugmentedEnsemble:
    """Forecast every member to ``t_to``.

    ``noise`` holds pre-drawn increments of shape ``(n_steps, M+1, N_ens)``.
    """
    n = ens.n_ens
    jobs = []
    for start in range(0, n, FORECAST_CHUNK):
        sl = slice(start, min(start + FORECAST_CHUNK, n))
        jobs.append((ens.u[:, sl], ens.eta[:, sl], ens.time, t_to, model, basis, sigma, noise[:, :, sl], dt))
    results = list(pool.map(_forecast_chunk, jobs)) if pool is not None else [_forecast_chunk(j) for j in jobs]
    U = np.concatenate([r[0] for r in results], axis=1)
    H = np.concatenate([r[1] for r in results], axis=1)
    return AugmentedEnsemble(np.vstack([U, H]), ens.n_state, t_to, Phase.FORECAST)


@dataclass
class FilterResult:
    """Per-analysis-time outputs of :func:`run_filter`.

    Arrays indexed by analysis time have the time as their first axis.
    """

    times: np.ndarray
    indices: list
    gamma: float
    analysis_u_mean: np.ndarray
    analysis_u_std: np.ndarray
    analysis_eta_mean: np.ndarray
    closure_mean: np.ndarray
    closure_std: np.ndarray
    innovations: list
    forecast_obs_mean: list
    forecast_obs_cov: list | None
    nll_terms: np.ndarray
    prior_closure_mean: np.ndarray | None = None
    prior_closure_std: np.ndarray | None = None
    config: dict = field(default_factory=dict)

    @property
    def n_times(self) -> int:
        return len(self.times)

    def truncated(self, n: int) -> "FilterResult":
        """The result restricted to the first ``n`` analysis times."""
        cut = lambda a: None if a is None else a[:n]
        return replace(
            self, times=self.times[:n], indices=self.indices[:n],
            analysis_u_mean=self.analysis_u_mean[:n], analysis_u_std=self.analysis_u_std[:n],
            analysis_eta_mean=self.analysis_eta_mean[:n], closure_mean=self.closure_mean[:n],
            closure_std=self.closure_std[:n], innovations=self.innovations[:n],
            forecast_obs_mean=self.forecast_obs_mean[:n], forecast_obs_cov=cut(self.forecast_obs_cov),
            nll_terms=self.nll_terms[:n],
        )


def draw_forecast_noise(gens: Sequence[Sequence[np.random.Generator]], n_steps: int, n_coef: int) -> np.ndarray:
    """Brownian draws of shape ``(n_steps, n_coef, N_ens)`` from per-member, per-coefficient streams."""
    n_ens = len(gens)
    out = np.empty((n_steps, n_coef, n_ens))
    for i, member in enumerate(gens):
        for k in range(n_coef):
            out[:, k, i] = member[k].standard_normal(n_steps)
    return out


def run_filter(observations: Sequence[ObservationRecord], model: EvolutionModel, basis: BasisSet | None,
               sigma, prior: CoefficientPrior | None, u0, n_ens: int, streams: Streams, gamma: float,
               dt: float | None = None, threads: int = 1, store_forecast_cov: bool = True,
               initial: AugmentedEnsemble | None = None, t0: float = 0.0) -> FilterResult:
    """Alternate forecasts and stochastic analyses over the observation records.

    All randomness comes from named substreams of ``streams``; the outcome is
    bit-identical for any ``threads`` value.
    """
    n_coef = 0 if basis is None else basis.n_bases
    if prior is not None and prior.mean.size != n_coef:
        raise DimensionError(f"prior has {prior.mean.size} coefficients, basis has {n_coef}")
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (n_coef,)).copy()
    if dt is None:
        dt = stable_time_step(model.grid, model.diffusivity)
    if initial is None:
        ens = init_ensemble(u0, prior, n_ens, streams.many("ens-init-coef-{i}", n_coef))
    else:
        ens = initial
        n_ens = ens.n_ens
    ens.time = t0
    ens.check_finite(0)
    n_state = ens.n_state
    coef_gens = [streams.many("member-{m}-forecast-coef-{i}", n_coef, m=m) for m in range(n_ens)]
    pert_gens = streams.many("member-{i}-perturbation", n_ens)

    has_closure = basis is not None and n_coef > 0
    prior_mean = prior_std = None
    if has_closure:
        prior_mean, prior_std = closure_estimate(ens, basis, sigma)

    times, idx_list, innov, fmean, fcov, terms = [], [], [], [], [], []
    u_mean, u_std, eta_mean, c_mean, c_std = [], [], [], [], []
    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    try:
        for i, rec in enumerate(observations):
            steps = substep_schedule(ens.time, rec.time, dt)
            noise = draw_forecast_noise(coef_gens, len(steps), n_coef)
            ens = forecast_ensemble(ens, rec.time, model, basis, sigma, noise, dt, pool)
            ens.check_finite(i)
            m_obs, c_obs = observation_moments(ens, rec.indices)
            d = np.asarray(rec.values) - m_obs
            terms.append(gaussian_nll_term(d, c_obs, gamma))
            innov.append(d)
            fmean.append(m_obs)
            if store_forecast_cov:
                fcov.append(c_obs)
            try:
                ens = analysis_update(ens, rec, gamma, rng=[pert_gens[m] for m in range(n_ens)])
            except DivergenceError as err:
                raise DivergenceError(str(err), time_index=i, member=err.member) from None
            times.append(rec.time)
            idx_list.append(np.asarray(rec.indices))
            u_mean.append(ens.u.mean(axis=1))
            u_std.append(ens.u.std(axis=1, ddof=1))
            eta_mean.append(ens.eta.mean(axis=1))
            if has_closure:
                cm, cs = closure_estimate(ens, basis, sigma)
            else:
                cm = cs = np.zeros(n_state)
            c_mean.append(cm)
            c_std.append(cs)
    finally:
        if pool is not None:
            pool.shutdown()

    def stack(rows, width):
        return np.array(rows).reshape(len(rows), width)

    return FilterResult(
        times=np.asarray(times, dtype=float),
        indices=idx_list,
        gamma=float(gamma),
        analysis_u_mean=stack(u_mean, n_state),
        analysis_u_std=stack(u_std, n_state),
        analysis_eta_mean=stack(eta_mean, n_coef),
        closure_mean=stack(c_mean, n_state),
        closure_std=stack(c_std, n_state),
        innovations=innov,
        forecast_obs_mean=fmean,
        forecast_obs_cov=fcov if store_forecast_cov else None,
        nll_terms=np.asarray(terms, dtype=float),
        prior_closure_mean=prior_mean,
        prior_closure_std=prior_std,
        config={"n_ens": n_ens, "n_coef": n_coef, "sigma": sigma.tolist(), "dt": dt,
                "seed": streams.seed},
    )
