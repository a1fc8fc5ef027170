"""End-to-end runs: truth -> observations -> filter -> diagnostics -> artifacts."""

from __future__ import annotations

import time as _time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import artifacts
from .basis import BasisSet, build_basis, project_field
from .config import ExperimentConfig
from .dynamics import (
    EvolutionModel, Trajectory, TrueClosure, advdiff_closure, advdiff_model, complete_model, gaussian_peak,
    kpp_closure, kpp_model, load_gp_fixture, sine_initial, solve_truth, stable_time_step,
)
from .enkf import CoefficientPrior, FilterResult, credible_band, run_filter
from .errors import ConfigurationError
from .estimate import coverage_fraction, negative_log_marginal_likelihood, standardized_l2_error
from .grid import SpatialGrid, grid_points
from .observe import ObservationModel, ObservationRecord, generate_observations, subsample_grid
from .rng import Streams


@dataclass
class Prepared:
    """Everything shared by filter runs of one config: truth, data, models."""

    grid: SpatialGrid
    model: EvolutionModel
    closure: TrueClosure
    u0: np.ndarray
    trajectory: Trajectory
    obs_model: ObservationModel
    observations: list[ObservationRecord]
    truth_closure: np.ndarray  # (n_times, N_x) at the observation times
    dt: float


@dataclass
class CellOutcome:
    result: FilterResult
    basis: BasisSet
    prior: CoefficientPrior
    nll: float
    l2_error: float
    coverage: np.ndarray


@dataclass
class RunSummary:
    data: dict
    result: FilterResult = field(repr=False, default=None)
    prepared: Prepared = field(repr=False, default=None)

    @property
    def metrics(self) -> dict:
        return self.data["metrics"]

    @property
    def per_time(self) -> list[dict]:
        return self.data["per_time"]


def build_grid(config: ExperimentConfig) -> SpatialGrid:
    return SpatialGrid(tuple(config.grid.extent), tuple(config.grid.count))


def build_models(config: ExperimentConfig, grid: SpatialGrid) -> tuple[EvolutionModel, TrueClosure]:
    m = config.model
    if m.kind == "kpp":
        return kpp_model(grid, m.D), kpp_closure(m.K)
    return advdiff_model(grid, m.D), advdiff_closure(grid, m.c, m.velocity or None)


def initial_condition(config: ExperimentConfig, grid: SpatialGrid) -> np.ndarray:
    ic = config.initial
    if ic.kind == "sine":
        return sine_initial(grid, ic.frequency, ic.offset)
    if ic.kind == "gaussian":
        return gaussian_peak(grid, ic.center, ic.width)
    return load_gp_fixture(grid)


def prepare(config: ExperimentConfig) -> Prepared:
    config.validate()
    grid = build_grid(config)
    model, closure = build_models(config, grid)
    if model.bc.value != config.model.bc:
        raise ConfigurationError(f"model {config.model.kind!r} requires bc={model.bc.value!r}")
    u0 = initial_condition(config, grid)
    times = np.asarray(config.time.observation_times())
    full = complete_model(model, closure)
    dt = stable_time_step(grid, config.model.D, full.velocity if "velocity" in full.params else None)
    traj = solve_truth(model, closure, u0, config.time.final, np.concatenate([[0.0], times]), dt=dt)
    if model.bc.value == "dirichlet":
        u0 = traj.fields[0]
    idx = subsample_grid(grid, config.observations.n_obs)
    obs_model = ObservationModel(idx, config.observations.gamma, times, config.observations.gamma_is_std)
    streams = Streams(config.seed)
    observations = generate_observations(traj, obs_model, streams.get("obs-noise"))
    truth_closure = np.array([closure(traj.at(t)) for t in times]).reshape(len(times), grid.n_points)
    return Prepared(grid, model, closure, u0, traj, obs_model, observations, truth_closure, dt)


def make_prior(config: ExperimentConfig, prepared: Prepared, basis: BasisSet, sigma: float,
               center: str | None = None, tau: float | None = None) -> CoefficientPrior:
    center = center or config.prior.center
    tau = config.prior.tau if tau is None else tau
    if center == "truth":
        mean = project_field(basis, sigma, prepared.closure(prepared.u0))
    else:
        mean = np.zeros(basis.n_bases)
    return CoefficientPrior(mean, tau**2)


def run_filter_cell(config: ExperimentConfig, prepared: Prepared, sigma: float, num_bases: int,
                    center: str | None = None, tau: float | None = None) -> CellOutcome:
    """One filter run with the given hyperparameters; randomness keyed by ``config.seed``."""
    b = config.basis
    basis = build_basis(prepared.grid, b.kind, num_bases, seed=b.seed, bandwidth_rule=b.bandwidth_rule,
                        bandwidth=b.bandwidth or None)
    prior = make_prior(config, prepared, basis, sigma, center, tau)
    result = run_filter(
        prepared.observations, prepared.model, basis, sigma, prior, prepared.u0, config.filter.n_ens,
        Streams(config.seed), prepared.obs_model.variance, dt=prepared.dt, threads=config.filter.threads,
        store_forecast_cov=config.filter.store_forecast_cov,
    )
    nll = negative_log_marginal_likelihood(result, prepared.obs_model.variance,
                                           paper_literal=config.search.paper_literal_objective)
    l2 = standardized_l2_error(result.closure_mean, prepared.truth_closure, result.times,
                               prepared.grid.cell_volume)
    coverage = np.array([
        coverage_fraction(*credible_band(result.closure_mean[i], result.closure_std[i]), prepared.truth_closure[i])
        for i in range(result.n_times)
    ])
    return CellOutcome(result, basis, prior, nll, l2, coverage)


# --- artifacts ----------------------------------------------------------------

def _coord_header(dim: int) -> list[str]:
    return ["x"] if dim == 1 else ["x", "y"]


def truth_files(config: ExperimentConfig) -> list[str]:
    n = config.time.n_times + 1
    return [f"truth/truth_{i:04d}.csv" for i in range(n)] + ["truth/truth.json"]


def observation_files(config: ExperimentConfig) -> list[str]:
    return ["observations.csv", "observations.json"]


def filter_files(config: ExperimentConfig) -> list[str]:
    n = config.time.n_times
    return [f"closure/closure_{i:04d}.csv" for i in range(1, n + 1)] + ["state_estimates.csv", "summary.json"]


def declared_files(config: ExperimentConfig, stage: str = "experiment") -> list[str]:
    files = ["config.toml"] + truth_files(config)
    if stage in ("observe", "filter", "experiment"):
        files += observation_files(config)
    if stage in ("filter", "experiment"):
        files += filter_files(config)
    return sorted(files)


def write_truth(out: Path, config: ExperimentConfig, prepared: Prepared) -> None:
    traj = prepared.trajectory
    for i, f in enumerate(traj.fields):
        artifacts.write_csv(out / f"truth/truth_{i:04d}.csv", ["u"], ([v] for v in f))
    artifacts.write_json(out / "truth/truth.json", {
        "schema_version": artifacts.SCHEMA_VERSION,
        "model": config.model.kind,
        "params": {"D": config.model.D, "K": config.model.K, "c": config.model.c,
                   "velocity": prepared.closure.velocity},
        "bc": config.model.bc,
        "grid": prepared.grid.to_dict(),
        "dt": traj.dt,
        "seed": config.seed,
        "times": traj.times,
        "files": [f"truth_{i:04d}.csv" for i in range(len(traj.times))],
    })


def write_observations(out: Path, config: ExperimentConfig, prepared: Prepared) -> None:
    rows = ((rec.time, int(j), v) for rec in prepared.observations for j, v in zip(rec.indices, rec.values))
    artifacts.write_csv(out / "observations.csv", ["time", "index", "value"], rows)
    artifacts.write_json(out / "observations.json", {
        "schema_version": artifacts.SCHEMA_VERSION,
        "gamma": config.observations.gamma,
        "gamma_is_std": config.observations.gamma_is_std,
        "variance": prepared.obs_model.variance,
        "seed": config.seed,
        "indices": prepared.obs_model.indices,
        "times": prepared.obs_model.times,
    })


def write_filter_outputs(out: Path, config: ExperimentConfig, prepared: Prepared, cell: CellOutcome) -> list[dict]:
    result = cell.result
    pts = grid_points(prepared.grid)
    per_time = []
    for i, t in enumerate(result.times):
        name = f"closure/closure_{i + 1:04d}.csv"
        rows = (
            [j, *pts[j], result.closure_mean[i, j], result.closure_std[i, j], prepared.truth_closure[i, j]]
            for j in range(prepared.grid.n_points)
        )
        artifacts.write_csv(out / name, ["point", *_coord_header(prepared.grid.dim), "closure_mean",
                                         "closure_std", "truth_closure"], rows)
        per_time.append({
            "time": float(t),
            "innovation_norm": float(np.linalg.norm(result.innovations[i])),
            "nll_term": float(result.nll_terms[i]),
            "coverage": float(cell.coverage[i]),
            "closure_file": name,
        })
    state_rows = []
    for i, rec in enumerate(prepared.observations):
        for j, y in zip(rec.indices, rec.values):
            state_rows.append([rec.time, int(j), y, result.analysis_u_mean[i, j], result.analysis_u_std[i, j],
                               prepared.trajectory.at(rec.time)[j]])
    artifacts.write_csv(out / "state_estimates.csv",
                        ["time", "index", "observation", "analysis_mean", "analysis_std", "truth"], state_rows)
    return per_time


def _prior_comparison(config: ExperimentConfig, prepared: Prepared, cell: CellOutcome) -> dict:
    sigma, m = config.filter.sigma, config.basis.num_bases
    ref_center = "truth" if config.prior.center == "zero" else "zero"
    ref = run_filter_cell(config, prepared, sigma, m, center=ref_center, tau=config.study.reference_tau)
    k = config.study.compare_after - 1
    if not 0 <= k < cell.result.n_times:
        raise ConfigurationError("study.compare_after exceeds the number of analysis times")
    dist = float(np.max(np.abs(cell.result.closure_mean[k] - ref.result.closure_mean[k])))
    scale = float(np.max(np.abs(prepared.truth_closure[k])))
    return {
        "after_analyses": config.study.compare_after,
        "time": float(cell.result.times[k]),
        "primary_center": config.prior.center,
        "primary_tau": config.prior.tau,
        "reference_center": ref_center,
        "reference_tau": config.study.reference_tau,
        "linf_distance": dist,
        "truth_linf": scale,
        "relative_distance": dist / scale if scale > 0 else None,
    }


def run_experiment(config: ExperimentConfig, out_dir, stage: str = "experiment") -> RunSummary:
    """Run ``config`` and write its artifacts below ``out_dir``.

    ``stage`` stops the pipeline early: ``"truth"``, ``"observe"``, ``"filter"``
    (no study comparisons) or ``"experiment"``.
    """
    if stage not in ("truth", "observe", "filter", "experiment"):
        raise ConfigurationError(f"unknown stage {stage!r}")
    start = _time.perf_counter()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.toml").write_text(config.to_toml())
    prepared = prepare(config)
    write_truth(out, config, prepared)
    if stage == "truth":
        return RunSummary({"files": declared_files(config, stage)}, prepared=prepared)
    write_observations(out, config, prepared)
    if stage == "observe":
        return RunSummary({"files": declared_files(config, stage)}, prepared=prepared)

    cell = run_filter_cell(config, prepared, config.filter.sigma, config.basis.num_bases)
    per_time = write_filter_outputs(out, config, prepared, cell)
    summary = {
        "schema_version": artifacts.SCHEMA_VERSION,
        "kind": stage,
        "name": config.name,
        "seed": config.seed,
        "config": config.to_dict(),
        "grid": prepared.grid.to_dict(),
        "basis": cell.basis.to_dict(),
        "per_time": per_time,
        "metrics": {
            "l2_error": cell.l2_error,
            "nll": cell.nll,
            "min_coverage": float(cell.coverage.min()) if cell.coverage.size else None,
            "coverage": cell.coverage,
            "dt": prepared.dt,
        },
        "files": declared_files(config, stage),
    }
    if stage == "experiment" and config.study.compare_priors:
        summary["prior_comparison"] = _prior_comparison(config, prepared, cell)
    summary["wall_clock_seconds"] = _time.perf_counter() - start
    data = artifacts.jsonable(summary)
    artifacts.validate_summary(data)
    artifacts.write_json(out / "summary.json", data)
    return RunSummary(data, cell.result, prepared)


def run_search(config: ExperimentConfig, out_dir, threads: int = 1):
    """Grid search over ``config.search`` and write ``search.csv`` / ``search.json``."""
    from .estimate import grid_search

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.toml").write_text(config.to_toml())
    surface = grid_search(config.search.sigma_grid, config.search.num_bases_grid, config, threads=threads)
    artifacts.write_csv(out / "search.csv", ["sigma", "num_bases", "nll", "l2_error", "diverged"], surface.rows())
    s_nll, m_nll = surface.argmin_nll
    s_l2, m_l2 = surface.argmin_l2
    data = artifacts.jsonable({
        "schema_version": artifacts.SCHEMA_VERSION,
        "kind": "search",
        "name": config.name,
        "seed": config.seed,
        "sigma_grid": surface.sigma_grid,
        "num_bases_grid": surface.num_bases_grid,
        "argmin_nll": {"sigma": s_nll, "num_bases": m_nll},
        "argmin_l2": {"sigma": s_l2, "num_bases": m_l2},
        "files": sorted(["config.toml", "search.csv", "search.json"]),
    })
    artifacts.validate_summary(data, artifacts.SEARCH_SUMMARY_SCHEMA)
    artifacts.write_json(out / "search.json", data)
    return surface
