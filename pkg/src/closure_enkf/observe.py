"""Linear subsampling observations and synthetic measurement generation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError
from .grid import SpatialGrid


@dataclass(frozen=True)
class ObservationModel:
    """Row-selection operator ``H`` with noise ``R = gamma I``.

    ``gamma`` is a variance unless ``gamma_is_std`` is set, in which case the
    variance is ``gamma**2``.
    """

    indices: np.ndarray
    gamma: float
    times: np.ndarray
    gamma_is_std: bool = False

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        times = np.asarray(self.times, dtype=float)
        if idx.ndim != 1 or idx.size == 0 or np.any(np.diff(idx) <= 0) or idx[0] < 0:
            raise ConfigurationError("observation indices must be nonempty and strictly increasing")
        if not self.gamma > 0:
            raise ConfigurationError("gamma must be positive")
        if times.size and np.any(np.diff(times) <= 0):
            raise ConfigurationError("observation times must be strictly increasing")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "times", times)

    @property
    def variance(self) -> float:
        return float(self.gamma) ** 2 if self.gamma_is_std else float(self.gamma)

    @property
    def n_obs(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class ObservationRecord:
    time: float
    values: np.ndarray
    indices: np.ndarray

    def __post_init__(self):
        if len(self.values) != len(self.indices):
            raise DimensionError("values and indices differ in length")


def build_subsample_operator(n_x: int, n_obs: int) -> np.ndarray:
    """``n_obs`` equally spaced indices on ``0..n_x-1`` including both ends."""
    if not 1 <= n_obs <= n_x:
        raise ConfigurationError(f"n_obs={n_obs} must lie in [1, {n_x}]")
    if n_obs == n_x:
        return np.arange(n_x)
    if n_obs == 1:
        return np.array([0])
    j = np.arange(n_obs)
    return np.rint(j * (n_x - 1) / (n_obs - 1)).astype(np.int64)


def subsample_grid(grid: SpatialGrid, n_obs: int) -> np.ndarray:
    """Observation indices for a grid; in 2D a tensor product of per-axis spacings."""
    if grid.dim == 1 or n_obs == grid.n_points:
        return build_subsample_operator(grid.n_points, n_obs)
    per_axis = math.isqrt(n_obs)
    if per_axis * per_axis != n_obs:
        raise ConfigurationError("2D sparse observations need a square number of sensors")
    rows = build_subsample_operator(grid.count[0], per_axis)
    cols = build_subsample_operator(grid.count[1], per_axis)
    return (rows[:, None] * grid.count[1] + cols[None, :]).ravel()


def _check_indices(indices, n: int) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise DimensionError(f"observation index out of range for a state of length {n}")
    return idx


def apply_H(u, indices) -> np.ndarray:
    u = np.asarray(u)
    return u[_check_indices(indices, len(u))]


def apply_G(z, indices) -> np.ndarray:
    """Observe the state block of an augmented state; ``eta`` is never observed."""
    return apply_H(z.u, indices)


def generate_observations(trajectory, obs_model: ObservationModel, rng: np.random.Generator) -> list[ObservationRecord]:
    """``y = H u_truth + eps`` at every observation time with ``eps ~ N(0, R)``."""
    sd = math.sqrt(obs_model.variance)
    records = []
    for t in obs_model.times:
        clean = apply_H(trajectory.at(t), obs_model.indices)
        noisy = clean + sd * rng.standard_normal(len(clean))
        records.append(ObservationRecord(float(t), noisy, obs_model.indices))
    return records
