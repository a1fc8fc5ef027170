"""Regular 1D/2D grids and finite-difference stencils.

Fields live on grid points and are flattened row-major: in 2D the point
``(i, j)`` (``i`` along the first axis) has flat index ``i * N_2 + j``.
Every stencil also accepts a batch of fields of shape ``(N_x, n_batch)``,
which is how ensembles are evolved.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError


class BoundaryCondition(str, enum.Enum):
    """Boundary treatment of the stencils.

    ``NEUMANN`` mirrors ghost values across the boundary (``u[-1] = u[1]``),
    giving zero normal derivative. ``DIRICHLET`` pins boundary values to 0.
    """

    NEUMANN = "neumann"
    DIRICHLET = "dirichlet"

    @classmethod
    def parse(cls, value) -> "BoundaryCondition":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ConfigurationError(f"unknown boundary condition {value!r}") from None


@dataclass(frozen=True)
class SpatialGrid:
    """Equally spaced grid on ``[0, L_1] x ... x [0, L_d]`` including endpoints."""

    extent: tuple[float, ...]
    count: tuple[int, ...]

    def __post_init__(self):
        extent = tuple(float(v) for v in np.atleast_1d(self.extent))
        count = tuple(int(v) for v in np.atleast_1d(self.count))
        if len(extent) != len(count) or len(count) not in (1, 2):
            raise ConfigurationError("grid must be 1D or 2D with one extent per axis")
        if any(n < 2 for n in count):
            raise ConfigurationError("each axis needs at least 2 points")
        if any(L <= 0 for L in extent):
            raise ConfigurationError("extents must be positive")
        object.__setattr__(self, "extent", extent)
        object.__setattr__(self, "count", count)

    @classmethod
    def uniform(cls, length: float, n: int, dim: int = 1) -> "SpatialGrid":
        return cls((length,) * dim, (n,) * dim)

    @property
    def dim(self) -> int:
        return len(self.count)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.count

    @functools.cached_property
    def n_points(self) -> int:
        return math.prod(self.count)

    @functools.cached_property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / (n - 1) for L, n in zip(self.extent, self.count))

    @functools.cached_property
    def cell_volume(self) -> float:
        return float(math.prod(self.spacing))

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(0.0, L, n) for L, n in zip(self.extent, self.count)]

    def boundary_mask(self) -> np.ndarray:
        """Flat boolean mask of points on the domain boundary."""
        return self._boundary_mask.copy()

    @functools.cached_property
    def _boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        for axis in range(self.dim):
            idx = [slice(None)] * self.dim
            idx[axis] = 0
            mask[tuple(idx)] = True
            idx[axis] = -1
            mask[tuple(idx)] = True
        return mask.ravel()

    def to_dict(self) -> dict:
        return {"extent": list(self.extent), "count": list(self.count)}


def grid_points(grid: SpatialGrid) -> np.ndarray:
    """Coordinates of all grid points, shape ``(N_x, dim)``, row-major order."""
    mesh = np.meshgrid(*grid.axes(), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _as_grid_array(field, grid: SpatialGrid) -> tuple[np.ndarray, tuple[int, ...]]:
    field = np.asarray(field, dtype=float)
    if field.shape[:1] != (grid.n_points,):
        raise DimensionError(
            f"field has leading length {field.shape[:1]} but grid has {grid.n_points} points"
        )
    batch = field.shape[1:]
    return field.reshape(grid.shape + batch), batch


def _pad(u: np.ndarray, dim: int, bc: BoundaryCondition) -> np.ndarray:
    width = [(1, 1)] * dim + [(0, 0)] * (u.ndim - dim)
    if bc is BoundaryCondition.NEUMANN:
        return np.pad(u, width, mode="reflect")
    return np.pad(u, width, mode="constant")


def _shift(padded: np.ndarray, axis: int, offset: int, dim: int) -> np.ndarray:
    idx = [slice(1, -1)] * dim
    n = padded.shape[axis]
    idx[axis] = slice(1 + offset, n - 1 + offset)
    return padded[tuple(idx)]


def _second_difference(u: np.ndarray, axis: int, h: float, bc: BoundaryCondition) -> np.ndarray:
    """Second difference along ``axis`` with the ghost value implied by ``bc``."""
    v = u.swapaxes(0, axis) if axis else u
    out = np.empty_like(v)
    out[1:-1] = v[2:] - 2.0 * v[1:-1] + v[:-2]
    # ghosts: mirrored neighbour (Neumann) or zero (Dirichlet)
    ghost = 2.0 if bc is BoundaryCondition.NEUMANN else 1.0
    out[0] = ghost * v[1] - 2.0 * v[0]
    out[-1] = ghost * v[-2] - 2.0 * v[-1]
    out /= h * h
    return out.swapaxes(0, axis) if axis else out


def laplacian(field, grid: SpatialGrid, bc=BoundaryCondition.NEUMANN) -> np.ndarray:
    """3-point (1D) / 5-point (2D) central second difference.

    Under ``DIRICHLET`` the boundary entries are returned as 0 since boundary
    values are pinned rather than evolved.
    """
    bc = BoundaryCondition.parse(bc)
    u, batch = _as_grid_array(field, grid)
    out = _second_difference(u, 0, grid.spacing[0], bc)
    for axis in range(1, grid.dim):
        out += _second_difference(u, axis, grid.spacing[axis], bc)
    out = out.reshape((grid.n_points,) + batch)
    if bc is BoundaryCondition.DIRICHLET:
        out[grid.boundary_mask()] = 0.0
    return out


def advective_divergence(field, grid: SpatialGrid, velocity, bc=BoundaryCondition.NEUMANN) -> np.ndarray:
    """Central-difference approximation of ``div(c u)`` for a constant velocity ``c``.

    Callers negate the result to obtain the advection term ``-div(c u)``.
    Ghost values are mirrored (``NEUMANN``) or zero (``DIRICHLET``); boundary
    entries are computed, not zeroed.
    """
    bc = BoundaryCondition.parse(bc)
    velocity = np.atleast_1d(np.asarray(velocity, dtype=float))
    if velocity.shape != (grid.dim,):
        raise DimensionError(f"velocity must have {grid.dim} components, got {velocity.shape}")
    u, batch = _as_grid_array(field, grid)
    p = _pad(u, grid.dim, bc)
    out = np.zeros_like(u)
    for axis, (h, c) in enumerate(zip(grid.spacing, velocity)):
        if c == 0.0:
            continue
        out += c * (_shift(p, axis, 1, grid.dim) - _shift(p, axis, -1, grid.dim)) / (2.0 * h)
    return out.reshape((grid.n_points,) + batch)
